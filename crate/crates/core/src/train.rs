//! Loss assembly, gradients, Adagrad, the epoch loop, checkpoints and the
//! finite-difference gradient check.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{ItemVocab, SplitDataset};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplit, Recommender};
use crate::matrix::Matrix;
use crate::model::{
    forward, group_of, prediction_loss, HeadKind, ModelDims, ModelOptions, ModelParams, SequenceInput, Views,
    PARAMETER_GROUPS,
};
use crate::perception::ItemReviewBank;
use crate::seqrec::{DEFAULT_LAYERS, DEFAULT_MAX_LEN};

/// Damping inside the Adagrad denominator.
pub const ADAGRAD_EPS: f64 = 1e-10;
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "TRUTHSR_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    /// Users per batch; each contributes every next-item step of its
    /// training segment.
    pub batch_size: usize,
    pub lambda: f64,
    pub id_dim: usize,
    pub fused_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_len: usize,
    pub bank_size: usize,
    pub eval_every: usize,
    pub k_core: usize,
    pub views: Views,
    pub head: HeadKind,
    pub coattention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-2,
            epochs: 100,
            batch_size: 32,
            lambda: 1.0,
            id_dim: 64,
            fused_dim: 64,
            hidden_dim: 64,
            layers: DEFAULT_LAYERS,
            max_len: DEFAULT_MAX_LEN,
            bank_size: 10,
            eval_every: 5,
            k_core: 5,
            views: Views::Both,
            head: HeadKind::Evidential,
            coattention: true,
        }
    }
}

impl TrainConfig {
    pub fn options(&self) -> ModelOptions {
        ModelOptions {
            views: self.views,
            head: self.head,
            coattention: self.coattention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("id_dim", self.id_dim),
            ("fused_dim", self.fused_dim),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("max_len", self.max_len),
            ("bank_size", self.bank_size),
            ("eval_every", self.eval_every),
            ("k_core", self.k_core),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn dims(&self, items: usize, store: &EmbeddingStore) -> ModelDims {
        ModelDims {
            items,
            id_dim: self.id_dim,
            text_dim: store.text_dim(),
            image_dim: store.image_dim(),
            fused_dim: self.fused_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
        }
    }
}

/// One user's training sequence: every position predicts the next event.
#[derive(Clone, Debug)]
pub struct TrainSequence {
    pub input: SequenceInput,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

impl TrainSequence {
    pub fn samples(&self) -> usize {
        self.targets.len()
    }
}

/// Resolve the training segment of every user, keeping the most recent
/// `max_len + 1` events.
pub fn training_sequences(
    split: &SplitDataset,
    store: &EmbeddingStore,
    bank: &ItemReviewBank,
    config: &TrainConfig,
) -> Result<Vec<TrainSequence>> {
    split
        .histories()
        .par_iter()
        .filter_map(|h| {
            let train = h.train();
            let window = &train[train.len().saturating_sub(config.max_len + 1)..];
            if window.len() < 2 {
                return None;
            }
            let context = &window[..window.len() - 1];
            Some(SequenceInput::build(&h.user, context, store, bank, config.bank_size).map(|input| TrainSequence {
                input,
                positions: (0..context.len()).collect(),
                targets: window[1..].iter().map(|e| e.item).collect(),
            }))
        })
        .collect()
}

/// Loss and gradients of one batch.
pub struct BatchGradients {
    pub loss: f64,
    pub alignment: f64,
    pub prediction: f64,
    pub grads: ModelParams,
}

/// `(1/U) sum_u L_tv(u) + lambda (1/S) sum_s [view and joint losses]` for a
/// batch of `U` sequences holding `S` prediction steps, with its gradient.
pub fn compute_gradients(params: &ModelParams, batch: &[&TrainSequence], config: &TrainConfig) -> Result<BatchGradients> {
    let options = config.options();
    let users = batch.len() as f64;
    let samples: usize = batch.iter().map(|s| s.samples()).sum();
    if samples == 0 {
        return Err(Error::Config("batch has no prediction steps".into()));
    }
    let sample_weight = config.lambda / samples as f64;
    let with_alignment = options.views.uses_mm();
    let per_user: Vec<(f64, f64, ModelParams)> = batch
        .par_iter()
        .map(|seq| {
            let mut tape = Tape::new();
            let vars = params.map(&mut |m| tape.param(m.clone()));
            let fwd = forward(&mut tape, &vars, &seq.input, &seq.positions, &options, with_alignment);
            let pred = prediction_loss(&mut tape, &fwd, &seq.targets, options.head);
            let mut total = tape.scale(pred, sample_weight);
            let mut align = 0.0;
            if let Some(l) = fwd.l_tv {
                align = tape.value(l)[(0, 0)];
                let weighted = tape.scale(l, 1.0 / users);
                total = tape.add(total, weighted);
            }
            let pred_value = tape.value(pred)[(0, 0)];
            let mut grads = tape.backward(total);
            let g = vars.map(&mut |v| grads.take(*v));
            let dense = params_like(params, g);
            (align, pred_value, dense)
        })
        .collect();

    let mut grads = params.zeros_like();
    let (mut alignment, mut prediction) = (0.0, 0.0);
    for (a, p, g) in per_user {
        alignment += a;
        prediction += p;
        for (acc, part) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc.add_assign(part.1);
        }
    }
    alignment /= users;
    prediction /= samples as f64;
    if !alignment.is_finite() {
        return Err(Error::NonFinite(format!("cross-modal alignment loss ({alignment})")));
    }
    if !prediction.is_finite() {
        return Err(Error::NonFinite(format!("{:?} prediction loss ({prediction})", options.head)));
    }
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(BatchGradients {
        loss: if with_alignment { alignment } else { 0.0 } + config.lambda * prediction,
        alignment,
        prediction,
        grads,
    })
}

fn params_like(params: &ModelParams, grads: ModelParams<Option<Matrix>>) -> ModelParams {
    let mut dense = params.zeros_like();
    let mut sparse = grads;
    for (d, s) in dense.tensors_mut().into_iter().zip(sparse.tensors_mut()) {
        if let Some(g) = s.take() {
            *d = g;
        }
    }
    dense
}

/// Accumulated squared gradients, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub accum: ModelParams,
}

impl AdagradState {
    pub fn new(params: &ModelParams) -> Self {
        AdagradState {
            accum: params.zeros_like(),
        }
    }
}

/// `G += g^2; theta -= lr * g / (sqrt(G) + eps)`, elementwise.
pub fn adagrad_update(theta: &mut [f64], grad: &[f64], accum: &mut [f64], lr: f64) {
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(accum.iter_mut()) {
        *a += g * g;
        *t -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
}

pub fn adagrad_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdagradState, lr: f64) {
    for ((p, g), a) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.accum.tensors_mut())
    {
        adagrad_update(p.as_mut_slice(), g.1.as_slice(), a.as_mut_slice(), lr);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub recall_at_10: f64,
    pub ndcg_at_10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<ValidationScore>,
}

pub struct FitResult {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
}

/// Run `f` on a pool capped by `TRUTHSR_THREADS` when it is set.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Train with Adagrad, validating every `eval_every` epochs and at the last
/// epoch, and return the parameters with the best validation Recall@10
/// (ties go to the higher NDCG@10, then to the earlier epoch).
pub fn fit(split: &SplitDataset, store: &EmbeddingStore, config: &TrainConfig) -> Result<FitResult> {
    fit_with(split, store, config, |_| {})
}

pub fn fit_with(
    split: &SplitDataset,
    store: &EmbeddingStore,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) + Send,
) -> Result<FitResult> {
    config.validate()?;
    with_thread_cap(move || {
        let bank = ItemReviewBank::build(&split.train, split.vocab(), &store.text);
        let sequences = training_sequences(split, store, &bank, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ModelParams::init(&config.dims(split.num_items(), store), &mut rng)?;
        params.round_to_f32();
        let mut log = Vec::new();
        if config.epochs == 0 {
            return Ok(FitResult {
                params,
                log,
                best_epoch: 0,
            });
        }
        if sequences.is_empty() {
            return Err(Error::Split("no user has two training events".into()));
        }
        let mut state = AdagradState::new(&params);
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut best: Option<((f64, f64), usize, ModelParams)> = None;
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for (b, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<&TrainSequence> = chunk.iter().map(|&i| &sequences[i]).collect();
                let g = compute_gradients(&params, &batch, config).map_err(|e| Error::Divergence {
                    epoch,
                    batch: b,
                    detail: e.to_string(),
                })?;
                adagrad_step(&mut params, &g.grads, &mut state, config.lr);
                params.round_to_f32();
                loss_sum += g.loss;
                batches += 1;
            }
            for (name, t) in params.tensors() {
                if !t.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batches,
                        detail: format!("parameter {name} became non-finite"),
                    });
                }
            }
            let validation = if epoch % config.eval_every == 0 || epoch == config.epochs {
                let model = Recommender {
                    params: &params,
                    options: config.options(),
                    max_len: config.max_len,
                    bank_size: config.bank_size,
                    store,
                    bank: &bank,
                };
                let rep = evaluate(&model, split, EvalSplit::Validation, &[10], false)?;
                let m = rep.get(10).expect("cutoff 10 requested");
                // NDCG@10 breaks Recall@10 ties
                let key = (m.recall, m.ndcg);
                if best.as_ref().is_none_or(|(b, _, _)| key > *b) {
                    best = Some((key, epoch, params.clone()));
                }
                Some(ValidationScore {
                    recall_at_10: m.recall,
                    ndcg_at_10: m.ndcg,
                })
            } else {
                None
            };
            let entry = EpochLog {
                epoch,
                train_loss: loss_sum / batches as f64,
                validation,
            };
            on_epoch(&entry);
            log.push(entry);
        }
        let (_, best_epoch, params) = best.expect("the final epoch is always validated");
        Ok(FitResult {
            params,
            log,
            best_epoch,
        })
    })
}

const CHECKPOINT_MAGIC: &[u8] = b"TSRM1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    dims: ModelDims,
    config: TrainConfig,
    items: Vec<String>,
    tensors: Vec<TensorHeader>,
}

/// A trained model with everything needed to score users again.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub items: Vec<String>,
}

impl Checkpoint {
    pub fn vocab(&self) -> ItemVocab {
        ItemVocab::new(self.items.clone())
    }
}

/// Magic line, one JSON header line, then every tensor as little-endian
/// `f32` in [`ModelParams::tensors`] order.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tensors = ckpt.params.tensors();
    let header = CheckpointHeader {
        dims: ckpt.params.dims(),
        config: ckpt.config.clone(),
        items: ckpt.items.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorHeader {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (name, t) in tensors {
        for &v in t.as_slice() {
            let f = v as f32;
            if f as f64 != v {
                return Err(Error::Checkpoint(format!("{name} holds a value not representable as f32")));
            }
            w.write_all(&f.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.items.len() != header.dims.items {
        return Err(Error::Checkpoint("item list does not match the model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(&header.dims, &mut rng)?;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != header.tensors.len() {
        return Err(Error::Checkpoint("tensor count mismatch".into()));
    }
    for ((slot, name), th) in params.tensors_mut().into_iter().zip(&names).zip(&header.tensors) {
        if *name != th.name || slot.shape() != (th.rows, th.cols) {
            return Err(Error::Checkpoint(format!("unexpected tensor {} {}x{}", th.name, th.rows, th.cols)));
        }
        let mut buf = vec![0u8; 4 * th.rows * th.cols];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated tensor {name}")))?;
        for (v, chunk) in slot.as_mut_slice().iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    params.validate()?;
    Ok(Checkpoint {
        params,
        config: header.config,
        items: header.items,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<GroupCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing_groups(&self) -> Vec<&str> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group.as_str()).collect()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gradient check (central differences, h = {:e}, tolerance {:e})", self.step, self.tolerance)?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<11} {:>5} entries  max rel error {:.3e}  {}",
                g.group,
                g.checked,
                g.max_rel_error,
                if g.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub items: usize,
    pub positions: usize,
    pub hidden_dim: usize,
    pub users: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            items: 5,
            positions: 3,
            hidden_dim: 4,
            users: 2,
            step: 1e-4,
            tolerance: 1e-5,
            floor: 1e-6,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn batch_loss(params: &ModelParams, batch: &[&TrainSequence], config: &TrainConfig) -> f64 {
    let options = config.options();
    let users = batch.len() as f64;
    let samples: usize = batch.iter().map(|s| s.samples()).sum();
    let mut total = 0.0;
    for seq in batch {
        let mut tape = Tape::new();
        let vars = params.map(&mut |m| tape.constant(m.clone()));
        let fwd = forward(&mut tape, &vars, &seq.input, &seq.positions, &options, options.views.uses_mm());
        let pred = prediction_loss(&mut tape, &fwd, &seq.targets, options.head);
        total += config.lambda * tape.value(pred)[(0, 0)] / samples as f64;
        if let Some(l) = fwd.l_tv {
            total += tape.value(l)[(0, 0)] / users;
        }
    }
    total
}

/// A tiny random model and batch with distinct text and image widths, so
/// every parameter group (including the image projection) is exercised.
pub fn grad_check_instance(cfg: &GradCheckConfig, seed: u64) -> Result<(ModelParams, Vec<TrainSequence>, TrainConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        items: cfg.items,
        id_dim: 3,
        text_dim: 4,
        image_dim: 3,
        fused_dim: 3,
        hidden_dim: cfg.hidden_dim,
        layers: 2,
    };
    let mut params = ModelParams::init(&dims, &mut rng)?;
    for head in [&mut params.head_id, &mut params.head_mm] {
        head.weight = head.weight.scale(3.0);
        head.bias = Matrix::uniform(dims.items, 1, 1.0, &mut rng).map(|v| v + 0.5);
    }
    let mut seqs = Vec::new();
    for u in 0..cfg.users {
        let n = cfg.positions;
        let items: Vec<usize> = (0..=n).map(|k| (u + 2 * k) % dims.items).collect();
        let banks = (0..n)
            .map(|k| {
                ((k + u) % 3 != 2).then(|| {
                    let b = Matrix::uniform(dims.text_dim, 1 + (k + u) % 3, 1.0, &mut rng);
                    let t = b.transpose();
                    (b, t)
                })
            })
            .collect();
        let mut image = Matrix::uniform(dims.image_dim, n, 1.0, &mut rng);
        let image_present: Vec<bool> = (0..n).map(|k| n < 2 || k != 1).collect();
        for (k, &present) in image_present.iter().enumerate() {
            if !present {
                for d in 0..dims.image_dim {
                    image[(d, k)] = 0.0;
                }
            }
        }
        seqs.push(TrainSequence {
            input: SequenceInput {
                items: items[..n].to_vec(),
                text: Matrix::uniform(dims.text_dim, n, 1.0, &mut rng),
                image,
                image_present,
                banks,
            },
            positions: (0..n).collect(),
            targets: items[1..].to_vec(),
        });
    }
    let config = TrainConfig {
        id_dim: dims.id_dim,
        fused_dim: dims.fused_dim,
        hidden_dim: dims.hidden_dim,
        layers: dims.layers,
        ..TrainConfig::default()
    };
    Ok((params, seqs, config))
}

pub fn grad_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(cfg, seed, |_| {})
}

/// As [`grad_check`], letting `tamper` alter the analytic gradients before
/// comparison.
pub fn grad_check_with(cfg: &GradCheckConfig, seed: u64, tamper: impl FnOnce(&mut ModelParams)) -> Result<GradCheckReport> {
    let (params, seqs, config) = grad_check_instance(cfg, seed)?;
    let batch: Vec<&TrainSequence> = seqs.iter().collect();
    let mut analytic = compute_gradients(&params, &batch, &config)?.grads;
    tamper(&mut analytic);

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut errors: Vec<(f64, usize)> = vec![(0.0, 0); PARAMETER_GROUPS.len()];
    for (t, name) in names.iter().enumerate() {
        let g = PARAMETER_GROUPS
            .iter()
            .position(|&p| p == group_of(name))
            .expect("every tensor belongs to a group");
        let a = analytic.tensors()[t].1.clone();
        for k in 0..a.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].as_mut_slice()[k] += cfg.step;
            let mut minus = params.clone();
            minus.tensors_mut()[t].as_mut_slice()[k] -= cfg.step;
            let numeric = (batch_loss(&plus, &batch, &config) - batch_loss(&minus, &batch, &config)) / (2.0 * cfg.step);
            let err = relative_error(a.as_slice()[k], numeric, cfg.floor);
            errors[g].0 = errors[g].0.max(err);
            errors[g].1 += 1;
        }
    }
    let groups: Vec<GroupCheck> = PARAMETER_GROUPS
        .iter()
        .zip(errors)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(name, (err, n))| GroupCheck {
            group: name.to_string(),
            max_rel_error: err,
            checked: n,
            passed: err < cfg.tolerance,
        })
        .collect();
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        step: cfg.step,
        passed: groups.iter().all(|g| g.passed),
        groups,
    })
}

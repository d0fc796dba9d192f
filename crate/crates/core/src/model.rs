//! The full two-view model: parameters, per-sequence inputs and the
//! differentiable forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Event;
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::evidential::EVIDENCE_CAP;
use crate::matrix::Matrix;
use crate::perception::{ItemReviewBank, MATCH_EPS};
use crate::seqrec::{gru_on_tape, GruParams, GRU_TENSOR_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Views {
    Id,
    Mm,
    Both,
}

impl Views {
    pub fn uses_id(self) -> bool {
        matches!(self, Views::Id | Views::Both)
    }

    pub fn uses_mm(self) -> bool {
        matches!(self, Views::Mm | Views::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Evidential,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub views: Views,
    pub head: HeadKind,
    pub coattention: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            views: Views::Both,
            head: HeadKind::Evidential,
            coattention: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub items: usize,
    pub id_dim: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub fused_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoAttention<T = Matrix> {
    /// `d_t x d_t` bilinear affinity weights.
    pub m_r: T,
    /// `d_t x 2d_t` projection of `[review ; attended bank]`.
    pub w_p: T,
    /// `d_m x (d_t + d_v)` text/image fusion.
    pub w_m: T,
    /// `d_t x d_v`, present only when the two embedding spaces differ.
    pub image_proj: Option<T>,
}

/// Scores every item from a hidden state: `weight * h + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewHead<T = Matrix> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Matrix> {
    /// `|I| x d_i`, one row per item.
    pub id_table: T,
    pub coattention: CoAttention<T>,
    pub gru_id: GruParams<T>,
    pub gru_mm: GruParams<T>,
    pub head_id: ViewHead<T>,
    pub head_mm: ViewHead<T>,
}

/// Parameter groups reported by gradient checks.
pub const PARAMETER_GROUPS: [&str; 9] = [
    "id_table",
    "m_r",
    "w_p",
    "w_m",
    "image_proj",
    "gru_id",
    "gru_mm",
    "head_id",
    "head_mm",
];

/// Group of a tensor name as produced by [`ModelParams::tensors`].
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl<T> ModelParams<T> {
    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &T)> {
        let mut out: Vec<(String, &T)> = vec![
            ("id_table".into(), &self.id_table),
            ("m_r".into(), &self.coattention.m_r),
            ("w_p".into(), &self.coattention.w_p),
            ("w_m".into(), &self.coattention.w_m),
        ];
        if let Some(p) = &self.coattention.image_proj {
            out.push(("image_proj".into(), p));
        }
        for (view, gru) in [("gru_id", &self.gru_id), ("gru_mm", &self.gru_mm)] {
            for (l, layer) in gru.layers.iter().enumerate() {
                for (name, t) in GRU_TENSOR_NAMES.iter().zip(layer.tensors()) {
                    out.push((format!("{view}.{l}.{name}"), t));
                }
            }
        }
        for (view, head) in [("head_id", &self.head_id), ("head_mm", &self.head_mm)] {
            out.push((format!("{view}.weight"), &head.weight));
            out.push((format!("{view}.bias"), &head.bias));
        }
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let ModelParams {
            id_table,
            coattention,
            gru_id,
            gru_mm,
            head_id,
            head_mm,
        } = self;
        let mut out: Vec<&mut T> = vec![id_table, &mut coattention.m_r, &mut coattention.w_p, &mut coattention.w_m];
        if let Some(p) = coattention.image_proj.as_mut() {
            out.push(p);
        }
        for gru in [gru_id, gru_mm] {
            for layer in gru.layers.iter_mut() {
                out.extend(layer.tensors_mut());
            }
        }
        for head in [head_id, head_mm] {
            out.push(&mut head.weight);
            out.push(&mut head.bias);
        }
        out
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            id_table: f(&self.id_table),
            coattention: CoAttention {
                m_r: f(&self.coattention.m_r),
                w_p: f(&self.coattention.w_p),
                w_m: f(&self.coattention.w_m),
                image_proj: self.coattention.image_proj.as_ref().map(&mut *f),
            },
            gru_id: self.gru_id.map(f),
            gru_mm: self.gru_mm.map(f),
            head_id: ViewHead {
                weight: f(&self.head_id.weight),
                bias: f(&self.head_id.bias),
            },
            head_mm: ViewHead {
                weight: f(&self.head_mm.weight),
                bias: f(&self.head_mm.bias),
            },
        }
    }
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        let positive = [
            dims.items,
            dims.id_dim,
            dims.text_dim,
            dims.image_dim,
            dims.fused_dim,
            dims.hidden_dim,
            dims.layers,
        ];
        if positive.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {dims:?}")));
        }
        if dims.items < 2 {
            return Err(Error::TooFewItems(dims.items));
        }
        let fan = |rows: usize, cols: usize, rng: &mut R| Matrix::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng);
        let (d_t, d_v) = (dims.text_dim, dims.image_dim);
        let id_table = Matrix::uniform(dims.items, dims.id_dim, 0.1, rng);
        let m_r = fan(d_t, d_t, rng);
        let w_p = fan(d_t, 2 * d_t, rng);
        let w_m = fan(dims.fused_dim, d_t + d_v, rng);
        let image_proj = (d_t != d_v).then(|| fan(d_t, d_v, rng));
        let gru_id = GruParams::init(dims.id_dim, dims.hidden_dim, dims.layers, rng)?;
        let gru_mm = GruParams::init(dims.fused_dim, dims.hidden_dim, dims.layers, rng)?;
        let head_id = ViewHead {
            weight: fan(dims.items, dims.hidden_dim, rng),
            bias: Matrix::zeros(dims.items, 1),
        };
        let head_mm = ViewHead {
            weight: fan(dims.items, dims.hidden_dim, rng),
            bias: Matrix::zeros(dims.items, 1),
        };
        Ok(ModelParams {
            id_table,
            coattention: CoAttention {
                m_r,
                w_p,
                w_m,
                image_proj,
            },
            gru_id,
            gru_mm,
            head_id,
            head_mm,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            items: self.id_table.rows(),
            id_dim: self.id_table.cols(),
            text_dim: self.coattention.m_r.rows(),
            image_dim: self.coattention.w_m.cols() - self.coattention.m_r.rows(),
            fused_dim: self.coattention.w_m.rows(),
            hidden_dim: self.gru_id.hidden_dim(),
            layers: self.gru_id.layers.len(),
        }
    }

    /// Check every tensor shape against [`ModelParams::dims`].
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let shape = |name: &str, m: &Matrix, want: (usize, usize)| {
            if m.shape() == want {
                Ok(())
            } else {
                Err(Error::Shape(format!("{name} is {:?}, expected {want:?}", m.shape())))
            }
        };
        shape("m_r", &self.coattention.m_r, (d.text_dim, d.text_dim))?;
        shape("w_p", &self.coattention.w_p, (d.text_dim, 2 * d.text_dim))?;
        match (&self.coattention.image_proj, d.text_dim == d.image_dim) {
            (Some(p), false) => shape("image_proj", p, (d.text_dim, d.image_dim))?,
            (None, true) => {}
            _ => return Err(Error::Shape("image projection present iff text and image dims differ".into())),
        }
        self.gru_id.validate()?;
        self.gru_mm.validate()?;
        if self.gru_id.input_dim() != d.id_dim
            || self.gru_mm.input_dim() != d.fused_dim
            || self.gru_mm.hidden_dim() != d.hidden_dim
            || self.gru_mm.layers.len() != d.layers
        {
            return Err(Error::Shape("GRU dimensions do not match the model".into()));
        }
        for (name, head) in [("head_id", &self.head_id), ("head_mm", &self.head_mm)] {
            shape(name, &head.weight, (d.items, d.hidden_dim))?;
            shape(name, &head.bias, (d.items, 1))?;
        }
        for (name, t) in self.tensors() {
            if !t.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.round_to_f32();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// One user's chronological sequence with every constant the forward pass
/// needs, resolved against the embedding store and review bank.
#[derive(Clone, Debug)]
pub struct SequenceInput {
    pub items: Vec<usize>,
    /// `d_t x N`; zero columns for missing reviews.
    pub text: Matrix,
    /// `d_v x N`; zero columns for missing images.
    pub image: Matrix,
    pub image_present: Vec<bool>,
    /// Other users' reviews of `items[n]`, `d_t x M`, with its transpose.
    pub banks: Vec<Option<(Matrix, Matrix)>>,
}

impl SequenceInput {
    pub fn build(
        user: &str,
        events: &[Event],
        store: &EmbeddingStore,
        bank: &ItemReviewBank,
        m_max: usize,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptySequence);
        }
        let n = events.len();
        let (d_t, d_v) = (store.text_dim(), store.image_dim());
        let mut text = Matrix::zeros(d_t, n);
        let mut image = Matrix::zeros(d_v, n);
        let mut image_present = vec![false; n];
        let mut banks = Vec::with_capacity(n);
        for (k, ev) in events.iter().enumerate() {
            if let Some(r) = &ev.review_id {
                for (d, v) in store.text.lookup(r)?.into_iter().enumerate() {
                    text[(d, k)] = v;
                }
            }
            if let Some(g) = &ev.image_id {
                let v = store.image.lookup(g)?;
                if v.iter().all(|&x| x == 0.0) {
                    return Err(Error::ZeroNormImage(k));
                }
                for (d, x) in v.into_iter().enumerate() {
                    image[(d, k)] = x;
                }
                image_present[k] = true;
            }
            banks.push(
                bank.bank_for(ev.item, user, m_max, &store.text)?
                    .map(|b| {
                        let t = b.transpose();
                        (b, t)
                    }),
            );
        }
        Ok(SequenceInput {
            items: events.iter().map(|e| e.item).collect(),
            text,
            image,
            image_present,
            banks,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Tape handles produced by [`forward`]. Score matrices are `|I| x P` for
/// the `P` requested positions: evidence for the evidential head, logits for
/// the softmax head.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub id: Option<Var>,
    pub mm: Option<Var>,
    pub joint: Var,
    pub l_tv: Option<Var>,
    /// Re-modelled reviews, `d_t x N`.
    pub remodelled: Option<Var>,
    /// Fused multimodal inputs, `d_m x N`.
    pub fused: Option<Var>,
}

fn head_scores(tape: &mut Tape, head: &ViewHead<Var>, hidden: Var, head_kind: HeadKind) -> Var {
    let s = tape.matmul(head.weight, hidden);
    let s = tape.add_col_broadcast(s, head.bias);
    match head_kind {
        HeadKind::Evidential => {
            let e = tape.relu(s);
            tape.clamp_max(e, EVIDENCE_CAP)
        }
        HeadKind::Softmax => s,
    }
}

/// Causal review re-modelling: position `n` attends its item's bank against
/// the user's reviews up to and including `n`.
fn remodel_on_tape(tape: &mut Tape, p: &CoAttention<Var>, input: &SequenceInput, text: Var) -> Var {
    let (d_t, n) = tape.shape(text);
    let projected = tape.matmul(p.m_r, text);
    let mut attended = Vec::with_capacity(n);
    for (k, bank) in input.banks.iter().enumerate() {
        let agg = match bank {
            Some((b, bt)) => {
                let bt = tape.constant(bt.clone());
                let q = tape.col_range(projected, 0, k + 1);
                let s = tape.matmul(bt, q);
                let a = tape.tanh(s);
                let a = tape.row_max(a);
                let a = tape.softmax_cols(a);
                let b = tape.constant(b.clone());
                tape.matmul(b, a)
            }
            None => tape.constant(Matrix::zeros(d_t, 1)),
        };
        attended.push(agg);
    }
    let attended = tape.hstack(&attended);
    let stacked = tape.vstack(&[text, attended]);
    tape.matmul(p.w_p, stacked)
}

/// `(1/N) sum p log(p / (q + eps))` over positions with an image.
fn cross_modal_on_tape(tape: &mut Tape, p: &CoAttention<Var>, input: &SequenceInput, remodelled: Var, image: Var) -> Option<Var> {
    let idx: Vec<usize> = (0..input.len()).filter(|&k| input.image_present[k]).collect();
    if idx.is_empty() {
        return None;
    }
    let n = idx.len();
    let z = tape.select_cols(image, &idx);
    let z = match p.image_proj {
        Some(w) => tape.matmul(w, z),
        None => z,
    };
    let z = tape.normalize_cols(z);
    let t = tape.select_cols(remodelled, &idx);
    let zt = tape.transpose(z);
    // column i holds the logits of text i against every image
    let logits = tape.matmul(zt, t);
    let log_p = tape.log_softmax_cols(logits);
    let probs = tape.exp(log_p);
    let mut log_q = Matrix::filled(n, n, MATCH_EPS.ln());
    for i in 0..n {
        log_q[(i, i)] = (1.0 + MATCH_EPS).ln();
    }
    let log_q = tape.constant(log_q);
    let ratio = tape.sub(log_p, log_q);
    let terms = tape.mul(probs, ratio);
    let total = tape.sum(terms);
    Some(tape.scale(total, 1.0 / n as f64))
}

/// Build the graph for one sequence, scoring the hidden state at each of
/// `positions`. `with_alignment` adds the cross-modal loss node.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    input: &SequenceInput,
    positions: &[usize],
    options: &ModelOptions,
    with_alignment: bool,
) -> Forward {
    let mut id = None;
    let mut mm = None;
    let mut l_tv = None;
    let mut remodelled = None;
    let mut fused = None;
    if options.views.uses_id() {
        let x = tape.embed_cols(params.id_table, &input.items);
        let h = gru_on_tape(tape, x, &params.gru_id);
        let h = tape.select_cols(h, positions);
        id = Some(head_scores(tape, &params.head_id, h, options.head));
    }
    if options.views.uses_mm() {
        let text = tape.constant(input.text.clone());
        let t = if options.coattention {
            remodel_on_tape(tape, &params.coattention, input, text)
        } else {
            text
        };
        let image = tape.constant(input.image.clone());
        let stacked = tape.vstack(&[t, image]);
        let x = tape.matmul(params.coattention.w_m, stacked);
        let h = gru_on_tape(tape, x, &params.gru_mm);
        let h = tape.select_cols(h, positions);
        mm = Some(head_scores(tape, &params.head_mm, h, options.head));
        if with_alignment {
            l_tv = cross_modal_on_tape(tape, &params.coattention, input, t, image);
        }
        remodelled = Some(t);
        fused = Some(x);
    }
    let joint = match (id, mm) {
        (Some(a), Some(b)) => match options.head {
            HeadKind::Evidential => {
                let items = tape.shape(a).0 as f64;
                let prod = tape.mul(a, b);
                let prod = tape.scale(prod, 1.0 / items);
                let sum = tape.add(a, b);
                tape.add(prod, sum)
            }
            HeadKind::Softmax => tape.add(a, b),
        },
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!("at least one view is always active"),
    };
    Forward {
        id,
        mm,
        joint,
        l_tv,
        remodelled,
        fused,
    }
}

fn view_loss(tape: &mut Tape, scores: Var, targets: &[usize], head: HeadKind) -> Var {
    match head {
        HeadKind::Evidential => {
            let alpha = tape.add_scalar(scores, 1.0);
            let strength = tape.col_sum(alpha);
            let strength = tape.digamma(strength);
            let true_alpha = tape.pick(alpha, targets);
            let true_alpha = tape.digamma(true_alpha);
            let per_sample = tape.sub(strength, true_alpha);
            tape.sum(per_sample)
        }
        HeadKind::Softmax => {
            let log_p = tape.log_softmax_cols(scores);
            let picked = tape.pick(log_p, targets);
            let total = tape.sum(picked);
            tape.scale(total, -1.0)
        }
    }
}

/// Sum over the scored positions of the per-view and joint classification
/// losses. A single active view contributes only its own term.
pub fn prediction_loss(tape: &mut Tape, fwd: &Forward, targets: &[usize], head: HeadKind) -> Var {
    match (fwd.id, fwd.mm) {
        (Some(a), Some(b)) => {
            let la = view_loss(tape, a, targets, head);
            let lb = view_loss(tape, b, targets, head);
            let lj = view_loss(tape, fwd.joint, targets, head);
            let s = tape.add(la, lb);
            tape.add(s, lj)
        }
        _ => view_loss(tape, fwd.joint, targets, head),
    }
}

/// Joint ranking output for one position.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Ranking score per item: joint evidence, or joint logits for the
    /// softmax head.
    pub scores: Vec<f64>,
    pub belief: Vec<f64>,
    pub expected: Vec<f64>,
    pub uncertainty: f64,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>, head: HeadKind) -> Self {
        let n = scores.len() as f64;
        match head {
            HeadKind::Evidential => {
                let strength: f64 = scores.iter().sum::<f64>() + n;
                Prediction {
                    belief: scores.iter().map(|e| e / strength).collect(),
                    expected: scores.iter().map(|e| (e + 1.0) / strength).collect(),
                    uncertainty: n / strength,
                    scores,
                }
            }
            HeadKind::Softmax => {
                let probs = crate::perception::softmax(&scores);
                Prediction {
                    belief: probs.clone(),
                    expected: probs,
                    uncertainty: 0.0,
                    scores,
                }
            }
        }
    }
}

/// Joint predictions at `positions` without building gradients.
pub fn predict(params: &ModelParams, input: &SequenceInput, positions: &[usize], options: &ModelOptions) -> Vec<Prediction> {
    let mut tape = Tape::new();
    let vars = params.map(&mut |m| tape.constant(m.clone()));
    let fwd = forward(&mut tape, &vars, input, positions, options, false);
    let joint = tape.value(fwd.joint);
    (0..positions.len())
        .map(|p| Prediction::from_scores(joint.col(p), options.head))
        .collect()
}

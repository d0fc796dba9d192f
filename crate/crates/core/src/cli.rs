//! Command-line workflows: synth, train, eval, recommend, gradcheck.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use crate::data::{load_interactions, Dataset, SplitDataset};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplit, Recommender, DEFAULT_KS};
use crate::model::{HeadKind, Views};
use crate::perception::ItemReviewBank;
use crate::synth::{generate_synthetic, SynthConfig, IMAGE_FILE, INTERACTIONS_FILE, TEXT_FILE};
use crate::train::{fit_with, grad_check, load_checkpoint, save_checkpoint, Checkpoint, GradCheckConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "truthsr", version, about = "Multi-view evidential sequential recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-pattern synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Full-ranking Recall@K / NDCG@K of a checkpoint.
    Eval(EvalArgs),
    /// Top-N items for one user with beliefs and uncertainty.
    Recommend(RecommendArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: usize,
    #[arg(long)]
    items: usize,
    /// Probability of following the planted transition.
    #[arg(long)]
    pattern: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-user off-pattern item pool size (0 = whole catalogue).
    #[arg(long, default_value_t = 0)]
    taste: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    missing_review: f64,
    #[arg(long, default_value_t = 0.0)]
    missing_image: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ViewsArg {
    Id,
    Mm,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeadArg {
    Evidential,
    Softmax,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding interactions.jsonl, text.tsrv and image.tsrv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// RunConfig JSON; keys not given keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    views: Option<ViewsArg>,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    #[arg(long)]
    no_coattention: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the per-epoch log as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS.to_vec())]
    k: Vec<usize>,
    #[arg(long)]
    mask_history: bool,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the metrics JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    mask_history: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training configuration plus the paths a run reads and writes. Unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let Value::Object(mut map) = serde_json::from_str::<Value>(text)? else {
            return Err(Error::Config("run config must be a JSON object".into()));
        };
        let mut path = |key: &str| -> Result<Option<PathBuf>> {
            match map.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
                Some(_) => Err(Error::Config(format!("`{key}` must be a path string"))),
            }
        };
        let data = path("data")?;
        let text = path("text")?;
        let image = path("image")?;
        let out = path("out")?;
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(RunConfig {
            train,
            data,
            text,
            image,
            out,
        })
    }

    pub fn to_json(&self) -> Value {
        let Value::Object(mut map) = serde_json::to_value(&self.train).expect("config serialises") else {
            unreachable!("TrainConfig is a struct")
        };
        for (key, p) in [("data", &self.data), ("text", &self.text), ("image", &self.image), ("out", &self.out)] {
            if let Some(p) = p {
                map.insert(key.into(), Value::String(p.display().to_string()));
            }
        }
        Value::Object(map)
    }
}

/// Interactions and both embedding tables from a data directory.
pub fn load_data_dir(dir: &Path) -> Result<(Dataset, EmbeddingStore)> {
    load_data(&dir.join(INTERACTIONS_FILE), &dir.join(TEXT_FILE), &dir.join(IMAGE_FILE))
}

pub fn load_data(interactions: &Path, text: &Path, image: &Path) -> Result<(Dataset, EmbeddingStore)> {
    let ds = load_interactions(interactions)?;
    let store = EmbeddingStore::load(text, image)?;
    Ok((ds, store))
}

/// k-core filter followed by the leave-one-out split.
pub fn prepare_split(ds: &Dataset, k_core: usize) -> Result<SplitDataset> {
    ds.k_core_filter(k_core)?.chronological_split()
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

/// Parse `argv` (program name first), run the command, return the exit
/// code: 0 success, 1 usage error, 2 data or model error.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Recommend(a) => recommend(a, out),
        Command::Gradcheck(a) => {
            let report = grad_check(&GradCheckConfig::default(), a.seed)?;
            writeln!(out, "seed {}", a.seed)?;
            writeln!(out, "{report}")?;
            Ok(if report.passed { 0 } else { 2 })
        }
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let cfg = SynthConfig {
        seed: a.seed,
        users: a.users,
        items: a.items,
        pattern_strength: a.pattern,
        min_len: a.min_len,
        max_len: a.max_len,
        text_dim: a.dim,
        image_dim: a.dim,
        taste_size: a.taste,
        missing_review_rate: a.missing_review,
        missing_image_rate: a.missing_image,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg).map_err(|e| match e {
        Error::Config(m) => Failure::Usage(m),
        other => Failure::Data(other),
    })?;
    data.write(&a.out, &cfg)?;
    writeln!(out, "{}", serde_json::to_string(&cfg).map_err(Error::from)?)?;
    writeln!(
        out,
        "wrote {} interactions to {}",
        data.dataset.len(),
        a.out.display()
    )?;
    Ok(0)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let mut run = match &a.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?).map_err(|e| match e {
            Error::Config(m) => Failure::Usage(format!("{}: {m}", p.display())),
            other => Failure::Data(other),
        })?,
        None => RunConfig {
            train: TrainConfig::default(),
            data: None,
            text: None,
            image: None,
            out: None,
        },
    };
    if let Some(d) = a.data {
        run.data = Some(d);
    }
    if let Some(o) = a.out {
        run.out = Some(o);
    }
    if let Some(v) = a.views {
        run.train.views = match v {
            ViewsArg::Id => Views::Id,
            ViewsArg::Mm => Views::Mm,
            ViewsArg::Both => Views::Both,
        };
    }
    if let Some(h) = a.head {
        run.train.head = match h {
            HeadArg::Evidential => HeadKind::Evidential,
            HeadArg::Softmax => HeadKind::Softmax,
        };
    }
    if a.no_coattention {
        run.train.coattention = false;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    run.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let Some(data_dir) = run.data.clone() else {
        return Err(Failure::Usage("train needs --data or a `data` key in the config".into()));
    };
    let Some(out_path) = run.out.clone() else {
        return Err(Failure::Usage("train needs --out or an `out` key in the config".into()));
    };
    writeln!(out, "{}", run.to_json())?;

    let (ds, store) = load_data(
        &data_dir.join(INTERACTIONS_FILE),
        run.text.as_deref().unwrap_or(&data_dir.join(TEXT_FILE)),
        run.image.as_deref().unwrap_or(&data_dir.join(IMAGE_FILE)),
    )?;
    let split = prepare_split(&ds, run.train.k_core)?;
    if split.dropped_users() > 0 {
        writeln!(err, "dropped {} users with fewer than 3 interactions", split.dropped_users())?;
    }
    let mut lines = Vec::new();
    let result = fit_with(&split, &store, &run.train, |entry| {
        lines.push(serde_json::to_string(entry).expect("log entry serialises"));
    })?;
    for l in &lines {
        writeln!(out, "{l}")?;
    }
    writeln!(out, "best epoch {}", result.best_epoch)?;
    if let Some(p) = &a.log {
        fs::write(p, serde_json::to_string_pretty(&result.log).map_err(Error::from)? + "\n")?;
    }
    save_checkpoint(
        &Checkpoint {
            params: result.params,
            config: run.train.clone(),
            items: split.vocab().ids().to_vec(),
        },
        &out_path,
    )?;
    Ok(0)
}

/// Load a checkpoint and re-derive the split it was trained on.
fn open_model(model: &Path, data: &Path) -> Result<(Checkpoint, SplitDataset, EmbeddingStore)> {
    let ckpt = load_checkpoint(model)?;
    let (ds, store) = load_data_dir(data)?;
    let split = prepare_split(&ds, ckpt.config.k_core)?;
    if split.vocab().ids() != ckpt.items.as_slice() {
        return Err(Error::Checkpoint(
            "the data's item vocabulary differs from the one the model was trained on".into(),
        ));
    }
    let dims = ckpt.params.dims();
    if dims.text_dim != store.text_dim() || dims.image_dim != store.image_dim() {
        return Err(Error::Checkpoint("embedding dimensions differ from the model".into()));
    }
    Ok((ckpt, split, store))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let which: EvalSplit = a.split.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(Failure::Usage("--k takes positive cutoffs, e.g. 10,20".into()));
    }
    let (ckpt, split, store) = open_model(&a.model, &a.data)?;
    let bank = ItemReviewBank::build(&split.train, split.vocab(), &store.text);
    let model = Recommender {
        params: &ckpt.params,
        options: ckpt.config.options(),
        max_len: ckpt.config.max_len,
        bank_size: ckpt.config.bank_size,
        store: &store,
        bank: &bank,
    };
    let report = evaluate(&model, &split, which, &a.k, a.mask_history)?;
    let mut doc = report.to_json();
    if let Value::Object(map) = &mut doc {
        let mut meta = Map::new();
        meta.insert("split".into(), Value::String(a.split.clone()));
        meta.insert("count".into(), Value::from(report.count));
        meta.insert("mask_history".into(), Value::Bool(a.mask_history));
        map.insert("run".into(), Value::Object(meta));
    }
    let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => write!(out, "{text}")?,
    }
    Ok(0)
}

fn recommend(a: RecommendArgs, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    if a.top_k == 0 {
        return Err(Failure::Usage("--top-k must be positive".into()));
    }
    let (ckpt, split, store) = open_model(&a.model, &a.data)?;
    let history = split
        .history(&a.user)
        .ok_or_else(|| Error::UnknownUser(a.user.clone()))?;
    let bank = ItemReviewBank::build(&split.train, split.vocab(), &store.text);
    let model = Recommender {
        params: &ckpt.params,
        options: ckpt.config.options(),
        max_len: ckpt.config.max_len,
        bank_size: ckpt.config.bank_size,
        store: &store,
        bank: &bank,
    };
    let ranking = model.rank(&a.user, &history.events, a.mask_history)?;
    writeln!(out, "user {}  uncertainty {:.6}", a.user, ranking.uncertainty)?;
    writeln!(out, "rank\titem\tbelief\texpected")?;
    for (r, &item) in ranking.order.iter().take(a.top_k).enumerate() {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}",
            r + 1,
            split.vocab().id(item),
            ranking.belief[item],
            ranking.expected[item]
        )?;
    }
    Ok(0)
}

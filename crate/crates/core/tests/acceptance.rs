//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truthsr::data::{Event, SplitDataset};
use truthsr::embed::EmbeddingStore;
use truthsr::eval::{evaluate, holdouts, ndcg_at_k, rank_items, recall_at_k, EvalReport, EvalSplit, Recommender};
use truthsr::evidential::{
    dirichlet_ce_loss, dirichlet_from_opinion, ds_combine, evidence_from_scores, opinion_from_evidence, Opinion,
};
use truthsr::model::{HeadKind, ModelParams, Views};
use truthsr::perception::ItemReviewBank;
use truthsr::special::digamma;
use truthsr::synth::{generate_synthetic, SynthConfig};
use truthsr::train::{
    fit, grad_check, load_checkpoint, save_checkpoint, Checkpoint, GradCheckConfig, TrainConfig,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// A synthetic dataset after the standard 5-core filter and split.
struct Bench {
    split: SplitDataset,
    store: EmbeddingStore,
    bank: ItemReviewBank,
}

impl Bench {
    fn new(cfg: &SynthConfig) -> Self {
        let data = generate_synthetic(cfg).expect("synthetic data");
        let split = data
            .dataset
            .k_core_filter(5)
            .expect("5-core")
            .chronological_split()
            .expect("split");
        let bank = ItemReviewBank::build(&split.train, split.vocab(), &data.store.text);
        Bench {
            split,
            store: data.store,
            bank,
        }
    }

    fn model<'a>(&'a self, params: &'a ModelParams, config: &TrainConfig) -> Recommender<'a> {
        Recommender {
            params,
            options: config.options(),
            max_len: config.max_len,
            bank_size: config.bank_size,
            store: &self.store,
            bank: &self.bank,
        }
    }

    fn train(&self, config: &TrainConfig) -> ModelParams {
        fit(&self.split, &self.store, config).expect("training").params
    }

    fn eval(&self, params: &ModelParams, config: &TrainConfig, which: EvalSplit, ks: &[usize]) -> EvalReport {
        evaluate(&self.model(params, config), &self.split, which, ks, false).expect("evaluation")
    }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        eval_every: 10,
        ..TrainConfig::default()
    }
}

fn random_opinion(rng: &mut ChaCha8Rng, items: usize) -> (Vec<f64>, Opinion) {
    let raw: Vec<f64> = (0..items).map(|_| rng.random_range(-5.0..20.0)).collect();
    let ev = evidence_from_scores(&raw).unwrap();
    let values = ev.values().to_vec();
    (values, opinion_from_evidence(&ev))
}

fn max_diff(a: &Opinion, b: &Opinion) -> f64 {
    a.belief
        .iter()
        .zip(&b.belief)
        .map(|(x, y)| (x - y).abs())
        .fold((a.uncertainty - b.uncertainty).abs(), f64::max)
}

fn opinion_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut mass, mut comm, mut ident, mut trip) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let items = rng.random_range(2..=50);
        let (e1, m1) = random_opinion(&mut rng, items);
        let (_, m2) = random_opinion(&mut rng, items);
        mass = mass.max((m1.total_mass() - 1.0).abs());
        let ab = ds_combine(&m1, &m2).unwrap();
        let ba = ds_combine(&m2, &m1).unwrap();
        comm = comm.max(max_diff(&ab, &ba));
        let vac = Opinion::vacuous(items);
        ident = ident
            .max(max_diff(&ds_combine(&m1, &vac).unwrap(), &m1))
            .max(max_diff(&ds_combine(&vac, &m1).unwrap(), &m1));
        let back = dirichlet_from_opinion(&m1).unwrap();
        for (x, y) in back.values().iter().zip(&e1) {
            trip = trip.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mass <= 1e-9 && comm <= 1e-12 && ident <= 1e-12 && trip <= 1e-9 && secs < 5.0,
        format!("mass {mass:.1e}, commutativity {comm:.1e}, identity {ident:.1e}, round trip {trip:.1e}, {secs:.2}s"),
    )
}

fn hand_example() -> Outcome {
    let m1 = Opinion {
        belief: vec![0.6, 0.2],
        uncertainty: 0.2,
    };
    let m2 = Opinion {
        belief: vec![0.5, 0.3],
        uncertainty: 0.2,
    };
    let m = ds_combine(&m1, &m2).unwrap();
    let want = [0.72222, 0.22222, 0.05556];
    let got = [m.belief[0], m.belief[1], m.uncertainty];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-5);
    outcome(ok, format!("b = ({:.5}, {:.5}), c = {:.5}", got[0], got[1], got[2]))
}

fn digamma_loss() -> Outcome {
    let step = digamma(3.0) - digamma(2.0);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    for k in 0..100 {
        let alpha = [1.0 + 0.25 * k as f64, 2.0, 1.5, 1.0];
        let l = dirichlet_ce_loss(&alpha, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        monotone &= l < prev;
        prev = l;
    }
    outcome(
        (step - 0.5).abs() <= 1e-9 && monotone,
        format!("psi(3) - psi(2) = {step:.12}, sweep monotone: {monotone}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = grad_check(&GradCheckConfig::default(), 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let required = ["id_table", "m_r", "w_p", "w_m", "gru_id", "gru_mm", "head_id", "head_mm"];
    let covered = required.iter().all(|g| report.groups.iter().any(|r| r.group == *g));
    let worst = report.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    outcome(
        report.passed && covered && secs < 30.0,
        format!("{} groups, worst relative error {worst:.2e}, {secs:.1}s", report.groups.len()),
    )
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let bench = Bench::new(&SynthConfig::new(7, 50, 30, 1.0));
    let config = train_config(200);
    let params = bench.train(&config);
    let rep = bench.eval(&params, &config, EvalSplit::Train, &[1]);
    let r1 = rep.get(1).unwrap().recall;
    let secs = start.elapsed().as_secs_f64();
    outcome(r1 >= 0.95 && secs < 300.0, format!("train Recall@1 = {r1:.4} over {} predictions, {secs:.0}s", rep.count))
}

fn signal_over_noise(bench: &Bench, params: &ModelParams, config: &TrainConfig) -> Outcome {
    let rep = bench.eval(params, config, EvalSplit::Test, &[10]);
    let r10 = rep.get(10).unwrap().recall;
    let uniform = 10.0 / bench.split.num_items() as f64;
    outcome(r10 >= 0.25, format!("test Recall@10 = {r10:.3} (uniform baseline {uniform:.3})"))
}

/// Rank of `target` by exhaustive pairwise comparison.
fn brute_rank(scores: &[f64], target: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[target] || (scores[j] == scores[target] && j < target))
        .count()
}

fn brute_ndcg(scores: &[f64], target: usize, k: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort on (score desc, id asc)
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &item)| if item == target { 1.0 / ((i + 2) as f64).log2() } else { 0.0 })
        .sum();
    dcg / 1.0
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        // small integer grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
        let target = rng.random_range(0..n);
        let k = rng.random_range(1..=n);
        let order = rank_items(&scores, &[]);
        let rank = order.iter().position(|&i| i == target).map(|p| p + 1);
        let want_rank = brute_rank(&scores, target);
        let want_recall = if want_rank <= k { 1.0 } else { 0.0 };
        if rank != Some(want_rank)
            || recall_at_k(rank, k) != want_recall
            || ndcg_at_k(rank, k) != brute_ndcg(&scores, target, k)
        {
            mismatches += 1;
        }
    }
    let rank3 = ndcg_at_k(Some(3), 10);
    outcome(
        mismatches == 0 && (rank3 - 0.5).abs() <= 1e-12,
        format!("{mismatches} mismatches in 100 cases, NDCG(rank 3) = {rank3}"),
    )
}

/// Mean joint uncertainty of the clean and item-shuffled halves of the test
/// users. In the shuffled half every context item id goes through a random
/// permutation while its review and image stay in place, so the two views
/// describe different histories.
fn shuffled_half_uncertainty(model: &Recommender<'_>, split: &SplitDataset, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hs = holdouts(split, EvalSplit::Test);
    let mut users: Vec<usize> = (0..hs.len()).collect();
    users.shuffle(&mut rng);
    let mut perm: Vec<usize> = (0..split.num_items()).collect();
    perm.shuffle(&mut rng);
    let half = users.len() / 2;
    let (mut clean, mut shuffled) = (0.0, 0.0);
    for (pos, &u) in users.iter().enumerate() {
        let h = &hs[u];
        if pos < half {
            let context: Vec<Event> = h
                .context
                .iter()
                .map(|e| Event {
                    item: perm[e.item],
                    ..e.clone()
                })
                .collect();
            shuffled += model.predict(h.user, &context).unwrap().uncertainty;
        } else {
            clean += model.predict(h.user, h.context).unwrap().uncertainty;
        }
    }
    (clean / (users.len() - half) as f64, shuffled / half as f64)
}

fn shuffle_wins(model: &Recommender<'_>, split: &SplitDataset) -> (usize, f64, f64) {
    let (mut wins, mut clean_sum, mut shuffled_sum) = (0, 0.0, 0.0);
    for seed in 0..20 {
        let (clean, shuffled) = shuffled_half_uncertainty(model, split, seed);
        wins += usize::from(shuffled > clean);
        clean_sum += clean;
        shuffled_sum += shuffled;
    }
    (wins, clean_sum / 20.0, shuffled_sum / 20.0)
}

/// Agreeing and conflicting view pairs with identical belief magnitudes.
fn conflict_beats_agreement() -> bool {
    let items = 6;
    let mut all = true;
    for (top, c0) in [(0.5, 0.3), (0.7, 0.2), (0.2, 0.7), (0.05, 0.9)] {
        let rest = (1.0 - top - c0) / (items - 1) as f64;
        let opinion = |k: usize| {
            let mut b = vec![rest; items];
            b[k] = top;
            Opinion {
                belief: b,
                uncertainty: c0,
            }
        };
        let agree = ds_combine(&opinion(0), &opinion(0)).unwrap();
        let conflict = ds_combine(&opinion(0), &opinion(3)).unwrap();
        all &= conflict.uncertainty > agree.uncertainty;
    }
    all
}

fn uncertainty_behaviour(bench: &Bench, params: &ModelParams, config: &TrainConfig) -> Outcome {
    let (wins, clean, shuffled) = shuffle_wins(&bench.model(params, config), &bench.split);
    let constructed = conflict_beats_agreement();
    outcome(
        wins >= 19 && constructed,
        format!(
            "shuffled half more uncertain in {wins}/20 seeds (mean c {shuffled:.4} vs {clean:.4}); constructed conflict > agreement: {constructed}"
        ),
    )
}

fn ablation_trend() -> Outcome {
    let mut cfg = SynthConfig::new(5, 200, 100, 0.8);
    cfg.taste_size = 8;
    let bench = Bench::new(&cfg);
    let run = |views: Views, head: HeadKind| {
        let config = TrainConfig {
            views,
            head,
            ..train_config(40)
        };
        let params = bench.train(&config);
        let r10 = bench.eval(&params, &config, EvalSplit::Test, &[10]).get(10).unwrap().recall;
        (params, config, r10)
    };
    let (p_both, c_both, both) = run(Views::Both, HeadKind::Evidential);
    let (_, _, id_only) = run(Views::Id, HeadKind::Evidential);
    let (p_soft, c_soft, softmax) = run(Views::Both, HeadKind::Softmax);
    let (ev_wins, _, _) = shuffle_wins(&bench.model(&p_both, &c_both), &bench.split);
    let (soft_wins, _, _) = shuffle_wins(&bench.model(&p_soft, &c_soft), &bench.split);
    let ok = both >= id_only && (both - softmax).abs() <= 0.02 && ev_wins >= 19 && soft_wins < 19;
    outcome(
        ok,
        format!(
            "Recall@10 both {both:.3} / id {id_only:.3} / softmax {softmax:.3}; uncertainty check evidential {ev_wins}/20, softmax {soft_wins}/20"
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let bench = Bench::new(&SynthConfig::new(3, 40, 25, 0.9));
    let config = TrainConfig {
        hidden_dim: 16,
        id_dim: 16,
        fused_dim: 16,
        ..train_config(4)
    };
    let a = bench.train(&config);
    let b = bench.train(&config);
    let json = |p: &ModelParams| bench.eval(p, &config, EvalSplit::Test, &[10, 20]).to_json().to_string();
    let same_metrics = json(&a) == json(&b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tsrm");
    let ckpt = Checkpoint {
        params: a.clone(),
        config: config.clone(),
        items: bench.split.vocab().ids().to_vec(),
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let probe = holdouts(&bench.split, EvalSplit::Test);
    let before = bench.model(&a, &config).predict_holdouts(&probe).unwrap();
    let after = bench.model(&loaded.params, &loaded.config).predict_holdouts(&probe).unwrap();
    let bits = |v: &[truthsr::model::Prediction]| -> Vec<u64> {
        v.iter()
            .flat_map(|p| p.scores.iter().chain(&p.belief).chain([&p.uncertainty]))
            .map(|x| x.to_bits())
            .collect()
    };
    let same_outputs = bits(&before) == bits(&after);
    outcome(
        same_metrics && same_outputs,
        format!("metrics JSON identical: {same_metrics}; reloaded probe outputs bit-identical: {same_outputs}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    record("1 opinion algebra", opinion_algebra());
    record("2 hand-computed combination", hand_example());
    record("3 digamma loss", digamma_loss());
    record("4 gradient verification", gradient_check());
    record("5 learnability", learnability());

    let noisy = Bench::new(&SynthConfig::new(7, 200, 200, 0.8));
    let noisy_config = train_config(30);
    let noisy_params = noisy.train(&noisy_config);
    record("6 signal over noise", signal_over_noise(&noisy, &noisy_params, &noisy_config));
    record("7 metric oracle", metric_oracle());
    record("8 uncertainty behaviour", uncertainty_behaviour(&noisy, &noisy_params, &noisy_config));
    record("9 ablation trend", ablation_trend());
    record("10 determinism and persistence", determinism_and_persistence());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}

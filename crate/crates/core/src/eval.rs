//! Full-ranking evaluation: Recall@K, NDCG@K and uncertainty buckets.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::data::{Event, Holdout, SplitDataset};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::model::{predict, HeadKind, ModelOptions, ModelParams, Prediction, SequenceInput};
use crate::perception::ItemReviewBank;

pub const DEFAULT_KS: [usize; 2] = [10, 20];
pub const DEFAULT_BUCKETS: usize = 5;

/// Ordered recommendation list with the opinion it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    /// Item indices, best first.
    pub order: Vec<usize>,
    pub belief: Vec<f64>,
    pub expected: Vec<f64>,
    pub uncertainty: f64,
}

impl RankingResult {
    /// 1-based rank of `item`, `None` if it was masked out.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.order.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// Sort by descending score, lower item index first on ties. Items in
/// `masked` are left out.
pub fn rank_items(scores: &[f64], masked: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; scores.len()];
    for &m in masked {
        if m < keep.len() {
            keep[m] = false;
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| keep[i]).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

pub fn full_rank(prediction: &Prediction, head: HeadKind, masked: &[usize]) -> RankingResult {
    let key = match head {
        HeadKind::Evidential => &prediction.belief,
        HeadKind::Softmax => &prediction.scores,
    };
    RankingResult {
        order: rank_items(key, masked),
        belief: prediction.belief.clone(),
        expected: prediction.expected.clone(),
        uncertainty: prediction.uncertainty,
    }
}

pub fn recall_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "validation" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

pub fn holdouts(split: &SplitDataset, which: EvalSplit) -> Vec<Holdout<'_>> {
    match which {
        EvalSplit::Train => split.train_holdouts(),
        EvalSplit::Validation => split.validation_holdouts(),
        EvalSplit::Test => split.test_holdouts(),
    }
}

/// A trained model bound to the content it reads at inference time.
#[derive(Clone, Copy)]
pub struct Recommender<'a> {
    pub params: &'a ModelParams,
    pub options: ModelOptions,
    pub max_len: usize,
    pub bank_size: usize,
    pub store: &'a EmbeddingStore,
    pub bank: &'a ItemReviewBank,
}

impl Recommender<'_> {
    fn window<'e>(&self, context: &'e [Event]) -> &'e [Event] {
        &context[context.len().saturating_sub(self.max_len)..]
    }

    /// Joint prediction for the item following `context`.
    pub fn predict(&self, user: &str, context: &[Event]) -> Result<Prediction> {
        let input = SequenceInput::build(user, self.window(context), self.store, self.bank, self.bank_size)?;
        Ok(predict(self.params, &input, &[input.len() - 1], &self.options).remove(0))
    }

    pub fn rank(&self, user: &str, context: &[Event], mask_history: bool) -> Result<RankingResult> {
        let pred = self.predict(user, context)?;
        let masked: Vec<usize> = if mask_history {
            context.iter().map(|e| e.item).collect()
        } else {
            Vec::new()
        };
        Ok(full_rank(&pred, self.options.head, &masked))
    }

    /// Predictions for every holdout, in order. Consecutive holdouts that
    /// are growing prefixes of one sequence share a single forward pass.
    pub fn predict_holdouts(&self, holdouts: &[Holdout<'_>]) -> Result<Vec<Prediction>> {
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        for k in 1..=holdouts.len() {
            let extends = k < holdouts.len() && {
                let (prev, cur) = (&holdouts[k - 1], &holdouts[k]);
                prev.user == cur.user
                    && prev.context.as_ptr() == cur.context.as_ptr()
                    && cur.context.len() > prev.context.len()
                    && cur.context.len() <= self.max_len
            };
            if !extends {
                groups.push((start, k));
                start = k;
            }
        }
        let per_group: Vec<Result<Vec<Prediction>>> = groups
            .par_iter()
            .map(|&(lo, hi)| {
                let group = &holdouts[lo..hi];
                let last = &group[group.len() - 1];
                if group.len() == 1 {
                    return Ok(vec![self.predict(last.user, last.context)?]);
                }
                let input = SequenceInput::build(last.user, last.context, self.store, self.bank, self.bank_size)?;
                let positions: Vec<usize> = group.iter().map(|h| h.context.len() - 1).collect();
                Ok(predict(self.params, &input, &positions, &self.options))
            })
            .collect();
        let mut out = Vec::with_capacity(holdouts.len());
        for g in per_group {
            out.extend(g?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bucket.
    pub recall_at_10: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub metrics: Vec<KMetrics>,
    pub mean_uncertainty: f64,
    pub buckets: Vec<UncertaintyBucket>,
    pub count: usize,
}

impl EvalReport {
    pub fn get(&self, k: usize) -> Option<KMetrics> {
        self.ks.iter().position(|&x| x == k).map(|p| self.metrics[p])
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (k, m) in self.ks.iter().zip(&self.metrics) {
            map.insert(k.to_string(), json!({"recall": m.recall, "ndcg": m.ndcg}));
        }
        map.insert("mean_uncertainty".into(), json!(self.mean_uncertainty));
        map.insert("buckets".into(), serde_json::to_value(&self.buckets).expect("buckets serialise"));
        Value::Object(map)
    }
}

/// Partition predictions by joint uncertainty into `buckets` equal-width
/// ranges over `[0, 1]` and report Recall@10 inside each.
pub fn uncertainty_report(uncertainty: &[f64], ranks: &[Option<usize>], buckets: usize) -> Result<Vec<UncertaintyBucket>> {
    if buckets < 2 {
        return Err(Error::Config("at least two uncertainty buckets are required".into()));
    }
    let mut counts = vec![0usize; buckets];
    let mut hits = vec![0.0; buckets];
    for (&c, &r) in uncertainty.iter().zip(ranks) {
        let b = ((c * buckets as f64).floor() as usize).min(buckets - 1);
        counts[b] += 1;
        hits[b] += recall_at_k(r, 10);
    }
    Ok((0..buckets)
        .map(|b| UncertaintyBucket {
            lower: b as f64 / buckets as f64,
            upper: (b + 1) as f64 / buckets as f64,
            count: counts[b],
            recall_at_10: (counts[b] > 0).then(|| hits[b] / counts[b] as f64),
        })
        .collect())
}

/// Per-prediction outcome, kept for callers that need more than aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub rank: Option<usize>,
    pub uncertainty: f64,
}

/// Items of the holdout's context, minus the target itself: a repeat
/// interaction must stay rankable.
fn history_mask(h: &Holdout<'_>) -> Vec<usize> {
    h.context.iter().map(|e| e.item).filter(|&i| i != h.target.item).collect()
}

pub fn score_holdouts(model: &Recommender<'_>, holdouts: &[Holdout<'_>], mask_history: bool) -> Result<Vec<Scored>> {
    let preds = model.predict_holdouts(holdouts)?;
    Ok(preds
        .par_iter()
        .zip(holdouts.par_iter())
        .map(|(p, h)| {
            let masked = if mask_history { history_mask(h) } else { Vec::new() };
            Scored {
                rank: full_rank(p, model.options.head, &masked).rank_of(h.target.item),
                uncertainty: p.uncertainty,
            }
        })
        .collect())
}

pub fn aggregate(scored: &[Scored], ks: &[usize], buckets: usize) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("cutoffs must be positive".into()));
    }
    if scored.is_empty() {
        return Err(Error::Split("no predictions to evaluate".into()));
    }
    let n = scored.len() as f64;
    let metrics = ks
        .iter()
        .map(|&k| KMetrics {
            recall: scored.iter().map(|s| recall_at_k(s.rank, k)).sum::<f64>() / n,
            ndcg: scored.iter().map(|s| ndcg_at_k(s.rank, k)).sum::<f64>() / n,
        })
        .collect();
    let unc: Vec<f64> = scored.iter().map(|s| s.uncertainty).collect();
    let ranks: Vec<Option<usize>> = scored.iter().map(|s| s.rank).collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        metrics,
        mean_uncertainty: unc.iter().sum::<f64>() / n,
        buckets: uncertainty_report(&unc, &ranks, buckets)?,
        count: scored.len(),
    })
}

/// Recall@K and NDCG@K over every holdout of `which`, ranking the full
/// item vocabulary.
pub fn evaluate(
    model: &Recommender<'_>,
    split: &SplitDataset,
    which: EvalSplit,
    ks: &[usize],
    mask_history: bool,
) -> Result<EvalReport> {
    let hs = holdouts(split, which);
    let scored = score_holdouts(model, &hs, mask_history)?;
    aggregate(&scored, ks, DEFAULT_BUCKETS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_mask_keeps_target() {
        let ev = |item| Event {
            item,
            timestamp: 0,
            review_id: None,
            image_id: None,
        };
        let context = [ev(2), ev(0), ev(2), ev(4)];
        let target = ev(2);
        let h = Holdout {
            user: "u",
            context: &context,
            target: &target,
        };
        assert_eq!(history_mask(&h), vec![0, 4]);
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[0.5, 0.3, 0.1], &[]), vec![0, 1, 2]);
        assert_eq!(rank_items(&[0.1, 0.3, 0.3], &[]), vec![1, 2, 0]);
        assert_eq!(rank_items(&[0.0; 4], &[]), vec![0, 1, 2, 3]);
        assert_eq!(rank_items(&[0.5, 0.3, 0.1], &[0]), vec![1, 2]);

        let vacuous = Prediction::from_scores(vec![0.0; 3], HeadKind::Evidential);
        let r = full_rank(&vacuous, HeadKind::Evidential, &[]);
        assert_eq!(r.order, vec![0, 1, 2]);
        assert_eq!(r.uncertainty, 1.0);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall_at_k(Some(1), 10), 1.0);
        assert_eq!(recall_at_k(Some(11), 10), 0.0);
        assert_eq!(recall_at_k(None, 10), 0.0);
        assert_eq!(ndcg_at_k(Some(1), 10), 1.0);
        assert!((ndcg_at_k(Some(3), 10) - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(Some(11), 10), 0.0);
        let scored: Vec<Scored> = [Some(1), Some(20), Some(2), None]
            .into_iter()
            .map(|rank| Scored { rank, uncertainty: 0.5 })
            .collect();
        let rep = aggregate(&scored, &[10], 5).unwrap();
        assert_eq!(rep.get(10).unwrap().recall, 0.5);
    }

    #[test]
    fn strictly_increasing_transform_keeps_order() {
        let b = [0.2, 0.05, 0.4, 0.05, 0.1];
        let t: Vec<f64> = b.iter().map(|x: &f64| x.powi(3) * 7.0 + 1.0).collect();
        assert_eq!(rank_items(&b, &[]), rank_items(&t, &[]));
    }

    #[test]
    fn buckets_partition() {
        let unc = [0.3, 0.3, 0.3];
        let ranks = [Some(1), Some(30), None];
        let b = uncertainty_report(&unc, &ranks, 4).unwrap();
        assert_eq!(b.iter().filter(|x| x.count > 0).count(), 1);
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 3);
        assert_eq!(b[1].recall_at_10, Some(1.0 / 3.0));
        let edge = uncertainty_report(&[1.0, 0.0], &[None, None], 2).unwrap();
        assert_eq!((edge[0].count, edge[1].count), (1, 1));
        assert!(uncertainty_report(&unc, &ranks, 1).is_err());
    }

    #[test]
    fn report_json_shape() {
        let scored = vec![Scored { rank: Some(3), uncertainty: 0.2 }];
        let v = aggregate(&scored, &[10, 20], 5).unwrap().to_json();
        assert_eq!(v["10"]["ndcg"], json!(0.5));
        assert_eq!(v["20"]["recall"], json!(1.0));
        assert_eq!(v["mean_uncertainty"], json!(0.2));
        assert_eq!(v["buckets"].as_array().unwrap().len(), 5);
    }
}

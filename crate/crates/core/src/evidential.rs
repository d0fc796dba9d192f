//! Subjective-logic opinions over the item set.
//!
//! Rectified scores are evidence `e`, the Dirichlet parameters are
//! `alpha = e + 1` with strength `D = sum(alpha)`. An opinion assigns belief
//! `b_i = e_i / D` to every item and uncertainty `c = |I| / D` to the frame.
//! Two opinions are fused with Dempster's rule, renormalising away the
//! conflicting mass `beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, trigamma};

/// Upper bound applied to each evidence component before forming `D`.
pub const EVIDENCE_CAP: f64 = 1e9;

/// Mass-conservation tolerance used by [`Opinion::validate`].
pub const MASS_TOLERANCE: f64 = 1e-9;

const CONFLICT_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    values: Vec<f64>,
}

impl Evidence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("evidence must be finite and nonnegative".into()));
        }
        Ok(Evidence { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.values.iter().map(|e| e + 1.0).collect()
    }

    /// Dirichlet strength `D = sum(e_i + 1)`.
    pub fn strength(&self) -> f64 {
        self.values.iter().sum::<f64>() + self.values.len() as f64
    }

    /// Expected class probabilities `alpha_i / D`.
    pub fn expected_probability(&self) -> Vec<f64> {
        let d = self.strength();
        self.values.iter().map(|e| (e + 1.0) / d).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub belief: Vec<f64>,
    pub uncertainty: f64,
}

impl Opinion {
    /// The opinion with no evidence at all: `b = 0`, `c = 1`.
    pub fn vacuous(items: usize) -> Self {
        Opinion {
            belief: vec![0.0; items],
            uncertainty: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.belief.len()
    }

    pub fn is_empty(&self) -> bool {
        self.belief.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.belief.iter().sum::<f64>() + self.uncertainty
    }

    pub fn validate(&self) -> Result<()> {
        if self.belief.iter().any(|b| !b.is_finite() || *b < 0.0)
            || !(self.uncertainty > 0.0)
            || (self.total_mass() - 1.0).abs() > MASS_TOLERANCE
        {
            return Err(Error::NonFinite(format!(
                "invalid opinion (mass {}, uncertainty {})",
                self.total_mass(),
                self.uncertainty
            )));
        }
        Ok(())
    }

    /// Index of the largest belief, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &b) in self.belief.iter().enumerate() {
            if b > self.belief[best] {
                best = i;
            }
        }
        best
    }
}

/// Rectify raw head outputs into evidence, capped at [`EVIDENCE_CAP`].
pub fn evidence_from_scores(raw: &[f64]) -> Result<Evidence> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    Ok(Evidence {
        values: raw.iter().map(|&s| s.clamp(0.0, EVIDENCE_CAP)).collect(),
    })
}

pub fn opinion_from_evidence(ev: &Evidence) -> Opinion {
    let d = ev.strength();
    Opinion {
        belief: ev.values.iter().map(|e| e / d).collect(),
        uncertainty: ev.values.len() as f64 / d,
    }
}

/// Conflict mass `sum_{i != j} b1_i * b2_j`.
pub fn conflict(m1: &Opinion, m2: &Opinion) -> f64 {
    let s1: f64 = m1.belief.iter().sum();
    let s2: f64 = m2.belief.iter().sum();
    let agree: f64 = m1.belief.iter().zip(&m2.belief).map(|(a, b)| a * b).sum();
    s1 * s2 - agree
}

/// Dempster's rule of combination for two opinions over the same items.
pub fn ds_combine(m1: &Opinion, m2: &Opinion) -> Result<Opinion> {
    if m1.len() != m2.len() {
        return Err(Error::Shape(format!(
            "combining opinions over {} and {} items",
            m1.len(),
            m2.len()
        )));
    }
    let beta = conflict(m1, m2);
    if beta >= CONFLICT_LIMIT {
        return Err(Error::TotalConflict(beta));
    }
    let norm = 1.0 - beta;
    let (c1, c2) = (m1.uncertainty, m2.uncertainty);
    let belief = m1
        .belief
        .iter()
        .zip(&m2.belief)
        .map(|(&b1, &b2)| (b1 * b2 + b1 * c2 + b2 * c1) / norm)
        .collect();
    Ok(Opinion {
        belief,
        uncertainty: c1 * c2 / norm,
    })
}

/// Recover Dirichlet evidence from an opinion: `D = |I| / c`, `e = b * D`.
pub fn dirichlet_from_opinion(m: &Opinion) -> Result<Evidence> {
    if !(m.uncertainty > 0.0) {
        return Err(Error::ZeroUncertainty);
    }
    let d = m.len() as f64 / m.uncertainty;
    Ok(Evidence {
        values: m.belief.iter().map(|b| (b * d).max(0.0)).collect(),
    })
}

fn true_class(y: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::InvalidOneHot);
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidOneHot);
        }
    }
    hot.ok_or(Error::InvalidOneHot)
}

/// Expected cross-entropy under `Dir(alpha)`: `psi(D) - psi(alpha_true)`.
pub fn dirichlet_ce_loss(alpha: &[f64], y: &[f64]) -> Result<f64> {
    if alpha.len() != y.len() {
        return Err(Error::Shape("alpha and label lengths differ".into()));
    }
    let k = true_class(y)?;
    let d: f64 = alpha.iter().sum();
    Ok(digamma(d) - digamma(alpha[k]))
}

/// Gradient of [`dirichlet_ce_loss`] with respect to `alpha`.
pub fn dirichlet_ce_loss_grad(alpha: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != y.len() {
        return Err(Error::Shape("alpha and label lengths differ".into()));
    }
    let k = true_class(y)?;
    let d: f64 = alpha.iter().sum();
    let common = trigamma(d);
    Ok(alpha
        .iter()
        .enumerate()
        .map(|(i, &a)| if i == k { common - trigamma(a) } else { common })
        .collect())
}

/// `l_tv + lambda * (sum of per-view losses + joint loss)`.
pub fn total_loss(l_tv: f64, per_view: &[f64], joint: f64, lambda: f64) -> f64 {
    l_tv + lambda * (per_view.iter().sum::<f64>() + joint)
}

/// [`total_loss`] averaged over per-sample components, summed in sample order.
pub fn batch_total_loss(samples: &[(f64, Vec<f64>, f64)], lambda: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for (l_tv, views, joint) in samples {
        acc += total_loss(*l_tv, views, *joint, lambda);
    }
    acc / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn op(b: &[f64], c: f64) -> Opinion {
        Opinion {
            belief: b.to_vec(),
            uncertainty: c,
        }
    }

    #[test]
    fn rectifier_examples() {
        let ev = evidence_from_scores(&[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(ev.values(), &[0.0, 0.0, 2.0]);
        assert_eq!(ev.alpha(), vec![1.0, 1.0, 3.0]);
        assert_eq!(ev.strength(), 5.0);

        let ev = evidence_from_scores(&[-3.0, -0.5]).unwrap();
        assert_eq!(ev.values(), &[0.0, 0.0]);
        assert_eq!(ev.strength(), 2.0);

        let ev = evidence_from_scores(&[4.0, 1.0, 0.0]).unwrap();
        assert_eq!(ev.alpha(), vec![5.0, 2.0, 1.0]);
        assert_eq!(ev.strength(), 8.0);

        assert!(evidence_from_scores(&[f64::NAN]).is_err());
        assert!(evidence_from_scores(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn opinion_examples() {
        let m = opinion_from_evidence(&Evidence::new(vec![4.0, 1.0, 0.0]).unwrap());
        assert_eq!(m.belief, vec![0.5, 0.125, 0.0]);
        assert_eq!(m.uncertainty, 0.375);

        let m = opinion_from_evidence(&Evidence::new(vec![0.0; 4]).unwrap());
        assert_eq!(m, Opinion::vacuous(4));

        let m = opinion_from_evidence(&Evidence::new(vec![1e6, 0.0, 0.0]).unwrap());
        assert!(m.belief[0] > 0.999);
        assert!(m.uncertainty < 1e-5);
    }

    #[test]
    fn ds_hand_example() {
        let m = ds_combine(&op(&[0.6, 0.2], 0.2), &op(&[0.5, 0.3], 0.2)).unwrap();
        assert_abs_diff_eq!(conflict(&op(&[0.6, 0.2], 0.2), &op(&[0.5, 0.3], 0.2)), 0.28, epsilon = 1e-15);
        assert_abs_diff_eq!(m.belief[0], 0.52 / 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(m.belief[1], 0.16 / 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(m.uncertainty, 0.04 / 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vacuous_is_identity() {
        let m1 = op(&[0.3, 0.1, 0.2], 0.4);
        assert_eq!(ds_combine(&m1, &Opinion::vacuous(3)).unwrap(), m1);
        assert_eq!(ds_combine(&Opinion::vacuous(3), &m1).unwrap(), m1);
    }

    #[test]
    fn agreement_reinforces() {
        let delta = 0.1;
        let m = op(&[1.0 - delta, 0.0], delta);
        let j = ds_combine(&m, &m).unwrap();
        assert!(j.belief[0] > 1.0 - delta);
        assert!(j.uncertainty < delta);
    }

    #[test]
    fn total_conflict_is_an_error() {
        let a = op(&[1.0 - 1e-15, 0.0], 1e-15);
        let b = op(&[0.0, 1.0 - 1e-15], 1e-15);
        assert!(matches!(ds_combine(&a, &b), Err(Error::TotalConflict(_))));
        assert!(ds_combine(&a, &op(&[0.5], 0.5)).is_err());
    }

    #[test]
    fn conflict_raises_uncertainty() {
        let c0 = 0.3;
        let same = ds_combine(&op(&[0.5, 0.2, 0.0], c0), &op(&[0.5, 0.2, 0.0], c0)).unwrap();
        let diff = ds_combine(&op(&[0.5, 0.2, 0.0], c0), &op(&[0.0, 0.2, 0.5], c0)).unwrap();
        assert!(diff.uncertainty > same.uncertainty);
    }

    #[test]
    fn inverse_examples() {
        let e = dirichlet_from_opinion(&Opinion::vacuous(3)).unwrap();
        assert_eq!(e.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(e.alpha(), vec![1.0; 3]);
        assert_eq!(e.strength(), 3.0);

        let e = dirichlet_from_opinion(&op(&[0.5, 0.125, 0.0], 0.375)).unwrap();
        assert_eq!(e.values(), &[4.0, 1.0, 0.0]);
        assert_eq!(e.strength(), 8.0);

        assert!(matches!(dirichlet_from_opinion(&op(&[1.0, 0.0], 0.0)), Err(Error::ZeroUncertainty)));
    }

    #[test]
    fn digamma_loss_examples() {
        let l = dirichlet_ce_loss(&[2.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-12);
        let l = dirichlet_ce_loss(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);

        let mut prev = f64::INFINITY;
        for step in 0..100 {
            let delta = step as f64 * 0.37;
            let l = dirichlet_ce_loss(&[1.0 + delta, 2.0, 1.5], &[1.0, 0.0, 0.0]).unwrap();
            assert!(l < prev);
            assert!(l >= 0.0);
            prev = l;
        }

        assert!(matches!(dirichlet_ce_loss(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::InvalidOneHot)));
        assert!(matches!(dirichlet_ce_loss(&[1.0, 1.0], &[0.0, 0.0]), Err(Error::InvalidOneHot)));
        assert!(matches!(dirichlet_ce_loss(&[1.0, 1.0], &[0.5, 0.5]), Err(Error::InvalidOneHot)));
    }

    #[test]
    fn digamma_loss_gradient_matches_differences() {
        let alpha = [1.3, 2.7, 5.0, 1.0];
        let y = [0.0, 1.0, 0.0, 0.0];
        let g = dirichlet_ce_loss_grad(&alpha, &y).unwrap();
        let h = 1e-6;
        for i in 0..alpha.len() {
            let mut p = alpha;
            p[i] += h;
            let mut m = alpha;
            m[i] -= h;
            let fd = (dirichlet_ce_loss(&p, &y).unwrap() - dirichlet_ce_loss(&m, &y).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, &[0.0, 0.0], 0.0, 1.0), 0.0);
        assert_eq!(total_loss(0.7, &[0.2, 0.3], 0.1, 0.0), 0.7);
        assert_abs_diff_eq!(total_loss(0.5, &[0.2, 0.3], 0.1, 1.0), 1.1, epsilon = 1e-15);
        let avg = batch_total_loss(&[(0.5, vec![0.2, 0.3], 0.1), (0.1, vec![0.0, 0.0], 0.1)], 1.0);
        assert_abs_diff_eq!(avg, 0.65, epsilon = 1e-15);
    }

    fn arb_evidence() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..50.0, 0.0f64..1e4], 2..50)
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..100.0, n),
                prop::collection::vec(0.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mass_is_conserved(raw in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let m = opinion_from_evidence(&evidence_from_scores(&raw).unwrap());
            prop_assert!((m.total_mass() - 1.0).abs() < 1e-9);
            prop_assert!(m.validate().is_ok());
        }

        #[test]
        fn inverse_round_trip(e in arb_evidence()) {
            let ev = Evidence::new(e).unwrap();
            let back = dirichlet_from_opinion(&opinion_from_evidence(&ev)).unwrap();
            for (a, b) in ev.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn combine_commutes((e1, e2) in arb_pair()) {
            let m1 = opinion_from_evidence(&Evidence::new(e1).unwrap());
            let m2 = opinion_from_evidence(&Evidence::new(e2).unwrap());
            let a = ds_combine(&m1, &m2).unwrap();
            let b = ds_combine(&m2, &m1).unwrap();
            for (x, y) in a.belief.iter().zip(&b.belief) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.uncertainty - b.uncertainty).abs() < 1e-12);
            prop_assert!((a.total_mass() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn combined_evidence_closed_form((e1, e2) in arb_pair()) {
            // Joint evidence equals e1 * e2 / |I| + e1 + e2 componentwise.
            let n = e1.len() as f64;
            let m1 = opinion_from_evidence(&Evidence::new(e1.clone()).unwrap());
            let m2 = opinion_from_evidence(&Evidence::new(e2.clone()).unwrap());
            let joint = dirichlet_from_opinion(&ds_combine(&m1, &m2).unwrap()).unwrap();
            for i in 0..e1.len() {
                let expect = e1[i] * e2[i] / n + e1[i] + e2[i];
                prop_assert!((joint.values()[i] - expect).abs() < 1e-8 * (1.0 + expect));
            }
        }

        #[test]
        fn agreement_preserves_argmax((e1, e2) in arb_pair(), k in 0usize..30, boost in 1.0f64..500.0) {
            let n = e1.len();
            let k = k % n;
            let (mut e1, mut e2) = (e1, e2);
            let top1 = e1.iter().cloned().fold(0.0, f64::max);
            let top2 = e2.iter().cloned().fold(0.0, f64::max);
            e1[k] = top1 + boost;
            e2[k] = top2 + boost;
            let m1 = opinion_from_evidence(&Evidence::new(e1).unwrap());
            let m2 = opinion_from_evidence(&Evidence::new(e2).unwrap());
            prop_assert_eq!(ds_combine(&m1, &m2).unwrap().argmax(), k);
        }
    }
}

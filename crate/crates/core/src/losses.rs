//! Margins, the ramp margin loss and the multi-margin surrogate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::sampling::{Episode, LabeledExample, MetaSample};
use crate::scalar::{argmax, Scalar};

/// A bounded class-score map `(x, y) -> [-b, b]`.
pub trait ScoringFunction<F: Scalar> {
    fn num_classes(&self) -> usize;

    /// Uniform bound `b` on the emitted scores.
    fn bound(&self) -> F;

    /// Scores for every class, each within `[-b, b]`.
    fn scores(&self, x: &[F]) -> Vec<F>;

    fn score(&self, x: &[F], y: usize) -> F {
        self.scores(x)[y]
    }

    /// Predicted class: first maximiser of the scores.
    fn predict(&self, x: &[F]) -> usize {
        argmax(&self.scores(x))
    }
}

impl<F: Scalar, S: ScoringFunction<F> + ?Sized> ScoringFunction<F> for &S {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn bound(&self) -> F {
        (**self).bound()
    }
    fn scores(&self, x: &[F]) -> Vec<F> {
        (**self).scores(x)
    }
    fn predict(&self, x: &[F]) -> usize {
        (**self).predict(x)
    }
}

/// Emits the same score vector for every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedScorer<F> {
    scores: Vec<F>,
    b: F,
}

impl<F: Scalar> FixedScorer<F> {
    pub fn new(scores: Vec<F>, b: F) -> Result<Self> {
        ensure!(!scores.is_empty(), "a scorer needs at least one class");
        ensure!(b > F::zero(), "score bound b must be positive");
        let scores = scores.into_iter().map(|s| s.max(-b).min(b)).collect();
        Ok(Self { scores, b })
    }

    /// The scorer that gives every class the same score.
    pub fn constant(k: usize, value: F, b: F) -> Result<Self> {
        Self::new(vec![value; k], b)
    }
}

impl<F: Scalar> ScoringFunction<F> for FixedScorer<F> {
    fn num_classes(&self) -> usize {
        self.scores.len()
    }
    fn bound(&self) -> F {
        self.b
    }
    fn scores(&self, _x: &[F]) -> Vec<F> {
        self.scores.clone()
    }
}

/// Validated positive margin parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MarginConfig {
    rho: f64,
}

impl MarginConfig {
    pub fn new(rho: f64) -> Result<Self> {
        ensure!(rho.is_finite() && rho > 0.0, "margin rho must be positive and finite (got {rho})");
        Ok(Self { rho })
    }

    pub fn rho<F: Scalar>(&self) -> F {
        F::lit(self.rho)
    }
}

impl TryFrom<f64> for MarginConfig {
    type Error = crate::error::Error;
    fn try_from(rho: f64) -> Result<Self> {
        Self::new(rho)
    }
}

impl From<MarginConfig> for f64 {
    fn from(c: MarginConfig) -> f64 {
        c.rho
    }
}

fn check_rho<F: Scalar>(rho: F) -> Result<()> {
    ensure!(rho.is_finite() && rho > F::zero(), "margin rho must be positive and finite");
    Ok(())
}

/// `scores[y] - max_{y' != y} scores[y']`.
pub fn margin_of_scores<F: Scalar>(scores: &[F], y: usize) -> Result<F> {
    let k = scores.len();
    ensure!(k >= 2, "the margin needs at least two classes (got k={k})");
    ensure!(y < k, "label {y} outside 0..{k}");
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &s)| s)
        .fold(F::neg_infinity(), F::max);
    Ok(scores[y] - runner_up)
}

pub fn margin<F: Scalar, S: ScoringFunction<F> + ?Sized>(f: &S, x: &[F], y: usize) -> Result<F> {
    margin_of_scores(&f.scores(x), y)
}

/// Ramp loss: 1 for `t <= 0`, 0 for `t >= rho`, linear in between.
pub fn margin_loss<F: Scalar>(rho: F, t: F) -> F {
    debug_assert!(rho > F::zero());
    F::one().min(F::zero().max(F::one() - t / rho))
}

/// Averaged per-competitor hinge `1/(k-1) sum_{y'!=y} max(0, 1 - (s_y - s_y')/rho)`.
///
/// Not clamped to `[0, 1]`; with scores in `[-b, b]` it is at most `1 + 2b/rho`.
/// The quotient is rounded up so that `(k - 1) * loss` never falls below the
/// hinge sum, which keeps `margin_loss <= (k - 1) * loss` exact in floating point.
pub fn multi_margin_of_scores<F: Scalar>(scores: &[F], y: usize, rho: F) -> Result<F> {
    let k = scores.len();
    ensure!(k >= 2, "the multi-margin loss needs at least two classes (got k={k})");
    ensure!(y < k, "label {y} outside 0..{k}");
    check_rho(rho)?;
    let total: F = scores
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &s)| F::zero().max(F::one() - (scores[y] - s) / rho))
        .sum();
    let km1 = F::from_count(k - 1);
    let mut loss = total / km1;
    while loss * km1 < total {
        loss = Scalar::next_up(loss);
    }
    Ok(loss)
}

pub fn multi_margin_loss<F: Scalar, S: ScoringFunction<F> + ?Sized>(f: &S, x: &[F], y: usize, rho: F) -> Result<F> {
    multi_margin_of_scores(&f.scores(x), y, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Ramp loss applied to the margin.
    Margin,
    /// Multi-margin surrogate.
    MultiMargin,
}

/// Per-example loss of the given kind.
pub fn example_loss<F: Scalar, S: ScoringFunction<F> + ?Sized>(
    f: &S,
    ex: &LabeledExample<F>,
    rho: F,
    kind: LossKind,
) -> Result<F> {
    let scores = f.scores(&ex.x);
    match kind {
        LossKind::Margin => Ok(margin_loss(rho, margin_of_scores(&scores, ex.y)?)),
        LossKind::MultiMargin => multi_margin_of_scores(&scores, ex.y, rho),
    }
}

/// Mean loss over a set of examples.
pub fn mean_loss<F: Scalar, S: ScoringFunction<F> + ?Sized>(
    f: &S,
    examples: &[LabeledExample<F>],
    rho: F,
    kind: LossKind,
) -> Result<F> {
    ensure!(!examples.is_empty(), "loss over an empty example set");
    check_rho(rho)?;
    let mut total = F::zero();
    for ex in examples {
        total = total + example_loss(f, ex, rho, kind)?;
    }
    Ok(total / F::from_count(examples.len()))
}

/// Mean margin loss of `f` over every example of the episode.
pub fn empirical_margin_loss<F: Scalar, S: ScoringFunction<F> + ?Sized>(
    f: &S,
    episode: &Episode<F>,
    rho: F,
) -> Result<F> {
    mean_loss(f, episode.examples(), rho, LossKind::Margin)
}

/// Mean multi-margin loss of `f` over every example of the episode.
pub fn empirical_multi_margin_loss<F: Scalar, S: ScoringFunction<F> + ?Sized>(
    f: &S,
    episode: &Episode<F>,
    rho: F,
) -> Result<F> {
    mean_loss(f, episode.examples(), rho, LossKind::MultiMargin)
}

/// Average over episodes of the empirical loss of the scorer trained on that episode.
///
/// `train` maps an episode to its scorer; episodes are processed in parallel and
/// the mean is accumulated in episode order.
pub fn average_empirical_loss<F, S, T>(meta: &MetaSample<F>, train: T, rho: F, kind: LossKind) -> Result<F>
where
    F: Scalar,
    S: ScoringFunction<F>,
    T: Fn(&Episode<F>) -> Result<S> + Sync,
{
    check_rho(rho)?;
    let per_episode = meta
        .episodes()
        .par_iter()
        .map(|ep| train(ep).and_then(|f| mean_loss(&f, ep.examples(), rho, kind)))
        .collect::<Result<Vec<F>>>()?;
    Ok(per_episode.iter().copied().sum::<F>() / F::from_count(per_episode.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::LabeledExample;
    use proptest::prelude::*;

    fn ex(y: usize) -> LabeledExample<f64> {
        LabeledExample { x: vec![0.0], y }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_of_scores(&[1.0, 1.0, 1.0], 0).unwrap(), 0.0);
        assert_eq!(margin_of_scores(&[2.0, 0.0, 0.0], 0).unwrap(), 2.0);
        assert_eq!(margin_of_scores(&[0.5, 0.0, 1.0], 0).unwrap(), -0.5);
        assert!(margin_of_scores(&[1.0], 0).is_err());
        assert!(margin_of_scores(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn margin_loss_examples() {
        assert_eq!(margin_loss(1.0, 2.0), 0.0);
        assert_eq!(margin_loss(1.0, -3.0), 1.0);
        assert_eq!(margin_loss(1.0, 0.5), 0.5);
        assert_eq!(margin_loss(1.0, 0.0), 1.0);
    }

    #[test]
    fn multi_margin_examples() {
        assert_eq!(multi_margin_of_scores(&[2.0, 0.0, 0.0], 0, 1.0).unwrap(), 0.0);
        assert_eq!(multi_margin_of_scores(&[0.0, 0.0, 0.0], 0, 1.0).unwrap(), 1.0);
        assert_eq!(multi_margin_of_scores(&[0.5, 0.0, 1.0], 0, 1.0).unwrap(), 1.0);
        assert!(multi_margin_of_scores(&[0.5], 0, 1.0).is_err());
        assert!(multi_margin_of_scores(&[0.5, 0.1], 0, 0.0).is_err());
    }

    #[test]
    fn empirical_losses() {
        let ep = Episode::new(vec![ex(0), ex(0), ex(1), ex(1)], 3, None).unwrap();
        let confident = FixedScorer::new(vec![1.0, 1.0, -1.0], 1.0).unwrap();
        let constant = FixedScorer::constant(3, 0.3, 1.0).unwrap();
        assert_eq!(empirical_margin_loss(&constant, &ep, 1.0).unwrap(), 1.0);
        assert_eq!(empirical_multi_margin_loss(&constant, &ep, 1.0).unwrap(), 1.0);
        // class 0 and 1 tie at the top: margin 0 for every example
        assert_eq!(empirical_margin_loss(&confident, &ep, 1.0).unwrap(), 1.0);

        // half the examples at margin rho/2, half at margin >= rho
        let split = Episode::new(vec![ex(0), ex(1)], 2, None).unwrap();
        let f = FixedScorer::new(vec![0.5, 0.0], 1.0).unwrap();
        let ramp: Vec<f64> = split
            .examples()
            .iter()
            .map(|e| margin_loss(1.0, margin(&f, &e.x, e.y).unwrap()))
            .collect();
        assert_eq!(ramp, [0.5, 1.0]);
        let g = FixedScorer::new(vec![0.5, 0.0], 1.0).unwrap();
        let mixed = Episode::new(vec![ex(0), ex(0)], 2, None).unwrap();
        assert_eq!(empirical_margin_loss(&g, &mixed, 1.0).unwrap(), 0.5);
        let h = FixedScorer::new(vec![1.0, -0.5], 1.0).unwrap();
        assert_eq!(empirical_margin_loss(&h, &mixed, 1.0).unwrap(), 0.0);

        // Psi values {0, 1} -> 0.5
        let two = Episode::new(vec![ex(0), ex(1)], 2, None).unwrap();
        let p = FixedScorer::new(vec![1.0, 0.0], 1.0).unwrap();
        // example 0: gap 1 -> 0; example 1: gap -1 -> 2
        assert_eq!(empirical_multi_margin_loss(&p, &two, 1.0).unwrap(), 1.0);
        let q = FixedScorer::new(vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(empirical_multi_margin_loss(&q, &two, 1.0).unwrap(), 1.0);
        let r = FixedScorer::new(vec![1.0, -1.0], 1.0).unwrap();
        let pair = Episode::new(vec![ex(0), ex(0)], 2, None).unwrap();
        assert_eq!(empirical_multi_margin_loss(&r, &pair, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn multi_margin_mean_of_zero_and_one() {
        let ep = Episode::new(vec![ex(0), ex(1)], 2, None).unwrap();
        // example 0: gap 1 -> 0 ; example 1: gap 0 -> 1 via a per-example scorer
        struct PerLabel;
        impl ScoringFunction<f64> for PerLabel {
            fn num_classes(&self) -> usize {
                2
            }
            fn bound(&self) -> f64 {
                1.0
            }
            fn scores(&self, x: &[f64]) -> Vec<f64> {
                if x[0] == 0.0 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 0.0]
                }
            }
        }
        let ep2 = Episode::new(vec![ex(0), LabeledExample { x: vec![1.0], y: 1 }], 2, None).unwrap();
        assert_eq!(empirical_multi_margin_loss(&PerLabel, &ep2, 1.0).unwrap(), 0.5);
        assert_eq!(ep.len(), 2);
    }

    #[test]
    fn average_over_episodes() {
        let eps: Vec<_> = (0..3).map(|i| Episode::new(vec![ex(0), LabeledExample { x: vec![i as f64], y: 1 }], 2, None).unwrap()).collect();
        let meta = MetaSample::new(eps).unwrap();
        // scorer trained on episode i favours class 0 by i/2: losses {1, 0.5+..., ...}
        let train = |ep: &Episode<f64>| {
            let i = ep.examples()[1].x[0];
            // i = 0 -> constant (loss 1); i = 1 -> loss 0.5 per example; i = 2 -> loss 0
            match i as i32 {
                0 => FixedScorer::constant(2, 0.0, 1.0),
                _ => FixedScorer::new(vec![0.0, 0.0], 1.0),
            }
        };
        let avg = average_empirical_loss(&meta, train, 1.0, LossKind::Margin).unwrap();
        assert_eq!(avg, 1.0);

        let single = MetaSample::new(vec![meta.episodes()[0].clone()]).unwrap();
        let f = FixedScorer::new(vec![0.5, 0.0], 1.0).unwrap();
        let direct = empirical_margin_loss(&f, &single.episodes()[0], 1.0).unwrap();
        let avg1 = average_empirical_loss(&single, |_| Ok(f.clone()), 1.0, LossKind::Margin).unwrap();
        assert_eq!(avg1, direct);
    }

    #[test]
    fn average_of_constructed_losses() {
        // losses 0, 0.5 and 1 on three episodes
        let eps: Vec<_> = (0..3)
            .map(|i| Episode::new(vec![LabeledExample { x: vec![i as f64], y: 0 }], 2, None).unwrap())
            .collect();
        let meta = MetaSample::new(eps).unwrap();
        let train = |ep: &Episode<f64>| {
            let lead = match ep.examples()[0].x[0] as i32 {
                0 => 1.0,
                1 => 0.5,
                _ => 0.0,
            };
            FixedScorer::new(vec![lead, 0.0], 1.0)
        };
        let avg = average_empirical_loss(&meta, train, 1.0, LossKind::Margin).unwrap();
        assert!((avg - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn ramp_is_lipschitz_and_monotone(rho in 0.01f64..10.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (la, lb) = (margin_loss(rho, a), margin_loss(rho, b));
            prop_assert!((la - lb).abs() <= (a - b).abs() / rho + 1e-12);
            prop_assert!((0.0..=1.0).contains(&la));
            if a <= b {
                prop_assert!(la >= lb);
            }
        }

        #[test]
        fn ramp_is_scale_equivariant(rho in 0.01f64..10.0, t in -20.0f64..20.0, c in 0.01f64..100.0) {
            prop_assert!((margin_loss(c * rho, c * t) - margin_loss(rho, t)).abs() <= 1e-12);
        }

        #[test]
        fn surrogate_dominates_ramp(
            scores in prop::collection::vec(-3.0f64..3.0, 2..10),
            y_seed in 0usize..100,
            rho in 0.1f64..10.0,
        ) {
            let y = y_seed % scores.len();
            let k = scores.len() as f64;
            let m = margin_of_scores(&scores, y).unwrap();
            let psi = multi_margin_of_scores(&scores, y, rho).unwrap();
            prop_assert!(psi >= 0.0);
            prop_assert!(margin_loss(rho, m) <= (k - 1.0) * psi);
            prop_assert!(m.abs() <= 6.0);
            prop_assert!(psi <= 1.0 + 6.0 / rho + 1e-12);
        }
    }
}

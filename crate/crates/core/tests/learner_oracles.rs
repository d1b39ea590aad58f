use std::sync::Arc;

use metamargin::learners::{FeatureMap, LinearLearner, Objective};
use metamargin::losses::multi_margin_of_scores;
use metamargin::{Episode64, LabeledExample};

fn tiny_episode() -> Episode64 {
    let pts = [(-1.0, 0), (-0.4, 0), (0.2, 0), (0.3, 1), (0.9, 1), (1.5, 1), (-0.2, 1)];
    let examples = pts.iter().map(|&(x, y)| LabeledExample { x: vec![x], y }).collect();
    Episode64::new(examples, 2, None).unwrap()
}

// mean multi-margin loss of W = (w0, w1) on 1-D features plus lambda |W|^2
fn objective(w: [f64; 2], ep: &Episode64, rho: f64, lambda: f64) -> f64 {
    let loss: f64 = ep
        .examples()
        .iter()
        .map(|ex| {
            let scores = [w[0] * ex.x[0], w[1] * ex.x[0]];
            multi_margin_of_scores(&scores, ex.y, rho).unwrap()
        })
        .sum::<f64>()
        / ep.len() as f64;
    loss + lambda * (w[0] * w[0] + w[1] * w[1])
}

#[test]
fn subgradient_descent_reaches_grid_minimum() {
    let ep = tiny_episode();
    let (rho, lambda) = (1.0, 0.05);
    let mut best = f64::INFINITY;
    let steps = 801;
    for i in 0..steps {
        for j in 0..steps {
            let w = [-4.0 + 8.0 * i as f64 / (steps - 1) as f64, -4.0 + 8.0 * j as f64 / (steps - 1) as f64];
            best = best.min(objective(w, &ep, rho, lambda));
        }
    }
    let phi = Arc::new(FeatureMap::identity(0, 1, 100.0).unwrap());
    let learner = LinearLearner {
        objective: Objective::MultiMargin,
        rho,
        lambda,
        steps: 20_000,
        step_size: 0.5,
        b: 100.0,
        batch_size: None,
        seed: 0,
    };
    let scorer = learner.train(&ep, &phi).unwrap();
    let w = scorer.weights();
    let reached = objective([w[0], w[1]], &ep, rho, lambda);
    assert!(reached <= best + 2e-3, "trained {reached} vs grid {best}");
    assert!((scorer.training_loss().last().unwrap() - reached).abs() < 1e-12);
}

fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn smoothed_training_loss_is_nonincreasing() {
    let ep = tiny_episode();
    let phi = Arc::new(FeatureMap::identity(0, 1, 100.0).unwrap());
    for objective in [Objective::MultiMargin, Objective::CrossEntropy] {
        let learner = LinearLearner {
            objective,
            rho: 1.0,
            lambda: 0.01,
            steps: 400,
            step_size: 0.2,
            b: 100.0,
            batch_size: None,
            seed: 0,
        };
        let scorer = learner.train(&ep, &phi).unwrap();
        let s = smoothed(scorer.training_loss(), 10);
        for pair in s.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{objective:?}: {} -> {}", pair[0], pair[1]);
        }
    }
}

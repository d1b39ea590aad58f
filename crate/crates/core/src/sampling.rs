//! Task environments, tasks, episodes and meta-samples.
//!
//! An environment is a distribution over tasks; a task is a distribution over
//! labelled examples. Both are concrete here: an environment draws one
//! prototype per class from a centered isotropic Gaussian, and a task emits
//! `x = prototype[y] + noise` with `y` drawn from the task's class
//! probabilities. Class labels are task-local indices in `0..k`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed, standard_normal, Rng};

/// Smallest admissible per-coordinate noise level; smaller values are raised to it.
pub const MIN_NOISE_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample<F> {
    pub x: Vec<F>,
    pub y: usize,
}

/// `m` labelled examples drawn from one task.
///
/// When `split` is `Some(s)` the episode is in k-way s-shot form: the first
/// `k * s` examples are the support set and the remainder is the query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode<F> {
    examples: Vec<LabeledExample<F>>,
    k: usize,
    split: Option<usize>,
}

impl<F: Scalar> Episode<F> {
    pub fn new(examples: Vec<LabeledExample<F>>, k: usize, split: Option<usize>) -> Result<Self> {
        ensure!(!examples.is_empty(), "an episode needs at least one example");
        ensure!(k >= 1, "class count must be positive");
        let d = examples[0].x.len();
        for (i, ex) in examples.iter().enumerate() {
            ensure!(ex.y < k, "example {i} has label {} outside 0..{k}", ex.y);
            ensure!(ex.x.len() == d, "example {i} has dimension {} (expected {d})", ex.x.len());
            ensure!(ex.x.iter().all(|v| v.is_finite()), "example {i} has a non-finite coordinate");
        }
        if let Some(s) = split {
            let m = examples.len();
            ensure!(s >= 1, "support size must be positive");
            ensure!(
                k * s < m && m.is_multiple_of(k),
                "split s={s} is inconsistent with m={m}, k={k} (need m = k(s+q), q >= 1)"
            );
        }
        Ok(Self { examples, k, split })
    }

    pub fn examples(&self) -> &[LabeledExample<F>] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    pub fn dim(&self) -> usize {
        self.examples[0].x.len()
    }

    /// Examples a base-learner trains on: the support set, or everything when unsplit.
    pub fn support(&self) -> &[LabeledExample<F>] {
        match self.split {
            Some(s) => &self.examples[..self.k * s],
            None => &self.examples,
        }
    }

    /// Held-out examples: the query set, or everything when unsplit.
    pub fn query(&self) -> &[LabeledExample<F>] {
        match self.split {
            Some(s) => &self.examples[self.k * s..],
            None => &self.examples,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for ex in &self.examples {
            counts[ex.y] += 1;
        }
        counts
    }
}

/// `n` episodes, one per independently drawn task, all of the same size and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSample<F> {
    episodes: Vec<Episode<F>>,
}

impl<F: Scalar> MetaSample<F> {
    pub fn new(episodes: Vec<Episode<F>>) -> Result<Self> {
        ensure!(!episodes.is_empty(), "a meta-sample needs at least one episode");
        let (m, k) = (episodes[0].len(), episodes[0].num_classes());
        for (l, ep) in episodes.iter().enumerate() {
            ensure!(
                ep.len() == m && ep.num_classes() == k,
                "episode {l} has (m={}, k={}) but the meta-sample uses (m={m}, k={k})",
                ep.len(),
                ep.num_classes()
            );
        }
        Ok(Self { episodes })
    }

    pub fn episodes(&self) -> &[Episode<F>] {
        &self.episodes
    }

    pub fn n(&self) -> usize {
        self.episodes.len()
    }

    pub fn m(&self) -> usize {
        self.episodes[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.episodes[0].num_classes()
    }
}

/// One task: a Gaussian mixture with one isotropic component per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec<F> {
    pub prototypes: Vec<Vec<F>>,
    pub noise_sigma: F,
    pub class_probs: Vec<F>,
}

impl<F: Scalar> TaskSpec<F> {
    pub fn new(prototypes: Vec<Vec<F>>, noise_sigma: F, class_probs: Vec<F>) -> Result<Self> {
        ensure!(!prototypes.is_empty(), "a task needs at least one class");
        ensure!(
            prototypes.len() == class_probs.len(),
            "{} prototypes but {} class probabilities",
            prototypes.len(),
            class_probs.len()
        );
        let d = prototypes[0].len();
        ensure!(d >= 1, "prototypes must have positive dimension");
        ensure!(
            prototypes.iter().all(|p| p.len() == d && p.iter().all(|v| v.is_finite())),
            "prototypes must share one dimension and be finite"
        );
        ensure!(
            noise_sigma.is_finite() && noise_sigma >= F::zero(),
            "noise_sigma must be finite and non-negative"
        );
        ensure!(
            class_probs.iter().all(|p| p.is_finite() && *p >= F::zero()),
            "class probabilities must be non-negative"
        );
        let total: F = class_probs.iter().copied().sum();
        ensure!(
            (total - F::one()).abs().as_f64() <= 1e-9_f64.max(4.0 * F::epsilon().as_f64()),
            "class probabilities sum to {total}, not 1"
        );
        let noise_sigma = noise_sigma.max(F::lit(MIN_NOISE_SIGMA));
        Ok(Self { prototypes, noise_sigma, class_probs })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    fn draw_x(&self, y: usize, rng: &mut Rng) -> Vec<F> {
        let sigma = self.noise_sigma.as_f64();
        self.prototypes[y]
            .iter()
            .map(|&c| c + F::lit(sigma * standard_normal(rng)))
            .collect()
    }

    /// Draws `count` i.i.d. examples from this task.
    pub fn draw_examples(&self, count: usize, rng: &mut Rng) -> Vec<LabeledExample<F>> {
        let weights: Vec<f64> = self.class_probs.iter().map(|p| p.as_f64()).collect();
        let classes = WeightedIndex::new(&weights).expect("class probabilities validated at construction");
        (0..count)
            .map(|_| {
                let y = classes.sample(rng);
                LabeledExample { x: self.draw_x(y, rng), y }
            })
            .collect()
    }
}

/// Distribution over tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec<F> {
    pub d_raw: usize,
    pub k: usize,
    pub prototype_scale: F,
    pub noise_sigma: F,
    pub balanced: bool,
}

impl<F: Scalar> EnvironmentSpec<F> {
    pub fn new(d_raw: usize, k: usize, prototype_scale: F, noise_sigma: F, balanced: bool) -> Result<Self> {
        let env = Self { d_raw, k, prototype_scale, noise_sigma, balanced };
        env.validated()
    }

    /// Checks the invariants and raises `noise_sigma` to [`MIN_NOISE_SIGMA`] if needed.
    ///
    /// A zero `prototype_scale` is accepted and yields all-zero prototypes.
    pub fn validated(mut self) -> Result<Self> {
        ensure!(self.d_raw >= 1, "d_raw must be positive");
        ensure!(self.k >= 1, "k must be positive");
        ensure!(
            self.prototype_scale.is_finite() && self.prototype_scale >= F::zero(),
            "prototype_scale must be finite and non-negative"
        );
        ensure!(
            self.noise_sigma.is_finite() && self.noise_sigma >= F::zero(),
            "noise_sigma must be finite and non-negative"
        );
        self.noise_sigma = self.noise_sigma.max(F::lit(MIN_NOISE_SIGMA));
        Ok(self)
    }
}

/// Draws one task from the environment.
pub fn sample_task<F: Scalar>(env: &EnvironmentSpec<F>, seed: u64) -> TaskSpec<F> {
    let mut rng = rng_from_seed(seed);
    let scale = env.prototype_scale.as_f64();
    let prototypes = (0..env.k)
        .map(|_| {
            (0..env.d_raw)
                .map(|_| F::lit(scale * standard_normal(&mut rng)))
                .collect()
        })
        .collect();
    let class_probs = if env.balanced {
        vec![F::one() / F::from_count(env.k); env.k]
    } else {
        // flat Dirichlet via normalised exponentials
        let raw: Vec<f64> = (0..env.k).map(|_| -> f64 { Exp1.sample(&mut rng) }).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| F::lit(r / total)).collect()
    };
    TaskSpec {
        prototypes,
        noise_sigma: env.noise_sigma.max(F::lit(MIN_NOISE_SIGMA)),
        class_probs,
    }
}

/// Draws an episode of `m` i.i.d. examples from `task`.
pub fn sample_episode<F: Scalar>(task: &TaskSpec<F>, m: usize, seed: u64) -> Result<Episode<F>> {
    ensure!(m >= 1, "episode size m must be at least 1");
    let mut rng = rng_from_seed(seed);
    let examples = task.draw_examples(m, &mut rng);
    Episode::new(examples, task.num_classes(), None)
}

/// Draws a k-way s-shot q-query episode: exactly `s + q` examples per class,
/// support block first (class-major), then the query block.
pub fn sample_kway_sshot_episode<F: Scalar>(
    task: &TaskSpec<F>,
    k: usize,
    s: usize,
    q: usize,
    seed: u64,
) -> Result<Episode<F>> {
    ensure!(s >= 1 && q >= 1, "k-way s-shot episodes need s >= 1 and q >= 1 (got s={s}, q={q})");
    ensure!(
        k == task.num_classes(),
        "k-way episode requested with k={k} but the task has {} classes",
        task.num_classes()
    );
    let mut rng = rng_from_seed(seed);
    let mut examples = Vec::with_capacity(k * (s + q));
    for per_class in [s, q] {
        for y in 0..k {
            for _ in 0..per_class {
                examples.push(LabeledExample { x: task.draw_x(y, &mut rng), y });
            }
        }
    }
    Episode::new(examples, k, Some(s))
}

/// How each episode of a meta-sample is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EpisodeShape {
    /// `m` i.i.d. examples, no support/query split.
    Iid { m: usize },
    /// k-way s-shot q-query; `m = k(s + q)`.
    KWay { s: usize, q: usize },
}

impl EpisodeShape {
    pub fn size(&self, k: usize) -> usize {
        match *self {
            EpisodeShape::Iid { m } => m,
            EpisodeShape::KWay { s, q } => k * (s + q),
        }
    }
}

/// Draws one task and one episode of the given shape from it.
pub fn sample_task_and_episode<F: Scalar>(
    env: &EnvironmentSpec<F>,
    shape: EpisodeShape,
    seed: u64,
) -> Result<(TaskSpec<F>, Episode<F>)> {
    let task = sample_task(env, derive_seed(seed, 0));
    let episode = match shape {
        EpisodeShape::Iid { m } => sample_episode(&task, m, derive_seed(seed, 1))?,
        EpisodeShape::KWay { s, q } => sample_kway_sshot_episode(&task, env.k, s, q, derive_seed(seed, 1))?,
    };
    Ok((task, episode))
}

/// `n` independent (task, episode) draws; the tasks themselves are discarded.
pub fn sample_meta_sample<F: Scalar>(
    env: &EnvironmentSpec<F>,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<MetaSample<F>> {
    sample_meta_sample_with(env, n, EpisodeShape::Iid { m }, seed)
}

pub fn sample_meta_sample_with<F: Scalar>(
    env: &EnvironmentSpec<F>,
    n: usize,
    shape: EpisodeShape,
    seed: u64,
) -> Result<MetaSample<F>> {
    ensure!(n >= 1, "meta-sample size n must be at least 1");
    let episodes = (0..n as u64)
        .into_par_iter()
        .map(|l| sample_task_and_episode(env, shape, derive_seed(seed, l)).map(|(_, ep)| ep))
        .collect::<Result<Vec<_>>>()?;
    MetaSample::new(episodes)
}

impl From<rand::distr::weighted::Error> for Error {
    fn from(e: rand::distr::weighted::Error) -> Self {
        Error::InvalidParameter(format!("class probabilities: {e}"))
    }
}

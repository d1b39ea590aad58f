use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::BoundInputs;
use crate::error::{ensure, Error, Result};
use crate::learners::{make_feature_family, FeatureFamily, FeatureKind, Learner, LinearLearner, NearestCentroid, Objective};
use crate::sampling::{EnvironmentSpec, EpisodeShape};
use crate::seed::derive_seed;

/// Seed stream reserved for the feature family when the config gives none.
const FAMILY_STREAM: u64 = 0x00FA_3117;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kind: FeatureKind,
    pub count: usize,
    /// Output dimension; must equal `d_raw` for identity maps.
    pub dim: usize,
    #[serde(default = "default_norm_cap")]
    pub norm_cap: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_norm_cap() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    NearestCentroid,
    LinearMultimargin,
    LinearCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    /// Training margin; defaults to the bound's `rho`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_steps() -> usize {
    50
}

fn default_step_size() -> f64 {
    0.5
}

/// One JSON document describing a bound-validity experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec<f64>,
    pub family: FamilyConfig,
    pub learner: LearnerConfig,
    /// `k` must match the environment; `m` is the training episode size.
    pub bound: BoundInputs<f64>,
    /// Train on k-way `shots`-shot episodes instead of i.i.d. ones.
    #[serde(default)]
    pub shots: Option<usize>,
    #[serde(default = "default_queries")]
    pub queries: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_test_points")]
    pub test_points_per_task: usize,
    #[serde(default = "default_task_draws")]
    pub task_draws: usize,
    #[serde(default = "default_outer_task_draws")]
    pub outer_task_draws: usize,
    #[serde(default = "default_outer_meta_draws")]
    pub outer_meta_draws: usize,
    #[serde(default = "default_complexity_draws")]
    pub complexity_draws: usize,
    #[serde(default = "default_levels")]
    pub dudley_levels: usize,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    #[serde(default = "default_test_shots")]
    pub test_shots: usize,
    #[serde(default = "default_queries")]
    pub test_queries: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write wall-clock times to `elapsed_ms`; off keeps files reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_queries() -> usize {
    15
}
fn default_trials() -> usize {
    200
}
fn default_test_points() -> usize {
    50
}
fn default_task_draws() -> usize {
    100
}
fn default_outer_task_draws() -> usize {
    20
}
fn default_outer_meta_draws() -> usize {
    1
}
fn default_complexity_draws() -> usize {
    crate::complexity::DEFAULT_DRAWS
}
fn default_levels() -> usize {
    12
}
fn default_test_episodes() -> usize {
    600
}
fn default_test_shots() -> usize {
    5
}

impl ExperimentConfig {
    /// k=5, m=100, n=50, eight random linear maps, nearest centroid, rho=1, delta=0.1.
    pub fn default_synthetic() -> Self {
        let dim = 16;
        Self {
            environment: EnvironmentSpec { d_raw: 16, k: 5, prototype_scale: 1.0, noise_sigma: 0.5, balanced: true },
            family: FamilyConfig { kind: FeatureKind::RandomLinear, count: 8, dim, norm_cap: 1.0, seed: None },
            learner: LearnerConfig {
                kind: LearnerKind::NearestCentroid,
                rho: None,
                lambda: 0.0,
                steps: default_steps(),
                step_size: default_step_size(),
                batch_size: None,
            },
            bound: BoundInputs { k: 5, rho: 1.0, delta: 0.1, m: 100, n: 50, v: dim + 1, b: 1.0, c0: std::f64::consts::E },
            shots: None,
            queries: default_queries(),
            trials: default_trials(),
            test_points_per_task: default_test_points(),
            task_draws: default_task_draws(),
            outer_task_draws: default_outer_task_draws(),
            outer_meta_draws: default_outer_meta_draws(),
            complexity_draws: default_complexity_draws(),
            dudley_levels: default_levels(),
            test_episodes: default_test_episodes(),
            test_shots: default_test_shots(),
            test_queries: default_queries(),
            seed: None,
            output: None,
            record_timing: false,
        }
    }

    /// Parses a config; a missing `bound.v` defaults to `family.dim + 1`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        let dim = value.pointer("/family/dim").and_then(|d| d.as_u64());
        if let (Some(bound), Some(dim)) = (value.get_mut("bound").and_then(|b| b.as_object_mut()), dim) {
            bound.entry("v").or_insert(serde_json::json!(dim + 1));
        }
        let mut config: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.environment = config.environment.validated()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.clone().validated()?;
        self.bound.validate()?;
        let k = self.environment.k;
        ensure!(self.bound.k == k, "bound.k = {} differs from environment.k = {k}", self.bound.k);
        ensure!(self.family.count >= 1 && self.family.dim >= 1, "family needs count >= 1 and dim >= 1");
        ensure!(self.family.norm_cap > 0.0, "family.norm_cap must be positive");
        ensure!(self.queries >= 1 && self.test_queries >= 1 && self.test_shots >= 1, "shot and query counts must be positive");
        if let Some(s) = self.shots {
            ensure!(s >= 1, "shots must be positive");
            let m = k * (s + self.queries);
            ensure!(self.bound.m == m, "bound.m = {} but k(shots + queries) = {m}", self.bound.m);
        }
        for (name, count) in [
            ("trials", self.trials),
            ("test_points_per_task", self.test_points_per_task),
            ("task_draws", self.task_draws),
            ("outer_task_draws", self.outer_task_draws),
            ("outer_meta_draws", self.outer_meta_draws),
            ("dudley_levels", self.dudley_levels),
            ("test_episodes", self.test_episodes),
        ] {
            ensure!(count >= 1, "{name} must be at least 1");
        }
        ensure!(self.complexity_draws >= 2, "complexity_draws must be at least 2");
        ensure!(self.task_draws >= 2, "task_draws must be at least 2 for a standard error");
        self.learner(0)?;
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn shape(&self) -> EpisodeShape {
        match self.shots {
            Some(s) => EpisodeShape::KWay { s, q: self.queries },
            None => EpisodeShape::Iid { m: self.bound.m },
        }
    }

    pub fn test_shape(&self) -> EpisodeShape {
        EpisodeShape::KWay { s: self.test_shots, q: self.test_queries }
    }

    pub fn learner_rho(&self) -> f64 {
        self.learner.rho.unwrap_or(self.bound.rho)
    }

    pub fn learner(&self, seed: u64) -> Result<Learner<f64>> {
        let b = self.bound.b;
        let linear = |objective| {
            let l = LinearLearner {
                objective,
                rho: self.learner_rho(),
                lambda: self.learner.lambda,
                steps: self.learner.steps,
                step_size: self.learner.step_size,
                b,
                batch_size: self.learner.batch_size,
                seed,
            };
            ensure!(l.steps >= 1, "learner.steps must be at least 1");
            ensure!(l.rho > 0.0 && l.lambda >= 0.0 && l.step_size >= 0.0, "learner hyperparameters out of range");
            Ok(Learner::Linear(l))
        };
        match self.learner.kind {
            LearnerKind::NearestCentroid => Ok(Learner::NearestCentroid(NearestCentroid { b })),
            LearnerKind::LinearMultimargin => linear(Objective::MultiMargin),
            LearnerKind::LinearCrossEntropy => linear(Objective::CrossEntropy),
        }
    }

    pub fn feature_family(&self) -> Result<FeatureFamily<f64>> {
        let seed = self.family.seed.unwrap_or_else(|| derive_seed(self.master_seed(), FAMILY_STREAM));
        make_feature_family(
            self.environment.d_raw,
            self.family.dim,
            self.family.count,
            self.family.kind,
            self.family.norm_cap,
            seed,
        )
    }
}

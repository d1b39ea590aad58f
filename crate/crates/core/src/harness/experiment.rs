use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{covering_transfer_bound, gaussian_transfer_bound, surrogate_multimargin_bound, vc_transfer_bound};
use crate::complexity::{build_pi1f_restriction, build_pi1f_restriction_meta, entropy_integral, gaussian_complexity_mc};
use crate::error::{ensure, Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::learners::{meta_erm_select, query_accuracy, BaseLearner, FeatureFamily, FeatureMap, Learner};
use crate::losses::{average_empirical_loss, margin, margin_loss, LossKind, ScoringFunction};
use crate::sampling::{sample_meta_sample_with, sample_task_and_episode, EnvironmentSpec, Episode, EpisodeShape, MetaSample};
use crate::seed::{derive_seed, rng_from_seed};

const META_STREAM: u64 = 0;
const RISK_STREAM: u64 = 1;
const GAMMA_META_STREAM: u64 = 2;
const GAMMA_TASK_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;
const LEARNER_STREAM: u64 = 5;
const MC_STREAM: u64 = 6;

/// Rounds to 9 significant digits, the precision written to result files.
pub fn quantize(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Monte Carlo estimate of the transfer risk.
///
/// The standard error treats each task as one cluster: it is the standard
/// deviation of the per-task mean losses over `sqrt(tasks_used)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub tasks_used: usize,
    pub failed_tasks: usize,
}

/// Transfer risk of `learner` run on top of the fixed map `phi`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_transfer_risk<L: BaseLearner<f64>>(
    env: &EnvironmentSpec<f64>,
    phi: &Arc<FeatureMap<f64>>,
    learner: &L,
    rho: f64,
    shape: EpisodeShape,
    task_draws: usize,
    test_points: usize,
    seed: u64,
) -> Result<TransferRiskEstimate> {
    estimate_transfer_risk_with(env, shape, |ep| learner.learn(ep, phi), rho, task_draws, test_points, seed)
}

/// Same as [`estimate_transfer_risk`] with an arbitrary episode-to-scorer map.
///
/// Task `t` is drawn from `derive_seed(seed, t)`; a task whose training fails
/// is skipped and counted in `failed_tasks`.
pub fn estimate_transfer_risk_with<S, T>(
    env: &EnvironmentSpec<f64>,
    shape: EpisodeShape,
    train: T,
    rho: f64,
    task_draws: usize,
    test_points: usize,
    seed: u64,
) -> Result<TransferRiskEstimate>
where
    S: ScoringFunction<f64>,
    T: Fn(&Episode<f64>) -> Result<S> + Sync,
{
    ensure!(task_draws >= 2 && test_points >= 1, "need task_draws >= 2 and test_points >= 1");
    ensure!(rho > 0.0, "margin rho must be positive");
    let per_task: Vec<Option<f64>> = (0..task_draws as u64)
        .into_par_iter()
        .map(|t| -> Result<Option<f64>> {
            let task_seed = derive_seed(seed, t);
            let (task, episode) = sample_task_and_episode(env, shape, task_seed)?;
            let Ok(scorer) = train(&episode) else { return Ok(None) };
            let mut rng = rng_from_seed(derive_seed(task_seed, 2));
            let mut total = 0.0;
            for ex in task.draw_examples(test_points, &mut rng) {
                total += margin_loss(rho, margin(&scorer, &ex.x, ex.y)?);
            }
            Ok(Some(total / test_points as f64))
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = per_task.iter().flatten().copied().collect();
    let failed_tasks = task_draws - used.len();
    if used.len() < 2 {
        return Err(Error::NumericFailure(format!(
            "transfer risk needs two successful tasks; {failed_tasks} of {task_draws} failed"
        )));
    }
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let var = used.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(TransferRiskEstimate { mean, std_error: (var / n).sqrt(), tasks_used: used.len(), failed_tasks })
}

/// Mean query accuracy over `episodes` fresh k-way test episodes; failed episodes are skipped.
pub fn test_accuracy<L: BaseLearner<f64>>(
    env: &EnvironmentSpec<f64>,
    phi: &Arc<FeatureMap<f64>>,
    learner: &L,
    shape: EpisodeShape,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let accs: Vec<Option<f64>> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| -> Result<Option<f64>> {
            let (_, episode) = sample_task_and_episode(env, shape, derive_seed(seed, e))?;
            Ok(learner.learn(&episode, phi).ok().map(|s| query_accuracy(&s, &episode)))
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = accs.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::NumericFailure("every test episode failed to train".into()));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub avg_empirical_loss: f64,
    pub transfer_risk: f64,
    pub transfer_risk_se: f64,
    pub bound_vc: f64,
    pub bound_gaussian: f64,
    pub bound_covering: f64,
    pub bound_surrogate: f64,
    pub holds_vc: bool,
    pub holds_gaussian: bool,
    pub holds_covering: bool,
    pub holds_surrogate: bool,
    pub test_accuracy: f64,
    pub vacuous_vc: bool,
    pub elapsed_ms: u64,
}

pub const RESULT_HEADER: &str = "trial,avg_empirical_loss,transfer_risk,transfer_risk_se,bound_vc,bound_gaussian,bound_covering,bound_surrogate,holds_vc,holds_gaussian,holds_covering,holds_surrogate,test_accuracy,vacuous_vc,elapsed_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerBound {
    pub vc: f64,
    pub gaussian: f64,
    pub covering: f64,
    pub surrogate: f64,
}

/// Everything a trial computes, beyond what goes into the results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialDetail {
    pub row: ResultRow,
    pub chosen_map: usize,
    pub avg_multimargin_loss: f64,
    pub gamma_meta: f64,
    pub gamma_task: f64,
    pub integral_meta: f64,
    pub integral_task: f64,
    pub risk_failed_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

/// Aggregates over completed trials; failed trials are excluded from every
/// mean and frequency and listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<TrialFailure>,
    pub hold_frequency: PerBound,
    pub mean_bound: PerBound,
    pub vacuous_vc: usize,
    pub mean_avg_empirical_loss: f64,
    pub mean_transfer_risk: f64,
    pub mean_test_accuracy: f64,
    pub test_accuracy_se: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub details: Vec<TrialDetail>,
    pub failures: Vec<TrialFailure>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.details.iter().map(|d| d.row.clone()).collect()
    }
}

struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    family: &'a FeatureFamily<f64>,
}

impl TrialContext<'_> {
    fn run(&self, trial: usize) -> Result<TrialDetail> {
        let start = Instant::now();
        let config = self.config;
        let env = &config.environment;
        let inputs = config.bound;
        let rho = inputs.rho;
        let shape = config.shape();
        let ts = derive_seed(config.master_seed(), trial as u64);
        let learner: Learner<f64> = config.learner(derive_seed(ts, LEARNER_STREAM))?;

        let meta = sample_meta_sample_with(env, inputs.n, shape, derive_seed(ts, META_STREAM))?;
        let selection = meta_erm_select(&meta, self.family, &learner, rho, LossKind::Margin)?;
        let phi = &selection.map;
        let avg_loss = selection.chosen_loss();
        let avg_multimargin = average_empirical_loss(&meta, |ep| learner.learn(ep, phi), rho, LossKind::MultiMargin)?;

        let risk = estimate_transfer_risk(
            env,
            phi,
            &learner,
            rho,
            shape,
            config.task_draws,
            config.test_points_per_task,
            derive_seed(ts, RISK_STREAM),
        )?;

        let (gamma_meta, integral_meta) = self.meta_complexity(&meta, &learner, ts)?;
        let (gamma_task, integral_task) = self.task_complexity(&learner, ts)?;

        let vc = vc_transfer_bound(&inputs, avg_loss)?;
        let gaussian = gaussian_transfer_bound(&inputs, avg_loss, gamma_meta, gamma_task)?;
        let covering = covering_transfer_bound(&inputs, avg_loss, integral_meta, integral_task)?;
        let surrogate = surrogate_multimargin_bound(&inputs, avg_multimargin)?;

        let accuracy = test_accuracy(
            env,
            phi,
            &learner,
            config.test_shape(),
            config.test_episodes,
            derive_seed(ts, TEST_STREAM),
        )?;

        let transfer_risk = quantize(risk.mean);
        let [bound_vc, bound_gaussian, bound_covering, bound_surrogate] =
            [vc.total, gaussian.total, covering.total, surrogate.total].map(quantize);
        for value in [transfer_risk, bound_vc, bound_gaussian, bound_covering, bound_surrogate] {
            if !value.is_finite() {
                return Err(Error::NumericFailure(format!("trial {trial} produced a non-finite value")));
            }
        }
        let elapsed_ms = if config.record_timing { start.elapsed().as_millis() as u64 } else { 0 };
        let row = ResultRow {
            trial,
            avg_empirical_loss: quantize(avg_loss),
            transfer_risk,
            transfer_risk_se: quantize(risk.std_error),
            bound_vc,
            bound_gaussian,
            bound_covering,
            bound_surrogate,
            holds_vc: transfer_risk <= bound_vc,
            holds_gaussian: transfer_risk <= bound_gaussian,
            holds_covering: transfer_risk <= bound_covering,
            holds_surrogate: transfer_risk <= bound_surrogate,
            test_accuracy: quantize(accuracy),
            vacuous_vc: bound_vc >= 1.0,
            elapsed_ms,
        };
        Ok(TrialDetail {
            row,
            chosen_map: phi.id(),
            avg_multimargin_loss: avg_multimargin,
            gamma_meta,
            gamma_task,
            integral_meta,
            integral_task,
            risk_failed_tasks: risk.failed_tasks,
        })
    }

    /// Gaussian complexity and entropy integral over meta-samples; draw 0 is the trial's own.
    fn meta_complexity(&self, meta: &MetaSample<f64>, learner: &Learner<f64>, ts: u64) -> Result<(f64, f64)> {
        let config = self.config;
        let stream = derive_seed(ts, GAMMA_META_STREAM);
        let mut gamma = 0.0;
        let mut integral = 0.0;
        for j in 0..config.outer_meta_draws {
            let fresh;
            let sample = if j == 0 {
                meta
            } else {
                fresh = sample_meta_sample_with(
                    &config.environment,
                    config.bound.n,
                    config.shape(),
                    derive_seed(stream, j as u64),
                )?;
                &fresh
            };
            let a = build_pi1f_restriction_meta(sample, self.family, learner)?;
            let mc_seed = derive_seed(derive_seed(stream, MC_STREAM), j as u64);
            gamma += gaussian_complexity_mc(&a, config.complexity_draws, mc_seed)?.mean;
            integral += entropy_integral(&a, config.dudley_levels)?;
        }
        let draws = config.outer_meta_draws as f64;
        // the Monte Carlo mean can dip below zero for a near-singleton class
        Ok(((gamma / draws).max(0.0), integral / draws))
    }

    /// Same quantities over single-task episodes, averaged over fresh tasks.
    fn task_complexity(&self, learner: &Learner<f64>, ts: u64) -> Result<(f64, f64)> {
        let config = self.config;
        let stream = derive_seed(ts, GAMMA_TASK_STREAM);
        let mut gamma = 0.0;
        let mut integral = 0.0;
        for t in 0..config.outer_task_draws as u64 {
            let (_, episode) = sample_task_and_episode(&config.environment, config.shape(), derive_seed(stream, t))?;
            let a = build_pi1f_restriction(&episode, self.family, learner)?;
            let mc_seed = derive_seed(derive_seed(stream, MC_STREAM), t);
            gamma += gaussian_complexity_mc(&a, config.complexity_draws, mc_seed)?.mean;
            integral += entropy_integral(&a, config.dudley_levels)?;
        }
        let draws = config.outer_task_draws as f64;
        Ok(((gamma / draws).max(0.0), integral / draws))
    }
}

/// Runs `config.trials` independent trials and checks each bound against the
/// estimated transfer risk of the meta-ERM map.
///
/// Trial `t` uses seed `derive_seed(master, t)`; rows come back in trial order
/// whatever the thread count.
pub fn bound_validity_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let family = config.feature_family()?;
    let ctx = TrialContext { config, family: &family };
    let results: Vec<Result<TrialDetail>> = (0..config.trials).into_par_iter().map(|t| ctx.run(t)).collect();
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for (trial, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => details.push(d),
            Err(e) => failures.push(TrialFailure { trial, error: e.to_string() }),
        }
    }
    let summary = summarize(config.trials, &details, &failures);
    Ok(ExperimentOutcome { details, failures, summary })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn frequency(values: impl Iterator<Item = bool>) -> f64 {
    mean(values.map(|b| if b { 1.0 } else { 0.0 }))
}

fn summarize(trials: usize, details: &[TrialDetail], failures: &[TrialFailure]) -> ExperimentSummary {
    let rows: Vec<&ResultRow> = details.iter().map(|d| &d.row).collect();
    let accuracy = mean(rows.iter().map(|r| r.test_accuracy));
    let test_accuracy_se = if rows.len() >= 2 {
        let n = rows.len() as f64;
        let var = rows.iter().map(|r| (r.test_accuracy - accuracy).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    ExperimentSummary {
        trials,
        completed: rows.len(),
        failed: failures.len(),
        failures: failures.to_vec(),
        hold_frequency: PerBound {
            vc: frequency(rows.iter().map(|r| r.holds_vc)),
            gaussian: frequency(rows.iter().map(|r| r.holds_gaussian)),
            covering: frequency(rows.iter().map(|r| r.holds_covering)),
            surrogate: frequency(rows.iter().map(|r| r.holds_surrogate)),
        },
        mean_bound: PerBound {
            vc: mean(rows.iter().map(|r| r.bound_vc)),
            gaussian: mean(rows.iter().map(|r| r.bound_gaussian)),
            covering: mean(rows.iter().map(|r| r.bound_covering)),
            surrogate: mean(rows.iter().map(|r| r.bound_surrogate)),
        },
        vacuous_vc: rows.iter().filter(|r| r.vacuous_vc).count(),
        mean_avg_empirical_loss: mean(rows.iter().map(|r| r.avg_empirical_loss)),
        mean_transfer_risk: mean(rows.iter().map(|r| r.transfer_risk)),
        mean_test_accuracy: accuracy,
        test_accuracy_se,
    }
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Results file text, header included even when there are no rows.
pub fn results_to_csv_string(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Ok(format!("{RESULT_HEADER}\n"));
    }
    let mut buf = Vec::new();
    write_rows(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::NumericFailure(e.to_string()))
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, results_to_csv_string(rows)?)?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    M,
    Rho,
    S,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::N => "n",
            SweepAxis::M => "m",
            SweepAxis::Rho => "rho",
            SweepAxis::S => "s",
        })
    }
}

/// Per-value aggregate of a sweep; numeric cells are empty when `status` is `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub status: String,
    pub completed: Option<usize>,
    pub failed: Option<usize>,
    pub mean_test_accuracy: Option<f64>,
    pub test_accuracy_se: Option<f64>,
    pub mean_transfer_risk: Option<f64>,
    pub mean_bound_vc: Option<f64>,
    pub mean_bound_gaussian: Option<f64>,
    pub mean_bound_covering: Option<f64>,
    pub mean_bound_surrogate: Option<f64>,
    pub hold_frequency_vc: Option<f64>,
    pub hold_frequency_gaussian: Option<f64>,
    pub hold_frequency_covering: Option<f64>,
    pub hold_frequency_surrogate: Option<f64>,
    pub error: String,
}

impl SweepRow {
    fn from_summary(axis: SweepAxis, value: f64, s: &ExperimentSummary) -> Self {
        let q = |x: f64| Some(quantize(x));
        Self {
            axis: axis.to_string(),
            value,
            status: "ok".into(),
            completed: Some(s.completed),
            failed: Some(s.failed),
            mean_test_accuracy: q(s.mean_test_accuracy),
            test_accuracy_se: q(s.test_accuracy_se),
            mean_transfer_risk: q(s.mean_transfer_risk),
            mean_bound_vc: q(s.mean_bound.vc),
            mean_bound_gaussian: q(s.mean_bound.gaussian),
            mean_bound_covering: q(s.mean_bound.covering),
            mean_bound_surrogate: q(s.mean_bound.surrogate),
            hold_frequency_vc: q(s.hold_frequency.vc),
            hold_frequency_gaussian: q(s.hold_frequency.gaussian),
            hold_frequency_covering: q(s.hold_frequency.covering),
            hold_frequency_surrogate: q(s.hold_frequency.surrogate),
            error: String::new(),
        }
    }

    fn failed(axis: SweepAxis, value: f64, error: &Error) -> Self {
        Self {
            axis: axis.to_string(),
            value,
            status: "error".into(),
            completed: None,
            failed: None,
            mean_test_accuracy: None,
            test_accuracy_se: None,
            mean_transfer_risk: None,
            mean_bound_vc: None,
            mean_bound_gaussian: None,
            mean_bound_covering: None,
            mean_bound_surrogate: None,
            hold_frequency_vc: None,
            hold_frequency_gaussian: None,
            hold_frequency_covering: None,
            hold_frequency_surrogate: None,
            error: error.to_string(),
        }
    }
}

fn count_value(axis: SweepAxis, value: f64) -> Result<usize> {
    ensure!(
        value.is_finite() && value >= 1.0 && value.fract() == 0.0 && value < 1e15,
        "axis {axis} needs a positive integer (got {value})"
    );
    Ok(value as usize)
}

/// The config with one axis set to `value`. Sweeping `rho` moves the
/// learner's margin with it; `s` switches to k-way episodes with `m = k(s + queries)`.
pub fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match axis {
        SweepAxis::N => c.bound.n = count_value(axis, value)?,
        SweepAxis::M => {
            ensure!(c.shots.is_none(), "axis m needs i.i.d. episodes; use axis s for k-way episodes");
            c.bound.m = count_value(axis, value)?;
        }
        SweepAxis::Rho => {
            ensure!(value.is_finite() && value > 0.0, "rho must be positive (got {value})");
            c.bound.rho = value;
            c.learner.rho = None;
        }
        SweepAxis::S => {
            let s = count_value(axis, value)?;
            c.shots = Some(s);
            c.bound.m = c.environment.k * (s + c.queries);
        }
    }
    c.validate()?;
    Ok(c)
}

/// One experiment per value, all under the same master seed so that values
/// are compared on common random numbers. Rows follow the input order; a
/// value that cannot run yields an `error` row and the sweep goes on.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    ensure!(!values.is_empty(), "a sweep needs at least one value");
    Ok(values
        .iter()
        .map(|&value| match apply_axis(config, axis, value).and_then(|c| bound_validity_experiment(&c)) {
            Ok(outcome) => SweepRow::from_summary(axis, value, &outcome.summary),
            Err(e) => SweepRow::failed(axis, value, &e),
        })
        .collect())
}

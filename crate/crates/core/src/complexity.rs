//! Empirical-process quantities over a finite restricted function class.
//!
//! Everything here works on a [`FunctionValueMatrix`]: one row per function,
//! one column per sample point. Gaussian and Rademacher complexities are
//! estimated by Monte Carlo, with one derived seed per draw so estimates do not
//! depend on the thread count. Covering numbers use the normalised L2 metric
//! `d(f, g) = sqrt(mean_j (f_j - g_j)^2)` and are upper-bounded by greedy covers.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::learners::{BaseLearner, FeatureFamily, FeatureMap};
use crate::losses::ScoringFunction;
use crate::sampling::{Episode, MetaSample};
use crate::scalar::{dot, Scalar};
use crate::seed::{derive_seed, rng_from_seed, standard_normal};

/// Default Monte Carlo draw count for the complexity estimators.
pub const DEFAULT_DRAWS: usize = 2000;

/// Values of `N` functions at `M` sample points, row-major, all within `[-b, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionValueMatrix<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
    b: F,
    labels: Vec<String>,
}

impl<F: Scalar> FunctionValueMatrix<F> {
    pub fn new(rows: Vec<Vec<F>>, b: F) -> Result<Self> {
        let n = rows.len();
        let labels = (0..n).map(|i| format!("f{i}")).collect();
        Self::with_labels(rows, b, labels)
    }

    pub fn with_labels(rows: Vec<Vec<F>>, b: F, labels: Vec<String>) -> Result<Self> {
        ensure!(!rows.is_empty(), "a function-value matrix needs at least one row");
        let cols = rows[0].len();
        ensure!(cols >= 1, "a function-value matrix needs at least one column");
        ensure!(rows.iter().all(|r| r.len() == cols), "rows have different lengths");
        ensure!(labels.len() == rows.len(), "{} labels for {} rows", labels.len(), rows.len());
        let n = rows.len();
        Self::from_flat(n, cols, rows.into_iter().flatten().collect(), b, labels)
    }

    pub fn from_flat(rows: usize, cols: usize, values: Vec<F>, b: F, labels: Vec<String>) -> Result<Self> {
        ensure!(rows >= 1 && cols >= 1, "matrix must be at least 1x1");
        ensure!(values.len() == rows * cols, "expected {} values, got {}", rows * cols, values.len());
        ensure!(b.is_finite() && b > F::zero(), "entry bound b must be positive and finite");
        ensure!(labels.len() == rows, "{} labels for {rows} rows", labels.len());
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || v.abs() > b) {
            return Err(Error::InvalidParameter(format!(
                "entry ({}, {}) = {} is not within [-{b}, {b}]",
                pos / cols,
                pos % cols,
                values[pos]
            )));
        }
        Ok(Self { rows, cols, values, b, labels })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn bound(&self) -> F {
        self.b
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks(self.cols)
    }

    pub fn max_abs(&self) -> F {
        self.values.iter().fold(F::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Largest row norm under the normalised L2 metric (`|row| / sqrt(M)`).
    pub fn max_normalized_norm(&self) -> F {
        let m = F::from_count(self.cols);
        self.iter_rows()
            .map(|r| (dot(r, r) / m).sqrt())
            .fold(F::zero(), F::max)
    }

    /// Normalised L2 distance between rows `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> F {
        normalized_distance(self.row(i), self.row(j))
    }

    /// Applies `f` entrywise; `new_b` must bound the mapped entries.
    pub fn map_entries(&self, f: impl Fn(F) -> F, new_b: F) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_flat(self.rows, self.cols, values, new_b, self.labels.clone())
    }

    pub fn scaled(&self, c: F) -> Result<Self> {
        ensure!(c > F::zero(), "scale factor must be positive");
        self.map_entries(|v| c * v, c * self.b)
    }

    /// CSV form: a `# b=<bound>` line, a `label,x1..xM` header, then one line per row.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# b={}\nlabel", self.b);
        for j in 1..=self.cols {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(self.iter_rows()) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let b_text = first
            .trim()
            .strip_prefix("# b=")
            .ok_or_else(|| Error::InvalidParameter("matrix CSV must start with a '# b=<bound>' line".into()))?;
        let b = b_text
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::InvalidParameter(format!("bad bound '{b_text}': {e}")))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut fields = record.iter();
            labels.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map(F::lit)
                        .map_err(|e| Error::InvalidParameter(format!("bad matrix entry '{s}': {e}")))
                })
                .collect::<Result<Vec<F>>>()?;
            rows.push(row);
        }
        Self::with_labels(rows, F::lit(b), labels)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

fn normalized_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    let sq: F = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (sq / F::from_count(a.len())).sqrt()
}

/// Restriction of the scalar projection class to one episode.
///
/// Rows enumerate `(phi, y)` with `phi` outer; column `i` holds
/// `f_{phi(episode)}(x_i, y)` for the scorer trained on the same episode.
pub fn build_pi1f_restriction<F, L>(
    episode: &Episode<F>,
    family: &FeatureFamily<F>,
    learner: &L,
) -> Result<FunctionValueMatrix<F>>
where
    F: Scalar,
    L: BaseLearner<F>,
{
    let k = episode.num_classes();
    let m = episode.len();
    let blocks = family
        .maps()
        .par_iter()
        .map(|phi| restriction_block(episode, phi, learner))
        .collect::<Result<Vec<_>>>()?;
    assemble(blocks, family, k, m)
}

/// Restriction of the scalar projection class to a whole meta-sample.
///
/// Columns are ordered episode-major: column `l * m + i` holds the score of
/// example `i` of episode `l` under the scorer trained on episode `l`.
pub fn build_pi1f_restriction_meta<F, L>(
    meta: &MetaSample<F>,
    family: &FeatureFamily<F>,
    learner: &L,
) -> Result<FunctionValueMatrix<F>>
where
    F: Scalar,
    L: BaseLearner<F>,
{
    let (k, m, n) = (meta.num_classes(), meta.m(), meta.n());
    let blocks = family
        .maps()
        .iter()
        .map(|phi| {
            let per_episode = meta
                .episodes()
                .par_iter()
                .map(|ep| restriction_block(ep, phi, learner))
                .collect::<Result<Vec<_>>>()?;
            let (b, _) = per_episode[0];
            let mut rows = vec![Vec::with_capacity(n * m); k];
            for (_, block) in per_episode {
                for (row, part) in rows.iter_mut().zip(block) {
                    row.extend(part);
                }
            }
            Ok((b, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(blocks, family, k, n * m)
}

type Block<F> = (F, Vec<Vec<F>>);

fn restriction_block<F: Scalar, L: BaseLearner<F>>(
    episode: &Episode<F>,
    phi: &Arc<FeatureMap<F>>,
    learner: &L,
) -> Result<Block<F>> {
    let scorer = learner.learn(episode, phi)?;
    let k = episode.num_classes();
    let mut rows = vec![Vec::with_capacity(episode.len()); k];
    for ex in episode.examples() {
        for (row, s) in rows.iter_mut().zip(scorer.scores(&ex.x)) {
            row.push(s);
        }
    }
    Ok((scorer.bound(), rows))
}

fn assemble<F: Scalar>(
    blocks: Vec<Block<F>>,
    family: &FeatureFamily<F>,
    k: usize,
    cols: usize,
) -> Result<FunctionValueMatrix<F>> {
    let b = blocks.iter().map(|(b, _)| *b).fold(F::zero(), F::max);
    let mut values = Vec::with_capacity(blocks.len() * k * cols);
    let mut labels = Vec::with_capacity(blocks.len() * k);
    for (phi, (_, rows)) in family.maps().iter().zip(blocks) {
        for (y, row) in rows.into_iter().enumerate() {
            labels.push(format!("y{y}:phi{}", phi.id()));
            values.extend(row);
        }
    }
    FunctionValueMatrix::from_flat(family.len() * k, cols, values, b, labels)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl ComplexityEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        Self { mean, std_error: (var / n).sqrt(), draws: samples.len() }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Self) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

fn sup_linear_form<F: Scalar>(a: &FunctionValueMatrix<F>, noise: &[F]) -> F {
    let scale = F::lit(2.0) / F::from_count(a.n_cols());
    a.iter_rows()
        .map(|r| scale * dot(r, noise))
        .fold(F::neg_infinity(), F::max)
}

fn mc_estimate<F, G>(a: &FunctionValueMatrix<F>, draws: usize, seed: u64, noise: G) -> Result<ComplexityEstimate>
where
    F: Scalar,
    G: Fn(&mut crate::seed::Rng) -> f64 + Sync,
{
    ensure!(draws >= 2, "Monte Carlo estimates need at least two draws");
    let samples: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|d| {
            let mut rng = rng_from_seed(derive_seed(seed, d));
            let v: Vec<F> = (0..a.n_cols()).map(|_| F::lit(noise(&mut rng))).collect();
            sup_linear_form(a, &v).as_f64()
        })
        .collect();
    Ok(ComplexityEstimate::from_samples(&samples))
}

/// Estimates `E sup_rows (2/M) sum_j gamma_j a_j` with i.i.d. standard normal `gamma`.
pub fn gaussian_complexity_mc<F: Scalar>(a: &FunctionValueMatrix<F>, draws: usize, seed: u64) -> Result<ComplexityEstimate> {
    mc_estimate(a, draws, seed, standard_normal)
}

/// Estimates `E sup_rows (2/M) sum_j sigma_j a_j` with i.i.d. uniform signs `sigma`.
pub fn rademacher_complexity_mc<F: Scalar>(a: &FunctionValueMatrix<F>, draws: usize, seed: u64) -> Result<ComplexityEstimate> {
    mc_estimate(a, draws, seed, |rng| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Closed-form bound `max_a |a - mean(A)| * 2 sqrt(2 ln N) / M` (Euclidean norm).
pub fn massart_bound<F: Scalar>(a: &FunctionValueMatrix<F>) -> F {
    let n = a.n_rows();
    if n == 1 {
        return F::zero();
    }
    let m = a.n_cols();
    let mut centre = vec![F::zero(); m];
    for r in a.iter_rows() {
        for (c, &v) in centre.iter_mut().zip(r) {
            *c = *c + v;
        }
    }
    let inv = F::one() / F::from_count(n);
    centre.iter_mut().for_each(|c| *c = *c * inv);
    let spread = a
        .iter_rows()
        .map(|r| crate::scalar::euclidean(r, &centre))
        .fold(F::zero(), F::max);
    spread * F::lit(2.0) * (F::lit(2.0) * F::from_count(n).ln()).sqrt() / F::from_count(m)
}

/// Row indices of a greedy `eps`-cover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cover {
    pub centers: Vec<usize>,
}

impl Cover {
    pub fn size(&self) -> usize {
        self.centers.len()
    }
}

/// Farthest-first traversal from row 0: each new centre is the row farthest
/// from the current centres (lowest index on ties), and the traversal stops
/// once every row is within `eps`. Centres are pairwise more than `eps`
/// apart, and the size is nonincreasing in `eps`. The size upper-bounds the
/// covering number.
pub fn greedy_epsilon_cover<F: Scalar>(a: &FunctionValueMatrix<F>, eps: F) -> Result<Cover> {
    ensure!(eps > F::zero(), "cover radius must be positive");
    let traversal = Traversal::new(a.n_rows(), |i, j| a.distance(i, j));
    let size = traversal.size_at(eps);
    Ok(Cover { centers: traversal.order[..size].to_vec() })
}

struct Traversal<F> {
    order: Vec<usize>,
    /// `radii[j]`: largest distance from any row to the first `j + 1` centres.
    radii: Vec<F>,
}

impl<F: Scalar> Traversal<F> {
    fn new(n: usize, dist: impl Fn(usize, usize) -> F) -> Self {
        let mut order = vec![0];
        let mut radii = Vec::new();
        let mut nearest: Vec<F> = (0..n).map(|i| dist(i, 0)).collect();
        loop {
            let (far, r) = nearest
                .iter()
                .enumerate()
                .fold((0, F::zero()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            radii.push(r);
            if r == F::zero() {
                break;
            }
            order.push(far);
            for (i, d) in nearest.iter_mut().enumerate() {
                *d = d.min(dist(i, far));
            }
        }
        Self { order, radii }
    }

    fn size_at(&self, eps: F) -> usize {
        1 + self.radii.iter().position(|&r| r <= eps).unwrap_or(self.radii.len() - 1)
    }
}

fn pairwise_distances<F: Scalar>(a: &FunctionValueMatrix<F>) -> Vec<F> {
    let n = a.n_rows();
    let upper: Vec<Vec<F>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| a.distance(i, j)).collect())
        .collect();
    let mut d = vec![F::zero(); n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Chaining sum `sum_{i=1..J} (alpha_i - alpha_{i+1}) sqrt(ln |T_i|)` with
/// `alpha_i = L 2^-i`, where `L` is the largest normalised row norm and
/// `|T_i|` the size of the farthest-first cover at `alpha_i`.
///
/// This is the entropy integral without the `24 / sqrt(M)` prefactor.
pub fn entropy_integral<F: Scalar>(a: &FunctionValueMatrix<F>, levels: usize) -> Result<F> {
    ensure!(levels >= 1, "chaining needs at least one level");
    let l = a.max_normalized_norm();
    if l == F::zero() || a.n_rows() == 1 {
        return Ok(F::zero());
    }
    let n = a.n_rows();
    let dist = pairwise_distances(a);
    let traversal = Traversal::new(n, |i, j| dist[i * n + j]);
    let half = F::lit(0.5);
    let mut alpha = l * half;
    let mut total = F::zero();
    for _ in 1..=levels {
        let size = traversal.size_at(alpha);
        // alpha_i - alpha_{i+1} = alpha_i / 2
        total = total + alpha * half * F::from_count(size).ln().sqrt();
        alpha = alpha * half;
    }
    Ok(total)
}

/// Chaining upper bound on the Gaussian complexity: `24 / sqrt(M)` times [`entropy_integral`].
pub fn dudley_bound<F: Scalar>(a: &FunctionValueMatrix<F>, levels: usize) -> Result<F> {
    Ok(F::lit(24.0) / F::from_count(a.n_cols()).sqrt() * entropy_integral(a, levels)?)
}

/// Covering-number bound for a VC class, `C0 (v+1) (16e)^(v+1) (b/tau)^(p v)`,
/// held in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcCoveringBound<F> {
    pub log_value: F,
}

impl<F: Scalar> VcCoveringBound<F> {
    /// The bound itself; may overflow to infinity for large `v`.
    pub fn value(&self) -> F {
        self.log_value.exp()
    }
}

pub fn vc_covering_number_bound<F: Scalar>(tau: F, v: F, b: F, p: F, c0: F) -> Result<VcCoveringBound<F>> {
    ensure!(b > F::zero(), "b must be positive");
    ensure!(tau > F::zero() && tau <= b, "tau must lie in (0, b] (got tau={tau}, b={b})");
    ensure!(v >= F::one(), "VC dimension must be at least 1");
    ensure!(p >= F::one(), "p must be at least 1");
    ensure!(c0 > F::zero(), "C0 must be positive");
    let sixteen_e = F::lit(16.0) * F::E();
    let log_value = c0.ln() + (v + F::one()).ln() + (v + F::one()) * sixteen_e.ln() + p * v * (b / tau).ln();
    Ok(VcCoveringBound { log_value })
}

//! Transfer-bound evaluators.
//!
//! Every bound has the shape `empirical + confidence + complexity`, where
//! `confidence = sqrt(ln(1/delta) / 2n)`. Logarithms are natural throughout.
//! Totals are reported raw; a total of 1 or more says nothing about a
//! `[0, 1]`-valued loss and is flagged `vacuous`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Parameters shared by every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar + Deserialize<'de>"))]
pub struct BoundInputs<F> {
    /// Number of classes.
    pub k: usize,
    pub rho: F,
    pub delta: F,
    /// Examples per task.
    pub m: usize,
    /// Number of training tasks.
    pub n: usize,
    /// VC dimension of the scalar projection class.
    pub v: usize,
    /// Uniform score bound.
    pub b: F,
    #[serde(rename = "c0", alias = "C0", default = "default_c0")]
    pub c0: F,
}

fn default_c0<F: Scalar>() -> F {
    F::E()
}

impl<F: Scalar> BoundInputs<F> {
    /// Inputs with the default `C0 = e`.
    pub fn new(k: usize, rho: F, delta: F, m: usize, n: usize, v: usize, b: F) -> Result<Self> {
        let inputs = Self { k, rho, delta, m, n, v, b, c0: F::E() };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn with_c0(mut self, c0: F) -> Result<Self> {
        self.c0 = c0;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 2, "k must be at least 2 (got {})", self.k);
        ensure!(self.rho.is_finite() && self.rho > F::zero(), "rho must be positive");
        ensure!(self.delta > F::zero() && self.delta < F::one(), "delta must lie in (0, 1)");
        ensure!(self.m >= 1 && self.n >= 1, "m and n must be positive");
        ensure!(self.v >= 1, "VC dimension v must be positive");
        ensure!(self.b.is_finite() && self.b > F::zero(), "b must be positive");
        check_c0(self.c0)
    }

    /// `sqrt(ln(1/delta) / (2n))`.
    pub fn confidence_term(&self) -> F {
        ((F::one() / self.delta).ln() / (F::lit(2.0) * F::from_count(self.n))).sqrt()
    }
}

fn check_c0<F: Scalar>(c0: F) -> Result<()> {
    if !(c0.is_finite() && c0 >= F::one()) {
        return Err(Error::InvalidParameter(format!(
            "C0 = {c0} is below 1, so sqrt(ln C0) in C2 is not real; use C0 >= 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Vc,
    Gaussian,
    Covering,
    Surrogate,
    KwaySshot,
}

/// Decomposed right-hand side of a transfer bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport<F> {
    pub empirical_term: F,
    pub confidence_term: F,
    pub complexity_term: F,
    pub total: F,
    pub kind: BoundKind,
    pub vacuous: bool,
}

impl<F: Scalar> BoundReport<F> {
    fn assemble(kind: BoundKind, empirical_term: F, confidence_term: F, complexity_term: F) -> Self {
        let total = empirical_term + confidence_term + complexity_term;
        Self { empirical_term, confidence_term, complexity_term, total, kind, vacuous: total >= F::one() }
    }
}

/// `C1 = 24 sqrt(2 pi) b (1 + sqrt(ln 16e) + 2 sqrt 2)` and
/// `C2 = 24 sqrt(2 pi) b (sqrt(ln C0) + sqrt(ln 16e))`.
pub fn constants_c1_c2<F: Scalar>(b: F, c0: F) -> Result<(F, F)> {
    ensure!(b.is_finite() && b > F::zero(), "b must be positive");
    check_c0(c0)?;
    let two = F::lit(2.0);
    let prefactor = F::lit(24.0) * (two * F::PI()).sqrt() * b;
    let root_log_16e = (F::lit(16.0) * F::E()).ln().sqrt();
    let c1 = prefactor * (F::one() + root_log_16e + two * two.sqrt());
    let c2 = prefactor * (c0.ln().sqrt() + root_log_16e);
    Ok((c1, c2))
}

fn vc_factor<F: Scalar>(v: usize, b: F, c0: F) -> Result<F> {
    let (c1, c2) = constants_c1_c2(b, c0)?;
    Ok(c1 * F::from_count(v).sqrt() + c2)
}

fn check_loss<F: Scalar>(avg: F, upper: Option<F>) -> Result<()> {
    ensure!(avg.is_finite() && avg >= F::zero(), "average empirical loss must be non-negative (got {avg})");
    if let Some(upper) = upper {
        ensure!(avg <= upper, "average empirical loss {avg} exceeds {upper}");
    }
    Ok(())
}

/// `(k/(rho sqrt m) + k/(rho sqrt n)) (C1 sqrt v + C2)`.
pub fn vc_complexity_term<F: Scalar>(inputs: &BoundInputs<F>) -> Result<F> {
    inputs.validate()?;
    let k = F::from_count(inputs.k);
    let per_task = k / (inputs.rho * F::from_count(inputs.m).sqrt());
    let across_tasks = k / (inputs.rho * F::from_count(inputs.n).sqrt());
    Ok((per_task + across_tasks) * vc_factor(inputs.v, inputs.b, inputs.c0)?)
}

/// Bound in terms of the VC dimension of the scalar projection class.
pub fn vc_transfer_bound<F: Scalar>(inputs: &BoundInputs<F>, avg_margin_loss: F) -> Result<BoundReport<F>> {
    check_loss(avg_margin_loss, Some(F::one()))?;
    let complexity = vc_complexity_term(inputs)?;
    Ok(BoundReport::assemble(BoundKind::Vc, avg_margin_loss, inputs.confidence_term(), complexity))
}

/// Bound in terms of the expected Gaussian complexities of the restricted
/// classes over a meta-sample (`gamma_meta`) and over one task sample (`gamma_task`).
pub fn gaussian_transfer_bound<F: Scalar>(
    inputs: &BoundInputs<F>,
    avg_margin_loss: F,
    gamma_meta: F,
    gamma_task: F,
) -> Result<BoundReport<F>> {
    inputs.validate()?;
    check_loss(avg_margin_loss, Some(F::one()))?;
    ensure!(gamma_meta >= F::zero() && gamma_task >= F::zero(), "Gaussian complexities must be non-negative");
    let k = F::from_count(inputs.k);
    let two_pi = F::lit(2.0) * F::PI();
    let meta_coef = k * (two_pi * F::from_count(inputs.m)).sqrt() / inputs.rho;
    let task_coef = k * two_pi.sqrt() / inputs.rho;
    let complexity = meta_coef * gamma_meta + task_coef * gamma_task;
    Ok(BoundReport::assemble(BoundKind::Gaussian, avg_margin_loss, inputs.confidence_term(), complexity))
}

/// Bound in terms of the raw entropy integrals `int_0^L sqrt(ln N(tau)) dtau`
/// of the restricted classes over a meta-sample and over one task sample.
pub fn covering_transfer_bound<F: Scalar>(
    inputs: &BoundInputs<F>,
    avg_margin_loss: F,
    integral_meta: F,
    integral_task: F,
) -> Result<BoundReport<F>> {
    inputs.validate()?;
    check_loss(avg_margin_loss, Some(F::one()))?;
    ensure!(integral_meta >= F::zero() && integral_task >= F::zero(), "entropy integrals must be non-negative");
    let base = F::lit(24.0) * F::from_count(inputs.k) * (F::lit(2.0) * F::PI()).sqrt() / inputs.rho;
    let complexity = base / F::from_count(inputs.n).sqrt() * integral_meta
        + base / F::from_count(inputs.m).sqrt() * integral_task;
    Ok(BoundReport::assemble(BoundKind::Covering, avg_margin_loss, inputs.confidence_term(), complexity))
}

/// VC bound with the empirical term replaced by `(k - 1)` times the average
/// multi-margin loss.
pub fn surrogate_multimargin_bound<F: Scalar>(inputs: &BoundInputs<F>, avg_multimargin_loss: F) -> Result<BoundReport<F>> {
    check_loss(avg_multimargin_loss, None)?;
    let complexity = vc_complexity_term(inputs)?;
    let empirical = F::from_count(inputs.k - 1) * avg_multimargin_loss;
    Ok(BoundReport::assemble(BoundKind::Surrogate, empirical, inputs.confidence_term(), complexity))
}

/// `(sqrt(k)/(rho sqrt(s+q)) + k/(rho sqrt n)) (C1 sqrt v + C2)`, the VC
/// complexity term for k-way s-shot q-query episodes (`m = k(s+q)`).
#[allow(clippy::too_many_arguments)]
pub fn kway_sshot_complexity_term<F: Scalar>(k: usize, s: usize, q: usize, n: F, rho: F, v: usize, b: F, c0: F) -> Result<F> {
    ensure!(k >= 2, "k must be at least 2");
    ensure!(s >= 1 && q >= 1, "s and q must be positive");
    ensure!(n >= F::one(), "n must be at least 1");
    ensure!(rho > F::zero(), "rho must be positive");
    ensure!(v >= 1, "VC dimension must be positive");
    let kf = F::from_count(k);
    let per_task = kf.sqrt() / (rho * F::from_count(s + q).sqrt());
    let across_tasks = kf / (rho * n.sqrt());
    Ok((per_task + across_tasks) * vc_factor(v, b, c0)?)
}

/// VC bound for k-way s-shot q-query episodes; `inputs.m` must equal `k(s+q)`.
pub fn kway_sshot_bound<F: Scalar>(inputs: &BoundInputs<F>, avg_margin_loss: F, s: usize, q: usize) -> Result<BoundReport<F>> {
    inputs.validate()?;
    check_loss(avg_margin_loss, Some(F::one()))?;
    ensure!(
        inputs.m == inputs.k * (s + q),
        "m = {} does not match k(s+q) = {}",
        inputs.m,
        inputs.k * (s + q)
    );
    let complexity = kway_sshot_complexity_term(
        inputs.k,
        s,
        q,
        F::from_count(inputs.n),
        inputs.rho,
        inputs.v,
        inputs.b,
        inputs.c0,
    )?;
    Ok(BoundReport::assemble(BoundKind::KwaySshot, avg_margin_loss, inputs.confidence_term(), complexity))
}

/// Smallest per-task sample size with `a k (sqrt(v/m) + sqrt(v/n)) <= epsilon`:
/// `ceil(a^2 k^2 v / (epsilon - a k sqrt(v/n))^2)`. `n` may be infinite.
pub fn sample_efficiency_min_m(epsilon: f64, k: usize, v: usize, n: f64, a: f64) -> Result<u64> {
    ensure!(epsilon > 0.0 && a > 0.0, "epsilon and a must be positive");
    ensure!(k >= 1 && v >= 1, "k and v must be positive");
    ensure!(n > 0.0, "n must be positive");
    let (k, v) = (k as f64, v as f64);
    let task_part = a * k * (v / n).sqrt();
    if epsilon <= task_part {
        return Err(Error::Infeasible(format!(
            "epsilon = {epsilon} <= a k sqrt(v/n) = {task_part}: no per-task sample size suffices for n = {n}"
        )));
    }
    let exact = a * a * k * k * v / (epsilon - task_part).powi(2);
    // absorb round-off so that exact integers are not pushed to the next one
    let rounded = (exact * (1.0 - 4.0 * f64::EPSILON)).ceil();
    Ok(rounded as u64)
}

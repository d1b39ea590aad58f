//! Feature maps, base-learners and meta-level empirical risk minimisation.
//!
//! A base-learner maps one episode to a scoring function while the feature map
//! stays frozen. The meta-learner picks the feature map from a finite family
//! that minimises the average empirical loss over the training episodes.

use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{ensure, Error, Result};
use crate::losses::{average_empirical_loss, multi_margin_of_scores, LossKind, ScoringFunction};
use crate::sampling::{Episode, LabeledExample, MetaSample};
use crate::scalar::{argmax, dot, euclidean, Scalar};
use crate::seed::{derive_seed, rng_from_seed, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Identity,
    RandomLinear,
    RandomRelu,
}

/// A frozen embedding `R^d_raw -> R^d` whose outputs are rescaled onto the
/// ball of radius `norm_cap` when they fall outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap<F> {
    id: usize,
    kind: FeatureKind,
    d_raw: usize,
    d: usize,
    /// Row-major `d x d_raw`; empty for the identity.
    weights: Vec<F>,
    norm_cap: F,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn identity(id: usize, d_raw: usize, norm_cap: F) -> Result<Self> {
        ensure!(d_raw >= 1, "feature dimension must be positive");
        ensure!(norm_cap > F::zero(), "norm cap must be positive");
        Ok(Self { id, kind: FeatureKind::Identity, d_raw, d: d_raw, weights: Vec::new(), norm_cap })
    }

    /// Random Gaussian projection with entries scaled by `1/sqrt(d_raw)`,
    /// optionally followed by a componentwise ReLU.
    pub fn random(id: usize, d_raw: usize, d: usize, relu: bool, norm_cap: F, seed: u64) -> Result<Self> {
        ensure!(d_raw >= 1 && d >= 1, "feature dimensions must be positive");
        ensure!(norm_cap > F::zero(), "norm cap must be positive");
        let mut rng = rng_from_seed(seed);
        let scale = 1.0 / (d_raw as f64).sqrt();
        let weights = (0..d * d_raw)
            .map(|_| F::lit(scale * standard_normal(&mut rng)))
            .collect();
        let kind = if relu { FeatureKind::RandomRelu } else { FeatureKind::RandomLinear };
        Ok(Self { id, kind, d_raw, d, weights, norm_cap })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.d_raw
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.d_raw);
        let mut out: Vec<F> = match self.kind {
            FeatureKind::Identity => x.to_vec(),
            FeatureKind::RandomLinear => self.weights.chunks(self.d_raw).map(|row| dot(row, x)).collect(),
            FeatureKind::RandomRelu => self
                .weights
                .chunks(self.d_raw)
                .map(|row| dot(row, x).max(F::zero()))
                .collect(),
        };
        let norm = out.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm > self.norm_cap {
            let shrink = self.norm_cap / norm;
            out.iter_mut().for_each(|v| *v = *v * shrink);
        }
        out
    }
}

/// Finite family of candidate feature maps with distinct ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFamily<F> {
    maps: Vec<Arc<FeatureMap<F>>>,
}

impl<F: Scalar> FeatureFamily<F> {
    pub fn new(maps: Vec<FeatureMap<F>>) -> Result<Self> {
        ensure!(!maps.is_empty(), "a feature family needs at least one map");
        let mut ids: Vec<usize> = maps.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ensure!(ids.len() == maps.len(), "feature map ids must be distinct");
        Ok(Self { maps: maps.into_iter().map(Arc::new).collect() })
    }

    pub fn maps(&self) -> &[Arc<FeatureMap<F>>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Builds `count` maps of one kind; map `i` gets id `i` and seed `derive_seed(seed, i)`.
pub fn make_feature_family<F: Scalar>(
    d_raw: usize,
    d: usize,
    count: usize,
    kind: FeatureKind,
    norm_cap: F,
    seed: u64,
) -> Result<FeatureFamily<F>> {
    ensure!(count >= 1, "a feature family needs at least one map");
    let maps = (0..count)
        .map(|i| match kind {
            FeatureKind::Identity => {
                ensure!(d == d_raw, "identity feature maps need d == d_raw (got d={d}, d_raw={d_raw})");
                FeatureMap::identity(i, d_raw, norm_cap)
            }
            FeatureKind::RandomLinear => FeatureMap::random(i, d_raw, d, false, norm_cap, derive_seed(seed, i as u64)),
            FeatureKind::RandomRelu => FeatureMap::random(i, d_raw, d, true, norm_cap, derive_seed(seed, i as u64)),
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureFamily::new(maps)
}

/// Maps one episode to a scoring function, with the feature map held fixed.
pub trait BaseLearner<F: Scalar>: Sync {
    type Scorer: ScoringFunction<F> + Send + Sync;

    fn learn(&self, episode: &Episode<F>, phi: &Arc<FeatureMap<F>>) -> Result<Self::Scorer>;
}

/// Nearest-centroid scores `clamp(-|phi(x) - c_y| / scale, -b, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidScorer<F> {
    centroids: Vec<Vec<F>>,
    scale: F,
    b: F,
    map: Arc<FeatureMap<F>>,
}

impl<F: Scalar> CentroidScorer<F> {
    pub fn centroids(&self) -> &[Vec<F>] {
        &self.centroids
    }

    /// Distance normaliser: median pairwise centroid distance, or 1 when degenerate.
    pub fn scale(&self) -> F {
        self.scale
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap<F>> {
        &self.map
    }

    fn distances(&self, x: &[F]) -> Vec<F> {
        let z = self.map.apply(x);
        self.centroids.iter().map(|c| euclidean(&z, c)).collect()
    }
}

impl<F: Scalar> ScoringFunction<F> for CentroidScorer<F> {
    fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    fn bound(&self) -> F {
        self.b
    }

    fn scores(&self, x: &[F]) -> Vec<F> {
        self.distances(x)
            .into_iter()
            .map(|d| (-d / self.scale).max(-self.b).min(self.b))
            .collect()
    }

    /// Closest centroid, ignoring the clamp.
    fn predict(&self, x: &[F]) -> usize {
        let neg: Vec<F> = self.distances(x).into_iter().map(|d| -d).collect();
        argmax(&neg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestCentroid<F> {
    pub b: F,
}

impl<F: Scalar> BaseLearner<F> for NearestCentroid<F> {
    type Scorer = CentroidScorer<F>;

    fn learn(&self, episode: &Episode<F>, phi: &Arc<FeatureMap<F>>) -> Result<CentroidScorer<F>> {
        nearest_centroid_learn(episode, phi, self.b)
    }
}

/// Class centroids in feature space over the support set (the whole episode when unsplit).
pub fn nearest_centroid_learn<F: Scalar>(
    episode: &Episode<F>,
    phi: &Arc<FeatureMap<F>>,
    b: F,
) -> Result<CentroidScorer<F>> {
    ensure!(b > F::zero(), "score bound b must be positive");
    let k = episode.num_classes();
    let d = phi.dim();
    let mut sums = vec![vec![F::zero(); d]; k];
    let mut counts = vec![0usize; k];
    for ex in episode.support() {
        for (s, v) in sums[ex.y].iter_mut().zip(phi.apply(&ex.x)) {
            *s = *s + v;
        }
        counts[ex.y] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class });
    }
    let centroids: Vec<Vec<F>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / F::from_count(c)).collect())
        .collect();

    let mut pairwise = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            pairwise.push(euclidean(&centroids[i], &centroids[j]));
        }
    }
    let scale = median(&mut pairwise)
        .filter(|s| s.is_finite() && *s > F::zero())
        .unwrap_or_else(F::one);

    Ok(CentroidScorer { centroids, scale, b, map: Arc::clone(phi) })
}

fn median<F: Scalar>(values: &mut [F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / F::lit(2.0)
    })
}

/// Linear class scores `clamp(W phi(x), -b, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer<F> {
    weights: Vec<F>,
    k: usize,
    b: F,
    map: Arc<FeatureMap<F>>,
    training_loss: Vec<F>,
}

impl<F: Scalar> LinearScorer<F> {
    /// Row-major `k x d` weight matrix.
    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    /// Training objective recorded after every step.
    pub fn training_loss(&self) -> &[F] {
        &self.training_loss
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap<F>> {
        &self.map
    }

    fn raw_scores(&self, x: &[F]) -> Vec<F> {
        let z = self.map.apply(x);
        raw_linear_scores(&self.weights, &z)
    }
}

fn raw_linear_scores<F: Scalar>(weights: &[F], z: &[F]) -> Vec<F> {
    weights.chunks(z.len()).map(|row| dot(row, z)).collect()
}

impl<F: Scalar> ScoringFunction<F> for LinearScorer<F> {
    fn num_classes(&self) -> usize {
        self.k
    }

    fn bound(&self) -> F {
        self.b
    }

    fn scores(&self, x: &[F]) -> Vec<F> {
        self.raw_scores(x).into_iter().map(|s| s.max(-self.b).min(self.b)).collect()
    }

    /// Argmax of the unclamped scores.
    fn predict(&self, x: &[F]) -> usize {
        argmax(&self.raw_scores(x))
    }
}

impl<F: Scalar + Serialize> Serialize for LinearScorer<F> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.map.dim();
        let rows: Vec<&[F]> = self.weights.chunks(d).collect();
        let mut st = serializer.serialize_struct("LinearScorer", 4)?;
        st.serialize_field("weights", &rows)?;
        st.serialize_field("b", &self.b)?;
        st.serialize_field("feature_map_id", &self.map.id())?;
        st.serialize_field("training_loss", &self.training_loss)?;
        st.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MultiMargin,
    CrossEntropy,
}

/// Linear scorer trained by subgradient descent on `loss + lambda |W|^2`
/// from `W = 0`, with step size `step_size / sqrt(t)` at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLearner<F> {
    pub objective: Objective,
    pub rho: F,
    pub lambda: F,
    pub steps: usize,
    pub step_size: F,
    pub b: F,
    /// Minibatch size; `None` uses the full support set every step.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl<F: Scalar> LinearLearner<F> {
    pub fn multi_margin(rho: F, lambda: F, steps: usize, step_size: F, b: F, seed: u64) -> Self {
        Self { objective: Objective::MultiMargin, rho, lambda, steps, step_size, b, batch_size: None, seed }
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, "training needs at least one step");
        ensure!(self.rho > F::zero(), "margin rho must be positive");
        ensure!(self.lambda >= F::zero(), "lambda must be non-negative");
        ensure!(self.step_size >= F::zero(), "step size must be non-negative");
        ensure!(self.b > F::zero(), "score bound b must be positive");
        ensure!(self.batch_size.is_none_or(|s| s >= 1), "batch size must be positive");
        Ok(())
    }

    /// Loss and its gradient with respect to the raw score vector.
    fn loss_and_grad(&self, scores: &[F], y: usize, grad: &mut [F]) -> F {
        let k = scores.len();
        match self.objective {
            Objective::MultiMargin => {
                let coef = F::one() / (self.rho * F::from_count(k - 1));
                let mut loss = F::zero();
                for c in (0..k).filter(|&c| c != y) {
                    let hinge = F::one() - (scores[y] - scores[c]) / self.rho;
                    if hinge > F::zero() {
                        loss = loss + hinge;
                        grad[y] = grad[y] - coef;
                        grad[c] = grad[c] + coef;
                    }
                }
                loss / F::from_count(k - 1)
            }
            Objective::CrossEntropy => {
                let top = scores.iter().copied().fold(F::neg_infinity(), F::max);
                let exps: Vec<F> = scores.iter().map(|&s| (s - top).exp()).collect();
                let total: F = exps.iter().copied().sum();
                for c in 0..k {
                    grad[c] = grad[c] + exps[c] / total;
                }
                grad[y] = grad[y] - F::one();
                total.ln() + top - scores[y]
            }
        }
    }

    fn objective_value(&self, weights: &[F], features: &[Vec<F>], labels: &[usize]) -> F {
        let mut scratch = vec![F::zero(); labels.len().max(1)];
        let mut total = F::zero();
        for (z, &y) in features.iter().zip(labels) {
            let scores = raw_linear_scores(weights, z);
            scratch.resize(scores.len(), F::zero());
            total = total + self.loss_and_grad(&scores, y, &mut scratch);
        }
        let reg = weights.iter().map(|&w| w * w).sum::<F>();
        total / F::from_count(labels.len()) + self.lambda * reg
    }

    pub fn train(&self, episode: &Episode<F>, phi: &Arc<FeatureMap<F>>) -> Result<LinearScorer<F>> {
        self.validate()?;
        let k = episode.num_classes();
        ensure!(k >= 2, "linear training needs at least two classes");
        let support: &[LabeledExample<F>] = episode.support();
        let features: Vec<Vec<F>> = support.iter().map(|ex| phi.apply(&ex.x)).collect();
        let labels: Vec<usize> = support.iter().map(|ex| ex.y).collect();
        let d = phi.dim();
        let count = support.len();

        let mut weights = vec![F::zero(); k * d];
        let mut grad_w = vec![F::zero(); k * d];
        let mut grad_s = vec![F::zero(); k];
        let mut history = Vec::with_capacity(self.steps);
        let mut rng = rng_from_seed(self.seed);
        let two = F::lit(2.0);

        for t in 1..=self.steps {
            grad_w.iter_mut().for_each(|g| *g = F::zero());
            let batch: Vec<usize> = match self.batch_size {
                Some(size) if size < count => sample_indices(&mut rng, count, size).into_vec(),
                _ => (0..count).collect(),
            };
            let inv = F::one() / F::from_count(batch.len());
            for &i in &batch {
                let z = &features[i];
                let scores = raw_linear_scores(&weights, z);
                grad_s.iter_mut().for_each(|g| *g = F::zero());
                self.loss_and_grad(&scores, labels[i], &mut grad_s);
                for (c, &gs) in grad_s.iter().enumerate() {
                    if gs != F::zero() {
                        for (gw, &zj) in grad_w[c * d..(c + 1) * d].iter_mut().zip(z) {
                            *gw = *gw + gs * zj * inv;
                        }
                    }
                }
            }
            let eta = self.step_size / F::from_count(t).sqrt();
            for (w, &g) in weights.iter_mut().zip(&grad_w) {
                *w = *w - eta * (g + two * self.lambda * *w);
            }
            let value = self.objective_value(&weights, &features, &labels);
            if !value.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NumericFailure(format!("training objective became non-finite at step {t}")));
            }
            history.push(value);
        }
        Ok(LinearScorer { weights, k, b: self.b, map: Arc::clone(phi), training_loss: history })
    }
}

impl<F: Scalar> BaseLearner<F> for LinearLearner<F> {
    type Scorer = LinearScorer<F>;

    fn learn(&self, episode: &Episode<F>, phi: &Arc<FeatureMap<F>>) -> Result<LinearScorer<F>> {
        self.train(episode, phi)
    }
}

/// Multi-margin linear learner with full-batch subgradient descent.
#[allow(clippy::too_many_arguments)]
pub fn linear_multimargin_learn<F: Scalar>(
    episode: &Episode<F>,
    phi: &Arc<FeatureMap<F>>,
    rho: F,
    lambda: F,
    steps: usize,
    step_size: F,
    b: F,
    seed: u64,
) -> Result<LinearScorer<F>> {
    LinearLearner::multi_margin(rho, lambda, steps, step_size, b, seed).train(episode, phi)
}

/// Either base-learner behind one type, for configuration-driven code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learner<F> {
    NearestCentroid(NearestCentroid<F>),
    Linear(LinearLearner<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scorer<F> {
    Centroid(CentroidScorer<F>),
    Linear(LinearScorer<F>),
}

impl<F: Scalar> ScoringFunction<F> for Scorer<F> {
    fn num_classes(&self) -> usize {
        match self {
            Scorer::Centroid(s) => s.num_classes(),
            Scorer::Linear(s) => s.num_classes(),
        }
    }
    fn bound(&self) -> F {
        match self {
            Scorer::Centroid(s) => s.bound(),
            Scorer::Linear(s) => s.bound(),
        }
    }
    fn scores(&self, x: &[F]) -> Vec<F> {
        match self {
            Scorer::Centroid(s) => s.scores(x),
            Scorer::Linear(s) => s.scores(x),
        }
    }
    fn predict(&self, x: &[F]) -> usize {
        match self {
            Scorer::Centroid(s) => s.predict(x),
            Scorer::Linear(s) => s.predict(x),
        }
    }
}

impl<F: Scalar> BaseLearner<F> for Learner<F> {
    type Scorer = Scorer<F>;

    fn learn(&self, episode: &Episode<F>, phi: &Arc<FeatureMap<F>>) -> Result<Scorer<F>> {
        match self {
            Learner::NearestCentroid(l) => l.learn(episode, phi).map(Scorer::Centroid),
            Learner::Linear(l) => l.learn(episode, phi).map(Scorer::Linear),
        }
    }
}

/// Outcome of meta-level ERM over a feature family.
#[derive(Debug, Clone)]
pub struct MetaErmSelection<F> {
    /// Position of the chosen map in the family.
    pub index: usize,
    pub map: Arc<FeatureMap<F>>,
    /// Average empirical loss of every map, in family order.
    pub losses: Vec<F>,
}

impl<F: Scalar> MetaErmSelection<F> {
    pub fn chosen_loss(&self) -> F {
        self.losses[self.index]
    }
}

/// Picks the map with the smallest average empirical loss; ties go to the smallest id.
pub fn meta_erm_select<F: Scalar, L: BaseLearner<F>>(
    meta: &MetaSample<F>,
    family: &FeatureFamily<F>,
    learner: &L,
    rho: F,
    kind: LossKind,
) -> Result<MetaErmSelection<F>> {
    let losses = family
        .maps()
        .iter()
        .map(|phi| average_empirical_loss(meta, |ep| learner.learn(ep, phi), rho, kind))
        .collect::<Result<Vec<F>>>()?;
    let mut index = 0;
    for i in 1..losses.len() {
        let better = losses[i] < losses[index]
            || (losses[i] == losses[index] && family.maps()[i].id() < family.maps()[index].id());
        if better {
            index = i;
        }
    }
    Ok(MetaErmSelection { index, map: Arc::clone(&family.maps()[index]), losses })
}

/// Share of query examples whose predicted class matches the label.
pub fn query_accuracy<F: Scalar, S: ScoringFunction<F> + ?Sized>(scorer: &S, episode: &Episode<F>) -> f64 {
    let query = episode.query();
    let hits = query.iter().filter(|ex| scorer.predict(&ex.x) == ex.y).count();
    hits as f64 / query.len() as f64
}

/// Empirical multi-margin loss on clamped scores, for reporting.
pub fn support_multi_margin<F: Scalar, S: ScoringFunction<F> + ?Sized>(scorer: &S, episode: &Episode<F>, rho: F) -> Result<F> {
    let mut total = F::zero();
    for ex in episode.examples() {
        total = total + multi_margin_of_scores(&scorer.scores(&ex.x), ex.y, rho)?;
    }
    Ok(total / F::from_count(episode.len()))
}

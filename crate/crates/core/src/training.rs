//! Per-node training, aggregation and the multi-round distributed SGD
//! protocol.

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bregman::{loss_gradient, Generator, LossForm};
use crate::error::{Error, Result};
use crate::problems::{Dataset, NodeData};
use crate::rng::{role, SeedPath};

/// Clip-then-Laplace local privacy mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyMech {
    pub epsilon: f64,
    /// Radius of the L2 ball weights are clipped to before noising.
    pub clip_radius: f64,
}

impl PrivacyMech {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.clip_radius > 0.0 && self.clip_radius.is_finite()) {
            return Err(Error::config(format!("clip_radius must be > 0, got {}", self.clip_radius)));
        }
        Ok(())
    }

    /// Per-coordinate Laplace scale `2 d r / ε`, which bounds the L1 diameter
    /// of the clipped ball.
    pub fn laplace_scale(&self, d: usize) -> f64 {
        2.0 * d as f64 * self.clip_radius / self.epsilon
    }
}

/// Uniform scalar quantizer with `2^bits` cells per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantizer {
    pub bits: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Quantizer {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 52 {
            return Err(Error::config(format!("bits must be in 1..=52, got {}", self.bits)));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::config(format!("invalid clip range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Bits needed to describe a whole `d`-dimensional model.
    pub fn total_bits(&self, d: usize) -> u64 {
        self.bits as u64 * d as u64
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let cells = self.levels();
        let width = (self.hi - self.lo) / cells as f64;
        (0..cells).map(|j| self.lo + (j as f64 + 0.5) * width).collect()
    }

    fn quantize_scalar(&self, v: f64) -> f64 {
        let cells = self.levels();
        let width = (self.hi - self.lo) / cells as f64;
        let v = v.clamp(self.lo, self.hi);
        // cell boundaries belong to the lower cell
        let idx = (((v - self.lo) / width).ceil() as i64 - 1).clamp(0, cells as i64 - 1);
        self.lo + (idx as f64 + 0.5) * width
    }
}

/// Local learning algorithm `A_k` run by every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeAlgorithm {
    /// `(1/n) Σ z_i` on location data.
    SampleMean,
    /// Least squares via the normal equations on labeled data.
    NormalEquations,
    /// Exact ERM followed by the clipped Laplace mechanism.
    Noisy(PrivacyMech),
    /// Exact ERM followed by per-coordinate quantization.
    Quantized(Quantizer),
    /// Sample mean projected onto the L2 ball of the given radius.
    ClippedMean { radius: f64 },
}

impl NodeAlgorithm {
    pub fn validate(&self) -> Result<()> {
        match self {
            NodeAlgorithm::Noisy(m) => m.validate(),
            NodeAlgorithm::Quantized(q) => q.validate(),
            NodeAlgorithm::ClippedMean { radius } if !(*radius > 0.0) => {
                Err(Error::config("clipped-mean radius must be > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the algorithm is an exact empirical risk minimizer for the
    /// squared loss of the node's data variant.
    pub fn is_exact_erm(&self) -> bool {
        matches!(self, NodeAlgorithm::SampleMean | NodeAlgorithm::NormalEquations)
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, NodeAlgorithm::Noisy(_))
    }
}

fn sample_mean(node: &NodeData) -> Result<Vec<f64>> {
    if node.is_labeled() {
        return Err(Error::arg("sample mean needs location data"));
    }
    if node.is_empty() {
        return Err(Error::arg("empty node dataset"));
    }
    let d = node.dim();
    let mut acc = vec![0.0; d];
    for row in node.values().chunks_exact(d) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = node.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// `argmin_w Σ (<x_i, w> - y_i)²` by solving `XᵀX w = Xᵀy`.
pub fn normal_equations(node: &NodeData) -> Result<Vec<f64>> {
    let labels = node
        .labels()
        .ok_or_else(|| Error::arg("normal equations need labeled data"))?;
    if node.is_empty() {
        return Err(Error::arg("empty node dataset"));
    }
    let d = node.dim();
    if d == 1 {
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (x, y) in node.values().iter().zip(labels) {
            sxx += x * x;
            sxy += x * y;
        }
        if !(sxx > 0.0) {
            return Err(Error::Degenerate("Gram matrix is singular (all features zero)".into()));
        }
        return Ok(vec![sxy / sxx]);
    }
    let x = DMatrix::from_row_slice(node.len(), d, node.values());
    let y = DVector::from_column_slice(labels);
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate(format!("Gram matrix is singular for n={}, d={d}", node.len())))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn exact_erm(node: &NodeData) -> Result<Vec<f64>> {
    if node.is_labeled() {
        normal_equations(node)
    } else {
        sample_mean(node)
    }
}

fn project_to_ball(w: &mut [f64], radius: f64) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

/// Runs `A_k` on one node's data. Randomized algorithms draw from `seed`.
pub fn train_node(algorithm: &NodeAlgorithm, node: &NodeData, seed: &SeedPath) -> Result<Vec<f64>> {
    match algorithm {
        NodeAlgorithm::SampleMean => sample_mean(node),
        NodeAlgorithm::NormalEquations => normal_equations(node),
        NodeAlgorithm::Noisy(mech) => apply_privacy_mechanism(&exact_erm(node)?, mech, seed),
        NodeAlgorithm::Quantized(q) => quantize_model(&exact_erm(node)?, q),
        NodeAlgorithm::ClippedMean { radius } => {
            let mut w = sample_mean(node)?;
            project_to_ball(&mut w, *radius);
            Ok(w)
        }
    }
}

/// Combines node models into the global model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Average,
    /// Plain sum. Only useful as an injected fault for self-checks.
    Sum,
}

impl Aggregation {
    pub fn apply(self, per_node: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut acc = sum_models(per_node)?;
        if self == Aggregation::Average {
            let k = per_node.len() as f64;
            acc.iter_mut().for_each(|v| *v /= k);
        }
        Ok(acc)
    }
}

fn sum_models(per_node: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_node.first().ok_or_else(|| Error::arg("no node models to aggregate"))?;
    let mut acc = vec![0.0; first.len()];
    for w in per_node {
        if w.len() != acc.len() {
            return Err(Error::arg("node models have different dimensions"));
        }
        for (a, v) in acc.iter_mut().zip(w) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Simple averaging `Ŵ = (1/K) Σ W_k`, summed in node order.
pub fn aggregate(per_node: &[Vec<f64>]) -> Result<Vec<f64>> {
    Aggregation::Average.apply(per_node)
}

/// Clips `w` to the ball of radius `clip_radius` and adds i.i.d. Laplace noise.
pub fn apply_privacy_mechanism(w: &[f64], mech: &PrivacyMech, seed: &SeedPath) -> Result<Vec<f64>> {
    mech.validate()?;
    let scale = mech.laplace_scale(w.len());
    let mut out = w.to_vec();
    project_to_ball(&mut out, mech.clip_radius);
    let mut rng = seed.child(role::NOISE).rng();
    for v in out.iter_mut() {
        *v += sample_laplace(&mut rng, scale);
    }
    Ok(out)
}

pub(crate) fn sample_laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Snaps each coordinate of `w` to the nearest cell midpoint of `q`.
pub fn quantize_model(w: &[f64], q: &Quantizer) -> Result<Vec<f64>> {
    q.validate()?;
    Ok(w.iter().map(|&v| q.quantize_scalar(v)).collect())
}

/// Learning-rate schedule `η_t`, `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningRate {
    Constant(f64),
    Schedule(Vec<f64>),
    /// `η_t = eta0 / (1 + decay (t - 1))`.
    InverseDecay { eta0: f64, decay: f64 },
}

impl LearningRate {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            LearningRate::Constant(eta) => *eta,
            LearningRate::Schedule(v) => v[t - 1],
            LearningRate::InverseDecay { eta0, decay } => eta0 / (1.0 + decay * (t - 1) as f64),
        }
    }
}

/// How `Ŵ_t` is formed from the global iterates `W^1..W^t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combiner {
    #[default]
    Last,
    UniformAverage,
    /// Weighted average with nonnegative per-round weights, normalized over
    /// the prefix `1..t`.
    Weighted(Vec<f64>),
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub rounds: usize,
    pub eta: LearningRate,
    #[serde(default)]
    pub xi_sigma2: f64,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub combiner: Combiner,
    /// Starting point `W⁰`; the origin when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    /// Gradient steps per round on the round's minibatch.
    #[serde(default = "one")]
    pub local_steps: usize,
}

impl SgdConfig {
    pub fn new(rounds: usize, eta: LearningRate) -> Self {
        SgdConfig {
            rounds,
            eta,
            xi_sigma2: 0.0,
            batch: 1,
            combiner: Combiner::Last,
            init: None,
            local_steps: 1,
        }
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.rounds == 0 || self.batch == 0 || self.local_steps == 0 {
            return Err(Error::config("rounds, batch and local_steps must be >= 1"));
        }
        if self.rounds * self.batch > n {
            return Err(Error::config(format!(
                "T·batch = {} exceeds n = {n}; sampling without replacement is infeasible",
                self.rounds * self.batch
            )));
        }
        if !(self.xi_sigma2 >= 0.0 && self.xi_sigma2.is_finite()) {
            return Err(Error::config("xi_sigma2 must be finite and >= 0"));
        }
        match &self.eta {
            LearningRate::Schedule(v) if v.len() < self.rounds => {
                return Err(Error::config("learning-rate schedule shorter than T"))
            }
            LearningRate::Constant(e) if !e.is_finite() => return Err(Error::config("eta must be finite")),
            _ => {}
        }
        if let Combiner::Weighted(a) = &self.combiner {
            if a.len() != self.rounds {
                return Err(Error::config("weighted combiner needs one coefficient per round"));
            }
            if a.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !(a[0] > 0.0) {
                return Err(Error::config("combiner weights must be >= 0 with a positive first weight"));
            }
        }
        if let Some(init) = &self.init {
            if init.len() != d {
                return Err(Error::config("init has the wrong dimension"));
            }
        }
        Ok(())
    }
}

/// Full record of an SGD run, indexed by round `t = 1..T` at position `t-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdTrajectory {
    /// `W_k^t`, as `[t][k]`.
    pub node_iterates: Vec<Vec<Vec<f64>>>,
    /// `W^t`.
    pub global: Vec<Vec<f64>>,
    /// `Ŵ_t`.
    pub combined: Vec<Vec<f64>>,
    /// Sample indices of `Z_{t,k}`, as `[t][k]`.
    pub consumed: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub per_node: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub trajectory: Option<SgdTrajectory>,
}

/// Trains every node (node `k` on stream `seed/k`) and aggregates.
pub fn train_all(
    algorithm: &NodeAlgorithm,
    data: &Dataset,
    aggregation: Aggregation,
    seed: &SeedPath,
) -> Result<TrainedModels> {
    let per_node = data
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, node)| train_node(algorithm, node, &seed.child(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregation.apply(&per_node)?;
    Ok(TrainedModels {
        per_node,
        aggregate,
        trajectory: None,
    })
}

/// Multi-round distributed SGD: each round every node takes gradient steps
/// from `W^{t-1}` on a fresh without-replacement minibatch, adds
/// `N(0, xi_sigma2 I)` noise, and the server averages.
///
/// The returned `per_node`/`aggregate` are `W_k^T` and `W^T`; `Ŵ_t` is in the
/// trajectory.
pub fn run_distributed_sgd(
    data: &Dataset,
    form: LossForm,
    generator: &Generator,
    cfg: &SgdConfig,
    seed: &SeedPath,
) -> Result<TrainedModels> {
    let (n, d, nodes) = (data.n(), data.dim(), data.num_nodes());
    cfg.validate(n, d)?;
    let orders: Vec<Vec<usize>> = (0..nodes)
        .map(|k| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seed.child2(role::ORDER, k as u64).rng());
            idx
        })
        .collect();
    let mut noise_rngs: Vec<_> = (0..nodes)
        .map(|k| seed.child2(role::NOISE, k as u64).rng())
        .collect();
    let xi_sd = cfg.xi_sigma2.sqrt();

    let mut prev = cfg.init.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut traj = SgdTrajectory {
        node_iterates: Vec::with_capacity(cfg.rounds),
        global: Vec::with_capacity(cfg.rounds),
        combined: Vec::with_capacity(cfg.rounds),
        consumed: Vec::with_capacity(cfg.rounds),
    };
    let mut weighted_sum = vec![0.0; d];
    let mut weight_total = 0.0;

    for t in 1..=cfg.rounds {
        let eta = cfg.eta.at(t);
        let mut round_nodes = Vec::with_capacity(nodes);
        let mut round_batches = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let batch = orders[k][(t - 1) * cfg.batch..t * cfg.batch].to_vec();
            let node = data.node(k);
            let mut w = prev.clone();
            for _ in 0..cfg.local_steps {
                let mut grad = vec![0.0; d];
                for &i in &batch {
                    let g = loss_gradient(form, generator, &w, node.point(i))?;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                let scale = eta / batch.len() as f64;
                w.iter_mut().zip(&grad).for_each(|(v, g)| *v -= scale * g);
            }
            if xi_sd > 0.0 {
                for v in w.iter_mut() {
                    *v += xi_sd * noise_rngs[k].sample::<f64, _>(StandardNormal);
                }
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    round: t,
                    detail: format!("node {k} iterate became non-finite (eta_t = {eta})"),
                });
            }
            round_nodes.push(w);
            round_batches.push(batch);
        }
        let global = aggregate(&round_nodes)?;
        let combined = match &cfg.combiner {
            Combiner::Last => global.clone(),
            Combiner::UniformAverage | Combiner::Weighted(_) => {
                let a = match &cfg.combiner {
                    Combiner::Weighted(a) => a[t - 1],
                    _ => 1.0,
                };
                weighted_sum.iter_mut().zip(&global).for_each(|(s, g)| *s += a * g);
                weight_total += a;
                weighted_sum.iter().map(|s| s / weight_total).collect()
            }
        };
        prev = global.clone();
        traj.node_iterates.push(round_nodes);
        traj.global.push(global);
        traj.combined.push(combined);
        traj.consumed.push(round_batches);
    }

    Ok(TrainedModels {
        per_node: traj.node_iterates.last().cloned().unwrap_or_default(),
        aggregate: prev,
        trajectory: Some(traj),
    })
}

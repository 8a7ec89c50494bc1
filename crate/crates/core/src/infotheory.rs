//! Histogram plug-in estimation of the mutual information between a model
//! coordinate and a training point, plus the closed forms available for the
//! Gaussian-mean problem.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generalization::{run_trials, Scenario};
use crate::problems::{sample_dataset, PointRef, Population};
use crate::rng::{role, SeedPath};
use crate::stats::{sorted_quantile, Estimate};
use crate::training::{run_distributed_sgd, SgdConfig};

/// Equal-width bins on `[lo, hi]`, either fixed or taken from empirical
/// quantiles; values outside the range fall into the end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinRange {
    Fixed { u: [f64; 2], v: [f64; 2] },
    EmpiricalQuantile { q: f64 },
}

impl Default for BinRange {
    fn default() -> Self {
        BinRange::EmpiricalQuantile { q: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSpec {
    pub bins_u: usize,
    pub bins_v: usize,
    pub range: BinRange,
    /// Subtract the Miller–Madow bias `(b_u - 1)(b_v - 1) / 2M`.
    pub bias_correction: bool,
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec {
            bins_u: 32,
            bins_v: 32,
            range: BinRange::default(),
            bias_correction: true,
        }
    }
}

impl BinningSpec {
    pub fn square(bins: usize) -> Self {
        BinningSpec {
            bins_u: bins,
            bins_v: bins,
            ..Default::default()
        }
    }

    pub fn raw(self) -> Self {
        BinningSpec {
            bias_correction: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins_u < 2 || self.bins_v < 2 {
            return Err(Error::config(format!(
                "need at least 2 bins per axis, got {}x{}",
                self.bins_u, self.bins_v
            )));
        }
        match self.range {
            BinRange::EmpiricalQuantile { q } if !(0.0..0.5).contains(&q) => {
                Err(Error::config(format!("quantile clip must lie in [0, 0.5), got {q}")))
            }
            BinRange::Fixed { u, v } if !(u[0] < u[1] && v[0] < v[1]) => {
                Err(Error::config("fixed bin ranges need lo < hi"))
            }
            _ => Ok(()),
        }
    }
}

fn linspace(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let w = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + w * i as f64 })
        .collect()
}

fn quantile_range(values: &[f64], q: f64) -> Result<[f64; 2]> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in MI samples".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (sorted_quantile(&sorted, q), sorted_quantile(&sorted, 1.0 - q));
    if !(hi > lo) {
        // nearly constant data: widen so the edges stay strictly increasing
        let pad = 0.5 * lo.abs().max(1.0);
        lo -= pad;
        hi += pad;
    }
    Ok([lo, hi])
}

/// Counts on a `b_u × b_v` grid of equal-width cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub u_edges: Vec<f64>,
    pub v_edges: Vec<f64>,
    /// Row-major, `counts[i * b_v + j]` for u-bin `i`, v-bin `j`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl JointHistogram {
    pub fn with_edges(u_edges: Vec<f64>, v_edges: Vec<f64>) -> Result<Self> {
        for e in [&u_edges, &v_edges] {
            if e.len() < 3 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::arg("edges need at least 2 strictly increasing bins"));
            }
        }
        let cells = (u_edges.len() - 1) * (v_edges.len() - 1);
        Ok(JointHistogram {
            u_edges,
            v_edges,
            counts: vec![0; cells],
            total: 0,
        })
    }

    /// Histogram of the pairs with edges chosen by `spec`.
    pub fn build(u: &[f64], v: &[f64], spec: &BinningSpec) -> Result<Self> {
        spec.validate()?;
        if u.len() != v.len() {
            return Err(Error::arg(format!("{} u values but {} v values", u.len(), v.len())));
        }
        if u.is_empty() {
            return Err(Error::arg("no pairs to bin"));
        }
        let (ur, vr) = match spec.range {
            BinRange::Fixed { u, v } => (u, v),
            BinRange::EmpiricalQuantile { q } => (quantile_range(u, q)?, quantile_range(v, q)?),
        };
        let mut h = Self::with_edges(linspace(ur[0], ur[1], spec.bins_u), linspace(vr[0], vr[1], spec.bins_v))?;
        for (&a, &b) in u.iter().zip(v) {
            h.add(a, b);
        }
        Ok(h)
    }

    pub fn bins(&self) -> (usize, usize) {
        (self.u_edges.len() - 1, self.v_edges.len() - 1)
    }

    pub fn add(&mut self, u: f64, v: f64) {
        let i = bin_index(&self.u_edges, u);
        let j = bin_index(&self.v_edges, v);
        self.counts[i * (self.v_edges.len() - 1) + j] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &JointHistogram) -> Result<()> {
        if self.u_edges != other.u_edges || self.v_edges != other.v_edges {
            return Err(Error::arg("histograms with different edges cannot be merged"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    fn marginals(&self) -> (Vec<u64>, Vec<u64>) {
        let (bu, bv) = self.bins();
        let mut mu = vec![0; bu];
        let mut mv = vec![0; bv];
        for i in 0..bu {
            for j in 0..bv {
                let c = self.counts[i * bv + j];
                mu[i] += c;
                mv[j] += c;
            }
        }
        (mu, mv)
    }

    /// True when either marginal occupies a single bin.
    pub fn is_degenerate(&self) -> bool {
        let (mu, mv) = self.marginals();
        let occupied = |m: &[u64]| m.iter().filter(|&&c| c > 0).count();
        self.total < 2 || occupied(&mu) < 2 || occupied(&mv) < 2
    }

    /// `Σ p̂(u,v) ln(p̂(u,v) / p̂(u)p̂(v))` over nonempty cells.
    pub fn plugin_mi(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let (bu, bv) = self.bins();
        let (mu, mv) = self.marginals();
        let m = self.total as f64;
        let mut mi = 0.0;
        for i in 0..bu {
            for j in 0..bv {
                let c = self.counts[i * bv + j];
                if c > 0 {
                    let c = c as f64;
                    mi += c / m * (c * m / (mu[i] as f64 * mv[j] as f64)).ln();
                }
            }
        }
        mi
    }

    pub fn estimate(&self, bias_correction: bool) -> MiEstimate {
        let bins_used = self.bins();
        let degenerate = self.is_degenerate();
        let raw = if degenerate { 0.0 } else { self.plugin_mi().max(0.0) };
        let nats = if bias_correction && !degenerate {
            let (bu, bv) = bins_used;
            (raw - ((bu - 1) * (bv - 1)) as f64 / (2.0 * self.total as f64)).max(0.0)
        } else {
            raw
        };
        MiEstimate {
            nats,
            raw_nats: raw,
            bins_used,
            samples: self.total as usize,
            degenerate,
            bias_corrected: bias_correction,
            proxy: false,
        }
    }

    /// Rows `(u_lo, u_hi, v_lo, v_hi, count)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64, f64, u64)> + '_ {
        let bv = self.v_edges.len() - 1;
        self.counts.iter().enumerate().map(move |(idx, &c)| {
            let (i, j) = (idx / bv, idx % bv);
            (self.u_edges[i], self.u_edges[i + 1], self.v_edges[j], self.v_edges[j + 1], c)
        })
    }
}

fn bin_index(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    if x <= edges[0] {
        return 0;
    }
    if x >= edges[bins] {
        return bins - 1;
    }
    // first edge strictly greater than x, minus one
    edges.partition_point(|&e| e <= x) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub nats: f64,
    /// Plug-in value before any bias correction.
    pub raw_nats: f64,
    pub bins_used: (usize, usize),
    pub samples: usize,
    pub degenerate: bool,
    pub bias_corrected: bool,
    /// Sum of per-coordinate estimates standing in for a vector MI.
    pub proxy: bool,
}

impl MiEstimate {
    fn zero(spec: &BinningSpec, samples: usize) -> Self {
        MiEstimate {
            nats: 0.0,
            raw_nats: 0.0,
            bins_used: (spec.bins_u, spec.bins_v),
            samples,
            degenerate: true,
            bias_corrected: spec.bias_correction,
            proxy: false,
        }
    }
}

/// Plug-in MI of scalar pairs `(u_m, v_m)`, clipped below at zero.
pub fn estimate_mi_plugin(u: &[f64], v: &[f64], spec: &BinningSpec) -> Result<MiEstimate> {
    spec.validate()?;
    if u.len() != v.len() {
        return Err(Error::arg(format!("{} u values but {} v values", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Ok(MiEstimate::zero(spec, u.len()));
    }
    Ok(JointHistogram::build(u, v, spec)?.estimate(spec.bias_correction))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<(usize, MiEstimate)>,
    pub spread: f64,
    pub median: f64,
    /// Spread at most 10% of the median.
    pub stable: bool,
}

/// Square-grid estimates at each bin count.
pub fn mi_sensitivity_sweep(u: &[f64], v: &[f64], bin_counts: &[usize], base: &BinningSpec) -> Result<SweepResult> {
    if bin_counts.len() < 2 {
        return Err(Error::arg("a sweep needs at least two bin counts"));
    }
    let points = bin_counts
        .iter()
        .map(|&b| {
            let spec = BinningSpec {
                bins_u: b,
                bins_v: b,
                ..*base
            };
            Ok((b, estimate_mi_plugin(u, v, &spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut vals: Vec<f64> = points.iter().map(|(_, e)| e.nats).collect();
    vals.sort_by(f64::total_cmp);
    let spread = vals[vals.len() - 1] - vals[0];
    let median = sorted_quantile(&vals, 0.5);
    Ok(SweepResult {
        points,
        spread,
        median,
        stable: spread <= 0.1 * median,
    })
}

/// `I(Ŵ; Z_{i,k}) = (d/2) ln(nK / (nK - 1))` for the sample-mean model of
/// Gaussian data. With `K = 1` this is the per-node value.
pub fn closed_form_mi_gaussian_mean(n: usize, k: usize, d: usize) -> Result<f64> {
    let m = (n * k) as f64;
    if n * k < 2 {
        return Err(Error::arg(format!("need nK >= 2, got n={n}, K={k}")));
    }
    Ok(0.5 * d as f64 * (m / (m - 1.0)).ln())
}

/// Operative stand-in for `I(W_k; S_k)`: the sum of per-sample terms.
pub fn dataset_mi_proxy(per_sample: &[f64]) -> f64 {
    per_sample.iter().sum()
}

/// Upper bound `B ln 2` on the information carried by a `B`-bit model.
pub fn quantizer_capacity_nats(total_bits: u64) -> f64 {
    total_bits as f64 * std::f64::consts::LN_2
}

/// Which model is paired with which training point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiTarget {
    /// `(W_k, Z_{i,k})`.
    PerNode { node: usize, index: usize },
    /// `(Ŵ, Z_{i,k})`.
    Aggregate { node: usize, index: usize },
}

impl MiTarget {
    fn point(self) -> (usize, usize) {
        match self {
            MiTarget::PerNode { node, index } | MiTarget::Aggregate { node, index } => (node, index),
        }
    }
}

/// Scalar value extracted from a data point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataValue {
    /// The location observation `z`, or the label `y`.
    Raw,
    /// Loss gradient at the true parameter: `z - μ`, or `x (y - <x, w₀>)`.
    /// The model is centered at the truth as well, so the pair carries the
    /// information conditional on the trial's population.
    #[default]
    Score,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Requires `d = 1`.
    #[default]
    Scalar,
    /// One pair per coordinate; estimates are summed and flagged as a proxy.
    PerCoordinateProxy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pairing {
    pub data: DataValue,
    pub projection: Projection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairColumns {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Pairs for one target, one column pair per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiSamples {
    pub columns: Vec<PairColumns>,
    pub proxy: bool,
    /// `ℓ(W, Z̃)` with `Z̃` a fresh draw from the same trial's population,
    /// i.e. losses under the product of the marginals.
    pub cross_losses: Vec<f64>,
}

impl MiSamples {
    fn new(d: usize, proxy: bool, trials: usize) -> Self {
        let col = || PairColumns {
            u: Vec::with_capacity(trials),
            v: Vec::with_capacity(trials),
        };
        MiSamples {
            columns: (0..d).map(|_| col()).collect(),
            proxy,
            cross_losses: Vec::with_capacity(trials),
        }
    }

    pub fn len(&self) -> usize {
        self.cross_losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cross_losses.is_empty()
    }

    /// Plug-in estimate, summed over coordinates for the proxy.
    pub fn estimate(&self, spec: &BinningSpec) -> Result<MiEstimate> {
        let mut total: Option<MiEstimate> = None;
        for c in &self.columns {
            let e = estimate_mi_plugin(&c.u, &c.v, spec)?;
            total = Some(match total {
                None => e,
                Some(mut acc) => {
                    acc.nats += e.nats;
                    acc.raw_nats += e.raw_nats;
                    acc.degenerate &= e.degenerate;
                    acc
                }
            });
        }
        let mut out = total.ok_or_else(|| Error::arg("no columns to estimate"))?;
        out.proxy = self.proxy;
        Ok(out)
    }

    /// Bootstrap standard error of [`MiSamples::estimate`].
    pub fn bootstrap_std_error(&self, spec: &BinningSpec, reps: usize, seed: &SeedPath) -> Result<f64> {
        if reps < 2 {
            return Err(Error::arg("bootstrap needs at least 2 replicates"));
        }
        let m = self.len();
        let values = run_trials(reps, &seed.child(role::BOOTSTRAP), |_, s| {
            let mut rng = s.rng();
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            let resampled = MiSamples {
                columns: self
                    .columns
                    .iter()
                    .map(|c| PairColumns {
                        u: idx.iter().map(|&i| c.u[i]).collect(),
                        v: idx.iter().map(|&i| c.v[i]).collect(),
                    })
                    .collect(),
                proxy: self.proxy,
                cross_losses: vec![0.0; m],
            };
            Ok(resampled.estimate(spec)?.nats)
        })?;
        Ok(Estimate::from_samples(&values).std_dev())
    }
}

/// `(u, v)` coordinates for model `w` and point `z` under `pairing`.
fn pair_values(pop: &Population, pairing: Pairing, w: &[f64], z: PointRef<'_>, out: &mut Vec<(f64, f64)>) {
    out.clear();
    let truth = pop.truth();
    match (z, pairing.data) {
        (PointRef::Location(z), DataValue::Raw) => out.extend(w.iter().copied().zip(z.iter().copied())),
        (PointRef::Location(z), DataValue::Score) => {
            out.extend((0..w.len()).map(|j| (w[j] - truth[j], z[j] - truth[j])))
        }
        (PointRef::Labeled { x, y }, DataValue::Raw) => {
            if w.len() == 1 {
                out.push((w[0], y));
            } else {
                out.extend((0..w.len()).map(|j| (w[j], x[j] * y)));
            }
        }
        (PointRef::Labeled { x, y }, DataValue::Score) => {
            let resid = y - x.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>();
            out.extend((0..w.len()).map(|j| (w[j] - truth[j], x[j] * resid)));
        }
    }
}

fn check_pairing(scenario: &Scenario, pairing: Pairing) -> Result<()> {
    if scenario.spec.d > 1 && pairing.projection == Projection::Scalar {
        return Err(Error::config(
            "d > 1 needs a projection policy; use the per-coordinate proxy",
        ));
    }
    Ok(())
}

/// Runs `trials` end-to-end trials and records, for every target, the pair
/// (model value, data value) and one product-marginal loss.
pub fn gather_mi_samples(
    scenario: &Scenario,
    targets: &[MiTarget],
    trials: usize,
    pairing: Pairing,
    seed: &SeedPath,
) -> Result<Vec<MiSamples>> {
    scenario.validate()?;
    check_pairing(scenario, pairing)?;
    for t in targets {
        let (k, i) = t.point();
        if k >= scenario.nodes || i >= scenario.n {
            return Err(Error::arg(format!("target {t:?} outside n={}, K={}", scenario.n, scenario.nodes)));
        }
    }
    let d = scenario.spec.d;
    let per_trial = run_trials(trials, seed, |_, s| {
        let state = scenario.run_trial(s)?;
        let fresh = state.population.sample_node(targets.len(), &mut s.child(role::FRESH).rng());
        let mut buf = Vec::with_capacity(d);
        let mut out = Vec::with_capacity(targets.len());
        for (j, t) in targets.iter().enumerate() {
            let (k, i) = t.point();
            let w = match t {
                MiTarget::PerNode { .. } => &state.models.per_node[k],
                MiTarget::Aggregate { .. } => &state.models.aggregate,
            };
            pair_values(&state.population, pairing, w, state.data.node(k).point(i), &mut buf);
            out.push((buf.clone(), scenario.loss(w, fresh.point(j))?));
        }
        Ok(out)
    })?;
    Ok(collect_samples(per_trial, targets.len(), d, pairing, trials))
}

fn collect_samples(
    per_trial: Vec<Vec<(Vec<(f64, f64)>, f64)>>,
    targets: usize,
    d: usize,
    pairing: Pairing,
    trials: usize,
) -> Vec<MiSamples> {
    let proxy = pairing.projection == Projection::PerCoordinateProxy;
    let mut samples: Vec<MiSamples> = (0..targets).map(|_| MiSamples::new(d, proxy, trials)).collect();
    for trial in per_trial {
        for (s, (pairs, loss)) in samples.iter_mut().zip(trial) {
            for (c, (u, v)) in s.columns.iter_mut().zip(pairs) {
                c.u.push(u);
                c.v.push(v);
            }
            s.cross_losses.push(loss);
        }
    }
    samples
}

/// Pairs `(W_k^t, Z_{t,k})` for each requested round `t` (1-based), where
/// `Z_{t,k}` is the first point of node `k`'s round-`t` minibatch and
/// `W_k^t` the node iterate after that round.
pub fn gather_sgd_mi_samples(
    scenario: &Scenario,
    cfg: &SgdConfig,
    node: usize,
    rounds: &[usize],
    trials: usize,
    pairing: Pairing,
    seed: &SeedPath,
) -> Result<Vec<MiSamples>> {
    scenario.validate()?;
    cfg.validate(scenario.n, scenario.spec.d)?;
    check_pairing(scenario, pairing)?;
    if node >= scenario.nodes {
        return Err(Error::arg(format!("node {node} outside K={}", scenario.nodes)));
    }
    if let Some(&t) = rounds.iter().find(|&&t| t == 0 || t > cfg.rounds) {
        return Err(Error::arg(format!("round {t} outside 1..={}", cfg.rounds)));
    }
    let d = scenario.spec.d;
    let per_trial = run_trials(trials, seed, |_, s| {
        let population = scenario.spec.realize(&s.child(role::TRUTH))?;
        let data = sample_dataset(&population, scenario.n, scenario.nodes, &s.child(role::DATA))?;
        let out = run_distributed_sgd(&data, scenario.form, &scenario.generator, cfg, &s.child(role::TRAIN))?;
        let traj = out.trajectory.expect("sgd records a trajectory");
        let fresh = population.sample_node(rounds.len(), &mut s.child(role::FRESH).rng());
        let mut buf = Vec::with_capacity(d);
        rounds
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let w = &traj.node_iterates[t - 1][node];
                let z = data.node(node).point(traj.consumed[t - 1][node][0]);
                pair_values(&population, pairing, w, z, &mut buf);
                Ok((buf.clone(), scenario.loss(w, fresh.point(j))?))
            })
            .collect()
    })?;
    Ok(collect_samples(per_trial, rounds.len(), d, pairing, trials))
}

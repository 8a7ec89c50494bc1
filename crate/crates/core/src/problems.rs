//! Synthetic generative problems and node-partitioned datasets.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bregman::{loss_eval, Generator, LossForm};
use crate::error::{Error, Result};
use crate::rng::SeedPath;
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `Z ~ N(μ, σ² I_d)`.
    GaussianLocation,
    /// `x ~ N(0, feature_sigma2 I_d)`, `y = <x, w₀> + N(0, σ²)`, with
    /// `w₀ ~ N(0, weight_prior_sigma2 I_d)` drawn once per outer trial.
    LinearRegression,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub d: usize,
    /// Location mean; empty means the origin.
    #[serde(default)]
    pub mu: Vec<f64>,
    pub sigma2: f64,
    #[serde(default = "one")]
    pub weight_prior_sigma2: f64,
    #[serde(default = "one")]
    pub feature_sigma2: f64,
}

impl ProblemSpec {
    pub fn gaussian_location(mu: Vec<f64>, sigma2: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::GaussianLocation,
            d: mu.len(),
            mu,
            sigma2,
            weight_prior_sigma2: 1.0,
            feature_sigma2: 1.0,
        }
    }

    pub fn linear_regression(d: usize, sigma2: f64, weight_prior_sigma2: f64, feature_sigma2: f64) -> Self {
        ProblemSpec {
            kind: ProblemKind::LinearRegression,
            d,
            mu: Vec::new(),
            sigma2,
            weight_prior_sigma2,
            feature_sigma2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("dimension d must be at least 1"));
        }
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("sigma2", self.sigma2)?;
        nonneg("weight_prior_sigma2", self.weight_prior_sigma2)?;
        if !(self.feature_sigma2 > 0.0 && self.feature_sigma2.is_finite()) {
            return Err(Error::config(format!(
                "feature_sigma2 must be > 0, got {}",
                self.feature_sigma2
            )));
        }
        if self.kind == ProblemKind::GaussianLocation && !self.mu.is_empty() && self.mu.len() != self.d {
            return Err(Error::config(format!(
                "mu has {} entries but d = {}",
                self.mu.len(),
                self.d
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("mu must be finite"));
        }
        Ok(())
    }

    /// The location mean, expanding an empty `mu` to the origin.
    pub fn location_mean(&self) -> Vec<f64> {
        if self.mu.is_empty() {
            vec![0.0; self.d]
        } else {
            self.mu.clone()
        }
    }

    /// Loss form that matches the data variant of this problem.
    pub fn natural_form(&self) -> LossForm {
        match self.kind {
            ProblemKind::GaussianLocation => LossForm::Location,
            ProblemKind::LinearRegression => LossForm::LinearPrediction,
        }
    }

    /// Fixes the per-trial latent parameters: `μ` for location problems, a
    /// fresh `w₀` for regression.
    pub fn realize(&self, seed: &SeedPath) -> Result<Population> {
        self.validate()?;
        let truth = match self.kind {
            ProblemKind::GaussianLocation => self.location_mean(),
            ProblemKind::LinearRegression => draw_true_weight(self, seed)?,
        };
        Ok(Population {
            spec: self.clone(),
            truth,
        })
    }
}

/// Draws the latent regression weight `w₀ ~ N(0, weight_prior_sigma2 I_d)`.
pub fn draw_true_weight(spec: &ProblemSpec, seed: &SeedPath) -> Result<Vec<f64>> {
    if spec.kind != ProblemKind::LinearRegression {
        return Err(Error::Unsupported(
            "true weights exist only for linear regression problems".into(),
        ));
    }
    spec.validate()?;
    let sd = spec.weight_prior_sigma2.sqrt();
    let mut rng = seed.rng();
    Ok((0..spec.d)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// An owned data point.
#[derive(Debug, Clone, PartialEq)]
pub enum DataPoint {
    Location { z: Vec<f64> },
    Labeled { x: Vec<f64>, y: f64 },
}

impl DataPoint {
    pub fn as_ref(&self) -> PointRef<'_> {
        match self {
            DataPoint::Location { z } => PointRef::Location(z),
            DataPoint::Labeled { x, y } => PointRef::Labeled { x, y: *y },
        }
    }
}

/// A borrowed view of one data point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointRef<'a> {
    Location(&'a [f64]),
    Labeled { x: &'a [f64], y: f64 },
}

impl PointRef<'_> {
    pub fn to_owned(self) -> DataPoint {
        match self {
            PointRef::Location(z) => DataPoint::Location { z: z.to_vec() },
            PointRef::Labeled { x, y } => DataPoint::Labeled { x: x.to_vec(), y },
        }
    }
}

/// The `n` points held by one node, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    d: usize,
    /// `z` (location) or `x` (labeled) vectors, row-major `n × d`.
    values: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl NodeData {
    pub fn from_points(points: &[DataPoint]) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::arg("node dataset is empty"))?;
        let (d, labeled) = match first {
            DataPoint::Location { z } => (z.len(), false),
            DataPoint::Labeled { x, .. } => (x.len(), true),
        };
        let mut values = Vec::with_capacity(points.len() * d);
        let mut labels = labeled.then(|| Vec::with_capacity(points.len()));
        for p in points {
            match (p, labels.as_mut()) {
                (DataPoint::Location { z }, None) if z.len() == d => values.extend_from_slice(z),
                (DataPoint::Labeled { x, y }, Some(l)) if x.len() == d => {
                    values.extend_from_slice(x);
                    l.push(*y);
                }
                _ => return Err(Error::arg("mixed point variants or dimensions in node")),
            }
        }
        Ok(NodeData { d, values, labels })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn point(&self, i: usize) -> PointRef<'_> {
        let row = &self.values[i * self.d..(i + 1) * self.d];
        match &self.labels {
            None => PointRef::Location(row),
            Some(l) => PointRef::Labeled { x: row, y: l[i] },
        }
    }

    pub fn points(&self) -> impl Iterator<Item = PointRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Copy of this node with point `i` replaced.
    pub fn replaced(&self, i: usize, point: PointRef<'_>) -> Result<NodeData> {
        if i >= self.len() {
            return Err(Error::arg(format!("index {i} out of range for node of size {}", self.len())));
        }
        let mut out = self.clone();
        match (point, out.labels.as_mut()) {
            (PointRef::Location(z), None) if z.len() == self.d => {
                out.values[i * self.d..(i + 1) * self.d].copy_from_slice(z);
            }
            (PointRef::Labeled { x, y }, Some(l)) if x.len() == self.d => {
                out.values[i * self.d..(i + 1) * self.d].copy_from_slice(x);
                l[i] = y;
            }
            _ => return Err(Error::arg("replacement point does not match node variant")),
        }
        Ok(out)
    }

    /// Scales every coordinate (and label) by `c`.
    pub fn scaled(&self, c: f64) -> NodeData {
        NodeData {
            d: self.d,
            values: self.values.iter().map(|v| v * c).collect(),
            labels: self.labels.as_ref().map(|l| l.iter().map(|v| v * c).collect()),
        }
    }
}

/// `K` nodes with `n` points each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    nodes: Vec<NodeData>,
}

impl Dataset {
    pub fn from_nodes(nodes: Vec<NodeData>) -> Result<Self> {
        let first = nodes.first().ok_or_else(|| Error::arg("dataset needs at least one node"))?;
        let (n, d, labeled) = (first.len(), first.dim(), first.is_labeled());
        if n == 0 {
            return Err(Error::arg("nodes must be nonempty"));
        }
        if nodes
            .iter()
            .any(|nd| nd.len() != n || nd.dim() != d || nd.is_labeled() != labeled)
        {
            return Err(Error::arg("every node must hold the same number and kind of points"));
        }
        Ok(Dataset { nodes })
    }

    pub fn nodes(&self) -> &[NodeData] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &NodeData {
        &self.nodes[k]
    }

    pub fn n(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    pub fn total(&self) -> usize {
        self.n() * self.num_nodes()
    }

    pub fn points(&self) -> impl Iterator<Item = PointRef<'_>> + '_ {
        self.nodes.iter().flat_map(|nd| nd.points())
    }

    /// `S^{(i,k)}`: the dataset with point `i` of node `k` replaced.
    pub fn replace_one(&self, i: usize, k: usize, point: PointRef<'_>) -> Result<Dataset> {
        let node = self
            .nodes
            .get(k)
            .ok_or_else(|| Error::arg(format!("node {k} out of range")))?
            .replaced(i, point)?;
        let mut nodes = self.nodes.clone();
        nodes[k] = node;
        Ok(Dataset { nodes })
    }
}

/// A problem with its latent parameter fixed: the conditional data law `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    spec: ProblemSpec,
    truth: Vec<f64>,
}

impl Population {
    /// Population with an explicit truth (`μ` or `w₀`).
    pub fn with_truth(spec: ProblemSpec, truth: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if truth.len() != spec.d {
            return Err(Error::config("truth dimension differs from d"));
        }
        Ok(Population { spec, truth })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// `μ` for location problems, `w₀` for regression.
    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn dim(&self) -> usize {
        self.spec.d
    }

    fn fill_node<R: Rng>(&self, n: usize, rng: &mut R) -> NodeData {
        let d = self.spec.d;
        let noise_sd = self.spec.sigma2.sqrt();
        let mut values = Vec::with_capacity(n * d);
        match self.spec.kind {
            ProblemKind::GaussianLocation => {
                for _ in 0..n {
                    for mu in &self.truth {
                        values.push(mu + noise_sd * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                NodeData { d, values, labels: None }
            }
            ProblemKind::LinearRegression => {
                let feature_sd = self.spec.feature_sigma2.sqrt();
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut y = 0.0;
                    for w in &self.truth {
                        let x = feature_sd * rng.sample::<f64, _>(StandardNormal);
                        y += x * w;
                        values.push(x);
                    }
                    labels.push(y + noise_sd * rng.sample::<f64, _>(StandardNormal));
                }
                NodeData {
                    d,
                    values,
                    labels: Some(labels),
                }
            }
        }
    }

    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> DataPoint {
        self.fill_node(1, rng).point(0).to_owned()
    }

    pub fn sample_node<R: Rng>(&self, n: usize, rng: &mut R) -> NodeData {
        self.fill_node(n, rng)
    }

    /// Loss form matching this population's data variant.
    pub fn natural_form(&self) -> LossForm {
        self.spec.natural_form()
    }
}

/// Samples `K` nodes of `n` i.i.d. points; node `k` uses stream `seed/k`.
pub fn sample_dataset(pop: &Population, n: usize, nodes: usize, seed: &SeedPath) -> Result<Dataset> {
    if n == 0 || nodes == 0 {
        return Err(Error::config(format!("need n >= 1 and K >= 1, got n={n}, K={nodes}")));
    }
    let nodes = (0..nodes)
        .map(|k| pop.fill_node(n, &mut seed.child(k as u64).rng()))
        .collect();
    Ok(Dataset { nodes })
}

/// Closed-form population risk for the squared-norm generator.
///
/// Location: `||w - μ||² + σ² d`. Regression (conditional on `w₀`):
/// `feature_sigma2 ||w - w₀||² + σ²`.
pub fn population_risk(pop: &Population, form: LossForm, generator: &Generator, w: &[f64]) -> Result<f64> {
    if w.len() != pop.dim() {
        return Err(Error::arg("weight dimension differs from problem dimension"));
    }
    if !generator.is_squared_norm() {
        return Err(Error::Unsupported(
            "no closed-form population risk for this generator; use population_risk_mc".into(),
        ));
    }
    let dist2: f64 = w.iter().zip(&pop.truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let s = &pop.spec;
    match (s.kind, form) {
        (ProblemKind::GaussianLocation, LossForm::Location) => Ok(dist2 + s.sigma2 * s.d as f64),
        (ProblemKind::LinearRegression, LossForm::LinearPrediction) => Ok(s.feature_sigma2 * dist2 + s.sigma2),
        _ => Err(Error::Unsupported(format!(
            "no closed-form population risk for {:?} with {form:?} loss; use population_risk_mc",
            s.kind
        ))),
    }
}

/// Monte Carlo population risk over `m` fresh draws.
pub fn population_risk_mc(
    pop: &Population,
    form: LossForm,
    generator: &Generator,
    w: &[f64],
    m: usize,
    seed: &SeedPath,
) -> Result<Estimate> {
    if m == 0 {
        return Err(Error::config("population Monte Carlo needs m >= 1"));
    }
    let mut rng = seed.rng();
    let mut losses = Vec::with_capacity(m);
    for _ in 0..m {
        let node = pop.fill_node(1, &mut rng);
        losses.push(loss_eval(form, generator, w, node.point(0))?);
    }
    Ok(Estimate::from_samples(&losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seed() -> SeedPath {
        SeedPath::new(2024)
    }

    #[test]
    fn sampling_is_deterministic_with_shape() {
        let pop = ProblemSpec::gaussian_location(vec![0.5], 1.0).realize(&seed()).unwrap();
        let a = sample_dataset(&pop, 2, 1, &seed().child(1)).unwrap();
        let b = sample_dataset(&pop, 2, 1, &seed().child(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.num_nodes(), a.n(), a.dim()), (1, 2, 1));
        let c = sample_dataset(&pop, 2, 1, &seed().child(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_regression_is_exact() {
        let spec = ProblemSpec::linear_regression(1, 0.0, 1.0, 1.0);
        let pop = Population::with_truth(spec, vec![2.0]).unwrap();
        let ds = sample_dataset(&pop, 50, 3, &seed()).unwrap();
        for p in ds.points() {
            let PointRef::Labeled { x, y } = p else { panic!() };
            assert_eq!(y, 2.0 * x[0]);
        }
    }

    #[test]
    fn sample_mean_clt() {
        let pop = ProblemSpec::gaussian_location(vec![0.0, 0.0], 1.0).realize(&seed()).unwrap();
        let m = 100_000;
        let ds = sample_dataset(&pop, m, 1, &seed()).unwrap();
        for j in 0..2 {
            let mean = ds.node(0).values().iter().skip(j).step_by(2).sum::<f64>() / m as f64;
            assert!(mean.abs() <= 3.0 / (m as f64).sqrt(), "coord {j}: {mean}");
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = ProblemSpec::gaussian_location(vec![0.0], -1.0);
        assert!(matches!(spec.realize(&seed()), Err(Error::Config(_))));
        let spec = ProblemSpec::linear_regression(1, 1.0, 1.0, 0.0);
        assert!(spec.validate().is_err());
        let pop = ProblemSpec::gaussian_location(vec![0.0], 1.0).realize(&seed()).unwrap();
        assert!(sample_dataset(&pop, 0, 1, &seed()).is_err());
        assert!(sample_dataset(&pop, 1, 0, &seed()).is_err());
    }

    #[test]
    fn true_weight_draws() {
        let degenerate = ProblemSpec::linear_regression(3, 1.0, 0.0, 1.0);
        assert_eq!(draw_true_weight(&degenerate, &seed()).unwrap(), vec![0.0; 3]);
        let spec = ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0);
        assert_eq!(draw_true_weight(&spec, &seed()).unwrap(), draw_true_weight(&spec, &seed()).unwrap());
        let draws: Vec<f64> = (0..100_000u64)
            .map(|t| draw_true_weight(&spec, &seed().child(t)).unwrap()[0])
            .collect();
        let var = draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let loc = ProblemSpec::gaussian_location(vec![0.0], 1.0);
        assert!(matches!(draw_true_weight(&loc, &seed()), Err(Error::Unsupported(_))));
    }

    // Monte Carlo oracle for the closed-form risks.
    fn mc_oracle(pop: &Population, form: LossForm, w: &[f64], m: usize) -> (f64, f64) {
        let mut rng = SeedPath::new(77).rng();
        let vals: Vec<f64> = (0..m)
            .map(|_| {
                let p = pop.sample_point(&mut rng);
                loss_eval(form, &Generator::SquaredNorm, w, p.as_ref()).unwrap()
            })
            .collect();
        let e = Estimate::from_samples(&vals);
        (e.mean, e.std_error)
    }

    #[test]
    fn closed_form_risk_matches_monte_carlo() {
        let pop = ProblemSpec::gaussian_location(vec![1.0, -2.0, 0.5], 2.0).realize(&seed()).unwrap();
        let risk = population_risk(&pop, LossForm::Location, &Generator::SquaredNorm, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(risk, 6.0);
        let (mean, se) = mc_oracle(&pop, LossForm::Location, &[1.0, -2.0, 0.5], 1_000_000);
        assert!((mean - 6.0).abs() < 3.0 * se);

        let reg = Population::with_truth(ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0), vec![0.7]).unwrap();
        let risk = population_risk(&reg, LossForm::LinearPrediction, &Generator::SquaredNorm, &[0.7]).unwrap();
        assert_eq!(risk, 1.0);
        let (mean, se) = mc_oracle(&reg, LossForm::LinearPrediction, &[0.7], 1_000_000);
        assert!((mean - 1.0).abs() < 3.0 * se);

        let still = ProblemSpec::gaussian_location(vec![0.3], 0.0).realize(&seed()).unwrap();
        assert_eq!(population_risk(&still, LossForm::Location, &Generator::SquaredNorm, &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_unsupported_pairs() {
        let pop = ProblemSpec::gaussian_location(vec![0.5], 1.0).realize(&seed()).unwrap();
        assert!(matches!(
            population_risk(&pop, LossForm::LinearPrediction, &Generator::SquaredNorm, &[0.0]),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            population_risk(&pop, LossForm::Location, &Generator::negative_entropy(), &[0.5]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mc_risk_examples() {
        let pop = ProblemSpec::gaussian_location(vec![0.0], 1.0).realize(&seed()).unwrap();
        let one = population_risk_mc(&pop, LossForm::Location, &Generator::SquaredNorm, &[0.0], 1, &seed()).unwrap();
        let z = pop.sample_point(&mut seed().rng());
        let DataPoint::Location { z } = z else { panic!() };
        assert_eq!(one.mean, z[0] * z[0]);

        let big = population_risk_mc(&pop, LossForm::Location, &Generator::SquaredNorm, &[0.0], 1_000_000, &seed()).unwrap();
        assert!(big.covers(1.0, 3.0, 0.0));

        let still = ProblemSpec::gaussian_location(vec![0.25], 0.0).realize(&seed()).unwrap();
        for m in [1, 10, 1000] {
            let e = population_risk_mc(&still, LossForm::Location, &Generator::SquaredNorm, &[1.25], m, &seed()).unwrap();
            assert_eq!(e.mean, 1.0);
        }
    }

    #[test]
    fn closed_form_and_mc_agree_on_random_grid() {
        let mut rng = SeedPath::new(5).rng();
        let loc = ProblemSpec::gaussian_location(vec![0.2, -0.4], 0.5).realize(&seed()).unwrap();
        let reg = ProblemSpec::linear_regression(2, 0.7, 1.0, 1.5).realize(&seed()).unwrap();
        for t in 0..10u64 {
            let w: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            for pop in [&loc, &reg] {
                let form = pop.natural_form();
                let exact = population_risk(pop, form, &Generator::SquaredNorm, &w).unwrap();
                let mc = population_risk_mc(pop, form, &Generator::SquaredNorm, &w, 200_000, &seed().child(t)).unwrap();
                assert!(mc.covers(exact, 3.0, 0.0), "{exact} vs {mc:?}");
            }
        }
    }

    #[test]
    fn node_exchangeable_summaries() {
        let pop = ProblemSpec::gaussian_location(vec![1.0], 2.0).realize(&seed()).unwrap();
        let ds = sample_dataset(&pop, 20_000, 4, &seed()).unwrap();
        let means: Vec<f64> = ds
            .nodes()
            .iter()
            .map(|nd| nd.values().iter().sum::<f64>() / nd.len() as f64)
            .collect();
        let se = (2.0f64 / 20_000.0).sqrt();
        for m in &means {
            assert!((m - 1.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn replace_one_touches_single_index() {
        let pop = ProblemSpec::linear_regression(2, 1.0, 1.0, 1.0).realize(&seed()).unwrap();
        let ds = sample_dataset(&pop, 5, 3, &seed()).unwrap();
        let fresh = pop.sample_point(&mut seed().child(9).rng());
        let swapped = ds.replace_one(2, 1, fresh.as_ref()).unwrap();
        for k in 0..3 {
            for i in 0..5 {
                if (i, k) == (2, 1) {
                    assert_eq!(swapped.node(k).point(i), fresh.as_ref());
                } else {
                    assert_eq!(swapped.node(k).point(i), ds.node(k).point(i));
                }
            }
        }
        assert!(ds.replace_one(5, 0, fresh.as_ref()).is_err());
        assert!(ds.replace_one(0, 3, fresh.as_ref()).is_err());
    }
}

//! Monte Carlo measurement of generalization error and of the identities
//! relating the aggregate model to the node models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::check_convexity_bound;
use crate::bregman::{loss_eval, Generator, LossForm};
use crate::error::{Error, Result};
use crate::problems::{
    population_risk, population_risk_mc, sample_dataset, Dataset, PointRef, Population, ProblemKind,
    ProblemSpec,
};
use crate::rng::{role, SeedPath};
use crate::stats::{Estimate, PairedCheck};
use crate::training::{
    run_distributed_sgd, train_all, train_node, Aggregation, NodeAlgorithm, SgdConfig, TrainedModels,
};

/// Monte Carlo sample count used when no closed-form risk exists.
pub const DEFAULT_POPULATION_SAMPLES: usize = 10_000;

/// How the population risk `L(w)` is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMethod {
    /// Closed form when available, otherwise Monte Carlo with
    /// [`DEFAULT_POPULATION_SAMPLES`] draws.
    #[default]
    Auto,
    ClosedForm,
    MonteCarlo { samples: usize },
}

/// Everything that defines one end-to-end trial: data model, local
/// algorithm, loss, topology and aggregation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ProblemSpec,
    pub algorithm: NodeAlgorithm,
    pub form: LossForm,
    pub generator: Generator,
    pub n: usize,
    pub nodes: usize,
    pub aggregation: Aggregation,
    pub risk: RiskMethod,
}

impl Scenario {
    /// Squared loss in the problem's natural form, averaged aggregation.
    pub fn new(spec: ProblemSpec, algorithm: NodeAlgorithm, n: usize, nodes: usize) -> Self {
        Scenario {
            form: spec.natural_form(),
            spec,
            algorithm,
            generator: Generator::SquaredNorm,
            n,
            nodes,
            aggregation: Aggregation::Average,
            risk: RiskMethod::Auto,
        }
    }

    pub fn with_nodes(&self, nodes: usize) -> Self {
        Scenario { nodes, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.algorithm.validate()?;
        if self.n == 0 || self.nodes == 0 {
            return Err(Error::config(format!(
                "need n >= 1 and K >= 1, got n={}, K={}",
                self.n, self.nodes
            )));
        }
        let labeled = self.spec.kind == ProblemKind::LinearRegression;
        let ok = match &self.algorithm {
            NodeAlgorithm::SampleMean | NodeAlgorithm::ClippedMean { .. } => !labeled,
            NodeAlgorithm::NormalEquations => labeled,
            _ => true,
        };
        if !ok {
            return Err(Error::config(format!(
                "{:?} cannot be trained on {:?} data",
                self.algorithm, self.spec.kind
            )));
        }
        if self.form != self.spec.natural_form() {
            return Err(Error::config(format!(
                "{:?} loss does not apply to {:?} data",
                self.form, self.spec.kind
            )));
        }
        if let RiskMethod::MonteCarlo { samples: 0 } = self.risk {
            return Err(Error::config("population Monte Carlo needs at least one sample"));
        }
        Ok(())
    }

    /// `L(w)` for this scenario's loss.
    pub fn population_risk(&self, pop: &Population, w: &[f64], seed: &SeedPath) -> Result<f64> {
        let mc = |m| population_risk_mc(pop, self.form, &self.generator, w, m, seed).map(|e| e.mean);
        match self.risk {
            RiskMethod::ClosedForm => population_risk(pop, self.form, &self.generator, w),
            RiskMethod::MonteCarlo { samples } => mc(samples),
            RiskMethod::Auto => match population_risk(pop, self.form, &self.generator, w) {
                Err(Error::Unsupported(_)) => mc(DEFAULT_POPULATION_SAMPLES),
                other => other,
            },
        }
    }

    pub fn loss(&self, w: &[f64], z: PointRef<'_>) -> Result<f64> {
        loss_eval(self.form, &self.generator, w, z)
    }

    /// Samples the trial's population and dataset and trains every node.
    pub fn run_trial(&self, trial: &SeedPath) -> Result<TrialState> {
        let population = self.spec.realize(&trial.child(role::TRUTH))?;
        let data = sample_dataset(&population, self.n, self.nodes, &trial.child(role::DATA))?;
        let models = train_all(&self.algorithm, &data, self.aggregation, &trial.child(role::TRAIN))?;
        Ok(TrialState {
            population,
            data,
            models,
        })
    }

    /// Retrains node `k` on its data with point `i` replaced and returns the
    /// node model and the re-aggregated model.
    pub fn retrain_replaced(
        &self,
        state: &TrialState,
        trial: &SeedPath,
        i: usize,
        k: usize,
        point: PointRef<'_>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let node = state.data.node(k).replaced(i, point)?;
        let w_k = train_node(&self.algorithm, &node, &trial.child(role::TRAIN).child(k as u64))?;
        let mut per_node = state.models.per_node.clone();
        per_node[k] = w_k.clone();
        Ok((w_k, self.aggregation.apply(&per_node)?))
    }
}

/// Population, dataset and trained models of one trial.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub population: Population,
    pub data: Dataset,
    pub models: TrainedModels,
}

fn in_trial(t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("trial {t}: {m}")),
        Error::Argument(m) => Error::Argument(format!("trial {t}: {m}")),
        Error::Unsupported(m) => Error::Unsupported(format!("trial {t}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("trial {t}: {m}")),
        Error::Divergence { round, detail } => Error::Divergence {
            round,
            detail: format!("trial {t}: {detail}"),
        },
        Error::Numeric(m) => Error::Numeric(format!("trial {t}: {m}")),
    }
}

/// Runs `trials` independent trials in parallel; results come back in trial
/// order so downstream reductions are independent of the worker count.
pub fn run_trials<T, F>(trials: usize, seed: &SeedPath, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &SeedPath) -> Result<T> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, &seed.child(t as u64)).map_err(in_trial(t)))
        .collect()
}

/// `L_s(w)`: mean loss over the given points.
pub fn empirical_risk<'a>(
    form: LossForm,
    generator: &Generator,
    w: &[f64],
    points: impl IntoIterator<Item = PointRef<'a>>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in points {
        total += loss_eval(form, generator, w, p)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::arg("empirical risk over an empty set"));
    }
    Ok(total / count as f64)
}

/// `Δ_A(s)` for the aggregate and `Δ_{A_k}(s_k)` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct GenErrorSample {
    pub aggregate: f64,
    pub per_node: Vec<f64>,
}

fn gen_error_of(scenario: &Scenario, state: &TrialState, trial: &SeedPath) -> Result<GenErrorSample> {
    let pop = &state.population;
    let pop_seed = trial.child(role::POPULATION);
    let w_hat = &state.models.aggregate;
    let aggregate = scenario.population_risk(pop, w_hat, &pop_seed)?
        - empirical_risk(scenario.form, &scenario.generator, w_hat, state.data.points())?;
    let per_node = state
        .models
        .per_node
        .iter()
        .enumerate()
        .map(|(k, w)| {
            Ok(scenario.population_risk(pop, w, &pop_seed.child(k as u64 + 1))?
                - empirical_risk(scenario.form, &scenario.generator, w, state.data.node(k).points())?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GenErrorSample { aggregate, per_node })
}

/// One trial: sample data, train, aggregate, and measure `L(Ŵ) - L_S(Ŵ)`
/// along with each node's own gap.
pub fn gen_error_once(scenario: &Scenario, seed: &SeedPath) -> Result<GenErrorSample> {
    scenario.validate()?;
    let state = scenario.run_trial(seed)?;
    gen_error_of(scenario, &state, seed)
}

/// Per-trial generalization gaps for `trials` trials.
pub fn gen_error_samples(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<Vec<GenErrorSample>> {
    scenario.validate()?;
    run_trials(trials, seed, |_, s| {
        let state = scenario.run_trial(s)?;
        gen_error_of(scenario, &state, s)
    })
}

/// Expected generalization error of the aggregate and of each node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenErrorEstimate {
    pub aggregate: Estimate,
    pub per_node: Vec<Estimate>,
}

impl GenErrorEstimate {
    pub fn mean(&self) -> f64 {
        self.aggregate.mean
    }

    pub fn std_error(&self) -> f64 {
        self.aggregate.std_error
    }

    pub fn trials(&self) -> usize {
        self.aggregate.trials
    }

    pub fn per_node_means(&self) -> Vec<f64> {
        self.per_node.iter().map(|e| e.mean).collect()
    }

    pub fn from_samples(samples: &[GenErrorSample]) -> Self {
        let agg: Vec<f64> = samples.iter().map(|s| s.aggregate).collect();
        let nodes = samples.first().map_or(0, |s| s.per_node.len());
        let per_node = (0..nodes)
            .map(|k| Estimate::from_samples(&samples.iter().map(|s| s.per_node[k]).collect::<Vec<_>>()))
            .collect();
        GenErrorEstimate {
            aggregate: Estimate::from_samples(&agg),
            per_node,
        }
    }
}

pub fn expected_gen_error(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<GenErrorEstimate> {
    if trials < 2 {
        return Err(Error::config("expected generalization error needs at least 2 trials"));
    }
    Ok(GenErrorEstimate::from_samples(&gen_error_samples(scenario, trials, seed)?))
}

/// Both sides of the leave-one-out expansion on shared randomness:
/// `lhs = Δ_A(S)`, `rhs = (1/nK) Σ_{i,k} [ℓ(A(S), Z'_{i,k}) - ℓ(A(S^{(i,k)}), Z'_{i,k})]`.
pub fn leave_one_out_check(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<PairedCheck> {
    scenario.validate()?;
    let pairs = run_trials(trials, seed, |_, s| {
        let state = scenario.run_trial(s)?;
        let lhs = gen_error_of(scenario, &state, s)?.aggregate;
        let ghost = sample_dataset(&state.population, scenario.n, scenario.nodes, &s.child(role::REPLACE))?;
        let mut total = 0.0;
        for k in 0..scenario.nodes {
            for i in 0..scenario.n {
                let z = ghost.node(k).point(i);
                let (_, replaced) = scenario.retrain_replaced(&state, s, i, k, z)?;
                total += scenario.loss(&state.models.aggregate, z)? - scenario.loss(&replaced, z)?;
            }
        }
        Ok((lhs, total / (scenario.n * scenario.nodes) as f64))
    })?;
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(PairedCheck::from_pairs(&lhs, &rhs))
}

/// `E[Δ_A]` against `(1/K²) Σ_k E[Δ_{A_k}]`, paired per trial.
pub fn per_node_equality_check(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<PairedCheck> {
    let samples = gen_error_samples(scenario, trials, seed)?;
    let k2 = (scenario.nodes * scenario.nodes) as f64;
    let lhs: Vec<f64> = samples.iter().map(|s| s.aggregate).collect();
    let rhs: Vec<f64> = samples.iter().map(|s| s.per_node.iter().sum::<f64>() / k2).collect();
    Ok(PairedCheck::from_pairs(&lhs, &rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseReport {
    pub datasets: usize,
    pub violations: usize,
    /// Largest observed `Δ_A(s) - (1/K) Σ Δ_{A_k}(s_k)`.
    pub max_excess: f64,
}

impl PathwiseReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `Δ_A(s) <= (1/K) Σ_k Δ_{A_k}(s_k)` on every sampled dataset.
pub fn pathwise_convexity_check(scenario: &Scenario, datasets: usize, seed: &SeedPath) -> Result<PathwiseReport> {
    let samples = gen_error_samples(scenario, datasets, seed)?;
    let mut report = PathwiseReport {
        datasets,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
    };
    for s in &samples {
        let mean = s.per_node.iter().sum::<f64>() / s.per_node.len() as f64;
        report.max_excess = report.max_excess.max(s.aggregate - mean);
        if !check_convexity_bound(s.aggregate, &s.per_node) {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Round-averaged SGD generalization gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdGenEstimate {
    pub estimate: Estimate,
    /// Gap of `Ŵ_t` at each round, averaged over trials.
    pub per_round: Vec<Estimate>,
}

/// Per-trial `(1/T) Σ_t [L(Ŵ_t) - (1/K) Σ_k ℓ(Ŵ_t, Z_{t,k})]`, with
/// minibatch losses averaged within the batch.
pub fn sgd_round_gaps(scenario: &Scenario, cfg: &SgdConfig, trials: usize, seed: &SeedPath) -> Result<Vec<Vec<f64>>> {
    scenario.validate()?;
    cfg.validate(scenario.n, scenario.spec.d)?;
    run_trials(trials, seed, |_, s| {
        let population = scenario.spec.realize(&s.child(role::TRUTH))?;
        let data = sample_dataset(&population, scenario.n, scenario.nodes, &s.child(role::DATA))?;
        let out = run_distributed_sgd(&data, scenario.form, &scenario.generator, cfg, &s.child(role::TRAIN))?;
        let traj = out.trajectory.expect("sgd records a trajectory");
        let pop_seed = s.child(role::POPULATION);
        traj.combined
            .iter()
            .zip(&traj.consumed)
            .enumerate()
            .map(|(t, (w_t, batches))| {
                let pop_term = scenario.population_risk(&population, w_t, &pop_seed.child(t as u64))?;
                let mut emp = 0.0;
                for (k, batch) in batches.iter().enumerate() {
                    let node = data.node(k);
                    emp += empirical_risk(scenario.form, &scenario.generator, w_t, batch.iter().map(|&i| node.point(i)))?;
                }
                Ok(pop_term - emp / batches.len() as f64)
            })
            .collect()
    })
}

pub fn sgd_gen_error(scenario: &Scenario, cfg: &SgdConfig, trials: usize, seed: &SeedPath) -> Result<SgdGenEstimate> {
    let gaps = sgd_round_gaps(scenario, cfg, trials, seed)?;
    let per_trial: Vec<f64> = gaps.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let per_round = (0..cfg.rounds)
        .map(|t| Estimate::from_samples(&gaps.iter().map(|g| g[t]).collect::<Vec<_>>()))
        .collect();
    Ok(SgdGenEstimate {
        estimate: Estimate::from_samples(&per_trial),
        per_round,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCheck {
    pub i: usize,
    pub k: usize,
    pub check: PairedCheck,
}

/// Monte Carlo comparison of the two sides of the linear-model stability
/// condition, averaged over `(i, k)` and per index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub averaged: PairedCheck,
    pub per_index: Vec<IndexCheck>,
}

impl StabilityReport {
    /// Averaged `lhs <= rhs` within `sigmas` standard errors.
    pub fn holds(&self, sigmas: f64) -> bool {
        self.averaged.at_most_within(sigmas)
    }

    pub fn holds_per_index(&self, sigmas: f64) -> bool {
        self.per_index.iter().all(|c| c.check.at_most_within(sigmas))
    }
}

/// `lhs = E[F(<X',A(S)>) - F(<X',A(S^{(i,k)})>)]` against
/// `rhs = (1/K) E[F(<X',A_k(S_k)>) - F(<X',A_k(S_k^{(i)})>)]`.
pub fn stability_condition_check(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<StabilityReport> {
    scenario.validate()?;
    if scenario.form != LossForm::LinearPrediction {
        return Err(Error::config("the stability check applies to linear prediction losses"));
    }
    let (n, kk) = (scenario.n, scenario.nodes);
    let f = |w: &[f64], x: &[f64]| -> f64 {
        let p: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        scenario.generator.value(&[p])
    };
    let per_trial = run_trials(trials, seed, |_, s| {
        let state = scenario.run_trial(s)?;
        let ghost = sample_dataset(&state.population, n, kk, &s.child(role::REPLACE))?;
        let mut out = Vec::with_capacity(n * kk);
        for k in 0..kk {
            for i in 0..n {
                let z = ghost.node(k).point(i);
                let PointRef::Labeled { x, .. } = z else {
                    return Err(Error::arg("stability check needs labeled data"));
                };
                let (w_k_rep, agg_rep) = scenario.retrain_replaced(&state, s, i, k, z)?;
                let lhs = f(&state.models.aggregate, x) - f(&agg_rep, x);
                let rhs = (f(&state.models.per_node[k], x) - f(&w_k_rep, x)) / kk as f64;
                out.push((lhs, rhs));
            }
        }
        Ok(out)
    })?;
    let avg = |side: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        per_trial
            .iter()
            .map(|v| v.iter().map(side).sum::<f64>() / v.len() as f64)
            .collect()
    };
    let averaged = PairedCheck::from_pairs(&avg(|p| p.0), &avg(|p| p.1));
    let per_index = (0..kk)
        .flat_map(|k| (0..n).map(move |i| (i, k)))
        .map(|(i, k)| {
            let idx = k * n + i;
            let lhs: Vec<f64> = per_trial.iter().map(|v| v[idx].0).collect();
            let rhs: Vec<f64> = per_trial.iter().map(|v| v[idx].1).collect();
            IndexCheck {
                i,
                k,
                check: PairedCheck::from_pairs(&lhs, &rhs),
            }
        })
        .collect();
    Ok(StabilityReport { averaged, per_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::LearningRate;

    fn seed() -> SeedPath {
        SeedPath::new(4242)
    }

    fn gaussian(d: usize, sigma2: f64, n: usize, k: usize) -> Scenario {
        Scenario::new(
            ProblemSpec::gaussian_location(vec![0.3; d], sigma2),
            NodeAlgorithm::SampleMean,
            n,
            k,
        )
    }

    fn regression(n: usize, k: usize) -> Scenario {
        Scenario::new(
            ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0),
            NodeAlgorithm::NormalEquations,
            n,
            k,
        )
    }

    #[test]
    fn empirical_risk_examples() {
        let g = Generator::SquaredNorm;
        let pts = |v: &'static [[f64; 1]]| v.iter().map(|z| PointRef::Location(z));
        assert_eq!(empirical_risk(LossForm::Location, &g, &[0.0], pts(&[[1.0], [-1.0]])).unwrap(), 1.0);
        assert_eq!(empirical_risk(LossForm::Location, &g, &[2.0], pts(&[[2.0], [2.0]])).unwrap(), 0.0);
        let r = empirical_risk(LossForm::Location, &g, &[1.0], pts(&[[0.0], [2.0], [4.0]])).unwrap();
        assert!((r - 11.0 / 3.0).abs() < 1e-15);
        assert!(empirical_risk(LossForm::Location, &g, &[1.0], pts(&[])).is_err());
    }

    #[test]
    fn zero_variance_gap_is_zero() {
        let sc = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 0.0), NodeAlgorithm::SampleMean, 5, 3);
        let s = gen_error_once(&sc, &seed()).unwrap();
        assert_eq!(s.aggregate, 0.0);
        assert!(s.per_node.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_matches_node_gap() {
        for sc in [gaussian(2, 1.0, 7, 1), regression(6, 1)] {
            let s = gen_error_once(&sc, &seed()).unwrap();
            assert!((s.aggregate - s.per_node[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_truth_single_node() {
        let est = expected_gen_error(&gaussian(1, 1.0, 10, 1), 100_000, &seed()).unwrap();
        assert!(est.aggregate.covers(0.2, 3.0, 0.0), "{est:?}");
    }

    #[test]
    fn expected_is_hand_average_of_trials() {
        let sc = gaussian(1, 1.0, 4, 2);
        let est = expected_gen_error(&sc, 2, &seed()).unwrap();
        let a = gen_error_once(&sc, &seed().child(0)).unwrap().aggregate;
        let b = gen_error_once(&sc, &seed().child(1)).unwrap().aggregate;
        assert_eq!(est.mean(), (a + b) / 2.0);
        assert!(expected_gen_error(&sc, 1, &seed()).is_err());
    }

    #[test]
    fn leave_one_out_zero_variance() {
        let sc = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 0.0), NodeAlgorithm::SampleMean, 3, 2);
        let c = leave_one_out_check(&sc, 50, &seed()).unwrap();
        assert_eq!(c.lhs.mean, 0.0);
        assert_eq!(c.rhs.mean, 0.0);
    }

    #[test]
    fn leave_one_out_identity_small() {
        let c = leave_one_out_check(&gaussian(1, 1.0, 2, 1), 20_000, &seed()).unwrap();
        assert!(c.equal_within(3.0), "{c:?}");
        let c = leave_one_out_check(&regression(10, 2), 2_000, &seed()).unwrap();
        assert!(c.equal_within(3.0), "{c:?}");
    }

    #[test]
    fn pathwise_holds_for_exact_erm() {
        let r = pathwise_convexity_check(&gaussian(2, 1.0, 5, 4), 2_000, &seed()).unwrap();
        assert!(r.holds(), "{r:?}");
        let r = pathwise_convexity_check(&regression(10, 3), 2_000, &seed()).unwrap();
        assert!(r.holds(), "{r:?}");
    }

    #[test]
    fn sgd_null_dynamics_gap() {
        let mut cfg = SgdConfig::new(5, LearningRate::Constant(0.0));
        cfg.init = Some(vec![0.3]);
        let est = sgd_gen_error(&gaussian(1, 1.0, 10, 3), &cfg, 20_000, &seed()).unwrap();
        assert!(est.estimate.covers(0.0, 3.0, 0.0), "{est:?}");
        let mean_of_rounds = est.per_round.iter().map(|e| e.mean).sum::<f64>() / 5.0;
        assert!((mean_of_rounds - est.estimate.mean).abs() < 1e-12);

        let still = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 0.0), NodeAlgorithm::SampleMean, 10, 3);
        let mut cfg0 = SgdConfig::new(5, LearningRate::Constant(0.1));
        cfg0.init = Some(vec![0.0]);
        assert_eq!(sgd_gen_error(&still, &cfg0, 10, &seed()).unwrap().estimate.mean, 0.0);
    }

    #[test]
    fn sgd_single_round_unrolled() {
        let sc = gaussian(1, 1.0, 3, 1);
        let cfg = SgdConfig::new(1, LearningRate::Constant(0.2));
        let gaps = sgd_round_gaps(&sc, &cfg, 3, &seed()).unwrap();
        for (t, g) in gaps.iter().enumerate() {
            let s = seed().child(t as u64);
            let pop = sc.spec.realize(&s.child(role::TRUTH)).unwrap();
            let data = sample_dataset(&pop, 3, 1, &s.child(role::DATA)).unwrap();
            let out = run_distributed_sgd(&data, sc.form, &sc.generator, &cfg, &s.child(role::TRAIN)).unwrap();
            let traj = out.trajectory.unwrap();
            let w = &traj.combined[0];
            let z = data.node(0).point(traj.consumed[0][0][0]);
            let expected = population_risk(&pop, sc.form, &sc.generator, w).unwrap() - sc.loss(w, z).unwrap();
            assert!((g[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn stability_condition_single_node_and_degenerate() {
        let c = stability_condition_check(&regression(6, 1), 2_000, &seed()).unwrap();
        assert!(c.averaged.equal_within(3.0));
        assert!(c.averaged.difference.mean.abs() < 1e-12);

        let still = Scenario::new(
            ProblemSpec::linear_regression(1, 0.0, 1.0, 1.0),
            NodeAlgorithm::NormalEquations,
            5,
            3,
        );
        let c = stability_condition_check(&still, 200, &seed()).unwrap();
        assert!(c.averaged.lhs.mean.abs() < 1e-12 && c.averaged.rhs.mean.abs() < 1e-12);
        assert!(stability_condition_check(&gaussian(1, 1.0, 5, 2), 10, &seed()).is_err());
    }

    #[test]
    fn mismatched_scenarios_rejected() {
        let bad = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 1.0), NodeAlgorithm::NormalEquations, 5, 2);
        assert!(matches!(gen_error_once(&bad, &seed()), Err(Error::Config(_))));
        let bad = Scenario::new(ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0), NodeAlgorithm::SampleMean, 5, 2);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn monte_carlo_risk_fallback() {
        let mut sc = gaussian(1, 1.0, 5, 2);
        sc.risk = RiskMethod::MonteCarlo { samples: 2_000 };
        let s = gen_error_once(&sc, &seed()).unwrap();
        sc.risk = RiskMethod::ClosedForm;
        let exact = gen_error_once(&sc, &seed()).unwrap();
        assert!((s.aggregate - exact.aggregate).abs() < 0.2);
    }

    #[test]
    fn trial_errors_name_the_trial() {
        let e = in_trial(7)(Error::Degenerate("singular Gram matrix".into()));
        assert_eq!(e, Error::Degenerate("trial 7: singular Gram matrix".into()));
        let e = in_trial(2)(Error::Divergence { round: 3, detail: "inf".into() });
        assert!(matches!(e, Error::Divergence { round: 3, ref detail } if detail == "trial 2: inf"));
    }
}

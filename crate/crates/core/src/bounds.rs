//! Bound formulas. Everything here is a pure function of its inputs except
//! [`estimate_sigma0`], which runs trials.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bregman::TailSpec;
use crate::error::{Error, Result};
use crate::generalization::{run_trials, Scenario};
use crate::problems::{ProblemKind, ProblemSpec};
use crate::rng::{role, SeedPath};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Centralized,
    PerNodeSamples,
    PerNodeDataset,
    Lipschitz,
    Privacy,
    Communication,
    Sgd,
    GaussianExampleOld,
    GaussianExampleNew,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Centralized => "centralized",
            BoundKind::PerNodeSamples => "per-node-samples",
            BoundKind::PerNodeDataset => "per-node-dataset",
            BoundKind::Lipschitz => "lipschitz",
            BoundKind::Privacy => "privacy",
            BoundKind::Communication => "communication",
            BoundKind::Sgd => "sgd",
            BoundKind::GaussianExampleOld => "gaussian-example-old",
            BoundKind::GaussianExampleNew => "gaussian-example-new",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub kind: BoundKind,
    /// Every argument, for audit.
    pub inputs: serde_json::Value,
    /// Set when an infinite information input made the bound vacuous.
    pub infinite: bool,
}

impl BoundValue {
    fn new(kind: BoundKind, value: f64, inputs: serde_json::Value) -> Self {
        BoundValue {
            value,
            kind,
            inputs,
            infinite: value == f64::INFINITY,
        }
    }
}

fn check_mi(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(**v >= 0.0)) {
        Some(v) => Err(Error::arg(format!("information inputs must be >= 0, got {v}"))),
        None => Ok(()),
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::arg("K must be at least 1"));
    }
    Ok(())
}

fn tail_json(tail: &TailSpec) -> serde_json::Value {
    match tail {
        TailSpec::SubGaussian { r2 } => json!({ "sub_gaussian_r2": r2 }),
        TailSpec::GeneralPsi { b, .. } => json!({ "general_psi_b": b }),
    }
}

fn finite_or_null(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

/// `(1/n) Σ_i ψ*⁻¹(I(W; Z_i))`.
pub fn bound_centralized(tail: &TailSpec, mi_per_sample: &[f64], n: usize) -> Result<BoundValue> {
    if mi_per_sample.len() != n || n == 0 {
        return Err(Error::arg(format!("expected {n} per-sample terms, got {}", mi_per_sample.len())));
    }
    check_mi(mi_per_sample)?;
    let mut total = 0.0;
    for &y in mi_per_sample {
        total += tail.psi_star_inverse(y)?;
    }
    Ok(BoundValue::new(
        BoundKind::Centralized,
        total / n as f64,
        json!({ "tail": tail_json(tail), "mi": finite_or_null(mi_per_sample), "n": n }),
    ))
}

/// `(1/nK²) Σ_{i,k} ψ*⁻¹(I(W_k; Z_{i,k}))`; `mi_matrix[k][i]`.
pub fn bound_per_node_samples(tail: &TailSpec, mi_matrix: &[Vec<f64>], n: usize, k: usize) -> Result<BoundValue> {
    check_k(k)?;
    if n == 0 || mi_matrix.len() != k || mi_matrix.iter().any(|row| row.len() != n) {
        return Err(Error::arg(format!("expected a {k}x{n} information matrix")));
    }
    let mut total = 0.0;
    for row in mi_matrix {
        check_mi(row)?;
        for &y in row {
            total += tail.psi_star_inverse(y)?;
        }
    }
    let rows: Vec<_> = mi_matrix.iter().map(|r| finite_or_null(r)).collect();
    Ok(BoundValue::new(
        BoundKind::PerNodeSamples,
        total / (n * k * k) as f64,
        json!({ "tail": tail_json(tail), "mi": rows, "n": n, "K": k }),
    ))
}

/// `(1/K²) Σ_k ψ*⁻¹(I(W_k; S_k) / n)`. Infinite inputs give an infinite,
/// flagged bound.
pub fn bound_per_node_dataset(tail: &TailSpec, mi_dataset: &[f64], n: usize, k: usize) -> Result<BoundValue> {
    check_k(k)?;
    if n == 0 || mi_dataset.len() != k {
        return Err(Error::arg(format!("expected {k} dataset terms, got {}", mi_dataset.len())));
    }
    check_mi(mi_dataset)?;
    let mut total = 0.0;
    for &y in mi_dataset {
        total += tail.psi_star_inverse(y / n as f64)?;
    }
    Ok(BoundValue::new(
        BoundKind::PerNodeDataset,
        total / (k * k) as f64,
        json!({ "tail": tail_json(tail), "mi": finite_or_null(mi_dataset), "n": n, "K": k }),
    ))
}

/// `2 C σ₀ / K`.
pub fn bound_lipschitz(c: f64, sigma0: f64, k: usize) -> Result<BoundValue> {
    check_k(k)?;
    if !(c >= 0.0 && sigma0 >= 0.0) {
        return Err(Error::arg(format!("need C >= 0 and σ₀ >= 0, got {c}, {sigma0}")));
    }
    Ok(BoundValue::new(
        BoundKind::Lipschitz,
        2.0 * c * sigma0 / k as f64,
        json!({ "C": c, "sigma0": sigma0, "K": k }),
    ))
}

fn check_r2(r2: f64) -> Result<()> {
    if !(r2 > 0.0 && r2.is_finite()) {
        return Err(Error::arg(format!("R² must be positive, got {r2}")));
    }
    Ok(())
}

/// `(1/K) √(2R² min{ε, (e-1)ε²} / n)` for ε-differentially private nodes.
pub fn bound_privacy(r2: f64, epsilon: f64, n: usize, k: usize) -> Result<BoundValue> {
    check_k(k)?;
    check_r2(r2)?;
    if !(epsilon > 0.0) || n == 0 {
        return Err(Error::arg(format!("need ε > 0 and n >= 1, got ε={epsilon}, n={n}")));
    }
    let info = epsilon.min((std::f64::consts::E - 1.0) * epsilon * epsilon);
    Ok(BoundValue::new(
        BoundKind::Privacy,
        (2.0 * r2 * info / n as f64).sqrt() / k as f64,
        json!({ "R2": r2, "epsilon": epsilon, "n": n, "K": k }),
    ))
}

/// `(1/K) √(2 ln2 R² B / n)` for models described by `B` bits.
pub fn bound_communication(r2: f64, bits: u64, n: usize, k: usize) -> Result<BoundValue> {
    check_k(k)?;
    check_r2(r2)?;
    if bits == 0 || n == 0 {
        return Err(Error::arg(format!("need B >= 1 bits and n >= 1, got B={bits}, n={n}")));
    }
    Ok(BoundValue::new(
        BoundKind::Communication,
        (2.0 * std::f64::consts::LN_2 * r2 * bits as f64 / n as f64).sqrt() / k as f64,
        json!({ "R2": r2, "bits": bits, "n": n, "K": k }),
    ))
}

/// `(1/T) Σ_t (1/K²) Σ_k √(2R² I(W_k^t; Z_{t,k}))`; `mi_rounds[t][k]`.
pub fn bound_sgd(r2: f64, mi_rounds: &[Vec<f64>], k: usize, t: usize) -> Result<BoundValue> {
    check_k(k)?;
    check_r2(r2)?;
    if t == 0 || mi_rounds.len() != t || mi_rounds.iter().any(|row| row.len() != k) {
        return Err(Error::arg(format!("expected a {t}x{k} information matrix")));
    }
    let mut total = 0.0;
    for row in mi_rounds {
        check_mi(row)?;
        total += row.iter().map(|&y| (2.0 * r2 * y).sqrt()).sum::<f64>() / (k * k) as f64;
    }
    let rows: Vec<_> = mi_rounds.iter().map(|r| finite_or_null(r)).collect();
    Ok(BoundValue::new(
        BoundKind::Sgd,
        total / t as f64,
        json!({ "R2": r2, "mi": rows, "K": k, "T": t }),
    ))
}

/// Absolute slack allowed in [`check_convexity_bound`].
pub const CONVEXITY_TOL: f64 = 1e-9;

/// `Δ_A(s) <= (1/K) Σ_k Δ_{A_k}(s_k)` on one dataset.
pub fn check_convexity_bound(aggregate: f64, per_node: &[f64]) -> bool {
    let mean = per_node.iter().sum::<f64>() / per_node.len() as f64;
    aggregate <= mean + CONVEXITY_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianExample {
    pub old: BoundValue,
    pub new: BoundValue,
    /// `2σ²d / nK`.
    pub truth: f64,
}

/// `ψ*⁻¹(y) = 2√(d(1 + 1/m)²σ⁴y)` written as a sub-Gaussian tail.
pub fn gaussian_mean_tail(m: usize, d: usize, sigma2: f64) -> Result<TailSpec> {
    let c = 1.0 + 1.0 / m as f64;
    TailSpec::sub_gaussian(2.0 * d as f64 * c * c * sigma2 * sigma2)
}

/// End-to-end and per-node bounds for the sample mean of Gaussian data,
/// evaluated through the generic bound formulas with the closed-form
/// information terms.
pub fn gaussian_example_bounds(n: usize, k: usize, d: usize, sigma2: f64) -> Result<GaussianExample> {
    if n < 2 || k == 0 || d == 0 || !(sigma2 > 0.0) {
        return Err(Error::arg(format!(
            "need n >= 2, K >= 1, d >= 1, σ² > 0; got n={n}, K={k}, d={d}, σ²={sigma2}"
        )));
    }
    let m = n * k;
    let mi_old = crate::infotheory::closed_form_mi_gaussian_mean(n, k, d)?;
    let old = bound_centralized(&gaussian_mean_tail(m, d, sigma2)?, &vec![mi_old; m], m)?;
    let mi_new = crate::infotheory::closed_form_mi_gaussian_mean(n, 1, d)?;
    let new = bound_per_node_samples(&gaussian_mean_tail(n, d, sigma2)?, &vec![vec![mi_new; n]; k], n, k)?;
    let inputs = json!({ "n": n, "K": k, "d": d, "sigma2": sigma2 });
    Ok(GaussianExample {
        old: BoundValue::new(BoundKind::GaussianExampleOld, old.value, inputs.clone()),
        new: BoundValue::new(BoundKind::GaussianExampleNew, new.value, inputs),
        truth: 2.0 * sigma2 * d as f64 / m as f64,
    })
}

/// `max_k E‖W_k - E[W_k]‖₂`, two passes: the mean from `trials` trials, the
/// deviation from a fresh `trials` trials.
pub fn estimate_sigma0(scenario: &Scenario, trials: usize, seed: &SeedPath) -> Result<f64> {
    if trials < 2 {
        return Err(Error::config("σ₀ estimation needs at least 2 trials"));
    }
    scenario.validate()?;
    let pass = |p: u64| run_trials(trials, &seed.child2(role::PASS, p), |_, s| Ok(scenario.run_trial(s)?.models.per_node));
    let first = pass(0)?;
    let d = scenario.spec.d;
    let mut means = vec![vec![0.0; d]; scenario.nodes];
    for models in &first {
        for (m, w) in means.iter_mut().zip(models) {
            m.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
    }
    means.iter_mut().flatten().for_each(|v| *v /= trials as f64);
    let second = pass(1)?;
    let mut best: f64 = 0.0;
    for (k, mean) in means.iter().enumerate() {
        let dev: Vec<f64> = second
            .iter()
            .map(|models| models[k].iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        best = best.max(Estimate::from_samples(&dev).mean);
    }
    Ok(best)
}

/// Variance of product-marginal losses, used as the sub-Gaussian `R²`.
pub fn sub_gaussian_r2(cross_losses: &[f64]) -> Result<f64> {
    if cross_losses.len() < 2 {
        return Err(Error::arg("R² estimation needs at least 2 losses"));
    }
    let v = Estimate::from_samples(cross_losses).std_dev().powi(2);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Degenerate(format!("loss variance {v} cannot serve as R²")));
    }
    Ok(v)
}

/// Lipschitz constant, averaged over the data, of the squared location loss
/// for models confined to the ball of radius `radius`:
/// `|ℓ(w,z) - ℓ(w',z)| <= (2r + 2‖z‖)‖w - w'‖`, with `E‖Z‖` bounded by
/// `√(‖μ‖² + σ²d)`.
pub fn certified_lipschitz_clipped_mean(spec: &ProblemSpec, radius: f64) -> Result<f64> {
    if spec.kind != ProblemKind::GaussianLocation {
        return Err(Error::Unsupported("certified constant is for location data".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::arg(format!("radius must be >= 0, got {radius}")));
    }
    let mu2: f64 = spec.location_mean().iter().map(|m| m * m).sum();
    Ok(2.0 * radius + 2.0 * (mu2 + spec.sigma2 * spec.d as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::NodeAlgorithm;
    use proptest::prelude::*;

    fn sg(r2: f64) -> TailSpec {
        TailSpec::sub_gaussian(r2).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn centralized_examples() {
        assert_eq!(bound_centralized(&sg(1.0), &[0.0; 3], 3).unwrap().value, 0.0);
        assert!(close(bound_centralized(&sg(1.0), &[0.5, 0.5], 2).unwrap().value, 1.0, 1e-15));
        assert!(bound_centralized(&sg(1.0), &[-0.1, 0.5], 2).is_err());
        assert!(bound_centralized(&sg(1.0), &[0.5], 2).is_err());
    }

    #[test]
    fn per_node_examples() {
        let m = vec![vec![0.5; 2]; 2];
        assert!(close(bound_per_node_samples(&sg(1.0), &m, 2, 2).unwrap().value, 0.5, 1e-15));
        assert_eq!(bound_per_node_samples(&sg(1.0), &[vec![0.0; 4]], 4, 1).unwrap().value, 0.0);
        assert!(bound_per_node_samples(&sg(1.0), &m, 3, 2).is_err());
        let row = vec![0.1, 0.3, 0.2];
        assert_eq!(
            bound_per_node_samples(&sg(2.0), std::slice::from_ref(&row), 3, 1).unwrap().value,
            bound_centralized(&sg(2.0), &row, 3).unwrap().value
        );
        assert!(close(bound_per_node_dataset(&sg(1.0), &[1.0, 1.0], 2, 2).unwrap().value, 0.5, 1e-15));
        assert_eq!(bound_per_node_dataset(&sg(1.0), &[0.0, 0.0], 2, 2).unwrap().value, 0.0);
        let inf = bound_per_node_dataset(&sg(1.0), &[f64::INFINITY, 0.2], 2, 2).unwrap();
        assert!(inf.infinite && inf.value.is_infinite());
    }

    #[test]
    fn closed_form_corollaries() {
        let l = bound_lipschitz(1.0, 0.5, 10).unwrap().value;
        assert!(close(l, 0.1, 1e-15));
        assert_eq!(bound_lipschitz(1.0, 0.0, 10).unwrap().value, 0.0);
        assert_eq!(bound_lipschitz(3.0, 0.7, 8).unwrap().value * 2.0, bound_lipschitz(3.0, 0.7, 4).unwrap().value);

        let p = bound_privacy(1.0, 0.1, 10, 1).unwrap().value;
        assert!(close(p, (2.0 * (std::f64::consts::E - 1.0) * 0.01 / 10.0).sqrt(), 1e-15));
        assert!(close(p, 0.05862, 5e-6));
        assert!(close(bound_privacy(1.0, 10.0, 10, 3).unwrap().value, (2.0f64 * 10.0 / 10.0).sqrt() / 3.0, 1e-15));
        assert!(bound_privacy(1.0, 0.0, 10, 1).is_err());

        let c = bound_communication(1.0, 1, 10, 1).unwrap().value;
        assert!(close(c, 0.37233, 5e-6));
        assert!(close(bound_communication(1.0, 4, 10, 1).unwrap().value, 2.0 * c, 1e-15));
        assert!(bound_communication(1.0, 0, 10, 1).is_err());
    }

    #[test]
    fn sgd_examples() {
        assert_eq!(bound_sgd(1.0, &vec![vec![0.0; 2]; 3], 2, 3).unwrap().value, 0.0);
        assert!(close(bound_sgd(1.0, &[vec![0.5]], 1, 1).unwrap().value, 1.0, 1e-15));
        for t in [1, 4, 9] {
            let v = bound_sgd(2.0, &vec![vec![0.3; 3]; t], 3, t).unwrap().value;
            assert!(close(v, (2.0f64 * 2.0 * 0.3).sqrt() / 3.0, 1e-15));
        }
        assert!(bound_sgd(1.0, &[vec![0.5]], 2, 1).is_err());
    }

    #[test]
    fn convexity_check() {
        assert!(check_convexity_bound(0.3, &[0.3]));
        assert!(check_convexity_bound(0.1, &[0.3, 0.1]));
        assert!(!check_convexity_bound(0.3, &[0.3, 0.1]));
    }

    /// The three closed forms as stated, independent of the bound plumbing.
    fn example_oracle(n: f64, k: f64, d: f64, s2: f64) -> (f64, f64, f64) {
        let m = n * k;
        let old = s2 * d * (2.0 * (1.0 + 1.0 / m).powi(2) * (m / (m - 1.0)).ln()).sqrt();
        let new = s2 * d / k * (2.0 * (1.0 + 1.0 / n).powi(2) * (n / (n - 1.0)).ln()).sqrt();
        (old, new, 2.0 * s2 * d / m)
    }

    #[test]
    fn gaussian_example_values() {
        let g = gaussian_example_bounds(10, 4, 1, 1.0).unwrap();
        assert!(close(g.truth, 0.05, 1e-15));
        assert!(close(g.old.value, 0.23065, 5e-5), "{}", g.old.value);
        assert!(close(g.new.value, 0.12624, 5e-5), "{}", g.new.value);
        let g1 = gaussian_example_bounds(10, 1, 1, 1.0).unwrap();
        assert!(close(g1.old.value, g1.new.value, 1e-15));
        for n in 2..=100 {
            for k in 1..=100 {
                let g = gaussian_example_bounds(n, k, 1, 1.0).unwrap();
                let (o, w, _) = example_oracle(n as f64, k as f64, 1.0, 1.0);
                assert!(close(g.old.value, o, 1e-12 * o) && close(g.new.value, w, 1e-12 * w));
                assert!(g.truth <= g.new.value && g.new.value <= g.old.value * (1.0 + 1e-12), "n={n} K={k}");
            }
        }
        let (o, w, _) = example_oracle(7.0, 3.0, 2.0, 0.5);
        let g = gaussian_example_bounds(7, 3, 2, 0.5).unwrap();
        assert!(close(g.old.value, o, 1e-12) && close(g.new.value, w, 1e-12));
    }

    #[test]
    fn gaussian_example_ratio_slope() {
        let ks: Vec<f64> = (2..=6).map(|p| 2f64.powi(p)).collect();
        let ratio: Vec<f64> = ks
            .iter()
            .map(|&k| {
                let g = gaussian_example_bounds(10, k as usize, 1, 1.0).unwrap();
                g.new.value / g.old.value
            })
            .collect();
        let slope = crate::stats::log_log_slope(&ks, &ratio);
        assert!((slope + 0.5).abs() <= 0.05, "{slope}");
    }

    #[test]
    fn sigma0_examples() {
        let seed = SeedPath::new(5);
        let still = Scenario::new(ProblemSpec::gaussian_location(vec![1.0], 0.0), NodeAlgorithm::SampleMean, 10, 2);
        assert_eq!(estimate_sigma0(&still, 10, &seed).unwrap(), 0.0);
        let sc = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 1.0), NodeAlgorithm::SampleMean, 10, 1);
        let s0 = estimate_sigma0(&sc, 100_000, &seed).unwrap();
        let oracle = (2.0 / (std::f64::consts::PI * 10.0)).sqrt();
        // half-normal standard deviation sqrt(1 - 2/π) * sd(W)
        let se = (1.0 - 2.0 / std::f64::consts::PI).sqrt() * 0.1f64.sqrt() / 100_000f64.sqrt();
        assert!((s0 - oracle).abs() < 3.0 * se + 1e-3, "{s0} vs {oracle}");
        let scaled = Scenario::new(ProblemSpec::gaussian_location(vec![0.0], 4.0), NodeAlgorithm::SampleMean, 10, 1);
        assert!(close(estimate_sigma0(&scaled, 1_000, &seed).unwrap(), 2.0 * estimate_sigma0(&sc, 1_000, &seed).unwrap(), 1e-12));
    }

    #[test]
    fn r2_and_lipschitz_helpers() {
        assert!(close(sub_gaussian_r2(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 5.0 / 3.0, 1e-15));
        assert!(sub_gaussian_r2(&[1.0]).is_err());
        assert!(sub_gaussian_r2(&[1.0, 1.0]).is_err());
        let spec = ProblemSpec::gaussian_location(vec![3.0, 0.0], 4.0);
        assert!(close(certified_lipschitz_clipped_mean(&spec, 1.0).unwrap(), 2.0 + 2.0 * 17f64.sqrt(), 1e-15));
    }

    proptest! {
        #[test]
        fn bounds_monotone_and_nonnegative(a in 0.0f64..5.0, b in 0.0f64..5.0, r2 in 0.01f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let tail = sg(r2);
            let c_lo = bound_centralized(&tail, &[lo, 0.3], 2).unwrap().value;
            let c_hi = bound_centralized(&tail, &[hi, 0.3], 2).unwrap().value;
            prop_assert!(0.0 <= c_lo && c_lo <= c_hi);
            let s_lo = bound_sgd(r2, &[vec![lo, 0.1]], 2, 1).unwrap().value;
            let s_hi = bound_sgd(r2, &[vec![hi, 0.1]], 2, 1).unwrap().value;
            prop_assert!(0.0 <= s_lo && s_lo <= s_hi);
        }

        #[test]
        fn dataset_bound_dominates_sample_bound(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..2.0, 4), 1..5), r2 in 0.1f64..4.0) {
            let k = rows.len();
            let tail = sg(r2);
            let dataset: Vec<f64> = rows.iter().map(|r| crate::infotheory::dataset_mi_proxy(r)).collect();
            let a = bound_per_node_dataset(&tail, &dataset, 4, k).unwrap().value;
            let b = bound_per_node_samples(&tail, &rows, 4, k).unwrap().value;
            prop_assert!(a >= b - 1e-12);
        }
    }
}

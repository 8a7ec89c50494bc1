//! Self-check suite: runs each module's properties on configurable sizes
//! and reports one row per property.

use genbound_core::bounds::{
    bound_lipschitz, certified_lipschitz_clipped_mean, estimate_sigma0, gaussian_example_bounds,
};
use genbound_core::bregman::{psi_star_inverse_numeric, psi_star_inverse_subgaussian};
use genbound_core::generalization::{
    stability_condition_check, expected_gen_error, leave_one_out_check, pathwise_convexity_check, per_node_equality_check,
};
use genbound_core::infotheory::{estimate_mi_plugin, BinRange, BinningSpec};
use genbound_core::stats::EXACT_TOL;
use genbound_core::{NodeAlgorithm, PairedCheck, ProblemSpec, Scenario, SeedPath};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::output::{fmt_f64, OutputDir, Table};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub property: String,
    pub passed: bool,
    pub statistic: f64,
    pub tolerance: f64,
}

fn paired_row(property: &str, c: &PairedCheck, one_sided: bool) -> CheckRow {
    let passed = if one_sided { c.at_most_within(3.0) } else { c.equal_within(3.0) };
    CheckRow {
        property: property.to_string(),
        passed,
        statistic: c.z_score(),
        tolerance: 3.0,
    }
}

fn gaussian(cfg: &ExperimentConfig, n: usize, k: usize) -> Scenario {
    let mut sc = Scenario::new(
        ProblemSpec::gaussian_location(vec![0.5], cfg.problem.sigma2),
        NodeAlgorithm::SampleMean,
        n,
        k,
    );
    sc.aggregation = cfg.aggregation;
    sc
}

fn regression(cfg: &ExperimentConfig, n: usize, k: usize) -> Scenario {
    let mut sc = Scenario::new(
        ProblemSpec::linear_regression(1, cfg.problem.sigma2, 1.0, 1.0),
        NodeAlgorithm::NormalEquations,
        n,
        k,
    );
    sc.aggregation = cfg.aggregation;
    sc
}

/// Independent uniforms on 16 bins and identical uniforms on 4 bins.
fn mi_sanity(seed: &SeedPath) -> Result<(CheckRow, CheckRow), CliError> {
    let m = 100_000;
    let mut rng = seed.rng();
    let u: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let indep = estimate_mi_plugin(&u, &v, &BinningSpec::square(16))?.nats;
    let fixed = BinningSpec {
        range: BinRange::Fixed { u: [0.0, 1.0], v: [0.0, 1.0] },
        ..BinningSpec::square(4)
    };
    let same = estimate_mi_plugin(&u, &u, &fixed)?.nats;
    let rel = (same / 4f64.ln() - 1.0).abs();
    Ok((
        CheckRow {
            property: "mi_independent_pairs".into(),
            passed: indep <= 0.01,
            statistic: indep,
            tolerance: 0.01,
        },
        CheckRow {
            property: "mi_identical_pairs".into(),
            passed: rel <= 0.01,
            statistic: rel,
            tolerance: 0.01,
        },
    ))
}

/// Largest relative gap between the numeric and closed-form inverse duals
/// over `y ∈ logspace(1e-4, 10)` and `R² ∈ {0.5, 1, 4}`.
pub fn psi_agreement(points: usize) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for r2 in [0.5, 1.0, 4.0] {
        let psi = move |l: f64| r2 * l * l / 2.0;
        for j in 0..points {
            let y = 10f64.powf(-4.0 + 5.0 * j as f64 / (points - 1) as f64);
            let exact = psi_star_inverse_subgaussian(r2, y)?;
            let numeric = psi_star_inverse_numeric(&psi, f64::INFINITY, y)?;
            worst = worst.max((numeric - exact).abs() / exact);
        }
    }
    Ok(worst)
}

/// Largest violation of `truth <= new <= old` over the closed-form grid.
pub fn gaussian_grid_violation() -> Result<f64, CliError> {
    let mut worst = f64::NEG_INFINITY;
    for n in 2..=100 {
        for k in 1..=100 {
            let g = gaussian_example_bounds(n, k, 1, 1.0)?;
            worst = worst.max(g.truth - g.new.value).max(g.new.value - g.old.value);
        }
    }
    Ok(worst)
}

/// Measured gap of the clipped-mean model against `2Cσ₀/K`, one-sided.
pub fn lipschitz_check(problem: &ProblemSpec, n: usize, k: usize, radius: f64, trials: usize, seed: &SeedPath) -> Result<CheckRow, CliError> {
    let sc = Scenario::new(problem.clone(), NodeAlgorithm::ClippedMean { radius }, n, k);
    let gen = expected_gen_error(&sc, trials, &seed.child(0))?;
    let sigma0 = estimate_sigma0(&sc, trials, &seed.child(1))?;
    let c = certified_lipschitz_clipped_mean(problem, radius)?;
    let bound = bound_lipschitz(c, sigma0, k)?.value;
    let slack = bound + 3.0 * gen.std_error() + EXACT_TOL;
    Ok(CheckRow {
        property: format!("lipschitz_bound_K{k}"),
        passed: gen.mean() <= slack,
        statistic: gen.mean() - bound,
        tolerance: 3.0 * gen.std_error() + EXACT_TOL,
    })
}

pub fn compute_check(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CheckRow>, CliError> {
    let m = cfg.m_outer;
    let base = SeedPath::new(seed);
    let s = |j: u64| base.child(j);
    let mut rows = Vec::new();
    log::info!("check: leave-one-out identity");
    rows.push(paired_row("loo_identity_gaussian_n2_K1", &leave_one_out_check(&gaussian(cfg, 2, 1), m, &s(1))?, false));
    rows.push(paired_row("loo_identity_regression_n10_K2", &leave_one_out_check(&regression(cfg, 10, 2), m, &s(2))?, false));

    log::info!("check: pathwise convexity");
    for (name, sc, j) in [
        ("pathwise_gaussian_n10_K5", gaussian(cfg, 10, 5), 3),
        ("pathwise_regression_n10_K3", regression(cfg, 10, 3), 4),
    ] {
        let r = pathwise_convexity_check(&sc, m.min(10_000), &s(j))?;
        rows.push(CheckRow {
            property: name.into(),
            passed: r.holds(),
            statistic: r.max_excess,
            tolerance: genbound_core::bounds::CONVEXITY_TOL,
        });
    }

    log::info!("check: per-node equality");
    for (k, j) in [(2, 5), (5, 6)] {
        let c = per_node_equality_check(&gaussian(cfg, 10, k), m, &s(j))?;
        rows.push(paired_row(&format!("per_node_equality_K{k}"), &c, false));
    }

    log::info!("check: linear stability condition");
    let stability = stability_condition_check(&regression(cfg, 10, 2), m.min(20_000), &s(7))?;
    rows.push(paired_row("stability_condition_averaged", &stability.averaged, true));

    log::info!("check: estimator sanity");
    let (indep, same) = mi_sanity(&s(8))?;
    rows.push(indep);
    rows.push(same);
    let psi = psi_agreement(200)?;
    rows.push(CheckRow {
        property: "psi_star_inverse_agreement".into(),
        passed: psi <= 1e-9,
        statistic: psi,
        tolerance: 1e-9,
    });

    log::info!("check: lipschitz bound");
    let problem = ProblemSpec::gaussian_location(vec![0.5], cfg.problem.sigma2);
    rows.push(lipschitz_check(&problem, 10, 5, 1.0, m.min(20_000), &s(9))?);

    let grid = gaussian_grid_violation()?;
    rows.push(CheckRow {
        property: "gaussian_example_ordering".into(),
        passed: grid <= 1e-12,
        statistic: grid,
        tolerance: 1e-12,
    });
    Ok(rows)
}

pub fn run_check(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let rows = compute_check(cfg, seed)?;
    let mut t = Table::new(&["property", "status", "statistic", "tolerance"]);
    for r in &rows {
        log::info!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.property);
        t.push(vec![
            r.property.clone(),
            if r.passed { "PASS" } else { "FAIL" }.into(),
            fmt_f64(r.statistic),
            fmt_f64(r.tolerance),
        ]);
    }
    out.write_table("check.csv", &t)?;
    Ok(rows.iter().all(|r| r.passed))
}

//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p genbound-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use genbound_cli::check::{gaussian_grid_violation, lipschitz_check, psi_agreement};
use genbound_cli::experiments::compute_linreg_fig2;
use genbound_cli::{run, Command, ExperimentConfig};
use genbound_core::bounds::{bound_communication, bound_privacy, sub_gaussian_r2};
use genbound_core::generalization::{
    expected_gen_error, leave_one_out_check, pathwise_convexity_check, per_node_equality_check,
};
use genbound_core::infotheory::{
    closed_form_mi_gaussian_mean, estimate_mi_plugin, gather_mi_samples, mi_sensitivity_sweep, BinRange,
    BinningSpec, MiTarget, Pairing,
};
use genbound_core::stats::{log_log_slope, EXACT_TOL};
use genbound_core::training::{PrivacyMech, Quantizer};
use genbound_core::{NodeAlgorithm, ProblemSpec, Scenario, SeedPath};
use rand::Rng;

type Outcome = Result<(bool, String), String>;

fn seed(label: u64) -> SeedPath {
    SeedPath::new(20_240_901).child(label)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gaussian(d: usize, n: usize, k: usize, alg: NodeAlgorithm) -> Scenario {
    Scenario::new(ProblemSpec::gaussian_location(vec![0.3; d], 1.0), alg, n, k)
}

fn regression(n: usize, k: usize) -> Scenario {
    Scenario::new(
        ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0),
        NodeAlgorithm::NormalEquations,
        n,
        k,
    )
}

fn c1_gaussian_truth() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [1, 5] {
        for k in [1, 2, 5, 10] {
            let start = Instant::now();
            let est = expected_gen_error(&gaussian(d, 10, k, NodeAlgorithm::SampleMean), 100_000, &seed(100 + (d * 100 + k) as u64))
                .map_err(err)?;
            let took = start.elapsed();
            let truth = 2.0 * d as f64 / (10 * k) as f64;
            let z = (est.mean() - truth) / est.std_error();
            let cell = z.abs() <= 3.0 && took <= Duration::from_secs(60);
            ok &= cell;
            notes.push(format!("d={d} K={k} z={z:+.2} {}", secs(took)));
        }
    }
    Ok((ok, notes.join("; ")))
}

fn c2_mi_recovery() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [1, 2, 5] {
        let start = Instant::now();
        let sc = gaussian(1, 10, k, NodeAlgorithm::SampleMean);
        let s = gather_mi_samples(&sc, &[MiTarget::Aggregate { node: 0, index: 0 }], 1_000_000, Pairing::default(), &seed(200 + k as u64))
            .map_err(err)?;
        let col = &s[0].columns[0];
        let est = estimate_mi_plugin(&col.u, &col.v, &BinningSpec::square(32)).map_err(err)?;
        let sweep = mi_sensitivity_sweep(&col.u, &col.v, &[16, 32, 64], &BinningSpec::default()).map_err(err)?;
        let took = start.elapsed();
        let cf = closed_form_mi_gaussian_mean(10, k, 1).map_err(err)?;
        let rel = (est.nats / cf - 1.0).abs();
        let spread = sweep.spread / sweep.median;
        ok &= rel <= 0.15 && spread <= 0.15 && took <= Duration::from_secs(300);
        notes.push(format!("K={k} rel_err={rel:.3} sweep_spread={spread:.3} {}", secs(took)));
    }
    Ok((ok, notes.join("; ")))
}

fn c3_fig2() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::for_problem(ProblemSpec::linear_regression(1, 1.0, 1.0, 1.0));
    let rows = compute_linreg_fig2(&cfg, 3).map_err(err)?;
    let took = start.elapsed();
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let new_slope = log_log_slope(&ks, &rows.iter().map(|r| r.new_bound).collect::<Vec<_>>());
    let old_slope = log_log_slope(&ks, &rows.iter().map(|r| r.old_bound).collect::<Vec<_>>());
    let ordered = rows.iter().all(|r| r.ordered());
    for r in &rows {
        println!(
            "    K={:>2} true={:.5} (se {:.5}) new={:.5} old={:.5} mi_new={:.5} mi_old={:.5} r2_new={:.3} r2_old={:.3}",
            r.k, r.true_gen, r.se_true, r.new_bound, r.old_bound, r.mi_new, r.mi_old, r.r2_new, r.r2_old
        );
    }
    let ok = ordered
        && (-1.2..=-0.8).contains(&new_slope)
        && (-0.75..=-0.25).contains(&old_slope)
        && took <= Duration::from_secs(900);
    Ok((
        ok,
        format!("ordered={ordered} new_slope={new_slope:.3} old_slope={old_slope:.3} {}", secs(took)),
    ))
}

fn c4_leave_one_out() -> Outcome {
    let a = leave_one_out_check(&gaussian(1, 2, 1, NodeAlgorithm::SampleMean), 100_000, &seed(400)).map_err(err)?;
    let b = leave_one_out_check(&regression(10, 2), 100_000, &seed(401)).map_err(err)?;
    Ok((
        a.equal_within(3.0) && b.equal_within(3.0),
        format!("gaussian z={:+.2}; regression z={:+.2}", a.z_score(), b.z_score()),
    ))
}

fn c5_pathwise() -> Outcome {
    let a = pathwise_convexity_check(&gaussian(1, 10, 5, NodeAlgorithm::SampleMean), 10_000, &seed(500)).map_err(err)?;
    let b = pathwise_convexity_check(&regression(10, 5), 10_000, &seed(501)).map_err(err)?;
    Ok((
        a.holds() && b.holds(),
        format!(
            "gaussian violations={} max_excess={:.3e}; regression violations={} max_excess={:.3e}",
            a.violations, a.max_excess, b.violations, b.max_excess
        ),
    ))
}

fn c6_per_node_equality() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [2, 5] {
        let c = per_node_equality_check(&gaussian(1, 10, k, NodeAlgorithm::SampleMean), 100_000, &seed(600 + k as u64))
            .map_err(err)?;
        ok &= c.equal_within(3.0);
        notes.push(format!("K={k} z={:+.2}", c.z_score()));
    }
    Ok((ok, notes.join("; ")))
}

fn c7_psi() -> Outcome {
    let worst = psi_agreement(200).map_err(err)?;
    Ok((worst <= 1e-9, format!("max relative gap {worst:.2e} over 600 points")))
}

fn c8_mi_sanity() -> Outcome {
    let mut rng = seed(800).rng();
    let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    let v: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    let indep = estimate_mi_plugin(&u, &v, &BinningSpec::square(16)).map_err(err)?.nats;
    let fixed = BinningSpec {
        range: BinRange::Fixed { u: [0.0, 1.0], v: [0.0, 1.0] },
        ..BinningSpec::square(4)
    };
    let same = estimate_mi_plugin(&u, &u, &fixed).map_err(err)?.nats;
    let rel = (same / 4f64.ln() - 1.0).abs();
    Ok((indep <= 0.01 && rel <= 0.01, format!("independent={indep:.5} nats; identical rel_err={rel:.5}")))
}

fn c9_lipschitz() -> Outcome {
    let problem = ProblemSpec::gaussian_location(vec![0.3], 1.0);
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [1, 5, 10] {
        let row = lipschitz_check(&problem, 10, k, 0.5, 100_000, &seed(900 + k as u64)).map_err(err)?;
        ok &= row.passed;
        notes.push(format!("K={k} measured-bound={:+.4}", row.statistic));
    }
    Ok((ok, notes.join("; ")))
}

/// Measured gap and product-marginal loss variance for a mechanism.
fn gap_and_r2(sc: &Scenario, label: u64) -> Result<(f64, f64, f64), String> {
    let gen = expected_gen_error(sc, 100_000, &seed(label)).map_err(err)?;
    let s = gather_mi_samples(sc, &[MiTarget::PerNode { node: 0, index: 0 }], 100_000, Pairing::default(), &seed(label + 1))
        .map_err(err)?;
    let r2 = sub_gaussian_r2(&s[0].cross_losses).map_err(err)?;
    Ok((gen.mean(), gen.std_error(), r2))
}

fn c10_corollaries() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for bits in [1u32, 2, 4] {
        for k in [1, 5] {
            let q = Quantizer { bits, lo: -2.0, hi: 2.0 };
            let sc = gaussian(1, 10, k, NodeAlgorithm::Quantized(q));
            let (gap, se, r2) = gap_and_r2(&sc, 1000 + 10 * bits as u64 + k as u64)?;
            let bound = bound_communication(r2, q.total_bits(1), 10, k).map_err(err)?.value;
            ok &= gap <= bound + 3.0 * se + EXACT_TOL;
            notes.push(format!("B={bits} K={k} gap={gap:.4} bound={bound:.4}"));
        }
    }
    for eps in [0.5, 2.0] {
        for k in [1, 5] {
            let mech = PrivacyMech { epsilon: eps, clip_radius: 1.0 };
            let sc = gaussian(1, 10, k, NodeAlgorithm::Noisy(mech));
            let (gap, se, r2) = gap_and_r2(&sc, 1100 + (eps * 10.0) as u64 * 10 + k as u64)?;
            let bound = bound_privacy(r2, eps, 10, k).map_err(err)?.value;
            ok &= gap <= bound + 3.0 * se + EXACT_TOL;
            notes.push(format!("eps={eps} K={k} gap={gap:.4} bound={bound:.4}"));
        }
    }
    Ok((ok, notes.join("; ")))
}

fn c11_grid() -> Outcome {
    let worst = gaussian_grid_violation().map_err(err)?;
    Ok((worst <= 1e-12, format!("largest ordering violation {worst:.3e} over n in 2..=100, K in 1..=100")))
}

fn csv_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c12_determinism() -> Outcome {
    let configs = [
        (
            Command::GaussianMean,
            r#"{ "problem": { "kind": "gaussian-location", "d": 1, "sigma2": 1.0 }, "K_grid": [1, 2, 5],
                 "M_outer": 20000, "mi_samples": 50000 }"#,
        ),
        (
            Command::LinregFig2,
            r#"{ "problem": { "kind": "linear-regression", "d": 1, "sigma2": 1.0 }, "K_grid": [2, 5, 10],
                 "M_outer": 20000, "mi_samples": 50000, "mi_indices": 2 }"#,
        ),
        (
            Command::Sgd,
            r#"{ "problem": { "kind": "gaussian-location", "d": 1, "sigma2": 1.0 }, "K": 3,
                 "M_outer": 5000, "mi_samples": 20000, "sgd": { "rounds": 4, "eta": { "constant": 0.2 } } }"#,
        ),
        (
            Command::MiSweep,
            r#"{ "problem": { "kind": "gaussian-location", "d": 1, "sigma2": 1.0 }, "K_grid": [1, 2],
                 "mi_samples": 50000 }"#,
        ),
        (
            Command::BoundsTable,
            r#"{ "problem": { "kind": "gaussian-location", "d": 1, "sigma2": 1.0 }, "K_grid": [1, 4],
                 "M_outer": 5000, "epsilons": [0.5, 2.0], "bits": [1, 4], "clip_radius": 1.0 }"#,
        ),
    ];
    let dir = tempfile::tempdir().map_err(err)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for (cmd, text) in configs {
        let cfg = ExperimentConfig::from_json(text).map_err(err)?;
        let mut runs = Vec::new();
        for (j, workers) in [1, 1, 3].into_iter().enumerate() {
            let out = dir.path().join(format!("{}-{j}", cmd.name()));
            run(cmd, &cfg, 42, workers, &out).map_err(err)?;
            runs.push(csv_outputs(&out));
        }
        let same = !runs[0].is_empty() && runs.iter().all(|r| r == &runs[0]);
        ok &= same;
        notes.push(format!("{} files={} identical={same}", cmd.name(), runs[0].len()));
    }
    Ok((ok, notes.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gaussian-mean truth within 3 SE", c1_gaussian_truth),
        ("closed-form MI recovery and bin stability", c2_mi_recovery),
        ("regression bound comparison over K", c3_fig2),
        ("leave-one-out identity", c4_leave_one_out),
        ("pathwise convexity", c5_pathwise),
        ("per-node equality", c6_per_node_equality),
        ("inverse dual agreement", c7_psi),
        ("MI estimator sanity", c8_mi_sanity),
        ("Lipschitz bound", c9_lipschitz),
        ("communication and privacy bounds", c10_corollaries),
        ("Gaussian example ordering grid", c11_grid),
        ("byte-identical reruns", c12_determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (j, (name, f)) in criteria.iter().enumerate() {
        let id = j + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok((true, d)) => ("PASS", d),
            Ok((false, d)) => ("FAIL", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {id:>2} {status} [{}] {name}: {detail}", secs(start.elapsed()));
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

//! The data-producing subcommands. Each `compute_*` function returns typed
//! rows; the matching `run_*` function writes them.

use genbound_core::bounds::{
    bound_centralized, bound_communication, bound_lipschitz, bound_per_node_dataset, bound_per_node_samples,
    bound_privacy, bound_sgd, certified_lipschitz_clipped_mean, estimate_sigma0, gaussian_example_bounds,
    gaussian_mean_tail, sub_gaussian_r2, BoundValue,
};
use genbound_core::generalization::{expected_gen_error, sgd_gen_error};
use genbound_core::infotheory::{
    closed_form_mi_gaussian_mean, gather_mi_samples, gather_sgd_mi_samples, mi_sensitivity_sweep, BinningSpec,
    JointHistogram, MiSamples, MiTarget,
};
use genbound_core::{NodeAlgorithm, ProblemKind, SeedPath, TailSpec};
use serde::Serialize;

use crate::config::{ExperimentConfig, TailConfig};
use crate::output::{fmt_f64, line_plot_svg, OutputDir, Series, Table};
use crate::CliError;

/// Stream labels under the master seed; the second label is `K`.
pub mod stream {
    pub const GEN: u64 = 1;
    pub const MI: u64 = 2;
    pub const R2: u64 = 3;
    pub const SIGMA0: u64 = 4;
}

pub fn stream_seed(seed: u64, tag: u64, k: usize) -> SeedPath {
    SeedPath::new(seed).child2(tag, k as u64)
}

fn r2_for(cfg: &ExperimentConfig, losses: &[f64]) -> Result<f64, CliError> {
    match cfg.tail {
        TailConfig::Estimate => Ok(sub_gaussian_r2(losses)?),
        TailConfig::SubGaussian { r2 } => Ok(r2),
    }
}

fn r2_method(cfg: &ExperimentConfig) -> String {
    match cfg.tail {
        TailConfig::Estimate => {
            "variance of l(W, Z~) over trials, Z~ a fresh draw from the trial's population".to_string()
        }
        TailConfig::SubGaussian { r2 } => format!("fixed by config: {r2}"),
    }
}

fn mean_estimate(samples: &[&MiSamples], binning: &BinningSpec) -> Result<(f64, f64), CliError> {
    let mut nats = 0.0;
    let mut raw = 0.0;
    for s in samples {
        let e = s.estimate(binning)?;
        nats += e.nats;
        raw += e.raw_nats;
    }
    let m = samples.len() as f64;
    Ok((nats / m, raw / m))
}

fn is_plain_gaussian_mean(cfg: &ExperimentConfig) -> bool {
    cfg.problem.kind == ProblemKind::GaussianLocation && cfg.algorithm() == NodeAlgorithm::SampleMean
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianRow {
    pub k: usize,
    pub measured: f64,
    pub se: f64,
    pub truth: f64,
    pub new_bound: f64,
    pub old_bound: f64,
    pub mi_plugin: f64,
    pub mi_plugin_raw: f64,
    pub mi_closed_form: f64,
}

pub fn compute_gaussian_mean(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<GaussianRow>, CliError> {
    let (n, d, s2) = (cfg.n, cfg.problem.d, cfg.problem.sigma2);
    cfg.k_values()
        .into_iter()
        .map(|k| {
            log::info!("gaussian-mean K={k}");
            let sc = cfg.scenario(k);
            let gen = expected_gen_error(&sc, cfg.m_outer, &stream_seed(seed, stream::GEN, k))?;
            let targets: Vec<MiTarget> = (0..cfg.mi_indices).map(|i| MiTarget::Aggregate { node: 0, index: i }).collect();
            let samples = gather_mi_samples(&sc, &targets, cfg.mi_samples, cfg.pairing, &stream_seed(seed, stream::MI, k))?;
            let (mi, mi_raw) = mean_estimate(&samples.iter().collect::<Vec<_>>(), &cfg.binning)?;
            let (new_bound, old_bound) = if s2 > 0.0 && n >= 2 {
                let ex = gaussian_example_bounds(n, k, d, s2)?;
                (ex.new.value, ex.old.value)
            } else {
                (0.0, 0.0)
            };
            Ok(GaussianRow {
                k,
                measured: gen.mean(),
                se: gen.std_error(),
                truth: 2.0 * s2 * d as f64 / (n * k) as f64,
                new_bound,
                old_bound,
                mi_plugin: mi,
                mi_plugin_raw: mi_raw,
                mi_closed_form: closed_form_mi_gaussian_mean(n, k, d)?,
            })
        })
        .collect()
}

pub fn run_gaussian_mean(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let rows = compute_gaussian_mean(cfg, seed)?;
    let mut t = Table::new(&[
        "K", "n", "d", "sigma2", "measured", "se", "truth", "new_bound", "old_bound", "mi_plugin", "mi_plugin_raw",
        "mi_closed_form",
    ]);
    for r in &rows {
        t.push(vec![
            r.k.to_string(),
            cfg.n.to_string(),
            cfg.problem.d.to_string(),
            fmt_f64(cfg.problem.sigma2),
            fmt_f64(r.measured),
            fmt_f64(r.se),
            fmt_f64(r.truth),
            fmt_f64(r.new_bound),
            fmt_f64(r.old_bound),
            fmt_f64(r.mi_plugin),
            fmt_f64(r.mi_plugin_raw),
            fmt_f64(r.mi_closed_form),
        ]);
    }
    out.write_table("gaussian.csv", &t)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2Row {
    pub k: usize,
    pub true_gen: f64,
    pub se_true: f64,
    pub old_bound: f64,
    pub new_bound: f64,
    /// Plug-in `I(Ŵ; Z_{i,k})`, averaged over the sampled `i`.
    pub mi_old: f64,
    /// Plug-in `I(W_k; Z_{i,k})`, averaged over the sampled `i`.
    pub mi_new: f64,
    pub r2_old: f64,
    pub r2_new: f64,
}

impl Fig2Row {
    pub fn ordered(&self) -> bool {
        self.new_bound < self.old_bound && self.true_gen < self.new_bound && self.true_gen < self.old_bound
    }
}

pub fn compute_linreg_fig2(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Fig2Row>, CliError> {
    let n = cfg.n;
    cfg.k_values()
        .into_iter()
        .map(|k| {
            log::info!("linreg-fig2 K={k}");
            let sc = cfg.scenario(k);
            let gen = expected_gen_error(&sc, cfg.m_outer, &stream_seed(seed, stream::GEN, k))?;
            let mut targets = Vec::with_capacity(2 * cfg.mi_indices);
            for i in 0..cfg.mi_indices {
                targets.push(MiTarget::PerNode { node: 0, index: i });
                targets.push(MiTarget::Aggregate { node: 0, index: i });
            }
            let samples = gather_mi_samples(&sc, &targets, cfg.mi_samples, cfg.pairing, &stream_seed(seed, stream::MI, k))?;
            let node: Vec<&MiSamples> = samples.iter().step_by(2).collect();
            let agg: Vec<&MiSamples> = samples.iter().skip(1).step_by(2).collect();
            let (mi_new, _) = mean_estimate(&node, &cfg.binning)?;
            let (mi_old, _) = mean_estimate(&agg, &cfg.binning)?;
            let r2_new = r2_for(cfg, &node[0].cross_losses)?;
            let r2_old = r2_for(cfg, &agg[0].cross_losses)?;
            let old = bound_centralized(&TailSpec::sub_gaussian(r2_old)?, &vec![mi_old; n * k], n * k)?;
            let new = bound_per_node_samples(&TailSpec::sub_gaussian(r2_new)?, &vec![vec![mi_new; n]; k], n, k)?;
            Ok(Fig2Row {
                k,
                true_gen: gen.mean(),
                se_true: gen.std_error(),
                old_bound: old.value,
                new_bound: new.value,
                mi_old,
                mi_new,
                r2_old,
                r2_new,
            })
        })
        .collect()
}

pub fn run_linreg_fig2(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let rows = compute_linreg_fig2(cfg, seed)?;
    let mut t = Table::new(&["K", "true_gen", "old_bound", "new_bound", "se_true"]);
    let mut detail = Table::new(&["K", "mi_old", "mi_new", "r2_old", "r2_new"]);
    for r in &rows {
        t.push(vec![
            r.k.to_string(),
            fmt_f64(r.true_gen),
            fmt_f64(r.old_bound),
            fmt_f64(r.new_bound),
            fmt_f64(r.se_true),
        ]);
        detail.push(vec![
            r.k.to_string(),
            fmt_f64(r.mi_old),
            fmt_f64(r.mi_new),
            fmt_f64(r.r2_old),
            fmt_f64(r.r2_new),
        ]);
    }
    out.write_table("fig2.csv", &t)?;
    out.write_table("fig2_detail.csv", &detail)?;

    let curves: [(&str, fn(&Fig2Row) -> f64); 3] = [
        ("true_gen", |r| r.true_gen),
        ("old_bound", |r| r.old_bound),
        ("new_bound", |r| r.new_bound),
    ];
    let mut series = Vec::new();
    for (name, f) in curves {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, f(r))).collect();
        let mut lin = Table::new(&["K", name]);
        let mut log = Table::new(&["log10_K", &format!("log10_{name}")]);
        for &(x, y) in &pts {
            lin.push(vec![fmt_f64(x), fmt_f64(y)]);
            log.push(vec![fmt_f64(x.log10()), fmt_f64(y.log10())]);
        }
        out.write_table(&format!("fig2_linear_{name}.csv"), &lin)?;
        out.write_table(&format!("fig2_log_{name}.csv"), &log)?;
        series.push(Series { name, points: pts });
    }
    out.write("fig2_linear.svg", line_plot_svg("generalization error vs K", "K", &series, false).as_bytes())?;
    out.write("fig2_log.svg", line_plot_svg("generalization error vs K", "K", &series, true).as_bytes())?;
    out.write_json(
        "fig2_meta.json",
        &serde_json::json!({
            "r2_method": r2_method(cfg),
            "r2_old": rows.iter().map(|r| r.r2_old).collect::<Vec<_>>(),
            "r2_new": rows.iter().map(|r| r.r2_new).collect::<Vec<_>>(),
            "binning": cfg.binning,
            "pairing": cfg.pairing,
            "mi_indices": cfg.mi_indices,
            "mi_samples": cfg.mi_samples,
            "M_outer": cfg.m_outer,
            "K_grid": cfg.k_values(),
        }),
    )?;
    Ok(rows.iter().all(Fig2Row::ordered))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdRound {
    pub round: usize,
    pub gap: f64,
    pub gap_se: f64,
    pub mi: f64,
    pub mi_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdReport {
    pub k: usize,
    pub delta_sgd: f64,
    pub se: f64,
    pub bound: f64,
    pub r2: f64,
    pub rounds: Vec<SgdRound>,
}

impl SgdReport {
    /// Measured gap at most the bound plus three standard errors.
    pub fn holds(&self) -> bool {
        self.delta_sgd <= self.bound + 3.0 * self.se + genbound_core::stats::EXACT_TOL
    }
}

pub fn compute_sgd(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SgdReport>, CliError> {
    let sgd = cfg.sgd.as_ref().ok_or_else(|| CliError::Config("missing sgd section".into()))?;
    let t_max = sgd.rounds;
    cfg.k_values()
        .into_iter()
        .map(|k| {
            log::info!("sgd K={k}");
            let sc = cfg.scenario(k);
            let est = sgd_gen_error(&sc, sgd, cfg.m_outer, &stream_seed(seed, stream::GEN, k))?;
            let rounds: Vec<usize> = (1..=t_max).collect();
            let samples = gather_sgd_mi_samples(&sc, sgd, 0, &rounds, cfg.mi_samples, cfg.pairing, &stream_seed(seed, stream::MI, k))?;
            let mut per_round = Vec::with_capacity(t_max);
            for (t, s) in samples.iter().enumerate() {
                let e = s.estimate(&cfg.binning)?;
                per_round.push(SgdRound {
                    round: t + 1,
                    gap: est.per_round[t].mean,
                    gap_se: est.per_round[t].std_error,
                    mi: e.nats,
                    mi_raw: e.raw_nats,
                });
            }
            let pooled: Vec<f64> = samples.iter().flat_map(|s| s.cross_losses.iter().copied()).collect();
            let r2 = r2_for(cfg, &pooled)?;
            // node exchangeability: every node shares node 0's per-round profile
            let matrix: Vec<Vec<f64>> = per_round.iter().map(|r| vec![r.mi; k]).collect();
            let bound = bound_sgd(r2, &matrix, k, t_max)?;
            Ok(SgdReport {
                k,
                delta_sgd: est.estimate.mean,
                se: est.estimate.std_error,
                bound: bound.value,
                r2,
                rounds: per_round,
            })
        })
        .collect()
}

pub fn run_sgd(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let reports = compute_sgd(cfg, seed)?;
    let mut rounds = Table::new(&["K", "round", "gap", "gap_se", "mi_nats", "mi_raw_nats"]);
    let mut summary = Table::new(&["K", "T", "delta_sgd", "se", "bound", "r2", "holds"]);
    for r in &reports {
        for x in &r.rounds {
            rounds.push(vec![
                r.k.to_string(),
                x.round.to_string(),
                fmt_f64(x.gap),
                fmt_f64(x.gap_se),
                fmt_f64(x.mi),
                fmt_f64(x.mi_raw),
            ]);
        }
        summary.push(vec![
            r.k.to_string(),
            r.rounds.len().to_string(),
            fmt_f64(r.delta_sgd),
            fmt_f64(r.se),
            fmt_f64(r.bound),
            fmt_f64(r.r2),
            r.holds().to_string(),
        ]);
    }
    out.write_table("sgd.csv", &rounds)?;
    out.write_table("sgd_summary.csv", &summary)?;
    Ok(reports.iter().all(SgdReport::holds))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub bound: BoundValue,
}

pub fn compute_bounds_table(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<BoundRow>, CliError> {
    let (n, d) = (cfg.n, cfg.problem.d);
    let mut rows = Vec::new();
    for k in cfg.k_values() {
        log::info!("bounds-table K={k}");
        let mut push = |b: BoundValue| rows.push(BoundRow { n, k, d, bound: b });
        let s2 = cfg.problem.sigma2;
        if is_plain_gaussian_mean(cfg) && s2 > 0.0 && n >= 2 {
            let ex = gaussian_example_bounds(n, k, d, s2)?;
            push(ex.old);
            push(ex.new);
            let mi_old = closed_form_mi_gaussian_mean(n, k, d)?;
            let mi_new = closed_form_mi_gaussian_mean(n, 1, d)?;
            push(bound_centralized(&gaussian_mean_tail(n * k, d, s2)?, &vec![mi_old; n * k], n * k)?);
            let tail = gaussian_mean_tail(n, d, s2)?;
            push(bound_per_node_samples(&tail, &vec![vec![mi_new; n]; k], n, k)?);
            push(bound_per_node_dataset(&tail, &vec![n as f64 * mi_new; k], n, k)?);
        }
        if !cfg.epsilons.is_empty() || !cfg.bits.is_empty() {
            let r2 = match cfg.tail {
                TailConfig::SubGaussian { r2 } => r2,
                TailConfig::Estimate => {
                    let s = gather_mi_samples(
                        &cfg.scenario(k),
                        &[MiTarget::PerNode { node: 0, index: 0 }],
                        cfg.m_outer,
                        cfg.pairing,
                        &stream_seed(seed, stream::R2, k),
                    )?;
                    sub_gaussian_r2(&s[0].cross_losses)?
                }
            };
            for &eps in &cfg.epsilons {
                push(bound_privacy(r2, eps, n, k)?);
            }
            for &b in &cfg.bits {
                push(bound_communication(r2, b, n, k)?);
            }
        }
        if let (Some(radius), ProblemKind::GaussianLocation) = (cfg.clip_radius, cfg.problem.kind) {
            let mut sc = cfg.scenario(k);
            sc.algorithm = NodeAlgorithm::ClippedMean { radius };
            let sigma0 = estimate_sigma0(&sc, cfg.m_outer, &stream_seed(seed, stream::SIGMA0, k))?;
            let c = certified_lipschitz_clipped_mean(&cfg.problem, radius)?;
            push(bound_lipschitz(c, sigma0, k)?);
        }
    }
    Ok(rows)
}

pub fn run_bounds_table(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let rows = compute_bounds_table(cfg, seed)?;
    let mut t = Table::new(&["theorem", "n", "K", "d", "param_json", "value"]);
    for r in &rows {
        t.push(vec![
            r.bound.kind.name().to_string(),
            r.n.to_string(),
            r.k.to_string(),
            r.d.to_string(),
            r.bound.inputs.to_string(),
            fmt_f64(r.bound.value),
        ]);
    }
    out.write_table("bounds.csv", &t)?;
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub bins: usize,
    pub nats: f64,
    pub raw_nats: f64,
    pub spread: f64,
    pub median: f64,
    pub stable: bool,
    pub closed_form: Option<f64>,
}

/// Sweeps the first coordinate of `(Ŵ, Z_{1,1})` over the configured bin
/// counts, returning rows and the histograms behind them.
pub fn compute_mi_sweep(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(SweepRow, JointHistogram)>, CliError> {
    let mut rows = Vec::new();
    for k in cfg.k_values() {
        log::info!("mi-sweep K={k}");
        let sc = cfg.scenario(k);
        let s = gather_mi_samples(
            &sc,
            &[MiTarget::Aggregate { node: 0, index: 0 }],
            cfg.mi_samples,
            cfg.pairing,
            &stream_seed(seed, stream::MI, k),
        )?;
        let col = &s[0].columns[0];
        let sweep = mi_sensitivity_sweep(&col.u, &col.v, &cfg.sweep_bins, &cfg.binning)?;
        let closed_form = if is_plain_gaussian_mean(cfg) {
            Some(closed_form_mi_gaussian_mean(cfg.n, k, 1)?)
        } else {
            None
        };
        for (bins, e) in &sweep.points {
            let spec = BinningSpec {
                bins_u: *bins,
                bins_v: *bins,
                ..cfg.binning
            };
            let hist = JointHistogram::build(&col.u, &col.v, &spec)?;
            rows.push((
                SweepRow {
                    k,
                    bins: *bins,
                    nats: e.nats,
                    raw_nats: e.raw_nats,
                    spread: sweep.spread,
                    median: sweep.median,
                    stable: sweep.stable,
                    closed_form,
                },
                hist,
            ));
        }
    }
    Ok(rows)
}

pub fn run_mi_sweep(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<bool, CliError> {
    let rows = compute_mi_sweep(cfg, seed)?;
    let mut t = Table::new(&["K", "bins", "nats", "raw_nats", "spread", "median", "stable", "closed_form"]);
    for (r, hist) in &rows {
        t.push(vec![
            r.k.to_string(),
            r.bins.to_string(),
            fmt_f64(r.nats),
            fmt_f64(r.raw_nats),
            fmt_f64(r.spread),
            fmt_f64(r.median),
            r.stable.to_string(),
            r.closed_form.map(fmt_f64).unwrap_or_default(),
        ]);
        let mut h = Table::new(&["u_lo", "u_hi", "v_lo", "v_hi", "count"]);
        for (a, b, c, e, count) in hist.cells() {
            h.push(vec![fmt_f64(a), fmt_f64(b), fmt_f64(c), fmt_f64(e), count.to_string()]);
        }
        out.write_table(&format!("mi_hist_K{}_b{}.csv", r.k, r.bins), &h)?;
    }
    out.write_table("mi_sweep.csv", &t)?;
    Ok(true)
}

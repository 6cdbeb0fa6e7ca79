//! Subcommand bodies. Each one writes its artifacts through [`Output`] and
//! returns the checks that `--check` turns into an exit code.

use std::sync::Arc;

use dynperc_core::env::{EnvParams, TorusTrajectory};
use dynperc_core::evolving as evo;
use dynperc_core::lattice::{LatticeKind, TorusGraph};
use dynperc_core::percolation::{self as perc, PRule};
use dynperc_core::rng::Key;
use dynperc_core::stats::{loglog_fit, FitResult};
use dynperc_core::walker::{self, sigma_hat};
use serde_json::json;

use crate::config::*;
use crate::output::*;
use crate::svg::{PlotSpec, Series};
use crate::CliError;

pub struct Report {
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
}

pub struct Ctx<'a> {
    pub out: &'a mut Output,
    pub dump_env: bool,
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Seed of grid cell `(i, j)`, so cells use disjoint streams.
fn cell_seed(seed: u64, i: usize, j: usize) -> u64 {
    Key::root(seed).child(i as u64).child(j as u64).stream().next_u64()
}

fn fit_json(fit: &Option<FitResult>) -> serde_json::Value {
    match fit {
        Some(f) => json!({
            "slope": f.slope,
            "stderr": f.stderr_slope,
            "r2": f.r2,
            "cutoff": f.cutoff,
            "intercept": f.intercept,
            "n_points": f.n_points,
        }),
        None => serde_json::Value::Null,
    }
}

fn dump_trajectory(ctx: &mut Ctx, traj: &TorusTrajectory) -> Result<(), CliError> {
    if !ctx.dump_env {
        return Ok(());
    }
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    ctx.out.raw("env.csv", &buf)?;
    Ok(())
}

fn torus_trajectory(d: usize, side: usize, p: f64, mu: f64, horizon: f64, key: Key) -> Result<TorusTrajectory, CliError> {
    let kind = LatticeKind::hypercubic(d).and_then(|k| k.with_torus(side)).map_err(run_err)?;
    let graph = Arc::new(TorusGraph::new(kind).map_err(run_err)?);
    TorusTrajectory::generate(graph, p, mu, 0.0, horizon, key).map_err(run_err)
}

fn walker_config(
    lattice: LatticeKind,
    p: f64,
    mu: f64,
    allow_large_mu: bool,
    checkpoints: Vec<f64>,
    replicas: usize,
    seed: u64,
    threads: usize,
) -> walker::MsdConfig {
    walker::MsdConfig {
        lattice,
        p,
        mu,
        allow_large_mu,
        t_max: *checkpoints.last().expect("nonempty checkpoints"),
        checkpoints,
        replicas,
        seed,
        threads,
    }
}

pub fn msd(cfg: &MsdConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let p = cfg.p.resolve(&lattice)?;
    let wc = walker_config(
        lattice,
        p,
        cfg.mu,
        cfg.allow_large_mu,
        cfg.checkpoint_times(),
        cfg.replicas,
        cfg.seed,
        cfg.threads,
    );
    let table = walker::msd_experiment(&wc).map_err(run_err)?;
    let tail = format!(",{},{},{},{},{},{}", cfg.replicas, p, cfg.mu, lattice.name(), lattice.dim(), cfg.seed);
    ctx.out.csv(
        "msd.csv",
        MSD_HEADER,
        table.rows.iter().map(|r| {
            format!("{},{},{},{},{}{tail}", r.t, r.mean_sq_graph_dist, r.stderr, r.mean_sq_l2, r.stderr_l2)
        }),
    )?;
    ctx.out.chart(
        "msd.svg",
        &[
            Series {
                label: "graph distance".into(),
                points: table.rows.iter().map(|r| (r.t, r.mean_sq_graph_dist)).collect(),
            },
            Series {
                label: "Euclidean".into(),
                points: table.rows.iter().map(|r| (r.t, r.mean_sq_l2)).collect(),
            },
        ],
        &PlotSpec {
            title: format!("mean squared displacement, {lattice}, p={p}, mu={}", cfg.mu),
            x_label: "t".into(),
            y_label: "E dist^2".into(),
            ..PlotSpec::default()
        },
    )?;
    let mut checks = Vec::new();
    if p == 1.0 {
        // Every attempted step is taken, and orthogonal unit steps make
        // E|X_t|^2 equal the expected number of steps.
        for r in &table.rows {
            let z = (r.mean_sq_l2 - r.t) / r.stderr_l2.max(f64::MIN_POSITIVE);
            checks.push(Check::new(
                format!("free walk E|X_t|^2 = t at t={}", r.t),
                z.abs() <= 4.0,
                format!("mean {} vs {}, z = {z:.3}", r.mean_sq_l2, r.t),
            ));
        }
    }
    let summary = match sigma_hat(&table) {
        Ok(s) => json!({ "sigma_hat": s }),
        Err(_) => json!({}),
    };
    Ok(Report { checks, summary })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Phase {
    Sub,
    Critical,
    Super,
}

fn phase(lattice: &LatticeKind, p: f64) -> Option<Phase> {
    let pc = lattice.critical_probability()?;
    Some(if (p - pc).abs() < 1e-12 {
        Phase::Critical
    } else if p < pc {
        Phase::Sub
    } else {
        Phase::Super
    })
}

pub fn sigma_sweep(cfg: &SigmaSweepConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let checkpoints: Vec<f64> = (1..=10).map(|i| cfg.t * i as f64 / 10.0).collect();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for (pi, spec) in cfg.ps.iter().enumerate() {
        let p = spec.resolve(&lattice)?;
        let mut points = Vec::new();
        for (mi, &mu) in cfg.mus.iter().enumerate() {
            let wc = walker_config(
                lattice,
                p,
                mu,
                cfg.allow_large_mu,
                checkpoints.clone(),
                cfg.replicas,
                cell_seed(cfg.seed, pi, mi),
                cfg.threads,
            );
            let table = walker::msd_experiment(&wc).map_err(run_err)?;
            let s = sigma_hat(&table).map_err(run_err)?;
            rows.push(format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                lattice.name(),
                lattice.dim(),
                p,
                mu,
                s.t,
                cfg.replicas,
                s.sigma2,
                s.ci.0,
                s.ci.1,
                s.sigma2_l2,
                s.ci_l2.0,
                s.ci_l2.1,
                opt(s.slope)
            ));
            points.push((mu, s.sigma2));
        }
        let fit = if points.len() >= 2 && points.iter().all(|q| q.1 > 0.0) {
            loglog_fit(&points, 0.0).ok()
        } else {
            None
        };
        let sig: Vec<f64> = points.iter().map(|q| q.1).collect();
        let max = sig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = sig.iter().copied().fold(f64::INFINITY, f64::min);
        let mut by_mu = points.clone();
        by_mu.sort_by(|a, b| a.0.total_cmp(&b.0));
        let increasing = by_mu.windows(2).all(|w| w[1].1 > w[0].1);
        let slope = fit.as_ref().map(|f| f.slope);
        let regime = phase(&lattice, p);
        match regime {
            Some(Phase::Sub) => checks.push(Check::new(
                format!("p={p}: sigma^2 ~ mu (log-log slope in [0.8, 1.2])"),
                slope.is_some_and(|s| (0.8..=1.2).contains(&s)),
                format!("slope = {}", opt(slope)),
            )),
            Some(Phase::Super) => checks.push(Check::new(
                format!("p={p}: sigma^2 bounded below uniformly in mu (max/min <= 1.5, min >= 0.05)"),
                max / min <= 1.5 && min >= 0.05,
                format!("max/min = {:.4}, min = {min:.4}", max / min),
            )),
            Some(Phase::Critical) => checks.push(Check::new(
                format!("p={p}: sigma^2 strictly increasing in mu with slope in (0.05, 1.0)"),
                increasing && slope.is_some_and(|s| s > 0.05 && s < 1.0),
                format!("increasing = {increasing}, slope = {}", opt(slope)),
            )),
            None => {}
        }
        fits.push(json!({
            "p": p,
            "regime": regime.map(|r| format!("{r:?}").to_lowercase()),
            "fit": fit_json(&fit),
            "max_over_min": max / min,
            "min": min,
            "strictly_increasing": increasing,
        }));
        series.push(Series {
            label: format!("p = {p}"),
            points,
        });
    }
    ctx.out.csv("sigma.csv", SIGMA_HEADER, rows)?;
    ctx.out.json("fits.json", &fits)?;
    ctx.out.chart(
        "sigma.svg",
        &series,
        &PlotSpec {
            title: format!("sigma^2 against mu, {lattice}, t = {}", cfg.t),
            x_label: "mu".into(),
            y_label: "sigma^2".into(),
            log_x: true,
            log_y: true,
            annotation: None,
        },
    )?;
    Ok(Report {
        checks,
        summary: json!({ "fits": fits }),
    })
}

fn p_rule(cfg: &OneArmConfig, p: f64) -> PRule {
    match cfg.p_rule {
        PRuleName::Fixed => PRule::Fixed { p },
        PRuleName::CriticalWindow => PRule::CriticalWindow { nu: cfg.nu },
    }
}

pub fn onearm(cfg: &OneArmConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let p = cfg.p.resolve(&lattice)?;
    let core = perc::OneArmConfig {
        lattice,
        radii: cfg.radius_list(),
        rule: p_rule(cfg, p),
        trials: cfg.trials,
        seed: cfg.seed,
        threads: cfg.threads,
        fit_cutoff: cfg.fit_cutoff,
    };
    let res = perc::one_arm_sweep(&core).map_err(run_err)?;
    ctx.out.csv(
        "onearm.csv",
        ONEARM_HEADER,
        res.rows
            .iter()
            .map(|r| format!("{},{},{},{},{},{},{}", r.r, r.p, r.trials, r.successes, r.phat, r.ci_lo, r.ci_hi)),
    )?;
    let fit = fit_json(&res.fit);
    ctx.out.json("fit.json", &fit)?;
    let mut series = vec![Series {
        label: "P(0 <-> boundary of B_r)".into(),
        points: res.rows.iter().filter(|r| r.successes > 0).map(|r| (r.r as f64, r.phat)).collect(),
    }];
    if let Some(f) = &res.fit {
        series.push(Series {
            label: "fit".into(),
            points: res
                .rows
                .iter()
                .filter(|r| r.r as f64 >= f.cutoff)
                .map(|r| (r.r as f64, (f.intercept + f.slope * (r.r as f64).ln()).exp()))
                .collect(),
        });
    }
    ctx.out.chart(
        "onearm.svg",
        &series,
        &PlotSpec {
            title: format!("one-arm probability, {lattice}"),
            x_label: "r".into(),
            y_label: "proportion".into(),
            log_x: true,
            log_y: true,
            annotation: res.fit.as_ref().map(|f| format!("fitted slope = {:.4} ± {:.4}", f.slope, f.stderr_slope)),
        },
    )?;
    let mut checks = Vec::new();
    if let Some(want) = cfg.default_slope() {
        let got = res.fit.as_ref().map(|f| f.slope);
        checks.push(Check::new(
            format!("one-arm slope {want:.5} ± {}", cfg.slope_tolerance),
            got.is_some_and(|s| (s - want).abs() <= cfg.slope_tolerance),
            format!("slope = {}", opt(got)),
        ));
    }
    let mut summary = json!({ "fit": fit });
    if let Some(window_nu) = cfg.window_nu {
        // Same seed means the same trial keys, so both sweeps share one
        // monotone coupling and the ratio is at least 1 trial by trial.
        let win = perc::one_arm_sweep(&perc::OneArmConfig {
            rule: PRule::CriticalWindow { nu: window_nu },
            ..core
        })
        .map_err(run_err)?;
        let ratio = |b: &perc::OneArmRow, w: &perc::OneArmRow| {
            if b.successes > 0 {
                w.phat / b.phat
            } else {
                f64::INFINITY
            }
        };
        ctx.out.csv(
            "window.csv",
            WINDOW_HEADER,
            res.rows
                .iter()
                .zip(&win.rows)
                .map(|(b, w)| format!("{},{},{},{},{},{}", b.r, b.p, w.p, b.phat, w.phat, ratio(b, w))),
        )?;
        let (lo, hi) = cfg.window_ratio_bounds;
        let worst: Vec<(u64, f64)> = res
            .rows
            .iter()
            .zip(&win.rows)
            .filter(|(b, _)| b.r <= cfg.window_max_r)
            .map(|(b, w)| (b.r, ratio(b, w)))
            .collect();
        let ok = worst.iter().all(|&(_, q)| q >= lo && q <= hi);
        let detail = worst.iter().map(|(r, q)| format!("r={r}: {q:.4}")).collect::<Vec<_>>().join(", ");
        checks.push(Check::new(
            format!("window ratio in [{lo}, {hi}] for r <= {}", cfg.window_max_r),
            ok,
            detail,
        ));
        ctx.out.chart(
            "window.svg",
            &[Series {
                label: "window / base".into(),
                points: worst.iter().filter(|q| q.1.is_finite()).map(|&(r, q)| (r as f64, q)).collect(),
            }],
            &PlotSpec {
                title: "near-critical stability of the one-arm proportion".into(),
                x_label: "r".into(),
                y_label: "ratio".into(),
                log_x: true,
                ..PlotSpec::default()
            },
        )?;
        summary["window_ratios"] = json!(worst);
    }
    Ok(Report { checks, summary })
}

pub fn hcluster(cfg: &HClusterConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let p_c = cfg.p.resolve(&lattice)?;
    let mut results = Vec::new();
    for (mi, &mu) in cfg.mus.iter().enumerate() {
        for (ti, &t) in cfg.ts.iter().enumerate() {
            let res = perc::h_cluster_experiment(&perc::HClusterConfig {
                lattice,
                p_c,
                mu,
                t,
                r: cfg.r,
                trials: cfg.trials,
                seed: cell_seed(cfg.seed, mi, ti),
                threads: cfg.threads,
            })
            .map_err(run_err)?;
            results.push(res);
        }
    }
    ctx.out.csv(
        "hcluster.csv",
        HCLUSTER_HEADER,
        results.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.mu, r.t, r.r, r.p_static, r.trials, r.dynamical, r.static_equivalent, r.z, r.p_value
            )
        }),
    )?;
    let mut series = Vec::new();
    for &mu in &cfg.mus {
        let cell: Vec<_> = results.iter().filter(|r| r.mu == mu).collect();
        series.push(Series {
            label: format!("dynamical, mu={mu}"),
            points: cell.iter().map(|r| (r.t, r.dynamical as f64 / r.trials as f64)).collect(),
        });
        series.push(Series {
            label: format!("static, mu={mu}"),
            points: cell.iter().map(|r| (r.t, r.static_equivalent as f64 / r.trials as f64)).collect(),
        });
    }
    ctx.out.chart(
        "hcluster.svg",
        &series,
        &PlotSpec {
            title: format!("ever-open cluster reaches distance {}", cfg.r),
            x_label: "t".into(),
            y_label: "proportion".into(),
            ..PlotSpec::default()
        },
    )?;
    let min_p = results.iter().map(|r| r.p_value).fold(1.0, f64::min);
    Ok(Report {
        checks: vec![Check::new(
            format!("dynamical and static-equivalent agree (all p-values > {})", cfg.alpha),
            min_p > cfg.alpha,
            format!("min p-value = {min_p:.4}"),
        )],
        summary: json!({ "min_p_value": min_p }),
    })
}

pub fn theta(cfg: &ThetaConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let mut estimates = Vec::new();
    let mut extrapolated = Vec::new();
    let mut series = Vec::new();
    for (pi, spec) in cfg.ps.iter().enumerate() {
        let p = spec.resolve(&lattice)?;
        let mut row = Vec::new();
        for (si, &side) in cfg.sides.iter().enumerate() {
            let kind = lattice.with_torus(side).map_err(|e| ConfigError(e.to_string()))?;
            let est = perc::theta_estimate(kind, p, cfg.reps, cell_seed(cfg.seed, pi, si), cfg.threads).map_err(run_err)?;
            row.push(est);
        }
        let fit = if row.len() >= 2 {
            perc::theta_extrapolate(&row).ok()
        } else {
            None
        };
        extrapolated.push(json!({ "p": p, "theta_infinite_volume": fit.as_ref().map(|f| f.intercept), "fit": fit_json(&fit) }));
        series.push(Series {
            label: format!("p = {p}"),
            points: row.iter().map(|e| (1.0 / e.side as f64, e.theta)).collect(),
        });
        estimates.extend(row);
    }
    ctx.out.csv(
        "theta.csv",
        THETA_HEADER,
        estimates
            .iter()
            .map(|e| format!("{},{},{},{},{},{},{}", e.side, e.p, e.reps, e.hits, e.theta, e.ci_lo, e.ci_hi)),
    )?;
    ctx.out.json("extrapolation.json", &extrapolated)?;
    ctx.out.chart(
        "theta.svg",
        &series,
        &PlotSpec {
            title: format!("origin in the largest cluster, {lattice}"),
            x_label: "1/L".into(),
            y_label: "theta".into(),
            ..PlotSpec::default()
        },
    )?;
    Ok(Report {
        checks: Vec::new(),
        summary: json!({ "extrapolation": extrapolated }),
    })
}

pub fn evolving_check(cfg: &EvolvingCheckConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let rows = evo::evolving_check(&evo::EvolvingCheckConfig {
        dim: cfg.d,
        sides: cfg.sides.clone(),
        mus: cfg.mus.clone(),
        ps: cfg.ps.clone(),
        instances: cfg.instances,
        seed: cfg.seed,
        threads: cfg.threads,
    })
    .map_err(run_err)?;
    ctx.out.csv(
        "evolving.csv",
        EVOLVING_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.instance, r.side, r.mu, r.p, r.phi, r.phi_bound, r.lhs, r.rhs, r.pass
            )
        }),
    )?;
    let drift_fail = rows.iter().filter(|r| r.lhs > r.rhs + evo::DRIFT_TOLERANCE).count();
    let phi_fail = rows.iter().filter(|r| r.phi < r.phi_bound).count();
    let min_margin = rows.iter().map(|r| r.rhs - r.lhs).fold(f64::INFINITY, f64::min);
    Ok(Report {
        checks: vec![
            Check::new(
                "drift inequality on every instance",
                drift_fail == 0,
                format!("{drift_fail} failures of {}, smallest margin {min_margin:e}", rows.len()),
            ),
            Check::new(
                "conductance bound on every instance",
                phi_fail == 0,
                format!("{phi_fail} failures of {}", rows.len()),
            ),
        ],
        summary: json!({
            "instances": rows.len(),
            "drift_failures": drift_fail,
            "phi_failures": phi_fail,
            "min_drift_margin": min_margin,
        }),
    })
}

pub fn df_check(cfg: &DfCheckConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let res = evo::df_check(&evo::DfCheckConfig {
        dim: cfg.d,
        side: cfg.side,
        p: cfg.p,
        mu: cfg.mu,
        steps: cfg.steps,
        runs: cfg.runs,
        seed: cfg.seed,
        threads: cfg.threads,
    })
    .map_err(run_err)?;
    ctx.out.csv(
        "df.csv",
        DF_HEADER,
        res.rows
            .iter()
            .map(|r| format!("{},{},{},{}", r.f, r.estimator_walk, r.estimator_set, r.z)),
    )?;
    if ctx.dump_env {
        // The trajectory df_check sampled internally.
        let traj = torus_trajectory(cfg.d, cfg.side, cfg.p, cfg.mu, cfg.steps as f64, Key::root(cfg.seed).child(0))?;
        dump_trajectory(ctx, &traj)?;
    }
    let max_z = res.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    Ok(Report {
        checks: vec![
            Check::new(
                "walker stays in the set",
                res.violations == 0,
                format!("{} violations in {} steps", res.violations, res.steps_checked),
            ),
            Check::new(
                format!("walk and set estimators agree within {} sigma", cfg.z_max),
                max_z <= cfg.z_max,
                format!("max |z| = {max_z:.3}"),
            ),
        ],
        summary: json!({ "steps_checked": res.steps_checked, "violations": res.violations, "max_abs_z": max_z }),
    })
}

pub fn growth(cfg: &GrowthConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let res = evo::growth_experiment(&evo::GrowthConfig {
        dim: cfg.d,
        side: cfg.side,
        p: cfg.p,
        mu: cfg.mu,
        steps: cfg.steps,
        runs: cfg.runs,
        fit_from: cfg.fit_from,
        seed: cfg.seed,
        threads: cfg.threads,
    })
    .map_err(run_err)?;
    ctx.out.csv(
        "growth.csv",
        GROWTH_HEADER,
        res.rows
            .iter()
            .map(|r| format!("{},{},{},{}", r.m, r.size_mean, r.size_q10, r.size_q90)),
    )?;
    if ctx.dump_env {
        let traj = torus_trajectory(
            cfg.d,
            cfg.side,
            cfg.p,
            cfg.mu,
            cfg.steps as f64,
            Key::root(cfg.seed).child(0).child(0),
        )?;
        dump_trajectory(ctx, &traj)?;
    }
    let half_d = cfg.d as f64 / 2.0;
    let (lo, hi) = (cfg.slope_band.0 * half_d, cfg.slope_band.1 * half_d);
    let slope = res.fit.as_ref().map(|f| f.slope);
    let fit = fit_json(&res.fit);
    let summary = json!({ "fit": fit, "c1": res.c1, "c2": res.c2, "target_exponent": half_d });
    ctx.out.json("growth_summary.json", &summary)?;
    ctx.out.chart(
        "growth.svg",
        &[Series {
            label: "mean |S_m|".into(),
            points: res.rows.iter().map(|r| (r.m as f64, r.size_mean)).collect(),
        }],
        &PlotSpec {
            title: format!("Doob evolving set growth, Z^{} torus L={}", cfg.d, cfg.side),
            x_label: "m".into(),
            y_label: "mean size".into(),
            log_x: true,
            log_y: true,
            annotation: slope.map(|s| format!("fitted exponent = {s:.4}, d/2 = {half_d}")),
        },
    )?;
    Ok(Report {
        checks: vec![Check::new(
            format!("growth exponent in [{lo}, {hi}]"),
            slope.is_some_and(|s| s >= lo && s <= hi),
            format!("slope = {}", opt(slope)),
        )],
        summary,
    })
}

pub fn good_times(cfg: &GoodTimesConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let theta = match cfg.theta {
        Some(t) => t,
        None => {
            let kind = LatticeKind::hypercubic(cfg.d)
                .and_then(|k| k.with_torus(cfg.side))
                .map_err(|e| ConfigError(e.to_string()))?;
            // A separate stream from the trajectories, which use root(seed).
            let est = perc::theta_estimate(kind, cfg.p, cfg.theta_reps, cell_seed(cfg.seed, usize::MAX, 0), cfg.threads)
                .map_err(run_err)?;
            if est.hits == 0 {
                return Err(CliError::Run("estimated theta is 0; give theta explicitly".into()));
            }
            est.theta
        }
    };
    // Validates mu against the standing bound.
    EnvParams::new(LatticeKind::hypercubic(cfg.d).map_err(run_err)?, cfg.p, cfg.mu).map_err(run_err)?;
    let res = evo::good_time_experiment(&evo::GoodTimeConfig {
        dim: cfg.d,
        side: cfg.side,
        p: cfg.p,
        mu: cfg.mu,
        horizon: cfg.horizon,
        runs: cfg.runs,
        theta,
        seed: cfg.seed,
        threads: cfg.threads,
    })
    .map_err(run_err)?;
    ctx.out.csv(
        "good_times.csv",
        GOOD_TIMES_HEADER,
        res.good_fractions
            .iter()
            .zip(&res.excellent_fractions)
            .enumerate()
            .map(|(i, (g, e))| format!("{i},{g},{e}")),
    )?;
    if ctx.dump_env {
        let traj = torus_trajectory(
            cfg.d,
            cfg.side,
            cfg.p,
            cfg.mu,
            cfg.horizon as f64,
            Key::root(cfg.seed).child(0).child(0),
        )?;
        dump_trajectory(ctx, &traj)?;
    }
    let target = theta / 4.0 - 2.0 * res.good_above_stderr;
    let summary = json!({
        "theta": theta,
        "theta_source": if cfg.theta.is_some() { "config" } else { "estimated" },
        "runs": res.runs,
        "good_above": res.good_above,
        "good_above_fraction": res.good_above_fraction,
        "good_above_stderr": res.good_above_stderr,
        "excellent_above": res.excellent_above,
        "mean_good_fraction": res.mean_good_fraction,
        "mean_excellent_fraction": res.mean_excellent_fraction,
        "schedule_t1": res.schedule_t1,
        "max_dropped_mass": res.max_dropped_mass,
    });
    ctx.out.json("good_times_summary.json", &summary)?;
    Ok(Report {
        checks: vec![Check::new(
            "P(good fraction > theta/4) >= theta/4 - 2 sigma",
            res.good_above_fraction >= target,
            format!("{} vs {target:.4} (theta = {theta:.4})", res.good_above_fraction),
        )],
        summary,
    })
}

pub fn tail(cfg: &TailConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let p = cfg.p.resolve(&lattice)?;
    let wc = walker_config(lattice, p, cfg.mu, cfg.allow_large_mu, vec![cfg.t], cfg.replicas, cfg.seed, cfg.threads);
    let paths = walker::walk_replicas(&wc).map_err(run_err)?;
    let samples: Vec<u64> = paths.iter().map(|r| r.dist[0]).collect();
    let grid: Vec<u64> = (1..=cfg.l_max).collect();
    let points = walker::tail_survival(&samples, &grid).map_err(run_err)?;
    ctx.out.csv(
        "tail.csv",
        TAIL_HEADER,
        points
            .iter()
            .map(|q| format!("{},{},{},{},{},{}", q.l, q.count, q.n, q.survival, q.ci_lo, q.ci_hi)),
    )?;
    let fit = walker::tail_fit(&points, cfg.fit_lo, cfg.fit_hi).ok();
    let mut fj = fit_json(&fit);
    if let Some(f) = &fit {
        // ln S(L) ≈ a - L^2 / (C t)
        fj["implied_c"] = json!(-1.0 / (f.slope * cfg.t));
        fj["fit_range"] = json!([cfg.fit_lo, cfg.fit_hi]);
    }
    ctx.out.json("fit.json", &fj)?;
    ctx.out.chart(
        "tail.svg",
        &[Series {
            label: "P(dist >= L)".into(),
            points: points
                .iter()
                .filter(|q| q.count > 0)
                .map(|q| ((q.l * q.l) as f64, q.survival))
                .collect(),
        }],
        &PlotSpec {
            title: format!("displacement tail at t = {}", cfg.t),
            x_label: "L^2".into(),
            y_label: "survival".into(),
            log_y: true,
            annotation: fit.as_ref().map(|f| format!("R^2 = {:.4} on [{}, {}]", f.r2, cfg.fit_lo, cfg.fit_hi)),
            ..PlotSpec::default()
        },
    )?;
    let r2 = fit.as_ref().map(|f| f.r2);
    Ok(Report {
        checks: vec![Check::new(
            format!("log survival linear in L^2 (R^2 > {})", cfg.min_r2),
            r2.is_some_and(|r| r > cfg.min_r2),
            format!("R^2 = {}", opt(r2)),
        )],
        summary: json!({ "fit": fj }),
    })
}

pub fn markov_type(cfg: &MarkovTypeConfig, ctx: &mut Ctx) -> Result<Report, CliError> {
    let lattice = lattice_kind(cfg.lattice, cfg.d)?;
    let p = cfg.p.resolve(&lattice)?;
    let base = walker_config(lattice, p, cfg.mu, cfg.allow_large_mu, vec![cfg.s], cfg.replicas, cfg.seed, cfg.threads);
    let rows = walker::markov_type_check(&base, &cfg.ks, cfg.s).map_err(run_err)?;
    ctx.out.csv(
        "markov_type.csv",
        MARKOV_HEADER,
        rows.iter()
            .map(|r| format!("{},{},{},{},{}", r.k, r.ratio, r.stderr, r.ci_lo, r.ci_hi)),
    )?;
    ctx.out.chart(
        "markov_type.svg",
        &[Series {
            label: "MSD(ks) / (k MSD(s))".into(),
            points: rows.iter().map(|r| (r.k as f64, r.ratio)).collect(),
        }],
        &PlotSpec {
            title: format!("Markov type ratios, s = {}", cfg.s),
            x_label: "k".into(),
            y_label: "ratio".into(),
            log_x: true,
            ..PlotSpec::default()
        },
    )?;
    let worst = rows.iter().map(|r| r.ci_hi).fold(f64::NEG_INFINITY, f64::max);
    Ok(Report {
        checks: vec![Check::new(
            format!("upper 95% bound of every ratio <= {}", cfg.bound),
            worst <= cfg.bound,
            format!("largest upper bound = {worst:.4}"),
        )],
        summary: json!({ "rows": rows }),
    })
}

//! Randomized checks and measurements built on the evolving-set primitives.

use std::sync::Arc;

use serde::Serialize;

use crate::env::{EnvParams, TorusTrajectory};
use crate::lattice::{LatticeKind, TorusGraph};
use crate::parallel::try_run_indexed;
use crate::percolation::largest_cluster_mask;
use crate::rng::{Key, Stream};
use crate::stats::{loglog_fit, FitResult};

use super::kernel::quenched_kernel;
use super::sets::{
    boundary_integral, df_step, drift_check, evolve_doob, open_boundary_size, phi_s, threshold_profile, EvolvingState,
};
use super::sparse::SparseStepper;
use super::EvolvingError;

fn torus(dim: usize, side: usize) -> Result<LatticeKind, EvolvingError> {
    Ok(LatticeKind::hypercubic(dim)?.with_torus(side)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolvingCheckConfig {
    pub dim: usize,
    pub sides: Vec<usize>,
    pub mus: Vec<f64>,
    pub ps: Vec<f64>,
    pub instances: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvolvingCheckRow {
    pub instance: usize,
    pub side: usize,
    pub mu: f64,
    pub p: f64,
    pub phi: f64,
    pub phi_bound: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Both the drift inequality and `phi >= phi_bound` hold.
    pub pass: bool,
}

/// Random proper nonempty subset, drawn from one of several shapes.
fn random_set(graph: &TorusGraph, shape: usize, stream: &mut Stream) -> Vec<usize> {
    let n = graph.n_vertices();
    let mut set: Vec<usize> = match shape {
        0 => {
            let q = 0.1 + 0.8 * stream.uniform();
            (0..n).filter(|_| stream.bernoulli(q)).collect()
        }
        1 => vec![stream.below(n as u64) as usize],
        _ => {
            // Coordinate block around a random corner.
            let side = graph.side();
            let corner = graph.point(stream.below(n as u64) as usize);
            let extent: Vec<i64> = (0..corner.dim()).map(|_| 1 + stream.below(side as u64 - 1) as i64).collect();
            (0..n)
                .filter(|&v| {
                    let p = graph.point(v);
                    p.coords()
                        .iter()
                        .zip(corner.coords())
                        .zip(&extent)
                        .all(|((&c, &o), &e)| (c - o).rem_euclid(side as i64) < e)
                })
                .collect()
        }
    };
    if set.is_empty() {
        set.push(stream.below(n as u64) as usize);
    }
    if set.len() == n {
        set.swap_remove(stream.below(n as u64) as usize);
    }
    set
}

fn check_instance(cfg: &EvolvingCheckConfig, i: usize) -> Result<EvolvingCheckRow, EvolvingError> {
    let combos = cfg.sides.len() * cfg.mus.len() * cfg.ps.len();
    let c = i % combos;
    let side = cfg.sides[c % cfg.sides.len()];
    let mu = cfg.mus[(c / cfg.sides.len()) % cfg.mus.len()];
    let p = cfg.ps[c / (cfg.sides.len() * cfg.mus.len())];
    let key = Key::root(cfg.seed).child(i as u64);
    let mut stream = key.child(1).stream();
    let step = stream.below(3);
    let params = EnvParams::new(torus(cfg.dim, side)?, p, mu)?;
    let graph = Arc::new(TorusGraph::new(params.lattice)?);
    let traj = TorusTrajectory::generate(graph.clone(), p, mu, 0.0, step as f64 + 1.0, key.child(0))?;
    let shape = i % 4;
    let set = if shape == 3 {
        // A set reached by the Doob-transformed evolving set itself.
        let mut set = vec![stream.below(graph.n_vertices() as u64) as usize];
        for m in 0..step {
            let prof = threshold_profile(&quenched_kernel(&traj, m)?, &set)?;
            set = evolve_doob(&prof, &mut stream);
        }
        if set.len() == graph.n_vertices() {
            set.pop();
        }
        set
    } else {
        random_set(&graph, shape, &mut stream)
    };
    let kernel = quenched_kernel(&traj, step)?;
    let drift = drift_check(&kernel, &set)?;
    let phi = phi_s(&kernel, &traj, &set)?;
    Ok(EvolvingCheckRow {
        instance: i,
        side,
        mu,
        p,
        phi: phi.phi,
        phi_bound: phi.bound,
        lhs: drift.lhs,
        rhs: drift.rhs,
        pass: drift.pass && phi.phi >= phi.bound,
    })
}

/// Drift inequality and `Φ_S` lower bound on random (trajectory, set) pairs.
pub fn evolving_check(cfg: &EvolvingCheckConfig) -> Result<Vec<EvolvingCheckRow>, EvolvingError> {
    if cfg.sides.is_empty() || cfg.mus.is_empty() || cfg.ps.is_empty() {
        return Err(EvolvingError::Config("empty parameter grid".into()));
    }
    try_run_indexed(cfg.threads, cfg.instances, |i| check_instance(cfg, i))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfCheckConfig {
    pub dim: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    pub steps: u64,
    pub runs: usize,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DfCheckRow {
    /// Test function: indicator that the first coordinate equals `c`.
    pub f: String,
    pub estimator_walk: f64,
    pub estimator_set: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfCheckResult {
    pub rows: Vec<DfCheckRow>,
    pub steps_checked: u64,
    pub violations: u64,
}

/// On one fixed trajectory, compare `E[f(X_n)]` with `E[Σ_{y∈S_n} f(y)/|S_n|]`
/// over independent Diaconis–Fill runs from `(0, {0})`.
pub fn df_check(cfg: &DfCheckConfig) -> Result<DfCheckResult, EvolvingError> {
    if cfg.runs < 2 || cfg.steps == 0 {
        return Err(EvolvingError::Config("need at least 2 runs and 1 step".into()));
    }
    let params = EnvParams::new(torus(cfg.dim, cfg.side)?, cfg.p, cfg.mu)?;
    let graph = Arc::new(TorusGraph::new(params.lattice)?);
    let traj = TorusTrajectory::generate(graph.clone(), cfg.p, cfg.mu, 0.0, cfg.steps as f64, Key::root(cfg.seed).child(0))?;
    let kernels = (0..cfg.steps).map(|m| quenched_kernel(&traj, m)).collect::<Result<Vec<_>, _>>()?;
    let side = cfg.side;
    let first: Vec<usize> = (0..graph.n_vertices()).map(|v| v % side).collect();
    let base = Key::root(cfg.seed).child(1);
    let per_run = try_run_indexed(cfg.threads, cfg.runs, |r| {
        let mut stream = base.child(r as u64).stream();
        let mut state = EvolvingState::start(0);
        let mut violations = 0u64;
        for k in &kernels {
            state = df_step(k, &state, &mut stream)?;
            violations += !state.set.contains(&state.walker) as u64;
        }
        let mut diffs = vec![0.0; 2 * side];
        diffs[first[state.walker]] += 1.0;
        let w = 1.0 / state.set.len() as f64;
        for &y in &state.set {
            diffs[side + first[y]] += w;
        }
        Ok::<_, EvolvingError>((diffs, violations))
    })?;
    let n = cfg.runs as f64;
    let mut rows = Vec::with_capacity(side);
    for c in 0..side {
        let (mut sw, mut ss, mut sd, mut sdd) = (0.0, 0.0, 0.0, 0.0);
        for (d, _) in &per_run {
            let (a, b) = (d[c], d[side + c]);
            sw += a;
            ss += b;
            sd += a - b;
            sdd += (a - b) * (a - b);
        }
        let mean_d = sd / n;
        let var_d = (sdd - n * mean_d * mean_d) / (n - 1.0);
        let se = (var_d.max(0.0) / n).sqrt();
        rows.push(DfCheckRow {
            f: format!("x0=={c}"),
            estimator_walk: sw / n,
            estimator_set: ss / n,
            z: if se > 0.0 { mean_d / se } else { 0.0 },
        });
    }
    Ok(DfCheckResult {
        rows,
        steps_checked: cfg.steps * cfg.runs as u64,
        violations: per_run.iter().map(|(_, v)| v).sum(),
    })
}

/// `t(n) = ⌈8n/θ⌉`.
pub fn good_time_schedule(n: u64, theta: f64) -> u64 {
    (8.0 * n as f64 / theta).ceil() as u64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodExcellentScan {
    /// Flags for `m = 1, …, T-1`.
    pub good: Vec<bool>,
    pub excellent: Vec<bool>,
    pub good_fraction: f64,
    pub excellent_fraction: f64,
}

/// Good and excellent integer times of an evolving-set path `sets[m] = S_m`
/// in `traj`. The infinite cluster is replaced by the torus's largest cluster.
pub fn good_excellent_scan(traj: &TorusTrajectory, sets: &[Vec<usize>], theta: f64) -> Result<GoodExcellentScan, EvolvingError> {
    let graph = traj.graph();
    let mut good = Vec::new();
    let mut excellent = Vec::new();
    if sets.len() < 2 {
        return Err(EvolvingError::Config("need S_0 and at least one more set".into()));
    }
    let mut cursor = traj.cursor_at(1.0)?;
    for (m, set) in sets.iter().enumerate().skip(1) {
        cursor.advance_to(m as f64);
        let cluster = largest_cluster_mask(graph, cursor.config());
        let inside = set.iter().filter(|&&x| cluster[x]).count();
        let g = inside as f64 >= 0.5 * theta * set.len() as f64;
        let e = g && {
            let integral = boundary_integral(traj, set, m as f64, m as f64 + 1.0)?;
            integral >= 0.5 * open_boundary_size(graph, cursor.config(), set) as f64
        };
        good.push(g);
        excellent.push(e);
    }
    let n = good.len() as f64;
    Ok(GoodExcellentScan {
        good_fraction: good.iter().filter(|&&g| g).count() as f64 / n,
        excellent_fraction: excellent.iter().filter(|&&e| e).count() as f64 / n,
        good,
        excellent,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoodTimeConfig {
    pub dim: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    pub horizon: u64,
    pub runs: usize,
    pub theta: f64,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodTimeSummary {
    pub runs: usize,
    pub theta: f64,
    /// Runs whose good-time fraction on `[1, T)` exceeds `θ/4`.
    pub good_above: usize,
    pub good_above_fraction: f64,
    pub good_above_stderr: f64,
    /// Runs whose excellent-time fraction exceeds `θ/8`.
    pub excellent_above: usize,
    pub mean_good_fraction: f64,
    pub mean_excellent_fraction: f64,
    pub schedule_t1: u64,
    pub max_dropped_mass: f64,
    pub good_fractions: Vec<f64>,
    pub excellent_fractions: Vec<f64>,
}

/// Diaconis–Fill path of length `horizon` from `(0, {0})` on one trajectory.
pub fn df_path(traj: &TorusTrajectory, horizon: u64, stream: &mut Stream) -> Result<(Vec<Vec<usize>>, f64), EvolvingError> {
    let mut stepper = SparseStepper::new(traj.graph());
    let mut state = EvolvingState::start(0);
    let mut sets = vec![state.set.clone()];
    for m in 0..horizon.saturating_sub(1) {
        state = stepper.df_step(traj, m, &state, stream)?;
        sets.push(state.set.clone());
    }
    Ok((sets, stepper.dropped_mass()))
}

pub fn good_time_experiment(cfg: &GoodTimeConfig) -> Result<GoodTimeSummary, EvolvingError> {
    if cfg.runs == 0 || cfg.horizon < 2 || !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
        return Err(EvolvingError::Config("need runs >= 1, horizon >= 2 and theta in (0, 1]".into()));
    }
    let params = EnvParams::new(torus(cfg.dim, cfg.side)?, cfg.p, cfg.mu)?;
    let graph = Arc::new(TorusGraph::new(params.lattice)?);
    let per_run = try_run_indexed(cfg.threads, cfg.runs, |r| {
        let key = Key::root(cfg.seed).child(r as u64);
        let traj = TorusTrajectory::generate(graph.clone(), cfg.p, cfg.mu, 0.0, cfg.horizon as f64, key.child(0))?;
        let (sets, dropped) = df_path(&traj, cfg.horizon, &mut key.child(1).stream())?;
        let scan = good_excellent_scan(&traj, &sets, cfg.theta)?;
        Ok::<_, EvolvingError>((scan.good_fraction, scan.excellent_fraction, dropped))
    })?;
    let n = cfg.runs as f64;
    let good_fractions: Vec<f64> = per_run.iter().map(|r| r.0).collect();
    let excellent_fractions: Vec<f64> = per_run.iter().map(|r| r.1).collect();
    let good_above = good_fractions.iter().filter(|&&f| f > cfg.theta / 4.0).count();
    let frac = good_above as f64 / n;
    Ok(GoodTimeSummary {
        runs: cfg.runs,
        theta: cfg.theta,
        good_above,
        good_above_fraction: frac,
        good_above_stderr: (frac * (1.0 - frac) / n).sqrt(),
        excellent_above: excellent_fractions.iter().filter(|&&f| f > cfg.theta / 8.0).count(),
        mean_good_fraction: good_fractions.iter().sum::<f64>() / n,
        mean_excellent_fraction: excellent_fractions.iter().sum::<f64>() / n,
        schedule_t1: good_time_schedule(1, cfg.theta),
        max_dropped_mass: per_run.iter().map(|r| r.2).fold(0.0, f64::max),
        good_fractions,
        excellent_fractions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthConfig {
    pub dim: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    pub steps: u64,
    pub runs: usize,
    pub fit_from: u64,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthRow {
    pub m: u64,
    pub size_mean: f64,
    pub size_q10: f64,
    pub size_q90: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthResult {
    pub rows: Vec<GrowthRow>,
    /// Fit of `log mean|S_m|` against `log m` for `m >= fit_from`.
    pub fit: Option<FitResult>,
    /// Half the median of `|S_n| / n^{d/2}` at the last step.
    pub c1: f64,
    /// Fraction of runs with `|S_n| > c1 · n^{d/2}`.
    pub c2: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Sizes of the Doob-transformed evolving set started from `{0}`.
pub fn growth_experiment(cfg: &GrowthConfig) -> Result<GrowthResult, EvolvingError> {
    if cfg.runs == 0 || cfg.steps == 0 {
        return Err(EvolvingError::Config("need runs >= 1 and steps >= 1".into()));
    }
    let params = EnvParams::checked(torus(cfg.dim, cfg.side)?, cfg.p, cfg.mu, false)?;
    let graph = Arc::new(TorusGraph::new(params.lattice)?);
    let sizes = try_run_indexed(cfg.threads, cfg.runs, |r| {
        let key = Key::root(cfg.seed).child(r as u64);
        let traj = TorusTrajectory::generate(graph.clone(), cfg.p, cfg.mu, 0.0, cfg.steps as f64, key.child(0))?;
        let mut stream = key.child(1).stream();
        let mut stepper = SparseStepper::new(&graph);
        let mut set = vec![0usize];
        let mut out = Vec::with_capacity(cfg.steps as usize);
        for m in 0..cfg.steps {
            let prof = stepper.profile(&traj, m, &set)?;
            set = evolve_doob(&prof, &mut stream);
            out.push(set.len() as f64);
        }
        Ok::<_, EvolvingError>(out)
    })?;
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    for m in 0..cfg.steps as usize {
        let mut col: Vec<f64> = sizes.iter().map(|s| s[m]).collect();
        col.sort_by(f64::total_cmp);
        rows.push(GrowthRow {
            m: m as u64 + 1,
            size_mean: col.iter().sum::<f64>() / col.len() as f64,
            size_q10: quantile(&col, 0.1),
            size_q90: quantile(&col, 0.9),
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.m as f64, r.size_mean)).collect();
    let fit = loglog_fit(&points, cfg.fit_from as f64).ok();
    let n = cfg.steps as f64;
    let scale = n.powf(cfg.dim as f64 / 2.0);
    let mut last: Vec<f64> = sizes.iter().map(|s| s[cfg.steps as usize - 1] / scale).collect();
    last.sort_by(f64::total_cmp);
    let c1 = 0.5 * quantile(&last, 0.5);
    let c2 = last.iter().filter(|&&x| x > c1).count() as f64 / last.len() as f64;
    Ok(GrowthResult { rows, fit, c1, c2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(good_time_schedule(1, 0.8), 10);
        assert_eq!(good_time_schedule(3, 0.5), 48);
        assert_eq!(good_time_schedule(0, 0.5), 0);
    }

    #[test]
    fn small_evolving_check_passes() {
        let cfg = EvolvingCheckConfig {
            dim: 2,
            sides: vec![4, 6],
            mus: vec![0.05, 0.2],
            ps: vec![0.3, 0.5, 0.8],
            instances: 48,
            seed: 7,
            threads: 1,
        };
        let rows = evolving_check(&cfg).unwrap();
        assert_eq!(rows.len(), 48);
        assert!(rows.iter().all(|r| r.pass), "{:?}", rows.iter().find(|r| !r.pass));
        assert_eq!(rows, evolving_check(&EvolvingCheckConfig { threads: 3, ..cfg }).unwrap());
    }

    #[test]
    fn df_check_small() {
        let cfg = DfCheckConfig {
            dim: 2,
            side: 4,
            p: 0.5,
            mu: 0.2,
            steps: 4,
            runs: 5000,
            seed: 3,
            threads: 1,
        };
        let res = df_check(&cfg).unwrap();
        assert_eq!(res.violations, 0);
        assert_eq!(res.rows.len(), 4);
        for row in &res.rows {
            assert!(row.z.abs() < 4.5, "{row:?}");
        }
        let s: f64 = res.rows.iter().map(|r| r.estimator_set).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_open_all_good() {
        let graph = Arc::new(TorusGraph::new(torus(2, 8).unwrap()).unwrap());
        let traj = TorusTrajectory::generate(graph.clone(), 1.0, 0.05, 0.0, 6.0, Key::root(1)).unwrap();
        let (sets, _) = df_path(&traj, 6, &mut Key::root(2).stream()).unwrap();
        let scan = good_excellent_scan(&traj, &sets, 0.99).unwrap();
        assert!(scan.good.iter().all(|&g| g));
        assert!(scan.excellent.iter().all(|&e| e));

        let closed = TorusTrajectory::from_parts(graph.clone(), 0.0, 0.05, (0.0, 6.0), vec![false; 128], vec![]).unwrap();
        let (sets, _) = df_path(&closed, 6, &mut Key::root(2).stream()).unwrap();
        assert!(sets.iter().all(|s| s == &vec![0]));
        // A single vertex is its own largest cluster only by the tie-break at
        // vertex 0; with theta = 1 that still counts as good, so use p = 0
        // through a configuration with a larger cluster elsewhere instead.
        let mut init = vec![false; 128];
        init[2 * 10] = true;
        let other = TorusTrajectory::from_parts(graph, 0.0, 0.05, (0.0, 6.0), init, vec![]).unwrap();
        let (sets, _) = df_path(&other, 6, &mut Key::root(2).stream()).unwrap();
        let scan = good_excellent_scan(&other, &sets, 0.5).unwrap();
        assert!(scan.good.iter().all(|&g| !g));
    }

    #[test]
    fn growth_closed_and_open() {
        let cfg = GrowthConfig {
            dim: 2,
            side: 16,
            p: 0.0,
            mu: 0.1,
            steps: 5,
            runs: 4,
            fit_from: 1,
            seed: 1,
            threads: 1,
        };
        let res = growth_experiment(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.size_mean == 1.0));
        let res = growth_experiment(&GrowthConfig { p: 1.0, steps: 20, runs: 50, ..cfg }).unwrap();
        assert!(res.rows.last().unwrap().size_mean > 5.0);
        assert!(res.c2 > 0.0);
    }
}

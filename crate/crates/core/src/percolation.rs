//! Static and near-critical Bernoulli percolation.
//!
//! Unit states inside a trial are read from a hash of the unit label, so a
//! trial is a deterministic function of its key. Declaring a unit open iff
//! its uniform is below `p` couples all densities monotonically.
//!
//! For site percolation the origin must itself be open to be connected to
//! anything.

use rustc_hash::FxHashSet;
use serde::Serialize;
use thiserror::Error;

use crate::env::{ever_open_params, unit_ever_open};
use crate::lattice::{coords_label, Geometry, LatticeError, LatticeKind, TorusGraph, TRI_STEPS};
use crate::parallel::run_indexed;
use crate::rng::Key;
use crate::stats::{linear_fit, loglog_fit, two_proportion_test, wilson_interval, FitResult, StatsError, Z95};

/// Radii below this are excluded from exponent fits.
pub const DEFAULT_FIT_CUTOFF: f64 = 8.0;

/// Boxes with more cells than this use a hash set for the visited marks.
const DENSE_LIMIT: usize = 1 << 24;

/// Trials per parallel work item; one explorer buffer is reused across a chunk.
const CHUNK: usize = 512;

const SITE_TAG: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PercolationError {
    #[error("radius must be >= 1")]
    Radius,
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("lattice {0} has no known critical probability")]
    NoCriticalValue(String),
    #[error("one-arm exploration runs on the infinite lattice, not a torus")]
    TorusNotAllowed,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn check_p(p: f64) -> Result<(), PercolationError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(PercolationError::Probability(p))
    }
}

/// Label of the bond from `base` along `+e_axis`; matches `EdgeRef::label`.
#[inline]
fn bond_label(base: &[i64], axis: usize) -> u64 {
    coords_label(base, axis as u64)
}

#[inline]
fn site_label(c: &[i64]) -> u64 {
    coords_label(c, SITE_TAG)
}

enum Marks {
    Dense { stamp: Vec<u32>, generation: u32 },
    Sparse(FxHashSet<Vec<i64>>),
}

/// Reusable buffers for exploring the open cluster of the origin inside
/// `B_r`, sampling unit states only as the exploration touches them.
pub struct BoxExplorer {
    lattice: LatticeKind,
    r: i64,
    dim: usize,
    side: usize,
    marks: Marks,
    stack: Vec<i64>,
    queries: u64,
}

impl BoxExplorer {
    pub fn new(lattice: LatticeKind, r: u64) -> Result<Self, PercolationError> {
        if r == 0 {
            return Err(PercolationError::Radius);
        }
        if lattice.torus_side().is_some() {
            return Err(PercolationError::TorusNotAllowed);
        }
        let dim = lattice.dim();
        let side = 2 * r as usize + 1;
        let cells = side.checked_pow(dim as u32).unwrap_or(usize::MAX);
        let marks = if cells <= DENSE_LIMIT {
            Marks::Dense {
                stamp: vec![0; cells],
                generation: 0,
            }
        } else {
            Marks::Sparse(FxHashSet::default())
        };
        Ok(BoxExplorer {
            lattice,
            r: r as i64,
            dim,
            side,
            marks,
            stack: Vec::new(),
            queries: 0,
        })
    }

    pub fn radius(&self) -> u64 {
        self.r as u64
    }

    /// Number of unit states read by the last trial.
    pub fn last_queries(&self) -> u64 {
        self.queries
    }

    fn reset(&mut self) {
        self.stack.clear();
        self.queries = 0;
        match &mut self.marks {
            Marks::Dense { stamp, generation } => {
                if *generation == u32::MAX {
                    stamp.iter_mut().for_each(|s| *s = 0);
                    *generation = 0;
                }
                *generation += 1;
            }
            Marks::Sparse(set) => set.clear(),
        }
    }

    /// Marks `c` as seen; returns false if it already was.
    #[inline]
    fn visit(&mut self, c: &[i64]) -> bool {
        match &mut self.marks {
            Marks::Dense { stamp, generation } => {
                let mut idx = 0usize;
                for &x in c.iter().rev() {
                    idx = idx * self.side + (x + self.r) as usize;
                }
                if stamp[idx] == *generation {
                    false
                } else {
                    stamp[idx] = *generation;
                    true
                }
            }
            Marks::Sparse(set) => set.insert(c.to_vec()),
        }
    }

    #[inline]
    fn on_boundary(&self, c: &[i64]) -> bool {
        c.iter().any(|x| x.abs() == self.r)
    }

    /// Whether the origin is joined to `∂B_r` by units declared open by
    /// `open(label)`. Only units with both ends (bonds) or the site itself
    /// inside `B_r` are ever queried.
    pub fn connects<F: FnMut(u64) -> bool>(&mut self, mut open: F) -> bool {
        self.reset();
        let dim = self.dim;
        let r = self.r;
        let origin = vec![0i64; dim];
        let triangular = self.lattice.is_triangular();
        if triangular {
            self.queries += 1;
            if !open(site_label(&origin)) {
                return false;
            }
        }
        self.visit(&origin);
        self.stack.extend_from_slice(&origin);
        let mut v = vec![0i64; dim];
        let mut w = vec![0i64; dim];
        while self.stack.len() >= dim {
            let top = self.stack.len() - dim;
            v.copy_from_slice(&self.stack[top..]);
            self.stack.truncate(top);
            for k in 0..self.lattice.degree() {
                w.copy_from_slice(&v);
                match self.lattice.geometry() {
                    Geometry::Hypercubic(_) => w[k / 2] += if k % 2 == 1 { 1 } else { -1 },
                    Geometry::Triangular => {
                        w[0] += TRI_STEPS[k].0;
                        w[1] += TRI_STEPS[k].1;
                    }
                }
                assert!(w.iter().all(|x| x.abs() <= r), "exploration left the box");
                if triangular {
                    if !self.visit(&w) {
                        continue;
                    }
                    self.queries += 1;
                    if !open(site_label(&w)) {
                        continue;
                    }
                } else {
                    if self.is_seen(&w) {
                        continue;
                    }
                    self.queries += 1;
                    let label = if k % 2 == 1 {
                        bond_label(&v, k / 2)
                    } else {
                        bond_label(&w, k / 2)
                    };
                    if !open(label) {
                        continue;
                    }
                    self.visit(&w);
                }
                if self.on_boundary(&w) {
                    return true;
                }
                self.stack.extend_from_slice(&w);
            }
        }
        false
    }

    fn is_seen(&self, c: &[i64]) -> bool {
        match &self.marks {
            Marks::Dense { stamp, generation } => {
                let mut idx = 0usize;
                for &x in c.iter().rev() {
                    idx = idx * self.side + (x + self.r) as usize;
                }
                stamp[idx] == *generation
            }
            Marks::Sparse(set) => set.contains(c),
        }
    }

    /// One Bernoulli(`p`) trial with unit uniforms drawn from `key`.
    pub fn trial(&mut self, p: f64, key: Key) -> bool {
        self.connects(|label| key.uniform_at(label) < p)
    }
}

/// `P_p(0 <-> ∂B_r)` indicator for one configuration keyed by `key`.
pub fn one_arm_trial(lattice: LatticeKind, r: u64, p: f64, key: Key) -> Result<bool, PercolationError> {
    check_p(p)?;
    Ok(BoxExplorer::new(lattice, r)?.trial(p, key))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum PRule {
    Fixed { p: f64 },
    /// `p = p_c + r^(-1/nu)`, capped at 1.
    CriticalWindow { nu: f64 },
}

impl PRule {
    pub fn p_at(&self, lattice: &LatticeKind, r: u64) -> Result<f64, PercolationError> {
        match *self {
            PRule::Fixed { p } => {
                check_p(p)?;
                Ok(p)
            }
            PRule::CriticalWindow { nu } => {
                let pc = lattice
                    .critical_probability()
                    .ok_or_else(|| PercolationError::NoCriticalValue(lattice.to_string()))?;
                Ok((pc + (r as f64).powf(-1.0 / nu)).min(1.0))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneArmConfig {
    pub lattice: LatticeKind,
    pub radii: Vec<u64>,
    pub rule: PRule,
    pub trials: u64,
    pub seed: u64,
    pub threads: usize,
    pub fit_cutoff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneArmRow {
    pub r: u64,
    pub p: f64,
    pub trials: u64,
    pub successes: u64,
    pub phat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneArmResult {
    pub rows: Vec<OneArmRow>,
    /// Log-log fit over rows with `r >= fit_cutoff` and `phat > 0`.
    pub fit: Option<FitResult>,
}

/// Count successes of `trials` indexed trials, chunked so each worker reuses
/// one explorer.
fn count_successes<F>(trials: u64, threads: usize, make: impl Fn() -> BoxExplorer + Sync, run: F) -> u64
where
    F: Fn(&mut BoxExplorer, u64) -> bool + Sync,
{
    let chunks = (trials as usize).div_ceil(CHUNK);
    run_indexed(threads, chunks, |c| {
        let mut explorer = make();
        let lo = (c * CHUNK) as u64;
        let hi = (lo + CHUNK as u64).min(trials);
        (lo..hi).filter(|&i| run(&mut explorer, i)).count() as u64
    })
    .into_iter()
    .sum()
}

pub fn one_arm_sweep(cfg: &OneArmConfig) -> Result<OneArmResult, PercolationError> {
    if cfg.radii.is_empty() || cfg.trials == 0 {
        return Err(PercolationError::Config("need at least one radius and one trial".into()));
    }
    if cfg.lattice.torus_side().is_some() {
        return Err(PercolationError::TorusNotAllowed);
    }
    let mut rows = Vec::with_capacity(cfg.radii.len());
    for &r in &cfg.radii {
        if r == 0 {
            return Err(PercolationError::Radius);
        }
        let p = cfg.rule.p_at(&cfg.lattice, r)?;
        let base = Key::root(cfg.seed).child(r);
        let lattice = cfg.lattice;
        let successes = count_successes(
            cfg.trials,
            cfg.threads,
            || BoxExplorer::new(lattice, r).expect("validated"),
            |ex, i| ex.trial(p, base.child(i)),
        );
        let (ci_lo, ci_hi) = wilson_interval(successes, cfg.trials, Z95);
        rows.push(OneArmRow {
            r,
            p,
            trials: cfg.trials,
            successes,
            phat: successes as f64 / cfg.trials as f64,
            ci_lo,
            ci_hi,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|row| row.successes > 0)
        .map(|row| (row.r as f64, row.phat))
        .collect();
    let fit = loglog_fit(&points, cfg.fit_cutoff).ok();
    Ok(OneArmResult { rows, fit })
}

/// Open clusters of a torus configuration: bonds on `Z^d` (every vertex
/// belongs to some cluster), sites on the triangular lattice (closed sites
/// belong to none).
pub struct Clusters {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl Clusters {
    pub fn new(graph: &TorusGraph, open: &[bool]) -> Self {
        let n = graph.n_vertices();
        let mut c = Clusters {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        };
        if graph.kind().is_triangular() {
            for v in 0..n {
                if !open[v] {
                    continue;
                }
                for &w in graph.neighbors(v) {
                    if open[w as usize] {
                        c.union(v, w as usize);
                    }
                }
            }
        } else {
            for (u, _) in open.iter().enumerate().filter(|(_, &o)| o) {
                let (a, b) = graph.bond_endpoints(u);
                c.union(a, b);
            }
        }
        c
    }

    pub fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] as usize != v {
            let gp = self.parent[self.parent[v] as usize];
            self.parent[v] = gp;
            v = gp as usize;
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a as u32;
        self.size[a] += self.size[b];
    }

    pub fn cluster_size(&mut self, v: usize) -> usize {
        let root = self.find(v);
        self.size[root] as usize
    }
}

/// Indicator of the largest open cluster; ties go to the cluster holding the
/// smallest vertex index. All-false when no site is open.
pub fn largest_cluster_mask(graph: &TorusGraph, open: &[bool]) -> Vec<bool> {
    let n = graph.n_vertices();
    let mut clusters = Clusters::new(graph, open);
    let eligible = |v: usize| !graph.kind().is_triangular() || open[v];
    let mut best: Option<(usize, usize)> = None;
    // Scanning vertices in index order meets each cluster first at its
    // smallest vertex, so a strict comparison keeps the tie-break.
    for v in 0..n {
        if !eligible(v) {
            continue;
        }
        let root = clusters.find(v);
        let size = clusters.size[root] as usize;
        if best.map_or(true, |(_, s)| size > s) {
            best = Some((root, size));
        }
    }
    match best {
        None => vec![false; n],
        Some((root, _)) => (0..n).map(|v| eligible(v) && clusters.find(v) == root).collect(),
    }
}

/// Bernoulli(`p`) torus configuration with unit `u` open iff its uniform is
/// below `p`.
pub fn torus_configuration(graph: &TorusGraph, p: f64, key: Key) -> Vec<bool> {
    (0..graph.n_units()).map(|u| key.uniform_at(u as u64) < p).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaEstimate {
    pub side: usize,
    pub p: f64,
    pub reps: u64,
    pub hits: u64,
    pub theta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Fraction of configurations in which the origin lies in the largest
/// cluster of the torus.
pub fn theta_estimate(
    lattice: LatticeKind,
    p: f64,
    reps: u64,
    seed: u64,
    threads: usize,
) -> Result<ThetaEstimate, PercolationError> {
    check_p(p)?;
    if reps == 0 {
        return Err(PercolationError::Config("reps must be positive".into()));
    }
    let graph = TorusGraph::new(lattice)?;
    let base = Key::root(seed);
    let hits = run_indexed(threads, reps as usize, |i| {
        let config = torus_configuration(&graph, p, base.child(i as u64));
        largest_cluster_mask(&graph, &config)[0]
    })
    .into_iter()
    .filter(|&h| h)
    .count() as u64;
    let (ci_lo, ci_hi) = wilson_interval(hits, reps, Z95);
    Ok(ThetaEstimate {
        side: graph.side(),
        p,
        reps,
        hits,
        theta: hits as f64 / reps as f64,
        ci_lo,
        ci_hi,
    })
}

/// Linear fit of `theta` against `1/L`; the intercept is the extrapolated
/// infinite-volume value.
pub fn theta_extrapolate(estimates: &[ThetaEstimate]) -> Result<FitResult, PercolationError> {
    let xs: Vec<f64> = estimates.iter().map(|e| 1.0 / e.side as f64).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.theta).collect();
    Ok(linear_fit(&xs, &ys)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HMode {
    /// Simulate each unit's history on `[0, t]` and keep those ever open.
    Dynamical,
    /// Static percolation at the ever-open density.
    StaticEquivalent,
}

/// Whether the origin reaches `∂B_r` inside the subgraph of units open at
/// some time in `[0, t]`, started from stationarity at `p_c`.
pub fn h_cluster_trial(
    explorer: &mut BoxExplorer,
    p_c: f64,
    mu: f64,
    t: f64,
    mode: HMode,
    key: Key,
) -> bool {
    match mode {
        HMode::Dynamical => explorer.connects(|label| unit_ever_open(key.child(label), p_c, mu, t)),
        HMode::StaticEquivalent => explorer.trial(ever_open_params(p_c, mu, t), key),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HClusterConfig {
    pub lattice: LatticeKind,
    pub p_c: f64,
    pub mu: f64,
    pub t: f64,
    pub r: u64,
    pub trials: u64,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HClusterResult {
    pub mu: f64,
    pub t: f64,
    pub r: u64,
    pub p_static: f64,
    pub trials: u64,
    pub dynamical: u64,
    pub static_equivalent: u64,
    pub z: f64,
    pub p_value: f64,
}

pub fn h_cluster_experiment(cfg: &HClusterConfig) -> Result<HClusterResult, PercolationError> {
    check_p(cfg.p_c)?;
    if !(cfg.mu > 0.0) || !(cfg.t >= 0.0) {
        return Err(PercolationError::Config("mu must be positive and t nonnegative".into()));
    }
    BoxExplorer::new(cfg.lattice, cfg.r)?;
    let run = |mode: HMode, tag: u64| {
        let base = Key::root(cfg.seed).child(tag);
        count_successes(
            cfg.trials,
            cfg.threads,
            || BoxExplorer::new(cfg.lattice, cfg.r).expect("validated"),
            |ex, i| h_cluster_trial(ex, cfg.p_c, cfg.mu, cfg.t, mode, base.child(i)),
        )
    };
    let dynamical = run(HMode::Dynamical, 0);
    let static_equivalent = run(HMode::StaticEquivalent, 1);
    let (z, p_value) = two_proportion_test(dynamical, cfg.trials, static_equivalent, cfg.trials)?;
    Ok(HClusterResult {
        mu: cfg.mu,
        t: cfg.t,
        r: cfg.r,
        p_static: ever_open_params(cfg.p_c, cfg.mu, cfg.t),
        trials: cfg.trials,
        dynamical,
        static_equivalent,
        z,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z2() -> LatticeKind {
        LatticeKind::hypercubic(2).unwrap()
    }

    fn tri() -> LatticeKind {
        LatticeKind::triangular()
    }

    #[test]
    fn full_and_empty() {
        for lattice in [z2(), tri(), LatticeKind::hypercubic(3).unwrap()] {
            for r in [1, 4, 9] {
                assert!(one_arm_trial(lattice, r, 1.0, Key::root(r)).unwrap());
                assert!(!one_arm_trial(lattice, r, 0.0, Key::root(r)).unwrap());
            }
        }
        assert!(one_arm_trial(z2(), 0, 0.5, Key::root(0)).is_err());
        assert!(one_arm_trial(z2().with_torus(8).unwrap(), 2, 0.5, Key::root(0)).is_err());
    }

    #[test]
    fn radius_one_exact_rules() {
        // r = 1: success iff (site) the origin and some neighbor are open,
        // (bond) some incident bond is open.
        let origin = [0i64, 0];
        let mut ex = BoxExplorer::new(tri(), 1).unwrap();
        for mask in 0u32..128 {
            let labels: Vec<u64> = std::iter::once(site_label(&origin))
                .chain(TRI_STEPS.iter().map(|&(x, y)| site_label(&[x, y])))
                .collect();
            let open = |l: u64| {
                let i = labels.iter().position(|&x| x == l).expect("queried outside B_1");
                mask >> i & 1 == 1
            };
            let expect = mask & 1 == 1 && mask >> 1 != 0;
            assert_eq!(ex.connects(open), expect, "mask {mask:07b}");
        }
        let mut ex = BoxExplorer::new(z2(), 1).unwrap();
        let bonds = [bond_label(&[-1, 0], 0), bond_label(&[0, 0], 0), bond_label(&[0, -1], 1), bond_label(&[0, 0], 1)];
        for mask in 0u32..16 {
            let open = |l: u64| mask >> bonds.iter().position(|&x| x == l).unwrap() & 1 == 1;
            assert_eq!(ex.connects(open), mask != 0);
        }
    }

    #[test]
    fn radius_one_frequencies() {
        let n = 200_000u64;
        let mut ex = BoxExplorer::new(tri(), 1).unwrap();
        let k = (0..n).filter(|&i| ex.trial(0.5, Key::root(3).child(i))).count() as f64;
        let se = (63.0 / 128.0 * 65.0 / 128.0 / n as f64).sqrt();
        assert!((k / n as f64 - 63.0 / 128.0).abs() < 4.0 * se);
        let mut ex = BoxExplorer::new(z2(), 1).unwrap();
        let k = (0..n).filter(|&i| ex.trial(0.5, Key::root(4).child(i))).count() as f64;
        let se = (15.0 / 256.0 / n as f64).sqrt();
        assert!((k / n as f64 - 15.0 / 16.0).abs() < 4.0 * se);
    }

    #[test]
    fn monotone_coupling() {
        for lattice in [z2(), tri()] {
            let mut explorers: Vec<BoxExplorer> =
                [2u64, 4, 8, 16].iter().map(|&r| BoxExplorer::new(lattice, r).unwrap()).collect();
            let ps = [0.3, 0.45, 0.5, 0.55, 0.7];
            for i in 0..1000u64 {
                let key = Key::root(99).child(i);
                let grid: Vec<Vec<bool>> = explorers
                    .iter_mut()
                    .map(|ex| ps.iter().map(|&p| ex.trial(p, key)).collect())
                    .collect();
                for row in &grid {
                    assert!(row.windows(2).all(|w| w[0] <= w[1]), "not monotone in p");
                }
                for pair in grid.windows(2) {
                    assert!(pair[0].iter().zip(&pair[1]).all(|(a, b)| a >= b), "not monotone in r");
                }
            }
        }
    }

    #[test]
    fn sparse_marks_agree_with_dense() {
        let mut dense = BoxExplorer::new(tri(), 12).unwrap();
        let mut sparse = BoxExplorer::new(tri(), 12).unwrap();
        sparse.marks = Marks::Sparse(FxHashSet::default());
        for i in 0..2000 {
            let key = Key::root(5).child(i);
            assert_eq!(dense.trial(0.5, key), sparse.trial(0.5, key));
            assert_eq!(dense.last_queries(), sparse.last_queries());
        }
    }

    #[test]
    fn queries_bounded_by_box_units() {
        let mut ex = BoxExplorer::new(tri(), 5).unwrap();
        for i in 0..500 {
            ex.trial(0.6, Key::root(8).child(i));
            assert!(ex.last_queries() <= 121);
        }
        let mut ex = BoxExplorer::new(z2(), 5).unwrap();
        for i in 0..500 {
            ex.trial(0.6, Key::root(8).child(i));
            assert!(ex.last_queries() <= 2 * 11 * 10);
        }
    }

    #[test]
    fn sweep_shapes() {
        let cfg = OneArmConfig {
            lattice: tri(),
            radii: vec![8, 16, 32],
            rule: PRule::Fixed { p: 1.0 },
            trials: 100,
            seed: 1,
            threads: 1,
            fit_cutoff: DEFAULT_FIT_CUTOFF,
        };
        let res = one_arm_sweep(&cfg).unwrap();
        assert!(res.rows.iter().all(|r| r.phat == 1.0 && r.successes == r.trials));
        let fit = res.fit.unwrap();
        assert_eq!(fit.slope, 0.0);

        let window = PRule::CriticalWindow { nu: 4.0 / 3.0 };
        assert!((window.p_at(&tri(), 16).unwrap() - 0.625).abs() < 1e-15);
        assert!(window.p_at(&LatticeKind::hypercubic(3).unwrap(), 16).is_err());
        let cfg = OneArmConfig {
            rule: PRule::Fixed { p: 0.5 },
            trials: 3000,
            threads: 2,
            ..cfg
        };
        let a = one_arm_sweep(&cfg).unwrap();
        let b = one_arm_sweep(&OneArmConfig { threads: 1, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.windows(2).all(|w| w[0].phat >= w[1].phat));
    }

    #[test]
    fn largest_cluster_tie_break_and_extremes() {
        let graph = TorusGraph::new(z2().with_torus(4).unwrap()).unwrap();
        let none = vec![false; graph.n_units()];
        let mask = largest_cluster_mask(&graph, &none);
        // All singletons: the one holding vertex 0 wins.
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        assert!(mask[0]);
        let all = vec![true; graph.n_units()];
        assert!(largest_cluster_mask(&graph, &all).iter().all(|&m| m));

        // Two equal bonds: {5,6} and {1,2}; the cluster with vertex 1 wins.
        let mut open = none.clone();
        open[5 * 2] = true;
        open[1 * 2] = true;
        let mask = largest_cluster_mask(&graph, &open);
        let members: Vec<usize> = (0..16).filter(|&v| mask[v]).collect();
        assert_eq!(members, vec![1, 2]);

        let tg = TorusGraph::new(tri().with_torus(4).unwrap()).unwrap();
        assert!(largest_cluster_mask(&tg, &vec![false; 16]).iter().all(|&m| !m));
    }

    #[test]
    fn theta_extremes() {
        let lattice = z2().with_torus(8).unwrap();
        assert_eq!(theta_estimate(lattice, 1.0, 50, 1, 1).unwrap().theta, 1.0);
        // With no open bonds the origin's singleton wins the tie-break.
        let tl = tri().with_torus(8).unwrap();
        assert_eq!(theta_estimate(tl, 0.0, 50, 1, 1).unwrap().theta, 0.0);
        assert_eq!(theta_estimate(tl, 1.0, 50, 1, 1).unwrap().theta, 1.0);
    }

    #[test]
    fn theta_supercritical_monotone_on_grid() {
        let lattice = z2().with_torus(32).unwrap();
        let ps = [0.6, 0.7, 0.8, 0.9];
        let est: Vec<f64> = ps
            .iter()
            .map(|&p| theta_estimate(lattice, p, 2000, 12, 1).unwrap().theta)
            .collect();
        assert!(est.windows(2).all(|w| w[0] <= w[1]), "{est:?}");
    }

    #[test]
    fn origin_cluster_size_is_monotone() {
        let graph = TorusGraph::new(z2().with_torus(16).unwrap()).unwrap();
        for i in 0..200 {
            let key = Key::root(4).child(i);
            let sizes: Vec<usize> = [0.3, 0.5, 0.7]
                .iter()
                .map(|&p| Clusters::new(&graph, &torus_configuration(&graph, p, key)).cluster_size(0))
                .collect();
            assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn extrapolation_intercept() {
        let mk = |side: usize, theta: f64| ThetaEstimate {
            side,
            p: 0.8,
            reps: 1,
            hits: 0,
            theta,
            ci_lo: 0.0,
            ci_hi: 1.0,
        };
        let fit = theta_extrapolate(&[mk(32, 0.9 - 1.0 / 32.0), mk(64, 0.9 - 1.0 / 64.0), mk(128, 0.9 - 1.0 / 128.0)]).unwrap();
        assert!((fit.intercept - 0.9).abs() < 1e-12);
    }

    #[test]
    fn h_cluster_limits() {
        let mut ex = BoxExplorer::new(tri(), 6).unwrap();
        for i in 0..300 {
            let key = Key::root(2).child(i);
            // t = 0: both modes are one-arm at p_c.
            let st = h_cluster_trial(&mut ex, 0.5, 0.1, 0.0, HMode::StaticEquivalent, key);
            assert_eq!(st, ex.trial(0.5, key));
            // Saturated: everything was open at some point.
            assert!(h_cluster_trial(&mut ex, 0.5, 0.3, 1e4, HMode::Dynamical, key));
            assert!(h_cluster_trial(&mut ex, 0.5, 0.3, 1e4, HMode::StaticEquivalent, key));
        }
    }

    #[test]
    fn h_cluster_equivalence_small() {
        let cfg = HClusterConfig {
            lattice: tri(),
            p_c: 0.5,
            mu: 0.1,
            t: 10.0,
            r: 8,
            trials: 20_000,
            seed: 3,
            threads: 1,
        };
        let res = h_cluster_experiment(&cfg).unwrap();
        assert!(res.p_value > 1e-3, "{res:?}");
    }

    proptest! {
        #[test]
        fn one_arm_is_deterministic(seed in any::<u64>(), r in 1u64..12, p in 0.0f64..1.0) {
            let a = one_arm_trial(tri(), r, p, Key::root(seed)).unwrap();
            let b = one_arm_trial(tri(), r, p, Key::root(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

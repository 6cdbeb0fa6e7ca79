//! Rate-1 random walk on a dynamical percolation environment.
//!
//! Attempts arrive at the times of a rate-1 Poisson clock. At an attempt the
//! walker picks one of its `degree` neighbor directions uniformly and moves
//! iff the controlling unit is open at that instant: the bond on `Z^d`, the
//! destination site on the triangular lattice.

use serde::Serialize;
use thiserror::Error;

use crate::env::{EnvError, EnvParams, LazyEnvironment, TorusTrajectory, TrajectoryCursor};
use crate::lattice::{LatticeKind, LatticePoint, TorusGraph};
use crate::parallel::try_run_indexed;
use crate::rng::{Key, Stream};
use crate::stats::{linear_fit, mean_ci, wilson_interval, FitResult, StatsError, Z95};

const ENV_TAG: u64 = 1;
const WALK_TAG: u64 = 2;

/// Minimum replica count for [`sigma_hat`].
pub const SIGMA_MIN_REPLICAS: usize = 100;
/// Minimum sample count for [`tail_survival`].
pub const TAIL_MIN_SAMPLES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid walk configuration: {0}")]
    Config(String),
    #[error("need at least {needed} replicas at the last checkpoint, got {got}")]
    TooFewReplicas { needed: usize, got: usize },
}

/// Anything that can answer "is step `k` from `v` open at time `t`".
pub trait WalkEnvironment {
    fn lattice(&self) -> LatticeKind;
    fn step_open(&mut self, v: &LatticePoint, k: usize, t: f64) -> Result<bool, EnvError>;
}

impl WalkEnvironment for LazyEnvironment {
    fn lattice(&self) -> LatticeKind {
        self.params().lattice
    }

    fn step_open(&mut self, v: &LatticePoint, k: usize, t: f64) -> Result<bool, EnvError> {
        self.query_step(v, k, t)
    }
}

/// Walk environment reading a fully realized torus trajectory.
pub struct TrajectoryEnvironment<'a> {
    graph: &'a TorusGraph,
    cursor: TrajectoryCursor<'a>,
}

impl<'a> TrajectoryEnvironment<'a> {
    pub fn new(traj: &'a TorusTrajectory) -> Result<Self, EnvError> {
        let (t0, _) = traj.window();
        Ok(TrajectoryEnvironment {
            graph: traj.graph(),
            cursor: traj.cursor_at(t0)?,
        })
    }
}

impl WalkEnvironment for TrajectoryEnvironment<'_> {
    fn lattice(&self) -> LatticeKind {
        self.graph.kind()
    }

    fn step_open(&mut self, v: &LatticePoint, k: usize, t: f64) -> Result<bool, EnvError> {
        self.cursor.advance_to(t);
        let unit = self.graph.step_unit(self.graph.index(v), k);
        Ok(self.cursor.config()[unit])
    }
}

/// Walker snapshot. Positions are unwrapped lattice coordinates even when
/// the environment lives on a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkState {
    pub position: LatticePoint,
    pub clock: f64,
    pub attempts: u64,
}

/// Run the walk from the origin up to `t_max`, recording the state at each
/// checkpoint.
pub fn simulate_walk<E: WalkEnvironment>(
    env: &mut E,
    t_max: f64,
    checkpoints: &[f64],
    stream: &mut Stream,
) -> Result<Vec<WalkState>, WalkError> {
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(WalkError::Config("checkpoints must be sorted".into()));
    }
    if checkpoints.last().is_some_and(|&c| c > t_max) {
        return Err(WalkError::Config("checkpoints must not exceed t_max".into()));
    }
    let env_lattice = env.lattice();
    let lattice = env_lattice.without_torus();
    let degree = lattice.degree() as u64;
    let mut position = lattice.origin();
    let mut attempts = 0u64;
    let mut clock = 0.0;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    let record = |position: &LatticePoint, attempts: u64, at: f64, out: &mut Vec<WalkState>| {
        assert!(
            lattice.graph_distance(&lattice.origin(), position) <= attempts,
            "displacement exceeds attempt count"
        );
        out.push(WalkState {
            position: position.clone(),
            clock: at,
            attempts,
        });
    };
    loop {
        let next = clock + stream.exponential(1.0);
        while next_cp < checkpoints.len() && checkpoints[next_cp] < next {
            record(&position, attempts, checkpoints[next_cp], &mut out);
            next_cp += 1;
        }
        if next > t_max {
            break;
        }
        clock = next;
        attempts += 1;
        let k = stream.below(degree) as usize;
        if env.step_open(&position, k, clock)? {
            lattice.step_in_place(&mut position, k);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsdConfig {
    pub lattice: LatticeKind,
    pub p: f64,
    pub mu: f64,
    pub allow_large_mu: bool,
    pub t_max: f64,
    pub checkpoints: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub threads: usize,
}

impl MsdConfig {
    pub fn env_params(&self) -> Result<EnvParams, WalkError> {
        Ok(EnvParams::checked(self.lattice, self.p, self.mu, self.allow_large_mu)?)
    }

    fn validate(&self) -> Result<EnvParams, WalkError> {
        if self.replicas < 2 {
            return Err(WalkError::Config(format!("replicas must be >= 2, got {}", self.replicas)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(WalkError::Config(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.checkpoints.is_empty() {
            return Err(WalkError::Config("no checkpoints".into()));
        }
        self.env_params()
    }
}

/// Per-replica observations at each checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaPath {
    pub dist: Vec<u64>,
    pub sq_l2: Vec<f64>,
    pub attempts: Vec<u64>,
}

/// One replica with fresh environment and walk streams keyed by `index`.
pub fn run_replica(cfg: &MsdConfig, params: EnvParams, index: usize) -> Result<ReplicaPath, WalkError> {
    let key = Key::root(cfg.seed).child(index as u64);
    let mut env = LazyEnvironment::new(params, key.child(ENV_TAG));
    let mut stream = key.child(WALK_TAG).stream();
    let states = simulate_walk(&mut env, cfg.t_max, &cfg.checkpoints, &mut stream)?;
    Ok(path_of(&cfg.lattice.without_torus(), &states))
}

fn path_of(lattice: &LatticeKind, states: &[WalkState]) -> ReplicaPath {
    let origin = lattice.origin();
    ReplicaPath {
        dist: states.iter().map(|s| lattice.graph_distance(&origin, &s.position)).collect(),
        sq_l2: states.iter().map(|s| lattice.sq_euclidean_norm(&s.position)).collect(),
        attempts: states.iter().map(|s| s.attempts).collect(),
    }
}

/// All replicas of `cfg`, in replica order.
pub fn walk_replicas(cfg: &MsdConfig) -> Result<Vec<ReplicaPath>, WalkError> {
    let params = cfg.validate()?;
    try_run_indexed(cfg.threads, cfg.replicas, |i| run_replica(cfg, params, i))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MsdRow {
    pub t: f64,
    pub replicas: usize,
    pub mean_sq_graph_dist: f64,
    pub stderr: f64,
    pub mean_sq_l2: f64,
    pub stderr_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsdTable {
    pub lattice: LatticeKind,
    pub p: f64,
    pub mu: f64,
    pub seed: u64,
    pub rows: Vec<MsdRow>,
}

/// Aggregate replica paths into per-checkpoint means and standard errors.
pub fn msd_table(cfg: &MsdConfig, paths: &[ReplicaPath]) -> Result<MsdTable, WalkError> {
    let mut rows = Vec::with_capacity(cfg.checkpoints.len());
    for (c, &t) in cfg.checkpoints.iter().enumerate() {
        let graph: Vec<f64> = paths.iter().map(|r| (r.dist[c] as f64).powi(2)).collect();
        let l2: Vec<f64> = paths.iter().map(|r| r.sq_l2[c]).collect();
        let g = mean_ci(&graph)?;
        let e = mean_ci(&l2)?;
        rows.push(MsdRow {
            t,
            replicas: paths.len(),
            mean_sq_graph_dist: g.mean,
            stderr: g.stderr,
            mean_sq_l2: e.mean,
            stderr_l2: e.stderr,
        });
    }
    Ok(MsdTable {
        lattice: cfg.lattice,
        p: cfg.p,
        mu: cfg.mu,
        seed: cfg.seed,
        rows,
    })
}

pub fn msd_experiment(cfg: &MsdConfig) -> Result<MsdTable, WalkError> {
    let paths = walk_replicas(cfg)?;
    msd_table(cfg, &paths)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigmaEstimate {
    pub t: f64,
    pub sigma2: f64,
    pub ci: (f64, f64),
    pub sigma2_l2: f64,
    pub ci_l2: (f64, f64),
    /// Slope of the mean squared graph distance against `t` over the upper
    /// half of the checkpoints; close to `sigma2` once the walk is diffusive.
    pub slope: Option<f64>,
}

/// `MSD(t_max) / t_max` with a normal interval.
pub fn sigma_hat(table: &MsdTable) -> Result<SigmaEstimate, WalkError> {
    let last = table
        .rows
        .last()
        .ok_or_else(|| WalkError::Config("empty table".into()))?;
    if last.replicas < SIGMA_MIN_REPLICAS {
        return Err(WalkError::TooFewReplicas {
            needed: SIGMA_MIN_REPLICAS,
            got: last.replicas,
        });
    }
    let t = last.t;
    let ci = |m: f64, se: f64| ((m - Z95 * se) / t, (m + Z95 * se) / t);
    let half = &table.rows[table.rows.len() / 2..];
    let slope = if half.len() >= 2 {
        let xs: Vec<f64> = half.iter().map(|r| r.t).collect();
        let ys: Vec<f64> = half.iter().map(|r| r.mean_sq_graph_dist).collect();
        linear_fit(&xs, &ys).ok().map(|f| f.slope)
    } else {
        None
    };
    Ok(SigmaEstimate {
        t,
        sigma2: last.mean_sq_graph_dist / t,
        ci: ci(last.mean_sq_graph_dist, last.stderr),
        sigma2_l2: last.mean_sq_l2 / t,
        ci_l2: ci(last.mean_sq_l2, last.stderr_l2),
        slope,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub l: u64,
    pub count: u64,
    pub n: u64,
    pub survival: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Empirical `P(dist >= L)` with Wilson intervals.
pub fn tail_survival(samples: &[u64], grid: &[u64]) -> Result<Vec<SurvivalPoint>, WalkError> {
    if samples.len() < TAIL_MIN_SAMPLES {
        return Err(WalkError::Stats(StatsError::TooFewSamples {
            needed: TAIL_MIN_SAMPLES,
            got: samples.len(),
        }));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    Ok(grid
        .iter()
        .map(|&l| {
            let count = n - sorted.partition_point(|&x| x < l) as u64;
            let (ci_lo, ci_hi) = wilson_interval(count, n, Z95);
            SurvivalPoint {
                l,
                count,
                n,
                survival: count as f64 / n as f64,
                ci_lo,
                ci_hi,
            }
        })
        .collect())
}

/// Least-squares fit of `ln S(L)` against `L^2` over `L in [lo, hi]`,
/// skipping points with zero survival.
pub fn tail_fit(points: &[SurvivalPoint], lo: u64, hi: u64) -> Result<FitResult, WalkError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.l >= lo && p.l <= hi && p.count > 0)
        .map(|p| ((p.l as f64).powi(2), p.survival.ln()))
        .unzip();
    Ok(linear_fit(&xs, &ys)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovTypeRow {
    pub k: u64,
    pub ratio: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Ratios `MSD(k·s) / (k·MSD(s))` from the same replicas, with delta-method
/// intervals that account for the correlation between the two times.
pub fn markov_type_check(base: &MsdConfig, ks: &[u64], s: f64) -> Result<Vec<MarkovTypeRow>, WalkError> {
    if ks.iter().any(|&k| k == 0) {
        return Err(WalkError::Config("k must be >= 1".into()));
    }
    let mut times: Vec<f64> = std::iter::once(s).chain(ks.iter().map(|&k| k as f64 * s)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let cfg = MsdConfig {
        t_max: *times.last().unwrap(),
        checkpoints: times.clone(),
        ..base.clone()
    };
    let paths = walk_replicas(&cfg)?;
    markov_type_rows(&paths, &times, ks, s)
}

fn markov_type_rows(paths: &[ReplicaPath], times: &[f64], ks: &[u64], s: f64) -> Result<Vec<MarkovTypeRow>, WalkError> {
    let at = |t: f64| times.iter().position(|&x| x == t).unwrap();
    let sq = |c: usize| -> Vec<f64> { paths.iter().map(|r| (r.dist[c] as f64).powi(2)).collect() };
    let b = sq(at(s));
    let n = b.len() as f64;
    let mb = b.iter().sum::<f64>() / n;
    let mut rows = Vec::new();
    for &k in ks {
        let a = sq(at(k as f64 * s));
        let ma = a.iter().sum::<f64>() / n;
        let ratio = ma / (k as f64 * mb);
        let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&b) {
            vaa += (x - ma) * (x - ma);
            vbb += (y - mb) * (y - mb);
            vab += (x - ma) * (y - mb);
        }
        let d = n - 1.0;
        let rel = (vaa / d) / (ma * ma) + (vbb / d) / (mb * mb) - 2.0 * (vab / d) / (ma * mb);
        let stderr = ratio * (rel.max(0.0) / n).sqrt();
        rows.push(MarkovTypeRow {
            k,
            ratio,
            stderr,
            ci_lo: ratio - Z95 * stderr,
            ci_hi: ratio + Z95 * stderr,
        });
    }
    Ok(rows)
}

//! Dynamical percolation environments.
//!
//! Every unit (bond of `Z^d`, site of the triangular lattice) refreshes at
//! the times of a rate-`mu` Poisson clock and comes back open with
//! probability `p`. The initial configuration is product Bernoulli(`p`), so
//! the process is stationary.
//!
//! [`LazyEnvironment`] realizes the process on an infinite lattice only at the
//! (unit, time) pairs that are queried. Between two queries of the same unit
//! at distance `dt`, at least one refresh happened with probability
//! `1 - exp(-mu·dt)`, in which case the new state is a fresh Bernoulli(`p`);
//! otherwise the state is kept. This is exact for the joint law at the queried
//! times, which is all a walker ever observes.
//!
//! [`TorusTrajectory`] realizes every refresh event on a finite torus over a
//! time window.

use std::io::{self, Write};
use std::sync::Arc;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeKind, LatticePoint, TorusGraph, Unit};
use crate::rng::{Key, Stream};

/// Upper bound on `mu` unless explicitly lifted.
pub const STANDING_MU_BOUND: f64 = 1.0 / std::f64::consts::E;

/// `mu·(now - last) >= EVICTION_EXPONENT` means the unit refreshed with
/// probability at least `1 - 2^-64`.
pub const EVICTION_EXPONENT: f64 = 64.0 * std::f64::consts::LN_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("probability p must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("refresh rate mu must be positive and finite, got {0}")]
    Rate(f64),
    #[error("refresh rate mu = {0} exceeds 1/e; pass the large-mu override to allow it")]
    RateAboveBound(f64),
    #[error("unit queried at t = {requested} after a query at t = {last}")]
    NonMonotoneQuery { last: f64, requested: f64 },
    #[error("time window [{t0}, {t1}] is empty")]
    EmptyWindow { t0: f64, t1: f64 },
    #[error("time {t} lies outside the trajectory window [{t0}, {t1}]")]
    OutOfWindow { t: f64, t0: f64, t1: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvParams {
    pub lattice: LatticeKind,
    pub p: f64,
    pub mu: f64,
}

impl EnvParams {
    /// Parameters within the standing assumption `mu <= 1/e`.
    pub fn new(lattice: LatticeKind, p: f64, mu: f64) -> Result<Self, EnvError> {
        let params = Self::with_large_mu(lattice, p, mu)?;
        if mu > STANDING_MU_BOUND {
            return Err(EnvError::RateAboveBound(mu));
        }
        Ok(params)
    }

    /// Same as [`EnvParams::new`] without the `mu <= 1/e` cap.
    pub fn with_large_mu(lattice: LatticeKind, p: f64, mu: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(EnvError::Probability(p));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(EnvError::Rate(mu));
        }
        Ok(EnvParams { lattice, p, mu })
    }

    pub fn checked(lattice: LatticeKind, p: f64, mu: f64, allow_large_mu: bool) -> Result<Self, EnvError> {
        if allow_large_mu {
            Self::with_large_mu(lattice, p, mu)
        } else {
            Self::new(lattice, p, mu)
        }
    }
}

/// Density of the subgraph of units open at least once during `[0, t]`:
/// `p + (1 - p)(1 - exp(-mu·t·p))`.
pub fn ever_open_params(p: f64, mu: f64, t: f64) -> f64 {
    p + (1.0 - p) * -(-mu * t * p).exp_m1()
}

/// Simulates one unit's full history on `[0, t]` and reports whether it was
/// ever open. Independent of [`ever_open_params`]; the two agree in law.
pub fn unit_ever_open(key: Key, p: f64, mu: f64, t: f64) -> bool {
    let mut s = key.stream();
    if s.bernoulli(p) {
        return true;
    }
    let mut clock = 0.0;
    loop {
        clock += s.exponential(mu);
        if clock > t {
            return false;
        }
        if s.bernoulli(p) {
            return true;
        }
    }
}

#[derive(Clone, Debug)]
struct Record {
    last_time: f64,
    state: bool,
    stream: Stream,
}

/// Exact dynamical percolation on demand, one record per queried unit.
#[derive(Clone, Debug)]
pub struct LazyEnvironment {
    params: EnvParams,
    key: Key,
    records: FxHashMap<Unit, Record>,
}

impl LazyEnvironment {
    pub fn new(params: EnvParams, key: Key) -> Self {
        LazyEnvironment {
            params,
            key,
            records: FxHashMap::default(),
        }
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Number of units with a live record.
    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    /// State of `unit` at time `t`. Queries of one unit must be made at
    /// nondecreasing times.
    pub fn query_unit(&mut self, unit: &Unit, t: f64) -> Result<bool, EnvError> {
        let EnvParams { p, mu, .. } = self.params;
        if let Some(rec) = self.records.get_mut(unit) {
            if t < rec.last_time {
                return Err(EnvError::NonMonotoneQuery {
                    last: rec.last_time,
                    requested: t,
                });
            }
            let dt = t - rec.last_time;
            if dt > 0.0 {
                let refreshed = -(-mu * dt).exp_m1();
                if rec.stream.uniform() < refreshed {
                    rec.state = rec.stream.uniform() < p;
                }
                rec.last_time = t;
            }
            return Ok(rec.state);
        }
        // First query, or first after eviction: a stationary draw from a
        // stream keyed by the unit and the query time.
        let mut stream = self.key.child(unit.label()).child(t.to_bits()).stream();
        let state = stream.uniform() < p;
        self.records.insert(
            unit.clone(),
            Record {
                last_time: t,
                state,
                stream,
            },
        );
        Ok(state)
    }

    /// State of the unit controlling step `k` from `v` (wrapped onto the
    /// torus if the lattice is one).
    pub fn query_step(&mut self, v: &LatticePoint, k: usize, t: f64) -> Result<bool, EnvError> {
        let lattice = self.params.lattice;
        let unit = if lattice.torus_side().is_some() {
            lattice.unit_of_step(&lattice.wrap(v), k)
        } else {
            lattice.unit_of_step(v, k)
        };
        self.query_unit(&unit, t)
    }

    /// Drop records that have refreshed with probability `>= 1 - 2^-64`
    /// since their last query. Returns the number evicted.
    pub fn evict_stale(&mut self, now: f64) -> usize {
        let mu = self.params.mu;
        let before = self.records.len();
        self.records
            .retain(|_, rec| mu * (now - rec.last_time) < EVICTION_EXPONENT);
        before - self.records.len()
    }

    /// Ever-open indicator of each unit over `[0, t]`, sampled from its
    /// product law at density [`ever_open_params`].
    pub fn ever_open_subgraph(&self, units: &[Unit], t: f64) -> Vec<Unit> {
        let q = ever_open_params(self.params.p, self.params.mu, t);
        let key = self.key.child(EVER_OPEN_TAG);
        units
            .iter()
            .filter(|u| key.uniform_at(u.label()) < q)
            .cloned()
            .collect()
    }
}

const EVER_OPEN_TAG: u64 = 0x4556_4552_4f50_454e;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefreshEvent {
    pub time: f64,
    pub unit: u32,
    pub state: bool,
}

/// Complete realization of the environment on a torus over `[t0, t1]`.
#[derive(Clone, Debug)]
pub struct TorusTrajectory {
    params: EnvParams,
    graph: Arc<TorusGraph>,
    t0: f64,
    t1: f64,
    initial: Vec<bool>,
    events: Vec<RefreshEvent>,
}

/// Build the torus graph and sample a trajectory on it.
pub fn torus_trajectory(params: EnvParams, t0: f64, t1: f64, key: Key) -> Result<TorusTrajectory, EnvError> {
    let graph = Arc::new(TorusGraph::new(params.lattice)?);
    TorusTrajectory::generate(graph, params.p, params.mu, t0, t1, key)
}

impl TorusTrajectory {
    pub fn generate(
        graph: Arc<TorusGraph>,
        p: f64,
        mu: f64,
        t0: f64,
        t1: f64,
        key: Key,
    ) -> Result<Self, EnvError> {
        let params = EnvParams::with_large_mu(graph.kind(), p, mu)?;
        if !(t1 > t0) {
            return Err(EnvError::EmptyWindow { t0, t1 });
        }
        let n_units = graph.n_units();
        let mut init_stream = key.child(0).stream();
        let initial: Vec<bool> = (0..n_units).map(|_| init_stream.bernoulli(p)).collect();
        let mut s = key.child(1).stream();
        let rate = mu * n_units as f64;
        let mut events = Vec::with_capacity((rate * (t1 - t0) * 1.1) as usize + 8);
        let mut t = t0;
        loop {
            let next = t + s.exponential(rate);
            if next > t1 {
                break;
            }
            let unit = s.below(n_units as u64) as u32;
            let state = s.bernoulli(p);
            // Gaps below the resolution of `t` would create ties; a zero-length
            // gap has probability zero in the continuous model.
            if next > t {
                events.push(RefreshEvent { time: next, unit, state });
                t = next;
            }
        }
        Ok(TorusTrajectory {
            params,
            graph,
            t0,
            t1,
            initial,
            events,
        })
    }

    /// Trajectory built from explicit parts; event times must be strictly
    /// increasing inside `(t0, t1]`.
    pub fn from_parts(
        graph: Arc<TorusGraph>,
        p: f64,
        mu: f64,
        window: (f64, f64),
        initial: Vec<bool>,
        events: Vec<RefreshEvent>,
    ) -> Result<Self, EnvError> {
        let params = EnvParams::with_large_mu(graph.kind(), p, mu)?;
        let (t0, t1) = window;
        if !(t1 > t0) {
            return Err(EnvError::EmptyWindow { t0, t1 });
        }
        assert_eq!(initial.len(), graph.n_units());
        let mut last = t0;
        for e in &events {
            assert!(e.time > last && e.time <= t1, "event times must increase within the window");
            assert!((e.unit as usize) < graph.n_units());
            last = e.time;
        }
        Ok(TorusTrajectory {
            params,
            graph,
            t0,
            t1,
            initial,
            events,
        })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn graph(&self) -> &Arc<TorusGraph> {
        &self.graph
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn initial(&self) -> &[bool] {
        &self.initial
    }

    pub fn events(&self) -> &[RefreshEvent] {
        &self.events
    }

    fn check_time(&self, t: f64) -> Result<(), EnvError> {
        if t < self.t0 || t > self.t1 {
            return Err(EnvError::OutOfWindow {
                t,
                t0: self.t0,
                t1: self.t1,
            });
        }
        Ok(())
    }

    /// Index of the first event strictly after `t`.
    fn first_event_after(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Configuration at time `t`; right-continuous.
    pub fn config_at(&self, t: f64) -> Result<Vec<bool>, EnvError> {
        self.check_time(t)?;
        let mut config = self.initial.clone();
        for e in &self.events[..self.first_event_after(t)] {
            config[e.unit as usize] = e.state;
        }
        Ok(config)
    }

    /// Cursor positioned at `t`, for forward scans.
    pub fn cursor_at(&self, t: f64) -> Result<TrajectoryCursor<'_>, EnvError> {
        let config = self.config_at(t)?;
        Ok(TrajectoryCursor {
            traj: self,
            config,
            next: self.first_event_after(t),
            time: t,
        })
    }

    /// Units of `region` open at least once during `[t0, t]`.
    pub fn ever_open_subgraph(&self, region: &[usize], t: f64) -> Result<Vec<usize>, EnvError> {
        self.check_time(t)?;
        let mut ever = self.initial.clone();
        for e in &self.events[..self.first_event_after(t)] {
            if e.state {
                ever[e.unit as usize] = true;
            }
        }
        Ok(region.iter().copied().filter(|&u| ever[u]).collect())
    }

    /// Pieces of `[a, b]` on which the configuration is constant, with the
    /// configuration on each. Only state-changing events start a new piece.
    pub fn for_each_segment<F>(&self, a: f64, b: f64, mut f: F) -> Result<(), EnvError>
    where
        F: FnMut(f64, f64, &[bool]),
    {
        self.check_time(a)?;
        self.check_time(b)?;
        let mut cursor = self.cursor_at(a)?;
        let mut start = a;
        loop {
            let flip = cursor.next_flip_before(b);
            match flip {
                Some(t) => {
                    if t > start {
                        f(start, t, cursor.config());
                    }
                    cursor.advance_to(t);
                    start = t;
                }
                None => {
                    if b > start {
                        f(start, b, cursor.config());
                    }
                    return Ok(());
                }
            }
        }
    }

    /// Debug dump: one `time,unit,state` row per event, preceded by the
    /// initial configuration as a `#initial` bitstring comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let bits: String = self.initial.iter().map(|&b| if b { '1' } else { '0' }).collect();
        writeln!(w, "#initial,{bits}")?;
        writeln!(w, "time,unit,state")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.time, e.unit, e.state as u8)?;
        }
        Ok(())
    }
}

/// Forward iterator over a trajectory's configurations.
#[derive(Clone, Debug)]
pub struct TrajectoryCursor<'a> {
    traj: &'a TorusTrajectory,
    config: Vec<bool>,
    next: usize,
    time: f64,
}

impl<'a> TrajectoryCursor<'a> {
    pub fn config(&self) -> &[bool] {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Apply every event with time `<= t`. Times must not go backwards.
    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.time);
        let events = self.traj.events();
        while self.next < events.len() && events[self.next].time <= t {
            let e = events[self.next];
            self.config[e.unit as usize] = e.state;
            self.next += 1;
        }
        self.time = t;
    }

    /// Time of the next state-changing event in `(now, limit)`, if any.
    pub fn next_flip_before(&self, limit: f64) -> Option<f64> {
        let events = self.traj.events();
        let mut shadow: Option<(u32, bool)> = None;
        let mut i = self.next;
        while i < events.len() && events[i].time < limit {
            let e = events[i];
            let current = match shadow {
                Some((u, s)) if u == e.unit => s,
                _ => self.config[e.unit as usize],
            };
            if e.state != current {
                return Some(e.time);
            }
            // A refresh that keeps the state is invisible.
            shadow = None;
            i += 1;
        }
        None
    }

    /// Events in `(now, limit]`, without applying them.
    pub fn pending_until(&self, limit: f64) -> &'a [RefreshEvent] {
        let events = self.traj.events();
        let end = self.next + events[self.next..].partition_point(|e| e.time <= limit);
        &events[self.next..end]
    }
}

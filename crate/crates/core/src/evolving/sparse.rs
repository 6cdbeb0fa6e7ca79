//! Evolving-set steps on tori too large for dense kernels.
//!
//! `Q(S, ·) = 1_S P_{m+1}` is obtained by pushing the indicator of `S` forward
//! through `[m, m+1]`. The vector is kept sparse: it is split into constant
//! pieces only at state changes of units adjacent to its support, and entries
//! below [`PRUNE_BELOW`] are dropped. The dropped mass is accumulated so the
//! total-variation error of each step is known.

use rustc_hash::FxHashMap;

use crate::env::TorusTrajectory;
use crate::lattice::TorusGraph;
use crate::rng::Stream;

use super::kernel::uniformization_weights;
use super::sets::{df_set_step, EvolvingState, ThresholdProfile};
use super::EvolvingError;

/// Entries of the propagated vector below this are discarded.
pub const PRUNE_BELOW: f64 = 1e-15;

/// Dense-indexed sparse vector with an explicit support list.
struct SparseVec {
    value: Vec<f64>,
    support: Vec<u32>,
}

impl SparseVec {
    fn new(n: usize) -> Self {
        SparseVec {
            value: vec![0.0; n],
            support: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &x in &self.support {
            self.value[x as usize] = 0.0;
        }
        self.support.clear();
    }

    #[inline]
    fn add(&mut self, x: usize, v: f64) {
        if self.value[x] == 0.0 {
            self.support.push(x as u32);
        }
        self.value[x] += v;
        // A cancellation to exactly zero cannot happen: all terms are positive.
    }

    fn copy_from(&mut self, other: &SparseVec) {
        self.clear();
        for &x in &other.support {
            self.add(x as usize, other.value[x as usize]);
        }
    }
}

/// Reusable workspace for sparse propagation on one torus.
pub struct SparseStepper {
    start: SparseVec,
    acc: SparseVec,
    term: SparseVec,
    next: SparseVec,
    relevant: Vec<u32>,
    stamp: u32,
    dropped: f64,
    // Dense buffers for supports too large for sparse bookkeeping.
    sources: Vec<u32>,
    dense_term: Vec<f64>,
    dense_next: Vec<f64>,
}

impl SparseStepper {
    pub fn new(graph: &TorusGraph) -> Self {
        let n = graph.n_vertices();
        SparseStepper {
            start: SparseVec::new(n),
            acc: SparseVec::new(n),
            term: SparseVec::new(n),
            next: SparseVec::new(n),
            relevant: vec![0; graph.n_units()],
            stamp: 0,
            dropped: 0.0,
            sources: Vec::new(),
            dense_term: Vec::new(),
            dense_next: Vec::new(),
        }
    }

    /// Total mass discarded by pruning since construction.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped
    }

    fn mark_relevant(&mut self, graph: &TorusGraph, support: &[u32]) {
        for &x in support {
            for &u in graph.step_units(x as usize) {
                self.relevant[u as usize] = self.stamp;
            }
        }
    }

    fn new_stamp(&mut self) {
        if self.stamp == u32::MAX {
            self.relevant.iter_mut().for_each(|s| *s = 0);
            self.stamp = 0;
        }
        self.stamp += 1;
    }

    /// First state change in `(from, limit)` of a unit marked relevant, given
    /// the configuration at `from`.
    fn first_relevant_flip(traj: &TorusTrajectory, config: &[bool], from: f64, limit: f64, relevant: &[u32], stamp: u32) -> f64 {
        let events = traj.events();
        let start = events.partition_point(|e| e.time <= from);
        let mut shadow: FxHashMap<u32, bool> = FxHashMap::default();
        for e in &events[start..] {
            if e.time >= limit {
                break;
            }
            let current = *shadow.get(&e.unit).unwrap_or(&config[e.unit as usize]);
            if e.state != current {
                if relevant[e.unit as usize] == stamp {
                    return e.time;
                }
                shadow.insert(e.unit, e.state);
            }
        }
        limit
    }

    /// `acc ← start · exp(Δ(J - I))` under `config`.
    fn apply_interval(&mut self, graph: &TorusGraph, config: &[bool], delta: f64) {
        let weights = uniformization_weights(delta);
        if self.start.support.len() * 8 > graph.n_vertices() {
            self.apply_interval_dense(graph, config, &weights);
            return;
        }
        let deg = graph.degree();
        let inv = 1.0 / deg as f64;
        self.acc.clear();
        self.term.copy_from(&self.start);
        for &x in &self.start.support {
            self.acc.add(x as usize, weights[0] * self.start.value[x as usize]);
        }
        for &w in &weights[1..] {
            self.next.clear();
            for i in 0..self.term.support.len() {
                let x = self.term.support[i] as usize;
                let m = self.term.value[x] * inv;
                for k in 0..deg {
                    let y = if config[graph.step_unit(x, k)] { graph.neighbor(x, k) } else { x };
                    self.next.add(y, m);
                }
            }
            std::mem::swap(&mut self.term, &mut self.next);
            for i in 0..self.term.support.len() {
                let x = self.term.support[i] as usize;
                let v = w * self.term.value[x];
                self.acc.add(x, v);
            }
        }
    }

    /// Same as the sparse path, in pull form over all vertices. The walk is
    /// symmetric, so `y` receives from `x` exactly when `x` is a jump target
    /// of `y`.
    fn apply_interval_dense(&mut self, graph: &TorusGraph, config: &[bool], weights: &[f64]) {
        let n = graph.n_vertices();
        let deg = graph.degree();
        let inv = 1.0 / deg as f64;
        self.sources.clear();
        for y in 0..n {
            for k in 0..deg {
                let x = if config[graph.step_unit(y, k)] { graph.neighbor(y, k) } else { y };
                self.sources.push(x as u32);
            }
        }
        self.dense_term.clear();
        self.dense_term.extend_from_slice(&self.start.value);
        self.dense_next.resize(n, 0.0);
        let mut acc: Vec<f64> = self.dense_term.iter().map(|v| v * weights[0]).collect();
        for &w in &weights[1..] {
            let term = &self.dense_term;
            for (out, src) in self.dense_next.iter_mut().zip(self.sources.chunks_exact(deg)) {
                *out = src.iter().map(|&x| term[x as usize]).sum::<f64>() * inv;
            }
            std::mem::swap(&mut self.dense_term, &mut self.dense_next);
            for (a, t) in acc.iter_mut().zip(&self.dense_term) {
                *a += w * t;
            }
        }
        self.acc.clear();
        for (y, &v) in acc.iter().enumerate() {
            if v > 0.0 {
                self.acc.add(y, v);
            }
        }
    }

    /// Push `init` forward from `a` to `b`. Returns `(vertex, mass)` pairs.
    pub fn propagate(
        &mut self,
        traj: &TorusTrajectory,
        a: f64,
        b: f64,
        init: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Vec<(usize, f64)>, EvolvingError> {
        let graph = traj.graph().clone();
        let mut cursor = traj.cursor_at(a)?;
        traj.cursor_at(b)?;
        self.start.clear();
        for (x, v) in init {
            if v > 0.0 {
                self.start.add(x, v);
            }
        }
        let mut now = a;
        while now < b {
            self.new_stamp();
            let support = std::mem::take(&mut self.start.support);
            self.mark_relevant(&graph, &support);
            self.start.support = support;
            let mut end = Self::first_relevant_flip(traj, cursor.config(), now, b, &self.relevant, self.stamp);
            loop {
                self.apply_interval(&graph, cursor.config(), end - now);
                // Mass may have spread next to a unit that changes before `end`.
                let support = std::mem::take(&mut self.acc.support);
                self.mark_relevant(&graph, &support);
                self.acc.support = support;
                let first = Self::first_relevant_flip(traj, cursor.config(), now, end, &self.relevant, self.stamp);
                if first < end {
                    end = first;
                } else {
                    break;
                }
            }
            // Prune and move the result into `start`.
            self.start.clear();
            for i in 0..self.acc.support.len() {
                let x = self.acc.support[i] as usize;
                let v = self.acc.value[x];
                if v < PRUNE_BELOW {
                    self.dropped += v;
                } else {
                    self.start.add(x, v);
                }
            }
            cursor.advance_to(end);
            now = end;
        }
        let mut out: Vec<(usize, f64)> = self
            .start
            .support
            .iter()
            .map(|&x| (x as usize, self.start.value[x as usize]))
            .collect();
        out.sort_unstable_by_key(|&(x, _)| x);
        Ok(out)
    }

    /// `Q(S, ·)` over `[m, m+1]`.
    pub fn profile(&mut self, traj: &TorusTrajectory, m: u64, set: &[usize]) -> Result<ThresholdProfile, EvolvingError> {
        if set.is_empty() {
            return Err(EvolvingError::EmptySet);
        }
        if traj.graph().kind().is_triangular() {
            return Err(EvolvingError::Unsupported("evolving sets need a symmetric walk".into()));
        }
        let (a, b) = (m as f64, m as f64 + 1.0);
        let n = traj.graph().n_vertices();
        if set.len() * 2 <= n {
            let masses = self.propagate(traj, a, b, set.iter().map(|&x| (x, 1.0)))?;
            return Ok(ThresholdProfile::from_masses(set.len(), masses));
        }
        // Every kernel is doubly stochastic, so Q(S, ·) = 1 - Q(S^c, ·), and
        // the complement is the cheaper vector to push once S is large.
        let mut inside = vec![false; n];
        for &x in set {
            inside[x] = true;
        }
        let complement = (0..n).filter(|&x| !inside[x]).map(|x| (x, 1.0));
        let mut q = vec![1.0; n];
        for (y, v) in self.propagate(traj, a, b, complement)? {
            q[y] = (1.0 - v).max(0.0);
        }
        Ok(ThresholdProfile::from_masses(set.len(), q.into_iter().enumerate()))
    }

    /// Diaconis–Fill step over `[m, m+1]`: the walker moves by simulating the
    /// walk in the trajectory, then the set follows.
    pub fn df_step(
        &mut self,
        traj: &TorusTrajectory,
        m: u64,
        state: &EvolvingState,
        stream: &mut Stream,
    ) -> Result<EvolvingState, EvolvingError> {
        let profile = self.profile(traj, m, &state.set)?;
        let y = walk_on_trajectory(traj, state.walker, m as f64, m as f64 + 1.0, stream)?;
        df_set_step(&profile, y, stream)
    }
}

/// Position at time `b` of the walk started at vertex `x` at time `a`.
pub fn walk_on_trajectory(traj: &TorusTrajectory, x: usize, a: f64, b: f64, stream: &mut Stream) -> Result<usize, EvolvingError> {
    let graph = traj.graph();
    let mut cursor = traj.cursor_at(a)?;
    traj.cursor_at(b)?;
    let deg = graph.degree() as u64;
    let mut v = x;
    let mut t = a;
    loop {
        t += stream.exponential(1.0);
        if t > b {
            return Ok(v);
        }
        cursor.advance_to(t);
        let k = stream.below(deg) as usize;
        if cursor.config()[graph.step_unit(v, k)] {
            v = graph.neighbor(v, k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{torus_trajectory, EnvParams};
    use crate::evolving::kernel::quenched_kernel;
    use crate::evolving::sets::threshold_profile;
    use crate::lattice::LatticeKind;
    use crate::rng::Key;

    fn torus(side: usize) -> LatticeKind {
        LatticeKind::hypercubic(2).unwrap().with_torus(side).unwrap()
    }

    #[test]
    fn matches_dense_profile() {
        for (i, &p) in [0.3, 0.5, 0.8, 1.0].iter().enumerate() {
            for side in [4, 6, 8] {
                let params = EnvParams::new(torus(side), p, 0.3).unwrap();
                let traj = torus_trajectory(params, 0.0, 3.0, Key::root(40 + i as u64)).unwrap();
                let n = side * side;
                let set: Vec<usize> = (0..n).filter(|x| x % 3 == 0 || x % 7 == 1).collect();
                let dense = threshold_profile(&quenched_kernel(&traj, 1).unwrap(), &set).unwrap();
                let mut stepper = SparseStepper::new(traj.graph());
                let sparse = stepper.profile(&traj, 1, &set).unwrap();
                for y in 0..n {
                    assert!((dense.q(y) - sparse.q(y)).abs() < 1e-12, "p={p} side={side} y={y}");
                }
                assert!(stepper.dropped_mass() < 1e-12);
            }
        }
    }

    #[test]
    fn large_sets_use_the_complement() {
        let params = EnvParams::new(torus(8), 0.6, 0.3).unwrap();
        let traj = torus_trajectory(params, 0.0, 2.0, Key::root(8)).unwrap();
        let kernel = quenched_kernel(&traj, 1).unwrap();
        let mut stepper = SparseStepper::new(traj.graph());
        for set in [(0..64).filter(|x| x % 5 != 2).collect::<Vec<_>>(), (0..64).collect(), (1..64).collect()] {
            let dense = threshold_profile(&kernel, &set).unwrap();
            let sparse = stepper.profile(&traj, 1, &set).unwrap();
            for y in 0..64 {
                assert!((dense.q(y) - sparse.q(y)).abs() < 1e-12, "y={y}");
            }
        }
    }

    #[test]
    fn walker_law_matches_kernel_row() {
        let params = EnvParams::new(torus(4), 0.5, 0.3).unwrap();
        let traj = torus_trajectory(params, 0.0, 2.0, Key::root(3)).unwrap();
        let k = quenched_kernel(&traj, 1).unwrap();
        let mut s = Key::root(4).stream();
        let n = 200_000;
        let mut counts = [0u64; 16];
        for _ in 0..n {
            counts[walk_on_trajectory(&traj, 5, 1.0, 2.0, &mut s).unwrap()] += 1;
        }
        for y in 0..16 {
            let p = k.get(5, y);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[y] as f64 / n as f64 - p).abs() < 4.0 * se + 1e-9, "y={y}");
        }
    }

    #[test]
    fn large_torus_step_runs() {
        let params = EnvParams::new(torus(64), 0.8, 0.1).unwrap();
        let traj = torus_trajectory(params, 0.0, 20.0, Key::root(5)).unwrap();
        let mut stepper = SparseStepper::new(traj.graph());
        let mut s = Key::root(6).stream();
        let mut state = EvolvingState::start(0);
        for m in 0..20 {
            state = stepper.df_step(&traj, m, &state, &mut s).unwrap();
            assert!(state.set.contains(&state.walker));
        }
        assert!(stepper.dropped_mass() < 1e-9);
    }
}

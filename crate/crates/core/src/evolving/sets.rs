//! Evolving sets driven by a one-step kernel.
//!
//! With `Q(S, y) = Σ_{x∈S} P(x, y)` and `U` uniform on `(0, 1]`, the evolving
//! set moves to `B(U) = {y : Q(S, y) >= U}`. Everything here works on the
//! breakpoints of `u ↦ B(u)`, so integrals over `U` are finite sums.

use rustc_hash::FxHashSet;

use crate::env::TorusTrajectory;
use crate::lattice::TorusGraph;
use crate::rng::Stream;

use super::kernel::QuenchedKernel;
use super::EvolvingError;

/// Masses this close to 1 are treated as exactly 1.
const ONE_SNAP: f64 = 1e-12;

/// `B(u)` is the `count` highest-mass vertices for every `u` in `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Level {
    pub fn gap(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `Q(S, ·)` with its level-set structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdProfile {
    set_size: usize,
    /// `(y, Q(S, y))` for `Q > 0`, by decreasing capped mass.
    masses: Vec<(usize, f64)>,
    capped: Vec<f64>,
    levels: Vec<Level>,
}

fn cap(q: f64) -> f64 {
    if q > 1.0 - ONE_SNAP {
        1.0
    } else {
        q
    }
}

impl ThresholdProfile {
    /// Build from the positive masses `Q(S, y)` of a set of size `set_size`.
    pub fn from_masses(set_size: usize, masses: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut masses: Vec<(usize, f64)> = masses.into_iter().filter(|&(_, q)| q > 0.0).collect();
        masses.sort_by(|a, b| cap(b.1).total_cmp(&cap(a.1)).then(a.0.cmp(&b.0)));
        let capped: Vec<f64> = masses.iter().map(|&(_, q)| cap(q)).collect();
        let mut levels = Vec::new();
        let mut hi = 1.0;
        let mut i = 0;
        while i < capped.len() {
            let c = capped[i];
            let mut j = i;
            while j < capped.len() && capped[j] == c {
                j += 1;
            }
            if c < hi {
                // (c, hi] is covered by the vertices strictly above c.
                levels.push(Level { lo: c, hi, count: i });
            }
            hi = c;
            i = j;
        }
        if hi > 0.0 {
            levels.push(Level {
                lo: 0.0,
                hi,
                count: capped.len(),
            });
        }
        ThresholdProfile {
            set_size,
            masses,
            capped,
            levels,
        }
    }

    pub fn set_size(&self) -> usize {
        self.set_size
    }

    /// Levels from high `u` to low `u`; their gaps sum to 1.
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Distinct positive thresholds `q_1 < … < q_m`, capped at 1.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.levels.iter().map(|l| l.hi).collect();
        t.reverse();
        t.dedup();
        t
    }

    pub fn masses(&self) -> &[(usize, f64)] {
        &self.masses
    }

    pub fn q(&self, y: usize) -> f64 {
        self.masses.iter().find(|&&(v, _)| v == y).map_or(0.0, |&(_, q)| q)
    }

    /// `Σ_y Q(S, y)`; equals `|S|` when rows of the kernel sum to 1.
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|&(_, q)| q).sum()
    }

    /// `|B(u)|` for `u` in `(0, 1]`.
    pub fn level_size(&self, u: f64) -> usize {
        self.capped.partition_point(|&c| c >= u)
    }

    /// `B(u)`, unsorted.
    pub fn level_set(&self, u: f64) -> Vec<usize> {
        self.first(self.level_size(u))
    }

    fn first(&self, count: usize) -> Vec<usize> {
        self.masses[..count].iter().map(|&(y, _)| y).collect()
    }

    /// `∫_0^1 f(|B(u)|) du` as an exact breakpoint sum.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.levels.iter().map(|l| l.gap() * f(l.count)).sum()
    }

    /// Doob-transform probability of each level, `gap · |B| / |S|`.
    pub fn doob_weights(&self) -> Vec<f64> {
        let s = self.set_size as f64;
        self.levels.iter().map(|l| l.gap() * l.count as f64 / s).collect()
    }
}

fn check_set(n: usize, set: &[usize]) -> Result<(), EvolvingError> {
    if set.is_empty() {
        return Err(EvolvingError::EmptySet);
    }
    let mut seen = FxHashSet::default();
    for &x in set {
        if x >= n {
            return Err(EvolvingError::VertexOutOfRange(x));
        }
        if !seen.insert(x) {
            return Err(EvolvingError::DuplicateVertex(x));
        }
    }
    Ok(())
}

fn require_symmetric(kernel: &QuenchedKernel) -> Result<(), EvolvingError> {
    if kernel.lattice().is_triangular() {
        return Err(EvolvingError::Unsupported(
            "evolving sets need a doubly stochastic kernel; the site walk on the triangular lattice is not symmetric"
                .into(),
        ));
    }
    Ok(())
}

/// `Q(S, ·)` for the dense kernel `kernel`.
pub fn threshold_profile(kernel: &QuenchedKernel, set: &[usize]) -> Result<ThresholdProfile, EvolvingError> {
    require_symmetric(kernel)?;
    let n = kernel.n_vertices();
    check_set(n, set)?;
    let mut q = vec![0.0; n];
    for &x in set {
        for (acc, &v) in q.iter_mut().zip(kernel.row(x)) {
            *acc += v;
        }
    }
    Ok(ThresholdProfile::from_masses(set.len(), q.into_iter().enumerate()))
}

/// One step of the evolving set at threshold `u` in `(0, 1]`. May be empty.
pub fn evolve_plain(profile: &ThresholdProfile, u: f64) -> Vec<usize> {
    profile.level_set(u)
}

/// One step of the Doob-transformed evolving set.
pub fn evolve_doob(profile: &ThresholdProfile, stream: &mut Stream) -> Vec<usize> {
    let weights = profile.doob_weights();
    let total: f64 = weights.iter().sum();
    let mut target = stream.uniform() * total;
    let mut pick = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            pick = i;
            break;
        }
        target -= w;
    }
    // Zero-weight (empty) levels are never chosen.
    while profile.levels()[pick].count == 0 {
        pick += 1;
    }
    profile.first(profile.levels()[pick].count)
}

/// Walker position and evolving set, with the walker always inside the set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvolvingState {
    pub walker: usize,
    pub set: Vec<usize>,
}

impl EvolvingState {
    pub fn start(x: usize) -> Self {
        EvolvingState {
            walker: x,
            set: vec![x],
        }
    }
}

/// Set half of a Diaconis–Fill step once the walker's move `y` is known:
/// `u` uniform on `(0, Q(A, y)]`, new set `B(u)`.
pub fn df_set_step(profile: &ThresholdProfile, y: usize, stream: &mut Stream) -> Result<EvolvingState, EvolvingError> {
    let q = cap(profile.q(y));
    if q <= 0.0 {
        return Err(EvolvingError::Unreachable(y));
    }
    let u = q * stream.uniform_pos();
    let set = profile.level_set(u);
    assert!(set.contains(&y), "walker left the evolving set");
    Ok(EvolvingState { walker: y, set })
}

/// Diaconis–Fill transition driven by the dense kernel.
pub fn df_step(kernel: &QuenchedKernel, state: &EvolvingState, stream: &mut Stream) -> Result<EvolvingState, EvolvingError> {
    let profile = threshold_profile(kernel, &state.set)?;
    let row = kernel.row(state.walker);
    let mut target = stream.uniform() * row.iter().sum::<f64>();
    let mut y = row.len() - 1;
    for (i, &v) in row.iter().enumerate() {
        if target < v {
            y = i;
            break;
        }
        target -= v;
    }
    while row[y] == 0.0 {
        y -= 1;
    }
    df_set_step(&profile, y, stream)
}

fn membership(n: usize, set: &[usize]) -> Vec<bool> {
    let mut inside = vec![false; n];
    for &x in set {
        inside[x] = true;
    }
    inside
}

/// Bonds with exactly one endpoint in `set`.
pub fn boundary_units(graph: &TorusGraph, set: &[usize]) -> Vec<usize> {
    let inside = &membership(graph.n_vertices(), set);
    let mut units: Vec<usize> = set
        .iter()
        .flat_map(|&x| {
            (0..graph.degree())
                .filter(move |&k| !inside[graph.neighbor(x, k)])
                .map(move |k| graph.step_unit(x, k))
        })
        .collect();
    units.sort_unstable();
    units.dedup();
    units
}

/// `|∂_η S|` for a configuration `config`.
pub fn open_boundary_size(graph: &TorusGraph, config: &[bool], set: &[usize]) -> usize {
    boundary_units(graph, set).into_iter().filter(|&u| config[u]).count()
}

/// `∫_a^b |∂_{η_t} S| dt`, exactly from the trajectory's events.
pub fn boundary_integral(traj: &TorusTrajectory, set: &[usize], a: f64, b: f64) -> Result<f64, EvolvingError> {
    let graph = traj.graph();
    let units = boundary_units(graph, set);
    let cursor = traj.cursor_at(a)?;
    let mut state: Vec<bool> = units.iter().map(|&u| cursor.config()[u]).collect();
    let mut since = vec![a; units.len()];
    let mut total = 0.0;
    for e in cursor.pending_until(b) {
        if let Ok(i) = units.binary_search(&(e.unit as usize)) {
            if state[i] != e.state {
                if state[i] {
                    total += e.time - since[i];
                }
                state[i] = e.state;
                since[i] = e.time;
            }
        }
    }
    for (i, &open) in state.iter().enumerate() {
        if open {
            total += b - since[i];
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiResult {
    pub phi: f64,
    /// `(1 / (2de|S|)) ∫_n^{n+1} |∂_{η_t} S| dt`.
    pub bound: f64,
}

fn phi_value(kernel: &QuenchedKernel, set: &[usize]) -> f64 {
    let inside = membership(kernel.n_vertices(), set);
    let out: f64 = set
        .iter()
        .map(|&x| {
            kernel
                .row(x)
                .iter()
                .enumerate()
                .filter(|&(y, _)| !inside[y])
                .map(|(_, &v)| v)
                .sum::<f64>()
        })
        .sum();
    out / set.len() as f64
}

/// Escape mass `Φ_S` of `set` under `P_{n+1}` and its boundary lower bound.
pub fn phi_s(kernel: &QuenchedKernel, traj: &TorusTrajectory, set: &[usize]) -> Result<PhiResult, EvolvingError> {
    require_symmetric(kernel)?;
    let n = kernel.n_vertices();
    check_set(n, set)?;
    if set.len() == n {
        return Err(EvolvingError::FullSet);
    }
    let step = kernel
        .step()
        .ok_or_else(|| EvolvingError::Config("kernel has no time step".into()))?;
    let graph = traj.graph();
    let integral = boundary_integral(traj, set, step as f64, step as f64 + 1.0)?;
    let d = graph.kind().dim() as f64;
    Ok(PhiResult {
        phi: phi_value(kernel, set),
        bound: integral / (2.0 * d * std::f64::consts::E * set.len() as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftCheck {
    /// `Ê[|S'|^{-1/2} | S] = (1/|S|) ∫_0^1 |B(u)|^{1/2} du` under the Doob transform.
    pub lhs: f64,
    /// `(1 - Φ²/6) |S|^{-1/2}`.
    pub rhs: f64,
    pub phi: f64,
    pub pass: bool,
}

pub const DRIFT_TOLERANCE: f64 = 1e-12;

/// Compare the Doob expectation of `|S'|^{-1/2}` with `(1 - Φ²/6)|S|^{-1/2}`.
/// `S = V` is allowed and gives `Φ = 0`.
pub fn drift_check(kernel: &QuenchedKernel, set: &[usize]) -> Result<DriftCheck, EvolvingError> {
    let profile = threshold_profile(kernel, set)?;
    let s = set.len() as f64;
    let lhs = profile.integrate(|b| (b as f64).sqrt()) / s;
    let phi = if set.len() == kernel.n_vertices() {
        0.0
    } else {
        phi_value(kernel, set)
    };
    let rhs = (1.0 - phi * phi / 6.0) / s.sqrt();
    Ok(DriftCheck {
        lhs,
        rhs,
        phi,
        pass: lhs <= rhs + DRIFT_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{torus_trajectory, EnvParams};
    use crate::evolving::kernel::{interval_kernel, quenched_kernel};
    use crate::lattice::LatticeKind;
    use crate::rng::Key;
    use crate::stats::chi_square_gof;
    use proptest::prelude::*;

    fn torus(side: usize) -> LatticeKind {
        LatticeKind::hypercubic(2).unwrap().with_torus(side).unwrap()
    }

    fn random_kernel(side: usize, p: f64, seed: u64) -> (TorusTrajectory, QuenchedKernel) {
        let params = EnvParams::new(torus(side), p, 0.2).unwrap();
        let traj = torus_trajectory(params, 0.0, 2.0, Key::root(seed)).unwrap();
        let k = quenched_kernel(&traj, 1).unwrap();
        (traj, k)
    }

    fn random_set(n: usize, stream: &mut Stream) -> Vec<usize> {
        let q = 0.1 + 0.8 * stream.uniform();
        let mut s: Vec<usize> = (0..n).filter(|_| stream.bernoulli(q)).collect();
        if s.is_empty() {
            s.push(stream.below(n as u64) as usize);
        }
        if s.len() == n {
            s.pop();
        }
        s
    }

    #[test]
    fn full_set_is_fixed() {
        let (_, k) = random_kernel(4, 0.5, 1);
        let all: Vec<usize> = (0..16).collect();
        let prof = threshold_profile(&k, &all).unwrap();
        assert_eq!(prof.levels().len(), 1);
        for u in [1e-9, 0.5, 1.0] {
            assert_eq!(prof.level_size(u), 16);
        }
        let mut s = Key::root(3).stream();
        for _ in 0..100 {
            assert_eq!(evolve_doob(&prof, &mut s).len(), 16);
        }
        let d = drift_check(&k, &all).unwrap();
        assert!((d.lhs - 0.25).abs() < 1e-12 && (d.rhs - 0.25).abs() < 1e-15 && d.pass);
        assert!(matches!(phi_s(&k, &random_kernel(4, 0.5, 1).0, &all), Err(EvolvingError::FullSet)));
    }

    #[test]
    fn isolated_singleton() {
        let graph = TorusGraph::new(torus(4)).unwrap();
        let k = interval_kernel(&graph, &vec![false; graph.n_units()], 1.0).unwrap();
        let prof = threshold_profile(&k, &[5]).unwrap();
        assert_eq!(prof.masses().len(), 1);
        assert!(prof.masses()[0].0 == 5 && (prof.masses()[0].1 - 1.0).abs() < 1e-14);
        assert_eq!(prof.level_size(1.0), 1);
        assert_eq!(evolve_plain(&prof, 1.0), vec![5]);
        let mut s = Key::root(3).stream();
        for _ in 0..100 {
            assert_eq!(evolve_doob(&prof, &mut s), vec![5]);
            assert_eq!(df_step(&k, &EvolvingState::start(5), &mut s).unwrap(), EvolvingState::start(5));
        }
        let d = drift_check(&k, &[5]).unwrap();
        assert_eq!((d.lhs, d.rhs, d.phi), (1.0, 1.0, 0.0));
    }

    #[test]
    fn errors() {
        let (traj, k) = random_kernel(4, 0.5, 1);
        assert!(matches!(threshold_profile(&k, &[]), Err(EvolvingError::EmptySet)));
        assert!(matches!(threshold_profile(&k, &[99]), Err(EvolvingError::VertexOutOfRange(99))));
        assert!(matches!(threshold_profile(&k, &[1, 1]), Err(EvolvingError::DuplicateVertex(1))));
        assert!(matches!(drift_check(&k, &[]), Err(EvolvingError::EmptySet)));
        assert!(matches!(phi_s(&k, &traj, &[]), Err(EvolvingError::EmptySet)));
        let tri = LatticeKind::triangular().with_torus(4).unwrap();
        let tt = torus_trajectory(EnvParams::new(tri, 0.5, 0.2).unwrap(), 0.0, 1.0, Key::root(1)).unwrap();
        let tk = quenched_kernel(&tt, 0).unwrap();
        assert!(matches!(threshold_profile(&tk, &[0]), Err(EvolvingError::Unsupported(_))));
    }

    #[test]
    fn closed_environment_phi_zero() {
        let graph = std::sync::Arc::new(TorusGraph::new(torus(4)).unwrap());
        let traj = TorusTrajectory::from_parts(graph.clone(), 0.5, 0.1, (0.0, 2.0), vec![false; 32], vec![]).unwrap();
        let k = quenched_kernel(&traj, 1).unwrap();
        let r = phi_s(&k, &traj, &[0, 1, 2]).unwrap();
        assert_eq!((r.phi, r.bound), (0.0, 0.0));
    }

    #[test]
    fn martingale_and_doob_weights() {
        let mut s = Key::root(11).stream();
        for i in 0..60 {
            let (_, k) = random_kernel(if i % 2 == 0 { 4 } else { 6 }, [0.3, 0.5, 0.8][i % 3], 100 + i as u64);
            let set = random_set(k.n_vertices(), &mut s);
            let prof = threshold_profile(&k, &set).unwrap();
            assert!((prof.total_mass() - set.len() as f64).abs() < 1e-10);
            let integral = prof.integrate(|b| b as f64);
            assert!((integral - set.len() as f64).abs() < 1e-10);
            let w: f64 = prof.doob_weights().iter().sum();
            assert!((w - 1.0).abs() < 1e-12);
            let gaps: f64 = prof.levels().iter().map(|l| l.gap()).sum();
            assert!((gaps - 1.0).abs() < 1e-15);
            // Nested level sets and the diagonal bound.
            for pair in prof.levels().windows(2) {
                assert!(pair[0].count <= pair[1].count);
            }
            let low = prof.level_set((-1.0f64).exp());
            assert!(set.iter().all(|x| low.contains(x)));
        }
    }

    #[test]
    fn plain_step_monte_carlo_mean() {
        let (_, k) = random_kernel(6, 0.5, 4);
        let mut s = Key::root(12).stream();
        let set = random_set(36, &mut s);
        let prof = threshold_profile(&k, &set).unwrap();
        let n = 1_000_000;
        let sizes: Vec<f64> = (0..n).map(|_| evolve_plain(&prof, s.uniform_pos()).len() as f64).collect();
        let m = crate::stats::mean_ci(&sizes).unwrap();
        let exact = prof.integrate(|b| b as f64);
        assert!((m.mean - exact).abs() < 4.0 * m.stderr.max(1e-12), "{} vs {exact}", m.mean);
    }

    #[test]
    fn doob_frequencies_match_weights() {
        let (_, k) = random_kernel(4, 0.5, 8);
        let prof = threshold_profile(&k, &[0, 1, 5]).unwrap();
        let weights = prof.doob_weights();
        let mut counts = vec![0u64; weights.len()];
        let mut s = Key::root(13).stream();
        for _ in 0..100_000 {
            let b = evolve_doob(&prof, &mut s);
            let i = prof.levels().iter().position(|l| l.count == b.len() && l.gap() > 0.0).unwrap();
            counts[i] += 1;
        }
        // Merge cells with tiny expectations into their neighbor.
        let mut c2 = Vec::new();
        let mut w2 = Vec::new();
        let (mut cc, mut ww) = (0u64, 0.0);
        for (c, w) in counts.iter().zip(&weights) {
            cc += c;
            ww += w;
            if ww * 1e5 >= 20.0 {
                c2.push(cc);
                w2.push(ww);
                cc = 0;
                ww = 0.0;
            }
        }
        if ww > 0.0 {
            *c2.last_mut().unwrap() += cc;
            *w2.last_mut().unwrap() += ww;
        }
        let (_, pv) = chi_square_gof(&c2, &w2).unwrap();
        assert!(pv > 1e-3, "{pv}");
    }

    #[test]
    fn df_keeps_walker_inside() {
        let (_, k) = random_kernel(6, 0.8, 5);
        let mut s = Key::root(14).stream();
        let mut state = EvolvingState::start(0);
        for _ in 0..20_000 {
            state = df_step(&k, &state, &mut s).unwrap();
            assert!(state.set.contains(&state.walker));
        }
    }

    #[test]
    fn drift_and_phi_bound_hold() {
        let mut s = Key::root(15).stream();
        for i in 0..40 {
            let (traj, k) = random_kernel(4 + 2 * (i % 2), [0.3, 0.5, 0.8][i % 3], 200 + i as u64);
            let set = random_set(k.n_vertices(), &mut s);
            let d = drift_check(&k, &set).unwrap();
            assert!(d.pass, "{d:?}");
            let phi = phi_s(&k, &traj, &set).unwrap();
            assert!(phi.phi >= phi.bound, "{phi:?}");
            assert!((phi.phi - d.phi).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_integral_static() {
        let graph = std::sync::Arc::new(TorusGraph::new(torus(4)).unwrap());
        let traj = TorusTrajectory::from_parts(graph.clone(), 1.0, 0.1, (0.0, 2.0), vec![true; 32], vec![]).unwrap();
        // A singleton has 4 open boundary bonds throughout.
        assert_eq!(boundary_integral(&traj, &[3], 0.5, 1.5).unwrap(), 4.0);
        let half: Vec<usize> = (0..8).collect();
        assert_eq!(boundary_units(&graph, &half).len(), 8);
    }

    proptest! {
        #[test]
        fn level_sets_nested(masses in proptest::collection::vec(0.0f64..1.0, 1..30), u1 in 0.001f64..1.0, u2 in 0.001f64..1.0) {
            let prof = ThresholdProfile::from_masses(3, masses.into_iter().enumerate());
            let (a, b) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            let big = prof.level_set(a);
            let small = prof.level_set(b);
            prop_assert!(small.iter().all(|y| big.contains(y)));
            let gaps: f64 = prof.levels().iter().map(|l| l.gap()).sum();
            prop_assert!((gaps - 1.0).abs() < 1e-12);
            for l in prof.levels() {
                let mid = 0.5 * (l.lo + l.hi);
                prop_assert_eq!(prof.level_size(mid), l.count);
            }
        }
    }
}

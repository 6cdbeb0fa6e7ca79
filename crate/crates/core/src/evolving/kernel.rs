//! One-step quenched kernels on a torus.
//!
//! On an interval where the configuration is constant the walk's generator is
//! `J - I` with `J(x, ·)` the one-attempt jump law. Its exponential is summed
//! by uniformization, `exp(Δ(J - I)) = Σ_k e^{-Δ} Δ^k/k! J^k`, and kernels
//! over `[n, n+1]` are ordered products over the constant pieces.

use crate::env::TorusTrajectory;
use crate::lattice::{LatticeKind, TorusGraph};

use super::EvolvingError;

/// Largest torus side for dense kernels.
pub const DENSE_MAX_SIDE: usize = 8;

/// Truncate the Poisson series once the remaining weight is below this.
pub const TAIL_TOLERANCE: f64 = 1e-14;

/// Poisson(`delta`) weights `w_0..=w_K` with tail beyond `K` below
/// [`TAIL_TOLERANCE`].
pub fn uniformization_weights(delta: f64) -> Vec<f64> {
    assert!(delta >= 0.0 && delta.is_finite());
    let mut w = vec![(-delta).exp()];
    loop {
        let k = w.len() - 1;
        let next = w[k] * delta / (k + 1) as f64;
        // Tail after term k is at most w_{k+1} / (1 - Δ/(k+2)) once k+2 > Δ.
        let ratio = delta / (k + 2) as f64;
        if ratio < 1.0 && next / (1.0 - ratio) < TAIL_TOLERANCE {
            return w;
        }
        w.push(next);
    }
}

/// Dense one-attempt jump matrix `J` (row-major).
pub fn jump_matrix(graph: &TorusGraph, config: &[bool]) -> Vec<f64> {
    let n = graph.n_vertices();
    let deg = graph.degree() as f64;
    let mut j = vec![0.0; n * n];
    for x in 0..n {
        for k in 0..graph.degree() {
            let y = if config[graph.step_unit(x, k)] { graph.neighbor(x, k) } else { x };
            j[x * n + y] += 1.0 / deg;
        }
    }
    j
}

/// Dense `P_{n+1}`: `P(x, y)` is the probability of moving from `x` at time
/// `n` to `y` at time `n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuenchedKernel {
    lattice: LatticeKind,
    n: usize,
    data: Vec<f64>,
    step: Option<u64>,
}

impl QuenchedKernel {
    pub fn identity(lattice: LatticeKind, n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for x in 0..n {
            data[x * n + x] = 1.0;
        }
        QuenchedKernel {
            lattice,
            n,
            data,
            step: None,
        }
    }

    pub fn lattice(&self) -> LatticeKind {
        self.lattice
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// Integer `n` of the window `[n, n+1]`, when built from a trajectory.
    pub fn step(&self) -> Option<u64> {
        self.step
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self ← self · exp(Δ(J - I))` for the constant configuration `config`.
    fn right_multiply_interval(&mut self, graph: &TorusGraph, config: &[bool], delta: f64) {
        let n = self.n;
        let deg = graph.degree();
        let inv = 1.0 / deg as f64;
        // Jump targets of each vertex under `config`.
        let targets: Vec<usize> = (0..n)
            .flat_map(|x| {
                (0..deg).map(move |k| if config[graph.step_unit(x, k)] { graph.neighbor(x, k) } else { x })
            })
            .collect();
        let weights = uniformization_weights(delta);
        let mut term = self.data.clone();
        let mut next = vec![0.0; n * n];
        let mut acc: Vec<f64> = term.iter().map(|v| v * weights[0]).collect();
        for &w in &weights[1..] {
            next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..n {
                let src = &term[r * n..(r + 1) * n];
                let dst = &mut next[r * n..(r + 1) * n];
                for (x, &v) in src.iter().enumerate() {
                    if v != 0.0 {
                        let m = v * inv;
                        for &y in &targets[x * deg..(x + 1) * deg] {
                            dst[y] += m;
                        }
                    }
                }
            }
            std::mem::swap(&mut term, &mut next);
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += w * t;
            }
        }
        self.data = acc;
    }
}

fn dense_graph(traj: &TorusTrajectory) -> Result<&TorusGraph, EvolvingError> {
    let graph = traj.graph().as_ref();
    if graph.side() > DENSE_MAX_SIDE {
        return Err(EvolvingError::TooLargeForDense { side: graph.side() });
    }
    Ok(graph)
}

/// `exp(Δ(J - I))` for a single constant configuration.
pub fn interval_kernel(graph: &TorusGraph, config: &[bool], delta: f64) -> Result<QuenchedKernel, EvolvingError> {
    if graph.side() > DENSE_MAX_SIDE {
        return Err(EvolvingError::TooLargeForDense { side: graph.side() });
    }
    let mut k = QuenchedKernel::identity(graph.kind(), graph.n_vertices());
    k.right_multiply_interval(graph, config, delta);
    Ok(k)
}

/// Transition kernel of the walk from time `a` to time `b` in the
/// trajectory's environment.
pub fn kernel_between(traj: &TorusTrajectory, a: f64, b: f64) -> Result<QuenchedKernel, EvolvingError> {
    let graph = dense_graph(traj)?;
    let mut k = QuenchedKernel::identity(graph.kind(), graph.n_vertices());
    traj.for_each_segment(a, b, |s, e, config| k.right_multiply_interval(graph, config, e - s))?;
    Ok(k)
}

/// `P_{n+1}`: the kernel over `[n, n+1]`.
pub fn quenched_kernel(traj: &TorusTrajectory, n: u64) -> Result<QuenchedKernel, EvolvingError> {
    let mut k = kernel_between(traj, n as f64, n as f64 + 1.0)?;
    k.step = Some(n);
    Ok(k)
}

/// Matrix product `a · b` of two kernels on the same torus.
pub fn compose(a: &QuenchedKernel, b: &QuenchedKernel) -> QuenchedKernel {
    assert_eq!(a.n, b.n);
    let n = a.n;
    let mut data = vec![0.0; n * n];
    for x in 0..n {
        for z in 0..n {
            let v = a.get(x, z);
            if v != 0.0 {
                for y in 0..n {
                    data[x * n + y] += v * b.get(z, y);
                }
            }
        }
    }
    QuenchedKernel {
        lattice: a.lattice,
        n,
        data,
        step: None,
    }
}

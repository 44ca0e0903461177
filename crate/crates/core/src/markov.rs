//! Finite Markov chain algebra.
//!
//! Stationary distributions, Poisson-equation solutions pinned at a reference
//! state, fundamental matrices of the chain killed at that state, and sampled
//! Lipschitz estimates for parameter-dependent kernels `x -> P_x`.

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::norm::Norm;
use crate::provenance::Tagged;
use crate::textio;
use crate::{Error, Result};

/// Largest tolerated deviation of a row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entries below this are treated as structural zeros by the irreducibility check.
pub const SUPPORT_EPS: f64 = 1e-14;
/// Default solver tolerance for Poisson residuals.
pub const POISSON_TOL: f64 = 1e-10;

/// An irreducible, row-stochastic transition matrix.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    p: DMatrix<f64>,
    pi: OnceLock<Vec<f64>>,
}

impl FiniteChain {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        validate_chain(p)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("expected {n} columns in every row")));
        }
        validate_chain(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Parses the plain-text format: first line `n_states`, then `n_states` rows.
    pub fn from_text(text: &str) -> Result<Self> {
        validate_chain(textio::parse_square_matrix(text)?)
    }

    pub fn to_text(&self) -> String {
        textio::format_square_matrix(&self.p)
    }

    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.p[(from, to)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.p.row(i).iter().copied().collect()
    }

    /// Stationary distribution, computed once and cached.
    pub fn stationary(&self) -> Result<&[f64]> {
        if let Some(pi) = self.pi.get() {
            return Ok(pi);
        }
        let pi = solve_stationary(&self.p)?;
        // Concurrent callers compute the same deterministic vector; first write wins.
        Ok(self.pi.get_or_init(|| pi))
    }

    /// Inverse-CDF draw of the successor of `from` given a uniform `u` in [0,1).
    pub fn sample_next(&self, from: usize, u: f64) -> usize {
        sample_index(self.p.row(from).iter().copied(), self.n_states(), u)
    }
}

pub(crate) fn sample_index(weights: impl Iterator<Item = f64>, n: usize, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = j;
        }
        acc += w;
        if u < acc {
            return j;
        }
    }
    // Rounding left the cumulative sum a hair under one.
    last_positive.min(n.saturating_sub(1))
}

/// Validates a square nonnegative matrix as an irreducible stochastic matrix.
pub fn validate_chain(p: DMatrix<f64>) -> Result<FiniteChain> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Shape(format!(
            "transition matrix must be square and non-empty, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = p[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::NotStochastic { row: i, sum: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    check_irreducible(&p)?;
    Ok(FiniteChain {
        p,
        pi: OnceLock::new(),
    })
}

/// Strong connectivity of the support graph: every state reachable from 0
/// along positive entries, and 0 reachable from every state.
fn check_irreducible(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    for transpose in [false, true] {
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let w = if transpose { p[(j, i)] } else { p[(i, j)] };
                if w > SUPPORT_EPS && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(unreachable) = seen.iter().position(|s| !s) {
            return Err(Error::NotIrreducible { unreachable });
        }
    }
    Ok(())
}

/// Stationary distribution of a validated chain.
pub fn stationary_distribution(chain: &FiniteChain) -> Result<Vec<f64>> {
    chain.stationary().map(<[f64]>::to_vec)
}

/// Solves `(I - P^T) pi = 0` with the normalisation row `1^T pi = 1` appended,
/// as an overdetermined but consistent system, by Householder QR plus one
/// step of iterative refinement.
fn solve_stationary(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == j { 1.0 } else { 0.0 } - p[(j, i)];
        }
        a[(n, i)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;

    let qr = a.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(r[(i, i)].abs()));
    if (0..n).any(|i| r[(i, i)].abs() <= 1e-13 * scale.max(1.0)) {
        return Err(Error::SingularSystem(
            "stationary system has a null space beyond the normalisation".into(),
        ));
    }
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        let qtb = q.transpose() * rhs;
        r.solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))
    };
    let mut x = solve(&b)?;
    let resid = &b - &a * &x;
    x += solve(&resid)?;

    if x.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::SingularSystem(
            "stationary solution is not strictly positive".into(),
        ));
    }
    let total: f64 = x.iter().sum();
    Ok(x.iter().map(|v| v / total).collect())
}

/// `|pi P - pi|_1`.
pub fn stationarity_defect(chain: &FiniteChain, pi: &[f64]) -> f64 {
    let n = chain.n_states();
    (0..n)
        .map(|j| {
            let flow: f64 = (0..n).map(|i| pi[i] * chain.p[(i, j)]).sum();
            (flow - pi[j]).abs()
        })
        .sum()
}

/// Poisson-equation solution for a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    /// `n_states x d`; row `i` is `V(x, i)`.
    pub v: DMatrix<f64>,
    pub pinned_state: usize,
    /// Max-norm residual of `V(i) - f(i) + pi.f - sum_j p(j|i) V(j)` over all states.
    pub residual: f64,
}

impl PoissonSolution {
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.v.row(i).iter().copied().collect()
    }
}

fn reduced_system(chain: &FiniteChain, pinned: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = chain.n_states();
    if pinned >= n {
        return Err(Error::IndexOutOfRange {
            index: pinned,
            len: n,
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != pinned).collect();
    let m = keep.len();
    let a = DMatrix::from_fn(m, m, |r, c| {
        let v = chain.p[(keep[r], keep[c])];
        if r == c {
            1.0 - v
        } else {
            -v
        }
    });
    Ok((a, keep))
}

/// Solves the Poisson equation
/// `V(i) = f(i) - sum_j pi(j) f(j) + sum_j p(j|i) V(j)` with `V(pinned) = 0`,
/// componentwise on the reduced state set.
///
/// `f_values` is `n_states x d`, row `i` holding `F(x, i)`.
pub fn poisson_solve(
    chain: &FiniteChain,
    f_values: &DMatrix<f64>,
    pinned_state: usize,
) -> Result<PoissonSolution> {
    let n = chain.n_states();
    if f_values.nrows() != n {
        return Err(Error::Shape(format!(
            "f has {} rows but the chain has {n} states",
            f_values.nrows()
        )));
    }
    let d = f_values.ncols();
    let (a, keep) = reduced_system(chain, pinned_state)?;
    let pi = chain.stationary()?;

    let mean: Vec<f64> = (0..d)
        .map(|l| (0..n).map(|j| pi[j] * f_values[(j, l)]).sum())
        .collect();

    let mut v = DMatrix::zeros(n, d);
    if !keep.is_empty() {
        let lu = a.lu();
        let diag_min = (0..keep.len())
            .map(|i| lu.u()[(i, i)].abs())
            .fold(f64::INFINITY, f64::min);
        if diag_min <= 1e-14 {
            return Err(Error::SingularReduced {
                pinned: pinned_state,
            });
        }
        let rhs = DMatrix::from_fn(keep.len(), d, |r, l| f_values[(keep[r], l)] - mean[l]);
        let sol = lu.solve(&rhs).ok_or(Error::SingularReduced {
            pinned: pinned_state,
        })?;
        for (r, &i) in keep.iter().enumerate() {
            for l in 0..d {
                v[(i, l)] = sol[(r, l)];
            }
        }
    }

    let residual = poisson_residual(chain, f_values, &v, pi);
    Ok(PoissonSolution {
        v,
        pinned_state,
        residual,
    })
}

/// Max-norm residual of the Poisson equation at every state.
pub fn poisson_residual(chain: &FiniteChain, f: &DMatrix<f64>, v: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = chain.n_states();
    let mut worst = 0.0f64;
    for l in 0..f.ncols() {
        let mean: f64 = (0..n).map(|j| pi[j] * f[(j, l)]).sum();
        for i in 0..n {
            let pv: f64 = (0..n).map(|j| chain.p[(i, j)] * v[(j, l)]).sum();
            worst = worst.max((v[(i, l)] - f[(i, l)] + mean - pv).abs());
        }
    }
    worst
}

/// `(I - P^{-pinned})^{-1}` on the reduced state set (original order, pinned
/// state removed). Entry `(i,j)` is the expected number of visits to `j`
/// starting from `i` before the chain hits the pinned state.
pub fn fundamental_matrix(chain: &FiniteChain, pinned_state: usize) -> Result<DMatrix<f64>> {
    let (a, _) = reduced_system(chain, pinned_state)?;
    if a.nrows() == 0 {
        return Ok(a);
    }
    let m = a.nrows();
    let lu = a.lu();
    if (0..m).any(|i| lu.u()[(i, i)].abs() <= 1e-14) {
        return Err(Error::SingularReduced {
            pinned: pinned_state,
        });
    }
    lu.try_inverse().ok_or(Error::SingularReduced {
        pinned: pinned_state,
    })
}

/// Mean hitting times `E_i[tau]` of the pinned state from every other state,
/// in reduced order.
pub fn hitting_time_vector(chain: &FiniteChain, pinned_state: usize) -> Result<Vec<f64>> {
    let z = fundamental_matrix(chain, pinned_state)?;
    Ok(z.row_iter().map(|r| r.sum()).collect())
}

/// Maps a reduced-set index back to the original state index.
pub fn reduced_to_state(reduced: usize, pinned_state: usize) -> usize {
    if reduced < pinned_state {
        reduced
    } else {
        reduced + 1
    }
}

/// Row callback `(x, i, out)` writing `p_x(. | i)` into `out`.
pub type RowFn = dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Kernel {
    Constant(Arc<FiniteChain>),
    Rows(Arc<RowFn>),
}

/// A state-dependent kernel `x -> P_x` over a fixed finite state set, with
/// Lipschitz metadata for the kernel (`l1`, row-wise 1-norm) and for its
/// stationary distribution (`l2`, 1-norm).
#[derive(Clone)]
pub struct ParamChain {
    dim: usize,
    n_states: usize,
    kernel: Kernel,
    pub l1: Option<Tagged>,
    pub l2: Option<Tagged>,
}

impl std::fmt::Debug for ParamChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamChain")
            .field("dim", &self.dim)
            .field("n_states", &self.n_states)
            .field("constant", &self.is_constant())
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .finish()
    }
}

impl ParamChain {
    /// Kernel independent of the parameter; both Lipschitz constants are zero.
    pub fn constant(dim: usize, chain: FiniteChain) -> Self {
        ParamChain {
            dim,
            n_states: chain.n_states(),
            kernel: Kernel::Constant(Arc::new(chain)),
            l1: Some(Tagged::derived(0.0)),
            l2: Some(Tagged::derived(0.0)),
        }
    }

    /// Kernel given row by row. The caller guarantees every `P_x` is
    /// stochastic and irreducible on the common state set; `chain_at` checks it.
    pub fn from_rows<F>(dim: usize, n_states: usize, rows: F) -> Self
    where
        F: Fn(&[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        ParamChain {
            dim,
            n_states,
            kernel: Kernel::Rows(Arc::new(rows)),
            l1: None,
            l2: None,
        }
    }

    /// Kernel given as a whole matrix per parameter.
    pub fn from_matrix_fn<F>(dim: usize, n_states: usize, kernel: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::from_rows(dim, n_states, move |x, i, out| {
            let p = kernel(x);
            for (j, o) in out.iter_mut().enumerate() {
                *o = p[(i, j)];
            }
        })
    }

    pub fn with_lipschitz(mut self, l1: Option<Tagged>, l2: Option<Tagged>) -> Self {
        self.l1 = l1;
        self.l2 = l2;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kernel, Kernel::Constant(_))
    }

    pub fn row(&self, x: &[f64], i: usize, out: &mut [f64]) {
        match &self.kernel {
            Kernel::Constant(c) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = c.p[(i, j)];
                }
            }
            Kernel::Rows(f) => f(x, i, out),
        }
    }

    /// Validated chain at parameter `x` (shared when the kernel is constant).
    pub fn chain_at(&self, x: &[f64]) -> Result<Arc<FiniteChain>> {
        match &self.kernel {
            Kernel::Constant(c) => Ok(Arc::clone(c)),
            Kernel::Rows(f) => {
                let n = self.n_states;
                let mut p = DMatrix::zeros(n, n);
                let mut buf = vec![0.0; n];
                for i in 0..n {
                    f(x, i, &mut buf);
                    for j in 0..n {
                        p[(i, j)] = buf[j];
                    }
                }
                Ok(Arc::new(validate_chain(p)?))
            }
        }
    }

    pub fn stationary_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.chain_at(x)?.stationary()?.to_vec())
    }

    /// Draws the successor of `i` under `P_x`; `scratch` must hold `n_states` entries.
    pub fn sample_next(&self, x: &[f64], i: usize, u: f64, scratch: &mut [f64]) -> usize {
        match &self.kernel {
            Kernel::Constant(c) => c.sample_next(i, u),
            Kernel::Rows(f) => {
                f(x, i, scratch);
                sample_index(scratch.iter().copied(), self.n_states, u)
            }
        }
    }
}

/// Sampled Lipschitz estimates `(L1_hat, L2_hat)` of the kernel and of its
/// stationary distribution over the ball of the given radius.
///
/// Half of the pairs are independent uniform draws, half are local
/// perturbations (step `1e-4 * radius`) which see the local slope. Results
/// are lower bounds of the true constants and carry the `estimated` tag.
pub fn estimate_kernel_lipschitz(
    param_chain: &ParamChain,
    domain_radius: f64,
    n_samples: usize,
    seed: u64,
    norm: Norm,
) -> Result<(Tagged, Tagged)> {
    if !(domain_radius > 0.0) {
        return Err(Error::EmptyDomain {
            radius: domain_radius,
        });
    }
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    if param_chain.is_constant() {
        return Ok((Tagged::derived(0.0), Tagged::derived(0.0)));
    }
    let n = param_chain.n_states();
    let dim = param_chain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    let mut rw = vec![0.0; n];
    let mut rv = vec![0.0; n];
    for s in 0..n_samples {
        let w = norm.sample_ball(dim, domain_radius, &mut rng);
        let v = if s % 2 == 0 {
            norm.sample_ball(dim, domain_radius, &mut rng)
        } else {
            let h = 1e-4 * domain_radius;
            let mut v: Vec<f64> = w.iter().map(|wi| wi + h * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let nv = norm.of(&v);
            if nv > domain_radius {
                v.iter_mut().for_each(|c| *c *= domain_radius / nv);
            }
            v
        };
        let dist = norm.dist(&w, &v);
        if dist <= 1e-14 * domain_radius {
            continue;
        }
        for i in 0..n {
            param_chain.row(&w, i, &mut rw);
            param_chain.row(&v, i, &mut rv);
            let diff: f64 = rw.iter().zip(&rv).map(|(a, b)| (a - b).abs()).sum();
            l1 = l1.max(diff / dist);
        }
        let pw = param_chain.stationary_at(&w)?;
        let pv = param_chain.stationary_at(&v)?;
        let diff: f64 = pw.iter().zip(&pv).map(|(a, b)| (a - b).abs()).sum();
        l2 = l2.max(diff / dist);
    }
    Ok((Tagged::estimated(l1), Tagged::estimated(l2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain(rows: &[&[f64]]) -> FiniteChain {
        FiniteChain::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn validates_two_cycle() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(c.n_states(), 2);
    }

    #[test]
    fn identity_is_reducible() {
        let err = FiniteChain::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotIrreducible { .. }));
    }

    #[test]
    fn row_sum_above_one_is_rejected() {
        let err = FiniteChain::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NotStochastic { row: 0, .. }));
    }

    #[test]
    fn negative_or_nan_entries_are_rejected() {
        assert!(FiniteChain::from_rows(&[vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(FiniteChain::from_rows(&[vec![f64::NAN, 1.0], vec![0.5, 0.5]]).is_err());
        assert!(FiniteChain::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn tiny_entries_do_not_count_as_edges() {
        let err = FiniteChain::from_rows(&[vec![1.0 - 1e-15, 1e-15], vec![0.5, 0.5]]);
        assert!(matches!(err, Err(Error::NotIrreducible { .. })));
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary_distribution(&chain(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-14);
        // 0.1 * pi1 = 0.5 * pi2 and pi1 + pi2 = 1 give pi = (5/6, 1/6).
        let pi = stationary_distribution(&chain(&[&[0.9, 0.1], &[0.5, 0.5]])).unwrap();
        assert_abs_diff_eq!(pi[0], 5.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 1.0 / 6.0, epsilon = 1e-14);
        let t = 1.0 / 3.0;
        let pi = stationary_distribution(&chain(&[&[t, t, t], &[t, t, t], &[t, t, t]])).unwrap();
        for p in pi {
            assert_abs_diff_eq!(p, t, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_f_gives_zero_poisson_solution() {
        let c = chain(&[&[0.2, 0.8, 0.0], &[0.3, 0.3, 0.4], &[0.5, 0.0, 0.5]]);
        let f = DMatrix::from_row_slice(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        let sol = poisson_solve(&c, &f, 1).unwrap();
        assert!(sol.v.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn two_cycle_poisson_example() {
        // Reduced system at state 0 (pinning state 1): (1 - p(0|0)) V(0) = f(0) - pi.f = 0.5.
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let sol = poisson_solve(&c, &f, 1).unwrap();
        assert_eq!(sol.v[(1, 0)], 0.0);
        assert_abs_diff_eq!(sol.v[(0, 0)], 0.5, epsilon = 1e-15);
        // Check at state 0: 0.5 = 1 - 0.5 + p(1|0) V(1) = 0.5.
        assert!(sol.residual < 1e-15);
    }

    #[test]
    fn pinned_state_out_of_range() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(
            poisson_solve(&c, &f, 5).unwrap_err(),
            Error::IndexOutOfRange { index: 5, len: 2 }
        );
        assert!(fundamental_matrix(&c, 2).is_err());
    }

    #[test]
    fn fundamental_matrix_examples() {
        let z = fundamental_matrix(&chain(&[&[0.0, 1.0], &[1.0, 0.0]]), 1).unwrap();
        assert_eq!(z.shape(), (1, 1));
        assert_abs_diff_eq!(z[(0, 0)], 1.0, epsilon = 1e-15);

        // Geometric(1/2) hitting time has mean 2.
        let lazy = chain(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_abs_diff_eq!(hitting_time_vector(&lazy, 1).unwrap()[0], 2.0, epsilon = 1e-14);

        // First-step analysis on the uniform 3-chain: h = 1 + (2/3) h, h = 3.
        let t = 1.0 / 3.0;
        let uni = chain(&[&[t, t, t], &[t, t, t], &[t, t, t]]);
        for h in hitting_time_vector(&uni, 2).unwrap() {
            assert_abs_diff_eq!(h, 3.0, epsilon = 1e-13);
        }
        assert_eq!(hitting_time_vector(&chain(&[&[0.0, 1.0], &[1.0, 0.0]]), 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_state_chain() {
        let c = chain(&[&[1.0]]);
        assert_eq!(stationary_distribution(&c).unwrap(), vec![1.0]);
        let sol = poisson_solve(&c, &DMatrix::from_element(1, 3, 2.0), 0).unwrap();
        assert!(sol.v.iter().all(|v| *v == 0.0));
        assert_eq!(fundamental_matrix(&c, 0).unwrap().nrows(), 0);
    }

    #[test]
    fn reduced_index_mapping() {
        assert_eq!(reduced_to_state(0, 0), 1);
        assert_eq!(reduced_to_state(1, 2), 1);
        assert_eq!(reduced_to_state(2, 2), 3);
    }

    #[test]
    fn sample_next_follows_the_row() {
        let c = chain(&[&[0.25, 0.75], &[1.0, 0.0]]);
        assert_eq!(c.sample_next(0, 0.1), 0);
        assert_eq!(c.sample_next(0, 0.3), 1);
        assert_eq!(c.sample_next(0, 0.999_999_999_999), 1);
        assert_eq!(c.sample_next(1, 0.999_999_999_999), 0);
    }

    #[test]
    fn text_format_round_trip() {
        let c = chain(&[&[0.9, 0.1], &[0.5, 0.5]]);
        let back = FiniteChain::from_text(&c.to_text()).unwrap();
        assert_eq!(back.matrix(), c.matrix());
        assert!(FiniteChain::from_text("2\n1 0\n0 1\n").is_err());
    }

    #[test]
    fn constant_kernel_has_zero_lipschitz() {
        let pc = ParamChain::constant(2, chain(&[&[0.5, 0.5], &[0.2, 0.8]]));
        let (l1, l2) = estimate_kernel_lipschitz(&pc, 1.0, 10, 0, Norm::Sup).unwrap();
        assert_eq!((l1.value, l2.value), (0.0, 0.0));
    }

    #[test]
    fn lipschitz_estimate_recovers_known_slope() {
        // p_x(0|0) = 0.5 + 0.1 clamp(x): two entries of row 0 move by 0.1 each.
        let pc = ParamChain::from_rows(1, 2, |x, i, out| {
            if i == 0 {
                let s = 0.1 * x[0].clamp(-1.0, 1.0);
                out[0] = 0.5 + s;
                out[1] = 0.5 - s;
            } else {
                out[0] = 0.5;
                out[1] = 0.5;
            }
        });
        let (l1, l2) = estimate_kernel_lipschitz(&pc, 1.0, 400, 7, Norm::Sup).unwrap();
        assert_abs_diff_eq!(l1.value, 0.2, epsilon = 1e-9);
        assert!(l2.value > 0.0 && l2.value < l1.value * 2.0);
        assert_eq!(l1.provenance, crate::Provenance::Estimated);
    }

    #[test]
    fn lipschitz_estimator_argument_errors() {
        let pc = ParamChain::constant(1, chain(&[&[0.5, 0.5], &[0.2, 0.8]]));
        assert!(matches!(
            estimate_kernel_lipschitz(&pc, 0.0, 10, 0, Norm::Sup),
            Err(Error::EmptyDomain { .. })
        ));
        assert!(matches!(
            estimate_kernel_lipschitz(&pc, 1.0, 0, 0, Norm::Sup),
            Err(Error::InvalidArgument(_))
        ));
    }
}

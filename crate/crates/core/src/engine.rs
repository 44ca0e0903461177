//! The stochastic-approximation simulator and its proof-side diagnostics.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::markov::{fundamental_matrix, poisson_solve, FiniteChain, ParamChain};
use crate::schedule::StepSchedule;
use crate::{Error, Norm, Result, Tagged};

/// Environment variable holding the worker count for parallel campaigns.
pub const WORKERS_ENV: &str = "SA_LAB_WORKERS";

/// Slack allowed in pathwise inequality checks.
pub const PATH_SLACK: f64 = 1e-9;

/// `F(x, i)` written into `out`.
pub type MapFn = dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync;

/// `M_{n+1}(x)` given `(x, Y_n, Y_{n+1})` and fresh randomness.
pub type NoiseFn = dyn Fn(&[f64], usize, usize, &mut dyn RngCore, &mut [f64]) + Send + Sync;

/// An instance of `x_{n+1} = x_n + a(n)(F(x_n, Y_n) - x_n + M_{n+1}(x_n))`.
#[derive(Clone)]
pub struct SaProblem {
    pub name: String,
    dim: usize,
    map: Arc<MapFn>,
    noise: Option<Arc<NoiseFn>>,
    pub chain: ParamChain,
    pub alpha: Tagged,
    pub x_star: Option<Vec<f64>>,
    pub k: Tagged,
    pub k0: Tagged,
    pub l3: Option<Tagged>,
    pub norm: Norm,
    pub pinned_state: usize,
    /// The iterates never leave the nonnegative orthant, so assumption
    /// checks sample only there.
    pub nonnegative: bool,
}

impl fmt::Debug for SaProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SaProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("chain", &self.chain)
            .field("noisy", &self.noise.is_some())
            .field("alpha", &self.alpha)
            .field("x_star", &self.x_star)
            .field("k", &self.k)
            .field("k0", &self.k0)
            .field("l3", &self.l3)
            .field("norm", &self.norm)
            .finish()
    }
}

impl SaProblem {
    /// A noiseless problem (`M = 0`, so `K0 = 0`). `alpha` must lie in (0, 1).
    pub fn new<F>(dim: usize, chain: ParamChain, map: F, alpha: Tagged, k: Tagged) -> Result<Self>
    where
        F: Fn(&[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if chain.dim() != dim {
            return Err(Error::Shape(format!(
                "kernel is parameterised by dimension {}, problem has {dim}",
                chain.dim()
            )));
        }
        if !(alpha.value > 0.0 && alpha.value < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contraction factor must lie in (0,1), got {}",
                alpha.value
            )));
        }
        if !(k.value >= 0.0) {
            return Err(Error::InvalidArgument(format!("K must be nonnegative, got {}", k.value)));
        }
        Ok(SaProblem {
            name: "custom".into(),
            dim,
            map: Arc::new(map),
            noise: None,
            chain,
            alpha,
            x_star: None,
            k,
            k0: Tagged::derived(0.0),
            l3: None,
            norm: Norm::Sup,
            pinned_state: 0,
            nonnegative: false,
        })
    }

    pub fn with_noise<G>(mut self, noise: G, k0: Tagged) -> Self
    where
        G: Fn(&[f64], usize, usize, &mut dyn RngCore, &mut [f64]) + Send + Sync + 'static,
    {
        self.noise = Some(Arc::new(noise));
        self.k0 = k0;
        self
    }

    pub fn with_x_star(mut self, x_star: Vec<f64>) -> Result<Self> {
        if x_star.len() != self.dim {
            return Err(Error::Shape(format!(
                "x* has length {}, problem dimension is {}",
                x_star.len(),
                self.dim
            )));
        }
        self.x_star = Some(x_star);
        Ok(self)
    }

    pub fn with_l3(mut self, l3: Tagged) -> Self {
        self.l3 = Some(l3);
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_pinned_state(mut self, pinned: usize) -> Result<Self> {
        if pinned >= self.chain.n_states() {
            return Err(Error::IndexOutOfRange {
                index: pinned,
                len: self.chain.n_states(),
            });
        }
        self.pinned_state = pinned;
        Ok(self)
    }

    pub fn with_nonnegative_domain(mut self) -> Self {
        self.nonnegative = true;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn has_noise(&self) -> bool {
        self.noise.is_some()
    }

    pub fn f(&self, x: &[f64], i: usize, out: &mut [f64]) {
        (self.map)(x, i, out)
    }

    /// Writes `M_{n+1}(x)` into `out` (zero for noiseless problems).
    pub fn noise(&self, x: &[f64], y: usize, y_next: usize, rng: &mut dyn RngCore, out: &mut [f64]) {
        match &self.noise {
            Some(g) => g(x, y, y_next, rng, out),
            None => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    /// `F(x, .)` as an `n_states x d` matrix.
    pub fn f_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (n, d) = (self.n_states(), self.dim);
        let mut m = DMatrix::zeros(n, d);
        let mut buf = vec![0.0; d];
        for i in 0..n {
            self.f(x, i, &mut buf);
            for l in 0..d {
                m[(i, l)] = buf[l];
            }
        }
        m
    }

    /// `sum_i pi(i) F(x, i)`.
    pub fn averaged_map(&self, x: &[f64], pi: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for (i, &p) in pi.iter().enumerate() {
            self.f(x, i, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += p * b;
            }
        }
        acc
    }

    /// `K / (1 - alpha)`, the additive part of the iterate envelope.
    pub fn envelope_offset(&self) -> f64 {
        self.k.value / (1.0 - self.alpha.value)
    }
}

/// A recorded run: `x_0..x_T`, `Y_0..Y_T` and the realised `M_{n+1}(x_n)`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    xs: Vec<f64>,
    pub ys: Vec<usize>,
    noise: Option<Vec<f64>>,
    pub schedule_id: String,
    pub seed: u64,
    pub zs: Option<(usize, Vec<Vec<f64>>)>,
    pub gammas: Option<(usize, Vec<f64>)>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The horizon `T`.
    pub fn horizon(&self) -> usize {
        self.ys.len() - 1
    }

    pub fn x(&self, n: usize) -> &[f64] {
        &self.xs[n * self.dim..(n + 1) * self.dim]
    }

    pub fn xs(&self) -> impl Iterator<Item = &[f64]> {
        self.xs.chunks(self.dim)
    }

    /// `M_{n+1}(x_n)` for `n < T`.
    pub fn noise(&self, n: usize) -> Option<&[f64]> {
        self.noise
            .as_ref()
            .map(|m| &m[n * self.dim..(n + 1) * self.dim])
    }

    pub fn has_noise_log(&self) -> bool {
        self.noise.is_some()
    }

    /// CSV dump with columns `n,Y_n,x_1..x_d[,z_1..z_d,Gamma]`; the optional
    /// columns are empty before their start index.
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::from("n,Y_n");
        for l in 1..=d {
            out.push_str(&format!(",x_{l}"));
        }
        if self.zs.is_some() {
            for l in 1..=d {
                out.push_str(&format!(",z_{l}"));
            }
        }
        if self.gammas.is_some() {
            out.push_str(",Gamma");
        }
        out.push('\n');
        for n in 0..=self.horizon() {
            out.push_str(&format!("{n},{}", self.ys[n]));
            for v in self.x(n) {
                out.push_str(&format!(",{v}"));
            }
            if let Some((start, zs)) = &self.zs {
                match n.checked_sub(*start).and_then(|k| zs.get(k)) {
                    Some(z) => z.iter().for_each(|v| out.push_str(&format!(",{v}"))),
                    None => (0..d).for_each(|_| out.push(',')),
                }
            }
            if let Some((start, g)) = &self.gammas {
                match n.checked_sub(*start).and_then(|k| g.get(k)) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// RNG for trajectory `index` of a campaign with the given master seed.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Workers for parallel campaigns: `SA_LAB_WORKERS` if set, else all cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `job(index)` for `index` in `0..count` on the worker pool and returns
/// the results in index order.
pub fn par_map<T, F>(count: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool");
    pool.install(|| (0..count).into_par_iter().map(job).collect())
}

/// Visitor callback `(n, x_n, Y_n, M_{n+1}(x_n))`; the noise slice is `None` at `n = T`.
fn run<R: RngCore>(
    problem: &SaProblem,
    schedule: &StepSchedule,
    x0: &[f64],
    y0: usize,
    horizon: usize,
    rng: &mut R,
    mut visit: impl FnMut(usize, &[f64], usize, Option<&[f64]>),
) -> Result<()> {
    let d = problem.dim();
    if x0.len() != d {
        return Err(Error::Shape(format!("x0 has length {}, expected {d}", x0.len())));
    }
    if y0 >= problem.n_states() {
        return Err(Error::IndexOutOfRange {
            index: y0,
            len: problem.n_states(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon T must be at least 1".into()));
    }
    let mut x = x0.to_vec();
    let mut y = y0;
    let mut f = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut scratch = vec![0.0; problem.n_states()];
    for n in 0..horizon {
        problem.f(&x, y, &mut f);
        let y_next = problem.chain.sample_next(&x, y, rng.random::<f64>(), &mut scratch);
        problem.noise(&x, y, y_next, rng, &mut m);
        visit(n, &x, y, Some(&m));
        let a = schedule.a(n);
        for l in 0..d {
            x[l] += a * (f[l] - x[l] + m[l]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { step: n + 1 });
        }
        y = y_next;
    }
    visit(horizon, &x, y, None);
    Ok(())
}

/// Simulates `T` steps from `(x0, y0)` and records the full trajectory,
/// including the noise log. Deterministic in `seed`.
pub fn simulate(
    problem: &SaProblem,
    schedule: &StepSchedule,
    x0: &[f64],
    y0: usize,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = trajectory_rng(seed, 0);
    let mut traj = simulate_with_rng(problem, schedule, x0, y0, horizon, &mut rng)?;
    traj.seed = seed;
    Ok(traj)
}

/// As [`simulate`] with a caller-supplied generator.
pub fn simulate_with_rng<R: RngCore>(
    problem: &SaProblem,
    schedule: &StepSchedule,
    x0: &[f64],
    y0: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let d = problem.dim();
    let mut xs = Vec::with_capacity((horizon + 1) * d);
    let mut ys = Vec::with_capacity(horizon + 1);
    let mut noise = Vec::with_capacity(horizon * d);
    run(problem, schedule, x0, y0, horizon, rng, |_, x, y, m| {
        xs.extend_from_slice(x);
        ys.push(y);
        if let Some(m) = m {
            noise.extend_from_slice(m);
        }
    })?;
    Ok(Trajectory {
        dim: d,
        xs,
        ys,
        noise: Some(noise),
        schedule_id: schedule.id(),
        seed: 0,
        zs: None,
        gammas: None,
    })
}

/// Simulates without storing anything; `visit(n, x_n, Y_n)` sees every step.
pub fn simulate_stream<R: RngCore>(
    problem: &SaProblem,
    schedule: &StepSchedule,
    x0: &[f64],
    y0: usize,
    horizon: usize,
    rng: &mut R,
    mut visit: impl FnMut(usize, &[f64], usize),
) -> Result<()> {
    run(problem, schedule, x0, y0, horizon, rng, |n, x, y, _| visit(n, x, y))
}

/// The auxiliary iteration `z_{n+1} = z_n + a(n)(sum_i pi_{x_n}(i) F(z_n, i) - z_n)`
/// started from `z_{n0} = x_{n0}`; entry `k` of the result is `z_{n0+k}`.
pub fn simulate_auxiliary(
    problem: &SaProblem,
    schedule: &StepSchedule,
    traj: &Trajectory,
    n0: usize,
) -> Result<Vec<Vec<f64>>> {
    let t = traj.horizon();
    if n0 > t {
        return Err(Error::BadRange(format!("n0 = {n0} exceeds the horizon {t}")));
    }
    let constant_pi = if problem.chain.is_constant() {
        Some(problem.chain.stationary_at(traj.x(0))?)
    } else {
        None
    };
    let mut z = traj.x(n0).to_vec();
    let mut out = Vec::with_capacity(t - n0 + 1);
    out.push(z.clone());
    for n in n0..t {
        let pi = match &constant_pi {
            Some(pi) => pi.clone(),
            None => problem.chain.stationary_at(traj.x(n))?,
        };
        let fz = problem.averaged_map(&z, &pi);
        let a = schedule.a(n);
        for (zl, fl) in z.iter_mut().zip(&fz) {
            *zl += a * (fl - *zl);
        }
        out.push(z.clone());
    }
    Ok(out)
}

/// Poisson solutions `V(x, .)` pinned at the problem's reference state, with
/// the fundamental matrix reused when the kernel does not depend on `x`.
pub struct PoissonOracle<'a> {
    problem: &'a SaProblem,
    fixed: Option<(Arc<FiniteChain>, DMatrix<f64>, Vec<f64>)>,
}

impl<'a> PoissonOracle<'a> {
    pub fn new(problem: &'a SaProblem) -> Result<Self> {
        let fixed = if problem.chain.is_constant() {
            let chain = problem.chain.chain_at(&vec![0.0; problem.dim()])?;
            let g = fundamental_matrix(&chain, problem.pinned_state)?;
            let pi = chain.stationary()?.to_vec();
            Some((chain, g, pi))
        } else {
            None
        };
        Ok(PoissonOracle { problem, fixed })
    }

    /// `V(x, .)` as an `n_states x d` matrix.
    pub fn solve(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let f = self.problem.f_matrix(x);
        match &self.fixed {
            Some((_, g, pi)) => {
                let (n, d) = (f.nrows(), f.ncols());
                let i0 = self.problem.pinned_state;
                let keep: Vec<usize> = (0..n).filter(|&i| i != i0).collect();
                let mut v = DMatrix::zeros(n, d);
                for l in 0..d {
                    let mean: f64 = (0..n).map(|j| pi[j] * f[(j, l)]).sum();
                    for (r, &i) in keep.iter().enumerate() {
                        v[(i, l)] = keep
                            .iter()
                            .enumerate()
                            .map(|(c, &j)| g[(r, c)] * (f[(j, l)] - mean))
                            .sum();
                    }
                }
                Ok(v)
            }
            None => {
                let chain = self.problem.chain.chain_at(x)?;
                Ok(poisson_solve(&chain, &f, self.problem.pinned_state)?.v)
            }
        }
    }
}

/// `Gamma_k` for `k` in `[n0, T]`:
/// `kappa(d) max_l |sum_{r=n0}^{k-1} chi(k-1, r+1) a(r) (M^l_{r+1}(x_r) + V~^l_r(x_r))|`
/// with `V~_r(x_r) = V(x_r, Y_r) - sum_j p_{x_{r-1}}(j | Y_{r-1}) V(x_r, j)` for
/// `r > n0` and `V~_{n0} = 0`. The weights are those multiplying the noise in
/// the expansion of `x_k - z_k`, so `S_{k+1} = (1 - a(k)) S_k + a(k) w_k`.
pub fn gamma_diagnostic(
    problem: &SaProblem,
    schedule: &StepSchedule,
    traj: &Trajectory,
    n0: usize,
) -> Result<Vec<f64>> {
    if !traj.has_noise_log() {
        return Err(Error::MissingNoiseLog);
    }
    let t = traj.horizon();
    if n0 > t {
        return Err(Error::BadRange(format!("n0 = {n0} exceeds the horizon {t}")));
    }
    let d = problem.dim();
    let n = problem.n_states();
    let kappa = problem.norm.kappa(d);
    let oracle = PoissonOracle::new(problem)?;
    let mut s = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut row = vec![0.0; n];
    let mut gammas = Vec::with_capacity(t - n0 + 1);
    gammas.push(0.0);
    for k in n0..t {
        w.copy_from_slice(traj.noise(k).expect("noise log present"));
        if k > n0 {
            let v = oracle.solve(traj.x(k))?;
            problem.chain.row(traj.x(k - 1), traj.ys[k - 1], &mut row);
            let yk = traj.ys[k];
            for l in 0..d {
                let expected: f64 = (0..n).map(|j| row[j] * v[(j, l)]).sum();
                w[l] += v[(yk, l)] - expected;
            }
        }
        let a = schedule.a(k);
        for l in 0..d {
            s[l] = (1.0 - a) * s[l] + a * w[l];
        }
        gammas.push(kappa * s.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
    }
    Ok(gammas)
}

/// Running maximum `zeta_m = max_{n0 <= k <= m} Gamma_k`.
pub fn running_max(gammas: &[f64]) -> Vec<f64> {
    gammas
        .iter()
        .scan(0.0f64, |acc, &g| {
            *acc = acc.max(g);
            Some(*acc)
        })
        .collect()
}

/// Pathwise check of `||x_n|| <= ||x_N|| + K/(1-alpha)` for `n >= N`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub checked: usize,
    pub violations: usize,
    /// `max_n (||x_n|| - bound)`; negative when the envelope holds strictly.
    pub worst_margin: f64,
}

/// Streaming form of the envelope check; feed it every `(n, x_n)`.
#[derive(Debug, Clone)]
pub struct EnvelopeMonitor {
    big_n: usize,
    offset: f64,
    norm: Norm,
    bound: Option<f64>,
    pub result: EnvelopeCheck,
}

impl EnvelopeMonitor {
    pub fn new(problem: &SaProblem, big_n: usize) -> Self {
        EnvelopeMonitor {
            big_n,
            offset: problem.envelope_offset(),
            norm: problem.norm,
            bound: None,
            result: EnvelopeCheck {
                worst_margin: f64::NEG_INFINITY,
                ..Default::default()
            },
        }
    }

    pub fn observe(&mut self, n: usize, x: &[f64]) {
        if n < self.big_n {
            return;
        }
        let size = self.norm.of(x);
        let bound = *self.bound.get_or_insert(size + self.offset);
        let margin = size - bound;
        self.result.checked += 1;
        self.result.worst_margin = self.result.worst_margin.max(margin);
        if margin > PATH_SLACK {
            self.result.violations += 1;
        }
    }
}

pub fn pathwise_envelope_check(problem: &SaProblem, traj: &Trajectory, big_n: usize) -> EnvelopeCheck {
    let mut mon = EnvelopeMonitor::new(problem, big_n);
    for (n, x) in traj.xs().enumerate() {
        mon.observe(n, x);
    }
    mon.result
}

/// One sampled assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    #[serde(with = "crate::provenance::finite_or_string")]
    pub measured: f64,
    /// The value it must not exceed.
    #[serde(with = "crate::provenance::finite_or_string")]
    pub threshold: f64,
    pub counterexamples: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|c| c.name == name)
    }

    /// Largest sampled `||sum_i pi_w(i)(F(x,i) - F(z,i))|| / ||x - z||`.
    pub fn contraction_ratio(&self) -> f64 {
        self.item("contraction").map_or(f64::NAN, |c| c.measured)
    }
}

/// Draws a point of the ball; one draw in eight is a vertex of the ball.
/// Restricted to the orthant for nonnegative problems.
fn ball_point(problem: &SaProblem, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (norm, dim) = (problem.norm, problem.dim());
    let mut x = if rng.random::<f64>() < 0.125 {
        let mut v = norm.ball_vertices(dim, radius, 1, rng);
        v.swap_remove(0)
    } else {
        norm.sample_ball(dim, radius, rng)
    };
    if problem.nonnegative {
        x.iter_mut().for_each(|v| *v = v.abs());
    }
    x
}

/// Samples the standing assumptions on the ball of the given radius:
/// contraction of the averaged map, the fixed point, the pathwise bound
/// `||F(x,Y) + M|| <= K + alpha ||x||`, the noise growth bound
/// `|M^l| <= K0 (1 + ||x||)` and the conditional zero mean of `M`.
pub fn check_problem(
    problem: &SaProblem,
    n_samples: usize,
    ball_radius: f64,
    seed: u64,
) -> Result<CheckReport> {
    if !(ball_radius > 0.0) {
        return Err(Error::EmptyDomain {
            radius: ball_radius,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, ns, norm) = (problem.dim(), problem.n_states(), problem.norm);
    let alpha = problem.alpha.value;
    let mut items = Vec::new();

    let mut worst = 0.0f64;
    let mut bad = 0;
    for _ in 0..n_samples {
        let x = ball_point(problem, ball_radius, &mut rng);
        let z = ball_point(problem, ball_radius, &mut rng);
        let w = ball_point(problem, ball_radius, &mut rng);
        let dist = norm.dist(&x, &z);
        if dist == 0.0 {
            continue;
        }
        let pi = problem.chain.stationary_at(&w)?;
        let ratio = norm.dist(&problem.averaged_map(&x, &pi), &problem.averaged_map(&z, &pi)) / dist;
        worst = worst.max(ratio);
        if ratio > alpha + 1e-12 {
            bad += 1;
        }
    }
    items.push(CheckItem {
        name: "contraction".into(),
        passed: bad == 0,
        measured: worst,
        threshold: alpha,
        counterexamples: bad,
        samples: n_samples,
    });

    if let Some(x_star) = &problem.x_star {
        let mut worst = 0.0f64;
        let mut bad = 0;
        for _ in 0..n_samples {
            let w = ball_point(problem, ball_radius, &mut rng);
            let pi = problem.chain.stationary_at(&w)?;
            let res = norm.dist(&problem.averaged_map(x_star, &pi), x_star);
            worst = worst.max(res);
            if res > 1e-9 {
                bad += 1;
            }
        }
        items.push(CheckItem {
            name: "fixed_point".into(),
            passed: bad == 0,
            measured: worst,
            threshold: 1e-9,
            counterexamples: bad,
            samples: n_samples,
        });
    }

    // Envelope, noise growth and zero mean, enumerating every successor state.
    const DRAWS: usize = 8;
    let mut env_worst = f64::NEG_INFINITY;
    let mut env_bad = 0;
    let mut growth_worst = f64::NEG_INFINITY;
    let mut growth_bad = 0;
    let mut env_samples = 0;
    let mut mean_sum = vec![0.0; d];
    let mut mean_var = vec![0.0; d];
    let mut mean_count = 0usize;
    let mut row = vec![0.0; ns];
    let mut f = vec![0.0; d];
    let mut m = vec![0.0; d];
    let k = problem.k.value;
    let k0 = problem.k0.value;
    let outer = n_samples.div_ceil(ns).max(1);
    for _ in 0..outer {
        let x = ball_point(problem, ball_radius, &mut rng);
        let size = norm.of(&x);
        for i in 0..ns {
            problem.f(&x, i, &mut f);
            problem.chain.row(&x, i, &mut row);
            let mut cond_mean = vec![0.0; d];
            let mut cond_var = vec![0.0; d];
            for (j, &p) in row.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let mut s1 = vec![0.0; d];
                let mut s2 = vec![0.0; d];
                for _ in 0..DRAWS {
                    problem.noise(&x, i, j, &mut rng, &mut m);
                    let total: Vec<f64> = f.iter().zip(&m).map(|(a, b)| a + b).collect();
                    let margin = norm.of(&total) - (k + alpha * size);
                    env_worst = env_worst.max(margin);
                    env_samples += 1;
                    if margin > PATH_SLACK {
                        env_bad += 1;
                    }
                    for l in 0..d {
                        let g = m[l].abs() - k0 * (1.0 + size);
                        growth_worst = growth_worst.max(g);
                        if g > PATH_SLACK {
                            growth_bad += 1;
                        }
                        s1[l] += m[l];
                        s2[l] += m[l] * m[l];
                    }
                }
                let r = DRAWS as f64;
                for l in 0..d {
                    let mean = s1[l] / r;
                    let var = ((s2[l] / r - mean * mean).max(0.0)) * r / (r - 1.0);
                    cond_mean[l] += p * mean;
                    cond_var[l] += p * p * var / r;
                }
            }
            for l in 0..d {
                mean_sum[l] += cond_mean[l];
                mean_var[l] += cond_var[l];
            }
            mean_count += 1;
        }
    }
    items.push(CheckItem {
        name: "envelope".into(),
        passed: env_bad == 0,
        measured: k + env_worst.max(-k),
        threshold: k,
        counterexamples: env_bad,
        samples: env_samples,
    });
    items.push(CheckItem {
        name: "noise_growth".into(),
        passed: growth_bad == 0,
        measured: growth_worst,
        threshold: 0.0,
        counterexamples: growth_bad,
        samples: env_samples,
    });
    // Pooled test of E[M | x, Y_n] = 0, Bonferroni-adjusted over components.
    let z = 3.0 + (2.0 * (d as f64).ln()).sqrt();
    let c = mean_count as f64;
    let mut worst_z = 0.0f64;
    let mut bad = 0;
    for l in 0..d {
        let mean = mean_sum[l] / c;
        let se = mean_var[l].sqrt() / c;
        let excess = mean.abs() - (z * se + 1e-9);
        if excess > 0.0 {
            bad += 1;
        }
        worst_z = worst_z.max(if se > 0.0 { mean.abs() / se } else if mean.abs() > 1e-9 { f64::INFINITY } else { 0.0 });
    }
    items.push(CheckItem {
        name: "zero_mean".into(),
        passed: bad == 0,
        measured: worst_z,
        threshold: z,
        counterexamples: bad,
        samples: mean_count,
    });
    Ok(CheckReport { items })
}

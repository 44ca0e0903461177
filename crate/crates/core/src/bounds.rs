//! Constants, envelope and failure-probability curves of the concentration
//! bound, the martingale tail it rests on, empirical calibration of `D`, and
//! stitching with an external finite-time moment bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::engine::{
    gamma_diagnostic, par_map, simulate_with_rng, trajectory_rng, PoissonOracle, SaProblem,
};
use crate::provenance::finite_or_string;
use crate::schedule::{beta_value, StepSchedule};
use crate::{Error, Norm, Provenance, Result, Tagged};

/// Lower end of the search range for `D`.
pub const D_FLOOR: f64 = 1e-12;
/// Upper end of the search range for `D`; returned when every `D` is feasible.
pub const D_CEILING: f64 = 1e6;
/// Truncation error allowed in infinite tail sums.
pub const TAIL_TOL: f64 = 1e-12;

/// Exponent of `delta` in the tail: 2 for `delta <= C`, 1 beyond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Quadratic,
    Linear,
}

impl Branch {
    pub fn select(delta: f64, c: f64) -> Self {
        if delta <= c {
            Branch::Quadratic
        } else {
            Branch::Linear
        }
    }

    pub fn power(self) -> i32 {
        match self {
            Branch::Quadratic => 2,
            Branch::Linear => 1,
        }
    }
}

/// User-side inputs for [`BoundReport::build`].
#[derive(Debug, Clone)]
pub struct BoundInputs {
    /// Start of the bound; defaults to `max(N, 1)`.
    pub n0: Option<usize>,
    /// Initial iterate used for the deterministic bound on `||x_N||`.
    pub x0: Vec<f64>,
    /// Declared `||x_N||`, overriding the deterministic bound.
    pub x_n_norm: Option<f64>,
    /// Declared `||x_{n0} - x*||`; defaults to `K* + ||x*||`.
    pub x_n0_dist: Option<f64>,
    /// Declared Lipschitz constant `L` of the Poisson solution.
    pub poisson_lipschitz: Option<f64>,
    pub d: Option<Tagged>,
    pub n_samples: usize,
    pub seed: u64,
}

impl BoundInputs {
    pub fn new(x0: Vec<f64>) -> Self {
        BoundInputs {
            n0: None,
            x0,
            x_n_norm: None,
            x_n0_dist: None,
            poisson_lipschitz: None,
            d: None,
            n_samples: 10_000,
            seed: 0,
        }
    }
}

/// Every constant of the bound, each tagged with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub problem: String,
    #[serde(skip)]
    pub schedule: StepSchedule,
    pub schedule_id: String,
    pub dim: usize,
    pub norm: Norm,
    pub big_n: usize,
    pub n0: usize,
    #[serde(with = "finite_or_string")]
    pub a_n0: f64,
    #[serde(with = "finite_or_string")]
    pub kappa: f64,
    pub alpha: Tagged,
    pub k: Tagged,
    pub k0: Tagged,
    pub x_n_norm: Tagged,
    pub k_star: Tagged,
    pub poisson_lipschitz: Tagged,
    pub k_dagger: Tagged,
    pub v_max: Tagged,
    pub v_prime_max: Tagged,
    pub c1: Tagged,
    pub c2: Tagged,
    /// `C` with `||x_N||`, the form used for branch selection.
    pub c: Tagged,
    /// `C` with `||x_{n0}||` bounded by `K*`, logged for comparison.
    pub c_alt: Tagged,
    pub x_n0_dist: Tagged,
    pub d: Option<Tagged>,
}

/// Deterministic bound on `||x_N||` from `||x_0||`, iterating
/// `||x_{n+1}|| <= |1 - a(n)| ||x_n|| + a(n)(K + alpha ||x_n||)`.
pub fn x_n_norm_bound(problem: &SaProblem, schedule: &StepSchedule, x0: &[f64], big_n: usize) -> f64 {
    let (k, alpha) = (problem.k.value, problem.alpha.value);
    (0..big_n).fold(problem.norm.of(x0), |r, n| {
        let a = schedule.a(n);
        (1.0 - a).abs() * r + a * (k + alpha * r)
    })
}

/// Origin, vertices, then uniform draws; folded into the orthant for
/// nonnegative problems.
fn ball_points(problem: &SaProblem, radius: f64, n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let (norm, dim) = (problem.norm, problem.dim());
    let mut pts = vec![vec![0.0; dim]];
    if radius > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pts.extend(norm.ball_vertices(dim, radius, 64.min(n_samples.max(1)), &mut rng));
        while pts.len() < n_samples.max(1) {
            pts.push(norm.sample_ball(dim, radius, &mut rng));
        }
    }
    if problem.nonnegative {
        pts.iter_mut().flatten().for_each(|v| *v = v.abs());
    }
    pts
}

/// Sampled `(V_max, V'_max)` over the ball of the given radius: the largest
/// `||V(x, i)||` and the largest `|V^l(x, i)|`. Vertices of the ball and the
/// origin are always included. Tagged as estimates.
pub fn v_extrema(problem: &SaProblem, radius: f64, n_samples: usize, seed: u64) -> Result<(Tagged, Tagged)> {
    let oracle = PoissonOracle::new(problem)?;
    let (mut v_max, mut v_prime) = (0.0f64, 0.0f64);
    for x in ball_points(problem, radius, n_samples, seed) {
        let v = oracle.solve(&x)?;
        for i in 0..v.nrows() {
            let row: Vec<f64> = v.row(i).iter().copied().collect();
            v_max = v_max.max(problem.norm.of(&row));
            v_prime = v_prime.max(row.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        }
    }
    Ok((Tagged::estimated(v_max), Tagged::estimated(v_prime)))
}

/// Sampled Lipschitz constant of `x -> V(x, i)` over the ball, as
/// `max_i ||V(x,i) - V(z,i)|| / ||x - z||`. Half the pairs are independent
/// draws and half are local perturbations of size `1e-4 * radius`.
pub fn estimate_poisson_lipschitz(
    problem: &SaProblem,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<Tagged> {
    if !(radius > 0.0) {
        return Err(Error::EmptyDomain { radius });
    }
    let oracle = PoissonOracle::new(problem)?;
    let norm = problem.norm;
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for k in 0..n_pairs.max(2) {
        let fold = |mut v: Vec<f64>| {
            if problem.nonnegative {
                v.iter_mut().for_each(|c| *c = c.abs());
            }
            v
        };
        let x = fold(norm.sample_ball(d, radius, &mut rng));
        let z = if k % 2 == 0 {
            fold(norm.sample_ball(d, radius, &mut rng))
        } else {
            let step = norm.sample_ball(d, 1e-4 * radius, &mut rng);
            fold(x.iter().zip(&step).map(|(a, b)| a + b).collect())
        };
        let dist = norm.dist(&x, &z);
        if dist == 0.0 {
            continue;
        }
        let (vx, vz) = (oracle.solve(&x)?, oracle.solve(&z)?);
        let diff = vx - vz;
        for i in 0..diff.nrows() {
            let row: Vec<f64> = diff.row(i).iter().copied().collect();
            best = best.max(norm.of(&row) / dist);
        }
    }
    Ok(Tagged::estimated(best))
}

impl BoundReport {
    pub fn build(problem: &SaProblem, schedule: &StepSchedule, inputs: &BoundInputs) -> Result<Self> {
        let big_n = schedule.certify_n()?;
        let n0 = inputs.n0.unwrap_or(big_n.max(1));
        if n0 < big_n || n0 == 0 {
            return Err(Error::BadRange(format!(
                "n0 = {n0} must be at least N = {big_n} and at least 1"
            )));
        }
        if inputs.x0.len() != problem.dim() {
            return Err(Error::Shape(format!(
                "x0 has length {}, problem dimension is {}",
                inputs.x0.len(),
                problem.dim()
            )));
        }
        let norm = problem.norm;
        let dim = problem.dim();
        let kappa = norm.kappa(dim);
        let alpha = problem.alpha;
        let (k, k0) = (problem.k, problem.k0);
        let one_minus = 1.0 - alpha.value;

        let x_n_norm = match inputs.x_n_norm {
            Some(v) => Tagged::declared(v),
            None => Tagged::derived_from(
                x_n_norm_bound(problem, schedule, &inputs.x0, big_n),
                &[k, alpha],
            ),
        };
        let k_star = Tagged::derived_from(x_n_norm.value + k.value / one_minus, &[x_n_norm, k, alpha]);
        // A q-dependent kernel can lose numerical support far from the origin.
        let on_ball = |e: Error| match e {
            Error::NotIrreducible { .. } | Error::SingularReduced { .. } => Error::Inadmissible(format!(
                "the kernel degenerates on the ball of radius K* = {:.4e} ({e}); \
                 declare x_n_norm or the Poisson Lipschitz constant, or use a smoother kernel",
                k_star.value
            )),
            e => e,
        };
        let (v_max, v_prime_max) =
            v_extrema(problem, k_star.value, inputs.n_samples, inputs.seed).map_err(on_ball)?;
        let poisson_lipschitz = match inputs.poisson_lipschitz {
            Some(l) => Tagged::declared(l),
            None if k_star.value > 0.0 => estimate_poisson_lipschitz(
                problem,
                k_star.value,
                inputs.n_samples,
                inputs.seed.wrapping_add(1),
            )
            .map_err(on_ball)?,
            None => Tagged::estimated(0.0),
        };
        let k_dagger = Tagged::derived_from(
            poisson_lipschitz.value * (k.value + 2.0 * k_star.value),
            &[poisson_lipschitz, k, k_star],
        );
        let c1 = Tagged::derived_from(4.0 * v_max.value + k_dagger.value, &[v_max, k_dagger]);
        let c2 = Tagged::derived_from(2.0 * v_prime_max.value, &[v_prime_max]);
        let c = Tagged::derived_from(
            (kappa * (k0.value * (1.0 + k_star.value) + c2.value)).exp(),
            &[k0, k_star, c2],
        );
        let c_alt = Tagged::derived_from(
            (kappa * (k0.value * (1.0 + k_star.value + k.value / one_minus) + c2.value)).exp(),
            &[k0, k_star, k, alpha, c2],
        );
        let x_n0_dist = match (inputs.x_n0_dist, &problem.x_star) {
            (Some(v), _) => Tagged::declared(v),
            (None, Some(xs)) => Tagged::derived_from(k_star.value + norm.of(xs), &[k_star]),
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "x* is unknown: declare ||x_n0 - x*|| explicitly".into(),
                ))
            }
        };
        if let Some(d) = inputs.d {
            if !(d.value > 0.0) {
                return Err(Error::InvalidArgument(format!("D must be positive, got {}", d.value)));
            }
        }
        Ok(BoundReport {
            problem: problem.name.clone(),
            schedule: schedule.clone(),
            schedule_id: schedule.id(),
            dim,
            norm,
            big_n,
            n0,
            a_n0: schedule.a(n0),
            kappa,
            alpha,
            k,
            k0,
            x_n_norm,
            k_star,
            poisson_lipschitz,
            k_dagger,
            v_max,
            v_prime_max,
            c1,
            c2,
            c,
            c_alt,
            x_n0_dist,
            d: inputs.d,
        })
    }

    pub fn with_d(mut self, d: Tagged) -> Self {
        self.d = Some(d);
        self
    }

    pub fn branch(&self, delta: f64) -> Branch {
        Branch::select(delta, self.c.value)
    }

    /// `(delta + a(n0) c1) / (1 - alpha)`, the level the envelope decays to.
    pub fn floor(&self, delta: f64) -> f64 {
        floor_at(self, delta, self.n0)
    }

    /// The envelope at `n` with the report's `||x_{n0} - x*||`.
    pub fn envelope(&self, delta: f64, n: usize) -> Result<f64> {
        self.envelope_from(delta, n, self.x_n0_dist.value)
    }

    /// `exp(-(1-alpha) b_{n0}(n)) dist + (delta + a(n0) c1)/(1-alpha)`.
    pub fn envelope_from(&self, delta: f64, n: usize, x_n0_dist: f64) -> Result<f64> {
        envelope_curve(
            &self.schedule,
            self.alpha.value,
            self.c1.value,
            self.n0,
            delta,
            n,
            x_n0_dist,
        )
    }

    fn d_value(&self) -> Result<f64> {
        self.d.map(|d| d.value).ok_or_else(|| {
            Error::InvalidArgument("D is not set: declare it or run the calibration".into())
        })
    }

    /// Failure-probability bound for `delta` up to `n`, or for all `n >= n0`
    /// when `cumulative` is set.
    pub fn tail(&self, delta: f64, n: usize, cumulative: bool) -> Result<f64> {
        tail_bound(
            &self.schedule,
            self.dim,
            self.d_value()?,
            self.c.value,
            delta,
            self.n0,
            n,
            cumulative,
        )
    }

    /// `n, envelope, failure_bound` rows for the given indices.
    pub fn curves(&self, delta: f64, ns: &[usize]) -> Result<Vec<CurvePoint>> {
        let d = self.d_value()?;
        let shape = TailShape::new(&self.schedule, self.n0, d, delta, self.branch(delta))?;
        let mut sum = 0.0;
        let mut last = self.n0;
        let mut sorted = ns.to_vec();
        sorted.sort_unstable();
        let mut rows = Vec::with_capacity(sorted.len());
        for n in sorted {
            if n < self.n0 {
                return Err(Error::BadRange(format!("curve index {n} precedes n0 = {}", self.n0)));
            }
            sum += shape.sum(last + 1, n);
            last = n;
            rows.push(CurvePoint {
                n,
                envelope: self.envelope(delta, n)?,
                failure_bound: (2.0 * self.dim as f64 * sum).min(1.0),
            });
        }
        Ok(rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn floor_at(report: &BoundReport, delta: f64, n0: usize) -> f64 {
    (delta + report.schedule.a(n0) * report.c1.value) / (1.0 - report.alpha.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub envelope: f64,
    pub failure_bound: f64,
}

pub fn curves_csv(rows: &[CurvePoint]) -> String {
    let mut out = String::from("n,envelope,failure_bound\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n, r.envelope, r.failure_bound));
    }
    out
}

/// Right-hand side of the envelope inequality at `n >= n0`.
pub fn envelope_curve(
    schedule: &StepSchedule,
    alpha: f64,
    c1: f64,
    n0: usize,
    delta: f64,
    n: usize,
    x_n0_dist: f64,
) -> Result<f64> {
    if n < n0 {
        return Err(Error::BadRange(format!("envelope needs n >= n0, got n={n}, n0={n0}")));
    }
    let b = schedule.b_sum(n0, n)?;
    Ok((-(1.0 - alpha) * b).exp() * x_n0_dist + (delta + schedule.a(n0) * c1) / (1.0 - alpha))
}

/// Terms `exp(-D delta^p / beta_{n0}(m)) = exp(-A m^e)`.
#[derive(Debug, Clone, Copy)]
struct TailShape {
    a: f64,
    e: f64,
}

impl TailShape {
    fn new(schedule: &StepSchedule, n0: usize, d: f64, delta: f64, branch: Branch) -> Result<Self> {
        if n0 == 0 {
            return Err(Error::BadRange("the tail needs n0 >= 1".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        let scale = d * delta.powi(branch.power());
        let (d1, d2) = (schedule.d1, schedule.d2);
        // 1/beta_{n0}(m) = n0^{d2-d1} m^{d1} or m^{d2}.
        let (a, e) = if d1 <= d2 {
            (scale * (n0 as f64).powf(d2 - d1), d1)
        } else {
            (scale, d2)
        };
        debug_assert!((1.0 / beta_value(d1, d2, n0 as f64, (n0 + 1) as f64) - (a / scale) * ((n0 + 1) as f64).powf(e)).abs() < 1e-6 * (a / scale) * ((n0 + 1) as f64).powf(e));
        Ok(TailShape { a, e })
    }

    fn term(&self, m: usize) -> f64 {
        (-self.a * (m as f64).powf(self.e)).exp()
    }

    /// `int_x^inf exp(-A t^e) dt = A^{-1/e} Gamma(1/e, A x^e) / e`.
    fn integral_from(&self, x: f64) -> f64 {
        let s = 1.0 / self.e;
        let q = gamma_ur(s, self.a * x.powf(self.e));
        if q <= 0.0 {
            return 0.0;
        }
        (-self.e.ln() - s * self.a.ln() + ln_gamma(s) + q.ln()).exp()
    }

    /// `sum_{m=lo}^{hi} term(m)`, exact up to two million terms and bounded
    /// above by the integral beyond that.
    fn sum(&self, lo: usize, hi: usize) -> f64 {
        const DIRECT: usize = 2_000_000;
        if lo > hi {
            return 0.0;
        }
        let mut total = 0.0;
        let end = hi.min(lo.saturating_add(DIRECT));
        for m in lo..=end {
            let t = self.term(m);
            if t == 0.0 {
                return total;
            }
            total += t;
        }
        if end < hi {
            total += self.integral_from(end as f64);
        }
        total
    }

    /// `sum_{m >= lo} term(m)`, truncated once the integral remainder is
    /// below `TAIL_TOL` and the remainder added back.
    fn sum_to_infinity(&self, lo: usize) -> Result<f64> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::DivergentTail(format!("term coefficient {}", self.a)));
        }
        let mut total = 0.0;
        let mut m = lo;
        loop {
            for _ in 0..256 {
                total += self.term(m);
                m += 1;
            }
            let rest = self.integral_from((m - 1) as f64);
            if !rest.is_finite() {
                return Err(Error::DivergentTail(format!("remainder beyond m = {m} is {rest}")));
            }
            if rest < TAIL_TOL || m - lo > 100_000_000 {
                return Ok(total + rest);
            }
        }
    }
}

/// Failure-probability bound `2d sum_{m=n0+1}^{n} exp(-D delta^p / beta_{n0}(m))`
/// with `p = 2` iff `delta <= C`, clipped to `[0, 1]`; `cumulative` sums to infinity.
#[allow(clippy::too_many_arguments)]
pub fn tail_bound(
    schedule: &StepSchedule,
    dim: usize,
    d: f64,
    c: f64,
    delta: f64,
    n0: usize,
    n: usize,
    cumulative: bool,
) -> Result<f64> {
    Ok(tail_bound_raw(schedule, dim, d, c, delta, n0, n, cumulative)?.min(1.0))
}

/// As [`tail_bound`] without clipping.
#[allow(clippy::too_many_arguments)]
pub fn tail_bound_raw(
    schedule: &StepSchedule,
    dim: usize,
    d: f64,
    c: f64,
    delta: f64,
    n0: usize,
    n: usize,
    cumulative: bool,
) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("D must be positive, got {d}")));
    }
    let shape = TailShape::new(schedule, n0, d, delta, Branch::select(delta, c))?;
    let sum = if cumulative {
        shape.sum_to_infinity(n0 + 1)?
    } else {
        if n < n0 {
            return Err(Error::BadRange(format!("tail needs n >= n0, got n={n}, n0={n0}")));
        }
        shape.sum(n0 + 1, n)
    };
    Ok(2.0 * dim as f64 * sum)
}

/// Parameters of the martingale concentration inequality: moment bound
/// `E[exp(eps |M_n|) | F_{n-1}] <= c` and weight bounds `gamma1`, `gamma2`
/// (which enter only through `D`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleTail {
    pub c: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub moment_eps: f64,
    pub d: f64,
}

impl MartingaleTail {
    /// Proof setting: `eps = 1`, `gamma1 = 1`, `gamma2 = d3 2^{d1}`.
    pub fn for_schedule(c: f64, schedule: &StepSchedule, d: f64) -> Self {
        MartingaleTail {
            c,
            gamma1: 1.0,
            gamma2: schedule.d3 * 2f64.powf(schedule.d1),
            moment_eps: 1.0,
            d,
        }
    }

    /// End of the quadratic branch, `c gamma1 / eps`.
    pub fn threshold(&self) -> f64 {
        self.c * self.gamma1 / self.moment_eps
    }

    /// `2 exp(-D dev^2 / omega)` for `dev <= threshold`, else
    /// `2 exp(-D dev / omega)`, clipped to 1.
    pub fn tail(&self, dev: f64, omega: f64) -> f64 {
        let p = if dev <= self.threshold() { 2 } else { 1 };
        martingale_tail_branch(self.d, dev, omega, p)
    }
}

/// One branch of the martingale tail, `min(1, 2 exp(-D dev^p / omega))`.
pub fn martingale_tail_branch(d: f64, dev: f64, omega: f64, p: i32) -> f64 {
    (2.0 * (-d * dev.powi(p) / omega).exp()).min(1.0)
}

/// Settings shared by calibration and domination campaigns.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub deltas: Vec<f64>,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub y0: usize,
}

impl Campaign {
    fn validate(&self, n0: usize) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::BadRange("delta list is empty".into()));
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::BadRange(format!("delta values must be positive, got {d}")));
        }
        if self.horizon <= n0 {
            return Err(Error::BadRange(format!(
                "horizon {} must exceed n0 = {n0}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// First index `n` at which each delta is reached, per trajectory.
type HitTimes = Vec<Vec<Option<usize>>>;

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub d: Tagged,
    pub at_ceiling: bool,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub deltas: Vec<f64>,
    /// Per delta, the number of trajectories whose `zeta` reached it.
    pub exceedances: Vec<usize>,
}

/// Whether `D` bounds the empirical hitting-time frequencies: for every
/// delta and `n`, `#{hit <= n} / count <= tail(D, delta, n)`. Both sides step
/// only at hit times, so those are the only indices checked.
fn dominates(
    schedule: &StepSchedule,
    dim: usize,
    c: f64,
    n0: usize,
    d: f64,
    deltas: &[f64],
    sorted_hits: &[Vec<usize>],
    count: usize,
) -> Result<bool> {
    for (delta, hits) in deltas.iter().zip(sorted_hits) {
        if hits.is_empty() {
            continue;
        }
        let shape = TailShape::new(schedule, n0, d, *delta, Branch::select(*delta, c))?;
        let mut sum = 0.0;
        let mut last = n0;
        for (j, &h) in hits.iter().enumerate() {
            if hits.get(j + 1) == Some(&h) {
                continue;
            }
            sum += shape.sum(last + 1, h);
            last = h;
            let bound = (2.0 * dim as f64 * sum).min(1.0);
            if (j + 1) as f64 / count as f64 > bound {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn sort_hits(hits: &HitTimes, n_deltas: usize) -> Vec<Vec<usize>> {
    (0..n_deltas)
        .map(|k| {
            let mut v: Vec<usize> = hits.iter().filter_map(|h| h[k]).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Largest `D` (within a relative `1e-3`) such that the frequency of
/// `{zeta_n >= delta}` over the campaign never exceeds the tail bound with
/// that `D`, for every delta and every `n <= T`.
pub fn calibrate_d(
    report: &BoundReport,
    problem: &SaProblem,
    campaign: &Campaign,
) -> Result<Calibration> {
    campaign.validate(report.n0)?;
    if campaign.n_trajectories < 100 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 100 trajectories, got {}",
            campaign.n_trajectories
        )));
    }
    let schedule = &report.schedule;
    let n0 = report.n0;
    let results: Vec<Result<Vec<Option<usize>>>> = par_map(campaign.n_trajectories, |idx| {
        let mut rng = trajectory_rng(campaign.seed, idx as u64);
        let traj = simulate_with_rng(problem, schedule, &campaign.x0, campaign.y0, campaign.horizon, &mut rng)?;
        let gammas = gamma_diagnostic(problem, schedule, &traj, n0)?;
        Ok(campaign
            .deltas
            .iter()
            .map(|&delta| gammas.iter().position(|&g| g >= delta).map(|k| n0 + k))
            .collect())
    });
    let hits: HitTimes = results.into_iter().collect::<Result<_>>()?;
    let sorted = sort_hits(&hits, campaign.deltas.len());
    let exceedances = sorted.iter().map(Vec::len).collect();
    let feasible = |d: f64| {
        dominates(
            schedule,
            report.dim,
            report.c.value,
            n0,
            d,
            &campaign.deltas,
            &sorted,
            campaign.n_trajectories,
        )
    };
    let make = |d: f64, at_ceiling: bool| Calibration {
        d: Tagged::new(d, Provenance::Calibrated),
        at_ceiling,
        n_trajectories: campaign.n_trajectories,
        horizon: campaign.horizon,
        seed: campaign.seed,
        deltas: campaign.deltas.clone(),
        exceedances,
    };
    if feasible(D_CEILING)? {
        return Ok(make(D_CEILING, true));
    }
    if !feasible(D_FLOOR)? {
        return Err(Error::NoFeasibleD(format!(
            "empirical frequencies exceed the tail even at D = {D_FLOOR:e}"
        )));
    }
    let (mut lo, mut hi) = (D_FLOOR, D_CEILING);
    while hi / lo - 1.0 > 1e-3 {
        let mid = (lo * hi).sqrt();
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(make(lo, false))
}

/// Outcome of checking the envelope against the failure bound on fresh runs.
#[derive(Debug, Clone, Serialize)]
pub struct Domination {
    pub deltas: Vec<f64>,
    pub n_trajectories: usize,
    /// Per delta, trajectories that left the envelope somewhere in `(n0, T]`.
    pub violations: Vec<usize>,
    /// Per delta, `max_n (frequency(n) - bound(n))`; nonpositive when dominated.
    pub worst_excess: Vec<f64>,
    pub passed: bool,
}

/// Simulates a fresh campaign and compares, for every delta and `n <= T`,
/// the frequency of `{exists m in (n0, n]: ||x_m - x*|| > envelope(m)}` with
/// the failure bound. The envelope uses each path's own `||x_{n0} - x*||`.
pub fn envelope_domination(
    report: &BoundReport,
    problem: &SaProblem,
    campaign: &Campaign,
) -> Result<Domination> {
    campaign.validate(report.n0)?;
    let x_star = problem
        .x_star
        .clone()
        .ok_or_else(|| Error::InvalidArgument("domination needs a known x*".into()))?;
    let d = report.d_value()?;
    let n0 = report.n0;
    let schedule = &report.schedule;
    let norm = problem.norm;
    let t = campaign.horizon;
    // b_{n0}(n) by running sum.
    let mut b = Vec::with_capacity(t - n0 + 1);
    let mut acc = 0.0;
    for n in n0..=t {
        acc += schedule.a(n);
        b.push(acc);
    }
    let decay: Vec<f64> = b.iter().map(|v| (-(1.0 - report.alpha.value) * v).exp()).collect();
    let results: Vec<Result<Vec<Option<usize>>>> = par_map(campaign.n_trajectories, |idx| {
        let mut rng = trajectory_rng(campaign.seed, idx as u64);
        let mut first: Vec<Option<usize>> = vec![None; campaign.deltas.len()];
        let mut dist0 = 0.0;
        crate::engine::simulate_stream(problem, schedule, &campaign.x0, campaign.y0, t, &mut rng, |n, x, _| {
            if n < n0 {
                return;
            }
            let dist = norm.dist(x, &x_star);
            if n == n0 {
                dist0 = dist;
                return;
            }
            for (k, &delta) in campaign.deltas.iter().enumerate() {
                if first[k].is_none() {
                    let env = decay[n - n0] * dist0 + floor_at(report, delta, n0);
                    if dist > env {
                        first[k] = Some(n);
                    }
                }
            }
        })?;
        Ok(first)
    });
    let hits: HitTimes = results.into_iter().collect::<Result<_>>()?;
    let sorted = sort_hits(&hits, campaign.deltas.len());
    let count = campaign.n_trajectories as f64;
    let mut worst_excess = Vec::new();
    for (delta, hs) in campaign.deltas.iter().zip(&sorted) {
        let shape = TailShape::new(schedule, n0, d, *delta, report.branch(*delta))?;
        let mut worst = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut last = n0;
        for (j, &h) in hs.iter().enumerate() {
            if hs.get(j + 1) == Some(&h) {
                continue;
            }
            sum += shape.sum(last + 1, h);
            last = h;
            worst = worst.max((j + 1) as f64 / count - (2.0 * report.dim as f64 * sum).min(1.0));
        }
        if hs.is_empty() {
            // Frequency is zero everywhere; the margin is the smallest bound.
            worst = -(2.0 * report.dim as f64 * shape.term(n0 + 1)).min(1.0);
        }
        worst_excess.push(worst);
    }
    Ok(Domination {
        deltas: campaign.deltas.clone(),
        n_trajectories: campaign.n_trajectories,
        violations: sorted.iter().map(Vec::len).collect(),
        passed: worst_excess.iter().all(|&w| w <= 0.0),
        worst_excess,
    })
}

/// Request for [`stitch`].
#[derive(Debug, Clone, Copy)]
pub struct StitchRequest {
    /// Radius of the Chebyshev event `||x_{n0} - x*|| <= K_breve`.
    pub k_breve: f64,
    /// Target failure probability.
    pub nu: f64,
    /// Target radius.
    pub eps: f64,
    pub delta: f64,
    /// Search limit for `n0`.
    pub max_n0: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stitch {
    pub n0: usize,
    pub n1: usize,
    /// Smallest index satisfying the Chebyshev leg alone.
    pub n0_chebyshev: usize,
    /// `upsilon(n0) / K_breve^2`.
    pub chebyshev_value: f64,
    /// `2d sum_{n >= n0} exp(-D delta^p / beta_{n0}(n))`.
    pub tail_value: f64,
    pub floor: f64,
    pub envelope_at_n1: f64,
    pub branch: Branch,
}

/// `(2c / (nu K_breve^2))^{1/Gamma}`: the Chebyshev-leg threshold for
/// `upsilon(n) = c / n^Gamma`.
pub fn chebyshev_n0_power(c: f64, gamma: f64, nu: f64, k_breve: f64) -> f64 {
    (2.0 * c / (nu * k_breve * k_breve)).powf(1.0 / gamma)
}

fn stitch_tail(report: &BoundReport, d: f64, delta: f64, n0: usize) -> Result<f64> {
    let shape = TailShape::new(&report.schedule, n0, d, delta, report.branch(delta))?;
    Ok(2.0 * report.dim as f64 * (shape.term(n0) + shape.sum_to_infinity(n0 + 1)?))
}

/// Smallest `n0 >= max(N, 1)` with `upsilon(n0)/K_breve^2 <= nu/2`, the tail
/// leg `< nu/2` and a floor below `eps`, then the smallest `n1 >= n0` whose
/// envelope (started from `K_breve`) is at most `eps`. Each leg is assumed
/// monotone in `n0` (`upsilon` non-increasing), so the search gallops and then
/// bisects.
pub fn stitch(report: &BoundReport, upsilon: &dyn Fn(usize) -> f64, req: &StitchRequest) -> Result<Stitch> {
    let d = report.d_value()?;
    let StitchRequest { k_breve, nu, eps, delta, max_n0 } = *req;
    if !(k_breve > 0.0 && nu > 0.0 && eps > 0.0 && delta > 0.0) {
        return Err(Error::InvalidArgument(
            "K_breve, nu, eps and delta must be positive".into(),
        ));
    }
    let one_minus = 1.0 - report.alpha.value;
    if delta / one_minus >= eps {
        return Err(Error::Infeasible(format!(
            "eps = {eps} is not above the asymptotic floor delta/(1-alpha) = {}; \
             choose delta < {}",
            delta / one_minus,
            eps * one_minus
        )));
    }
    let start = report.big_n.max(1);
    let cheb_ok = |n: usize| upsilon(n) / (k_breve * k_breve) <= nu / 2.0;
    let all_ok = |n: usize| -> Result<bool> {
        Ok(cheb_ok(n) && floor_at(report, delta, n) < eps && stitch_tail(report, d, delta, n)? < nu / 2.0)
    };
    let first = |pred: &dyn Fn(usize) -> Result<bool>| -> Result<Option<usize>> {
        if pred(start)? {
            return Ok(Some(start));
        }
        let mut lo;
        let mut hi = start;
        loop {
            if hi >= max_n0 {
                return Ok(None);
            }
            lo = hi;
            hi = hi.saturating_mul(2).min(max_n0);
            if pred(hi)? {
                break;
            }
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if pred(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    };
    let n0_chebyshev = first(&|n| Ok(cheb_ok(n)))?.ok_or_else(|| {
        Error::Infeasible(format!(
            "moment bound leg not met for any n0 <= {max_n0}; raise the search limit or nu"
        ))
    })?;
    let n0 = first(&all_ok)?.ok_or_else(|| {
        Error::Infeasible(format!(
            "no n0 <= {max_n0} meets every leg; try a smaller delta, a larger nu or a larger limit \
             (floor at limit {:.3e}, eps {eps})",
            floor_at(report, delta, max_n0)
        ))
    })?;
    let floor = floor_at(report, delta, n0);
    // The envelope from K_breve decreases in n1, so gallop then bisect.
    let env = |n1: usize| envelope_curve(&report.schedule, report.alpha.value, report.c1.value, n0, delta, n1, k_breve);
    let limit = usize::MAX / 4;
    let mut n1 = n0;
    if env(n0)? > eps {
        let mut hi = n0.max(1);
        let mut lo;
        loop {
            if hi >= limit {
                return Err(Error::Infeasible(format!("no n1 below {limit} brings the envelope under eps")));
            }
            lo = hi;
            hi = hi.saturating_mul(2).min(limit);
            if env(hi)? <= eps {
                break;
            }
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if env(mid)? <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        n1 = hi;
    }
    let envelope_at_n1 = env(n1)?;
    Ok(Stitch {
        n0,
        n1,
        n0_chebyshev,
        chebyshev_value: upsilon(n0) / (k_breve * k_breve),
        tail_value: stitch_tail(report, d, delta, n0)?,
        floor,
        envelope_at_n1,
        branch: report.branch(delta),
    })
}

//! Step-size sequences `a(n)` and the derived quantities used by the bounds:
//! partial sums `b_k(n)`, the rate `beta_k(n)`, and the products `chi`/`psi`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default scan horizon used to certify table schedules.
pub const DEFAULT_SCAN_HORIZON: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Rule {
    /// `a(n) = b / (n + 1)`.
    Harmonic { b: f64 },
    /// `a(n) = d3 / (n + 1)^d2`.
    Power { d3: f64, d2: f64 },
    /// Explicit prefix, then `tail_d3 / (n + 1)^tail_d2`.
    Table {
        prefix: Vec<f64>,
        tail_d3: f64,
        tail_d2: f64,
    },
}

/// A step-size schedule together with its envelope constants
/// `d1/n <= a(n) <= d3 n^{-d2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub rule: Rule,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl StepSchedule {
    /// `a(n) = b/(n+1)` with `d2 = 1`, `d3 = b`, `d1 = b/2`.
    pub fn harmonic(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("harmonic b must be positive, got {b}")));
        }
        Ok(StepSchedule {
            rule: Rule::Harmonic { b },
            d1: b / 2.0,
            d2: 1.0,
            d3: b,
        })
    }

    /// `a(n) = d3/(n+1)^d2` with `d2` in (0, 1] and `d1 = d3/2`.
    pub fn power(d3: f64, d2: f64) -> Result<Self> {
        if !(d3 > 0.0 && d3.is_finite()) || !(d2 > 0.0 && d2 <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "power rule needs d3 > 0 and d2 in (0,1], got d3={d3}, d2={d2}"
            )));
        }
        Ok(StepSchedule {
            rule: Rule::Power { d3, d2 },
            d1: d3 / 2.0,
            d2,
            d3,
        })
    }

    /// Explicit prefix followed by a power tail.
    pub fn table(prefix: Vec<f64>, tail_d3: f64, tail_d2: f64) -> Result<Self> {
        let tail = Self::power(tail_d3, tail_d2)?;
        if prefix.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidArgument(
                "table step sizes must be finite and non-negative".into(),
            ));
        }
        Ok(StepSchedule {
            rule: Rule::Table {
                prefix,
                tail_d3,
                tail_d2,
            },
            d1: tail.d1,
            d2: tail.d2,
            d3: tail.d3,
        })
    }

    /// Overrides the lower-envelope constant; `certify_n` adjusts `N`.
    pub fn with_d1(mut self, d1: f64) -> Result<Self> {
        if !(d1 > 0.0 && d1.is_finite()) {
            return Err(Error::InvalidArgument(format!("d1 must be positive, got {d1}")));
        }
        self.d1 = d1;
        Ok(self)
    }

    /// Parses `rule=harmonic b=1.0`, `rule=power d3=1.0 d2=0.6` or
    /// `rule=table file=steps.txt [d3=.. d2=..]` (also `values=0.5,0.4,...`).
    /// Any rule accepts an optional `d1=`. Relative table files resolve
    /// against `base_dir`.
    pub fn from_descriptor(desc: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut rule = None;
        let mut kv = Vec::new();
        for tok in desc.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("schedule token `{tok}` is not key=value")))?;
            if k == "rule" {
                rule = Some(v.to_string());
            } else {
                kv.push((k.to_string(), v.to_string()));
            }
        }
        let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let num = |key: &str, default: Option<f64>| -> Result<f64> {
            match get(key) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Parse(format!("schedule `{key}={v}` is not a number"))),
                None => default.ok_or_else(|| Error::Parse(format!("schedule needs `{key}=`"))),
            }
        };
        for (k, _) in &kv {
            if !["b", "d1", "d2", "d3", "file", "values"].contains(&k.as_str()) {
                return Err(Error::Parse(format!("unknown schedule key `{k}`")));
            }
        }
        let sched = match rule.as_deref() {
            Some("harmonic") => Self::harmonic(num("b", None)?)?,
            Some("power") => Self::power(num("d3", None)?, num("d2", None)?)?,
            Some("table") => {
                let prefix = if let Some(path) = get("file") {
                    let p = Path::new(path);
                    let p = match base_dir {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p.to_path_buf(),
                    };
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                    crate::textio::parse_vector(&text)?
                } else if let Some(vals) = get("values") {
                    vals.split(',')
                        .map(|v| {
                            v.trim()
                                .parse()
                                .map_err(|_| Error::Parse(format!("table value `{v}`")))
                        })
                        .collect::<Result<Vec<f64>>>()?
                } else {
                    return Err(Error::Parse("table rule needs `file=` or `values=`".into()));
                };
                Self::table(prefix, num("d3", Some(1.0))?, num("d2", Some(1.0))?)?
            }
            Some(other) => return Err(Error::Parse(format!("unknown schedule rule `{other}`"))),
            None => return Err(Error::Parse("schedule descriptor needs `rule=`".into())),
        };
        match get("d1") {
            Some(_) => sched.with_d1(num("d1", None)?),
            None => Ok(sched),
        }
    }

    /// Short identifier used in trajectory dumps.
    pub fn id(&self) -> String {
        match &self.rule {
            Rule::Harmonic { b } => format!("harmonic(b={b})"),
            Rule::Power { d3, d2 } => format!("power(d3={d3},d2={d2})"),
            Rule::Table {
                prefix,
                tail_d3,
                tail_d2,
            } => format!("table(len={},d3={tail_d3},d2={tail_d2})", prefix.len()),
        }
    }

    fn tail(&self) -> (f64, f64) {
        match &self.rule {
            Rule::Harmonic { b } => (*b, 1.0),
            Rule::Power { d3, d2 } => (*d3, *d2),
            Rule::Table {
                tail_d3, tail_d2, ..
            } => (*tail_d3, *tail_d2),
        }
    }

    fn prefix(&self) -> &[f64] {
        match &self.rule {
            Rule::Table { prefix, .. } => prefix,
            _ => &[],
        }
    }

    /// The step size `a(n)`.
    pub fn a(&self, n: usize) -> f64 {
        let prefix = self.prefix();
        if n < prefix.len() {
            return prefix[n];
        }
        let (c, p) = self.tail();
        c / ((n + 1) as f64).powf(p)
    }

    /// Smallest `N` such that for every `n >= N`: `a(n) < 1`,
    /// `a(n+1) <= a(n)`, and (for `n >= 1`) `d1/n <= a(n) <= d3 n^{-d2}`.
    pub fn certify_n(&self) -> Result<usize> {
        self.certify_n_within(DEFAULT_SCAN_HORIZON)
    }

    pub fn certify_n_within(&self, scan_horizon: usize) -> Result<usize> {
        let (c, p) = self.tail();
        let tail_n = power_certificate(c, p, self.d1, self.d3, self.d2)
            .ok_or(Error::NoCertificate {
                horizon: scan_horizon,
            })?;
        let prefix = self.prefix();
        let n = if prefix.is_empty() {
            tail_n
        } else {
            // The tail certificate covers indices beyond the prefix and its own
            // N; everything below is scanned explicitly.
            let scan_end = prefix.len().max(tail_n) + 1;
            if scan_end > scan_horizon + 1 {
                // The scan itself would run past the horizon.
                let first_bad = (0..=scan_horizon).rev().find(|&n| !self.envelope_ok(n));
                return match first_bad {
                    Some(_) => Err(Error::NoCertificate {
                        horizon: scan_horizon,
                    }),
                    None => Ok(0),
                };
            }
            match (0..scan_end).rev().find(|&n| !self.envelope_ok(n)) {
                Some(last_bad) => last_bad + 1,
                None => 0,
            }
        };
        if n > scan_horizon {
            return Err(Error::NoCertificate {
                horizon: scan_horizon,
            });
        }
        Ok(n)
    }

    fn envelope_ok(&self, n: usize) -> bool {
        let a = self.a(n);
        if !(a < 1.0) || self.a(n + 1) > a {
            return false;
        }
        if n >= 1 {
            let nf = n as f64;
            if self.d1 / nf > a || a > self.d3 * nf.powf(-self.d2) {
                return false;
            }
        }
        true
    }

    /// `b_k(n) = sum_{m=k}^{n} a(m)`.
    pub fn b_sum(&self, k: usize, n: usize) -> Result<f64> {
        if k > n {
            return Err(Error::BadRange(format!("b_sum needs k <= n, got k={k}, n={n}")));
        }
        let prefix = self.prefix();
        let mut total = 0.0;
        let mut lo = k;
        while lo <= n && lo < prefix.len() {
            total += prefix[lo];
            lo += 1;
        }
        if lo <= n {
            let (c, p) = self.tail();
            total += c * power_sum(p, (lo + 1) as u64, (n + 1) as u64);
        }
        Ok(total)
    }

    /// `beta_k(n) = k^{-(d2-d1)} n^{-d1}` if `d1 <= d2`, else `n^{-d2}`.
    pub fn beta(&self, k: usize, n: usize) -> Result<f64> {
        if k == 0 || k > n {
            return Err(Error::BadRange(format!(
                "beta needs 1 <= k <= n, got k={k}, n={n}"
            )));
        }
        Ok(beta_value(self.d1, self.d2, k as f64, n as f64))
    }

    /// `chi(n, m) = prod_{k=m}^{n} (1 - a(k))`, or 1 when `n < m`.
    pub fn chi(&self, n: usize, m: usize) -> f64 {
        if n < m {
            return 1.0;
        }
        product_of(|k| 1.0 - self.a(k), m, n)
    }

    /// `psi(n, m) = prod_{k=m}^{n-1} (1 - (1-alpha) a(k))`, or 1 when `n <= m`.
    pub fn psi(&self, alpha: f64, n: usize, m: usize) -> f64 {
        if n <= m {
            return 1.0;
        }
        product_of(|k| 1.0 - (1.0 - alpha) * self.a(k), m, n - 1)
    }

    /// Tabulates `a` and log-products up to `horizon` for O(1) `chi` queries.
    pub fn precompute(&self, horizon: usize) -> ScheduleTable {
        let a: Vec<f64> = (0..=horizon + 1).map(|n| self.a(n)).collect();
        // First index from which every step is below one.
        let start = a[..=horizon]
            .iter()
            .rposition(|&v| v >= 1.0)
            .map_or(0, |i| i + 1);
        let mut log_prefix = vec![0.0; horizon + 2];
        for k in start..=horizon {
            log_prefix[k + 1] = log_prefix[k] + (-a[k]).ln_1p();
        }
        ScheduleTable {
            a,
            log_prefix,
            start,
            horizon,
        }
    }
}

pub(crate) fn beta_value(d1: f64, d2: f64, k: f64, n: f64) -> f64 {
    if d1 <= d2 {
        k.powf(-(d2 - d1)) * n.powf(-d1)
    } else {
        n.powf(-d2)
    }
}

/// Product of `factor(k)` for `k` in `lo..=hi`, through log-sums when every
/// factor is positive so long products do not underflow prematurely.
fn product_of(factor: impl Fn(usize) -> f64, lo: usize, hi: usize) -> f64 {
    let mut log_sum = 0.0;
    for k in lo..=hi {
        let f = factor(k);
        if f <= 0.0 {
            return (lo..=hi).map(&factor).product();
        }
        log_sum += f.ln();
    }
    log_sum.exp()
}

/// Smallest `N` satisfying the envelope conditions for `a(n) = c/(n+1)^p`.
fn power_certificate(c: f64, p: f64, d1: f64, d3: f64, d2: f64) -> Option<usize> {
    let a = |n: u64| c / ((n + 1) as f64).powf(p);
    // a(n) < 1.
    let mut n_lt1 = c.powf(1.0 / p).floor().max(0.0) as u64;
    while n_lt1 > 0 && a(n_lt1 - 1) < 1.0 {
        n_lt1 -= 1;
    }
    while a(n_lt1) >= 1.0 {
        n_lt1 += 1;
    }
    // d1/n <= a(n) and a(n) <= d3 n^{-d2}; both predicates are monotone in n
    // for p <= 1, so the first index where they hold is found by bisection.
    let holds = |n: u64| {
        let nf = n as f64;
        d1 / nf <= a(n) && a(n) <= d3 * nf.powf(-d2)
    };
    // Far beyond any scan horizon, yet small enough that n and n+1 still
    // differ by many ulps after powf.
    const LIMIT: u64 = 1 << 40;
    if !holds(LIMIT) {
        return None;
    }
    let n_env = if holds(1) {
        // Conditions at n >= 1 only; index 0 carries no envelope requirement.
        0
    } else {
        let (mut lo, mut hi) = (1u64, LIMIT);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    usize::try_from(n_lt1.max(n_env)).ok()
}

/// `sum_{j=lo}^{hi} j^{-p}` for `1 <= lo`, exact summation for short ranges
/// and Euler-Maclaurin beyond the first 64 terms otherwise.
pub(crate) fn power_sum(p: f64, lo: u64, hi: u64) -> f64 {
    if lo > hi {
        return 0.0;
    }
    let f = |x: f64| x.powf(-p);
    if hi - lo < 4096 {
        return (lo..=hi).map(|j| f(j as f64)).sum();
    }
    let split = lo + 64;
    let head: f64 = (lo..split).map(|j| f(j as f64)).sum();
    let (a, b) = (split as f64, hi as f64);
    let integral = if (1.0 - p).abs() < 1e-12 {
        (b / a).ln()
    } else {
        let e = 1.0 - p;
        a.powf(e) * (e * (b / a).ln()).exp_m1() / e
    };
    let d1 = |x: f64| -p * x.powf(-p - 1.0);
    let d3 = |x: f64| -p * (p + 1.0) * (p + 2.0) * x.powf(-p - 3.0);
    let d5 = |x: f64| -p * (p + 1.0) * (p + 2.0) * (p + 3.0) * (p + 4.0) * x.powf(-p - 5.0);
    head + integral + 0.5 * (f(a) + f(b)) + (d1(b) - d1(a)) / 12.0 - (d3(b) - d3(a)) / 720.0
        + (d5(b) - d5(a)) / 30240.0
}

/// Precomputed step sizes with cumulative `log(1 - a(k))`.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    a: Vec<f64>,
    log_prefix: Vec<f64>,
    start: usize,
    horizon: usize,
}

impl ScheduleTable {
    pub fn a(&self, n: usize) -> f64 {
        self.a[n]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `chi(n, m)` for `n <= horizon`.
    pub fn chi(&self, n: usize, m: usize) -> f64 {
        if n < m {
            return 1.0;
        }
        assert!(n <= self.horizon, "chi index {n} beyond table horizon {}", self.horizon);
        if m >= self.start {
            (self.log_prefix[n + 1] - self.log_prefix[m]).exp()
        } else {
            (m..=n).map(|k| 1.0 - self.a[k]).product()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn step_values() {
        assert_eq!(StepSchedule::harmonic(1.0).unwrap().a(3), 0.25);
        assert_abs_diff_eq!(StepSchedule::power(1.0, 0.5).unwrap().a(99), 0.1, epsilon = 1e-15);
        let t = StepSchedule::table(vec![0.9, 0.8], 1.0, 1.0).unwrap();
        assert_eq!(t.a(1), 0.8);
        assert_eq!(t.a(3), 0.25);
    }

    #[test]
    fn harmonic_half_certifies_from_zero() {
        // a(0) = 0.5 < 1, decreasing, and d1 = 0.25: 0.25/n <= 0.5/(n+1) for n >= 1.
        let s = StepSchedule::harmonic(0.5).unwrap();
        assert_eq!(s.d1, 0.25);
        assert_eq!(s.certify_n().unwrap(), 0);
    }

    #[test]
    fn power_two_over_n_certifies_at_two() {
        assert_eq!(StepSchedule::power(2.0, 1.0).unwrap().certify_n().unwrap(), 2);
        assert_eq!(StepSchedule::harmonic(1.0).unwrap().certify_n().unwrap(), 1);
    }

    #[test]
    fn large_d1_pushes_certificate_out() {
        // d1/n <= b/(n+1) iff n >= d1/(b-d1) = 9.
        let s = StepSchedule::harmonic(1.0).unwrap().with_d1(0.9).unwrap();
        assert_eq!(s.certify_n().unwrap(), 9);
        let s = StepSchedule::harmonic(1.0).unwrap().with_d1(1.0).unwrap();
        assert!(matches!(s.certify_n(), Err(Error::NoCertificate { .. })));
    }

    #[test]
    fn table_certificates() {
        let t = StepSchedule::table(vec![5.0, 0.9, 0.5], 1.0, 1.0).unwrap();
        // Only a(0) = 5 breaks the conditions.
        assert_eq!(t.certify_n().unwrap(), 1);
        let stuck = StepSchedule::table(vec![5.0; 100], 1.0, 1.0).unwrap();
        assert!(matches!(
            stuck.certify_n_within(50),
            Err(Error::NoCertificate { horizon: 50 })
        ));
        assert_eq!(stuck.certify_n().unwrap(), 100);
    }

    #[test]
    fn b_sum_examples() {
        let s = StepSchedule::harmonic(1.0).unwrap();
        assert_abs_diff_eq!(s.b_sum(2, 4).unwrap(), 47.0 / 60.0, epsilon = 1e-15);
        assert_eq!(s.b_sum(7, 7).unwrap(), s.a(7));
        assert!(matches!(s.b_sum(5, 4), Err(Error::BadRange(_))));
    }

    #[test]
    fn b_sum_long_ranges_match_direct_summation() {
        for s in [
            StepSchedule::harmonic(0.7).unwrap(),
            StepSchedule::power(1.3, 0.6).unwrap(),
            StepSchedule::power(2.0, 0.999).unwrap(),
            StepSchedule::table(vec![0.4; 10], 0.8, 0.75).unwrap(),
        ] {
            for (k, n) in [(0usize, 50_000usize), (3, 12_345), (100, 200_000)] {
                let direct: f64 = (k..=n).map(|m| s.a(m)).sum();
                let fast = s.b_sum(k, n).unwrap();
                assert!((fast - direct).abs() <= 1e-11 * direct, "{s:?} {k} {n}: {fast} vs {direct}");
            }
        }
    }

    #[test]
    fn beta_examples() {
        let s = StepSchedule::harmonic(1.0).unwrap().with_d1(0.5).unwrap();
        assert_abs_diff_eq!(s.beta(10, 100).unwrap(), 0.031_622_776_601_683_79, epsilon = 1e-15);
        let eq = StepSchedule::power(1.0, 0.5).unwrap().with_d1(0.5).unwrap();
        assert_abs_diff_eq!(eq.beta(7, 64).unwrap(), 0.125, epsilon = 1e-15);
        let big = StepSchedule::harmonic(4.0).unwrap().with_d1(2.0).unwrap();
        assert_abs_diff_eq!(big.beta(3, 100).unwrap(), 0.01, epsilon = 1e-15);
        assert!(s.beta(0, 3).is_err());
        assert!(s.beta(4, 3).is_err());
    }

    #[test]
    fn chi_and_psi_examples() {
        let c = StepSchedule::table(vec![0.5; 10], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(c.chi(3, 2), 0.25, epsilon = 1e-15);
        assert_eq!(c.chi(1, 2), 1.0);
        assert_abs_diff_eq!(c.psi(0.5, 2, 0), 0.5625, epsilon = 1e-15);
        assert_eq!(c.psi(0.5, 4, 4), 1.0);
        assert_abs_diff_eq!(c.psi(1.0 - 1e-12, 5, 0), 1.0, epsilon = 1e-10);
        // A unit step zeroes the product.
        let h = StepSchedule::harmonic(1.0).unwrap();
        assert_eq!(h.chi(5, 0), 0.0);
    }

    #[test]
    fn table_chi_matches_direct() {
        let s = StepSchedule::harmonic(1.0).unwrap();
        let t = s.precompute(500);
        for (n, m) in [(500, 0), (500, 1), (300, 17), (10, 11), (42, 42)] {
            assert_abs_diff_eq!(t.chi(n, m), s.chi(n, m), epsilon = 1e-13);
        }
    }

    #[test]
    fn descriptors() {
        let s = StepSchedule::from_descriptor("rule=harmonic b=1.0", None).unwrap();
        assert_eq!(s, StepSchedule::harmonic(1.0).unwrap());
        let s = StepSchedule::from_descriptor("rule=power d3=1.0 d2=0.6", None).unwrap();
        assert_eq!(s.d2, 0.6);
        let s = StepSchedule::from_descriptor("rule=table values=0.5,0.4 d3=2 d2=1 d1=0.3", None)
            .unwrap();
        assert_eq!(s.a(1), 0.4);
        assert_eq!(s.d1, 0.3);
        assert!(StepSchedule::from_descriptor("rule=harmonic", None).is_err());
        assert!(StepSchedule::from_descriptor("rule=cosine b=1", None).is_err());
        assert!(StepSchedule::from_descriptor("rule=power d3=1 d2=1.5", None).is_err());
        assert!(StepSchedule::from_descriptor("rule=harmonic b=1 q=2", None).is_err());
    }

    #[test]
    fn table_file_descriptor() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("steps.txt"), "0.9 0.5\n0.3\n").unwrap();
        let s = StepSchedule::from_descriptor("rule=table file=steps.txt", Some(dir.path())).unwrap();
        assert_eq!(s.a(2), 0.3);
        assert_eq!(s.a(3), 0.25);
    }
}

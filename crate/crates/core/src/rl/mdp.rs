use std::fmt::Write as _;

use crate::{Error, Result};

/// Tolerance on `sum_j p(j | i, u) = 1`.
pub const MDP_ROW_TOL: f64 = 1e-12;

/// A finite controlled chain with running costs `k(i, u)` and discount `gamma`.
///
/// Transitions are stored flat: `p[(i * r + u) * s + j] = p(j | i, u)`.
/// State-action pairs are flattened row-major, `(i, u) -> i * r + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    s: usize,
    r: usize,
    p: Vec<f64>,
    k: Vec<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(s: usize, r: usize, p: Vec<f64>, k: Vec<f64>, gamma: f64) -> Result<Self> {
        if s == 0 || r == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state and action".into()));
        }
        if p.len() != s * r * s || k.len() != s * r {
            return Err(Error::Shape(format!(
                "expected {} transition entries and {} costs, got {} and {}",
                s * r * s,
                s * r,
                p.len(),
                k.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount must lie in [0,1), got {gamma}")));
        }
        for (iu, row) in p.chunks(s).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > MDP_ROW_TOL {
                return Err(Error::NotStochastic { row: iu, sum });
            }
        }
        if let Some(bad) = k.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "costs must be finite and nonnegative; k({}, {}) = {}",
                bad / r,
                bad % r,
                k[bad]
            )));
        }
        let mdp = Mdp { s, r, p, k, gamma };
        mdp.check_irreducible()?;
        Ok(mdp)
    }

    /// Parses `s r gamma` followed by `s*r` lines `i u k(i,u) p(0|i,u) .. p(s-1|i,u)`
    /// with 0-based indices. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::Parse("empty MDP file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(Error::Parse(format!("line {hline}: header must be `s r gamma`")));
        }
        let num = |tok: &str, line: usize| -> Result<f64> {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: `{tok}` is not a number")))
        };
        let idx = |tok: &str, line: usize| -> Result<usize> {
            tok.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {line}: `{tok}` is not an index")))
        };
        let (s, r, gamma) = (idx(h[0], hline)?, idx(h[1], hline)?, num(h[2], hline)?);
        let mut p = vec![f64::NAN; s * r * s];
        let mut k = vec![f64::NAN; s * r];
        let mut seen = vec![false; s * r];
        for (line, body) in lines {
            let t: Vec<&str> = body.split_whitespace().collect();
            if t.len() != 3 + s {
                return Err(Error::Parse(format!(
                    "line {line}: expected {} fields, found {}",
                    3 + s,
                    t.len()
                )));
            }
            let (i, u) = (idx(t[0], line)?, idx(t[1], line)?);
            if i >= s || u >= r {
                return Err(Error::Parse(format!("line {line}: pair ({i}, {u}) out of range")));
            }
            let iu = i * r + u;
            if seen[iu] {
                return Err(Error::Parse(format!("line {line}: pair ({i}, {u}) repeated")));
            }
            seen[iu] = true;
            k[iu] = num(t[2], line)?;
            for j in 0..s {
                p[iu * s + j] = num(t[3 + j], line)?;
            }
        }
        if let Some(missing) = seen.iter().position(|v| !v) {
            return Err(Error::Parse(format!(
                "pair ({}, {}) has no line",
                missing / r,
                missing % r
            )));
        }
        Self::new(s, r, p, k, gamma)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.s, self.r, self.gamma);
        for i in 0..self.s {
            for u in 0..self.r {
                let _ = write!(out, "{i} {u} {}", self.k(i, u));
                for j in 0..self.s {
                    let _ = write!(out, " {}", self.p(j, i, u));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.s
    }

    pub fn n_actions(&self) -> usize {
        self.r
    }

    pub fn n_pairs(&self) -> usize {
        self.s * self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `p(j | i, u)`.
    pub fn p(&self, j: usize, i: usize, u: usize) -> f64 {
        self.p[(i * self.r + u) * self.s + j]
    }

    /// `p(. | i, u)` for the flat pair index.
    pub fn p_row(&self, iu: usize) -> &[f64] {
        &self.p[iu * self.s..(iu + 1) * self.s]
    }

    pub fn k(&self, i: usize, u: usize) -> f64 {
        self.k[i * self.r + u]
    }

    pub fn costs(&self) -> &[f64] {
        &self.k
    }

    pub fn k_sup(&self) -> f64 {
        self.k.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// `||k||_inf / (1 - gamma)`, the invariant sup-norm radius of the iterates.
    pub fn q_radius(&self) -> f64 {
        self.k_sup() / (1.0 - self.gamma)
    }

    /// `min_a Q(j, a)` for each state `j`.
    pub fn state_minima(&self, q: &[f64]) -> Vec<f64> {
        q.chunks(self.r)
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// `sum_j p(j | iu) m(j)`.
    pub fn expect(&self, iu: usize, m: &[f64]) -> f64 {
        self.p_row(iu).iter().zip(m).map(|(p, v)| p * v).sum()
    }

    /// Bellman operator `g(Q)(i,u) = k(i,u) + gamma sum_j p(j|i,u) min_a Q(j,a)`.
    pub fn bellman(&self, q: &[f64]) -> Vec<f64> {
        let m = self.state_minima(q);
        (0..self.n_pairs())
            .map(|iu| self.k[iu] + self.gamma * self.expect(iu, &m))
            .collect()
    }

    /// `||g(Q) - Q||_inf`.
    pub fn bellman_residual(&self, q: &[f64]) -> f64 {
        self.bellman(q)
            .iter()
            .zip(q)
            .fold(0.0, |a, (g, v)| a.max((g - v).abs()))
    }

    /// The pair graph `(i,u) -> (j,u')` whenever `p(j|i,u) > 0` must be
    /// strongly connected. Every softmax policy has full support, so this one
    /// check covers all of them.
    fn check_irreducible(&self) -> Result<()> {
        let n = self.n_pairs();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(a) = stack.pop() {
                for b in 0..n {
                    let edge = if forward {
                        self.p_row(a)[b / self.r] > 0.0
                    } else {
                        self.p_row(b)[a / self.r] > 0.0
                    };
                    if edge && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen
        };
        let (fwd, bwd) = (reach(true), reach(false));
        match (0..n).find(|&b| !(fwd[b] && bwd[b])) {
            Some(b) => Err(Error::NotIrreducible { unreachable: b }),
            None => Ok(()),
        }
    }
}

/// Iterates the Bellman operator from zero until the sup-norm residual is
/// at most `tol`.
pub fn q_value_iteration(mdp: &Mdp, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut q = vec![0.0; mdp.n_pairs()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = mdp.bellman(&q);
        residual = next.iter().zip(&q).fold(0.0, |a, (x, y)| a.max((x - y).abs()));
        q = next;
        // The residual of the new iterate is at most gamma times the step.
        if mdp.gamma * residual <= tol {
            let r = mdp.bellman_residual(&q);
            if r <= tol {
                return Ok(q);
            }
        }
    }
    Err(Error::NoConvergence { max_iter, residual })
}

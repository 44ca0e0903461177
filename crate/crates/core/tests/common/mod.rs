//! Generators shared by the integration tests.
#![allow(dead_code)]

use markov_sa::rl::Mdp;
use markov_sa::FiniteChain;
use rand::Rng;

/// Row-stochastic `n x n` matrix with a Hamiltonian cycle in its support
/// (so it is irreducible) and roughly a third of the other entries zeroed.
pub fn random_chain_rows<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < 0.35 { 0.0 } else { rng.random::<f64>() })
                .collect();
            row[(i + 1) % n] += 0.05 + rng.random::<f64>();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

pub fn random_chain<R: Rng>(n: usize, rng: &mut R) -> FiniteChain {
    FiniteChain::from_rows(&random_chain_rows(n, rng)).expect("cycle support is irreducible")
}

/// Random MDP with full-support transitions and costs in `[0, 3)`.
pub fn random_mdp<R: Rng>(s: usize, r: usize, gamma: f64, rng: &mut R) -> Mdp {
    let mut p = Vec::with_capacity(s * r * s);
    for _ in 0..s * r {
        let row: Vec<f64> = (0..s).map(|_| 0.05 + rng.random::<f64>()).collect();
        let t: f64 = row.iter().sum();
        p.extend(row.iter().map(|v| v / t));
    }
    let k = (0..s * r).map(|_| 3.0 * rng.random::<f64>()).collect();
    Mdp::new(s, r, p, k, gamma).expect("valid random MDP")
}

/// Max-norm residual of `V(i) - f(i) + pi.f - sum_j p(j|i) V(j)` computed
/// directly from the matrix, independently of the library's own residual.
pub fn poisson_residual_oracle(rows: &[Vec<f64>], f: &[Vec<f64>], v: &[Vec<f64>], pi: &[f64]) -> f64 {
    let n = rows.len();
    let d = f[0].len();
    let mut worst = 0.0f64;
    for l in 0..d {
        let mean: f64 = (0..n).map(|j| pi[j] * f[j][l]).sum();
        for i in 0..n {
            let pv: f64 = (0..n).map(|j| rows[i][j] * v[j][l]).sum();
            worst = worst.max((v[i][l] - f[i][l] + mean - pv).abs());
        }
    }
    worst
}

/// Stationary distribution by power iteration on the lazy chain `(I + P)/2`.
pub fn stationary_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += 0.5 * pi[i] * (rows[i][j] + if i == j { 1.0 } else { 0.0 });
            }
        }
        let gap: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if gap < 1e-15 {
            break;
        }
    }
    pi
}

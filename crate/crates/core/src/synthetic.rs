//! A family of synthetic contractive problems with state-dependent Markov noise.
//!
//! `F(x, i) = x* + alpha U_i (x - x*)` where `U_0 = I`, `U_1 = -I` and `U_2`
//! reverses the coordinates; each `U_i` has norm one under the supported
//! norms, so the averaged map contracts by `alpha` for every stationary
//! distribution. The 3-state kernel interpolates between two fixed chains with
//! weight `w(x) = (1 + coupling * tanh(mean(x))) / 2`, and the martingale
//! noise is componentwise uniform on `[-sigma, sigma]`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SaProblem;
use crate::markov::{FiniteChain, ParamChain};
use crate::{Error, Norm, Result, Tagged};

const CHAIN_A: [[f64; 3]; 3] = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]];
const CHAIN_B: [[f64; 3]; 3] = [[0.1, 0.6, 0.3], [0.4, 0.1, 0.5], [0.6, 0.3, 0.1]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alpha: f64,
    pub x_star: Vec<f64>,
    pub sigma: f64,
    /// Strength of the kernel's dependence on `x`, in `[0, 1]`.
    pub coupling: f64,
    pub norm: Norm,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            alpha: 0.6,
            x_star: vec![1.0, -0.5],
            sigma: 0.5,
            coupling: 1.0,
            norm: Norm::Sup,
        }
    }
}

fn weight(coupling: f64, x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    0.5 * (1.0 + coupling * mean.tanh())
}

fn mixed(w: f64) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| (1.0 - w) * CHAIN_A[i][j] + w * CHAIN_B[i][j])
}

impl SyntheticSpec {
    pub fn build(&self) -> Result<SaProblem> {
        let dim = self.x_star.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("x* must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::InvalidArgument(format!(
                "coupling must lie in [0,1], got {}",
                self.coupling
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        let coupling = self.coupling;
        let chain = if coupling == 0.0 {
            ParamChain::constant(dim, FiniteChain::new(mixed(0.5))?)
        } else {
            // |tanh(a) - tanh(b)| <= |a - b| and |mean(x - z)| <= ||x - z|| for
            // every supported norm.
            let row_gap = (0..3)
                .map(|i| (0..3).map(|j| (CHAIN_A[i][j] - CHAIN_B[i][j]).abs()).sum::<f64>())
                .fold(0.0, f64::max);
            ParamChain::from_rows(dim, 3, move |x, i, out| {
                let w = weight(coupling, x);
                for j in 0..3 {
                    out[j] = (1.0 - w) * CHAIN_A[i][j] + w * CHAIN_B[i][j];
                }
            })
            .with_lipschitz(Some(Tagged::derived(0.5 * coupling * row_gap)), None)
        };
        let alpha = self.alpha;
        let x_star = self.x_star.clone();
        let xs = x_star.clone();
        let map = move |x: &[f64], i: usize, out: &mut [f64]| {
            let d = x.len();
            for l in 0..d {
                let src = if i == 2 { d - 1 - l } else { l };
                let sign = if i == 1 { -1.0 } else { 1.0 };
                out[l] = xs[l] + alpha * sign * (x[src] - xs[src]);
            }
        };
        let k = (1.0 + alpha) * self.norm.of(&x_star) + self.sigma * self.norm.kappa(dim);
        let sigma = self.sigma;
        let mut problem = SaProblem::new(dim, chain, map, Tagged::declared(alpha), Tagged::derived(k))?
            .with_x_star(x_star)?
            .with_l3(Tagged::derived(alpha))
            .with_norm(self.norm)
            .with_name("synthetic");
        if sigma > 0.0 {
            problem = problem.with_noise(
                move |_, _, _, rng, out| {
                    for o in out.iter_mut() {
                        *o = sigma * (2.0 * rng.random::<f64>() - 1.0);
                    }
                },
                Tagged::derived(sigma),
            );
        }
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::check_problem;
    use crate::markov::estimate_kernel_lipschitz;

    #[test]
    fn assumptions_hold_under_every_norm() {
        for norm in [Norm::Sup, Norm::Euclidean, Norm::One] {
            let spec = SyntheticSpec {
                norm,
                x_star: vec![0.5, -1.0, 2.0],
                ..Default::default()
            };
            let p = spec.build().unwrap();
            let rep = check_problem(&p, 400, 4.0, 3).unwrap();
            assert!(rep.passed(), "{norm}: {rep:?}");
            assert!(rep.contraction_ratio() <= 0.6 + 1e-12);
        }
    }

    #[test]
    fn declared_kernel_lipschitz_dominates_estimate() {
        let p = SyntheticSpec::default().build().unwrap();
        let (l1, _) = estimate_kernel_lipschitz(&p.chain, 3.0, 400, 1, Norm::Sup).unwrap();
        assert!(l1.value <= p.chain.l1.unwrap().value + 1e-9);
        assert!(l1.value > 0.0);
    }

    #[test]
    fn zero_coupling_gives_constant_kernel() {
        let p = SyntheticSpec {
            coupling: 0.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        assert!(p.chain.is_constant());
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec { coupling: 2.0, ..Default::default() }.build().is_err());
        assert!(SyntheticSpec { x_star: vec![], ..Default::default() }.build().is_err());
        assert!(SyntheticSpec { alpha: 1.0, ..Default::default() }.build().is_err());
    }
}

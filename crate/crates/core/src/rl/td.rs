use nalgebra::{DMatrix, DVector};

use crate::engine::SaProblem;
use crate::markov::{FiniteChain, ParamChain};
use crate::{Error, Norm, Result, Tagged};

/// Residual allowed in `H(Phi r*) = Phi r*`.
pub const TD_FIXED_POINT_TOL: f64 = 1e-9;

/// TD(0) policy evaluation with linear features on an uncontrolled chain.
#[derive(Debug, Clone)]
pub struct TdInstance {
    pub chain: FiniteChain,
    pub k: Vec<f64>,
    pub gamma: f64,
    /// `s x M` features; row `i` is `phi(i)`.
    pub phi: DMatrix<f64>,
    /// Stationary distribution, the diagonal of `D`.
    pub d: Vec<f64>,
    pub lambda_m: f64,
    pub alpha: Tagged,
    pub r_star: Vec<f64>,
    /// Factor the features were multiplied by (1 when untouched).
    pub scale: f64,
}

/// `sqrt(2(1-gamma)) / (1+gamma)`, the admissible bound on `lambda_M`.
pub fn admissible_bound(gamma: f64) -> f64 {
    (2.0 * (1.0 - gamma)).sqrt() / (1.0 + gamma)
}

/// Largest singular value of `Psi = Phi^T sqrt(D)`.
pub fn lambda_m(phi: &DMatrix<f64>, d: &[f64]) -> f64 {
    let mut psi = phi.transpose();
    for (j, dj) in d.iter().enumerate() {
        psi.column_mut(j).scale_mut(dj.sqrt());
    }
    psi.singular_values().max()
}

fn gram(phi: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let dphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| d[i] * phi[(i, j)]);
    phi.transpose() * dphi
}

impl TdInstance {
    /// Fails with `Inadmissible` when `lambda_M` is not below
    /// [`admissible_bound`].
    pub fn new(chain: FiniteChain, k: Vec<f64>, gamma: f64, phi: DMatrix<f64>) -> Result<Self> {
        Self::build(chain, k, gamma, phi, false)
    }

    /// As [`TdInstance::new`], but inadmissible features are multiplied by
    /// `0.99 sqrt(2(1-gamma)) / ((1+gamma) lambda_M)`. The value function
    /// `Phi r*` is unchanged; `r*` shrinks by the inverse factor.
    pub fn new_rescaled(chain: FiniteChain, k: Vec<f64>, gamma: f64, phi: DMatrix<f64>) -> Result<Self> {
        Self::build(chain, k, gamma, phi, true)
    }

    fn build(chain: FiniteChain, k: Vec<f64>, gamma: f64, mut phi: DMatrix<f64>, rescale: bool) -> Result<Self> {
        let s = chain.n_states();
        if k.len() != s || phi.nrows() != s {
            return Err(Error::Shape(format!(
                "chain has {s} states, costs {} entries, features {} rows",
                k.len(),
                phi.nrows()
            )));
        }
        if phi.ncols() == 0 || phi.ncols() > s {
            return Err(Error::Shape(format!("{} features for {s} states", phi.ncols())));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("discount must lie in [0,1), got {gamma}")));
        }
        let d = chain.stationary()?.to_vec();
        let bound = admissible_bound(gamma);
        let mut lm = lambda_m(&phi, &d);
        let mut scale = 1.0;
        if !(lm < bound) {
            if !rescale || lm == 0.0 {
                return Err(Error::Inadmissible(format!(
                    "lambda_M = {lm} is not below sqrt(2(1-gamma))/(1+gamma) = {bound}"
                )));
            }
            scale = 0.99 * bound / lm;
            phi *= scale;
            lm = lambda_m(&phi, &d);
        }
        let lam_min = gram(&phi, &d).symmetric_eigenvalues().min();
        if !(lam_min > 1e-14) {
            return Err(Error::Inadmissible(format!(
                "Phi^T D Phi is singular (smallest eigenvalue {lam_min:e}); features must have full column rank"
            )));
        }
        let a2 = 1.0 - lam_min * (2.0 * (1.0 - gamma) - lm * lm * (1.0 + gamma).powi(2));
        let alpha = a2.sqrt();
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Inadmissible(format!("contraction factor {alpha} outside (0,1)")));
        }
        let mut inst = TdInstance {
            chain,
            k,
            gamma,
            phi,
            d,
            lambda_m: lm,
            alpha: Tagged::derived(alpha),
            r_star: Vec::new(),
            scale,
        };
        inst.r_star = td_fixed_point(&inst)?;
        Ok(inst)
    }

    pub fn n_features(&self) -> usize {
        self.phi.ncols()
    }

    pub fn feature(&self, i: usize) -> Vec<f64> {
        self.phi.row(i).iter().copied().collect()
    }

    /// Induced infinity norm of `Phi` (largest row 1-norm).
    pub fn phi_inf(&self) -> f64 {
        self.phi
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `r*` for the features as supplied, before any rescaling.
    pub fn r_star_unscaled(&self) -> Vec<f64> {
        self.r_star.iter().map(|v| v * self.scale).collect()
    }

    /// `Pi = Phi (Phi^T D Phi)^{-1} Phi^T D`.
    pub fn projection(&self) -> Result<DMatrix<f64>> {
        let g = gram(&self.phi, &self.d)
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("Phi^T D Phi".into()))?;
        let phit_d = DMatrix::from_fn(self.phi.ncols(), self.phi.nrows(), |a, i| self.phi[(i, a)] * self.d[i]);
        Ok(&self.phi * g * phit_d)
    }

    /// `H(v) = Pi (k + gamma P v)`.
    pub fn bellman_projected(&self, v: &[f64]) -> Result<Vec<f64>> {
        let p = self.chain.matrix();
        let target = DVector::from_vec(self.k.clone()) + self.gamma * p * DVector::from_column_slice(v);
        Ok((self.projection()? * target).iter().copied().collect())
    }

    /// `||H(Phi r) - Phi r||_inf`.
    pub fn fixed_point_residual(&self, r: &[f64]) -> Result<f64> {
        let v: Vec<f64> = (&self.phi * DVector::from_column_slice(r)).iter().copied().collect();
        let h = self.bellman_projected(&v)?;
        Ok(h.iter().zip(&v).fold(0.0, |a, (x, y)| a.max((x - y).abs())))
    }
}

/// Solves `(Phi^T D Phi - gamma Phi^T D P Phi) r = Phi^T D k` and confirms
/// `H(Phi r) = Phi r`.
pub fn td_fixed_point(inst: &TdInstance) -> Result<Vec<f64>> {
    let (phi, d) = (&inst.phi, &inst.d);
    let phit_d = DMatrix::from_fn(phi.ncols(), phi.nrows(), |a, i| phi[(i, a)] * d[i]);
    let a = &phit_d * phi - inst.gamma * &phit_d * inst.chain.matrix() * phi;
    let b = &phit_d * DVector::from_column_slice(&inst.k);
    let r = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("TD fixed-point system".into()))?;
    let r: Vec<f64> = r.iter().copied().collect();
    let res = inst.fixed_point_residual(&r)?;
    if !(res <= TD_FIXED_POINT_TOL) {
        return Err(Error::SingularSystem(format!("fixed-point residual {res:e}")));
    }
    Ok(r)
}

/// Closed-form contraction factor of the averaged TD map in the Euclidean norm.
pub fn td_contraction_factor(inst: &TdInstance) -> f64 {
    inst.alpha.value
}

/// `r + a phi(y)(k(y) + gamma phi(y')^T r - phi(y)^T r)`.
pub fn td_step(inst: &TdInstance, r: &[f64], y: usize, y_next: usize, a_n: f64) -> Vec<f64> {
    let dot = |i: usize| inst.phi.row(i).iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    let td_err = inst.k[y] + inst.gamma * dot(y_next) - dot(y);
    r.iter()
        .zip(inst.phi.row(y).iter())
        .map(|(ri, fi)| ri + a_n * fi * td_err)
        .collect()
}

/// The instance in the general form: constant kernel, Euclidean norm,
/// `K0 = 2 gamma ||Phi||_inf^2`, `K = ||k||_inf ||Phi||_inf`, `x* = r*`.
pub fn td_as_sa_problem(inst: &TdInstance) -> Result<SaProblem> {
    let m = inst.n_features();
    let s = inst.chain.n_states();
    let p = inst.chain.matrix().clone();
    // Per state: A_i = I - phi_i phi_i^T + gamma phi_i (sum_j p_ij phi_j)^T, b_i = phi_i k_i.
    let mut a_mats = Vec::with_capacity(s);
    let mut b_vecs = Vec::with_capacity(s);
    for i in 0..s {
        let phi_i = inst.phi.row(i).transpose();
        let next_mean = (p.row(i) * &inst.phi).transpose();
        let a = DMatrix::identity(m, m) - &phi_i * phi_i.transpose() + inst.gamma * &phi_i * next_mean.transpose();
        b_vecs.push(phi_i * inst.k[i]);
        a_mats.push(a);
    }
    let l3 = a_mats.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let map = move |r: &[f64], i: usize, out: &mut [f64]| {
        let v = &a_mats[i] * DVector::from_column_slice(r) + &b_vecs[i];
        out.copy_from_slice(v.as_slice());
    };
    let phi = inst.phi.clone();
    let gamma = inst.gamma;
    let noise = move |r: &[f64], y: usize, y_next: usize, _: &mut dyn rand::RngCore, out: &mut [f64]| {
        let dot = |row: usize| phi.row(row).iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
        let mean: f64 = (0..p.nrows()).map(|j| p[(y, j)] * dot(j)).sum();
        let c = gamma * (dot(y_next) - mean);
        for (o, f) in out.iter_mut().zip(phi.row(y).iter()) {
            *o = c * f;
        }
    };
    let phi_inf = inst.phi_inf();
    let k_sup = inst.k.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(SaProblem::new(m, ParamChain::constant(m, inst.chain.clone()), map, inst.alpha, Tagged::derived(k_sup * phi_inf))?
        .with_noise(noise, Tagged::derived(2.0 * inst.gamma * phi_inf * phi_inf))
        .with_x_star(inst.r_star.clone())?
        .with_l3(Tagged::derived(l3))
        .with_norm(Norm::Euclidean)
        .with_name("td0"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::check_problem;
    use approx::assert_abs_diff_eq;

    fn two_state() -> TdInstance {
        let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        TdInstance::new(chain, vec![1.0, 1.0], 0.5, DMatrix::from_row_slice(2, 1, &[0.5, 0.5])).unwrap()
    }

    #[test]
    fn worked_two_state_instance() {
        let t = two_state();
        assert_abs_diff_eq!(t.r_star[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.lambda_m, 0.5, epsilon = 1e-12);
        // 1 - 0.25 (1 - 0.25 * 2.25) = 0.890625.
        assert_abs_diff_eq!(td_contraction_factor(&t), 0.890625f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(admissible_bound(0.5), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_costs_give_zero_weights() {
        let chain = FiniteChain::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let t = TdInstance::new(chain, vec![0.0, 0.0], 0.5, DMatrix::from_row_slice(2, 1, &[0.3, 0.1])).unwrap();
        assert_eq!(t.r_star, vec![0.0]);
    }

    #[test]
    fn inadmissible_features_and_rescaling() {
        let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let phi = DMatrix::from_row_slice(2, 1, &[2.0, 1.0]);
        assert!(matches!(
            TdInstance::new(chain.clone(), vec![1.0, 2.0], 0.5, phi.clone()),
            Err(Error::Inadmissible(_))
        ));
        let t = TdInstance::new_rescaled(chain.clone(), vec![1.0, 2.0], 0.5, phi.clone()).unwrap();
        assert!(t.scale < 1.0);
        assert_abs_diff_eq!(t.lambda_m, 0.99 * admissible_bound(0.5), epsilon = 1e-12);
        // Same value function before and after scaling.
        let v_scaled = &t.phi * DVector::from_vec(t.r_star.clone());
        let v_orig = &phi * DVector::from_vec(t.r_star_unscaled());
        assert!((v_scaled - v_orig).amax() < 1e-12);
    }

    #[test]
    fn singular_values_scale_linearly() {
        // Orthonormal under D = diag(0.5, 0.5): columns sqrt(2) e_i.
        let d = [0.5, 0.5];
        let base = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, 0.0, 2f64.sqrt()]);
        assert_abs_diff_eq!(lambda_m(&base, &d), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lambda_m(&(base * 0.3), &d), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn step_examples() {
        let t = two_state();
        assert_eq!(td_step(&t, &[1.5], 0, 1, 0.0), vec![1.5]);
        let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let z = TdInstance::new(chain, vec![1.0, 1.0], 0.5, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.2, 0.1]));
        // Rank-deficient features are rejected before any step.
        assert!(z.is_err());
        let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let z = TdInstance::new(chain, vec![1.0, 1.0], 0.5, DMatrix::from_row_slice(2, 1, &[0.0, 0.4])).unwrap();
        assert_eq!(td_step(&z, &[0.7], 0, 1, 0.5), vec![0.7]);
    }

    #[test]
    fn mean_drift_vanishes_at_r_star() {
        let chain = FiniteChain::from_rows(&[vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2], vec![0.7, 0.1, 0.2]]).unwrap();
        let phi = DMatrix::from_row_slice(3, 2, &[0.3, 0.1, 0.0, 0.4, 0.2, 0.2]);
        let t = TdInstance::new(chain, vec![1.0, 0.0, 2.0], 0.6, phi).unwrap();
        let mut drift = vec![0.0; 2];
        for y in 0..3 {
            for yn in 0..3 {
                let w = t.d[y] * t.chain.prob(y, yn);
                let next = td_step(&t, &t.r_star, y, yn, 1.0);
                for l in 0..2 {
                    drift[l] += w * (next[l] - t.r_star[l]);
                }
            }
        }
        assert!(drift.iter().all(|v| v.abs() < 1e-12), "{drift:?}");
        assert!(t.fixed_point_residual(&t.r_star).unwrap() <= 1e-12);
    }

    #[test]
    fn sa_form_matches_assumptions() {
        let t = two_state();
        let p = td_as_sa_problem(&t).unwrap();
        assert_eq!(p.k0.value, 2.0 * 0.5 * 0.25);
        assert_eq!(p.k.value, 0.5);
        let rep = check_problem(&p, 2000, 10.0, 0).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.contraction_ratio() <= t.alpha.value);
    }

    #[test]
    fn affine_trajectory_matches_closed_form() {
        // Constant features and costs: r_{n+1} = r + a phi (k + (gamma - 1) phi r).
        let t = two_state();
        let p = td_as_sa_problem(&t).unwrap();
        let s = crate::StepSchedule::harmonic(1.0).unwrap();
        let traj = crate::engine::simulate(&p, &s, &[0.0], 0, 50, 9).unwrap();
        let mut r = 0.0;
        for n in 0..50 {
            r += s.a(n) * 0.5 * (1.0 + (0.5 - 1.0) * 0.5 * r);
            assert_abs_diff_eq!(traj.x(n + 1)[0], r, epsilon = 1e-12);
        }
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mdp::{q_value_iteration, Mdp};
use crate::engine::SaProblem;
use crate::markov::{stationary_distribution, FiniteChain, ParamChain};
use crate::{Error, Norm, Provenance, Result, Tagged};

/// Tolerance used for the value-iteration oracle.
pub const Q_STAR_TOL: f64 = 1e-12;

/// Behaviour policy generating the action sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorPolicy {
    /// `Phi_Q(u | i)` proportional to `exp(-Q(i,u) / tau)`.
    Softmax { tau: f64 },
    /// Fixed probabilities `probs[i * r + u]`, independent of `Q`.
    Fixed { probs: Vec<f64> },
}

impl BehaviorPolicy {
    pub fn uniform(mdp: &Mdp) -> Self {
        let r = mdp.n_actions();
        BehaviorPolicy::Fixed {
            probs: vec![1.0 / r as f64; mdp.n_pairs()],
        }
    }

    fn validate(&self, mdp: &Mdp) -> Result<()> {
        match self {
            BehaviorPolicy::Softmax { tau } if !(*tau > 0.0 && tau.is_finite()) => {
                Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
            }
            BehaviorPolicy::Fixed { probs } => {
                if probs.len() != mdp.n_pairs() {
                    return Err(Error::Shape(format!(
                        "policy has {} entries, expected {}",
                        probs.len(),
                        mdp.n_pairs()
                    )));
                }
                for (i, row) in probs.chunks(mdp.n_actions()).enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|p| !(*p > 0.0)) || (sum - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "policy row {i} must be a positive probability vector"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `Phi_Q(. | i)` written into `out` (length `r`).
    pub fn probs(&self, q: &[f64], i: usize, out: &mut [f64]) {
        let r = out.len();
        match self {
            BehaviorPolicy::Softmax { tau } => {
                let row = &q[i * r..(i + 1) * r];
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let mut z = 0.0;
                for (o, v) in out.iter_mut().zip(row) {
                    *o = (-(v - lo) / tau).exp();
                    z += *o;
                }
                out.iter_mut().for_each(|o| *o /= z);
            }
            BehaviorPolicy::Fixed { probs } => out.copy_from_slice(&probs[i * r..(i + 1) * r]),
        }
    }

    pub fn depends_on_q(&self) -> bool {
        matches!(self, BehaviorPolicy::Softmax { .. })
    }
}

/// Joint kernel of `(X_n, Z_n)`: `p(j | i, u) Phi_Q(u' | j)`.
fn joint_row(mdp: &Mdp, policy: &BehaviorPolicy, q: &[f64], iu: usize, out: &mut [f64]) {
    let r = mdp.n_actions();
    let mut phi = vec![0.0; r];
    for (j, &pj) in mdp.p_row(iu).iter().enumerate() {
        policy.probs(q, j, &mut phi);
        for u in 0..r {
            out[j * r + u] = pj * phi[u];
        }
    }
}

fn joint_chain(mdp: &Mdp, policy: &BehaviorPolicy, q: &[f64]) -> Result<FiniteChain> {
    let n = mdp.n_pairs();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|iu| {
            let mut row = vec![0.0; n];
            joint_row(mdp, policy, q, iu, &mut row);
            row
        })
        .collect();
    FiniteChain::from_rows(&rows)
}

/// Stationary distribution `pi_Q` of the joint state-action chain.
pub fn pair_stationary(mdp: &Mdp, policy: &BehaviorPolicy, q: &[f64]) -> Result<Vec<f64>> {
    stationary_distribution(&joint_chain(mdp, policy, q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PiMinEstimate {
    pub value: Tagged,
    pub points: usize,
    /// Fewer than 100 points were examined.
    pub low_confidence: bool,
}

/// Smallest `min_{i,u} pi_Q(i,u)` over sampled `Q` in `[0, radius]^d`, the
/// region the iterates occupy. Points are the origin, then vertices, then
/// uniform draws. For a policy that ignores `Q` the value is exact.
pub fn estimate_pi_min(
    mdp: &Mdp,
    policy: &BehaviorPolicy,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PiMinEstimate> {
    policy.validate(mdp)?;
    let d = mdp.n_pairs();
    let min_of = |q: &[f64]| -> Result<f64> {
        Ok(pair_stationary(mdp, policy, q)?.into_iter().fold(f64::INFINITY, f64::min))
    };
    if !policy.depends_on_q() {
        return Ok(PiMinEstimate {
            value: Tagged::derived(min_of(&vec![0.0; d])?),
            points: 1,
            low_confidence: false,
        });
    }
    if !(radius >= 0.0) || n_samples == 0 {
        return Err(Error::EmptyDomain { radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; d]];
    if radius > 0.0 {
        points.extend(Norm::Sup.ball_vertices(d, radius, 64.min(n_samples), &mut rng));
        while points.len() < n_samples {
            points.push(Norm::Sup.sample_ball(d, radius, &mut rng));
        }
        points.iter_mut().flatten().for_each(|v| *v = v.abs());
    }
    points.truncate(n_samples);
    let mut best = f64::INFINITY;
    for q in &points {
        best = best.min(min_of(q)?);
    }
    Ok(PiMinEstimate {
        value: Tagged::estimated(best),
        points: points.len(),
        low_confidence: points.len() < 100,
    })
}

/// Asynchronous Q-learning on an MDP under a behaviour policy.
#[derive(Debug, Clone)]
pub struct QLearningInstance {
    pub mdp: Mdp,
    pub policy: BehaviorPolicy,
    pub pi_min: Tagged,
    pub alpha: Tagged,
    pub q_star: Vec<f64>,
}

impl QLearningInstance {
    /// Builds the instance with `pi_min` sampled over the ball of radius
    /// `||k||_inf / (1 - gamma)`. A sampled value only upper-bounds the true
    /// minimum, so `alpha` is then tagged optimistic.
    pub fn new(mdp: Mdp, policy: BehaviorPolicy, n_samples: usize, seed: u64) -> Result<Self> {
        let est = estimate_pi_min(&mdp, &policy, mdp.q_radius(), n_samples, seed)?;
        Self::with_pi_min(mdp, policy, est.value)
    }

    /// Builds the instance from a given (for example declared) `pi_min`.
    pub fn with_pi_min(mdp: Mdp, policy: BehaviorPolicy, pi_min: Tagged) -> Result<Self> {
        policy.validate(&mdp)?;
        if !(pi_min.value > 0.0 && pi_min.value <= 1.0) {
            return Err(Error::InvalidArgument(format!("pi_min must lie in (0,1], got {}", pi_min.value)));
        }
        let a = 1.0 - (1.0 - mdp.gamma()) * pi_min.value;
        let provenance = match pi_min.provenance {
            Provenance::Estimated | Provenance::Optimistic => Provenance::Optimistic,
            p => p,
        };
        let q_star = q_value_iteration(&mdp, Q_STAR_TOL, 1_000_000)?;
        Ok(QLearningInstance {
            mdp,
            policy,
            pi_min,
            alpha: Tagged::new(a, provenance),
            q_star,
        })
    }

    pub fn dim(&self) -> usize {
        self.mdp.n_pairs()
    }

    /// `||k||_inf / (1 - gamma)`.
    pub fn k(&self) -> f64 {
        self.mdp.q_radius()
    }

    /// Kernel Lipschitz constant in sup norm, row-wise 1-norm: softmax moves
    /// each row by at most `||Q - Q'||_inf / tau`.
    pub fn kernel_lipschitz(&self) -> f64 {
        match &self.policy {
            BehaviorPolicy::Softmax { tau } => 1.0 / tau,
            BehaviorPolicy::Fixed { .. } => 0.0,
        }
    }

    /// The alternate `C` stated for softmax Q-learning,
    /// `exp(2(1 + ||Q_N|| + ||k||/(1-alpha)) + c2)`, kept for comparison with
    /// the general form.
    pub fn softmax_tail_constant(&self, q_n_norm: f64, c2: f64) -> f64 {
        (2.0 * (1.0 + q_n_norm + self.mdp.k_sup() / (1.0 - self.alpha.value)) + c2).exp()
    }
}

/// `Q_{n+1}`: only `(i, u)` moves, towards `k(i,u) + gamma min_a Q(j, a)`.
pub fn q_learning_step(inst: &QLearningInstance, q: &[f64], i: usize, u: usize, j: usize, a_n: f64) -> Vec<f64> {
    let mdp = &inst.mdp;
    let r = mdp.n_actions();
    let mut next = q.to_vec();
    let iu = i * r + u;
    let target_min = q[j * r..(j + 1) * r].iter().copied().fold(f64::INFINITY, f64::min);
    next[iu] += a_n * (mdp.k(i, u) + mdp.gamma() * target_min - q[iu]);
    next
}

/// The instance in the general form: `d = s r`, the joint pair chain as
/// Markov noise, sup norm, `K0 = 1`, `K = ||k||_inf/(1-gamma)` and `x* = Q*`.
/// The growth bound on `M` with `K0 = 1` holds on the nonnegative orthant,
/// which the iterates never leave, so the problem is marked nonnegative.
pub fn q_as_sa_problem(inst: &QLearningInstance) -> Result<SaProblem> {
    let mdp = inst.mdp.clone();
    let d = mdp.n_pairs();
    let r = mdp.n_actions();
    let chain = if inst.policy.depends_on_q() {
        let (m, pol) = (mdp.clone(), inst.policy.clone());
        ParamChain::from_rows(d, d, move |q, iu, out| joint_row(&m, &pol, q, iu, out))
            .with_lipschitz(Some(Tagged::derived(inst.kernel_lipschitz())), None)
    } else {
        ParamChain::constant(d, joint_chain(&mdp, &inst.policy, &vec![0.0; d])?)
    };
    let (m1, m2) = (mdp.clone(), mdp.clone());
    let map = move |q: &[f64], iu: usize, out: &mut [f64]| {
        out.copy_from_slice(q);
        let mins = m1.state_minima(q);
        out[iu] = m1.costs()[iu] + m1.gamma() * m1.expect(iu, &mins);
    };
    let noise = move |q: &[f64], iu: usize, next: usize, _: &mut dyn rand::RngCore, out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mins = m2.state_minima(q);
        out[iu] = m2.gamma() * (mins[next / r] - m2.expect(iu, &mins));
    };
    Ok(SaProblem::new(d, chain, map, inst.alpha, Tagged::derived(inst.k()))?
        .with_noise(noise, Tagged::declared(1.0))
        .with_x_star(inst.q_star.clone())?
        .with_l3(Tagged::derived(1.0))
        .with_norm(Norm::Sup)
        .with_nonnegative_domain()
        .with_name("qlearning"))
}

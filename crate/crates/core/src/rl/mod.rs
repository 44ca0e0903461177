//! Asynchronous Q-learning and TD(0) with linear features as instances of
//! the general iteration, with their closed-form contraction factors and
//! fixed-point oracles.

mod mdp;
mod qlearning;
mod td;

pub use mdp::{q_value_iteration, Mdp, MDP_ROW_TOL};
pub use qlearning::{
    estimate_pi_min, pair_stationary, q_as_sa_problem, q_learning_step, BehaviorPolicy,
    PiMinEstimate, QLearningInstance, Q_STAR_TOL,
};
pub use td::{
    admissible_bound, lambda_m, td_as_sa_problem, td_contraction_factor, td_fixed_point,
    td_step, TdInstance, TD_FIXED_POINT_TOL,
};

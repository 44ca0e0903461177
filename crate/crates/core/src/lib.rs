//! Contractive stochastic approximation driven by Markov noise.
//!
//! The crate simulates iterations of the form
//!
//! ```text
//! x_{n+1} = x_n + a(n) (F(x_n, Y_n) - x_n + M_{n+1}(x_n))
//! ```
//!
//! where `Y_n` is a finite Markov chain whose kernel may depend on `x_n`, and
//! computes every constant of the "from `n0` on" concentration bound for such
//! iterations: the exponential envelope, the failure-probability tail, the
//! Poisson-equation extrema that feed it, and the stitching with an external
//! moment bound. Asynchronous Q-learning and TD(0) with linear features are
//! provided as ready-made instances.
//!
//! Modules:
//! - [`markov`]: stationary distributions, Poisson solutions, fundamental matrices.
//! - [`schedule`]: step-size rules and derived products/sums.
//! - [`engine`]: the simulator, auxiliary iteration and noise diagnostics.
//! - [`synthetic`]: a tunable contractive test family.
//! - [`bounds`]: constants, envelopes, tails, calibration of `D`, stitching.
//! - [`rl`]: Q-learning and TD(0) instances.
//! - [`lab`]: config-driven experiment runner behind the `sa-lab` binary.

pub mod bounds;
pub mod engine;
mod error;
pub mod lab;
pub mod markov;
pub mod norm;
pub mod provenance;
pub mod rl;
pub mod schedule;
pub mod synthetic;
pub mod textio;

pub use error::{Error, Result};
pub use markov::{FiniteChain, ParamChain, PoissonSolution};
pub use norm::Norm;
pub use provenance::{Provenance, Tagged};
pub use schedule::StepSchedule;

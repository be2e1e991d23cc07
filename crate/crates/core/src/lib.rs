//! Model-free synthesis of infinite-horizon continuous-time LQR gains.
//!
//! The crate is organised around the data path:
//!
//! * [`lqr`] holds the classical Riccati machinery used as ground truth.
//! * [`dynamics`] simulates plants (linear models and a 6DOF quadcopter) and
//!   turns trajectories into noisy [`dynamics::DataSet`]s.
//! * [`synthesis`] recovers `P = LᵀL`, `S = PB` and `K = R⁻¹Sᵀ` from a data set
//!   alone by solving an equality-constrained least-squares program.
//! * [`qlearning`] evaluates the Q-function / advantage identities that tie the
//!   constraint to integral reinforcement learning.
//! * [`io`] reads and writes the on-disk contracts.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lqr;
pub mod models;
pub mod qlearning;
pub mod synthesis;

pub use error::{Error, Result};
pub use lqr::{CostWeights, GainMatrix, LtiSystem, ValueMatrix};

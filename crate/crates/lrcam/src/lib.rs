//! Least-restrictive collision avoidance for multi-agent planar vehicles.
//!
//! The crate combines a Hamilton-Jacobi level-set solver that produces a
//! pairwise safety value function, a multi-agent episodic simulator with
//! goal-reaching default controllers, and two supervisors that interrupt the
//! default controller only when collision is otherwise inevitable: a classical
//! value-threshold baseline and a learned LSTM-VAE + PPO policy trained with a
//! reward shaped by the safety value function.

pub mod config;
pub mod dynamics;
pub mod env;
pub mod exec;
pub mod learner;
pub mod nn;
pub mod plot;
pub mod reachability;
pub mod reward;
pub mod supervisor;

pub use dynamics::{AgentState, ControlInput, DynamicsParams, Integrator, RelativeState};
pub use reachability::{GameParams, Grid3D, ValueFunction};

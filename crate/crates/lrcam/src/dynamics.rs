//! Agent kinematics and relative-coordinate transforms.
//!
//! Agents are planar unicycles: `ẋ = v cosθ, ẏ = v sinθ, θ̇ = ω`. The pairwise
//! relative Dubins model expresses agent j in agent i's body frame; it is
//! shared by the simulator and the reachability solver so both see the same
//! frame convention.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can return exactly two_pi for tiny negative inputs
    if t >= PI {
        t -= two_pi;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub px: f64,
    pub py: f64,
    /// Heading, always normalized to `[-π, π)`.
    pub theta: f64,
}

impl AgentState {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self { px, py, theta: wrap_angle(theta) }
    }

    pub fn planar_distance(&self, other: &AgentState) -> f64 {
        ((self.px - other.px).powi(2) + (self.py - other.py).powi(2)).sqrt()
    }
}

/// Linear and angular velocity command `(v, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// State of agent j expressed in agent i's body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
}

impl RelativeState {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self { px, py, theta: wrap_angle(theta) }
    }

    pub fn planar_norm(&self) -> f64 {
        (self.px * self.px + self.py * self.py).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    pub v_max: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub integrator: Integrator,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        // TurtleBot3 Burger actuation limits.
        Self { v_max: 0.22, omega_max: 2.84, dt: 0.1, integrator: Integrator::Rk4 }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.v_max <= 0.0 || self.omega_max <= 0.0 || self.dt <= 0.0 {
            return Err(DynamicsError::InvalidParams {
                v_max: self.v_max,
                omega_max: self.omega_max,
                dt: self.dt,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("control (v={v}, omega={omega}) exceeds bounds (v_max={v_max}, omega_max={omega_max})")]
    ControlOutOfBounds { v: f64, omega: f64, v_max: f64, omega_max: f64 },
    #[error("invalid dynamics params: v_max={v_max}, omega_max={omega_max}, dt={dt}")]
    InvalidParams { v_max: f64, omega_max: f64, dt: f64 },
}

fn unicycle_deriv(state: &AgentState, u: &ControlInput) -> (f64, f64, f64) {
    (u.v * state.theta.cos(), u.v * state.theta.sin(), u.omega)
}

/// Advance one agent by one `dt` with the configured integrator.
pub fn step_agent(
    state: &AgentState,
    u: &ControlInput,
    params: &DynamicsParams,
) -> Result<AgentState, DynamicsError> {
    let tol = 1e-9;
    if u.v.abs() > params.v_max + tol || u.omega.abs() > params.omega_max + tol {
        return Err(DynamicsError::ControlOutOfBounds {
            v: u.v,
            omega: u.omega,
            v_max: params.v_max,
            omega_max: params.omega_max,
        });
    }
    let dt = params.dt;
    let next = match params.integrator {
        Integrator::Euler => {
            let (dx, dy, dth) = unicycle_deriv(state, u);
            AgentState::new(state.px + dt * dx, state.py + dt * dy, state.theta + dt * dth)
        }
        Integrator::Rk4 => {
            let eval = |s: &AgentState| unicycle_deriv(s, u);
            let k1 = eval(state);
            let mid1 = AgentState::new(
                state.px + 0.5 * dt * k1.0,
                state.py + 0.5 * dt * k1.1,
                state.theta + 0.5 * dt * k1.2,
            );
            let k2 = eval(&mid1);
            let mid2 = AgentState::new(
                state.px + 0.5 * dt * k2.0,
                state.py + 0.5 * dt * k2.1,
                state.theta + 0.5 * dt * k2.2,
            );
            let k3 = eval(&mid2);
            let end = AgentState::new(
                state.px + dt * k3.0,
                state.py + dt * k3.1,
                state.theta + dt * k3.2,
            );
            let k4 = eval(&end);
            AgentState::new(
                state.px + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                state.py + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
                state.theta + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
            )
        }
    };
    Ok(next)
}

/// State of `other` in `ego`'s body frame: the position difference rotated by
/// `-ego.theta`, heading difference normalized.
pub fn relative_state(ego: &AgentState, other: &AgentState) -> RelativeState {
    let dx = other.px - ego.px;
    let dy = other.py - ego.py;
    let (s, c) = ego.theta.sin_cos();
    RelativeState::new(c * dx + s * dy, -s * dx + c * dy, other.theta - ego.theta)
}

/// Right-hand side of the relative Dubins model (both agents at speed `v`):
///
/// ```text
/// ṗx = -v + v cosθ + ωi py
/// ṗy =  v sinθ     - ωi px
/// θ̇  =  ωj - ωi
/// ```
pub fn relative_derivative(x: &RelativeState, omega_i: f64, omega_j: f64, v: f64) -> (f64, f64, f64) {
    (
        -v + v * x.theta.cos() + omega_i * x.py,
        v * x.theta.sin() - omega_i * x.px,
        omega_j - omega_i,
    )
}

//! Pairwise safety value function from Hamilton-Jacobi reachability.
//!
//! The backward reachable set of the relative Dubins game is computed by
//! level-set time stepping on a 3-D grid over the relative state
//! `(px, py, theta)`. The converged value function is queried through
//! trilinear interpolation (periodic in theta) and central-difference
//! gradients, and yields the bang-bang optimal avoidance turn rate.

mod io;
mod solve;

pub use io::{load_value_function, save_value_function, ReachError};
pub use solve::{solve_brs, SolveOptions};

use crate::dynamics::{wrap_angle, RelativeState};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Two-player game parameters: shared forward speed, turn-rate bound, and
/// collision radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameParams {
    pub v: f64,
    pub omega_max: f64,
    pub d: f64,
}

impl Default for GameParams {
    fn default() -> Self {
        Self { v: 0.22, omega_max: 2.84, d: 0.35 }
    }
}

/// Regular 3-D grid over relative state. The theta axis is periodic: node 0
/// sits at `-π` and node `ntheta - 1` is adjacent to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid3D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
}

impl Default for Grid3D {
    fn default() -> Self {
        Self { x_min: -3.0, x_max: 3.0, y_min: -3.0, y_max: 3.0, nx: 61, ny: 61, ntheta: 37 }
    }
}

impl Grid3D {
    pub fn validate(&self) -> Result<(), ReachError> {
        if self.nx < 3 || self.ny < 3 || self.ntheta < 3 {
            return Err(ReachError::BadGrid(format!(
                "need at least 3 nodes per axis, got {}x{}x{}",
                self.nx, self.ny, self.ntheta
            )));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(ReachError::BadGrid("axis bounds must be increasing".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.ntheta as f64
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }

    /// Storage order: x-major, then y, then theta.
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (ix * self.ny + iy) * self.ntheta + it
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let it = idx % self.ntheta;
        let rest = idx / self.ntheta;
        (rest / self.ny, rest % self.ny, it)
    }

    pub fn x_of(&self, ix: usize) -> f64 {
        self.x_min + ix as f64 * self.dx()
    }

    pub fn y_of(&self, iy: usize) -> f64 {
        self.y_min + iy as f64 * self.dy()
    }

    pub fn theta_of(&self, it: usize) -> f64 {
        -PI + it as f64 * self.dtheta()
    }
}

/// Interpolated value query; `clamped` flags an out-of-bounds planar position
/// that was pulled back to the grid edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueQuery {
    pub value: f64,
    pub clamped: bool,
}

/// The safety value function on a grid, plus solve metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub grid: Grid3D,
    pub params: GameParams,
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: u64,
    pub residual: f64,
}

impl ValueFunction {
    /// FNV-1a over grid bounds/counts and game params; identifies a solve
    /// configuration for on-disk caching.
    pub fn params_hash(grid: &Grid3D, params: &GameParams) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in [grid.x_min, grid.x_max, grid.y_min, grid.y_max] {
            eat(&v.to_le_bytes());
        }
        for n in [grid.nx, grid.ny, grid.ntheta] {
            eat(&(n as u64).to_le_bytes());
        }
        for v in [params.v, params.omega_max, params.d] {
            eat(&v.to_le_bytes());
        }
        h
    }

    /// Trilinear interpolation with periodic wraparound on theta; planar
    /// coordinates outside the grid are clamped and flagged.
    pub fn query(&self, x: &RelativeState) -> ValueQuery {
        let g = &self.grid;
        let mut clamped = false;
        let mut clamp = |v: f64, lo: f64, hi: f64| {
            if v < lo {
                clamped = true;
                lo
            } else if v > hi {
                clamped = true;
                hi
            } else {
                v
            }
        };
        let px = clamp(x.px, g.x_min, g.x_max);
        let py = clamp(x.py, g.y_min, g.y_max);
        let th = wrap_angle(x.theta);

        let fx = ((px - g.x_min) / g.dx()).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((py - g.y_min) / g.dy()).clamp(0.0, (g.ny - 1) as f64);
        let ft = (th + PI) / g.dtheta(); // in [0, ntheta)

        let ix = (fx.floor() as usize).min(g.nx - 2);
        let iy = (fy.floor() as usize).min(g.ny - 2);
        let it = (ft.floor() as usize).min(g.ntheta - 1);
        let it1 = (it + 1) % g.ntheta;

        let wx = fx - ix as f64;
        let wy = fy - iy as f64;
        let wt = ft - it as f64;

        let mut acc = 0.0;
        for (dx, wxx) in [(0usize, 1.0 - wx), (1, wx)] {
            for (dy, wyy) in [(0usize, 1.0 - wy), (1, wy)] {
                for (tt, wtt) in [(it, 1.0 - wt), (it1, wt)] {
                    acc += wxx * wyy * wtt * self.values[g.index(ix + dx, iy + dy, tt)];
                }
            }
        }
        ValueQuery { value: acc, clamped }
    }

    pub fn value_at(&self, x: &RelativeState) -> f64 {
        self.query(x).value
    }

    /// Central-difference gradient of the interpolated field, step = one grid
    /// spacing per axis.
    pub fn gradient_at(&self, x: &RelativeState) -> (f64, f64, f64) {
        let g = &self.grid;
        let (hx, hy, ht) = (g.dx(), g.dy(), g.dtheta());
        let qx = (self.value_at(&RelativeState::new(x.px + hx, x.py, x.theta))
            - self.value_at(&RelativeState::new(x.px - hx, x.py, x.theta)))
            / (2.0 * hx);
        let qy = (self.value_at(&RelativeState::new(x.px, x.py + hy, x.theta))
            - self.value_at(&RelativeState::new(x.px, x.py - hy, x.theta)))
            / (2.0 * hy);
        let qt = (self.value_at(&RelativeState::new(x.px, x.py, x.theta + ht))
            - self.value_at(&RelativeState::new(x.px, x.py, x.theta - ht)))
            / (2.0 * ht);
        (qx, qy, qt)
    }

    /// Ego's Hamiltonian-maximizing turn rate at `x`: `ω̄·sign(qx·py − qy·px − qθ)`.
    /// A zero argument breaks toward turning-left (negative ω).
    pub fn optimal_avoidance(&self, x: &RelativeState) -> f64 {
        let (qx, qy, qt) = self.gradient_at(x);
        let a = qx * x.py - qy * x.px - qt;
        if a > 0.0 {
            self.params.omega_max
        } else {
            -self.params.omega_max
        }
    }
}

/// Implicit-surface encoding of the danger zone: `l(x) = √(px²+py²) − d`,
/// negative exactly inside the collision disc.
pub fn signed_distance_target(grid: &Grid3D, d: f64) -> ValueFunction {
    let mut values = vec![0.0; grid.node_count()];
    for idx in 0..values.len() {
        let (ix, iy, _) = grid.coords(idx);
        let (x, y) = (grid.x_of(ix), grid.y_of(iy));
        values[idx] = (x * x + y * y).sqrt() - d;
    }
    ValueFunction {
        grid: grid.clone(),
        params: GameParams { d, ..GameParams::default() },
        values,
        converged: false,
        iterations: 0,
        residual: f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_grid() -> Grid3D {
        Grid3D { x_min: -2.0, x_max: 2.0, y_min: -2.0, y_max: 2.0, nx: 9, ny: 9, ntheta: 8 }
    }

    #[test]
    fn target_examples() {
        let g = Grid3D { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0, nx: 9, ny: 9, ntheta: 4 };
        let vf = signed_distance_target(&g, 0.35);
        // center node
        assert_relative_eq!(vf.values[g.index(4, 4, 0)], -0.35);
        // 3-4-5 triangle with d = 1
        let vf = signed_distance_target(&g, 1.0);
        assert_relative_eq!(vf.values[g.index(7, 8, 2)], 4.0); // (3, 4)
    }

    #[test]
    fn target_boundary_value() {
        let g = Grid3D { x_min: -0.7, x_max: 0.7, y_min: -0.7, y_max: 0.7, nx: 5, ny: 5, ntheta: 4 };
        let vf = signed_distance_target(&g, 0.35);
        // node at (0.35, 0)
        assert_relative_eq!(vf.values[g.index(3, 2, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_identity_at_nodes() {
        let g = small_grid();
        let vf = signed_distance_target(&g, 0.35);
        for &(ix, iy, it) in &[(0usize, 0usize, 0usize), (4, 3, 5), (8, 8, 7)] {
            let x = RelativeState::new(g.x_of(ix), g.y_of(iy), g.theta_of(it));
            assert_relative_eq!(vf.value_at(&x), vf.values[g.index(ix, iy, it)], epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_midpoint_mean() {
        let g = small_grid();
        let mut vf = signed_distance_target(&g, 0.35);
        // make values distinguishable along theta
        for idx in 0..vf.values.len() {
            let (ix, iy, it) = g.coords(idx);
            vf.values[idx] = ix as f64 + 10.0 * iy as f64 + 100.0 * it as f64;
        }
        let a = vf.values[g.index(3, 3, 2)];
        let b = vf.values[g.index(4, 3, 2)];
        let mid = RelativeState::new((g.x_of(3) + g.x_of(4)) / 2.0, g.y_of(3), g.theta_of(2));
        assert_relative_eq!(vf.value_at(&mid), (a + b) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn theta_periodicity() {
        let g = small_grid();
        let mut vf = signed_distance_target(&g, 0.35);
        for idx in 0..vf.values.len() {
            let (_, _, it) = g.coords(idx);
            vf.values[idx] = (it as f64).sin();
        }
        let eps = 1e-6;
        let a = vf.value_at(&RelativeState::new(0.5, 0.5, PI - eps));
        let b = vf.value_at(&RelativeState::new(0.5, 0.5, -PI + eps));
        assert!((a - b).abs() < 1e-4, "periodic mismatch: {a} vs {b}");
    }

    #[test]
    fn out_of_bounds_clamps_and_flags() {
        let g = small_grid();
        let vf = signed_distance_target(&g, 0.35);
        let q = vf.query(&RelativeState::new(10.0, 0.0, 0.0));
        assert!(q.clamped);
        assert_relative_eq!(q.value, vf.value_at(&RelativeState::new(2.0, 0.0, 0.0)));
        assert!(!vf.query(&RelativeState::new(0.0, 0.0, 0.0)).clamped);
    }

    #[test]
    fn avoidance_is_total_and_bang_bang() {
        let g = small_grid();
        let vf = signed_distance_target(&g, 0.35);
        let w = vf.params.omega_max;
        for x in [
            RelativeState::new(1.5, 0.0, PI - 1e-9),
            RelativeState::new(0.0, 0.0, 0.0),
            RelativeState::new(1.9, 1.9, 1.0),
        ] {
            let u = vf.optimal_avoidance(&x);
            assert!(u == w || u == -w, "not bang-bang: {u}");
        }
    }
}

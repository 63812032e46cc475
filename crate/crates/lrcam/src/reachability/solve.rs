//! Level-set time stepping for the relative Dubins game.
//!
//! The update is `V_{k+1}(x) = min(V_k(x), V_k(x) + Δt·Ĥ(x, ∇V_k))` with the
//! game Hamiltonian `H(x, q) = max_{|ωi|≤ω̄} min_{|ωj|≤ω̄} q·g(x, ωi, ωj)`
//! evaluated in closed form and approximated by a first-order Lax-Friedrichs
//! scheme with global dissipation per axis. Each sweep is a Jacobi update
//! from the previous sweep's snapshot, so node updates are independent and
//! the result does not depend on thread count.

use super::{signed_distance_target, GameParams, Grid3D, ValueFunction};
use crate::exec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: u64,
    pub cfl: f64,
    pub parallel: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iters: 5000, cfl: 0.5, parallel: true }
    }
}

/// Closed-form Hamiltonian: ego maximizes, the other agent is adversarial.
///
/// `q·g = qx(-v + v cosθ) + qy·v sinθ + ωi(qx·py − qy·px − qθ) + ωj·qθ`,
/// so `ωi* = ω̄·sign(qx·py − qy·px − qθ)` and `ωj* = −ω̄·sign(qθ)`.
#[inline]
fn hamiltonian(px: f64, py: f64, cos_t: f64, sin_t: f64, qx: f64, qy: f64, qt: f64, p: &GameParams) -> f64 {
    qx * (-p.v + p.v * cos_t) + qy * p.v * sin_t + p.omega_max * (qx * py - qy * px - qt).abs()
        - p.omega_max * qt.abs()
}

/// Compute the infinite-horizon safety value function for `params` on `grid`.
pub fn solve_brs(grid: &Grid3D, params: &GameParams, opts: &SolveOptions) -> ValueFunction {
    let mut vf = signed_distance_target(grid, params.d);
    vf.params = *params;

    let (dx, dy, dth) = (grid.dx(), grid.dy(), grid.dtheta());
    // Global dissipation coefficients: max |∂H/∂q_k| over the grid.
    let y_abs = grid.y_min.abs().max(grid.y_max.abs());
    let x_abs = grid.x_min.abs().max(grid.x_max.abs());
    let alpha_x = 2.0 * params.v + params.omega_max * y_abs;
    let alpha_y = params.v + params.omega_max * x_abs;
    let alpha_t = 2.0 * params.omega_max;
    let dt = opts.cfl / (alpha_x / dx + alpha_y / dy + alpha_t / dth);

    let (nx, ny, nt) = (grid.nx, grid.ny, grid.ntheta);
    let mut residual = f64::INFINITY;
    let mut iterations = 0u64;

    // precomputed per-theta trig
    let trig: Vec<(f64, f64)> =
        (0..nt).map(|it| grid.theta_of(it).sin_cos()).map(|(s, c)| (c, s)).collect();

    while iterations < opts.max_iters && residual > opts.tol {
        let prev = vf.values.clone();
        let g = grid.clone();
        let next = exec::map_indexed(prev.len(), opts.parallel, |idx| {
            let (ix, iy, it) = g.coords(idx);
            let v0 = prev[idx];

            let at = |ix: usize, iy: usize, it: usize| prev[g.index(ix, iy, it)];
            // one-sided differences; linear-extrapolation ghost nodes at the
            // planar boundary, periodic wrap in theta
            let dxm = if ix > 0 {
                (v0 - at(ix - 1, iy, it)) / dx
            } else {
                (at(ix + 1, iy, it) - v0) / dx
            };
            let dxp = if ix + 1 < nx {
                (at(ix + 1, iy, it) - v0) / dx
            } else {
                (v0 - at(ix - 1, iy, it)) / dx
            };
            let dym = if iy > 0 {
                (v0 - at(ix, iy - 1, it)) / dy
            } else {
                (at(ix, iy + 1, it) - v0) / dy
            };
            let dyp = if iy + 1 < ny {
                (at(ix, iy + 1, it) - v0) / dy
            } else {
                (v0 - at(ix, iy - 1, it)) / dy
            };
            let it_m = (it + nt - 1) % nt;
            let it_p = (it + 1) % nt;
            let dtm = (v0 - at(ix, iy, it_m)) / dth;
            let dtp = (at(ix, iy, it_p) - v0) / dth;

            let qx = 0.5 * (dxm + dxp);
            let qy = 0.5 * (dym + dyp);
            let qt = 0.5 * (dtm + dtp);
            let (cos_t, sin_t) = trig[it];
            // Per-node dissipation: |∂H/∂q| evaluated at this node's planar
            // position. The grid-wide maxima (used for the CFL bound above)
            // are so much larger near the arena edge that they smear the thin
            // unsafe lobes away entirely on the default grid.
            let ax = 2.0 * vf.params.v + vf.params.omega_max * g.y_of(iy).abs();
            let ay = vf.params.v + vf.params.omega_max * g.x_of(ix).abs();
            // `V <- min(V, V + dt*Ĥ)` marches toward larger unsafe sets, so the
            // Lax-Friedrichs dissipation enters with a positive sign: that is
            // what keeps the update monotone in the neighbor values under the
            // CFL bound (the usual `H - dissipation` form goes with a
            // `V - dt*Ĥ` step).
            let h = hamiltonian(g.x_of(ix), g.y_of(iy), cos_t, sin_t, qx, qy, qt, &vf.params)
                + 0.5 * (ax * (dxp - dxm) + ay * (dyp - dym) + alpha_t * (dtp - dtm));
            v0.min(v0 + dt * h)
        });

        residual = next
            .iter()
            .zip(prev.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        vf.values = next;
        iterations += 1;
    }

    vf.converged = residual <= opts.tol;
    vf.iterations = iterations;
    vf.residual = residual;
    vf
}

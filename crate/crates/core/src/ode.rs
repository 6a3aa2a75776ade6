//! Adaptive Runge–Kutta–Fehlberg 4(5) integration of complex linear systems.
//!
//! The fourth-order solution is propagated; the embedded fifth-order solution
//! only supplies the local error estimate. Rejected steps are halved.

use nalgebra::DVector;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Maximum absolute local error per accepted step.
    pub tol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            initial_step: 1e-3,
            min_step: 1e-12,
            max_step: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

const C: [f64; 6] = [0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

fn axpy(y: &mut DVector<C64>, a: f64, x: &DVector<C64>) {
    let a = C64::new(a, 0.0);
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// Integrates `dy/dt = f(t, y)` from `t_grid[0]` and calls `on_grid(k, t_k, y)`
/// at every grid point, including the first. Returns step statistics.
pub fn integrate<F, G>(
    mut f: F,
    y0: DVector<C64>,
    t_grid: &[f64],
    opts: OdeOptions,
    mut on_grid: G,
) -> Result<OdeStats>
where
    F: FnMut(f64, &DVector<C64>) -> DVector<C64>,
    G: FnMut(usize, f64, &DVector<C64>) -> Result<()>,
{
    let mut stats = OdeStats::default();
    if t_grid.is_empty() {
        return Ok(stats);
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "t_grid",
            reason: "must be strictly increasing".into(),
        });
    }
    let mut y = y0;
    let mut t = t_grid[0];
    let mut h = opts.initial_step.min(opts.max_step);
    on_grid(0, t, &y)?;
    let mut k: Vec<DVector<C64>> = Vec::with_capacity(6);
    for (idx, &t_next) in t_grid.iter().enumerate().skip(1) {
        while t < t_next {
            let remaining = t_next - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            k.clear();
            for s in 0..6 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    if A[s][j] != 0.0 {
                        axpy(&mut ys, step * A[s][j], kj);
                    }
                }
                k.push(f(t + C[s] * step, &ys));
            }
            let mut err: f64 = 0.0;
            for i in 0..y.len() {
                let mut e = C64::new(0.0, 0.0);
                for s in 0..6 {
                    e += k[s][i] * (B5[s] - B4[s]);
                }
                err = err.max(e.norm() * step);
            }
            if err <= opts.tol || step <= opts.min_step {
                if step <= opts.min_step && err > opts.tol {
                    return Err(Error::StepUnderflow { t, step });
                }
                for s in 0..6 {
                    if B4[s] != 0.0 {
                        axpy(&mut y, step * B4[s], &k[s]);
                    }
                }
                t = if last { t_next } else { t + step };
                stats.accepted += 1;
                let grow = if err > 0.0 {
                    (0.9 * (opts.tol / err).powf(0.2)).clamp(0.2, 4.0)
                } else {
                    4.0
                };
                // a step truncated to hit the grid must not shrink the controller
                h = (step.max(if last { h } else { 0.0 }) * grow).min(opts.max_step);
            } else {
                stats.rejected += 1;
                h = step * 0.5;
            }
        }
        on_grid(idx, t, &y)?;
    }
    Ok(stats)
}

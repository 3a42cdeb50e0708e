use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::DensityMatrix;
use crate::combinatorics::sqrt_factorial_ratio;
use crate::error::{invalid, Error, Result};

/// Convention string written next to every exported grid.
pub const WIGNER_CONVENTION: &str =
    "W(x,p) = (1/pi) Tr[rho D(a) P D(a)^dag], a = (x + i p)/sqrt(2); vacuum = exp(-x^2 - p^2)/pi";

const RESIDUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    /// `values[(i, j)] = W(x_i, p_j)`.
    pub values: DMatrix<f64>,
}

impl WignerGrid {
    /// Symmetric square grid `[−half_width, half_width]²` with `points` per axis.
    pub fn axis(half_width: f64, points: usize) -> Vec<f64> {
        if points == 1 {
            return vec![0.0];
        }
        (0..points)
            .map(|k| -half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn default_axis() -> Vec<f64> {
        Self::axis(6.0, 121)
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let wx = trapezoid_weights(&self.x_axis);
        let wp = trapezoid_weights(&self.p_axis);
        let mut total = 0.0;
        for (i, a) in wx.iter().enumerate() {
            for (j, b) in wp.iter().enumerate() {
                total += a * b * self.values[(i, j)];
            }
        }
        total
    }

    pub fn max(&self) -> (f64, f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for (i, &x) in self.x_axis.iter().enumerate() {
            for (j, &p) in self.p_axis.iter().enumerate() {
                let v = self.values[(i, j)];
                if v > best.0 {
                    best = (v, x, p);
                }
            }
        }
        best
    }
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Generalized Laguerre polynomials `L_0^a(x) … L_{n_max}^a(x)`.
fn laguerre(n_max: usize, a: usize, x: f64) -> Vec<f64> {
    let a = a as f64;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max >= 1 {
        out.push(1.0 + a - x);
    }
    for k in 1..n_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// `⟨n| D(β) |m⟩` for all `n, m < dim`.
fn displacement_elements(beta: Complex64, dim: usize) -> DMatrix<Complex64> {
    let x = beta.norm_sqr();
    let gauss = (-0.5 * x).exp();
    let mut out = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lag = laguerre(dim - 1 - k, k, x);
        let up = beta.powu(k as u32);
        let down = (-beta.conj()).powu(k as u32);
        for lo in 0..dim - k {
            let hi = lo + k;
            let scale = sqrt_factorial_ratio([lo as u64, 0], [hi as u64, 0]) * gauss * lag[lo];
            out[(hi, lo)] = up * scale;
            if k > 0 {
                out[(lo, hi)] = down * scale;
            }
        }
    }
    out
}

/// Displaced-parity Wigner function on the `x_axis × p_axis` grid.
pub fn wigner(rho: &DensityMatrix, x_axis: &[f64], p_axis: &[f64]) -> Result<WignerGrid> {
    if x_axis.is_empty() || p_axis.is_empty() {
        return Err(invalid("axis", "empty quadrature grid"));
    }
    let m = rho.entries();
    let d = rho.dim();
    let mut values = DMatrix::zeros(x_axis.len(), p_axis.len());
    let mut worst = 0.0_f64;
    for (i, &x) in x_axis.iter().enumerate() {
        for (j, &p) in p_axis.iter().enumerate() {
            // D(α) Π D(α)† = D(2α) Π
            let beta = Complex64::new(x, p) * SQRT_2;
            let disp = displacement_elements(beta, d);
            let mut acc = Complex64::new(0.0, 0.0);
            for mm in 0..d {
                let parity = if mm % 2 == 0 { 1.0 } else { -1.0 };
                for n in 0..d {
                    acc += m[(mm, n)] * disp[(n, mm)] * parity;
                }
            }
            worst = worst.max(acc.im.abs());
            values[(i, j)] = acc.re / PI;
        }
    }
    if worst > RESIDUE_TOL {
        return Err(Error::NotHermitian { deviation: worst });
    }
    Ok(WignerGrid {
        x_axis: x_axis.to_vec(),
        p_axis: p_axis.to_vec(),
        values,
    })
}

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DensityMatrix;
use crate::error::{invalid, Error, Result};

/// Default number of phase grid points.
pub const DEFAULT_PHASE_GRID: usize = 4096;

const MIN_GRID: usize = 64;
const RESIDUE_DISCARD: f64 = 1e-10;
const RESIDUE_FAIL: f64 = 1e-8;

/// `P(φ)` sampled on `G` uniform points `φ_k = −π + 2πk/G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDistribution {
    pub phi: Vec<f64>,
    pub prob: Vec<f64>,
}

impl PhaseDistribution {
    pub fn uniform(grid_size: usize) -> Self {
        Self {
            phi: phase_grid(grid_size),
            prob: vec![1.0 / (2.0 * PI); grid_size],
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.len() as f64
    }

    /// Periodic trapezoid rule over `[−π, π)`.
    pub fn integral(&self) -> f64 {
        self.prob.iter().sum::<f64>() * self.spacing()
    }
}

fn phase_grid(grid_size: usize) -> Vec<f64> {
    (0..grid_size)
        .map(|k| -PI + 2.0 * PI * k as f64 / grid_size as f64)
        .collect()
}

/// `P(φ) = (1/2π) Σ_{n,m} ρ_{nm} e^{i(m−n)φ}`, rescaled to unit integral when
/// the state carries less than unit trace.
pub fn phase_distribution(rho: &DensityMatrix, grid_size: usize) -> Result<PhaseDistribution> {
    if grid_size < MIN_GRID {
        return Err(invalid("grid_size", format!("need at least {MIN_GRID} points")));
    }
    let m = rho.entries();
    let d = rho.dim();
    // diagonal sums T_k = Σ_n ρ_{n,n+k} and T_{−k} = Σ_n ρ_{n+k,n}
    let upper: Vec<Complex64> = (0..d)
        .map(|k| (0..d - k).map(|n| m[(n, n + k)]).sum())
        .collect();
    let lower: Vec<Complex64> = (0..d)
        .map(|k| (0..d - k).map(|n| m[(n + k, n)]).sum())
        .collect();
    let trace = upper[0].re;
    if !(trace > 0.0) {
        return Err(invalid("rho", "zero trace"));
    }

    let phi = phase_grid(grid_size);
    let mut prob = Vec::with_capacity(grid_size);
    let mut worst_residue = 0.0_f64;
    for &p in &phi {
        let step = Complex64::from_polar(1.0, p);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = upper[0];
        for k in 1..d {
            rot *= step;
            acc += upper[k] * rot + lower[k] * rot.conj();
        }
        worst_residue = worst_residue.max(acc.im.abs());
        prob.push(acc.re / (2.0 * PI * trace));
    }
    if worst_residue > RESIDUE_FAIL {
        return Err(Error::NotHermitian {
            deviation: worst_residue,
        });
    }
    if worst_residue > RESIDUE_DISCARD {
        log::warn!("phase distribution: discarding imaginary residue {worst_residue:.2e}");
    }
    Ok(PhaseDistribution { phi, prob })
}

/// Bhattacharyya overlap `∫ √(P_a P_b) dφ`.
pub fn phase_overlap(pa: &PhaseDistribution, pb: &PhaseDistribution) -> Result<f64> {
    if pa.phi.len() != pb.phi.len()
        || pa.phi.iter().zip(&pb.phi).any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::GridMismatch);
    }
    let sum: f64 = pa
        .prob
        .iter()
        .zip(&pb.prob)
        .map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt())
        .sum();
    Ok(sum * pa.spacing())
}

/// Full width at half maximum around the global peak, with linear
/// interpolation between grid points. A distribution that never drops below
/// half its maximum is reported as `2π`.
pub fn phase_fwhm(p: &PhaseDistribution) -> f64 {
    let g = p.len();
    let full = 2.0 * PI;
    if g == 0 {
        return full;
    }
    let (peak, &max) = p
        .prob
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let min = p.prob.iter().copied().fold(f64::INFINITY, f64::min);
    // flat within rounding
    if max - min <= 1e-12 * max.abs().max(1e-300) {
        return full;
    }
    let half = 0.5 * max;
    let walk = |dir: isize| -> Option<f64> {
        let mut prev = max;
        for t in 1..g {
            let idx = (peak as isize + dir * t as isize).rem_euclid(g as isize) as usize;
            let cur = p.prob[idx];
            if cur < half {
                return Some((t - 1) as f64 + (prev - half) / (prev - cur));
            }
            prev = cur;
        }
        None
    };
    match (walk(1), walk(-1)) {
        (Some(right), Some(left)) => ((right + left) * p.spacing()).min(full),
        _ => full,
    }
}

//! Single-mode states on a truncated Fock basis `|0⟩ … |d−1⟩`.

mod measures;
mod phase;
mod wigner;

pub use measures::{
    coherence, counting_statistics, distribution_fidelity, fidelity, vacuum_probability,
    FockState,
};
pub(crate) use measures::hermitian_eigen;
pub use phase::{phase_distribution, DEFAULT_PHASE_GRID, phase_fwhm, phase_overlap, PhaseDistribution};
pub use wigner::{wigner, WignerGrid, WIGNER_CONVENTION};

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Truncation used throughout when nothing else is requested.
pub const DEFAULT_DIM: usize = 8;

/// Truncated tail mass above which constructors log a warning.
pub const TAIL_WARN: f64 = 1e-6;

/// Tail mass above which `coherent_coefficients` refuses the truncation.
pub const COHERENT_TAIL_LIMIT: f64 = 1e-2;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Pure state `Σ c_n |n⟩`, always unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    coeffs: Vec<Complex64>,
}

impl FockVector {
    /// Normalizes `coeffs`. Fails on an empty or all-zero vector.
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("coeffs", "a state needs at least one amplitude"));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid("coeffs", "amplitudes must be finite"));
        }
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(invalid("coeffs", "zero vector"));
        }
        Ok(Self {
            coeffs: coeffs.into_iter().map(|c| c / norm).collect(),
        })
    }

    pub fn from_real(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    /// Number state `|n⟩` in a `dim`-dimensional space.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(invalid("n", format!("|{n}⟩ does not fit in dimension {dim}")));
        }
        let mut coeffs = vec![Complex64::new(0.0, 0.0); dim];
        coeffs[n] = Complex64::new(1.0, 0.0);
        Ok(Self { coeffs })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::fock(0, dim)
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Real parts of the amplitudes.
    pub fn real_coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.re).collect()
    }

    /// `⟨self|other⟩`, padding the shorter vector with zeros.
    pub fn inner(&self, other: &FockVector) -> Complex64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap(&self, other: &FockVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        let v = nalgebra::DVector::from_column_slice(&self.coeffs);
        DensityMatrix {
            entries: &v * v.adjoint(),
        }
    }

    /// Applies `c_n → e^{inθ} c_n`.
    pub fn rotate_phase(&self, theta: f64) -> FockVector {
        FockVector {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c * Complex64::from_polar(1.0, n as f64 * theta))
                .collect(),
        }
    }
}

/// Hermitian, positive semidefinite matrix with trace in `(0, 1]`.
///
/// Truncated constructions (a thermal state cut at `d` levels, the output of a
/// lossy channel fed with one) keep their missing tail mass instead of being
/// renormalized, so the trace may fall short of one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates and stores `m`, replacing it by `(m + m†)/2`.
    pub fn from_matrix(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(invalid("entries", "empty matrix"));
        }
        let deviation = hermitian_deviation(&m);
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let entries = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let trace = entries.trace().re;
        if !(trace > 0.0 && trace <= 1.0 + TRACE_TOL) {
            return Err(Error::NotNormalized {
                what: "trace",
                value: trace,
            });
        }
        let min_eigenvalue = SymmetricEigen::new(entries.clone()).eigenvalues.min();
        if min_eigenvalue < -PSD_TOL {
            return Err(Error::NotPositive { min_eigenvalue });
        }
        Ok(Self { entries })
    }

    /// Wraps `m` as-is. Used for matrices that are density matrices by
    /// construction; the checked measures still reject non-Hermitian input.
    pub fn from_matrix_unchecked(m: DMatrix<Complex64>) -> Self {
        Self { entries: m }
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        if populations.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(invalid("populations", "entries must be finite and nonnegative"));
        }
        let diag = nalgebra::DVector::from_iterator(
            populations.len(),
            populations.iter().map(|&p| Complex64::new(p, 0.0)),
        );
        Self::from_matrix(DMatrix::from_diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Zero-pads (or truncates) to `dim` levels.
    pub fn resized(&self, dim: usize) -> DensityMatrix {
        let d = self.dim().min(dim);
        let mut entries = DMatrix::zeros(dim, dim);
        entries
            .view_mut((0, 0), (d, d))
            .copy_from(&self.entries.view((0, 0), (d, d)));
        DensityMatrix { entries }
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.entries[(i, j)].norm() <= tol))
    }

    /// `Σ_i p_i ρ_i` for matrices of equal dimension.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<DensityMatrix> {
        let dim = parts
            .first()
            .map(|(_, r)| r.dim())
            .ok_or_else(|| invalid("parts", "empty mixture"))?;
        let mut acc = DMatrix::zeros(dim, dim);
        for (w, r) in parts {
            if r.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.dim(),
                });
            }
            acc += &r.entries * Complex64::new(*w, 0.0);
        }
        Ok(DensityMatrix { entries: acc })
    }

    /// `U ρ U†` for a number-phase rotation `U = e^{iθ n̂}`.
    pub fn rotate_phase(&self, theta: f64) -> DensityMatrix {
        let d = self.dim();
        let entries = DMatrix::from_fn(d, d, |i, j| {
            self.entries[(i, j)] * Complex64::from_polar(1.0, (i as f64 - j as f64) * theta)
        });
        DensityMatrix { entries }
    }
}

pub(crate) fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(invalid("dim", "must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_mean(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be a finite nonnegative number, got {value}")))
    }
}

/// Poisson mass `P(n ≥ dim | n_mean)` cut off by the truncation.
pub fn coherent_tail_mass(n_mean: f64, dim: usize) -> f64 {
    let mut term = (-n_mean).exp();
    let mut kept = 0.0;
    for n in 0..dim {
        kept += term;
        term *= n_mean / (n as f64 + 1.0);
    }
    (1.0 - kept).max(0.0)
}

/// Real coherent amplitudes `e^{−n̄/2} n̄^{n/2} / √n!`, renormalized over the
/// retained levels.
pub fn coherent_coefficients(n_mean: f64, dim: usize) -> Result<FockVector> {
    check_mean("n_mean", n_mean)?;
    check_dim(dim)?;
    let tail_mass = coherent_tail_mass(n_mean, dim);
    if tail_mass > COHERENT_TAIL_LIMIT {
        return Err(Error::TruncationTail {
            tail_mass,
            limit: COHERENT_TAIL_LIMIT,
        });
    }
    if tail_mass > TAIL_WARN {
        warn!("coherent state n̄={n_mean} loses {tail_mass:.2e} of its mass at dim={dim}");
    }
    let mut coeffs = Vec::with_capacity(dim);
    let mut c = (-0.5 * n_mean).exp();
    for n in 0..dim {
        coeffs.push(Complex64::new(c, 0.0));
        c *= (n_mean / (n as f64 + 1.0)).sqrt();
    }
    FockVector::new(coeffs)
}

/// Populations `n̄^n / (n̄+1)^{n+1}` of a thermal state, unnormalized.
pub fn thermal_populations(n_env: f64, dim: usize) -> Result<Vec<f64>> {
    check_mean("n_env", n_env)?;
    check_dim(dim)?;
    let ratio = n_env / (n_env + 1.0);
    let mut p = 1.0 / (n_env + 1.0);
    Ok((0..dim)
        .map(|_| {
            let cur = p;
            p *= ratio;
            cur
        })
        .collect())
}

/// Thermal state truncated to `dim` levels without renormalization.
pub fn thermal_density(n_env: f64, dim: usize) -> Result<DensityMatrix> {
    thermal_density_with(n_env, dim, false)
}

pub fn thermal_density_with(n_env: f64, dim: usize, renormalize: bool) -> Result<DensityMatrix> {
    let mut pops = thermal_populations(n_env, dim)?;
    let kept: f64 = pops.iter().sum();
    if 1.0 - kept > TAIL_WARN {
        warn!(
            "thermal state n̄_env={n_env} keeps only {kept:.8} of its mass at dim={dim}{}",
            if renormalize { " (renormalizing)" } else { "" }
        );
    }
    if renormalize {
        pops.iter_mut().for_each(|p| *p /= kept);
    }
    let diag = nalgebra::DVector::from_iterator(dim, pops.iter().map(|&p| Complex64::new(p, 0.0)));
    Ok(DensityMatrix {
        entries: DMatrix::from_diagonal(&diag),
    })
}

/// Photon-number squeezed state `√p |⌈n̄⌉⟩ + √(1−p) |⌊n̄⌋⟩` with
/// `p = n̄ − ⌈n̄⌉ + 1`, using the ordinary ceiling and floor.
pub fn pnss(n_mean: f64, dim: usize) -> Result<FockVector> {
    check_mean("n_mean", n_mean)?;
    check_dim(dim)?;
    let hi = n_mean.ceil();
    if hi >= dim as f64 {
        return Err(invalid(
            "n_mean",
            format!("⌈{n_mean}⌉ = {hi} does not fit in dimension {dim}"),
        ));
    }
    let (hi, lo) = (hi as usize, n_mean.floor() as usize);
    if hi == lo {
        return FockVector::fock(hi, dim);
    }
    let p = n_mean - hi as f64 + 1.0;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); dim];
    coeffs[hi] = Complex64::new(p.sqrt(), 0.0);
    coeffs[lo] = Complex64::new((1.0 - p).sqrt(), 0.0);
    FockVector::new(coeffs)
}

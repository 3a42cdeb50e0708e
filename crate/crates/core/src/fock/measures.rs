use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::{hermitian_deviation, DensityMatrix, FockVector};
use crate::combinatorics::binomial;
use crate::error::{invalid, Error, Result};

const PSD_TOL: f64 = 1e-10;
const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Photon-number statistics shared by pure and mixed states.
pub trait FockState {
    /// Diagonal `P(n)` in the number basis.
    fn populations(&self) -> Vec<f64>;

    fn mean_photon(&self) -> f64 {
        self.populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// `⟨n²⟩ − ⟨n⟩²`.
    fn photon_variance(&self) -> f64 {
        let pops = self.populations();
        let mean: f64 = pops.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        let second: f64 = pops
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n) as f64 * p)
            .sum();
        second - mean * mean
    }
}

impl FockState for FockVector {
    fn populations(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm_sqr()).collect()
    }
}

impl FockState for DensityMatrix {
    fn populations(&self) -> Vec<f64> {
        self.entries.diagonal().iter().map(|c| c.re).collect()
    }
}

pub(crate) fn hermitian_eigen(m: DMatrix<Complex64>) -> Result<SymmetricEigen<Complex64, nalgebra::Dyn>> {
    let deviation = hermitian_deviation(&m);
    if deviation > 1e-10 {
        return Err(Error::NotHermitian { deviation });
    }
    SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| invalid("matrix", "Hermitian eigensolver did not converge"))
}

/// Eigenvalues at or below this are rounding noise; their square roots
/// would otherwise leak ~1e-8 into fidelities of pure states.
fn spectral_floor(eigenvalues: &[f64]) -> f64 {
    let top = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    1e-14 * top.max(f64::MIN_POSITIVE)
}

fn psd_sqrt(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let eig = hermitian_eigen(m.clone())?;
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue < -PSD_TOL {
        return Err(Error::NotPositive { min_eigenvalue });
    }
    let floor = spectral_floor(eig.eigenvalues.as_slice());
    let roots = eig.eigenvalues.map(|l| Complex64::new(if l > floor { l.sqrt() } else { 0.0 }, 0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.adjoint())
}

/// Uhlmann fidelity `[Tr √(√a b √a)]²`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let sa = psd_sqrt(a.entries())?;
    let inner = &sa * b.entries() * &sa;
    let inner = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = hermitian_eigen(inner)?;
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue < -PSD_TOL {
        return Err(Error::NotPositive { min_eigenvalue });
    }
    let floor = spectral_floor(eig.eigenvalues.as_slice());
    let root_trace: f64 = eig.eigenvalues.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

/// Classical fidelity `(Σ √(p_i q_i))²` of two population vectors.
pub fn distribution_fidelity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let bc: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt())
        .sum();
    Ok(bc * bc)
}

/// l1 coherence: sum of the magnitudes of all off-diagonal entries.
pub fn coherence(rho: &DensityMatrix) -> f64 {
    let m = rho.entries();
    let d = m.nrows();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                total += m[(i, j)].norm();
            }
        }
    }
    total
}

fn check_efficiency(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(invalid("r", format!("efficiency must lie in [0, 1], got {r}")))
    }
}

fn check_populations(diag: &[f64]) -> Result<()> {
    if diag.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid("diag", "populations must be finite and nonnegative"));
    }
    let total: f64 = diag.iter().sum();
    if total > 1.0 + 1e-10 {
        return Err(invalid("diag", format!("populations sum to {total} > 1")));
    }
    Ok(())
}

/// Photon counts seen by a detector of efficiency `r`:
/// `P_m = Σ_{n≥m} C(n,m) r^m (1−r)^{n−m} ρ_nn`.
pub fn counting_statistics(diag: &[f64], r: f64) -> Result<Vec<f64>> {
    check_efficiency(r)?;
    check_populations(diag)?;
    let d = diag.len();
    Ok((0..d)
        .map(|m| {
            (m..d)
                .map(|n| {
                    binomial(n as u64, m as u64)
                        * r.powi(m as i32)
                        * (1.0 - r).powi((n - m) as i32)
                        * diag[n]
                })
                .sum()
        })
        .collect())
}

/// `P_0 = Σ_n (1−r)^n ρ_nn`, the vacuum weight after loss.
pub fn vacuum_probability(diag: &[f64], r: f64) -> Result<f64> {
    check_efficiency(r)?;
    check_populations(diag)?;
    Ok(diag
        .iter()
        .enumerate()
        .map(|(n, p)| (1.0 - r).powi(n as i32) * p)
        .sum())
}

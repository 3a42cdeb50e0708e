//! Beam-splitter loss/noise channel.
//!
//! The probe (mode 1) and a thermal environment (mode 2) meet on a beam
//! splitter of intensity reflectivity `r`. Mode 1 at the output is the
//! received mode, mode 2 is lost. In the Heisenberg picture
//!
//! ```text
//! U a₁† U† =  √r a₁† + √(1−r) a₂†
//! U a₂† U† = −√(1−r) a₁† + √r a₂†
//! ```
//!
//! so a probe photon is received with amplitude `+√r`. Total photon number is
//! conserved, which makes `U` block diagonal over sectors of fixed `N`; the
//! channel is applied sector by sector, exactly, with the output space sized
//! to hold every photon the input can carry (`dim_probe + dim_env − 1`
//! levels per output mode).
//!
//! [`process_tensor_element`] evaluates the same map as a combinatorial
//! process tensor through a different expansion and serves as an independent
//! check of the sector route.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, sqrt_factorial_ratio};
use crate::error::{invalid, Error, Result};
use crate::fock::{thermal_density, thermal_populations, DensityMatrix, FockVector, DEFAULT_DIM};

/// Input mass allowed outside the probe truncation before the channel refuses.
pub const OVERFLOW_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Intensity reflectivity of the target.
    pub r: f64,
    /// Mean photon number of the thermal environment.
    pub n_env: f64,
    pub dim_probe: usize,
    pub dim_env: usize,
}

impl ChannelConfig {
    /// Environment truncated at the probe dimension.
    pub fn new(r: f64, n_env: f64, dim: usize) -> Result<Self> {
        let cfg = Self {
            r,
            n_env,
            dim_probe: dim,
            dim_env: dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(invalid("r", format!("reflectivity must lie in [0, 1], got {}", self.r)));
        }
        if !(self.n_env.is_finite() && self.n_env >= 0.0) {
            return Err(invalid("n_env", format!("must be finite and nonnegative, got {}", self.n_env)));
        }
        if self.dim_probe == 0 || self.dim_env == 0 {
            return Err(invalid("dim", "truncation dimensions must be at least 1"));
        }
        Ok(())
    }

    /// Levels per output mode: enough for every photon of the joint input.
    pub fn output_dim(&self) -> usize {
        self.dim_probe + self.dim_env - 1
    }

    pub fn with_r(&self, r: f64) -> Self {
        Self { r, ..*self }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            r: 0.5,
            n_env: 0.0,
            dim_probe: DEFAULT_DIM,
            dim_env: DEFAULT_DIM,
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(invalid("r", format!("reflectivity must lie in [0, 1], got {r}")))
    }
}

/// Beam-splitter unitary on the `N`-photon sector.
///
/// Row and column `k` stand for `|k, N−k⟩` (k photons in mode 1). Entries are
/// `⟨j, N−j| U |m, N−m⟩`, obtained by expanding
/// `(√r a₁† + √(1−r) a₂†)^m (−√(1−r) a₁† + √r a₂†)^{N−m} |0,0⟩ / √(m!(N−m)!)`.
pub fn bs_block_unitary(n_total: usize, r: f64) -> Result<DMatrix<f64>> {
    check_r(r)?;
    let (sr, st) = (r.sqrt(), (1.0 - r).sqrt());
    let n = n_total;
    Ok(DMatrix::from_fn(n + 1, n + 1, |j1, m1| {
        let (j2, m2) = (n - j1, n - m1);
        let lo = j1.saturating_sub(m2);
        let hi = m1.min(j1);
        let mut acc = 0.0;
        for p in lo..=hi {
            // p photons of mode 1 stay in mode 1, j1 − p come over from mode 2
            let from_two = j1 - p;
            let sign = if from_two % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign
                * binomial(m1 as u64, p as u64)
                * binomial(m2 as u64, from_two as u64)
                * sr.powi((p + m2 - from_two) as i32)
                * st.powi((m1 - p + from_two) as i32);
        }
        acc * sqrt_factorial_ratio([j1 as u64, j2 as u64], [m1 as u64, m2 as u64])
    }))
}

/// Sector unitaries `N = 0 … max_total` for one reflectivity, built once and
/// shared read-only afterwards.
#[derive(Debug, Clone)]
pub struct SectorUnitaries {
    r: f64,
    blocks: Vec<DMatrix<f64>>,
}

impl SectorUnitaries {
    pub fn new(r: f64, max_total: usize) -> Result<Self> {
        let blocks = (0..=max_total)
            .map(|n| bs_block_unitary(n, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { r, blocks })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn max_total(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, n_total: usize) -> &DMatrix<f64> {
        &self.blocks[n_total]
    }

    /// `⟨j1, j2| U |m1, m2⟩`.
    pub fn amplitude(&self, j1: usize, j2: usize, m1: usize, m2: usize) -> f64 {
        let n = m1 + m2;
        if j1 + j2 != n || n > self.max_total() {
            return 0.0;
        }
        self.blocks[n][(j1, m1)]
    }
}

/// Two-mode density matrix in the product basis `|i1⟩ ⊗ |i2⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeDensity {
    dims: (usize, usize),
    entries: DMatrix<Complex64>,
}

impl TwoModeDensity {
    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Self {
        let (d1, d2) = (a.dim(), b.dim());
        let (ea, eb) = (a.entries(), b.entries());
        let entries = DMatrix::from_fn(d1 * d2, d1 * d2, |row, col| {
            ea[(row / d2, col / d2)] * eb[(row % d2, col % d2)]
        });
        Self {
            dims: (d1, d2),
            entries,
        }
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        Self {
            dims: (d1, d2),
            entries: DMatrix::zeros(d1 * d2, d1 * d2),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.dims.1 + i2
    }

    /// `ρ_{j1 k1 j2 k2} = ⟨j1 j2| ρ |k1 k2⟩`; zero outside the truncation.
    pub fn get(&self, j1: usize, k1: usize, j2: usize, k2: usize) -> Complex64 {
        let (d1, d2) = self.dims;
        if j1 >= d1 || k1 >= d1 || j2 >= d2 || k2 >= d2 {
            return Complex64::new(0.0, 0.0);
        }
        self.entries[(self.index(j1, j2), self.index(k1, k2))]
    }

    fn set(&mut self, j1: usize, k1: usize, j2: usize, k2: usize, v: Complex64) {
        let (row, col) = (self.index(j1, j2), self.index(k1, k2));
        self.entries[(row, col)] = v;
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    pub fn hermitian_deviation(&self) -> f64 {
        crate::fock::hermitian_deviation(&self.entries)
    }

    /// Trace over mode 2, leaving mode 1.
    pub fn reduce_to_first(&self) -> DensityMatrix {
        let (d1, d2) = self.dims;
        let m = DMatrix::from_fn(d1, d1, |j1, k1| {
            (0..d2).map(|i2| self.get(j1, k1, i2, i2)).sum()
        });
        DensityMatrix::from_matrix_unchecked(m)
    }

    /// Trace over mode 1, leaving mode 2.
    pub fn reduce_to_second(&self) -> DensityMatrix {
        let (d1, d2) = self.dims;
        let m = DMatrix::from_fn(d2, d2, |j2, k2| {
            (0..d1).map(|i1| self.get(i1, i1, j2, k2)).sum()
        });
        DensityMatrix::from_matrix_unchecked(m)
    }

    /// `U ρ U†`, one pair of photon-number sectors at a time. The output
    /// modes get `d1 + d2 − 1` levels each so no sector is clipped.
    pub fn conjugate(&self, unitaries: &SectorUnitaries) -> TwoModeDensity {
        let (d1, d2) = self.dims;
        let max_total = d1 + d2 - 2;
        let out_dim = max_total + 1;
        let mut out = TwoModeDensity::zeros(out_dim, out_dim);
        for n in 0..=max_total {
            let un = unitaries.block(n);
            for np in 0..=max_total {
                let unp = unitaries.block(np);
                let block_in = DMatrix::from_fn(n + 1, np + 1, |m1, n1| {
                    self.get(m1, n1, n - m1, np - n1)
                });
                if block_in.iter().all(|c| c.norm_sqr() == 0.0) {
                    continue;
                }
                let un_c = un.map(|x| Complex64::new(x, 0.0));
                let unp_c = unp.map(|x| Complex64::new(x, 0.0));
                let block_out = &un_c * block_in * unp_c.transpose();
                for j1 in 0..=n {
                    for k1 in 0..=np {
                        out.set(j1, k1, n - j1, np - k1, block_out[(j1, k1)]);
                    }
                }
            }
        }
        out
    }
}

/// Pads or truncates the probe to `dim_probe` levels, refusing to drop more
/// than [`OVERFLOW_LIMIT`] of its mass.
fn fit_probe(rho: &DensityMatrix, dim_probe: usize) -> Result<DensityMatrix> {
    if rho.dim() > dim_probe {
        let dropped: f64 = (dim_probe..rho.dim()).map(|n| rho.entries()[(n, n)].re).sum();
        if dropped > OVERFLOW_LIMIT {
            return Err(Error::TruncationOverflow { dropped_mass: dropped });
        }
    }
    Ok(rho.resized(dim_probe))
}

/// Received and lost states for `rho_probe` sent through the channel.
pub fn apply_bs_channel(
    rho_probe: &DensityMatrix,
    config: &ChannelConfig,
) -> Result<(DensityMatrix, DensityMatrix)> {
    config.validate()?;
    let probe = fit_probe(rho_probe, config.dim_probe)?;
    let env = thermal_density(config.n_env, config.dim_env)?;
    let unitaries = SectorUnitaries::new(config.r, config.output_dim() - 1)?;
    let out = TwoModeDensity::product(&probe, &env).conjugate(&unitaries);
    Ok((out.reduce_to_first(), out.reduce_to_second()))
}

/// `H0`: environment only; `H1`: probe reflected into the environment.
/// Both are returned on the channel's output dimension.
pub fn hypothesis_states(
    probe: &FockVector,
    config: &ChannelConfig,
) -> Result<(DensityMatrix, DensityMatrix)> {
    let (rho1, _) = apply_bs_channel(&probe.density_matrix(), config)?;
    let rho0 = thermal_density(config.n_env, config.dim_env)?.resized(config.output_dim());
    Ok((rho0, rho1))
}

/// Process-tensor element `E^{m1 n1 m2 n2}_{j1 k1 j2 k2}` with
/// `ρ^out_{j1k1j2k2} = Σ E ρ^in_{m1n1m2n2}`.
///
/// Expanded from the output side,
///
/// ```text
/// E = √(m1! m2! n1! n2! / (j1! j2! k1! k2!))
///     Σ_p Σ_q C(j1,p) C(j2,m1−p) C(k1,q) C(k2,n1−q) (−1)^{j1+k1−p−q}
///     √r^{2p+2q+j2+k2−m1−n1} √(1−r)^{j1+k1+m1+n1−2p−2q}
///     δ(m1+m2, j1+j2) δ(n1+n2, k1+k2)
/// ```
///
/// which is unitary for intensity reflectivity `r` and matches the sign
/// convention of [`bs_block_unitary`].
#[allow(clippy::too_many_arguments)]
pub fn process_tensor_element(
    j1: usize,
    k1: usize,
    j2: usize,
    k2: usize,
    m1: usize,
    n1: usize,
    m2: usize,
    n2: usize,
    r: f64,
) -> f64 {
    if m1 + m2 != j1 + j2 || n1 + n2 != k1 + k2 {
        return 0.0;
    }
    let (sr, st) = (r.sqrt(), (1.0 - r).sqrt());
    let mut acc = 0.0;
    for p in 0..=j1.min(m1) {
        let cp = binomial(j1 as u64, p as u64) * binomial(j2 as u64, (m1 - p) as u64);
        if cp == 0.0 {
            continue;
        }
        for q in 0..=k1.min(n1) {
            let cq = binomial(k1 as u64, q as u64) * binomial(k2 as u64, (n1 - q) as u64);
            if cq == 0.0 {
                continue;
            }
            let sign = if (j1 + k1 - p - q).is_multiple_of(2) { 1.0 } else { -1.0 };
            let r_exp = 2 * p + 2 * q + j2 + k2 - m1 - n1;
            let t_exp = j1 + k1 + m1 + n1 - 2 * p - 2 * q;
            acc += sign * cp * cq * sr.powi(r_exp as i32) * st.powi(t_exp as i32);
        }
    }
    acc * sqrt_factorial_ratio([m1 as u64, m2 as u64], [j1 as u64, j2 as u64])
        * sqrt_factorial_ratio([n1 as u64, n2 as u64], [k1 as u64, k2 as u64])
}

/// Received state computed by contracting the process tensor against
/// `ρ_probe ⊗ ρ_env`. Slow; kept as a cross-check of the sector route.
pub fn received_via_process_tensor(
    rho_probe: &DensityMatrix,
    config: &ChannelConfig,
) -> Result<DMatrix<Complex64>> {
    config.validate()?;
    let probe = fit_probe(rho_probe, config.dim_probe)?;
    let env = thermal_density(config.n_env, config.dim_env)?;
    let input = TwoModeDensity::product(&probe, &env);
    let (dp, de) = (config.dim_probe, config.dim_env);
    let out_dim = config.output_dim();
    let mut recv = DMatrix::zeros(out_dim, out_dim);
    for m1 in 0..dp {
        for n1 in 0..dp {
            for m2 in 0..de {
                for n2 in 0..de {
                    let rho_in = input.get(m1, n1, m2, n2);
                    if rho_in.norm_sqr() == 0.0 {
                        continue;
                    }
                    // received marginal: lost indices equal, j2 = k2
                    for j1 in 0..=(m1 + m2) {
                        let j2 = m1 + m2 - j1;
                        let Some(k1) = (n1 + n2).checked_sub(j2) else {
                            continue;
                        };
                        let e = process_tensor_element(j1, k1, j2, j2, m1, n1, m2, n2, config.r);
                        recv[(j1, k1)] += rho_in * e;
                    }
                }
            }
        }
    }
    Ok(recv)
}

/// The received-mode map in Kraus form, `ρ ↦ Σ_{e,l} p_e K_{e,l} ρ K_{e,l}†`,
/// with `K_{e,l}[j, m] = ⟨j, l| U |m, e⟩` for `e` environment photons in and
/// `l` photons lost. This is the sector conjugation followed by the partial
/// trace, organised for repeated evaluation inside the optimizer.
#[derive(Debug, Clone)]
pub struct BeamSplitterChannel {
    config: ChannelConfig,
    kraus: Vec<(f64, DMatrix<Complex64>)>,
    environment: DensityMatrix,
}

impl BeamSplitterChannel {
    pub fn new(config: ChannelConfig) -> Result<Self> {
        config.validate()?;
        let (dp, de) = (config.dim_probe, config.dim_env);
        let out_dim = config.output_dim();
        let unitaries = SectorUnitaries::new(config.r, out_dim - 1)?;
        let pops = thermal_populations(config.n_env, de)?;
        let mut kraus = Vec::new();
        for (e, &weight) in pops.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            for lost in 0..out_dim {
                let k = DMatrix::from_fn(out_dim, dp, |j, m| {
                    match (m + e).checked_sub(lost) {
                        Some(jj) if jj == j => Complex64::new(unitaries.amplitude(j, lost, m, e), 0.0),
                        _ => Complex64::new(0.0, 0.0),
                    }
                });
                if k.iter().any(|c| c.re != 0.0) {
                    kraus.push((weight, k));
                }
            }
        }
        let environment = thermal_density(config.n_env, de)?.resized(out_dim);
        Ok(Self {
            config,
            kraus,
            environment,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// `ρ_0`: the truncated environment on the output dimension.
    pub fn environment(&self) -> &DensityMatrix {
        &self.environment
    }

    /// Received state for the pure probe with amplitudes `psi`.
    pub fn received_pure(&self, psi: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.output_dim();
        let v = nalgebra::DVector::from_column_slice(psi);
        let mut out = DMatrix::zeros(n, n);
        for (w, k) in &self.kraus {
            let kv = k * &v;
            out += (&kv * kv.adjoint()) * Complex64::new(*w, 0.0);
        }
        out
    }

    pub fn received(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let probe = fit_probe(rho, self.config.dim_probe)?;
        let n = self.output_dim();
        let mut out = DMatrix::zeros(n, n);
        for (w, k) in &self.kraus {
            out += (k * probe.entries() * k.adjoint()) * Complex64::new(*w, 0.0);
        }
        Ok(DensityMatrix::from_matrix_unchecked(out))
    }

    /// Adjoint map `S ↦ Σ p_e K† S K`, pulling an output-space observable back
    /// to the probe space.
    pub fn adjoint(&self, s: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = self.config.dim_probe;
        let mut out = DMatrix::zeros(d, d);
        for (w, k) in &self.kraus {
            out += (k.adjoint() * s * k) * Complex64::new(*w, 0.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_coefficients, fidelity, FockState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unitarity_error(u: &DMatrix<f64>) -> f64 {
        let prod = u.transpose() * u;
        (prod - DMatrix::identity(u.nrows(), u.ncols())).amax()
    }

    #[test]
    fn vacuum_sector_is_identity() {
        for r in [0.0, 0.3, 1.0] {
            assert_eq!(bs_block_unitary(0, r).unwrap(), DMatrix::from_element(1, 1, 1.0));
        }
    }

    #[test]
    fn balanced_single_photon() {
        let u = bs_block_unitary(1, 0.5).unwrap();
        // column 1 is |1,0⟩
        assert_relative_eq!(u[(1, 1)].powi(2), 0.5, epsilon = 1e-15);
        assert_relative_eq!(u[(0, 1)].powi(2), 0.5, epsilon = 1e-15);
        assert!(u[(1, 1)] > 0.0);
    }

    #[test]
    fn two_photon_amplitudes() {
        let r: f64 = 0.3;
        let u = bs_block_unitary(2, r).unwrap();
        // |2,0⟩ → r|2,0⟩ + √(2r(1−r))|1,1⟩ + (1−r)|0,2⟩
        assert_relative_eq!(u[(2, 2)], r, epsilon = 1e-15);
        assert_relative_eq!(u[(1, 2)], (2.0 * r * (1.0 - r)).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(u[(0, 2)], 1.0 - r, epsilon = 1e-15);
    }

    #[test]
    fn sector_unitaries_are_unitary() {
        for n in 0..=30 {
            for r in [0.0, 0.01, 0.37, 0.5, 0.99, 1.0] {
                let u = bs_block_unitary(n, r).unwrap();
                assert!(unitarity_error(&u) < 1e-12, "N={n} r={r}: {}", unitarity_error(&u));
            }
        }
        assert!(bs_block_unitary(2, 1.5).is_err());
    }

    #[test]
    fn sector_unitary_matches_generator_exponential() {
        // U = exp(θ (a₁† a₂ − a₁ a₂†)) with cos θ = √r, via the eigenbasis of
        // the Hermitian generator i(a₁† a₂ − a₁ a₂†) on the sector.
        let n = 6;
        let r: f64 = 0.42;
        let theta = r.sqrt().acos();
        let mut g = DMatrix::<f64>::zeros(n + 1, n + 1);
        for k in 0..n {
            // a₁† a₂ |k, n−k⟩ = √((k+1)(n−k)) |k+1, n−k−1⟩
            let amp = (((k + 1) * (n - k)) as f64).sqrt();
            g[(k + 1, k)] = amp;
            g[(k, k + 1)] = -amp;
        }
        let h = g.map(|x| Complex64::new(0.0, x));
        let eig = nalgebra::SymmetricEigen::new(h);
        let phases = eig.eigenvalues.map(|l| Complex64::from_polar(1.0, theta * l));
        let u = &eig.eigenvectors * DMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
        let ours = bs_block_unitary(n, r).unwrap();
        for i in 0..=n {
            for j in 0..=n {
                assert!((u[(i, j)].re - ours[(i, j)]).abs() < 1e-12);
                assert!(u[(i, j)].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_elements() {
        assert_eq!(process_tensor_element(1, 0, 0, 0, 0, 0, 0, 0, 0.3), 0.0);
        assert_eq!(process_tensor_element(0, 0, 0, 0, 0, 0, 0, 0, 0.3), 1.0);
        let u = SectorUnitaries::new(0.27, 12).unwrap();
        let cases = [
            (2, 1, 3, 2, 4, 1, 1, 2),
            (0, 3, 5, 0, 3, 2, 2, 1),
            (4, 4, 2, 1, 1, 3, 5, 2),
            (3, 0, 3, 3, 6, 2, 0, 1),
        ];
        for (j1, k1, j2, k2, m1, n1, m2, n2) in cases {
            let want = u.amplitude(j1, j2, m1, m2) * u.amplitude(k1, k2, n1, n2);
            let got = process_tensor_element(j1, k1, j2, k2, m1, n1, m2, n2, 0.27);
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
    }

    #[test]
    fn perfect_mirror_returns_probe() {
        let probe = coherent_coefficients(1.0, 8).unwrap().density_matrix();
        let cfg = ChannelConfig::new(1.0, 0.0, 8).unwrap();
        let (recv, _) = apply_bs_channel(&probe, &cfg).unwrap();
        let padded = probe.resized(cfg.output_dim());
        assert!((recv.entries() - padded.entries()).camax() < 1e-14);
    }

    #[test]
    fn absent_target_returns_environment() {
        let probe = coherent_coefficients(1.0, 8).unwrap().density_matrix();
        let cfg = ChannelConfig::new(0.0, 0.2, 8).unwrap();
        let (recv, _) = apply_bs_channel(&probe, &cfg).unwrap();
        let env = thermal_density(0.2, 8).unwrap().resized(cfg.output_dim());
        assert!((recv.entries() - env.entries()).camax() < 1e-14);
    }

    #[test]
    fn coherent_in_coherent_out() {
        let probe = coherent_coefficients(1.0, 8).unwrap();
        let cfg = ChannelConfig::new(0.36, 0.0, 8).unwrap();
        let (recv, _) = apply_bs_channel(&probe.density_matrix(), &cfg).unwrap();
        // the truncated input carries a 1e-5 tail, so compare against the
        // attenuated state of the same truncated amplitudes
        let want = coherent_coefficients(0.36, cfg.output_dim()).unwrap().density_matrix();
        let f = fidelity(&recv, &want).unwrap();
        assert!(1.0 - f < 2e-5, "fidelity {f}");
        let exact = coherent_coefficients(0.36, 8).unwrap().density_matrix();
        let f8 = fidelity(&recv.resized(8), &exact).unwrap();
        assert!(f8 > 0.9999);
    }

    #[test]
    fn hypotheses_examples() {
        let probe = coherent_coefficients(1.0, 8).unwrap();
        let cfg = ChannelConfig::new(0.0, 0.0, 8).unwrap();
        let (r0, r1) = hypothesis_states(&probe, &cfg).unwrap();
        assert!((r0.entries() - r1.entries()).camax() < 1e-15);
        assert_eq!(r0.entries()[(0, 0)].re, 1.0);

        let one = FockVector::fock(1, 8).unwrap();
        let cfg = ChannelConfig::new(1.0, 0.0, 8).unwrap();
        let (r0, r1) = hypothesis_states(&one, &cfg).unwrap();
        assert_eq!(r0.entries()[(0, 0)].re, 1.0);
        assert!((r1.entries()[(1, 1)].re - 1.0).abs() < 1e-15);

        let probe = coherent_coefficients(0.04, 8).unwrap();
        let cfg = ChannelConfig::new(0.5, 0.2, 8).unwrap();
        let (r0, r1) = hypothesis_states(&probe, &cfg).unwrap();
        assert_eq!(r0.dim(), r1.dim());
        let env_mass: f64 = thermal_populations(0.2, 8).unwrap().iter().sum();
        assert_relative_eq!(r1.trace(), env_mass, max_relative = 1e-12);
        let env_mean = thermal_density(0.2, 8).unwrap().mean_photon();
        let expected = 0.5 * probe.mean_photon() * env_mass + 0.5 * env_mean;
        assert_relative_eq!(r1.mean_photon(), expected, max_relative = 1e-10);
        assert!((r1.mean_photon() - (0.5 * 0.04 + 0.5 * 0.2)).abs() < 1e-5);
    }

    #[test]
    fn overflow_is_reported() {
        let big = coherent_coefficients(1.0, 12).unwrap().density_matrix();
        let cfg = ChannelConfig::new(0.5, 0.0, 4).unwrap();
        assert!(matches!(apply_bs_channel(&big, &cfg), Err(Error::TruncationOverflow { .. })));
        let cfg = ChannelConfig::new(0.5, 0.0, 11).unwrap();
        assert!(apply_bs_channel(&big, &cfg).is_ok());
    }

    #[test]
    fn kraus_route_matches_sector_route() {
        let probe = FockVector::from_real(&[0.3, -0.5, 0.7, 0.1, 0.2, 0.0, 0.05, 0.3]).unwrap();
        let cfg = ChannelConfig::new(0.63, 0.15, 8).unwrap();
        let (recv, _) = apply_bs_channel(&probe.density_matrix(), &cfg).unwrap();
        let chan = BeamSplitterChannel::new(cfg).unwrap();
        let fast = chan.received_pure(probe.coeffs());
        assert!((recv.entries() - &fast).camax() < 1e-13);
        let mixed = chan.received(&probe.density_matrix()).unwrap();
        assert!((mixed.entries() - fast).camax() < 1e-13);
    }

    #[test]
    fn adjoint_is_dual() {
        let cfg = ChannelConfig::new(0.4, 0.1, 5).unwrap();
        let chan = BeamSplitterChannel::new(cfg).unwrap();
        let probe = FockVector::from_real(&[0.5, 0.5, -0.5, 0.3, 0.1]).unwrap();
        let n = chan.output_dim();
        let s = DMatrix::from_fn(n, n, |i, j| Complex64::new((i * j) as f64 * 0.01 + 0.1, 0.0));
        let s = (&s + s.adjoint()) * Complex64::new(0.5, 0.0);
        let lhs = (&s * chan.received_pure(probe.coeffs())).trace();
        let rho = probe.density_matrix();
        let rhs = (chan.adjoint(&s) * rho.entries()).trace();
        assert!((lhs - rhs).norm() < 1e-13);
    }

    fn probe_strategy() -> impl Strategy<Value = FockVector> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6).prop_filter_map("zero", |v| {
            FockVector::new(v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).ok()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conservation(probe in probe_strategy(), r in 0.0f64..=1.0, n_env in 0.0f64..0.5) {
            let cfg = ChannelConfig::new(r, n_env, 6).unwrap();
            let rho = probe.density_matrix();
            let env = thermal_density(n_env, 6).unwrap();
            let input = TwoModeDensity::product(&rho, &env);
            let (recv, lost) = apply_bs_channel(&rho, &cfg).unwrap();
            prop_assert!((recv.trace() - input.trace()).abs() < 1e-12);
            prop_assert!((lost.trace() - input.trace()).abs() < 1e-12);
            let mean_in = rho.mean_photon() * env.trace() + env.mean_photon();
            prop_assert!((recv.mean_photon() + lost.mean_photon() - mean_in).abs() < 1e-10);
            prop_assert!(crate::fock::hermitian_deviation(recv.entries()) < 1e-12);
            let min_eig = nalgebra::SymmetricEigen::new(recv.entries().clone()).eigenvalues.min();
            prop_assert!(min_eig > -1e-10);
        }

        #[test]
        fn phase_covariance(probe in probe_strategy(), r in 0.0f64..=1.0, n_env in 0.0f64..0.5, theta in -3.2f64..3.2) {
            let chan = BeamSplitterChannel::new(ChannelConfig::new(r, n_env, 6).unwrap()).unwrap();
            let plain = DensityMatrix::from_matrix_unchecked(chan.received_pure(probe.coeffs()));
            let rotated = chan.received_pure(probe.rotate_phase(theta).coeffs());
            prop_assert!((plain.rotate_phase(theta).entries() - rotated).camax() < 1e-12);
        }

        #[test]
        fn linearity(a in probe_strategy(), b in probe_strategy(), w in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let cfg = ChannelConfig::new(r, 0.1, 6).unwrap();
            let (ra, rb) = (a.density_matrix(), b.density_matrix());
            let mix = DensityMatrix::mixture(&[(w, &ra), (1.0 - w, &rb)]).unwrap();
            let (out_mix, _) = apply_bs_channel(&mix, &cfg).unwrap();
            let (out_a, _) = apply_bs_channel(&ra, &cfg).unwrap();
            let (out_b, _) = apply_bs_channel(&rb, &cfg).unwrap();
            let want = out_a.entries() * Complex64::new(w, 0.0) + out_b.entries() * Complex64::new(1.0 - w, 0.0);
            prop_assert!((out_mix.entries() - want).camax() < 1e-12);
        }

        #[test]
        fn two_mode_output_is_hermitian(probe in probe_strategy(), r in 0.0f64..=1.0) {
            let env = thermal_density(0.1, 6).unwrap();
            let u = SectorUnitaries::new(r, 10).unwrap();
            let out = TwoModeDensity::product(&probe.density_matrix(), &env).conjugate(&u);
            prop_assert!(out.hermitian_deviation() < 1e-12);
            prop_assert!(out.trace() <= 1.0 + 1e-10);
        }
    }
}

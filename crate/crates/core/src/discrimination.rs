//! Minimum-error discrimination between the two detection hypotheses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{BeamSplitterChannel, ChannelConfig};
use crate::error::{invalid, Error, Result};
use crate::fock::{hermitian_deviation, hermitian_eigen, DensityMatrix};

/// Eigenvalues this close to zero are structural zeros of `p0ρ0 − p1ρ1` and
/// get `sign = 0`.
const ZERO_EIGENVALUE: f64 = 1e-13;
/// Eigenvalues between [`ZERO_EIGENVALUE`] and this are too close to a sign
/// change for the perturbation formula to be trusted.
pub const DEGENERACY_GAP: f64 = 1e-9;
/// Central-difference step used for gradient checks and the degenerate fallback.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisPair {
    pub rho0: DensityMatrix,
    pub rho1: DensityMatrix,
    pub p0: f64,
}

impl HypothesisPair {
    pub fn new(rho0: DensityMatrix, rho1: DensityMatrix, p0: f64) -> Result<Self> {
        check_prior(p0)?;
        if rho0.dim() != rho1.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho0.dim(),
                found: rho1.dim(),
            });
        }
        Ok(Self { rho0, rho1, p0 })
    }

    pub fn p1(&self) -> f64 {
        1.0 - self.p0
    }

    /// `p0 ρ0 − p1 ρ1`.
    pub fn weighted_difference(&self) -> DMatrix<Complex64> {
        self.rho0.entries() * Complex64::new(self.p0, 0.0)
            - self.rho1.entries() * Complex64::new(self.p1(), 0.0)
    }
}

pub(crate) fn check_prior(p0: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p0) {
        Ok(())
    } else {
        Err(invalid("p0", format!("prior must lie in [0, 1], got {p0}")))
    }
}

/// `Σ |λ_i|` of a Hermitian matrix.
pub fn trace_norm(m: &DMatrix<Complex64>) -> Result<f64> {
    let eig = hermitian_eigen(m.clone())?;
    Ok(eig.eigenvalues.iter().map(|l| l.abs()).sum())
}

/// `(1 − ‖p0ρ0 − p1ρ1‖₁)/2`, clamped to `[0, min(p0, p1)]` against rounding.
pub fn helstrom_error(h: &HypothesisPair) -> Result<f64> {
    let norm = trace_norm(&h.weighted_difference())?;
    Ok(clamp_error(0.5 * (1.0 - norm), h.p0))
}

fn clamp_error(p: f64, p0: f64) -> f64 {
    p.clamp(0.0, p0.min(1.0 - p0))
}

/// Quantum advantage in dB. A perfect optimal probe gives an unbounded value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "db", rename_all = "snake_case")]
pub enum QuantumAdvantage {
    Finite(f64),
    Unbounded,
}

impl QuantumAdvantage {
    /// `+∞` for the unbounded case.
    pub fn db(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Self::Unbounded)
    }
}

/// `10 log₁₀(p_coh / p_opt)`.
pub fn quantum_advantage(p_coh: f64, p_opt: f64) -> Result<QuantumAdvantage> {
    for (name, p) in [("p_coh", p_coh), ("p_opt", p_opt)] {
        if !(0.0..=0.5).contains(&p) {
            return Err(invalid(name, format!("error probability must lie in [0, 1/2], got {p}")));
        }
    }
    if p_opt == 0.0 {
        return Ok(QuantumAdvantage::Unbounded);
    }
    if p_coh == 0.0 {
        return Err(invalid("p_coh", "coherent error probability is zero while the optimum is not"));
    }
    Ok(QuantumAdvantage::Finite(10.0 * (p_coh / p_opt).log10()))
}

/// Helstrom error as a function of the probe amplitudes, with the channel and
/// the null hypothesis fixed.
#[derive(Debug, Clone)]
pub struct HelstromObjective {
    channel: BeamSplitterChannel,
    p0: f64,
}

/// Value, sensitivity `S = ∂P/∂ρ₁` and whether the spectrum sits too close to
/// a sign change for `S` to be a valid derivative.
#[derive(Debug, Clone)]
pub struct SpectralSensitivity {
    pub value: f64,
    pub sensitivity: DMatrix<Complex64>,
    pub degenerate: Option<f64>,
}

impl HelstromObjective {
    pub fn new(config: ChannelConfig, p0: f64) -> Result<Self> {
        check_prior(p0)?;
        Ok(Self {
            channel: BeamSplitterChannel::new(config)?,
            p0,
        })
    }

    pub fn channel(&self) -> &BeamSplitterChannel {
        &self.channel
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    fn difference(&self, psi: &[Complex64]) -> DMatrix<Complex64> {
        let p1 = 1.0 - self.p0;
        self.channel.environment().entries() * Complex64::new(self.p0, 0.0)
            - self.channel.received_pure(psi) * Complex64::new(p1, 0.0)
    }

    pub fn value(&self, psi: &[Complex64]) -> Result<f64> {
        let norm = trace_norm(&self.difference(psi))?;
        Ok(clamp_error(0.5 * (1.0 - norm), self.p0))
    }

    /// First-order eigenvalue perturbation of the trace norm:
    /// `d‖M‖₁ = Σ sign(λ_i) ⟨v_i|dM|v_i⟩` with `dM = −p1 dρ₁`, so
    /// `∂P/∂ρ₁ = (p1/2) Σ sign(λ_i) |v_i⟩⟨v_i|`.
    pub fn sensitivity(&self, psi: &[Complex64]) -> Result<SpectralSensitivity> {
        let m = self.difference(psi);
        let deviation = hermitian_deviation(&m);
        if deviation > 1e-10 {
            return Err(Error::NotHermitian { deviation });
        }
        let eig = hermitian_eigen(m)?;
        let n = eig.eigenvalues.len();
        let mut signs = DVector::<Complex64>::zeros(n);
        let mut norm = 0.0;
        let mut degenerate: Option<f64> = None;
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            norm += l.abs();
            if l.abs() <= ZERO_EIGENVALUE {
                continue;
            }
            if l.abs() < DEGENERACY_GAP {
                degenerate = Some(degenerate.map_or(l, |d: f64| if l.abs() < d.abs() { l } else { d }));
            }
            signs[i] = Complex64::new(l.signum(), 0.0);
        }
        let v = &eig.eigenvectors;
        let half_p1 = Complex64::new(0.5 * (1.0 - self.p0), 0.0);
        let sensitivity = v * DMatrix::from_diagonal(&signs) * v.adjoint() * half_p1;
        Ok(SpectralSensitivity {
            value: clamp_error(0.5 * (1.0 - norm), self.p0),
            sensitivity,
            degenerate,
        })
    }

    /// Gradient with respect to real coefficients.
    pub fn gradient(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let psi = real_to_complex(coeffs);
        let s = self.sensitivity(&psi)?;
        if let Some(eigenvalue) = s.degenerate {
            return Err(Error::DegenerateSpectrum {
                eigenvalue,
                gap: DEGENERACY_GAP,
            });
        }
        let (re, _) = pull_back(&self.channel, &s.sensitivity, &psi);
        Ok(re)
    }
}

pub(crate) fn real_to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// For `f(ρ_recv)` with `df = Tr(S dρ_recv)` and `ρ_probe = ψψ†`, returns
/// `(∂f/∂Re ψ, ∂f/∂Im ψ) = (2 Re Gψ, 2 Im Gψ)` with `G = Φ*(S)`.
pub(crate) fn pull_back(
    channel: &BeamSplitterChannel,
    s: &DMatrix<Complex64>,
    psi: &[Complex64],
) -> (Vec<f64>, Vec<f64>) {
    let g = channel.adjoint(s);
    let gpsi = g * DVector::from_column_slice(psi);
    (
        gpsi.iter().map(|z| 2.0 * z.re).collect(),
        gpsi.iter().map(|z| 2.0 * z.im).collect(),
    )
}

/// `∂P_err/∂c_n` for the real probe `coeffs` sent through `config`.
/// Fails with [`Error::DegenerateSpectrum`] near an eigenvalue sign change,
/// where [`error_gradient_fd`] should be used instead.
pub fn error_gradient(coeffs: &[f64], config: &ChannelConfig, p0: f64) -> Result<Vec<f64>> {
    check_unit_norm(coeffs)?;
    HelstromObjective::new(*config, p0)?.gradient(coeffs)
}

/// Central-difference gradient of the Helstrom error.
pub fn error_gradient_fd(coeffs: &[f64], config: &ChannelConfig, p0: f64) -> Result<Vec<f64>> {
    let obj = HelstromObjective::new(*config, p0)?;
    central_difference(coeffs, FD_STEP, |x| obj.value(&real_to_complex(x)))
}

pub(crate) fn central_difference<F>(x: &[f64], h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn check_unit_norm(coeffs: &[f64]) -> Result<()> {
    let norm: f64 = coeffs.iter().map(|c| c * c).sum();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized {
            what: "Σ c_n²",
            value: norm,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::hypothesis_states;
    use crate::fock::{coherent_coefficients, FockVector};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn trace_norm_examples() {
        let id = DMatrix::<Complex64>::identity(5, 5);
        assert_relative_eq!(trace_norm(&id).unwrap(), 5.0, epsilon = 1e-14);
        let mut d = DMatrix::<Complex64>::zeros(2, 2);
        d[(0, 0)] = Complex64::new(1.0, 0.0);
        d[(1, 1)] = Complex64::new(-1.0, 0.0);
        assert_relative_eq!(trace_norm(&d).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn trace_norm_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_hermitian(8, &mut rng);
            let svd_sum: f64 = m.clone().svd(false, false).singular_values.iter().sum();
            assert!((trace_norm(&m).unwrap() - svd_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn helstrom_examples() {
        let coh = coherent_coefficients(1.0, 8).unwrap().density_matrix();
        let same = HypothesisPair::new(coh.clone(), coh.clone(), 0.5).unwrap();
        assert_relative_eq!(helstrom_error(&same).unwrap(), 0.5, epsilon = 1e-14);

        let zero = FockVector::fock(0, 8).unwrap().density_matrix();
        let one = FockVector::fock(1, 8).unwrap().density_matrix();
        let orth = HypothesisPair::new(zero.clone(), one, 0.5).unwrap();
        assert!(helstrom_error(&orth).unwrap().abs() < 1e-15);

        // vacuum vs coherent(1) on a wide truncation: s = e^{-1}
        let coh = coherent_coefficients(1.0, 30).unwrap().density_matrix();
        let vac = FockVector::fock(0, 30).unwrap().density_matrix();
        let p = helstrom_error(&HypothesisPair::new(vac, coh, 0.5).unwrap()).unwrap();
        let s = (-1.0f64).exp();
        assert_relative_eq!(p, (1.0 - (1.0 - s).sqrt()) / 2.0, epsilon = 1e-12);
        assert!((p - 0.10247).abs() < 1e-5);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(quantum_advantage(0.3, 0.3).unwrap(), QuantumAdvantage::Finite(0.0));
        let qa = quantum_advantage(0.2, 0.1).unwrap().db();
        assert_relative_eq!(qa, 10.0 * 2f64.log10(), epsilon = 1e-14);
        assert!((qa - 3.0103).abs() < 1e-4);
        assert_relative_eq!(quantum_advantage(0.1, 0.05).unwrap().db(), qa, epsilon = 1e-14);
        assert!(quantum_advantage(0.1, 0.0).unwrap().is_unbounded());
        assert_eq!(quantum_advantage(0.1, 0.0).unwrap().db(), f64::INFINITY);
        assert!(quantum_advantage(0.7, 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for n_env in [0.0, 0.1] {
            let cfg = ChannelConfig::new(0.5, n_env, 8).unwrap();
            for _ in 0..20 {
                let raw: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c = FockVector::from_real(&raw).unwrap().real_coeffs();
                let g = match error_gradient(&c, &cfg, 0.5) {
                    Err(Error::DegenerateSpectrum { .. }) => continue,
                    other => other.unwrap(),
                };
                let fd = error_gradient_fd(&c, &cfg, 0.5).unwrap();
                let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
                assert!(err <= 1e-5 * scale, "relative error {}", err / scale);
                checked += 1;
            }
        }
        assert!(checked >= 10, "only {checked} nondegenerate samples");
    }

    #[test]
    fn gradient_vanishes_without_target() {
        let cfg = ChannelConfig::new(0.0, 0.1, 8).unwrap();
        let c = coherent_coefficients(1.0, 8).unwrap().real_coeffs();
        let g = error_gradient(&c, &cfg, 0.5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn gradient_rejects_unnormalized_input() {
        let cfg = ChannelConfig::new(0.5, 0.0, 3).unwrap();
        assert!(error_gradient(&[1.0, 1.0, 0.0], &cfg, 0.5).is_err());
    }

    #[test]
    fn objective_matches_channel_states() {
        let probe = FockVector::from_real(&[0.4, 0.6, -0.3, 0.5, 0.1, 0.0, 0.2, 0.1]).unwrap();
        let cfg = ChannelConfig::new(0.7, 0.2, 8).unwrap();
        let (r0, r1) = hypothesis_states(&probe, &cfg).unwrap();
        let want = helstrom_error(&HypothesisPair::new(r0, r1, 0.4).unwrap()).unwrap();
        let got = HelstromObjective::new(cfg, 0.4).unwrap().value(probe.coeffs()).unwrap();
        assert!((want - got).abs() < 1e-13);
    }

    #[test]
    fn data_processing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = HelstromObjective::new(ChannelConfig::new(1.0, 0.0, 6).unwrap(), 0.5).unwrap();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let psi = FockVector::from_real(&raw).unwrap();
            let r = rng.random_range(0.0..1.0);
            let lossy = HelstromObjective::new(ChannelConfig::new(r, 0.0, 6).unwrap(), 0.5).unwrap();
            assert!(lossy.value(psi.coeffs()).unwrap() >= full.value(psi.coeffs()).unwrap() - 1e-12);
        }
    }

    fn pure_pair(a: &[f64], b: &[f64], p0: f64) -> (HypothesisPair, f64) {
        let va = FockVector::from_real(a).unwrap();
        let vb = FockVector::from_real(b).unwrap();
        let s = va.overlap(&vb);
        (HypothesisPair::new(va.density_matrix(), vb.density_matrix(), p0).unwrap(), s)
    }

    proptest! {
        #[test]
        fn pure_state_closed_form(
            a in proptest::collection::vec(-1.0f64..1.0, 5),
            b in proptest::collection::vec(-1.0f64..1.0, 5),
            p0 in 0.0f64..=1.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-2) && b.iter().any(|x| x.abs() > 1e-2));
            let (pair, s) = pure_pair(&a, &b, p0);
            let want = (1.0 - (1.0 - 4.0 * p0 * (1.0 - p0) * s).max(0.0).sqrt()) / 2.0;
            let got = helstrom_error(&pair).unwrap();
            prop_assert!((got - want).abs() < 1e-10);
            prop_assert!(got >= 0.0 && got <= p0.min(1.0 - p0));
        }

        #[test]
        fn unitary_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(5, &mut rng);
            let eig = nalgebra::SymmetricEigen::new(h);
            let phases = eig.eigenvalues.map(|l| Complex64::from_polar(1.0, l));
            let u = &eig.eigenvectors * DMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (pair, _) = pure_pair(&a, &b, 0.5);
            let conj = |r: &DensityMatrix| DensityMatrix::from_matrix_unchecked(&u * r.entries() * u.adjoint());
            let rotated = HypothesisPair::new(conj(&pair.rho0), conj(&pair.rho1), 0.5).unwrap();
            prop_assert!((helstrom_error(&pair).unwrap() - helstrom_error(&rotated).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn monotone_in_overlap(t1 in 0.0f64..1.5, t2 in 0.0f64..1.5) {
            // |0⟩ against cos t|0⟩ + sin t|1⟩: overlap cos² t falls as t grows
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(hi - lo > 1e-3);
            let (near, _) = pure_pair(&[1.0, 0.0], &[lo.cos(), lo.sin()], 0.5);
            let (far, _) = pure_pair(&[1.0, 0.0], &[hi.cos(), hi.sin()], 0.5);
            prop_assert!(helstrom_error(&near).unwrap() >= helstrom_error(&far).unwrap());
        }
    }
}

//! Optimal probe search over the amplitudes `c_n` under
//! `Σ|c_n|² = 1` and `Σ n|c_n|² = n̄`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{BeamSplitterChannel, ChannelConfig};
use crate::discrimination::{central_difference, check_prior, pull_back, HelstromObjective, FD_STEP};
use crate::error::{invalid, Error, Result};
use crate::fock::{
    coherent_coefficients, phase_distribution, phase_overlap, DensityMatrix, FockVector,
    PhaseDistribution, DEFAULT_PHASE_GRID,
};
use crate::sqp::{project_onto_constraints, sqp_minimize, NlpProblem, SolverOptions, StopReason};

/// Default number of random starts besides the coherent one.
pub const DEFAULT_RESTARTS: usize = 8;

const PROJECTION_TOL: f64 = 1e-13;
const PROJECTION_ITERATIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Helstrom error of the full received density matrix.
    #[serde(rename = "dm")]
    HelstromDm,
    /// Vacuum weight of the received photon statistics.
    #[serde(rename = "ps")]
    VacuumP0,
    /// Overlap of the received phase distribution with the flat one.
    #[serde(rename = "po")]
    PhaseOverlap,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::HelstromDm => "dm",
            Self::VacuumP0 => "ps",
            Self::PhaseOverlap => "po",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dm" | "helstrom" => Ok(Self::HelstromDm),
            "ps" | "vacuum" => Ok(Self::VacuumP0),
            "po" | "phase" => Ok(Self::PhaseOverlap),
            other => Err(invalid("objective", format!("unknown objective `{other}` (dm, ps, po)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `x = c`.
    #[default]
    Real,
    /// `x = [Re c; Im c]`.
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub objective: Objective,
    pub config: ChannelConfig,
    /// Mean photon number of the probe.
    pub n_target: f64,
    pub p0: f64,
    pub parameterization: Parameterization,
    pub phase_grid: usize,
}

impl OptimizationProblem {
    pub fn new(objective: Objective, config: ChannelConfig, n_target: f64) -> Result<Self> {
        let p = Self {
            objective,
            config,
            n_target,
            p0: 0.5,
            parameterization: Parameterization::Real,
            phase_grid: DEFAULT_PHASE_GRID,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.config.dim_probe
    }

    pub fn with_r(&self, r: f64) -> Self {
        Self {
            config: self.config.with_r(r),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        check_prior(self.p0)?;
        let top = (self.dim() - 1) as f64;
        if !(self.n_target.is_finite() && (0.0..=top).contains(&self.n_target)) {
            return Err(invalid(
                "n_bar",
                format!("mean photon number must lie in [0, {top}] for dim {}, got {}", self.dim(), self.n_target),
            ));
        }
        if self.phase_grid < 64 {
            return Err(invalid("phase_grid", "need at least 64 points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Real parts of the optimal amplitudes.
    pub coeffs: Vec<f64>,
    /// Imaginary parts; empty for real parameterization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeffs_imag: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Starts actually run, including the coherent one.
    pub restarts_used: usize,
    /// Index of the winning start: 0 coherent, 1 warm start if given, then random.
    pub best_start: usize,
}

impl OptimizationResult {
    pub fn amplitudes(&self) -> Vec<Complex64> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &re)| Complex64::new(re, self.coeffs_imag.get(i).copied().unwrap_or(0.0)))
            .collect()
    }

    pub fn probe(&self) -> Result<FockVector> {
        FockVector::new(self.amplitudes())
    }

    pub fn normalization_error(&self) -> f64 {
        (self.amplitudes().iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0).abs()
    }

    pub fn mean_photon(&self) -> f64 {
        self.amplitudes()
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub solver: SolverOptions,
    pub restarts: usize,
    pub seed: u64,
    /// Separates the random starts of different problems sharing a seed.
    pub stream: u64,
    /// Extra initial point, typically the optimum of a neighbouring problem.
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            stream: 0,
            warm_start: None,
        }
    }
}

enum Evaluator {
    Helstrom(HelstromObjective),
    Vacuum { loss: f64 },
    Phase { channel: BeamSplitterChannel, uniform: PhaseDistribution },
}

/// Objective and constraints of one probe problem in the solver's variables.
pub struct ProbeObjective {
    problem: OptimizationProblem,
    evaluator: Evaluator,
    photon_numbers: Vec<f64>,
}

impl ProbeObjective {
    pub fn new(problem: &OptimizationProblem) -> Result<Self> {
        problem.validate()?;
        let evaluator = match problem.objective {
            Objective::HelstromDm => Evaluator::Helstrom(HelstromObjective::new(problem.config, problem.p0)?),
            Objective::VacuumP0 => Evaluator::Vacuum {
                loss: 1.0 - problem.config.r,
            },
            Objective::PhaseOverlap => Evaluator::Phase {
                channel: BeamSplitterChannel::new(problem.config)?,
                uniform: PhaseDistribution::uniform(problem.phase_grid),
            },
        };
        let d = problem.dim();
        let mut photon_numbers: Vec<f64> = (0..d).map(|n| n as f64).collect();
        if problem.parameterization == Parameterization::Complex {
            photon_numbers.extend((0..d).map(|n| n as f64));
        }
        Ok(Self {
            problem: *problem,
            evaluator,
            photon_numbers,
        })
    }

    pub fn problem(&self) -> &OptimizationProblem {
        &self.problem
    }

    /// Probe amplitudes encoded by the solver variables.
    pub fn amplitudes(&self, x: &[f64]) -> Vec<Complex64> {
        let d = self.problem.dim();
        match self.problem.parameterization {
            Parameterization::Real => x.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            Parameterization::Complex => (0..d).map(|n| Complex64::new(x[n], x[n + d])).collect(),
        }
    }

    pub fn encode(&self, psi: &[Complex64]) -> Vec<f64> {
        match self.problem.parameterization {
            Parameterization::Real => psi.iter().map(|c| c.re).collect(),
            Parameterization::Complex => psi.iter().map(|c| c.re).chain(psi.iter().map(|c| c.im)).collect(),
        }
    }

    fn split_gradient(&self, (re, im): (Vec<f64>, Vec<f64>)) -> Vec<f64> {
        match self.problem.parameterization {
            Parameterization::Real => re,
            Parameterization::Complex => re.into_iter().chain(im).collect(),
        }
    }

    /// Objective at the probe `psi`, which need not be normalized.
    pub fn value_at(&self, psi: &[Complex64]) -> Result<f64> {
        match &self.evaluator {
            Evaluator::Helstrom(h) => h.value(psi),
            Evaluator::Vacuum { loss } => Ok(psi
                .iter()
                .enumerate()
                .map(|(n, c)| loss.powi(n as i32) * c.norm_sqr())
                .sum()),
            Evaluator::Phase { channel, uniform } => {
                let rho = DensityMatrix::from_matrix_unchecked(channel.received_pure(psi));
                phase_overlap(&phase_distribution(&rho, uniform.len())?, uniform)
            }
        }
    }

    fn finite_difference(&self, x: &[f64]) -> Result<Vec<f64>> {
        central_difference(x, FD_STEP, |y| self.value_at(&self.amplitudes(y)))
    }
}

/// `∂O/∂ρ` of the Bhattacharyya overlap `O = Δ Σ_k √(P_k / 2π)` with the flat
/// distribution, where `P_k = w_k†ρw_k / (2π Tr ρ)` and `(w_k)_n = e^{inφ_k}`.
fn phase_overlap_sensitivity(rho: &DMatrix<Complex64>, grid: usize) -> Result<DMatrix<Complex64>> {
    let d = rho.nrows();
    let dist = phase_distribution(&DensityMatrix::from_matrix_unchecked(rho.clone()), grid)?;
    let trace = rho.trace().re;
    let delta = dist.spacing();
    let root_u = (1.0 / (2.0 * PI)).sqrt();
    let weights: Vec<f64> = dist
        .prob
        .iter()
        .map(|&p| delta * root_u / (2.0 * p.max(1e-12).sqrt()))
        .collect();
    let diag_shift: f64 = weights.iter().zip(&dist.prob).map(|(a, p)| a * p).sum();
    // A(Δ) = Σ_k a_k e^{iΔφ_k} for Δ = 0 … d−1; negative Δ by conjugation
    let mut fourier = vec![Complex64::new(0.0, 0.0); d];
    for (a, &phi) in weights.iter().zip(&dist.phi) {
        let step = Complex64::from_polar(1.0, phi);
        let mut rot = Complex64::new(*a, 0.0);
        for f in fourier.iter_mut() {
            *f += rot;
            rot *= step;
        }
    }
    let scale = 1.0 / (2.0 * PI * trace);
    Ok(DMatrix::from_fn(d, d, |n, m| {
        let v = if n >= m { fourier[n - m] } else { fourier[m - n].conj() };
        let shift = if n == m { diag_shift / trace } else { 0.0 };
        v * scale - Complex64::new(shift, 0.0)
    }))
}

impl NlpProblem for ProbeObjective {
    fn dim(&self) -> usize {
        self.photon_numbers.len()
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        self.value_at(&self.amplitudes(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let psi = self.amplitudes(x);
        match &self.evaluator {
            Evaluator::Helstrom(h) => {
                let s = h.sensitivity(&psi)?;
                if s.degenerate.is_some() {
                    return self.finite_difference(x);
                }
                Ok(self.split_gradient(pull_back(h.channel(), &s.sensitivity, &psi)))
            }
            Evaluator::Vacuum { loss } => Ok(x
                .iter()
                .zip(&self.photon_numbers)
                .map(|(v, &n)| 2.0 * loss.powi(n as i32) * v)
                .collect()),
            Evaluator::Phase { channel, uniform } => {
                let rho = channel.received_pure(&psi);
                let s = phase_overlap_sensitivity(&rho, uniform.len())?;
                Ok(self.split_gradient(pull_back(channel, &s, &psi)))
            }
        }
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let mean: f64 = x.iter().zip(&self.photon_numbers).map(|(v, n)| n * v * v).sum();
        vec![norm - 1.0, mean - self.problem.n_target]
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(2, x.len(), |i, j| {
            if i == 0 {
                2.0 * x[j]
            } else {
                2.0 * self.photon_numbers[j] * x[j]
            }
        })
    }
}

/// Fixes the symmetries every objective shares: the number-phase rotation
/// (chosen so `⟨a⟩` is real and nonnegative) and the global phase (chosen so
/// the largest amplitude is real and nonnegative).
pub fn canonical_gauge(psi: &[Complex64]) -> Vec<Complex64> {
    let amplitude: Complex64 = (0..psi.len().saturating_sub(1))
        .map(|n| ((n + 1) as f64).sqrt() * psi[n].conj() * psi[n + 1])
        .sum();
    let mut out: Vec<Complex64> = psi.to_vec();
    let real = psi.iter().all(|c| c.im == 0.0);
    if real {
        // exact sign flips keep real probes real
        if amplitude.re < 0.0 {
            out.iter_mut().skip(1).step_by(2).for_each(|c| *c = -*c);
        }
    } else if amplitude.norm() > 1e-14 && amplitude.arg() != 0.0 {
        let theta = -amplitude.arg();
        for (n, c) in out.iter_mut().enumerate() {
            *c *= Complex64::from_polar(1.0, theta * n as f64);
        }
    }
    let mut lead = 0;
    for (i, c) in out.iter().enumerate() {
        // first index wins ties so the choice is deterministic
        if c.norm() > out[lead].norm() + 1e-14 {
            lead = i;
        }
    }
    if real {
        if out[lead].re < 0.0 {
            out.iter_mut().for_each(|c| *c = -*c);
        }
    } else if out[lead].norm() > 0.0 && out[lead].arg() != 0.0 {
        let phase = Complex64::from_polar(1.0, -out[lead].arg());
        out.iter_mut().for_each(|c| *c *= phase);
    }
    out
}

/// Random feasible amplitudes: Gaussian directions, tilted by `e^{−βn}` so the
/// mean photon number equals `n_target`.
fn random_feasible(dim: usize, n_target: f64, complex: bool, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let raw: Vec<Complex64> = (0..dim)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = if complex { StandardNormal.sample(rng) } else { 0.0 };
            Complex64::new(re, im)
        })
        .collect();
    let weights: Vec<f64> = raw.iter().map(|c| c.norm_sqr()).collect();
    let tilted = |beta: f64| -> (f64, Vec<f64>) {
        // shift exponents by their maximum to stay finite for large |β|
        let logs: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(n, w)| if *w > 0.0 { w.ln() - beta * n as f64 } else { f64::NEG_INFINITY })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / total).collect();
        let mean = p.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
        (mean, p)
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tilted(mid).0 > n_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (_, p) = tilted(0.5 * (lo + hi));
    raw.iter()
        .zip(p)
        .map(|(c, pn)| {
            let unit = if c.norm() > 0.0 { c / c.norm() } else { Complex64::new(1.0, 0.0) };
            unit * pn.sqrt()
        })
        .collect()
}

fn fock_result(problem: &OptimizationProblem, n: usize, objective: &ProbeObjective) -> Result<OptimizationResult> {
    let psi = FockVector::fock(n, problem.dim())?;
    let x = objective.encode(psi.coeffs());
    let value = objective.objective(&x)?;
    let d = problem.dim();
    Ok(OptimizationResult {
        coeffs: x[..d].to_vec(),
        coeffs_imag: x[d..].to_vec(),
        objective_value: value,
        iterations: 0,
        kkt_residual: 0.0,
        converged: true,
        restarts_used: 0,
        best_start: 0,
    })
}

/// Runs the solver from the projected coherent probe, an optional warm start
/// and `restarts` random feasible probes, and keeps the best converged result.
pub fn optimize_probe(problem: &OptimizationProblem, opts: &OptimizeOptions) -> Result<OptimizationResult> {
    let objective = ProbeObjective::new(problem)?;
    opts.solver.validate()?;
    let d = problem.dim();
    // the constraints pin a single point at either end of the range
    if problem.n_target == 0.0 {
        return fock_result(problem, 0, &objective);
    }
    if problem.n_target == (d - 1) as f64 {
        return fock_result(problem, d - 1, &objective);
    }

    let complex = problem.parameterization == Parameterization::Complex;
    let mut starts: Vec<Option<Vec<f64>>> = Vec::new();
    match coherent_coefficients(problem.n_target, d) {
        Ok(c) => starts.push(Some(objective.encode(c.coeffs()))),
        Err(e) => {
            log::warn!("no coherent start for n̄={}: {e}", problem.n_target);
            starts.push(None);
        }
    }
    if let Some(w) = &opts.warm_start {
        if w.len() == objective.dim() {
            starts.push(Some(w.clone()));
        } else {
            return Err(Error::DimensionMismatch {
                expected: objective.dim(),
                found: w.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(opts.stream);
    for _ in 0..opts.restarts {
        let psi = random_feasible(d, problem.n_target, complex, &mut rng);
        starts.push(Some(objective.encode(&psi)));
    }

    let outcomes: Vec<Option<crate::sqp::SqpOutcome>> = starts
        .par_iter()
        .map(|start| {
            let x0 = start.as_ref()?;
            let x0 = project_onto_constraints(&objective, x0, PROJECTION_TOL, PROJECTION_ITERATIONS).ok()?;
            match sqp_minimize(&objective, &x0, &opts.solver) {
                Ok(out) => Some(out),
                Err(e) => {
                    log::debug!("start failed: {e}");
                    None
                }
            }
        })
        .collect();

    let attempted = outcomes.iter().filter(|o| o.is_some()).count();
    if attempted == 0 {
        return Err(Error::Infeasible(format!(
            "no start could be projected onto Σc² = 1, Σn c² = {}",
            problem.n_target
        )));
    }
    let mut best: Option<(usize, &crate::sqp::SqpOutcome)> = None;
    for (i, out) in outcomes.iter().enumerate() {
        let Some(out) = out else { continue };
        if !out.converged {
            continue;
        }
        match best {
            Some((_, b)) if out.objective >= b.objective - 1e-13 => {}
            _ => best = Some((i, out)),
        }
    }
    let Some((best_start, winner)) = best else {
        let stops: Vec<StopReason> = outcomes.iter().flatten().map(|o| o.stop).collect();
        log::debug!("no start converged: {stops:?}");
        return Err(Error::AllRestartsFailed { starts: attempted });
    };

    // polish feasibility, then fix the gauge
    let x = project_onto_constraints(&objective, &winner.x, 1e-14, 8).unwrap_or_else(|_| winner.x.clone());
    let psi = canonical_gauge(&objective.amplitudes(&x));
    let x = objective.encode(&psi);
    let objective_value = objective.objective(&x)?;
    Ok(OptimizationResult {
        coeffs: x[..d].to_vec(),
        coeffs_imag: x[d..].to_vec(),
        objective_value,
        iterations: winner.iterations,
        kkt_residual: winner.kkt_residual,
        converged: true,
        restarts_used: attempted,
        best_start,
    })
}

//! Reflectivity sweeps, probe diagnostics and the transition reflectivity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::discrimination::{quantum_advantage, HelstromObjective};
use crate::error::{invalid, Error, Result};
use crate::fock::{
    coherence, coherent_coefficients, counting_statistics, phase_distribution, phase_fwhm,
    FockState, FockVector, DEFAULT_PHASE_GRID,
};
use crate::optimize::{optimize_probe, OptimizationProblem, OptimizationResult, OptimizeOptions};

/// Column order of the sweep table.
pub const SWEEP_COLUMNS: [&str; 15] = [
    "r",
    "n_env",
    "n_bar",
    "p_err_coh",
    "p_err_opt",
    "qa_db",
    "fidelity_to_coherent",
    "photon_variance",
    "phase_fwhm",
    "coherence_value",
    "sd_ratio_n",
    "sd_ratio_phi",
    "coherence_ratio",
    "iterations",
    "converged",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub r: f64,
    pub n_env: f64,
    pub n_bar: f64,
    pub p_err_coh: f64,
    pub p_err_opt: f64,
    pub qa_db: f64,
    pub fidelity_to_coherent: f64,
    pub photon_variance: f64,
    pub phase_fwhm: f64,
    pub coherence_value: f64,
    pub sd_ratio_n: f64,
    pub sd_ratio_phi: f64,
    pub coherence_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SweepRecord {
    /// Values in [`SWEEP_COLUMNS`] order, floats as `{:.16e}`.
    pub fn csv_fields(&self) -> Vec<String> {
        let f = format_float;
        vec![
            f(self.r),
            f(self.n_env),
            f(self.n_bar),
            f(self.p_err_coh),
            f(self.p_err_opt),
            f(self.qa_db),
            f(self.fidelity_to_coherent),
            f(self.photon_variance),
            f(self.phase_fwhm),
            f(self.coherence_value),
            f(self.sd_ratio_n),
            f(self.sd_ratio_phi),
            f(self.coherence_ratio),
            self.iterations.to_string(),
            self.converged.to_string(),
        ]
    }
}

/// 17 significant digits; non-finite values as `nan`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Photon-number and phase diagnostics of a single probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAnalysis {
    pub mean_photon: f64,
    pub photon_variance: f64,
    pub phase_fwhm: f64,
    pub coherence: f64,
}

impl ProbeAnalysis {
    pub fn of(probe: &FockVector) -> Result<Self> {
        let rho = probe.density_matrix();
        let phase = phase_distribution(&rho, DEFAULT_PHASE_GRID)?;
        Ok(Self {
            mean_photon: probe.mean_photon(),
            photon_variance: probe.photon_variance(),
            phase_fwhm: phase_fwhm(&phase),
            coherence: coherence(&rho),
        })
    }
}

/// Ratios of a probe's diagnostics to those of a reference (usually the
/// coherent probe of the same mean photon number). Standard deviations are
/// square roots of the photon-number variance; the phase width is the FWHM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fidelity: f64,
    pub sd_ratio_n: f64,
    pub sd_ratio_phi: f64,
    pub coherence_ratio: f64,
}

impl Comparison {
    pub fn new(probe: &FockVector, reference: &FockVector) -> Result<Self> {
        if probe.dim() != reference.dim() {
            return Err(Error::DimensionMismatch {
                expected: reference.dim(),
                found: probe.dim(),
            });
        }
        let a = ProbeAnalysis::of(probe)?;
        let b = ProbeAnalysis::of(reference)?;
        Ok(Self {
            fidelity: probe.overlap(reference),
            sd_ratio_n: (a.photon_variance.max(0.0) / b.photon_variance).sqrt(),
            sd_ratio_phi: a.phase_fwhm / b.phase_fwhm,
            coherence_ratio: a.coherence / b.coherence,
        })
    }
}

/// Photon counts of the probe at detection efficiency `r`.
pub fn probe_counting(probe: &FockVector, r: f64) -> Result<Vec<f64>> {
    counting_statistics(&probe.populations(), r)
}

/// One grid point: the record plus the optimal amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub record: SweepRecord,
    pub coeffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeffs_imag: Vec<f64>,
    /// Why the point failed, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub optimize: OptimizeOptions,
    /// Feed each optimum to the next grid point as an extra start.
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            optimize: OptimizeOptions::default(),
            warm_start: true,
        }
    }
}

/// Helstrom error of the coherent probe with the problem's mean photon number.
pub fn coherent_error(problem: &OptimizationProblem) -> Result<f64> {
    let coh = coherent_coefficients(problem.n_target, problem.dim())?;
    HelstromObjective::new(problem.config, problem.p0)?.value(coh.coeffs())
}

/// Optimizes one problem and fills a record. Failures are recorded, not
/// propagated.
pub fn evaluate_point(problem: &OptimizationProblem, opts: &OptimizeOptions) -> SweepPoint {
    match try_evaluate(problem, opts) {
        Ok(p) => p,
        Err(e) => {
            let nan = f64::NAN;
            let p_err_coh = coherent_error(problem).unwrap_or(nan);
            SweepPoint {
                record: SweepRecord {
                    r: problem.config.r,
                    n_env: problem.config.n_env,
                    n_bar: problem.n_target,
                    p_err_coh,
                    p_err_opt: nan,
                    qa_db: nan,
                    fidelity_to_coherent: nan,
                    photon_variance: nan,
                    phase_fwhm: nan,
                    coherence_value: nan,
                    sd_ratio_n: nan,
                    sd_ratio_phi: nan,
                    coherence_ratio: nan,
                    iterations: 0,
                    converged: false,
                },
                coeffs: Vec::new(),
                coeffs_imag: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

fn try_evaluate(problem: &OptimizationProblem, opts: &OptimizeOptions) -> Result<SweepPoint> {
    let result = optimize_probe(problem, opts)?;
    describe_optimum(problem, &result)
}

/// Record for an optimizer result. The error probabilities are Helstrom
/// errors whatever objective produced the probe.
pub fn describe_optimum(problem: &OptimizationProblem, result: &OptimizationResult) -> Result<SweepPoint> {
    let ops = result.probe()?;
    let coh = coherent_coefficients(problem.n_target, problem.dim())?;
    let helstrom = HelstromObjective::new(problem.config, problem.p0)?;
    let p_err_coh = helstrom.value(coh.coeffs())?;
    let p_err_opt = helstrom.value(ops.coeffs())?;
    let qa = quantum_advantage(p_err_coh, p_err_opt)?;
    let analysis = ProbeAnalysis::of(&ops)?;
    let cmp = Comparison::new(&ops, &coh)?;
    Ok(SweepPoint {
        record: SweepRecord {
            r: problem.config.r,
            n_env: problem.config.n_env,
            n_bar: problem.n_target,
            p_err_coh,
            p_err_opt,
            qa_db: qa.db(),
            fidelity_to_coherent: cmp.fidelity,
            photon_variance: analysis.photon_variance,
            phase_fwhm: analysis.phase_fwhm,
            coherence_value: analysis.coherence,
            sd_ratio_n: cmp.sd_ratio_n,
            sd_ratio_phi: cmp.sd_ratio_phi,
            coherence_ratio: cmp.coherence_ratio,
            iterations: result.iterations,
            converged: result.converged,
        },
        coeffs: result.coeffs.clone(),
        coeffs_imag: result.coeffs_imag.clone(),
        error: None,
    })
}

/// One record per reflectivity, in grid order. With warm starts the points
/// run in sequence and each optimum seeds the next; otherwise they run
/// concurrently. Either way the random starts of point `i` come from stream
/// `i` of the seed, so the output does not depend on scheduling.
pub fn sweep(
    r_grid: &[f64],
    template: &OptimizationProblem,
    opts: &SweepOptions,
) -> Result<Vec<SweepPoint>> {
    validate_grid(r_grid)?;
    template.validate()?;
    let point_opts = |i: usize, warm: Option<Vec<f64>>| OptimizeOptions {
        stream: i as u64,
        warm_start: warm,
        ..opts.optimize.clone()
    };
    if !opts.warm_start {
        return Ok(r_grid
            .par_iter()
            .enumerate()
            .map(|(i, &r)| evaluate_point(&template.with_r(r), &point_opts(i, None)))
            .collect());
    }
    let mut out: Vec<SweepPoint> = Vec::with_capacity(r_grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for (i, &r) in r_grid.iter().enumerate() {
        let point = evaluate_point(&template.with_r(r), &point_opts(i, warm.clone()));
        if point.record.converged {
            let mut x = point.coeffs.clone();
            x.extend_from_slice(&point.coeffs_imag);
            warm = Some(x);
        }
        log::info!(
            "r={r:.4} p_err={:.6e} qa={:.4e} dB converged={}",
            point.record.p_err_opt,
            point.record.qa_db,
            point.record.converged
        );
        out.push(point);
    }
    Ok(out)
}

pub fn validate_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() {
        return Err(invalid("r_grid", "grid is empty"));
    }
    for &r in r_grid {
        if !(0.0..=1.0).contains(&r) {
            return Err(invalid("r_grid", format!("reflectivity {r} outside [0, 1]")));
        }
    }
    if r_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("r_grid", "grid must be sorted"));
    }
    Ok(())
}

/// The default reflectivity grid: 25 log-spaced points on `[1e-3, 0.1]`
/// followed by 30 linear points on `[0.1, 0.99]`, with the shared endpoint
/// kept once.
pub fn default_r_grid() -> Vec<f64> {
    let mut g = log_space(1e-3, 0.1, 25);
    g.extend(lin_space(0.1, 0.99, 30));
    sort_dedup(g)
}

fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.log10(), b.log10());
    lin_space(la, lb, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

fn sort_dedup(mut g: Vec<f64>) -> Vec<f64> {
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    g
}

/// Parses a grid spec: `default`, `lin:a:b:n`, `log:a:b:n` or `list:r1,r2,…`,
/// joined with `+`. The result is sorted and deduplicated.
pub fn parse_r_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| invalid("r_grid", reason);
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("`{s}` is not a number")))
    };
    let mut out = Vec::new();
    for part in spec.split('+').map(str::trim) {
        if part.is_empty() {
            continue;
        }
        if part == "default" {
            out.extend(default_r_grid());
            continue;
        }
        let (kind, rest) = part
            .split_once(':')
            .ok_or_else(|| bad(format!("`{part}`: expected kind:args")))?;
        match kind {
            "lin" | "log" => {
                let args: Vec<&str> = rest.split(':').collect();
                if args.len() != 3 {
                    return Err(bad(format!("`{part}`: expected {kind}:start:stop:count")));
                }
                let (a, b) = (num(args[0])?, num(args[1])?);
                let n: usize = args[2]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("`{}` is not a count", args[2])))?;
                if kind == "log" {
                    if !(a > 0.0 && b > 0.0) {
                        return Err(bad(format!("`{part}`: log grid needs positive bounds")));
                    }
                    out.extend(log_space(a, b, n));
                } else {
                    out.extend(lin_space(a, b, n));
                }
            }
            "list" => {
                for v in rest.split(',').filter(|s| !s.trim().is_empty()) {
                    out.push(num(v)?);
                }
            }
            other => return Err(bad(format!("unknown grid kind `{other}`"))),
        }
    }
    let grid = sort_dedup(out);
    validate_grid(&grid)?;
    Ok(grid)
}

/// Result of the transition-reflectivity search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub r_t: f64,
    /// Final bracket around the sign change of `sd_ratio_phi − 1`.
    pub bracket: (f64, f64),
    /// Record of the optimum at `r_t`.
    pub record: SweepRecord,
    /// `(r, sd_ratio_phi)` at every evaluated reflectivity.
    pub evaluations: Vec<(f64, f64)>,
}

/// Width of the final bracket.
pub const TRANSITION_TOL: f64 = 1e-3;

/// Bisection on the sign of `sd_ratio_phi − 1` inside `bracket`.
pub fn find_transition_reflectivity(
    template: &OptimizationProblem,
    bracket: (f64, f64),
    opts: &OptimizeOptions,
) -> Result<Transition> {
    let (mut lo, mut hi) = bracket;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(invalid("bracket", format!("need 0 < lo < hi < 1, got ({lo}, {hi})")));
    }
    let mut evaluations = Vec::new();
    let mut eval = |r: f64| -> Result<(f64, SweepPoint)> {
        let point_opts = OptimizeOptions {
            stream: r.to_bits(),
            ..opts.clone()
        };
        let point = evaluate_point(&template.with_r(r), &point_opts);
        if !point.record.converged {
            return Err(Error::AllRestartsFailed {
                starts: opts.restarts + 1,
            });
        }
        evaluations.push((r, point.record.sd_ratio_phi));
        Ok((point.record.sd_ratio_phi - 1.0, point))
    };
    let (f_lo, _) = eval(lo)?;
    let (f_hi, _) = eval(hi)?;
    if f_lo.signum() == f_hi.signum() && f_lo != 0.0 && f_hi != 0.0 {
        return Err(Error::BracketFailure { lo, hi });
    }
    while hi - lo > TRANSITION_TOL {
        let mid = 0.5 * (lo + hi);
        let (f_mid, _) = eval(mid)?;
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_t = 0.5 * (lo + hi);
    let (_, point) = eval(r_t)?;
    Ok(Transition {
        r_t,
        bracket: (lo, hi),
        record: point.record,
        evaluations,
    })
}

/// Reference configuration used by the sweep helpers.
pub fn template(
    objective: crate::optimize::Objective,
    n_env: f64,
    n_bar: f64,
    dim: usize,
) -> Result<OptimizationProblem> {
    OptimizationProblem::new(objective, ChannelConfig::new(0.5, n_env, dim)?, n_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::Objective;
    use approx::assert_relative_eq;

    #[test]
    fn default_grid_shape() {
        let g = default_r_grid();
        assert_eq!(g.len(), 54);
        assert_relative_eq!(g[0], 1e-3, max_relative = 1e-14);
        assert_relative_eq!(*g.last().unwrap(), 0.99, max_relative = 1e-14);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_r_grid("list:0.5,0.1").unwrap(), vec![0.1, 0.5]);
        assert_eq!(parse_r_grid("lin:0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = parse_r_grid("log:1e-3:1e-1:3+list:0.5").unwrap();
        assert_eq!(g.len(), 4);
        assert_relative_eq!(g[1], 1e-2, max_relative = 1e-14);
        assert_eq!(parse_r_grid("default").unwrap(), default_r_grid());
        assert!(parse_r_grid("").is_err());
        assert!(parse_r_grid("list:").is_err());
        assert!(parse_r_grid("list:1.5").is_err());
        assert!(parse_r_grid("cubic:0:1:3").is_err());
        assert!(parse_r_grid("log:0:1:3").is_err());
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(f64::INFINITY), "inf");
        let v = 0.123_456_789_012_345_68;
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn analysis_examples() {
        let p = crate::fock::pnss(1.25, 8).unwrap();
        assert_relative_eq!(ProbeAnalysis::of(&p).unwrap().photon_variance, 0.1875, epsilon = 1e-12);
        let one = FockVector::fock(1, 8).unwrap();
        let a = ProbeAnalysis::of(&one).unwrap();
        assert_eq!(a.coherence, 0.0);
        assert_eq!(a.phase_fwhm, 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn athermal_three_points() {
        let t = template(Objective::HelstromDm, 0.0, 1.0, 8).unwrap();
        let opts = SweepOptions {
            optimize: OptimizeOptions {
                restarts: 2,
                ..OptimizeOptions::default()
            },
            ..SweepOptions::default()
        };
        let pts = sweep(&[1e-3, 0.5, 0.99], &t, &opts).unwrap();
        let qa: Vec<f64> = pts.iter().map(|p| p.record.qa_db).collect();
        assert!(qa.iter().all(|&q| q >= -1e-9), "{qa:?}");
        assert!(qa.windows(2).all(|w| w[1] >= w[0]), "{qa:?}");
        for p in &pts {
            let r = &p.record;
            assert!(r.converged);
            assert!(r.p_err_opt <= r.p_err_coh + 1e-9);
            assert!((r.qa_db - 10.0 * (r.p_err_coh / r.p_err_opt).log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let t = template(Objective::HelstromDm, 0.0, 1.0, 8).unwrap();
        assert!(sweep(&[], &t, &SweepOptions::default()).is_err());
        assert!(sweep(&[0.5, 0.1], &t, &SweepOptions::default()).is_err());
    }

    #[test]
    fn monotone_regime_has_no_transition() {
        let t = template(Objective::HelstromDm, 0.04, 0.04, 8).unwrap();
        let opts = OptimizeOptions {
            restarts: 2,
            ..OptimizeOptions::default()
        };
        let err = find_transition_reflectivity(&t, (0.1, 0.95), &opts).unwrap_err();
        assert!(matches!(err, Error::BracketFailure { .. }), "{err}");
    }
}

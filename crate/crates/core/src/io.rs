//! Documents and tables exchanged with the command line and plotting tools.
//!
//! States are JSON documents with complex numbers as `[re, im]` pairs; tables
//! are CSV with a header row, 17 significant digits and `\n` line endings.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockVector, PhaseDistribution, WignerGrid, WIGNER_CONVENTION};
use crate::sweep::{format_float, SweepPoint, SweepRecord, SWEEP_COLUMNS};

/// Largest normalization error accepted when reloading a pure state.
const LOAD_NORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub dim: usize,
    pub coeffs: Vec<[f64; 2]>,
}

impl StateDocument {
    pub fn from_state(v: &FockVector) -> Self {
        Self {
            dim: v.dim(),
            coeffs: v.coeffs().iter().map(|c| [c.re, c.im]).collect(),
        }
    }

    pub fn to_state(&self) -> Result<FockVector> {
        if self.coeffs.len() != self.dim {
            return Err(Error::Format(format!(
                "coeffs: expected {} entries, found {}",
                self.dim,
                self.coeffs.len()
            )));
        }
        let coeffs: Vec<Complex64> = self.coeffs.iter().map(|&[re, im]| Complex64::new(re, im)).collect();
        if let Some(i) = coeffs.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Format(format!("coeffs[{i}]: not a finite number")));
        }
        let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > LOAD_NORM_TOL {
            return Err(Error::NotNormalized {
                what: "Σ|c_n|²",
                value: norm,
            });
        }
        FockVector::new(coeffs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDocument {
    pub dim: usize,
    /// Row-major entries.
    pub entries: Vec<[f64; 2]>,
}

impl DensityDocument {
    pub fn from_density(rho: &DensityMatrix) -> Self {
        let d = rho.dim();
        let m = rho.entries();
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                entries.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        Self { dim: d, entries }
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        let d = self.dim;
        if self.entries.len() != d * d {
            return Err(Error::Format(format!(
                "entries: expected {} values for dim {d}, found {}",
                d * d,
                self.entries.len()
            )));
        }
        let m = DMatrix::from_fn(d, d, |i, j| {
            let [re, im] = self.entries[i * d + j];
            Complex64::new(re, im)
        });
        DensityMatrix::from_matrix(m)
    }
}

/// Parses JSON and names the failing location on error.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Format(format!("{what}: {e} (line {}, column {})", e.line(), e.column()))
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = SWEEP_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_fields().join(","));
        out.push('\n');
    }
    out
}

/// Reads a table written by [`sweep_csv`], matching columns by header name.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty table".into()))?
        .split(',')
        .collect();
    let index = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let cols: Vec<usize> = SWEEP_COLUMNS.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let row = line_no + 2;
        let get = |k: usize| -> Result<&str> {
            fields
                .get(cols[k])
                .copied()
                .ok_or_else(|| Error::Format(format!("line {row}: missing `{}`", SWEEP_COLUMNS[k])))
        };
        let f = |k: usize| -> Result<f64> {
            let s = get(k)?;
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {row}, `{}`: `{s}` is not a number", SWEEP_COLUMNS[k])))
        };
        out.push(SweepRecord {
            r: f(0)?,
            n_env: f(1)?,
            n_bar: f(2)?,
            p_err_coh: f(3)?,
            p_err_opt: f(4)?,
            qa_db: f(5)?,
            fidelity_to_coherent: f(6)?,
            photon_variance: f(7)?,
            phase_fwhm: f(8)?,
            coherence_value: f(9)?,
            sd_ratio_n: f(10)?,
            sd_ratio_phi: f(11)?,
            coherence_ratio: f(12)?,
            iterations: get(13)?
                .parse()
                .map_err(|_| Error::Format(format!("line {row}: bad `iterations`")))?,
            converged: get(14)?
                .parse()
                .map_err(|_| Error::Format(format!("line {row}: bad `converged`")))?,
        });
    }
    Ok(out)
}

/// Sidecar listing the optimal amplitudes of every sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStates {
    pub objective: String,
    pub n_env: f64,
    pub n_bar: f64,
    pub dim: usize,
    pub points: Vec<SweepStateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStateEntry {
    pub r: f64,
    pub converged: bool,
    pub coeffs: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepStateEntry {
    pub fn from_point(p: &SweepPoint) -> Self {
        let coeffs = p
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &re)| [re, p.coeffs_imag.get(i).copied().unwrap_or(0.0)])
            .collect();
        Self {
            r: p.record.r,
            converged: p.record.converged,
            coeffs,
            error: p.error.clone(),
        }
    }
}

pub fn phase_csv(dists: &[(&str, &PhaseDistribution)]) -> Result<String> {
    let Some((_, first)) = dists.first() else {
        return Ok("phi\n".into());
    };
    for (_, d) in dists {
        if d.phi != first.phi {
            return Err(Error::GridMismatch);
        }
    }
    let mut out = String::from("phi");
    for (name, _) in dists {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, phi) in first.phi.iter().enumerate() {
        out.push_str(&format_float(*phi));
        for (_, d) in dists {
            out.push(',');
            out.push_str(&format_float(d.prob[k]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Long-format grid table, `x` varying slowest.
pub fn wigner_csv(grid: &WignerGrid) -> String {
    let mut out = String::from("x,p,w\n");
    for (i, x) in grid.x_axis.iter().enumerate() {
        for (j, p) in grid.p_axis.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                format_float(*x),
                format_float(*p),
                format_float(grid.values[(i, j)])
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMeta {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerMeta {
    pub convention: String,
    pub x_axis: AxisMeta,
    pub p_axis: AxisMeta,
    pub integral: f64,
    pub max_value: f64,
    pub min_value: f64,
}

impl WignerMeta {
    pub fn of(grid: &WignerGrid) -> Self {
        let axis = |a: &[f64]| AxisMeta {
            min: a.first().copied().unwrap_or(0.0),
            max: a.last().copied().unwrap_or(0.0),
            points: a.len(),
        };
        Self {
            convention: WIGNER_CONVENTION.to_string(),
            x_axis: axis(&grid.x_axis),
            p_axis: axis(&grid.p_axis),
            integral: grid.integral(),
            max_value: grid.values.max(),
            min_value: grid.values.min(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_coefficients, phase_distribution, wigner};

    fn record(r: f64) -> SweepRecord {
        SweepRecord {
            r,
            n_env: 0.0,
            n_bar: 1.0,
            p_err_coh: 0.1,
            p_err_opt: 0.05,
            qa_db: 10.0 * 2f64.log10(),
            fidelity_to_coherent: 0.99,
            photon_variance: 0.5,
            phase_fwhm: 1.2,
            coherence_value: 3.0,
            sd_ratio_n: 0.7,
            sd_ratio_phi: 1.1,
            coherence_ratio: 0.9,
            iterations: 12,
            converged: true,
        }
    }

    #[test]
    fn sweep_table_round_trip() {
        let recs = vec![record(0.1), record(1.0 / 3.0)];
        let text = sweep_csv(&recs);
        assert!(text.starts_with("r,n_env,n_bar,p_err_coh,"));
        assert!(!text.contains('\r'));
        assert_eq!(parse_sweep_csv(&text).unwrap(), recs);
    }

    #[test]
    fn sweep_table_reports_missing_columns() {
        let err = parse_sweep_csv("r,n_env\n0.1,0\n").unwrap_err();
        assert!(err.to_string().contains("n_bar"));
    }

    #[test]
    fn state_round_trip() {
        let v = coherent_coefficients(1.0, 8).unwrap();
        let doc = StateDocument::from_state(&v);
        let text = to_json(&doc).unwrap();
        let back: StateDocument = parse_json(&text, "state").unwrap();
        // loading renormalizes, which may move the last bit
        let back = back.to_state().unwrap();
        for (a, b) in back.coeffs().iter().zip(v.coeffs()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn malformed_states_are_reported() {
        let err = parse_json::<StateDocument>("{\"dim\": 2, \"coeffs\": [[1, 0]", "state").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let doc = StateDocument {
            dim: 3,
            coeffs: vec![[1.0, 0.0]],
        };
        assert!(doc.to_state().is_err());
        let doc = StateDocument {
            dim: 2,
            coeffs: vec![[1.0, 0.0], [1.0, 0.0]],
        };
        assert!(matches!(doc.to_state(), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn density_round_trip() {
        let rho = coherent_coefficients(0.5, 4).unwrap().density_matrix();
        let doc = DensityDocument::from_density(&rho);
        assert_eq!(doc.to_density().unwrap(), rho);
    }

    #[test]
    fn grid_tables() {
        let v = coherent_coefficients(1.0, 8).unwrap().density_matrix();
        let p = phase_distribution(&v, 64).unwrap();
        let text = phase_csv(&[("ops", &p)]).unwrap();
        assert_eq!(text.lines().count(), 65);
        let g = wigner(&v, &[-1.0, 0.0, 1.0], &[0.0, 1.0]).unwrap();
        let text = wigner_csv(&g);
        assert_eq!(text.lines().count(), 7);
        assert_eq!(WignerMeta::of(&g).x_axis.points, 3);
    }
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use qtd_core::fock::{
    coherent_coefficients, distribution_fidelity, fidelity, phase_distribution, phase_overlap, pnss, FockVector,
    DEFAULT_PHASE_GRID,
};
use qtd_core::io::{sweep_csv, to_json, SweepStateEntry};
use qtd_core::optimize::{optimize_probe, Objective, OptimizeOptions};
use qtd_core::sweep::{
    default_r_grid, evaluate_point, find_transition_reflectivity, parse_r_grid, sweep, template, SweepOptions,
    SweepPoint,
};
use qtd_core::validation::{
    channel_equivalence, gradient_vs_finite_difference, pure_state_closed_form, SuiteReport,
};

const DIM: usize = 8;
const SEED: u64 = 2024;
const RIPPLE_DB: f64 = 0.05;
/// Interior-minimum depth, relative to the largest advantage on the grid.
const DIP_FRACTION: f64 = 0.05;
const NOISY_BRACKET: (f64, f64) = (0.1, 0.95);

struct Outcome {
    passed: bool,
    detail: String,
}

fn optimize_opts() -> OptimizeOptions {
    OptimizeOptions {
        seed: SEED,
        ..OptimizeOptions::default()
    }
}

fn sweep_opts() -> SweepOptions {
    SweepOptions {
        optimize: optimize_opts(),
        warm_start: true,
    }
}

fn probe_of(p: &SweepPoint) -> Option<FockVector> {
    let coeffs = p
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &re)| num_complex::Complex64::new(re, p.coeffs_imag.get(i).copied().unwrap_or(0.0)))
        .collect();
    FockVector::new(coeffs).ok()
}

/// Collected across criteria for the solver-integrity check.
#[derive(Default)]
struct Ledger {
    points: Vec<SweepPoint>,
    constraint_checks: usize,
    max_norm_violation: f64,
    max_mean_violation: f64,
}

impl Ledger {
    fn record_constraints(&mut self, coeffs: &[f64], imag: &[f64], n_target: f64) {
        let mut norm = 0.0;
        let mut mean = 0.0;
        for (n, &re) in coeffs.iter().enumerate() {
            let w = re * re + imag.get(n).map_or(0.0, |v| v * v);
            norm += w;
            mean += n as f64 * w;
        }
        self.constraint_checks += 1;
        self.max_norm_violation = self.max_norm_violation.max((norm - 1.0).abs());
        self.max_mean_violation = self.max_mean_violation.max((mean - n_target).abs());
    }

    fn add_points(&mut self, points: &[SweepPoint]) {
        for p in points.iter().filter(|p| p.record.converged) {
            self.record_constraints(&p.coeffs, &p.coeffs_imag, p.record.n_bar);
        }
        self.points.extend_from_slice(points);
    }
}

fn athermal(ledger: &mut Ledger) -> Outcome {
    let start = Instant::now();
    let grid = default_r_grid();
    let t = template(Objective::HelstromDm, 0.0, 1.0, DIM).unwrap();
    let points = sweep(&grid, &t, &sweep_opts()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    ledger.add_points(&points);

    let all_converged = points.iter().all(|p| p.record.converged);
    let qa: Vec<f64> = points.iter().map(|p| p.record.qa_db).collect();
    let min_qa = qa.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_drop = qa.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let first = &points[0].record;
    let last = points.last().unwrap();
    let one_photon = probe_of(last).map_or(f64::NAN, |v| v.coeffs()[1].norm_sqr());

    let passed = all_converged
        && min_qa >= -1e-6
        && first.qa_db <= 0.05
        && first.fidelity_to_coherent >= 0.99
        && one_photon >= 0.99
        && worst_drop <= RIPPLE_DB
        && secs < 600.0;
    Outcome {
        passed,
        detail: format!(
            "{} points, all converged {all_converged}, min qa {min_qa:.3e} dB, qa(1e-3) {:.3e} dB, \
             F_coh(1e-3) {:.6}, |c1|^2(0.99) {one_photon:.6}, largest drop {worst_drop:.3e} dB, runtime {secs:.1} s",
            points.len(),
            first.qa_db,
            first.fidelity_to_coherent
        ),
    }
}

fn pnss_agreement(ledger: &mut Ledger) -> Outcome {
    let mut worst_dist: f64 = 1.0;
    let mut worst_state: f64 = 1.0;
    let mut ok = true;
    for n_bar in [1.0, 1.25, 1.5, 1.75, 2.0] {
        let solve = |objective| {
            let t = template(objective, 0.0, n_bar, DIM).unwrap().with_r(0.99);
            optimize_probe(&t, &optimize_opts())
        };
        let (Ok(dm), Ok(ps)) = (solve(Objective::HelstromDm), solve(Objective::VacuumP0)) else {
            ok = false;
            continue;
        };
        ok &= dm.converged && ps.converged;
        for r in [&dm, &ps] {
            ledger.record_constraints(&r.coeffs, &r.coeffs_imag, n_bar);
        }
        let (a, b) = (dm.probe().unwrap(), ps.probe().unwrap());
        let diag = |v: &FockVector| v.coeffs().iter().map(|c| c.norm_sqr()).collect::<Vec<_>>();
        let fd = distribution_fidelity(&diag(&a), &diag(&b)).unwrap();
        let target = pnss(n_bar, DIM).unwrap();
        let fs = fidelity(&a.density_matrix(), &target.density_matrix()).unwrap();
        worst_dist = worst_dist.min(fd);
        worst_state = worst_state.min(fs);
    }
    Outcome {
        passed: ok && worst_dist >= 0.999 && worst_state >= 0.99,
        detail: format!("min DM/PS distribution fidelity {worst_dist:.6}, min DM/pnss fidelity {worst_state:.6}"),
    }
}

fn phase_overlap_method(ledger: &mut Ledger) -> Outcome {
    let mut worst: f64 = 1.0;
    let mut ok = true;
    for n_bar in [0.5, 1.0, 2.0] {
        let t = template(Objective::PhaseOverlap, 0.0, n_bar, DIM).unwrap().with_r(0.01);
        let Ok(res) = optimize_probe(&t, &optimize_opts()) else {
            ok = false;
            continue;
        };
        ok &= res.converged;
        ledger.record_constraints(&res.coeffs, &res.coeffs_imag, n_bar);
        let ops = phase_distribution(&res.probe().unwrap().density_matrix(), DEFAULT_PHASE_GRID).unwrap();
        let coh = coherent_coefficients(n_bar, DIM).unwrap().density_matrix();
        let coh = phase_distribution(&coh, DEFAULT_PHASE_GRID).unwrap();
        worst = worst.min(phase_overlap(&ops, &coh).unwrap());
    }
    Outcome {
        passed: ok && worst >= 0.999,
        detail: format!("min phase overlap with coherent {worst:.6}"),
    }
}

/// True if some grid point lies below the running maximum on both sides by
/// more than `tol`.
fn has_interior_minimum(qa: &[f64], tol: f64) -> bool {
    (1..qa.len().saturating_sub(1)).any(|i| {
        let left = qa[..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let right = qa[i + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        qa[i] < left - tol && qa[i] < right - tol
    })
}

fn noisy_regime(ledger: &mut Ledger) -> Outcome {
    let n_bar = 0.04;
    let mut notes = Vec::new();
    let mut ok = true;

    let t = template(Objective::HelstromDm, 0.04, n_bar, DIM).unwrap();
    let points = sweep(&default_r_grid(), &t, &sweep_opts()).unwrap();
    ledger.add_points(&points);
    let qa: Vec<f64> = points.iter().map(|p| p.record.qa_db).collect();
    let peak = qa.iter().copied().fold(0.0, f64::max);
    let dip = has_interior_minimum(&qa, DIP_FRACTION * peak);
    let converged = points.iter().all(|p| p.record.converged);
    ok &= converged && !dip;
    notes.push(format!("n_env 0.04: interior minimum {dip}, converged {converged}"));

    let mut r_ts = Vec::new();
    for n_env in [0.1, 0.2] {
        let t = template(Objective::HelstromDm, n_env, n_bar, DIM).unwrap();
        let tr = match find_transition_reflectivity(&t, NOISY_BRACKET, &optimize_opts()) {
            Ok(tr) => tr,
            Err(e) => {
                ok = false;
                notes.push(format!("n_env {n_env}: {e}"));
                continue;
            }
        };
        let r_t = tr.r_t;
        r_ts.push(r_t);
        let sample = |r: f64| {
            evaluate_point(
                &t.with_r(r),
                &OptimizeOptions {
                    stream: r.to_bits(),
                    ..optimize_opts()
                },
            )
        };
        let below: Vec<SweepPoint> = [0.15, 0.25, r_t - 0.05].into_iter().map(sample).collect();
        let above: Vec<SweepPoint> = [r_t + 0.05, 0.9, 0.99].into_iter().map(sample).collect();
        ledger.add_points(&below);
        ledger.add_points(&above);
        let below_ok = below
            .iter()
            .all(|p| p.record.converged && p.record.sd_ratio_phi < 1.0 && p.record.coherence_ratio > 1.0);
        let above_ok = above.iter().all(|p| p.record.converged && p.record.sd_ratio_n < 1.0);
        let at_ok = tr.record.qa_db <= 0.05 && tr.record.fidelity_to_coherent >= 0.99;
        ok &= below_ok && above_ok && at_ok;
        notes.push(format!(
            "n_env {n_env}: r_T {r_t:.4}, qa(r_T) {:.3e} dB, F_coh(r_T) {:.6}, below {below_ok}, above {above_ok}",
            tr.record.qa_db, tr.record.fidelity_to_coherent
        ));
    }
    let ordered = r_ts.len() == 2 && r_ts[1] > r_ts[0];
    ok &= ordered;
    notes.push(format!("r_T increases with n_env {ordered}"));
    Outcome {
        passed: ok,
        detail: notes.join("; "),
    }
}

fn suite_line(s: &SuiteReport) -> String {
    format!(
        "{} over {} cases ({} redrawn): max {:.3e} (tol {:.0e})",
        s.name, s.cases, s.skipped, s.max_deviation, s.tolerance
    )
}

fn channel_oracle() -> Outcome {
    let (entries, conservation) = channel_equivalence(100, DIM, SEED).unwrap();
    Outcome {
        passed: entries.passed && conservation.passed,
        detail: format!("{}; {}", suite_line(&entries), suite_line(&conservation)),
    }
}

fn discrimination_kernel() -> Outcome {
    let closed = pure_state_closed_form(200, DIM, SEED).unwrap();
    let grad = gradient_vs_finite_difference(50, DIM, SEED).unwrap();
    Outcome {
        passed: closed.passed && grad.passed && grad.cases == 50,
        detail: format!("{}; {}", suite_line(&closed), suite_line(&grad)),
    }
}

fn solver_integrity(ledger: &Ledger) -> Outcome {
    let helstrom_points: Vec<&SweepPoint> = ledger.points.iter().filter(|p| p.record.converged).collect();
    let worst_gap = helstrom_points
        .iter()
        .map(|p| p.record.p_err_opt - p.record.p_err_coh)
        .fold(f64::NEG_INFINITY, f64::max);

    // a short noisy sweep, repeated on the shared pool and on a single thread
    let grid = parse_r_grid("lin:0.1:0.9:9").unwrap();
    let t = template(Objective::HelstromDm, 0.2, 0.04, DIM).unwrap();
    let render = || {
        let points = sweep(&grid, &t, &sweep_opts()).unwrap();
        let records: Vec<_> = points.iter().map(|p| p.record.clone()).collect();
        let states: Vec<_> = points.iter().map(SweepStateEntry::from_point).collect();
        (sweep_csv(&records), to_json(&states).unwrap())
    };
    let a = render();
    let b = render();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = single.install(render);
    let identical = a == b && a == c;

    let passed = ledger.max_norm_violation <= 1e-10
        && ledger.max_mean_violation <= 1e-8
        && worst_gap <= 1e-9
        && identical;
    Outcome {
        passed,
        detail: format!(
            "{} converged optima: max |norm-1| {:.3e}, max |<n>-n_bar| {:.3e}; \
             max p_err_opt-p_err_coh {worst_gap:.3e} over {} sweep points; byte-identical repeat {identical}",
            ledger.constraint_checks,
            ledger.max_norm_violation,
            ledger.max_mean_violation,
            helstrom_points.len()
        ),
    }
}

fn main() -> ExitCode {
    let mut ledger = Ledger::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} [{name}]: {tag}: {}", o.detail);
        if !o.passed {
            failed += 1;
        }
    };
    report(1, "athermal sweep", athermal(&mut ledger));
    report(2, "number-squeezed agreement", pnss_agreement(&mut ledger));
    report(3, "phase-overlap method", phase_overlap_method(&mut ledger));
    report(4, "noisy regime", noisy_regime(&mut ledger));
    report(5, "channel oracle", channel_oracle());
    report(6, "discrimination kernel", discrimination_kernel());
    report(7, "solver integrity", solver_integrity(&ledger));
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

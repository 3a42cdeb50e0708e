mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use qtd_core::channel::{hypothesis_states, ChannelConfig};
use qtd_core::discrimination::{quantum_advantage, HelstromObjective};
use qtd_core::fock::{
    coherence, coherent_coefficients, counting_statistics, phase_distribution, phase_fwhm, wigner, FockState,
    FockVector, WignerGrid,
};
use qtd_core::io::{
    parse_json, phase_csv, sweep_csv, to_json, wigner_csv, DensityDocument, StateDocument, SweepStateEntry,
    SweepStates, WignerMeta,
};
use qtd_core::optimize::{optimize_probe, Objective};
use qtd_core::sweep::{describe_optimum, find_transition_reflectivity, sweep, Comparison, SweepOptions, SweepRecord};
use qtd_core::validation::{run_all, ValidationOptions};
use qtd_core::Error;

use config::{CommonArgs, RunConfig};

#[derive(Parser)]
#[command(name = "qtd", version, about = "Optimal single-mode probes for target detection through a lossy thermal channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the optimal probe at one reflectivity
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the two hypothesis states
        #[arg(long)]
        hypotheses: bool,
    },
    /// Optimize along a reflectivity grid for every n_env × n_bar × objective
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip warm starts and run grid points concurrently
        #[arg(long)]
        no_warm_start: bool,
    },
    /// Photon-number, phase and coherence statistics of a saved state
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// State document written by `optimize`
        #[arg(long, value_name = "FILE")]
        state: PathBuf,
    },
    /// Wigner function of a saved state on a square grid
    Wigner {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        state: PathBuf,
    },
    /// Run the randomized cross-checks
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

enum Failure {
    Validation(String),
    Config(String),
    NotConverged(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Config(_) => 2,
            Self::NotConverged(_) => 3,
            Self::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Validation(m) | Self::Config(m) | Self::NotConverged(m) | Self::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::AllRestartsFailed { .. }
            | Error::Infeasible(_)
            | Error::DegenerateSpectrum { .. }
            | Error::RankDeficient { .. }
            | Error::SingularKkt
            | Error::BracketFailure { .. } => Self::NotConverged(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn write(path: &Path, contents: &str) -> Outcome {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    write(path, &to_json(value)?)
}

fn tag(objective: Objective, n_env: f64, n_bar: f64) -> String {
    format!("{objective}_nenv{n_env}_nbar{n_bar}")
}

fn load_state(path: &Path) -> Result<FockVector, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let doc: StateDocument = parse_json(&text, &path.display().to_string())?;
    doc.to_state()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "state".into())
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    objective: Objective,
    objective_value: f64,
    record: &'a SweepRecord,
    kkt_residual: f64,
    restarts_used: usize,
    best_start: usize,
    normalization_error: f64,
    mean_photon: f64,
    prior: f64,
    dim: usize,
    seed: u64,
}

fn cmd_optimize(cfg: &RunConfig, hypotheses: bool) -> Outcome {
    let r = cfg
        .r
        .ok_or_else(|| Failure::Config("optimize needs --r (or sweep.r in the config file)".into()))?;
    let objective = RunConfig::single(&cfg.objectives, "objective").map_err(Failure::Config)?;
    let n_env = RunConfig::single(&cfg.n_env, "n_env").map_err(Failure::Config)?;
    let n_bar = RunConfig::single(&cfg.n_bar, "n_bar").map_err(Failure::Config)?;
    let problem = cfg.problem(objective, r, n_env, n_bar).map_err(Failure::Config)?;

    let result = optimize_probe(&problem, &cfg.optimize_options())?;
    let point = describe_optimum(&problem, &result)?;
    let probe = result.probe()?;
    let stem = format!("{}_r{r}", tag(objective, n_env, n_bar));
    write_json(&cfg.out.join(format!("ops_{stem}.json")), &StateDocument::from_state(&probe))?;
    write_json(
        &cfg.out.join(format!("summary_{stem}.json")),
        &OptimizeSummary {
            objective,
            objective_value: result.objective_value,
            record: &point.record,
            kkt_residual: result.kkt_residual,
            restarts_used: result.restarts_used,
            best_start: result.best_start,
            normalization_error: result.normalization_error(),
            mean_photon: result.mean_photon(),
            prior: cfg.prior,
            dim: cfg.dim,
            seed: cfg.seed,
        },
    )?;
    if hypotheses {
        let (rho0, rho1) = hypothesis_states(&probe, &problem.config)?;
        write_json(&cfg.out.join(format!("rho0_{stem}.json")), &DensityDocument::from_density(&rho0))?;
        write_json(&cfg.out.join(format!("rho1_{stem}.json")), &DensityDocument::from_density(&rho1))?;
    }
    let rec = &point.record;
    println!(
        "r={r} objective={objective} p_err_coh={:.10e} p_err={:.10e} qa_db={:.6e} converged={}",
        rec.p_err_coh, rec.p_err_opt, rec.qa_db, rec.converged
    );
    if !result.converged {
        return Err(Failure::NotConverged(format!("optimizer stopped without converging at r={r}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct TransitionDoc {
    n_env: f64,
    n_bar: f64,
    bracket: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    transition: Option<qtd_core::sweep::Transition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_sweep(cfg: &RunConfig, no_warm_start: bool) -> Outcome {
    let grid = cfg.grid().map_err(Failure::Config)?;
    let opts = SweepOptions {
        optimize: cfg.optimize_options(),
        warm_start: cfg.warm_start && !no_warm_start,
    };
    let mut failed_points = 0;
    for &objective in &cfg.objectives {
        for &n_env in &cfg.n_env {
            for &n_bar in &cfg.n_bar {
                let template = cfg.problem(objective, 0.5, n_env, n_bar).map_err(Failure::Config)?;
                let points = sweep(&grid, &template, &opts)?;
                let records: Vec<SweepRecord> = points.iter().map(|p| p.record.clone()).collect();
                let stem = format!("sweep_{}", tag(objective, n_env, n_bar));
                write(&cfg.out.join(format!("{stem}.csv")), &sweep_csv(&records))?;
                let states = SweepStates {
                    objective: objective.to_string(),
                    n_env,
                    n_bar,
                    dim: cfg.dim,
                    points: points.iter().map(SweepStateEntry::from_point).collect(),
                };
                write_json(&cfg.out.join(format!("{stem}.json")), &states)?;
                let converged = records.iter().filter(|r| r.converged).count();
                failed_points += records.len() - converged;
                println!("{stem}: {converged}/{} points converged", records.len());

                if let Some(bracket) = cfg.transition {
                    let doc = match find_transition_reflectivity(&template, bracket, &opts.optimize) {
                        Ok(t) => {
                            println!("{stem}: phase-width crossover at r={:.6}", t.r_t);
                            TransitionDoc {
                                n_env,
                                n_bar,
                                bracket,
                                transition: Some(t),
                                error: None,
                            }
                        }
                        Err(e) => {
                            // no crossover is an answer, not a failure
                            println!("{stem}: {e}");
                            TransitionDoc {
                                n_env,
                                n_bar,
                                bracket,
                                transition: None,
                                error: Some(e.to_string()),
                            }
                        }
                    };
                    let path = cfg.out.join(format!("transition_{}.json", tag(objective, n_env, n_bar)));
                    write_json(&path, &doc)?;
                }
            }
        }
    }
    if failed_points > 0 {
        return Err(Failure::NotConverged(format!("{failed_points} grid points did not converge")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Analysis {
    dim: usize,
    mean_photon: f64,
    photon_variance: f64,
    phase_fwhm: f64,
    coherence: f64,
    populations: Vec<f64>,
    /// Against the coherent state of equal mean photon number.
    #[serde(skip_serializing_if = "Option::is_none")]
    versus_coherent: Option<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    channel: Option<ChannelAnalysis>,
}

#[derive(Serialize)]
struct ChannelAnalysis {
    r: f64,
    n_env: f64,
    prior: f64,
    counting_statistics: Vec<f64>,
    p_err: f64,
    p_err_coh: f64,
    qa_db: f64,
}

fn cmd_analyze(cfg: &RunConfig, state: &Path) -> Outcome {
    let probe = load_state(state)?;
    let rho = probe.density_matrix();
    let phase = phase_distribution(&rho, cfg.phase_points)?;
    let coh = coherent_coefficients(probe.mean_photon(), probe.dim()).ok();
    let versus_coherent = coh.as_ref().map(|c| Comparison::new(&probe, c)).transpose()?;
    let populations: Vec<f64> = probe.coeffs().iter().map(|c| c.norm_sqr()).collect();

    let channel = match cfg.r {
        None => None,
        Some(r) => {
            let n_env = RunConfig::single(&cfg.n_env, "n_env").map_err(Failure::Config)?;
            let helstrom = HelstromObjective::new(ChannelConfig::new(r, n_env, probe.dim())?, cfg.prior)?;
            let p_err = helstrom.value(probe.coeffs())?;
            let coh = coh
                .as_ref()
                .ok_or_else(|| Failure::Config("no coherent reference fits this truncation".into()))?;
            let p_err_coh = helstrom.value(coh.coeffs())?;
            Some(ChannelAnalysis {
                r,
                n_env,
                prior: cfg.prior,
                counting_statistics: counting_statistics(&populations, r)?,
                p_err,
                p_err_coh,
                qa_db: quantum_advantage(p_err_coh, p_err)?.db(),
            })
        }
    };

    let analysis = Analysis {
        dim: probe.dim(),
        mean_photon: probe.mean_photon(),
        photon_variance: probe.photon_variance(),
        phase_fwhm: phase_fwhm(&phase),
        coherence: coherence(&rho),
        populations,
        versus_coherent,
        channel,
    };
    let stem = file_stem(state);
    write_json(&cfg.out.join(format!("analysis_{stem}.json")), &analysis)?;
    let csv = match &coh {
        Some(c) => {
            let ref_phase = phase_distribution(&c.density_matrix(), cfg.phase_points)?;
            phase_csv(&[("state", &phase), ("coherent", &ref_phase)])?
        }
        None => phase_csv(&[("state", &phase)])?,
    };
    write(&cfg.out.join(format!("phase_{stem}.csv")), &csv)?;
    println!(
        "{stem}: mean_photon={:.10} photon_variance={:.10} phase_fwhm={:.10} coherence={:.10}",
        analysis.mean_photon, analysis.photon_variance, analysis.phase_fwhm, analysis.coherence
    );
    Ok(())
}

fn cmd_wigner(cfg: &RunConfig, state: &Path) -> Outcome {
    let probe = load_state(state)?;
    let axis = WignerGrid::axis(cfg.wigner_half_width, cfg.wigner_points);
    let grid = wigner(&probe.density_matrix(), &axis, &axis)?;
    let stem = file_stem(state);
    write(&cfg.out.join(format!("wigner_{stem}.csv")), &wigner_csv(&grid))?;
    let meta = WignerMeta::of(&grid);
    write_json(&cfg.out.join(format!("wigner_{stem}.json")), &meta)?;
    let (peak, x, p) = grid.max();
    println!(
        "{stem}: max {peak:.10} at ({x}, {p}), min {:.10}, integral {:.10}",
        meta.min_value, meta.integral
    );
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Outcome {
    let opts = ValidationOptions {
        seed: cfg.seed,
        dim: cfg.dim,
        ..ValidationOptions::default()
    };
    let report = run_all(&opts)?;
    for s in &report.suites {
        println!(
            "{}: {} ({} cases, {} redrawn, max deviation {:.3e}, tolerance {:.0e})",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.cases,
            s.skipped,
            s.max_deviation,
            s.tolerance
        );
    }
    write_json(&cfg.out.join("validation.json"), &report)?;
    if !report.passed() {
        return Err(Failure::Validation("one or more suites failed".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let common = match &cli.command {
        Command::Optimize { common, .. }
        | Command::Sweep { common, .. }
        | Command::Analyze { common, .. }
        | Command::Wigner { common, .. }
        | Command::Validate { common } => common,
    };
    let cfg = RunConfig::load(common).map_err(Failure::Config)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Failure::Config(format!("workers: {e}")))?;
    }
    match &cli.command {
        Command::Optimize { hypotheses, .. } => cmd_optimize(&cfg, *hypotheses),
        Command::Sweep { no_warm_start, .. } => cmd_sweep(&cfg, *no_warm_start),
        Command::Analyze { state, .. } => cmd_analyze(&cfg, state),
        Command::Wigner { state, .. } => cmd_wigner(&cfg, state),
        Command::Validate { .. } => cmd_validate(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

//! Run configuration: an optional TOML file overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use qtd_core::optimize::{Objective, OptimizationProblem};
use qtd_core::sweep::{parse_r_grid, template};

/// Output directory used when neither a flag nor the config file names one.
pub const OUT_DIR_ENV: &str = "QTD_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "out";

/// A scalar or a list in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v],
            Self::Many(v) => v,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    probe: ProbeSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    grids: GridSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    n_env: Option<OneOrMany<f64>>,
    dim: Option<usize>,
    prior: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSection {
    n_bar: Option<OneOrMany<f64>>,
    objective: Option<OneOrMany<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    r: Option<f64>,
    r_grid: Option<String>,
    warm_start: Option<bool>,
    transition: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    restarts: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    max_iterations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    phase_points: Option<usize>,
    wigner_half_width: Option<f64>,
    wigner_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Beam-splitter reflectivity
    #[arg(long)]
    pub r: Option<f64>,

    /// Reflectivity grid: default, lin:a:b:n, log:a:b:n or list:r1,r2,... joined with '+'
    #[arg(long, value_name = "SPEC")]
    pub r_grid: Option<String>,

    /// Thermal environment occupation(s), comma separated
    #[arg(long, value_delimiter = ',')]
    pub n_env: Option<Vec<f64>>,

    /// Probe mean photon number(s), comma separated
    #[arg(long, value_delimiter = ',')]
    pub n_bar: Option<Vec<f64>>,

    /// Fock-space truncation of the probe [default: 8]
    #[arg(long)]
    pub dim: Option<usize>,

    /// Objective(s): dm, ps or po, comma separated [default: dm]
    #[arg(long, value_delimiter = ',')]
    pub objective: Option<Vec<String>>,

    /// Prior probability of the target-absent hypothesis [default: 0.5]
    #[arg(long)]
    pub prior: Option<f64>,

    /// Random starts besides the coherent and warm starts [default: 8]
    #[arg(long)]
    pub restarts: Option<usize>,

    /// Seed for the random starts [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory [default: $QTD_OUT_DIR, else ./out]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads; 0 uses every available core
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub r: Option<f64>,
    pub r_grid: String,
    pub n_env: Vec<f64>,
    pub n_bar: Vec<f64>,
    pub dim: usize,
    pub objectives: Vec<Objective>,
    pub prior: f64,
    pub restarts: usize,
    pub seed: u64,
    pub workers: usize,
    pub max_iterations: usize,
    pub warm_start: bool,
    pub transition: Option<(f64, f64)>,
    pub phase_points: usize,
    pub wigner_half_width: f64,
    pub wigner_points: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    /// Reads the config file named by `args`, if any, applies the flags and
    /// validates the result.
    pub fn load(args: &CommonArgs) -> Result<Self, String> {
        let file = match &args.config {
            Some(path) => read_file(path)?,
            None => ConfigFile::default(),
        };
        let env_out = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let cfg = Self::resolve(file, args, env_out)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(file: ConfigFile, args: &CommonArgs, env_out: Option<PathBuf>) -> Result<Self, String> {
        let objectives = args
            .objective
            .clone()
            .or_else(|| file.probe.objective.map(OneOrMany::into_vec))
            .unwrap_or_else(|| vec!["dm".into()])
            .iter()
            .map(|s| s.parse::<Objective>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let defaults = qtd_core::optimize::OptimizeOptions::default();
        Ok(Self {
            r: args.r.or(file.sweep.r),
            r_grid: args
                .r_grid
                .clone()
                .or(file.sweep.r_grid)
                .unwrap_or_else(|| "default".into()),
            n_env: args
                .n_env
                .clone()
                .or_else(|| file.channel.n_env.map(OneOrMany::into_vec))
                .unwrap_or_else(|| vec![0.0]),
            n_bar: args
                .n_bar
                .clone()
                .or_else(|| file.probe.n_bar.map(OneOrMany::into_vec))
                .unwrap_or_else(|| vec![1.0]),
            dim: args.dim.or(file.channel.dim).unwrap_or(qtd_core::fock::DEFAULT_DIM),
            objectives,
            prior: args.prior.or(file.channel.prior).unwrap_or(0.5),
            restarts: args.restarts.or(file.solver.restarts).unwrap_or(defaults.restarts),
            seed: args.seed.or(file.solver.seed).unwrap_or(0),
            workers: args.workers.or(file.solver.workers).unwrap_or(0),
            max_iterations: file
                .solver
                .max_iterations
                .unwrap_or(defaults.solver.max_iterations),
            warm_start: file.sweep.warm_start.unwrap_or(true),
            transition: file.sweep.transition.map(|[lo, hi]| (lo, hi)),
            phase_points: file.grids.phase_points.unwrap_or(qtd_core::fock::DEFAULT_PHASE_GRID),
            wigner_half_width: file.grids.wigner_half_width.unwrap_or(6.0),
            wigner_points: file.grids.wigner_points.unwrap_or(121),
            out: args
                .out
                .clone()
                .or(file.output.dir)
                .or(env_out)
                .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR)),
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(r) = self.r {
            if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
                return Err(format!("r = {r} is outside [0, 1]"));
            }
        }
        parse_r_grid(&self.r_grid).map_err(|e| e.to_string())?;
        for (name, list) in [("n_env", &self.n_env), ("n_bar", &self.n_bar)] {
            if list.is_empty() {
                return Err(format!("{name}: at least one value is needed"));
            }
        }
        if self.objectives.is_empty() {
            return Err("objective: at least one value is needed".into());
        }
        // both error probabilities vanish at a certain prior, so qa is 0/0
        if !(0.0 < self.prior && self.prior < 1.0) {
            return Err(format!("prior = {} must lie strictly between 0 and 1", self.prior));
        }
        if self.dim < 2 {
            return Err(format!("dim = {} is too small", self.dim));
        }
        // the core constructors own the physical domain checks
        for &n_env in &self.n_env {
            for &n_bar in &self.n_bar {
                let p = self.problem(Objective::HelstromDm, self.r.unwrap_or(0.5), n_env, n_bar)?;
                p.validate().map_err(|e| e.to_string())?;
            }
        }
        if let Some((lo, hi)) = self.transition {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(format!("transition bracket ({lo}, {hi}) must satisfy 0 < lo < hi < 1"));
            }
        }
        if !(self.wigner_half_width.is_finite() && self.wigner_half_width > 0.0) || self.wigner_points == 0 {
            return Err("wigner grid needs a positive half width and at least one point".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<f64>, String> {
        parse_r_grid(&self.r_grid).map_err(|e| e.to_string())
    }

    pub fn problem(&self, objective: Objective, r: f64, n_env: f64, n_bar: f64) -> Result<OptimizationProblem, String> {
        let mut p = template(objective, n_env, n_bar, self.dim)
            .map_err(|e| e.to_string())?
            .with_r(r);
        p.p0 = self.prior;
        p.phase_grid = self.phase_points;
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }

    pub fn optimize_options(&self) -> qtd_core::optimize::OptimizeOptions {
        let mut opts = qtd_core::optimize::OptimizeOptions {
            restarts: self.restarts,
            seed: self.seed,
            ..Default::default()
        };
        opts.solver.max_iterations = self.max_iterations;
        opts
    }

    /// The single value of a list-valued setting, for commands that take one.
    pub fn single<T: Copy>(list: &[T], name: &str) -> Result<T, String> {
        match list {
            [v] => Ok(*v),
            _ => Err(format!("{name}: this command takes exactly one value, got {}", list.len())),
        }
    }
}

fn read_file(path: &Path) -> Result<ConfigFile, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

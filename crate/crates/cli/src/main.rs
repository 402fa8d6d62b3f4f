//! `dln` — exact global minima of deep linear networks with weight decay
//! and stochastic (dropout-like) neurons.
//!
//! Subcommands: `solve`, `classify`, `phase-diagram`, `verify`, `landscape`,
//! `variance`, `gen-data`. Every command is deterministic given its options
//! and seed; CSV outputs are byte-identical across repeat runs. Exit codes:
//! 0 success, 2 invalid configuration or input, 3 numerical failure.

mod commands;
mod files;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dln_core::{
    Activation, Architecture, DataMoments, Error, HomogeneousArchitecture, Result, SweepAxis,
};

#[derive(Parser, Debug)]
#[command(
    name = "dln",
    version,
    about = "Exact global minima of deep linear networks with weight decay and stochastic neurons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute, assemble, and certify the exact global minimum.
    Solve(SolveArgs),
    /// Label the regime of an instance (trivial vs nontrivial global, bad
    /// local minimum at zero), optionally without consulting the solver.
    Classify(ClassifyArgs),
    /// Sweep weight decay and signal strength over a homogeneous family
    /// and label every cell with solver resolution.
    PhaseDiagram(PhaseDiagramArgs),
    /// Check the certified minimum against seeded gradient-descent restarts.
    Verify(VerifyArgs),
    /// Scan the empirical loss of a one-hidden-layer network along the
    /// solution family on a dataset, under a chosen activation.
    Landscape(LandscapeArgs),
    /// Prediction-variance sweep across width, noise, or depth.
    Variance(VarianceArgs),
    /// Generate a seeded linear-teacher dataset CSV.
    GenData(GenDataArgs),
}

/// Architecture source: a JSON file, individual flags, or both (flags
/// override fields read from the file).
#[derive(Args, Debug, Clone, Serialize)]
struct ArchArgs {
    /// Architecture JSON file (fields: input_dim, widths, noise_vars,
    /// gamma_u, gammas; optional depth for cross-checking).
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Input dimension (overrides the file).
    #[arg(long)]
    input_dim: Option<usize>,
    /// Hidden-layer widths, comma separated (overrides the file).
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Per-layer noise variances, comma separated (overrides the file).
    #[arg(long, value_delimiter = ',')]
    noise_vars: Option<Vec<f64>>,
    /// Read-out weight decay (overrides the file).
    #[arg(long)]
    gamma_u: Option<f64>,
    /// Per-layer weight decay strengths, comma separated (overrides the file).
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
}

impl ArchArgs {
    fn resolve(&self) -> Result<Architecture> {
        let base = match &self.arch {
            Some(p) => Some(files::read_architecture(p)?),
            None => None,
        };
        let get = |field: &str, flag: Option<&dyn std::fmt::Debug>| -> Result<()> {
            if flag.is_none() && base.is_none() {
                return Err(Error::config(format!(
                    "missing {field}: provide --arch <file> or --{field}",
                )));
            }
            Ok(())
        };
        get("input-dim", self.input_dim.as_ref().map(|v| v as _))?;
        get("widths", self.widths.as_ref().map(|v| v as _))?;
        get("noise-vars", self.noise_vars.as_ref().map(|v| v as _))?;
        get("gamma-u", self.gamma_u.as_ref().map(|v| v as _))?;
        get("gammas", self.gammas.as_ref().map(|v| v as _))?;
        let input_dim = self
            .input_dim
            .unwrap_or_else(|| base.as_ref().unwrap().input_dim());
        let widths = self
            .widths
            .clone()
            .unwrap_or_else(|| base.as_ref().unwrap().widths().to_vec());
        let noise_vars = self
            .noise_vars
            .clone()
            .unwrap_or_else(|| base.as_ref().unwrap().noise_vars().to_vec());
        let gamma_u = self
            .gamma_u
            .unwrap_or_else(|| base.as_ref().unwrap().gamma_u());
        let gammas = self
            .gammas
            .clone()
            .unwrap_or_else(|| base.as_ref().unwrap().gammas().to_vec());
        Architecture::new(input_dim, widths, noise_vars, gamma_u, gammas)
    }
}

/// Moment source: a moments JSON file or a dataset CSV to estimate from.
#[derive(Args, Debug, Clone, Serialize)]
struct MomentArgs {
    /// Moments JSON file (dim, a0, exy, ey2, optional mean_x/mean_y).
    #[arg(long, conflicts_with = "data")]
    moments: Option<PathBuf>,
    /// Dataset CSV (header x_1,...,x_d,y); moments are estimated from it.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl MomentArgs {
    fn resolve(&self) -> Result<DataMoments> {
        match (&self.moments, &self.data) {
            (Some(p), None) => files::read_moments(p),
            (None, Some(p)) => Ok(files::read_dataset(p)?.moments()),
            (None, None) => Err(Error::config(
                "no input: provide --moments <json> or --data <csv>",
            )),
            (Some(_), Some(_)) => unreachable!("clap rejects the conflict"),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    input: MomentArgs,
    /// Output path for the solution JSON.
    #[arg(long, default_value = "solution.json")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ClassifyArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    input: MomentArgs,
    /// Report bound-based labels only; skip the exact solver resolution.
    #[arg(long)]
    no_solver: bool,
    /// Output path for the classification JSON.
    #[arg(long, default_value = "classification.json")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PhaseDiagramArgs {
    /// Number of hidden layers of the homogeneous family.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Input dimension = hidden width of the homogeneous family.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Shared noise variance.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Smallest weight decay in the sweep (inclusive).
    #[arg(long)]
    gamma_min: f64,
    /// Largest weight decay in the sweep (inclusive).
    #[arg(long)]
    gamma_max: f64,
    /// Number of weight-decay grid points.
    #[arg(long)]
    gamma_steps: usize,
    /// Signal strengths ||E[xy]|| to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    signal: Vec<f64>,
    /// E[y^2] is set to signal^2 plus this slack (keeps instances realizable).
    #[arg(long, default_value_t = 1.0)]
    ey2_slack: f64,
    /// Output CSV path.
    #[arg(long, default_value = "phase_diagram.csv")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    input: MomentArgs,
    /// Number of gradient-descent restarts.
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    /// Base seed; restart k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Uniform initialization radius for the restarts.
    #[arg(long, default_value_t = 1.0)]
    init_radius: f64,
    /// Gradient-descent step size.
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Iteration cap per restart.
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Output CSV path.
    #[arg(long, default_value = "verify.csv")]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum ActivationArg {
    Linear,
    Relu,
    Tanh,
    Swish,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Activation {
        match a {
            ActivationArg::Linear => Activation::Linear,
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Swish => Activation::Swish,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct LandscapeArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Dataset CSV to evaluate the empirical loss on.
    #[arg(long)]
    data: PathBuf,
    /// Hidden-layer activation for the scan.
    #[arg(long, value_enum, default_value_t = ActivationArg::Linear)]
    activation: ActivationArg,
    /// Left end of the scanned read-out scale.
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    b_min: f64,
    /// Right end of the scanned read-out scale.
    #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
    b_max: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 401)]
    steps: usize,
    /// Seed recorded for reproducibility (the scan itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "landscape.csv")]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum SweepArg {
    Width,
    Noise,
    Depth,
}

impl From<SweepArg> for SweepAxis {
    fn from(s: SweepArg) -> SweepAxis {
        match s {
            SweepArg::Width => SweepAxis::Width,
            SweepArg::Noise => SweepAxis::Noise,
            SweepArg::Depth => SweepAxis::Depth,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct VarianceArgs {
    /// Number of hidden layers of the base homogeneous family.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Input dimension = hidden width of the base family.
    #[arg(long)]
    dim: usize,
    /// Shared noise variance of the base family.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Shared weight decay of the base family.
    #[arg(long)]
    gamma: f64,
    /// Axis to sweep.
    #[arg(long, value_enum)]
    sweep: SweepArg,
    /// Grid of swept values, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[command(flatten)]
    input: MomentArgs,
    /// Build isotropic moments with this ||E[xy]|| instead of reading them.
    #[arg(long, conflicts_with_all = ["moments", "data"])]
    signal: Option<f64>,
    /// E[y^2] slack above signal^2 when --signal is used.
    #[arg(long, default_value_t = 1.0)]
    ey2_slack: f64,
    /// Output CSV path.
    #[arg(long, default_value = "variance.csv")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    /// Input dimension.
    #[arg(long)]
    dim: usize,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Norm the linear teacher is rescaled to.
    #[arg(long)]
    v_norm: f64,
    /// Standard deviation of additive label noise.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "dataset.csv")]
    out: PathBuf,
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn finish(
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
) -> Result<()> {
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let manifest = files::write_manifest(command, config, seed, &refs)?;
    println!("manifest written to {}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(args) => {
            let config = snapshot(&args);
            let arch = args.arch.resolve()?;
            let moments = args.input.resolve()?;
            let outputs = commands::solve(&arch, &moments, &args.out)?;
            finish("solve", config, None, outputs)
        }
        Command::Classify(args) => {
            let config = snapshot(&args);
            let arch = args.arch.resolve()?;
            let moments = args.input.resolve()?;
            let outputs = commands::classify_cmd(&arch, &moments, !args.no_solver, &args.out)?;
            finish("classify", config, None, outputs)
        }
        Command::PhaseDiagram(args) => {
            let config = snapshot(&args);
            let outputs = commands::phase_diagram(
                args.depth,
                args.dim,
                args.noise,
                args.gamma_min,
                args.gamma_max,
                args.gamma_steps,
                &args.signal,
                args.ey2_slack,
                &args.out,
            )?;
            finish("phase-diagram", config, None, outputs)
        }
        Command::Verify(args) => {
            let config = snapshot(&args);
            let arch = args.arch.resolve()?;
            let moments = args.input.resolve()?;
            let outputs = commands::verify(
                &arch,
                &moments,
                args.restarts,
                args.seed,
                args.init_radius,
                args.learning_rate,
                args.max_steps,
                &args.out,
            )?;
            finish("verify", config, Some(args.seed), outputs)
        }
        Command::Landscape(args) => {
            let config = snapshot(&args);
            let arch = args.arch.resolve()?;
            let data = files::read_dataset(&args.data)?;
            let outputs = commands::landscape(
                &arch,
                &data,
                args.activation.into(),
                args.b_min,
                args.b_max,
                args.steps,
                args.seed,
                &args.out,
            )?;
            finish("landscape", config, Some(args.seed), outputs)
        }
        Command::Variance(args) => {
            let config = snapshot(&args);
            let family = HomogeneousArchitecture {
                depth: args.depth,
                dim: args.dim,
                noise_var: args.noise,
                gamma: args.gamma,
            };
            let moments = if let Some(m) = args.signal {
                let mut e = nalgebra::DVector::zeros(args.dim);
                if args.dim > 0 {
                    e[0] = m;
                }
                DataMoments::centered(
                    nalgebra::DMatrix::identity(args.dim, args.dim),
                    e,
                    m * m + args.ey2_slack,
                )?
            } else {
                args.input.resolve()?
            };
            let outputs =
                commands::variance(&family, &moments, args.sweep.into(), &args.grid, &args.out)?;
            finish("variance", config, None, outputs)
        }
        Command::GenData(args) => {
            let config = snapshot(&args);
            let outputs = commands::gen_data(
                args.dim,
                args.n,
                args.v_norm,
                args.noise_std,
                args.seed,
                &args.out,
            )?;
            finish("gen-data", config, Some(args.seed), outputs)
        }
    }
}

/// Restore the default SIGPIPE disposition so piping into a pager or `head`
/// ends the process quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

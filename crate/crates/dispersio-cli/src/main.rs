//! `dispersio`: certify, extend, and integrate time-dispersive
//! dissipative linear systems from the command line.
//!
//! Each invocation performs one run and writes its artifacts (CSV tables,
//! system descriptions, and a `summary.json`) into the output directory.
//! Exit codes: 0 on success, 1 when a computation fails or a requested
//! certificate does not hold, 2 for usage errors.

mod artifacts;
mod config;
mod formats;
mod runs;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{usage, ConfigFile, UsageError};

#[derive(Parser)]
#[command(
    name = "dispersio",
    version,
    about = "Dissipation certificates, conservative extensions, and simulators for dispersive linear systems",
    arg_required_else_help = true
)]
struct Cli {
    /// Configuration file with `[section] key = value` entries; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for run artifacts (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for randomized probing.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the power dissipation condition of a sampled memory kernel
    Pdc(PdcArgs),
    /// Build a hidden-mode conservative extension from a spectral density
    Build(BuildArgs),
    /// Integrate a system file, directly or through its extension
    Simulate(SimArgs),
    /// Self-contained worked examples with their accuracy metrics
    #[command(subcommand)]
    Demo(DemoCmd),
    /// Density to extension to transform and back; reports the agreement
    Roundtrip(RoundtripArgs),
    /// Recover a boundary density from a dissipative transform
    Invert(InvertArgs),
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Damped oscillator with a flat-band extension, checked against its envelope
    Oscillator(OscillatorArgs),
    /// Transverse Maxwell mode in a Lorentz medium, checked against the susceptibility
    Lorentz(LorentzDemoArgs),
    /// Scalar Lorentz-kernel system integrated by both simulators
    Scalar(ScalarDemoArgs),
}

#[derive(Args)]
pub struct PdcArgs {
    /// Sampled kernel CSV: `t, re_a_i_j, im_a_i_j, ...` on a uniform grid from t = 0.
    #[arg(long, value_name = "FILE")]
    kernel: Option<PathBuf>,
    /// Scalar instantaneous part added as `alpha_inf * I`.
    #[arg(long, value_name = "LAMBDA", allow_hyphen_values = true)]
    alpha_inf: Option<f64>,
    /// Largest probe time (default: the sampled horizon).
    #[arg(long, value_name = "T", allow_hyphen_values = true)]
    t_max: Option<f64>,
    /// Number of probe times.
    #[arg(long, value_name = "N")]
    times: Option<usize>,
    /// Random Gram submatrices examined per subset size.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Negativity tolerance for the verdict; must be positive.
    #[arg(long, value_name = "TOL", allow_hyphen_values = true)]
    tol: Option<f64>,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Spectral density CSV: `sigma, dsigma, re_n_i_j, im_n_i_j, ...`.
    #[arg(long, value_name = "FILE")]
    density: Option<PathBuf>,
    /// Scalar instantaneous part realized as a flat band `alpha_inf * I`.
    #[arg(long, value_name = "LAMBDA", allow_hyphen_values = true)]
    alpha_inf: Option<f64>,
    /// Half-width of the flat band (default: just beyond the density support).
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    r_tail: Option<f64>,
    /// Number of flat-band nodes (default: resolution-matched).
    #[arg(long, value_name = "N")]
    tail_nodes: Option<usize>,
}

#[derive(Args)]
pub struct SimArgs {
    /// System description JSON produced by `build` or a demo.
    #[arg(long, value_name = "FILE")]
    system: Option<PathBuf>,
    /// Forcing CSV `t, re_f_i, im_f_i, ...` on a uniform grid (default: none).
    #[arg(long, value_name = "FILE")]
    forcing: Option<PathBuf>,
    /// Time step.
    #[arg(long, value_name = "DT", allow_hyphen_values = true)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long, value_name = "T", allow_hyphen_values = true)]
    t_end: Option<f64>,
    /// Propagator for extended systems: `eigen` or `trapezoid`.
    #[arg(long, value_name = "NAME")]
    method: Option<String>,
    /// Also write the hidden-mode trajectory (extended systems only).
    #[arg(long)]
    dump_hidden: bool,
}

#[derive(Args)]
pub struct OscillatorArgs {
    /// Friction coefficient (0 gives the conservative control).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Half-width of the flat hidden band.
    #[arg(long = "R", value_name = "R", allow_hyphen_values = true)]
    band: Option<f64>,
    /// Number of hidden modes.
    #[arg(long = "K", value_name = "K")]
    modes: Option<usize>,
    /// Time step.
    #[arg(long, value_name = "DT", allow_hyphen_values = true)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long, value_name = "T", allow_hyphen_values = true)]
    t_end: Option<f64>,
}

#[derive(Args)]
pub struct LorentzDemoArgs {
    /// Plasma frequency of the medium.
    #[arg(long, allow_hyphen_values = true)]
    wp: Option<f64>,
    /// Resonance frequency of the medium.
    #[arg(long, allow_hyphen_values = true)]
    w0: Option<f64>,
    /// Damping rate of the medium.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Wavenumber of the transverse mode.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    /// Half-width of the hidden-mode band.
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    radius: Option<f64>,
    /// Number of hidden modes.
    #[arg(long, value_name = "N")]
    modes: Option<usize>,
    /// Time step.
    #[arg(long, value_name = "DT", allow_hyphen_values = true)]
    dt: Option<f64>,
    /// Final time of each sweep run.
    #[arg(long, value_name = "T", allow_hyphen_values = true)]
    t_end: Option<f64>,
}

#[derive(Args)]
pub struct ScalarDemoArgs {
    /// Plasma frequency of the kernel.
    #[arg(long, allow_hyphen_values = true)]
    wp: Option<f64>,
    /// Resonance frequency of the kernel.
    #[arg(long, allow_hyphen_values = true)]
    w0: Option<f64>,
    /// Damping rate of the kernel.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Half-width of the hidden-mode band.
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    radius: Option<f64>,
    /// Number of hidden modes.
    #[arg(long, value_name = "N")]
    modes: Option<usize>,
    /// Time step.
    #[arg(long, value_name = "DT", allow_hyphen_values = true)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long, value_name = "T", allow_hyphen_values = true)]
    t_end: Option<f64>,
}

#[derive(Args)]
pub struct RoundtripArgs {
    /// Closed-form model to round-trip; `lorentz` is available.
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
    /// Plasma frequency.
    #[arg(long, allow_hyphen_values = true)]
    wp: Option<f64>,
    /// Resonance frequency.
    #[arg(long, allow_hyphen_values = true)]
    w0: Option<f64>,
    /// Damping rate.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Half-width of the density window.
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    radius: Option<f64>,
    /// Number of density nodes.
    #[arg(long, value_name = "N")]
    modes: Option<usize>,
    /// Number of transform probe points for the final comparison.
    #[arg(long, value_name = "N")]
    probes: Option<usize>,
    /// Comma-separated boundary offsets for the inversion, e.g. `0.12,0.06`.
    #[arg(long, value_name = "LIST")]
    etas: Option<String>,
}

#[derive(Args)]
pub struct InvertArgs {
    /// Closed-form transform to invert; `lorentz` is available.
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
    /// Sampled kernel CSV whose transform is inverted instead.
    #[arg(long, value_name = "FILE")]
    kernel: Option<PathBuf>,
    /// Plasma frequency (model transforms).
    #[arg(long, allow_hyphen_values = true)]
    wp: Option<f64>,
    /// Resonance frequency (model transforms).
    #[arg(long, allow_hyphen_values = true)]
    w0: Option<f64>,
    /// Damping rate (model transforms).
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Scalar instantaneous part for sampled kernels.
    #[arg(long, value_name = "LAMBDA", allow_hyphen_values = true)]
    alpha_inf: Option<f64>,
    /// Left edge of the recovery window.
    #[arg(long, value_name = "S", allow_hyphen_values = true)]
    sigma_min: Option<f64>,
    /// Right edge of the recovery window.
    #[arg(long, value_name = "S", allow_hyphen_values = true)]
    sigma_max: Option<f64>,
    /// Number of recovery nodes.
    #[arg(long, value_name = "N")]
    nodes: Option<usize>,
    /// Comma-separated boundary offsets, largest first, e.g. `1e-3,5e-4`.
    #[arg(long, value_name = "LIST")]
    etas: Option<String>,
    /// Cap on the extrapolation residual before a node counts as singular; must be positive.
    #[arg(long, value_name = "CAP", allow_hyphen_values = true)]
    residual_cap: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(if err.is::<UsageError>() { 2 } else { 1 });
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let out = cli
        .out
        .or_else(|| cfg.raw("run", "out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = match cli.seed {
        Some(s) => Some(s),
        None => cfg
            .raw("run", "seed")
            .map(|raw| {
                raw.parse::<u64>()
                    .map_err(|e| usage(format!("configuration key `run.seed`: cannot parse `{raw}`: {e}")))
            })
            .transpose()?,
    };

    let mut ws = artifacts::Workspace::new(&out)?;
    let ctx = runs::RunContext { cfg: &cfg, seed };
    let result = match &cli.command {
        Command::Pdc(args) => runs::pdc(args, &ctx, &mut ws),
        Command::Build(args) => runs::build(args, &ctx, &mut ws),
        Command::Simulate(args) => runs::simulate(args, &ctx, &mut ws),
        Command::Demo(DemoCmd::Oscillator(args)) => runs::demo_oscillator(args, &ctx, &mut ws),
        Command::Demo(DemoCmd::Lorentz(args)) => runs::demo_lorentz(args, &ctx, &mut ws),
        Command::Demo(DemoCmd::Scalar(args)) => runs::demo_scalar(args, &ctx, &mut ws),
        Command::Roundtrip(args) => runs::roundtrip(args, &ctx, &mut ws),
        Command::Invert(args) => runs::invert(args, &ctx, &mut ws),
    };
    if result.is_err() {
        ws.discard_all();
    }
    result
}

//! Subcommand implementations.
//!
//! Every command resolves its parameters (flags over config file over
//! defaults), computes, writes its artifacts through the workspace, and
//! finishes with a `summary.json` carrying input digests, the echoed
//! parameters, scalar metrics, and an optional verdict. The returned
//! integer is the process exit code: 0 for success, 1 when a requested
//! certificate fails.

use std::path::{Path, PathBuf};

use dispersio_core::dynamics::{
    energy_ledger, simulate_direct, simulate_extended, simulate_extended_with, ForcingSignal,
    Method, SimOptions, SystemRef, Trajectory,
};
use dispersio_core::extension::{
    assemble_block, assemble_block_with_mass, build_from_density, build_from_density_with,
    reconstruct_kernel_freq, reduced_representation, BlockSystem,
};
use dispersio_core::linalg::{frob, hermitian_part};
use dispersio_core::models::{
    damped_oscillator_extension, maxwell_extended_mode, polarization_series, MaxwellModeParams,
    OscillatorParams,
};
use dispersio_core::pdc::{check_time_pdc, PdcLocation};
use dispersio_core::spectra::{
    kernel_transform_evaluator, lorentz_density, lorentz_kernel_transform, scalar_mat,
    stieltjes_invert_with, DispersiveSystem, Grid, HerglotzEvaluator, HerglotzKind,
    InversionOptions, LaplaceQuad, LorentzParams, SpectralDensity,
};
use dispersio_core::{C64, CMat, CVec};
use ndarray::arr1;

use crate::artifacts::{Summary, Workspace};
use crate::config::{parse_float_list, usage, ConfigFile, Resolver};
use crate::formats;
use crate::{
    BuildArgs, InvertArgs, LorentzDemoArgs, OscillatorArgs, PdcArgs, RoundtripArgs, ScalarDemoArgs,
    SimArgs,
};

/// Shared per-invocation state.
pub struct RunContext<'a> {
    pub cfg: &'a ConfigFile,
    pub seed: Option<u64>,
}

fn base_summary(name: &str, ctx: &RunContext) -> anyhow::Result<Summary> {
    let mut summary = Summary::new(name);
    if let Some(path) = &ctx.cfg.path {
        summary.add_input(path)?;
    }
    Ok(summary)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn etas_from(raw: &str) -> anyhow::Result<Vec<f64>> {
    let mut etas = parse_float_list(raw, "etas")?;
    if etas.len() < 2 {
        return Err(usage(format!("etas needs at least two offsets, got `{raw}`")));
    }
    if etas.iter().any(|e| !(*e > 0.0)) {
        return Err(usage(format!("etas must be positive, got `{raw}`")));
    }
    etas.sort_by(|a, b| b.partial_cmp(a).expect("finite offsets"));
    Ok(etas)
}

fn parse_method(raw: &str) -> anyhow::Result<Method> {
    match raw {
        "eigen" => Ok(Method::EigenPropagator),
        "trapezoid" => Ok(Method::Trapezoid),
        other => Err(usage(format!("unknown method `{other}`; expected `eigen` or `trapezoid`"))),
    }
}

fn scalar_eye(d: usize, lambda: f64) -> CMat {
    CMat::eye(d).mapv(|z| z * C64::from(lambda))
}

fn peak(series: &[f64]) -> f64 {
    series.iter().copied().fold(0.0f64, f64::max)
}

fn peak_abs(series: &[f64]) -> f64 {
    series.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn norm(v: &CVec) -> f64 {
    v.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
}

/// Records the shared trajectory metrics plus the energy balance checks.
///
/// The balance residual comes from the recorded series: for extended runs
/// the total energy change must equal the external work, for direct runs
/// the friction work joins in. The full state-recomputation ledger runs
/// whenever the trajectory carries enough data for it (always for direct
/// runs, recorded hidden state for extended ones).
fn trajectory_metrics(summary: &mut Summary, traj: &Trajectory, sys: SystemRef<'_>) -> anyhow::Result<()> {
    summary.metric("steps", traj.len() as f64);
    summary.metric("peak_energy", peak(&traj.energy));
    summary.metric("final_energy", *traj.energy.last().unwrap_or(&0.0));
    summary.metric("work_ext_final", *traj.work_ext.last().unwrap_or(&0.0));
    summary.metric("work_fric_final", *traj.work_fric.last().unwrap_or(&0.0));
    let extended = matches!(sys, SystemRef::Extended(_));
    let e0 = traj.energy.first().copied().unwrap_or(0.0);
    let balance = (0..traj.len())
        .map(|n| {
            let fric_part = if extended { 0.0 } else { traj.work_fric[n] };
            (traj.energy[n] - e0 - traj.work_ext[n] - fric_part).abs()
        })
        .fold(0.0f64, f64::max);
    summary.metric("balance_residual_max", balance);
    if !extended || traj.hidden.is_some() {
        let ledger = energy_ledger(traj, sys)?;
        summary.metric("recompute_defect", ledger.recompute_defect);
    }
    Ok(())
}

/// `pdc`: time-domain positivity certificate for a sampled kernel.
pub fn pdc(args: &PdcArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("pdc", ctx.cfg);
    let kernel_path = r.required_path(args.kernel.clone(), "kernel", "--kernel")?;
    let alpha_inf = r.value(args.alpha_inf, "alpha_inf", 0.0)?;
    let times_n = r.value(args.times, "times", 64usize)?;
    let trials = r.value(args.trials, "trials", 8usize)?;
    let tol = r.positive(args.tol, "tol", dispersio_core::tol::PDC_TOL)?;

    let (dt, values) = formats::read_kernel_csv(&kernel_path)?;
    let horizon = dt * (values.len() - 1) as f64;
    let t_max = r.positive(args.t_max, "t_max", horizon)?;
    if t_max > horizon {
        return Err(usage(format!(
            "t_max {t_max} exceeds the sampled horizon {horizon}; provide more samples"
        )));
    }
    let kernel = formats::sampled_kernel(dt, values, alpha_inf)?;
    let times = linspace(0.0, t_max, times_n.max(2));
    let seed = ctx.seed.unwrap_or(0);
    let report = check_time_pdc(&kernel, &times, trials, seed)?;
    let verdict = report.worst_value >= -tol;

    let mut summary = base_summary("pdc", ctx)?;
    summary.add_input(&kernel_path)?;
    summary.seed = Some(seed);
    summary.parameters = r.seen;
    summary.metric("worst_value", report.worst_value);
    summary.metric("samples", report.samples as f64);
    summary.metric("horizon", horizon);
    let location = match report.worst_location {
        PdcLocation::TimePair(a, b) => {
            summary.metric("worst_time_1", a);
            summary.metric("worst_time_2", b);
            serde_json::json!({ "time_pair": [a, b] })
        }
        PdcLocation::Point(z) => {
            summary.metric("worst_zeta_re", z.re);
            summary.metric("worst_zeta_im", z.im);
            serde_json::json!({ "point": [z.re, z.im] })
        }
    };
    let certificate = serde_json::json!({
        "kind": "time_gram",
        "worst_value": report.worst_value,
        "worst_location": location,
        "tol": tol,
        "pass": verdict,
        "samples": report.samples,
    });
    let mut bytes = serde_json::to_vec_pretty(&certificate)?;
    bytes.push(b'\n');
    ws.write_atomic("report.json", &bytes)?;
    summary.artifacts.push("report.json".to_string());
    summary.verdict = Some(verdict);
    ws.write_summary(&mut summary)?;
    if verdict {
        println!("pdc: pass (worst normalized eigenvalue {:.3e})", report.worst_value);
        Ok(0)
    } else {
        println!("pdc: FAIL (worst normalized eigenvalue {:.3e} below -{tol:.1e})", report.worst_value);
        Ok(1)
    }
}

/// `build`: hidden-mode extension from a spectral density table.
pub fn build(args: &BuildArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("build", ctx.cfg);
    let density_path = r.required_path(args.density.clone(), "density", "--density")?;
    let alpha_inf = r.value(args.alpha_inf, "alpha_inf", 0.0)?;
    if alpha_inf < 0.0 {
        return Err(usage(format!("alpha_inf must be nonnegative, got {alpha_inf}")));
    }
    let density = formats::read_density_csv(&density_path)?;
    let sigma_max = density.nodes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let r_tail = r.positive(args.r_tail, "r_tail", 1.25 * sigma_max + 1.0)?;
    let tail_nodes = r.optional(args.tail_nodes, "tail_nodes")?;

    let inf = scalar_eye(density.dim, alpha_inf);
    let ext = match tail_nodes {
        Some(n) => build_from_density_with(&density, &inf, r_tail, n)?,
        None => build_from_density(&density, &inf, r_tail)?,
    };

    let mut summary = base_summary("build", ctx)?;
    summary.add_input(&density_path)?;
    summary.parameters = r.seen;
    summary.metric("dim", ext.dim() as f64);
    summary.metric("hidden_dim", ext.hidden_dim() as f64);
    summary.metric("density_nodes", density.len() as f64);
    let mass = density.total_mass();
    summary.metric("density_mass_trace", (0..density.dim).map(|i| mass[(i, i)].re).sum());
    summary.metric("flat_tail", f64::from(u8::from(ext.flat_tail().is_some())));
    ws.write_atomic("extension.csv", &formats::write_extension_csv(&ext)?)?;
    summary.artifacts.push("extension.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!("build: {} hidden modes for a dimension-{} kernel", ext.hidden_dim(), ext.dim());
    Ok(0)
}

/// `simulate`: integrate a system file, direct or extended.
pub fn simulate(args: &SimArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("simulate", ctx.cfg);
    let system_path = r.required_path(args.system.clone(), "system", "--system")?;
    let forcing_path = r.path(args.forcing.clone(), "forcing");
    let dt = r.positive(args.dt, "dt", 1e-2)?;
    let t_end = r.positive(args.t_end, "t_end", 10.0)?;
    let method_raw = r.optional(args.method.clone(), "method")?;
    let dump_hidden = r.switch(args.dump_hidden, "dump_hidden")?;

    let spec = formats::SystemSpec::read(&system_path)?;
    let base = system_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let forcing = match &forcing_path {
        Some(p) => formats::read_forcing_csv(p)?,
        None => ForcingSignal::zero(spec.dim),
    };

    let mut summary = base_summary("simulate", ctx)?;
    summary.add_input(&system_path)?;
    if let Some(p) = &forcing_path {
        summary.add_input(p)?;
    }

    let traj = match &spec.extension {
        Some(ext_ref) => {
            let ext_path = base.join(&ext_ref.path);
            summary.add_input(&ext_path)?;
            let ext = formats::read_extension_csv(&ext_path)?;
            let method = parse_method(method_raw.as_deref().unwrap_or("eigen"))?;
            let m = formats::mat_from_json(&spec.mass)?;
            let a = formats::mat_from_json(&spec.operator)?;
            let blk = assemble_block_with_mass(m, a, ext, ext_ref.hidden_mass)?;
            let opts = SimOptions { record_hidden: dump_hidden, ..SimOptions::default() };
            let traj = simulate_extended_with(&blk, &forcing, t_end, dt, method, &opts)?;
            trajectory_metrics(&mut summary, &traj, SystemRef::Extended(&blk))?;
            summary.metric("hidden_dim", blk.hidden_dim() as f64);
            if dump_hidden {
                ws.write_atomic("hidden.csv", &formats::write_hidden_csv(&traj)?)?;
                summary.artifacts.push("hidden.csv".to_string());
            }
            traj
        }
        None => {
            if dump_hidden {
                return Err(usage("--dump-hidden requires a system with an extension".to_string()));
            }
            if method_raw.as_deref() == Some("eigen") {
                return Err(usage(
                    "--method eigen requires a system with an extension; direct runs use the memory integrator"
                        .to_string(),
                ));
            }
            let sys = spec.system(&base)?;
            let traj = simulate_direct(&sys, &forcing, t_end, dt)?;
            trajectory_metrics(&mut summary, &traj, SystemRef::Direct(&sys))?;
            summary.metric("hidden_dim", 0.0);
            traj
        }
    };

    summary.parameters = r.seen;
    ws.write_atomic("trajectory.csv", &formats::write_trajectory_csv(&traj)?)?;
    summary.artifacts.insert(0, "trajectory.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!("simulate: {} steps, peak energy {:.6e}", traj.len(), peak(&traj.energy));
    Ok(0)
}

/// Writes the triple (system.json, extension.csv, trajectory.csv) every
/// demo produces, recording them in the summary.
fn write_demo_artifacts(
    ws: &mut Workspace,
    summary: &mut Summary,
    spec: &formats::SystemSpec,
    blk: &BlockSystem,
    traj: &Trajectory,
) -> anyhow::Result<()> {
    ws.write_atomic("system.json", &spec.to_bytes()?)?;
    ws.write_atomic("extension.csv", &formats::write_extension_csv(blk.extension())?)?;
    ws.write_atomic("trajectory.csv", &formats::write_trajectory_csv(traj)?)?;
    summary.artifacts.extend(["system.json", "extension.csv", "trajectory.csv"].map(String::from));
    Ok(())
}

/// `demo oscillator`: damped oscillator against its exact envelope.
pub fn demo_oscillator(args: &OscillatorArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("demo.oscillator", ctx.cfg);
    let gamma = r.value(args.gamma, "gamma", 0.2)?;
    let band = r.positive(args.band, "R", 100.0)?;
    let modes = r.value(args.modes, "K", 4001usize)?;
    let dt = r.positive(args.dt, "dt", 1e-2)?;
    let t_end = r.positive(args.t_end, "t_end", 25.0)?;

    let p = OscillatorParams::new(1.0, 1.0, gamma)?;
    let blk = damped_oscillator_extension(&p, band, modes)?;
    let opts = SimOptions { initial_v: Some(arr1(&[C64::from(1.0)])), ..SimOptions::default() };
    let traj = simulate_extended_with(
        &blk,
        &ForcingSignal::zero(1),
        t_end,
        dt,
        Method::EigenPropagator,
        &opts,
    )?;
    let envelope_error = traj
        .times
        .iter()
        .zip(&traj.v)
        .map(|(t, v)| (norm(v) - (-gamma * t).exp()).abs())
        .fold(0.0f64, f64::max);

    let mut summary = base_summary("demo oscillator", ctx)?;
    summary.parameters = r.seen;
    summary.metric("envelope_error_max", envelope_error);
    summary.metric("hidden_dim", blk.hidden_dim() as f64);
    trajectory_metrics(&mut summary, &traj, SystemRef::Extended(&blk))?;
    let spec = formats::SystemSpec {
        dim: 1,
        mass: formats::mat_to_json(&scalar_mat(C64::from(1.0))),
        operator: formats::mat_to_json(&scalar_mat(C64::from(1.0))),
        kernel: formats::KernelSpec::Instantaneous {
            matrix: formats::mat_to_json(&scalar_mat(C64::from(gamma))),
        },
        extension: Some(formats::ExtensionRef {
            path: "extension.csv".to_string(),
            hidden_mass: blk.hidden_mass(),
        }),
    };
    write_demo_artifacts(ws, &mut summary, &spec, &blk, &traj)?;
    ws.write_summary(&mut summary)?;
    println!("demo oscillator: envelope error {envelope_error:.3e} over {} hidden modes", blk.hidden_dim());
    Ok(0)
}

/// `demo scalar`: one system, two simulators, one deviation metric.
pub fn demo_scalar(args: &ScalarDemoArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("demo.scalar", ctx.cfg);
    let wp = r.positive(args.wp, "wp", 1.0)?;
    let w0 = r.positive(args.w0, "w0", 1.0)?;
    let gamma = r.positive(args.gamma, "gamma", 0.5)?;
    let radius = r.positive(args.radius, "radius", 20.0)?;
    let modes = r.value(args.modes, "modes", 2000usize)?;
    let dt = r.positive(args.dt, "dt", 1e-3)?;
    let t_end = r.positive(args.t_end, "t_end", 16.0)?;

    let lp = LorentzParams::new(wp, w0, gamma)?;
    let sys = DispersiveSystem::new(
        scalar_mat(C64::from(1.0)),
        scalar_mat(C64::from(0.0)),
        dispersio_core::spectra::lorentz_kernel(&lp)?,
    )?;
    let pulse = ForcingSignal::gaussian(arr1(&[C64::from(1.0)]), 2.0, 0.25)?;
    let direct = simulate_direct(&sys, &pulse, t_end, dt)?;

    let grid = Grid::uniform(-radius, radius, modes)?;
    let values: Vec<f64> = grid.nodes.iter().map(|s| lorentz_density(&lp, *s)).collect();
    let density = SpectralDensity::scalar(&grid, &values)?;
    let ext = build_from_density(&density, &CMat::zeros((1, 1)), radius + 5.0)?;
    let blk = assemble_block(scalar_mat(C64::from(1.0)), scalar_mat(C64::from(0.0)), ext)?;
    let extended = simulate_extended(&blk, &pulse, t_end, dt, Method::EigenPropagator)?;

    if direct.len() != extended.len() {
        anyhow::bail!("simulators produced different grids: {} vs {}", direct.len(), extended.len());
    }
    let peak_norm = direct.v.iter().map(norm).fold(0.0f64, f64::max);
    let deviation = direct
        .v
        .iter()
        .zip(&extended.v)
        .map(|(a, b)| norm(&(a - b)))
        .fold(0.0f64, f64::max);

    let mut summary = base_summary("demo scalar", ctx)?;
    summary.parameters = r.seen;
    summary.metric("deviation_rel", deviation / peak_norm);
    summary.metric("hidden_dim", blk.hidden_dim() as f64);
    summary.metric("work_fric_direct_max_abs", peak_abs(&direct.work_fric));
    trajectory_metrics(&mut summary, &extended, SystemRef::Extended(&blk))?;
    let spec = formats::SystemSpec {
        dim: 1,
        mass: formats::mat_to_json(&scalar_mat(C64::from(1.0))),
        operator: formats::mat_to_json(&scalar_mat(C64::from(0.0))),
        kernel: formats::KernelSpec::Lorentz { wp, w0, gamma },
        extension: Some(formats::ExtensionRef {
            path: "extension.csv".to_string(),
            hidden_mass: blk.hidden_mass(),
        }),
    };
    write_demo_artifacts(ws, &mut summary, &spec, &blk, &extended)?;
    ws.write_atomic("trajectory_direct.csv", &formats::write_trajectory_csv(&direct)?)?;
    summary.artifacts.push("trajectory_direct.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!(
        "demo scalar: direct vs extended deviation {:.3e} (relative to peak norm)",
        deviation / peak_norm
    );
    Ok(0)
}

/// `demo lorentz`: transverse Maxwell mode in a Lorentz medium, checked
/// against the closed-form susceptibility.
pub fn demo_lorentz(args: &LorentzDemoArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("demo.lorentz", ctx.cfg);
    let wp = r.positive(args.wp, "wp", 1.0)?;
    let w0 = r.positive(args.w0, "w0", 1.0)?;
    let gamma = r.positive(args.gamma, "gamma", 0.5)?;
    let k = r.positive(args.k, "k", 0.7)?;
    let radius = r.positive(args.radius, "radius", 25.0)?;
    let modes = r.value(args.modes, "modes", 1000usize)?;
    let dt = r.positive(args.dt, "dt", 0.02)?;
    let t_end = r.positive(args.t_end, "t_end", 80.0)?;

    let lp = LorentzParams::new(wp, w0, gamma)?;
    let mp = MaxwellModeParams::new(k, lp, radius, modes)?;
    let blk = maxwell_extended_mode(&mp)?;

    let ramp_end = 0.375 * t_end;
    let window_start = 0.7 * t_end;
    let omegas = [0.5, 1.0, 1.5];
    let mut worst = 0.0f64;
    let mut last: Option<(Trajectory, dispersio_core::models::PolarizationSeries)> = None;
    for omega in omegas {
        let forcing = ForcingSignal::closed(2, 0.0, t_end + 1.0, move |t| {
            let ramp = if t < ramp_end {
                let s = (std::f64::consts::PI * t / (2.0 * ramp_end)).sin();
                s * s
            } else {
                1.0
            };
            arr1(&[C64::from(0.5 * ramp) * (C64::new(0.0, -omega * t)).exp(), C64::from(0.0)])
        })?;
        let traj = simulate_extended(&blk, &forcing, t_end, dt, Method::EigenPropagator)?;
        let series = polarization_series(&traj, &blk)?;
        let mut num = C64::from(0.0);
        let mut den = C64::from(0.0);
        for (i, t) in series.times.iter().enumerate() {
            if *t >= window_start {
                let phase = (C64::new(0.0, omega * t)).exp();
                num += series.polarization[i] * phase;
                den += series.field[i] * phase;
            }
        }
        let measured = (num / den).norm();
        let exact = dispersio_core::spectra::lorentz_susceptibility(&lp, C64::from(omega)).norm();
        let err = (measured - exact).abs() / exact;
        worst = worst.max(err);
        last = Some((traj, series));
    }
    let (traj, series) = last.expect("at least one sweep frequency");

    // The damping must act on the field component alone: the Hermitian
    // part of the reconstructed transform has to vanish outside (0, 0).
    let mut b_row_max = 0.0f64;
    for (sigma, eta) in [(0.4, 0.3), (-1.2, 1.0), (0.9, 2.5), (2.0, 0.7)] {
        let h = hermitian_part(&reconstruct_kernel_freq(blk.extension(), C64::new(sigma, eta))?);
        for (i, j) in [(0, 1), (1, 0), (1, 1)] {
            b_row_max = b_row_max.max(h[(i, j)].norm());
        }
    }
    let reduced = reduced_representation(blk.extension())?;

    let mut summary = base_summary("demo lorentz", ctx)?;
    summary.parameters = r.seen;
    summary.metric("constitutive_rel_err_max", worst);
    summary.metric("friction_off_component_max", b_row_max);
    summary.metric("reduced_dim", reduced.reduced_dim as f64);
    summary.metric("hidden_dim", blk.hidden_dim() as f64);
    summary.metric("trajectory_omega", omegas[omegas.len() - 1]);
    trajectory_metrics(&mut summary, &traj, SystemRef::Extended(&blk))?;

    let spec = formats::SystemSpec {
        dim: 2,
        mass: formats::mat_to_json(blk.mass()),
        operator: formats::mat_to_json(blk.operator()),
        kernel: formats::KernelSpec::LorentzMode { wp, w0, gamma, k },
        extension: Some(formats::ExtensionRef {
            path: "extension.csv".to_string(),
            hidden_mass: blk.hidden_mass(),
        }),
    };
    write_demo_artifacts(ws, &mut summary, &spec, &blk, &traj)?;

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["t", "re_E", "im_E", "re_P", "im_P", "re_D", "im_D"])?;
    for (i, t) in series.times.iter().enumerate() {
        writer.write_record(
            [
                *t,
                series.field[i].re,
                series.field[i].im,
                series.polarization[i].re,
                series.polarization[i].im,
                series.displacement[i].re,
                series.displacement[i].im,
            ]
            .map(|v| format!("{v}")),
        )?;
    }
    ws.write_atomic("constitutive.csv", &writer.into_inner()?)?;
    summary.artifacts.push("constitutive.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!("demo lorentz: constitutive sweep error {worst:.3e}, off-component friction {b_row_max:.1e}");
    Ok(0)
}

/// `roundtrip`: density, extension, transform, recovered density, rebuilt
/// extension; reports how well the two transforms agree.
pub fn roundtrip(args: &RoundtripArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("roundtrip", ctx.cfg);
    let model = r.required(args.model.clone(), "model", "--model")?;
    if model != "lorentz" {
        return Err(usage(format!("unknown model `{model}`; available: lorentz")));
    }
    let wp = r.positive(args.wp, "wp", 1.0)?;
    let w0 = r.positive(args.w0, "w0", 1.0)?;
    let gamma = r.positive(args.gamma, "gamma", 0.5)?;
    let radius = r.positive(args.radius, "radius", 20.0)?;
    let modes = r.value(args.modes, "modes", 1500usize)?;
    let probes = r.value(args.probes, "probes", 100usize)?;
    let etas = etas_from(&r.value(args.etas.clone(), "etas", "0.12,0.06".to_string())?)?;

    let lp = LorentzParams::new(wp, w0, gamma)?;
    let grid = Grid::uniform(-radius, radius, modes)?;
    let values: Vec<f64> = grid.nodes.iter().map(|s| lorentz_density(&lp, *s)).collect();
    let density = SpectralDensity::scalar(&grid, &values)?;
    let zero_inf = CMat::zeros((1, 1));
    let ext1 = build_from_density(&density, &zero_inf, radius + 5.0)?;

    let ext_for_eval = ext1.clone();
    let h1 = HerglotzEvaluator::new(1, HerglotzKind::KernelTransform, move |z| {
        reconstruct_kernel_freq(&ext_for_eval, z)
    });
    let out_radius = 1.05 * radius;
    let out = Grid::uniform(-out_radius, out_radius, (modes / 2).max(200))?;
    let inversion = stieltjes_invert_with(&h1, &out, &etas, &InversionOptions::default())?;
    let ext2 = build_from_density(&inversion.density, &zero_inf, out_radius + 5.0)?;

    let probes = probes.max(2);
    let mut worst = 0.0f64;
    for j in 0..probes {
        let zeta = C64::new(-3.0 + 6.0 * j as f64 / (probes - 1) as f64, 1.5 + 0.5 * (j % 7) as f64);
        let a1 = reconstruct_kernel_freq(&ext1, zeta)?;
        let a2 = reconstruct_kernel_freq(&ext2, zeta)?;
        worst = worst.max(frob(&(&a1 - &a2)) / frob(&a1));
    }

    let mut summary = base_summary("roundtrip", ctx)?;
    summary.parameters = r.seen;
    summary.metric("kernel_roundtrip_max_rel_error", worst);
    summary.metric("inversion_worst_residual", inversion.worst_residual);
    summary.metric("hidden_dim_built", ext1.hidden_dim() as f64);
    summary.metric("hidden_dim_recovered", ext2.hidden_dim() as f64);
    summary.metric("nodes_recovered", inversion.density.len() as f64);
    ws.write_atomic("density.csv", &formats::write_density_csv(&inversion.density)?)?;
    summary.artifacts.push("density.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!("roundtrip: kernel transform agreement {worst:.3e} over {probes} probes");
    Ok(0)
}

/// `invert`: boundary density of a Herglotz transform on a real window.
pub fn invert(args: &InvertArgs, ctx: &RunContext, ws: &mut Workspace) -> anyhow::Result<i32> {
    let mut r = Resolver::new("invert", ctx.cfg);
    let model = r.optional(args.model.clone(), "model")?;
    let kernel_path = r.path(args.kernel.clone(), "kernel");
    let sigma_min = r.value(args.sigma_min, "sigma_min", -3.0)?;
    let sigma_max = r.value(args.sigma_max, "sigma_max", 3.0)?;
    if sigma_max <= sigma_min {
        return Err(usage(format!("sigma_max {sigma_max} must exceed sigma_min {sigma_min}")));
    }
    let nodes = r.value(args.nodes, "nodes", 600usize)?;
    let residual_cap =
        r.positive(args.residual_cap, "residual_cap", dispersio_core::tol::STIELTJES_RESIDUAL_REL)?;

    let mut summary = base_summary("invert", ctx)?;
    let (h, default_etas) = match (&model, &kernel_path) {
        (Some(name), None) => {
            if name != "lorentz" {
                return Err(usage(format!("unknown model `{name}`; available: lorentz")));
            }
            let wp = r.positive(args.wp, "wp", 1.0)?;
            let w0 = r.positive(args.w0, "w0", 1.0)?;
            let gamma = r.positive(args.gamma, "gamma", 0.5)?;
            let lp = LorentzParams::new(wp, w0, gamma)?;
            let h = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, move |z| {
                lorentz_kernel_transform(&lp, z)
            });
            (h, "1e-3,5e-4")
        }
        (None, Some(path)) => {
            let alpha_inf = r.value(args.alpha_inf, "alpha_inf", 0.0)?;
            let (dt, values) = formats::read_kernel_csv(path)?;
            summary.add_input(path)?;
            let kernel = formats::sampled_kernel(dt, values, alpha_inf)?;
            (kernel_transform_evaluator(kernel, LaplaceQuad::default()), "5e-2,2.5e-2")
        }
        _ => return Err(usage("exactly one of --model or --kernel is required".to_string())),
    };
    let etas = etas_from(&r.value(args.etas.clone(), "etas", default_etas.to_string())?)?;

    let grid = Grid::uniform(sigma_min, sigma_max, nodes)?;
    let opts = InversionOptions { residual_cap, ..InversionOptions::default() };
    let inversion = stieltjes_invert_with(&h, &grid, &etas, &opts)?;

    summary.parameters = r.seen;
    summary.metric("worst_residual", inversion.worst_residual);
    summary.metric("scale", inversion.scale);
    summary.metric("nodes", inversion.density.len() as f64);
    let mass = inversion.density.total_mass();
    summary.metric("mass_trace", (0..inversion.density.dim).map(|i| mass[(i, i)].re).sum());
    ws.write_atomic("density.csv", &formats::write_density_csv(&inversion.density)?)?;
    summary.artifacts.push("density.csv".to_string());
    ws.write_summary(&mut summary)?;
    println!(
        "invert: {} nodes recovered, worst extrapolation residual {:.3e}",
        inversion.density.len(),
        inversion.worst_residual
    );
    Ok(0)
}

//! On-disk formats: CSV tables and the system description JSON.
//!
//! Complex matrices in CSV are stored as interleaved real/imaginary
//! columns named `re_x_i_j` / `im_x_i_j` in row-major order, so the
//! header alone determines the dimension. Floats are written in Rust's
//! shortest round-trip form, which keeps artifacts byte-reproducible and
//! lossless. The system JSON stores complex entries as `[re, im]` pairs.

use std::path::Path;

use anyhow::{bail, Context};
use dispersio_core::spectra::{
    DispersiveSystem, FrictionKernel, LorentzParams, RetardedPart, SpectralDensity,
};
use dispersio_core::dynamics::{ForcingSignal, Trajectory};
use dispersio_core::extension::Extension;
use dispersio_core::{C64, CMat, CVec};
use serde::{Deserialize, Serialize};

use crate::config::usage;

/// Complex matrix as nested `[re, im]` pairs for JSON.
pub type JsonMat = Vec<Vec<(f64, f64)>>;

pub fn mat_to_json(m: &CMat) -> JsonMat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| (m[(i, j)].re, m[(i, j)].im)).collect())
        .collect()
}

pub fn mat_from_json(rows: &JsonMat) -> anyhow::Result<CMat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("matrix rows have unequal lengths");
    }
    let mut m = CMat::zeros((nrows, ncols));
    for (i, row) in rows.iter().enumerate() {
        for (j, (re, im)) in row.iter().enumerate() {
            m[(i, j)] = C64::new(*re, *im);
        }
    }
    Ok(m)
}

/// Memory kernel description inside a system file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// No friction at all.
    Zero,
    /// Pure instantaneous friction `gamma_0 delta(t)`.
    Instantaneous { matrix: JsonMat },
    /// Scalar Lorentz-oscillator polarization kernel.
    Lorentz { wp: f64, w0: f64, gamma: f64 },
    /// Two-component transverse mode at wavenumber `k` with a Lorentz
    /// medium damping the field component only.
    LorentzMode { wp: f64, w0: f64, gamma: f64, k: f64 },
    /// Uniformly sampled retarded part read from a CSV file, plus a
    /// scalar instantaneous part `alpha_inf * I`.
    Sampled { path: String, alpha_inf: f64 },
}

/// Pointer to a hidden-mode extension stored next to the system file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExtensionRef {
    pub path: String,
    pub hidden_mass: f64,
}

/// Complete on-disk description of a system to integrate.
#[derive(Debug, Serialize, Deserialize)]
pub struct SystemSpec {
    pub dim: usize,
    pub mass: JsonMat,
    pub operator: JsonMat,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<ExtensionRef>,
}

impl SystemSpec {
    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self).context("cannot serialize system")?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read system file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("malformed system file {}: {e}", path.display())))
    }

    /// Builds the friction kernel; `base` resolves relative sample paths.
    pub fn kernel(&self, base: &Path) -> anyhow::Result<FrictionKernel> {
        let kernel = match &self.kernel {
            KernelSpec::Zero => FrictionKernel::zero(self.dim)?,
            KernelSpec::Instantaneous { matrix } => FrictionKernel::instantaneous(mat_from_json(matrix)?)?,
            KernelSpec::Lorentz { wp, w0, gamma } => {
                let p = LorentzParams::new(*wp, *w0, *gamma)?;
                dispersio_core::spectra::lorentz_kernel(&p)?
            }
            KernelSpec::LorentzMode { wp, w0, gamma, k } => {
                let p = LorentzParams::new(*wp, *w0, *gamma)?;
                let radius = w0 + gamma + 10.0 * wp.max(1.0);
                let mp = dispersio_core::models::MaxwellModeParams::new(*k, p, radius, 1000)?;
                dispersio_core::models::lorentz_mode_system(&mp)?.kernel().clone()
            }
            KernelSpec::Sampled { path, alpha_inf } => {
                let (dt, values) = read_kernel_csv(&base.join(path))?;
                sampled_kernel(dt, values, *alpha_inf)?
            }
        };
        if kernel.dim() != self.dim {
            bail!("kernel dimension {} does not match system dimension {}", kernel.dim(), self.dim);
        }
        Ok(kernel)
    }

    /// Assembles the observable-block triplet.
    pub fn system(&self, base: &Path) -> anyhow::Result<DispersiveSystem> {
        let m = mat_from_json(&self.mass)?;
        let a = mat_from_json(&self.operator)?;
        Ok(DispersiveSystem::new(m, a, self.kernel(base)?)?)
    }
}

/// Wraps uniform kernel samples with a scalar instantaneous part
/// `alpha_inf * I`; the pointwise bound is taken from the samples.
pub fn sampled_kernel(dt: f64, values: Vec<CMat>, alpha_inf: f64) -> anyhow::Result<FrictionKernel> {
    let d = values.first().map_or(1, CMat::nrows);
    let sup = values.iter().map(dispersio_core::linalg::frob).fold(0.0f64, f64::max);
    let inf = CMat::eye(d).mapv(|z| z * C64::from(alpha_inf));
    Ok(FrictionKernel::new(inf, RetardedPart::Sampled { dt, values }, sup)?)
}

fn float(s: &str, what: &str) -> anyhow::Result<f64> {
    s.parse::<f64>()
        .map_err(|e| usage(format!("{what}: cannot parse `{s}` as a number: {e}")))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Appends `re_x_i_j, im_x_i_j` headers for a `rows x cols` matrix block.
fn matrix_headers(out: &mut Vec<String>, tag: &str, rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            out.push(format!("re_{tag}_{i}_{j}"));
            out.push(format!("im_{tag}_{i}_{j}"));
        }
    }
}

/// Appends `re_x_i, im_x_i` headers for a length-`d` vector block.
fn vector_headers(out: &mut Vec<String>, tag: &str, d: usize) {
    for i in 0..d {
        out.push(format!("re_{tag}_{i}"));
        out.push(format!("im_{tag}_{i}"));
    }
}

fn push_matrix(record: &mut Vec<String>, m: &CMat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            record.push(fmt(m[(i, j)].re));
            record.push(fmt(m[(i, j)].im));
        }
    }
}

fn push_vector(record: &mut Vec<String>, v: &CVec) {
    for z in v {
        record.push(fmt(z.re));
        record.push(fmt(z.im));
    }
}

/// Infers a square matrix dimension from an interleaved column count.
fn square_dim(pairs: usize, path: &Path) -> anyhow::Result<usize> {
    let d = (pairs as f64).sqrt().round() as usize;
    if d * d != pairs {
        bail!("{}: {pairs} matrix columns do not form a square matrix", path.display());
    }
    Ok(d)
}

fn parse_matrix(fields: &[&str], d: usize, what: &str) -> anyhow::Result<CMat> {
    let mut m = CMat::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let base = 2 * (i * d + j);
            m[(i, j)] = C64::new(float(fields[base], what)?, float(fields[base + 1], what)?);
        }
    }
    Ok(m)
}

fn parse_vector(fields: &[&str], d: usize, what: &str) -> anyhow::Result<CVec> {
    let mut v = CVec::zeros(d);
    for i in 0..d {
        v[i] = C64::new(float(fields[2 * i], what)?, float(fields[2 * i + 1], what)?);
    }
    Ok(v)
}

fn check_uniform(times: &[f64], path: &Path) -> anyhow::Result<f64> {
    if times.len() < 2 {
        bail!("{}: need at least two rows", path.display());
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        bail!("{}: time column must be strictly increasing", path.display());
    }
    for (k, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if (step - dt).abs() > 1e-9 * dt.max(1.0) {
            bail!("{}: non-uniform time step at row {} ({step} vs {dt})", path.display(), k + 2);
        }
    }
    Ok(dt)
}

/// Reads a uniformly sampled matrix kernel `t, re_a_i_j, im_a_i_j, ...`
/// starting at `t = 0`; returns the step and the samples.
pub fn read_kernel_csv(path: &Path) -> anyhow::Result<(f64, Vec<CMat>)> {
    let mut reader = csv_reader(path)?;
    let pairs = interleaved_pairs(&mut reader, 1, path)?;
    let d = square_dim(pairs, path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let fields: Vec<&str> = record.iter().collect();
        times.push(float(fields[0], "kernel time")?);
        values.push(parse_matrix(&fields[1..], d, "kernel sample")?);
    }
    let dt = check_uniform(&times, path)?;
    if times[0].abs() > 1e-12 {
        bail!("{}: kernel samples must start at t = 0, got {}", path.display(), times[0]);
    }
    Ok((dt, values))
}

/// Writes a spectral density as `sigma, dsigma, re_n_i_j, im_n_i_j, ...`.
pub fn write_density_csv(density: &SpectralDensity) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["sigma".to_string(), "dsigma".to_string()];
    matrix_headers(&mut headers, "n", density.dim, density.dim);
    writer.write_record(&headers)?;
    for k in 0..density.len() {
        let mut record = vec![fmt(density.nodes[k]), fmt(density.weights[k])];
        push_matrix(&mut record, &density.matrices[k]);
        writer.write_record(&record)?;
    }
    Ok(writer.into_inner()?)
}

/// Reads a spectral density written by [`write_density_csv`].
pub fn read_density_csv(path: &Path) -> anyhow::Result<SpectralDensity> {
    let mut reader = csv_reader(path)?;
    let pairs = interleaved_pairs(&mut reader, 2, path)?;
    let d = square_dim(pairs, path)?;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut matrices = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let fields: Vec<&str> = record.iter().collect();
        nodes.push(float(fields[0], "density node")?);
        weights.push(float(fields[1], "density weight")?);
        matrices.push(parse_matrix(&fields[2..], d, "density matrix")?);
    }
    Ok(SpectralDensity::new(nodes, weights, matrices)?)
}

/// Writes an extension as one row per hidden mode:
/// `omega, re_g_0, im_g_0, ..., re_g_{d-1}, im_g_{d-1}`.
pub fn write_extension_csv(ext: &Extension) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["omega".to_string()];
    vector_headers(&mut headers, "g", ext.dim());
    writer.write_record(&headers)?;
    let gamma = ext.gamma();
    for (j, omega) in ext.omega1().iter().enumerate() {
        let mut record = vec![fmt(*omega)];
        for i in 0..ext.dim() {
            record.push(fmt(gamma[(i, j)].re));
            record.push(fmt(gamma[(i, j)].im));
        }
        writer.write_record(&record)?;
    }
    Ok(writer.into_inner()?)
}

/// Reads an extension written by [`write_extension_csv`]. Flat-tail
/// metadata is not carried by the table; the tail modes themselves are.
pub fn read_extension_csv(path: &Path) -> anyhow::Result<Extension> {
    let mut reader = csv_reader(path)?;
    let pairs = interleaved_pairs(&mut reader, 1, path)?;
    if pairs == 0 {
        bail!("{}: no coupling columns", path.display());
    }
    let d = pairs;
    let mut omega = Vec::new();
    let mut columns: Vec<CVec> = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let fields: Vec<&str> = record.iter().collect();
        omega.push(float(fields[0], "extension frequency")?);
        columns.push(parse_vector(&fields[1..], d, "extension coupling")?);
    }
    let k = columns.len();
    let mut gamma = CMat::zeros((d, k));
    for (j, col) in columns.iter().enumerate() {
        for i in 0..d {
            gamma[(i, j)] = col[i];
        }
    }
    Ok(Extension::new(d, omega, gamma, None)?)
}

/// Reads a forcing signal `t, re_f_i, im_f_i, ...` on a uniform grid.
pub fn read_forcing_csv(path: &Path) -> anyhow::Result<ForcingSignal> {
    let mut reader = csv_reader(path)?;
    let pairs = interleaved_pairs(&mut reader, 1, path)?;
    if pairs == 0 {
        bail!("{}: no forcing columns", path.display());
    }
    let d = pairs;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let fields: Vec<&str> = record.iter().collect();
        times.push(float(fields[0], "forcing time")?);
        samples.push(parse_vector(&fields[1..], d, "forcing value")?);
    }
    let dt = check_uniform(&times, path)?;
    let t0 = times[0];
    let t_end = *times.last().expect("checked non-empty");
    Ok(ForcingSignal::sampled(t0, dt, samples, t0, t_end)?)
}

/// Writes the observable trajectory with energy and work columns.
pub fn write_trajectory_csv(traj: &Trajectory) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let d = traj.dim();
    let mut headers = vec!["t".to_string()];
    vector_headers(&mut headers, "v", d);
    headers.extend(["energy", "work_ext", "work_fric"].map(String::from));
    writer.write_record(&headers)?;
    for k in 0..traj.len() {
        let mut record = vec![fmt(traj.times[k])];
        push_vector(&mut record, &traj.v[k]);
        record.push(fmt(traj.energy[k]));
        record.push(fmt(traj.work_ext[k]));
        record.push(fmt(traj.work_fric[k]));
        writer.write_record(&record)?;
    }
    Ok(writer.into_inner()?)
}

/// Writes the recorded hidden state, one row per step.
pub fn write_hidden_csv(traj: &Trajectory) -> anyhow::Result<Vec<u8>> {
    let hidden = traj
        .hidden
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("trajectory has no recorded hidden state"))?;
    let k_dim = hidden.first().map_or(0, CVec::len);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["t".to_string()];
    vector_headers(&mut headers, "w", k_dim);
    writer.write_record(&headers)?;
    for (t, w) in traj.times.iter().zip(hidden) {
        let mut record = vec![fmt(*t)];
        push_vector(&mut record, w);
        writer.write_record(&record)?;
    }
    Ok(writer.into_inner()?)
}

fn csv_reader(path: &Path) -> anyhow::Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

/// Number of interleaved re/im column pairs after `lead` leading columns.
fn interleaved_pairs(
    reader: &mut csv::Reader<std::fs::File>,
    lead: usize,
    path: &Path,
) -> anyhow::Result<usize> {
    let n = reader.headers().map(csv::StringRecord::len).unwrap_or(0);
    if n < lead || (n - lead) % 2 != 0 {
        bail!("{}: header has {n} columns, expected {lead} leading plus re/im pairs", path.display());
    }
    Ok((n - lead) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dispersio_core::spectra::Grid;

    fn tmp(name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("dispersio-fmt-{}-{name}", std::process::id()));
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn kernel_csv_round_trips_scalar_samples() {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["t", "re_a_0_0", "im_a_0_0"]).unwrap();
        for k in 0..60 {
            let t = 0.05 * k as f64;
            writer.write_record([fmt(t), fmt((-t).exp()), fmt(0.0)]).unwrap();
        }
        let path = tmp("kernel.csv", &writer.into_inner().unwrap());
        let (dt, values) = read_kernel_csv(&path).unwrap();
        assert!((dt - 0.05).abs() < 1e-15);
        assert_eq!(values.len(), 60);
        assert!((values[20][(0, 0)].re - (-1.0f64).exp()).abs() < 1e-15);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn density_csv_round_trips() {
        let grid = Grid::uniform(-2.0, 2.0, 40).unwrap();
        let vals: Vec<f64> = grid.nodes.iter().map(|s| 1.0 / (1.0 + s * s)).collect();
        let dens = SpectralDensity::scalar(&grid, &vals).unwrap();
        let bytes = write_density_csv(&dens).unwrap();
        let path = tmp("density.csv", &bytes);
        let back = read_density_csv(&path).unwrap();
        assert_eq!(back.len(), dens.len());
        for k in 0..dens.len() {
            assert_eq!(back.nodes[k], dens.nodes[k], "node {k} must round-trip exactly");
            assert_eq!(back.matrices[k][(0, 0)], dens.matrices[k][(0, 0)]);
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn extension_csv_round_trips() {
        let omega = vec![-1.0, 0.25, 2.0];
        let mut gamma = CMat::zeros((2, 3));
        gamma[(0, 0)] = C64::new(0.3, -0.1);
        gamma[(1, 1)] = C64::new(1.5, 0.0);
        gamma[(0, 2)] = C64::new(0.0, 0.7);
        let ext = Extension::new(2, omega.clone(), gamma.clone(), None).unwrap();
        let bytes = write_extension_csv(&ext).unwrap();
        let path = tmp("extension.csv", &bytes);
        let back = read_extension_csv(&path).unwrap();
        assert_eq!(back.omega1(), ext.omega1());
        assert_eq!(back.gamma(), ext.gamma());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn system_json_round_trips_with_sampled_kernel() {
        let spec = SystemSpec {
            dim: 1,
            mass: vec![vec![(1.0, 0.0)]],
            operator: vec![vec![(0.0, 0.0)]],
            kernel: KernelSpec::Lorentz { wp: 1.0, w0: 1.0, gamma: 0.5 },
            extension: None,
        };
        let bytes = spec.to_bytes().unwrap();
        let path = tmp("system.json", &bytes);
        let back = SystemSpec::read(&path).unwrap();
        assert_eq!(back.dim, 1);
        let sys = back.system(path.parent().unwrap()).unwrap();
        assert_eq!(sys.dim(), 1);
        assert!(matches!(back.kernel, KernelSpec::Lorentz { .. }));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn forcing_csv_reads_uniform_grid() {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["t", "re_f_0", "im_f_0"]).unwrap();
        for k in 0..50 {
            let t = 1.0 + 0.1 * k as f64;
            writer.write_record([fmt(t), fmt(t.sin()), fmt(0.0)]).unwrap();
        }
        let path = tmp("forcing.csv", &writer.into_inner().unwrap());
        let f = read_forcing_csv(&path).unwrap();
        assert_eq!(f.dim(), 1);
        let (t_on, t_off) = f.support();
        assert!((t_on - 1.0).abs() < 1e-12 && (t_off - 5.9).abs() < 1e-12);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn non_uniform_time_grid_is_rejected() {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["t", "re_f_0", "im_f_0"]).unwrap();
        for t in [0.0, 0.1, 0.3] {
            writer.write_record([fmt(t), "0".into(), "0".into()]).unwrap();
        }
        let path = tmp("bad-forcing.csv", &writer.into_inner().unwrap());
        let err = read_forcing_csv(&path).unwrap_err();
        assert!(err.to_string().contains("non-uniform"), "{err}");
        std::fs::remove_file(&path).unwrap();
    }
}

//! Worked models wiring the kernel, extension, and dynamics layers into
//! ready-to-run systems with closed-form references.
//!
//! Three families are provided: the scalar damped oscillator together with
//! its flat-tail conservative extension, a generic realization of scalar
//! admittances recovered from boundary values, and a single transverse
//! Maxwell mode in a Lorentz medium whose hidden modes carry the material
//! polarization.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{array, s, Array2};

use crate::dynamics::Trajectory;
use crate::extension::{
    assemble_block, assemble_block_with_mass, build_from_density_with, BlockSystem, Extension,
};
use crate::linalg;
use crate::spectra::{
    lorentz_alpha, lorentz_density, lorentz_grid, lorentz_kernel, scalar_mat, stieltjes_invert,
    DispersiveSystem, FrictionKernel, Grid, HerglotzEvaluator, HerglotzKind, LorentzParams,
    RetardedPart, SpectralDensity,
};
use crate::{C64, CMat, Error, Result};

/// Parameters of the scalar damped oscillator
/// `m dv/dt = -i m Omega v - gamma v + f`.
#[derive(Clone, Copy, Debug)]
pub struct OscillatorParams {
    pub mass: f64,
    pub frequency: f64,
    pub friction: f64,
}

impl OscillatorParams {
    /// Validates the parameters. Zero friction is allowed: it is the
    /// conservative control case with no decay.
    pub fn new(mass: f64, frequency: f64, friction: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "oscillator mass must be positive and finite, got {mass}"
            )));
        }
        if !frequency.is_finite() {
            return Err(Error::InvalidInput(format!(
                "oscillator frequency must be finite, got {frequency}"
            )));
        }
        if !(friction >= 0.0 && friction.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "oscillator friction must be nonnegative and finite, got {friction}"
            )));
        }
        Ok(OscillatorParams { mass, frequency, friction })
    }
}

/// Damped oscillator as a dissipative triplet: mass `m`, operator
/// `A = m Omega`, and the instantaneous kernel `gamma delta(t)`. Its
/// admittance is `i / (m zeta - m Omega + i gamma)` exactly.
#[must_use]
pub fn damped_oscillator_system(p: &OscillatorParams) -> DispersiveSystem {
    let kernel = FrictionKernel::instantaneous(scalar_mat(C64::from(p.friction)))
        .expect("a real scalar atom is Hermitian");
    DispersiveSystem::new(
        scalar_mat(C64::from(p.mass)),
        scalar_mat(C64::from(p.mass * p.frequency)),
        kernel,
    )
    .expect("oscillator parameters are validated at construction")
}

/// Conservative extension of the damped oscillator: `k` hidden modes with
/// the flat density `gamma/pi` on `[-r, r]`, each coupled with weight
/// `sqrt(gamma dsigma / pi)`. With `k = 0` or zero friction the extension
/// is empty and the block system is the bare rotation.
pub fn damped_oscillator_extension(p: &OscillatorParams, r: f64, k: usize) -> Result<BlockSystem> {
    let m = scalar_mat(C64::from(p.mass));
    let a = scalar_mat(C64::from(p.mass * p.frequency));
    let ext = if k == 0 || p.friction == 0.0 {
        Extension::empty(1)
    } else {
        let none = SpectralDensity::new(Vec::new(), Vec::new(), Vec::new())?;
        build_from_density_with(&none, &scalar_mat(C64::from(p.friction)), r, k)?
    };
    assemble_block(m, a, ext)
}

/// Realizes a scalar admittance as a conservative block system.
///
/// The boundary density `n` of the admittance is recovered on `grid` by
/// Stieltjes inversion with the given `etas`; its total mass fixes the
/// observable mass `m = 1 / int n`. The hidden space is the grid itself
/// carrying multiplication by `m sigma`; a Householder reflection moves the
/// readout functional `sqrt(m n dsigma)` onto the first coordinate, and the
/// remaining block is rediagonalized into standard form. The resulting
/// block admittance reproduces the input up to the inversion error.
///
/// Fails with a singular-component error when the admittance carries atoms
/// (no node density can represent them) and rejects inputs whose recovered
/// mass is not positive.
pub fn scalar_system_extension(
    adm: &HerglotzEvaluator,
    grid: &Grid,
    etas: &[f64],
) -> Result<BlockSystem> {
    if adm.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "scalar realization needs a 1x1 admittance, got dimension {}",
            adm.dim()
        )));
    }
    if adm.kind() != HerglotzKind::Admittance {
        return Err(Error::InvalidInput(
            "scalar realization expects an admittance evaluator".into(),
        ));
    }
    let k = grid.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "scalar realization needs at least two grid cells, got {k}"
        )));
    }
    let inv = stieltjes_invert(adm, grid, etas)?;
    // Nodal masses of the recovered measure; their total is 1/m.
    let masses: Vec<f64> = inv
        .density
        .matrices
        .iter()
        .zip(&inv.density.weights)
        .map(|(mat, w)| mat[(0, 0)].re.max(0.0) * w)
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "recovered admittance mass {total:.3e} is not positive; the \
             high-frequency mass limit does not exist"
        )));
    }
    let m_a = 1.0 / total;

    // Unit readout vector t with t_j^2 = m n_j w_j.
    let norm = total.sqrt();
    let t: Vec<f64> = masses.iter().map(|q| q.sqrt() / norm).collect();

    // Householder reflection H = I - (2/c) u u^T with u = t - e_0 sends t
    // to e_0; conjugate the multiplication operator S = diag(sigma) by it.
    let mut u = t;
    u[0] -= 1.0;
    let c: f64 = u.iter().map(|x| x * x).sum();
    let sigma = &inv.density.nodes;
    let mut conjugated = Array2::<f64>::zeros((k, k));
    for (j, s_j) in sigma.iter().enumerate() {
        conjugated[(j, j)] = *s_j;
    }
    if c > 1e-30 {
        let beta = 2.0 / c;
        let su: Vec<f64> = sigma.iter().zip(&u).map(|(s_j, x)| s_j * x).collect();
        let usu: f64 = su.iter().zip(&u).map(|(a, b)| a * b).sum();
        for j in 0..k {
            for l in 0..k {
                conjugated[(j, l)] +=
                    beta * (beta * usu * u[j] * u[l] - u[j] * su[l] - su[j] * u[l]);
            }
        }
    }

    let head = conjugated[(0, 0)];
    let coupling: Vec<f64> = (1..k).map(|j| conjugated[(j, 0)]).collect();
    let hidden_block = conjugated.slice(s![1.., 1..]).to_owned();
    let (omega, vecs) = linalg::eigh_real_dc(&hidden_block)?;
    let mut gamma = CMat::zeros((1, k - 1));
    for j in 0..k - 1 {
        let mut g = 0.0;
        for (l, b_l) in coupling.iter().enumerate() {
            g += vecs[(l, j)] * b_l;
        }
        gamma[(0, j)] = C64::from(m_a.sqrt() * g);
    }
    let ext = Extension::new(1, omega.to_vec(), gamma, None)?;
    assemble_block_with_mass(
        scalar_mat(C64::from(m_a)),
        scalar_mat(C64::from(m_a * head)),
        ext,
        m_a,
    )
}

/// A single transverse Maxwell mode `(E_k, B_k)` in a Lorentz medium: the
/// curl pair couples the two components with the wavenumber, and the
/// medium memory acts on the field component only.
#[derive(Clone, Copy, Debug)]
pub struct MaxwellModeParams {
    pub wavenumber: f64,
    pub lorentz: LorentzParams,
    /// Half width of the hidden frequency band.
    pub grid_radius: f64,
    /// Number of hidden grid cells over the band.
    pub grid_nodes: usize,
}

impl MaxwellModeParams {
    pub fn new(
        wavenumber: f64,
        lorentz: LorentzParams,
        grid_radius: f64,
        grid_nodes: usize,
    ) -> Result<Self> {
        if !wavenumber.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mode wavenumber must be finite, got {wavenumber}"
            )));
        }
        if !(grid_radius > lorentz.omega_0 + lorentz.gamma) {
            return Err(Error::InvalidInput(format!(
                "hidden band radius {grid_radius} does not cover the resonance at {} \
                 plus one damping width",
                lorentz.omega_0
            )));
        }
        if grid_nodes < 16 {
            return Err(Error::InvalidInput(format!(
                "hidden band needs at least 16 cells, got {grid_nodes}"
            )));
        }
        Ok(MaxwellModeParams { wavenumber, lorentz, grid_radius, grid_nodes })
    }
}

/// Curl coupling of the transverse pair, eigenvalues exactly `{-k, +k}`.
fn mode_operator(k: f64) -> CMat {
    array![
        [C64::from(0.0), C64::from(-k)],
        [C64::from(-k), C64::from(0.0)]
    ]
}

/// Maxwell mode as a dissipative triplet: identity mass, curl operator,
/// and the scalar Lorentz kernel acting on the field component alone.
pub fn lorentz_mode_system(p: &MaxwellModeParams) -> Result<DispersiveSystem> {
    // The scalar closed form carries the sup bound for the matrix kernel:
    // only the (E, E) entry is nonzero.
    let scalar = lorentz_kernel(&p.lorentz)?;
    let sup = scalar.alpha_sup();
    let lp = p.lorentz;
    let kernel = FrictionKernel::new(
        CMat::zeros((2, 2)),
        RetardedPart::ClosedForm(Arc::new(move |t| {
            let mut out = CMat::zeros((2, 2));
            out[(0, 0)] = C64::from(lorentz_alpha(&lp, t));
            out
        })),
        sup,
    )?;
    DispersiveSystem::new(linalg::eye(2), mode_operator(p.wavenumber), kernel)
}

/// Conservative extension of the Maxwell mode: one hidden oscillator per
/// grid cell at frequency `sigma`, coupled to the field component with
/// weight `sqrt(n_chi(sigma) dsigma)` and zero coupling to the magnetic
/// component; the hidden mass is `1 / int n_chi`. A negligible medium
/// (vanishing plasma frequency) yields the empty extension.
///
/// Fails when fewer than 8 grid cells fall within one damping width of the
/// resonance, since such a grid cannot resolve the absorption line.
pub fn maxwell_extended_mode(p: &MaxwellModeParams) -> Result<BlockSystem> {
    let grid = lorentz_grid(&p.lorentz, p.grid_radius, p.grid_nodes)?;
    let lp = &p.lorentz;
    let near = grid
        .nodes
        .iter()
        .filter(|s_j| (**s_j - lp.omega_0).abs() <= lp.gamma)
        .count();
    if near < 8 {
        return Err(Error::InvalidInput(format!(
            "only {near} grid cells fall within one damping width of the resonance; \
             at least 8 are needed to resolve the absorption line"
        )));
    }
    let masses: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(s_j, w)| lorentz_density(lp, *s_j) * w)
        .collect();
    let total: f64 = masses.iter().sum();
    let floor = 1e-12 * (lp.omega_0 * lp.omega_0).max(1.0);
    let (ext, hidden_mass) = if total <= floor {
        (Extension::empty(2), 1.0)
    } else {
        let mut gamma = CMat::zeros((2, grid.len()));
        for (j, q) in masses.iter().enumerate() {
            gamma[(0, j)] = C64::from(q.sqrt());
        }
        (Extension::new(2, grid.nodes.clone(), gamma, None)?, 1.0 / total)
    };
    assemble_block_with_mass(linalg::eye(2), mode_operator(p.wavenumber), ext, hidden_mass)
}

/// Polarization and displacement reconstructed from an extended run of a
/// Maxwell mode.
#[derive(Clone, Debug)]
pub struct PolarizationSeries {
    pub times: Vec<f64>,
    /// Field component `E(t)` (first observable coordinate).
    pub field: Vec<C64>,
    /// Medium polarization `P(t)`, integrated from rest.
    pub polarization: Vec<C64>,
    /// Displacement `D = E + 4 pi P`.
    pub displacement: Vec<C64>,
}

/// Integrates the hidden-coupling force on the field component into the
/// medium polarization: that force is the polarization current
/// `-4 pi dP/dt`, so `P` is its cumulative trapezoid divided by `-4 pi`,
/// starting from rest.
///
/// Works on extended-simulator output only; the direct simulator carries
/// no hidden modes to integrate.
pub fn polarization_series(traj: &Trajectory, blk: &BlockSystem) -> Result<PolarizationSeries> {
    let Some(mass) = traj.meta.hidden_mass else {
        return Err(Error::MissingTrajectoryData(
            "polarization needs the hidden-coupling force of an extended run; \
             the direct simulator records none"
                .into(),
        ));
    };
    if traj.dim() != blk.dim() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory dimension {} does not match the block system's observable dimension {}",
            traj.dim(),
            blk.dim()
        )));
    }
    if (mass - blk.hidden_mass()).abs() > 1e-9 * blk.hidden_mass().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "trajectory hidden mass {mass} does not match the block system's {}",
            blk.hidden_mass()
        )));
    }
    let n = traj.len();
    let rate = |j: usize| traj.friction_force[j][0] / C64::from(-4.0 * PI);
    let mut running = C64::from(0.0);
    let mut field = Vec::with_capacity(n);
    let mut polarization = Vec::with_capacity(n);
    let mut displacement = Vec::with_capacity(n);
    for j in 0..n {
        if j > 0 {
            let dt = traj.times[j] - traj.times[j - 1];
            running += (rate(j - 1) + rate(j)) * C64::from(0.5 * dt);
        }
        let e = traj.v[j][0];
        field.push(e);
        polarization.push(running);
        displacement.push(e + C64::from(4.0 * PI) * running);
    }
    Ok(PolarizationSeries {
        times: traj.times.clone(),
        field,
        polarization,
        displacement,
    })
}

//! Time-domain simulation of dissipative systems and their conservative
//! extensions.
//!
//! Two simulators share one trajectory format. `simulate_direct` advances
//! the dissipative equation `m dv/dt = -iAv - (a*v)(t) + f` with the
//! memory convolution discretized by the trapezoid rule and the
//! instantaneous atom folded into the implicit step. `simulate_extended`
//! advances the block system `M dV/dt = -i Op V + T* f`; its default
//! eigen-propagator diagonalizes the mass-weighted generator once and then
//! advances exactly (for piecewise-linear forcing) in the eigenbasis, which
//! makes the conserved energy bit-stable without forcing.
//!
//! Both record per-step internal energy, cumulative external work, and
//! cumulative friction work, so the energy balance is auditable after the
//! fact via [`energy_ledger`].

use std::sync::Arc;

use ndarray::{s, Array1};
use ndarray_linalg::{Factorize, Solve};

use crate::extension::BlockSystem;
use crate::linalg;
use crate::spectra::{
    laplace_kernel, DispersiveSystem, FrictionKernel, HerglotzEvaluator, HerglotzKind,
    LaplaceQuad, RetardedPart,
};
use crate::{tol, C64, CMat, CVec, Error, Result};

/// External forcing on the observable coordinates. The system is at rest
/// before the declared support; evaluation outside it returns zero.
#[derive(Clone)]
pub enum ForcingSignal {
    /// No forcing at all.
    Zero { dim: usize },
    /// Closed-form forcing, clamped to zero outside `[t_on, t_off]`.
    Closed {
        dim: usize,
        t_on: f64,
        t_off: f64,
        eval: Arc<dyn Fn(f64) -> CVec + Send + Sync>,
    },
    /// Samples on a uniform grid starting at `t0`, linearly interpolated.
    Sampled {
        t0: f64,
        dt: f64,
        samples: Vec<CVec>,
        t_on: f64,
        t_off: f64,
    },
    /// Instantaneous impulse `amplitude * delta(t - t0)`, applied as an
    /// exact state jump rather than through quadrature.
    Pulse { amplitude: CVec, t0: f64 },
}

impl std::fmt::Debug for ForcingSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForcingSignal::Zero { dim } => f.debug_struct("Zero").field("dim", dim).finish(),
            ForcingSignal::Closed { dim, t_on, t_off, .. } => f
                .debug_struct("Closed")
                .field("dim", dim)
                .field("t_on", t_on)
                .field("t_off", t_off)
                .finish_non_exhaustive(),
            ForcingSignal::Sampled { t0, dt, samples, t_on, t_off } => f
                .debug_struct("Sampled")
                .field("t0", t0)
                .field("dt", dt)
                .field("len", &samples.len())
                .field("t_on", t_on)
                .field("t_off", t_off)
                .finish(),
            ForcingSignal::Pulse { amplitude, t0 } => f
                .debug_struct("Pulse")
                .field("dim", &amplitude.len())
                .field("t0", t0)
                .finish(),
        }
    }
}

impl ForcingSignal {
    #[must_use]
    pub fn zero(dim: usize) -> Self {
        ForcingSignal::Zero { dim }
    }

    pub fn closed(
        dim: usize,
        t_on: f64,
        t_off: f64,
        eval: impl Fn(f64) -> CVec + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(t_off >= t_on) {
            return Err(Error::InvalidInput(format!(
                "forcing support is empty: t_on {t_on}, t_off {t_off}"
            )));
        }
        Ok(ForcingSignal::Closed { dim, t_on, t_off, eval: Arc::new(eval) })
    }

    /// Gaussian envelope `amplitude * exp(-(t-t0)^2/(2 width^2))` with
    /// support clipped to eight widths on either side.
    pub fn gaussian(amplitude: CVec, t0: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidInput(format!("pulse width must be positive, got {width}")));
        }
        let dim = amplitude.len();
        Self::closed(dim, t0 - 8.0 * width, t0 + 8.0 * width, move |t| {
            let u = (t - t0) / width;
            amplitude.mapv(|a| a * C64::from((-0.5 * u * u).exp()))
        })
    }

    pub fn sampled(t0: f64, dt: f64, samples: Vec<CVec>, t_on: f64, t_off: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("sample step must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("forcing needs at least one sample".into()));
        }
        if !(t_off >= t_on) {
            return Err(Error::InvalidInput(format!(
                "forcing support is empty: t_on {t_on}, t_off {t_off}"
            )));
        }
        let dim = samples[0].len();
        for (j, sample) in samples.iter().enumerate() {
            if sample.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "forcing sample {j} has length {}, expected {dim}",
                    sample.len()
                )));
            }
            let t = t0 + j as f64 * dt;
            if (t < t_on - 1e-12 || t > t_off + 1e-12) && sample.iter().any(|z| z.norm() > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "forcing sample at t = {t} is nonzero outside the declared support [{t_on}, {t_off}]"
                )));
            }
        }
        Ok(ForcingSignal::Sampled { t0, dt, samples, t_on, t_off })
    }

    #[must_use]
    pub fn pulse(amplitude: CVec, t0: f64) -> Self {
        ForcingSignal::Pulse { amplitude, t0 }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        match self {
            ForcingSignal::Zero { dim } | ForcingSignal::Closed { dim, .. } => *dim,
            ForcingSignal::Sampled { samples, .. } => samples[0].len(),
            ForcingSignal::Pulse { amplitude, .. } => amplitude.len(),
        }
    }

    /// Declared support `[t_on, t_off]`; a point for pulses, `[0, 0]` for
    /// the zero signal.
    #[must_use]
    pub fn support(&self) -> (f64, f64) {
        match self {
            ForcingSignal::Zero { .. } => (0.0, 0.0),
            ForcingSignal::Closed { t_on, t_off, .. }
            | ForcingSignal::Sampled { t_on, t_off, .. } => (*t_on, *t_off),
            ForcingSignal::Pulse { t0, .. } => (*t0, *t0),
        }
    }

    /// The impulsive part, if this signal is a pulse.
    #[must_use]
    pub fn pulse_part(&self) -> Option<(&CVec, f64)> {
        match self {
            ForcingSignal::Pulse { amplitude, t0 } => Some((amplitude, *t0)),
            _ => None,
        }
    }

    /// Value at time `t`; zero outside the support, and zero everywhere
    /// for pulses (the atom is handled by the simulators directly).
    #[must_use]
    pub fn eval(&self, t: f64) -> CVec {
        match self {
            ForcingSignal::Zero { dim } => CVec::zeros(*dim),
            ForcingSignal::Pulse { amplitude, .. } => CVec::zeros(amplitude.len()),
            ForcingSignal::Closed { dim, t_on, t_off, eval } => {
                if t < *t_on || t > *t_off {
                    CVec::zeros(*dim)
                } else {
                    eval(t)
                }
            }
            ForcingSignal::Sampled { t0, dt, samples, t_on, t_off } => {
                let dim = samples[0].len();
                if t < *t_on || t > *t_off {
                    return CVec::zeros(dim);
                }
                let x = (t - t0) / dt;
                if x < 0.0 {
                    return CVec::zeros(dim);
                }
                let j = x.floor() as usize;
                if j + 1 >= samples.len() {
                    if j + 1 == samples.len() && (x - j as f64).abs() < 1e-9 {
                        return samples[j].clone();
                    }
                    return CVec::zeros(dim);
                }
                let frac = x - j as f64;
                &samples[j] * C64::from(1.0 - frac) + &samples[j + 1] * C64::from(frac)
            }
        }
    }
}

/// Time-stepping method for [`simulate_extended`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// One-time Hermitian eigendecomposition, then exact per-step
    /// propagation in the eigenbasis (piecewise-linear forcing integrated
    /// in closed form). Unconditionally stable, bit-stable energy.
    EigenPropagator,
    /// Implicit trapezoid rule on the dense block system. Second order;
    /// intended for small systems and cross-validation.
    Trapezoid,
}

impl Method {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Method::EigenPropagator => "eigen-propagator",
            Method::Trapezoid => "trapezoid",
        }
    }
}

/// Optional simulation controls.
#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Observable initial state overriding the rest start (hidden modes
    /// always start at rest). Flagged in the trajectory metadata.
    pub initial_v: Option<CVec>,
    /// Record the hidden state at every step (extended simulator only).
    pub record_hidden: bool,
    /// Cap on hidden storage, in complex entries, guarding `M x steps`.
    pub hidden_cap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { initial_v: None, record_hidden: false, hidden_cap: 4_000_000 }
    }
}

/// How a trajectory was produced.
#[derive(Clone, Debug)]
pub struct SimMeta {
    pub method: &'static str,
    pub dt: f64,
    /// False when an initial-state override replaced the rest start.
    pub rest_start: bool,
    /// Hidden mass of the block system (extended runs only).
    pub hidden_mass: Option<f64>,
}

/// Simulation output on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Observable state per step.
    pub v: Vec<CVec>,
    /// Hidden state per step, when recorded.
    pub hidden: Option<Vec<CVec>>,
    /// Friction force on the observable coordinates per step: the negated
    /// memory convolution (direct) or the hidden-coupling force (extended).
    pub friction_force: Vec<CVec>,
    /// Forcing evaluated on the grid (zero for pulse atoms).
    pub force: Vec<CVec>,
    /// Internal energy per step.
    pub energy: Vec<f64>,
    /// Cumulative external work (trapezoid rule on `Re<f, v>`).
    pub work_ext: Vec<f64>,
    /// Cumulative friction work (trapezoid rule on `Re<f_fric, v>`).
    pub work_fric: Vec<f64>,
    pub meta: SimMeta,
}

impl Trajectory {
    #[must_use]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.v.first().map_or(0, CVec::len)
    }
}

fn re_inner(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn check_time_grid(start: f64, t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if !(t_end > start) {
        return Err(Error::InvalidInput(format!(
            "end time {t_end} does not lie after the trajectory start {start}"
        )));
    }
    Ok(((t_end - start) / dt - 1e-9).ceil().max(1.0) as usize)
}

/// Admittance evaluator `Adm(zeta) = i [zeta m - A + i ahat(zeta)]^{-1}`
/// of a dissipative triplet, with the kernel transform computed by
/// quadrature on demand.
#[must_use]
pub fn admittance_from_triplet(sys: &DispersiveSystem) -> HerglotzEvaluator {
    admittance_from_triplet_with(sys, LaplaceQuad::default())
}

/// [`admittance_from_triplet`] with explicit quadrature parameters.
#[must_use]
pub fn admittance_from_triplet_with(sys: &DispersiveSystem, quad: LaplaceQuad) -> HerglotzEvaluator {
    let sys = sys.clone();
    HerglotzEvaluator::new(sys.dim(), HerglotzKind::Admittance, move |zeta| {
        let ahat = laplace_kernel(sys.kernel(), zeta, &quad)?.value;
        let inner = (sys.mass().mapv(|x| x * zeta) - sys.operator())
            + ahat.mapv(|x| x * C64::new(0.0, 1.0));
        let inv = linalg::inv(&inner).map_err(|_| {
            Error::InvalidInput(format!(
                "admittance matrix is singular at zeta = {zeta}; the kernel likely violates the dissipation condition"
            ))
        })?;
        Ok(inv.mapv(|x| x * C64::new(0.0, 1.0)))
    })
}

/// Retarded-kernel samples on the simulation grid, specialized for the
/// scalar case so the convolution inner loop stays allocation-free.
enum AlphaSeq {
    None,
    Scalar(Vec<C64>),
    Mat(Vec<CMat>),
}

impl AlphaSeq {
    fn build(kernel: &FrictionKernel, steps: usize, dt: f64) -> Self {
        if matches!(kernel.retarded(), RetardedPart::Zero) {
            return AlphaSeq::None;
        }
        if kernel.dim() == 1 {
            AlphaSeq::Scalar((0..=steps).map(|j| kernel.alpha_at(j as f64 * dt)[(0, 0)]).collect())
        } else {
            AlphaSeq::Mat((0..=steps).map(|j| kernel.alpha_at(j as f64 * dt)).collect())
        }
    }

    fn at_zero(&self, d: usize) -> CMat {
        match self {
            AlphaSeq::None => CMat::zeros((d, d)),
            AlphaSeq::Scalar(a) => crate::spectra::scalar_mat(a[0]),
            AlphaSeq::Mat(a) => a[0].clone(),
        }
    }

    /// Trapezoid tail of the memory convolution at step `k`, excluding the
    /// `j = 0` endpoint (folded into the implicit step):
    /// `dt * [ sum_{j=1}^{k-1} alpha_j v_{k-j} + alpha_k v_0 / 2 ]`.
    fn conv_hat(&self, hist: &[CVec], k: usize, dt: f64, out: &mut CVec) {
        out.fill(C64::from(0.0));
        if k == 0 {
            return;
        }
        match self {
            AlphaSeq::None => {}
            AlphaSeq::Scalar(a) => {
                let mut acc = C64::from(0.0);
                for j in 1..k {
                    acc += a[j] * hist[k - j][0];
                }
                acc += a[k] * hist[0][0] * C64::from(0.5);
                out[0] = acc * C64::from(dt);
            }
            AlphaSeq::Mat(a) => {
                for j in 1..k {
                    ndarray::linalg::general_mat_vec_mul(
                        C64::from(dt),
                        &a[j],
                        &hist[k - j],
                        C64::from(1.0),
                        out,
                    );
                }
                ndarray::linalg::general_mat_vec_mul(
                    C64::from(0.5 * dt),
                    &a[k],
                    &hist[0],
                    C64::from(1.0),
                    out,
                );
            }
        }
    }
}

/// Largest frequency the direct scheme must resolve: the weighted
/// generator norm, the geometric mean of kernel magnitude and inverse
/// mass, and the instantaneous friction rate.
fn direct_maxfreq(sys: &DispersiveSystem, alpha0: &CMat) -> Result<f64> {
    let mih = linalg::herm_power(sys.mass(), -0.5)?;
    let wa = linalg::spectral_norm_hermitian(&mih.dot(sys.operator()).dot(&mih))?;
    let minv_norm = {
        let (lo, _) = linalg::eig_range(sys.mass())?;
        1.0 / lo
    };
    let wk = (linalg::opnorm(alpha0)? * minv_norm).sqrt();
    let wi = linalg::opnorm(sys.kernel().alpha_inf())? * minv_norm;
    Ok(wa.max(wk).max(wi))
}

/// Advances the dissipative system with trapezoidal memory.
pub fn simulate_direct(
    sys: &DispersiveSystem,
    f: &ForcingSignal,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    simulate_direct_with(sys, f, t_end, dt, &SimOptions::default())
}

/// [`simulate_direct`] with explicit options.
pub fn simulate_direct_with(
    sys: &DispersiveSystem,
    f: &ForcingSignal,
    t_end: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let d = sys.dim();
    if f.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "forcing dimension {} does not match system dimension {d}",
            f.dim()
        )));
    }
    let (start, t_off) = f.support();
    let steps = check_time_grid(start, t_end, dt)?;
    if matches!(sys.kernel().retarded(), RetardedPart::Sampled { .. }) {
        if let Some(horizon) = sys.kernel().horizon() {
            let span = t_end - start;
            if horizon < span - 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "kernel horizon {horizon} does not cover the simulated span {span}"
                )));
            }
        }
    }

    let alpha = AlphaSeq::build(sys.kernel(), steps, dt);
    let alpha0 = alpha.at_zero(d);
    let maxfreq = direct_maxfreq(sys, &alpha0)?;
    if dt * maxfreq > tol::DT_MAXFREQ {
        return Err(Error::TimeStepTooCoarse { dt, maxfreq, limit: tol::DT_MAXFREQ });
    }

    // Implicit step matrices: [m + (dt/2) M1] v_{n+1} = [m - (dt/2) M1] v_n + ...
    // with M1 = iA + alpha_inf + (dt/2) alpha(0).
    let m1 = sys.operator().mapv(|x| x * C64::new(0.0, 1.0))
        + sys.kernel().alpha_inf()
        + alpha0.mapv(|x| x * C64::from(0.5 * dt));
    let lhs = sys.mass() + &m1.mapv(|x| x * C64::from(0.5 * dt));
    let rhs_mat = sys.mass() - &m1.mapv(|x| x * C64::from(0.5 * dt));
    let lhs_lu = lhs.factorize()?;
    let m_inv = linalg::inv(sys.mass())?;

    let mut v0 = match &opts.initial_v {
        Some(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has length {}, expected {d}",
                    v.len()
                )));
            }
            v.clone()
        }
        None => CVec::zeros(d),
    };
    let pulse = f.pulse_part().map(|(amp, t0)| {
        let idx = ((t0 - start) / dt).round() as usize;
        (m_inv.dot(amp), idx.min(steps))
    });
    if let Some((jump, 0)) = &pulse {
        v0 = &v0 + jump;
    }

    let mut times = Vec::with_capacity(steps + 1);
    let mut hist = Vec::with_capacity(steps + 1);
    let mut force = Vec::with_capacity(steps + 1);
    let mut fric = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    let mut work_ext = Vec::with_capacity(steps + 1);
    let mut work_fric = Vec::with_capacity(steps + 1);

    let mut chat = CVec::zeros(d);
    let mut chat_next = CVec::zeros(d);
    let fric_of = |chat: &CVec, v: &CVec| -> CVec {
        let mut out = -(sys.kernel().alpha_inf().dot(v)) - chat;
        out = out - alpha0.dot(v).mapv(|x| x * C64::from(0.5 * dt));
        out
    };

    times.push(start);
    force.push(f.eval(start));
    fric.push(fric_of(&chat, &v0));
    energy.push(0.5 * re_inner(&v0, &sys.mass().dot(&v0)));
    work_ext.push(0.0);
    work_fric.push(0.0);
    let mut peak = v0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    hist.push(v0);

    for n in 0..steps {
        let t_next = start + (n + 1) as f64 * dt;
        alpha.conv_hat(&hist, n + 1, dt, &mut chat_next);
        let f_n = &force[n];
        let f_next = f.eval(t_next);
        let mut rhs = rhs_mat.dot(&hist[n]);
        rhs = rhs
            - (&chat + &chat_next).mapv(|x| x * C64::from(0.5 * dt))
            + (f_n + &f_next).mapv(|x| x * C64::from(0.5 * dt));
        let mut v_next = lhs_lu.solve(&rhs)?;
        if let Some((jump, idx)) = &pulse {
            if *idx == n + 1 {
                v_next = &v_next + jump;
            }
        }

        let norm = v_next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if t_next <= t_off {
            peak = peak.max(norm);
        } else if norm > tol::UNSTABLE_GROWTH * peak.max(f64::MIN_POSITIVE) {
            return Err(Error::Unstable(format!(
                "state norm {norm:.3e} at t = {t_next} exceeds {:.0e} times the forced peak {peak:.3e}",
                tol::UNSTABLE_GROWTH
            )));
        }

        let fr = fric_of(&chat_next, &v_next);
        energy.push(0.5 * re_inner(&v_next, &sys.mass().dot(&v_next)));
        work_ext.push(
            work_ext[n] + 0.5 * dt * (re_inner(f_n, &hist[n]) + re_inner(&f_next, &v_next)),
        );
        work_fric.push(
            work_fric[n] + 0.5 * dt * (re_inner(&fric[n], &hist[n]) + re_inner(&fr, &v_next)),
        );
        times.push(t_next);
        force.push(f_next);
        fric.push(fr);
        hist.push(v_next);
        std::mem::swap(&mut chat, &mut chat_next);
    }

    Ok(Trajectory {
        times,
        v: hist,
        hidden: None,
        friction_force: fric,
        force,
        energy,
        work_ext,
        work_fric,
        meta: SimMeta {
            method: "direct-trapezoid",
            dt,
            rest_start: opts.initial_v.is_none(),
            hidden_mass: None,
        },
    })
}

/// Eigen decomposition of the mass-weighted block generator, reduced to
/// the pieces the propagator touches every step.
struct EigenData {
    lam: Array1<f64>,
    /// Observable rows of the eigenvector matrix, `d x N`.
    obs_q: CMat,
    /// `Gamma * Q_hidden`, `d x N`: the coupling force in eigen coordinates.
    cplq: CMat,
    /// Hidden rows of the eigenvector matrix, kept only when the hidden
    /// state is recorded.
    hidden_q: Option<CMat>,
}

fn eigen_data(blk: &BlockSystem, keep_hidden: bool) -> Result<EigenData> {
    let d = blk.dim();
    let mm = blk.hidden_dim();
    let n = d + mm;
    if d == 1 {
        let mih = linalg::herm_power(blk.mass(), -0.5)?[(0, 0)];
        let head = (blk.operator()[(0, 0)] * mih * mih).re;
        let b: Vec<C64> = blk.extension().gamma().row(0).iter().map(|g| g * mih).collect();
        if let Some(ar) = linalg::ArrowheadEig::new(head, &b, blk.extension().omega1()) {
            let mut obs_q = CMat::zeros((1, n));
            for (j, h) in ar.head().iter().enumerate() {
                obs_q[(0, j)] = C64::from(*h);
            }
            let cplq = ar.hidden_product(blk.extension().gamma());
            let hidden_q = keep_hidden.then(|| {
                let mut hq = CMat::zeros((mm, n));
                for j in 0..n {
                    let u = ar.vector(j);
                    hq.column_mut(j).assign(&u.slice(s![1..]));
                }
                hq
            });
            return Ok(EigenData { lam: ar.eigenvalues(), obs_q, cplq, hidden_q });
        }
    }
    let (lam, q) = linalg::eigh_auto(&blk.weighted_operator()?)?;
    let obs_q = q.slice(s![..d, ..]).to_owned();
    let hidden_rows = q.slice(s![d.., ..]).to_owned();
    let cplq = blk.extension().gamma().dot(&hidden_rows);
    Ok(EigenData { lam, obs_q, cplq, hidden_q: keep_hidden.then_some(hidden_rows) })
}

/// Per-component propagation factors over one step: the phase `E` and the
/// closed-form integrals of `e^{mu (dt - s)}` against the two linear hat
/// functions, so piecewise-linear forcing is integrated exactly.
fn step_factors(lam: &Array1<f64>, dt: f64) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
    let mut e = Vec::with_capacity(lam.len());
    let mut i0 = Vec::with_capacity(lam.len());
    let mut i1 = Vec::with_capacity(lam.len());
    for &l in lam {
        let mu = C64::new(0.0, -l);
        let x = mu * C64::from(dt);
        let ex = x.exp();
        e.push(ex);
        if x.norm() < 1e-2 {
            // Series form; the closed form cancels catastrophically here.
            let (mut s0, mut s1) = (C64::from(0.0), C64::from(0.0));
            for (c0, c1) in [
                (1.0 / 2.0, 1.0 / 2.0),
                (1.0 / 3.0, 1.0 / 6.0),
                (1.0 / 8.0, 1.0 / 24.0),
                (1.0 / 30.0, 1.0 / 120.0),
                (1.0 / 144.0, 1.0 / 720.0),
            ]
            .iter()
            .rev()
            {
                s0 = s0 * x + C64::from(*c0);
                s1 = s1 * x + C64::from(*c1);
            }
            i0.push(s0 * C64::from(dt));
            i1.push(s1 * C64::from(dt));
        } else {
            let em1 = ex - C64::from(1.0);
            i0.push(ex / mu - em1 / (mu * mu * C64::from(dt)));
            i1.push(-C64::from(1.0) / mu + em1 / (mu * mu * C64::from(dt)));
        }
    }
    (e, i0, i1)
}

/// Advances the extended conservative system.
pub fn simulate_extended(
    blk: &BlockSystem,
    f: &ForcingSignal,
    t_end: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    simulate_extended_with(blk, f, t_end, dt, method, &SimOptions::default())
}

/// [`simulate_extended`] with explicit options.
pub fn simulate_extended_with(
    blk: &BlockSystem,
    f: &ForcingSignal,
    t_end: f64,
    dt: f64,
    method: Method,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let d = blk.dim();
    if f.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "forcing dimension {} does not match system dimension {d}",
            f.dim()
        )));
    }
    let (t_on, _) = f.support();
    let start = t_on;
    let steps = check_time_grid(start, t_end, dt)?;
    let mm = blk.hidden_dim();
    if opts.record_hidden {
        // The eigen propagator additionally materialises the hidden rows of
        // the eigenbasis; the trapezoid integrator only stores the snapshots.
        let mut need = mm.saturating_mul(steps + 1);
        if matches!(method, Method::EigenPropagator) {
            need = need.max(mm.saturating_mul(d + mm));
        }
        if need > opts.hidden_cap {
            return Err(Error::HiddenStorageCap { need, cap: opts.hidden_cap });
        }
    }
    if let Some(v) = &opts.initial_v {
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, expected {d}",
                v.len()
            )));
        }
    }
    match method {
        Method::EigenPropagator => eigen_run(blk, f, start, steps, dt, opts),
        Method::Trapezoid => trapezoid_run(blk, f, start, steps, dt, opts),
    }
}

fn eigen_run(
    blk: &BlockSystem,
    f: &ForcingSignal,
    start: f64,
    steps: usize,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let d = blk.dim();
    let mm = blk.hidden_dim();
    let n = d + mm;
    let ed = eigen_data(blk, opts.record_hidden)?;
    let mih = linalg::herm_power(blk.mass(), -0.5)?;
    let mh = linalg::herm_power(blk.mass(), 0.5)?;
    let w_mat = mih.dot(&ed.obs_q);
    let wt = linalg::adjoint(&w_mat);
    let root_m1_inv = 1.0 / blk.hidden_mass().sqrt();

    let mut z: CVec = CVec::zeros(n);
    if let Some(v0) = &opts.initial_v {
        z = linalg::adjoint(&mh.dot(&ed.obs_q)).dot(v0);
    }
    let pulse = f.pulse_part().map(|(amp, t0)| {
        let idx = (((t0 - start) / dt).round() as usize).min(steps);
        (wt.dot(amp), idx)
    });
    if let Some((jump, 0)) = &pulse {
        z = &z + jump;
    }

    let (e, i0, i1) = step_factors(&ed.lam, dt);

    let mut times = Vec::with_capacity(steps + 1);
    let mut vs = Vec::with_capacity(steps + 1);
    let mut force = Vec::with_capacity(steps + 1);
    let mut fric = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    let mut work_ext = Vec::with_capacity(steps + 1);
    let mut work_fric = Vec::with_capacity(steps + 1);
    let mut hidden = opts.record_hidden.then(|| Vec::with_capacity(steps + 1));

    let record = |z: &CVec,
                  t: f64,
                  fval: CVec,
                  times: &mut Vec<f64>,
                  vs: &mut Vec<CVec>,
                  force: &mut Vec<CVec>,
                  fric: &mut Vec<CVec>,
                  energy: &mut Vec<f64>,
                  hidden: &mut Option<Vec<CVec>>| {
        let v = w_mat.dot(z);
        let fr = ed.cplq.dot(z).mapv(|x| x * C64::new(0.0, -1.0));
        energy.push(0.5 * z.iter().map(|x| x.norm_sqr()).sum::<f64>());
        if let (Some(store), Some(hq)) = (hidden.as_mut(), ed.hidden_q.as_ref()) {
            store.push(hq.dot(z).mapv(|x| x * C64::from(root_m1_inv)));
        }
        times.push(t);
        vs.push(v);
        force.push(fval);
        fric.push(fr);
    };

    record(&z, start, f.eval(start), &mut times, &mut vs, &mut force, &mut fric, &mut energy, &mut hidden);
    work_ext.push(0.0);
    work_fric.push(0.0);

    let mut phi_cur: Option<CVec> = {
        let f0 = &force[0];
        (f0.iter().any(|x| x.norm() > 0.0)).then(|| wt.dot(f0))
    };
    for nstep in 0..steps {
        let t_next = start + (nstep + 1) as f64 * dt;
        let f_next = f.eval(t_next);
        let phi_next: Option<CVec> =
            (f_next.iter().any(|x| x.norm() > 0.0)).then(|| wt.dot(&f_next));
        match (&phi_cur, &phi_next) {
            (None, None) => {
                for j in 0..n {
                    z[j] *= e[j];
                }
            }
            _ => {
                let zero = CVec::zeros(n);
                let p0 = phi_cur.as_ref().unwrap_or(&zero);
                let p1 = phi_next.as_ref().unwrap_or(&zero);
                for j in 0..n {
                    z[j] = e[j] * z[j] + i0[j] * p0[j] + i1[j] * p1[j];
                }
            }
        }
        if let Some((jump, idx)) = &pulse {
            if *idx == nstep + 1 {
                z = &z + jump;
            }
        }
        record(&z, t_next, f_next, &mut times, &mut vs, &mut force, &mut fric, &mut energy, &mut hidden);
        let k = nstep + 1;
        work_ext.push(
            work_ext[nstep]
                + 0.5 * dt * (re_inner(&force[nstep], &vs[nstep]) + re_inner(&force[k], &vs[k])),
        );
        work_fric.push(
            work_fric[nstep]
                + 0.5 * dt * (re_inner(&fric[nstep], &vs[nstep]) + re_inner(&fric[k], &vs[k])),
        );
        phi_cur = phi_next;
    }

    Ok(Trajectory {
        times,
        v: vs,
        hidden,
        friction_force: fric,
        force,
        energy,
        work_ext,
        work_fric,
        meta: SimMeta {
            method: "eigen-propagator",
            dt,
            rest_start: opts.initial_v.is_none(),
            hidden_mass: Some(blk.hidden_mass()),
        },
    })
}

fn trapezoid_run(
    blk: &BlockSystem,
    f: &ForcingSignal,
    start: f64,
    steps: usize,
    dt: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let d = blk.dim();
    let mm = blk.hidden_dim();
    let n = d + mm;
    let mass = blk.mass_matrix();
    let op = blk.operator_matrix();
    let lhs = &mass + &op.mapv(|x| x * C64::new(0.0, 0.5 * dt));
    let rhs_mat = &mass - &op.mapv(|x| x * C64::new(0.0, 0.5 * dt));
    let lhs_lu = lhs.factorize()?;
    let m_inv = linalg::inv(blk.mass())?;
    let root_m1 = blk.hidden_mass().sqrt();

    let mut state: CVec = CVec::zeros(n);
    if let Some(v0) = &opts.initial_v {
        state.slice_mut(s![..d]).assign(v0);
    }
    let pulse = f.pulse_part().map(|(amp, t0)| {
        let idx = (((t0 - start) / dt).round() as usize).min(steps);
        (m_inv.dot(amp), idx)
    });
    if let Some((jump, 0)) = &pulse {
        let mut obs = state.slice_mut(s![..d]);
        obs += jump;
    }

    let mut times = Vec::with_capacity(steps + 1);
    let mut vs: Vec<CVec> = Vec::with_capacity(steps + 1);
    let mut force = Vec::with_capacity(steps + 1);
    let mut fric = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    let mut work_ext = Vec::with_capacity(steps + 1);
    let mut work_fric = Vec::with_capacity(steps + 1);
    let mut hidden = opts.record_hidden.then(|| Vec::with_capacity(steps + 1));

    let gamma = blk.extension().gamma();
    let record = |state: &CVec,
                  t: f64,
                  fval: CVec,
                  times: &mut Vec<f64>,
                  vs: &mut Vec<CVec>,
                  force: &mut Vec<CVec>,
                  fric: &mut Vec<CVec>,
                  energy: &mut Vec<f64>,
                  hidden: &mut Option<Vec<CVec>>| {
        let v = state.slice(s![..d]).to_owned();
        let w = state.slice(s![d..]).to_owned();
        let fr = gamma.dot(&w).mapv(|x| x * C64::new(0.0, -root_m1));
        energy.push(
            0.5 * re_inner(&v, &blk.mass().dot(&v))
                + 0.5 * blk.hidden_mass() * w.iter().map(|x| x.norm_sqr()).sum::<f64>(),
        );
        if let Some(store) = hidden.as_mut() {
            store.push(w);
        }
        times.push(t);
        vs.push(v);
        force.push(fval);
        fric.push(fr);
    };

    record(&state, start, f.eval(start), &mut times, &mut vs, &mut force, &mut fric, &mut energy, &mut hidden);
    work_ext.push(0.0);
    work_fric.push(0.0);

    for nstep in 0..steps {
        let t_next = start + (nstep + 1) as f64 * dt;
        let f_next = f.eval(t_next);
        let mut rhs = rhs_mat.dot(&state);
        {
            let fsum = (&force[nstep] + &f_next).mapv(|x| x * C64::from(0.5 * dt));
            let mut obs = rhs.slice_mut(s![..d]);
            obs += &fsum;
        }
        state = lhs_lu.solve(&rhs)?;
        if let Some((jump, idx)) = &pulse {
            if *idx == nstep + 1 {
                let mut obs = state.slice_mut(s![..d]);
                obs += jump;
            }
        }
        record(&state, t_next, f_next, &mut times, &mut vs, &mut force, &mut fric, &mut energy, &mut hidden);
        let k = nstep + 1;
        work_ext.push(
            work_ext[nstep]
                + 0.5 * dt * (re_inner(&force[nstep], &vs[nstep]) + re_inner(&force[k], &vs[k])),
        );
        work_fric.push(
            work_fric[nstep]
                + 0.5 * dt * (re_inner(&fric[nstep], &vs[nstep]) + re_inner(&fric[k], &vs[k])),
        );
    }

    Ok(Trajectory {
        times,
        v: vs,
        hidden,
        friction_force: fric,
        force,
        energy,
        work_ext,
        work_fric,
        meta: SimMeta {
            method: "block-trapezoid",
            dt,
            rest_start: opts.initial_v.is_none(),
            hidden_mass: Some(blk.hidden_mass()),
        },
    })
}

/// Which system a trajectory belongs to, for ledger recomputation.
pub enum SystemRef<'a> {
    Direct(&'a DispersiveSystem),
    Extended(&'a BlockSystem),
}

/// Energy bookkeeping recomputed from the recorded states.
#[derive(Clone, Debug)]
pub struct EnergyLedger {
    pub energy: Vec<f64>,
    pub work_ext: Vec<f64>,
    pub work_fric: Vec<f64>,
    /// Energy balance violation per step: `E_n - E_0 - W_ext,n - W_fric,n`
    /// for the dissipative system, `E_n - E_0 - W_ext,n` for the extended
    /// one (the hidden modes absorb the friction work there).
    pub balance_residual: Vec<f64>,
    /// Largest absolute deviation between the recomputed series and the
    /// ones stored in the trajectory.
    pub recompute_defect: f64,
}

/// Recomputes the energy ledger of a trajectory from its states.
///
/// Extended trajectories must carry the recorded hidden state; without it
/// the block energy cannot be reconstructed.
pub fn energy_ledger(traj: &Trajectory, sys: SystemRef<'_>) -> Result<EnergyLedger> {
    let k = traj.len();
    if k == 0 || traj.v.len() != k || traj.force.len() != k {
        return Err(Error::MissingTrajectoryData(
            "trajectory state, force, and time series have mismatched lengths".into(),
        ));
    }
    let dt = traj.meta.dt;
    let (energy, fric): (Vec<f64>, Vec<CVec>) = match sys {
        SystemRef::Direct(sys) => {
            let d = sys.dim();
            let alpha = AlphaSeq::build(sys.kernel(), k - 1, dt);
            let alpha0 = alpha.at_zero(d);
            let mut chat = CVec::zeros(d);
            let mut energy = Vec::with_capacity(k);
            let mut fric = Vec::with_capacity(k);
            for (n, v) in traj.v.iter().enumerate() {
                alpha.conv_hat(&traj.v, n, dt, &mut chat);
                let mut fr = -(sys.kernel().alpha_inf().dot(v)) - &chat;
                fr = fr - alpha0.dot(v).mapv(|x| x * C64::from(0.5 * dt));
                energy.push(0.5 * re_inner(v, &sys.mass().dot(v)));
                fric.push(fr);
            }
            (energy, fric)
        }
        SystemRef::Extended(blk) => {
            let hidden = traj.hidden.as_ref().ok_or_else(|| {
                Error::MissingTrajectoryData(
                    "extended ledger needs the recorded hidden state; rerun with record_hidden".into(),
                )
            })?;
            if hidden.len() != k {
                return Err(Error::MissingTrajectoryData(
                    "hidden series length does not match the trajectory".into(),
                ));
            }
            let root_m1 = blk.hidden_mass().sqrt();
            let gamma = blk.extension().gamma();
            let mut energy = Vec::with_capacity(k);
            let mut fric = Vec::with_capacity(k);
            for (v, w) in traj.v.iter().zip(hidden) {
                energy.push(
                    0.5 * re_inner(v, &blk.mass().dot(v))
                        + 0.5 * blk.hidden_mass() * w.iter().map(|x| x.norm_sqr()).sum::<f64>(),
                );
                fric.push(gamma.dot(w).mapv(|x| x * C64::new(0.0, -root_m1)));
            }
            (energy, fric)
        }
    };

    let mut work_ext = vec![0.0; k];
    let mut work_fric = vec![0.0; k];
    for n in 1..k {
        work_ext[n] = work_ext[n - 1]
            + 0.5 * dt * (re_inner(&traj.force[n - 1], &traj.v[n - 1]) + re_inner(&traj.force[n], &traj.v[n]));
        work_fric[n] = work_fric[n - 1]
            + 0.5 * dt * (re_inner(&fric[n - 1], &traj.v[n - 1]) + re_inner(&fric[n], &traj.v[n]));
    }

    let extended = matches!(sys, SystemRef::Extended(_));
    let balance_residual: Vec<f64> = (0..k)
        .map(|n| {
            let fric_part = if extended { 0.0 } else { work_fric[n] };
            energy[n] - energy[0] - work_ext[n] - fric_part
        })
        .collect();

    let mut defect = 0.0f64;
    for n in 0..k {
        defect = defect
            .max((energy[n] - traj.energy[n]).abs())
            .max((work_ext[n] - traj.work_ext[n]).abs())
            .max((work_fric[n] - traj.work_fric[n]).abs());
    }

    Ok(EnergyLedger { energy, work_ext, work_fric, balance_residual, recompute_defect: defect })
}

/// Tail-decay diagnostic over dyadic windows.
#[derive(Clone, Debug)]
pub struct DecayReport {
    /// Global peak of the observable norm.
    pub peak: f64,
    /// Window boundaries, halving toward the end of the trajectory.
    pub windows: Vec<(f64, f64)>,
    /// Sup of the observable norm per window.
    pub window_sups: Vec<f64>,
    pub last_sup: f64,
    /// `last_sup / peak`.
    pub fraction: f64,
    /// Whether the window sups are non-increasing (10% slack).
    pub monotone: bool,
    pub pass: bool,
}

/// Checks observed decay: the tail `[t_tail_start, t_end]` is split into
/// dyadic windows and the last window's sup must fall below the given
/// fraction of the global peak.
pub fn decay_report(traj: &Trajectory, t_tail_start: f64, fraction: f64) -> Result<DecayReport> {
    if traj.len() < 2 {
        return Err(Error::MissingTrajectoryData("decay check needs at least two steps".into()));
    }
    let t_end = *traj.times.last().unwrap();
    let t0 = traj.times[0];
    if !(t_tail_start >= t0 && t_tail_start < t_end) {
        return Err(Error::InvalidInput(format!(
            "tail start {t_tail_start} lies outside the trajectory [{t0}, {t_end}]"
        )));
    }
    if !(fraction > 0.0 && fraction.is_finite()) {
        return Err(Error::InvalidInput(format!("decay fraction must be positive, got {fraction}")));
    }
    let norms: Vec<f64> = traj
        .v
        .iter()
        .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let peak = norms.iter().fold(0.0f64, |m, x| m.max(*x));

    let dt = traj.meta.dt;
    let mut windows = Vec::new();
    let mut lo = t_tail_start;
    loop {
        let remaining = t_end - lo;
        let half = remaining / 2.0;
        if half < 8.0 * dt {
            windows.push((lo, t_end));
            break;
        }
        windows.push((lo, lo + half));
        lo += half;
    }
    let window_sups: Vec<f64> = windows
        .iter()
        .map(|(a, b)| {
            traj.times
                .iter()
                .zip(&norms)
                .filter(|(t, _)| **t >= *a - 1e-12 && **t <= *b + 1e-12)
                .map(|(_, n)| *n)
                .fold(0.0f64, f64::max)
        })
        .collect();
    let last_sup = *window_sups.last().unwrap();
    let frac = if peak > 0.0 { last_sup / peak } else { 0.0 };
    let monotone = window_sups.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Ok(DecayReport {
        peak,
        windows,
        window_sups,
        last_sup,
        fraction: frac,
        monotone,
        pass: frac <= fraction,
    })
}

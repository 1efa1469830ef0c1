//! Friction kernels, half-plane transforms, spectral densities, and the
//! Lorentz closed forms.
//!
//! A friction kernel is the pair `a(t) = alpha_inf*delta(t) + alpha(t)`:
//! an instantaneous positive part plus a bounded retarded part. Its
//! frequency fingerprint is the half-plane transform
//! `ahat(zeta) = alpha_inf + int_0^inf e^{i zeta t} alpha(t) dt`, and the
//! spectral fingerprint is the boundary density
//! `N(sigma) = (1/pi) Re ahat(sigma + i0)`, recovered here by Stieltjes
//! inversion with Richardson extrapolation in the offset `eta`.

use std::sync::Arc;

use ndarray::Array2;

use crate::linalg;
use crate::{tol, C64, CMat, Error, Result};

/// 1x1 complex matrix, a convenience for scalar systems.
#[must_use]
pub fn scalar_mat(z: C64) -> CMat {
    Array2::from_elem((1, 1), z)
}

/// Retarded part of a friction kernel.
#[derive(Clone)]
pub enum RetardedPart {
    /// No memory at all; the kernel is the instantaneous atom only.
    Zero,
    /// Closed-form evaluator, defined for `t >= 0`.
    ClosedForm(Arc<dyn Fn(f64) -> CMat + Send + Sync>),
    /// Uniform samples `alpha(j*dt)` for `j = 0..n`, linearly interpolated,
    /// zero beyond the last sample.
    Sampled { dt: f64, values: Vec<CMat> },
}

impl std::fmt::Debug for RetardedPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RetardedPart::Zero => f.write_str("Zero"),
            RetardedPart::ClosedForm(_) => f.write_str("ClosedForm(..)"),
            RetardedPart::Sampled { dt, values } => f
                .debug_struct("Sampled")
                .field("dt", dt)
                .field("len", &values.len())
                .finish(),
        }
    }
}

/// Memory friction kernel `a(t) = alpha_inf*delta(t) + alpha(t)`.
#[derive(Clone, Debug)]
pub struct FrictionKernel {
    dim: usize,
    alpha_inf: CMat,
    alpha: RetardedPart,
    alpha_sup: f64,
}

impl FrictionKernel {
    /// Builds a kernel, projecting `alpha_inf` onto the positive cone
    /// (hard error when it is genuinely indefinite) and checking sample
    /// dimensions and the declared bound on the retarded part.
    pub fn new(alpha_inf: CMat, alpha: RetardedPart, alpha_sup: f64) -> Result<Self> {
        let dim = alpha_inf.nrows();
        if alpha_inf.ncols() != dim || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "alpha_inf must be square and nonempty, got {}x{}",
                dim,
                alpha_inf.ncols()
            )));
        }
        let alpha_inf = linalg::psd_clip(&alpha_inf)?;
        if !alpha_sup.is_finite() || alpha_sup < 0.0 {
            return Err(Error::InvalidInput(format!(
                "alpha_sup must be a nonnegative finite bound, got {alpha_sup}"
            )));
        }
        if let RetardedPart::Sampled { dt, values } = &alpha {
            if *dt <= 0.0 || !dt.is_finite() {
                return Err(Error::InvalidInput(format!("sample spacing must be positive, got {dt}")));
            }
            if values.is_empty() {
                return Err(Error::InvalidInput("sampled kernel needs at least one sample".into()));
            }
            for (j, v) in values.iter().enumerate() {
                if v.nrows() != dim || v.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "sample {j} is {}x{}, kernel dimension is {dim}",
                        v.nrows(),
                        v.ncols()
                    )));
                }
                let norm = linalg::opnorm(v)?;
                if norm > alpha_sup * (1.0 + 1e-9) + 1e-300 {
                    return Err(Error::InvalidInput(format!(
                        "sample {j} has norm {norm:.6e}, above the declared bound {alpha_sup:.6e}"
                    )));
                }
            }
        }
        Ok(FrictionKernel { dim, alpha_inf, alpha, alpha_sup })
    }

    /// Kernel with no memory: `a(t) = alpha_inf * delta(t)`.
    pub fn instantaneous(alpha_inf: CMat) -> Result<Self> {
        Self::new(alpha_inf, RetardedPart::Zero, 0.0)
    }

    /// The zero kernel in dimension `d`.
    pub fn zero(d: usize) -> Result<Self> {
        Self::new(CMat::zeros((d, d)), RetardedPart::Zero, 0.0)
    }

    /// Scalar kernel from a closed-form retarded part.
    pub fn scalar_closed_form(
        alpha_inf: f64,
        alpha: impl Fn(f64) -> C64 + Send + Sync + 'static,
        alpha_sup: f64,
    ) -> Result<Self> {
        Self::new(
            scalar_mat(C64::from(alpha_inf)),
            RetardedPart::ClosedForm(Arc::new(move |t| scalar_mat(alpha(t)))),
            alpha_sup,
        )
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[must_use]
    pub fn alpha_inf(&self) -> &CMat {
        &self.alpha_inf
    }

    #[must_use]
    pub fn alpha_sup(&self) -> f64 {
        self.alpha_sup
    }

    #[must_use]
    pub fn retarded(&self) -> &RetardedPart {
        &self.alpha
    }

    /// Support horizon of the retarded part, when one is declared by the
    /// data: sampled kernels end at their last sample, the zero kernel at 0.
    /// Closed forms carry no horizon.
    #[must_use]
    pub fn horizon(&self) -> Option<f64> {
        match &self.alpha {
            RetardedPart::Zero => Some(0.0),
            RetardedPart::ClosedForm(_) => None,
            RetardedPart::Sampled { dt, values } => Some(dt * (values.len() - 1) as f64),
        }
    }

    /// Retarded part at `t >= 0`. Sampled kernels interpolate linearly and
    /// vanish beyond the horizon.
    #[must_use]
    pub fn alpha_at(&self, t: f64) -> CMat {
        debug_assert!(t >= 0.0, "alpha_at takes nonnegative times, got {t}");
        match &self.alpha {
            RetardedPart::Zero => CMat::zeros((self.dim, self.dim)),
            RetardedPart::ClosedForm(f) => f(t),
            RetardedPart::Sampled { dt, values } => {
                let x = t / dt;
                let j = x.floor() as usize;
                if j + 1 >= values.len() {
                    if j + 1 == values.len() && (x - j as f64).abs() < 1e-12 {
                        return values[j].clone();
                    }
                    return CMat::zeros((self.dim, self.dim));
                }
                let frac = x - j as f64;
                let a = &values[j];
                let b = &values[j + 1];
                a * C64::from(1.0 - frac) + b * C64::from(frac)
            }
        }
    }
}

/// Two-sided Hermitian extension of the retarded part: `alpha(t)` for
/// `t > 0`, `alpha(-t)*` for `t < 0`, and the Hermitian part of
/// `alpha(+0)` at `t = 0`. The instantaneous atom `2 alpha_inf delta(t)`
/// is carried symbolically by the kernel type, not returned here.
#[must_use]
pub fn extend_kernel(kernel: &FrictionKernel, t: f64) -> CMat {
    if t > 0.0 {
        kernel.alpha_at(t)
    } else if t < 0.0 {
        linalg::adjoint(&kernel.alpha_at(-t))
    } else {
        linalg::hermitian_part(&kernel.alpha_at(0.0))
    }
}

/// A dissipative linear system: the triplet of a positive-definite mass,
/// a Hermitian internal generator, and a friction kernel.
#[derive(Clone, Debug)]
pub struct DispersiveSystem {
    m: CMat,
    a: CMat,
    kernel: FrictionKernel,
}

impl DispersiveSystem {
    pub fn new(m: CMat, a: CMat, kernel: FrictionKernel) -> Result<Self> {
        let d = kernel.dim();
        if m.nrows() != d || m.ncols() != d || a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mass is {}x{}, generator is {}x{}, kernel dimension is {d}",
                m.nrows(),
                m.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        linalg::require_hermitian(&m)?;
        linalg::require_hermitian(&a)?;
        let (lo, hi) = linalg::eig_range(&m)?;
        if !(lo > tol::RANK_REL * hi.max(f64::MIN_POSITIVE)) {
            return Err(Error::NotPositive { found: lo, threshold: tol::RANK_REL * hi });
        }
        Ok(DispersiveSystem {
            m: linalg::hermitian_part(&m),
            a: linalg::hermitian_part(&a),
            kernel,
        })
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    #[must_use]
    pub fn mass(&self) -> &CMat {
        &self.m
    }

    #[must_use]
    pub fn operator(&self) -> &CMat {
        &self.a
    }

    #[must_use]
    pub fn kernel(&self) -> &FrictionKernel {
        &self.kernel
    }
}

/// Quadrature parameters for [`laplace_kernel`].
#[derive(Clone, Debug)]
pub struct LaplaceQuad {
    /// Integration horizon. Default: the kernel's sample horizon, or a
    /// horizon chosen so the analytic tail bound meets `tail_tol` (capped).
    pub t_max: Option<f64>,
    /// Trapezoid panel count over `[0, t_max]`. Default targets a step of
    /// 5e-3 subject to a panel cap.
    pub steps: Option<usize>,
    /// Acceptable analytic tail bound; sampled kernels whose declared
    /// horizon cannot meet it are rejected.
    pub tail_tol: f64,
    /// Smallest admissible Im zeta.
    pub eta_min: f64,
}

impl Default for LaplaceQuad {
    fn default() -> Self {
        LaplaceQuad { t_max: None, steps: None, tail_tol: 1e-6, eta_min: 1e-6 }
    }
}

/// A transform value together with its reported error estimate.
#[derive(Clone, Debug)]
pub struct LaplaceValue {
    pub value: CMat,
    /// Analytic tail bound plus an empirical quadrature estimate.
    pub error_bound: f64,
}

/// Half-plane transform `ahat(zeta) = alpha_inf + int_0^inf e^{i zeta t}
/// alpha(t) dt`, computed by composite trapezoid on the kernel's own
/// sample grid (or a generated grid for closed forms). The tail beyond the
/// horizon is not integrated; its bound `alpha_sup e^{-Im zeta T}/Im zeta`
/// goes into the error estimate, and sampled kernels are rejected when
/// that bound exceeds the requested tolerance.
pub fn laplace_kernel(kernel: &FrictionKernel, zeta: C64, quad: &LaplaceQuad) -> Result<LaplaceValue> {
    let eta = zeta.im;
    if eta < quad.eta_min {
        return Err(Error::PointNotInUpperHalfPlane(zeta));
    }
    let d = kernel.dim();
    if matches!(kernel.retarded(), RetardedPart::Zero) {
        return Ok(LaplaceValue { value: kernel.alpha_inf().clone(), error_bound: 0.0 });
    }

    let tail_bound_at = |t_max: f64| kernel.alpha_sup() * (-eta * t_max).exp() / eta;

    let (t_max, n) = match kernel.retarded() {
        RetardedPart::Zero => unreachable!(),
        RetardedPart::Sampled { dt, values } => {
            let horizon = dt * (values.len() - 1) as f64;
            let t_max = quad.t_max.unwrap_or(horizon).min(horizon);
            if tail_bound_at(t_max) > quad.tail_tol {
                return Err(Error::InvalidInput(format!(
                    "sampled kernel horizon {t_max} leaves a tail bound {:.3e} above the requested tolerance {:.3e} at Im zeta = {eta:.3e}",
                    tail_bound_at(t_max),
                    quad.tail_tol
                )));
            }
            let n = quad.steps.unwrap_or_else(|| ((t_max / dt).round() as usize).max(1));
            (t_max, n)
        }
        RetardedPart::ClosedForm(_) => {
            let t_max = quad.t_max.unwrap_or_else(|| {
                let sup = kernel.alpha_sup().max(1e-300);
                let needed = (sup / (quad.tail_tol * eta)).max(1.0).ln() / eta;
                needed.clamp(20.0, 2e4)
            });
            let n = quad
                .steps
                .unwrap_or_else(|| ((t_max / 5e-3).ceil() as usize).clamp(100, 2_000_000));
            (t_max, n)
        }
    };

    let h = t_max / n as f64;
    let mut acc = CMat::zeros((d, d));
    let mut acc_coarse = CMat::zeros((d, d));
    let i = C64::new(0.0, 1.0);
    for j in 0..=n {
        let t = j as f64 * h;
        let phase = (i * zeta * C64::from(t)).exp();
        let f = kernel.alpha_at(t).mapv(|z| z * phase);
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        acc = acc + f.mapv(|z| z * C64::from(w * h));
        // Every-other-sample pass at double step for an error estimate.
        if j % 2 == 0 {
            let wc = if j == 0 || j == n { 0.5 } else { 1.0 };
            acc_coarse = acc_coarse + f.mapv(|z| z * C64::from(wc * 2.0 * h));
        }
    }
    let quad_est = if n >= 2 && n % 2 == 0 {
        linalg::frob(&(&acc - &acc_coarse)) / 3.0
    } else {
        0.0
    };
    let value = kernel.alpha_inf() + &acc;
    Ok(LaplaceValue { value, error_bound: tail_bound_at(t_max) + quad_est })
}

/// Midpoint quadrature grid for densities: cell centers and widths.
#[derive(Clone, Debug)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    /// Grid from strictly increasing cell boundaries.
    pub fn from_boundaries(bounds: &[f64]) -> Result<Self> {
        if bounds.len() < 2 {
            return Err(Error::InvalidInput("a grid needs at least two boundaries".into()));
        }
        let mut nodes = Vec::with_capacity(bounds.len() - 1);
        let mut weights = Vec::with_capacity(bounds.len() - 1);
        for w in bounds.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "grid boundaries must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
            nodes.push(0.5 * (w[0] + w[1]));
            weights.push(w[1] - w[0]);
        }
        Ok(Grid { nodes, weights })
    }

    /// Uniform grid of `n` cells over `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("bad uniform grid: [{lo}, {hi}] with {n} cells")));
        }
        let h = (hi - lo) / n as f64;
        let bounds: Vec<f64> = (0..=n).map(|j| lo + j as f64 * h).collect();
        Self::from_boundaries(&bounds)
    }

    /// Graded grid over `[lo, hi]` with `n` cells, denser near the given
    /// focus windows `(center, halfwidth)` by roughly the factor `boost`.
    ///
    /// Cells are equal-mass cells of the density
    /// `1 + boost * sum_j 1/(1 + ((x - c_j)/w_j)^2)`, computed by quantile
    /// lookup on a fine reference grid; deterministic for fixed inputs.
    pub fn graded(lo: f64, hi: f64, n: usize, focus: &[(f64, f64)], boost: f64) -> Result<Self> {
        if n == 0 || !(hi > lo) {
            return Err(Error::InvalidInput(format!("bad graded grid: [{lo}, {hi}] with {n} cells")));
        }
        if boost < 0.0 {
            return Err(Error::InvalidInput(format!("grading boost must be nonnegative, got {boost}")));
        }
        for &(c, w) in focus {
            if !(w > 0.0) || !c.is_finite() {
                return Err(Error::InvalidInput(format!("bad focus window ({c}, {w})")));
            }
        }
        let fine = (n * 20).max(1000);
        let hfine = (hi - lo) / fine as f64;
        let dens = |x: f64| -> f64 {
            let mut s = 1.0;
            for &(c, w) in focus {
                let u = (x - c) / w;
                s += boost / (1.0 + u * u);
            }
            s
        };
        // Cumulative mass at fine boundaries by trapezoid.
        let mut cum = Vec::with_capacity(fine + 1);
        cum.push(0.0);
        let mut prev = dens(lo);
        let mut total = 0.0;
        for j in 1..=fine {
            let x = lo + j as f64 * hfine;
            let cur = dens(x);
            total += 0.5 * (prev + cur) * hfine;
            cum.push(total);
            prev = cur;
        }
        let mut bounds = Vec::with_capacity(n + 1);
        bounds.push(lo);
        let mut j = 0usize;
        for i in 1..n {
            let target = total * i as f64 / n as f64;
            while j + 1 < cum.len() && cum[j + 1] < target {
                j += 1;
            }
            let seg = cum[j + 1] - cum[j];
            let frac = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
            bounds.push(lo + (j as f64 + frac) * hfine);
        }
        bounds.push(hi);
        Self::from_boundaries(&bounds)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Matrix-valued quadrature density: nodes, cell widths, PSD matrices, and
/// per-node numerical ranks.
#[derive(Clone, Debug)]
pub struct SpectralDensity {
    pub dim: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub matrices: Vec<CMat>,
    pub ranks: Vec<usize>,
}

impl SpectralDensity {
    /// Validates ordering and positivity (eigenvalue clipping relative to
    /// the family scale, hard error for genuine negativity) and computes
    /// numerical ranks against the same scale.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, matrices: Vec<CMat>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.len() != matrices.len() {
            return Err(Error::DimensionMismatch(format!(
                "nodes/weights/matrices lengths differ: {} / {} / {}",
                nodes.len(),
                weights.len(),
                matrices.len()
            )));
        }
        if nodes.is_empty() {
            return Ok(SpectralDensity { dim: 0, nodes, weights, matrices, ranks: Vec::new() });
        }
        let dim = matrices[0].nrows();
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "density nodes must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (k, w) in weights.iter().enumerate() {
            if !(*w > 0.0) {
                return Err(Error::InvalidInput(format!("cell width at node {k} must be positive, got {w}")));
            }
        }
        // Family scale for clipping and rank decisions.
        let mut eigs: Vec<Vec<f64>> = Vec::with_capacity(matrices.len());
        let mut vecs: Vec<CMat> = Vec::with_capacity(matrices.len());
        let mut scale = 0.0f64;
        for (k, m) in matrices.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "density matrix {k} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            linalg::require_hermitian(m)?;
            let (vals, q) = linalg::eigh(&linalg::hermitian_part(m))?;
            scale = vals.iter().fold(scale, |s, v| s.max(v.abs()));
            eigs.push(vals.to_vec());
            vecs.push(q);
        }
        let hard = -tol::PSD_HARD_REL * scale;
        let rank_cut = tol::RANK_REL * scale;
        let mut clipped = Vec::with_capacity(matrices.len());
        let mut ranks = Vec::with_capacity(matrices.len());
        for (k, (vals, q)) in eigs.iter().zip(&vecs).enumerate() {
            if let Some(&worst) = vals.iter().filter(|v| **v < hard).min_by(|a, b| a.partial_cmp(b).unwrap()) {
                let _ = k;
                return Err(Error::NotPositive { found: worst, threshold: hard });
            }
            let rank = vals.iter().filter(|v| **v > rank_cut).count();
            ranks.push(rank);
            let mut scaled = q.clone();
            for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
                let f = C64::from(vals[j].max(0.0));
                col.mapv_inplace(|z| z * f);
            }
            clipped.push(scaled.dot(&linalg::adjoint(q)));
        }
        Ok(SpectralDensity { dim, nodes, weights, matrices: clipped, ranks })
    }

    /// Scalar density from nodal values.
    pub fn scalar(grid: &Grid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let mats = values.iter().map(|v| scalar_mat(C64::from(*v))).collect();
        Self::new(grid.nodes.clone(), grid.weights.clone(), mats)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature total `sum_k N_k dsigma_k`.
    #[must_use]
    pub fn total_mass(&self) -> CMat {
        let mut acc = CMat::zeros((self.dim, self.dim));
        for (m, w) in self.matrices.iter().zip(&self.weights) {
            acc = acc + m.mapv(|z| z * C64::from(*w));
        }
        acc
    }
}

/// Midpoint-rule Cauchy transform `sum_k N_k dsigma_k / (sigma_k - zeta)`.
pub fn cauchy_transform(density: &SpectralDensity, zeta: C64) -> Result<CMat> {
    if zeta.im == 0.0 {
        return Err(Error::InvalidInput(format!(
            "cauchy transform needs Im zeta != 0, got zeta = {zeta}"
        )));
    }
    let d = density.dim;
    let mut acc = CMat::zeros((d, d));
    for ((m, w), s) in density.matrices.iter().zip(&density.weights).zip(&density.nodes) {
        let c = C64::from(*w) / (C64::from(*s) - zeta);
        acc = acc + m.mapv(|z| z * c);
    }
    Ok(acc)
}

/// What a Herglotz-type evaluator represents, which fixes where its
/// boundary density lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HerglotzKind {
    /// Kernel transform `ahat(zeta)`: density is the Hermitian part at the
    /// boundary.
    KernelTransform,
    /// Admittance `Adm(zeta)`: density is likewise the Hermitian part.
    Admittance,
    /// Plain Herglotz function: density is the skew part (matrix imaginary
    /// part) at the boundary.
    Generic,
}

/// Matrix-valued analytic function on the open upper half plane.
///
/// Evaluation is fallible: admittance-type evaluators invert a matrix at
/// each point and can meet a singularity when the underlying system does
/// not satisfy the dissipation condition.
#[derive(Clone)]
pub struct HerglotzEvaluator {
    dim: usize,
    kind: HerglotzKind,
    eval: Arc<dyn Fn(C64) -> Result<CMat> + Send + Sync>,
}

impl std::fmt::Debug for HerglotzEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HerglotzEvaluator")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl HerglotzEvaluator {
    pub fn new(
        dim: usize,
        kind: HerglotzKind,
        eval: impl Fn(C64) -> Result<CMat> + Send + Sync + 'static,
    ) -> Self {
        HerglotzEvaluator { dim, kind, eval: Arc::new(eval) }
    }

    /// Scalar evaluator from an infallible closed form.
    pub fn scalar(kind: HerglotzKind, eval: impl Fn(C64) -> C64 + Send + Sync + 'static) -> Self {
        HerglotzEvaluator {
            dim: 1,
            kind,
            eval: Arc::new(move |z| Ok(scalar_mat(eval(z)))),
        }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[must_use]
    pub fn kind(&self) -> HerglotzKind {
        self.kind
    }

    pub fn eval(&self, zeta: C64) -> Result<CMat> {
        (self.eval)(zeta)
    }

    /// The Hermitian matrix whose boundary limit carries the density:
    /// Hermitian part for transform and admittance kinds, skew part for
    /// generic Herglotz functions.
    #[must_use]
    pub fn boundary_part(&self, value: &CMat) -> CMat {
        match self.kind {
            HerglotzKind::KernelTransform | HerglotzKind::Admittance => linalg::hermitian_part(value),
            HerglotzKind::Generic => linalg::skew_part(value),
        }
    }
}

/// Evaluator of a kernel's half-plane transform, backed by
/// [`laplace_kernel`] with the given quadrature.
#[must_use]
pub fn kernel_transform_evaluator(kernel: FrictionKernel, quad: LaplaceQuad) -> HerglotzEvaluator {
    let dim = kernel.dim();
    HerglotzEvaluator::new(dim, HerglotzKind::KernelTransform, move |zeta| {
        laplace_kernel(&kernel, zeta, &quad).map(|v| v.value)
    })
}

/// Tuning knobs for [`stieltjes_invert`].
#[derive(Clone, Debug)]
pub struct InversionOptions {
    /// Per-node cap on the extrapolation correction, relative to the
    /// largest recovered boundary value.
    pub residual_cap: f64,
    /// Fraction of nodes allowed above the cap before the inversion fails.
    pub bad_fraction: f64,
    /// Passivity tolerance for the pre-check on sampled points, relative.
    pub passivity_tol: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions {
            residual_cap: tol::STIELTJES_RESIDUAL_REL,
            bad_fraction: tol::STIELTJES_BAD_FRACTION,
            passivity_tol: tol::PDC_TOL,
        }
    }
}

/// Result of a Stieltjes inversion: the density plus per-node extrapolation
/// residuals (normalized by the recovered scale).
#[derive(Debug)]
pub struct Inversion {
    pub density: SpectralDensity,
    pub residuals: Vec<f64>,
    pub worst_residual: f64,
    /// Largest boundary-value norm, the normalization of the residuals.
    pub scale: f64,
}

/// Recovers the boundary density `(1/pi) * boundary part of h` at the grid
/// nodes by two-point Richardson extrapolation from the last two offsets in
/// `etas`. See [`stieltjes_invert_with`] for the failure behavior.
pub fn stieltjes_invert(h: &HerglotzEvaluator, grid: &Grid, etas: &[f64]) -> Result<Inversion> {
    stieltjes_invert_with(h, grid, etas, &InversionOptions::default())
}

/// [`stieltjes_invert`] with explicit options.
///
/// A node whose extrapolation correction exceeds `residual_cap` (relative
/// to the largest recovered value) signals measure content that a nodal
/// density cannot represent, an atom in particular; the inversion fails
/// once more than `bad_fraction` of the nodes do so.
pub fn stieltjes_invert_with(
    h: &HerglotzEvaluator,
    grid: &Grid,
    etas: &[f64],
    opts: &InversionOptions,
) -> Result<Inversion> {
    if etas.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two offsets for extrapolation, got {}",
            etas.len()
        )));
    }
    for w in etas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidInput(format!(
                "offsets must decrease strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !(*etas.last().unwrap() > 0.0) {
        return Err(Error::InvalidInput("offsets must stay positive".into()));
    }
    let eta1 = etas[etas.len() - 2];
    let eta2 = etas[etas.len() - 1];
    let d = h.dim();
    let k_total = grid.len();

    let mut boundary = Vec::with_capacity(k_total);
    let mut corrections = Vec::with_capacity(k_total);
    let mut passivity_worst = 0.0f64;
    let mut passivity_where = C64::from(0.0);
    let mut value_scale = 0.0f64;
    for &sigma in &grid.nodes {
        let f1 = h.boundary_part(&h.eval(C64::new(sigma, eta1))?);
        let f2 = h.boundary_part(&h.eval(C64::new(sigma, eta2))?);
        for (f, eta) in [(&f1, eta1), (&f2, eta2)] {
            let (lo, hi) = linalg::eig_range(f)?;
            value_scale = value_scale.max(lo.abs()).max(hi.abs());
            if lo < passivity_worst {
                passivity_worst = lo;
                passivity_where = C64::new(sigma, eta);
            }
        }
        // Linear-in-eta extrapolation to the boundary from the two offsets.
        let corr = (&f2 - &f1).mapv(|z| z * C64::from(eta2 / (eta1 - eta2)));
        boundary.push(&f2 + &corr);
        corrections.push(corr);
    }

    if passivity_worst < -opts.passivity_tol * value_scale.max(f64::MIN_POSITIVE) {
        return Err(Error::PassivityViolated {
            worst: passivity_worst / value_scale.max(f64::MIN_POSITIVE),
            location: passivity_where,
        });
    }

    let scale = boundary
        .iter()
        .map(linalg::frob)
        .fold(0.0f64, f64::max);
    let mut residuals = Vec::with_capacity(k_total);
    let mut worst_residual = 0.0f64;
    let mut bad = 0usize;
    let mut first_bad: Option<f64> = None;
    for (k, corr) in corrections.iter().enumerate() {
        let r = if scale > 0.0 { linalg::frob(corr) / scale } else { 0.0 };
        if r > worst_residual {
            worst_residual = r;
        }
        if r > opts.residual_cap {
            bad += 1;
            if first_bad.is_none() {
                first_bad = Some(grid.nodes[k]);
            }
        }
        residuals.push(r);
    }
    if bad > 0 && (bad as f64) > opts.bad_fraction * k_total as f64 {
        return Err(Error::SingularComponent {
            residual: worst_residual,
            cap: opts.residual_cap,
            count: bad,
            total: k_total,
            location: first_bad.unwrap_or(f64::NAN),
        });
    }

    let inv_pi = 1.0 / std::f64::consts::PI;
    let mats: Vec<CMat> = boundary.iter().map(|b| b.mapv(|z| z * C64::from(inv_pi))).collect();
    let density = SpectralDensity::new(grid.nodes.clone(), grid.weights.clone(), mats)?;
    let _ = d;
    Ok(Inversion { density, residuals, worst_residual, scale })
}

/// Parameters of the Lorentz susceptibility
/// `chihat(zeta) = omega_p^2 / (omega_0^2 - zeta^2 - i gamma zeta)`.
#[derive(Clone, Copy, Debug)]
pub struct LorentzParams {
    pub omega_p: f64,
    pub omega_0: f64,
    pub gamma: f64,
}

impl LorentzParams {
    pub fn new(omega_p: f64, omega_0: f64, gamma: f64) -> Result<Self> {
        if !(omega_p > 0.0 && omega_0 > 0.0 && gamma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Lorentz parameters must be strictly positive, got ({omega_p}, {omega_0}, {gamma})"
            )));
        }
        Ok(LorentzParams { omega_p, omega_0, gamma })
    }
}

/// Lorentz susceptibility, exact.
#[must_use]
pub fn lorentz_susceptibility(p: &LorentzParams, zeta: C64) -> C64 {
    let i = C64::new(0.0, 1.0);
    C64::from(p.omega_p * p.omega_p)
        / (C64::from(p.omega_0 * p.omega_0) - zeta * zeta - i * C64::from(p.gamma) * zeta)
}

/// Boundary density of the Lorentz kernel transform:
/// `n(sigma) = 4 omega_p^2 sigma^2 gamma / ((omega_0^2 - sigma^2)^2 + sigma^2 gamma^2)`.
#[must_use]
pub fn lorentz_density(p: &LorentzParams, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let num = 4.0 * p.omega_p * p.omega_p * s2 * p.gamma;
    let det = p.omega_0 * p.omega_0 - s2;
    num / (det * det + s2 * p.gamma * p.gamma)
}

/// Kernel transform of the Lorentz medium,
/// `ahat_s(zeta) = -4 pi i zeta chihat(zeta)`.
#[must_use]
pub fn lorentz_kernel_transform(p: &LorentzParams, zeta: C64) -> C64 {
    let i = C64::new(0.0, 1.0);
    C64::from(-4.0 * std::f64::consts::PI) * i * zeta * lorentz_susceptibility(p, zeta)
}

/// Time-domain retarded part of the Lorentz kernel: the inverse transform
/// of `ahat_s`, which for the underdamped branch is
/// `4 pi omega_p^2 e^{-gamma t/2} (cos xi t - (gamma/(2 xi)) sin xi t)`
/// with `xi = sqrt(omega_0^2 - gamma^2/4)`, continued through the
/// critically damped and overdamped branches.
#[must_use]
pub fn lorentz_alpha(p: &LorentzParams, t: f64) -> f64 {
    let amp = 4.0 * std::f64::consts::PI * p.omega_p * p.omega_p;
    let half_g = 0.5 * p.gamma;
    let disc = p.omega_0 * p.omega_0 - half_g * half_g;
    let envelope = (-half_g * t).exp();
    if disc > 1e-12 * p.omega_0 * p.omega_0 {
        let xi = disc.sqrt();
        amp * envelope * ((xi * t).cos() - (half_g / xi) * (xi * t).sin())
    } else if disc < -1e-12 * p.omega_0 * p.omega_0 {
        let nu = (-disc).sqrt();
        amp * envelope * ((nu * t).cosh() - (half_g / nu) * (nu * t).sinh())
    } else {
        amp * envelope * (1.0 - half_g * t)
    }
}

/// Lorentz medium friction kernel as a scalar closed form (`alpha_inf = 0`).
pub fn lorentz_kernel(p: &LorentzParams) -> Result<FrictionKernel> {
    let params = *p;
    let amp = 4.0 * std::f64::consts::PI * p.omega_p * p.omega_p;
    let half_g = 0.5 * p.gamma;
    let disc = p.omega_0 * p.omega_0 - half_g * half_g;
    // sup_t |alpha(t)| <= amp * sqrt(1 + gamma^2/(4 xi^2)) underdamped;
    // the envelope bound amp * (1 + gamma/(2 nu)) covers the other branches.
    let sup = if disc > 0.0 {
        amp * (1.0 + (half_g * half_g) / disc).sqrt()
    } else if disc < 0.0 {
        amp * (1.0 + half_g / (-disc).sqrt())
    } else {
        amp * 2.0
    };
    FrictionKernel::scalar_closed_form(0.0, move |t| C64::from(lorentz_alpha(&params, t)), sup)
}

/// Default graded grid for a Lorentz density on `[-r, r]`: denser within
/// three damping widths of the two resonances.
pub fn lorentz_grid(p: &LorentzParams, r: f64, n: usize) -> Result<Grid> {
    Grid::graded(
        -r,
        r,
        n,
        &[(-p.omega_0, 3.0 * p.gamma), (p.omega_0, 3.0 * p.gamma)],
        19.0,
    )
}

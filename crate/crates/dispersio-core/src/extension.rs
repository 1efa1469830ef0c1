//! Conservative extensions of dissipative systems.
//!
//! A friction kernel with spectral density `N(sigma)` is realized by hidden
//! oscillator modes: frequencies `omega_j` (grid nodes, one per kept rank
//! direction) and coupling columns `Gamma_j` with
//! `Gamma_k Gamma_k* = N_k dsigma_k` per node. The observable system
//! `(m, A)` plus the hidden modes form a self-adjoint block generator; the
//! original dissipative evolution is the truncation of the extended
//! conservative one onto the first `d` coordinates.
//!
//! Two construction routes are provided: directly from a spectral density
//! (with a flat-tail surrogate for instantaneous friction), or from an
//! admittance evaluator via recovery of `(m, A, ahat)` followed by
//! inversion of the kernel transform.

use ndarray::s;

use crate::linalg;
use crate::spectra::{
    stieltjes_invert, Grid, HerglotzEvaluator, HerglotzKind, SpectralDensity,
};
use crate::{tol, C64, CMat, Error, Result};

/// Marker recording that an instantaneous kernel part `alpha_inf` was
/// realized by a flat density on `[-r, r]` rather than a genuine atom.
#[derive(Clone, Debug)]
pub struct FlatTail {
    pub alpha_inf: CMat,
    pub r: f64,
}

/// Hidden-mode realization of a friction kernel: frequencies and coupling
/// columns, `a(t) ~ Gamma e^{-it Omega} Gamma*`.
#[derive(Clone, Debug)]
pub struct Extension {
    dim: usize,
    omega1: Vec<f64>,
    gamma: CMat,
    flat_tail: Option<FlatTail>,
}

impl Extension {
    /// Builds an extension from explicit data. Frequencies must come
    /// sorted (ties allowed: a node contributes one frequency per kept
    /// rank direction).
    pub fn new(dim: usize, omega1: Vec<f64>, gamma: CMat, flat_tail: Option<FlatTail>) -> Result<Self> {
        if gamma.nrows() != dim || gamma.ncols() != omega1.len() {
            return Err(Error::DimensionMismatch(format!(
                "coupling block is {}x{}, expected {}x{}",
                gamma.nrows(),
                gamma.ncols(),
                dim,
                omega1.len()
            )));
        }
        for w in omega1.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(Error::InvalidInput(format!(
                    "hidden frequencies must be sorted, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        if omega1.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("hidden frequencies must be finite".into()));
        }
        if let Some(tail) = &flat_tail {
            if tail.alpha_inf.nrows() != dim || tail.alpha_inf.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "flat-tail matrix is {}x{}, expected {dim}x{dim}",
                    tail.alpha_inf.nrows(),
                    tail.alpha_inf.ncols()
                )));
            }
        }
        Ok(Extension { dim, omega1, gamma, flat_tail })
    }

    /// Extension with no hidden modes.
    #[must_use]
    pub fn empty(dim: usize) -> Self {
        Extension {
            dim,
            omega1: Vec::new(),
            gamma: CMat::zeros((dim, 0)),
            flat_tail: None,
        }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of hidden modes `M`.
    #[must_use]
    pub fn hidden_dim(&self) -> usize {
        self.omega1.len()
    }

    #[must_use]
    pub fn omega1(&self) -> &[f64] {
        &self.omega1
    }

    #[must_use]
    pub fn gamma(&self) -> &CMat {
        &self.gamma
    }

    #[must_use]
    pub fn flat_tail(&self) -> Option<&FlatTail> {
        self.flat_tail.as_ref()
    }
}

/// Default tail node count for [`build_from_density`]: spacing about an
/// eighth of a unit, floored and capped.
fn default_tail_nodes(r_tail: f64) -> usize {
    ((8.0 * r_tail).ceil() as usize).clamp(1000, 200_000)
}

/// Builds the hidden-mode extension of a spectral density.
///
/// Per node the weighted matrix `N_k dsigma_k` is eigendecomposed and one
/// hidden mode per significant eigenpair is kept (threshold relative to
/// the largest eigenvalue across all nodes). A nonzero `alpha_inf` is
/// realized by a flat density `alpha_inf/pi` on `[-r_tail, r_tail]`, a
/// finite-bandwidth surrogate whose transform is `alpha_inf + O(1/r_tail)`.
pub fn build_from_density(density: &SpectralDensity, alpha_inf: &CMat, r_tail: f64) -> Result<Extension> {
    build_from_density_with(density, alpha_inf, r_tail, default_tail_nodes(r_tail))
}

/// [`build_from_density`] with an explicit flat-tail node count.
pub fn build_from_density_with(
    density: &SpectralDensity,
    alpha_inf: &CMat,
    r_tail: f64,
    tail_nodes: usize,
) -> Result<Extension> {
    let d = if density.is_empty() { alpha_inf.nrows() } else { density.dim };
    if alpha_inf.nrows() != d || alpha_inf.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "alpha_inf is {}x{}, density dimension is {d}",
            alpha_inf.nrows(),
            alpha_inf.ncols()
        )));
    }
    let alpha_inf = linalg::psd_clip(alpha_inf)?;
    let has_tail = linalg::frob(&alpha_inf) > 0.0;

    // Eigendecompose all weighted node matrices first; the rank cut is
    // relative to the whole family.
    let mut node_eigs = Vec::with_capacity(density.len());
    let mut scale = 0.0f64;
    for (mat, w) in density.matrices.iter().zip(&density.weights) {
        let b = mat.mapv(|z| z * C64::from(*w));
        let (vals, vecs) = linalg::eigh_auto(&b)?;
        scale = vals.iter().fold(scale, |sc, v| sc.max(*v));
        node_eigs.push((vals, vecs));
    }
    let cut = tol::RANK_REL * scale;

    // (frequency, coupling column) pairs from the density nodes.
    let mut modes: Vec<(f64, Vec<C64>)> = Vec::new();
    for (k, (vals, vecs)) in node_eigs.iter().enumerate() {
        let sigma = density.nodes[k];
        for (i, lam) in vals.iter().enumerate() {
            if *lam > cut && *lam > 0.0 {
                let root = lam.sqrt();
                let col: Vec<C64> = vecs.column(i).iter().map(|z| z * C64::from(root)).collect();
                modes.push((sigma, col));
            }
        }
    }

    let mut flat_tail = None;
    if has_tail {
        let sigma_max = density.nodes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if !(r_tail > sigma_max) {
            return Err(Error::InvalidInput(format!(
                "flat-tail radius {r_tail} must exceed the largest density node magnitude {sigma_max}"
            )));
        }
        if tail_nodes < 2 {
            return Err(Error::InvalidInput(format!(
                "flat tail needs at least two nodes, got {tail_nodes}"
            )));
        }
        let (avals, avecs) = linalg::eigh_auto(&alpha_inf)?;
        let amax = avals.iter().fold(0.0f64, |m, v| m.max(*v));
        let acut = tol::RANK_REL * amax;
        let dsigma = 2.0 * r_tail / tail_nodes as f64;
        for j in 0..tail_nodes {
            let sigma = -r_tail + (j as f64 + 0.5) * dsigma;
            for (i, lam) in avals.iter().enumerate() {
                if *lam > acut && *lam > 0.0 {
                    let root = (lam * dsigma / std::f64::consts::PI).sqrt();
                    let col: Vec<C64> = avecs.column(i).iter().map(|z| z * C64::from(root)).collect();
                    modes.push((sigma, col));
                }
            }
        }
        flat_tail = Some(FlatTail { alpha_inf: alpha_inf.clone(), r: r_tail });
    }

    modes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let m_total = modes.len();
    let mut gamma = CMat::zeros((d, m_total));
    let mut omega1 = Vec::with_capacity(m_total);
    for (j, (sigma, col)) in modes.into_iter().enumerate() {
        omega1.push(sigma);
        for (i, z) in col.into_iter().enumerate() {
            gamma[(i, j)] = z;
        }
    }
    Extension::new(d, omega1, gamma, flat_tail)
}

/// Frequency-domain kernel reconstruction
/// `ahat(zeta) = i Gamma (zeta - Omega)^{-1} Gamma*`, an exact finite sum.
pub fn reconstruct_kernel_freq(ext: &Extension, zeta: C64) -> Result<CMat> {
    if !(zeta.im > 0.0) {
        return Err(Error::PointNotInUpperHalfPlane(zeta));
    }
    let mut scaled = ext.gamma.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let c = C64::new(0.0, 1.0) / (zeta - C64::from(ext.omega1[j]));
        col.mapv_inplace(|z| z * c);
    }
    Ok(scaled.dot(&linalg::adjoint(&ext.gamma)))
}

/// Time-domain kernel reconstruction
/// `a(t) = Gamma e^{-it Omega} Gamma*`.
///
/// Rejected for flat-tail extensions: there the underlying kernel carries
/// a delta atom and only the frequency reconstruction is meaningful.
pub fn reconstruct_kernel_time(ext: &Extension, t: f64) -> Result<CMat> {
    if ext.flat_tail.is_some() {
        return Err(Error::InvalidInput(
            "time-domain reconstruction is undefined for flat-tail extensions; use the frequency form".into(),
        ));
    }
    let mut scaled = ext.gamma.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let phase = (C64::new(0.0, -t) * C64::from(ext.omega1[j])).exp();
        col.mapv_inplace(|z| z * phase);
    }
    Ok(scaled.dot(&linalg::adjoint(&ext.gamma)))
}

/// Extended conservative system: observable blocks `(m, A)`, hidden modes,
/// and a scalar hidden mass.
///
/// The assembled blocks are `mass = diag(m, m1 I_M)` and
/// `op = [[A, sqrt(m1) Gamma], [sqrt(m1) Gamma*, m1 Omega]]`; the scaling
/// keeps the observable Schur complement, and with it the admittance and
/// the reconstructed kernel, independent of `m1`.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    m: CMat,
    a: CMat,
    ext: Extension,
    hidden_mass: f64,
}

/// Assembles a block system with unit hidden mass.
pub fn assemble_block(m: CMat, a: CMat, ext: Extension) -> Result<BlockSystem> {
    assemble_block_with_mass(m, a, ext, 1.0)
}

/// Assembles a block system with the given hidden mass.
pub fn assemble_block_with_mass(m: CMat, a: CMat, ext: Extension, hidden_mass: f64) -> Result<BlockSystem> {
    let d = ext.dim();
    if m.nrows() != d || m.ncols() != d || a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "mass is {}x{}, operator is {}x{}, extension dimension is {d}",
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
    if !(hidden_mass > 0.0 && hidden_mass.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "hidden mass must be strictly positive, got {hidden_mass}"
        )));
    }
    Ok(BlockSystem {
        m: linalg::hermitian_part(&m),
        a: linalg::hermitian_part(&a),
        ext,
        hidden_mass,
    })
}

impl BlockSystem {
    #[must_use]
    pub fn dim(&self) -> usize {
        self.ext.dim()
    }

    #[must_use]
    pub fn hidden_dim(&self) -> usize {
        self.ext.hidden_dim()
    }

    #[must_use]
    pub fn total_dim(&self) -> usize {
        self.dim() + self.hidden_dim()
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
    pub fn extension(&self) -> &Extension {
        &self.ext
    }

    #[must_use]
    pub fn hidden_mass(&self) -> f64 {
        self.hidden_mass
    }

    /// Block mass matrix `diag(m, m1 I_M)`.
    #[must_use]
    pub fn mass_matrix(&self) -> CMat {
        let d = self.dim();
        let n = self.total_dim();
        let mut out = CMat::zeros((n, n));
        out.slice_mut(s![..d, ..d]).assign(&self.m);
        for j in d..n {
            out[(j, j)] = C64::from(self.hidden_mass);
        }
        out
    }

    /// Block generator, Hermitian by construction.
    #[must_use]
    pub fn operator_matrix(&self) -> CMat {
        let d = self.dim();
        let mm = self.hidden_dim();
        let n = d + mm;
        let root = self.hidden_mass.sqrt();
        let mut out = CMat::zeros((n, n));
        out.slice_mut(s![..d, ..d]).assign(&self.a);
        for j in 0..mm {
            for i in 0..d {
                let g = self.ext.gamma[(i, j)] * C64::from(root);
                out[(i, d + j)] = g;
                out[(d + j, i)] = g.conj();
            }
            out[(d + j, d + j)] = C64::from(self.hidden_mass * self.ext.omega1[j]);
        }
        out
    }

    /// Mass-weighted generator `mass^{-1/2} op mass^{-1/2}`; the hidden
    /// mass cancels, leaving
    /// `[[m^{-1/2} A m^{-1/2}, m^{-1/2} Gamma], [Gamma* m^{-1/2}, Omega]]`.
    pub fn weighted_operator(&self) -> Result<CMat> {
        let d = self.dim();
        let mm = self.hidden_dim();
        let n = d + mm;
        let mih = linalg::herm_power(&self.m, -0.5)?;
        let mut out = CMat::zeros((n, n));
        out.slice_mut(s![..d, ..d]).assign(&mih.dot(&self.a).dot(&mih));
        let coupled = mih.dot(&self.ext.gamma);
        for j in 0..mm {
            for i in 0..d {
                out[(i, d + j)] = coupled[(i, j)];
                out[(d + j, i)] = coupled[(i, j)].conj();
            }
            out[(d + j, d + j)] = C64::from(self.ext.omega1[j]);
        }
        Ok(out)
    }

    /// Truncation onto the observable coordinates, `T = [I_d 0]`.
    #[must_use]
    pub fn truncation(&self) -> CMat {
        let d = self.dim();
        let mut t = CMat::zeros((d, self.total_dim()));
        for i in 0..d {
            t[(i, i)] = C64::from(1.0);
        }
        t
    }

    /// Admittance `i T (zeta mass - op)^{-1} T*` of the extended system,
    /// evaluated through the observable Schur complement
    /// `i [zeta m - A - Gamma (zeta - Omega)^{-1} Gamma*]^{-1}`.
    #[must_use]
    pub fn admittance(&self) -> HerglotzEvaluator {
        let m = self.m.clone();
        let a = self.a.clone();
        let ext = self.ext.clone();
        let d = self.dim();
        HerglotzEvaluator::new(d, HerglotzKind::Admittance, move |zeta| {
            if !(zeta.im > 0.0) {
                return Err(Error::PointNotInUpperHalfPlane(zeta));
            }
            let mut scaled = ext.gamma.clone();
            for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
                let c = C64::from(1.0) / (zeta - C64::from(ext.omega1[j]));
                col.mapv_inplace(|z| z * c);
            }
            let schur = m.mapv(|z| z * zeta) - &a - scaled.dot(&linalg::adjoint(&ext.gamma));
            Ok(linalg::inv(&schur)?.mapv(|z| z * C64::new(0.0, 1.0)))
        })
    }
}

/// Reduced representation: the restriction of an extension to the part of
/// the observable space its couplings actually reach.
#[derive(Clone, Debug)]
pub struct ReducedForm {
    /// Orthogonal projector onto the column space of the coupling block.
    pub projector: CMat,
    pub reduced_dim: usize,
    /// Orthonormal basis of the reached subspace, one column per dimension.
    pub basis: CMat,
    /// The extension expressed in that basis.
    pub ext: Extension,
}

/// Computes the reduced representation via an SVD of the coupling block.
pub fn reduced_representation(ext: &Extension) -> Result<ReducedForm> {
    let d = ext.dim();
    let mm = ext.hidden_dim();
    if mm == 0 || linalg::frob(ext.gamma()) == 0.0 {
        return Ok(ReducedForm {
            projector: CMat::zeros((d, d)),
            reduced_dim: 0,
            basis: CMat::zeros((d, 0)),
            ext: Extension::empty(0),
        });
    }
    use ndarray_linalg::SVD;
    let (u, sv, _) = ext.gamma().svd(true, false)?;
    let u = u.ok_or_else(|| Error::Backend("SVD did not return singular vectors".into()))?;
    let smax = sv.iter().fold(0.0f64, |m, s| m.max(*s));
    let rank = sv.iter().filter(|s| **s > tol::RANK_REL * smax).count();
    let basis = u.slice(s![.., ..rank]).to_owned();
    let projector = basis.dot(&linalg::adjoint(&basis));
    let gamma_red = linalg::adjoint(&basis).dot(ext.gamma());
    let tail_red = ext.flat_tail().map(|t| FlatTail {
        alpha_inf: linalg::adjoint(&basis).dot(&t.alpha_inf).dot(&basis),
        r: t.r,
    });
    let reduced = Extension::new(rank, ext.omega1().to_vec(), gamma_red, tail_red)?;
    Ok(ReducedForm { projector, reduced_dim: rank, basis, ext: reduced })
}

/// Polar factors of a full-row-rank coupling block: the isometric
/// truncation `T = (Gamma Gamma*)^{-1/2} Gamma` (so `T T* = I`) and the
/// Hermitian positive factor `m_G = (Gamma Gamma*)^{-1/2}` playing the
/// role of the observable mass in the admittance scheme.
pub fn polar_truncation(gamma: &CMat) -> Result<(CMat, CMat)> {
    let gram = gamma.dot(&linalg::adjoint(gamma));
    let (lo, hi) = linalg::eig_range(&gram)?;
    let floor = tol::RANK_REL * hi.max(f64::MIN_POSITIVE);
    if !(lo > floor) {
        return Err(Error::DegenerateCoupling { found: lo, min: floor });
    }
    let m_g = linalg::herm_power(&gram, -0.5)?;
    let t = m_g.dot(gamma);
    Ok((t, m_g))
}

/// Triplet recovered from an admittance evaluator, with the residual of
/// the defining identity at a fixed probe set.
#[derive(Debug)]
pub struct Recovered {
    pub m: CMat,
    pub a: CMat,
    /// Kernel transform `ahat(zeta) = Adm(zeta)^{-1} + i (zeta m - A)`.
    pub kernel: HerglotzEvaluator,
    pub residual: f64,
}

/// Recovers `(m, A, ahat)` from an admittance evaluator using its
/// high-frequency behavior: `eta Adm(i eta) -> m^{-1}` and the skew part
/// of `Adm(i eta)^{-1}` tends to `A`. Both limits are accelerated by a
/// two-point extrapolation in `1/eta` over the given increasing offsets.
pub fn admittance_recover(h: &HerglotzEvaluator, etas: &[f64]) -> Result<Recovered> {
    if h.kind() != HerglotzKind::Admittance {
        return Err(Error::InvalidInput("admittance_recover expects an admittance evaluator".into()));
    }
    if etas.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two offsets for the high-frequency limit, got {}",
            etas.len()
        )));
    }
    for w in etas.windows(2) {
        if !(w[1] > w[0] && w[0] > 0.0) {
            return Err(Error::InvalidInput(format!(
                "offsets must be positive and strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let d = h.dim();
    let mut mass_seq = Vec::with_capacity(etas.len());
    let mut op_seq = Vec::with_capacity(etas.len());
    for &eta in etas {
        let v = h.eval(C64::new(0.0, eta))?;
        mass_seq.push(v.mapv(|z| z * C64::from(eta)));
        let vinv = linalg::inv(&v)?;
        op_seq.push(linalg::skew_part(&vinv));
    }
    let (eta_a, eta_b) = (etas[etas.len() - 2], etas[etas.len() - 1]);
    let last_pair = |seq: &[CMat]| -> (CMat, f64) {
        let fa = &seq[seq.len() - 2];
        let fb = &seq[seq.len() - 1];
        let est = (fb.mapv(|z| z * C64::from(eta_b)) - fa.mapv(|z| z * C64::from(eta_a)))
            .mapv(|z| z / C64::from(eta_b - eta_a));
        let drift = linalg::frob(&(fb - fa));
        (est, drift)
    };
    let (mass_est, mass_drift) = last_pair(&mass_seq);
    let (op_est, op_drift) = last_pair(&op_seq);
    let scale = linalg::frob(&mass_seq[mass_seq.len() - 1])
        .max(linalg::frob(&op_seq[op_seq.len() - 1]))
        .max(f64::MIN_POSITIVE);
    if mass_drift > 0.1 * scale || op_drift > 0.1 * scale {
        return Err(Error::NonConvergentLimit(format!(
            "successive high-frequency estimates still move by {:.3e} relative",
            mass_drift.max(op_drift) / scale
        )));
    }

    let m_inv = linalg::hermitian_part(&mass_est);
    let (lo, hi) = linalg::eig_range(&m_inv)?;
    if !(lo > tol::RANK_REL * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::NonConvergentLimit(format!(
            "no invertible high-frequency limit: smallest recovered eigenvalue {lo:.3e}"
        )));
    }
    let m = linalg::herm_power(&m_inv, -1.0)?;
    let a = linalg::hermitian_part(&op_est);

    let kernel = {
        let h = h.clone();
        let m = m.clone();
        let a = a.clone();
        HerglotzEvaluator::new(d, HerglotzKind::KernelTransform, move |zeta| {
            let v = h.eval(zeta)?;
            let vinv = linalg::inv(&v)?;
            let lin = (m.mapv(|z| z * zeta) - &a).mapv(|z| z * C64::new(0.0, 1.0));
            Ok(vinv + lin)
        })
    };

    // Residual of Adm = i[zeta m - A + i ahat]^{-1} after symmetrization.
    let probes = [
        C64::new(0.0, 1.0),
        C64::new(1.0, 0.8),
        C64::new(-1.5, 0.6),
        C64::new(0.4, 2.0),
        C64::new(0.0, 3.0),
    ];
    let mut residual = 0.0f64;
    for &zeta in &probes {
        let hv = h.eval(zeta)?;
        let ahat = kernel.eval(zeta)?;
        let inner = (m.mapv(|z| z * zeta) - &a) + ahat.mapv(|z| z * C64::new(0.0, 1.0));
        let back = linalg::inv(&inner)?.mapv(|z| z * C64::new(0.0, 1.0));
        let denom = linalg::frob(&hv).max(f64::MIN_POSITIVE);
        residual = residual.max(linalg::frob(&(&back - &hv)) / denom);
    }

    Ok(Recovered { m, a, kernel, residual })
}

/// Offsets used for the internal high-frequency limits of
/// [`build_from_admittance`].
const RECOVERY_ETAS: [f64; 4] = [250.0, 500.0, 1000.0, 2000.0];

/// Relative kernel magnitude below which the recovered retarded part is
/// treated as absent (frictionless system, empty hidden space).
const NEGLIGIBLE_KERNEL_REL: f64 = 1e-10;

/// A block system built from an admittance, along with the worst relative
/// mismatch between the input admittance and the assembled system's on a
/// probe set.
#[derive(Debug)]
pub struct AdmittanceBuild {
    pub system: BlockSystem,
    pub admittance_residual: f64,
}

/// Builds an extended conservative system from an admittance evaluator:
/// recover `(m, A, ahat)` from the high-frequency limit, Stieltjes-invert
/// the kernel transform on the grid, build the hidden modes from that
/// density, and assemble the blocks with the chosen hidden mass.
pub fn build_from_admittance(
    h: &HerglotzEvaluator,
    grid: &Grid,
    etas: &[f64],
    hidden_mass: f64,
) -> Result<AdmittanceBuild> {
    if h.kind() != HerglotzKind::Admittance {
        return Err(Error::InvalidInput("build_from_admittance expects an admittance evaluator".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty frequency grid".into()));
    }
    if etas.is_empty() {
        return Err(Error::InvalidInput("need boundary offsets for the inversion".into()));
    }

    // Passivity pre-check on a subsample of the grid.
    let stride = (grid.len() / 64).max(1);
    let eta_probe = *etas.last().unwrap();
    let probes: Vec<C64> = grid
        .nodes
        .iter()
        .step_by(stride)
        .map(|s| C64::new(*s, eta_probe))
        .collect();
    let report = crate::pdc::check_admittance_pdc(h, &probes)?;
    if !report.pass {
        let location = match report.worst_location {
            crate::pdc::PdcLocation::Point(z) => z,
            crate::pdc::PdcLocation::TimePair(..) => C64::from(0.0),
        };
        return Err(Error::PassivityViolated { worst: report.worst_value, location });
    }

    let rec = admittance_recover(h, &RECOVERY_ETAS)?;
    let d = h.dim();

    // Scale of the recovered retarded part along the boundary, against the
    // instantaneous scale of the system, to detect the frictionless case.
    // The extrapolated boundary value is used because it cancels the
    // offset-proportional remainder the high-frequency recovery leaves in
    // the kernel transform.
    if etas.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two boundary offsets, got {}",
            etas.len()
        )));
    }
    let (eta1, eta2) = (etas[etas.len() - 2], etas[etas.len() - 1]);
    let sigma_max = grid.nodes.iter().fold(1.0f64, |m, s| m.max(s.abs()));
    let mscale = linalg::frob(&rec.m) * sigma_max + linalg::frob(&rec.a);
    let mut kscale = 0.0f64;
    for s in grid.nodes.iter().step_by(stride) {
        let f1 = linalg::hermitian_part(&rec.kernel.eval(C64::new(*s, eta1))?);
        let f2 = linalg::hermitian_part(&rec.kernel.eval(C64::new(*s, eta2))?);
        let corr = (&f2 - &f1).mapv(|z| z * C64::from(eta2 / (eta1 - eta2)));
        kscale = kscale.max(linalg::frob(&(&f2 + &corr)));
    }

    let ext = if kscale <= NEGLIGIBLE_KERNEL_REL * mscale {
        Extension::empty(d)
    } else {
        let inversion = stieltjes_invert(&rec.kernel, grid, etas)?;
        build_from_density(&inversion.density, &CMat::zeros((d, d)), sigma_max + 1.0)?
    };
    let system = assemble_block_with_mass(rec.m, rec.a, ext, hidden_mass)?;

    // Worst relative admittance mismatch over a deterministic probe set.
    let built = system.admittance();
    let span = grid.nodes.last().unwrap() - grid.nodes.first().unwrap();
    let mut admittance_residual = 0.0f64;
    for q in 0..24 {
        let u = (q as f64 * 0.754877666246693) % 1.0;
        let v = (q as f64 * 0.569840290998053) % 1.0;
        let zeta = C64::new(
            grid.nodes.first().unwrap() + span * u,
            0.05 * span * (0.02 + v),
        );
        let want = h.eval(zeta)?;
        let got = built.eval(zeta)?;
        let denom = linalg::frob(&want).max(f64::MIN_POSITIVE);
        admittance_residual = admittance_residual.max(linalg::frob(&(&got - &want)) / denom);
    }
    Ok(AdmittanceBuild { system, admittance_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::scalar_mat;
    use approx::assert_relative_eq;

    const PI: f64 = std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit_node_density() -> SpectralDensity {
        SpectralDensity::new(vec![0.0], vec![1.0], vec![scalar_mat(C64::from(1.0))]).unwrap()
    }

    #[test]
    fn single_unit_node_gives_unit_coupling() {
        let ext = build_from_density(&unit_node_density(), &CMat::zeros((1, 1)), 1.0).unwrap();
        assert_eq!(ext.hidden_dim(), 1);
        assert_eq!(ext.omega1(), &[0.0]);
        assert_relative_eq!(ext.gamma()[(0, 0)].re, 1.0, max_relative = 1e-14);
        let v = reconstruct_kernel_freq(&ext, c(0.0, 1.0)).unwrap();
        assert!((v[(0, 0)] - C64::from(1.0)).norm() < 1e-15, "got {}", v[(0, 0)]);
    }

    #[test]
    fn empty_extension_reconstructs_zero() {
        let ext = Extension::empty(2);
        let v = reconstruct_kernel_freq(&ext, c(0.3, 0.7)).unwrap();
        assert_eq!(v, CMat::zeros((2, 2)));
        let w = reconstruct_kernel_time(&ext, 1.5).unwrap();
        assert_eq!(w, CMat::zeros((2, 2)));
    }

    #[test]
    fn single_mode_time_kernel_is_a_phase() {
        let ext = Extension::new(1, vec![1.0], scalar_mat(C64::from(1.0)), None).unwrap();
        let at0 = reconstruct_kernel_time(&ext, 0.0).unwrap();
        assert_eq!(at0[(0, 0)], C64::from(1.0));
        let atpi = reconstruct_kernel_time(&ext, PI).unwrap();
        assert!((atpi[(0, 0)] - C64::from(-1.0)).norm() < 1e-14, "got {}", atpi[(0, 0)]);
    }

    #[test]
    fn flat_tail_realizes_instantaneous_friction() {
        let gamma0 = 0.2;
        let dens = SpectralDensity::new(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let ext = build_from_density_with(&dens, &scalar_mat(C64::from(gamma0)), 100.0, 4000).unwrap();
        assert_eq!(ext.hidden_dim(), 4000);
        assert!(ext.flat_tail().is_some());
        let v = reconstruct_kernel_freq(&ext, c(0.0, 1.0)).unwrap()[(0, 0)];
        let want = gamma0 * (2.0 / PI) * (100.0f64).atan();
        assert!(
            (v - C64::from(want)).norm() < 2e-3 * gamma0,
            "reconstruction {v} vs arctan law {want}"
        );
        let err = reconstruct_kernel_time(&ext, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "got {err}");
    }

    #[test]
    fn doubling_the_tail_radius_halves_the_error() {
        let gamma0 = 0.7;
        let dens = SpectralDensity::new(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let zeta = c(0.0, 1.0);
        let mut errors = Vec::new();
        for r in [50.0, 100.0, 200.0] {
            // Fixed node spacing 0.025 across radii.
            let nodes = (r / 0.025) as usize;
            let ext = build_from_density_with(&dens, &scalar_mat(C64::from(gamma0)), r, nodes).unwrap();
            let v = reconstruct_kernel_freq(&ext, zeta).unwrap()[(0, 0)];
            errors.push((v - C64::from(gamma0)).norm());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() <= 0.4,
                "halving law violated: errors {errors:?}, ratio {ratio}"
            );
        }
    }

    #[test]
    fn tail_radius_must_clear_the_density_nodes() {
        let err = build_from_density(&unit_node_density(), &scalar_mat(C64::from(1.0)), 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "got {err}");
    }

    #[test]
    fn rank_deficient_nodes_keep_one_mode_per_direction() {
        // 2x2 nodes: rank 1 at sigma=-1, rank 2 at sigma=+1.
        let n1 = ndarray::array![[C64::from(1.0), C64::from(0.0)], [C64::from(0.0), C64::from(0.0)]];
        let n2 = ndarray::array![[C64::from(0.5), C64::from(0.0)], [C64::from(0.0), C64::from(2.0)]];
        let dens = SpectralDensity::new(vec![-1.0, 1.0], vec![0.5, 0.5], vec![n1, n2]).unwrap();
        let ext = build_from_density(&dens, &CMat::zeros((2, 2)), 5.0).unwrap();
        assert_eq!(ext.hidden_dim(), 3);
        assert_eq!(ext.omega1(), &[-1.0, 1.0, 1.0]);
        // Per-node factorization: Gamma_k Gamma_k* = N_k dsigma_k.
        let block = ext.gamma().slice(s![.., 1..3]).to_owned();
        let gram = block.dot(&linalg::adjoint(&block));
        assert_relative_eq!(gram[(0, 0)].re, 0.25, max_relative = 1e-12);
        assert_relative_eq!(gram[(1, 1)].re, 1.0, max_relative = 1e-12);
        assert!(gram[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn block_operator_is_hermitian_bitwise() {
        let ext = Extension::new(
            1,
            vec![-0.4, 1.3],
            ndarray::array![[c(0.3, 0.1), c(-0.2, 0.25)]],
            None,
        )
        .unwrap();
        let blk = assemble_block_with_mass(scalar_mat(C64::from(2.0)), scalar_mat(C64::from(0.5)), ext, 1.7).unwrap();
        let op = blk.operator_matrix();
        let adj = linalg::adjoint(&op);
        assert_eq!(op, adj);
        let mass = blk.mass_matrix();
        assert_eq!(mass[(1, 1)], C64::from(1.7));
    }

    #[test]
    fn weighted_operator_drops_the_hidden_mass() {
        let ext = Extension::new(
            1,
            vec![0.2, 0.9],
            ndarray::array![[c(0.4, 0.0), c(0.1, -0.3)]],
            None,
        )
        .unwrap();
        let m = scalar_mat(C64::from(4.0));
        let a = scalar_mat(C64::from(1.0));
        let w1 = assemble_block_with_mass(m.clone(), a.clone(), ext.clone(), 1.0)
            .unwrap()
            .weighted_operator()
            .unwrap();
        let w2 = assemble_block_with_mass(m, a, ext, 3.5).unwrap().weighted_operator().unwrap();
        assert!(linalg::frob(&(&w1 - &w2)) < 1e-14);
        assert_relative_eq!(w1[(0, 0)].re, 0.25, max_relative = 1e-14);
        assert_relative_eq!(w1[(0, 1)].re, 0.2, max_relative = 1e-14);
    }

    #[test]
    fn schur_admittance_matches_the_dense_block_resolvent() {
        let ext = Extension::new(
            2,
            vec![-0.7, 0.1, 0.8],
            ndarray::array![
                [c(0.5, 0.2), c(-0.1, 0.0), c(0.2, -0.4)],
                [c(0.0, 0.3), c(0.6, 0.1), c(-0.3, 0.0)]
            ],
            None,
        )
        .unwrap();
        let m = ndarray::array![[c(2.0, 0.0), c(0.3, 0.1)], [c(0.3, -0.1), c(1.5, 0.0)]];
        let a = ndarray::array![[c(0.4, 0.0), c(0.0, 0.2)], [c(0.0, -0.2), c(-0.3, 0.0)]];
        let blk = assemble_block_with_mass(m, a, ext, 2.5).unwrap();
        let h = blk.admittance();
        for zeta in [c(0.3, 0.9), c(-1.2, 0.4), c(0.0, 2.0)] {
            let fast = h.eval(zeta).unwrap();
            let mass = blk.mass_matrix();
            let op = blk.operator_matrix();
            let resolvent = linalg::inv(&(mass.mapv(|z| z * zeta) - &op)).unwrap();
            let t = blk.truncation();
            let dense = t
                .dot(&resolvent)
                .dot(&linalg::adjoint(&t))
                .mapv(|z| z * C64::new(0.0, 1.0));
            assert!(
                linalg::frob(&(&fast - &dense)) < 1e-12 * linalg::frob(&dense).max(1.0),
                "zeta={zeta}: Schur form disagrees with dense resolvent"
            );
        }
    }

    #[test]
    fn polar_factors_of_a_scalar_coupling() {
        let (t, m_g) = polar_truncation(&scalar_mat(C64::from(2.0))).unwrap();
        assert_relative_eq!(t[(0, 0)].re, 1.0, max_relative = 1e-14);
        assert_relative_eq!(m_g[(0, 0)].re, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn polar_factors_of_a_flat_row() {
        let gamma = ndarray::array![[C64::from(1.0), C64::from(1.0)]];
        let (t, m_g) = polar_truncation(&gamma).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(t[(0, 0)].re, s, max_relative = 1e-14);
        assert_relative_eq!(t[(0, 1)].re, s, max_relative = 1e-14);
        assert_relative_eq!(m_g[(0, 0)].re, s, max_relative = 1e-14);
        let tt = t.dot(&linalg::adjoint(&t));
        assert_relative_eq!(tt[(0, 0)].re, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn polar_factors_of_orthogonal_rows() {
        let gamma = ndarray::array![
            [C64::from(3.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(0.5)]
        ];
        let (t, m_g) = polar_truncation(&gamma).unwrap();
        assert_relative_eq!(m_g[(0, 0)].re, 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(m_g[(1, 1)].re, 2.0, max_relative = 1e-12);
        let tt = t.dot(&linalg::adjoint(&t));
        assert!(linalg::frob(&(&tt - &linalg::eye(2))) < 1e-12);
    }

    #[test]
    fn degenerate_rows_are_rejected_by_the_polar_factorization() {
        let gamma = ndarray::array![
            [C64::from(1.0), C64::from(0.0)],
            [C64::from(0.0), C64::from(0.0)]
        ];
        let err = polar_truncation(&gamma).unwrap_err();
        assert!(matches!(err, Error::DegenerateCoupling { .. }), "got {err}");
    }

    #[test]
    fn zero_coupling_reduces_to_nothing() {
        let ext = Extension::new(2, vec![0.0, 1.0], CMat::zeros((2, 2)), None).unwrap();
        let red = reduced_representation(&ext).unwrap();
        assert_eq!(red.reduced_dim, 0);
        assert_eq!(red.projector, CMat::zeros((2, 2)));
    }

    #[test]
    fn rank_one_coupling_reduces_to_a_line() {
        // Both columns proportional to (1, i)/sqrt(2).
        let gamma = ndarray::array![
            [c(1.0, 0.0), c(0.5, 0.0)],
            [c(0.0, 1.0), c(0.0, 0.5)]
        ];
        let ext = Extension::new(2, vec![-1.0, 1.0], gamma, None).unwrap();
        let red = reduced_representation(&ext).unwrap();
        assert_eq!(red.reduced_dim, 1);
        // Projector is idempotent and Hermitian.
        let p2 = red.projector.dot(&red.projector);
        assert!(linalg::frob(&(&p2 - &red.projector)) < 1e-12);
        assert!(linalg::hermitian_defect(&red.projector) < 1e-14);
        // The reduced extension reproduces the observable kernel trace.
        let zeta = c(0.2, 0.8);
        let full = reconstruct_kernel_freq(&ext, zeta).unwrap();
        let small = reconstruct_kernel_freq(&red.ext, zeta).unwrap();
        let lifted = red.basis.dot(&small).dot(&linalg::adjoint(&red.basis));
        assert!(linalg::frob(&(&full - &lifted)) < 1e-12);
    }

    #[test]
    fn full_rank_coupling_reduces_to_the_identity() {
        let gamma = ndarray::array![
            [c(1.0, 0.1), c(0.2, 0.0), c(0.0, 0.5)],
            [c(0.0, 0.7), c(1.1, 0.0), c(0.4, -0.2)]
        ];
        let ext = Extension::new(2, vec![-1.0, 0.0, 2.0], gamma, None).unwrap();
        let red = reduced_representation(&ext).unwrap();
        assert_eq!(red.reduced_dim, 2);
        assert!(linalg::frob(&(&red.projector - &linalg::eye(2))) < 1e-12);
    }

    #[test]
    fn reconstructed_time_kernel_is_positive_definite() {
        let n1 = ndarray::array![[c(0.8, 0.0), c(0.2, 0.3)], [c(0.2, -0.3), c(0.5, 0.0)]];
        let n1 = linalg::psd_clip(&n1).unwrap();
        let dens = SpectralDensity::new(vec![-0.5, 0.6], vec![0.4, 0.4], vec![n1.clone(), n1]).unwrap();
        let ext = build_from_density(&dens, &CMat::zeros((2, 2)), 2.0).unwrap();
        let kernel = crate::spectra::FrictionKernel::new(
            CMat::zeros((2, 2)),
            crate::spectra::RetardedPart::ClosedForm(std::sync::Arc::new({
                let ext = ext.clone();
                move |t| reconstruct_kernel_time(&ext, t).unwrap()
            })),
            10.0,
        )
        .unwrap();
        let times: Vec<f64> = (0..25).map(|j| 0.37 * j as f64).collect();
        let report = crate::pdc::check_time_pdc(&kernel, &times, 4, 3).unwrap();
        assert!(
            report.worst_value >= -1e-10,
            "derived kernel Gram has normalized eigenvalue {:.3e}",
            report.worst_value
        );
    }

    #[test]
    fn recovery_of_a_constant_friction_triplet() {
        // Adm(zeta) = i/(2 zeta - 1 + 0.3 i).
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |z| {
            C64::new(0.0, 1.0) / (C64::from(2.0) * z - C64::from(1.0) + c(0.0, 0.3))
        });
        let rec = admittance_recover(&h, &[250.0, 500.0, 1000.0]).unwrap();
        assert_relative_eq!(rec.m[(0, 0)].re, 2.0, max_relative = 1e-3);
        assert_relative_eq!(rec.a[(0, 0)].re, 1.0, max_relative = 1e-3);
        // Two-point extrapolation leaves an O(1/(eta_a eta_b)) remainder.
        let ahat = rec.kernel.eval(c(0.4, 1.2)).unwrap()[(0, 0)];
        assert!((ahat - C64::from(0.3)).norm() <= 1e-5, "recovered ahat {ahat}");
        assert!(rec.residual < 1e-5, "identity residual {:.3e}", rec.residual);
    }

    #[test]
    fn recovery_needs_an_invertible_limit() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |z| C64::new(0.0, 1e-30) / (z * z));
        let err = admittance_recover(&h, &[100.0, 200.0]).unwrap_err();
        assert!(
            matches!(err, Error::NonConvergentLimit(_) | Error::Backend(_)),
            "got {err}"
        );
    }

    #[test]
    fn frictionless_admittance_builds_an_empty_extension() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |z| {
            C64::new(0.0, 1.0) / (C64::from(2.0) * z - C64::from(1.0))
        });
        let grid = Grid::uniform(-3.0, 3.0, 200).unwrap();
        let built = build_from_admittance(&h, &grid, &[1e-2, 5e-3], 1.0).unwrap();
        assert_eq!(built.system.hidden_dim(), 0);
        assert_relative_eq!(built.system.mass()[(0, 0)].re, 2.0, max_relative = 1e-3);
        assert_relative_eq!(built.system.operator()[(0, 0)].re, 1.0, max_relative = 1e-3);
        assert!(built.admittance_residual < 1e-3, "residual {:.3e}", built.admittance_residual);
    }

    #[test]
    fn negative_admittance_is_rejected_before_building() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |_| C64::from(-1.0));
        let grid = Grid::uniform(-1.0, 1.0, 50).unwrap();
        let err = build_from_admittance(&h, &grid, &[1e-2, 5e-3], 1.0).unwrap_err();
        assert!(matches!(err, Error::PassivityViolated { .. }), "got {err}");
    }

    #[test]
    fn kernel_round_trip_through_inversion_and_rebuild() {
        // Synthetic scalar extension: smooth couplings over [-1, 1], dense
        // enough that the mode spacing sits well below the boundary offsets.
        let m0 = 160usize;
        let omega: Vec<f64> = (0..m0).map(|j| -1.0 + 2.0 * (j as f64 + 0.5) / m0 as f64).collect();
        let mut gamma = CMat::zeros((1, m0));
        for (j, w) in omega.iter().enumerate() {
            let profile = (1.0 - w * w).max(0.0) * (0.8 + 0.2 * (3.0 * w).sin());
            gamma[(0, j)] = C64::from((profile * 2.0 / m0 as f64).sqrt());
        }
        let ext = Extension::new(1, omega, gamma, None).unwrap();

        let h = {
            let ext = ext.clone();
            HerglotzEvaluator::new(1, HerglotzKind::KernelTransform, move |z| {
                reconstruct_kernel_freq(&ext, z)
            })
        };
        let grid = Grid::uniform(-2.0, 2.0, 400).unwrap();
        let inv = stieltjes_invert(&h, &grid, &[0.1, 0.05]).unwrap();
        let rebuilt = build_from_density(&inv.density, &CMat::zeros((1, 1)), 3.0).unwrap();

        let mut worst = 0.0f64;
        for q in 0..40 {
            let u = (q as f64 * 0.754877666246693) % 1.0;
            let v = (q as f64 * 0.569840290998053) % 1.0;
            let zeta = c(3.0 * (u - 0.5), 1.0 + 1.5 * v);
            let want = reconstruct_kernel_freq(&ext, zeta).unwrap()[(0, 0)];
            let got = reconstruct_kernel_freq(&rebuilt, zeta).unwrap()[(0, 0)];
            worst = worst.max((got - want).norm() / want.norm());
        }
        assert!(worst <= 1e-2, "round-trip relative error {worst:.3e}");
    }
}

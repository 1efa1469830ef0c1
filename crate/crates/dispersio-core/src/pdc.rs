//! Certification of the power dissipation condition.
//!
//! Three equivalent forms are checked: positive semidefiniteness of the
//! time-domain block Gram matrix built from the extended kernel, `Re` of
//! the kernel transform on the upper half plane, and `Re` of the
//! admittance. All verdicts are scale-normalized floating-point checks
//! against the tolerance [`tol::PDC_TOL`], not proofs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::spectra::{extend_kernel, FrictionKernel, HerglotzEvaluator, HerglotzKind};
use crate::{tol, C64, CMat, Error, Result};

/// Which form of the dissipation condition a report certifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdcKind {
    TimeGram,
    FreqKernel,
    Admittance,
}

impl PdcKind {
    #[must_use]
    pub fn as_str(&self) -> &'static str {
        match self {
            PdcKind::TimeGram => "time-gram",
            PdcKind::FreqKernel => "freq-kernel",
            PdcKind::Admittance => "admittance",
        }
    }
}

/// Where the worst eigenvalue was found.
#[derive(Clone, Copy, Debug)]
pub enum PdcLocation {
    /// Pair of grid times carrying the largest components of the
    /// offending eigenvector.
    TimePair(f64, f64),
    /// Frequency-domain probe point.
    Point(C64),
}

/// Outcome of a dissipation check.
#[derive(Clone, Debug)]
pub struct PdcReport {
    pub kind: PdcKind,
    /// Most negative eigenvalue found, normalized by the largest
    /// eigenvalue magnitude over the probe set.
    pub worst_value: f64,
    pub worst_location: PdcLocation,
    /// `worst_value >= -PDC_TOL`.
    pub pass: bool,
    /// Number of probe configurations examined.
    pub samples: usize,
}

fn finish(kind: PdcKind, worst_value: f64, worst_location: PdcLocation, samples: usize) -> PdcReport {
    PdcReport {
        kind,
        worst_value,
        worst_location,
        pass: worst_value >= -tol::PDC_TOL,
        samples,
    }
}

/// Worst normalized eigenvalue of one block Gram matrix, with the time
/// pair dominating the offending eigenvector.
fn gram_worst(kernel: &FrictionKernel, times: &[f64]) -> Result<(f64, PdcLocation)> {
    let n = times.len();
    let d = kernel.dim();
    // Trapezoid quadrature weights of the time grid.
    let mut w = vec![0.0f64; n];
    w[0] = 0.5 * (times[1] - times[0]);
    w[n - 1] = 0.5 * (times[n - 1] - times[n - 2]);
    for j in 1..n - 1 {
        w[j] = 0.5 * (times[j + 1] - times[j - 1]);
    }

    let mut gram = CMat::zeros((n * d, n * d));
    let atom = kernel.alpha_inf().mapv(|z| z * C64::from(2.0));
    for j in 0..n {
        for l in 0..n {
            let mut block = extend_kernel(kernel, times[j] - times[l]);
            if j == l {
                block = block + atom.mapv(|z| z / C64::from(w[j]));
            }
            gram.slice_mut(ndarray::s![j * d..(j + 1) * d, l * d..(l + 1) * d]).assign(&block);
        }
    }
    // The extension is Hermitian by construction; symmetrize roundoff away.
    let gram = linalg::hermitian_part(&gram);
    let (vals, q) = linalg::eigh_auto(&gram)?;
    let (mut min_val, mut min_idx) = (f64::INFINITY, 0);
    let mut radius = 0.0f64;
    for (idx, v) in vals.iter().enumerate() {
        radius = radius.max(v.abs());
        if *v < min_val {
            min_val = *v;
            min_idx = idx;
        }
    }
    let worst = if radius > 0.0 { min_val / radius } else { 0.0 };

    // Two dominant block indices of the offending eigenvector.
    let vec = q.column(min_idx);
    let mut best = (0usize, 0.0f64);
    let mut second = (0usize, 0.0f64);
    for j in 0..n {
        let norm: f64 = (0..d).map(|i| vec[j * d + i].norm_sqr()).sum();
        if norm > best.1 {
            second = best;
            best = (j, norm);
        } else if norm > second.1 {
            second = (j, norm);
        }
    }
    let pair = if n == 1 { (times[0], times[0]) } else { (times[best.0], times[second.0]) };
    Ok((worst, PdcLocation::TimePair(pair.0, pair.1)))
}

/// Time-domain check: the block Gram matrix
/// `G_{jl} = a_e(t_j - t_l) + 2 alpha_inf delta_{jl} / w_j`
/// on the given grid must be positive semidefinite. The grid is probed as
/// given plus `trials` random subsets drawn from the seeded generator.
pub fn check_time_pdc(
    kernel: &FrictionKernel,
    times: &[f64],
    trials: usize,
    seed: u64,
) -> Result<PdcReport> {
    if times.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "time grid needs at least two points, got {}",
            times.len()
        )));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidInput(format!(
                "times must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }

    let (mut worst, mut location) = gram_worst(kernel, times)?;
    let mut samples = 1usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let size = rand::Rng::random_range(&mut rng, 2..=times.len());
        let mut idx = rand::seq::index::sample(&mut rng, times.len(), size).into_vec();
        idx.sort_unstable();
        let subset: Vec<f64> = idx.iter().map(|i| times[*i]).collect();
        let (w, loc) = gram_worst(kernel, &subset)?;
        samples += 1;
        if w < worst {
            worst = w;
            location = loc;
        }
    }
    Ok(finish(PdcKind::TimeGram, worst, location, samples))
}

fn check_halfplane(h: &HerglotzEvaluator, zetas: &[C64], kind: PdcKind) -> Result<PdcReport> {
    if zetas.is_empty() {
        return Err(Error::InvalidInput("empty probe set".into()));
    }
    let mut worst_raw = f64::INFINITY;
    let mut radius = 0.0f64;
    let mut location = PdcLocation::Point(zetas[0]);
    for &zeta in zetas {
        if !(zeta.im > 0.0) {
            return Err(Error::PointNotInUpperHalfPlane(zeta));
        }
        let re = linalg::hermitian_part(&h.eval(zeta)?);
        let (lo, hi) = linalg::eig_range(&re)?;
        radius = radius.max(lo.abs()).max(hi.abs());
        if lo < worst_raw {
            worst_raw = lo;
            location = PdcLocation::Point(zeta);
        }
    }
    let worst = if radius > 0.0 { worst_raw / radius } else { 0.0 };
    Ok(finish(kind, worst, location, zetas.len()))
}

/// Frequency-domain check: `Re ahat(zeta) >= 0` on the probe points, all
/// of which must lie in the open upper half plane.
pub fn check_freq_pdc(h: &HerglotzEvaluator, zetas: &[C64]) -> Result<PdcReport> {
    if h.kind() != HerglotzKind::KernelTransform {
        return Err(Error::InvalidInput(
            "check_freq_pdc expects a kernel-transform evaluator".into(),
        ));
    }
    check_halfplane(h, zetas, PdcKind::FreqKernel)
}

/// Admittance check: `Re Adm(zeta) >= 0` on the probe points.
pub fn check_admittance_pdc(h: &HerglotzEvaluator, zetas: &[C64]) -> Result<PdcReport> {
    if h.kind() != HerglotzKind::Admittance {
        return Err(Error::InvalidInput(
            "check_admittance_pdc expects an admittance evaluator".into(),
        ));
    }
    check_halfplane(h, zetas, PdcKind::Admittance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{kernel_transform_evaluator, scalar_mat, LaplaceQuad};

    fn uniform_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn pure_atom_gram_is_positive_diagonal() {
        let k = FrictionKernel::instantaneous(scalar_mat(C64::from(1.0))).unwrap();
        let report = check_time_pdc(&k, &uniform_times(0.0, 10.0, 20), 5, 7).unwrap();
        assert!(report.pass);
        assert!(report.worst_value > 0.0, "worst {:.3e}", report.worst_value);
        assert_eq!(report.samples, 6);
    }

    #[test]
    fn cosine_kernel_is_positive_definite_in_time() {
        // Bochner: cos t transforms to two point masses at +-1.
        let k = FrictionKernel::scalar_closed_form(0.0, |t| C64::from(t.cos()), 1.0).unwrap();
        let times = uniform_times(0.0, 10.0, 50);
        let report = check_time_pdc(&k, &times, 10, 42).unwrap();
        assert!(report.pass, "worst {:.3e}", report.worst_value);

        // Cross-check the base Gram directly.
        let n = times.len();
        let mut g = CMat::zeros((n, n));
        for j in 0..n {
            for l in 0..n {
                g[(j, l)] = C64::from((times[j] - times[l]).cos());
            }
        }
        let (vals, _) = linalg::eigh_auto(&g).unwrap();
        let scale = vals.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(vals[0] >= -1e-12 * scale, "oracle Gram has min eigenvalue {:.3e}", vals[0]);
    }

    #[test]
    fn negated_exponential_kernel_fails_in_time() {
        let k = FrictionKernel::scalar_closed_form(0.0, |t| C64::from(-(-t).exp()), 1.0).unwrap();
        let report = check_time_pdc(&k, &uniform_times(0.0, 5.0, 40), 3, 11).unwrap();
        assert!(!report.pass);
        assert!(report.worst_value < -tol::PDC_TOL, "worst {:.3e}", report.worst_value);

        // Brute-force 2x2 oracle at t in {0, 0.1}: eigenvalues -1 +- e^{-0.1}.
        let e = (-0.1f64).exp();
        assert!(-1.0 + e < 0.0 && -1.0 - e < 0.0);
    }

    #[test]
    fn verdict_is_reproducible_for_a_fixed_seed() {
        let k = FrictionKernel::scalar_closed_form(0.0, |t| C64::from(t.cos()), 1.0).unwrap();
        let times = uniform_times(0.0, 8.0, 30);
        let a = check_time_pdc(&k, &times, 8, 123).unwrap();
        let b = check_time_pdc(&k, &times, 8, 123).unwrap();
        assert_eq!(a.worst_value, b.worst_value);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn constant_positive_transform_passes_with_unit_worst() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, |_| C64::from(0.4));
        let zetas: Vec<C64> = (1..20).map(|j| C64::new(j as f64 - 10.0, 0.3 * j as f64)).collect();
        let report = check_freq_pdc(&h, &zetas).unwrap();
        assert!(report.pass);
        assert!((report.worst_value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lorentz_transform_passes_in_frequency() {
        let p = crate::spectra::LorentzParams::new(1.0, 1.0, 0.5).unwrap();
        let h = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, move |z| {
            crate::spectra::lorentz_kernel_transform(&p, z)
        });
        let mut zetas = Vec::new();
        for j in 0..1000 {
            let u = (j as f64 * 0.618033988749895) % 1.0;
            let v = (j as f64 * 0.414213562373095) % 1.0;
            zetas.push(C64::new(20.0 * (u - 0.5), 10.0 * v + 1e-4));
        }
        let report = check_freq_pdc(&h, &zetas).unwrap();
        assert!(report.pass, "worst {:.3e}", report.worst_value);
    }

    #[test]
    fn constant_negative_transform_fails_in_frequency() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, |_| C64::from(-1.0));
        let report = check_freq_pdc(&h, &[C64::new(0.0, 1.0), C64::new(1.0, 2.0)]).unwrap();
        assert!(!report.pass);
        assert!((report.worst_value + 1.0).abs() < 1e-14);
    }

    #[test]
    fn frequency_check_rejects_lower_halfplane_points() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, |_| C64::from(1.0));
        let err = check_freq_pdc(&h, &[C64::new(0.0, -1.0)]).unwrap_err();
        assert!(matches!(err, Error::PointNotInUpperHalfPlane(_)), "got {err}");
    }

    #[test]
    fn admittance_of_free_particle_passes_at_i() {
        // Adm(zeta) = i/zeta; at zeta = i this is 1.
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |z| C64::new(0.0, 1.0) / z);
        let report = check_admittance_pdc(&h, &[C64::new(0.0, 1.0)]).unwrap();
        assert!(report.pass);
        assert!((report.worst_value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_negative_admittance_fails() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |_| C64::from(-1.0));
        let report = check_admittance_pdc(&h, &[C64::new(0.0, 1.0)]).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let h = HerglotzEvaluator::scalar(HerglotzKind::Admittance, |_| C64::from(1.0));
        assert!(check_freq_pdc(&h, &[C64::new(0.0, 1.0)]).is_err());
        let g = HerglotzEvaluator::scalar(HerglotzKind::KernelTransform, |_| C64::from(1.0));
        assert!(check_admittance_pdc(&g, &[C64::new(0.0, 1.0)]).is_err());
    }

    #[test]
    fn time_and_frequency_verdicts_agree() {
        // Passing kernel: decaying exponential; failing kernel: its negation.
        let zetas: Vec<C64> = (0..60)
            .map(|j| {
                let u = (j as f64 * 0.7548776662) % 1.0;
                let v = (j as f64 * 0.5698402910) % 1.0;
                C64::new(8.0 * (u - 0.5), 4.0 * v + 0.3)
            })
            .collect();
        for (sign, expect_pass) in [(1.0, true), (-1.0, false)] {
            let k = FrictionKernel::scalar_closed_form(0.0, move |t| C64::from(sign * (-t).exp()), 1.0).unwrap();
            let time = check_time_pdc(&k, &uniform_times(0.0, 12.0, 60), 4, 5).unwrap();
            let quad = LaplaceQuad { t_max: Some(60.0), steps: Some(12_000), ..LaplaceQuad::default() };
            let h = kernel_transform_evaluator(k, quad);
            let freq = check_freq_pdc(&h, &zetas).unwrap();
            assert_eq!(time.pass, expect_pass, "time verdict, sign {sign}");
            assert_eq!(freq.pass, expect_pass, "freq verdict, sign {sign}");
        }
    }

    #[test]
    fn positive_rescaling_does_not_change_the_verdict() {
        for scale in [1e-3, 1.0, 1e3] {
            for (sign, expect_pass) in [(1.0, true), (-1.0, false)] {
                let c = sign * scale;
                let k = FrictionKernel::scalar_closed_form(0.0, move |t| C64::from(c * (-t).exp()), scale).unwrap();
                let report = check_time_pdc(&k, &uniform_times(0.0, 6.0, 25), 3, 9).unwrap();
                assert_eq!(report.pass, expect_pass, "scale {scale}, sign {sign}");
            }
        }
    }
}

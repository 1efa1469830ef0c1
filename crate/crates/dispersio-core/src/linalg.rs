//! Small dense Hermitian helpers used by every module.
//!
//! These wrap LAPACK (through `ndarray-linalg`) with the conventions the
//! rest of the crate relies on: Hermitian/skew splits, guarded positive
//! projections, and fractional powers of positive matrices.

use ndarray::{Array1, Array2};

use crate::{tol, C64, CMat, Error, Result};

/// Conjugate transpose.
#[must_use]
pub fn adjoint(x: &CMat) -> CMat {
    x.t().mapv(|z| z.conj())
}

/// Hermitian part `(X + X*)/2`.
#[must_use]
pub fn hermitian_part(x: &CMat) -> CMat {
    let xh = adjoint(x);
    (x + &xh).mapv(|z| 0.5 * z)
}

/// Skew part `(X - X*)/(2i)`, itself a Hermitian matrix.
#[must_use]
pub fn skew_part(x: &CMat) -> CMat {
    let xh = adjoint(x);
    let half_i = C64::new(0.0, -0.5);
    (x - &xh).mapv(|z| half_i * z)
}

/// Frobenius norm.
#[must_use]
pub fn frob(x: &CMat) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest absolute entry, a cheap scale estimate.
#[must_use]
pub fn max_abs(x: &CMat) -> f64 {
    x.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Relative deviation from being Hermitian: `||X - X*|| / max(||X||, 1)`.
#[must_use]
pub fn hermitian_defect(x: &CMat) -> f64 {
    let xh = adjoint(x);
    frob(&(x - &xh)) / frob(x).max(1.0)
}

/// Errors unless `x` is Hermitian within [`tol::HERMITIAN_REL`].
pub fn require_hermitian(x: &CMat) -> Result<()> {
    let defect = hermitian_defect(x);
    if defect > tol::HERMITIAN_REL {
        return Err(Error::NotHermitian {
            found: defect,
            limit: tol::HERMITIAN_REL,
        });
    }
    Ok(())
}

/// Eigendecomposition of a real symmetric matrix with the divide and
/// conquer driver, which is several times faster than the default QR
/// driver at the mode counts this crate works with.
pub(crate) fn eigh_real_dc(x: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            x.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // LAPACK is column major; a symmetric matrix reads the same either way.
    let mut a: Vec<f64> = x.iter().copied().collect();
    let mut w = vec![0.0f64; n];
    let nn = n as i32;
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut info = 0i32;
    unsafe {
        let mut work_q = [0.0f64];
        let mut iwork_q = [0i32];
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_q.as_mut_ptr(),
            &-1,
            iwork_q.as_mut_ptr(),
            &-1,
            &mut info,
        );
        if info != 0 {
            return Err(Error::Backend(format!("dsyevd workspace query: info={info}")));
        }
        let lwork = work_q[0] as i32;
        let liwork = iwork_q[0];
        let mut work = vec![0.0f64; lwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
        if info != 0 {
            return Err(Error::Backend(format!("dsyevd: info={info}")));
        }
    }
    // The buffer now holds eigenvectors as LAPACK columns; viewed row major
    // its rows are those columns, so transpose to get columns back.
    let rows = Array2::from_shape_vec((n, n), a)
        .map_err(|e| Error::Backend(e.to_string()))?;
    Ok((Array1::from_vec(w), rows.reversed_axes().as_standard_layout().to_owned()))
}

/// Complex Hermitian counterpart of [`eigh_real_dc`] (zheevd).
fn eigh_complex_dc(x: &CMat) -> Result<(Array1<f64>, CMat)> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            x.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // Row major data read column major is the transpose, i.e. the conjugate
    // of a Hermitian matrix, which is Hermitian with the same spectrum; its
    // eigenvectors are the conjugates of ours.
    let mut a: Vec<C64> = x.iter().copied().collect();
    let mut w = vec![0.0f64; n];
    let nn = n as i32;
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut info = 0i32;
    unsafe {
        let ap = a.as_mut_ptr() as *mut lapack_sys::__BindgenComplex<f64>;
        let mut work_q = [C64::new(0.0, 0.0)];
        let mut rwork_q = [0.0f64];
        let mut iwork_q = [0i32];
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            ap,
            &nn,
            w.as_mut_ptr(),
            work_q.as_mut_ptr() as *mut lapack_sys::__BindgenComplex<f64>,
            &-1,
            rwork_q.as_mut_ptr(),
            &-1,
            iwork_q.as_mut_ptr(),
            &-1,
            &mut info,
        );
        if info != 0 {
            return Err(Error::Backend(format!("zheevd workspace query: info={info}")));
        }
        let lwork = work_q[0].re as i32;
        let lrwork = rwork_q[0] as i32;
        let liwork = iwork_q[0];
        let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
        let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &nn,
            ap,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut lapack_sys::__BindgenComplex<f64>,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
        if info != 0 {
            return Err(Error::Backend(format!("zheevd: info={info}")));
        }
    }
    let rows = Array2::from_shape_vec((n, n), a)
        .map_err(|e| Error::Backend(e.to_string()))?;
    // Rows are eigenvectors of conj(X); the adjoint puts conj(u_j) in
    // column j, which are the eigenvectors of X itself.
    Ok((Array1::from_vec(w), adjoint(&rows)))
}

/// Eigendecomposition of a Hermitian matrix, ascending eigenvalues.
pub fn eigh(x: &CMat) -> Result<(Array1<f64>, CMat)> {
    eigh_complex_dc(x)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn eig_range(x: &CMat) -> Result<(f64, f64)> {
    let (vals, _) = eigh(x)?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Spectral norm of a Hermitian matrix.
pub fn spectral_norm_hermitian(x: &CMat) -> Result<f64> {
    let (lo, hi) = eig_range(x)?;
    Ok(lo.abs().max(hi.abs()))
}

/// Spectral norm of an arbitrary rectangular matrix via the Gram matrix.
pub fn opnorm(x: &CMat) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    let gram = x.dot(&adjoint(x));
    let (_, hi) = eig_range(&gram)?;
    Ok(hi.max(0.0).sqrt())
}

/// Rebuild `sum_k f(lambda_k) q_k q_k*` from an eigendecomposition.
fn assemble_from_eigen(vals: &Array1<f64>, vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, col) in scaled.columns_mut().into_iter().enumerate() {
        let fj = C64::from(f(vals[j]));
        let mut col = col;
        col.mapv_inplace(|z| z * fj);
    }
    let _ = n;
    scaled.dot(&adjoint(vecs))
}

/// Projection of a Hermitian matrix onto the positive cone.
///
/// Eigenvalues in `(-PSD_CLIP_REL * scale, 0)` are treated as roundoff and
/// clipped to zero. An eigenvalue below `-PSD_HARD_REL * scale` means the
/// input is genuinely indefinite and is reported as an error rather than
/// silently repaired. `scale` is the largest eigenvalue magnitude.
pub fn psd_clip(x: &CMat) -> Result<CMat> {
    require_hermitian(x)?;
    let xh = hermitian_part(x);
    let (vals, vecs) = eigh(&xh)?;
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(xh);
    }
    let floor = -tol::PSD_HARD_REL * scale;
    if let Some(&worst) = vals
        .iter()
        .filter(|v| **v < floor)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        return Err(Error::NotPositive {
            found: worst,
            threshold: floor,
        });
    }
    Ok(assemble_from_eigen(&vals, &vecs, |v| v.max(0.0)))
}

/// Real power `X^p` of a Hermitian positive semidefinite matrix.
///
/// Negative powers require the matrix to be definite relative to
/// [`tol::RANK_REL`]; eigenvalues below that cutoff are an error then.
pub fn herm_power(x: &CMat, p: f64) -> Result<CMat> {
    require_hermitian(x)?;
    let (vals, vecs) = eigh(&hermitian_part(x))?;
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let hard = -tol::PSD_HARD_REL * scale;
    if let Some(&worst) = vals
        .iter()
        .filter(|v| **v < hard)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        return Err(Error::NotPositive {
            found: worst,
            threshold: hard,
        });
    }
    if p < 0.0 {
        let cutoff = tol::RANK_REL * scale.max(f64::MIN_POSITIVE);
        if let Some(&small) = vals
            .iter()
            .filter(|v| **v < cutoff)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            return Err(Error::DegenerateCoupling {
                found: small,
                min: cutoff,
            });
        }
    }
    Ok(assemble_from_eigen(&vals, &vecs, |v| {
        if v <= 0.0 {
            0.0
        } else {
            v.powf(p)
        }
    }))
}

/// Identity matrix of size `n`.
#[must_use]
pub fn eye(n: usize) -> CMat {
    Array2::eye(n)
}

/// Matrix inverse of a general square complex matrix.
pub fn inv(x: &CMat) -> Result<CMat> {
    use ndarray_linalg::Inverse;
    Ok(x.inv()?)
}

/// Largest imaginary magnitude over all entries; zero means the matrix is
/// exactly real and real-symmetric LAPACK paths apply.
#[must_use]
pub fn max_imag(x: &CMat) -> f64 {
    x.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()))
}

/// Embeds a real symmetric eigenproblem result when the input is real.
///
/// Falls back to the complex Hermitian solver otherwise. The split matters
/// for large mode systems: the real path is several times faster and the
/// oscillator and Lorentz extensions are real.
pub fn eigh_auto(x: &CMat) -> Result<(Array1<f64>, CMat)> {
    if max_imag(x) == 0.0 {
        let xr: Array2<f64> = x.mapv(|z| z.re);
        let (vals, vecs) = eigh_real_dc(&xr)?;
        Ok((vals, vecs.mapv(C64::from)))
    } else {
        eigh(x)
    }
}

/// Spectral decomposition of a Hermitian arrowhead matrix
///
/// ```text
///     H = [ a    b*  ]        a real, b in C^M, d real strictly increasing
///         [ b  diag(d) ]
/// ```
///
/// computed from the secular equation instead of a dense solver. Block
/// systems with a single observable coordinate have exactly this shape in
/// mass-normalized coordinates, and at thousands of modes the dense solver
/// dominates the runtime of a simulation while this path is quadratic.
///
/// Eigenvalues strictly interlace the diagonal: one in each gap, one below
/// `d[0]`, one above `d[M-1]`. Each root is stored as an offset from its
/// nearest diagonal anchor so eigenvector components never suffer
/// cancellation, and coupling magnitudes are recomputed from the computed
/// roots so the eigenvector matrix stays numerically orthogonal.
pub struct ArrowheadEig {
    m: usize,
    d: Vec<f64>,
    /// Anchor index into `d` for each eigenvalue; the eigenvalue is
    /// `d[anchor] + offset`.
    anchor: Vec<usize>,
    offset: Vec<f64>,
    /// Observable (head) weight of each unit eigenvector, phase-free.
    head: Vec<f64>,
    /// Coupling magnitudes consistent with the computed roots.
    btilde: Vec<f64>,
    /// Unit phases of the original couplings.
    phase: Vec<C64>,
}

impl ArrowheadEig {
    /// Decomposes the arrowhead. Returns `None` when the assumptions do not
    /// hold (non-increasing diagonal, vanishing couplings); callers fall
    /// back to the dense solver then.
    pub fn new(a: f64, b: &[C64], d: &[f64]) -> Option<Self> {
        let m = d.len();
        if b.len() != m {
            return None;
        }
        if m == 0 {
            return Some(ArrowheadEig {
                m: 0,
                d: vec![a],
                anchor: vec![0],
                offset: vec![0.0],
                head: vec![1.0],
                btilde: Vec::new(),
                phase: Vec::new(),
            });
        }
        let scale = d
            .iter()
            .fold(a.abs(), |s, x| s.max(x.abs()))
            .max(b.iter().fold(0.0_f64, |s, z| s.max(z.norm())))
            .max(1.0);
        // Gaps must be resolvable and couplings nonzero, otherwise the
        // interlacing that the root finder relies on degenerates.
        for k in 0..m {
            if b[k].norm() <= 1e-14 * scale {
                return None;
            }
            if k + 1 < m && d[k + 1] - d[k] <= 1e-12 * scale {
                return None;
            }
        }
        let babs: Vec<f64> = b.iter().map(|z| z.norm()).collect();
        let phase: Vec<C64> = b.iter().zip(&babs).map(|(z, r)| z / C64::from(*r)).collect();
        let bnorm = babs.iter().map(|x| x * x).sum::<f64>().sqrt();

        // Secular function in offset coordinates around anchor index k:
        // f(d_k + t) = d_k + t - a - sum_i |b_i|^2 / ((d_k - d_i) + t),
        // strictly increasing between consecutive poles. The anchored
        // differences keep lambda - d_i fully accurate near the pole.
        let f_at = |anchor: usize, t: f64| -> f64 {
            let mut s = d[anchor] + t - a;
            for i in 0..m {
                s -= babs[i] * babs[i] / ((d[anchor] - d[i]) + t);
            }
            s
        };
        let fprime_at = |anchor: usize, t: f64| -> f64 {
            let mut s = 1.0;
            for i in 0..m {
                let g = (d[anchor] - d[i]) + t;
                s += babs[i] * babs[i] / (g * g);
            }
            s
        };

        // One root per gap plus the two exterior roots, each bracketed in
        // offset coordinates and polished by safeguarded Newton.
        let mut anchor = Vec::with_capacity(m + 1);
        let mut offset = Vec::with_capacity(m + 1);
        let mut solve = |anch: usize, mut lo: f64, mut hi: f64| {
            debug_assert!(lo < hi);
            let mut t = 0.5 * (lo + hi);
            for _ in 0..120 {
                let ft = f_at(anch, t);
                if ft > 0.0 {
                    hi = t;
                } else {
                    lo = t;
                }
                let step = ft / fprime_at(anch, t);
                let mut next = t - step;
                if !(next > lo && next < hi) {
                    next = 0.5 * (lo + hi);
                }
                let width = hi - lo;
                if width <= 1e-16 * (t.abs().max(1e-300)) || next == t {
                    t = next;
                    break;
                }
                t = next;
            }
            anchor.push(anch);
            offset.push(t);
        };

        let span = bnorm + (a - d[0]).abs() + 1.0;
        solve(0, -span, -1e-300);
        for k in 0..m.saturating_sub(1) {
            let gap = d[k + 1] - d[k];
            // Pick the anchor on the side of the gap the root lies in so
            // the stored offset stays small and well conditioned.
            let fmid = f_at(k, 0.5 * gap);
            if fmid >= 0.0 {
                solve(k, f64::MIN_POSITIVE, 0.5 * gap);
            } else {
                solve(k + 1, -0.5 * gap, -f64::MIN_POSITIVE);
            }
        }
        if m > 0 {
            let span_hi = bnorm + (a - d[m - 1]).abs() + 1.0;
            solve(m - 1, f64::MIN_POSITIVE, span_hi);
        }

        // Recompute coupling magnitudes from the roots (Loewner formula).
        // This keeps the explicit eigenvector formulas orthonormal even
        // when roots sit very close to their poles. Interlacing makes each
        // product positive; it is evaluated in log space for stability.
        let lam_minus_d =
            |j: usize, k: usize| -> f64 { (d[anchor[j]] - d[k]) + offset[j] };
        let mut btilde = vec![0.0f64; m];
        for k in 0..m {
            let mut logsum = 0.0f64;
            for j in 0..=m {
                logsum += lam_minus_d(j, k).abs().ln();
            }
            for i in 0..m {
                if i != k {
                    logsum -= (d[i] - d[k]).abs().ln();
                }
            }
            btilde[k] = (0.5 * logsum).exp();
        }

        let mut head = vec![0.0f64; m + 1];
        for j in 0..=m {
            let mut s = 1.0f64;
            for k in 0..m {
                let g = lam_minus_d(j, k);
                let r = btilde[k] / g;
                s += r * r;
            }
            head[j] = 1.0 / s.sqrt();
        }

        Some(ArrowheadEig {
            m,
            d: d.to_vec(),
            anchor,
            offset,
            head,
            btilde,
            phase,
        })
    }

    /// Number of eigenvalues (matrix dimension).
    #[must_use]
    pub fn len(&self) -> usize {
        self.m + 1
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Eigenvalues in ascending order.
    #[must_use]
    pub fn eigenvalues(&self) -> Array1<f64> {
        (0..=self.m)
            .map(|j| self.d[self.anchor[j]] + self.offset[j])
            .collect()
    }

    #[inline]
    fn lam_minus_d(&self, j: usize, k: usize) -> f64 {
        (self.d[self.anchor[j]] - self.d[k]) + self.offset[j]
    }

    /// Head (first) components of all eigenvectors; real by construction.
    #[must_use]
    pub fn head(&self) -> &[f64] {
        &self.head
    }

    /// Product `rows * Q_hidden` where `Q_hidden` holds the hidden (tail)
    /// components of the eigenvectors: maps a `d x m` coupling block to its
    /// `d x (m+1)` eigenbasis image without materializing the vectors.
    #[must_use]
    pub fn hidden_product(&self, rows: &CMat) -> CMat {
        let n = self.m + 1;
        let d = rows.nrows();
        debug_assert_eq!(rows.ncols(), self.m, "coupling block must have one column per hidden mode");
        let mut out = Array2::zeros((d, n));
        for j in 0..n {
            for k in 0..self.m {
                let ukj = self.phase[k]
                    * C64::from(self.btilde[k] * self.head[j] / self.lam_minus_d(j, k));
                for i in 0..d {
                    out[(i, j)] += rows[(i, k)] * ukj;
                }
            }
        }
        out
    }

    /// Unit eigenvector for eigenvalue `j`, head component first.
    #[must_use]
    pub fn vector(&self, j: usize) -> crate::CVec {
        let mut u = Array1::zeros(self.m + 1);
        u[0] = C64::from(self.head[j]);
        for k in 0..self.m {
            u[k + 1] = self.phase[k] * C64::from(self.btilde[k] * self.head[j] / self.lam_minus_d(j, k));
        }
        u
    }

    /// Dense eigenvector matrix with eigenvectors as columns. Quadratic
    /// memory; intended for diagnostics and moderate sizes.
    #[must_use]
    pub fn vectors(&self) -> CMat {
        let n = self.m + 1;
        let mut q = Array2::zeros((n, n));
        for j in 0..n {
            let u = self.vector(j);
            q.column_mut(j).assign(&u);
        }
        q
    }

    /// Row vector `y* Q` without materializing `Q`: the projections of a
    /// given extended-space row onto every eigenvector.
    #[must_use]
    pub fn project_row(&self, y: &crate::CVec) -> crate::CVec {
        let n = self.m + 1;
        let mut out = Array1::zeros(n);
        for j in 0..n {
            let mut acc = y[0].conj() * C64::from(self.head[j]);
            for k in 0..self.m {
                let ukj = self.phase[k]
                    * C64::from(self.btilde[k] * self.head[j] / self.lam_minus_d(j, k));
                acc += y[k + 1].conj() * ukj;
            }
            out[j] = acc;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn hermitian_and_skew_parts_recompose() {
        let x = array![[c(1.0, 2.0), c(3.0, -1.0)], [c(0.5, 0.25), c(-2.0, 1.0)]];
        let h = hermitian_part(&x);
        let s = skew_part(&x);
        let i = C64::new(0.0, 1.0);
        let back = &h + &s.mapv(|z| i * z);
        assert!(frob(&(&back - &x)) < 1e-14, "H + iS must reproduce X");
        assert!(hermitian_defect(&h) < 1e-15);
        assert!(hermitian_defect(&s) < 1e-15);
    }

    #[test]
    fn psd_clip_removes_roundoff_negatives_only() {
        let tiny = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1e-14, 0.0)]];
        let clipped = psd_clip(&tiny).expect("tiny negative is roundoff");
        let (lo, _) = eig_range(&clipped).unwrap();
        assert!(lo >= 0.0, "clipped matrix must be PSD, got min eig {lo:.2e}");

        let bad = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-0.5, 0.0)]];
        let err = psd_clip(&bad).unwrap_err();
        assert!(matches!(err, Error::NotPositive { .. }), "got {err}");
    }

    #[test]
    fn herm_power_matches_scalar_powers() {
        let x = array![[c(4.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(9.0, 0.0)]];
        let sqrt = herm_power(&x, 0.5).unwrap();
        assert_relative_eq!(sqrt[(0, 0)].re, 2.0, max_relative = 1e-12);
        assert_relative_eq!(sqrt[(1, 1)].re, 3.0, max_relative = 1e-12);
        let inv = herm_power(&x, -1.0).unwrap();
        assert_relative_eq!(inv[(0, 0)].re, 0.25, max_relative = 1e-12);
        assert_relative_eq!(inv[(1, 1)].re, 1.0 / 9.0, max_relative = 1e-12);
    }

    #[test]
    fn negative_power_of_rank_deficient_matrix_fails() {
        let x = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let err = herm_power(&x, -0.5).unwrap_err();
        assert!(matches!(err, Error::DegenerateCoupling { .. }), "got {err}");
    }

    #[test]
    fn opnorm_of_row_vector_is_its_euclidean_length() {
        let x = array![[c(3.0, 0.0), c(0.0, 4.0)]];
        assert_relative_eq!(opnorm(&x).unwrap(), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn real_input_takes_the_real_eigensolver_path() {
        let x = array![[c(2.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(2.0, 0.0)]];
        let (vals, vecs) = eigh_auto(&x).unwrap();
        assert_relative_eq!(vals[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(vals[1], 3.0, max_relative = 1e-12);
        let rebuilt = assemble_from_eigen(&vals, &vecs, |v| v);
        assert!(frob(&(&rebuilt - &x)) < 1e-12);
    }

    #[test]
    fn complex_eigh_reproduces_a_random_hermitian_matrix() {
        let n = 17;
        let mut x = CMat::zeros((n, n));
        let mut s = 0x2545f4914f6cdd1du64;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..n {
            x[(i, i)] = C64::from(next());
            for j in (i + 1)..n {
                let z = c(next(), next());
                x[(i, j)] = z;
                x[(j, i)] = z.conj();
            }
        }
        let (vals, vecs) = eigh(&x).unwrap();
        let rebuilt = assemble_from_eigen(&vals, &vecs, |v| v);
        let err = frob(&(&rebuilt - &x)) / frob(&x);
        assert!(err < 1e-13, "eigendecomposition residual {err:.2e}");
        let gram = adjoint(&vecs).dot(&vecs);
        let orth = frob(&(&gram - &eye(n)));
        assert!(orth < 1e-13, "eigenvector Gram defect {orth:.2e}");
    }

    fn arrowhead_dense(a: f64, b: &[C64], d: &[f64]) -> CMat {
        let m = d.len();
        let mut h = CMat::zeros((m + 1, m + 1));
        h[(0, 0)] = C64::from(a);
        for k in 0..m {
            h[(0, k + 1)] = b[k].conj();
            h[(k + 1, 0)] = b[k];
            h[(k + 1, k + 1)] = C64::from(d[k]);
        }
        h
    }

    #[test]
    fn arrowhead_matches_dense_solver_on_a_spread_spectrum() {
        let m = 60;
        let d: Vec<f64> = (0..m).map(|k| -3.0 + 6.0 * k as f64 / (m - 1) as f64).collect();
        let b: Vec<C64> = (0..m)
            .map(|k| c(0.05 + 0.02 * (k as f64 * 0.7).sin(), 0.03 * (k as f64 * 1.3).cos()))
            .collect();
        let a = 0.4;
        let ah = ArrowheadEig::new(a, &b, &d).expect("valid arrowhead");
        let h = arrowhead_dense(a, &b, &d);
        let (vals, _) = eigh(&h).unwrap();
        let lam = ah.eigenvalues();
        for j in 0..=m {
            assert_relative_eq!(lam[j], vals[j], max_relative = 1e-11, epsilon = 1e-12);
        }
        let q = ah.vectors();
        let gram = adjoint(&q).dot(&q);
        let orth = frob(&(&gram - &eye(m + 1)));
        assert!(orth < 1e-12, "arrowhead eigenvector Gram defect {orth:.2e}");
        let lam_c: CMat = CMat::from_diag(&lam.mapv(C64::from));
        let rebuilt = q.dot(&lam_c).dot(&adjoint(&q));
        let err = frob(&(&rebuilt - &h)) / frob(&h);
        assert!(err < 1e-11, "arrowhead reconstruction residual {err:.2e}");
    }

    #[test]
    fn arrowhead_survives_weak_couplings_near_poles() {
        // Couplings spanning eight orders of magnitude push roots very close
        // to their poles; the offset representation must stay orthogonal.
        let m = 40;
        let d: Vec<f64> = (0..m).map(|k| k as f64 * 0.05).collect();
        let b: Vec<C64> = (0..m)
            .map(|k| C64::from(1e-8 + 1e-1 * ((k * 37) % 11) as f64 / 11.0))
            .collect();
        let ah = ArrowheadEig::new(-0.3, &b, &d).expect("valid arrowhead");
        let q = ah.vectors();
        let gram = adjoint(&q).dot(&q);
        let orth = frob(&(&gram - &eye(m + 1)));
        assert!(orth < 1e-11, "Gram defect {orth:.2e}");
        let h = arrowhead_dense(-0.3, &b, &d);
        let lam = ah.eigenvalues();
        let (vals, _) = eigh(&h).unwrap();
        for j in 0..=m {
            assert_relative_eq!(lam[j], vals[j], max_relative = 1e-10, epsilon = 1e-13);
        }
    }

    #[test]
    fn arrowhead_projection_agrees_with_dense_product() {
        let m = 25;
        let d: Vec<f64> = (0..m).map(|k| 0.1 * k as f64 - 1.0).collect();
        let b: Vec<C64> = (0..m).map(|k| c(0.1, 0.02 * k as f64)).collect();
        let ah = ArrowheadEig::new(0.0, &b, &d).expect("valid arrowhead");
        let mut y = crate::CVec::zeros(m + 1);
        for k in 0..=m {
            y[k] = c((k as f64 * 0.31).sin(), (k as f64 * 0.17).cos());
        }
        let fast = ah.project_row(&y);
        let q = ah.vectors();
        let dense = y.mapv(|z| z.conj()).dot(&q);
        for j in 0..=m {
            assert!((fast[j] - dense[j]).norm() < 1e-12, "component {j} mismatch");
        }
    }

    #[test]
    fn arrowhead_with_no_hidden_modes_is_the_scalar_head() {
        let ah = ArrowheadEig::new(2.5, &[], &[]).expect("trivial arrowhead");
        assert_eq!(ah.len(), 1);
        assert_relative_eq!(ah.eigenvalues()[0], 2.5);
        assert_eq!(ah.vector(0)[0], C64::from(1.0));
    }

    #[test]
    fn arrowhead_rejects_degenerate_diagonals() {
        let b = [C64::from(0.1), C64::from(0.2)];
        let d = [1.0, 1.0];
        assert!(ArrowheadEig::new(0.0, &b, &d).is_none());
    }
}

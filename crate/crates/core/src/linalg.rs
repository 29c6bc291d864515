//! Dense Hermitian linear algebra on `ndarray` storage.
//!
//! Every matrix in this crate is small (tens of rows), so the solvers are
//! written directly against `Array2<Complex<T>>` with plain O(n^3) dense
//! algorithms and no external LAPACK linkage. Cholesky factors back the
//! quadratic forms and determinants; a cyclic Jacobi sweep provides the
//! Hermitian eigendecomposition used for matrix roots and spectral
//! diagnostics. All routines are deterministic: identical inputs produce
//! bitwise-identical outputs.

use ndarray::{Array1, Array2};
use num_complex::Complex;

use crate::error::Error;
use crate::scalar::Real;

pub type CVec<T> = Array1<Complex<T>>;
pub type CMat<T> = Array2<Complex<T>>;

/// Condition-number estimate above which [`loaded_cholesky`] adds diagonal
/// loading before factoring.
pub const COND_LIMIT: f64 = 1e12;

/// Relative diagonal loading applied by [`loaded_cholesky`].
pub const LOAD_EPS: f64 = 1e-9;

#[inline]
pub fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn creal<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// n-by-n identity.
pub fn eye<T: Real>(n: usize) -> CMat<T> {
    let mut m = CMat::<T>::zeros((n, n));
    for i in 0..n {
        m[(i, i)] = Complex::new(T::one(), T::zero());
    }
    m
}

pub fn frob<T: Real>(m: &CMat<T>) -> T {
    m.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// ‖a − b‖_F / ‖b‖_F, with the convention 0/0 = 0.
pub fn rel_frob_diff<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let mut num = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y).norm_sqr();
    }
    let den = frob(b);
    if den == T::zero() {
        if num == T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    } else {
        num.sqrt() / den
    }
}

pub fn trace<T: Real>(m: &CMat<T>) -> Complex<T> {
    let mut t = czero();
    for i in 0..m.nrows() {
        t += m[(i, i)];
    }
    t
}

/// Largest departure |M_ij − conj(M_ji)|, relative to the Frobenius norm.
pub fn hermitian_deviation<T: Real>(m: &CMat<T>) -> T {
    let n = m.nrows();
    let mut dev = T::zero();
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > dev {
                dev = d;
            }
        }
    }
    let scale = frob(m);
    if scale == T::zero() {
        dev
    } else {
        dev / scale
    }
}

/// (M + M†)/2 in place; diagonals forced real. Cheap cleanup after
/// accumulation loops whose rounding can drift off the Hermitian manifold.
pub fn hermitize<T: Real>(m: &mut CMat<T>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = creal(m[(i, i)].re);
        for j in (i + 1)..n {
            let half = T::of(0.5);
            let avg = (m[(i, j)] + m[(j, i)].conj()) * creal(half);
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Lower Cholesky factor L with L L† = M for Hermitian positive definite M.
pub fn cholesky<T: Real>(m: &CMat<T>) -> Result<CMat<T>, Error<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
            expected: n,
        });
    }
    let mut l = CMat::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let dj = d.sqrt();
        l[(j, j)] = creal(dj);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

pub struct LoadedChol<T: Real> {
    pub l: CMat<T>,
    /// True when diagonal loading was applied before factoring.
    pub loaded: bool,
}

/// Cholesky with the shared conditioning policy: factor M as-is, but if the
/// factorization fails or the condition estimate from the factor diagonal
/// exceeds [`COND_LIMIT`], add `LOAD_EPS · (tr M / n) · I` and refactor.
/// The diagonal-ratio estimate `(max_j L_jj / min_j L_jj)^2` is a lower
/// bound on the true condition number, which is all the trigger needs.
pub fn loaded_cholesky<T: Real>(m: &CMat<T>) -> Result<LoadedChol<T>, Error<T>> {
    let n = m.nrows();
    match cholesky(m) {
        Ok(l) => {
            let mut dmin = T::infinity();
            let mut dmax = T::zero();
            for j in 0..n {
                let d = l[(j, j)].re;
                if d < dmin {
                    dmin = d;
                }
                if d > dmax {
                    dmax = d;
                }
            }
            let ratio = dmax / dmin;
            if (ratio * ratio).as_f64() <= COND_LIMIT {
                return Ok(LoadedChol { l, loaded: false });
            }
        }
        Err(Error::NotPositiveDefinite) => {}
        Err(e) => return Err(e),
    }
    let mut loaded = m.clone();
    let bump = trace(m).re / T::of_usize(n) * T::of(LOAD_EPS);
    if !(bump > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    for i in 0..n {
        loaded[(i, i)] += creal(bump);
    }
    let l = cholesky(&loaded)?;
    Ok(LoadedChol { l, loaded: true })
}

/// x with L x = b.
pub fn solve_lower<T: Real>(l: &CMat<T>, b: &CVec<T>) -> CVec<T> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)].re;
    }
    x
}

/// x with L† x = b.
pub fn solve_lower_adj<T: Real>(l: &CMat<T>, b: &CVec<T>) -> CVec<T> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].re;
    }
    x
}

/// M⁻¹ b through the factor.
pub fn chol_solve<T: Real>(l: &CMat<T>, b: &CVec<T>) -> CVec<T> {
    solve_lower_adj(l, &solve_lower(l, b))
}

/// z† M⁻¹ z = ‖L⁻¹ z‖² through the factor; real and nonnegative by
/// construction.
pub fn chol_quad_inv<T: Real>(l: &CMat<T>, z: &CVec<T>) -> T {
    let w = solve_lower(l, z);
    w.iter().map(|c| c.norm_sqr()).sum()
}

/// log det M = 2 Σ log L_jj.
pub fn chol_log_det<T: Real>(l: &CMat<T>) -> T {
    let mut s = T::zero();
    for j in 0..l.nrows() {
        s += l[(j, j)].re.ln();
    }
    s + s
}

/// Explicit M⁻¹ through the factor; Hermitian by construction.
pub fn chol_inverse<T: Real>(l: &CMat<T>) -> CMat<T> {
    let n = l.nrows();
    let mut inv = CMat::<T>::zeros((n, n));
    let mut e = CVec::<T>::zeros(n);
    for j in 0..n {
        e[j] = Complex::new(T::one(), T::zero());
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
        e[j] = czero();
    }
    hermitize(&mut inv);
    inv
}

/// Re(z† M z) for Hermitian M, via the lower triangle only.
pub fn quad_form<T: Real>(m: &CMat<T>, z: &CVec<T>) -> T {
    let n = m.nrows();
    let mut diag = T::zero();
    let mut off = T::zero();
    for i in 0..n {
        diag += m[(i, i)].re * z[i].norm_sqr();
        for j in (i + 1)..n {
            off += (z[i].conj() * m[(i, j)] * z[j]).re;
        }
    }
    diag + (off + off)
}

/// Hermitian eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the unitary matrix whose
/// columns are the matching eigenvectors. The input is symmetrized
/// internally, so mild round-off asymmetry from accumulation loops is
/// tolerated; a grossly non-Hermitian input is a caller bug and is
/// rejected.
pub fn eigh<T: Real>(m: &CMat<T>) -> Result<(Array1<T>, CMat<T>), Error<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
            expected: n,
        });
    }
    let dev = hermitian_deviation(m);
    if dev > T::of(1e-6) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let mut a = m.clone();
    hermitize(&mut a);
    let mut v = eye::<T>(n);
    if n <= 1 {
        let vals = Array1::from_iter((0..n).map(|i| a[(i, i)].re));
        return Ok((vals, v));
    }

    let scale = frob(&a);
    let tol = scale * T::epsilon() * T::of_usize(n);
    let max_sweeps = 64;
    let mut converged = scale == T::zero();
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            converged = true;
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= tol / T::of_usize(n * n) {
                    a[(p, q)] = czero();
                    a[(q, p)] = czero();
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                // Rotation angle: zero the pivot of the phase-absorbed
                // real 2x2 block, taking the smaller-angle root.
                let tau = (aqq - app) / (r + r);
                let t = if tau == T::zero() {
                    T::one()
                } else {
                    let sg = if tau > T::zero() { T::one() } else { -T::one() };
                    sg / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                let phase = apq / r; // e^{i·arg(apq)}
                let sphase = phase * s;

                // A <- U† A (rows p, q)
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - sphase * aqk;
                    a[(q, k)] = sphase.conj() * apk + aqk * c;
                }
                // A <- A U (columns p, q)
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * sphase.conj();
                    a[(k, q)] = akp * sphase + akq * c;
                }
                a[(p, q)] = czero();
                a[(q, p)] = czero();
                a[(p, p)] = creal(a[(p, p)].re);
                a[(q, q)] = creal(a[(q, q)].re);

                // V <- V U
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * sphase.conj();
                    v[(k, q)] = vkp * sphase + vkq * c;
                }
            }
        }
    }
    if !converged {
        // One last check; cyclic Jacobi converging this slowly would point
        // at NaN contamination.
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if !(off.sqrt() <= tol * T::of(1e3)) {
            return Err(Error::Invariant(
                "jacobi eigensolver failed to converge".into(),
            ));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .re
            .partial_cmp(&a[(j, j)].re)
            .expect("eigenvalues are ordered")
            .then(i.cmp(&j))
    });
    let vals = Array1::from_iter(order.iter().map(|&i| a[(i, i)].re));
    let mut vecs = CMat::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, dst)] = v[(k, src)];
        }
    }
    Ok((vals, vecs))
}

/// Unique positive semidefinite square root, through [`eigh`]. Eigenvalues
/// below zero (round-off) are clamped.
pub fn psd_sqrt<T: Real>(m: &CMat<T>) -> Result<CMat<T>, Error<T>> {
    let (vals, vecs) = eigh(m)?;
    let n = m.nrows();
    let roots: Vec<T> = vals
        .iter()
        .map(|&l| if l > T::zero() { l.sqrt() } else { T::zero() })
        .collect();
    let mut out = CMat::<T>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let mut s = czero();
            for k in 0..n {
                s += vecs[(i, k)] * creal(roots[k]) * vecs[(j, k)].conj();
            }
            out[(i, j)] = s;
            out[(j, i)] = s.conj();
        }
        out[(i, i)] = creal(out[(i, i)].re);
    }
    Ok(out)
}

/// λ_max / λ_min from an eigenvalue vector; infinite when λ_min ≤ 0.
pub fn condition_from_eigvals<T: Real>(vals: &Array1<T>) -> T {
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    if lo <= T::zero() {
        T::infinity()
    } else {
        hi / lo
    }
}

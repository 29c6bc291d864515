//! Complex elliptically symmetric (CES) building blocks.
//!
//! A CES vector decomposes as z = R·A·u with A A† = Σ, R a nonnegative
//! random magnitude independent of the direction, and u uniform on the
//! complex unit hypersphere. The normalized direction z̃ = A u / ‖A u‖
//! follows the complex angular central Gaussian law, which depends on Σ
//! only through the trace-normalized shape matrix V = N·Σ/tr(Σ). Tyler's
//! fixed-point estimator recovers that shape without any assumption on R.

use num_complex::Complex;
use rand::Rng;

use crate::error::Error;
use crate::linalg::{
    self, chol_quad_inv, cholesky, creal, czero, frob, hermitian_deviation, loaded_cholesky,
    psd_sqrt, rel_frob_diff, CMat, CVec,
};
use crate::scalar::Real;

/// Trace-normalized Hermitian positive definite matrix: tr(V) = N.
#[derive(Debug, Clone)]
pub struct ShapeMatrix<T: Real> {
    m: CMat<T>,
}

impl<T: Real> ShapeMatrix<T> {
    /// Validates Hermitian symmetry (1e-10 relative), positive
    /// definiteness, and the trace normalization (1e-8 relative).
    pub fn new(m: CMat<T>) -> Result<Self, Error<T>> {
        let n = m.nrows();
        if m.ncols() != n || n == 0 {
            return Err(Error::BadShape {
                rows: m.nrows(),
                cols: m.ncols(),
                expected: n.max(1),
            });
        }
        let dev = hermitian_deviation(&m);
        if dev > T::of(1e-10) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = linalg::trace(&m).re;
        let expected = T::of_usize(n);
        if ((tr - expected) / expected).abs() > T::of(1e-8) {
            return Err(Error::BadTrace {
                trace: tr,
                expected,
            });
        }
        cholesky(&m)?;
        Ok(Self { m })
    }

    /// Trace-normalize an arbitrary Hermitian PD matrix into a shape.
    pub fn from_scatter(scatter: &CMat<T>) -> Result<Self, Error<T>> {
        let n = scatter.nrows();
        let tr = linalg::trace(scatter).re;
        if !(tr > T::zero()) {
            return Err(Error::InvalidArgument("scatter trace must be positive".into()));
        }
        let f = creal(T::of_usize(n) / tr);
        Self::new(scatter.mapv(|x| x * f))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: linalg::eye(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat<T> {
        &self.m
    }

    pub fn into_matrix(self) -> CMat<T> {
        self.m
    }
}

/// Hermitian matrix with unit diagonal and off-diagonal magnitudes ≤ 1.
#[derive(Debug, Clone)]
pub struct CoherenceMatrix<T: Real> {
    m: CMat<T>,
}

impl<T: Real> CoherenceMatrix<T> {
    pub fn new(m: CMat<T>) -> Result<Self, Error<T>> {
        let n = m.nrows();
        if m.ncols() != n || n == 0 {
            return Err(Error::BadShape {
                rows: m.nrows(),
                cols: m.ncols(),
                expected: n.max(1),
            });
        }
        let dev = hermitian_deviation(&m);
        if dev > T::of(1e-10) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tol = T::of(1e-10);
        for i in 0..n {
            if (m[(i, i)].re - T::one()).abs() > tol || m[(i, i)].im.abs() > tol {
                return Err(Error::NonPositiveDiagonal { index: i });
            }
            for j in (i + 1)..n {
                let mag = m[(i, j)].norm();
                if mag > T::one() + tol {
                    return Err(Error::CoherenceOutOfRange {
                        row: i,
                        col: j,
                        value: mag,
                    });
                }
            }
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMat<T> {
        &self.m
    }

    pub fn into_matrix(self) -> CMat<T> {
        self.m
    }

    /// Mean of |γ_ij| over the strict upper triangle. The scalar phase
    /// quality + fallback gates use this summary.
    pub fn mean_upper_magnitude(&self) -> T {
        let n = self.m.nrows();
        if n < 2 {
            return T::one();
        }
        let mut s = T::zero();
        let mut count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                s += self.m[(i, j)].norm();
                count += 1;
            }
        }
        s / T::of_usize(count)
    }
}

/// γ_ij = σ_ij / √(σ_ii σ_jj). The diagonal is set to exactly one.
pub fn normalize_to_coherence<T: Real>(m: &CMat<T>) -> Result<CoherenceMatrix<T>, Error<T>> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
            expected: n.max(1),
        });
    }
    let dev = hermitian_deviation(m);
    if dev > T::of(1e-10) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let mut root = vec![T::zero(); n];
    for i in 0..n {
        let d = m[(i, i)].re;
        if !(d > T::zero()) {
            return Err(Error::NonPositiveDiagonal { index: i });
        }
        root[i] = d.sqrt();
    }
    let mut g = CMat::<T>::zeros((n, n));
    for i in 0..n {
        g[(i, i)] = creal(T::one());
        for j in (i + 1)..n {
            let v = m[(i, j)] / (root[i] * root[j]);
            // Strictly PD inputs keep |γ| < 1; shave float overshoot so the
            // validated constructor stays happy on boundary cases.
            let mag = v.norm();
            let v = if mag > T::one() { v / mag } else { v };
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    CoherenceMatrix::new(g)
}

/// Law of the scalar magnitude R in z = R·A·u.
///
/// All laws are power-normalized: E[R²] = 1 (so E[z z†] = Σ/N), except
/// `Constant`, where R is the given value exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudeLaw<T: Real> {
    /// R² is a unit-mean Gamma(N, 1/N) speckle power; z is then exactly
    /// circular complex Gaussian with covariance Σ/N.
    Rayleigh,
    /// R² is the Rayleigh speckle power modulated by an independent
    /// unit-mean Gamma texture with variance `xi`. `xi = 0` degenerates to
    /// `Rayleigh`.
    KTexture { xi: T },
    /// R is fixed; samples lie on the ellipsoid ‖A⁻¹z‖ = value.
    Constant { value: T },
}

impl<T: Real> MagnitudeLaw<T> {
    fn validate(&self) -> Result<(), Error<T>> {
        match *self {
            MagnitudeLaw::Rayleigh => Ok(()),
            MagnitudeLaw::KTexture { xi } => {
                if xi < T::zero() || !xi.is_finite() {
                    Err(Error::InvalidArgument(
                        "texture variance must be finite and nonnegative".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            MagnitudeLaw::Constant { value } => {
                if value > T::zero() && value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(
                        "constant magnitude must be positive and finite".into(),
                    ))
                }
            }
        }
    }

    /// One magnitude draw for dimension `n`.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> T {
        let shape = T::of_usize(n);
        let scale = T::one() / shape;
        match *self {
            MagnitudeLaw::Rayleigh => T::gamma_draw(rng, shape, scale).sqrt(),
            MagnitudeLaw::KTexture { xi } => {
                let speckle = T::gamma_draw(rng, shape, scale);
                let texture = if xi > T::zero() {
                    T::gamma_draw(rng, T::one() / xi, xi)
                } else {
                    T::one()
                };
                (speckle * texture).sqrt()
            }
            MagnitudeLaw::Constant { value } => value,
        }
    }
}

/// u uniform on the complex unit hypersphere in dimension `n`.
pub fn sample_uniform_sphere<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec<T> {
    assert!(n >= 1, "sphere dimension must be at least 1");
    loop {
        let mut v = CVec::<T>::zeros(n);
        let mut norm_sq = T::zero();
        for k in 0..n {
            let re = T::std_normal(rng);
            let im = T::std_normal(rng);
            v[k] = Complex::new(re, im);
            norm_sq += re * re + im * im;
        }
        // 2n-variate Gaussian at the origin has probability zero; the loop
        // guards the impossible-in-practice underflow case.
        if norm_sq > T::zero() {
            let inv = T::one() / norm_sq.sqrt();
            return v.mapv(|c| c * inv);
        }
    }
}

/// Sampler for z = R·A·u with a fixed scatter, amortizing the matrix root.
#[derive(Debug, Clone)]
pub struct CesSampler<T: Real> {
    a: CMat<T>,
    law: MagnitudeLaw<T>,
}

impl<T: Real> CesSampler<T> {
    /// `scatter` must be Hermitian positive semidefinite; A is its unique
    /// PSD square root.
    pub fn new(scatter: &CMat<T>, law: MagnitudeLaw<T>) -> Result<Self, Error<T>> {
        law.validate()?;
        let a = psd_sqrt(scatter)?;
        Ok(Self { a, law })
    }

    /// Reuses a caller-provided factor A (A A† = Σ); the sampled law only
    /// depends on Σ, so any factor is equivalent.
    pub fn from_factor(a: CMat<T>, law: MagnitudeLaw<T>) -> Result<Self, Error<T>> {
        law.validate()?;
        Ok(Self { a, law })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// One z = R·A·u draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec<T> {
        let n = self.dim();
        let u = sample_uniform_sphere(n, rng);
        let r = self.law.draw(n, rng);
        let mut z = CVec::<T>::zeros(n);
        for i in 0..n {
            let mut s: Complex<T> = czero();
            for j in 0..n {
                s += self.a[(i, j)] * u[j];
            }
            z[i] = s * creal(r);
        }
        z
    }

    /// One normalized direction z̃ = A u / ‖A u‖ (the magnitude law drops
    /// out). Used by the parametric bootstrap and the power studies.
    pub fn draw_normalized<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec<T> {
        let n = self.dim();
        let u = sample_uniform_sphere(n, rng);
        let mut z = CVec::<T>::zeros(n);
        let mut norm_sq = T::zero();
        for i in 0..n {
            let mut s: Complex<T> = czero();
            for j in 0..n {
                s += self.a[(i, j)] * u[j];
            }
            norm_sq += s.norm_sqr();
            z[i] = s;
        }
        let inv = T::one() / norm_sq.sqrt();
        z.mapv(|c| c * inv)
    }
}

/// One z = R·A·u draw from a scatter matrix. Prefer [`CesSampler`] when
/// drawing repeatedly from the same scatter.
pub fn sample_ces<T: Real, R: Rng + ?Sized>(
    scatter: &CMat<T>,
    law: MagnitudeLaw<T>,
    rng: &mut R,
) -> Result<CVec<T>, Error<T>> {
    Ok(CesSampler::new(scatter, law)?.draw(rng))
}

#[derive(Debug, Clone, Copy)]
pub struct TylerConfig<T: Real> {
    /// Relative Frobenius change between successive normalized iterates
    /// below which the fixed point counts as reached.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for TylerConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-6),
            max_iter: 100,
        }
    }
}

/// Sample covariance (1/L)Σᵢ zᵢzᵢ†, Hermitian by construction.
pub fn sample_covariance<T: Real>(samples: &[CVec<T>]) -> Result<CMat<T>, Error<T>> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples {
            dim: 0,
            need: 1,
            got: 0,
        });
    }
    let n = samples[0].len();
    let mut m = CMat::<T>::zeros((n, n));
    for (index, z) in samples.iter().enumerate() {
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                index,
                got: z.len(),
                expected: n,
            });
        }
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] += z[i] * z[j].conj();
            }
        }
    }
    let inv_l = T::one() / T::of_usize(samples.len());
    for i in 0..n {
        for j in 0..=i {
            let v = m[(i, j)] * inv_l;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    for i in 0..n {
        m[(i, i)] = Complex::new(m[(i, i)].re, T::zero());
    }
    Ok(m)
}

/// Tyler's fixed-point shape estimator.
///
/// Iterates Σ̃ ← Σᵢ zᵢzᵢ†/(zᵢ†Σ̂⁻¹zᵢ), renormalized to trace N after each
/// step, from Σ̂⁽⁰⁾ = I. The estimate depends on the samples only through
/// their directions, so callers need not normalize. Requires L ≥ N.
///// Non-convergence returns [`Error::NoConvergence`] carrying the last
/// iterate so callers with weaker needs can keep it.
pub fn tyler_estimate<T: Real>(
    samples: &[CVec<T>],
    cfg: &TylerConfig<T>,
) -> Result<ShapeMatrix<T>, Error<T>> {
    let l = samples.len();
    if l == 0 {
        return Err(Error::TooFewSamples {
            dim: 0,
            need: 1,
            got: 0,
        });
    }
    let n = samples[0].len();
    if l < n {
        return Err(Error::TooFewSamples {
            dim: n,
            need: n,
            got: l,
        });
    }
    for (index, z) in samples.iter().enumerate() {
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                index,
                got: z.len(),
                expected: n,
            });
        }
        if !(z.iter().map(|c| c.norm_sqr()).sum::<T>() > T::zero()) {
            return Err(Error::DegenerateSample { index });
        }
    }

    let nt = T::of_usize(n);
    let mut sigma = linalg::eye::<T>(n);
    let mut delta = T::infinity();
    for _ in 0..cfg.max_iter {
        let lc = loaded_cholesky(&sigma)?;
        let mut acc = CMat::<T>::zeros((n, n));
        for z in samples {
            let q = chol_quad_inv(&lc.l, z);
            if !(q > T::zero()) {
                return Err(Error::Invariant(
                    "nonpositive whitened norm in fixed-point step".into(),
                ));
            }
            let w = creal(T::one() / q.sqrt());
            // acc += (z/√q)(z/√q)†, lower triangle
            for i in 0..n {
                let zi = z[i] * w;
                for j in 0..=i {
                    acc[(i, j)] += zi * (z[j] * w).conj();
                }
            }
        }
        let mut tr = T::zero();
        for i in 0..n {
            tr += acc[(i, i)].re;
        }
        if !(tr > T::zero()) {
            return Err(Error::Invariant("fixed-point iterate lost its trace".into()));
        }
        let f = creal(nt / tr);
        let mut next = CMat::<T>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = acc[(i, j)] * f;
                next[(i, j)] = v;
                next[(j, i)] = v.conj();
            }
            next[(i, i)] = creal(next[(i, i)].re);
        }
        delta = rel_frob_diff(&next, &sigma);
        sigma = next;
        if delta < cfg.tol {
            return ShapeMatrix::new(sigma);
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        delta,
        last: Box::new(sigma),
    })
}

/// Shrinkage intensity selection for [`shrink_to_identity`].
#[derive(Debug, Clone, Copy)]
pub enum Shrinkage<T: Real> {
    Fixed(T),
    /// Plug-in intensity from the estimated sphericity
    /// γ̂ = N·tr(M²)/(tr M)² ∈ [1, N]:
    /// ρ̂ = min(1, (N/L)·γ̂/(γ̂ + (γ̂ − 1))).
    /// Spherical inputs (γ̂ → 1) get ρ̂ → N/L, which is harmless there;
    /// strongly structured inputs keep roughly half that weight.
    Auto { n_samples: usize },
}

/// (1−ρ)·M + ρ·(tr M/N)·I. Preserves the trace exactly; returns the matrix
/// and the ρ that was applied.
pub fn shrink_to_identity<T: Real>(
    m: &CMat<T>,
    how: Shrinkage<T>,
) -> Result<(CMat<T>, T), Error<T>> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(Error::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
            expected: n.max(1),
        });
    }
    let tr = linalg::trace(m).re;
    if !(tr > T::zero()) {
        return Err(Error::InvalidArgument("matrix trace must be positive".into()));
    }
    let rho = match how {
        Shrinkage::Fixed(r) => {
            if r < T::zero() || r > T::one() || !r.is_finite() {
                return Err(Error::InvalidArgument(
                    "shrinkage coefficient must lie in [0, 1]".into(),
                ));
            }
            r
        }
        Shrinkage::Auto { n_samples } => {
            if n_samples == 0 {
                return Err(Error::InvalidArgument(
                    "auto shrinkage needs the sample count".into(),
                ));
            }
            let nt = T::of_usize(n);
            let f2 = frob(m);
            let sphericity = nt * (f2 * f2) / (tr * tr);
            let gap = sphericity - T::one();
            let raw = nt / T::of_usize(n_samples) * sphericity / (sphericity + gap);
            raw.min(T::one())
        }
    };
    let mu = tr / T::of_usize(n);
    let keep = creal(T::one() - rho);
    let mut out = m.mapv(|x| x * keep);
    let bump = creal(rho * mu);
    for i in 0..n {
        out[(i, i)] += bump;
    }
    Ok((out, rho))
}

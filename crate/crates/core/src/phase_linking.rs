//! Phase-history estimation from an estimated coherence structure.
//!
//! Three estimators share the conventions Θ = diag{1, e^{jθ₂}, …} and
//! w_θ = (e^{jθ₁}, …, e^{jθ_N}):
//!
//! * CGG-MLE: minimize Σᵢ (zᵢ†ΘĜ⁻¹Θ†zᵢ)ˢ over θ_{2:N} by quasi-Newton,
//!   with Ĝ the coherence magnitudes.
//! * CFPL: minimize ‖Ĝ∘(w w†) − Γ̂‖_F, equivalently maximize w†(Ĝ∘Γ̂)w
//!   over unit-modulus w, by majorization–minimization.
//! * PTA: minimize w†(Ĝ⁻¹∘Γ̂)w over unit-modulus w, the classical plug-in
//!   triangulation; algebraically the s = 1 specialization of the MLE
//!   objective when the empirical covariance has unit diagonal.
//!
//! All returned histories are realigned to θ₁ = 0 with entries in (−π, π].

use num_complex::Complex;

use crate::ces::{shrink_to_identity, CoherenceMatrix, Shrinkage};
use crate::error::Error;
use crate::linalg::{chol_inverse, eigh, loaded_cholesky, trace, CMat, CVec};
use crate::optim::{lbfgs, LbfgsConfig};
use crate::scalar::Real;

/// Wraps an angle to (−π, π].
pub fn wrap_phase<T: Real>(x: T) -> T {
    let two_pi = T::of(2.0) * T::PI();
    x - two_pi * ((x - T::PI()) / two_pi).ceil()
}

/// Phase history with the first acquisition as zero-phase reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistory<T: Real> {
    theta: Vec<T>,
}

impl<T: Real> PhaseHistory<T> {
    /// Zero history of length n.
    pub fn zeros(n: usize) -> Self {
        Self {
            theta: vec![T::zero(); n],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Unit phasors w_θ.
    pub fn phasors(&self) -> CVec<T> {
        CVec::from_iter(self.theta.iter().map(|&t| Complex::from_polar(T::one(), t)))
    }
}

/// θ ← arg e^{j(θ − θ₁)}: subtracts the reference phase and wraps every
/// entry to (−π, π], making θ₁ exactly zero.
pub fn realign_reference<T: Real>(theta: &[T]) -> PhaseHistory<T> {
    if theta.is_empty() {
        return PhaseHistory { theta: Vec::new() };
    }
    let first = theta[0];
    let mut out = Vec::with_capacity(theta.len());
    out.push(T::zero());
    for &t in &theta[1..] {
        out.push(wrap_phase(t - first));
    }
    PhaseHistory { theta: out }
}

/// Averaged cosine of the per-pair phase residuals,
/// (2/(N(N−1))) Σ_{i<j} cos(θᵢ − θⱼ − arg(zᵢ z̄ⱼ)); a single-pixel quality
/// statistic in [−1, 1].
pub fn phase_stat<T: Real>(z: &CVec<T>, theta: &PhaseHistory<T>) -> Result<T, Error<T>> {
    let n = z.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "phase statistic needs at least two acquisitions".into(),
        ));
    }
    if theta.len() != n {
        return Err(Error::DimensionMismatch {
            index: 0,
            got: theta.len(),
            expected: n,
        });
    }
    for (index, v) in z.iter().enumerate() {
        if v.norm_sqr() == T::zero() {
            return Err(Error::DegenerateSample { index });
        }
    }
    let th = theta.as_slice();
    let mut acc = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let cross = z[i] * z[j].conj();
            let residual = th[i] - th[j] - cross.im.atan2(cross.re);
            acc += residual.cos();
        }
    }
    let pairs = T::of_usize(n * (n - 1) / 2);
    Ok(acc / pairs)
}

/// Outcome of one phase-linking run.
#[derive(Debug, Clone)]
pub struct LinkResult<T: Real> {
    pub phases: PhaseHistory<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Final value of the estimator's own objective.
    pub objective: T,
    /// False when the input carries no off-diagonal information (the
    /// objective is then constant in θ and the initial point is returned).
    pub informative: bool,
    /// Per-iteration objective values (populated by the MM solver).
    pub objective_trace: Vec<T>,
}

/// Phases of the principal eigenvector of Γ̂: the standard deterministic
/// warm start for the iterative linkers.
pub fn spectral_init<T: Real>(gamma: &CMat<T>) -> Result<PhaseHistory<T>, Error<T>> {
    let (_vals, vecs) = eigh(gamma)?;
    let n = gamma.nrows();
    let mut theta = Vec::with_capacity(n);
    for k in 0..n {
        let v = vecs[(k, n - 1)];
        theta.push(if v.norm_sqr() > T::zero() {
            v.im.atan2(v.re)
        } else {
            T::zero()
        });
    }
    Ok(realign_reference(&theta))
}

fn off_diag_mass<T: Real>(m: &CMat<T>) -> T {
    let n = m.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Builds Ĝ⁻¹ from the magnitude matrix. Noisy coherence magnitudes are
/// routinely indefinite; those are shrunk toward the identity with the
/// smallest weight that lifts the bottom eigenvalue to a positive floor.
/// The result is trace-normalized to N: the phase estimates are invariant
/// under positive scaling of the weight matrix, and near-singular Ĝ would
/// otherwise hand the optimizer an objective scaled by the load reciprocal.
fn g_inverse<T: Real>(g: &CMat<T>) -> Result<CMat<T>, Error<T>> {
    let n = g.nrows();
    let lc = match loaded_cholesky(g) {
        Ok(lc) => lc,
        Err(Error::NotPositiveDefinite) => {
            let (vals, _) = eigh(g)?;
            let mu = trace(g).re / T::of_usize(n);
            if !(mu > T::zero()) {
                return Err(Error::NotPositiveDefinite);
            }
            let floor = T::of(1e-6) * mu;
            // shrunk eigenvalues are (1−ρ)λ + ρμ: solve for the floor
            let rho = ((floor - vals[0]) / (mu - vals[0])).min(T::one());
            let (shrunk, _) = shrink_to_identity(g, Shrinkage::Fixed(rho))?;
            loaded_cholesky(&shrunk)?
        }
        Err(e) => return Err(e),
    };
    let mut b = chol_inverse(&lc.l);
    let tr = trace(&b).re;
    if tr > T::zero() {
        let c = Complex::new(T::of_usize(n) / tr, T::zero());
        b.mapv_inplace(|v| v * c);
    }
    Ok(b)
}

struct MleObjective<'a, T: Real> {
    samples: &'a [CVec<T>],
    b: &'a CMat<T>,
    s: T,
}

impl<T: Real> MleObjective<'_, T> {
    /// x holds θ_{2:N}; returns Σᵢ Qᵢˢ and writes the gradient,
    /// dQᵢ/dθ_n = −2·Im(conj(yᵢ_n)·(Byᵢ)_n) with yᵢ = Θ†zᵢ.
    fn eval(&self, x: &[T], grad: &mut [T]) -> T {
        let n = x.len() + 1;
        let mut value = T::zero();
        grad.fill(T::zero());
        let mut y = CVec::<T>::zeros(n);
        let mut by = CVec::<T>::zeros(n);
        for z in self.samples {
            y[0] = z[0];
            for k in 1..n {
                y[k] = z[k] * Complex::from_polar(T::one(), -x[k - 1]);
            }
            let mut q = T::zero();
            for i in 0..n {
                let mut acc: Complex<T> = Complex::new(T::zero(), T::zero());
                for j in 0..n {
                    acc += self.b[(i, j)] * y[j];
                }
                by[i] = acc;
                q += (y[i].conj() * acc).re;
            }
            // Q = 0 only for a zero sample; its gradient contribution is 0
            if q <= T::zero() {
                continue;
            }
            value += q.powf(self.s);
            let scale = self.s * q.powf(self.s - T::one());
            for k in 1..n {
                let im = (y[k].conj() * by[k]).im;
                grad[k - 1] += scale * (-T::of(2.0)) * im;
            }
        }
        value
    }
}

struct QuadObjective<'a, T: Real> {
    /// Hermitian weight matrix of the form (Ĝ⁻¹ ∘ Γ̂).
    m: &'a CMat<T>,
}

impl<T: Real> QuadObjective<'_, T> {
    /// x holds θ_{2:N} (w₁ = 1); returns w†Mw with gradient
    /// 2·Im(conj(w_n)·(Mw)_n).
    fn eval(&self, x: &[T], grad: &mut [T]) -> T {
        let n = x.len() + 1;
        let mut w = CVec::<T>::zeros(n);
        w[0] = Complex::new(T::one(), T::zero());
        for k in 1..n {
            w[k] = Complex::from_polar(T::one(), x[k - 1]);
        }
        let mut value = T::zero();
        for i in 0..n {
            let mut acc: Complex<T> = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                acc += self.m[(i, j)] * w[j];
            }
            value += (w[i].conj() * acc).re;
            if i >= 1 {
                grad[i - 1] = T::of(2.0) * (w[i].conj() * acc).im;
            }
        }
        value
    }
}

fn validate_square_match<T: Real>(
    g: &CMat<T>,
    n_expected: Option<usize>,
) -> Result<usize, Error<T>> {
    let n = g.nrows();
    if g.ncols() != n || n < 2 {
        return Err(Error::BadShape {
            rows: g.nrows(),
            cols: g.ncols(),
            expected: n.max(2),
        });
    }
    if let Some(want) = n_expected {
        if n != want {
            return Err(Error::DimensionMismatch {
                index: 0,
                got: n,
                expected: want,
            });
        }
    }
    Ok(n)
}

/// CGG maximum-likelihood phase linking with quasi-Newton iterations;
/// `g_matrix` holds the coherence magnitudes |Γ̂| and `s` the fitted shape.
pub fn cgg_mle_phases<T: Real>(
    samples: &[CVec<T>],
    g_matrix: &CMat<T>,
    s: T,
    init: &PhaseHistory<T>,
) -> Result<LinkResult<T>, Error<T>> {
    cgg_mle_phases_with(samples, g_matrix, s, init, &LbfgsConfig::default())
}

pub fn cgg_mle_phases_with<T: Real>(
    samples: &[CVec<T>],
    g_matrix: &CMat<T>,
    s: T,
    init: &PhaseHistory<T>,
    opt: &LbfgsConfig<T>,
) -> Result<LinkResult<T>, Error<T>> {
    if !(s > T::zero()) {
        return Err(Error::InvalidArgument(
            "shape parameter must be positive".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::TooFewSamples {
            dim: g_matrix.nrows(),
            need: 1,
            got: 0,
        });
    }
    let n = validate_square_match(g_matrix, Some(samples[0].len()))?;
    if init.len() != n {
        return Err(Error::DimensionMismatch {
            index: 0,
            got: init.len(),
            expected: n,
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
    }
    let b = g_inverse(g_matrix)?;
    if off_diag_mass(&b) <= T::of(1e-12) {
        // diagonal weighting: ‖y‖-type objective, constant in θ
        return Ok(LinkResult {
            phases: realign_reference(init.as_slice()),
            converged: true,
            iterations: 0,
            objective: T::zero(),
            informative: false,
            objective_trace: Vec::new(),
        });
    }
    let problem = MleObjective {
        samples,
        b: &b,
        s,
    };
    let x0 = &init.as_slice()[1..];
    let res = lbfgs(x0, |x, g| problem.eval(x, g), opt);
    let mut theta = Vec::with_capacity(n);
    theta.push(T::zero());
    theta.extend_from_slice(&res.x);
    Ok(LinkResult {
        phases: realign_reference(&theta),
        converged: res.converged,
        iterations: res.iterations,
        objective: res.value,
        informative: true,
        objective_trace: Vec::new(),
    })
}

/// Classical phase triangulation: minimize w†(Ĝ⁻¹∘Γ̂)w over unit-modulus
/// w, quasi-Newton on θ_{2:N} from the spectral warm start.
pub fn pta_phases<T: Real>(gamma_hat: &CoherenceMatrix<T>) -> Result<LinkResult<T>, Error<T>> {
    pta_phases_with(gamma_hat, &LbfgsConfig::default())
}

pub fn pta_phases_with<T: Real>(
    gamma_hat: &CoherenceMatrix<T>,
    opt: &LbfgsConfig<T>,
) -> Result<LinkResult<T>, Error<T>> {
    let gm = gamma_hat.matrix();
    let n = gm.nrows();
    let g = gm.mapv(|v| Complex::new(v.norm(), T::zero()));
    let b = g_inverse(&g)?;
    let mut m = CMat::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = b[(i, j)] * gm[(i, j)];
        }
    }
    if off_diag_mass(&m) <= T::of(1e-12) {
        return Ok(LinkResult {
            phases: PhaseHistory::zeros(n),
            converged: true,
            iterations: 0,
            objective: T::of_usize(n),
            informative: false,
            objective_trace: Vec::new(),
        });
    }
    let init = spectral_init(gm)?;
    let problem = QuadObjective { m: &m };
    let res = lbfgs(&init.as_slice()[1..], |x, g| problem.eval(x, g), opt);
    let mut theta = Vec::with_capacity(n);
    theta.push(T::zero());
    theta.extend_from_slice(&res.x);
    Ok(LinkResult {
        phases: realign_reference(&theta),
        converged: res.converged,
        iterations: res.iterations,
        objective: res.value,
        informative: true,
        objective_trace: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CfplConfig<T: Real> {
    /// Relative objective-change stopping tolerance.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for CfplConfig<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-10),
            max_iters: 1000,
        }
    }
}

/// Covariance-fitting phase linking by majorization–minimization.
///
/// Minimizing ‖Ĝ∘(w w†) − Γ̂‖_F over unit-modulus w is, after expanding
/// the square (the other terms are constant on the torus), maximizing
/// h(w) = w†Cw with C = Ĝ∘Γ̂. With λ = λ_min(C), the linear minorizer of
/// h at w̃ on the torus is maximized by w ← phase((C − λI)w̃), so h never
/// decreases; a decrease beyond 1e-10 is a broken invariant and aborts.
pub fn cfpl_phases<T: Real>(gamma_hat: &CoherenceMatrix<T>) -> Result<LinkResult<T>, Error<T>> {
    cfpl_phases_with(gamma_hat, &CfplConfig::default())
}

pub fn cfpl_phases_with<T: Real>(
    gamma_hat: &CoherenceMatrix<T>,
    cfg: &CfplConfig<T>,
) -> Result<LinkResult<T>, Error<T>> {
    let gm = gamma_hat.matrix();
    let n = gm.nrows();
    let mut c = CMat::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] = gm[(i, j)] * gm[(i, j)].norm();
        }
    }
    let (vals, _) = eigh(&c)?;
    let lambda_min = vals[0];

    let init = spectral_init(gm)?;
    let mut w = init.phasors();
    let h = |w: &CVec<T>| -> T {
        let mut acc = T::zero();
        for i in 0..n {
            let mut row: Complex<T> = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                row += c[(i, j)] * w[j];
            }
            acc += (w[i].conj() * row).re;
        }
        acc
    };

    let mut h_prev = h(&w);
    let mut trace = vec![h_prev];
    let mut converged = false;
    let mut iterations = 0usize;
    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let mut next = CVec::<T>::zeros(n);
        for i in 0..n {
            let mut acc: Complex<T> = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                let shift = if i == j {
                    c[(i, j)] - Complex::new(lambda_min, T::zero())
                } else {
                    c[(i, j)]
                };
                acc += shift * w[j];
            }
            let mag = acc.norm();
            next[i] = if mag > T::zero() { acc / mag } else { w[i] };
        }
        w = next;
        let h_now = h(&w);
        trace.push(h_now);
        let scale = h_prev.abs().max(T::one());
        if h_now < h_prev - T::of(1e-10) * scale {
            return Err(Error::Invariant(format!(
                "MM step decreased the fitting objective ({} -> {})",
                h_prev.as_f64(),
                h_now.as_f64()
            )));
        }
        if (h_now - h_prev).abs() <= cfg.tol * scale {
            converged = true;
            break;
        }
        h_prev = h_now;
    }

    let theta: Vec<T> = w.iter().map(|v| v.im.atan2(v.re)).collect();
    let phases = realign_reference(&theta);
    // report the Frobenius-form objective the estimator is defined by
    let wal = phases.phasors();
    let mut frob_sq = T::zero();
    for i in 0..n {
        for j in 0..n {
            let model = Complex::new(gm[(i, j)].norm(), T::zero()) * wal[i] * wal[j].conj();
            frob_sq += (gm[(i, j)] - model).norm_sqr();
        }
    }
    Ok(LinkResult {
        phases,
        converged,
        iterations,
        objective: frob_sq.sqrt(),
        informative: true,
        objective_trace: trace,
    })
}

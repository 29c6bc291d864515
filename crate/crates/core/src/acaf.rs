//! Selection of shape-statistically homogeneous pixels (SSHPs).
//!
//! Around each reference pixel, the window samples are phase-aligned and
//! ranked by temporal autocorrelation; a seed of the strongest pixels
//! initializes Tyler's shape estimate, and the set is then iteratively
//! re-tested with the whiteness statistic t = z̃†Σ̂⁻¹z̃, thresholded by a
//! parametric bootstrap under the current estimate. A neighborhood
//! connectivity check guards against mask reversal (the selection locking
//! onto a population that excludes the reference pixel); accepted masks
//! from a clean first pass are restricted to the reference pixel's
//! connected component and pruned once more with a double-sided test.

use num_complex::Complex;
use rand::Rng;

use crate::ces::{
    normalize_to_coherence, tyler_estimate, CoherenceMatrix, ShapeMatrix, TylerConfig,
};
use crate::error::Error;
use crate::linalg::{chol_quad_inv, loaded_cholesky, psd_sqrt, quad_form, CVec};
use crate::scalar::Real;
use crate::stack::WindowLayout;

/// Sidedness of the whiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sided {
    /// Reject only t above the (1−α) quantile: spectra flatter than the
    /// reference go undetected by construction.
    Right,
    /// Reject t outside [α/2, 1−α/2]: sensitive in both directions.
    Two,
}

/// One window of pixel vectors plus their raster geometry.
#[derive(Debug, Clone)]
pub struct WindowSamples<T: Real> {
    vectors: Vec<CVec<T>>,
    layout: WindowLayout,
}

impl<T: Real> WindowSamples<T> {
    pub fn new(vectors: Vec<CVec<T>>, layout: WindowLayout) -> Result<Self, Error<T>> {
        if vectors.len() != layout.len() || vectors.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "window holds {} vectors for a {}x{} layout",
                vectors.len(),
                layout.rows,
                layout.cols
            )));
        }
        if layout.ref_index >= vectors.len() {
            return Err(Error::InvalidArgument(
                "reference index outside the window".into(),
            ));
        }
        let n = vectors[0].len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty acquisition axis".into()));
        }
        for (index, z) in vectors.iter().enumerate() {
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
        Ok(Self { vectors, layout })
    }

    pub fn vectors(&self) -> &[CVec<T>] {
        &self.vectors
    }

    pub fn layout(&self) -> &WindowLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn ref_index(&self) -> usize {
        self.layout.ref_index
    }
}

/// Temporal autocorrelation magnitudes R_τ = |Σₙ z(n)·conj(z(n+τ))| of a
/// single pixel vector at the requested lags. The vector is normalized
/// internally, so the profile depends only on the direction and every
/// value lies in [0, 1] (R_0 = 1).
pub fn autocorr_profile<T: Real>(z: &CVec<T>, lags: &[usize]) -> Result<Vec<T>, Error<T>> {
    let n = z.len();
    let norm_sq: T = z.iter().map(|c| c.norm_sqr()).sum();
    if !(norm_sq > T::zero()) {
        return Err(Error::DegenerateSample { index: 0 });
    }
    let mut out = Vec::with_capacity(lags.len());
    for &lag in lags {
        if lag >= n {
            return Err(Error::InvalidArgument(format!(
                "lag {lag} out of range for {n} acquisitions"
            )));
        }
        let mut s: Complex<T> = Complex::new(T::zero(), T::zero());
        for k in 0..(n - lag) {
            s += z[k] * z[k + lag].conj();
        }
        out.push(s.norm() / norm_sq);
    }
    Ok(out)
}

/// Mean of [`autocorr_profile`] over the lag set.
pub fn mean_autocorr<T: Real>(z: &CVec<T>, lags: &[usize]) -> Result<T, Error<T>> {
    let profile = autocorr_profile(z, lags)?;
    if profile.is_empty() {
        return Err(Error::InvalidArgument("empty lag set".into()));
    }
    Ok(profile.iter().copied().sum::<T>() / T::of_usize(profile.len()))
}

/// Default lag set {1, …, min(10, N−1)}.
pub fn default_lags(n_acquisitions: usize, max_lag: usize) -> Vec<usize> {
    let hi = max_lag.min(n_acquisitions.saturating_sub(1));
    (1..=hi).collect()
}

#[derive(Debug, Clone)]
pub struct PhaseAlignment<T: Real> {
    /// Unit phasors exp(−j·∠v_max) the vectors were multiplied by.
    pub correction: CVec<T>,
    /// Shape estimate over the whole window the alignment came from.
    pub sigma: ShapeMatrix<T>,
    /// Set when the two largest eigenvalues coincide within 1e-12
    /// relative; the alignment is then one arbitrary-but-deterministic
    /// choice from the degenerate eigenspace.
    pub ambiguous: bool,
}

/// Removes the dominant common phase pattern of the window: Tyler over all
/// samples, then each vector is multiplied element-wise by exp(−j·∠v_max)
/// of the principal eigenvector. Norms are unchanged. A Tyler iteration
/// that runs out of iterations contributes its last iterate; alignment
/// only needs the dominant structure, not a tight fixed point.
pub fn phase_align<T: Real>(
    vectors: &[CVec<T>],
    tyler: &TylerConfig<T>,
) -> Result<(Vec<CVec<T>>, PhaseAlignment<T>), Error<T>> {
    let sigma = match tyler_estimate(vectors, tyler) {
        Ok(s) => s,
        Err(Error::NoConvergence { last, .. }) => ShapeMatrix::new(*last)?,
        Err(e) => return Err(e),
    };
    let (vals, vecs) = crate::linalg::eigh(sigma.matrix())?;
    let n = sigma.dim();
    let ambiguous = n >= 2 && {
        let top = vals[n - 1];
        let gap = top - vals[n - 2];
        gap <= T::of(1e-12) * top.abs().max(T::one())
    };
    let mut correction = CVec::<T>::zeros(n);
    for k in 0..n {
        let v = vecs[(k, n - 1)];
        let mag = v.norm();
        correction[k] = if mag > T::zero() {
            (v / mag).conj()
        } else {
            Complex::new(T::one(), T::zero())
        };
    }
    let aligned = vectors
        .iter()
        .map(|z| {
            let mut out = z.clone();
            for k in 0..n {
                out[k] *= correction[k];
            }
            out
        })
        .collect();
    Ok((
        aligned,
        PhaseAlignment {
            correction,
            sigma,
            ambiguous,
        },
    ))
}

/// Whiteness statistic t = z̃†Σ_ref⁻¹z̃ for a unit-norm test vector.
pub fn t_statistic<T: Real>(z_tilde: &CVec<T>, sigma_ref: &ShapeMatrix<T>) -> Result<T, Error<T>> {
    if z_tilde.len() != sigma_ref.dim() {
        return Err(Error::DimensionMismatch {
            index: 0,
            got: z_tilde.len(),
            expected: sigma_ref.dim(),
        });
    }
    let lc = loaded_cholesky(sigma_ref.matrix())?;
    Ok(chol_quad_inv(&lc.l, z_tilde))
}

/// Empirical test thresholds; `lower` is populated for two-sided tests.
#[derive(Debug, Clone, Copy)]
pub struct TestThresholds<T: Real> {
    pub lower: Option<T>,
    pub upper: T,
}

impl<T: Real> TestThresholds<T> {
    #[inline]
    pub fn accepts(&self, t: T) -> bool {
        t <= self.upper && self.lower.map_or(true, |lo| t >= lo)
    }
}

/// Nearest-rank empirical quantile (rank ⌈p·n⌉, clamped) of an ascending
/// slice.
fn nearest_rank<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    let rank = (p * T::of_usize(n)).ceil().as_f64() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn thresholds_from_sorted<T: Real>(sorted: &[T], alpha: T, sided: Sided) -> TestThresholds<T> {
    match sided {
        Sided::Right => TestThresholds {
            lower: None,
            upper: nearest_rank(sorted, T::one() - alpha),
        },
        Sided::Two => {
            let half = alpha * T::of(0.5);
            TestThresholds {
                lower: Some(nearest_rank(sorted, half)),
                upper: nearest_rank(sorted, T::one() - half),
            }
        }
    }
}

/// Null t-values for a set of sphere draws under `sigma`.
///
/// For z̃ = A·u/‖A·u‖ with A = Σ^{1/2}, the statistic collapses
/// algebraically: t = z̃†Σ⁻¹z̃ = u†AΣ⁻¹Au / u†AAu = 1/(u†Σu), so no root
/// or factorization is needed. (The equivalence with the explicit
/// construction is pinned by tests.)
fn null_t_values<T: Real>(sigma: &ShapeMatrix<T>, draws: &[CVec<T>]) -> Vec<T> {
    draws
        .iter()
        .map(|u| T::one() / quad_form(sigma.matrix(), u))
        .collect()
}

/// Parametric bootstrap of the test thresholds under Σ_ref: draws
/// z̃ = Σ_ref^{1/2}u/‖·‖, evaluates t against the same Σ_ref, and takes
/// nearest-rank quantiles at the requested level.
pub fn bootstrap_thresholds<T: Real, R: Rng + ?Sized>(
    sigma_ref: &ShapeMatrix<T>,
    alpha: T,
    sided: Sided,
    n_draws: usize,
    rng: &mut R,
) -> Result<TestThresholds<T>, Error<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
    }
    if n_draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let n = sigma_ref.dim();
    let draws: Vec<CVec<T>> = (0..n_draws)
        .map(|_| crate::ces::sample_uniform_sphere(n, rng))
        .collect();
    let mut ts = null_t_values(sigma_ref, &draws);
    ts.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite test statistics"));
    Ok(thresholds_from_sorted(&ts, alpha, sided))
}

/// Set-refinement parameters; see [`refine_sshp`].
#[derive(Debug, Clone, Copy)]
pub struct RefineParams<T: Real> {
    pub alpha: T,
    pub n_draws: usize,
    /// Relative Frobenius change of Σ̂ below which the set has converged.
    pub epsilon: T,
    pub tyler: TylerConfig<T>,
}

#[derive(Debug)]
pub enum RefineOutcome<T: Real> {
    Refined {
        /// Ascending indices of the retained pixels.
        set: Vec<usize>,
        /// Tyler estimate over that set.
        sigma: ShapeMatrix<T>,
        iterations: usize,
        delta: T,
        converged: bool,
    },
    /// The surviving set fell below N+1; callers fall back.
    SmallSet { survivors: usize, iterations: usize },
}

/// Iterative re-testing of the whole window against the evolving shape
/// estimate.
///
/// Each iteration bootstraps thresholds under the current Σ̂ (one sphere
/// draw set, generated up front, is reused across iterations so the
/// thresholds move only through Σ̂), recomputes t for every pixel, retains
/// the pixels that pass and still have a nonzero autocorrelation mean, and
/// re-estimates Σ̂ by Tyler over the retained set. Stops when Σ̂ moves by
/// less than `epsilon` or after `k_max` iterations.
///
/// `vectors` must be unit-norm (aligned) pixel vectors; `rbar` the
/// per-pixel autocorrelation means, where zero marks pixels banned from
/// retention.
pub fn refine_sshp<T: Real, R: Rng + ?Sized>(
    vectors: &[CVec<T>],
    init_set: &[usize],
    sigma0: ShapeMatrix<T>,
    sided: Sided,
    k_max: usize,
    rbar: &[T],
    params: &RefineParams<T>,
    rng: &mut R,
) -> Result<RefineOutcome<T>, Error<T>> {
    if init_set.is_empty() {
        return Err(Error::InvalidArgument("empty initial set".into()));
    }
    let l = vectors.len();
    let n = sigma0.dim();
    if rbar.len() != l {
        return Err(Error::InvalidArgument(
            "autocorrelation means do not match the window".into(),
        ));
    }
    if k_max == 0 {
        return Ok(RefineOutcome::Refined {
            set: init_set.to_vec(),
            sigma: sigma0,
            iterations: 0,
            delta: T::infinity(),
            converged: false,
        });
    }
    let draws: Vec<CVec<T>> = (0..params.n_draws)
        .map(|_| crate::ces::sample_uniform_sphere(n, rng))
        .collect();

    let mut sigma = sigma0;
    let mut set = init_set.to_vec();
    let mut delta = T::infinity();
    let mut converged = false;
    let mut iterations = 0usize;
    for k in 1..=k_max {
        iterations = k;
        let mut ts = null_t_values(&sigma, &draws);
        ts.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite test statistics"));
        let thr = thresholds_from_sorted(&ts, params.alpha, sided);

        let lc = loaded_cholesky(sigma.matrix())?;
        let mut new_set = Vec::with_capacity(l);
        for (i, z) in vectors.iter().enumerate() {
            if rbar[i] > T::zero() && thr.accepts(chol_quad_inv(&lc.l, z)) {
                new_set.push(i);
            }
        }
        if new_set.len() < n + 1 {
            return Ok(RefineOutcome::SmallSet {
                survivors: new_set.len(),
                iterations,
            });
        }
        let subset: Vec<CVec<T>> = new_set.iter().map(|&i| vectors[i].clone()).collect();
        let next = match tyler_estimate(&subset, &params.tyler) {
            Ok(s) => s,
            Err(Error::NoConvergence { last, .. }) => ShapeMatrix::new(*last)?,
            Err(e) => return Err(e),
        };
        delta = crate::linalg::rel_frob_diff(next.matrix(), sigma.matrix());
        sigma = next;
        set = new_set;
        if delta < params.epsilon {
            converged = true;
            break;
        }
    }
    Ok(RefineOutcome::Refined {
        set,
        sigma,
        iterations,
        delta,
        converged,
    })
}

/// Acceptance condition for a converged mask around the reference pixel:
/// with m the selection indicator and the sums over the 3×3 neighborhood
/// of the reference pixel (center included),
///
///   ( [ref selected ∧ Σm ≥ 3]  ∨  [Σm ≥ 5] )  ∧  ( n₄/Σm > 0.2 )
///
/// where n₄ counts selected 4-neighbors of the reference pixel. Returns
/// true when the reference pixel counts as integrated into the mask;
/// false triggers mask reversal upstream. The ratio is evaluated in exact
/// integer arithmetic.
pub fn mask_reversal_check(selected: &[bool], layout: &WindowLayout) -> bool {
    let (rr, rc) = layout.local(layout.ref_index);
    let mut neighborhood = 0usize;
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let r = rr as i64 + dr;
            let c = rc as i64 + dc;
            if r < 0 || c < 0 || r >= layout.rows as i64 || c >= layout.cols as i64 {
                continue;
            }
            if selected[layout.index(r as usize, c as usize)] {
                neighborhood += 1;
            }
        }
    }
    if neighborhood == 0 {
        return false;
    }
    let mut n4 = 0usize;
    for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
        let r = rr as i64 + dr;
        let c = rc as i64 + dc;
        if r < 0 || c < 0 || r >= layout.rows as i64 || c >= layout.cols as i64 {
            continue;
        }
        if selected[layout.index(r as usize, c as usize)] {
            n4 += 1;
        }
    }
    let ref_ok = selected[layout.ref_index] && neighborhood >= 3;
    let bulk_ok = neighborhood >= 5;
    (ref_ok || bulk_ok) && 5 * n4 > neighborhood
}

/// 4-connected component of the mask containing `seed`; all-false when the
/// seed itself is not selected.
pub fn connected_component(selected: &[bool], layout: &WindowLayout, seed: usize) -> Vec<bool> {
    let mut comp = vec![false; selected.len()];
    if seed >= selected.len() || !selected[seed] {
        return comp;
    }
    let mut queue = std::collections::VecDeque::new();
    comp[seed] = true;
    queue.push_back(seed);
    while let Some(i) = queue.pop_front() {
        let (r, c) = layout.local(i);
        let mut push = |rr: i64, cc: i64| {
            if rr < 0 || cc < 0 || rr >= layout.rows as i64 || cc >= layout.cols as i64 {
                return;
            }
            let j = layout.index(rr as usize, cc as usize);
            if selected[j] && !comp[j] {
                comp[j] = true;
                queue.push_back(j);
            }
        };
        push(r as i64 - 1, c as i64);
        push(r as i64 + 1, c as i64);
        push(r as i64, c as i64 - 1);
        push(r as i64, c as i64 + 1);
    }
    comp
}

/// Final mask and bookkeeping of one window selection.
#[derive(Debug, Clone)]
pub struct SshpMask {
    pub selected: Vec<bool>,
    pub iterations_used: usize,
    pub reversals: usize,
    pub fallback_triggered: bool,
    pub final_size: usize,
}

#[derive(Debug)]
pub struct SshpSelection<T: Real> {
    pub mask: SshpMask,
    /// Tyler estimate over the final mask; absent on fallback paths with
    /// too little support.
    pub sigma: Option<ShapeMatrix<T>>,
    /// Mean upper-triangle coherence magnitude of `sigma`.
    pub mean_coherence: Option<T>,
    /// Per-pixel autocorrelation means, before any reversal zeroing.
    pub rbar: Vec<T>,
    pub align_ambiguous: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectConfig<T: Real> {
    pub alpha: T,
    pub n_draws: usize,
    /// Lags 1..=min(max_lag, N−1) feed the autocorrelation ranking.
    pub max_lag: usize,
    /// Iteration cap of the one-sided growth phase.
    pub k_max: usize,
    pub refine_epsilon: T,
    /// Mean-coherence floor under which the window falls back to
    /// selecting every remaining candidate.
    pub coherence_floor: T,
    /// Side length of the auxiliary window merged in when the reference
    /// component is too small (clipped to the window).
    pub aux_side: usize,
    pub tyler: TylerConfig<T>,
}

impl<T: Real> Default for SelectConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::of(0.05),
            n_draws: 2000,
            max_lag: 10,
            k_max: 10,
            refine_epsilon: T::of(1e-4),
            coherence_floor: T::of(0.15),
            aux_side: 5,
            tyler: TylerConfig::default(),
        }
    }
}

fn coherence_of<T: Real>(sigma: &ShapeMatrix<T>) -> Result<CoherenceMatrix<T>, Error<T>> {
    normalize_to_coherence(sigma.matrix())
}

/// Pixels of the auxiliary square around the reference pixel, clipped.
fn aux_window(layout: &WindowLayout, side: usize) -> Vec<usize> {
    let side = side.min(layout.rows.min(layout.cols)).max(1);
    let h = side / 2;
    let (rr, rc) = layout.local(layout.ref_index);
    let r0 = rr.saturating_sub(h);
    let r1 = (rr + h + 1).min(layout.rows);
    let c0 = rc.saturating_sub(h);
    let c1 = (rc + h + 1).min(layout.cols);
    let mut out = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            out.push(layout.index(r, c));
        }
    }
    out
}

/// Full SSHP selection for one window. See the module docs for the stages;
/// degraded inputs (too few candidates, mean coherence under the floor, or
/// a refinement collapse) fall back to selecting every remaining candidate
/// so downstream estimation always has a mask to work with. The final mask
/// always contains the reference pixel.
pub fn select_sshp<T: Real, R: Rng + ?Sized>(
    window: &WindowSamples<T>,
    cfg: &SelectConfig<T>,
    rng: &mut R,
) -> Result<SshpSelection<T>, Error<T>> {
    let l = window.len();
    let n = window.dim();
    let layout = window.layout().clone();
    let ref_index = layout.ref_index;

    let finish = |set: Vec<usize>,
                  iterations: usize,
                  reversals: usize,
                  fallback: bool,
                  sigma: Option<ShapeMatrix<T>>,
                  rbar: Vec<T>,
                  ambiguous: bool| {
        let mut selected = vec![false; l];
        for &i in &set {
            selected[i] = true;
        }
        selected[ref_index] = true;
        let final_size = selected.iter().filter(|&&b| b).count();
        let mean_coherence = sigma
            .as_ref()
            .and_then(|s| coherence_of(s).ok())
            .map(|g| g.mean_upper_magnitude());
        Ok(SshpSelection {
            mask: SshpMask {
                selected,
                iterations_used: iterations,
                reversals,
                fallback_triggered: fallback,
                final_size,
            },
            sigma,
            mean_coherence,
            rbar,
            align_ambiguous: ambiguous,
        })
    };

    // Windows at or below the seed size carry no room for testing.
    if l <= n + 1 {
        return finish(
            (0..l).collect(),
            0,
            0,
            true,
            None,
            vec![T::one(); l],
            false,
        );
    }

    // Stage 1: normalize, align, rank.
    let unit: Vec<CVec<T>> = window
        .vectors()
        .iter()
        .map(|z| {
            let norm = z.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
            z.mapv(|c| c / norm)
        })
        .collect();
    let (aligned, align) = phase_align(&unit, &cfg.tyler)?;
    let lags = default_lags(n, cfg.max_lag);
    let mut rbar = Vec::with_capacity(l);
    for z in &aligned {
        rbar.push(mean_autocorr(z, &lags)?);
    }
    let rbar_original = rbar.clone();

    let params = RefineParams {
        alpha: cfg.alpha,
        n_draws: cfg.n_draws,
        epsilon: cfg.refine_epsilon,
        tyler: cfg.tyler,
    };

    let mut reversals = 0usize;
    let mut iterations = 0usize;
    let tyler_or_last = |set: &[usize]| -> Result<ShapeMatrix<T>, Error<T>> {
        let subset: Vec<CVec<T>> = set.iter().map(|&i| aligned[i].clone()).collect();
        match tyler_estimate(&subset, &cfg.tyler) {
            Ok(s) => Ok(s),
            Err(Error::NoConvergence { last, .. }) => ShapeMatrix::new(*last),
            Err(e) => Err(e),
        }
    };

    // Stage 2-4: seed, grow one-sided, check the reversal condition;
    // rejected masks are banned (autocorrelation zeroed) and the hunt
    // restarts from the next-best seed.
    let (accepted_set, accepted_sigma) = loop {
        let candidates: Vec<usize> = (0..l).filter(|&i| rbar[i] > T::zero()).collect();
        if candidates.len() <= n + 1 {
            return finish(
                candidates,
                iterations,
                reversals,
                true,
                None,
                rbar_original,
                align.ambiguous,
            );
        }
        let mut order = candidates.clone();
        order.sort_by(|&a, &b| {
            rbar[b]
                .partial_cmp(&rbar[a])
                .expect("finite autocorrelation means")
                .then(a.cmp(&b))
        });
        let seed: Vec<usize> = {
            let mut s: Vec<usize> = order[..=n].to_vec();
            s.sort_unstable();
            s
        };
        let sigma0 = tyler_or_last(&seed)?;
        let mean_coh = coherence_of(&sigma0)?.mean_upper_magnitude();
        if mean_coh < cfg.coherence_floor {
            return finish(
                candidates,
                iterations,
                reversals,
                true,
                Some(sigma0),
                rbar_original,
                align.ambiguous,
            );
        }
        match refine_sshp(
            &aligned,
            &seed,
            sigma0,
            Sided::Right,
            cfg.k_max,
            &rbar,
            &params,
            rng,
        )? {
            RefineOutcome::SmallSet { iterations: it, .. } => {
                iterations += it;
                return finish(
                    candidates,
                    iterations,
                    reversals,
                    true,
                    None,
                    rbar_original,
                    align.ambiguous,
                );
            }
            RefineOutcome::Refined {
                set,
                sigma,
                iterations: it,
                ..
            } => {
                iterations += it;
                let mut selected = vec![false; l];
                for &i in &set {
                    selected[i] = true;
                }
                if mask_reversal_check(&selected, &layout) {
                    break (set, sigma);
                }
                reversals += 1;
                for &i in &set {
                    rbar[i] = T::zero();
                }
            }
        }
    };

    let mut final_set: Vec<usize> = accepted_set.clone();
    if !final_set.contains(&ref_index) {
        final_set.push(ref_index);
        final_set.sort_unstable();
    }
    let mut final_sigma = accepted_sigma;

    // Stage 5: only a clean first pass gets the connectivity restriction
    // and the double-sided prune.
    if reversals == 0 {
        let mut selected = vec![false; l];
        for &i in &final_set {
            selected[i] = true;
        }
        let comp = connected_component(&selected, &layout, ref_index);
        let mut merged: Vec<usize> = (0..l).filter(|&i| comp[i]).collect();
        if merged.len() < n + 1 {
            let mut in_merged = comp;
            for i in aux_window(&layout, cfg.aux_side) {
                if !in_merged[i] {
                    in_merged[i] = true;
                    merged.push(i);
                }
            }
            merged.sort_unstable();
        }
        // Too little support (tight windows with many acquisitions): keep
        // the accepted mask rather than re-estimate from a deficient set.
        if merged.len() > n {
            let sigma_m = tyler_or_last(&merged)?;
            match refine_sshp(
                &aligned,
                &merged,
                sigma_m,
                Sided::Two,
                1,
                &rbar,
                &params,
                rng,
            )? {
                RefineOutcome::Refined {
                    set,
                    sigma,
                    iterations: it,
                    ..
                } => {
                    iterations += it;
                    final_set = set;
                    if !final_set.contains(&ref_index) {
                        final_set.push(ref_index);
                        final_set.sort_unstable();
                    }
                    final_sigma = sigma;
                }
                RefineOutcome::SmallSet { iterations: it, .. } => {
                    iterations += it;
                }
            }
        }
    }

    finish(
        final_set,
        iterations,
        reversals,
        false,
        Some(final_sigma),
        rbar_original,
        align.ambiguous,
    )
}

/// Bootstrap draws built the explicit way (matrix root, normalize,
/// whiten), for pinning the algebraic shortcut in [`bootstrap_thresholds`]
/// against an independent route. Test support.
pub fn explicit_null_t<T: Real, R: Rng + ?Sized>(
    sigma_ref: &ShapeMatrix<T>,
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<T>, Error<T>> {
    let a = psd_sqrt(sigma_ref.matrix())?;
    let lc = loaded_cholesky(sigma_ref.matrix())?;
    let n = sigma_ref.dim();
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let u = crate::ces::sample_uniform_sphere::<T, _>(n, rng);
        let mut z = CVec::<T>::zeros(n);
        let mut norm_sq = T::zero();
        for i in 0..n {
            let mut s: Complex<T> = Complex::new(T::zero(), T::zero());
            for j in 0..n {
                s += a[(i, j)] * u[j];
            }
            norm_sq += s.norm_sqr();
            z[i] = s;
        }
        let inv = T::one() / norm_sq.sqrt();
        let z = z.mapv(|c| c * inv);
        out.push(chol_quad_inv(&lc.l, &z));
    }
    Ok(out)
}

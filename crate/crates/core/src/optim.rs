//! Memory-limited BFGS with a strong Wolfe line search, for the smooth
//! low-dimensional minimizations in phase linking.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig<T: Real> {
    pub memory: usize,
    /// Infinity-norm gradient tolerance.
    pub gtol: T,
    pub max_iters: usize,
    /// Armijo constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
}

impl<T: Real> Default for LbfgsConfig<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            gtol: T::of(1e-6),
            max_iters: 500,
            c1: T::of(1e-4),
            c2: T::of(0.9),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult<T: Real> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

// Steepest-descent directions carry the raw gradient scale, which for
// badly scaled objectives can exceed what the line search can bracket;
// cap the first trial point at unit distance.
fn cap_to_unit<T: Real>(d: &mut [T]) {
    let norm = dot(d, d).sqrt();
    if norm > T::one() {
        let inv = T::one() / norm;
        for dj in d.iter_mut() {
            *dj *= inv;
        }
    }
}

/// Minimizes `f`, which must write the gradient into its second argument
/// and return the value. Stops at the gradient tolerance or after
/// `max_iters` iterations; a failed line search also stops the run (the
/// result then carries the best iterate with `converged` reporting only
/// the gradient test).
pub fn lbfgs<T: Real, F>(x0: &[T], mut f: F, cfg: &LbfgsConfig<T>) -> LbfgsResult<T>
where
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![T::zero(); n];
    let mut value = f(&x, &mut grad);
    if n == 0 {
        return LbfgsResult {
            x,
            value,
            grad_norm: T::zero(),
            iterations: 0,
            converged: true,
        };
    }

    let mut s_hist: Vec<Vec<T>> = Vec::new();
    let mut y_hist: Vec<Vec<T>> = Vec::new();
    let mut rho_hist: Vec<T> = Vec::new();
    let mut iterations = 0usize;

    for iter in 0..cfg.max_iters {
        iterations = iter;
        if inf_norm(&grad) < cfg.gtol {
            break;
        }

        // two-loop recursion
        let mut d: Vec<T> = grad.iter().map(|&g| -g).collect();
        let k = s_hist.len();
        let mut alpha = vec![T::zero(); k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * *yj;
            }
        }
        if k > 0 {
            let last = k - 1;
            let scale = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            for dj in d.iter_mut() {
                *dj *= scale;
            }
        } else {
            cap_to_unit(&mut d);
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * *sj;
            }
        }

        let mut slope = dot(&grad, &d);
        if slope >= T::zero() {
            // curvature information went stale; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = grad.iter().map(|&g| -g).collect();
            cap_to_unit(&mut d);
            slope = dot(&grad, &d);
            if slope >= T::zero() {
                break; // zero gradient in every direction
            }
        }

        let ls = wolfe_search(&mut f, &x, value, &d, slope, cfg);
        let (step, new_value, new_grad) = match ls {
            Some(t) => t,
            None => break, // flat to line-search precision; keep the iterate
        };
        let mut s_vec = vec![T::zero(); n];
        let mut y_vec = vec![T::zero(); n];
        for i in 0..n {
            s_vec[i] = step * d[i];
            x[i] += s_vec[i];
            y_vec[i] = new_grad[i] - grad[i];
        }
        value = new_value;
        grad = new_grad;
        let sy = dot(&s_vec, &y_vec);
        if sy > T::of(1e-30) {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(T::one() / sy);
            s_hist.push(s_vec);
            y_hist.push(y_vec);
        }
        iterations = iter + 1;
    }

    let grad_norm = inf_norm(&grad);
    LbfgsResult {
        x,
        value,
        grad_norm,
        converged: grad_norm < cfg.gtol,
        iterations,
    }
}

/// Strong Wolfe line search (bracket then zoom). Returns the accepted
/// step with its value and gradient, or None when no acceptable step
/// exists within the evaluation budget.
fn wolfe_search<T: Real, F>(
    f: &mut F,
    x: &[T],
    value0: T,
    d: &[T],
    slope0: T,
    cfg: &LbfgsConfig<T>,
) -> Option<(T, T, Vec<T>)>
where
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x.len();
    let mut probe = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut eval = |a: T, grad: &mut Vec<T>, probe: &mut Vec<T>| -> (T, T) {
        for i in 0..n {
            probe[i] = x[i] + a * d[i];
        }
        let v = f(probe, grad);
        (v, dot(grad, d))
    };

    let c1 = cfg.c1;
    let c2 = cfg.c2;
    let mut a_prev = T::zero();
    let mut v_prev = value0;
    let mut slope_prev = slope0;
    let mut a = T::one();
    let a_max = T::of(1e3);

    let mut bracket: Option<(T, T, T, T, T)> = None; // lo, v_lo, slope_lo, hi, v_hi
    for i in 0..20 {
        let (v, slope) = eval(a, &mut grad, &mut probe);
        if !v.is_finite() || v > value0 + c1 * a * slope0 || (i > 0 && v >= v_prev) {
            bracket = Some((a_prev, v_prev, slope_prev, a, v));
            break;
        }
        if slope.abs() <= -c2 * slope0 {
            return Some((a, v, grad));
        }
        if slope >= T::zero() {
            bracket = Some((a, v, slope, a_prev, v_prev));
            break;
        }
        a_prev = a;
        v_prev = v;
        slope_prev = slope;
        a = (a * T::of(2.0)).min(a_max);
        if a >= a_max {
            return Some((a_max, v, grad));
        }
    }
    let (mut lo, mut v_lo, mut slope_lo, mut hi, mut _v_hi) = bracket?;

    for _ in 0..40 {
        let a_mid = (lo + hi) * T::of(0.5);
        if (hi - lo).abs() < T::of(1e-16) * (T::one() + lo.abs()) {
            break;
        }
        let (v, slope) = eval(a_mid, &mut grad, &mut probe);
        if !v.is_finite() || v > value0 + c1 * a_mid * slope0 || v >= v_lo {
            hi = a_mid;
            _v_hi = v;
        } else {
            if slope.abs() <= -c2 * slope0 {
                return Some((a_mid, v, grad));
            }
            if slope * (hi - lo) >= T::zero() {
                hi = lo;
                _v_hi = v_lo;
            }
            lo = a_mid;
            v_lo = v;
            slope_lo = slope;
        }
    }
    // fall back to the best sufficient-decrease point found, if any
    if lo > T::zero() && v_lo <= value0 + c1 * lo * slope0 {
        let (v, _slope) = eval(lo, &mut grad, &mut probe);
        let _ = slope_lo;
        return Some((lo, v, grad));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges_in_few_steps() {
        // f(x) = Σ i·x_i², minimum at 0
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (i, (&xi, gi)) in x.iter().zip(g.iter_mut()).enumerate() {
                let w = (i + 1) as f64;
                v += w * xi * xi;
                *gi = 2.0 * w * xi;
            }
            v
        };
        let res = lbfgs(&[3.0, -2.0, 7.0, 0.5], f, &LbfgsConfig::default());
        assert!(res.converged);
        assert!(res.value < 1e-10);
        assert!(res.x.iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn rosenbrock_reaches_the_valley_floor() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let res = lbfgs(&[-1.2, 1.0], f, &LbfgsConfig::default());
        assert!(res.converged, "grad norm {}", res.grad_norm);
        assert!((res.x[0] - 1.0).abs() < 1e-4 && (res.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn trigonometric_objective_with_many_variables() {
        // nonconvex but smooth: Σ (1 − cos(x_i − c_i)); minimum value 0
        let target: Vec<f64> = (0..12).map(|i| 0.3 * i as f64 - 1.7).collect();
        let t2 = target.clone();
        let f = move |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..x.len() {
                v += 1.0 - (x[i] - t2[i]).cos();
                g[i] = (x[i] - t2[i]).sin();
            }
            v
        };
        let x0 = vec![0.0; 12];
        let res = lbfgs(&x0, f, &LbfgsConfig::default());
        assert!(res.converged);
        assert!(res.value < 1e-10);
        // each coordinate lands on the target modulo 2π
        for (xi, ti) in res.x.iter().zip(&target) {
            let d = (xi - ti).rem_euclid(2.0 * std::f64::consts::PI);
            assert!(d < 1e-4 || (2.0 * std::f64::consts::PI - d) < 1e-4);
        }
    }

    #[test]
    fn zero_gradient_start_returns_immediately() {
        let f = |x: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            x.iter().map(|_| 1.0).sum::<f64>()
        };
        let res = lbfgs(&[1.0, 2.0], f, &LbfgsConfig::default());
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
    }
}

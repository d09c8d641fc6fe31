//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Deterministic, allocation-light implementation of the two-loop recursion
//! (history ring buffer) used for both autoencoder layer training and the
//! class-weighted logistic regression. The objective callback returns cost
//! and gradient together since both trainers share most of that work.

use ndarray::Array1;

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub history: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease (Armijo) constant.
    pub c1: f64,
    /// Curvature constant for the strong Wolfe condition.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iter: 200,
            history: 10,
            grad_tol: 1e-7,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// The line search could not produce an acceptable step; the best
    /// iterate seen so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Array1<f64>,
    pub fx: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

struct Pair {
    s: Array1<f64>,
    y: Array1<f64>,
    rho: f64,
}

/// Minimize `f` starting at `x0`. `f` must return `(cost, gradient)`.
pub fn minimize<F>(mut f: F, x0: Array1<f64>, cfg: &OptimizerConfig) -> MinimizeResult
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    let mut x = x0;
    let (mut fx, mut gx) = f(&x);
    let mut grad_norm = norm(&gx);

    let mut best_x = x.clone();
    let mut best_fx = fx;

    if cfg.max_iter == 0 {
        return MinimizeResult {
            x,
            fx,
            grad_norm,
            iterations: 0,
            reason: StopReason::MaxIterations,
        };
    }

    let mut pairs: Vec<Pair> = Vec::with_capacity(cfg.history);
    let mut iterations = 0;
    let mut reason = StopReason::MaxIterations;

    while iterations < cfg.max_iter {
        if grad_norm <= cfg.grad_tol {
            reason = StopReason::GradientTolerance;
            break;
        }

        let dir = search_direction(&gx, &pairs);
        let mut dphi0: f64 = dir.dot(&gx);
        let dir = if dphi0 >= 0.0 {
            // Curvature history went stale; fall back to steepest descent.
            dphi0 = -gx.dot(&gx);
            -gx.clone()
        } else {
            dir
        };

        // Unit first step once curvature information exists; a conservative
        // gradient-scaled guess before that.
        let alpha0 = if pairs.is_empty() {
            (1.0 / grad_norm).min(1.0)
        } else {
            1.0
        };

        let ls = line_search(&mut f, &x, fx, &gx, &dir, dphi0, alpha0, cfg);
        let (alpha, fx_new, gx_new) = match ls {
            Some(t) => t,
            None => {
                reason = StopReason::LineSearchFailed;
                break;
            }
        };

        let step = dir.mapv(|d| d * alpha);
        let x_new = &x + &step;
        let y = &gx_new - &gx;
        let sy = step.dot(&y);
        if sy > 1e-12 * norm(&step) * norm(&y) {
            if pairs.len() == cfg.history {
                pairs.remove(0);
            }
            pairs.push(Pair {
                s: step,
                y,
                rho: 1.0 / sy,
            });
        }

        x = x_new;
        fx = fx_new;
        gx = gx_new;
        grad_norm = norm(&gx);
        iterations += 1;

        if fx < best_fx {
            best_fx = fx;
            best_x = x.clone();
        }
    }

    if reason == StopReason::LineSearchFailed || fx > best_fx {
        x = best_x;
        fx = best_fx;
    }
    if reason != StopReason::LineSearchFailed && grad_norm <= cfg.grad_tol {
        reason = StopReason::GradientTolerance;
    }

    MinimizeResult {
        x,
        fx,
        grad_norm,
        iterations,
        reason,
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Two-loop recursion: approximates -H·g from the stored (s, y) pairs.
fn search_direction(g: &Array1<f64>, pairs: &[Pair]) -> Array1<f64> {
    let mut q = -g.clone();
    if pairs.is_empty() {
        return q;
    }
    let mut alphas = vec![0.0; pairs.len()];
    for (i, p) in pairs.iter().enumerate().rev() {
        let a = p.rho * p.s.dot(&q);
        alphas[i] = a;
        q.scaled_add(-a, &p.y);
    }
    let last = pairs.last().unwrap();
    let gamma = last.s.dot(&last.y) / last.y.dot(&last.y);
    q.mapv_inplace(|v| v * gamma);
    for (i, p) in pairs.iter().enumerate() {
        let b = p.rho * p.y.dot(&q);
        q.scaled_add(alphas[i] - b, &p.s);
    }
    q
}

type LineSearchHit = (f64, f64, Array1<f64>);

/// Strong-Wolfe bracketing line search (Nocedal & Wright alg. 3.5/3.6 with
/// bisection zoom). Returns `(alpha, f(x+alpha d), grad(x+alpha d))`.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &Array1<f64>,
    phi0: f64,
    _g0: &Array1<f64>,
    dir: &Array1<f64>,
    dphi0: f64,
    alpha0: f64,
    cfg: &OptimizerConfig,
) -> Option<LineSearchHit>
where
    F: FnMut(&Array1<f64>) -> (f64, Array1<f64>),
{
    let mut eval = |alpha: f64| -> (f64, f64, Array1<f64>) {
        let xa = x + &dir.mapv(|d| d * alpha);
        let (fa, ga) = f(&xa);
        let da = ga.dot(dir);
        (fa, da, ga)
    };

    let mut alpha_prev = 0.0;
    let mut phi_prev = phi0;
    let mut alpha = alpha0;
    let mut lo: Option<(f64, f64)> = None; // (alpha, phi)
    let mut hi: Option<(f64, f64)> = None;
    let mut hit: Option<LineSearchHit> = None;

    for i in 0..cfg.max_line_search {
        let (phi_a, dphi_a, g_a) = eval(alpha);
        if !phi_a.is_finite() {
            // Step overshot into non-finite territory; shrink hard.
            alpha *= 0.1;
            if alpha < 1e-20 {
                return None;
            }
            continue;
        }
        if phi_a > phi0 + cfg.c1 * alpha * dphi0 || (i > 0 && phi_a >= phi_prev) {
            lo = Some((alpha_prev, phi_prev));
            hi = Some((alpha, phi_a));
            break;
        }
        if dphi_a.abs() <= -cfg.c2 * dphi0 {
            hit = Some((alpha, phi_a, g_a));
            break;
        }
        if dphi_a >= 0.0 {
            lo = Some((alpha, phi_a));
            hi = Some((alpha_prev, phi_prev));
            break;
        }
        alpha_prev = alpha;
        phi_prev = phi_a;
        alpha *= 2.0;
        if alpha > 1e10 {
            return None;
        }
    }

    if hit.is_some() {
        return hit;
    }
    let (mut alo, mut flo) = lo?;
    let (mut ahi, mut fhi) = hi?;

    for _ in 0..cfg.max_line_search {
        let am = 0.5 * (alo + ahi);
        if (ahi - alo).abs() < 1e-16 * (1.0 + alo.abs()) {
            break;
        }
        let (fm, dm, gm) = eval(am);
        if fm > phi0 + cfg.c1 * am * dphi0 || fm >= flo {
            ahi = am;
            fhi = fm;
        } else {
            if dm.abs() <= -cfg.c2 * dphi0 {
                return Some((am, fm, gm));
            }
            if dm * (ahi - alo) >= 0.0 {
                ahi = alo;
                fhi = flo;
            }
            alo = am;
            flo = fm;
        }
        let _ = fhi;
    }
    None
}

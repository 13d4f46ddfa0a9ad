//! Scalar root finding for strictly decreasing functions.
//!
//! Everything in this crate that needs a root (inverse rates, water levels,
//! utility targets) is a strictly monotone map, so a bracket plus bisection
//! always converges. Newton steps are taken whenever they stay inside the
//! current bracket.

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Root {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RootOptions {
    /// Stop when the bracket (or the last step) is narrower than `x_tol * (1 + |x|)`.
    pub x_tol: f64,
    /// Stop when `|f(x)| <= f_tol`.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-15,
            f_tol: 0.0,
            max_iter: 200,
        }
    }
}

/// Finds `x` in `[lo, hi]` with `f(x) = 0` for a strictly decreasing `f`.
///
/// `f` returns the value and, optionally, the derivative. The caller
/// guarantees `f(lo) >= 0 >= f(hi)`; the endpoints themselves are never
/// evaluated unless `start` equals one of them.
pub(crate) fn decreasing_root<F>(mut f: F, mut lo: f64, mut hi: f64, start: f64, opts: RootOptions) -> Root
where
    F: FnMut(f64) -> (f64, Option<f64>),
{
    debug_assert!(lo <= hi);
    let mut x = if start > lo && start < hi { start } else { lo + 0.5 * (hi - lo) };
    let mut best = Root {
        x,
        value: f64::INFINITY,
        iterations: 0,
    };
    for it in 1..=opts.max_iter {
        let (v, d) = f(x);
        if v.abs() <= best.value.abs() || !best.value.is_finite() {
            best = Root { x, value: v, iterations: it };
        }
        best.iterations = it;
        if v == 0.0 || v.abs() <= opts.f_tol {
            return Root { x, value: v, iterations: it };
        }
        if v > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let width_tol = opts.x_tol * (1.0 + x.abs());
        if hi - lo <= width_tol {
            return best;
        }
        let newton = match d {
            Some(d) if d < 0.0 && d.is_finite() => Some(x - v / d),
            _ => None,
        };
        let next = match newton {
            Some(n) if n > lo && n < hi => n,
            _ => lo + 0.5 * (hi - lo),
        };
        if (next - x).abs() <= width_tol {
            let (nv, _) = f(next);
            if nv.abs() <= best.value.abs() {
                best = Root { x: next, value: nv, iterations: it + 1 };
            }
            return best;
        }
        x = next;
    }
    best
}

/// Plain bisection for a strictly decreasing `f` on `[lo, hi]`, stopping at
/// bracket width `x_tol * (1 + |x|)` or `max_iter` halvings.
pub(crate) fn bisect_decreasing<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64, max_iter: usize) -> Root
where
    F: FnMut(f64) -> f64,
{
    let mut x = lo + 0.5 * (hi - lo);
    let mut value = f64::NAN;
    for it in 1..=max_iter {
        x = lo + 0.5 * (hi - lo);
        value = f(x);
        if value == 0.0 {
            return Root { x, value, iterations: it };
        }
        if value > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= x_tol * (1.0 + x.abs()) {
            return Root {
                x: lo + 0.5 * (hi - lo),
                value,
                iterations: it,
            };
        }
    }
    Root {
        x,
        value,
        iterations: max_iter,
    }
}

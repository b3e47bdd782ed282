//! Bracketed scalar root finders for strictly decreasing functions.
//!
//! Every solver in the crate inverts a monotone function: `f_φ'` when
//! recovering `g_φ`, and the normalization sum `h(μ)` when locating the
//! simplex multiplier. Both routines here keep a sign-changing bracket at all
//! times, so a step can never leave the interval the caller validated.

/// Pure bisection for a non-increasing `f` with `f(lo) >= target >= f(hi)`.
///
/// Stops once the bracket is narrower than `width`. Returns the midpoint of
/// the final bracket.
pub(crate) fn bisect_decreasing<F>(f: F, mut lo: f64, mut hi: f64, target: f64, width: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    // 2^-200 of any finite bracket is below every tolerance we use.
    for _ in 0..400 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Termination rule for [`newton_decreasing`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stop {
    /// Absolute bracket width (or Newton step) below which iteration stops.
    pub abs_width: f64,
    /// Relative bracket width (or Newton step), scaled by `|x|`, below which
    /// iteration stops.
    pub rel_width: f64,
    /// Residual `|f(x) - target|` below which iteration stops.
    pub residual: f64,
}

/// Newton iteration safeguarded by bisection, for a non-increasing `f`,
/// started from `x0` (the bracket midpoint if `x0` is not inside `(lo, hi)`).
///
/// `f` returns `(value, derivative)`. The bracket `[lo, hi]` must satisfy
/// `f(lo) >= target >= f(hi)`. A Newton step that leaves the bracket, or
/// fails to halve the residual, is replaced by a bisection step, and iteration also stops once a Newton step is negligible. When the
/// bracket spans several orders of magnitude on the positive axis the
/// bisection point is the geometric mean, which keeps tiny roots reachable.
pub(crate) fn newton_decreasing_from<F>(mut f: F, mut lo: f64, mut hi: f64, x0: f64, target: f64, stop: Stop) -> f64
where
    F: FnMut(f64) -> (f64, f64),
{
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let mut prev_residual = f64::INFINITY;
    for _ in 0..500 {
        let (fx, dfx) = f(x);
        let r = fx - target;
        if r.abs() <= stop.residual {
            return x;
        }
        if r > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= stop.abs_width.max(stop.rel_width * x.abs()) {
            break;
        }
        let newton = if dfx < 0.0 && dfx.is_finite() {
            x - r / dfx
        } else {
            f64::NAN
        };
        let fast_enough = r.abs() <= 0.5 * prev_residual;
        prev_residual = r.abs();
        let inside = newton > lo && newton < hi;
        // a converging Newton sequence may approach from one side only, so the
        // bracket need not shrink; stop on a negligible step instead (which
        // may round back onto x itself)
        if newton >= lo && newton <= hi && (newton - x).abs() <= stop.abs_width.max(stop.rel_width * x.abs()) {
            return newton;
        }
        let accepted = inside && fast_enough;
        x = if accepted {
            newton
        } else if lo > 0.0 && hi / lo > 16.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            x = 0.5 * (lo + hi);
            if x <= lo || x >= hi {
                break;
            }
        }
    }
    x
}

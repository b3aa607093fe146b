/// Bisection on an increasing function over `[lo, hi]`.
///
/// Assumes `f(lo) < 0 < f(hi)`. Stops once the bracket is narrower than
/// `width_tol` or `|f(mid)| < residual_tol`.
pub(crate) fn bisect_increasing<F>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    width_tol: f64,
    residual_tol: f64,
) -> f64
where
    F: Fn(f64) -> f64,
{
    while hi - lo >= width_tol {
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        if value.abs() < residual_tol {
            return mid;
        }
        if value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Index of the smallest value, first wins unless a later one is lower by more
/// than `tol`.
pub(crate) fn argmin_with_tol<I>(values: I, tol: f64) -> Option<(usize, f64)>
where
    I: IntoIterator<Item = f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v < b - tol) => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

//! Deterministic pairwise summation.
//!
//! All quadrature sums in the crate go through [`pairwise_sum`], so a value
//! does not depend on how the terms were produced (serial or parallel), only
//! on their order in the slice.

const BLOCK: usize = 8;

/// Tree-reduced sum of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..n` without materializing the terms.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: &F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= BLOCK {
            return (lo..hi).fold(0.0, |acc, i| acc + f(i));
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, f) + rec(mid, hi, f)
    }
    rec(0, n, f)
}

/// Deterministic maximum that propagates NaN as +inf (treated as divergence).
pub fn max_of<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(f64::NEG_INFINITY, |m, x| {
        if x.is_nan() {
            f64::INFINITY
        } else {
            m.max(x)
        }
    })
}

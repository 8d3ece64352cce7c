//! Max-shifted exponential sums.

/// `ln sum_i exp(x_i)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I>(terms: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = terms.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let shifted: f64 = iter.map(|x| (x - max).exp()).sum();
    max + shifted.ln()
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(w)` with `ln(0) = -inf`.
pub(crate) fn ln_or_neg_inf(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

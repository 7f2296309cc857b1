//! Two-sided Fisher exact test on 2×2 tables in exact integer arithmetic.
//!
//! Every table with the observed margins is weighted by
//! `C(r1, x) · C(r2, c1 - x)`; the p-value is the weight of all tables no
//! more probable than the observed one divided by `C(n, c1)`. Weights are
//! compared as integers, so ties are exact.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Rows are conditions; columns are fired / not fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable2x2 { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn swap_rows(&self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_columns(&self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub p_value: f64,
    /// A row or column total is zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `num / den` rounded to f64 with at least 64 significant quotient bits.
pub(crate) fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let shift = (64 + den.bits()).saturating_sub(num.bits());
    let q: BigUint = (num << shift) / den;
    let mut value = q.to_f64().unwrap_or(f64::INFINITY);
    let mut remaining = shift;
    while remaining > 0 {
        let step = remaining.min(1000);
        value *= 2f64.powi(-(step as i32));
        remaining -= step;
    }
    value
}

/// Exact p-value as a reduced-free fraction `(numerator, denominator)`.
pub fn fisher_exact_fraction(table: &ContingencyTable2x2) -> Option<(BigUint, BigUint)> {
    let ContingencyTable2x2 { a, b, c, d } = *table;
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return None;
    }
    let n = r1 + r2;
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);

    let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
    let mut w = binomial(r1, lo) * binomial(r2, c1 - lo);
    weights.push(w.clone());
    for x in lo..hi {
        // w(x+1) = w(x) · (r1-x)(c1-x) / ((x+1)(r2-c1+x+1)), exact.
        w = w * ((r1 - x) * (c1 - x)) / ((x + 1) * (r2 + x + 1 - c1));
        weights.push(w.clone());
    }
    let observed = &weights[(a - lo) as usize];
    let tail: BigUint = weights.iter().filter(|w| *w <= observed).sum();
    Some((tail, binomial(n, c1)))
}

pub fn fisher_exact(table: &ContingencyTable2x2) -> FisherResult {
    match fisher_exact_fraction(table) {
        None => FisherResult {
            p_value: 1.0,
            degenerate: true,
        },
        Some((num, den)) => FisherResult {
            p_value: ratio_to_f64(&num, &den).min(1.0),
            degenerate: false,
        },
    }
}

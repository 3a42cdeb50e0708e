//! Factorials and binomial coefficients.
//!
//! Values up to `n = 20` are exact integers; above that they are evaluated in
//! log space so larger truncations neither overflow nor lose the leading
//! digits.

const EXACT_LIMIT: u64 = 20;

fn exact_factorial(n: u64) -> u64 {
    (2..=n).product()
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    if n <= EXACT_LIMIT {
        return (exact_factorial(n) as f64).ln();
    }
    // Stirling series; the truncation error is below 1e-15 for n > 20.
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

pub fn factorial(n: u64) -> f64 {
    if n <= EXACT_LIMIT {
        exact_factorial(n) as f64
    } else {
        ln_factorial(n).exp()
    }
}

/// `C(n, k)`, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if n <= EXACT_LIMIT {
        let k = k.min(n - k);
        let mut acc: u64 = 1;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        return acc as f64;
    }
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k))
        .exp()
        .round_if_small()
}

/// `sqrt(a! b! / (c! d!))`, the normalisation ratio that shows up in every
/// two-mode Fock matrix element.
pub fn sqrt_factorial_ratio(num: [u64; 2], den: [u64; 2]) -> f64 {
    if num.iter().chain(den.iter()).all(|&n| n <= EXACT_LIMIT) {
        ((factorial(num[0]) / factorial(den[0])) * (factorial(num[1]) / factorial(den[1]))).sqrt()
    } else {
        (0.5 * (ln_factorial(num[0]) + ln_factorial(num[1])
            - ln_factorial(den[0])
            - ln_factorial(den[1])))
        .exp()
    }
}

trait RoundIfSmall {
    fn round_if_small(self) -> Self;
}

impl RoundIfSmall for f64 {
    // below 2^53 a binomial is an integer, so snap the log-space result
    fn round_if_small(self) -> Self {
        if self < 9.0e15 {
            self.round()
        } else {
            self
        }
    }
}

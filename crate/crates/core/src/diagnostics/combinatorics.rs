//! Exact identities and bounds used by the moment and averaging estimates.

use crate::error::{Error, Result};

const STABLE_SUM_MAX_N: usize = 1_000_000;

/// Closed-form bound C(n + (2α/(1−α))(n − (1−αⁿ)/(1−α))) on
/// Σ_{i,j=1}^{n} C·α^{|i−j|}.
pub fn geometric_sum_bound(c: f64, alpha: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg("alpha", "must lie in (0, 1)"));
    }
    if n == 0 {
        return Err(Error::arg("n", "must be at least 1"));
    }
    let nf = n as f64;
    let ln_a = alpha.ln();
    let one_minus = 1.0 - alpha;
    // n − (1−αⁿ)/(1−α) = Σ_{k<n} (1−αᵏ)/(1−α); the sum avoids cancellation
    // when n(1−α) is small.
    let excess = if nf * one_minus < 1.0 && n <= STABLE_SUM_MAX_N {
        (1..n).map(|k| -(k as f64 * ln_a).exp_m1()).sum::<f64>() / one_minus
    } else {
        (nf + (nf * ln_a).exp_m1() / one_minus) / one_minus
    };
    Ok(c * (nf + 2.0 * alpha * excess))
}

/// Σ_{i,j=1}^{n} C·α^{|i−j|} by direct summation.
pub fn geometric_sum_direct(c: f64, alpha: f64, n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += c * alpha.powi(i.abs_diff(j) as i32);
        }
    }
    total
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * u128::from(n - i) / u128::from(i + 1);
    }
    r
}

/// Largest p accepted by [`trinomial_identity`].
pub const TRINOMIAL_MAX_P: u64 = 20;

/// Both sides of Σ_k (p; k, k+p−l, l−2k)·2^{l−2k} = C(2p, l), where terms
/// with a negative index vanish.
pub fn trinomial_identity(p: u64, l: u64) -> Result<(u128, u128)> {
    if p > TRINOMIAL_MAX_P {
        return Err(Error::arg("p", format!("must be at most {TRINOMIAL_MAX_P}")));
    }
    if l < 2 || l > 2 * p {
        return Err(Error::arg("l", "must satisfy 2 <= l <= 2p"));
    }
    let mut lhs: u128 = 0;
    for k in 0..=l / 2 {
        if k + p < l {
            continue;
        }
        let c = l - 2 * k;
        if k + c > p {
            continue;
        }
        // (p; k, b, c) = C(p, k)·C(p − k, c).
        lhs += (binomial(p, k) * binomial(p - k, c)) << c;
    }
    Ok((lhs, binomial(2 * p, l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(trinomial_identity(2, 2).unwrap(), (6, 6));
        assert_eq!(trinomial_identity(1, 2).unwrap(), (1, 1));
        assert_eq!(geometric_sum_bound(1.0, 0.5, 2).unwrap(), 3.0);
        assert_eq!(geometric_sum_direct(1.0, 0.5, 2), 3.0);
        assert_eq!(geometric_sum_bound(2.0, 0.3, 1).unwrap(), 2.0);
    }

    #[test]
    fn range_errors() {
        assert!(trinomial_identity(21, 2).is_err());
        assert!(trinomial_identity(3, 1).is_err());
        assert!(trinomial_identity(3, 7).is_err());
        assert!(geometric_sum_bound(1.0, 1.0, 3).is_err());
    }
}

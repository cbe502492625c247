//! Small sample-statistics helpers shared by the estimators and checks.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard deviation of a Bernoulli(p) frequency over n trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Standard error of mean(ys)/mean(xs) for paired samples (delta method).
pub fn ratio_std_error(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mx = mean(xs);
    if n < 2 || mx == 0.0 {
        return 0.0;
    }
    let r = mean(ys) / mx;
    let resid: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - r * x).collect();
    (variance(&resid) / n as f64).sqrt() / mx.abs()
}

/// log(mean(exp(ys))) computed without overflow.
pub fn log_mean_exp(ys: &[f64]) -> f64 {
    let m = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = ys.iter().map(|y| (y - m).exp()).sum();
    m + (s / ys.len() as f64).ln()
}

/// Linear least-squares fit y ≈ intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Heteroscedasticity-robust (HC0) standard errors.
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut meat_slope = 0.0;
    let mut meat_int = 0.0;
    let nf = n as f64;
    for (x, y) in xs.iter().zip(ys) {
        let e = y - intercept - slope * x;
        ss_res += e * e;
        ss_tot += (y - my) * (y - my);
        meat_slope += ((x - mx) * e).powi(2);
        let w = 1.0 / nf - mx * (x - mx) / sxx;
        meat_int += (w * e).powi(2);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_se: meat_slope.sqrt() / sxx,
        intercept_se: meat_int.sqrt(),
    })
}

/// Empirical quantile with linear interpolation; `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

pub fn frac_exceeding(xs: &[f64], radius: f64) -> f64 {
    xs.iter().filter(|&&x| x > radius).count() as f64 / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 2.0, epsilon = 1e-14);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn log_mean_exp_large() {
        assert_relative_eq!(log_mean_exp(&[1000.0, 1000.0]), 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.25), 1.5);
    }
}

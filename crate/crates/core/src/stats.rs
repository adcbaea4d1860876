//! Pearson correlation and its two-tailed significance.
//!
//! The Student-t CDF goes through the regularized incomplete beta function,
//! evaluated with a modified-Lentz continued fraction.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    InsufficientSamples(usize),
    #[error("correlation {0} outside [-1, 1]")]
    InvalidCorrelation(String),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1.
pub fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    // the continued fraction converges fast for x < (a+1)/(a+b+2)
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    betai(df / 2.0, 0.5, df / (df + t * t))
}

/// Student-t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * t_two_tailed(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Drops pairs where either side is missing or non-finite.
pub fn complete_pairs(x: &[Option<f64>], y: &[Option<f64>]) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    Ok(x.iter()
        .zip(y)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Some((*a, *b)),
            _ => None,
        })
        .unzip())
}

/// Pearson r over pairwise-complete observations.
///
/// `Ok(None)` when fewer than 3 complete pairs remain or either side has
/// zero variance.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Result<Option<f64>, StatsError> {
    let (xs, ys) = complete_pairs(x, y)?;
    Ok(pearson_complete(&xs, &ys))
}

pub fn pearson_complete(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of r under H0: ρ = 0, with n - 2 degrees of freedom.
pub fn p_value_two_tailed(r: f64, n: usize) -> Result<f64, StatsError> {
    if n < 3 {
        return Err(StatsError::InsufficientSamples(n));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(StatsError::InvalidCorrelation(r.to_string()));
    }
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    Ok(t_two_tailed(t, df).clamp(0.0, 1.0))
}

/// t statistic for a correlation.
pub fn t_statistic(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    r * (df / (1.0 - r * r)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(2.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        // Γ(10.5) = 1133278.3889487855...
        assert!((ln_gamma(10.5) - 1_133_278.388_948_785_5_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn betai_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            assert!((betai(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((betai(3.5, 1.0, x) - x.powf(3.5)).abs() < 1e-13);
            assert!((betai(1.0, 4.0, x) - (1.0 - (1.0 - x).powi(4))).abs() < 1e-13);
        }
        // symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
        let (a, b, x) = (4.5, 0.5, 0.73);
        assert!((betai(a, b, x) - (1.0 - betai(b, a, 1.0 - x))).abs() < 1e-14);
    }

    #[test]
    fn t_cdf_closed_form_df1_df2() {
        // Cauchy: F(t) = 1/2 + atan(t)/π; df=2: F(t) = 1/2 + t / (2 sqrt(2 + t²))
        for &t in &[-3.0, -0.7, 0.2, 1.0, 4.2] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((t_cdf(t, 1.0) - cauchy).abs() < 1e-13, "{t}");
            let df2 = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((t_cdf(t, 2.0) - df2).abs() < 1e-13, "{t}");
        }
    }

    #[test]
    fn pearson_examples() {
        let r = |x: &[f64], y: &[f64]| pearson(&some(x), &some(y)).unwrap();
        assert!((r(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((r(&[1., 2., 3.], &[6., 4., 2.]).unwrap() + 1.0).abs() < 1e-15);
        // deviations (-1.5,-.5,.5,1.5) and (-1.5,.5,-.5,1.5): 4 / sqrt(5 * 5) = 0.8
        assert!((r(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(r(&[1., 1., 1.], &[1., 2., 3.]), None);
        assert_eq!(r(&[1., 2.], &[1., 2.]), None);
    }

    #[test]
    fn pearson_drops_incomplete_pairs() {
        let x = vec![Some(1.0), None, Some(2.0), Some(3.0), Some(9.0)];
        let y = vec![Some(2.0), Some(5.0), Some(4.0), Some(6.0), None];
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &y[..4]), Err(StatsError::LengthMismatch(5, 4)));
    }

    #[test]
    fn p_value_edges() {
        assert_eq!(p_value_two_tailed(0.0, 11), Ok(1.0));
        assert_eq!(p_value_two_tailed(1.0, 5), Ok(0.0));
        assert_eq!(p_value_two_tailed(-1.0, 5), Ok(0.0));
        assert_eq!(p_value_two_tailed(0.5, 2), Err(StatsError::InsufficientSamples(2)));
        assert!(p_value_two_tailed(1.5, 5).is_err());
    }

    #[test]
    fn p_value_for_r07_n11() {
        // cross-checked in tests/stats_oracle.rs: t = 2.9406, p ≈ 0.0165
        assert!((t_statistic(0.7, 11) - 2.9406).abs() < 1e-4);
        assert!((p_value_two_tailed(0.7, 11).unwrap() - 0.0165).abs() < 1e-3);
    }
}

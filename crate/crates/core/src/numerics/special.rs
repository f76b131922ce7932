//! Special functions.
//!
//! `erf`, `erfc` and `ln_gamma` delegate to `libm`, a port of the musl/FreeBSD
//! implementations (Sun fdlibm rational approximations, accurate to about one
//! ulp). The regularized incomplete beta is evaluated with the modified Lentz
//! continued fraction.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tol;
use crate::error::{arg_err, Result};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Standard normal CDF. Uses `erfc` so the lower tail keeps relative accuracy.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return arg_err(format!("incomplete beta needs a, b > 0 (got {a}, {b})"));
    }
    if !(0.0..=1.0).contains(&x) {
        return arg_err(format!("incomplete beta needs x in [0, 1] (got {x})"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side.
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x)? / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x)? / b
    };
    Ok(v.clamp(0.0, 1.0))
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
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
        if (del - 1.0).abs() < tol::BETA_CF_EPS {
            return Ok(h);
        }
    }
    Err(crate::Error::Numerical(format!(
        "incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )))
}

/// Survival function `P(F > f)` of the F distribution with `(df1, df2)` degrees of freedom.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if !(df1 >= 1.0 && df2 >= 1.0) {
        return arg_err(format!("F distribution needs df >= 1 (got {df1}, {df2})"));
    }
    if f.is_nan() || f < 0.0 {
        return arg_err(format!("F statistic must be non-negative (got {f})"));
    }
    if f == 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    let x = df2 / (df2 + df1 * f);
    reg_inc_beta(0.5 * df2, 0.5 * df1, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};

    #[test]
    fn anchors() {
        assert_eq!(erf(0.0), 0.0);
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        // erf(1) to 16 digits
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        // Φ(-5) = 2.866515718791939e-07
        assert!((norm_cdf(-5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
    }

    #[test]
    fn norm_cdf_is_monotone_on_grid() {
        let mut prev = 0.0;
        for i in -800..=800 {
            let v = norm_cdf(f64::from(i) / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn inc_beta_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a, I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((reg_inc_beta(1.0, 1.0, x).unwrap() - x).abs() < 1e-14);
            assert!((reg_inc_beta(3.5, 1.0, x).unwrap() - x.powf(3.5)).abs() < 1e-13);
            assert!(
                (reg_inc_beta(1.0, 2.5, x).unwrap() - (1.0 - (1.0 - x).powf(2.5))).abs() < 1e-13
            );
        }
        assert!(reg_inc_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_inc_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn f_sf_anchors() {
        assert_eq!(f_sf(0.0, 3.0, 7.0).unwrap(), 1.0);
        assert!((f_sf(1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(f_sf(50.62, 1.0, 400.0).unwrap() < 1e-4);
        assert!(f_sf(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn f_sf_matches_statrs() {
        for &(d1, d2) in &[
            (1.0, 1.0),
            (1.0, 400.0),
            (3.0, 17.0),
            (6.0, 393.0),
            (12.0, 5.0),
        ] {
            let dist = FisherSnedecor::new(d1, d2).unwrap();
            for &f in &[0.05, 0.5, 1.0, 2.0, 4.45, 11.02, 50.62] {
                let ours = f_sf(f, d1, d2).unwrap();
                let theirs = dist.sf(f);
                assert!(
                    (ours - theirs).abs() < 1e-10,
                    "F({d1},{d2}) at {f}: {ours} vs {theirs}"
                );
            }
        }
    }

    #[test]
    fn f_one_one_median_by_monte_carlo() {
        // ratio of two independent chi-square(1) draws is F(1,1)
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000_000usize;
        let mut above = 0usize;
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            if a * a > b * b {
                above += 1;
            }
        }
        let p = above as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((p - f_sf(1.0, 1.0, 1.0).unwrap()).abs() < 4.0 * se);
    }

    proptest! {
        #[test]
        fn inc_beta_symmetry(a in 0.1f64..50.0, b in 0.1f64..50.0, x in 0.0f64..=1.0) {
            let s = reg_inc_beta(a, b, x).unwrap() + reg_inc_beta(b, a, 1.0 - x).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }

        #[test]
        fn f_sf_decreases_in_f(f in 0.0f64..100.0, df in 0.01f64..5.0, d1 in 1u32..10, d2 in 1u32..500) {
            let lo = f_sf(f, d1.into(), d2.into()).unwrap();
            let hi = f_sf(f + df, d1.into(), d2.into()).unwrap();
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!(hi <= lo);
        }
    }
}

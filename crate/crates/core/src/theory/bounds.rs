use statrs::function::factorial::{ln_binomial, ln_factorial};

use super::{Bound, TheoryConfig};
use crate::error::{Error, Result};

/// Lower bounds on `P(1-eps <= |x|^2/R0^2 <= 1+eps)` (two-sided) and
/// `P(|x|^2/R0^2 >= 1-eps)` (one-sided).
pub fn bound_norm(cfg: &TheoryConfig) -> Result<(Bound, Bound)> {
    cfg.validate()?;
    let tail = norm_tail(cfg);
    Ok((Bound::new(1.0 - 2.0 * tail), Bound::new(1.0 - tail)))
}

/// `exp(-2 R0^4 eps^2 / n)`
fn norm_tail(cfg: &TheoryConfig) -> f64 {
    (-2.0 * cfg.rate() * cfg.eps * cfg.eps).exp()
}

/// `exp(-R0^4 t^2 / (2 n))`
fn dot_tail(cfg: &TheoryConfig, t: f64) -> f64 {
    (-cfg.rate() * t * t / 2.0).exp()
}

/// Lower bound on `P(<x_i, x_j> / R0^2 < delta)` for independent points.
pub fn bound_pairwise(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    Ok(Bound::new(1.0 - dot_tail(cfg, cfg.delta)))
}

/// Probability that one point is cut off from `background` others by the
/// hyperplane through its own direction at level `1 - eps`.
pub fn bound_one_element(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    let m = cfg.background as f64;
    Ok(Bound::new(1.0 - norm_tail(cfg) - m * dot_tail(cfg, 1.0 - cfg.eps)))
}

/// `k` points with pairwise correlation at least `beta` separated by the
/// hyperplane through their centroid.
pub fn bound_k_element(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    let k = check_k(cfg)?;
    let level = 1.0 - cfg.eps + cfg.beta * (k - 1.0);
    if !(level > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "1 - eps + beta (k - 1) must be positive, got {level}"
        )));
    }
    let m = cfg.background as f64;
    Ok(Bound::new(1.0 - k * norm_tail(cfg) - m * dot_tail(cfg, level / k)))
}

/// As [`bound_k_element`] without a known correlation bound: pays for the
/// event that all pairs have correlation above `-delta`.
pub fn bound_k_element_uncorrelated(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    let k = check_k(cfg)?;
    if !(cfg.delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {}", cfg.delta)));
    }
    let level = 1.0 - cfg.eps - cfg.delta * (k - 1.0);
    if !(level > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "1 - eps - delta (k - 1) must be positive, got {level}"
        )));
    }
    let m = cfg.background as f64;
    let pairs = k * (k - 1.0) / 2.0;
    Ok(Bound::new(
        1.0 - k * norm_tail(cfg) - pairs * dot_tail(cfg, cfg.delta) - m * dot_tail(cfg, level / k),
    ))
}

/// Separation of a neighbourhood of one of `k` points by a hyperplane
/// lowered by `mu`.
pub fn bound_k_element_case2(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    let k = check_k(cfg)?;
    if !(cfg.mu > 0.0 && cfg.mu < 1.0 - cfg.eps) {
        return Err(Error::InvalidArgument(format!(
            "mu must lie in (0, 1 - eps), got {}",
            cfg.mu
        )));
    }
    let m = cfg.background as f64;
    Ok(Bound::new(1.0 - k * norm_tail(cfg) - m * dot_tail(cfg, 1.0 - cfg.eps - cfg.mu)))
}

fn check_k(cfg: &TheoryConfig) -> Result<f64> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(cfg.k as f64)
}

fn check_p(p_star: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p_star) {
        return Err(Error::InvalidArgument(format!("p* must lie in [0, 1), got {p_star}")));
    }
    Ok(())
}

/// Lower bound on the probability that at most `m` of `total` independent
/// points fall on the positive side, when each does so with probability at
/// most `p_star`:
/// `(1-p)^M e^x (1 - x^m / m!)` with `x = (M - m + 1) p / (1 - p)`.
///
/// Evaluated in log space; the result may be hugely negative.
pub fn lemma1_lower_bound(total: usize, m: usize, p_star: f64) -> Result<f64> {
    check_p(p_star)?;
    if m == 0 || m > total + 1 {
        return Err(Error::InvalidArgument(format!(
            "allowed count must lie in 1..={} (got {m})",
            total + 1
        )));
    }
    let x = (total + 1 - m) as f64 * p_star / (1.0 - p_star);
    let log_head = total as f64 * (-p_star).ln_1p() + x;
    let log_tail = m as f64 * x.ln() - ln_factorial(m as u64);
    // e^head (1 - e^tail), factored so large heads do not produce inf - inf
    Ok(if log_tail < 0.0 {
        (log_head + (-log_tail.exp_m1()).ln()).exp()
    } else if log_tail > 0.0 {
        -(log_head + log_tail.exp_m1().ln()).exp()
    } else {
        0.0
    })
}

/// Binomial partial sum `sum_{k < m} C(M, k) (1-p)^(M-k) p^k`.
pub fn exact_at_most_m(total: usize, m: usize, p_star: f64) -> Result<f64> {
    check_p(p_star)?;
    if m == 0 {
        return Err(Error::InvalidArgument("allowed count must be at least 1".into()));
    }
    let log_q = (-p_star).ln_1p();
    let mut sum = (total as f64 * log_q).exp();
    if p_star > 0.0 {
        let log_p = p_star.ln();
        for k in 1..m.min(total + 1) {
            let log_term = ln_binomial(total as u64, k as u64) + (total - k) as f64 * log_q + k as f64 * log_p;
            sum += log_term.exp();
        }
    }
    Ok(sum.min(1.0))
}

/// The one-element hyperplane picks up at most `m_allow` background points,
/// which a second hyperplane can then remove.
pub fn bound_cascade(cfg: &TheoryConfig) -> Result<Bound> {
    cfg.validate()?;
    let p_star = dot_tail(cfg, 1.0 - cfg.eps);
    let head = lemma1_lower_bound(cfg.background, cfg.m_allow, p_star)?;
    Ok(Bound::new(head - norm_tail(cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize) -> TheoryConfig {
        TheoryConfig::cube(n)
    }

    #[test]
    fn norm_bound_values() {
        let (two, one) = bound_norm(&cube(2000)).unwrap();
        let tail = (-160.0f64 / 9.0).exp();
        assert!((one.value - (1.0 - tail)).abs() < 1e-15);
        assert!((two.value - (1.0 - 2.0 * tail)).abs() < 1e-15);
        assert!(1.0 - one.value < 2e-8);

        let (_, tiny) = bound_norm(&cube(2000).with_eps(1e-9)).unwrap();
        assert!(tiny.value.abs() < 1e-12);

        let mut last = f64::NEG_INFINITY;
        for n in (10..=500).step_by(10) {
            let (_, b) = bound_norm(&cube(n)).unwrap();
            assert!(b.value > last);
            last = b.value;
        }
        assert!(bound_norm(&cube(10).with_eps(1.0)).is_err());
        assert!(bound_norm(&cube(0)).is_err());
    }

    #[test]
    fn pairwise_values() {
        let cfg = TheoryConfig { delta: 0.8, ..cube(2000) };
        let expected = 1.0 - (-(2000.0 / 9.0) * 0.32f64).exp();
        assert!((bound_pairwise(&cfg).unwrap().value - expected).abs() < 1e-15);
        assert!(bound_pairwise(&TheoryConfig { delta: 1e-9, ..cfg }).unwrap().value < 1e-12);
        let mut last = -1.0;
        for d in 1..10 {
            let v = bound_pairwise(&TheoryConfig { delta: d as f64 / 10.0, ..cube(300) }).unwrap().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn one_element_values() {
        let high = bound_one_element(&cube(2000).with_background(9999)).unwrap();
        assert!(!high.vacuous);
        assert!((1.0 - high.value - (-160.0f64 / 9.0).exp()).abs() < 1e-15);

        let low = bound_one_element(&cube(100).with_background(9999)).unwrap();
        assert!(low.vacuous && low.value < 0.0);

        let bare = bound_one_element(&cube(300)).unwrap();
        assert_eq!(bare.value, bound_norm(&cube(300)).unwrap().1.value);
    }

    #[test]
    fn k_element_values() {
        for n in [50, 400, 2000] {
            let cfg = cube(n).with_background(9999).with_k(1);
            let a = bound_k_element(&TheoryConfig { beta: 0.37, ..cfg }).unwrap().value;
            let b = bound_one_element(&cfg).unwrap().value;
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let cfg = cube(2000).with_background(9999).with_k(10);
        let got = bound_k_element(&cfg).unwrap().value;
        let expected = 1.0 - 10.0 * (-160.0f64 / 9.0).exp() - 9999.0 * (-(2000.0 / 9.0) * 0.64 / 200.0f64).exp();
        assert!((got - expected).abs() < 1e-12);

        let tiny = TheoryConfig { delta: 1e-12, ..cfg };
        let cor = bound_k_element_uncorrelated(&tiny).unwrap();
        assert!(cor.vacuous);
        // the pairwise term is about k(k-1)/2 at delta -> 0
        assert!((got - cor.value - 45.0).abs() < 1e-6);

        assert!(bound_k_element(&TheoryConfig { beta: -0.2, ..cfg }).is_err());
        assert!(bound_k_element_case2(&TheoryConfig { mu: 0.8, ..cfg }).is_err());
        let c2 = bound_k_element_case2(&TheoryConfig { mu: 0.1, ..cfg }).unwrap().value;
        let expected = 1.0 - 10.0 * (-160.0f64 / 9.0).exp() - 9999.0 * (-(2000.0 / 9.0) * 0.49 / 2.0f64).exp();
        assert!((c2 - expected).abs() < 1e-12);
    }

    /// Partial binomial sum by repeated multiplication.
    fn binomial_oracle(total: usize, m: usize, p: f64) -> f64 {
        let mut sum = 0.0;
        let mut coeff = 1.0;
        for k in 0..m.min(total + 1) {
            if k > 0 {
                coeff *= (total - k + 1) as f64 / k as f64;
            }
            sum += coeff * (1.0 - p).powi((total - k) as i32) * p.powi(k as i32);
        }
        sum
    }

    #[test]
    fn lemma1_spot_values() {
        let exact = exact_at_most_m(10, 2, 0.1).unwrap();
        assert!((exact - binomial_oracle(10, 2, 0.1)).abs() < 1e-14);
        assert!((exact - 0.7360989291).abs() < 1e-9);
        let bound = lemma1_lower_bound(10, 2, 0.1).unwrap();
        // 0.9^10 * e * (1 - 1/2)
        assert!((bound - 0.9f64.powi(10) * std::f64::consts::E * 0.5).abs() < 1e-14);
        assert!((bound - 0.4739031338).abs() < 1e-9);

        assert_eq!(exact_at_most_m(10, 2, 0.0).unwrap(), 1.0);
        assert_eq!(lemma1_lower_bound(10, 2, 0.0).unwrap(), 1.0);
        assert!(lemma1_lower_bound(10, 2, 1.0).is_err());
        assert!(exact_at_most_m(10, 2, -0.1).is_err());
        assert!(lemma1_lower_bound(10, 0, 0.1).is_err());
    }

    #[test]
    fn lemma1_is_below_the_binomial_sum() {
        for total in 1..=50 {
            for m in 1..=10.min(total + 1) {
                for p in [0.01, 0.05, 0.1, 0.2, 0.3] {
                    let exact = binomial_oracle(total, m, p);
                    assert!((exact_at_most_m(total, m, p).unwrap() - exact).abs() < 1e-12);
                    assert!(lemma1_lower_bound(total, m, p).unwrap() <= exact + 1e-12);
                }
            }
        }
    }

    #[test]
    fn cascade_bound_limits() {
        let cfg = cube(2000).with_background(9999);
        let cascade = bound_cascade(&cfg).unwrap();
        let p = (-(2000.0 / 9.0) * 0.64 / 2.0f64).exp();
        let head = lemma1_lower_bound(9999, 2000, p).unwrap();
        assert!((cascade.value - (head - (-160.0f64 / 9.0).exp())).abs() < 1e-15);
        // p* underflows: only the norm term remains
        let (_, norm) = bound_norm(&cube(20000)).unwrap();
        let far = bound_cascade(&TheoryConfig { m_allow: 2000, ..cube(20000).with_background(9999) }).unwrap();
        assert!((far.value - norm.value).abs() < 1e-15);

        // tolerating spurious points helps in the mid range
        for n in (200..=600).step_by(50) {
            let cfg = cube(n).with_background(9999);
            assert!(bound_cascade(&cfg).unwrap().value >= bound_one_element(&cfg).unwrap().value);
        }
    }
}

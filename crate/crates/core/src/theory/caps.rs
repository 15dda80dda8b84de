use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Radius `sqrt(1 - (1-eps)^2)` of the ball enclosing the cap.
pub fn cap_radius(eps: f64) -> f64 {
    (1.0 - (1.0 - eps).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `ln(Γ(n/2 + 1) / Γ(n/2 + 3/2))`
fn ln_gamma_ratio(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    ln_gamma(h + 1.0) - ln_gamma(h + 1.5)
}

fn check(n: usize, eps: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

/// Bounds on the fraction of the unit ball occupied by the cap
/// `{ξ : |ξ| <= 1, ξ_1 >= 1 - eps}`.
pub fn cap_volume_bounds(n: usize, eps: f64) -> Result<CapBounds> {
    check(n, eps)?;
    let ln_rho = cap_radius(eps).ln();
    let nf = n as f64;
    let lower = ((nf + 1.0) * ln_rho + ln_gamma_ratio(n) - 0.5 * std::f64::consts::PI.ln()).exp() / 2.0;
    let upper = (nf * ln_rho).exp() / 2.0;
    Ok(CapBounds { lower, upper })
}

/// Upper bound on `V(ball of radius k ρ) / V(cap)`. Infinite when the cap
/// radius vanishes.
pub fn ball_cap_ratio_bound(n: usize, eps: f64, k: f64) -> Result<f64> {
    check(n, eps)?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius factor must be positive, got {k}")));
    }
    let rho = cap_radius(eps);
    let ln = n as f64 * k.ln() + (2.0 * std::f64::consts::PI.sqrt()).ln() - rho.ln() - ln_gamma_ratio(n);
    Ok(ln.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cap fraction by Simpson quadrature of the slice volumes
    /// `V_{n-1} (1 - x^2)^{(n-1)/2}` over `[1 - eps, 1]`, divided by `V_n`.
    pub(crate) fn cap_fraction_quadrature(n: usize, eps: f64) -> f64 {
        let ball = |d: f64| std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0);
        let steps = 20_000;
        let a = 1.0 - eps;
        let h = eps / steps as f64;
        let f = |x: f64| (1.0 - x * x).max(0.0).powf((n as f64 - 1.0) / 2.0);
        let mut s = f(a) + f(1.0);
        for i in 1..steps {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        ball(n as f64 - 1.0) * s * h / 3.0 / ball(n as f64)
    }

    #[test]
    fn half_disk_case() {
        let b = cap_volume_bounds(2, 1.0).unwrap();
        assert!((b.upper - 0.5).abs() < 1e-15);
        // 0.5 / (sqrt(pi) Γ(2.5)) with Γ(2.5) = 3 sqrt(pi) / 4
        let expected = 0.5 / (std::f64::consts::PI * 0.75);
        assert!((b.lower - expected).abs() < 1e-12);
        assert!((b.lower - 0.21221).abs() < 1e-5);
        assert!((cap_fraction_quadrature(2, 1.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bounds_bracket_the_exact_fraction() {
        for n in 2..=30 {
            for eps in [0.1, 0.3, 0.5, 0.8, 1.0] {
                let b = cap_volume_bounds(n, eps).unwrap();
                let exact = cap_fraction_quadrature(n, eps);
                assert!(b.lower < exact && exact <= b.upper * (1.0 + 1e-9), "n={n} eps={eps}");
            }
        }
    }

    #[test]
    fn bound_gap_grows_with_dimension() {
        let mut last = 0.0;
        for n in 2..=200 {
            let b = cap_volume_bounds(n, 0.3).unwrap();
            let gap = b.upper / b.lower;
            assert!(gap > last);
            last = gap;
        }
    }

    #[test]
    fn ball_to_cap_ratio() {
        let v = ball_cap_ratio_bound(2, 1.0, 1.0).unwrap();
        assert!(v.is_finite() && v > 2.0);
        let mut last = f64::INFINITY;
        for n in 5..=50 {
            let v = ball_cap_ratio_bound(n, 0.3, 0.5).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(ball_cap_ratio_bound(10, 1e-300, 1.0).unwrap() > 1e100);
        // the bound dominates the exact ratio
        for n in 2..=20 {
            let exact = 0.7f64.powi(n as i32) * cap_radius(0.4).powi(n as i32) / cap_fraction_quadrature(n, 0.4);
            assert!(ball_cap_ratio_bound(n, 0.4, 0.7).unwrap() > exact);
        }
        assert!(ball_cap_ratio_bound(3, 0.3, 0.0).is_err());
        assert!(cap_volume_bounds(3, 0.0).is_err());
    }
}

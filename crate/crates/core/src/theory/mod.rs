//! Closed-form separation bounds for product-measure data and the Monte Carlo
//! experiments that check them.
//!
//! Bounds are returned raw: a negative value is a valid (vacuous) lower bound
//! and is flagged rather than clamped.

mod bounds;
mod caps;
mod montecarlo;
mod table;

pub use bounds::{
    bound_cascade, bound_k_element, bound_k_element_case2, bound_k_element_uncorrelated, bound_norm,
    bound_one_element, bound_pairwise, exact_at_most_m, lemma1_lower_bound,
};
pub use caps::{ball_cap_ratio_bound, cap_radius, cap_volume_bounds, CapBounds};
pub use montecarlo::{mc_cap_ratio, mc_separation_frequencies, McEstimate, SeparationFrequencies};
pub use table::{
    bounds_table, caps_table, mc_table, write_bounds_csv, write_caps_csv, write_mc_csv, BoundsRow, CapsRow,
    McRow,
};

use serde::Serialize;

use crate::error::{Error, Result};

/// Parameters shared by the bound evaluators. Each evaluator reads only the
/// fields it needs and validates those.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConfig {
    /// Dimension.
    pub n: usize,
    /// Number of background points.
    pub background: usize,
    /// Number of points to separate.
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    /// Lower bound on pairwise correlation within the separated group.
    pub beta: f64,
    pub mu: f64,
    /// `sqrt(sum of coordinate variances)`.
    pub r0: f64,
    /// Spurious background points a cascade may tolerate.
    pub m_allow: usize,
}

impl TheoryConfig {
    /// Uniform distribution on `[-1, 1]^n`, where `R0^2 = n / 3`.
    pub fn cube(n: usize) -> Self {
        Self {
            n,
            background: 0,
            k: 1,
            eps: 0.2,
            delta: 0.5,
            beta: 0.0,
            mu: 0.1,
            r0: (n as f64 / 3.0).sqrt(),
            m_allow: n,
        }
    }

    pub fn with_background(mut self, background: usize) -> Self {
        self.background = background;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidArgument(format!("R0 must be positive, got {}", self.r0)));
        }
        Ok(())
    }

    /// `R0^4 / n`, the rate shared by every exponent.
    pub(crate) fn rate(&self) -> f64 {
        self.r0.powi(4) / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    /// True when the value is negative and says nothing.
    pub vacuous: bool,
}

impl Bound {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            vacuous: value < 0.0,
        }
    }
}

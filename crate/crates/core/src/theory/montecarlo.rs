use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::RngSpec;

/// Hit frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_hits(hits: usize, samples: usize) -> Self {
        let f = hits as f64 / samples as f64;
        Self {
            estimate: f,
            stderr: (f * (1.0 - f) / samples as f64).sqrt(),
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationFrequencies {
    /// `<x_i, x_j> < |x_i|^2` for every other point.
    pub event_a: McEstimate,
    /// `|x_i|^2 / R0^2 >= 1 - eps` and `<x_i, x_j> / R0^2 < 1 - eps` for every
    /// other point.
    pub event_b: McEstimate,
}

/// Draws `trials` independent sets of `points` uniform points in `[-1, 1]^n`
/// and checks whether a designated point is separated from the rest.
///
/// The points of a set are exchangeable, so the designated point is the
/// first draw; the others are streamed and never stored.
pub fn mc_separation_frequencies(
    n: usize,
    points: usize,
    trials: usize,
    eps: f64,
    rng: RngSpec,
) -> Result<SeparationFrequencies> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if n == 0 || points < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and at least 2 points (got n={n}, points={points})"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
    }
    let r0_sq = n as f64 / 3.0;
    let level = (1.0 - eps) * r0_sq;
    let outcomes: Vec<(bool, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.child(t).rng();
            let cube = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            let target: Vec<f64> = (0..n).map(|_| cube.sample(&mut r)).collect();
            let norm_sq: f64 = target.iter().map(|v| v * v).sum();
            let mut max_dot = f64::NEG_INFINITY;
            for _ in 1..points {
                let dot: f64 = target.iter().map(|v| v * cube.sample(&mut r)).sum();
                max_dot = max_dot.max(dot);
            }
            (max_dot < norm_sq, norm_sq >= level && max_dot < level)
        })
        .collect();
    let a = outcomes.iter().filter(|o| o.0).count();
    let b = outcomes.iter().filter(|o| o.1).count();
    Ok(SeparationFrequencies {
        event_a: McEstimate::from_hits(a, trials),
        event_b: McEstimate::from_hits(b, trials),
    })
}

const CAP_CHUNK: usize = 1 << 16;

/// Fraction of uniform points in the unit `n`-ball whose first coordinate is
/// at least `1 - eps`.
pub fn mc_cap_ratio(n: usize, eps: f64, samples: usize, rng: RngSpec) -> Result<McEstimate> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and samples >= 1 (got n={n}, samples={samples})"
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    let level = 1.0 - eps;
    let chunks = samples.div_ceil(CAP_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng.child(c as u64).rng();
            let size = CAP_CHUNK.min(samples - c * CAP_CHUNK);
            let mut g = vec![0.0f64; n];
            let mut hits = 0;
            for _ in 0..size {
                // Gaussian direction, radius U^(1/n)
                for v in g.iter_mut() {
                    *v = StandardNormal.sample(&mut r);
                }
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let radius = r.random::<f64>().powf(1.0 / n as f64);
                if g[0] / norm * radius >= level {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(McEstimate::from_hits(hits, samples))
}

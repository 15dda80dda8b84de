use std::io::Write;

use serde::Serialize;

use super::{
    bound_cascade, bound_norm, bound_one_element, cap_volume_bounds, mc_cap_ratio, mc_separation_frequencies,
    TheoryConfig,
};
use crate::error::Result;
use crate::rng::RngSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsRow {
    pub n: usize,
    pub eps: f64,
    pub background: usize,
    pub r0: f64,
    pub norm_one_sided: f64,
    pub bound: f64,
    pub vacuous: bool,
    /// Empty when more spurious points are allowed than there are background points.
    pub cascade: Option<f64>,
}

/// One-element and cascade bounds for the cube over a grid of dimensions.
pub fn bounds_table(n_grid: &[usize], eps: f64, background: usize) -> Result<Vec<BoundsRow>> {
    n_grid
        .iter()
        .map(|&n| {
            let cfg = TheoryConfig::cube(n).with_eps(eps).with_background(background);
            let one = bound_one_element(&cfg)?;
            Ok(BoundsRow {
                n,
                eps,
                background,
                r0: cfg.r0,
                norm_one_sided: bound_norm(&cfg)?.1.value,
                bound: one.value,
                vacuous: one.vacuous,
                cascade: bound_cascade(&cfg).ok().map(|b| b.value),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub n: usize,
    pub eps: f64,
    pub points: usize,
    pub trials: usize,
    /// One-element bound with `points - 1` background points.
    pub bound: f64,
    pub vacuous: bool,
    /// Frequency of the norm-and-threshold event.
    pub mc_freq: f64,
    pub stderr: f64,
    /// Frequency of the plain `<x_i, x_j> < |x_i|^2` event.
    pub freq_a: f64,
    pub stderr_a: f64,
}

/// Monte Carlo separation frequencies next to the one-element bound. Dimension
/// `n` uses the substream `rng.child(n)`.
pub fn mc_table(n_grid: &[usize], points: usize, trials: usize, eps: f64, rng: RngSpec) -> Result<Vec<McRow>> {
    n_grid
        .iter()
        .map(|&n| {
            let cfg = TheoryConfig::cube(n).with_eps(eps).with_background(points.saturating_sub(1));
            let bound = bound_one_element(&cfg)?;
            let f = mc_separation_frequencies(n, points, trials, eps, rng.child(n as u64))?;
            Ok(McRow {
                n,
                eps,
                points,
                trials,
                bound: bound.value,
                vacuous: bound.vacuous,
                mc_freq: f.event_b.estimate,
                stderr: f.event_b.stderr,
                freq_a: f.event_a.estimate,
                stderr_a: f.event_a.stderr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapsRow {
    pub n: usize,
    pub eps: f64,
    pub lower: f64,
    pub upper: f64,
    /// Empty when no samples were requested.
    pub mc_ratio: Option<f64>,
    pub stderr: Option<f64>,
    pub samples: usize,
}

pub fn caps_table(n_grid: &[usize], eps: f64, samples: usize, rng: RngSpec) -> Result<Vec<CapsRow>> {
    n_grid
        .iter()
        .map(|&n| {
            let b = cap_volume_bounds(n, eps)?;
            let mc = if samples > 0 {
                Some(mc_cap_ratio(n, eps, samples, rng.child(n as u64))?)
            } else {
                None
            };
            Ok(CapsRow {
                n,
                eps,
                lower: b.lower,
                upper: b.upper,
                mc_ratio: mc.map(|m| m.estimate),
                stderr: mc.map(|m| m.stderr),
                samples,
            })
        })
        .collect()
}

fn write_rows<W: Write, T: Serialize>(rows: &[T], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn write_bounds_csv<W: Write>(rows: &[BoundsRow], out: W) -> std::io::Result<()> {
    write_rows(rows, out)
}

pub fn write_mc_csv<W: Write>(rows: &[McRow], out: W) -> std::io::Result<()> {
    write_rows(rows, out)
}

pub fn write_caps_csv<W: Write>(rows: &[CapsRow], out: W) -> std::io::Result<()> {
    write_rows(rows, out)
}

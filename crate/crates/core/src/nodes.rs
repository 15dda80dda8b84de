//! Corrector nodes: one Fisher hyperplane per error cluster.
//!
//! For a cluster `Y_j` of whitened error points and its complement `S ∖ Y_j`,
//! the direction is `w_j = (Cov(S ∖ Y_j) + Cov(Y_j))⁻¹ (mean(Y_j) − mean(S ∖ Y_j))`
//! and the threshold `c_j` is the smallest projection of a cluster member on
//! `w_j / ‖w_j‖`. A node fires on `z` when `⟨ŵ_j, z⟩ − c_j ≥ 0`, so every
//! member of its own cluster fires, the minimiser exactly at zero. Nodes whose
//! `c_j` does not exceed the filter threshold θ are dropped.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cluster::Clustering;
use crate::error::{Error, Result};
use crate::linalg::{covariance, dot, solve_ridge, Scatter};
use crate::preprocess::PreprocessModel;

/// Added to the pooled covariance before solving for Fisher weights.
pub const FISHER_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorNode {
    weights: DVector<f64>,
    threshold: f64,
    cluster_id: usize,
}

impl CorrectorNode {
    /// Normalises `weights` to unit length.
    pub fn new(weights: DVector<f64>, threshold: f64, cluster_id: usize) -> Result<Self> {
        let norm = weights.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!("node direction has norm {norm}")));
        }
        if !threshold.is_finite() {
            return Err(Error::Numerical(format!("node threshold {threshold} is not finite")));
        }
        Ok(Self {
            weights: weights / norm,
            threshold,
            cluster_id,
        })
    }

    /// Takes `weights` as stored, for directions that are already unit length
    /// (e.g. read back from a model file).
    pub fn from_unit(weights: DVector<f64>, threshold: f64, cluster_id: usize) -> Result<Self> {
        let norm = weights.norm();
        if !((norm - 1.0).abs() <= 1e-10) {
            return Err(Error::Numerical(format!("node direction has norm {norm}, expected 1")));
        }
        if !threshold.is_finite() {
            return Err(Error::Numerical(format!("node threshold {threshold} is not finite")));
        }
        Ok(Self {
            weights,
            threshold,
            cluster_id,
        })
    }

    /// Unit normal of the hyperplane.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn cluster_id(&self) -> usize {
        self.cluster_id
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `⟨ŵ, z⟩ − c` for a point already in whitened coordinates.
    pub fn activation(&self, z: &DVector<f64>) -> f64 {
        dot(self.weights.iter(), z.iter()) - self.threshold
    }

    pub(crate) fn activation_row(&self, points: &DMatrix<f64>, row: usize) -> f64 {
        dot(self.weights.iter(), points.row(row).iter()) - self.threshold
    }

    /// Unit-step firing rule; ties at zero fire.
    pub fn fires(&self, z: &DVector<f64>) -> bool {
        self.activation(z) >= 0.0
    }

    pub(crate) fn fires_row(&self, points: &DMatrix<f64>, row: usize) -> bool {
        self.activation_row(points, row) >= 0.0
    }
}

/// Fisher discriminant direction (unnormalised) separating `cluster` from
/// `complement`. A one-point cluster contributes a zero covariance.
pub fn fisher_weights(cluster: &DMatrix<f64>, complement: &DMatrix<f64>) -> Result<DVector<f64>> {
    if cluster.nrows() == 0 {
        return Err(Error::Empty("Fisher weights need a non-empty cluster".into()));
    }
    if complement.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Fisher weights need at least 2 complement points, got {}",
            complement.nrows()
        )));
    }
    if cluster.ncols() != complement.ncols() {
        return Err(Error::DimensionMismatch {
            expected: cluster.ncols(),
            got: complement.ncols(),
        });
    }
    let pooled = covariance(complement) + covariance(cluster);
    let diff = crate::linalg::column_means(cluster) - crate::linalg::column_means(complement);
    solve_finite(&pooled, &diff)
}

fn solve_finite(pooled: &DMatrix<f64>, diff: &DVector<f64>) -> Result<DVector<f64>> {
    let w = solve_ridge(pooled, diff, FISHER_RIDGE)?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(w)
}

/// Smallest projection of a cluster member onto `w / ‖w‖`.
pub fn node_threshold(w: &DVector<f64>, cluster: &DMatrix<f64>) -> Result<f64> {
    if cluster.nrows() == 0 {
        return Err(Error::Empty("threshold needs a non-empty cluster".into()));
    }
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("threshold needs a non-zero direction".into()));
    }
    let unit = w / norm;
    Ok(min_projection(&unit, cluster))
}

pub(crate) fn min_projection(unit: &DVector<f64>, points: &DMatrix<f64>) -> f64 {
    (0..points.nrows())
        .map(|i| dot(unit.iter(), points.row(i).iter()))
        .fold(f64::INFINITY, f64::min)
}

/// Outcome for one non-empty cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCandidate {
    pub cluster_id: usize,
    pub size: usize,
    pub threshold: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub nodes: Vec<CorrectorNode>,
    pub candidates: Vec<NodeCandidate>,
}

impl NodeSet {
    /// `(cluster_id, c_j)` for every cluster dropped by the filter.
    pub fn rejected(&self) -> Vec<(usize, f64)> {
        self.candidates
            .iter()
            .filter(|c| !c.retained)
            .map(|c| (c.cluster_id, c.threshold))
            .collect()
    }
}

/// Builds one candidate node per non-empty cluster and keeps those with
/// `c_j > theta`.
///
/// `whitened` holds every training point (correct and error) in whitened
/// coordinates; `error_rows[i]` is the row of the `i`-th clustered error point.
pub fn build_nodes(
    whitened: &DMatrix<f64>,
    error_rows: &[usize],
    clustering: &Clustering,
    theta: f64,
) -> Result<NodeSet> {
    if clustering.assignments.len() != error_rows.len() {
        return Err(Error::DimensionMismatch {
            expected: error_rows.len(),
            got: clustering.assignments.len(),
        });
    }
    if theta.is_nan() {
        return Err(Error::InvalidArgument("theta must not be NaN".into()));
    }
    let total = Scatter::of(whitened);
    let mut nodes = Vec::new();
    let mut candidates = Vec::new();
    for cluster_id in 0..clustering.clusters() {
        let members: Vec<usize> = clustering
            .members(cluster_id)
            .into_iter()
            .map(|i| error_rows[i])
            .collect();
        if members.is_empty() {
            continue;
        }
        let points = whitened.select_rows(&members);
        let own = Scatter::of(&points);
        let rest = total.minus(&own);
        if rest.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "cluster {cluster_id} leaves fewer than 2 complement points"
            )));
        }
        let pooled = rest.covariance() + own.covariance();
        let w = solve_finite(&pooled, &(own.mean() - rest.mean()))?;
        let node = CorrectorNode::new(w, 0.0, cluster_id)?;
        let threshold = min_projection(node.weights(), &points);
        let retained = threshold > theta;
        candidates.push(NodeCandidate {
            cluster_id,
            size: members.len(),
            threshold,
            retained,
        });
        if retained {
            nodes.push(CorrectorNode { threshold, ..node });
        }
    }
    Ok(NodeSet { nodes, candidates })
}

/// Evaluates a node on a raw feature vector.
pub fn node_fire(prep: &PreprocessModel, node: &CorrectorNode, x: &DVector<f64>) -> Result<bool> {
    let z = prep.transform(x)?;
    if z.len() != node.dim() {
        return Err(Error::DimensionMismatch {
            expected: node.dim(),
            got: z.len(),
        });
    }
    Ok(node.fires(&z))
}

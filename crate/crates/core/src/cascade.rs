//! Cascaded pairs: a corrector node plus a second hyperplane that removes the
//! correct points the node picks up by mistake.
//!
//! The pickups `C_j` and the node's own cluster are projected orthogonally
//! onto the node's hyperplane, and a second hyperplane is fit there: a margin
//! perceptron when the projections are separable, a Fisher discriminant
//! otherwise. The pair fires only when both stages fire.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, covariance, dot, solve_ridge};
use crate::nodes::{min_projection, CorrectorNode, FISHER_RIDGE};
use crate::preprocess::PreprocessModel;
use crate::rng::RngSpec;

pub const DEFAULT_MAX_EPOCHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondStageMethod {
    Perceptron,
    Fisher,
    /// No pickups to remove; the second stage always passes.
    AlwaysPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondStage {
    weights: DVector<f64>,
    /// `-inf` for [`SecondStageMethod::AlwaysPass`].
    threshold: f64,
    method: SecondStageMethod,
}

impl SecondStage {
    pub fn new(weights: DVector<f64>, threshold: f64, method: SecondStageMethod) -> Result<Self> {
        let norm = weights.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical(format!("second-stage direction has norm {norm}")));
        }
        let threshold = match method {
            SecondStageMethod::AlwaysPass => f64::NEG_INFINITY,
            _ if threshold.is_finite() => threshold,
            _ => {
                return Err(Error::Numerical(format!(
                    "second-stage threshold {threshold} is not finite"
                )))
            }
        };
        Ok(Self {
            weights,
            threshold,
            method,
        })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn method(&self) -> SecondStageMethod {
        self.method
    }

    /// Evaluated on a point already projected onto the first hyperplane.
    pub fn passes(&self, projected: &DVector<f64>) -> bool {
        if self.method == SecondStageMethod::AlwaysPass {
            return true;
        }
        dot(self.weights.iter(), projected.iter()) - self.threshold >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadePair {
    pub first: CorrectorNode,
    pub second: SecondStage,
}

impl CascadePair {
    pub fn new(first: CorrectorNode, second: SecondStage) -> Result<Self> {
        if first.dim() != second.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                got: second.weights.len(),
            });
        }
        Ok(Self { first, second })
    }

    /// Pair response on a whitened point: both stages must fire.
    pub fn fires(&self, z: &DVector<f64>) -> bool {
        self.first.fires(z) && self.second.passes(&project_to_hyperplane(&self.first, z))
    }
}

/// Correct points (rows of `whitened_correct`) on which `node` fires.
pub fn complementary_set(node: &CorrectorNode, whitened_correct: &DMatrix<f64>) -> DMatrix<f64> {
    let picked: Vec<usize> = (0..whitened_correct.nrows())
        .filter(|&i| node.fires_row(whitened_correct, i))
        .collect();
    whitened_correct.select_rows(&picked)
}

/// Orthogonal projection onto `{z : ⟨ŵ, z⟩ = c}`: `(I − ŵŵᵀ) z + c ŵ`.
pub fn project_to_hyperplane(node: &CorrectorNode, z: &DVector<f64>) -> DVector<f64> {
    let w = node.weights();
    let along = dot(w.iter(), z.iter());
    z + w * (node.threshold() - along)
}

pub fn project_rows(node: &CorrectorNode, points: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = points.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let projected = project_to_hyperplane(node, &points.row(i).transpose());
        row.copy_from(&projected.transpose());
    }
    out
}

/// Fits the second hyperplane on projected pickups `pickups` (to reject)
/// and projected cluster members `cluster` (to keep).
pub fn fit_second_stage(
    pickups: &DMatrix<f64>,
    cluster: &DMatrix<f64>,
    max_epochs: usize,
    rng: RngSpec,
) -> Result<SecondStage> {
    if cluster.nrows() == 0 {
        return Err(Error::Empty("second stage needs at least one cluster point".into()));
    }
    if pickups.nrows() > 0 && pickups.ncols() != cluster.ncols() {
        return Err(Error::DimensionMismatch {
            expected: cluster.ncols(),
            got: pickups.ncols(),
        });
    }
    if pickups.nrows() == 0 {
        return SecondStage::new(mean_direction(cluster), f64::NEG_INFINITY, SecondStageMethod::AlwaysPass);
    }

    if let Some(stage) = perceptron(pickups, cluster, max_epochs, rng) {
        if separates(&stage, pickups, cluster) {
            return Ok(stage);
        }
    }

    let pooled = covariance(pickups) + covariance(cluster);
    let diff = column_means(cluster) - column_means(pickups);
    let w = solve_ridge(&pooled, &diff, FISHER_RIDGE)?;
    let norm = w.norm();
    if !norm.is_finite() {
        return Err(Error::SingularCovariance);
    }
    // equal class means leave no Fisher direction; keep the cluster side
    let unit = if norm > 0.0 { w / norm } else { mean_direction(cluster) };
    let threshold = min_projection(&unit, cluster);
    SecondStage::new(unit, threshold, SecondStageMethod::Fisher)
}

fn mean_direction(cluster: &DMatrix<f64>) -> DVector<f64> {
    let mean = column_means(cluster);
    let norm = mean.norm();
    if norm > 0.0 {
        mean / norm
    } else {
        let mut e = DVector::zeros(cluster.ncols());
        e[0] = 1.0;
        e
    }
}

fn separates(stage: &SecondStage, pickups: &DMatrix<f64>, cluster: &DMatrix<f64>) -> bool {
    let rejects = (0..pickups.nrows()).all(|i| !stage.passes(&pickups.row(i).transpose()));
    let keeps = (0..cluster.nrows()).all(|i| stage.passes(&cluster.row(i).transpose()));
    rejects && keeps
}

/// Online perceptron with bias, unit margin target and unit learning rate.
/// Returns `None` when an epoch without updates is not reached in time.
fn perceptron(
    pickups: &DMatrix<f64>,
    cluster: &DMatrix<f64>,
    max_epochs: usize,
    rng: RngSpec,
) -> Option<SecondStage> {
    let dim = cluster.ncols();
    let samples: Vec<(Vec<f64>, f64)> = pickups
        .row_iter()
        .map(|r| (r.iter().copied().collect(), -1.0))
        .chain(cluster.row_iter().map(|r| (r.iter().copied().collect(), 1.0)))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng.rng();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..max_epochs {
        order.shuffle(&mut rng);
        let mut updated = false;
        for &i in &order {
            let (x, y) = &samples[i];
            let score = dot(w.iter(), x.iter()) + b;
            if y * score < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += y * xj;
                }
                b += y;
                updated = true;
            }
        }
        if !updated {
            let w = DVector::from_vec(w);
            let norm = w.norm();
            if !(norm > 0.0) {
                return None;
            }
            return SecondStage::new(w / norm, -b / norm, SecondStageMethod::Perceptron).ok();
        }
    }
    None
}

/// Evaluates a pair on a raw feature vector.
pub fn pair_fire(prep: &PreprocessModel, pair: &CascadePair, x: &DVector<f64>) -> Result<bool> {
    let z = prep.transform(x)?;
    if z.len() != pair.first.dim() {
        return Err(Error::DimensionMismatch {
            expected: pair.first.dim(),
            got: z.len(),
        });
    }
    Ok(pair.fires(&z))
}

//! Centering, principal-component regularisation, whitening and the optional
//! projection onto the unit sphere.
//!
//! The fitted [`PreprocessModel`] maps a raw feature vector `x` to
//! `W Hᵀ (x − mean)`, optionally rescaled to unit length, where `H` holds the
//! retained eigenvectors of the training covariance and `W` is the symmetric
//! inverse square root of the covariance in the reduced coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{column_means, covariance, inverse_sqrt, sorted_eigen, symmetrize};

/// How many principal components survive regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Keep every eigenvalue strictly above the mean eigenvalue.
    KaiserGuttman,
    /// Keep the leading eigenvalues whose ratio `λ_max / λ` stays within the bound.
    ConditionBound(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub project_to_sphere: bool,
    /// Smallest eigenvalue of the reduced covariance that may be inverted.
    pub eig_floor: f64,
    pub retention: Retention,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            project_to_sphere: false,
            eig_floor: 1e-10,
            retention: Retention::KaiserGuttman,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessModel {
    pub(crate) mean: DVector<f64>,
    /// n × m, orthonormal columns.
    pub(crate) basis: DMatrix<f64>,
    /// m × m, symmetric positive definite.
    pub(crate) whitening: DMatrix<f64>,
    pub(crate) project_to_sphere: bool,
}

/// Spectrum seen while fitting, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub retained: Vec<usize>,
}

impl PreprocessModel {
    pub fn from_parts(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        whitening: DMatrix<f64>,
        project_to_sphere: bool,
    ) -> Result<Self> {
        let (n, m) = basis.shape();
        if m == 0 {
            return Err(Error::InvalidArgument("retained dimension must be at least 1".into()));
        }
        if mean.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mean.len(),
            });
        }
        if whitening.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: whitening.nrows(),
            });
        }
        Ok(Self {
            mean,
            basis,
            whitening,
            project_to_sphere,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    pub fn projects_to_sphere(&self) -> bool {
        self.project_to_sphere
    }

    /// Whitened (and, if configured, sphere-projected) image of one sample.
    pub fn transform(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let reduced = self.basis.tr_mul(&(x - &self.mean));
        let z = &self.whitening * reduced;
        if self.project_to_sphere {
            sphere_project(z)
        } else {
            Ok(z)
        }
    }

    /// Row-wise [`transform`](Self::transform) of a sample matrix. Goes through
    /// the per-sample path so both agree to the last bit.
    pub fn transform_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: rows.ncols(),
            });
        }
        let images = (0..rows.nrows())
            .into_par_iter()
            .map(|i| self.transform(&rows.row(i).transpose()))
            .collect::<Result<Vec<_>>>()?;
        let m = self.output_dim();
        Ok(DMatrix::from_fn(rows.nrows(), m, |i, j| images[i][j]))
    }
}

const ZERO_NORM: f64 = 1e-12;

fn sphere_project(z: DVector<f64>) -> Result<DVector<f64>> {
    let norm = z.norm();
    if norm < ZERO_NORM {
        return Err(Error::ZeroProjection { norm });
    }
    Ok(z / norm)
}

/// Subtracts the column means of the full sample set.
pub fn center(data: &LabeledDataset) -> (DMatrix<f64>, DVector<f64>) {
    let mean = column_means(data.features());
    let mut centered = data.features().clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    (centered, mean)
}

fn check_spectrum(eigenvalues: &[f64]) -> Result<()> {
    if eigenvalues.is_empty() {
        return Err(Error::Empty("no eigenvalues".into()));
    }
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("eigenvalues must be sorted descending".into()));
    }
    let scale = eigenvalues[0].abs().max(1.0);
    if let Some(bad) = eigenvalues.iter().find(|v| **v < -1e-8 * scale || !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "covariance is not positive semidefinite (eigenvalue {bad:e})"
        )));
    }
    Ok(())
}

/// Indices of eigenvalues strictly above their mean; the largest alone when
/// none qualifies.
pub fn kaiser_guttman_select(eigenvalues: &[f64]) -> Result<Vec<usize>> {
    check_spectrum(eigenvalues)?;
    let mean = eigenvalues.iter().sum::<f64>() / eigenvalues.len() as f64;
    let kept: Vec<usize> = (0..eigenvalues.len()).filter(|&i| eigenvalues[i] > mean).collect();
    Ok(if kept.is_empty() { vec![0] } else { kept })
}

/// Leading indices whose eigenvalue keeps `λ_max / λ <= max_ratio`.
pub fn condition_bound_select(eigenvalues: &[f64], max_ratio: f64) -> Result<Vec<usize>> {
    check_spectrum(eigenvalues)?;
    if !(max_ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "condition bound must be >= 1, got {max_ratio}"
        )));
    }
    let top = eigenvalues[0];
    let kept: Vec<usize> = (0..eigenvalues.len())
        .take_while(|&i| eigenvalues[i] > 0.0 && top / eigenvalues[i] <= max_ratio)
        .collect();
    Ok(if kept.is_empty() { vec![0] } else { kept })
}

pub fn fit_preprocess(data: &LabeledDataset, config: &PreprocessConfig) -> Result<PreprocessModel> {
    fit_preprocess_with_summary(data, config).map(|(model, _)| model)
}

pub fn fit_preprocess_with_summary(
    data: &LabeledDataset,
    config: &PreprocessConfig,
) -> Result<(PreprocessModel, SpectrumSummary)> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "preprocessing needs at least 2 samples, got {}",
            data.len()
        )));
    }
    let (centered, mean) = center(data);
    let mut cov = centered.transpose() * &centered;
    cov /= (data.len() - 1) as f64;
    symmetrize(&mut cov);

    let (eigenvalues, eigenvectors) = sorted_eigen(&cov);
    let retained = match config.retention {
        Retention::KaiserGuttman => kaiser_guttman_select(&eigenvalues)?,
        Retention::ConditionBound(bound) => condition_bound_select(&eigenvalues, bound)?,
    };
    let basis = eigenvectors.select_columns(&retained);
    let reduced = &centered * &basis;
    let whitening = inverse_sqrt(&covariance(&reduced), config.eig_floor)?;

    let model = PreprocessModel {
        mean,
        basis,
        whitening,
        project_to_sphere: config.project_to_sphere,
    };
    Ok((model, SpectrumSummary { eigenvalues, retained }))
}

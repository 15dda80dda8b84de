//! Small dense helpers shared by the preprocessing and node builders.
//! Point sets are matrices with one sample per row.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Plain left-to-right dot product. Node activations and thresholds both go
/// through this so that the minimising cluster member lands exactly on zero.
pub fn dot<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn column_means(points: &DMatrix<f64>) -> DVector<f64> {
    let n = points.nrows().max(1) as f64;
    points.row_sum().transpose() / n
}

/// Sample covariance with the `1/(N-1)` estimator. A single point has zero
/// covariance by convention.
pub fn covariance(points: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = points.ncols();
    let rows = points.nrows();
    if rows < 2 {
        return DMatrix::zeros(dim, dim);
    }
    let mean = column_means(points);
    let mut centered = points.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered;
    cov /= (rows - 1) as f64;
    symmetrize(&mut cov);
    cov
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
pub fn sorted_eigen(matrix: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// Symmetric inverse square root `V diag(1/sqrt(λ)) Vᵀ`.
pub fn inverse_sqrt(matrix: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(matrix);
    if let Some(&smallest) = values.last() {
        if !(smallest >= floor) {
            return Err(Error::WhiteningSingular {
                value: smallest,
                floor,
            });
        }
    }
    let scale = DVector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v.sqrt()));
    let mut out = &vectors * DMatrix::from_diagonal(&scale) * vectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` after adding
/// `ridge * I`.
pub fn solve_ridge(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += ridge;
    }
    if let Some(chol) = reg.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    reg.lu().solve(b).ok_or(Error::SingularCovariance)
}

/// Running first and second moments of a point set. Lets callers form the
/// covariance of "everything except a subset" without touching the rest.
#[derive(Debug, Clone)]
pub struct Scatter {
    pub count: usize,
    pub sum: DVector<f64>,
    pub outer: DMatrix<f64>,
}

impl Scatter {
    pub fn of(points: &DMatrix<f64>) -> Scatter {
        Scatter {
            count: points.nrows(),
            sum: points.row_sum().transpose(),
            outer: points.transpose() * points,
        }
    }

    pub fn minus(&self, other: &Scatter) -> Scatter {
        Scatter {
            count: self.count - other.count,
            sum: &self.sum - &other.sum,
            outer: &self.outer - &other.outer,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count.max(1) as f64
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let dim = self.sum.len();
        if self.count < 2 {
            return DMatrix::zeros(dim, dim);
        }
        let mean = self.mean();
        let mut cov = &self.outer - (&mean * mean.transpose()) * self.count as f64;
        cov /= (self.count - 1) as f64;
        symmetrize(&mut cov);
        cov
    }
}

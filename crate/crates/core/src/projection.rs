//! SVD observable basis: raw embeddings are centered on the fit-data mean and
//! projected onto the dominant left singular vectors of the pooled fit
//! snapshots.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmbeddingTrajectory};
use crate::error::{Error, Result};

/// Default number of retained SVD modes.
pub const DEFAULT_RANK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Subtract the pooled column mean before the SVD.
    #[default]
    Mean,
    /// Use raw snapshots; the stored mean is the zero vector.
    None,
}

/// Mean vector plus an orthonormal `M x r` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableMap {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl ObservableMap {
    /// Builds a map from parts, checking shapes and orthonormality.
    ///
    /// `singular_values` may be empty when the spectrum is unknown (for example
    /// a map read back from a model file without a diagnostics trailer).
    pub fn from_parts(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        if basis.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "observable basis rows vs mean length".into(),
                expected: mean.len(),
                found: basis.nrows(),
            });
        }
        if !singular_values.is_empty() && singular_values.len() != basis.ncols() {
            return Err(Error::DimensionMismatch {
                context: "singular value count vs basis rank".into(),
                expected: basis.ncols(),
                found: singular_values.len(),
            });
        }
        if mean.iter().chain(basis.iter()).any(|v| !v.is_finite()) {
            return Err(Error::MalformedFile(
                "observable map has non-finite entries".into(),
            ));
        }
        Ok(Self {
            mean,
            basis,
            singular_values,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `Phi^T (y_raw - mean)`.
    pub fn project(&self, y_raw: &[f64]) -> Result<Vec<f64>> {
        if y_raw.len() != self.embedding_dim() {
            return Err(Error::DimensionMismatch {
                context: "raw embedding length".into(),
                expected: self.embedding_dim(),
                found: y_raw.len(),
            });
        }
        let mut out = vec![0.0; self.rank()];
        self.project_into(y_raw, &mut out);
        Ok(out)
    }

    /// Projection without the length check. Each output entry is a plain
    /// sequential dot product so results do not depend on neighbouring tokens.
    pub(crate) fn project_into(&self, y_raw: &[f64], out: &mut [f64]) {
        let mean = self.mean.as_slice();
        let dim = mean.len();
        if dim == 0 {
            out.fill(0.0);
            return;
        }
        for (slot, col) in out.iter_mut().zip(self.basis.as_slice().chunks_exact(dim)) {
            let mut acc = 0.0;
            for ((&u, &y), &m) in col.iter().zip(y_raw).zip(mean) {
                acc += u * (y - m);
            }
            *slot = acc;
        }
    }

    /// Projects every token of a trajectory; result is `r x L`.
    pub fn project_trajectory(&self, traj: &EmbeddingTrajectory) -> Result<DMatrix<f64>> {
        if traj.embedding_dim() != self.embedding_dim() {
            return Err(Error::DimensionMismatch {
                context: format!("embedding dim of record '{}'", traj.id()),
                expected: self.embedding_dim(),
                found: traj.embedding_dim(),
            });
        }
        let mut out = DMatrix::zeros(self.rank(), traj.len());
        for (k, col) in traj.data().column_iter().enumerate() {
            let mut column = out.column_mut(k);
            self.project_into(col.as_slice(), column.as_mut_slice());
        }
        Ok(out)
    }
}

/// Fits the mean-centered observable map with `min(target_rank, M, tokens)` modes.
pub fn fit_observable_map(fit_data: &Dataset, target_rank: usize) -> Result<ObservableMap> {
    fit_observable_map_with(fit_data, target_rank, Centering::Mean)
}

pub fn fit_observable_map_with(
    fit_data: &Dataset,
    target_rank: usize,
    centering: Centering,
) -> Result<ObservableMap> {
    let dim = fit_data.embedding_dim().ok_or(Error::EmptyDataset)?;
    if target_rank == 0 {
        return Err(Error::InvalidConfig(
            "target rank must be at least 1".into(),
        ));
    }
    let total: usize = fit_data.trajectories().iter().map(|t| t.len()).sum();
    let mut snapshots = DMatrix::zeros(dim, total);
    let mut offset = 0;
    for t in fit_data.trajectories() {
        snapshots.columns_mut(offset, t.len()).copy_from(t.data());
        offset += t.len();
    }
    fit_snapshot_basis(snapshots, target_rank, centering)
}

/// Fits the basis directly from an `M x N` snapshot matrix.
pub fn fit_snapshot_basis(
    mut snapshots: DMatrix<f64>,
    target_rank: usize,
    centering: Centering,
) -> Result<ObservableMap> {
    let (dim, total) = snapshots.shape();
    if dim == 0 || total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mean = match centering {
        Centering::Mean => {
            // Sequential column sum: deterministic and independent of SIMD paths.
            let mut mean = DVector::zeros(dim);
            for col in snapshots.column_iter() {
                mean += col;
            }
            mean / total as f64
        }
        Centering::None => DVector::zeros(dim),
    };
    for mut col in snapshots.column_iter_mut() {
        col -= &mean;
    }

    let rank = target_rank.min(dim).min(total);
    // Wide inputs go through S^T = QR first: R^T is square with the same left
    // singular vectors, and the bidiagonal iteration on it converges cleanly
    // where the direct decomposition of a near rank-deficient S can stall.
    let svd = if dim < total {
        SVD::new(snapshots.transpose().qr().r().transpose(), true, false)
    } else {
        SVD::new(snapshots.clone(), true, false)
    };
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(rank);

    let mut basis = DMatrix::zeros(dim, rank);
    let mut singular_values = Vec::with_capacity(rank);
    for (j, &src) in order.iter().enumerate() {
        let mut col = u.column(src).into_owned();
        if orientation_sign(&col, &snapshots) < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
        singular_values.push(svd.singular_values[src].max(0.0));
    }
    ObservableMap::from_parts(mean, basis, singular_values)
}

/// Sign convention for a singular vector `u`: the projected (centered)
/// snapshots should have a positive third moment. This is invariant under
/// rotations of the embedding space, so a rotated copy of the data yields the
/// rotated basis. Falls back to making the largest-magnitude entry positive
/// when the third moment vanishes.
fn orientation_sign(u: &DVector<f64>, centered: &DMatrix<f64>) -> f64 {
    let mut third = 0.0;
    let mut scale = 0.0;
    for col in centered.column_iter() {
        let p = u.dot(&col);
        third += p * p * p;
        scale += (p * p * p).abs();
    }
    if scale > 0.0 && third.abs() > 1e-8 * scale {
        return third.signum();
    }
    let pivot = u
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    if pivot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

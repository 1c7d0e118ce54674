//! Extended DMD: snapshot matrices of lifted observables and the truncated
//! pseudoinverse fit `A = X+ pinv(X)`.

use nalgebra::{DMatrix, SVD};

use crate::data::{Dataset, EmbeddingTrajectory, Label};
use crate::error::{Error, Result};
use crate::lift::{Lift, LiftConfig};
use crate::projection::ObservableMap;

/// Default relative singular-value cutoff for the pseudoinverse.
pub const DEFAULT_SV_REL_TOL: f64 = 1e-10;

/// Column-aligned snapshot pairs: column `j` of `x_plus` is the successor of
/// column `j` of `x` within the same trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrices {
    pub x: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
}

impl SnapshotMatrices {
    pub fn new(x: DMatrix<f64>, x_plus: DMatrix<f64>) -> Result<Self> {
        if x.shape() != x_plus.shape() {
            return Err(Error::DimensionMismatch {
                context: "snapshot matrices X and X+ columns".into(),
                expected: x.ncols(),
                found: x_plus.ncols(),
            });
        }
        Ok(Self { x, x_plus })
    }

    /// Number of transitions (q).
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }
}

/// Finite-dimensional Koopman approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanOperator {
    matrix: DMatrix<f64>,
    /// Number of singular values of X kept in the pseudoinverse.
    pub fit_rank: usize,
    pub sv_tolerance: f64,
    /// Full singular spectrum of X (diagnostics).
    pub spectrum: Vec<f64>,
    /// `||X+ - A X||_F` on the fit data, when known.
    pub fit_residual: Option<f64>,
}

impl KoopmanOperator {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                context: "operator must be square".into(),
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedFile(
                "operator has non-finite entries".into(),
            ));
        }
        let n = matrix.nrows();
        Ok(Self {
            matrix,
            fit_rank: n,
            sv_tolerance: 0.0,
            spectrum: Vec::new(),
            fit_residual: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub(crate) fn with_diagnostics(
        mut self,
        fit_rank: usize,
        sv_tolerance: f64,
        spectrum: Vec<f64>,
        fit_residual: Option<f64>,
    ) -> Self {
        self.fit_rank = fit_rank;
        self.sv_tolerance = sv_tolerance;
        self.spectrum = spectrum;
        self.fit_residual = fit_residual;
        self
    }
}

/// Projects and lifts each token of `traj`; result is `(r + gamma) x L`.
pub fn lifted_states(
    traj: &EmbeddingTrajectory,
    map: &ObservableMap,
    lift: &impl Lift,
) -> Result<DMatrix<f64>> {
    let projected = map.project_trajectory(traj)?;
    let r = map.rank();
    let n = r + lift.lift_dim();
    let mut z = DMatrix::zeros(n, traj.len());
    for k in 0..traj.len() {
        let y = projected.column(k);
        let mut col = z.column_mut(k);
        let slab = col.as_mut_slice();
        slab[..r].copy_from_slice(y.as_slice());
        lift.lift_block(y.as_slice(), &mut slab[r..]);
    }
    Ok(z)
}

pub fn build_snapshots<'a>(
    trajs: impl IntoIterator<Item = &'a EmbeddingTrajectory>,
    map: &ObservableMap,
    lift: &LiftConfig,
) -> Result<SnapshotMatrices> {
    lift.validate_for_rank(map.rank())?;
    let lifter = lift.lifter();
    let n = map.rank() + lifter.lift_dim();
    let mut blocks = Vec::new();
    for t in trajs {
        if t.len() < 2 {
            return Err(Error::TrajectoryTooShort {
                id: t.id().to_owned(),
                length: t.len(),
            });
        }
        blocks.push(lifted_states(t, map, &lifter)?);
    }
    let q: usize = blocks.iter().map(|b| b.ncols() - 1).sum();
    let mut x = DMatrix::zeros(n, q);
    let mut x_plus = DMatrix::zeros(n, q);
    let mut offset = 0;
    for z in &blocks {
        let steps = z.ncols() - 1;
        x.columns_mut(offset, steps).copy_from(&z.columns(0, steps));
        x_plus
            .columns_mut(offset, steps)
            .copy_from(&z.columns(1, steps));
        offset += steps;
    }
    SnapshotMatrices::new(x, x_plus)
}

/// `A = X+ V_k S_k^-1 U_k^T`, keeping singular values above
/// `sv_rel_tol * sigma_1` and at most `rank_cap` of them.
pub fn fit_operator(
    snap: &SnapshotMatrices,
    rank_cap: Option<usize>,
    sv_rel_tol: f64,
) -> Result<KoopmanOperator> {
    if snap.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    if !(sv_rel_tol > 0.0 && sv_rel_tol < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sv_rel_tol must be in (0, 1), got {sv_rel_tol}"
        )));
    }
    let n = snap.state_dim();
    let svd = SVD::new(snap.x.clone(), true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V^T requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = spectrum.first().copied().unwrap_or(0.0);
    let cutoff = sv_rel_tol * sigma_max;
    let mut keep = spectrum
        .iter()
        .take_while(|&&s| s > cutoff && s > 0.0)
        .count();
    if let Some(cap) = rank_cap {
        keep = keep.min(cap);
    }

    // W = U_k S_k^-1  (n x k),  VT = V_k^T (k x q)
    let q = snap.len();
    let mut w = DMatrix::zeros(n, keep);
    let mut vt = DMatrix::zeros(keep, q);
    for (j, &src) in order.iter().take(keep).enumerate() {
        let inv = 1.0 / svd.singular_values[src];
        w.set_column(j, &(u.column(src) * inv));
        vt.set_row(j, &v_t.row(src));
    }
    let matrix = (&snap.x_plus * vt.transpose()) * w.transpose();
    let fit_residual = (&snap.x_plus - &matrix * &snap.x).norm();
    Ok(KoopmanOperator::from_matrix(matrix)?.with_diagnostics(
        keep,
        sv_rel_tol,
        spectrum,
        Some(fit_residual),
    ))
}

/// Fits `(A_c, A_h)` on factual and hallucinated trajectories respectively.
/// Minor-inaccuracy and unlabeled trajectories take no part in either fit.
pub fn fit_pair(
    fit_set: &Dataset,
    map: &ObservableMap,
    lift: &LiftConfig,
    rank_cap: Option<usize>,
    sv_rel_tol: f64,
) -> Result<(KoopmanOperator, KoopmanOperator)> {
    for class in [Label::Factual, Label::Hallucinated] {
        if fit_set.labeled(class).next().is_none() {
            return Err(Error::MissingClass(class));
        }
    }
    let fit_class = |class: Label| -> Result<KoopmanOperator> {
        let snap = build_snapshots(fit_set.labeled(class), map, lift)?;
        fit_operator(&snap, rank_cap, sv_rel_tol)
    };
    let (factual, hallucinated) = std::thread::scope(|s| {
        let h = s.spawn(|| fit_class(Label::Hallucinated));
        let c = fit_class(Label::Factual);
        (c, h.join().expect("hallucinated-class fit panicked"))
    });
    Ok((factual?, hallucinated?))
}

//! One-step prediction residuals and the differential residual score.
//!
//! For lifted states `z_k` and observables `y_k`, the residual of operator `A`
//! at step `k` is `|| y_{k+1} - [I 0] A z_k ||_2`: only the first `r`
//! predicted components are compared. The token score is
//! `eps_h[k] - eps_c[k]` and the response score is `||eps_h|| - ||eps_c||`.
//! A response is classified hallucinated iff its score is strictly below the
//! threshold.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTrajectory, Label};
use crate::edmd::{lifted_states, KoopmanOperator};
use crate::error::{Error, Result};
use crate::lift::{Lift, LiftConfig};
use crate::model::DetectorModel;
use crate::projection::ObservableMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub id: String,
    pub response_score: f64,
    pub predicted: Label,
    pub truth: Option<Label>,
    pub token_scores: Vec<f64>,
    pub eps_c: Vec<f64>,
    pub eps_h: Vec<f64>,
    /// `response_score / sqrt(L - 1)`. Not used for classification.
    pub length_normalized_score: f64,
    /// Token range `[start, end)` when the report covers a window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[usize; 2]>,
}

impl ScoreReport {
    /// Number of tokens scored (transitions + 1).
    pub fn length(&self) -> usize {
        self.token_scores.len() + 1
    }
}

/// Hallucinated iff `score < threshold`; ties go to factual.
pub fn classify(score: f64, threshold: f64) -> Label {
    if score < threshold {
        Label::Hallucinated
    } else {
        Label::Factual
    }
}

/// Euclidean norm with a fixed left-to-right summation order.
pub(crate) fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-transition residuals from precomputed lifted states (`n x L`).
fn residuals_from_lifted(z: &DMatrix<f64>, op: &KoopmanOperator, rank: usize) -> Vec<f64> {
    let n = z.nrows();
    if n == 0 {
        return vec![0.0; z.ncols().saturating_sub(1)];
    }
    // Rows of the observable block of A, stored contiguously.
    let rows = op.matrix().rows(0, rank).transpose();
    let rows = rows.as_slice();
    let zs = z.as_slice();
    (0..z.ncols().saturating_sub(1))
        .map(|k| {
            let current = &zs[k * n..(k + 1) * n];
            let next = &zs[(k + 1) * n..(k + 2) * n];
            let mut sq = 0.0;
            for (i, row) in rows.chunks_exact(n).enumerate() {
                let mut pred = 0.0;
                for (a, zj) in row.iter().zip(current) {
                    pred += a * zj;
                }
                let d = next[i] - pred;
                sq += d * d;
            }
            sq.sqrt()
        })
        .collect()
}

fn check_operator(op: &KoopmanOperator, map: &ObservableMap, lift: &impl Lift) -> Result<()> {
    let side = map.rank() + lift.lift_dim();
    if op.dim() != side {
        return Err(Error::DimensionMismatch {
            context: "operator side vs r + gamma".into(),
            expected: side,
            found: op.dim(),
        });
    }
    Ok(())
}

fn check_length(traj: &EmbeddingTrajectory) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::TrajectoryTooShort {
            id: traj.id().to_owned(),
            length: traj.len(),
        });
    }
    Ok(())
}

/// Residual vector of length `L - 1` for a single operator.
pub fn transition_residuals(
    traj: &EmbeddingTrajectory,
    op: &KoopmanOperator,
    map: &ObservableMap,
    lift: &LiftConfig,
) -> Result<Vec<f64>> {
    check_length(traj)?;
    lift.validate_for_rank(map.rank())?;
    let lifter = lift.lifter();
    check_operator(op, map, &lifter)?;
    let z = lifted_states(traj, map, &lifter)?;
    Ok(residuals_from_lifted(&z, op, map.rank()))
}

pub fn score_trajectory(traj: &EmbeddingTrajectory, model: &DetectorModel) -> Result<ScoreReport> {
    check_length(traj)?;
    let map = model.observable_map();
    let lifter = model.lift_config().lifter();
    let z = lifted_states(traj, map, &lifter)?;
    let eps_c = residuals_from_lifted(&z, model.op_factual(), map.rank());
    let eps_h = residuals_from_lifted(&z, model.op_halluc(), map.rank());
    Ok(assemble(traj, eps_c, eps_h, model.threshold, None))
}

fn assemble(
    traj: &EmbeddingTrajectory,
    eps_c: Vec<f64>,
    eps_h: Vec<f64>,
    threshold: f64,
    window: Option<[usize; 2]>,
) -> ScoreReport {
    let token_scores: Vec<f64> = eps_h.iter().zip(&eps_c).map(|(h, c)| h - c).collect();
    let response_score = l2(&eps_h) - l2(&eps_c);
    let truth = match traj.label() {
        Label::Unlabeled => None,
        other => Some(other),
    };
    ScoreReport {
        id: traj.id().to_owned(),
        response_score,
        predicted: classify(response_score, threshold),
        truth,
        length_normalized_score: response_score / (token_scores.len() as f64).sqrt(),
        token_scores,
        eps_c,
        eps_h,
        window,
    }
}

/// Scores the token range `[start, end)` as if it were a standalone response.
pub fn score_window(
    traj: &EmbeddingTrajectory,
    model: &DetectorModel,
    start: usize,
    end: usize,
) -> Result<ScoreReport> {
    if end > traj.len() {
        return Err(Error::IndexOutOfRange {
            index: end,
            limit: traj.len(),
        });
    }
    if start >= end {
        return Err(Error::IndexOutOfRange {
            index: start,
            limit: end,
        });
    }
    if end - start < 2 {
        return Err(Error::WindowTooShort { start, end });
    }
    let sub = traj.slice(start, end)?;
    let mut report = score_trajectory(&sub, model)?;
    report.window = Some([start, end]);
    Ok(report)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, Label};
use crate::edmd::{fit_pair, KoopmanOperator, DEFAULT_SV_REL_TOL};
use crate::error::{Error, Result};
use crate::lift::LiftConfig;
use crate::projection::{fit_observable_map_with, Centering, ObservableMap, DEFAULT_RANK};

/// A fitted detector: shared observable map and lift, one operator per
/// class, and the decision threshold on the response score.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    observable_map: ObservableMap,
    lift_config: LiftConfig,
    op_factual: KoopmanOperator,
    op_halluc: KoopmanOperator,
    pub threshold: f64,
    pub fit_metadata: BTreeMap<String, Value>,
}

impl DetectorModel {
    pub fn new(
        observable_map: ObservableMap,
        lift_config: LiftConfig,
        op_factual: KoopmanOperator,
        op_halluc: KoopmanOperator,
        threshold: f64,
    ) -> Result<Self> {
        lift_config.validate_for_rank(observable_map.rank())?;
        let side = observable_map.rank() + lift_config.lift_dim();
        for op in [&op_factual, &op_halluc] {
            if op.dim() != side {
                return Err(Error::DimensionMismatch {
                    context: "operator side vs r + gamma".into(),
                    expected: side,
                    found: op.dim(),
                });
            }
        }
        if !threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        Ok(Self {
            observable_map,
            lift_config,
            op_factual,
            op_halluc,
            threshold,
            fit_metadata: BTreeMap::new(),
        })
    }

    pub fn observable_map(&self) -> &ObservableMap {
        &self.observable_map
    }

    pub fn lift_config(&self) -> &LiftConfig {
        &self.lift_config
    }

    pub fn op_factual(&self) -> &KoopmanOperator {
        &self.op_factual
    }

    pub fn op_halluc(&self) -> &KoopmanOperator {
        &self.op_halluc
    }

    /// Side length of both operators (`r + gamma`).
    pub fn state_dim(&self) -> usize {
        self.op_factual.dim()
    }

    /// Same model with the two operators exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            op_factual: self.op_halluc.clone(),
            op_halluc: self.op_factual.clone(),
            ..self.clone()
        }
    }

    /// Same operators and lift, but a different observable map: the
    /// cross-embedding setting where the target space brings its own basis.
    pub fn with_observable_map(&self, map: ObservableMap) -> Result<Self> {
        let target = map.rank() + self.lift_config.lift_dim();
        if target != self.state_dim() || self.lift_config.subset_size > map.rank() {
            return Err(Error::CrossDimMismatch {
                model: self.state_dim(),
                target,
            });
        }
        Ok(Self {
            observable_map: map,
            ..self.clone()
        })
    }
}

/// Hyperparameters of a detector fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub rank: usize,
    pub centering: Centering,
    pub lift: LiftConfig,
    pub rank_cap: Option<usize>,
    pub sv_rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            centering: Centering::Mean,
            lift: LiftConfig::default(),
            rank_cap: None,
            sv_rel_tol: DEFAULT_SV_REL_TOL,
        }
    }
}

/// Fits the observable map on all fit trajectories, then both operators.
/// The threshold starts at 0. Metadata records the fit diagnostics.
pub fn fit_detector(fit_set: &Dataset, options: &FitOptions) -> Result<DetectorModel> {
    options.lift.validate()?;
    if fit_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let map = fit_observable_map_with(fit_set, options.rank, options.centering)?;
    let (op_c, op_h) = fit_pair(
        fit_set,
        &map,
        &options.lift,
        options.rank_cap,
        options.sv_rel_tol,
    )?;
    let transitions = |label: Label| -> usize { fit_set.labeled(label).map(|t| t.len() - 1).sum() };

    let mut meta = BTreeMap::new();
    meta.insert("dataset_tag".into(), json!(fit_set.embedding_model_tag()));
    meta.insert("rank".into(), json!(map.rank()));
    meta.insert("target_rank".into(), json!(options.rank));
    meta.insert("lift_dim".into(), json!(options.lift.lift_dim()));
    meta.insert("centering".into(), json!(options.centering));
    meta.insert("sv_rel_tol".into(), json!(options.sv_rel_tol));
    meta.insert("rank_cap".into(), json!(options.rank_cap));
    for (tag, label, op) in [
        ("factual", Label::Factual, &op_c),
        ("hallucinated", Label::Hallucinated, &op_h),
    ] {
        meta.insert(format!("transitions_{tag}"), json!(transitions(label)));
        meta.insert(format!("fit_rank_{tag}"), json!(op.fit_rank));
        meta.insert(format!("fit_residual_{tag}"), json!(op.fit_residual));
    }

    let mut model = DetectorModel::new(map, options.lift, op_c, op_h, 0.0)?;
    model.fit_metadata = meta;
    Ok(model)
}

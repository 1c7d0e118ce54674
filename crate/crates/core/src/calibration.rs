//! Threshold calibration from demonstration samples.
//!
//! Minor-inaccuracy samples are relabeled according to the user's tolerance,
//! every candidate threshold from the sweep is scored with the target metric,
//! and the best one is kept. Ties go to the larger threshold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::metrics::{report_from_sweep, sweep_thresholds, Confusion, EvalReport, LabeledScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    F1,
    BalancedAccuracy,
    Youden,
}

impl Metric {
    pub fn value(self, c: &Confusion) -> f64 {
        match self {
            Metric::F1 => c.f1(),
            Metric::BalancedAccuracy => c.balanced_accuracy(),
            Metric::Youden => c.youden(),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Metric::F1),
            "balanced_accuracy" | "balanced-accuracy" => Ok(Metric::BalancedAccuracy),
            "youden" => Ok(Metric::Youden),
            _ => Err(Error::InvalidConfig(format!("unknown metric '{s}'"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::F1 => "f1",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Youden => "youden",
        })
    }
}

/// How minor-inaccuracy samples count during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinorPolicy {
    /// Minor inaccuracies count as hallucinations.
    #[serde(alias = "strict")]
    TreatAsHallucinated,
    /// Minor inaccuracies count as factual.
    #[serde(alias = "tolerant")]
    TreatAsFactual,
    #[default]
    Exclude,
}

impl MinorPolicy {
    /// Binary truth for a label under this policy; `None` drops the sample.
    pub fn relabel(self, label: Label) -> Option<bool> {
        match (label, self) {
            (Label::Hallucinated, _) => Some(true),
            (Label::Factual, _) => Some(false),
            (Label::MinorInaccurate, MinorPolicy::TreatAsHallucinated) => Some(true),
            (Label::MinorInaccurate, MinorPolicy::TreatAsFactual) => Some(false),
            (Label::MinorInaccurate, MinorPolicy::Exclude) => None,
            (Label::Unlabeled, _) => None,
        }
    }

    pub fn apply(self, samples: &[CalibrationSample]) -> Vec<LabeledScore> {
        samples
            .iter()
            .filter_map(|s| {
                self.relabel(s.label).map(|hallucinated| LabeledScore {
                    id: s.id.clone(),
                    score: s.score,
                    hallucinated,
                    passage_id: s.passage_id.clone(),
                })
            })
            .collect()
    }
}

impl FromStr for MinorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" | "treat_as_hallucinated" => Ok(MinorPolicy::TreatAsHallucinated),
            "tolerant" | "treat_as_factual" => Ok(MinorPolicy::TreatAsFactual),
            "exclude" => Ok(MinorPolicy::Exclude),
            _ => Err(Error::InvalidConfig(format!("unknown minor policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub metric: Metric,
    pub minor_policy: MinorPolicy,
}

/// A scored demonstration with its full (possibly minor) label.
/// Unlabeled samples are ignored by calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub id: String,
    pub score: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_id: Option<String>,
}

impl CalibrationSample {
    pub fn new(id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            id: id.into(),
            score,
            label,
            passage_id: None,
        }
    }
}

/// Returns the metric-maximizing threshold and the evaluation at it.
pub fn calibrate(
    samples: &[CalibrationSample],
    spec: &CalibrationSpec,
) -> Result<(f64, EvalReport)> {
    let scores = spec.minor_policy.apply(samples);
    let sweep = sweep_thresholds(&scores)?;
    let mut best = &sweep[0];
    let mut best_value = spec.metric.value(&best.confusion);
    for point in &sweep[1..] {
        let value = spec.metric.value(&point.confusion);
        // Candidates ascend, so `>=` breaks ties toward the larger threshold.
        if value >= best_value {
            best = point;
            best_value = value;
        }
    }
    let threshold = best.threshold;
    Ok((threshold, report_from_sweep(&scores, &sweep, threshold)))
}

//! Threshold sweeps and evaluation metrics.
//!
//! Hallucinated is the positive class. A sample is predicted positive when
//! its score is strictly below the threshold, so low scores rank as "more
//! hallucinated".

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::scoring::classify;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub id: String,
    pub score: f64,
    /// Ground truth; `true` means hallucinated.
    pub hallucinated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_id: Option<String>,
}

impl LabeledScore {
    pub fn new(id: impl Into<String>, score: f64, hallucinated: bool) -> Self {
        Self {
            id: id.into(),
            score,
            hallucinated,
            passage_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    /// Confusion counts of the thresholded decision rule, by direct recount.
    pub fn at_threshold(scores: &[LabeledScore], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for s in scores {
            let predicted = classify(s.score, threshold) == Label::Hallucinated;
            match (predicted, s.hallucinated) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.positives())
    }

    pub fn tnr(&self) -> f64 {
        ratio(self.tn, self.negatives())
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.negatives())
    }

    /// Zero when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.tpr() + self.tnr()) / 2.0
    }

    /// Youden's J statistic, `TPR + TNR - 1`.
    pub fn youden(&self) -> f64 {
        self.tpr() + self.tnr() - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub confusion: Confusion,
}

fn validate(scores: &[LabeledScore]) -> Result<()> {
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::NonFiniteScore(bad.id.clone()));
    }
    if !scores.iter().any(|s| s.hallucinated) {
        return Err(Error::SingleClassInput(Label::Hallucinated));
    }
    if !scores.iter().any(|s| !s.hallucinated) {
        return Err(Error::SingleClassInput(Label::Factual));
    }
    Ok(())
}

/// Candidate thresholds, ascending: one below the minimum score, the
/// midpoints between consecutive distinct scores, and one above the maximum.
pub fn candidate_thresholds(scores: &[LabeledScore]) -> Vec<f64> {
    let mut values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let (Some(&lo), Some(&hi)) = (values.first(), values.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(values.len() + 1);
    out.push(lo - 1.0 - lo.abs());
    out.extend(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(hi + 1.0 + hi.abs());
    out
}

/// Confusion counts at every candidate threshold, in ascending threshold order.
pub fn sweep_thresholds(scores: &[LabeledScore]) -> Result<Vec<SweepPoint>> {
    validate(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.hallucinated)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // positives_below[i] = positives among the i smallest scores
    let mut positives_below = Vec::with_capacity(sorted.len() + 1);
    positives_below.push(0usize);
    for &(_, pos) in &sorted {
        positives_below.push(positives_below.last().unwrap() + usize::from(pos));
    }
    let total_pos = *positives_below.last().unwrap();
    let total_neg = sorted.len() - total_pos;

    Ok(candidate_thresholds(scores)
        .into_iter()
        .map(|threshold| {
            let below = sorted.partition_point(|&(s, _)| s < threshold);
            let tp = positives_below[below];
            let fp = below - tp;
            SweepPoint {
                threshold,
                confusion: Confusion {
                    tp,
                    fp,
                    tn: total_neg - fp,
                    fn_: total_pos - tp,
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Average precision with each class taken in turn as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucPr {
    pub hallucinated: f64,
    pub factual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold_used: f64,
    pub auc: f64,
    pub auc_pr_per_class: AucPr,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
    /// Precision/recall for the hallucinated class along the sweep.
    pub pr: Vec<PrPoint>,
}

/// Step-wise average precision over a sequence of (recall, precision)
/// points with nondecreasing recall: `sum (R_i - R_{i-1}) P_i`.
fn average_precision(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn trapezoid(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn evaluate(scores: &[LabeledScore], threshold: f64) -> Result<EvalReport> {
    let sweep = sweep_thresholds(scores)?;
    Ok(report_from_sweep(scores, &sweep, threshold))
}

pub(crate) fn report_from_sweep(
    scores: &[LabeledScore],
    sweep: &[SweepPoint],
    threshold: f64,
) -> EvalReport {
    let roc: Vec<RocPoint> = sweep
        .iter()
        .map(|p| RocPoint {
            threshold: p.threshold,
            fpr: p.confusion.fpr(),
            tpr: p.confusion.tpr(),
        })
        .collect();
    let pr: Vec<PrPoint> = sweep
        .iter()
        .map(|p| PrPoint {
            threshold: p.threshold,
            recall: p.confusion.tpr(),
            precision: p.confusion.precision(),
        })
        .collect();
    let hallucinated = average_precision(pr.iter().map(|p| (p.recall, p.precision)));
    // Factual as positive: predicted factual iff score >= threshold, so the
    // recall grows as the threshold decreases.
    let factual = average_precision(sweep.iter().rev().map(|p| {
        let c = &p.confusion;
        (ratio(c.tn, c.negatives()), ratio(c.tn, c.tn + c.fn_))
    }));
    let confusion = Confusion::at_threshold(scores, threshold);
    EvalReport {
        threshold_used: threshold,
        auc: trapezoid(&roc),
        auc_pr_per_class: AucPr {
            hallucinated,
            factual,
        },
        f1: confusion.f1(),
        balanced_accuracy: confusion.balanced_accuracy(),
        confusion,
        roc,
        pr,
    }
}

impl EvalReport {
    /// CSV with columns `threshold,fpr,tpr`.
    pub fn write_roc_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for p in &self.roc {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }

    /// CSV with columns `threshold,recall,precision`.
    pub fn write_pr_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "threshold,recall,precision")?;
        for p in &self.pr {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                p.threshold, p.recall, p.precision
            )?;
        }
        Ok(())
    }
}

//! Core domain types: labeled token-embedding trajectories and datasets.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth annotation of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Factual,
    Hallucinated,
    #[serde(rename = "minor")]
    MinorInaccurate,
    Unlabeled,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Factual,
        Label::Hallucinated,
        Label::MinorInaccurate,
        Label::Unlabeled,
    ];

    /// Byte code used by the binary trajectory format.
    pub fn code(self) -> u8 {
        match self {
            Label::Factual => 0,
            Label::Hallucinated => 1,
            Label::MinorInaccurate => 2,
            Label::Unlabeled => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Factual => "factual",
            Label::Hallucinated => "hallucinated",
            Label::MinorInaccurate => "minor",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::MalformedFile(format!("unknown label '{s}'")))
    }
}

/// Which role a dataset plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Fit,
    Test,
    Calibration,
}

/// The per-token embedding sequence of one response.
///
/// Column `k` of `data` holds the raw embedding of token `k`, so the matrix
/// is `embedding_dim x length`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrajectory {
    id: String,
    label: Label,
    data: DMatrix<f64>,
    tokens: Option<Vec<String>>,
}

impl EmbeddingTrajectory {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        data: DMatrix<f64>,
        tokens: Option<Vec<String>>,
    ) -> Result<Self> {
        let id = id.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::MalformedFile(format!(
                "record '{id}' has an empty embedding matrix ({}x{})",
                data.nrows(),
                data.ncols()
            )));
        }
        // Report the first offending entry in row-major order, matching file layout.
        for row in 0..data.nrows() {
            for col in 0..data.ncols() {
                if !data[(row, col)].is_finite() {
                    return Err(Error::NonFiniteValue { id, row, col });
                }
            }
        }
        if let Some(tokens) = &tokens {
            if tokens.len() != data.ncols() {
                return Err(Error::DimensionMismatch {
                    context: format!("token list of record '{id}'"),
                    expected: data.ncols(),
                    found: tokens.len(),
                });
            }
        }
        Ok(Self {
            id,
            label,
            data,
            tokens,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn embedding_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn tokens(&self) -> Option<&[String]> {
        self.tokens.as_deref()
    }

    /// Copy of the token range `[start, end)`, keeping id and label.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() {
            return Err(Error::IndexOutOfRange {
                index: end,
                limit: self.len(),
            });
        }
        if start >= end {
            return Err(Error::IndexOutOfRange {
                index: start,
                limit: end,
            });
        }
        Ok(Self {
            id: self.id.clone(),
            label: self.label,
            data: self.data.columns(start, end - start).into_owned(),
            tokens: self.tokens.as_ref().map(|t| t[start..end].to_vec()),
        })
    }

    /// Same trajectory with different embedding values; used by tests and
    /// the cross-embedding harness.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        Self::new(self.id.clone(), self.label, data, self.tokens.clone())
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }
}

/// A validated collection of trajectories from one embedding model.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<EmbeddingTrajectory>,
    embedding_model_tag: String,
    split: Split,
}

impl Dataset {
    pub fn new(
        trajectories: Vec<EmbeddingTrajectory>,
        embedding_model_tag: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            let dim = first.embedding_dim();
            let mut seen = HashSet::with_capacity(trajectories.len());
            for t in &trajectories {
                if t.embedding_dim() != dim {
                    return Err(Error::DimensionMismatch {
                        context: format!("embedding dim of record '{}'", t.id()),
                        expected: dim,
                        found: t.embedding_dim(),
                    });
                }
                if !seen.insert(t.id()) {
                    return Err(Error::DuplicateId(t.id().to_owned()));
                }
                if split == Split::Fit && t.label() == Label::Unlabeled {
                    return Err(Error::UnlabeledInFitSplit(t.id().to_owned()));
                }
            }
        }
        Ok(Self {
            trajectories,
            embedding_model_tag: embedding_model_tag.into(),
            split,
        })
    }

    pub fn trajectories(&self) -> &[EmbeddingTrajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<EmbeddingTrajectory> {
        self.trajectories
    }

    pub fn embedding_model_tag(&self) -> &str {
        &self.embedding_model_tag
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `None` for an empty dataset.
    pub fn embedding_dim(&self) -> Option<usize> {
        self.trajectories.first().map(|t| t.embedding_dim())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Re-validates the trajectories under a different split.
    pub fn into_split(self, split: Split) -> Result<Self> {
        Self::new(self.trajectories, self.embedding_model_tag, split)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.embedding_model_tag = tag.into();
        self
    }

    pub fn labeled(&self, label: Label) -> impl Iterator<Item = &EmbeddingTrajectory> {
        self.trajectories.iter().filter(move |t| t.label() == label)
    }

    /// Keeps trajectories with at least `min_length` tokens.
    pub fn filter_min_length(self, min_length: usize) -> Self {
        Self {
            trajectories: self
                .trajectories
                .into_iter()
                .filter(|t| t.len() >= min_length)
                .collect(),
            ..self
        }
    }
}

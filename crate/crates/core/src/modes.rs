//! Per-token magnitudes of selected SVD modes, grouped by label, as a
//! plot-ready table for histogramming.

use std::io::Write;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::projection::ObservableMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub label: Label,
    pub id: String,
    pub token: usize,
    pub magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTable {
    pub mode_indices: Vec<usize>,
    /// Sorted by label, then id, then token.
    pub rows: Vec<ModeRow>,
}

impl ModeTable {
    pub fn header(&self) -> String {
        let mut header = String::from("label,id,token");
        for m in &self.mode_indices {
            header.push_str(&format!(",mode_{m}"));
        }
        header
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for row in &self.rows {
            write!(out, "{},{},{}", row.label, csv_field(&row.id), row.token)?;
            for v in &row.magnitudes {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Mean magnitude of column `mode_pos` over rows with the given label.
    pub fn mean_magnitude(&self, label: Label, mode_pos: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.magnitudes[mode_pos])
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn export_mode_magnitudes(
    trajs: &Dataset,
    map: &ObservableMap,
    mode_indices: &[usize],
) -> Result<ModeTable> {
    if let Some(&bad) = mode_indices.iter().find(|&&m| m >= map.rank()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            limit: map.rank(),
        });
    }
    let mut rows = Vec::new();
    if !mode_indices.is_empty() {
        for t in trajs.trajectories() {
            let projected = map.project_trajectory(t)?;
            for k in 0..t.len() {
                rows.push(ModeRow {
                    label: t.label(),
                    id: t.id().to_owned(),
                    token: k,
                    magnitudes: mode_indices
                        .iter()
                        .map(|&m| projected[(m, k)].abs())
                        .collect(),
                });
            }
        }
    }
    rows.sort_by(|a, b| (a.label, &a.id, a.token).cmp(&(b.label, &b.id, b.token)));
    Ok(ModeTable {
        mode_indices: mode_indices.to_vec(),
        rows,
    })
}

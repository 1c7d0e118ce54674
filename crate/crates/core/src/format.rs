//! On-disk formats.
//!
//! Trajectory JSONL, one object per line:
//! `{"id": str, "label": "factual"|"hallucinated"|"minor"|"unlabeled",
//!   "embedding": [[f64; L]; M], "tokens": [str; L]?}`.
//! Bare `NaN`/`Infinity` tokens and `null` entries are accepted by the parser
//! so that they surface as [`Error::NonFiniteValue`] rather than as syntax
//! errors.
//!
//! Trajectory binary, a concatenation of records:
//! `"KHT1" | u32 M | u32 L | u8 label | u32 id_len | id (UTF-8) | M*L f32`,
//! all little-endian, values row-major.
//!
//! Windows sidecar JSONL: `{"id": str, "windows": [[start, end], ...]}` with
//! half-open token ranges.
//!
//! Score report JSONL: one serialized [`ScoreReport`] per line. Lines carrying
//! an `"error"` key record per-record failures and are skipped on read.
//!
//! Model binary:
//! `"KHDM" | u32 version=1 | u32 M | u32 r | u32 gamma | f64 eta |
//!  mean (M f64) | Phi (M*r f64, row-major) | u32 d | u32 max_degree |
//!  u8 include_constant | A_c ((r+gamma)^2 f64, row-major) | A_h`,
//! optionally followed by a diagnostics trailer `u32 len | len bytes JSON`
//! holding the singular spectra, fit ranks and fit metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, EmbeddingTrajectory, Label, Split};
use crate::edmd::KoopmanOperator;
use crate::error::{Error, Result};
use crate::lift::LiftConfig;
use crate::model::DetectorModel;
use crate::projection::ObservableMap;
use crate::scoring::ScoreReport;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"KHT1";
pub const MODEL_MAGIC: &[u8; 4] = b"KHDM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    Jsonl,
    #[serde(alias = "binary")]
    Bin,
}

impl TrajectoryFormat {
    /// Sniffs the binary magic; anything else is treated as JSONL.
    pub fn detect(path: &Path) -> Result<Self> {
        use std::io::Read;
        let mut head = [0u8; 4];
        let mut file = fs::File::open(path)?;
        let n = file.read(&mut head)?;
        Ok(if n == 4 && &head == TRAJECTORY_MAGIC {
            TrajectoryFormat::Bin
        } else {
            TrajectoryFormat::Jsonl
        })
    }
}

impl std::str::FromStr for TrajectoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(TrajectoryFormat::Jsonl),
            "bin" | "binary" => Ok(TrajectoryFormat::Bin),
            _ => Err(Error::InvalidConfig(format!(
                "unknown trajectory format '{s}'"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Byte helpers shared with the ground-truth sidecar.

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::MalformedFile(format!(
                "{}: truncated at byte {} (needed {n} more, {} left)",
                self.what,
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::MalformedFile(format!(
                "{}: bad magic {:?} at byte {at}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a row-major `rows x cols` block of f64.
    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let count = checked_len(rows, cols, self.what)?;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| overflow(self.what))?)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

fn overflow(what: &str) -> Error {
    Error::MalformedFile(format!("{what}: declared size overflows"))
}

fn checked_len(rows: usize, cols: usize, what: &str) -> Result<usize> {
    rows.checked_mul(cols).ok_or_else(|| overflow(what))
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::InvalidConfig(format!("value {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Appends a matrix in row-major order.
pub(crate) fn put_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            put_f64(buf, m[(r, c)]);
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    label: Label,
    embedding: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` tokens outside strings to `null`.
fn neutralize_non_finite(line: &str) -> std::borrow::Cow<'_, str> {
    if !line.contains("NaN") && !line.contains("Infinity") {
        return line.into();
    }
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(ch) = rest.chars().next() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
        } else if ch == '"' {
            in_string = true;
        } else if let Some(tok) = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t))
        {
            out.push_str("null");
            rest = &rest[tok.len()..];
            continue;
        }
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out.into()
}

fn record_from_json(line: &str, line_no: usize) -> Result<EmbeddingTrajectory> {
    let line = neutralize_non_finite(line);
    let rec: JsonRecord = serde_json::from_str(&line)
        .map_err(|e| Error::MalformedFile(format!("line {line_no}: {e}")))?;
    let m = rec.embedding.len();
    let l = rec.embedding.first().map_or(0, Vec::len);
    if let Some(bad) = rec.embedding.iter().position(|row| row.len() != l) {
        return Err(Error::MalformedFile(format!(
            "line {line_no}: record '{}' embedding row {bad} has {} values, expected {l}",
            rec.id,
            rec.embedding[bad].len()
        )));
    }
    let mut data = DMatrix::zeros(m, l);
    for (r, row) in rec.embedding.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            match v {
                Some(v) => data[(r, c)] = *v,
                None => {
                    return Err(Error::NonFiniteValue {
                        id: rec.id,
                        row: r,
                        col: c,
                    })
                }
            }
        }
    }
    EmbeddingTrajectory::new(rec.id, rec.label, data, rec.tokens)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EmbeddingTrajectory>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| record_from_json(l, i + 1))
        .collect()
}

pub fn parse_binary(bytes: &[u8]) -> Result<Vec<EmbeddingTrajectory>> {
    let mut rd = ByteReader::new(bytes, "trajectory binary");
    let mut out = Vec::new();
    while !rd.is_empty() {
        rd.magic(TRAJECTORY_MAGIC)?;
        let m = rd.usize()?;
        let l = rd.usize()?;
        let code = rd.u8()?;
        let label = Label::from_code(code)
            .ok_or_else(|| Error::MalformedFile(format!("unknown label code {code}")))?;
        let id_len = rd.usize()?;
        let id = std::str::from_utf8(rd.take(id_len)?)
            .map_err(|e| Error::MalformedFile(format!("record id is not UTF-8: {e}")))?
            .to_owned();
        checked_len(m, l, "trajectory binary")?;
        let mut data = DMatrix::zeros(m, l);
        for r in 0..m {
            for c in 0..l {
                data[(r, c)] = f64::from(rd.f32()?);
            }
        }
        out.push(EmbeddingTrajectory::new(id, label, data, None)?);
    }
    Ok(out)
}

/// Reads and validates a trajectory file. The dataset tag is the file stem
/// and the split is [`Split::Test`]; use [`Dataset::into_split`] to re-tag.
pub fn load_trajectories(path: &Path, format: TrajectoryFormat) -> Result<Dataset> {
    let trajectories = match format {
        TrajectoryFormat::Jsonl => parse_jsonl(&fs::read_to_string(path)?)?,
        TrajectoryFormat::Bin => parse_binary(&fs::read(path)?)?,
    };
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(trajectories, tag, Split::Test)
}

pub fn trajectory_to_json(t: &EmbeddingTrajectory) -> String {
    let rec = JsonRecord {
        id: t.id().to_owned(),
        label: t.label(),
        embedding: t
            .data()
            .row_iter()
            .map(|row| row.iter().map(|&v| Some(v)).collect())
            .collect(),
        tokens: t.tokens().map(<[String]>::to_vec),
    };
    serde_json::to_string(&rec).expect("trajectory record serializes")
}

pub fn write_jsonl<'a>(
    trajs: impl IntoIterator<Item = &'a EmbeddingTrajectory>,
    mut out: impl Write,
) -> Result<()> {
    for t in trajs {
        writeln!(out, "{}", trajectory_to_json(t))?;
    }
    Ok(())
}

/// Binary record; values are narrowed to f32.
pub fn encode_binary(t: &EmbeddingTrajectory, buf: &mut Vec<u8>) -> Result<()> {
    buf.extend_from_slice(TRAJECTORY_MAGIC);
    put_u32(buf, t.embedding_dim())?;
    put_u32(buf, t.len())?;
    buf.push(t.label().code());
    put_u32(buf, t.id().len())?;
    buf.extend_from_slice(t.id().as_bytes());
    let data = t.data();
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            buf.extend_from_slice(&(data[(r, c)] as f32).to_le_bytes());
        }
    }
    Ok(())
}

pub fn write_trajectories<'a>(
    trajs: impl IntoIterator<Item = &'a EmbeddingTrajectory>,
    path: &Path,
    format: TrajectoryFormat,
) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        TrajectoryFormat::Jsonl => write_jsonl(trajs, &mut buf)?,
        TrajectoryFormat::Bin => {
            for t in trajs {
                encode_binary(t, &mut buf)?;
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Windows sidecar and score reports

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub id: String,
    pub windows: Vec<[usize; 2]>,
}

/// Parses a windows sidecar into a map from trajectory id to its windows.
pub fn parse_windows(text: &str) -> Result<BTreeMap<String, Vec<[usize; 2]>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let entry: WindowEntry = serde_json::from_str(line)
            .map_err(|e| Error::MalformedFile(format!("windows line {}: {e}", i + 1)))?;
        if out.insert(entry.id.clone(), entry.windows).is_some() {
            return Err(Error::DuplicateId(entry.id));
        }
    }
    Ok(out)
}

pub fn load_windows(path: &Path) -> Result<BTreeMap<String, Vec<[usize; 2]>>> {
    parse_windows(&fs::read_to_string(path)?)
}

pub fn write_windows<'a>(
    entries: impl IntoIterator<Item = &'a WindowEntry>,
    mut out: impl Write,
) -> Result<()> {
    for e in entries {
        writeln!(
            out,
            "{}",
            serde_json::to_string(e).expect("window entry serializes")
        )?;
    }
    Ok(())
}

pub fn parse_score_reports(text: &str) -> Result<Vec<ScoreReport>> {
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let malformed =
            |e: serde_json::Error| Error::MalformedFile(format!("score line {}: {e}", i + 1));
        let value: Value = serde_json::from_str(line).map_err(malformed)?;
        if value.get("error").is_some() {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(malformed)?);
    }
    Ok(out)
}

pub fn load_score_reports(path: &Path) -> Result<Vec<ScoreReport>> {
    parse_score_reports(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Model

fn operator_diagnostics(op: &KoopmanOperator) -> Value {
    json!({
        "fit_rank": op.fit_rank,
        "sv_tolerance": op.sv_tolerance,
        "spectrum": op.spectrum,
        "fit_residual": op.fit_residual,
    })
}

fn apply_diagnostics(op: KoopmanOperator, v: Option<&Value>) -> Result<KoopmanOperator> {
    let Some(v) = v else { return Ok(op) };
    let bad = || Error::MalformedFile("model trailer: malformed operator diagnostics".into());
    let fit_rank = v["fit_rank"].as_u64().ok_or_else(bad)? as usize;
    let sv_tolerance = v["sv_tolerance"].as_f64().ok_or_else(bad)?;
    let spectrum: Vec<f64> = serde_json::from_value(v["spectrum"].clone()).map_err(|_| bad())?;
    let fit_residual = v["fit_residual"].as_f64();
    Ok(op.with_diagnostics(fit_rank, sv_tolerance, spectrum, fit_residual))
}

pub fn encode_model(model: &DetectorModel) -> Result<Vec<u8>> {
    let map = model.observable_map();
    let lift = model.lift_config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut buf, MODEL_VERSION as usize)?;
    put_u32(&mut buf, map.embedding_dim())?;
    put_u32(&mut buf, map.rank())?;
    put_u32(&mut buf, lift.lift_dim())?;
    put_f64(&mut buf, model.threshold);
    for &v in map.mean().iter() {
        put_f64(&mut buf, v);
    }
    put_matrix(&mut buf, map.basis());
    put_u32(&mut buf, lift.subset_size)?;
    put_u32(&mut buf, lift.max_degree as usize)?;
    buf.push(u8::from(lift.include_constant));
    put_matrix(&mut buf, model.op_factual().matrix());
    put_matrix(&mut buf, model.op_halluc().matrix());

    let trailer = json!({
        "singular_values": map.singular_values(),
        "op_factual": operator_diagnostics(model.op_factual()),
        "op_halluc": operator_diagnostics(model.op_halluc()),
        "fit_metadata": model.fit_metadata,
    });
    let trailer = serde_json::to_vec(&trailer).expect("trailer serializes");
    put_u32(&mut buf, trailer.len())?;
    buf.extend_from_slice(&trailer);
    Ok(buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<DetectorModel> {
    let mut rd = ByteReader::new(bytes, "model file");
    rd.magic(MODEL_MAGIC)?;
    let version = rd.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let m = rd.usize()?;
    let r = rd.usize()?;
    let gamma = rd.usize()?;
    let threshold = rd.f64()?;
    let mean = rd.matrix(m, 1)?;
    let basis = rd.matrix(m, r)?;
    let subset_size = rd.usize()?;
    let max_degree = rd.u32()?;
    let include_constant = match rd.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::MalformedFile(format!(
                "model file: include-constant flag must be 0 or 1, got {other}"
            )))
        }
    };
    let lift = LiftConfig::new(subset_size, max_degree, include_constant)
        .map_err(|e| Error::MalformedFile(format!("model file: {e}")))?;
    if lift.lift_dim() != gamma {
        return Err(Error::MalformedFile(format!(
            "model file: declared gamma {gamma} but lift config implies {}",
            lift.lift_dim()
        )));
    }
    let side = r.checked_add(gamma).ok_or_else(|| overflow("model file"))?;
    let a_c = rd.matrix(side, side)?;
    let a_h = rd.matrix(side, side)?;

    let trailer: Option<Value> = if rd.is_empty() {
        None
    } else {
        let len = rd.usize()?;
        let raw = rd.take(len)?;
        if !rd.is_empty() {
            return Err(Error::MalformedFile(format!(
                "model file: {} unexpected trailing bytes",
                rd.remaining()
            )));
        }
        Some(
            serde_json::from_slice(raw)
                .map_err(|e| Error::MalformedFile(format!("model trailer: {e}")))?,
        )
    };

    let singular_values: Vec<f64> = match trailer.as_ref().map(|t| &t["singular_values"]) {
        Some(v) if !v.is_null() => serde_json::from_value(v.clone())
            .map_err(|e| Error::MalformedFile(format!("model trailer: {e}")))?,
        _ => Vec::new(),
    };
    let map = ObservableMap::from_parts(
        DVector::from_column_slice(mean.as_slice()),
        basis,
        singular_values,
    )?;
    let op_c = apply_diagnostics(
        KoopmanOperator::from_matrix(a_c)?,
        trailer.as_ref().map(|t| &t["op_factual"]),
    )?;
    let op_h = apply_diagnostics(
        KoopmanOperator::from_matrix(a_h)?,
        trailer.as_ref().map(|t| &t["op_halluc"]),
    )?;
    let mut model = DetectorModel::new(map, lift, op_c, op_h, threshold)?;
    if let Some(Value::Object(meta)) = trailer.as_ref().map(|t| &t["fit_metadata"]) {
        model.fit_metadata = meta.clone().into_iter().collect();
    }
    Ok(model)
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    decode_model(&fs::read(path)?)
}

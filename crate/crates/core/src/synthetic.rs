//! Ground-truth two-manifold trajectory generator.
//!
//! Each class has a stable latent linear system `x_{k+1} = A* x_k + w_k` and an
//! orthonormal embedding `E` into raw space, so `y_k = E x_k` (+ noise when
//! noise lives in embedding space). The generator is a pure function of the
//! spec: every trajectory draws from its own sub-seed, derived from
//! `(seed, split, class, index)`, so output does not depend on generation
//! order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmbeddingTrajectory, Label, Split};
use crate::error::{Error, Result};
use crate::format::{put_f64, put_matrix, put_u32, ByteReader};

pub const GROUND_TRUTH_MAGIC: &[u8; 4] = b"KHGT";
pub const GROUND_TRUTH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpace {
    /// Process noise added to the latent state.
    #[default]
    Latent,
    /// Measurement noise added to the raw embedding; the latent state is noise-free.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub latent_dim: usize,
    pub spectral_radius: f64,
    pub noise_sigma: f64,
    /// Inclusive token-count range.
    pub lengths: [usize; 2],
    /// Fit trajectories per class.
    pub n_per_class: usize,
    /// Test trajectories per class; defaults to `n_per_class`.
    pub n_test_per_class: Option<usize>,
    pub seed: u64,
    /// Fraction of latent directions whose embedding columns the two classes share.
    /// 1.0 gives identical embeddings, leaving only the dynamics to differ.
    pub overlap: f64,
    /// Mixing weight pulling the hallucinated system toward the factual one
    /// before rescaling. 0.0 draws them independently.
    pub shared_dynamics: f64,
    pub noise_space: NoiseSpace,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            latent_dim: 8,
            spectral_radius: 0.95,
            noise_sigma: 0.01,
            lengths: [50, 150],
            n_per_class: 200,
            n_test_per_class: None,
            seed: 0,
            overlap: 0.0,
            shared_dynamics: 0.0,
            noise_space: NoiseSpace::Latent,
        }
    }
}

impl SyntheticSpec {
    fn shared_columns(&self) -> usize {
        (self.overlap * self.latent_dim as f64).round() as usize
    }

    pub fn test_per_class(&self) -> usize {
        self.n_test_per_class.unwrap_or(self.n_per_class)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.dim == 0 || self.latent_dim == 0 {
            return bad("dim and latent_dim must be positive".into());
        }
        if self.latent_dim > self.dim {
            return bad(format!(
                "latent_dim {} exceeds dim {}",
                self.latent_dim, self.dim
            ));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return bad(format!(
                "spectral_radius {} must lie in (0, 1)",
                self.spectral_radius
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma {} must be finite and nonnegative",
                self.noise_sigma
            ));
        }
        let [lo, hi] = self.lengths;
        if lo < 2 || lo > hi {
            return bad(format!(
                "length range [{lo}, {hi}] must satisfy 2 <= min <= max"
            ));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        for (name, v) in [
            ("overlap", self.overlap),
            ("shared_dynamics", self.shared_dynamics),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} must lie in [0, 1]"));
            }
        }
        let needed = 2 * self.latent_dim - self.shared_columns();
        if needed > self.dim {
            return bad(format!(
                "dim {} too small for two embeddings of rank {} sharing {} columns (needs {needed})",
                self.dim,
                self.latent_dim,
                self.shared_columns()
            ));
        }
        Ok(())
    }
}

/// Generator matrices retained for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spectral_radius: f64,
    /// Latent systems, `latent x latent`.
    pub a_factual: DMatrix<f64>,
    pub a_halluc: DMatrix<f64>,
    /// Orthonormal embeddings, `dim x latent`.
    pub e_factual: DMatrix<f64>,
    pub e_halluc: DMatrix<f64>,
}

impl GroundTruth {
    pub fn system(&self, label: Label) -> &DMatrix<f64> {
        match label {
            Label::Hallucinated => &self.a_halluc,
            _ => &self.a_factual,
        }
    }

    pub fn embedding(&self, label: Label) -> &DMatrix<f64> {
        match label {
            Label::Hallucinated => &self.e_halluc,
            _ => &self.e_factual,
        }
    }

    pub fn dim(&self) -> usize {
        self.e_factual.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.a_factual.nrows()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(GROUND_TRUTH_MAGIC);
        put_u32(&mut buf, GROUND_TRUTH_VERSION as usize)?;
        put_u32(&mut buf, self.dim())?;
        put_u32(&mut buf, self.latent_dim())?;
        put_f64(&mut buf, self.spectral_radius);
        for m in [
            &self.a_factual,
            &self.a_halluc,
            &self.e_factual,
            &self.e_halluc,
        ] {
            put_matrix(&mut buf, m);
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes, "ground-truth file");
        rd.magic(GROUND_TRUTH_MAGIC)?;
        let version = rd.u32()?;
        if version != GROUND_TRUTH_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = rd.usize()?;
        let latent = rd.usize()?;
        let spectral_radius = rd.f64()?;
        let a_factual = rd.matrix(latent, latent)?;
        let a_halluc = rd.matrix(latent, latent)?;
        let e_factual = rd.matrix(dim, latent)?;
        let e_halluc = rd.matrix(dim, latent)?;
        if !rd.is_empty() {
            return Err(Error::MalformedFile(format!(
                "ground-truth file: {} trailing bytes",
                rd.remaining()
            )));
        }
        Ok(Self {
            spectral_radius,
            a_factual,
            a_halluc,
            e_factual,
            e_halluc,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

// Sub-seed streams.
const STREAM_SYSTEMS: u64 = 0;
const STREAM_FIT: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_MIXED: u64 = 3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sub_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let h = parts
        .iter()
        .fold(splitmix(seed), |h, &p| splitmix(h ^ splitmix(p)));
    ChaCha8Rng::seed_from_u64(h)
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row-major so the draw order is independent of storage layout.
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn rescale(a: DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let current = spectral_radius(&a);
    a * (rho / current)
}

fn draw_systems(spec: &SyntheticSpec) -> GroundTruth {
    let mut rng = sub_rng(spec.seed, &[STREAM_SYSTEMS]);
    let n = spec.latent_dim;
    let (raw_c, raw_h) = loop {
        let b_c = gaussian_matrix(&mut rng, n, n);
        let b_h = gaussian_matrix(&mut rng, n, n);
        let b_h = &b_h * (1.0 - spec.shared_dynamics) + &b_c * spec.shared_dynamics;
        // A nilpotent draw has no radius to rescale; it has probability zero but is cheap to reject.
        if spectral_radius(&b_c) > 1e-8 && spectral_radius(&b_h) > 1e-8 {
            break (b_c, b_h);
        }
    };
    let shared = spec.shared_columns();
    let total = 2 * n - shared;
    let q = gaussian_matrix(&mut rng, spec.dim, total).qr().q();
    let e_factual = q.columns(0, n).into_owned();
    let e_halluc = q.columns(n - shared, n).into_owned();
    GroundTruth {
        spectral_radius: spec.spectral_radius,
        a_factual: rescale(raw_c, spec.spectral_radius),
        a_halluc: rescale(raw_h, spec.spectral_radius),
        e_factual,
        e_halluc,
    }
}

fn unit_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Appends `len` embedded tokens of one class, starting from latent state `x`,
/// and returns the latent state that would follow the last token.
fn simulate_segment(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    label: Label,
    mut x: DVector<f64>,
    len: usize,
    rng: &mut impl Rng,
    columns: &mut Vec<DVector<f64>>,
) -> DVector<f64> {
    let a = truth.system(label);
    let e = truth.embedding(label);
    let sigma = spec.noise_sigma;
    for _ in 0..len {
        let mut y = e * &x;
        if sigma > 0.0 && spec.noise_space == NoiseSpace::Embedding {
            y.iter_mut()
                .for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
        }
        columns.push(y);
        x = a * x;
        if sigma > 0.0 && spec.noise_space == NoiseSpace::Latent {
            x.iter_mut()
                .for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    x
}

fn class_code(label: Label) -> u64 {
    u64::from(label.code())
}

fn trajectory(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    stream: u64,
    label: Label,
    index: usize,
    id: String,
) -> Result<EmbeddingTrajectory> {
    let mut rng = sub_rng(spec.seed, &[stream, class_code(label), index as u64]);
    let len = rng.random_range(spec.lengths[0]..=spec.lengths[1]);
    let x0 = unit_vector(&mut rng, spec.latent_dim);
    let mut columns = Vec::with_capacity(len);
    simulate_segment(spec, truth, label, x0, len, &mut rng, &mut columns);
    EmbeddingTrajectory::new(id, label, DMatrix::from_columns(&columns), None)
}

fn class_tag(label: Label) -> &'static str {
    match label {
        Label::Hallucinated => "h",
        _ => "c",
    }
}

fn split_dataset(
    spec: &SyntheticSpec,
    truth: &GroundTruth,
    split: Split,
    per_class: usize,
) -> Result<Dataset> {
    let (stream, prefix) = match split {
        Split::Fit => (STREAM_FIT, "fit"),
        _ => (STREAM_TEST, "test"),
    };
    let mut trajs = Vec::with_capacity(2 * per_class);
    for label in [Label::Factual, Label::Hallucinated] {
        for i in 0..per_class {
            let id = format!("{prefix}-{}-{i:05}", class_tag(label));
            trajs.push(trajectory(spec, truth, stream, label, i, id)?);
        }
    }
    Dataset::new(trajs, format!("synthetic-{}", spec.seed), split)
}

/// Returns the fit split, the test split and the generating systems.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, GroundTruth)> {
    spec.validate()?;
    let truth = draw_systems(spec);
    let fit = split_dataset(spec, &truth, Split::Fit, spec.n_per_class)?;
    let test = split_dataset(spec, &truth, Split::Test, spec.test_per_class())?;
    Ok((fit, test, truth))
}

/// The generating systems alone, without simulating any trajectory.
pub fn ground_truth(spec: &SyntheticSpec) -> Result<GroundTruth> {
    spec.validate()?;
    Ok(draw_systems(spec))
}

/// Stitches per-class segments into one trajectory. The latent state carries
/// across segment boundaries. Returns the trajectory and its `[start, end)`
/// windows, one per segment. `replicate` selects an independent draw.
///
/// The trajectory is labeled hallucinated if any segment is.
pub fn concat_mixed(
    spec: &SyntheticSpec,
    plan: &[(Label, usize)],
    replicate: u64,
) -> Result<(EmbeddingTrajectory, Vec<[usize; 2]>)> {
    spec.validate()?;
    if plan.is_empty() {
        return Err(Error::InvalidSpec("segment plan is empty".into()));
    }
    for &(label, len) in plan {
        if !matches!(label, Label::Factual | Label::Hallucinated) {
            return Err(Error::InvalidSpec(format!(
                "segment class must be factual or hallucinated, got {label}"
            )));
        }
        if len < 2 {
            return Err(Error::InvalidSpec(format!(
                "segment length {len} is below 2"
            )));
        }
    }
    let truth = draw_systems(spec);
    let mut rng = sub_rng(spec.seed, &[STREAM_MIXED, replicate]);
    let mut x = unit_vector(&mut rng, spec.latent_dim);
    let mut columns = Vec::new();
    let mut windows = Vec::with_capacity(plan.len());
    for &(label, len) in plan {
        let start = columns.len();
        x = simulate_segment(spec, &truth, label, x, len, &mut rng, &mut columns);
        windows.push([start, columns.len()]);
    }
    let label = if plan.iter().any(|(l, _)| *l == Label::Hallucinated) {
        Label::Hallucinated
    } else {
        Label::Factual
    };
    let id = format!("mixed-{replicate:05}");
    let traj = EmbeddingTrajectory::new(id, label, DMatrix::from_columns(&columns), None)?;
    Ok((traj, windows))
}

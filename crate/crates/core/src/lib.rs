//! Koopman-operator hallucination detection on token-embedding trajectories.
//!
//! Two linear operators are fit by extended dynamic mode decomposition, one
//! on factual responses and one on hallucinated responses, in a shared
//! SVD-reduced and polynomially lifted observable space. A response is scored
//! by how much better the hallucination operator predicts its next-token
//! embeddings than the factual one does:
//!
//! ```text
//! eps_k = || y_{k+1} - [I 0] A z_k ||        (per operator)
//! dE_k  = eps_h,k - eps_c,k
//! dE    = ||eps_h|| - ||eps_c||              (hallucinated iff dE < eta)
//! ```
//!
//! The pipeline is `fit_observable_map` → `fit_pair` → `DetectorModel` →
//! `score_trajectory` → `evaluate` / `calibrate`.

pub mod calibration;
pub mod data;
pub mod edmd;
pub mod error;
pub mod format;
pub mod lift;
pub mod metrics;
pub mod model;
pub mod modes;
pub mod projection;
pub mod scoring;
pub mod synthetic;

pub use calibration::{calibrate, CalibrationSample, CalibrationSpec, Metric, MinorPolicy};
pub use data::{Dataset, EmbeddingTrajectory, Label, Split};
pub use edmd::{build_snapshots, fit_operator, fit_pair, KoopmanOperator, SnapshotMatrices};
pub use error::{Error, Result};
pub use lift::{Lift, LiftConfig, PolynomialLift};
pub use metrics::{evaluate, sweep_thresholds, Confusion, EvalReport, LabeledScore};
pub use model::{fit_detector, DetectorModel, FitOptions};
pub use projection::{fit_observable_map, Centering, ObservableMap};
pub use scoring::{score_trajectory, score_window, transition_residuals, ScoreReport};
pub use synthetic::{generate, GroundTruth, SyntheticSpec};

//! Pipeline configuration: a single JSON document whose fields are
//! overridden by command-line flags. Relative paths inside the document are
//! resolved against the document's directory.

use std::fs;
use std::path::{Path, PathBuf};

use khd_core::format::TrajectoryFormat;
use khd_core::lift::LiftConfig;
use khd_core::{Centering, FitOptions, Metric, MinorPolicy, SyntheticSpec};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Splits {
    pub fit: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rank: usize,
    pub centering: Centering,
    pub lift: LiftConfig,
    pub sv_rel_tol: f64,
    pub rank_cap: Option<usize>,
    pub splits: Splits,
    pub metric: Metric,
    pub minor_policy: MinorPolicy,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub min_length: usize,
    pub format: TrajectoryFormat,
    pub synthetic: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            rank: fit.rank,
            centering: fit.centering,
            lift: fit.lift,
            sv_rel_tol: fit.sv_rel_tol,
            rank_cap: fit.rank_cap,
            splits: Splits::default(),
            metric: Metric::default(),
            minor_policy: MinorPolicy::default(),
            output: PathBuf::from("."),
            seed: None,
            min_length: 1,
            format: TrajectoryFormat::Jsonl,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| {
            CliError::Core(khd_core::Error::InvalidConfig(format!(
                "{}: {e}",
                path.display()
            )))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.output);
        for p in [
            &mut config.splits.fit,
            &mut config.splits.test,
            &mut config.splits.calibration,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(config)
    }

    pub fn fit_options(&self) -> CliResult<FitOptions> {
        let options = FitOptions {
            rank: self.rank,
            centering: self.centering,
            lift: self.lift,
            rank_cap: self.rank_cap,
            sv_rel_tol: self.sv_rel_tol,
        };
        let invalid = |msg: String| CliError::Core(khd_core::Error::InvalidConfig(msg));
        if options.rank == 0 {
            return Err(invalid("rank must be at least 1".into()));
        }
        if !(options.sv_rel_tol > 0.0 && options.sv_rel_tol < 1.0) {
            return Err(invalid(format!(
                "sv_rel_tol {} must lie in (0, 1)",
                options.sv_rel_tol
            )));
        }
        if options.rank_cap == Some(0) {
            return Err(invalid("rank_cap must be at least 1".into()));
        }
        options.lift.validate()?;
        Ok(options)
    }

    /// Synthetic spec with the top-level seed applied.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let mut spec = self.synthetic.clone();
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec
    }
}

/// Returns the explicit path, else the configured one, else a usage error.
pub fn require_path(
    explicit: Option<&PathBuf>,
    configured: Option<&PathBuf>,
    what: &str,
) -> CliResult<PathBuf> {
    let path = explicit
        .or(configured)
        .cloned()
        .ok_or_else(|| CliError::usage(format!("no {what} given (flag or config)")))?;
    if !path.exists() {
        return Err(CliError::usage(format!(
            "{what} '{}' does not exist",
            path.display()
        )));
    }
    Ok(path)
}

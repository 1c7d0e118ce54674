use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use khd_core::format::{self, TrajectoryFormat, WindowEntry};
use khd_core::metrics::EvalReport;
use khd_core::modes::export_mode_magnitudes;
use khd_core::projection::fit_observable_map_with;
use khd_core::synthetic::{concat_mixed, generate};
use khd_core::{
    calibrate, evaluate, fit_detector, score_trajectory, score_window, CalibrationSample,
    CalibrationSpec, Dataset, DetectorModel, EmbeddingTrajectory, Label, MinorPolicy, ScoreReport,
    Split,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    CalibrateArgs, CrossevalArgs, EvalArgs, FitArgs, FitOverrides, ModesArgs, ScoreArgs, SynthArgs,
};
use crate::config::{require_path, PipelineConfig};
use crate::error::{CliError, CliResult};

pub struct Context {
    pub config: PipelineConfig,
}

impl Context {
    fn output_dir(&self) -> CliResult<&Path> {
        let dir = self.config.output.as_path();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(dir)
    }

    fn output_path(&self, explicit: Option<&PathBuf>, default_name: &str) -> CliResult<PathBuf> {
        match explicit {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
                }
                Ok(p.clone())
            }
            None => Ok(self.output_dir()?.join(default_name)),
        }
    }

    fn load_dataset(&self, path: &Path, split: Split) -> CliResult<Dataset> {
        let format = TrajectoryFormat::detect(path).map_err(|e| with_path(e, path))?;
        let ds = format::load_trajectories(path, format).map_err(|e| with_path(e, path))?;
        Ok(ds
            .into_split(split)?
            .filter_min_length(self.config.min_length))
    }
}

/// Attaches the path to I/O errors, which otherwise carry no file name.
fn with_path(e: khd_core::Error, path: &Path) -> CliError {
    match e {
        khd_core::Error::Io(source) => CliError::io(path, source),
        other => CliError::Core(other),
    }
}

fn load_model(path: &Path) -> CliResult<DetectorModel> {
    format::load_model(path).map_err(|e| with_path(e, path))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn print_json(value: &Value) {
    println!("{value}");
}

// ---------------------------------------------------------------------------

pub fn fit(ctx: &Context, args: &FitArgs) -> CliResult<()> {
    let path = require_path(
        args.fit.as_ref(),
        ctx.config.splits.fit.as_ref(),
        "fit split",
    )?;
    let options = ctx.config.fit_options()?;
    let fit_set = ctx.load_dataset(&path, Split::Fit)?;
    let model = fit_detector(&fit_set, &options)?;
    let model_path = ctx.output_path(args.model_out.as_ref(), "model.khdm")?;
    write_file(&model_path, &format::encode_model(&model)?)?;

    let report = json!({
        "fit_metadata": model.fit_metadata,
        "singular_values": model.observable_map().singular_values(),
        "spectrum_factual": model.op_factual().spectrum,
        "spectrum_hallucinated": model.op_halluc().spectrum,
    });
    write_json(&ctx.output_dir()?.join("fit_report.json"), &report)?;
    print_json(&json!(model.fit_metadata));
    Ok(())
}

/// A row of the score report: a report, or a per-record failure.
enum Row {
    Report(ScoreReport),
    Failure {
        id: String,
        window: Option<[usize; 2]>,
        error: khd_core::Error,
    },
}

impl Row {
    fn key(&self) -> (&str, Option<[usize; 2]>) {
        match self {
            Row::Report(r) => (&r.id, r.window),
            Row::Failure { id, window, .. } => (id, *window),
        }
    }

    fn to_line(&self) -> String {
        match self {
            Row::Report(r) => serde_json::to_string(r).expect("score report serializes"),
            Row::Failure { id, window, error } => {
                let mut v = json!({
                    "id": id,
                    "error": {"kind": error.kind(), "message": error.to_string()},
                });
                if let Some(w) = window {
                    v["window"] = json!(w);
                }
                v.to_string()
            }
        }
    }
}

fn score_rows(
    trajs: &[EmbeddingTrajectory],
    model: &DetectorModel,
    windows: Option<&std::collections::BTreeMap<String, Vec<[usize; 2]>>>,
) -> Vec<Row> {
    let mut rows: Vec<Row> = trajs
        .par_iter()
        .flat_map_iter(|t| {
            let failure = |window, error| Row::Failure {
                id: t.id().to_owned(),
                window,
                error,
            };
            match windows.and_then(|w| w.get(t.id())) {
                Some(ws) => ws
                    .iter()
                    .map(|&[s, e]| match score_window(t, model, s, e) {
                        Ok(r) => Row::Report(r),
                        Err(err) => failure(Some([s, e]), err),
                    })
                    .collect::<Vec<_>>(),
                None => vec![match score_trajectory(t, model) {
                    Ok(r) => Row::Report(r),
                    Err(err) => failure(None, err),
                }],
            }
        })
        .collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    rows
}

fn reports_only(rows: Vec<Row>) -> Vec<ScoreReport> {
    rows.into_iter()
        .filter_map(|r| match r {
            Row::Report(r) => Some(r),
            Row::Failure { .. } => None,
        })
        .collect()
}

fn write_rows(path: &Path, rows: &[Row]) -> CliResult<()> {
    let mut buf = Vec::new();
    for row in rows {
        writeln!(buf, "{}", row.to_line()).expect("writing to memory");
    }
    write_file(path, &buf)
}

pub fn score(ctx: &Context, args: &ScoreArgs) -> CliResult<()> {
    let input = require_path(
        args.input.as_ref(),
        ctx.config.splits.test.as_ref(),
        "input trajectories",
    )?;
    let model = load_model(&args.model)?;
    let ds = ctx.load_dataset(&input, Split::Test)?;
    let windows = match &args.windows {
        Some(p) => {
            let w = format::load_windows(p).map_err(|e| with_path(e, p))?;
            let known: std::collections::HashSet<&str> =
                ds.trajectories().iter().map(|t| t.id()).collect();
            if let Some(unknown) = w.keys().find(|id| !known.contains(id.as_str())) {
                return Err(CliError::usage(format!(
                    "windows file lists id '{unknown}' absent from the input"
                )));
            }
            Some(w)
        }
        None => None,
    };
    let rows = score_rows(ds.trajectories(), &model, windows.as_ref());
    let out = ctx.output_path(args.out.as_ref(), "scores.jsonl")?;
    write_rows(&out, &rows)?;
    let failed = rows
        .iter()
        .filter(|r| matches!(r, Row::Failure { .. }))
        .count();
    print_json(&json!({"scored": rows.len() - failed, "failed": failed}));
    Ok(())
}

fn samples_from_reports(reports: &[ScoreReport], min_length: usize) -> Vec<CalibrationSample> {
    reports
        .iter()
        .filter(|r| r.length() >= min_length)
        .map(|r| {
            let mut id = r.id.clone();
            if let Some([s, e]) = r.window {
                id = format!("{id}[{s},{e})");
            }
            CalibrationSample::new(id, r.response_score, r.truth.unwrap_or(Label::Unlabeled))
        })
        .collect()
}

/// Scores from a report file, or by scoring trajectories with the model.
fn gather_reports(
    ctx: &Context,
    scores: Option<&PathBuf>,
    input: Option<&PathBuf>,
    model: Option<&DetectorModel>,
    split: Split,
) -> CliResult<Vec<ScoreReport>> {
    match (scores, input, model) {
        (Some(p), _, _) => Ok(format::load_score_reports(p).map_err(|e| with_path(e, p))?),
        (None, Some(p), Some(m)) => {
            let ds = ctx.load_dataset(p, split)?;
            Ok(reports_only(score_rows(ds.trajectories(), m, None)))
        }
        _ => Err(CliError::usage(
            "give --scores, or --input together with a model",
        )),
    }
}

pub fn calibrate_cmd(ctx: &Context, args: &CalibrateArgs) -> CliResult<()> {
    let mut model = load_model(&args.model)?;
    let input = match (&args.scores, &args.input) {
        (None, None) => Some(require_path(
            None,
            ctx.config.splits.calibration.as_ref(),
            "calibration data",
        )?),
        (_, input) => input.clone(),
    };
    let reports = gather_reports(
        ctx,
        args.scores.as_ref(),
        input.as_ref(),
        Some(&model),
        Split::Calibration,
    )?;
    let spec = CalibrationSpec {
        metric: args.metric.unwrap_or(ctx.config.metric),
        minor_policy: args.minor_policy.unwrap_or(ctx.config.minor_policy),
    };
    let samples = samples_from_reports(&reports, ctx.config.min_length);
    let (threshold, report) = calibrate(&samples, &spec)?;
    model.threshold = threshold;
    let model_path = args.model_out.clone().unwrap_or_else(|| args.model.clone());
    write_file(&model_path, &format::encode_model(&model)?)?;

    let out = json!({
        "metric": spec.metric,
        "minor_policy": spec.minor_policy,
        "threshold": threshold,
        "metric_value": spec.metric.value(&report.confusion),
        "report": report,
    });
    write_json(&ctx.output_dir()?.join("calibration_report.json"), &out)?;
    print_json(
        &json!({"threshold": threshold, "metric": spec.metric, "value": spec.metric.value(&report.confusion)}),
    );
    Ok(())
}

fn evaluate_reports(
    reports: &[ScoreReport],
    threshold: f64,
    policy: MinorPolicy,
    min_length: usize,
) -> CliResult<EvalReport> {
    let samples = samples_from_reports(reports, min_length);
    Ok(evaluate(&policy.apply(&samples), threshold)?)
}

fn write_eval(ctx: &Context, prefix: &str, report: &EvalReport) -> CliResult<()> {
    let dir = ctx.output_dir()?;
    write_json(&dir.join(format!("{prefix}report.json")), report)?;
    let mut roc = Vec::new();
    report.write_roc_csv(&mut roc)?;
    write_file(&dir.join(format!("{prefix}roc.csv")), &roc)?;
    let mut pr = Vec::new();
    report.write_pr_csv(&mut pr)?;
    write_file(&dir.join(format!("{prefix}pr.csv")), &pr)?;
    print_json(&json!({
        "threshold": report.threshold_used,
        "auc": report.auc,
        "auc_pr": report.auc_pr_per_class,
        "f1": report.f1,
        "balanced_accuracy": report.balanced_accuracy,
        "confusion": report.confusion,
    }));
    Ok(())
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> CliResult<()> {
    let model = args.model.as_ref().map(|p| load_model(p)).transpose()?;
    let input = match (&args.scores, &args.input) {
        (None, None) => Some(require_path(
            None,
            ctx.config.splits.test.as_ref(),
            "evaluation data",
        )?),
        (_, input) => input.clone(),
    };
    let reports = gather_reports(
        ctx,
        args.scores.as_ref(),
        input.as_ref(),
        model.as_ref(),
        Split::Test,
    )?;
    let threshold = args
        .threshold
        .or(model.as_ref().map(|m| m.threshold))
        .unwrap_or(0.0);
    let policy = args.minor_policy.unwrap_or(ctx.config.minor_policy);
    let report = evaluate_reports(&reports, threshold, policy, ctx.config.min_length)?;
    write_eval(ctx, "eval_", &report)
}

fn fit_overrides(ctx: &Context, overrides: &FitOverrides) -> PipelineConfig {
    let mut config = ctx.config.clone();
    if let Some(rank) = overrides.rank {
        config.rank = rank;
    }
    if let Some(c) = overrides.centering {
        config.centering = c.into();
    }
    config
}

pub fn crosseval(ctx: &Context, args: &CrossevalArgs) -> CliResult<()> {
    let source = load_model(&args.model)?;
    let test_path = require_path(
        args.test.as_ref(),
        ctx.config.splits.test.as_ref(),
        "target test data",
    )?;
    let target_map = match (&args.target_model, &args.target_fit) {
        (Some(p), _) => load_model(p)?.observable_map().clone(),
        (None, Some(p)) => {
            let options = fit_overrides(ctx, &args.overrides).fit_options()?;
            let fit = ctx.load_dataset(p, Split::Fit)?;
            fit_observable_map_with(&fit, options.rank, options.centering)?
        }
        (None, None) => return Err(CliError::usage("give --target-model or --target-fit")),
    };
    let model = source.with_observable_map(target_map)?;
    let test = ctx.load_dataset(&test_path, Split::Test)?;
    let rows = score_rows(test.trajectories(), &model, None);
    write_rows(&ctx.output_dir()?.join("crosseval_scores.jsonl"), &rows)?;
    let policy = args.minor_policy.unwrap_or(ctx.config.minor_policy);
    let report = evaluate_reports(
        &reports_only(rows),
        model.threshold,
        policy,
        ctx.config.min_length,
    )?;
    write_eval(ctx, "crosseval_", &report)
}

fn parse_plan(plan: &str) -> CliResult<Vec<(Label, usize)>> {
    plan.split(',')
        .map(|seg| {
            let (class, len) = seg.split_once(':').ok_or_else(|| {
                CliError::usage(format!("segment '{seg}' is not <class>:<length>"))
            })?;
            let label = match class.trim() {
                "c" | "factual" => Label::Factual,
                "h" | "hallucinated" => Label::Hallucinated,
                other => return Err(CliError::usage(format!("unknown segment class '{other}'"))),
            };
            let len = len
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad segment length in '{seg}'")))?;
            Ok((label, len))
        })
        .collect()
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> CliResult<()> {
    let mut spec = ctx.config.synthetic_spec();
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { spec.$field = v.into(); })* };
    }
    set!(
        dim,
        latent_dim,
        spectral_radius,
        noise_sigma,
        n_per_class,
        overlap,
        shared_dynamics,
        noise_space
    );
    if let Some(n) = args.n_test_per_class {
        spec.n_test_per_class = Some(n);
    }
    if let Some(lo) = args.min_len {
        spec.lengths[0] = lo;
    }
    if let Some(hi) = args.max_len {
        spec.lengths[1] = hi;
    }
    let plan = args.mixed.as_deref().map(parse_plan).transpose()?;

    let (fit, test, truth) = generate(&spec)?;
    let fmt = ctx.config.format;
    let ext = match fmt {
        TrajectoryFormat::Jsonl => "jsonl",
        TrajectoryFormat::Bin => "bin",
    };
    let dir = ctx.output_dir()?;
    format::write_trajectories(fit.trajectories(), &dir.join(format!("fit.{ext}")), fmt)?;
    format::write_trajectories(test.trajectories(), &dir.join(format!("test.{ext}")), fmt)?;
    write_file(&dir.join("ground_truth.khgt"), &truth.encode()?)?;
    write_json(&dir.join("synthetic_spec.json"), &spec)?;

    if let Some(plan) = plan {
        let mut trajs = Vec::new();
        let mut entries = Vec::new();
        for rep in 0..args.replicates {
            let (t, windows) = concat_mixed(&spec, &plan, rep)?;
            entries.push(WindowEntry {
                id: t.id().to_owned(),
                windows,
            });
            trajs.push(t);
        }
        format::write_trajectories(&trajs, &dir.join(format!("mixed.{ext}")), fmt)?;
        let mut buf = Vec::new();
        format::write_windows(&entries, &mut buf)?;
        write_file(&dir.join("windows.jsonl"), &buf)?;
    }
    print_json(&json!({"fit": fit.len(), "test": test.len(), "seed": spec.seed}));
    Ok(())
}

pub fn modes(ctx: &Context, args: &ModesArgs) -> CliResult<()> {
    let input = require_path(
        args.input.as_ref(),
        ctx.config.splits.test.as_ref(),
        "input trajectories",
    )?;
    let model = load_model(&args.model)?;
    let ds = ctx.load_dataset(&input, Split::Test)?;
    let table = export_mode_magnitudes(&ds, model.observable_map(), &args.modes)?;
    let out = ctx.output_path(args.out.as_ref(), "modes.csv")?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_file(&out, &buf)?;
    print_json(&json!({"rows": table.rows.len(), "modes": table.mode_indices}));
    Ok(())
}

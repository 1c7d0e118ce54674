//! Shared helpers for the CLI test targets: a runner for the `khd` binary and
//! small reference computations that avoid the library's code paths.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use khd_core::metrics::{Confusion, LabeledScore};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    pub fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim())
            .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }
}

pub fn khd<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    khd_env(args, &[])
}

pub fn khd_env<I, S>(args: I, env: &[(&str, &str)]) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_khd"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("khd binary runs");
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs `khd` and panics with its stderr unless it exits 0.
pub fn khd_ok<I, S>(args: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let args: Vec<_> = args.into_iter().map(|a| a.as_ref().to_owned()).collect();
    let out = khd(&args);
    assert_eq!(out.code, 0, "khd {args:?} failed: {}", out.stderr);
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn read_json(path: impl AsRef<Path>) -> Value {
    let text = fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()));
    serde_json::from_str(&text).unwrap()
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Vec<Value> {
    fs::read_to_string(path.as_ref())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn files_equal(a: &Path, b: &Path) -> bool {
    fs::read(a).unwrap() == fs::read(b).unwrap()
}

/// `synth` into `dir` with the given extra flags; returns `dir`.
pub fn synth(dir: &Path, flags: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--output", p(dir)];
    args.extend_from_slice(flags);
    khd_ok(&args);
    dir.to_path_buf()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// `X+ X^T (X X^T)^-1` by explicit normal equations and Gauss-Jordan
/// elimination with partial pivoting, on nested vectors.
#[allow(clippy::needless_range_loop)]
pub fn normal_equation_operator(x: &DMatrix<f64>, x_plus: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (n, q) = x.shape();
    let dot = |a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize| {
        (0..q).map(|t| a[(i, t)] * b[(j, t)]).sum::<f64>()
    };
    // Augmented [G | C^T] where G = X X^T and C = X+ X^T; the solution is A^T.
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dot(x, i, x, j))
                .chain((0..n).map(|j| dot(x_plus, j, x, i)))
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let pv = aug[col][col];
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / pv;
                for c in col..2 * n {
                    aug[row][c] -= f * aug[col][c];
                }
            }
        }
    }
    let at: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| aug[i][n + j] / aug[i][i]).collect())
        .collect();
    (0..n).map(|i| (0..n).map(|j| at[j][i]).collect()).collect()
}

pub fn brute_confusion(scores: &[LabeledScore], eta: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scores {
        match (s.score < eta, s.hallucinated) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

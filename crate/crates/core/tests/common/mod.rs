//! Independent reference implementations. These work on plain nested vectors
//! and never reuse the library's linear algebra paths.

#![allow(dead_code)]

use khd_core::metrics::{Confusion, LabeledScore};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn to_rows(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols)
        .map(|c| a.iter().map(|row| row[c]).collect())
        .collect()
}

/// Solves `a x = b` for every column of `b` by Gaussian elimination with
/// partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Mat = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / p;
                if f != 0.0 {
                    for c in col..n + m {
                        aug[row][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..m).map(|j| aug[i][n + j] / aug[i][i]).collect())
        .collect()
}

/// `X+ X^T (X X^T)^-1` through explicitly formed normal equations.
pub fn normal_equation_operator(x: &Mat, x_plus: &Mat) -> Mat {
    let xt = transpose(x);
    let gram = matmul(x, &xt);
    let cross = matmul(x_plus, &xt);
    // A G = C  <=>  G A^T = C^T (G symmetric)
    transpose(&solve(&gram, &transpose(&cross)))
}

/// Ratio of extreme singular values, from the eigenvalues of the Gram matrix.
pub fn condition_number(x: &DMatrix<f64>) -> f64 {
    let eig = (x * x.transpose()).symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    (max / min.max(0.0)).sqrt()
}

/// Triple-loop `Phi^T (y - mean)`.
pub fn naive_project(y: &[f64], mean: &[f64], basis: &Mat) -> Vec<f64> {
    let r = basis[0].len();
    (0..r)
        .map(|j| (0..y.len()).map(|i| basis[i][j] * (y[i] - mean[i])).sum())
        .collect()
}

/// Monomials of degree 2..=max_degree in the first `d` coordinates, in
/// graded-lex order, by recursive enumeration of non-decreasing index tuples.
pub fn naive_lift_block(y: &[f64], d: usize, max_degree: u32, constant: bool) -> Vec<f64> {
    fn tuples(
        d: usize,
        len: usize,
        from: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for i in from..d {
            prefix.push(i);
            tuples(d, len, i, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if constant {
        out.push(1.0);
    }
    for deg in 2..=max_degree as usize {
        let mut all = Vec::new();
        tuples(d, deg, 0, &mut Vec::new(), &mut all);
        out.extend(all.iter().map(|t| t.iter().map(|&i| y[i]).product::<f64>()));
    }
    out
}

/// `|| y_{k+1} - (A z_k)[..r] ||` per step, with `z` given as columns.
pub fn naive_residuals(z: &[Vec<f64>], a: &Mat, r: usize) -> Vec<f64> {
    (0..z.len() - 1)
        .map(|k| {
            let mut sq = 0.0;
            for i in 0..r {
                let pred: f64 = (0..z[k].len()).map(|j| a[i][j] * z[k][j]).sum();
                sq += (z[k + 1][i] - pred).powi(2);
            }
            sq.sqrt()
        })
        .collect()
}

/// Per-sample recount of the decision rule "hallucinated iff score < eta".
pub fn brute_confusion(scores: &[LabeledScore], eta: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in scores {
        let predicted = s.score < eta;
        match (predicted, s.hallucinated) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

mod common;

use common::*;
use khd_core::edmd::{build_snapshots, fit_operator, fit_pair, SnapshotMatrices};
use khd_core::lift::LiftConfig;
use khd_core::projection::{fit_observable_map, fit_observable_map_with, Centering};
use khd_core::{Dataset, EmbeddingTrajectory, Error, Label, Split};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// `U diag(s) V^T` with singular values spread over `[1, cond]`.
fn conditioned(rng: &mut impl Rng, n: usize, q: usize, cond: f64) -> DMatrix<f64> {
    let u = gaussian(rng, n, n).qr().q();
    let v = gaussian(rng, q, n).qr().q();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (n - 1) as f64)
        }
    }));
    u * s * v.transpose()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &Mat) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m = m.max((a[(i, j)] - v).abs());
        }
    }
    m
}

#[test]
fn matches_normal_equation_oracle() {
    let mut rng = rng(11);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let q = rng.random_range(n..=60);
        let cond = 10f64.powf(rng.random_range(0.0..3.0));
        let x = conditioned(&mut rng, n, q, cond);
        let x_plus = gaussian(&mut rng, n, q);
        assert!(condition_number(&x) < 1e6);
        let op = fit_operator(
            &SnapshotMatrices::new(x.clone(), x_plus.clone()).unwrap(),
            None,
            1e-12,
        )
        .unwrap();
        let oracle = normal_equation_operator(&to_rows(&x), &to_rows(&x_plus));
        let diff = max_abs_diff(op.matrix(), &oracle);
        assert!(diff < 1e-8, "n={n} q={q} cond={cond:.1}: diff {diff:e}");
        assert_eq!(op.fit_rank, n);
    }
}

fn orthogonality_gap(x: &DMatrix<f64>, x_plus: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let resid = x_plus - a * x;
    (resid * x.transpose()).amax() / (x_plus.norm() * x.norm())
}

#[test]
fn residual_orthogonal_to_row_space_even_when_rank_deficient() {
    let mut rng = rng(5);
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let q = rng.random_range(1..=40);
        let k = rng.random_range(1..=n.min(q));
        // rank-k data
        let x = gaussian(&mut rng, n, k) * gaussian(&mut rng, k, q);
        let x_plus = gaussian(&mut rng, n, q);
        let op = fit_operator(
            &SnapshotMatrices::new(x.clone(), x_plus.clone()).unwrap(),
            None,
            1e-10,
        )
        .unwrap();
        assert_eq!(op.fit_rank, k);
        assert!(orthogonality_gap(&x, &x_plus, op.matrix()) < 1e-8);
    }
}

#[test]
fn truncation_is_monotone_in_rank() {
    let mut rng = rng(9);
    for _ in 0..10 {
        let x = gaussian(&mut rng, 10, 30);
        let x_plus = gaussian(&mut rng, 10, 30);
        let snap = SnapshotMatrices::new(x, x_plus).unwrap();
        let mut previous = f64::INFINITY;
        for cap in 1..=10 {
            let op = fit_operator(&snap, Some(cap), 1e-12).unwrap();
            assert_eq!(op.fit_rank, cap);
            let res = op.fit_residual.unwrap();
            assert!(
                res <= previous * (1.0 + 1e-12),
                "cap {cap}: {res} > {previous}"
            );
            previous = res;
        }
    }
}

#[test]
fn sv_tolerance_bounds() {
    let snap = SnapshotMatrices::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    for tol in [0.0, 1.0, -1.0, f64::NAN] {
        assert!(matches!(
            fit_operator(&snap, None, tol),
            Err(Error::InvalidConfig(_))
        ));
    }
    let empty = SnapshotMatrices::new(DMatrix::zeros(3, 0), DMatrix::zeros(3, 0)).unwrap();
    assert!(matches!(
        fit_operator(&empty, None, 1e-10),
        Err(Error::EmptySnapshots)
    ));
}

#[test]
fn exact_recovery_of_linear_dynamics() {
    let mut rng = rng(2);
    let n = 6;
    let a_star = {
        let g = gaussian(&mut rng, n, n);
        let rho = g
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        g * (0.9 / rho)
    };
    // Several short trajectories so the snapshots stay well conditioned.
    let mut xs = Vec::new();
    let mut xps = Vec::new();
    for _ in 0..8 {
        let mut z = gaussian(&mut rng, n, 1);
        for _ in 0..4 {
            let next = &a_star * &z;
            xs.push(z.column(0).into_owned());
            xps.push(next.column(0).into_owned());
            z = next;
        }
    }
    let snap =
        SnapshotMatrices::new(DMatrix::from_columns(&xs), DMatrix::from_columns(&xps)).unwrap();
    let op = fit_operator(&snap, None, 1e-10).unwrap();
    assert!((op.matrix() - &a_star).amax() < 1e-8);
}

fn traj(id: &str, label: Label, data: DMatrix<f64>) -> EmbeddingTrajectory {
    EmbeddingTrajectory::new(id, label, data, None).unwrap()
}

#[test]
fn snapshots_never_cross_trajectory_boundaries() {
    let a = traj(
        "a",
        Label::Factual,
        DMatrix::from_fn(2, 5, |r, c| (c + 1) as f64 * (r + 1) as f64),
    );
    let b = traj(
        "b",
        Label::Factual,
        DMatrix::from_fn(2, 2, |r, c| -100.0 - (c + 2 * r) as f64),
    );
    let ds = Dataset::new(vec![a.clone(), b.clone()], "t", Split::Fit).unwrap();
    let map = fit_observable_map_with(&ds, 2, Centering::None).unwrap();
    let snap = build_snapshots(ds.trajectories(), &map, &LiftConfig::identity()).unwrap();
    assert_eq!(snap.len(), 5);
    let proj_a = map.project_trajectory(&a).unwrap();
    let proj_b = map.project_trajectory(&b).unwrap();
    for j in 0..4 {
        assert_eq!(snap.x.column(j), proj_a.column(j));
        assert_eq!(snap.x_plus.column(j), proj_a.column(j + 1));
    }
    assert_eq!(snap.x.column(4), proj_b.column(0));
    assert_eq!(snap.x_plus.column(4), proj_b.column(1));

    let short = traj("s", Label::Factual, DMatrix::zeros(2, 1));
    match build_snapshots([&a, &short], &map, &LiftConfig::identity()) {
        Err(Error::TrajectoryTooShort { id, length }) => {
            assert_eq!((id.as_str(), length), ("s", 1))
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn random_dataset(seed: u64, minor: usize) -> Dataset {
    let mut rng = rng(seed);
    let mut trajs = Vec::new();
    for (i, label) in [
        Label::Factual,
        Label::Hallucinated,
        Label::Factual,
        Label::Hallucinated,
    ]
    .into_iter()
    .enumerate()
    {
        let len = rng.random_range(4..9);
        trajs.push(traj(&format!("t{i}"), label, gaussian(&mut rng, 5, len)));
    }
    for i in 0..minor {
        trajs.push(traj(
            &format!("m{i}"),
            Label::MinorInaccurate,
            gaussian(&mut rng, 5, 6),
        ));
    }
    Dataset::new(trajs, "r", Split::Fit).unwrap()
}

#[test]
fn minor_trajectories_do_not_affect_operators() {
    let with_minor = random_dataset(3, 3);
    let without: Vec<_> = with_minor
        .trajectories()
        .iter()
        .filter(|t| t.label() != Label::MinorInaccurate)
        .cloned()
        .collect();
    let without = Dataset::new(without, "r", Split::Fit).unwrap();
    // Same map for both, so only the exclusion rule is under test.
    let map = fit_observable_map(&without, 4).unwrap();
    let lift = LiftConfig::new(2, 2, false).unwrap();
    let (c1, h1) = fit_pair(&with_minor, &map, &lift, None, 1e-10).unwrap();
    let (c2, h2) = fit_pair(&without, &map, &lift, None, 1e-10).unwrap();
    let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(c1.matrix()), bits(c2.matrix()));
    assert_eq!(bits(h1.matrix()), bits(h2.matrix()));
}

#[test]
fn missing_class_is_reported() {
    let ds = random_dataset(4, 0);
    let only_c: Vec<_> = ds.labeled(Label::Factual).cloned().collect();
    let only_c = Dataset::new(only_c, "c", Split::Fit).unwrap();
    let map = fit_observable_map(&only_c, 3).unwrap();
    assert!(matches!(
        fit_pair(&only_c, &map, &LiftConfig::identity(), None, 1e-10),
        Err(Error::MissingClass(Label::Hallucinated))
    ));
}

#[test]
fn fits_are_deterministic() {
    let ds = random_dataset(8, 1);
    let map = fit_observable_map(&ds, 5).unwrap();
    let lift = LiftConfig::new(3, 3, true).unwrap();
    let first = fit_pair(&ds, &map, &lift, None, 1e-10).unwrap();
    for _ in 0..3 {
        assert_eq!(fit_pair(&ds, &map, &lift, None, 1e-10).unwrap(), first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn least_squares_optimality(seed in any::<u64>(), n in 1usize..10, extra in 0usize..20) {
        let mut rng = rng(seed);
        let q = n + extra;
        let x = gaussian(&mut rng, n, q);
        let x_plus = gaussian(&mut rng, n, q);
        let op = fit_operator(&SnapshotMatrices::new(x.clone(), x_plus.clone()).unwrap(), None, 1e-10).unwrap();
        prop_assert!(op.fit_rank <= n.min(q));
        prop_assert!(orthogonality_gap(&x, &x_plus, op.matrix()) < 1e-8);
    }
}

mod common;

use common::*;
use khd_core::metrics::candidate_thresholds;
use khd_core::{
    calibrate, evaluate, sweep_thresholds, CalibrationSample, CalibrationSpec, Confusion, Label,
    LabeledScore, Metric, MinorPolicy,
};
use proptest::prelude::*;
use rand::Rng;

fn random_scores(rng: &mut impl Rng, n: usize, grid: Option<i32>) -> Vec<LabeledScore> {
    let mut out: Vec<LabeledScore> = (0..n)
        .map(|i| {
            let score = match grid {
                // Coarse grid so ties occur.
                Some(g) => rng.random_range(-g..=g) as f64 * 0.5,
                None => rng.random_range(-3.0..3.0),
            };
            LabeledScore::new(format!("s{i}"), score, rng.random_bool(0.4))
        })
        .collect();
    out[0].hallucinated = true;
    out[1].hallucinated = false;
    out
}

/// Pairwise Mann-Whitney estimate of P(halluc score < factual score), ties
/// counted as one half.
fn pairwise_auc(scores: &[LabeledScore]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for h in scores.iter().filter(|s| s.hallucinated) {
        for f in scores.iter().filter(|s| !s.hallucinated) {
            pairs += 1.0;
            if h.score < f.score {
                wins += 1.0;
            } else if h.score == f.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn sweep_matches_brute_recount() {
    let mut rng = rng(42);
    for trial in 0..40 {
        let grid = if trial % 2 == 0 { Some(6) } else { None };
        let scores = random_scores(&mut rng, 100, grid);
        let sweep = sweep_thresholds(&scores).unwrap();
        assert_eq!(sweep.len(), candidate_thresholds(&scores).len());
        for p in &sweep {
            assert_eq!(p.confusion, brute_confusion(&scores, p.threshold));
            assert_eq!(p.confusion, Confusion::at_threshold(&scores, p.threshold));
        }
        assert!(sweep.windows(2).all(|w| w[0].threshold < w[1].threshold));
    }
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = rng(7);
    for trial in 0..30 {
        let grid = if trial % 3 == 0 { Some(4) } else { None };
        let scores = random_scores(&mut rng, 60, grid);
        let report = evaluate(&scores, 0.0).unwrap();
        assert!((report.auc - pairwise_auc(&scores)).abs() < 1e-12);
    }
}

#[test]
fn average_precision_matches_brute_oracle() {
    let mut rng = rng(19);
    for _ in 0..20 {
        let scores = random_scores(&mut rng, 50, Some(5));
        let report = evaluate(&scores, 0.0).unwrap();
        let cands = candidate_thresholds(&scores);
        let pos = scores.iter().filter(|s| s.hallucinated).count() as f64;
        let neg = scores.len() as f64 - pos;
        let (mut ap_h, mut prev) = (0.0, 0.0);
        for &t in &cands {
            let c = brute_confusion(&scores, t);
            let recall = c.tp as f64 / pos;
            let precision = if c.tp + c.fp == 0 {
                0.0
            } else {
                c.tp as f64 / (c.tp + c.fp) as f64
            };
            ap_h += (recall - prev) * precision;
            prev = recall;
        }
        let (mut ap_f, mut prev) = (0.0, 0.0);
        for &t in cands.iter().rev() {
            let c = brute_confusion(&scores, t);
            let recall = c.tn as f64 / neg;
            let precision = if c.tn + c.fn_ == 0 {
                0.0
            } else {
                c.tn as f64 / (c.tn + c.fn_) as f64
            };
            ap_f += (recall - prev) * precision;
            prev = recall;
        }
        assert!((report.auc_pr_per_class.hallucinated - ap_h).abs() < 1e-12);
        assert!((report.auc_pr_per_class.factual - ap_f).abs() < 1e-12);
    }
}

#[test]
fn uninformative_scores_have_auc_near_half() {
    let mut rng = rng(2024);
    let scores: Vec<LabeledScore> = (0..2000)
        .map(|i| {
            LabeledScore::new(
                i.to_string(),
                rng.random_range(-1.0..1.0),
                rng.random_bool(0.5),
            )
        })
        .collect();
    let auc = evaluate(&scores, 0.0).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.1, "auc {auc}");
}

#[test]
fn always_positive_classifier_precision_is_prevalence() {
    // 73 of 100 responses hallucinated, one shared score: a single operating
    // point at recall 1 with precision equal to the prevalence.
    let scores: Vec<LabeledScore> = (0..100)
        .map(|i| LabeledScore::new(i.to_string(), 0.0, i < 73))
        .collect();
    let report = evaluate(&scores, 1.0).unwrap();
    assert_eq!(report.auc_pr_per_class.hallucinated, 0.73);
    assert_eq!(report.auc_pr_per_class.factual, 0.27);
    assert_eq!(100.0 * report.auc_pr_per_class.hallucinated, 73.0);
    assert_eq!(
        report.confusion,
        Confusion {
            tp: 73,
            fp: 27,
            tn: 0,
            fn_: 0
        }
    );
    assert_eq!(report.auc, 0.5);
}

#[test]
fn separated_and_anti_separated_extremes() {
    let sep: Vec<LabeledScore> = (0..20)
        .map(|i| {
            LabeledScore::new(
                i.to_string(),
                if i < 8 { -1.0 - i as f64 } else { i as f64 },
                i < 8,
            )
        })
        .collect();
    let r = evaluate(&sep, 0.0).unwrap();
    assert_eq!(r.auc, 1.0);
    assert_eq!(r.auc_pr_per_class.hallucinated, 1.0);
    assert_eq!(r.auc_pr_per_class.factual, 1.0);
    assert_eq!(r.balanced_accuracy, 1.0);

    let anti: Vec<LabeledScore> = sep
        .iter()
        .map(|s| LabeledScore::new(s.id.clone(), -s.score, s.hallucinated))
        .collect();
    assert_eq!(evaluate(&anti, 0.0).unwrap().auc, 0.0);

    // Constant predictions, either way round.
    for eta in [-1e9, 1e9] {
        assert_eq!(evaluate(&sep, eta).unwrap().balanced_accuracy, 0.5);
    }
}

#[test]
fn flipping_labels_and_negating_scores_preserves_auc() {
    let mut rng = rng(5);
    for _ in 0..20 {
        let scores = random_scores(&mut rng, 40, Some(3));
        let flipped: Vec<LabeledScore> = scores
            .iter()
            .map(|s| LabeledScore::new(s.id.clone(), -s.score, !s.hallucinated))
            .collect();
        let a = evaluate(&scores, 0.0).unwrap();
        let b = evaluate(&flipped, 0.0).unwrap();
        assert!((a.auc - b.auc).abs() < 1e-12);
        assert!((a.auc_pr_per_class.hallucinated - b.auc_pr_per_class.factual).abs() < 1e-12);
    }
}

fn metric_value(metric: Metric, scores: &[LabeledScore], eta: f64) -> f64 {
    metric.value(&brute_confusion(scores, eta))
}

/// Recomputes the relabeling by hand so the library's mapping is not reused.
fn relabel_by_hand(samples: &[CalibrationSample], policy: MinorPolicy) -> Vec<LabeledScore> {
    samples
        .iter()
        .filter_map(|s| {
            let h = match (s.label, policy) {
                (Label::Hallucinated, _) => true,
                (Label::Factual, _) => false,
                (Label::MinorInaccurate, MinorPolicy::TreatAsHallucinated) => true,
                (Label::MinorInaccurate, MinorPolicy::TreatAsFactual) => false,
                _ => return None,
            };
            Some(LabeledScore::new(s.id.clone(), s.score, h))
        })
        .collect()
}

fn mixed_samples(rng: &mut impl Rng, n: usize) -> Vec<CalibrationSample> {
    let mut out = vec![
        CalibrationSample::new("h0", -1.5, Label::Hallucinated),
        CalibrationSample::new("f0", 1.5, Label::Factual),
    ];
    for i in 0..n {
        let (label, centre) = match rng.random_range(0..4) {
            0 => (Label::Hallucinated, -1.0),
            1 => (Label::Factual, 1.0),
            2 => (Label::MinorInaccurate, 0.0),
            _ => (Label::Unlabeled, 0.0),
        };
        let score = centre + rng.random_range(-1.2..1.2);
        out.push(CalibrationSample::new(format!("x{i}"), score, label));
    }
    out
}

#[test]
fn calibrated_threshold_attains_grid_maximum() {
    let mut rng = rng(77);
    for _ in 0..30 {
        let samples = mixed_samples(&mut rng, 40);
        for policy in [
            MinorPolicy::TreatAsHallucinated,
            MinorPolicy::TreatAsFactual,
            MinorPolicy::Exclude,
        ] {
            let relabeled = relabel_by_hand(&samples, policy);
            assert_eq!(policy.apply(&samples), relabeled);
            for metric in [Metric::F1, Metric::BalancedAccuracy, Metric::Youden] {
                let spec = CalibrationSpec {
                    metric,
                    minor_policy: policy,
                };
                let (eta, report) = calibrate(&samples, &spec).unwrap();
                let best = metric_value(metric, &relabeled, eta);
                for &cand in &candidate_thresholds(&relabeled) {
                    assert!(
                        metric_value(metric, &relabeled, cand) <= best,
                        "{metric} {policy:?}"
                    );
                }
                // Arbitrary thresholds never beat the grid either.
                for _ in 0..50 {
                    let t = rng.random_range(-4.0..4.0);
                    assert!(metric_value(metric, &relabeled, t) <= best);
                }
                assert_eq!(report.threshold_used, eta);
                assert_eq!(report.confusion, brute_confusion(&relabeled, eta));
            }
        }
    }
}

#[test]
fn strict_and_tolerant_relabel_minor_samples() {
    let samples = vec![
        CalibrationSample::new("h", -2.0, Label::Hallucinated),
        CalibrationSample::new("m1", -0.1, Label::MinorInaccurate),
        CalibrationSample::new("m2", 0.1, Label::MinorInaccurate),
        CalibrationSample::new("f", 2.0, Label::Factual),
        CalibrationSample::new("u", 0.0, Label::Unlabeled),
    ];
    let strict = MinorPolicy::TreatAsHallucinated.apply(&samples);
    let tolerant = MinorPolicy::TreatAsFactual.apply(&samples);
    let flags = |v: &[LabeledScore]| {
        v.iter()
            .map(|s| (s.id.clone(), s.hallucinated))
            .collect::<Vec<_>>()
    };
    let want = |m: bool| {
        vec![
            ("h".into(), true),
            ("m1".into(), m),
            ("m2".into(), m),
            ("f".into(), false),
        ]
    };
    assert_eq!(flags(&strict), want(true));
    assert_eq!(flags(&tolerant), want(false));

    let f1 = |p| {
        calibrate(
            &samples,
            &CalibrationSpec {
                metric: Metric::F1,
                minor_policy: p,
            },
        )
        .unwrap()
    };
    let (eta_s, rep_s) = f1(MinorPolicy::TreatAsHallucinated);
    let (eta_t, rep_t) = f1(MinorPolicy::TreatAsFactual);
    assert_eq!(rep_s.f1, 1.0);
    assert_eq!(rep_t.f1, 1.0);
    assert!(eta_s > 0.1 && eta_s < 2.0, "{eta_s}");
    assert!(eta_t > -2.0 && eta_t < -0.1, "{eta_t}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn roc_is_monotone_with_fixed_endpoints(
        raw in prop::collection::vec((-50i32..50, any::<bool>()), 2..60),
    ) {
        let mut scores: Vec<LabeledScore> =
            raw.iter().enumerate().map(|(i, &(s, h))| LabeledScore::new(i.to_string(), s as f64 / 7.0, h)).collect();
        scores[0].hallucinated = true;
        scores[1].hallucinated = false;
        let report = evaluate(&scores, 0.0).unwrap();
        let roc = &report.roc;
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        prop_assert_eq!((roc.last().unwrap().fpr, roc.last().unwrap().tpr), (1.0, 1.0));
        prop_assert!(roc.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        prop_assert!((0.0..=1.0).contains(&report.auc));
        let c = report.confusion;
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, scores.len());
        prop_assert_eq!(c.tp + c.fn_, scores.iter().filter(|s| s.hallucinated).count());
    }
}

use lnet_core::eval::{
    line_distance, match_lines, pr_curve, pr_curve_exhaustive, summarize, EvalSample, MatchConfig, ScoredLine,
};
use lnet_core::fht::BoundaryLine;
use lnet_core::Execution;

const N: usize = 64;

fn vertical(x: f64) -> BoundaryLine {
    BoundaryLine::new([x, 0.0], [x, 63.0], N).unwrap()
}

fn horizontal(y: f64) -> BoundaryLine {
    BoundaryLine::new([0.0, y], [63.0, y], N).unwrap()
}

fn scored(line: BoundaryLine, confidence: f64) -> ScoredLine {
    ScoredLine { line, confidence }
}

/// Two images, three gt lines, five detections (threshold 5 px):
///
/// | det | image | line   | conf | fate                                  |
/// |-----|-------|--------|------|---------------------------------------|
/// | d1  | A     | x = 11 | 0.9  | TP for x = 10 (distance 1)            |
/// | d2  | A     | x = 12 | 0.8  | FP: x = 10 already took the stronger d1 |
/// | d3  | A     | y = 50 | 0.6  | FP: 10 px from y = 40                 |
/// | d4  | B     | x = 33 | 0.7  | TP for x = 30 (distance 3)            |
/// | d5  | B     | y = 5  | 0.5  | FP                                    |
fn fixture() -> Vec<EvalSample> {
    vec![
        EvalSample {
            id: 0,
            gt: vec![vertical(10.0), horizontal(40.0)],
            detections: vec![
                scored(vertical(11.0), 0.9),
                scored(vertical(12.0), 0.8),
                scored(horizontal(50.0), 0.6),
            ],
        },
        EvalSample {
            id: 1,
            gt: vec![vertical(30.0)],
            detections: vec![scored(vertical(33.0), 0.7), scored(horizontal(5.0), 0.5)],
        },
    ]
}

#[test]
fn hand_enumerated_curve() {
    let curve = pr_curve(&fixture(), &MatchConfig::default(), Execution::Sequential).unwrap();
    // (threshold, tp, fp, fn)
    let expected = [
        (f64::INFINITY, 0, 0, 3),
        (0.9, 1, 0, 2),
        (0.8, 1, 1, 2),
        (0.7, 2, 1, 1),
        (0.6, 2, 2, 1),
        (0.5, 2, 3, 1),
    ];
    assert_eq!(curve.points.len(), expected.len());
    for (p, &(t, tp, fp, fn_)) in curve.points.iter().zip(&expected) {
        assert_eq!((p.threshold, p.tp, p.fp, p.fn_), (t, tp, fp, fn_));
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        assert_eq!(p.precision, precision);
        assert_eq!(p.recall, tp as f64 / 3.0);
    }
    assert_eq!(curve, pr_curve_exhaustive(&fixture(), &MatchConfig::default()).unwrap());
}

#[test]
fn hand_integrated_average_precision() {
    let s = summarize(&pr_curve(&fixture(), &MatchConfig::default(), Execution::Sequential).unwrap());
    // envelope: precision 1 up to recall 1/3, then max(2/3, 1/2, 2/5) = 2/3 up to 2/3
    let ap = 100.0 * (1.0 / 3.0 * 1.0 + 1.0 / 3.0 * 2.0 / 3.0);
    assert!((s.ap - ap).abs() < 1e-12, "AP {} vs {ap}", s.ap);
    assert_eq!(s.p_at_90r, 0.0);
    assert!((s.r_at_90p - 100.0 / 3.0).abs() < 1e-12);
}

#[test]
fn ground_truth_as_detections_scores_100_and_nothing_scores_0() {
    let perfect: Vec<EvalSample> = fixture()
        .into_iter()
        .map(|mut s| {
            s.detections = s.gt.iter().map(|&l| scored(l, 1.0)).collect();
            s
        })
        .collect();
    let s = summarize(&pr_curve(&perfect, &MatchConfig::default(), Execution::Sequential).unwrap());
    assert_eq!((s.ap, s.p_at_90r, s.r_at_90p), (100.0, 100.0, 100.0));

    let empty: Vec<EvalSample> = fixture()
        .into_iter()
        .map(|mut s| {
            s.detections.clear();
            s
        })
        .collect();
    let curve = pr_curve(&empty, &MatchConfig::default(), Execution::Sequential).unwrap();
    assert!(curve.points.iter().all(|p| p.recall == 0.0));
    assert_eq!(summarize(&curve).ap, 0.0);
}

#[test]
fn matching_examples() {
    let cfg = MatchConfig::default();
    assert_eq!(line_distance(&horizontal(10.0), &horizontal(13.0)), 3.0);

    let gt = [vertical(20.0)];
    let m = match_lines(&gt, &[scored(vertical(21.0), 0.5), scored(vertical(22.0), 0.9)], &cfg, 0.0);
    assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    assert_eq!(m.pairs, vec![(0, 1)]);

    let just_outside = vertical(20.0 + cfg.distance_threshold + 1e-9);
    let m = match_lines(&gt, &[scored(just_outside, 1.0)], &cfg, 0.0);
    assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(pr_curve(&[], &MatchConfig::default(), Execution::Sequential).is_err());
}

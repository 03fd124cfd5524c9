//! Detection quality: greedy matching of detections to ground truth under
//! the end-matching line distance, the precision–recall sweep over
//! confidence thresholds, and its scalar summaries.
//!
//! Matching visits ground-truth lines in record order. Each takes the most
//! confident unclaimed detection within the distance threshold (ties go to
//! the closer line, then to the earlier detection) and both are removed.
//! Leftover detections are false positives, leftover lines false negatives.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{Confidence, DetectConfig, Detection};
use crate::error::{Error, Result};
use crate::fht::{BoundaryLine, GrayImage};
use crate::par::Execution;
use crate::synthgen::Sample;

pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 5.0;

/// Mean distance between matched frame ends of two lines.
pub fn line_distance(a: &BoundaryLine, b: &BoundaryLine) -> f64 {
    a.distance(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// A detection within this distance (inclusive) may match a line.
    pub distance_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distance_threshold > 0.0 && self.distance_threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "distance threshold must be positive, got {}",
                self.distance_threshold
            )))
        }
    }
}

/// A line with a confidence, as seen by the evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredLine {
    pub line: BoundaryLine,
    pub confidence: f64,
}

impl From<&Detection> for ScoredLine {
    fn from(d: &Detection) -> Self {
        ScoredLine {
            line: d.line,
            confidence: d.confidence,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(gt index, detection index)` of each true positive.
    pub pairs: Vec<(usize, usize)>,
}

/// For each ground-truth line in order, the index of the detection it
/// claims when every detection takes part.
fn greedy_picks(gt: &[BoundaryLine], dets: &[ScoredLine], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; dets.len()];
    gt.iter()
        .map(|g| {
            let mut best: Option<(usize, f64)> = None;
            for (j, d) in dets.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let dist = line_distance(g, &d.line);
                if !(dist <= threshold) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((k, bd)) => {
                        let c = dets[k].confidence;
                        d.confidence > c || (d.confidence == c && dist < bd)
                    }
                };
                if better {
                    best = Some((j, dist));
                }
            }
            best.map(|(j, _)| {
                taken[j] = true;
                j
            })
        })
        .collect()
}

/// Matches detections with confidence at least `conf_threshold` against `gt`.
pub fn match_lines(gt: &[BoundaryLine], dets: &[ScoredLine], cfg: &MatchConfig, conf_threshold: f64) -> MatchResult {
    let kept: Vec<usize> = (0..dets.len())
        .filter(|&j| dets[j].confidence >= conf_threshold)
        .collect();
    let subset: Vec<ScoredLine> = kept.iter().map(|&j| dets[j].clone()).collect();
    let picks = greedy_picks(gt, &subset, cfg.distance_threshold);
    let pairs: Vec<(usize, usize)> = picks
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|j| (i, kept[j])))
        .collect();
    MatchResult {
        tp: pairs.len(),
        fp: kept.len() - pairs.len(),
        fn_: gt.len() - pairs.len(),
        pairs,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: usize,
    pub gt: Vec<BoundaryLine>,
    pub detections: Vec<ScoredLine>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Detections with confidence at least this value are kept.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Points by descending threshold, starting at `+inf` (no detections).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub gt_count: usize,
}

fn point(threshold: f64, tp: usize, dets: usize, gt: usize) -> PrPoint {
    PrPoint {
        threshold,
        precision: if dets == 0 { 1.0 } else { tp as f64 / dets as f64 },
        recall: if gt == 0 { 1.0 } else { tp as f64 / gt as f64 },
        tp,
        fp: dets - tp,
        fn_: gt - tp,
    }
}

/// Precision and recall at every distinct confidence, aggregated over the
/// samples.
///
/// Matching runs once per sample with all detections: dropping the
/// detections below a threshold never changes what a line would claim
/// among the remaining ones, so a line is matched at threshold `t` exactly
/// when its full-run pick has confidence at least `t`.
pub fn pr_curve(samples: &[EvalSample], cfg: &MatchConfig, exec: Execution) -> Result<PrCurve> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.detections.iter().any(|d| !d.confidence.is_finite())) {
        return Err(Error::NonFinite(format!("detection confidence in sample {}", s.id)));
    }
    let picks = exec.map(samples, |s| {
        greedy_picks(&s.gt, &s.detections, cfg.distance_threshold)
            .into_iter()
            .flatten()
            .map(|j| s.detections[j].confidence)
            .collect::<Vec<f64>>()
    });
    let mut det_conf: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.detections.iter().map(|d| d.confidence))
        .collect();
    let mut tp_conf: Vec<f64> = picks.into_iter().flatten().collect();
    det_conf.sort_by(|a, b| b.total_cmp(a));
    tp_conf.sort_by(|a, b| b.total_cmp(a));
    let gt_count: usize = samples.iter().map(|s| s.gt.len()).sum();

    let mut points = vec![point(f64::INFINITY, 0, 0, gt_count)];
    let (mut di, mut ti) = (0, 0);
    while di < det_conf.len() {
        let t = det_conf[di];
        while di < det_conf.len() && det_conf[di] >= t {
            di += 1;
        }
        while ti < tp_conf.len() && tp_conf[ti] >= t {
            ti += 1;
        }
        points.push(point(t, ti, di, gt_count));
    }
    Ok(PrCurve { points, gt_count })
}

/// Runs `detect` on every sample image and evaluates the result.
pub fn evaluate_detector<F>(samples: &[Sample], cfg: &MatchConfig, exec: Execution, detect: F) -> Result<(PrCurve, Summary)>
where
    F: Fn(&GrayImage) -> Result<Vec<Detection>> + Sync + Send,
{
    let dets = exec.map(samples, |s| detect(&s.image));
    let eval = samples
        .iter()
        .zip(dets)
        .map(|(s, d)| {
            Ok(EvalSample {
                id: s.id,
                gt: s.gt_lines.clone(),
                detections: d?.iter().map(ScoredLine::from).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = pr_curve(&eval, cfg, exec)?;
    let summary = summarize(&curve);
    Ok((curve, summary))
}

/// Reference sweep that re-runs the matching at every threshold.
pub fn pr_curve_exhaustive(samples: &[EvalSample], cfg: &MatchConfig) -> Result<PrCurve> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let mut thresholds: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.detections.iter().map(|d| d.confidence))
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    let gt_count: usize = samples.iter().map(|s| s.gt.len()).sum();
    let points = thresholds
        .into_iter()
        .map(|t| {
            let (mut tp, mut dets) = (0, 0);
            for s in samples {
                let r = match_lines(&s.gt, &s.detections, cfg, t);
                tp += r.tp;
                dets += r.tp + r.fp;
            }
            point(t, tp, dets, gt_count)
        })
        .collect();
    Ok(PrCurve { points, gt_count })
}

/// Scalar summaries in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ap: f64,
    pub p_at_90r: f64,
    pub r_at_90p: f64,
}

/// All-points interpolated AP (area under the precision envelope over
/// recall), best precision at recall >= 0.9 and best recall at
/// precision >= 0.9.
pub fn summarize(curve: &PrCurve) -> Summary {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[i];
            prev_recall = r;
        }
    }
    let best = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    let p_at_90r = best(&mut curve.points.iter().filter(|p| p.recall >= 0.9).map(|p| p.precision));
    let r_at_90p = best(&mut curve.points.iter().filter(|p| p.precision >= 0.9).map(|p| p.recall));
    Summary {
        ap: 100.0 * ap,
        p_at_90r: 100.0 * p_at_90r,
        r_at_90p: 100.0 * r_at_90p,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    pub p_at_90r: f64,
    pub r_at_90p: f64,
    pub distance_threshold: f64,
    pub nms_window: usize,
    /// How the scored detections' confidences were derived.
    #[serde(default)]
    pub confidence: Confidence,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn new(summary: Summary, cfg: &MatchConfig, detect: &DetectConfig, n_samples: usize) -> Self {
        MetricsReport {
            ap: summary.ap,
            p_at_90r: summary.p_at_90r,
            r_at_90p: summary.r_at_90p,
            distance_threshold: cfg.distance_threshold,
            nms_window: detect.window,
            confidence: detect.confidence,
            n_samples,
        }
    }
}

pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall,tp,fp,fn\n");
    for p in &curve.points {
        writeln!(out, "{},{},{},{},{},{}", p.threshold, p.precision, p.recall, p.tp, p.fp, p.fn_)
            .expect("write to string");
    }
    out
}

/// Step plot of the precision envelope, recall on x and precision on y.
pub fn plot_pr_curve(curve: &PrCurve, path: &Path) -> Result<()> {
    const SIZE: u32 = 400;
    const MARGIN: u32 = 30;
    let mut img = image::RgbImage::from_pixel(SIZE, SIZE, image::Rgb([255, 255, 255]));
    let span = (SIZE - 2 * MARGIN) as f64;
    let to_px = |r: f64, p: f64| {
        (
            MARGIN as f64 + r.clamp(0.0, 1.0) * span,
            (SIZE - MARGIN) as f64 - p.clamp(0.0, 1.0) * span,
        )
    };
    let mut line = |a: (f64, f64), b: (f64, f64), color: [u8; 3]| {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let x = (a.0 + t * (b.0 - a.0)).round() as u32;
            let y = (a.1 + t * (b.1 - a.1)).round() as u32;
            if x < SIZE && y < SIZE {
                img.put_pixel(x, y, image::Rgb(color));
            }
        }
    };
    let grey = [160, 160, 160];
    line(to_px(0.0, 0.0), to_px(1.0, 0.0), grey);
    line(to_px(0.0, 0.0), to_px(0.0, 1.0), grey);
    line(to_px(0.9, 0.0), to_px(0.9, 1.0), [220, 220, 220]);
    line(to_px(0.0, 0.9), to_px(1.0, 0.9), [220, 220, 220]);
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    for i in (0..pts.len().saturating_sub(1)).rev() {
        pts[i].1 = pts[i].1.max(pts[i + 1].1);
    }
    for w in pts.windows(2) {
        let corner = (w[1].0, w[0].1);
        line(to_px(w[0].0, w[0].1), to_px(corner.0, corner.1), [200, 30, 30]);
        line(to_px(corner.0, corner.1), to_px(w[1].0, w[1].1), [200, 30, 30]);
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hline(y: f64) -> BoundaryLine {
        BoundaryLine::new([0.0, y], [255.0, y], 256).unwrap()
    }

    fn scored(y: f64, c: f64) -> ScoredLine {
        ScoredLine {
            line: hline(y),
            confidence: c,
        }
    }

    #[test]
    fn horizontal_distance() {
        assert_eq!(line_distance(&hline(10.0), &hline(13.0)), 3.0);
        assert_eq!(line_distance(&hline(10.0), &hline(10.0)), 0.0);
    }

    #[test]
    fn most_confident_wins() {
        let cfg = MatchConfig::default();
        let r = match_lines(&[hline(50.0)], &[scored(52.0, 0.5), scored(51.0, 0.9)], &cfg, 0.0);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!(r.pairs, [(0, 1)]);
    }

    #[test]
    fn threshold_is_inclusive_and_strict_beyond() {
        let cfg = MatchConfig::default();
        let r = match_lines(&[hline(50.0)], &[scored(55.0, 1.0)], &cfg, 0.0);
        assert_eq!(r.tp, 1);
        let r = match_lines(&[hline(50.0)], &[scored(55.0 + 1e-9, 1.0)], &cfg, 0.0);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn perfect_and_empty() {
        let cfg = MatchConfig::default();
        let gt = vec![hline(10.0), hline(100.0)];
        let perfect = EvalSample {
            id: 0,
            gt: gt.clone(),
            detections: vec![scored(10.0, 1.0), scored(100.0, 1.0)],
        };
        let s = summarize(&pr_curve(&[perfect], &cfg, Execution::Sequential).unwrap());
        assert_eq!((s.ap, s.p_at_90r, s.r_at_90p), (100.0, 100.0, 100.0));
        let empty = EvalSample { id: 0, gt, detections: vec![] };
        let c = pr_curve(&[empty], &cfg, Execution::Sequential).unwrap();
        assert!(c.points.iter().all(|p| p.recall == 0.0));
        assert_eq!(summarize(&c).ap, 0.0);
        assert!(pr_curve(&[], &cfg, Execution::Sequential).is_err());
    }

    #[test]
    fn capped_recall_has_no_precision_at_90() {
        let cfg = MatchConfig::default();
        let gt: Vec<BoundaryLine> = (0..5).map(|i| hline(20.0 + 40.0 * i as f64)).collect();
        let dets = (0..4).map(|i| scored(20.0 + 40.0 * i as f64, 1.0)).collect();
        let c = pr_curve(&[EvalSample { id: 0, gt, detections: dets }], &cfg, Execution::Sequential).unwrap();
        let s = summarize(&c);
        assert_eq!(s.p_at_90r, 0.0);
        assert!((s.ap - 80.0).abs() < 1e-12);
    }
}

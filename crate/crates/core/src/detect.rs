//! Line detection as peak picking in Hough space.
//!
//! A cell is a peak when it beats every other cell of its plane inside a
//! `window x window` neighbourhood. Equal values are resolved in favour of
//! the smaller `(shift, offset)` pair, so a flat plateau yields exactly one
//! peak. Zero-region cells, cells whose line only grazes a corner and
//! boundary-angle cells owned by a neighbouring plane are never reported
//! but still take part as neighbours.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fht::{fht_forward_with, line_from_cell, BoundaryLine, DyadicLine, GrayImage, HoughMap, Quadrant, QUADRANTS};
use crate::lnet::LNetModel;
use crate::par::Execution;

/// Wide enough that the shoulders of one anti-aliased line's peak, a few
/// cells to each side, do not come out as separate detections.
pub const DEFAULT_WINDOW: usize = 15;
/// Per-image detection cap; scenes hold a handful of lines, so the tail
/// beyond this is all clutter.
pub const DEFAULT_MAX_DETECTIONS: usize = 100;
/// Cells without any evidence (a zero score) are not lines.
pub const DEFAULT_MIN_CONF: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub line: BoundaryLine,
    /// The map value at `cell`, or that value relative to the image's
    /// strongest peak under [`Confidence::Relative`].
    pub confidence: f64,
    pub cell: DyadicLine,
}

/// On-disk form of a detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub confidence: f64,
    pub quadrant: Quadrant,
    pub offset_x: i64,
    pub shift_s: i64,
}

impl Detection {
    pub fn to_record(&self) -> DetectionRecord {
        let [x0, y0, x1, y1] = self.line.to_array();
        DetectionRecord {
            x0,
            y0,
            x1,
            y1,
            confidence: self.confidence,
            quadrant: self.cell.quadrant,
            offset_x: self.cell.offset_x,
            shift_s: self.cell.shift_s,
        }
    }

    pub fn from_record(r: &DetectionRecord, n: usize) -> Result<Self> {
        Ok(Detection {
            line: BoundaryLine::from_array([r.x0, r.y0, r.x1, r.y1], n)?,
            confidence: r.confidence,
            cell: DyadicLine::new(r.quadrant, r.offset_x, r.shift_s, n)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub id: usize,
    pub image_size: usize,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn new(id: usize, image_size: usize, detections: &[Detection]) -> Self {
        DetectionFile {
            id,
            image_size,
            detections: detections.iter().map(Detection::to_record).collect(),
        }
    }

    pub fn detections(&self) -> Result<Vec<Detection>> {
        self.detections
            .iter()
            .map(|r| Detection::from_record(r, self.image_size))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "NMS window must be odd and at least 3, got {window}"
        )));
    }
    Ok(())
}

/// Peaks of one plane as flat plane indices, `eligible` filtering cells
/// that may be reported.
fn plane_peaks(map: &HoughMap, q: Quadrant, r: i64, min_conf: f64, eligible: &(dyn Fn(usize) -> bool + Sync)) -> Vec<usize> {
    let n = map.n() as i64;
    let w = map.width() as i64;
    let base = q.index() * map.plane_len();
    let plane = map.plane(q);
    let mut out = Vec::new();
    for s in 0..n {
        for c in 0..w {
            let i = (s * w + c) as usize;
            let v = plane[i];
            if !(v >= min_conf) || !eligible(base + i) {
                continue;
            }
            let mut keep = true;
            'window: for ns in (s - r).max(0)..=(s + r).min(n - 1) {
                for nc in (c - r).max(0)..=(c + r).min(w - 1) {
                    if (ns, nc) == (s, c) {
                        continue;
                    }
                    let vn = plane[(ns * w + nc) as usize];
                    // columns grow with the offset, so (ns, nc) orders like (s, x)
                    if !(v > vn || (v == vn && (s, c) < (ns, nc))) {
                        keep = false;
                        break 'window;
                    }
                }
            }
            if keep {
                out.push(base + i);
            }
        }
    }
    out
}

fn peaks_with(
    map: &HoughMap,
    window: usize,
    min_conf: f64,
    exec: Execution,
    eligible: &(dyn Fn(usize) -> bool + Sync),
) -> Result<Vec<Detection>> {
    check_window(window)?;
    let r = (window / 2) as i64;
    let per_plane = exec.map(&QUADRANTS, |&q| plane_peaks(map, q, r, min_conf, eligible));
    let mut dets = Vec::new();
    for i in per_plane.into_iter().flatten() {
        let cell = map.cell_of(i);
        dets.push(Detection {
            line: line_from_cell(&cell)?,
            confidence: map.data()[i],
            cell,
        });
    }
    // stable: equal confidences keep plane/shift/offset order
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(dets)
}

fn reportable(map: &HoughMap) -> impl Fn(usize) -> bool + Sync + '_ {
    move |i| {
        let cell = map.cell_of(i);
        !cell.is_zero_region() && cell.has_line() && cell.is_canonical()
    }
}

/// Local maxima of `map` at or above `min_conf`, by descending confidence.
pub fn nms_peaks(map: &HoughMap, window: usize, min_conf: f64) -> Result<Vec<Detection>> {
    nms_peaks_with(map, window, min_conf, Execution::default())
}

pub fn nms_peaks_with(map: &HoughMap, window: usize, min_conf: f64, exec: Execution) -> Result<Vec<Detection>> {
    peaks_with(map, window, min_conf, exec, &reportable(map))
}

/// How peak values become detection confidences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// The map value at the peak.
    #[default]
    Raw,
    /// The map value divided by the image's strongest reported peak, so
    /// each image's best detection scores 1. Makes confidences comparable
    /// across images when the map's overall scale varies from image to
    /// image; `min_conf` still applies to the raw values.
    Relative,
}

impl std::fmt::Display for Confidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Confidence::Raw => "raw",
            Confidence::Relative => "relative",
        })
    }
}

impl std::str::FromStr for Confidence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Confidence::Raw),
            "relative" => Ok(Confidence::Relative),
            other => Err(Error::InvalidArgument(format!(
                "unknown confidence mode {other:?} (expected raw or relative)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub window: usize,
    pub min_conf: f64,
    /// Keep only this many of the most confident peaks per image.
    #[serde(default)]
    pub max_detections: Option<usize>,
    #[serde(default)]
    pub confidence: Confidence,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            window: DEFAULT_WINDOW,
            min_conf: DEFAULT_MIN_CONF,
            max_detections: Some(DEFAULT_MAX_DETECTIONS),
            confidence: Confidence::Raw,
        }
    }
}

impl DetectConfig {
    pub fn new(window: usize, min_conf: f64) -> Self {
        DetectConfig {
            window,
            min_conf,
            ..Default::default()
        }
    }

    /// Applies the detection cap and the confidence mode to peaks sorted
    /// by decreasing value.
    fn finish(&self, mut dets: Vec<Detection>) -> Vec<Detection> {
        if let Some(k) = self.max_detections {
            dets.truncate(k);
        }
        if self.confidence == Confidence::Relative {
            if let Some(top) = dets.first().map(|d| d.confidence).filter(|&t| t > 0.0) {
                dets.iter_mut().for_each(|d| d.confidence /= top);
            }
        }
        dets
    }
}

/// How the baseline turns a Hough sum into a confidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineScore {
    /// The raw sum along the pattern.
    Sum,
    /// Mean intensity along the pattern.
    Mean,
    /// Mean intensity along the pattern minus the mean of the whole image,
    /// clipped at zero: how much brighter the line is than the background.
    Contrast,
}

impl std::fmt::Display for BaselineScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineScore::Sum => "sum",
            BaselineScore::Mean => "mean",
            BaselineScore::Contrast => "contrast",
        })
    }
}

impl std::str::FromStr for BaselineScore {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(BaselineScore::Sum),
            "mean" => Ok(BaselineScore::Mean),
            "contrast" => Ok(BaselineScore::Contrast),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline score {other:?} (expected sum, mean or contrast)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub score: BaselineScore,
    /// Cells whose pattern covers fewer pixels are never reported.
    pub min_support: usize,
}

impl BaselineConfig {
    /// Background-corrected mean score; lines shorter than `n / 8` pixels
    /// are ignored, since a handful of bright pixels would otherwise give a
    /// short corner line a perfect mean.
    pub fn for_size(n: usize) -> Self {
        BaselineConfig {
            score: BaselineScore::Contrast,
            min_support: n / 8,
        }
    }

    /// Plain Hough sums, every cell with a line eligible.
    pub fn raw() -> Self {
        BaselineConfig {
            score: BaselineScore::Sum,
            min_support: 0,
        }
    }
}

/// Classical detector: a score derived from the Hough sums followed by peak
/// picking.
#[derive(Clone, Debug)]
pub struct BaselineDetector {
    config: BaselineConfig,
    counts: HoughMap,
}

impl BaselineDetector {
    pub fn new(n: usize, config: BaselineConfig) -> Result<Self> {
        let ones = GrayImage::new(n, vec![1.0; n * n])?;
        Ok(BaselineDetector {
            config,
            counts: fht_forward_with(&ones, Execution::Sequential)?,
        })
    }

    pub fn config(&self) -> BaselineConfig {
        self.config
    }

    /// Pixel count of every cell's pattern.
    pub fn support(&self) -> &HoughMap {
        &self.counts
    }

    pub fn score_map(&self, image: &GrayImage, exec: Execution) -> Result<HoughMap> {
        if image.size() != self.counts.n() {
            return Err(Error::Shape {
                context: "baseline detector",
                dim: "image size",
                expected: self.counts.n(),
                actual: image.size(),
            });
        }
        let mut map = fht_forward_with(image, exec)?;
        let background = match self.config.score {
            BaselineScore::Sum => return Ok(map),
            BaselineScore::Mean => 0.0,
            BaselineScore::Contrast => image.pixels().iter().sum::<f64>() / image.pixels().len() as f64,
        };
        for (v, &c) in map.data_mut().iter_mut().zip(self.counts.data()) {
            *v = if c > 0.0 { (*v / c - background).max(0.0) } else { 0.0 };
        }
        Ok(map)
    }

    pub fn detect(&self, image: &GrayImage, cfg: &DetectConfig, exec: Execution) -> Result<Vec<Detection>> {
        let map = self.score_map(image, exec)?;
        let min_support = self.config.min_support.max(1) as f64;
        let counts = self.counts.data();
        let base = reportable(&map);
        let eligible = move |i: usize| counts[i] >= min_support && base(i);
        Ok(cfg.finish(peaks_with(&map, cfg.window, cfg.min_conf, exec, &eligible)?))
    }
}

/// One-shot baseline with the default settings for the image size.
pub fn baseline_detect(image: &GrayImage, window: usize, min_conf: f64) -> Result<Vec<Detection>> {
    BaselineDetector::new(image.size(), BaselineConfig::for_size(image.size()))?.detect(
        image,
        &DetectConfig::new(window, min_conf),
        Execution::default(),
    )
}

pub fn lnet_detect(model: &LNetModel, image: &GrayImage, cfg: &DetectConfig, exec: Execution) -> Result<Vec<Detection>> {
    Ok(cfg.finish(nms_peaks_with(&model.forward_with(image, exec)?, cfg.window, cfg.min_conf, exec)?))
}

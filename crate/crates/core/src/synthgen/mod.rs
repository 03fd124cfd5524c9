//! Seeded generator for the synthetic line dataset.
//!
//! Each sample starts black and receives 1..=5 segments, each dense,
//! dotted or complex with equal probability. The ground truth is the set
//! of lines containing the segments, extended to the image frame. Per-image
//! uniform noise and a Gaussian blur are applied last, then values are
//! clamped to `[0, 1]`.

mod io;
mod raster;

pub use io::{
    generate_dataset, load_png, sample_seed, save_png, DatasetManifest, GroundTruthRecord, ManifestEntry, Split,
    GENERATOR_VERSION, SCHEMA_VERSION,
};
pub use raster::draw_aa_segment;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fht::{BoundaryLine, GrayImage};
use crate::tensor::gaussian_blur;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindTag {
    Dense,
    Dotted,
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SegmentKind {
    Dense,
    /// `period` and `duty` are fractions of the segment length and of the period.
    Dotted { period: f64, duty: f64 },
    /// Sub-intervals of the parent segment, as `[t0, t1]` fractions of its length.
    Complex { pieces: Vec<(f64, f64)> },
}

impl SegmentKind {
    pub fn tag(&self) -> KindTag {
        match self {
            SegmentKind::Dense => KindTag::Dense,
            SegmentKind::Dotted { .. } => KindTag::Dotted,
            SegmentKind::Complex { .. } => KindTag::Complex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub kind: SegmentKind,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    /// Drawn parts of the segment as `[t0, t1]` fractions of its length.
    pub fn strokes(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            SegmentKind::Dense => vec![(0.0, 1.0)],
            SegmentKind::Dotted { period, duty } => {
                let mut out = Vec::new();
                let mut k = 0usize;
                loop {
                    let t0 = k as f64 * period;
                    if t0 >= 1.0 {
                        break;
                    }
                    out.push((t0, (t0 + duty * period).min(1.0)));
                    k += 1;
                }
                out
            }
            SegmentKind::Complex { pieces } => pieces.clone(),
        }
    }

    fn point(&self, t: f64) -> [f64; 2] {
        [
            self.a[0] + t * (self.b[0] - self.a[0]),
            self.a[1] + t * (self.b[1] - self.a[1]),
        ]
    }

    pub fn render(&self, img: &mut GrayImage) {
        for (t0, t1) in self.strokes() {
            draw_aa_segment(img, self.point(t0), self.point(t1));
        }
    }
}

/// Forces parts of the random routine; used for degenerate test configs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenOverrides {
    pub line_count: Option<usize>,
    pub kind: Option<KindTag>,
    pub noise_amplitude: Option<f64>,
    pub blur_sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub image_size: usize,
    /// Inclusive range of segments per image.
    pub line_count: (usize, usize),
    /// Segments shorter than this fraction of the image size are resampled.
    pub min_segment_fraction: f64,
    pub dotted_period: (f64, f64),
    pub dotted_duty: (f64, f64),
    /// Inclusive range of sub-segments in a complex segment.
    pub complex_pieces: (usize, usize),
    /// Sub-segments shorter than this many pixels are resampled.
    pub min_piece_length: f64,
    pub noise_max: f64,
    pub blur_sigma_max: f64,
    /// Ground-truth lines closer than this end-matching distance are resampled.
    pub min_line_separation: f64,
    #[serde(default)]
    pub overrides: GenOverrides,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 256,
            line_count: (1, 5),
            min_segment_fraction: 0.25,
            dotted_period: (0.07, 0.25),
            dotted_duty: (0.6, 0.9),
            complex_pieces: (2, 5),
            min_piece_length: 4.0,
            noise_max: 0.25,
            blur_sigma_max: 1.5,
            min_line_separation: 3.0,
            overrides: GenOverrides::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub split: Split,
    pub image: GrayImage,
    pub gt_lines: Vec<BoundaryLine>,
    /// Empty for samples loaded from disk.
    pub segments: Vec<Segment>,
    pub noise_amplitude: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn disjoint(a: (f64, f64), b: (f64, f64)) -> bool {
    a.1 < b.0 || b.1 < a.0
}

fn sample_pieces<R: Rng>(rng: &mut R, cfg: &GenConfig, length: f64) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = cfg.complex_pieces;
    let count = rng.gen_range(lo..=hi);
    let failed = Error::ResampleLimit {
        what: "two non-overlapping complex sub-segments",
        attempts: MAX_ATTEMPTS,
    };
    if length < 2.0 * cfg.min_piece_length {
        return Err(failed);
    }
    let min_t = cfg.min_piece_length / length;
    for _ in 0..MAX_ATTEMPTS {
        let mut pieces = Vec::with_capacity(count);
        while pieces.len() < count {
            let mut piece = None;
            for _ in 0..MAX_ATTEMPTS {
                let (t0, t1): (f64, f64) = (rng.gen(), rng.gen());
                let (t0, t1) = (t0.min(t1), t0.max(t1));
                if t1 - t0 >= min_t {
                    piece = Some((t0, t1));
                    break;
                }
            }
            pieces.push(piece.ok_or(Error::ResampleLimit {
                what: "complex sub-segment length",
                attempts: MAX_ATTEMPTS,
            })?);
        }
        let separated = (0..pieces.len())
            .any(|i| (i + 1..pieces.len()).any(|j| disjoint(pieces[i], pieces[j])));
        if separated {
            return Ok(pieces);
        }
    }
    Err(failed)
}

fn sample_kind<R: Rng>(rng: &mut R, cfg: &GenConfig, length: f64) -> Result<SegmentKind> {
    let tag = match cfg.overrides.kind {
        Some(tag) => tag,
        None => [KindTag::Dense, KindTag::Dotted, KindTag::Complex][rng.gen_range(0..3)],
    };
    Ok(match tag {
        KindTag::Dense => SegmentKind::Dense,
        KindTag::Dotted => SegmentKind::Dotted {
            period: uniform(rng, cfg.dotted_period),
            duty: uniform(rng, cfg.dotted_duty),
        },
        KindTag::Complex => SegmentKind::Complex {
            pieces: sample_pieces(rng, cfg, length)?,
        },
    })
}

/// A segment at least `min_len` long whose line keeps its distance from
/// the lines already placed; `None` after too many rejections.
fn place_segment<R: Rng>(
    rng: &mut R,
    n: usize,
    min_len: f64,
    placed: &[BoundaryLine],
    min_separation: f64,
) -> Option<([f64; 2], [f64; 2], BoundaryLine)> {
    let m = (n - 1) as f64;
    for _ in 0..MAX_ATTEMPTS {
        let a = [rng.gen_range(0.0..=m), rng.gen_range(0.0..=m)];
        let b = [rng.gen_range(0.0..=m), rng.gen_range(0.0..=m)];
        if (b[0] - a[0]).hypot(b[1] - a[1]) < min_len {
            continue;
        }
        let Ok(line) = BoundaryLine::through(a, b, n) else {
            continue;
        };
        if placed.iter().all(|g| g.distance(&line) > min_separation) {
            return Some((a, b, line));
        }
    }
    None
}

/// One sample drawn from `rng`. `id`, `split` and `seed` are left at
/// defaults for the caller to fill in.
pub fn generate_sample_with_rng<R: Rng>(rng: &mut R, cfg: &GenConfig) -> Result<Sample> {
    let n = cfg.image_size;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("image size {n} too small")));
    }
    let count = match cfg.overrides.line_count {
        Some(k) => k,
        None => rng.gen_range(cfg.line_count.0..=cfg.line_count.1),
    };
    let min_len = cfg.min_segment_fraction * n as f64;

    let mut segments = Vec::with_capacity(count);
    let mut gt_lines: Vec<BoundaryLine> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        // A complex segment too short for two separate pieces is re-placed.
        for _ in 0..MAX_ATTEMPTS {
            let Some((a, b, line)) = place_segment(rng, n, min_len, &gt_lines, cfg.min_line_separation) else {
                continue;
            };
            let length = (b[0] - a[0]).hypot(b[1] - a[1]);
            match sample_kind(rng, cfg, length) {
                Ok(kind) => {
                    accepted = Some((Segment { a, b, kind }, line));
                    break;
                }
                Err(Error::ResampleLimit { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let (segment, line) = accepted.ok_or(Error::ResampleLimit {
            what: "segment placement",
            attempts: MAX_ATTEMPTS,
        })?;
        segments.push(segment);
        gt_lines.push(line);
    }

    let mut image = GrayImage::zeros(n);
    for seg in &segments {
        seg.render(&mut image);
    }

    let noise_amplitude = match cfg.overrides.noise_amplitude {
        Some(a) => a,
        None => uniform(rng, (0.0, cfg.noise_max)),
    };
    if noise_amplitude > 0.0 {
        for p in image.pixels_mut() {
            *p += noise_amplitude * rng.gen::<f64>();
        }
    }

    let blur_sigma = match cfg.overrides.blur_sigma {
        Some(s) => s,
        None => uniform(rng, (0.0, cfg.blur_sigma_max)),
    };
    if blur_sigma > 0.0 {
        let blurred = gaussian_blur(&image.to_tensor(), blur_sigma, true)?;
        image = GrayImage::from_tensor(&blurred)?;
    }
    for p in image.pixels_mut() {
        *p = p.clamp(0.0, 1.0);
    }

    Ok(Sample {
        id: 0,
        split: Split::Train,
        image,
        gt_lines,
        segments,
        noise_amplitude,
        blur_sigma,
        seed: 0,
    })
}

/// Sample drawn from a ChaCha8 stream seeded with `seed`.
pub fn generate_sample(seed: u64, cfg: &GenConfig) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = generate_sample_with_rng(&mut rng, cfg)?;
    sample.seed = seed;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_config_draws_one_clean_stroke() {
        let cfg = GenConfig {
            overrides: GenOverrides {
                line_count: Some(1),
                kind: Some(KindTag::Dense),
                noise_amplitude: Some(0.0),
                blur_sigma: Some(0.0),
            },
            ..GenConfig::default()
        };
        let s = generate_sample(42, &cfg).unwrap();
        assert_eq!(s.gt_lines.len(), 1);
        let mut expected = GrayImage::zeros(256);
        draw_aa_segment(&mut expected, s.segments[0].a, s.segments[0].b);
        assert_eq!(s.image, expected);
        let lit = s.image.pixels().iter().filter(|&&v| v > 0.0).count();
        assert!(lit as f64 >= 0.25 * 256.0);
    }

    #[test]
    fn samples_respect_invariants() {
        let cfg = GenConfig::default();
        for seed in 0..40 {
            let s = generate_sample(seed, &cfg).unwrap();
            assert!((1..=5).contains(&s.gt_lines.len()));
            assert!(s.image.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((0.0..0.25).contains(&s.noise_amplitude));
            assert!((0.0..1.5).contains(&s.blur_sigma));
            for (i, a) in s.gt_lines.iter().enumerate() {
                for b in &s.gt_lines[i + 1..] {
                    assert!(a.distance(b) > 3.0);
                }
            }
            for seg in &s.segments {
                assert!(seg.length() >= 64.0);
                let strokes = seg.strokes();
                match seg.kind {
                    SegmentKind::Dense => assert_eq!(strokes.len(), 1),
                    _ => {
                        let separated = (0..strokes.len()).any(|i| {
                            (i + 1..strokes.len()).any(|j| disjoint(strokes[i], strokes[j]))
                        });
                        assert!(separated, "{seg:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let cfg = GenConfig::default();
        assert_eq!(generate_sample(9, &cfg).unwrap(), generate_sample(9, &cfg).unwrap());
        assert_ne!(
            generate_sample(9, &cfg).unwrap().image,
            generate_sample(10, &cfg).unwrap().image
        );
    }

    #[test]
    fn dotted_strokes_follow_period_and_duty() {
        let seg = Segment {
            a: [0.0, 0.0],
            b: [100.0, 0.0],
            kind: SegmentKind::Dotted {
                period: 0.2,
                duty: 0.75,
            },
        };
        let strokes = seg.strokes();
        assert_eq!(strokes.len(), 5);
        for (k, (t0, t1)) in strokes.iter().enumerate() {
            assert!((t0 - 0.2 * k as f64).abs() < 1e-12);
            assert!((t1 - t0 - 0.15).abs() < 1e-12);
        }
    }
}

//! Dataset layout on disk:
//!
//! ```text
//! <root>/manifest.json
//! <root>/images/0000.png   8-bit grayscale
//! <root>/gt/0000.json      ground-truth record
//! ```
//!
//! Per-sample seeds are the outputs of a SplitMix64 stream seeded with the
//! master seed (see [`sample_seed`]), so any sample can be regenerated on
//! its own.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_sample, GenConfig, Sample};
use crate::error::{Error, Result};
use crate::fht::{BoundaryLine, GrayImage};
use crate::par::Execution;

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("lnet-synthgen/", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: usize,
    pub split: Split,
    pub image_size: usize,
    /// Frame endpoints `[x0, y0, x1, y1]` in pixels, origin top-left.
    pub lines: Vec<[f64; 4]>,
    pub noise_amplitude: f64,
    pub blur_sigma: f64,
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    /// Paths relative to the dataset root.
    pub image: String,
    pub ground_truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub master_seed: u64,
    pub image_size: usize,
    pub config: GenConfig,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// `index`-th output (0-based) of a SplitMix64 generator seeded with `master`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, image: &GrayImage) -> Result<()> {
    let n = image.size() as u32;
    let bytes: Vec<u8> = image.pixels().iter().map(|&v| quantize(v)).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        n,
        n,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

/// Reads an 8-bit grayscale PNG into `[0, 1]` values.
pub fn load_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::format(path, format!("image is {w}x{h}, expected a square")));
    }
    GrayImage::new(
        w as usize,
        img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
    )
}

impl DatasetManifest {
    /// Loads `manifest.json` from a dataset directory (or a direct file path).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_owned()
        };
        let mut manifest: DatasetManifest = read_json(&file)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                &file,
                format!("unsupported schema version {}", manifest.schema_version),
            ));
        }
        manifest.root = file.parent().map(Path::to_owned).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self) -> Result<()> {
        write_json(&self.root.join(MANIFEST_FILE), self)
    }

    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> + '_ {
        self.entries
            .iter()
            .filter(move |e| split.is_none_or(|s| e.split == s))
    }

    pub fn load_record(&self, entry: &ManifestEntry) -> Result<GroundTruthRecord> {
        read_json(&self.root.join(&entry.ground_truth))
    }

    /// Image and ground truth for one entry. Lines come straight from the
    /// stored endpoint pairs.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<Sample> {
        let gt_path = self.root.join(&entry.ground_truth);
        let record = self.load_record(entry)?;
        let image_path = self.root.join(&entry.image);
        let image = load_png(&image_path)?;
        if image.size() != record.image_size || record.image_size != self.image_size {
            return Err(Error::format(
                &image_path,
                format!(
                    "image is {0}x{0} but the ground truth says {1} and the manifest {2}",
                    image.size(),
                    record.image_size,
                    self.image_size
                ),
            ));
        }
        let gt_lines = record
            .lines
            .iter()
            .map(|&l| BoundaryLine::from_array(l, record.image_size))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(&gt_path, e.to_string()))?;
        Ok(Sample {
            id: record.id,
            split: record.split,
            image,
            gt_lines,
            segments: Vec::new(),
            noise_amplitude: record.noise_amplitude,
            blur_sigma: record.blur_sigma,
            seed: record.sample_seed,
        })
    }

    pub fn load_split(&self, split: Option<Split>, exec: Execution) -> Result<Vec<Sample>> {
        let entries: Vec<&ManifestEntry> = self.entries(split).collect();
        exec.map(&entries, |e| self.load_sample(e)).into_iter().collect()
    }
}

/// Generates `count` samples into `out_dir`; the first `train_count`
/// are tagged train and the rest test.
pub fn generate_dataset(
    master_seed: u64,
    count: usize,
    train_count: usize,
    out_dir: impl AsRef<Path>,
    config: &GenConfig,
    exec: Execution,
) -> Result<DatasetManifest> {
    if train_count > count {
        return Err(Error::InvalidArgument(format!(
            "train split {train_count} exceeds sample count {count}"
        )));
    }
    let root = out_dir.as_ref().to_owned();
    for dir in [root.clone(), root.join("images"), root.join("gt")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries = exec.map_range(count, |id| -> Result<ManifestEntry> {
        let split = if id < train_count {
            Split::Train
        } else {
            Split::Test
        };
        let seed = sample_seed(master_seed, id as u64);
        let sample = generate_sample(seed, config)?;
        let entry = ManifestEntry {
            id,
            split,
            image: format!("images/{id:04}.png"),
            ground_truth: format!("gt/{id:04}.json"),
        };
        save_png(&root.join(&entry.image), &sample.image)?;
        let record = GroundTruthRecord {
            id,
            split,
            image_size: config.image_size,
            lines: sample.gt_lines.iter().map(BoundaryLine::to_array).collect(),
            noise_amplitude: sample.noise_amplitude,
            blur_sigma: sample.blur_sigma,
            sample_seed: seed,
        };
        write_json(&root.join(&entry.ground_truth), &record)?;
        Ok(entry)
    });
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        generator_version: GENERATOR_VERSION.to_owned(),
        master_seed,
        image_size: config.image_size,
        config: config.clone(),
        entries: entries.into_iter().collect::<Result<_>>()?,
        root,
    };
    manifest.save()?;
    Ok(manifest)
}

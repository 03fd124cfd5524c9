use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lnet_core::detect::{
    lnet_detect, BaselineConfig, BaselineDetector, BaselineScore, Confidence, DetectConfig, Detection, DetectionFile,
    DEFAULT_MAX_DETECTIONS, DEFAULT_MIN_CONF, DEFAULT_WINDOW,
};
use lnet_core::fht::GrayImage;
use lnet_core::lnet::{Checkpoint, LNetModel};
use lnet_core::synthgen::{load_png, DatasetManifest, Split};

use crate::run::{create_dir, write_json, Run, RUN_MANIFEST};
use crate::{default_data_dir, Context};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Lnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

/// Written next to the per-image detection files; `eval` reads the NMS
/// window from it.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionIndex {
    pub method: Method,
    pub window: usize,
    pub min_conf: f64,
    pub max_detections: Option<usize>,
    #[serde(default)]
    pub confidence: Confidence,
    pub baseline: Option<BaselineConfig>,
    pub image_size: usize,
    pub ids: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    pub method: Method,
    /// Trained model (required for --method lnet).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory [default: $LNET_DATA_DIR or ./data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Run on one PNG instead of a dataset; detections go to stdout.
    #[arg(long, conflicts_with_all = ["data", "out"])]
    pub image: Option<PathBuf>,
    /// Output directory for the detection files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// NMS window (odd, at least 3).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Drop peaks below this confidence.
    #[arg(long, default_value_t = DEFAULT_MIN_CONF)]
    pub min_conf: f64,
    /// Keep at most this many detections per image (0 = all).
    #[arg(long, default_value_t = DEFAULT_MAX_DETECTIONS)]
    pub max_detections: usize,
    /// Confidences: raw peak values, or relative to each image's strongest peak.
    #[arg(long, default_value_t = Confidence::Raw)]
    pub confidence: Confidence,
    /// Baseline confidence: contrast (default), mean, or sum.
    #[arg(long)]
    pub score: Option<BaselineScore>,
    /// Shorthand for `--score sum --min-support 0`: raw Hough sums.
    #[arg(long, conflicts_with = "score")]
    pub no_normalize: bool,
    /// Baseline: ignore lines covering fewer pixels [default: size / 8].
    #[arg(long)]
    pub min_support: Option<usize>,
}

enum Detector {
    Baseline(BaselineDetector),
    Lnet(LNetModel),
}

impl Detector {
    fn detect(&self, image: &GrayImage, cfg: &DetectConfig) -> lnet_core::Result<Vec<Detection>> {
        let exec = lnet_core::Execution::Sequential;
        match self {
            Detector::Baseline(b) => b.detect(image, cfg, exec),
            Detector::Lnet(m) => lnet_detect(m, image, cfg, exec),
        }
    }
}

fn baseline_config(args: &DetectArgs, n: usize) -> BaselineConfig {
    let mut cfg = if args.no_normalize {
        BaselineConfig::raw()
    } else {
        BaselineConfig::for_size(n)
    };
    if let Some(s) = args.score {
        cfg.score = s;
    }
    if let Some(m) = args.min_support {
        cfg.min_support = m;
    }
    cfg
}

fn build_detector(args: &DetectArgs, n: usize) -> Result<Detector> {
    match args.method {
        Method::Baseline => Ok(Detector::Baseline(BaselineDetector::new(n, baseline_config(args, n))?)),
        Method::Lnet => {
            let Some(path) = &args.checkpoint else {
                bail!("--method lnet needs --checkpoint");
            };
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            Ok(Detector::Lnet(ck.model))
        }
    }
}

pub fn detection_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{id:04}.json"))
}

pub fn run(ctx: &Context, args: DetectArgs) -> Result<()> {
    let run = Run::start("detect");
    let cfg = DetectConfig {
        window: args.window,
        min_conf: args.min_conf,
        max_detections: (args.max_detections > 0).then_some(args.max_detections),
        confidence: args.confidence,
    };
    ensure!(args.window >= 3 && args.window % 2 == 1, "--window must be odd and at least 3");

    if let Some(path) = &args.image {
        let image = load_png(path)?;
        let detector = build_detector(&args, image.size())?;
        let dets = detector.detect(&image, &cfg)?;
        let file = DetectionFile::new(0, image.size(), &dets);
        if ctx.global.json {
            println!("{}", serde_json::to_string_pretty(&file)?);
        } else {
            for d in &file.detections {
                println!(
                    "({:.1}, {:.1}) - ({:.1}, {:.1})  confidence {:.4}",
                    d.x0, d.y0, d.x1, d.y1, d.confidence
                );
            }
        }
        return Ok(());
    }

    let data = args.data.clone().unwrap_or_else(default_data_dir);
    let manifest = DatasetManifest::load(&data)?;
    let detector = build_detector(&args, manifest.image_size)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("detections/{}", method_name(args.method))));
    create_dir(&out)?;
    let entries: Vec<_> = manifest.entries(args.split.split()).cloned().collect();
    let counts = ctx.exec.map(&entries, |e| -> Result<usize> {
        let sample = manifest.load_sample(e)?;
        let dets = detector.detect(&sample.image, &cfg)?;
        DetectionFile::new(e.id, manifest.image_size, &dets).save(&detection_path(&out, e.id))?;
        Ok(dets.len())
    });
    let total: usize = counts.into_iter().sum::<Result<usize>>()?;
    let index = DetectionIndex {
        method: args.method,
        window: args.window,
        min_conf: args.min_conf,
        max_detections: cfg.max_detections,
        confidence: cfg.confidence,
        baseline: matches!(args.method, Method::Baseline).then(|| baseline_config(&args, manifest.image_size)),
        image_size: manifest.image_size,
        ids: entries.iter().map(|e| e.id).collect(),
    };
    write_json(&out.join(INDEX_FILE), &index)?;
    run.finish(
        ctx,
        &out.join(RUN_MANIFEST),
        json!({ "detect": cfg, "method": args.method, "baseline": index.baseline, "split": format!("{:?}", args.split).to_lowercase() }),
        [Some(data), args.checkpoint.clone()].into_iter().flatten().collect(),
        vec![out.clone()],
    )?;
    ctx.report(
        &json!({ "out": out, "images": entries.len(), "detections": total, "method": args.method }),
        || {
            format!(
                "{} detections on {} images written to {}",
                total,
                entries.len(),
                out.display()
            )
        },
    );
    Ok(())
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Baseline => "baseline",
        Method::Lnet => "lnet",
    }
}

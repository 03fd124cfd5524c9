use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde_json::json;

use lnet_core::detect::{DetectConfig, DetectionFile};
use lnet_core::eval::{
    plot_pr_curve, pr_curve, pr_curve_csv, summarize, EvalSample, MatchConfig, MetricsReport, ScoredLine,
    DEFAULT_DISTANCE_THRESHOLD,
};
use lnet_core::fht::BoundaryLine;
use lnet_core::synthgen::DatasetManifest;

use crate::detect::{detection_path, DetectionIndex, SplitArg, INDEX_FILE};
use crate::run::{create_dir, write_json, Run, RUN_MANIFEST};
use crate::{default_data_dir, Context};

pub const METRICS_FILE: &str = "metrics.json";
pub const CURVE_FILE: &str = "pr_curve.csv";
pub const PLOT_FILE: &str = "pr_curve.png";

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory written by `lnet detect`.
    #[arg(long)]
    pub detections: PathBuf,
    /// Dataset directory [default: $LNET_DATA_DIR or ./data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// A detection within this many pixels may match a line.
    #[arg(long, default_value_t = DEFAULT_DISTANCE_THRESHOLD)]
    pub distance_threshold: f64,
    /// Output directory for metrics [default: the detections directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the precision–recall curve to a PNG.
    #[arg(long)]
    pub plot: bool,
}

pub fn run(ctx: &Context, args: EvalArgs) -> Result<()> {
    let run = Run::start("eval");
    let cfg = MatchConfig {
        distance_threshold: args.distance_threshold,
    };
    cfg.validate()?;
    let data = args.data.clone().unwrap_or_else(default_data_dir);
    let manifest = DatasetManifest::load(&data)?;
    let index_path = args.detections.join(INDEX_FILE);
    let index: DetectionIndex = serde_json::from_slice(
        &std::fs::read(&index_path).with_context(|| format!("reading {}", index_path.display()))?,
    )
    .with_context(|| format!("parsing {}", index_path.display()))?;

    let entries: Vec<_> = manifest.entries(args.split.split()).cloned().collect();
    let wanted: BTreeSet<usize> = entries.iter().map(|e| e.id).collect();
    let have: BTreeSet<usize> = index.ids.iter().copied().collect();
    let missing: Vec<usize> = wanted.difference(&have).copied().collect();
    let extra: Vec<usize> = have.difference(&wanted).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "detections do not cover the {:?} split: missing ids {missing:?}, unexpected ids {extra:?}",
            args.split
        );
    }

    let samples = ctx.exec.map(&entries, |e| -> Result<EvalSample> {
        let record = manifest.load_record(e)?;
        let gt = record
            .lines
            .iter()
            .map(|&l| BoundaryLine::from_array(l, record.image_size))
            .collect::<lnet_core::Result<Vec<_>>>()?;
        let path = detection_path(&args.detections, e.id);
        let file = DetectionFile::load(&path)?;
        let dets = file.detections().with_context(|| format!("reading {}", path.display()))?;
        Ok(EvalSample {
            id: e.id,
            gt,
            detections: dets.iter().map(ScoredLine::from).collect(),
        })
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let curve = pr_curve(&samples, &cfg, ctx.exec)?;
    let summary = summarize(&curve);
    let detect = DetectConfig {
        window: index.window,
        min_conf: index.min_conf,
        max_detections: index.max_detections,
        confidence: index.confidence,
    };
    let report = MetricsReport::new(summary, &cfg, &detect, samples.len());

    let out = args.out.clone().unwrap_or_else(|| args.detections.clone());
    create_dir(&out)?;
    let metrics_path = out.join(METRICS_FILE);
    let curve_path = out.join(CURVE_FILE);
    write_json(&metrics_path, &report)?;
    std::fs::write(&curve_path, pr_curve_csv(&curve)).with_context(|| format!("writing {}", curve_path.display()))?;
    let mut outputs = vec![metrics_path, curve_path];
    if args.plot {
        let plot = out.join(PLOT_FILE);
        plot_pr_curve(&curve, &plot)?;
        outputs.push(plot);
    }
    run.finish(
        ctx,
        &out.join(format!("eval_{RUN_MANIFEST}")),
        json!({ "match": cfg, "split": format!("{:?}", args.split).to_lowercase() }),
        vec![data, args.detections.clone()],
        outputs,
    )?;
    ctx.report(&serde_json::to_value(&report)?, || {
        format!(
            "AP {:.2}  precision@90recall {:.2}  recall@90precision {:.2}  ({} images, distance {} px, NMS window {})",
            report.ap, report.p_at_90r, report.r_at_90p, report.n_samples, report.distance_threshold, report.nms_window
        )
    });
    Ok(())
}

use std::path::PathBuf;

use anyhow::{ensure, Context as _, Result};
use clap::Args;
use serde_json::json;

use lnet_core::detect::{lnet_detect, Confidence, DetectConfig, DEFAULT_MIN_CONF, DEFAULT_WINDOW};
use lnet_core::eval::{evaluate_detector, MatchConfig, DEFAULT_DISTANCE_THRESHOLD};
use lnet_core::lnet::{Checkpoint, LNetArch, LNetModel, Variant};
use lnet_core::synthgen::{DatasetManifest, Split};
use lnet_core::trainer::{train, write_metrics_csv, TrainConfig, TrainExample};

use crate::run::{create_dir, write_json, Run, RUN_MANIFEST};
use crate::{default_data_dir, Context};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "train_config.json";

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long, default_value = "fast")]
    pub variant: Variant,
    /// Scale of the noise added to the identity kernels (0 = exact transform).
    #[arg(long, default_value_t = lnet_core::lnet::DEFAULT_INIT_NOISE)]
    pub noise: f64,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_init(ctx: &Context, args: InitArgs) -> Result<()> {
    ensure!(args.noise >= 0.0 && args.noise.is_finite(), "--noise must be nonnegative");
    let model = LNetModel::init_seeded(LNetArch::build(args.variant), ctx.seed(), args.noise)?;
    let params = model.param_count();
    Checkpoint::new(model, ctx.seed(), json!({ "init_noise": args.noise, "epochs": 0 })).save(&args.out)?;
    ctx.report(
        &json!({ "out": args.out, "variant": args.variant, "params": params }),
        || format!("wrote untrained {} model ({params} parameters) to {}", args.variant, args.out.display()),
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory [default: $LNET_DATA_DIR or ./data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint, metrics and run manifest
    /// [default: runs/<variant>-seed<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub init_noise: Option<f64>,
    /// Training settings as JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train on the first N train samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Measure test AP every N epochs (0 = never).
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// NMS window for the test AP.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Confidence mode for the test AP (raw or relative).
    #[arg(long, default_value_t = Confidence::Raw)]
    pub confidence: Confidence,
    /// Matching distance for the test AP, in pixels.
    #[arg(long, default_value_t = DEFAULT_DISTANCE_THRESHOLD)]
    pub distance_threshold: f64,
    /// Print the resolved training config and exit.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn run(ctx: &Context, args: TrainArgs) -> Result<()> {
    let run = Run::start("train");
    let mut config: TrainConfig = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.lr0 = v;
    }
    if let Some(v) = args.init_noise {
        config.init_noise = v;
    }
    if let Some(s) = ctx.global.seed {
        config.seed = s;
    }
    let data = args.data.or(config.dataset.clone()).unwrap_or_else(default_data_dir);
    config.dataset = Some(data.clone());
    config.validate()?;
    if args.dry_run {
        ctx.report(&serde_json::to_value(&config)?, || {
            serde_json::to_string_pretty(&config).expect("config serializes")
        });
        return Ok(());
    }

    let manifest = DatasetManifest::load(&data)?;
    let mut train_samples = manifest.load_split(Some(Split::Train), ctx.exec)?;
    if let Some(limit) = args.limit {
        train_samples.truncate(limit);
    }
    ensure!(!train_samples.is_empty(), "dataset {} has no train samples", data.display());
    let examples = train_samples
        .iter()
        .map(TrainExample::from_sample)
        .collect::<lnet_core::Result<Vec<_>>>()?;
    drop(train_samples);
    let test_samples = if args.eval_every > 0 {
        manifest.load_split(Some(Split::Test), ctx.exec)?
    } else {
        Vec::new()
    };
    let detect_cfg = DetectConfig {
        confidence: args.confidence,
        ..DetectConfig::new(args.window, DEFAULT_MIN_CONF)
    };
    let match_cfg = MatchConfig {
        distance_threshold: args.distance_threshold,
    };
    match_cfg.validate()?;

    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", config.variant, config.seed)));
    create_dir(&out)?;
    let quiet = ctx.global.json;
    let outcome = train(&config, &examples, ctx.exec, |m, model| {
        let due = args.eval_every > 0 && ((m.epoch + 1) % args.eval_every == 0 || m.epoch + 1 == config.epochs);
        let ap = if due && !test_samples.is_empty() {
            let (_, s) = evaluate_detector(&test_samples, &match_cfg, ctx.exec, |img| {
                lnet_detect(model, img, &detect_cfg, lnet_core::Execution::Sequential)
            })?;
            Some(s.ap)
        } else {
            None
        };
        if !quiet {
            let ap_text = ap.map(|v| format!(" test AP {v:.2}")).unwrap_or_default();
            eprintln!("epoch {:>3}  lr {:.2e}  loss {:.6}{ap_text}", m.epoch, m.lr, m.train_loss);
        }
        Ok(ap)
    })?;

    let final_loss = outcome.metrics.last().map(|m| m.train_loss);
    let final_ap = outcome.metrics.iter().rev().find_map(|m| m.test_ap);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);
    let config_path = out.join(CONFIG_FILE);
    let params = outcome.model.param_count();
    Checkpoint::new(
        outcome.model,
        config.seed,
        json!({
            "config": config,
            "train_samples": examples.len(),
            "steps": outcome.steps,
            "final_train_loss": final_loss,
        }),
    )
    .save(&ckpt_path)?;
    write_metrics_csv(&metrics_path, &outcome.metrics)?;
    write_json(&config_path, &config)?;
    run.finish(
        ctx,
        &out.join(RUN_MANIFEST),
        json!({ "train": config, "limit": args.limit, "eval_every": args.eval_every, "detect": detect_cfg, "match": match_cfg }),
        vec![data],
        vec![ckpt_path.clone(), metrics_path, config_path],
    )?;
    ctx.report(
        &json!({
            "checkpoint": ckpt_path,
            "variant": config.variant,
            "params": params,
            "epochs": config.epochs,
            "steps": outcome.steps,
            "final_train_loss": final_loss,
            "test_ap": final_ap,
        }),
        || {
            format!(
                "trained {} ({params} parameters, {} steps); checkpoint at {}",
                config.variant,
                outcome.steps,
                ckpt_path.display()
            )
        },
    );
    Ok(())
}

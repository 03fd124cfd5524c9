use std::path::PathBuf;

use anyhow::{ensure, Context as _, Result};
use clap::Args;
use serde_json::json;

use lnet_core::synthgen::{generate_dataset, GenConfig};

use crate::run::{Run, RUN_MANIFEST};
use crate::{default_data_dir, Context};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory [default: $LNET_DATA_DIR or ./data].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total number of samples.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// How many of the samples form the train split; the rest are test.
    #[arg(long)]
    pub train: Option<usize>,
    /// Image side length (power of two).
    #[arg(long)]
    pub size: Option<usize>,
    /// Generator settings as JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(ctx: &Context, args: GenArgs) -> Result<()> {
    let run = Run::start("gen");
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GenConfig::default(),
    };
    if let Some(size) = args.size {
        config.image_size = size;
    }
    // 800/200 for the default 1000 samples
    let train = args.train.unwrap_or(args.count * 4 / 5);
    ensure!(train <= args.count, "--train {train} exceeds --count {}", args.count);
    let out = args.out.unwrap_or_else(default_data_dir);
    let manifest = generate_dataset(ctx.seed(), args.count, train, &out, &config, ctx.exec)?;
    run.finish(
        ctx,
        &out.join(RUN_MANIFEST),
        json!({ "count": args.count, "train": train, "generator": config }),
        args.config.into_iter().collect(),
        vec![out.clone()],
    )?;
    ctx.report(
        &json!({
            "out": out,
            "count": manifest.entries.len(),
            "train": train,
            "test": args.count - train,
            "master_seed": ctx.seed(),
        }),
        || {
            format!(
                "wrote {} samples ({} train, {} test) to {}",
                manifest.entries.len(),
                train,
                args.count - train,
                out.display()
            )
        },
    );
    Ok(())
}

use std::time::Instant;

use anyhow::{ensure, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use lnet_core::fht::{fht_forward_with, GrayImage};
use lnet_core::lnet::{flop_count, fht_flops, FlopReport, LNetArch, Variant};

use crate::Context;

/// The transform is O(N² log N), so doubling N twice may cost at most
/// 32× (16 for the area, 2 for the logarithm with headroom).
pub const MAX_SCALING_RATIO: f64 = 32.0;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Image sizes to time (powers of two).
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    pub sizes: Vec<usize>,
    /// Timed repetitions per size; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Image size for the network FLOP tables.
    #[arg(long, default_value_t = 256)]
    pub flop_size: usize,
}

#[derive(Serialize)]
pub struct TimingRow {
    pub n: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub analytic_mflops: f64,
}

#[derive(Serialize)]
pub struct BenchReport {
    pub timings: Vec<TimingRow>,
    /// Median time at the largest size over the smallest.
    pub scaling_ratio: Option<f64>,
    pub max_scaling_ratio: f64,
    pub scaling_ok: Option<bool>,
    pub flops: Vec<FlopReport>,
}

fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    Ok(GrayImage::new(n, (0..n * n).map(|_| rng.gen::<f64>()).collect())?)
}

pub fn time_fht(n: usize, repeats: usize, ctx: &Context) -> Result<TimingRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let image = random_image(n, &mut rng)?;
    // warm-up: page in the buffers
    std::hint::black_box(fht_forward_with(&image, ctx.exec)?);
    let mut ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(fht_forward_with(&image, ctx.exec)?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    Ok(TimingRow {
        n,
        median_ms: ms[ms.len() / 2],
        min_ms: ms[0],
        analytic_mflops: fht_flops(n) as f64 / 1e6,
    })
}

pub fn run(ctx: &Context, args: BenchArgs) -> Result<()> {
    ensure!(args.repeats > 0, "--repeats must be positive");
    ensure!(!args.sizes.is_empty(), "--sizes is empty");
    let timings = args
        .sizes
        .iter()
        .map(|&n| time_fht(n, args.repeats, ctx))
        .collect::<Result<Vec<_>>>()?;
    let scaling_ratio = (timings.len() > 1).then(|| timings[timings.len() - 1].median_ms / timings[0].median_ms);
    let flops = [Variant::Fast, Variant::Acc]
        .into_iter()
        .map(|v| flop_count(&LNetArch::build(v), args.flop_size))
        .collect();
    let report = BenchReport {
        scaling_ok: scaling_ratio.map(|r| r <= MAX_SCALING_RATIO),
        scaling_ratio,
        max_scaling_ratio: MAX_SCALING_RATIO,
        timings,
        flops,
    };
    ctx.report(&serde_json::to_value(&report)?, || human(&report, &args));
    Ok(())
}

fn human(report: &BenchReport, args: &BenchArgs) -> String {
    let mut s = String::from("Hough transform (median of repeats)\n");
    s += &format!("{:>6}  {:>10}  {:>10}  {:>10}\n", "N", "median ms", "min ms", "MFLOP");
    for t in &report.timings {
        s += &format!("{:>6}  {:>10.3}  {:>10.3}  {:>10.1}\n", t.n, t.median_ms, t.min_ms, t.analytic_mflops);
    }
    if let (Some(r), Some(first), Some(last)) = (report.scaling_ratio, report.timings.first(), report.timings.last()) {
        s += &format!(
            "time ratio N={} / N={}: {r:.2} (limit {})  {}\n",
            last.n,
            first.n,
            report.max_scaling_ratio,
            if r <= report.max_scaling_ratio { "ok" } else { "EXCEEDED" }
        );
    }
    for (variant, f) in [Variant::Fast, Variant::Acc].iter().zip(&report.flops) {
        s += &format!("\n{variant} network FLOPs at {}x{}\n", args.flop_size, args.flop_size);
        for row in &f.rows {
            s += &format!("  {:<10} {:>10.2} MFLOP\n", row.name, row.mflops());
        }
        s += &format!("  {:<10} {:>10.2} MFLOP\n", "total", f.total_mflops());
    }
    s.pop();
    s
}

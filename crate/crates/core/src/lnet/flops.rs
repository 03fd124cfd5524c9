//! Analytic floating-point operation counts. Additions and multiplications
//! are counted alike. A convolution costs `2·kh·kw·Cin` per output value
//! plus one bias add; convB layers are counted once per Hough plane over an
//! `N x N` grid each, which is the accounting the published totals follow.
//! The Hough layer costs `(2N-1)·N` additions per butterfly stage and plane.

use serde::Serialize;

use super::{Block, LNetArch};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopRow {
    pub name: String,
    pub flops: u64,
}

impl FlopRow {
    pub fn mflops(&self) -> f64 {
        self.flops as f64 / 1e6
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub n: usize,
    pub rows: Vec<FlopRow>,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn total_mflops(&self) -> f64 {
        self.total() as f64 / 1e6
    }

    pub fn row(&self, name: &str) -> Option<&FlopRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Hough-layer additions for an `n x n` image: four planes of
/// `n x (2n-1)` cells, `log2 n` stages each.
pub fn fht_flops(n: usize) -> u64 {
    let stages = n.max(1).trailing_zeros() as u64;
    4 * (2 * n as u64 - 1) * n as u64 * stages
}

/// Per-layer and Hough-layer counts for an `n x n` input, in pipeline
/// order: `convA.0`, ..., `fht`, `convB.0`, ...
pub fn flop_count(arch: &LNetArch, n: usize) -> FlopReport {
    let cells = (n * n) as u64;
    let mut rows = Vec::new();
    let mut a = 0;
    let mut b = 0;
    for (block, spec) in arch.layers() {
        let per_output = (2 * spec.kernel_h * spec.kernel_w * spec.in_channels + 1) as u64;
        let outputs = spec.out_channels as u64 * cells;
        let name = match block {
            Block::ConvA => {
                a += 1;
                format!("convA.{}", a - 1)
            }
            Block::ConvB => {
                if b == 0 {
                    rows.push(FlopRow {
                        name: "fht".into(),
                        flops: fht_flops(n),
                    });
                }
                b += 1;
                format!("convB.{}", b - 1)
            }
        };
        let branches = if block == Block::ConvB { 4 } else { 1 };
        rows.push(FlopRow {
            name,
            flops: per_output * outputs * branches,
        });
    }
    FlopReport { n, rows }
}

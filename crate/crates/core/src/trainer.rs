//! Supervised training of the networks against Gaussian peaks placed at
//! the Hough cells of the ground-truth lines.
//!
//! Mini-batch gradients are computed per sample (in parallel when enabled)
//! and reduced in sample order, so results do not depend on thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fht::{cell_from_line, BoundaryLine, DyadicLine, GrayImage, HoughMap};
use crate::lnet::{LNetArch, LNetModel, Variant, DEFAULT_INIT_NOISE};
use crate::par::Execution;
use crate::synthgen::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// The learning rate halves every this many epochs.
    pub lr_halving_period: usize,
    /// L2 penalty coefficient, added to the gradient.
    pub weight_decay: f64,
    pub target_sigma: f64,
    /// Cell weight in the loss is `1 + loss_weight_coeff * target`.
    pub loss_weight_coeff: f64,
    pub init_noise: f64,
    pub adam: AdamParams,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Fast,
            epochs: 30,
            batch_size: 32,
            lr0: 1e-3,
            lr_halving_period: 10,
            weight_decay: 1e-5,
            target_sigma: 1.8,
            loss_weight_coeff: 1000.0,
            init_noise: DEFAULT_INIT_NOISE,
            adam: AdamParams::default(),
            seed: 0,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("lr0", self.lr0),
            ("lr_halving_period", self.lr_halving_period as f64),
            ("target_sigma", self.target_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("weight_decay", self.weight_decay),
            ("loss_weight_coeff", self.loss_weight_coeff),
            ("init_noise", self.init_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
            }
        }
        self.adam.validate()
    }

    /// `lr0 * 0.5^floor(epoch / period)` for a 0-based epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, params: AdamParams) -> Self {
        AdamState {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `theta` in place; the L2 term
    /// `weight_decay * theta` joins the gradient before the moment updates.
    pub fn update(&mut self, theta: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
        if theta.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                context: "adam step",
                dim: "parameter count",
                expected: self.m.len(),
                actual: if theta.len() != self.m.len() { theta.len() } else { grads.len() },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} is {} at step {}",
                grads[i],
                self.step + 1
            )));
        }
        let AdamParams { beta1, beta2, eps } = self.params;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            let g = grads[i] + weight_decay * theta[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_step(
    model: &mut LNetModel,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut theta = model.params();
    state.update(&mut theta, grads, lr, weight_decay)?;
    model.set_params(&theta)
}

/// Unit peaks at the given cells, each spread by an unnormalized Gaussian
/// (value 1 at the centre) and merged by elementwise maximum.
pub fn target_from_cells(cells: &[DyadicLine], n: usize, sigma: f64) -> Result<HoughMap> {
    let kernel = crate::tensor::gaussian_kernel(sigma, false)?;
    let r = (kernel.len() / 2) as i64;
    let mut map = HoughMap::zeros(n);
    let m = n as i64 - 1;
    for cell in cells {
        if cell.n != n {
            return Err(Error::Shape {
                context: "target cell",
                dim: "hough size",
                expected: n,
                actual: cell.n,
            });
        }
        for ds in -r..=r {
            let s = cell.shift_s + ds;
            if !(0..=m).contains(&s) {
                continue;
            }
            for dx in -r..=r {
                let x = cell.offset_x + dx;
                if !(-m..=m).contains(&x) {
                    continue;
                }
                let v = kernel[(ds + r) as usize] * kernel[(dx + r) as usize];
                let i = map.index(cell.quadrant, x, s);
                let slot = &mut map.data_mut()[i];
                *slot = slot.max(v);
            }
        }
    }
    Ok(map)
}

pub fn make_target(gt_lines: &[BoundaryLine], n: usize, sigma: f64) -> Result<HoughMap> {
    let cells = gt_lines.iter().map(cell_from_line).collect::<Result<Vec<_>>>()?;
    target_from_cells(&cells, n, sigma)
}

/// Mean over cells of `(1 + coeff * target) * (pred - target)^2`, and its
/// gradient with respect to `pred`.
pub fn weighted_mse(pred: &HoughMap, target: &HoughMap, coeff: f64) -> Result<(f64, HoughMap)> {
    if pred.n() != target.n() {
        return Err(Error::Shape {
            context: "weighted mse",
            dim: "hough size",
            expected: target.n(),
            actual: pred.n(),
        });
    }
    let count = pred.data().len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let w = 1.0 + coeff * t;
            let d = p - t;
            loss += w * d * d;
            2.0 * w * d / count
        })
        .collect();
    Ok((loss / count, HoughMap::from_vec(pred.n(), grad)?))
}

/// Training image together with the Hough cells of its lines.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: GrayImage,
    pub cells: Vec<DyadicLine>,
}

impl TrainExample {
    pub fn new(image: GrayImage, gt_lines: &[BoundaryLine]) -> Result<Self> {
        let cells = gt_lines.iter().map(cell_from_line).collect::<Result<Vec<_>>>()?;
        Ok(TrainExample { image, cells })
    }

    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Self::new(sample.image.clone(), &sample.gt_lines)
    }
}

/// Loss and parameter gradient averaged over `batch`; per-sample results
/// are summed in batch order.
pub fn batch_gradient(
    model: &LNetModel,
    batch: &[&TrainExample],
    config: &TrainConfig,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let per_sample = exec.map(batch, |ex| -> Result<(f64, Vec<f64>)> {
        let trace = model.forward_trace(&ex.image, Execution::Sequential)?;
        let target = target_from_cells(&ex.cells, ex.image.size(), config.target_sigma)?;
        let (loss, grad) = weighted_mse(&trace.output, &target, config.loss_weight_coeff)?;
        let g = model.param_gradients(&trace, &grad, Execution::Sequential)?;
        Ok((loss, g))
    });
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; model.param_count()];
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    grads.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-sample losses seen during the epoch.
    pub train_loss: f64,
    pub test_ap: Option<f64>,
}

pub struct TrainOutcome {
    pub model: LNetModel,
    pub metrics: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Runs the full schedule. `on_epoch` sees the model after each epoch and
/// may return a test AP to record.
pub fn train<F>(config: &TrainConfig, examples: &[TrainExample], exec: Execution, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics, &LNetModel) -> Result<Option<f64>>,
{
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let n = examples[0].image.size();
    if let Some(ex) = examples.iter().find(|e| e.image.size() != n) {
        return Err(Error::Shape {
            context: "training images",
            dim: "size",
            expected: n,
            actual: ex.image.size(),
        });
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut model = LNetModel::init_seeded(LNetArch::build(config.variant), config.seed, config.init_noise)?;
    let mut adam = AdamState::new(model.param_count(), config.adam);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch, config, exec)?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut model, &grads, &mut adam, lr, config.weight_decay)?;
        }
        let mut m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / examples.len() as f64,
            test_ap: None,
        };
        m.test_ap = on_epoch(&m, &model)?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        steps: adam.step,
    })
}

/// `epoch,lr,train_loss,test_ap` with an empty last column when no AP was
/// measured.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,train_loss,test_ap\n");
    for m in metrics {
        let ap = m.test_ap.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", m.epoch, m.lr, m.train_loss, ap).expect("write to string");
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    fs::write(path, metrics_csv(metrics)).map_err(|e| Error::io(path, e))
}

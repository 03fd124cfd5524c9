//! The two line-detection networks: image-space convolutions (`convA`),
//! the Hough layer, then Hough-space convolutions (`convB`) applied to each
//! of the four quadrant planes with one shared set of weights. Every
//! convolution is followed by a ReLU, the last one included.
//!
//! | variant | convA                    | convB                                              | params |
//! |---------|--------------------------|----------------------------------------------------|--------|
//! | fast    | 1x3x3x1                  | 4x3x3x1, 1x1x1x4                                   | 55     |
//! | acc     | 4x3x3x1, 1x3x3x4         | 8x3x3x1, 8x3x3x8 (d2), 8x3x3x8 (d3), 1x1x1x8       | 1334   |
//!
//! Kernel notation is `out x h x w x in`.

mod checkpoint;
mod flops;

pub use checkpoint::{Checkpoint, CheckpointHeader, LayerHeader, CHECKPOINT_MAGIC};
pub use flops::{fht_flops, flop_count, FlopReport, FlopRow};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fht::{fht_forward_with, fht_vjp_with, GrayImage, HoughMap, QUADRANTS};
use crate::par::Execution;
use crate::tensor::{conv2d, conv2d_grads, relu_inplace, relu_vjp_inplace, ConvSpec, Tensor};

/// Scale applied to the Kaiming-uniform noise added to identity kernels.
pub const DEFAULT_INIT_NOISE: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fast,
    Acc,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Fast => "fast",
            Variant::Acc => "acc",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Variant::Fast),
            "acc" => Ok(Variant::Acc),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected \"fast\" or \"acc\")"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    #[serde(rename = "convA")]
    ConvA,
    #[serde(rename = "convB")]
    ConvB,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LNetArch {
    pub variant: Variant,
    pub conv_a: Vec<ConvSpec>,
    pub conv_b: Vec<ConvSpec>,
}

impl LNetArch {
    pub fn build(variant: Variant) -> Self {
        let (conv_a, conv_b) = match variant {
            Variant::Fast => (
                vec![ConvSpec::same3x3(1, 1, 1)],
                vec![ConvSpec::same3x3(4, 1, 1), ConvSpec::pointwise(1, 4)],
            ),
            Variant::Acc => (
                vec![ConvSpec::same3x3(4, 1, 1), ConvSpec::same3x3(1, 4, 1)],
                vec![
                    ConvSpec::same3x3(8, 1, 1),
                    ConvSpec::same3x3(8, 8, 2),
                    ConvSpec::same3x3(8, 8, 3),
                    ConvSpec::pointwise(1, 8),
                ],
            ),
        };
        LNetArch {
            variant,
            conv_a,
            conv_b,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (Block, &ConvSpec)> + '_ {
        self.conv_a
            .iter()
            .map(|s| (Block::ConvA, s))
            .chain(self.conv_b.iter().map(|s| (Block::ConvB, s)))
    }

    pub fn layer_count(&self) -> usize {
        self.conv_a.len() + self.conv_b.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(_, s)| s.param_count()).sum()
    }

    fn validate(&self) -> Result<()> {
        let chain_ok = |specs: &[ConvSpec]| {
            specs.first().is_some_and(|s| s.in_channels == 1)
                && specs.last().is_some_and(|s| s.out_channels == 1)
                && specs.windows(2).all(|p| p[0].out_channels == p[1].in_channels)
        };
        if !chain_ok(&self.conv_a) || !chain_ok(&self.conv_b) {
            return Err(Error::InvalidArgument(
                "convA and convB must each map 1 channel to 1 channel".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(input, &self.spec, &self.weights, &self.bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LNetModel {
    arch: LNetArch,
    layers: Vec<ConvLayer>,
}

/// Kernel that makes a layer pass its input through: centre tap 1 on the
/// matching channel, replicated when expanding from one channel and
/// averaged (`1 / in`) when reducing to one.
fn identity_kernel(spec: &ConvSpec) -> Tensor {
    let mut w = Tensor::zeros(&spec.weight_shape());
    let (cy, cx) = (spec.kernel_h / 2, spec.kernel_w / 2);
    let idx = |co: usize, ci: usize| ((co * spec.in_channels + ci) * spec.kernel_h + cy) * spec.kernel_w + cx;
    let data = w.data_mut();
    if spec.in_channels == 1 {
        for co in 0..spec.out_channels {
            data[idx(co, 0)] = 1.0;
        }
    } else if spec.out_channels == 1 {
        for ci in 0..spec.in_channels {
            data[idx(0, ci)] = 1.0 / spec.in_channels as f64;
        }
    } else {
        for co in 0..spec.out_channels {
            data[idx(co, co % spec.in_channels)] = 1.0;
        }
    }
    w
}

/// Per-layer activations kept for the backward pass: the chain input and
/// every layer's post-ReLU output (positive exactly where the ReLU passed
/// its input through).
#[derive(Clone, Debug)]
struct ChainTrace {
    input: Tensor,
    post: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Trace {
    conv_a: ChainTrace,
    branches: Vec<ChainTrace>,
    pub output: HoughMap,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Aligned with [`LNetModel::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the input image.
    pub input: GrayImage,
}

/// Runs the chain; its output is the last entry of the trace's `post`.
fn run_chain(layers: &[ConvLayer], input: Tensor) -> Result<ChainTrace> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("empty convolution block".into()));
    }
    let mut post: Vec<Tensor> = Vec::with_capacity(layers.len());
    for layer in layers {
        let mut z = layer.apply(post.last().unwrap_or(&input))?;
        relu_inplace(&mut z);
        post.push(z);
    }
    Ok(ChainTrace { input, post })
}

fn run_chain_output(layers: &[ConvLayer], input: &Tensor) -> Result<Tensor> {
    let mut x = layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty convolution block".into()))?
        .apply(input)?;
    relu_inplace(&mut x);
    for layer in &layers[1..] {
        x = layer.apply(&x)?;
        relu_inplace(&mut x);
    }
    Ok(x)
}

/// Per-layer `(weight, bias)` gradients.
type LayerGrads = Vec<(Tensor, Tensor)>;

/// Returns per-layer gradients and, if `with_input`, the gradient with
/// respect to the chain's input.
fn chain_backward(
    layers: &[ConvLayer],
    trace: &ChainTrace,
    out_grad: Tensor,
    with_input: bool,
) -> Result<(LayerGrads, Option<Tensor>)> {
    let mut grads = vec![None; layers.len()];
    let mut g = Some(out_grad);
    for i in (0..layers.len()).rev() {
        let gz = relu_vjp_inplace(&trace.post[i], g.take().expect("set by the layer above"))?;
        let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
        let (gw, gb, gin) = conv2d_grads(input, &layers[i].spec, &layers[i].weights, &gz, i > 0 || with_input)?;
        grads[i] = Some((gw, gb));
        g = gin;
    }
    Ok((grads.into_iter().map(|g| g.expect("filled")).collect(), g))
}

impl LNetModel {
    /// Identity kernels plus Kaiming-uniform noise scaled by 1e-2.
    pub fn init<R: Rng>(arch: LNetArch, rng: &mut R) -> Result<Self> {
        Self::init_with_noise(arch, rng, DEFAULT_INIT_NOISE)
    }

    /// Identity kernels plus `uniform(-b, b) * noise_scale` on every weight,
    /// `b = sqrt(6 / fan_in)`; biases start at zero. `noise_scale = 0` gives
    /// the pure pass-through network.
    pub fn init_with_noise<R: Rng>(arch: LNetArch, rng: &mut R, noise_scale: f64) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layers()
            .map(|(_, spec)| {
                let mut weights = identity_kernel(spec);
                if noise_scale != 0.0 {
                    let fan_in = (spec.kernel_h * spec.kernel_w * spec.in_channels) as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    for w in weights.data_mut() {
                        *w += rng.gen_range(-bound..bound) * noise_scale;
                    }
                }
                ConvLayer {
                    spec: *spec,
                    weights,
                    bias: Tensor::zeros(&[spec.out_channels]),
                }
            })
            .collect();
        Ok(LNetModel { arch, layers })
    }

    /// [`LNetModel::init_with_noise`] driven by a ChaCha8 generator seeded
    /// with `seed`; the trainer initializes through this.
    pub fn init_seeded(arch: LNetArch, seed: u64, noise_scale: f64) -> Result<Self> {
        use rand::SeedableRng;
        Self::init_with_noise(arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), noise_scale)
    }

    pub fn from_params(arch: LNetArch, params: &[f64]) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layers()
            .map(|(_, spec)| ConvLayer {
                spec: *spec,
                weights: Tensor::zeros(&spec.weight_shape()),
                bias: Tensor::zeros(&[spec.out_channels]),
            })
            .collect();
        let mut model = LNetModel { arch, layers };
        model.set_params(params)?;
        Ok(model)
    }

    pub fn arch(&self) -> &LNetArch {
        &self.arch
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn conv_a(&self) -> &[ConvLayer] {
        &self.layers[..self.arch.conv_a.len()]
    }

    pub fn conv_b(&self) -> &[ConvLayer] {
        &self.layers[self.arch.conv_a.len()..]
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// All parameters, layer by layer, weights (`[out, in, kh, kw]`) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                context: "model parameters",
                dim: "count",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", params[i])));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.data_mut().copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.data_mut().copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// convA block followed by its ReLUs: the feature image fed to the Hough layer.
    pub fn apply_conv_a(&self, image: &GrayImage) -> Result<GrayImage> {
        GrayImage::from_tensor(&run_chain_output(self.conv_a(), &image.to_tensor())?)
    }

    /// convB block on one `1 x N x (2N-1)` Hough plane.
    pub fn apply_conv_b(&self, plane: &Tensor) -> Result<Tensor> {
        run_chain_output(self.conv_b(), plane)
    }

    pub fn forward(&self, image: &GrayImage) -> Result<HoughMap> {
        self.forward_with(image, Execution::default())
    }

    pub fn forward_with(&self, image: &GrayImage, exec: Execution) -> Result<HoughMap> {
        let features = self.apply_conv_a(image)?;
        let hough = fht_forward_with(&features, exec)?;
        let planes = exec.map(&QUADRANTS, |&q| self.apply_conv_b(&hough.plane_tensor(q)));
        let mut out = Vec::with_capacity(hough.data().len());
        for p in planes {
            out.extend(p?.into_data());
        }
        HoughMap::from_vec(hough.n(), out)
    }

    /// Forward pass keeping what [`LNetModel::backward`] needs.
    pub fn forward_trace(&self, image: &GrayImage, exec: Execution) -> Result<Trace> {
        let conv_a = run_chain(self.conv_a(), image.to_tensor())?;
        let features = conv_a.post.last().expect("non-empty chain");
        let hough = fht_forward_with(&GrayImage::from_tensor(features)?, exec)?;
        let branches = exec.map(&QUADRANTS, |&q| run_chain(self.conv_b(), hough.plane_tensor(q)));
        let mut out = Vec::with_capacity(hough.data().len());
        let mut traces = Vec::with_capacity(4);
        for b in branches {
            let t = b?;
            out.extend_from_slice(t.post.last().expect("non-empty chain").data());
            traces.push(t);
        }
        Ok(Trace {
            conv_a,
            branches: traces,
            output: HoughMap::from_vec(hough.n(), out)?,
        })
    }

    /// Exact gradients of `<out_grad, forward(image)>`. Shared convB
    /// gradients are summed over the branches in quadrant order.
    pub fn backward(&self, trace: &Trace, out_grad: &HoughMap, exec: Execution) -> Result<Gradients> {
        let (params, input) = self.backward_impl(trace, out_grad, exec, true)?;
        let input = input.expect("requested");
        Ok(Gradients {
            params,
            input: GrayImage::from_tensor(&input)?,
        })
    }

    /// The parameter part of [`LNetModel::backward`], skipping the image
    /// gradient that training has no use for.
    pub fn param_gradients(&self, trace: &Trace, out_grad: &HoughMap, exec: Execution) -> Result<Vec<f64>> {
        Ok(self.backward_impl(trace, out_grad, exec, false)?.0)
    }

    fn backward_impl(
        &self,
        trace: &Trace,
        out_grad: &HoughMap,
        exec: Execution,
        with_input: bool,
    ) -> Result<(Vec<f64>, Option<Tensor>)> {
        let n = trace.output.n();
        if out_grad.n() != n {
            return Err(Error::Shape {
                context: "backward out_grad",
                dim: "hough size",
                expected: n,
                actual: out_grad.n(),
            });
        }
        let branch_grads = exec.map(&QUADRANTS, |&q| {
            chain_backward(self.conv_b(), &trace.branches[q.index()], out_grad.plane_tensor(q), true)
        });
        let mut b_grads: Vec<(Tensor, Tensor)> = Vec::new();
        let mut hough_grad = Vec::with_capacity(out_grad.data().len());
        for bg in branch_grads {
            let (layer_grads, input_grad) = bg?;
            hough_grad.extend(input_grad.expect("requested").into_data());
            if b_grads.is_empty() {
                b_grads = layer_grads;
            } else {
                for ((w, b), (dw, db)) in b_grads.iter_mut().zip(layer_grads) {
                    w.data_mut().iter_mut().zip(dw.data()).for_each(|(a, d)| *a += d);
                    b.data_mut().iter_mut().zip(db.data()).for_each(|(a, d)| *a += d);
                }
            }
        }
        let feature_grad = fht_vjp_with(&HoughMap::from_vec(n, hough_grad)?, exec)?;
        let (a_grads, image_grad) = chain_backward(self.conv_a(), &trace.conv_a, feature_grad.to_tensor(), with_input)?;

        let mut params = Vec::with_capacity(self.param_count());
        for (w, b) in a_grads.iter().chain(&b_grads) {
            params.extend_from_slice(w.data());
            params.extend_from_slice(b.data());
        }
        debug_assert_eq!(params.len(), self.param_count());
        Ok((params, image_grad))
    }

    pub fn forward_backward(&self, image: &GrayImage, out_grad: &HoughMap) -> Result<Gradients> {
        let trace = self.forward_trace(image, Execution::default())?;
        self.backward(&trace, out_grad, Execution::default())
    }
}

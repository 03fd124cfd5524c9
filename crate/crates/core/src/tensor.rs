//! Dense double-precision arrays and the handful of differentiable
//! primitives the networks need: 2-D convolution, ReLU and Gaussian blur,
//! each with an exact vector-Jacobian product where training needs one.
//!
//! Convolution follows the learned-network convention of cross-correlation:
//! the kernel is not flipped.

use crate::error::{Error, Result};
use crate::kernels;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                context: "tensor",
                dim: "element count",
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as channels x height x width.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape {
                context: "tensor",
                dim: "rank",
                expected: 3,
                actual: self.shape.len(),
            }),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Same-size 3x3 convolution with the given dilation.
    pub fn same3x3(out_channels: usize, in_channels: usize, dilation: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h: 3,
            kernel_w: 3,
            pad: dilation,
            dilation,
        }
    }

    pub fn pointwise(out_channels: usize, in_channels: usize) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel_h: 1,
            kernel_w: 1,
            pad: 0,
            dilation: 1,
        }
    }

    /// Weight layout is `[out, in, kh, kw]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    fn validate(&self) -> Result<()> {
        if self.out_channels == 0
            || self.in_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
            || self.dilation == 0
        {
            return Err(Error::InvalidArgument(format!(
                "convolution spec needs positive channels, kernel and dilation: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let span_h = self.dilation * (self.kernel_h - 1);
        let span_w = self.dilation * (self.kernel_w - 1);
        let ho = (h + 2 * self.pad).checked_sub(span_h).filter(|&v| v > 0);
        let wo = (w + 2 * self.pad).checked_sub(span_w).filter(|&v| v > 0);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::InvalidArgument(format!(
                "input {h}x{w} is smaller than the dilated kernel of {self:?}"
            ))),
        }
    }

    /// Row/column offset of tap `k` relative to the output position.
    #[inline]
    fn tap_offset(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.pad as isize
    }
}

/// Output positions `o` in `0..out_len` for which `o + offset` is inside `0..in_len`.
#[inline]
fn valid_range(offset: isize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (in_len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

fn check_conv_args(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (c, h, w) = input.dims3()?;
    if c != spec.in_channels {
        return Err(Error::Shape {
            context: "conv2d input",
            dim: "channels",
            expected: spec.in_channels,
            actual: c,
        });
    }
    let ws = weights.shape();
    let expected = spec.weight_shape();
    if ws.len() != 4 {
        return Err(Error::Shape {
            context: "conv2d weights",
            dim: "rank",
            expected: 4,
            actual: ws.len(),
        });
    }
    for (i, name) in ["out_channels", "in_channels", "kernel_h", "kernel_w"]
        .into_iter()
        .enumerate()
    {
        if ws[i] != expected[i] {
            return Err(Error::Shape {
                context: "conv2d weights",
                dim: name,
                expected: expected[i],
                actual: ws[i],
            });
        }
    }
    if let Some(bias) = bias {
        if bias.shape() != [spec.out_channels] {
            return Err(Error::Shape {
                context: "conv2d bias",
                dim: "length",
                expected: spec.out_channels,
                actual: bias.len(),
            });
        }
    }
    let (ho, wo) = spec.output_size(h, w)?;
    Ok((c, h, w, ho, wo))
}

/// Columns `x` in `0..wo` at which every tap of a row reads inside `0..w`.
#[inline]
fn interior_columns(spec: &ConvSpec, w: usize, wo: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (0, wo);
    for k in 0..spec.kernel_w {
        let (a, b) = valid_range(spec.tap_offset(k), w, wo);
        lo = lo.max(a);
        hi = hi.min(b);
    }
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation with zero padding and dilation.
///
/// Each output element accumulates the bias first, then the taps in
/// `(in_channel, ky, kx)` order.
pub fn conv2d(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, h, w, ho, wo) = check_conv_args(input, spec, weights, Some(bias))?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let x = input.data();
    let wt = weights.data();
    let mut out = Vec::with_capacity(spec.out_channels * ho * wo);
    let fused = kh == 3 && kw == 3;
    let (xl, xh) = interior_columns(spec, w, wo);

    for co in 0..spec.out_channels {
        let b = bias.data()[co];
        for y in 0..ho {
            let at = out.len();
            out.resize(at + wo, b);
            let orow = &mut out[at..];
            let rows_valid = (0..kh).all(|ky| {
                let iy = y as isize + spec.tap_offset(ky);
                iy >= 0 && iy < h as isize
            });
            for ci in 0..cin {
                let wk = &wt[(co * cin + ci) * kh * kw..][..kh * kw];
                if fused && rows_valid && xh > xl {
                    let row = |ky: usize| {
                        let iy = (y as isize + spec.tap_offset(ky)) as usize;
                        let start = (xl as isize + spec.tap_offset(0)) as usize;
                        &x[(ci * h + iy) * w + start..(ci * h + iy + 1) * w]
                    };
                    let taps: &[f64; 9] = wk.try_into().expect("3x3 kernel");
                    kernels::taps3x3(&mut orow[xl..xh], row(0), row(1), row(2), taps, spec.dilation);
                    for xo in (0..xl).chain(xh..wo) {
                        orow[xo] = conv_point(x, spec, wk, ci, h, w, y, xo, orow[xo]);
                    }
                    continue;
                }
                for ky in 0..kh {
                    let iy = y as isize + spec.tap_offset(ky);
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow = &x[(ci * h + iy as usize) * w..][..w];
                    for kx in 0..kw {
                        let wv = wk[ky * kw + kx];
                        let dx = spec.tap_offset(kx);
                        let (x0, x1) = valid_range(dx, w, wo);
                        if x0 == x1 {
                            continue;
                        }
                        let src = &irow[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        kernels::axpy(&mut orow[x0..x1], src, wv);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[spec.out_channels, ho, wo], out)
}

/// One output element's taps from input channel `ci`, added to `acc` in
/// `(ky, kx)` order.
#[allow(clippy::too_many_arguments)]
#[inline]
fn conv_point(x: &[f64], spec: &ConvSpec, wk: &[f64], ci: usize, h: usize, w: usize, y: usize, xo: usize, mut acc: f64) -> f64 {
    for ky in 0..spec.kernel_h {
        let iy = y as isize + spec.tap_offset(ky);
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kx in 0..spec.kernel_w {
            let ix = xo as isize + spec.tap_offset(kx);
            if ix >= 0 && ix < w as isize {
                acc += wk[ky * spec.kernel_w + kx] * x[(ci * h + iy as usize) * w + ix as usize];
            }
        }
    }
    acc
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Gradients of `sum(out_grad * conv2d(input, spec, weights, bias))` with
/// respect to the input, the weights and the bias.
pub fn conv2d_vjp(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    out_grad: &Tensor,
) -> Result<ConvGrads> {
    let (gw, gb, gin) = conv2d_grads(input, spec, weights, out_grad, true)?;
    Ok(ConvGrads {
        input: gin.expect("requested"),
        weights: gw,
        bias: gb,
    })
}

/// Like [`conv2d_vjp`]; the input gradient is skipped unless `with_input`.
pub fn conv2d_grads(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    out_grad: &Tensor,
    with_input: bool,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let (cin, h, w, ho, wo) = check_conv_args(input, spec, weights, None)?;
    let (gc, gh, gw) = out_grad.dims3()?;
    for (dim, expected, actual) in [
        ("channels", spec.out_channels, gc),
        ("height", ho, gh),
        ("width", wo, gw),
    ] {
        if expected != actual {
            return Err(Error::Shape {
                context: "conv2d_vjp out_grad",
                dim,
                expected,
                actual,
            });
        }
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let x = input.data();
    let wt = weights.data();
    let g = out_grad.data();
    let mut gw_ = vec![0.0; wt.len()];
    let mut gb = vec![0.0; spec.out_channels];

    for co in 0..spec.out_channels {
        for y in 0..ho {
            let grow = &g[(co * ho + y) * wo..][..wo];
            gb[co] += grow.iter().sum::<f64>();
            for ci in 0..cin {
                for ky in 0..kh {
                    let iy = y as isize + spec.tap_offset(ky);
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let irow = &x[(ci * h + iy as usize) * w..][..w];
                    let widx = ((co * cin + ci) * kh + ky) * kw;
                    if kw == 3 {
                        let d = dot3_shifted(grow, irow, spec, w, wo);
                        for (k, v) in d.into_iter().enumerate() {
                            gw_[widx + k] += v;
                        }
                        continue;
                    }
                    for kx in 0..kw {
                        let dx = spec.tap_offset(kx);
                        let (x0, x1) = valid_range(dx, w, wo);
                        if x0 == x1 {
                            continue;
                        }
                        let src = &irow[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        gw_[widx + kx] += kernels::dot_lanes(&grow[x0..x1], src);
                    }
                }
            }
        }
    }

    let gin = with_input.then(|| input_grad(spec, wt, g, cin, h, w, ho, wo));
    Ok((
        Tensor::from_vec(weights.shape(), gw_)?,
        Tensor::from_vec(&[spec.out_channels], gb)?,
        gin.map(|d| Tensor::from_vec(input.shape(), d)).transpose()?,
    ))
}

/// `sum_x grow[x] * irow[x + tap_offset(kx)]` for the three column taps,
/// in one pass over the columns every tap can reach.
#[inline]
fn dot3_shifted(grow: &[f64], irow: &[f64], spec: &ConvSpec, w: usize, wo: usize) -> [f64; 3] {
    let (xl, xh) = interior_columns(spec, w, wo);
    let mut out = [0.0; 3];
    if xh > xl {
        let start = (xl as isize + spec.tap_offset(0)) as usize;
        out = kernels::dot3(&grow[xl..xh], &irow[start..], spec.dilation);
    }
    for xo in (0..xl).chain(xh..wo) {
        for (kx, o) in out.iter_mut().enumerate() {
            let ix = xo as isize + spec.tap_offset(kx);
            if ix >= 0 && ix < w as isize {
                *o += grow[xo] * irow[ix as usize];
            }
        }
    }
    out
}

/// Input gradient written as a correlation gathered per input row:
/// `gin[ci][iy][ix] = sum over (co, ky, kx) of w * g[co][iy - oy][ix - ox]`.
#[allow(clippy::too_many_arguments)]
fn input_grad(spec: &ConvSpec, wt: &[f64], g: &[f64], cin: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut gin = Vec::with_capacity(cin * h * w);
    // input columns reached by all three column taps
    let d = spec.dilation as isize;
    let (il, ih) = if kw == 3 {
        let lo = spec.tap_offset(2).max(0) as usize;
        let hi = ((wo as isize + spec.tap_offset(0)).min(w as isize)).max(lo as isize) as usize;
        (lo, hi)
    } else {
        (0, 0)
    };
    for ci in 0..cin {
        for iy in 0..h {
            let at = gin.len();
            gin.resize(at + w, 0.0);
            let grow_in = &mut gin[at..];
            for co in 0..spec.out_channels {
                for ky in 0..kh {
                    let y = iy as isize - spec.tap_offset(ky);
                    if y < 0 || y >= ho as isize {
                        continue;
                    }
                    let grow = &g[(co * ho + y as usize) * wo..][..wo];
                    let wk = &wt[((co * cin + ci) * kh + ky) * kw..][..kw];
                    if kw == 3 && ih > il {
                        let len = ih - il;
                        // ox = ix - tap_offset(kx); tap 2 has the largest offset
                        let start = (il as isize - spec.tap_offset(2)) as usize;
                        let r = &grow[start..start + len + 2 * d as usize];
                        let taps: &[f64; 3] = wk.try_into().expect("3-wide kernel row");
                        kernels::taps3_reversed(&mut grow_in[il..ih], r, taps, d as usize);
                        for ix in (0..il).chain(ih..w) {
                            for (kx, &wv) in wk.iter().enumerate() {
                                let ox = ix as isize - spec.tap_offset(kx);
                                if ox >= 0 && ox < wo as isize {
                                    grow_in[ix] += wv * grow[ox as usize];
                                }
                            }
                        }
                        continue;
                    }
                    for (kx, &wv) in wk.iter().enumerate() {
                        let dx = spec.tap_offset(kx);
                        let (x0, x1) = valid_range(dx, w, wo);
                        if x0 == x1 {
                            continue;
                        }
                        let dst = &mut grow_in[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                        kernels::axpy(dst, &grow[x0..x1], wv);
                    }
                }
            }
        }
    }
    gin
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// Passes `out_grad` where `input > 0`; the subgradient at 0 is 0. The
/// ReLU's output can stand in for its input: both are positive at the
/// same places.
pub fn relu_vjp(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    relu_vjp_inplace(input, out_grad.clone())
}

/// [`relu_vjp`] reusing `out_grad`'s buffer.
pub fn relu_vjp_inplace(input: &Tensor, mut out_grad: Tensor) -> Result<Tensor> {
    if input.shape() != out_grad.shape() {
        return Err(Error::Shape {
            context: "relu_vjp",
            dim: "element count",
            expected: input.len(),
            actual: out_grad.len(),
        });
    }
    for (g, &x) in out_grad.data.iter_mut().zip(&input.data) {
        if !(x > 0.0) {
            *g = 0.0;
        }
    }
    Ok(out_grad)
}

/// 1-D Gaussian taps `exp(-i^2 / (2 sigma^2))` for `i` in `-r..=r`,
/// `r = ceil(3 sigma)`, optionally scaled to sum to one.
pub fn gaussian_kernel(sigma: f64, normalize: bool) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    if normalize {
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
    }
    Ok(k)
}

/// Separable Gaussian blur applied to every channel of a `C x H x W` tensor.
///
/// `normalize = true` is the image-smoothing mode: sum-normalized taps and
/// replicate-edge borders, so constant images stay constant.
/// `normalize = false` is the peak-spreading mode used for Hough-space
/// targets: raw taps with centre weight 1 and zero padding.
/// `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(input: &Tensor, sigma: f64, normalize: bool) -> Result<Tensor> {
    let kernel = gaussian_kernel(sigma, normalize)?;
    if kernel.len() == 1 {
        return Ok(input.clone());
    }
    let (c, h, w) = input.dims3()?;
    let r = (kernel.len() / 2) as isize;
    let replicate = normalize;
    let sample = |row: &[f64], i: isize| -> f64 {
        let n = row.len() as isize;
        if i >= 0 && i < n {
            row[i as usize]
        } else if replicate {
            row[i.clamp(0, n - 1) as usize]
        } else {
            0.0
        }
    };

    let mut tmp = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let row = &input.data[(ch * h + y) * w..][..w];
            let out = &mut tmp[(ch * h + y) * w..][..w];
            for (x, o) in out.iter_mut().enumerate() {
                *o = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * sample(row, x as isize + k as isize - r))
                    .sum();
            }
        }
    }

    let mut out = vec![0.0; c * h * w];
    let mut col = vec![0.0; h];
    for ch in 0..c {
        for x in 0..w {
            for (y, v) in col.iter_mut().enumerate() {
                *v = tmp[(ch * h + y) * w + x];
            }
            for y in 0..h {
                out[(ch * h + y) * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * sample(&col, y as isize + k as isize - r))
                    .sum();
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

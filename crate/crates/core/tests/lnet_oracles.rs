mod common;

use common::{random_image, random_map, rel_err, rng};
use lnet_core::fht::{
    fht_forward, line_from_cell, BoundaryLine, DyadicLine, GrayImage, HoughMap, QUADRANTS,
};
use lnet_core::lnet::{LNetArch, LNetModel, Variant};
use lnet_core::tensor::{conv2d, relu, Tensor};
use lnet_core::trainer::{make_target, weighted_mse};
use rand::Rng;

/// Weights uniform in `[-0.5, 1)` and biases in `[-0.1, 0.3)`: generic
/// enough that some units are switched off by the ReLUs, most are not.
fn random_model(variant: Variant, r: &mut impl Rng) -> LNetModel {
    let arch = LNetArch::build(variant);
    let mut params = Vec::new();
    for (_, spec) in arch.layers() {
        params.extend((0..spec.weight_count()).map(|_| r.gen_range(-0.5..1.0)));
        params.extend((0..spec.out_channels).map(|_| r.gen_range(-0.1..0.3)));
    }
    LNetModel::from_params(arch, &params).unwrap()
}

fn loss_of(model: &LNetModel, image: &GrayImage, target: &HoughMap) -> f64 {
    weighted_mse(&model.forward(image).unwrap(), target, 1000.0).unwrap().0
}

fn fixture(r: &mut impl Rng) -> (GrayImage, HoughMap) {
    let n = 32;
    let image = random_image(n, r, 0.0, 1.0);
    let lines = [
        BoundaryLine::through([3.0, 0.0], [20.0, 31.0], n).unwrap(),
        BoundaryLine::through([0.0, 10.0], [31.0, 25.0], n).unwrap(),
    ];
    (image, make_target(&lines, n, 1.8).unwrap())
}

/// Noisy identity kernels with small positive biases, so no pre-activation
/// sits exactly on a ReLU kink (zero-region cells would, with zero biases).
fn gradient_model(variant: Variant, r: &mut impl Rng) -> LNetModel {
    let mut model = LNetModel::init_with_noise(LNetArch::build(variant), r, 0.3).unwrap();
    let mut p = model.params();
    let mut at = 0;
    for (_, spec) in LNetArch::build(variant).layers() {
        at += spec.weight_count();
        for b in &mut p[at..at + spec.out_channels] {
            *b = r.gen_range(0.02..0.2);
        }
        at += spec.out_channels;
    }
    model.set_params(&p).unwrap();
    model
}

/// Central differences of the full weighted-MSE loss against the backward pass.
fn check_gradients(model: &LNetModel, image: &GrayImage, target: &HoughMap, indices: &[usize]) {
    let pred = model.forward(image).unwrap();
    let (_, dpred) = weighted_mse(&pred, target, 1000.0).unwrap();
    let grads = model.forward_backward(image, &dpred).unwrap().params;
    let theta = model.params();
    for &i in indices {
        let h = 1e-6 * theta[i].abs().max(1.0);
        let mut probe = model.clone();
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        probe.set_params(&p).unwrap();
        let up = loss_of(&probe, image, target);
        p[i] = theta[i] - h;
        probe.set_params(&p).unwrap();
        let down = loss_of(&probe, image, target);
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-8);
        assert!(err <= 1e-4, "param {i}: analytic {} vs numeric {fd} (rel {err})", grads[i]);
    }
}

#[test]
fn fast_gradients_match_finite_differences_for_every_parameter() {
    let mut r = rng(10);
    let (image, target) = fixture(&mut r);
    let model = gradient_model(Variant::Fast, &mut r);
    let all: Vec<usize> = (0..model.param_count()).collect();
    assert_eq!(all.len(), 55);
    check_gradients(&model, &image, &target, &all);
}

#[test]
fn acc_gradients_match_finite_differences_on_a_sample() {
    let mut r = rng(11);
    let (image, target) = fixture(&mut r);
    let model = gradient_model(Variant::Acc, &mut r);
    let picks: Vec<usize> = rand::seq::index::sample(&mut r, model.param_count(), 50).into_vec();
    check_gradients(&model, &image, &target, &picks);
}

#[test]
fn shared_branch_gradient_is_the_sum_of_single_branch_gradients() {
    let mut r = rng(12);
    let model = random_model(Variant::Fast, &mut r);
    let image = random_image(16, &mut r, 0.0, 1.0);
    let g = random_map(16, &mut r);
    let full = model.forward_backward(&image, &g).unwrap().params;
    let mut summed = vec![0.0; full.len()];
    for q in QUADRANTS {
        let mut only = HoughMap::zeros(16);
        only.plane_mut(q).copy_from_slice(g.plane(q));
        let part = model.forward_backward(&image, &only).unwrap().params;
        summed.iter_mut().zip(part).for_each(|(s, p)| *s += p);
    }
    let conv_a_len: usize = model.conv_a().iter().map(|l| l.spec.param_count()).sum();
    for (i, (a, b)) in full.iter().zip(&summed).enumerate().skip(conv_a_len) {
        assert!(rel_err(*a, *b) <= 1e-10 || (a - b).abs() <= 1e-12, "param {i}: {a} vs {b}");
    }
}

#[test]
fn permuting_the_hough_planes_commutes_with_the_shared_branch() {
    let mut r = rng(13);
    let model = random_model(Variant::Acc, &mut r);
    let image = random_image(16, &mut r, 0.0, 1.0);
    let hough = fht_forward(&model.apply_conv_a(&image).unwrap()).unwrap();
    let expected = model.forward(&image).unwrap();
    let perm = [2usize, 0, 3, 1];
    // plane perm[k] is processed in slot k, then put back
    let outputs: Vec<Tensor> = perm
        .iter()
        .map(|&src| model.apply_conv_b(&hough.plane_tensor(QUADRANTS[src])).unwrap())
        .collect();
    for (k, &src) in perm.iter().enumerate() {
        assert_eq!(outputs[k].data(), expected.plane(QUADRANTS[src]));
    }
}

/// The network written out with the primitive ops, layer by layer.
fn composed_forward(model: &LNetModel, image: &GrayImage) -> HoughMap {
    let mut x = image.to_tensor();
    for l in model.conv_a() {
        x = relu(&conv2d(&x, &l.spec, &l.weights, &l.bias).unwrap());
    }
    let hough = fht_forward(&GrayImage::from_tensor(&x).unwrap()).unwrap();
    let mut out = Vec::new();
    for q in QUADRANTS {
        let mut y = hough.plane_tensor(q);
        for l in model.conv_b() {
            y = relu(&conv2d(&y, &l.spec, &l.weights, &l.bias).unwrap());
        }
        out.extend_from_slice(y.data());
    }
    HoughMap::from_vec(image.size(), out).unwrap()
}

#[test]
fn forward_matches_the_layer_by_layer_composition() {
    let mut r = rng(14);
    for variant in [Variant::Fast, Variant::Acc] {
        let model = random_model(variant, &mut r);
        let image = random_image(32, &mut r, 0.0, 1.0);
        let (a, b) = (model.forward(&image).unwrap(), composed_forward(&model, &image));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{variant}: {x} vs {y}");
        }
    }
}

#[test]
fn noiseless_identity_network_is_the_hough_transform() {
    let mut r = rng(15);
    let model = LNetModel::init_with_noise(LNetArch::build(Variant::Fast), &mut r, 0.0).unwrap();
    for i in 0..20 {
        let n = if i < 2 { 256 } else { 64 };
        // 8-bit pixel values, as stored on disk
        let img = GrayImage::new(n, (0..n * n).map(|_| r.gen_range(0..=255) as f64 / 255.0).collect()).unwrap();
        assert_eq!(model.forward(&img).unwrap(), fht_forward(&img).unwrap(), "image {i}");
    }
}

fn point_line_distance(p: [f64; 2], line: &BoundaryLine) -> f64 {
    let [dx, dy] = [line.p1[0] - line.p0[0], line.p1[1] - line.p0[1]];
    ((p[0] - line.p0[0]) * dy - (p[1] - line.p0[1]) * dx).abs() / dx.hypot(dy)
}

/// Perturbs pixels just beyond `margin` from a cell's line and requires the
/// cell's output to stay bit-identical.
fn check_locality(variant: Variant, margin: f64, seed: u64) {
    let mut r = rng(seed);
    let n = 64usize;
    let model = random_model(variant, &mut r);
    let image = random_image(n, &mut r, 0.0, 1.0);
    let base = model.forward(&image).unwrap();
    let mut probes = 0;
    let mut nonzero = 0;
    while probes < 1000 {
        let (col, row) = (r.gen_range(0..n), r.gen_range(0..n));
        let mut bumped = image.clone();
        bumped.set(col, row, image.get(col, row) + r.gen_range(0.5..2.0));
        let out = model.forward(&bumped).unwrap();
        // cells whose line passes just outside the margin
        let mut tried = 0;
        let mut taken = 0;
        while taken < 10 && tried < 20_000 {
            tried += 1;
            let q = QUADRANTS[r.gen_range(0..4)];
            let cell = DyadicLine::new(q, r.gen_range(-(n as i64 - 1)..n as i64), r.gen_range(0..n as i64), n).unwrap();
            if cell.is_zero_region() || !cell.has_line() {
                continue;
            }
            let line = line_from_cell(&cell).unwrap();
            let d = point_line_distance([col as f64, row as f64], &line);
            if d <= margin || d > margin + 6.0 {
                continue;
            }
            taken += 1;
            probes += 1;
            assert_eq!(
                out.at(&cell).to_bits(),
                base.at(&cell).to_bits(),
                "{variant}: pixel ({col},{row}) at distance {d:.2} changed {cell:?}"
            );
        }
        nonzero += out.data().iter().zip(base.data()).filter(|(a, b)| a != b).count();
    }
    assert!(nonzero > 0, "perturbations never changed anything");
}

#[test]
fn fast_cells_ignore_pixels_beyond_8px() {
    check_locality(Variant::Fast, 8.0, 16);
}

#[test]
fn acc_cells_ignore_pixels_beyond_16px() {
    check_locality(Variant::Acc, 16.0, 17);
}

#[test]
fn init_noise_is_uniform_within_the_kaiming_bound() {
    let mut r = rng(18);
    let arch = LNetArch::build(Variant::Acc);
    let clean = LNetModel::init_with_noise(arch.clone(), &mut r, 0.0).unwrap();
    let noisy = LNetModel::init_with_noise(arch, &mut r, 1e-2).unwrap();
    // noise rescaled to uniform(-1, 1)
    let mut u = Vec::new();
    for (a, b) in clean.layers().iter().zip(noisy.layers()) {
        let fan_in = (a.spec.kernel_h * a.spec.kernel_w * a.spec.in_channels) as f64;
        let scale = (6.0 / fan_in).sqrt() * 1e-2;
        for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
            let z = (y - x) / scale;
            assert!(z.abs() <= 1.0, "noise {z} beyond the bound");
            u.push(z);
        }
    }
    assert!(u.len() >= 1000);
    u.sort_by(f64::total_cmp);
    let len = u.len() as f64;
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let cdf = (z + 1.0) / 2.0;
            (cdf - i as f64 / len).abs().max((cdf - (i + 1) as f64 / len).abs())
        })
        .fold(0.0, f64::max);
    // asymptotic Kolmogorov critical value at the 1% level
    let critical = 1.628 / len.sqrt();
    assert!(ks < critical, "KS statistic {ks} >= {critical}");
}

#[test]
fn same_seed_gives_identical_models() {
    for v in [Variant::Fast, Variant::Acc] {
        let a = LNetModel::init_seeded(LNetArch::build(v), 99, 1e-2).unwrap();
        let b = LNetModel::init_seeded(LNetArch::build(v), 99, 1e-2).unwrap();
        assert_eq!(a.params(), b.params());
    }
}

#[test]
fn parameter_gradients_skip_only_the_image_gradient() {
    let mut r = rng(19);
    for variant in [Variant::Fast, Variant::Acc] {
        let model = random_model(variant, &mut r);
        let image = random_image(16, &mut r, 0.0, 1.0);
        let g = random_map(16, &mut r);
        let trace = model.forward_trace(&image, lnet_core::Execution::Sequential).unwrap();
        let full = model.backward(&trace, &g, lnet_core::Execution::Sequential).unwrap();
        let params = model.param_gradients(&trace, &g, lnet_core::Execution::Sequential).unwrap();
        assert_eq!(params, full.params);
    }
}

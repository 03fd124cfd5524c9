mod common;

use common::{random_image, random_map, rel_err, rng};
use lnet_core::fht::{
    cell_from_line, dyadic_pattern, fht_forward, fht_vjp, line_from_cell, slow_hough_oracle, BoundaryLine, DyadicLine,
    GrayImage, HoughMap, Quadrant, QUADRANTS,
};
use rand::Rng;

fn zero_region_cells(n: usize) -> impl Iterator<Item = (Quadrant, i64, i64)> {
    let m = n as i64 - 1;
    QUADRANTS
        .into_iter()
        .flat_map(move |q| (0..=m).flat_map(move |s| (-m..0).filter(move |x| -x > s).map(move |x| (q, x, s))))
}

#[test]
fn fast_transform_equals_brute_force_for_every_size() {
    let mut r = rng(1);
    for n in [1, 2, 4, 8, 16, 32] {
        for _ in 0..100 {
            let img = random_image(n, &mut r, 0.0, 1.0);
            let fast = fht_forward(&img).unwrap();
            let slow = slow_hough_oracle(&img).unwrap();
            let worst = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-9, "N={n}: max deviation {worst}");
            for (q, x, s) in zero_region_cells(n) {
                assert_eq!(fast.get(q, x, s), 0.0, "N={n} zero-region cell {q:?} x={x} s={s}");
            }
        }
    }
}

#[test]
fn zero_region_holds_half_of_the_negative_offsets() {
    // {x < 0, |x| > s} per plane: for each s, offsets -(N-1)..-(s+1)
    for n in [1usize, 2, 4, 8, 16, 32, 64] {
        let per_plane = zero_region_cells(n).filter(|c| c.0 == Quadrant::Q0).count();
        assert_eq!(per_plane, n * (n - 1) / 2, "N={n}");
    }
}

#[test]
fn zero_region_cells_have_empty_patterns() {
    for n in [2usize, 8, 32] {
        for (q, x, s) in zero_region_cells(n) {
            assert!(dyadic_pattern(&DyadicLine::new(q, x, s, n).unwrap()).is_empty());
        }
    }
}

#[test]
fn transform_is_linear() {
    let mut r = rng(2);
    for _ in 0..20 {
        let f = random_image(32, &mut r, -1.0, 1.0);
        let g = random_image(32, &mut r, -1.0, 1.0);
        let (a, b) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let mix = GrayImage::new(32, f.pixels().iter().zip(g.pixels()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = fht_forward(&mix).unwrap();
        let (hf, hg) = (fht_forward(&f).unwrap(), fht_forward(&g).unwrap());
        for ((l, x), y) in lhs.data().iter().zip(hf.data()).zip(hg.data()) {
            let rhs = a * x + b * y;
            assert!((l - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{l} vs {rhs}");
        }
    }
}

#[test]
fn adjoint_dot_product_identity() {
    let mut r = rng(3);
    for _ in 0..100 {
        let f = random_image(32, &mut r, -1.0, 1.0);
        let g = random_map(32, &mut r);
        let lhs = fht_forward(&f).unwrap().dot(&g);
        let back = fht_vjp(&g).unwrap();
        let rhs: f64 = f.pixels().iter().zip(back.pixels()).map(|(a, b)| a * b).sum();
        assert!(rel_err(lhs, rhs) <= 1e-10, "<Hf,g>={lhs} <f,H'g>={rhs}");
    }
}

#[test]
fn adjoint_of_a_single_cell_is_its_pattern_indicator() {
    let mut r = rng(4);
    let n = 16;
    for _ in 0..50 {
        let q = QUADRANTS[r.gen_range(0..4)];
        let cell = DyadicLine::new(q, r.gen_range(-(n as i64 - 1)..n as i64), r.gen_range(0..n as i64), n).unwrap();
        let mut g = HoughMap::zeros(n);
        g.set(q, cell.offset_x, cell.shift_s, 1.0);
        let back = fht_vjp(&g).unwrap();
        let mut expect = GrayImage::zeros(n);
        for (c, row) in dyadic_pattern(&cell) {
            expect.set(c as usize, row as usize, 1.0);
        }
        assert_eq!(back, expect, "{cell:?}");
    }
}

#[test]
fn shifting_the_image_shifts_the_first_plane() {
    let mut r = rng(5);
    let n = 32usize;
    let ni = n as i64;
    for _ in 0..10 {
        let img = random_image(n, &mut r, 0.0, 1.0);
        let mut shifted = GrayImage::zeros(n);
        for row in 0..n {
            for col in 1..n {
                shifted.set(col, row, img.get(col - 1, row));
            }
        }
        let (h, hs) = (fht_forward(&img).unwrap(), fht_forward(&shifted).unwrap());
        for s in 0..ni {
            for x in -(ni - 1)..ni - 1 {
                // interior: every pattern pixel stays inside the frame before and after
                let cols = lnet_core::fht::pattern_columns(x, s, n);
                if cols.iter().all(|&c| (0..ni - 1).contains(&c)) {
                    let (a, b) = (h.get(Quadrant::Q0, x, s), hs.get(Quadrant::Q0, x + 1, s));
                    assert!((a - b).abs() <= 1e-12, "x={x} s={s}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn pattern_sum_examples() {
    let n = 8;
    let ones = GrayImage::new(n, vec![1.0; n * n]).unwrap();
    let h = slow_hough_oracle(&ones).unwrap();
    assert_eq!(h.get(Quadrant::Q0, 2, 3), 8.0);
    assert_eq!(h.get(Quadrant::Q0, -1, 2), 6.0);
    assert_eq!(h.get(Quadrant::Q0, -3, 2), 0.0);

    let cell = DyadicLine::new(Quadrant::Q0, -1, 2, n).unwrap();
    let mut img = GrayImage::zeros(n);
    let pattern = dyadic_pattern(&cell);
    for &(c, row) in &pattern {
        img.set(c as usize, row as usize, 1.0);
    }
    assert_eq!(fht_forward(&img).unwrap().at(&cell), pattern.len() as f64);
}

/// Where `line` crosses canonical rows 0 and N-1 of `q`'s frame.
fn canonical_ends(line: &BoundaryLine, q: Quadrant) -> (f64, f64) {
    let m = (line.n - 1) as f64;
    let (u0, v0) = q.from_image(m, line.p0[0], line.p0[1]);
    let (u1, v1) = q.from_image(m, line.p1[0], line.p1[1]);
    let at = |v: f64| u0 + (u1 - u0) * (v - v0) / (v1 - v0);
    (at(0.0), at(m))
}

#[test]
fn random_lines_round_trip_to_the_nearest_cell() {
    let mut r = rng(6);
    let n = 256;
    let hi = (n - 1) as f64;
    let mut checked = 0;
    let mut spanning = 0;
    while checked < 1000 {
        let a = [r.gen_range(0.0..=hi), r.gen_range(0.0..=hi)];
        let b = [r.gen_range(0.0..=hi), r.gen_range(0.0..=hi)];
        let Ok(line) = BoundaryLine::through(a, b, n) else {
            continue;
        };
        let cell = cell_from_line(&line).unwrap();
        assert!(!cell.is_zero_region() && cell.has_line());
        let (bottom, top) = canonical_ends(&line, cell.quadrant);
        let (x, s) = (cell.offset_x as f64, cell.shift_s as f64);
        // offset rounds to within half a pixel, the shift adds at most another half
        assert!((bottom - x).abs() <= 0.5 + 1e-9, "{line:?} -> {cell:?}: bottom {bottom}");
        assert!((top - (x + s)).abs() <= 1.0 + 1e-9, "{line:?} -> {cell:?}: top {top}");
        let back = line_from_cell(&cell).unwrap();
        if bottom >= 0.0 && bottom <= hi && top >= 0.0 && top <= hi {
            // frame ends are the canonical ends: the bound carries over
            let d = line.distance(&back);
            assert!(d <= 1.0, "{line:?} -> {cell:?} -> {back:?}: distance {d}");
            spanning += 1;
        }
        checked += 1;
    }
    assert!(spanning > 300, "only {spanning} lines span the canonical frame");
}

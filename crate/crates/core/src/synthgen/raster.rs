use crate::fht::GrayImage;

fn plot_max(img: &mut GrayImage, col: i64, row: i64, v: f64) {
    let n = img.size() as i64;
    if (0..n).contains(&col) && (0..n).contains(&row) && v > 0.0 {
        let cur = img.get(col as usize, row as usize);
        img.set(col as usize, row as usize, cur.max(v.min(1.0)));
    }
}

/// Anti-aliased one-pixel-wide white stroke from `a` to `b` (Wu style):
/// at every integer step of the major axis the unit intensity is split
/// between the two pixels straddling the line. Overlapping strokes keep
/// the brighter value.
pub fn draw_aa_segment(img: &mut GrayImage, a: [f64; 2], b: [f64; 2]) {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let steep = dy.abs() > dx.abs();
    // (major, minor) coordinates
    let (a, b) = if steep {
        ([a[1], a[0]], [b[1], b[0]])
    } else {
        (a, b)
    };
    let (a, b) = if a[0] <= b[0] { (a, b) } else { (b, a) };
    let d_major = b[0] - a[0];
    let slope = if d_major > 0.0 {
        (b[1] - a[1]) / d_major
    } else {
        0.0
    };
    let start = a[0].round() as i64;
    let end = b[0].round() as i64;
    for i in start..=end {
        let t = (i as f64).clamp(a[0], b[0]);
        let minor = a[1] + (t - a[0]) * slope;
        let base = minor.floor();
        let frac = minor - base;
        let base = base as i64;
        let (p, q) = if steep {
            ((base, i), (base + 1, i))
        } else {
            ((i, base), (i, base + 1))
        };
        plot_max(img, p.0, p.1, 1.0 - frac);
        plot_max(img, q.0, q.1, frac);
    }
}

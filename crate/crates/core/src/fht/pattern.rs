use super::{check_transform_size, DyadicLine, GrayImage, HoughMap, QUADRANTS};
use crate::error::Result;

/// Canonical-frame column of every row of the dyadic line `(x, s)` over
/// `height` rows (`height` a power of two, `s < height`).
///
/// Height 1 is the single pixel `x`. For height `2h` and `s = 2s' + b`
/// the bottom half is the pattern `(x, s')` and the top half is the
/// pattern `(x + s' + b, s')`, each over `h` rows.
pub fn pattern_columns(offset_x: i64, shift_s: i64, height: usize) -> Vec<i64> {
    debug_assert!(height.is_power_of_two() && (0..height as i64).contains(&shift_s));
    if height == 1 {
        return vec![offset_x];
    }
    let h = height / 2;
    let half = shift_s / 2;
    let b = shift_s % 2;
    let mut cols = pattern_columns(offset_x, half, h);
    cols.extend(pattern_columns(offset_x + half + b, half, h));
    cols
}

/// In-image pixels `(col, row)` of a Hough cell's pattern, in image coordinates.
pub fn dyadic_pattern(line: &DyadicLine) -> Vec<(i64, i64)> {
    let n = line.n as i64;
    pattern_columns(line.offset_x, line.shift_s, line.n)
        .into_iter()
        .enumerate()
        .filter(|&(_, u)| (0..n).contains(&u))
        .map(|(v, u)| line.quadrant.to_image(n - 1, u, v as i64))
        .collect()
}

/// Brute-force transform: sums every cell's pattern directly, `O(N^3)`.
pub fn slow_hough_oracle(image: &GrayImage) -> Result<HoughMap> {
    let n = image.size();
    check_transform_size(n)?;
    let mut map = HoughMap::zeros(n);
    for q in QUADRANTS {
        for s in 0..n as i64 {
            for x in -(n as i64 - 1)..n as i64 {
                let cell = DyadicLine::new(q, x, s, n)?;
                let sum: f64 = dyadic_pattern(&cell)
                    .into_iter()
                    .map(|(c, r)| image.get(c as usize, r as usize))
                    .sum();
                map.set(q, x, s, sum);
            }
        }
    }
    Ok(map)
}

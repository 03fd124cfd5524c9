//! Fast Hough transform over dyadic line patterns.
//!
//! An `N x N` image (`N = 2^k`) maps to four planes, one per orientation
//! quadrant, each `N` rows (shift `s` in `0..N`) by `2N - 1` columns
//! (offset `x` in `-(N-1)..=N-1`, stored at column `x + N - 1`).
//!
//! Every quadrant is computed by the same canonical transform on a
//! re-indexed copy of the image. In the canonical frame a line runs from
//! `(x, 0)` to `(x + s, N - 1)` in `(u, v)` = (column, row) coordinates and
//! visits exactly one pixel per row. The canonical frame maps back to
//! image `(col, row)` coordinates as
//!
//! | quadrant | image map            | angle from the Y axis |
//! |----------|----------------------|-----------------------|
//! | 0        | `(u, v)`             | `[0, 45]`             |
//! | 1        | `(v, u)` (transpose) | `(45, 90]`            |
//! | 2        | `(N-1-u, v)` (mirror)| `(-45, 0)`            |
//! | 3        | `(v, N-1-u)`         | `(-90, -45]`          |
//!
//! The butterfly merges pairs of half-height partial transforms
//! `log2 N` times, `O(N^2 log N)` additions in total; [`fht_vjp`] runs the
//! same stages in reverse to distribute gradients back along the patterns.

mod lines;
mod pattern;

pub use lines::{cell_from_line, line_from_cell, BoundaryLine};
pub use pattern::{dyadic_pattern, pattern_columns, slow_hough_oracle};

use crate::error::{Error, Result};
use crate::kernels;
use crate::par::Execution;
use crate::tensor::Tensor;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(into = "usize", try_from = "usize")]
pub enum Quadrant {
    Q0,
    Q1,
    Q2,
    Q3,
}

pub const QUADRANTS: [Quadrant; 4] = [Quadrant::Q0, Quadrant::Q1, Quadrant::Q2, Quadrant::Q3];

impl Quadrant {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        QUADRANTS
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("quadrant index {i} out of 0..4")))
    }

    /// Canonical `(u, v)` to image `(col, row)`; `m = N - 1`.
    #[inline]
    pub fn to_image<T>(self, m: T, u: T, v: T) -> (T, T)
    where
        T: Copy + std::ops::Sub<Output = T>,
    {
        match self {
            Quadrant::Q0 => (u, v),
            Quadrant::Q1 => (v, u),
            Quadrant::Q2 => (m - u, v),
            Quadrant::Q3 => (v, m - u),
        }
    }

    /// Image `(col, row)` to canonical `(u, v)`; inverse of [`Quadrant::to_image`].
    #[inline]
    pub fn from_image<T>(self, m: T, col: T, row: T) -> (T, T)
    where
        T: Copy + std::ops::Sub<Output = T>,
    {
        match self {
            Quadrant::Q0 => (col, row),
            Quadrant::Q1 => (row, col),
            Quadrant::Q2 => (m - col, row),
            Quadrant::Q3 => (m - row, col),
        }
    }
}

impl From<Quadrant> for usize {
    fn from(q: Quadrant) -> usize {
        q.index()
    }
}

impl TryFrom<usize> for Quadrant {
    type Error = Error;
    fn try_from(i: usize) -> Result<Self> {
        Quadrant::from_index(i)
    }
}

/// Square single-channel image, row-major, origin top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    size: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape {
                context: "gray image",
                dim: "pixel count",
                expected: size * size,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage { size, pixels })
    }

    pub fn zeros(size: usize) -> Self {
        GrayImage {
            size,
            pixels: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.pixels[row * self.size + col] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.size, self.size], self.pixels.clone())
            .expect("square image has size^2 pixels")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 1 || h != w {
            return Err(Error::ImageSize {
                width: w,
                height: h * c,
            });
        }
        GrayImage::new(h, t.data().to_vec())
    }
}

pub(crate) fn check_transform_size(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::ImageSize {
            width: n,
            height: n,
        });
    }
    Ok(())
}

/// One Hough cell: a dyadic line of a given quadrant, offset and shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DyadicLine {
    pub quadrant: Quadrant,
    pub offset_x: i64,
    pub shift_s: i64,
    pub n: usize,
}

impl DyadicLine {
    pub fn new(quadrant: Quadrant, offset_x: i64, shift_s: i64, n: usize) -> Result<Self> {
        check_transform_size(n)?;
        let m = n as i64 - 1;
        if !(-m..=m).contains(&offset_x) || !(0..=m).contains(&shift_s) {
            return Err(Error::InvalidArgument(format!(
                "cell (x={offset_x}, s={shift_s}) outside the {n}-pixel Hough plane"
            )));
        }
        Ok(DyadicLine {
            quadrant,
            offset_x,
            shift_s,
            n,
        })
    }

    /// Lines with `x < 0` and `|x| > s` never enter the image.
    pub fn is_zero_region(&self) -> bool {
        self.offset_x < 0 && -self.offset_x > self.shift_s
    }

    /// Whether the continuous line through this cell crosses the image in a
    /// segment of positive length (rather than missing it or grazing a corner).
    pub fn has_line(&self) -> bool {
        let m = self.n as i64 - 1;
        let (x, s) = (self.offset_x, self.shift_s);
        if m == 0 {
            return false;
        }
        // a vertical line on the left or right border still counts
        (x + s > 0 || (s == 0 && x == 0)) && (x < m || (s == 0 && x == m))
    }

    /// False for the boundary angles that belong to a neighbouring plane
    /// (vertical in `Q2`, horizontal in `Q3`, the diagonals in `Q1` and
    /// `Q2`); every line then has exactly one canonical cell.
    pub fn is_canonical(&self) -> bool {
        let m = self.n as i64 - 1;
        let s = self.shift_s;
        !match self.quadrant {
            Quadrant::Q0 => false,
            Quadrant::Q1 => s == m && m > 0,
            Quadrant::Q2 => s == 0 || s == m,
            Quadrant::Q3 => s == 0,
        }
    }

    pub fn column(&self) -> usize {
        (self.offset_x + self.n as i64 - 1) as usize
    }
}

/// Four `N x (2N-1)` planes, plane-major, rows indexed by shift.
#[derive(Clone, Debug, PartialEq)]
pub struct HoughMap {
    n: usize,
    data: Vec<f64>,
}

impl HoughMap {
    pub fn zeros(n: usize) -> Self {
        HoughMap {
            n,
            data: vec![0.0; 4 * n * (2 * n - 1)],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        let expected = 4 * n * (2 * n).saturating_sub(1);
        if n == 0 || data.len() != expected {
            return Err(Error::Shape {
                context: "hough map",
                dim: "cell count",
                expected,
                actual: data.len(),
            });
        }
        Ok(HoughMap { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        2 * self.n - 1
    }

    pub fn plane_len(&self) -> usize {
        self.n * self.width()
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

    pub fn plane(&self, q: Quadrant) -> &[f64] {
        let len = self.plane_len();
        &self.data[q.index() * len..][..len]
    }

    pub fn plane_mut(&mut self, q: Quadrant) -> &mut [f64] {
        let len = self.plane_len();
        &mut self.data[q.index() * len..][..len]
    }

    /// Plane as a `1 x N x (2N-1)` tensor.
    pub fn plane_tensor(&self, q: Quadrant) -> Tensor {
        Tensor::from_vec(&[1, self.n, self.width()], self.plane(q).to_vec())
            .expect("plane has N*(2N-1) cells")
    }

    pub fn index(&self, q: Quadrant, offset_x: i64, shift_s: i64) -> usize {
        let col = (offset_x + self.n as i64 - 1) as usize;
        q.index() * self.plane_len() + shift_s as usize * self.width() + col
    }

    pub fn get(&self, q: Quadrant, offset_x: i64, shift_s: i64) -> f64 {
        self.data[self.index(q, offset_x, shift_s)]
    }

    pub fn set(&mut self, q: Quadrant, offset_x: i64, shift_s: i64, v: f64) {
        let i = self.index(q, offset_x, shift_s);
        self.data[i] = v;
    }

    pub fn at(&self, cell: &DyadicLine) -> f64 {
        self.get(cell.quadrant, cell.offset_x, cell.shift_s)
    }

    /// Cell address of a flat index.
    pub fn cell_of(&self, index: usize) -> DyadicLine {
        let plane = index / self.plane_len();
        let rem = index % self.plane_len();
        DyadicLine {
            quadrant: QUADRANTS[plane],
            offset_x: (rem % self.width()) as i64 - (self.n as i64 - 1),
            shift_s: (rem / self.width()) as i64,
            n: self.n,
        }
    }

    pub fn dot(&self, other: &HoughMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Canonical-frame copy of `image` for quadrant `q`: `out[v][u] = image[to_image(u, v)]`.
fn canonical_view(image: &GrayImage, q: Quadrant) -> Vec<f64> {
    let n = image.size();
    let m = n - 1;
    let mut out = vec![0.0; n * n];
    for v in 0..n {
        for u in 0..n {
            let (col, row) = q.to_image(m, u, v);
            out[v * n + u] = image.get(col, row);
        }
    }
    out
}

/// First column that can be nonzero after merging blocks of `rows` rows:
/// each merge shifts the upper half right, so sums reach at most
/// `rows - 1` columns left of the image's own columns.
#[inline]
fn band_start(n: usize, rows: usize) -> usize {
    n - rows
}

fn canonical_forward(canon: &[f64], n: usize) -> Vec<f64> {
    let w = 2 * n - 1;
    let mut cur = vec![0.0; n * w];
    for r in 0..n {
        cur[r * w + n - 1..(r + 1) * w].copy_from_slice(&canon[r * n..(r + 1) * n]);
    }
    let mut next = vec![0.0; n * w];
    let mut h = 1;
    while h < n {
        // columns left of `lo` are zero in both halves and in the result
        let lo = band_start(n, 2 * h);
        for r0 in (0..n).step_by(2 * h) {
            for s in 0..2 * h {
                let half = s / 2;
                // top half starts `half + (s & 1)` columns to the right
                let shift = s - half;
                let bottom = &cur[(r0 + half) * w..][lo..w];
                let top = &cur[(r0 + h + half) * w..][lo..w];
                let out = &mut next[(r0 + s) * w..][lo..w];
                let split = out.len() - shift;
                kernels::add_into(&mut out[..split], &bottom[..split], &top[shift..]);
                out[split..].copy_from_slice(&bottom[split..]);
            }
        }
        std::mem::swap(&mut cur, &mut next);
        h *= 2;
    }
    cur
}

/// Transpose of [`canonical_forward`], level by level in reverse. Each
/// level gathers: the lower half-row `half` collects output rows `2 half`
/// and `2 half + 1` in place, the upper one collects them shifted back.
fn canonical_adjoint(grad: &[f64], n: usize) -> Vec<f64> {
    let w = 2 * n - 1;
    let mut cur = grad.to_vec();
    let mut next = vec![0.0; n * w];
    let mut h = n / 2;
    while h >= 1 {
        // the forward input of this level only has columns from `lo` on
        let lo = band_start(n, h);
        for r0 in (0..n).step_by(2 * h) {
            for half in 0..h {
                let g0 = &cur[(r0 + 2 * half) * w..][..w];
                let g1 = &cur[(r0 + 2 * half + 1) * w..][..w];
                let bottom = &mut next[(r0 + half) * w..][lo..w];
                kernels::add_into(bottom, &g0[lo..], &g1[lo..]);
                // row 2 half read the upper half `half` columns further
                // right, row 2 half + 1 one more; `lo > half` keeps both in range
                let top = &mut next[(r0 + h + half) * w..][lo..w];
                let (a0, a1) = (&g0[lo - half..w - half], &g1[lo - half - 1..w - half - 1]);
                kernels::add_into(top, a0, a1);
            }
        }
        std::mem::swap(&mut cur, &mut next);
        h /= 2;
    }
    let mut canon = vec![0.0; n * n];
    for r in 0..n {
        canon[r * n..(r + 1) * n].copy_from_slice(&cur[r * w + n - 1..(r + 1) * w]);
    }
    canon
}

/// Sums of `image` over every dyadic line of every quadrant.
pub fn fht_forward(image: &GrayImage) -> Result<HoughMap> {
    fht_forward_with(image, Execution::default())
}

pub fn fht_forward_with(image: &GrayImage, exec: Execution) -> Result<HoughMap> {
    let n = image.size();
    check_transform_size(n)?;
    let planes = exec.map(&QUADRANTS, |&q| canonical_forward(&canonical_view(image, q), n));
    HoughMap::from_vec(n, planes.concat())
}

/// Adjoint of [`fht_forward`]: every pixel receives the sum of `out_grad`
/// over all cells whose pattern contains it.
pub fn fht_vjp(out_grad: &HoughMap) -> Result<GrayImage> {
    fht_vjp_with(out_grad, Execution::default())
}

pub fn fht_vjp_with(out_grad: &HoughMap, exec: Execution) -> Result<GrayImage> {
    let n = out_grad.n();
    check_transform_size(n)?;
    let m = n - 1;
    let canon = exec.map(&QUADRANTS, |&q| canonical_adjoint(out_grad.plane(q), n));
    let mut img = GrayImage::zeros(n);
    for (q, c) in QUADRANTS.iter().zip(&canon) {
        for v in 0..n {
            for u in 0..n {
                let (col, row) = q.to_image(m, u, v);
                img.pixels[row * n + col] += c[v * n + u];
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> GrayImage {
        GrayImage::new(n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        for n in [0, 3, 6, 12] {
            let img = GrayImage::zeros(n);
            assert!(fht_forward(&img).is_err(), "n={n}");
        }
        assert!(fht_vjp(&HoughMap::zeros(3)).is_err());
    }

    #[test]
    fn zero_image_gives_zero_map() {
        let map = fht_forward(&GrayImage::zeros(16)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        assert_eq!(map.data().len(), 4 * 16 * 31);
    }

    #[test]
    fn single_pixel_image() {
        let img = GrayImage::new(1, vec![2.5]).unwrap();
        let map = fht_forward(&img).unwrap();
        assert_eq!(map.data(), &[2.5; 4]);
    }

    #[test]
    fn figure_line_a_sums_its_pattern() {
        let n = 8;
        let cell = DyadicLine::new(Quadrant::Q0, -1, 2, n).unwrap();
        let pattern = dyadic_pattern(&cell);
        let mut img = GrayImage::zeros(n);
        for &(c, r) in &pattern {
            img.set(c as usize, r as usize, 1.0);
        }
        let map = fht_forward(&img).unwrap();
        assert_eq!(map.at(&cell), pattern.len() as f64);
        assert_eq!(pattern.len(), 6);
    }

    #[test]
    fn diagonal_cotangent_spreads_to_the_diagonal() {
        let n = 8;
        let mut g = HoughMap::zeros(n);
        g.set(Quadrant::Q0, 0, 7, 1.0);
        let img = fht_vjp(&g).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(img.get(c, r), if c == r { 1.0 } else { 0.0 });
            }
        }
        assert!(fht_vjp(&HoughMap::zeros(n)).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_oracle_small_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 4, 8, 16] {
            for _ in 0..5 {
                let img = random_image(&mut rng, n);
                let fast = fht_forward(&img).unwrap();
                let slow = slow_hough_oracle(&img).unwrap();
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    assert!((a - b).abs() <= 1e-9, "n={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = random_image(&mut rng, 32);
        let a = fht_forward_with(&img, Execution::Sequential).unwrap();
        let b = fht_forward_with(&img, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let ga = fht_vjp_with(&a, Execution::Sequential).unwrap();
        let gb = fht_vjp_with(&a, Execution::Parallel).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn quadrant_maps_are_inverse() {
        let m = 15i64;
        for q in QUADRANTS {
            for u in 0..=m {
                for v in 0..=m {
                    let (c, r) = q.to_image(m, u, v);
                    assert_eq!(q.from_image(m, c, r), (u, v));
                }
            }
        }
    }

    #[test]
    fn zero_region_count_per_plane() {
        // Enumerated: x in -(N-1)..-1 contributes |x| shifts, N(N-1)/2 in total.
        for n in [2usize, 4, 8, 16, 256] {
            let mut count = 0;
            for s in 0..n as i64 {
                for x in -(n as i64 - 1)..n as i64 {
                    if DyadicLine::new(Quadrant::Q0, x, s, n).unwrap().is_zero_region() {
                        count += 1;
                    }
                }
            }
            assert_eq!(count, n * (n - 1) / 2);
        }
    }

    #[test]
    fn cell_index_roundtrip() {
        let map = HoughMap::zeros(8);
        for i in 0..map.data().len() {
            let c = map.cell_of(i);
            assert_eq!(map.index(c.quadrant, c.offset_x, c.shift_s), i);
        }
    }
}

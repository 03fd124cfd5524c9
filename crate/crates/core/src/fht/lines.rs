use super::{check_transform_size, DyadicLine, Quadrant};
use crate::error::{Error, Result};

const FRAME_TOL: f64 = 1e-9;

/// A line through the image, stored as its two intersections with the
/// frame of the `[0, N-1] x [0, N-1]` square. Points are `[x, y]` =
/// `[col, row]` with the origin at the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundaryLine {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub n: usize,
}

fn on_frame(p: [f64; 2], m: f64) -> bool {
    let inside = p.iter().all(|&c| c >= -FRAME_TOL && c <= m + FRAME_TOL);
    let on_edge = p.iter().any(|&c| c.abs() <= FRAME_TOL || (c - m).abs() <= FRAME_TOL);
    inside && on_edge
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl BoundaryLine {
    pub fn new(p0: [f64; 2], p1: [f64; 2], n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("image size {n} has no frame lines")));
        }
        let m = (n - 1) as f64;
        if !p0.iter().chain(&p1).all(|c| c.is_finite()) {
            return Err(Error::NonFinite(format!("line endpoints {p0:?} {p1:?}")));
        }
        if !on_frame(p0, m) || !on_frame(p1, m) {
            return Err(Error::InvalidArgument(format!(
                "endpoints {p0:?} {p1:?} are not on the frame of a {n}x{n} image"
            )));
        }
        if p0 == p1 {
            return Err(Error::DegenerateLine(format!("both endpoints at {p0:?}")));
        }
        Ok(BoundaryLine { p0, p1, n })
    }

    /// The infinite line through `a` and `b`, clipped to the image square.
    pub fn through(a: [f64; 2], b: [f64; 2], n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("image size {n} has no frame lines")));
        }
        let m = (n - 1) as f64;
        let d = [b[0] - a[0], b[1] - a[1]];
        if d == [0.0, 0.0] {
            return Err(Error::DegenerateLine(format!("both points at {a:?}")));
        }
        let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for axis in 0..2 {
            if d[axis] == 0.0 {
                if a[axis] < 0.0 || a[axis] > m {
                    return Err(Error::DegenerateLine(format!(
                        "line through {a:?} {b:?} misses the image"
                    )));
                }
                continue;
            }
            let t0 = -a[axis] / d[axis];
            let t1 = (m - a[axis]) / d[axis];
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
        let at = |t: f64| {
            [
                (a[0] + t * d[0]).clamp(0.0, m),
                (a[1] + t * d[1]).clamp(0.0, m),
            ]
        };
        let (p0, p1) = (snap(at(t_lo), m), snap(at(t_hi), m));
        if !(t_hi > t_lo) || dist(p0, p1) < 1e-6 {
            return Err(Error::DegenerateLine(format!(
                "line through {a:?} {b:?} does not cross the image"
            )));
        }
        BoundaryLine::new(p0, p1, n)
    }

    pub fn direction(&self) -> [f64; 2] {
        [self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]]
    }

    pub fn length(&self) -> f64 {
        dist(self.p0, self.p1)
    }

    /// End-matching distance: pair the frame ends of both lines in the way
    /// that minimises the mean endpoint distance and return that mean.
    pub fn distance(&self, other: &BoundaryLine) -> f64 {
        let straight = dist(self.p0, other.p0) + dist(self.p1, other.p1);
        let crossed = dist(self.p0, other.p1) + dist(self.p1, other.p0);
        0.5 * straight.min(crossed)
    }

    /// `[x0, y0, x1, y1]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.p0[0], self.p0[1], self.p1[0], self.p1[1]]
    }

    pub fn from_array(v: [f64; 4], n: usize) -> Result<Self> {
        BoundaryLine::new([v[0], v[1]], [v[2], v[3]], n)
    }
}

/// Pulls a clipped point exactly onto the nearest frame edge.
fn snap(p: [f64; 2], m: f64) -> [f64; 2] {
    let gaps = [p[0], m - p[0], p[1], m - p[1]];
    let (i, _) = gaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four gaps");
    let mut q = p;
    match i {
        0 => q[0] = 0.0,
        1 => q[0] = m,
        2 => q[1] = 0.0,
        _ => q[1] = m,
    }
    q
}

/// The continuous line through the canonical points `(x, 0)` and
/// `(x + s, N - 1)`, mapped into image coordinates and clipped to the frame.
pub fn line_from_cell(cell: &DyadicLine) -> Result<BoundaryLine> {
    if cell.is_zero_region() {
        return Err(Error::ZeroRegion {
            quadrant: cell.quadrant.index(),
            offset_x: cell.offset_x,
            shift_s: cell.shift_s,
        });
    }
    if !cell.has_line() {
        return Err(Error::DegenerateLine(format!(
            "cell {cell:?} only touches a corner of the image"
        )));
    }
    let m = (cell.n - 1) as f64;
    let x = cell.offset_x as f64;
    let a = cell.quadrant.to_image(m, x, 0.0);
    let b = cell.quadrant.to_image(m, x + cell.shift_s as f64, m);
    BoundaryLine::through([a.0, a.1], [b.0, b.1], cell.n)
}

/// Quadrant owning a direction. Directions are taken with `dy > 0` (or
/// `dy == 0, dx > 0`); the angle from the Y axis then lies in `(-90, 90]`
/// and is split `[0, 45]`, `(45, 90]`, `(-45, 0)`, `(-90, -45]`.
pub fn quadrant_of(direction: [f64; 2]) -> Quadrant {
    let [mut dx, mut dy] = direction;
    if dy < 0.0 || (dy == 0.0 && dx < 0.0) {
        dx = -dx;
        dy = -dy;
    }
    if dx >= 0.0 {
        if dx <= dy {
            Quadrant::Q0
        } else {
            Quadrant::Q1
        }
    } else if -dx < dy {
        Quadrant::Q2
    } else {
        Quadrant::Q3
    }
}

/// Round to nearest, ties toward negative infinity.
fn round_half_down(v: f64) -> i64 {
    (v - 0.5).ceil() as i64
}

/// Nearest Hough cell to a continuous line.
///
/// The quadrant follows [`quadrant_of`]; the real-valued offset and shift in
/// that quadrant's canonical frame are each rounded to the nearest integer
/// (ties toward negative infinity) and then clamped onto a cell whose line
/// crosses the image.
pub fn cell_from_line(line: &BoundaryLine) -> Result<DyadicLine> {
    let n = line.n;
    check_transform_size(n)?;
    if line.p0 == line.p1 {
        return Err(Error::DegenerateLine(format!("both endpoints at {:?}", line.p0)));
    }
    let m = (n - 1) as f64;
    let q = quadrant_of(line.direction());
    let (u0, v0) = q.from_image(m, line.p0[0], line.p0[1]);
    let (u1, v1) = q.from_image(m, line.p1[0], line.p1[1]);
    // canonical lines are at most 45 degrees from vertical, so dv != 0
    let slope = (u1 - u0) / (v1 - v0);
    let bottom = u0 - v0 * slope;
    let top = u0 + (m - v0) * slope;

    let mi = n as i64 - 1;
    let mut s = round_half_down(top - bottom).clamp(0, mi);
    let mut x = round_half_down(bottom).clamp(-mi, mi);
    if s > 0 && x >= mi {
        x = mi - 1;
    }
    if x + s <= 0 && !(x == 0 && s == 0) {
        if s == 0 {
            x = 0;
        } else {
            x = 1 - s;
        }
    }
    s = s.clamp(0, mi);
    DyadicLine::new(q, x, s, n)
}

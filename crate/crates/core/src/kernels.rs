//! Inner loops shared by the convolution and the Hough butterfly.
//!
//! Each kernel is compiled twice: for the baseline target and, on x86-64,
//! with AVX2 enabled, picked at run time. Both versions perform the same
//! floating-point operations in the same order (no fused multiply-add),
//! so results are bit-identical whichever one runs.

macro_rules! kernel {
    ($(#[$meta:meta])* fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$meta])*
        #[inline]
        pub(crate) fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn generic($($arg: $ty),*) $(-> $ret)? $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn avx2($($arg: $ty),*) $(-> $ret)? {
                    generic($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the running CPU supports AVX2, checked just above.
                    return unsafe { avx2($($arg),*) };
                }
            }
            generic($($arg),*)
        }
    };
}

/// Dot product with four interleaved partial sums: element `i` goes to
/// lane `i % 4`, the lanes are combined as `(l0 + l1) + (l2 + l3)`, then
/// the tail past the last full group of four is added in order.
#[inline]
pub(crate) fn dot_lanes(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let [r] = dot_lanes_n(&a[..len], [&b[..len]]);
    r
}

/// `[g . r[..len], g . r[d..d + len], g . r[2d..2d + len]]` with
/// `len = g.len()`, each summed like [`dot_lanes`].
#[inline]
pub(crate) fn dot3(g: &[f64], r: &[f64], d: usize) -> [f64; 3] {
    let len = g.len();
    dot_lanes_n(g, [&r[..len], &r[d..d + len], &r[2 * d..2 * d + len]])
}

#[inline]
fn dot_lanes_n<const K: usize>(g: &[f64], rs: [&[f64]; K]) -> [f64; K] {
    debug_assert!(rs.iter().all(|r| r.len() == g.len()));
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the running CPU supports AVX2, checked just above.
        return unsafe { dot_lanes_avx2(g, rs) };
    }
    dot_lanes_generic(g, rs)
}

fn dot_lanes_generic<const K: usize>(g: &[f64], rs: [&[f64]; K]) -> [f64; K] {
    let split = g.len() / 4 * 4;
    let mut acc = [[0.0f64; 4]; K];
    for i in (0..split).step_by(4) {
        for (a, r) in acc.iter_mut().zip(&rs) {
            for k in 0..4 {
                a[k] += g[i + k] * r[i + k];
            }
        }
    }
    finish_lanes(g, rs, acc, split)
}

#[inline(always)]
fn finish_lanes<const K: usize>(g: &[f64], rs: [&[f64]; K], acc: [[f64; 4]; K], split: usize) -> [f64; K] {
    let mut out = [0.0; K];
    for ((o, a), r) in out.iter_mut().zip(&acc).zip(&rs) {
        *o = (a[0] + a[1]) + (a[2] + a[3]);
        for i in split..g.len() {
            *o += g[i] * r[i];
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_lanes_avx2<const K: usize>(g: &[f64], rs: [&[f64]; K]) -> [f64; K] {
    use std::arch::x86_64::{_mm256_add_pd, _mm256_loadu_pd, _mm256_mul_pd, _mm256_setzero_pd, _mm256_storeu_pd};
    let split = g.len() / 4 * 4;
    let mut acc = [_mm256_setzero_pd(); K];
    let mut i = 0;
    while i < split {
        // SAFETY: `i + 4 <= split <= len` for `g` and every `r`.
        let gv = _mm256_loadu_pd(g.as_ptr().add(i));
        for (a, r) in acc.iter_mut().zip(&rs) {
            *a = _mm256_add_pd(*a, _mm256_mul_pd(gv, _mm256_loadu_pd(r.as_ptr().add(i))));
        }
        i += 4;
    }
    let mut lanes = [[0.0f64; 4]; K];
    for (l, a) in lanes.iter_mut().zip(&acc) {
        _mm256_storeu_pd(l.as_mut_ptr(), *a);
    }
    finish_lanes(g, rs, lanes, split)
}

kernel! {
    /// `o[i] += w[0] a[i] + w[1] a[i + d] + w[2] a[i + 2d] + w[3] b[i] + ...`
    /// over three rows `a, b, c`, accumulated term by term left to right.
    fn taps3x3(o: &mut [f64], a: &[f64], b: &[f64], c: &[f64], w: &[f64; 9], d: usize) {
        let len = o.len();
        let (a0, a1, a2) = (&a[..len], &a[d..d + len], &a[2 * d..2 * d + len]);
        let (b0, b1, b2) = (&b[..len], &b[d..d + len], &b[2 * d..2 * d + len]);
        let (c0, c1, c2) = (&c[..len], &c[d..d + len], &c[2 * d..2 * d + len]);
        let [w0, w1, w2, w3, w4, w5, w6, w7, w8] = *w;
        for i in 0..len {
            o[i] = o[i]
                + w0 * a0[i]
                + w1 * a1[i]
                + w2 * a2[i]
                + w3 * b0[i]
                + w4 * b1[i]
                + w5 * b2[i]
                + w6 * c0[i]
                + w7 * c1[i]
                + w8 * c2[i];
        }
    }
}

kernel! {
    /// `o[i] += w[0] r[i + 2d] + w[1] r[i + d] + w[2] r[i]`: the three
    /// column taps of a correlation's transpose.
    fn taps3_reversed(o: &mut [f64], r: &[f64], w: &[f64; 3], d: usize) {
        let len = o.len();
        let (g2, g1, g0) = (&r[..len], &r[d..d + len], &r[2 * d..2 * d + len]);
        let [w0, w1, w2] = *w;
        for i in 0..len {
            o[i] = o[i] + w0 * g0[i] + w1 * g1[i] + w2 * g2[i];
        }
    }
}

kernel! {
    /// `o[i] += w * x[i]`.
    fn axpy(o: &mut [f64], x: &[f64], w: f64) {
        for (o, &x) in o.iter_mut().zip(x) {
            *o += w * x;
        }
    }
}

kernel! {
    /// `o[i] = a[i] + b[i]`.
    fn add_into(o: &mut [f64], a: &[f64], b: &[f64]) {
        for ((o, &a), &b) in o.iter_mut().zip(a).zip(b) {
            *o = a + b;
        }
    }
}

//! Runtime-dispatched vector primitives for the hot loops.
//!
//! On x86-64 with AVX2+FMA the fused variants run; everywhere else the
//! scalar eight-lane forms do. Both orders are fixed, so results are
//! bit-reproducible on a given machine (fused multiply-add rounds once,
//! so the two paths may differ in the last ulps between machines).

#[cfg(target_arch = "x86_64")]
fn fma_available() -> bool {
    use std::sync::OnceLock;
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    })
}

// ---- dot ------------------------------------------------------------------

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // Safety: feature presence checked above.
        return unsafe { dot_fma(a, b) };
    }
    dot_scalar(a, b)
}

fn dot_scalar(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let mut ai = a.chunks_exact(LANES);
    let mut bi = b.chunks_exact(LANES);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut total =
        ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (&x, &y) in ai.remainder().iter().zip(bi.remainder()) {
        total += x * y;
    }
    total
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_fma(a: &[f32], b: &[f32]) -> f32 {
    use std::arch::x86_64::*;
    let n = a.len();
    let mut acc0 = _mm256_setzero_ps();
    let mut acc1 = _mm256_setzero_ps();
    let mut acc2 = _mm256_setzero_ps();
    let mut acc3 = _mm256_setzero_ps();
    let mut i = 0usize;
    while i + 32 <= n {
        let pa = a.as_ptr().add(i);
        let pb = b.as_ptr().add(i);
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(pa), _mm256_loadu_ps(pb), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(8)), _mm256_loadu_ps(pb.add(8)), acc1);
        acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(16)), _mm256_loadu_ps(pb.add(16)), acc2);
        acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(pa.add(24)), _mm256_loadu_ps(pb.add(24)), acc3);
        i += 32;
    }
    while i + 8 <= n {
        acc0 = _mm256_fmadd_ps(
            _mm256_loadu_ps(a.as_ptr().add(i)),
            _mm256_loadu_ps(b.as_ptr().add(i)),
            acc0,
        );
        i += 8;
    }
    let sum = _mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3));
    let hi = _mm256_extractf128_ps(sum, 1);
    let lo = _mm256_castps256_ps128(sum);
    let q = _mm_add_ps(lo, hi);
    let sh = _mm_movehl_ps(q, q);
    let pair = _mm_add_ps(q, sh);
    let one = _mm_add_ss(pair, _mm_shuffle_ps(pair, pair, 1));
    let mut total = _mm_cvtss_f32(one);
    while i < n {
        total += a[i] * b[i];
        i += 1;
    }
    total
}

// ---- axpy -----------------------------------------------------------------

/// out[i] += w * inp[i].
pub fn axpy(out: &mut [f32], inp: &[f32], w: f32) {
    debug_assert_eq!(out.len(), inp.len());
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // Safety: feature presence checked above.
        unsafe { axpy_fma(out, inp, w) };
        return;
    }
    for (o, &v) in out.iter_mut().zip(inp) {
        *o += w * v;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_fma(out: &mut [f32], inp: &[f32], w: f32) {
    use std::arch::x86_64::*;
    let n = out.len();
    let wv = _mm256_set1_ps(w);
    let mut i = 0usize;
    while i + 8 <= n {
        let po = out.as_mut_ptr().add(i);
        let acc = _mm256_fmadd_ps(wv, _mm256_loadu_ps(inp.as_ptr().add(i)), _mm256_loadu_ps(po));
        _mm256_storeu_ps(po, acc);
        i += 8;
    }
    while i < n {
        out[i] += w * inp[i];
        i += 1;
    }
}

/// out[i] += a0*b0[i] + a1*b1[i] + a2*b2[i] + a3*b3[i].
#[allow(clippy::too_many_arguments)]
pub fn axpy4(
    out: &mut [f32],
    b0: &[f32],
    b1: &[f32],
    b2: &[f32],
    b3: &[f32],
    a0: f32,
    a1: f32,
    a2: f32,
    a3: f32,
) {
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // Safety: feature presence checked above.
        unsafe { axpy4_fma(out, b0, b1, b2, b3, a0, a1, a2, a3) };
        return;
    }
    for j in 0..out.len() {
        out[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn axpy4_fma(
    out: &mut [f32],
    b0: &[f32],
    b1: &[f32],
    b2: &[f32],
    b3: &[f32],
    a0: f32,
    a1: f32,
    a2: f32,
    a3: f32,
) {
    use std::arch::x86_64::*;
    let n = out.len();
    let (v0, v1, v2, v3) =
        (_mm256_set1_ps(a0), _mm256_set1_ps(a1), _mm256_set1_ps(a2), _mm256_set1_ps(a3));
    let mut i = 0usize;
    while i + 8 <= n {
        let po = out.as_mut_ptr().add(i);
        let mut acc = _mm256_loadu_ps(po);
        acc = _mm256_fmadd_ps(v0, _mm256_loadu_ps(b0.as_ptr().add(i)), acc);
        acc = _mm256_fmadd_ps(v1, _mm256_loadu_ps(b1.as_ptr().add(i)), acc);
        acc = _mm256_fmadd_ps(v2, _mm256_loadu_ps(b2.as_ptr().add(i)), acc);
        acc = _mm256_fmadd_ps(v3, _mm256_loadu_ps(b3.as_ptr().add(i)), acc);
        _mm256_storeu_ps(po, acc);
        i += 8;
    }
    while i < n {
        out[i] += a0 * b0[i] + a1 * b1[i] + a2 * b2[i] + a3 * b3[i];
        i += 1;
    }
}

// ---- 3x3 convolution plane kernels -------------------------------------

#[inline]
fn tap_bounds(h: usize, w: usize, dy: usize, dx: usize) -> (usize, usize, usize, usize) {
    let y_lo = 1usize.saturating_sub(dy);
    let y_hi = (h + 1 - dy).min(h);
    let x_lo = 1usize.saturating_sub(dx);
    let x_hi = (w + 1 - dx).min(w);
    (y_lo, y_hi, x_lo, x_hi)
}

/// out[y][x] += sum over taps of taps[dy*3+dx] * inp[y+dy-1][x+dx-1],
/// zero outside the plane. One dispatch per plane pair.
pub fn conv3x3_taps_apply(out: &mut [f32], inp: &[f32], h: usize, w: usize, taps: &[f32; 9]) {
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // Safety: feature presence checked above.
        unsafe { conv3x3_taps_apply_fma(out, inp, h, w, taps) };
        return;
    }
    conv3x3_taps_apply_scalar(out, inp, h, w, taps);
}

fn conv3x3_taps_apply_scalar(out: &mut [f32], inp: &[f32], h: usize, w: usize, taps: &[f32; 9]) {
    for dy in 0..3usize {
        for dx in 0..3usize {
            let wv = taps[dy * 3 + dx];
            if wv == 0.0 {
                continue;
            }
            let (y_lo, y_hi, x_lo, x_hi) = tap_bounds(h, w, dy, dx);
            if x_lo >= x_hi {
                continue;
            }
            for y in y_lo..y_hi {
                let sy = y + dy - 1;
                let o = &mut out[y * w + x_lo..y * w + x_hi];
                let i = &inp[sy * w + x_lo + dx - 1..sy * w + x_hi + dx - 1];
                for (ov, &iv) in o.iter_mut().zip(i) {
                    *ov += wv * iv;
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv3x3_taps_apply_fma(out: &mut [f32], inp: &[f32], h: usize, w: usize, taps: &[f32; 9]) {
    use std::arch::x86_64::*;
    for dy in 0..3usize {
        for dx in 0..3usize {
            let wv = taps[dy * 3 + dx];
            if wv == 0.0 {
                continue;
            }
            let (y_lo, y_hi, x_lo, x_hi) = tap_bounds(h, w, dy, dx);
            if x_lo >= x_hi {
                continue;
            }
            let vw = _mm256_set1_ps(wv);
            let len = x_hi - x_lo;
            for y in y_lo..y_hi {
                let po = out.as_mut_ptr().add(y * w + x_lo);
                let pi = inp.as_ptr().add((y + dy - 1) * w + x_lo + dx - 1);
                let mut x = 0usize;
                while x + 8 <= len {
                    let acc = _mm256_fmadd_ps(
                        vw,
                        _mm256_loadu_ps(pi.add(x)),
                        _mm256_loadu_ps(po.add(x)),
                    );
                    _mm256_storeu_ps(po.add(x), acc);
                    x += 8;
                }
                while x < len {
                    *po.add(x) += wv * *pi.add(x);
                    x += 1;
                }
            }
        }
    }
}

/// Per-tap correlation sums: result[dy*3+dx] = sum of
/// gout[y][x] * inp[y+dy-1][x+dx-1] over the valid region.
pub fn conv3x3_taps_grad(gout: &[f32], inp: &[f32], h: usize, w: usize) -> [f32; 9] {
    #[cfg(target_arch = "x86_64")]
    if fma_available() {
        // Safety: feature presence checked above.
        return unsafe { conv3x3_taps_grad_fma(gout, inp, h, w) };
    }
    conv3x3_taps_grad_scalar(gout, inp, h, w)
}

fn conv3x3_taps_grad_scalar(gout: &[f32], inp: &[f32], h: usize, w: usize) -> [f32; 9] {
    let mut out = [0.0f32; 9];
    for dy in 0..3usize {
        for dx in 0..3usize {
            let (y_lo, y_hi, x_lo, x_hi) = tap_bounds(h, w, dy, dx);
            if x_lo >= x_hi {
                continue;
            }
            let mut acc = 0.0f32;
            for y in y_lo..y_hi {
                let sy = y + dy - 1;
                acc += dot_scalar(
                    &gout[y * w + x_lo..y * w + x_hi],
                    &inp[sy * w + x_lo + dx - 1..sy * w + x_hi + dx - 1],
                );
            }
            out[dy * 3 + dx] = acc;
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv3x3_taps_grad_fma(gout: &[f32], inp: &[f32], h: usize, w: usize) -> [f32; 9] {
    use std::arch::x86_64::*;
    let mut out = [0.0f32; 9];
    for dy in 0..3usize {
        for dx in 0..3usize {
            let (y_lo, y_hi, x_lo, x_hi) = tap_bounds(h, w, dy, dx);
            if x_lo >= x_hi {
                continue;
            }
            let len = x_hi - x_lo;
            let mut vacc = _mm256_setzero_ps();
            let mut tail = 0.0f32;
            for y in y_lo..y_hi {
                let pg = gout.as_ptr().add(y * w + x_lo);
                let pi = inp.as_ptr().add((y + dy - 1) * w + x_lo + dx - 1);
                let mut x = 0usize;
                while x + 8 <= len {
                    vacc = _mm256_fmadd_ps(
                        _mm256_loadu_ps(pg.add(x)),
                        _mm256_loadu_ps(pi.add(x)),
                        vacc,
                    );
                    x += 8;
                }
                while x < len {
                    tail += *pg.add(x) * *pi.add(x);
                    x += 1;
                }
            }
            let hi = _mm256_extractf128_ps(vacc, 1);
            let lo = _mm256_castps256_ps128(vacc);
            let q = _mm_add_ps(lo, hi);
            let sh = _mm_movehl_ps(q, q);
            let pair = _mm_add_ps(q, sh);
            let one = _mm_add_ss(pair, _mm_shuffle_ps(pair, pair, 1));
            out[dy * 3 + dx] = _mm_cvtss_f32(one) + tail;
        }
    }
    out
}

//! Dense, convolution, pooling and activation kernels with hand-written
//! backward passes.
//!
//! Convolutions lower to im2col plus a matmul. The matmuls are partitioned
//! over output rows across threads; every output element is still produced
//! by one sequential dot product, so results are bit-identical for any
//! thread count.

use crate::error::{Error, Result};
use crate::numerics::simd::{axpy, axpy4, conv3x3_taps_apply, conv3x3_taps_grad, dot};
use crate::numerics::Tensor;

fn thread_count(rows: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    hw.min(rows).max(1)
}

/// Run `f` on disjoint row ranges of `out`, split across threads.
fn parallel_row_chunks<F>(out: &mut [f32], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    let rows = out.len() / row_len.max(1);
    let threads = thread_count(rows);
    if threads <= 1 || rows < 2 {
        f(0, out);
        return;
    }
    let chunk_rows = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (idx, chunk) in out.chunks_mut(chunk_rows * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(idx * chunk_rows, chunk));
        }
    });
}

/// C[m,n] = A[m,k] * B[k,n], all row-major.
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    parallel_row_chunks(&mut out, n, |row0, chunk| {
        for (local, out_row) in chunk.chunks_mut(n).enumerate() {
            let i = row0 + local;
            let a_row = &a[i * k..(i + 1) * k];
            // Four k-steps per pass over the output row.
            let mut kk = 0;
            while kk + 4 <= k {
                axpy4(
                    out_row,
                    &b[kk * n..(kk + 1) * n],
                    &b[(kk + 1) * n..(kk + 2) * n],
                    &b[(kk + 2) * n..(kk + 3) * n],
                    &b[(kk + 3) * n..(kk + 4) * n],
                    a_row[kk],
                    a_row[kk + 1],
                    a_row[kk + 2],
                    a_row[kk + 3],
                );
                kk += 4;
            }
            while kk < k {
                axpy(out_row, &b[kk * n..(kk + 1) * n], a_row[kk]);
                kk += 1;
            }
        }
    });
    out
}

/// C[m,n] = A[m,k] * B^T where B is [n,k] row-major (row-by-row dots).
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0f32; m * n];
    parallel_row_chunks(&mut out, n, |row0, chunk| {
        for (local, out_row) in chunk.chunks_mut(n).enumerate() {
            let i = row0 + local;
            let a_row = &a[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, &b[j * k..(j + 1) * k]);
            }
        }
    });
    out
}

/// C[k,n] = A^T * B where A is [m,k] and B is [m,n], both row-major.
pub fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0f32; k * n];
    let threads = thread_count(k);
    let chunk_rows = k.div_ceil(threads);
    std::thread::scope(|scope| {
        for (idx, chunk) in out.chunks_mut(chunk_rows * n).enumerate() {
            scope.spawn(move || {
                let row0 = idx * chunk_rows;
                let rows = chunk.len() / n;
                // Four input rows per pass over the owned output rows.
                let mut i = 0;
                while i + 4 <= m {
                    let b0 = &b[i * n..(i + 1) * n];
                    let b1 = &b[(i + 1) * n..(i + 2) * n];
                    let b2 = &b[(i + 2) * n..(i + 3) * n];
                    let b3 = &b[(i + 3) * n..(i + 4) * n];
                    for local in 0..rows {
                        let col = row0 + local;
                        axpy4(
                            &mut chunk[local * n..(local + 1) * n],
                            b0,
                            b1,
                            b2,
                            b3,
                            a[i * k + col],
                            a[(i + 1) * k + col],
                            a[(i + 2) * k + col],
                            a[(i + 3) * k + col],
                        );
                    }
                    i += 4;
                }
                while i < m {
                    let b_row = &b[i * n..(i + 1) * n];
                    for local in 0..rows {
                        axpy(&mut chunk[local * n..(local + 1) * n], b_row, a[i * k + row0 + local]);
                    }
                    i += 1;
                }
            });
        }
    });
    out
}

// ---- dense -----------------------------------------------------------

/// `input` [B, in] x `weights` [out, in] + `bias` [out] -> [B, out].
pub fn dense(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (b, d_in) = dims2(input, "dense input")?;
    let (d_out, w_in) = dims2(weights, "dense weights")?;
    if w_in != d_in || bias.len() != d_out {
        return Err(Error::ShapeMismatch {
            context: "dense",
            expected: vec![d_out, d_in],
            got: vec![weights.shape()[0], weights.shape()[1], bias.len()],
        });
    }
    let mut out = matmul_nt(input.data(), weights.data(), b, d_in, d_out);
    for row in out.chunks_mut(d_out) {
        for (o, &bv) in row.iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Tensor::from_vec(vec![b, d_out], out)
}

/// Returns (grad_input, grad_weights, grad_bias).
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f32>)> {
    let (b, d_in) = dims2(input, "dense input")?;
    let (d_out, _) = dims2(weights, "dense weights")?;
    let grad_in = matmul_nn(grad_out.data(), weights.data(), b, d_out, d_in);
    let grad_w = matmul_tn(grad_out.data(), input.data(), b, d_out, d_in);
    let mut grad_b = vec![0.0f32; d_out];
    for row in grad_out.data().chunks(d_out) {
        for (g, &v) in grad_b.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok((
        Tensor::from_vec(vec![b, d_in], grad_in)?,
        Tensor::from_vec(vec![d_out, d_in], grad_w)?,
        grad_b,
    ))
}

fn dims2(t: &Tensor, context: &'static str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "expected rank-2 tensor",
            expected: vec![2],
            got: vec![t.shape().len()],
        });
    }
    let _ = context;
    Ok((t.shape()[0], t.shape()[1]))
}

// ---- relu ------------------------------------------------------------

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape().to_vec(), data).expect("same shape")
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape().to_vec(), data).expect("same shape")
}

// ---- conv2d ----------------------------------------------------------

fn conv_out_dim(in_dim: usize, k: usize, stride: usize, pad: usize) -> usize {
    (in_dim + 2 * pad - k) / stride + 1
}

fn check_conv(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<[usize; 7]> {
    if input.shape().len() != 4 || kernel.shape().len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "conv2d expects NCHW input and OIKK kernel",
            expected: vec![4, 4],
            got: vec![input.shape().len(), kernel.shape().len()],
        });
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [co, ci, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    if ci != c {
        return Err(Error::ShapeMismatch {
            context: "conv2d channel count",
            expected: vec![c],
            got: vec![ci],
        });
    }
    if stride == 0 || kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::InvalidArgument {
            context: "conv2d",
            detail: format!("kernel {kh}x{kw} stride {stride} incompatible with input {h}x{w} pad {pad}"),
        });
    }
    Ok([n, c, h, w, co, kh, kw])
}

fn im2col(
    input: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let patch = c * kh * kw;
    let mut cols = vec![0.0f32; n * ho * wo * patch];
    let src = input.data();
    for ni in 0..n {
        for oy in 0..ho {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..wo {
                let row = ((ni * ho + oy) * wo + ox) * patch;
                let ix0 = (ox * stride) as isize - pad as isize;
                // Clip the kernel window against the input once per patch.
                let dx_lo = (-ix0).max(0) as usize;
                let dx_hi = (w as isize - ix0).clamp(0, kw as isize) as usize;
                if dx_lo >= dx_hi {
                    continue;
                }
                for ci in 0..c {
                    let plane = ((ni * c) + ci) * h * w;
                    let p0 = row + ci * kh * kw;
                    for dy in 0..kh {
                        let iy = iy0 + dy as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = plane + iy as usize * w + (ix0 + dx_lo as isize) as usize;
                        let dst = p0 + dy * kw + dx_lo;
                        cols[dst..dst + (dx_hi - dx_lo)]
                            .copy_from_slice(&src[base..base + (dx_hi - dx_lo)]);
                    }
                }
            }
        }
    }
    cols
}

/// Zero-padded strided cross-correlation: NCHW input, [Cout, Cin, kh, kw]
/// kernel, no bias. 3x3/stride-1/pad-1 takes a direct shifted-row path;
/// everything else lowers to im2col plus a matmul.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let [n, c, h, w, co, kh, kw] = check_conv(input, kernel, stride, pad)?;
    if kh == 3 && kw == 3 && stride == 1 && pad == 1 {
        return conv3x3_forward(input, kernel, n, c, h, w, co);
    }
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(w, kw, stride, pad);
    let patch = kernel.len() / co;
    let cols = im2col(input, kh, kw, stride, pad, ho, wo);
    let out_mat = matmul_nt(&cols, kernel.data(), n * ho * wo, patch, co);
    // [N*Ho*Wo, Co] -> [N, Co, Ho, Wo]
    let mut out = vec![0.0f32; n * co * ho * wo];
    for ni in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((ni * ho + oy) * wo + ox) * co;
                for ci in 0..co {
                    out[((ni * co + ci) * ho + oy) * wo + ox] = out_mat[row + ci];
                }
            }
        }
    }
    Tensor::from_vec(vec![n, co, ho, wo], out)
}

/// out[co] += w * shift(in[ci]) for the nine 3x3 taps, per sample.
fn conv3x3_forward(
    input: &Tensor,
    kernel: &Tensor,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
) -> Result<Tensor> {
    let mut out = vec![0.0f32; n * co * h * w];
    let src = input.data();
    let ker = kernel.data();
    parallel_row_chunks(&mut out, co * h * w, |n0, chunk| {
        for (local, sample_out) in chunk.chunks_mut(co * h * w).enumerate() {
            let ni = n0 + local;
            let sample_in = &src[ni * c * h * w..(ni + 1) * c * h * w];
            for oc in 0..co {
                let out_plane = &mut sample_out[oc * h * w..(oc + 1) * h * w];
                for ic in 0..c {
                    let in_plane = &sample_in[ic * h * w..(ic + 1) * h * w];
                    let taps: &[f32; 9] =
                        ker[(oc * c + ic) * 9..(oc * c + ic) * 9 + 9].try_into().unwrap();
                    conv3x3_taps_apply(out_plane, in_plane, h, w, taps);
                }
            }
        }
    });
    Tensor::from_vec(vec![n, co, h, w], out)
}

fn conv3x3_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
) -> Result<(Tensor, Tensor)> {
    let src = input.data();
    let ker = kernel.data();
    let gout = grad_out.data();

    // Input gradient: correlate the output gradient with the flipped taps.
    let mut gin = vec![0.0f32; n * c * h * w];
    parallel_row_chunks(&mut gin, c * h * w, |n0, chunk| {
        for (local, sample_gin) in chunk.chunks_mut(c * h * w).enumerate() {
            let ni = n0 + local;
            let sample_gout = &gout[ni * co * h * w..(ni + 1) * co * h * w];
            for ic in 0..c {
                let gin_plane = &mut sample_gin[ic * h * w..(ic + 1) * h * w];
                for oc in 0..co {
                    let gout_plane = &sample_gout[oc * h * w..(oc + 1) * h * w];
                    let taps = &ker[(oc * c + ic) * 9..(oc * c + ic) * 9 + 9];
                    // Flipped taps turn the correlation into the input gradient.
                    let mut rev = [0.0f32; 9];
                    for t in 0..9 {
                        rev[t] = taps[8 - t];
                    }
                    conv3x3_taps_apply(gin_plane, gout_plane, h, w, &rev);
                }
            }
        }
    });

    // Weight gradient: nine clipped plane dots per (out, in) channel pair.
    let mut gw = vec![0.0f32; co * c * 9];
    parallel_row_chunks(&mut gw, c * 9, |oc0, chunk| {
        for (local, gw_row) in chunk.chunks_mut(c * 9).enumerate() {
            let oc = oc0 + local;
            for ni in 0..n {
                let gout_plane = &gout[(ni * co + oc) * h * w..(ni * co + oc + 1) * h * w];
                for ic in 0..c {
                    let in_plane = &src[(ni * c + ic) * h * w..(ni * c + ic + 1) * h * w];
                    let tap_sums = conv3x3_taps_grad(gout_plane, in_plane, h, w);
                    for (slot, &t) in gw_row[ic * 9..ic * 9 + 9].iter_mut().zip(&tap_sums) {
                        *slot += t;
                    }
                }
            }
        }
    });

    Ok((
        Tensor::from_vec(vec![n, c, h, w], gin)?,
        Tensor::from_vec(vec![co, c, 3, 3], gw)?,
    ))
}

/// Returns (grad_input, grad_kernel).
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w, co, kh, kw] = check_conv(input, kernel, stride, pad)?;
    if kh == 3 && kw == 3 && stride == 1 && pad == 1 {
        return conv3x3_backward(input, kernel, grad_out, n, c, h, w, co);
    }
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(w, kw, stride, pad);
    let patch = c * kh * kw;

    // [N, Co, Ho, Wo] -> [N*Ho*Wo, Co]
    let mut gout_mat = vec![0.0f32; n * ho * wo * co];
    for ni in 0..n {
        for ci in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    gout_mat[((ni * ho + oy) * wo + ox) * co + ci] = grad_out.at4(ni, ci, oy, ox);
                }
            }
        }
    }

    let cols = im2col(input, kh, kw, stride, pad, ho, wo);
    let grad_kernel = matmul_tn(&gout_mat, &cols, n * ho * wo, co, patch);
    let grad_cols = matmul_nn(&gout_mat, kernel.data(), n * ho * wo, co, patch);

    // col2im scatter-add.
    let mut grad_in = vec![0.0f32; input.len()];
    for ni in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((ni * ho + oy) * wo + ox) * patch;
                let iy0 = (oy * stride) as isize - pad as isize;
                let ix0 = (ox * stride) as isize - pad as isize;
                let mut p = row;
                for ci in 0..c {
                    let plane = ((ni * c) + ci) * h * w;
                    for dy in 0..kh {
                        let iy = iy0 + dy as isize;
                        if iy < 0 || iy >= h as isize {
                            p += kw;
                            continue;
                        }
                        let base = plane + iy as usize * w;
                        for dx in 0..kw {
                            let ix = ix0 + dx as isize;
                            if ix >= 0 && ix < w as isize {
                                grad_in[base + ix as usize] += grad_cols[p];
                            }
                            p += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(vec![n, c, h, w], grad_in)?,
        Tensor::from_vec(vec![co, c, kh, kw], grad_kernel)?,
    ))
}

// ---- pooling ---------------------------------------------------------

/// Max pool with square window `k` and stride `s`; also returns the flat
/// input index of each window maximum for the backward pass.
pub fn maxpool2(input: &Tensor, k: usize, s: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = pool_dims(input, k, s)?;
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = vec![0.0f32; n * c * ho * wo];
    let mut idx = vec![0usize; n * c * ho * wo];
    let src = input.data();
    for ni in 0..n {
        for ci in 0..c {
            let plane = (ni * c + ci) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = plane + (oy * s + dy) * w + (ox * s + dx);
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = ((ni * c + ci) * ho + oy) * wo + ox;
                    out[o] = best;
                    idx[o] = best_i;
                }
            }
        }
    }
    Ok((Tensor::from_vec(vec![n, c, ho, wo], out)?, idx))
}

pub fn maxpool2_backward(grad_out: &Tensor, idx: &[usize], input_shape: &[usize]) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    for (g, &i) in grad_out.data().iter().zip(idx) {
        grad_in.data_mut()[i] += g;
    }
    grad_in
}

/// Average pool with square window `k` and stride `s`.
pub fn avgpool2(input: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    let [n, c, h, w] = pool_dims(input, k, s)?;
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0f32; n * c * ho * wo];
    let src = input.data();
    for ni in 0..n {
        for ci in 0..c {
            let plane = (ni * c + ci) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += src[plane + (oy * s + dy) * w + (ox * s + dx)] as f64;
                        }
                    }
                    out[((ni * c + ci) * ho + oy) * wo + ox] = (acc * inv) as f32;
                }
            }
        }
    }
    Tensor::from_vec(vec![n, c, ho, wo], out)
}

pub fn avgpool2_backward(grad_out: &Tensor, k: usize, s: usize, input_shape: &[usize]) -> Tensor {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let ho = grad_out.shape()[2];
    let wo = grad_out.shape()[3];
    let inv = 1.0 / (k * k) as f32;
    let mut grad_in = Tensor::zeros(vec![n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad_out.at4(ni, ci, oy, ox) * inv;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = ((ni * c + ci) * h + oy * s + dy) * w + (ox * s + dx);
                            grad_in.data_mut()[i] += g;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Global average pool: [N, C, H, W] -> [N, C].
pub fn global_avgpool(input: &Tensor) -> Result<Tensor> {
    if input.shape().len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "global_avgpool",
            expected: vec![4],
            got: vec![input.shape().len()],
        });
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let area = (h * w) as f64;
    let mut out = vec![0.0f32; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &input.data()[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            let acc: f64 = plane.iter().map(|&v| v as f64).sum();
            out[ni * c + ci] = (acc / area) as f32;
        }
    }
    Tensor::from_vec(vec![n, c], out)
}

pub fn global_avgpool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let inv = 1.0 / (h * w) as f32;
    let mut grad_in = Tensor::zeros(vec![n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_out.at2(ni, ci) * inv;
            for v in
                &mut grad_in.data_mut()[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w]
            {
                *v = g;
            }
        }
    }
    grad_in
}

fn pool_dims(input: &Tensor, k: usize, s: usize) -> Result<[usize; 4]> {
    if input.shape().len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "pool expects NCHW",
            expected: vec![4],
            got: vec![input.shape().len()],
        });
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    if k == 0 || s == 0 || k > h || k > w {
        return Err(Error::InvalidArgument {
            context: "pool",
            detail: format!("window {k} stride {s} incompatible with {h}x{w}"),
        });
    }
    Ok([n, c, h, w])
}

//! Convolution internals: reflect padding, im2col lowering and the small
//! cache-friendly matmuls the forward and backward passes reduce to.
//!
//! A 3×3 convolution of `[B, C, H, W]` becomes `Y = W_mat · X + bias`, where
//! `W_mat` is the kernel viewed as `[O, 9C]` (its natural memory layout) and
//! `X` is the im2col matrix `[9C, B·S]` with one column per output position.
//! The backward pass reuses the same lowering:
//! grad_kernel = G · Xᵀ, grad_input = col2im(W_matᵀ · G).

use crate::error::{Error, Result};
use crate::tensor::{PadMode, Tensor};

/// Maps an out-of-range index back into `[0, n)` by mirroring across the
/// border without repeating the edge sample. Size-1 axes collapse to 0.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Copies one `H×W` plane into a `(H+2)×(W+2)` buffer with a one-pixel
/// reflected border.
fn pad_plane_reflect1(src: &[f32], h: usize, w: usize, dst: &mut [f32]) {
    let pw = w + 2;
    debug_assert_eq!(dst.len(), (h + 2) * pw);
    for py in 0..h + 2 {
        let sy = reflect_index(py as isize - 1, h);
        let src_row = &src[sy * w..(sy + 1) * w];
        let dst_row = &mut dst[py * pw..(py + 1) * pw];
        dst_row[1..w + 1].copy_from_slice(src_row);
        dst_row[0] = src_row[reflect_index(-1, w)];
        dst_row[w + 1] = src_row[reflect_index(w as isize, w)];
    }
}

/// Output spatial size for a 3×3 convolution under `pad`.
fn out_dims(h: usize, w: usize, pad: PadMode) -> Result<(usize, usize)> {
    match pad {
        PadMode::Reflect1 => {
            if h < 1 || w < 1 {
                return Err(Error::Shape(format!("input spatial dims {h}×{w} too small")));
            }
            Ok((h, w))
        }
        PadMode::Valid => {
            if h < 3 || w < 3 {
                return Err(Error::Shape(format!(
                    "valid 3×3 convolution needs at least 3×3 input, got {h}×{w}"
                )));
            }
            Ok((h - 2, w - 2))
        }
    }
}

/// Builds the im2col matrix `[9C, B·oh·ow]`. Row `c*9 + ky*3 + kx` holds the
/// input value at offset `(ky-1, kx-1)` (reflect) or `(ky, kx)` (valid) for
/// every output position, batch-major.
fn im2col(
    input: &[f32],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    pad: PadMode,
    x_mat: &mut [f32],
) {
    let (oh, ow) = match pad {
        PadMode::Reflect1 => (h, w),
        PadMode::Valid => (h - 2, w - 2),
    };
    let s = oh * ow;
    let n = b * s;
    debug_assert_eq!(x_mat.len(), 9 * c * n);
    let mut padded = vec![0.0f32; (h + 2) * (w + 2)];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &input[(bi * c + ci) * h * w..][..h * w];
            let (rows, row_w): (&[f32], usize) = match pad {
                PadMode::Reflect1 => {
                    pad_plane_reflect1(plane, h, w, &mut padded);
                    (&padded, w + 2)
                }
                PadMode::Valid => (plane, w),
            };
            for ky in 0..3 {
                for kx in 0..3 {
                    let k = ci * 9 + ky * 3 + kx;
                    let dst = &mut x_mat[k * n + bi * s..][..s];
                    for y in 0..oh {
                        let src = &rows[(y + ky) * row_w + kx..][..ow];
                        dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }
}

/// `c[M×N] += a[M×K] · b[K×N]`, row-major. The K loop is unrolled by four to
/// cut traffic on the output row; summation order is fixed, so results are
/// reproducible run to run.
pub(crate) fn gemm_nn_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
            kk += 1;
        }
    }
}

/// `c[M×N] += a[M×T] · b[N×T]ᵀ`: every output element is a dot product of two
/// contiguous rows. Four partial accumulators keep the pipeline busy.
pub(crate) fn gemm_nt_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, n: usize, t: usize) {
    debug_assert_eq!(a.len(), m * t);
    debug_assert_eq!(b.len(), n * t);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * t..(i + 1) * t];
        for j in 0..n {
            let b_row = &b[j * t..(j + 1) * t];
            let mut acc = [0.0f32; 4];
            let mut tt = 0;
            while tt + 4 <= t {
                acc[0] += a_row[tt] * b_row[tt];
                acc[1] += a_row[tt + 1] * b_row[tt + 1];
                acc[2] += a_row[tt + 2] * b_row[tt + 2];
                acc[3] += a_row[tt + 3] * b_row[tt + 3];
                tt += 4;
            }
            let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            while tt < t {
                sum += a_row[tt] * b_row[tt];
                tt += 1;
            }
            c[i * n + j] += sum;
        }
    }
}

/// `c[K×N] += a[M×K]ᵀ · b[M×N]`: the transposed-weights product used for
/// input gradients. The M loop is unrolled by four like `gemm_nn_acc`.
pub(crate) fn gemm_tn_acc(c: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for kk in 0..k {
        let c_row = &mut c[kk * n..(kk + 1) * n];
        let mut i = 0;
        while i + 4 <= m {
            let a0 = a[i * k + kk];
            let a1 = a[(i + 1) * k + kk];
            let a2 = a[(i + 2) * k + kk];
            let a3 = a[(i + 3) * k + kk];
            let b0 = &b[i * n..(i + 1) * n];
            let b1 = &b[(i + 1) * n..(i + 2) * n];
            let b2 = &b[(i + 2) * n..(i + 3) * n];
            let b3 = &b[(i + 3) * n..(i + 4) * n];
            for j in 0..n {
                c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            i += 4;
        }
        while i < m {
            let av = a[i * k + kk];
            let b_row = &b[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
            i += 1;
        }
    }
}

/// Forward 3×3 convolution. `kernel` is `[O, C, 3, 3]`, `bias` is `[O]`.
pub(crate) fn conv_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    pad: PadMode,
) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let (o, kc, _, _) = kernel.dims4()?;
    if kc != c {
        return Err(Error::Shape(format!(
            "input has {c} channels but kernel expects {kc}"
        )));
    }
    let (oh, ow) = out_dims(h, w, pad)?;
    let s = oh * ow;
    let n = b * s;
    let mut x_mat = vec![0.0f32; 9 * c * n];
    im2col(input.data(), b, c, h, w, pad, &mut x_mat);
    let mut y = vec![0.0f32; o * n];
    gemm_nn_acc(&mut y, kernel.data(), &x_mat, o, 9 * c, n);
    let mut out = vec![0.0f32; b * o * s];
    for bi in 0..b {
        for oi in 0..o {
            let bias_v = bias.data()[oi];
            let src = &y[oi * n + bi * s..][..s];
            let dst = &mut out[(bi * o + oi) * s..][..s];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v + bias_v;
            }
        }
    }
    Tensor::new(&[b, o, oh, ow], out)
}

/// Gradients of a 3×3 convolution with respect to input, kernel and bias.
/// `grad_out` must have the forward output's shape.
pub(crate) fn conv_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    pad: PadMode,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, h, w) = input.dims4()?;
    let (o, _, _, _) = kernel.dims4()?;
    let (gb_, go_, oh, ow) = grad_out.dims4()?;
    debug_assert_eq!((gb_, go_), (b, o));
    let s = oh * ow;
    let n = b * s;

    // Rearrange grad_out [B, O, S] into G [O, N] so each row streams
    // contiguously through the matmuls below.
    let mut g = vec![0.0f32; o * n];
    for bi in 0..b {
        for oi in 0..o {
            let src = &grad_out.data()[(bi * o + oi) * s..][..s];
            g[oi * n + bi * s..][..s].copy_from_slice(src);
        }
    }

    let mut grad_bias = vec![0.0f32; o];
    for oi in 0..o {
        let row = &g[oi * n..(oi + 1) * n];
        let mut sum = 0.0f32;
        for v in row {
            sum += v;
        }
        grad_bias[oi] = sum;
    }

    let mut x_mat = vec![0.0f32; 9 * c * n];
    im2col(input.data(), b, c, h, w, pad, &mut x_mat);

    let mut grad_kernel = vec![0.0f32; o * 9 * c];
    gemm_nt_acc(&mut grad_kernel, &g, &x_mat, o, 9 * c, n);

    let mut grad_x = vec![0.0f32; 9 * c * n];
    gemm_tn_acc(&mut grad_x, kernel.data(), &g, o, 9 * c, n);

    // col2im: scatter the column gradients back onto input pixels, folding
    // reflected border contributions onto their source pixels.
    let mut grad_input = vec![0.0f32; b * c * h * w];
    match pad {
        PadMode::Reflect1 => {
            let (ph, pw) = (h + 2, w + 2);
            let mut padded = vec![0.0f32; ph * pw];
            for bi in 0..b {
                for ci in 0..c {
                    padded.iter_mut().for_each(|v| *v = 0.0);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = ci * 9 + ky * 3 + kx;
                            let src = &grad_x[k * n + bi * s..][..s];
                            for y in 0..oh {
                                let dst = &mut padded[(y + ky) * pw + kx..][..ow];
                                for (d, v) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    let plane = &mut grad_input[(bi * c + ci) * h * w..][..h * w];
                    for py in 0..ph {
                        let sy = reflect_index(py as isize - 1, h);
                        for px in 0..pw {
                            let sx = reflect_index(px as isize - 1, w);
                            plane[sy * w + sx] += padded[py * pw + px];
                        }
                    }
                }
            }
        }
        PadMode::Valid => {
            for bi in 0..b {
                for ci in 0..c {
                    let plane = &mut grad_input[(bi * c + ci) * h * w..][..h * w];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = ci * 9 + ky * 3 + kx;
                            let src = &grad_x[k * n + bi * s..][..s];
                            for y in 0..oh {
                                let dst = &mut plane[(y + ky) * w + kx..][..ow];
                                for (d, v) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((
        Tensor::new(&[b, c, h, w], grad_input)?,
        Tensor::new(kernel.shape(), grad_kernel)?,
        Tensor::new(&[o], grad_bias)?,
    ))
}

//! Forward and backward kernels for the spatial ops. Convolutions run as
//! im2col followed by a single GEMM.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = beta * c + a · b` with `a` of logical shape `m×k` and `b` of `k×n`.
/// `a_t` / `b_t` mark operands stored transposed (row-major `k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides can reach is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) struct ConvDims {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

pub(crate) fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let (c_in, h, w) = input.dims3()?;
    let (c_out, wc_in, kh, kw) = match weight.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::InvalidShape(format!(
                "conv weights must be C_out×C_in×k×k, got {:?}",
                weight.shape()
            )))
        }
    };
    if wc_in != c_in || kh != kw || kh % 2 == 0 {
        return Err(Error::InvalidShape(format!(
            "conv weights {:?} incompatible with input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::InvalidShape(format!(
            "conv bias must have shape [{c_out}], got {:?}",
            bias.shape()
        )));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        h,
        w,
        k: kh,
    })
}

fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = k / 2;
    let hw = h * w;
    let mut col = vec![0.0; d.c_in * k * k * hw];
    for ci in 0..d.c_in {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let src = &plane[(sy - pad) * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let shift = x_lo + kx - pad;
                    dst[x_lo..x_hi].copy_from_slice(&src[shift..shift + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], d: &ConvDims) -> Vec<f64> {
    let (h, w, k) = (d.h, d.w, d.k);
    let pad = k / 2;
    let hw = h * w;
    let mut x = vec![0.0; d.c_in * hw];
    for ci in 0..d.c_in {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let dst = &mut plane[(sy - pad) * w..][..w];
                    let src = &row[y * w..][..w];
                    let shift = x_lo + kx - pad;
                    for (o, v) in dst[shift..shift + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[x_lo..x_hi])
                    {
                        *o += v;
                    }
                }
            }
        }
    }
    x
}

/// Same-size cross-correlation with zero padding `k/2`, stride 1, plus bias.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias)?;
    let hw = d.h * d.w;
    let ck = d.c_in * d.k * d.k;
    let mut out = Vec::with_capacity(d.c_out * hw);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, hw));
    }
    if d.k == 1 {
        gemm(d.c_out, ck, hw, weight.data(), false, input.data(), false, 1.0, &mut out);
    } else {
        let col = im2col(input.data(), &d);
        gemm(d.c_out, ck, hw, weight.data(), false, &col, false, 1.0, &mut out);
    }
    Tensor::new(vec![d.c_out, d.h, d.w], out)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv_dims(input, weight, bias)?;
    let hw = d.h * d.w;
    let ck = d.c_in * d.k * d.k;
    let go = grad_out.data();

    let grad_bias: Vec<f64> = go.chunks_exact(hw).map(|r| r.iter().sum()).collect();

    let mut grad_w = vec![0.0; d.c_out * ck];
    let mut grad_col = vec![0.0; ck * hw];
    if d.k == 1 {
        gemm(d.c_out, hw, ck, go, false, input.data(), true, 0.0, &mut grad_w);
        gemm(ck, d.c_out, hw, weight.data(), true, go, false, 0.0, &mut grad_col);
        return Ok((
            Tensor::new(input.shape().to_vec(), grad_col)?,
            Tensor::new(weight.shape().to_vec(), grad_w)?,
            Tensor::new(vec![d.c_out], grad_bias)?,
        ));
    }
    let col = im2col(input.data(), &d);
    gemm(d.c_out, hw, ck, go, false, &col, true, 0.0, &mut grad_w);
    gemm(ck, d.c_out, hw, weight.data(), true, go, false, 0.0, &mut grad_col);
    let grad_in = col2im(&grad_col, &d);
    Ok((
        Tensor::new(input.shape().to_vec(), grad_in)?,
        Tensor::new(weight.shape().to_vec(), grad_w)?,
        Tensor::new(vec![d.c_out], grad_bias)?,
    ))
}

/// 2×2 non-overlapping max pool. Returns the output and, per output value,
/// the flat input index it came from (first maximum in row-major order).
pub fn max_pool2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!(
            "max_pool2 needs even extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub(crate) fn max_pool2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    grad
}

fn up_conv_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c_in, h, w) = input.dims3()?;
    match weight.shape()[..] {
        [wc, c_out, 2, 2] if wc == c_in => Ok((c_in, c_out, h, w)),
        _ => Err(Error::InvalidShape(format!(
            "up_conv2 weights must be {c_in}×C_out×2×2, got {:?}",
            weight.shape()
        ))),
    }
}

/// Stride-2, kernel-2 transposed convolution: each input pixel paints a
/// disjoint 2×2 output patch.
pub fn up_conv2_forward(input: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, w) = up_conv_dims(input, weight)?;
    let hw = h * w;
    // patches[(co*4 + dy*2 + dx), pixel]
    let mut patches = vec![0.0; c_out * 4 * hw];
    gemm(c_out * 4, c_in, hw, weight.data(), true, input.data(), false, 0.0, &mut patches);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for dy in 0..2 {
            for dx in 0..2 {
                let src = &patches[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut out[co * oh * ow + (2 * y + dy) * ow..][..ow];
                    for x in 0..w {
                        dst[2 * x + dx] = src[y * w + x];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

pub(crate) fn up_conv2_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c_in, c_out, h, w) = up_conv_dims(input, weight)?;
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let go = grad_out.data();
    let mut grad_patches = vec![0.0; c_out * 4 * hw];
    for co in 0..c_out {
        for dy in 0..2 {
            for dx in 0..2 {
                let dst = &mut grad_patches[(co * 4 + dy * 2 + dx) * hw..][..hw];
                for y in 0..h {
                    let src = &go[co * oh * ow + (2 * y + dy) * ow..][..ow];
                    for x in 0..w {
                        dst[y * w + x] = src[2 * x + dx];
                    }
                }
            }
        }
    }
    let mut grad_in = vec![0.0; c_in * hw];
    gemm(c_in, c_out * 4, hw, weight.data(), false, &grad_patches, false, 0.0, &mut grad_in);
    let mut grad_w = vec![0.0; c_in * c_out * 4];
    gemm(c_in, hw, c_out * 4, input.data(), false, &grad_patches, true, 0.0, &mut grad_w);
    Ok((
        Tensor::new(input.shape().to_vec(), grad_in)?,
        Tensor::new(weight.shape().to_vec(), grad_w)?,
    ))
}

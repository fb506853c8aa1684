//! Low-level compute kernels behind the tape ops.
//!
//! Every kernel splits its output into disjoint spans, one work item per
//! span, and keeps the accumulation order inside each span fixed. The
//! `parallel` feature therefore changes wall time but never a single output
//! bit. The `*_seq` variants are always compiled: they are the fallback when
//! the feature is off and the baseline for the criterion benches.

use super::{Result, Scalar, TensorError};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

macro_rules! for_each_span {
    ($out:expr, $len:expr, $body:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $out.par_chunks_mut($len).enumerate().for_each($body);
        }
        #[cfg(not(feature = "parallel"))]
        {
            $out.chunks_mut($len).enumerate().for_each($body);
        }
    }};
}

// ---------------------------------------------------------------- matmul --

/// `x: [B,I] · w: [I,O] -> out: [B,O]`
pub fn matmul<T: Scalar>(x: &[T], w: &[T], b: usize, i: usize, o: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), b * o);
    for_each_span!(out, o, |(row, span): (usize, &mut [T])| {
        matmul_row(x, w, i, o, row, span)
    });
}

pub fn matmul_seq<T: Scalar>(x: &[T], w: &[T], b: usize, i: usize, o: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), b * o);
    out.chunks_mut(o)
        .enumerate()
        .for_each(|(row, span)| matmul_row(x, w, i, o, row, span));
}

fn matmul_row<T: Scalar>(x: &[T], w: &[T], i: usize, o: usize, row: usize, span: &mut [T]) {
    let x_row = &x[row * i..(row + 1) * i];
    for (ii, &xv) in x_row.iter().enumerate() {
        let w_row = &w[ii * o..(ii + 1) * o];
        for (acc, &wv) in span.iter_mut().zip(w_row) {
            *acc = *acc + xv * wv;
        }
    }
}

/// `dx[b,i] = sum_o dy[b,o] * w[i,o]`
pub fn matmul_backward_x<T: Scalar>(dy: &[T], w: &[T], b: usize, i: usize, o: usize, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), b * i);
    for_each_span!(dx, i, |(row, span): (usize, &mut [T])| {
        let dy_row = &dy[row * o..(row + 1) * o];
        for (ii, acc) in span.iter_mut().enumerate() {
            let w_row = &w[ii * o..(ii + 1) * o];
            let mut s = T::zero();
            for (dv, wv) in dy_row.iter().zip(w_row) {
                s = s + *dv * *wv;
            }
            *acc = *acc + s;
        }
    });
}

/// `dw[i,o] = sum_b x[b,i] * dy[b,o]`
pub fn matmul_backward_w<T: Scalar>(x: &[T], dy: &[T], b: usize, i: usize, o: usize, dw: &mut [T]) {
    debug_assert_eq!(dw.len(), i * o);
    for_each_span!(dw, o, |(ii, span): (usize, &mut [T])| {
        for bb in 0..b {
            let xv = x[bb * i + ii];
            let dy_row = &dy[bb * o..(bb + 1) * o];
            for (acc, &dv) in span.iter_mut().zip(dy_row) {
                *acc = *acc + xv * dv;
            }
        }
    });
}

// ---------------------------------------------------------------- conv1d --

/// Geometry of a 1-D convolution along the time axis, channel-last.
#[derive(Debug, Clone, Copy)]
pub struct Conv1dDims {
    pub batch: usize,
    pub in_len: usize,
    pub in_c: usize,
    pub k: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

impl Conv1dDims {
    pub fn new(
        batch: usize,
        in_len: usize,
        in_c: usize,
        k: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(TensorError::InvalidConv {
                detail: format!("stride {stride} and kernel {k} must be positive"),
            });
        }
        let padded = in_len + 2 * pad;
        if padded < k {
            return Err(TensorError::InvalidConv {
                detail: format!("input length {in_len} with padding {pad} shorter than kernel {k}"),
            });
        }
        let out_len = (padded - k) / stride + 1;
        Ok(Self { batch, in_len, in_c, k, out_c, stride, pad, out_len })
    }
}

/// `x: [B,T,C] * w: [K,C,C'] -> out: [B,T',C']`
pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], d: Conv1dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_len * d.out_c);
    let span = d.out_len * d.out_c;
    for_each_span!(out, span, |(b, span): (usize, &mut [T])| {
        conv1d_batch(x, w, d, b, span)
    });
}

pub fn conv1d_forward_seq<T: Scalar>(x: &[T], w: &[T], d: Conv1dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_len * d.out_c);
    out.chunks_mut(d.out_len * d.out_c)
        .enumerate()
        .for_each(|(b, span)| conv1d_batch(x, w, d, b, span));
}

fn conv1d_batch<T: Scalar>(x: &[T], w: &[T], d: Conv1dDims, b: usize, span: &mut [T]) {
    for t_out in 0..d.out_len {
        let base = (t_out * d.stride) as isize - d.pad as isize;
        let acc = &mut span[t_out * d.out_c..(t_out + 1) * d.out_c];
        for k in 0..d.k {
            let t_in = base + k as isize;
            if t_in < 0 || t_in >= d.in_len as isize {
                continue;
            }
            let x_off = (b * d.in_len + t_in as usize) * d.in_c;
            let w_off = k * d.in_c * d.out_c;
            for c in 0..d.in_c {
                let xv = x[x_off + c];
                let w_row = &w[w_off + c * d.out_c..w_off + (c + 1) * d.out_c];
                for (a, &wv) in acc.iter_mut().zip(w_row) {
                    *a = *a + xv * wv;
                }
            }
        }
    }
}

/// Gathers `dx[b,t,c] = sum_{k,c'} dy[b,(t+p-k)/s,c'] * w[k,c,c']`.
pub fn conv1d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: Conv1dDims, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), d.batch * d.in_len * d.in_c);
    let span = d.in_len * d.in_c;
    for_each_span!(dx, span, |(b, span): (usize, &mut [T])| {
        for t_in in 0..d.in_len {
            let acc = &mut span[t_in * d.in_c..(t_in + 1) * d.in_c];
            for k in 0..d.k {
                let num = t_in as isize + d.pad as isize - k as isize;
                if num < 0 || num % d.stride as isize != 0 {
                    continue;
                }
                let t_out = (num / d.stride as isize) as usize;
                if t_out >= d.out_len {
                    continue;
                }
                let dy_row = &dy[(b * d.out_len + t_out) * d.out_c..][..d.out_c];
                let w_off = k * d.in_c * d.out_c;
                for (c, a) in acc.iter_mut().enumerate() {
                    let w_row = &w[w_off + c * d.out_c..][..d.out_c];
                    let mut s = T::zero();
                    for (dv, wv) in dy_row.iter().zip(w_row) {
                        s = s + *dv * *wv;
                    }
                    *a = *a + s;
                }
            }
        }
    });
}

/// Gathers `dw[k,c,c'] = sum_{b,t'} x[b,t'*s-p+k,c] * dy[b,t',c']`.
pub fn conv1d_backward_w<T: Scalar>(x: &[T], dy: &[T], d: Conv1dDims, dw: &mut [T]) {
    debug_assert_eq!(dw.len(), d.k * d.in_c * d.out_c);
    for_each_span!(dw, d.out_c, |(idx, span): (usize, &mut [T])| {
        let k = idx / d.in_c;
        let c = idx % d.in_c;
        for b in 0..d.batch {
            for t_out in 0..d.out_len {
                let t_in = (t_out * d.stride) as isize - d.pad as isize + k as isize;
                if t_in < 0 || t_in >= d.in_len as isize {
                    continue;
                }
                let xv = x[(b * d.in_len + t_in as usize) * d.in_c + c];
                let dy_row = &dy[(b * d.out_len + t_out) * d.out_c..][..d.out_c];
                for (a, &dv) in span.iter_mut().zip(dy_row) {
                    *a = *a + xv * dv;
                }
            }
        }
    });
}

// ---------------------------------------------------------------- conv2d --

/// Geometry of a 2-D convolution, channel-last. Also describes the matching
/// transposed convolution (where `in_*` is the small side).
#[derive(Debug, Clone, Copy)]
pub struct Conv2dDims {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dDims {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        batch: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        k_h: usize,
        k_w: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || k_h == 0 || k_w == 0 {
            return Err(TensorError::InvalidConv {
                detail: format!("stride {stride} and kernel {k_h}x{k_w} must be positive"),
            });
        }
        if in_h + 2 * pad < k_h || in_w + 2 * pad < k_w {
            return Err(TensorError::InvalidConv {
                detail: format!(
                    "input {in_h}x{in_w} with padding {pad} smaller than kernel {k_h}x{k_w}"
                ),
            });
        }
        let out_h = (in_h + 2 * pad - k_h) / stride + 1;
        let out_w = (in_w + 2 * pad - k_w) / stride + 1;
        Ok(Self { batch, in_h, in_w, in_c, k_h, k_w, out_c, stride, pad, out_h, out_w })
    }

    /// Transposed-convolution geometry: `out = (in-1)*stride - 2*pad + k`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transposed(
        batch: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        k_h: usize,
        k_w: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || k_h == 0 || k_w == 0 || in_h == 0 || in_w == 0 {
            return Err(TensorError::InvalidConv {
                detail: format!(
                    "stride {stride}, kernel {k_h}x{k_w} and input {in_h}x{in_w} must be positive"
                ),
            });
        }
        let full_h = (in_h - 1) * stride + k_h;
        let full_w = (in_w - 1) * stride + k_w;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(TensorError::InvalidConv {
                detail: format!("padding {pad} consumes entire transposed output"),
            });
        }
        let out_h = full_h - 2 * pad;
        let out_w = full_w - 2 * pad;
        Ok(Self { batch, in_h, in_w, in_c, k_h, k_w, out_c, stride, pad, out_h, out_w })
    }
}

/// `x: [B,H,W,C] * w: [KH,KW,C,C'] -> out: [B,H',W',C']`
pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_h * d.out_w * d.out_c);
    let span = d.out_w * d.out_c;
    for_each_span!(out, span, |(row, span): (usize, &mut [T])| {
        conv2d_row(x, w, d, row, span)
    });
}

pub fn conv2d_forward_seq<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_h * d.out_w * d.out_c);
    out.chunks_mut(d.out_w * d.out_c)
        .enumerate()
        .for_each(|(row, span)| conv2d_row(x, w, d, row, span));
}

fn conv2d_row<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, row: usize, span: &mut [T]) {
    let b = row / d.out_h;
    let h_out = row % d.out_h;
    let h_base = (h_out * d.stride) as isize - d.pad as isize;
    for w_out in 0..d.out_w {
        let w_base = (w_out * d.stride) as isize - d.pad as isize;
        let acc = &mut span[w_out * d.out_c..(w_out + 1) * d.out_c];
        for kh in 0..d.k_h {
            let h_in = h_base + kh as isize;
            if h_in < 0 || h_in >= d.in_h as isize {
                continue;
            }
            for kw in 0..d.k_w {
                let w_in = w_base + kw as isize;
                if w_in < 0 || w_in >= d.in_w as isize {
                    continue;
                }
                let x_off = ((b * d.in_h + h_in as usize) * d.in_w + w_in as usize) * d.in_c;
                let w_off = (kh * d.k_w + kw) * d.in_c * d.out_c;
                for c in 0..d.in_c {
                    let xv = x[x_off + c];
                    let w_row = &w[w_off + c * d.out_c..][..d.out_c];
                    for (a, &wv) in acc.iter_mut().zip(w_row) {
                        *a = *a + xv * wv;
                    }
                }
            }
        }
    }
}

/// Gathers `dx[b,h,w,c] = sum dy[b,(h+p-kh)/s,(w+p-kw)/s,c'] * w[kh,kw,c,c']`.
pub fn conv2d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: Conv2dDims, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), d.batch * d.in_h * d.in_w * d.in_c);
    let span = d.in_w * d.in_c;
    for_each_span!(dx, span, |(row, span): (usize, &mut [T])| {
        let b = row / d.in_h;
        let h_in = row % d.in_h;
        for w_in in 0..d.in_w {
            let acc = &mut span[w_in * d.in_c..(w_in + 1) * d.in_c];
            for kh in 0..d.k_h {
                let h_num = h_in as isize + d.pad as isize - kh as isize;
                if h_num < 0 || h_num % d.stride as isize != 0 {
                    continue;
                }
                let h_out = (h_num / d.stride as isize) as usize;
                if h_out >= d.out_h {
                    continue;
                }
                for kw in 0..d.k_w {
                    let w_num = w_in as isize + d.pad as isize - kw as isize;
                    if w_num < 0 || w_num % d.stride as isize != 0 {
                        continue;
                    }
                    let w_out = (w_num / d.stride as isize) as usize;
                    if w_out >= d.out_w {
                        continue;
                    }
                    let dy_row =
                        &dy[((b * d.out_h + h_out) * d.out_w + w_out) * d.out_c..][..d.out_c];
                    let w_off = (kh * d.k_w + kw) * d.in_c * d.out_c;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let w_row = &w[w_off + c * d.out_c..][..d.out_c];
                        let mut s = T::zero();
                        for (dv, wv) in dy_row.iter().zip(w_row) {
                            s = s + *dv * *wv;
                        }
                        *a = *a + s;
                    }
                }
            }
        }
    });
}

/// Gathers `dw[kh,kw,c,c'] = sum_{b,h',w'} x[..] * dy[..]`.
pub fn conv2d_backward_w<T: Scalar>(x: &[T], dy: &[T], d: Conv2dDims, dw: &mut [T]) {
    debug_assert_eq!(dw.len(), d.k_h * d.k_w * d.in_c * d.out_c);
    for_each_span!(dw, d.out_c, |(idx, span): (usize, &mut [T])| {
        let c = idx % d.in_c;
        let kw = (idx / d.in_c) % d.k_w;
        let kh = idx / (d.in_c * d.k_w);
        for b in 0..d.batch {
            for h_out in 0..d.out_h {
                let h_in = (h_out * d.stride) as isize - d.pad as isize + kh as isize;
                if h_in < 0 || h_in >= d.in_h as isize {
                    continue;
                }
                for w_out in 0..d.out_w {
                    let w_in = (w_out * d.stride) as isize - d.pad as isize + kw as isize;
                    if w_in < 0 || w_in >= d.in_w as isize {
                        continue;
                    }
                    let xv = x[((b * d.in_h + h_in as usize) * d.in_w + w_in as usize) * d.in_c + c];
                    let dy_row =
                        &dy[((b * d.out_h + h_out) * d.out_w + w_out) * d.out_c..][..d.out_c];
                    for (a, &dv) in span.iter_mut().zip(dy_row) {
                        *a = *a + xv * dv;
                    }
                }
            }
        }
    });
}

// --------------------------------------------------------------- convT2d --

/// `out[b,h,w,c'] = sum x[b,ho,wo,c] * w[kh,kw,c,c']` with `h = ho*s+kh-p`.
pub fn conv_transpose2d_forward<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_h * d.out_w * d.out_c);
    let span = d.out_w * d.out_c;
    for_each_span!(out, span, |(row, span): (usize, &mut [T])| {
        conv_transpose2d_row(x, w, d, row, span)
    });
}

pub fn conv_transpose2d_forward_seq<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, out: &mut [T]) {
    debug_assert_eq!(out.len(), d.batch * d.out_h * d.out_w * d.out_c);
    out.chunks_mut(d.out_w * d.out_c)
        .enumerate()
        .for_each(|(row, span)| conv_transpose2d_row(x, w, d, row, span));
}

fn conv_transpose2d_row<T: Scalar>(x: &[T], w: &[T], d: Conv2dDims, row: usize, span: &mut [T]) {
    let b = row / d.out_h;
    let h = row % d.out_h;
    for w_pos in 0..d.out_w {
        let acc = &mut span[w_pos * d.out_c..(w_pos + 1) * d.out_c];
        for kh in 0..d.k_h {
            let h_num = h as isize + d.pad as isize - kh as isize;
            if h_num < 0 || h_num % d.stride as isize != 0 {
                continue;
            }
            let ho = (h_num / d.stride as isize) as usize;
            if ho >= d.in_h {
                continue;
            }
            for kw in 0..d.k_w {
                let w_num = w_pos as isize + d.pad as isize - kw as isize;
                if w_num < 0 || w_num % d.stride as isize != 0 {
                    continue;
                }
                let wo = (w_num / d.stride as isize) as usize;
                if wo >= d.in_w {
                    continue;
                }
                let x_off = ((b * d.in_h + ho) * d.in_w + wo) * d.in_c;
                let w_off = (kh * d.k_w + kw) * d.in_c * d.out_c;
                for c in 0..d.in_c {
                    let xv = x[x_off + c];
                    let w_row = &w[w_off + c * d.out_c..][..d.out_c];
                    for (a, &wv) in acc.iter_mut().zip(w_row) {
                        *a = *a + xv * wv;
                    }
                }
            }
        }
    }
}

/// `dx[b,ho,wo,c] = sum_{kh,kw,c'} dy[b,ho*s+kh-p,wo*s+kw-p,c'] * w[kh,kw,c,c']`
pub fn conv_transpose2d_backward_x<T: Scalar>(dy: &[T], w: &[T], d: Conv2dDims, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), d.batch * d.in_h * d.in_w * d.in_c);
    let span = d.in_w * d.in_c;
    for_each_span!(dx, span, |(row, span): (usize, &mut [T])| {
        let b = row / d.in_h;
        let ho = row % d.in_h;
        for wo in 0..d.in_w {
            let acc = &mut span[wo * d.in_c..(wo + 1) * d.in_c];
            for kh in 0..d.k_h {
                let h = (ho * d.stride + kh) as isize - d.pad as isize;
                if h < 0 || h >= d.out_h as isize {
                    continue;
                }
                for kw in 0..d.k_w {
                    let w_pos = (wo * d.stride + kw) as isize - d.pad as isize;
                    if w_pos < 0 || w_pos >= d.out_w as isize {
                        continue;
                    }
                    let dy_row = &dy
                        [((b * d.out_h + h as usize) * d.out_w + w_pos as usize) * d.out_c..]
                        [..d.out_c];
                    let w_off = (kh * d.k_w + kw) * d.in_c * d.out_c;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let w_row = &w[w_off + c * d.out_c..][..d.out_c];
                        let mut s = T::zero();
                        for (dv, wv) in dy_row.iter().zip(w_row) {
                            s = s + *dv * *wv;
                        }
                        *a = *a + s;
                    }
                }
            }
        }
    });
}

/// `dw[kh,kw,c,c'] = sum_{b,ho,wo} x[b,ho,wo,c] * dy[b,ho*s+kh-p,wo*s+kw-p,c']`
pub fn conv_transpose2d_backward_w<T: Scalar>(x: &[T], dy: &[T], d: Conv2dDims, dw: &mut [T]) {
    debug_assert_eq!(dw.len(), d.k_h * d.k_w * d.in_c * d.out_c);
    for_each_span!(dw, d.out_c, |(idx, span): (usize, &mut [T])| {
        let c = idx % d.in_c;
        let kw = (idx / d.in_c) % d.k_w;
        let kh = idx / (d.in_c * d.k_w);
        for b in 0..d.batch {
            for ho in 0..d.in_h {
                let h = (ho * d.stride + kh) as isize - d.pad as isize;
                if h < 0 || h >= d.out_h as isize {
                    continue;
                }
                for wo in 0..d.in_w {
                    let w_pos = (wo * d.stride + kw) as isize - d.pad as isize;
                    if w_pos < 0 || w_pos >= d.out_w as isize {
                        continue;
                    }
                    let xv = x[((b * d.in_h + ho) * d.in_w + wo) * d.in_c + c];
                    let dy_row = &dy
                        [((b * d.out_h + h as usize) * d.out_w + w_pos as usize) * d.out_c..]
                        [..d.out_c];
                    for (a, &dv) in span.iter_mut().zip(dy_row) {
                        *a = *a + xv * dv;
                    }
                }
            }
        }
    });
}

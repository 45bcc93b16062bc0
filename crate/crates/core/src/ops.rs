//! Forward and backward kernels for the differentiable operations.
//!
//! These are plain functions over [`Tensor`]s; the recording of lineage lives
//! in [`crate::autograd`]. Shapes follow NCHW.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Output extent of a sliding window: `floor((size + 2*pad - kernel)/stride) + 1`.
pub fn window_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new<T: Real>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4().map_err(|_| {
            Error::Shape(format!(
                "conv2d weight must be (Cout,Cin,kh,kw), got {:?}",
                weight.shape()
            ))
        })?;
        if cin != wcin {
            return Err(Error::Shape(format!(
                "conv2d input {:?} has {} channels but weight {:?} expects {}",
                input.shape(),
                cin,
                weight.shape(),
                wcin
            )));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d needs kernel >= 1 and stride >= 1 (weight {:?}, stride {})",
                weight.shape(),
                stride
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "conv2d bias {:?} does not match weight {:?}",
                    b.shape(),
                    weight.shape()
                )));
            }
        }
        let ho = window_extent(h, kh, stride, pad);
        let wo = window_extent(w, kw, stride, pad);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(ConvGeom {
                n,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                stride,
                pad,
                ho,
                wo,
            }),
            _ => Err(Error::Shape(format!(
                "conv2d of input {:?} with weight {:?}, stride {}, padding {} has no valid output",
                input.shape(),
                weight.shape(),
                stride,
                pad
            ))),
        }
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let out = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *d = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            plane[ih as usize * g.w + iw as usize] =
                                plane[ih as usize * g.w + iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (N,Cin,H,W) with `weight` (Cout,Cin,kh,kw).
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weight, bias, stride, padding)?;
    let (k, p) = (g.k(), g.p());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..g.n {
        let x = &input.data()[n * in_per..(n + 1) * in_per];
        let y = &mut out[n * out_per..(n + 1) * out_per];
        let b: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        T::gemm(
            g.cout,
            k,
            p,
            T::one(),
            weight.data(),
            k as isize,
            1,
            b,
            p as isize,
            1,
            T::zero(),
            y,
            p as isize,
            1,
        );
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut y[co * p..(co + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    grad_out: &[T],
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(input, weight, None, stride, padding)?;
    let (k, p) = (g.k(), g.p());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); if has_bias { g.cout } else { 0 }];
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..g.n {
        let x = &input.data()[n * in_per..(n + 1) * in_per];
        let dy = &grad_out[n * out_per..(n + 1) * out_per];
        let b: &[T] = if pointwise {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        // dW += dY (Cout x P) * cols^T (P x K)
        T::gemm(
            g.cout,
            p,
            k,
            T::one(),
            dy,
            p as isize,
            1,
            b,
            1,
            p as isize,
            T::one(),
            &mut dw,
            k as isize,
            1,
        );
        // dcols = W^T (K x Cout) * dY (Cout x P)
        let dxn = &mut dx[n * in_per..(n + 1) * in_per];
        if pointwise {
            T::gemm(
                k,
                g.cout,
                p,
                T::one(),
                weight.data(),
                1,
                k as isize,
                dy,
                p as isize,
                1,
                T::one(),
                dxn,
                p as isize,
                1,
            );
        } else {
            T::gemm(
                k,
                g.cout,
                p,
                T::one(),
                weight.data(),
                1,
                k as isize,
                dy,
                p as isize,
                1,
                T::zero(),
                &mut dcols,
                p as isize,
                1,
            );
            col2im_add(&g, &dcols, dxn);
        }
        if has_bias {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc = *acc + dy[co * p..(co + 1) * p].iter().copied().sum::<T>();
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: if has_bias {
            Some(Tensor::new(vec![g.cout], db)?)
        } else {
            None
        },
    })
}

/// Max pooling. Returns the pooled tensor and, per output cell, the flat
/// index of the selected input cell. Ties go to the first cell in row-major
/// window order.
pub fn max_pool2d<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::Shape(format!(
            "max_pool2d needs window >= 1 and stride >= 1, got window {window}, stride {stride}"
        )));
    }
    if window > h || window > w {
        return Err(Error::Shape(format!(
            "max_pool2d window {window} exceeds spatial extent of input {:?}",
            input.shape()
        )));
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best_idx = base + oh * stride * w + ow * stride;
                let mut best = x[best_idx];
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oh * stride + i) * w + ow * stride + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

pub fn upsample_nearest<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if factor < 1 {
        return Err(Error::Shape("upsample factor must be >= 1".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oh in 0..ho {
            let row = &src[(oh / factor) * w..(oh / factor + 1) * w];
            for ow in 0..wo {
                out.push(row[ow / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn upsample_nearest_backward<T: Real>(
    input_shape: &[usize],
    factor: usize,
    grad_out: &[T],
) -> Vec<T> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let g = &grad_out[plane * ho * wo..(plane + 1) * ho * wo];
        let d = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let i = (oh / factor) * w + ow / factor;
                d[i] = d[i] + g[oh * wo + ow];
            }
        }
    }
    dx
}

/// Per-channel mean and population variance over (N,H,W).
pub fn channel_moments<T: Real>(input: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (n, c, h, w) = input.dims4()?;
    let count = n * h * w;
    if count == 0 {
        return Err(Error::Shape(format!(
            "batch norm needs N*H*W >= 1, got input {:?}",
            input.shape()
        )));
    }
    let x = input.data();
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for s_i in 0..n {
            let base = (s_i * c + ch) * h * w;
            s = s + x[base..base + h * w].iter().copied().sum::<T>();
        }
        let m = s * inv;
        let mut v = T::zero();
        for s_i in 0..n {
            let base = (s_i * c + ch) * h * w;
            for &xv in &x[base..base + h * w] {
                v = v + (xv - m) * (xv - m);
            }
        }
        mean[ch] = m;
        var[ch] = v * inv;
    }
    Ok((mean, var))
}

/// Normalises with the given moments and applies the affine transform.
/// Returns the output along with the normalised values and per-channel
/// inverse standard deviations needed for the backward pass.
pub fn batch_norm_apply<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] || mean.len() != c || var.len() != c {
        return Err(Error::Shape(format!(
            "batch norm parameters {:?}/{:?} do not match input {:?}",
            gamma.shape(),
            beta.shape(),
            input.shape()
        )));
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let (g, b, m, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in base..base + h * w {
                let xh = (x[i] - m) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), out)?, xhat, inv_std))
}

pub struct BatchNormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass of batch normalisation. With `batch_stats` the moments are
/// treated as functions of the input (train mode); otherwise as constants.
pub fn batch_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    grad_out: &[T],
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let m = T::from_usize(n * hw).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dgamma[ch] = dgamma[ch] + grad_out[i] * xhat[i];
                dbeta[ch] = dbeta[ch] + grad_out[i];
            }
        }
    }
    let mut dx = vec![T::zero(); grad_out.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let scale = gamma[ch] * inv_std[ch];
            for i in base..base + hw {
                dx[i] = if batch_stats {
                    scale * (grad_out[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                } else {
                    scale * grad_out[i]
                };
            }
        }
    }
    BatchNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat of an empty list".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat_channels: shape {:?} incompatible with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        total_c += tc;
    }
    let mut out = Vec::with_capacity(n * total_c * h * w);
    for s in 0..n {
        for t in inputs {
            let per = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[s * per..(s + 1) * per]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

/// `input (N,F) * weight^T (F,O) + bias (O)`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, f, o) = linear_dims(input, weight)?;
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::Shape(format!(
                "linear bias {:?} does not match weight {:?}",
                b.shape(),
                weight.shape()
            )));
        }
    }
    let mut out = vec![T::zero(); n * o];
    T::gemm(
        n,
        f,
        o,
        T::one(),
        input.data(),
        f as isize,
        1,
        weight.data(),
        1,
        f as isize,
        T::zero(),
        &mut out,
        o as isize,
        1,
    );
    if let Some(b) = bias {
        for row in out.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
    }
    Tensor::new(vec![n, o], out)
}

pub fn linear_dims<T: Real>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[n, f], &[o, wf]) if f == wf => Ok((n, f, o)),
        (a, b) => Err(Error::Shape(format!(
            "linear: input {a:?} incompatible with weight {b:?} (expected (N,F) and (O,F))"
        ))),
    }
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n, f, o) = linear_dims(input, weight)?;
    let mut dx = vec![T::zero(); n * f];
    let mut dw = vec![T::zero(); o * f];
    // dX = dY (N x O) * W (O x F)
    T::gemm(
        n,
        o,
        f,
        T::one(),
        grad_out,
        o as isize,
        1,
        weight.data(),
        f as isize,
        1,
        T::zero(),
        &mut dx,
        f as isize,
        1,
    );
    // dW = dY^T (O x N) * X (N x F)
    T::gemm(
        o,
        n,
        f,
        T::one(),
        grad_out,
        1,
        o as isize,
        input.data(),
        f as isize,
        1,
        T::zero(),
        &mut dw,
        f as isize,
        1,
    );
    let mut db = vec![T::zero(); o];
    for row in grad_out.chunks(o) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok((dx, dw, db))
}

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let inv = T::one() / T::from_usize(h * w).unwrap();
    let out = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as a reference.
    fn conv_reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, kh, kw) = w.dims4().unwrap();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for s in 0..n {
            for co in 0..cout {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let ih = (oh * stride + i) as isize - pad as isize;
                                    let iw = (ow * stride + j) as isize - pad as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        acc += x.at4(s, ci, ih as usize, iw as usize)
                                            * w.at4(co, ci, i, j);
                                    }
                                }
                            }
                        }
                        let idx = ((s * cout + co) * ho + oh) * wo + ow;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn conv_matches_reference_for_various_geometries() {
        for &(k, s, p) in &[(1, 1, 0), (3, 1, 1), (3, 2, 1), (7, 2, 3), (2, 3, 0), (1, 2, 1)] {
            let x = pseudo(&[2, 3, 9, 8], 1 + k as u64);
            let w = pseudo(&[4, 3, k, k], 7 + s as u64);
            let got = conv2d(&x, &w, None, s, p).unwrap();
            let want = conv_reference(&x, &w, s, p);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn conv_stem_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 256, 256]);
        let w = Tensor::<f32>::zeros(&[64, 3, 7, 7]);
        let y = conv2d(&x, &w, None, 2, 3).unwrap();
        assert_eq!(y.shape(), &[1, 64, 128, 128]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![5.0f64]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0f64]).unwrap();
        assert_eq!(conv2d(&x, &w, None, 1, 0).unwrap().data(), &[5.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_rejects_empty_output() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::<f64>::full(&[1, 2, 4, 4], 0.7);
        let (y, arg) = max_pool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        // ties resolve to the first cell of each window
        assert_eq!(&arg[..4], &[0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_rejects_oversized_window() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(max_pool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
        assert!(upsample_nearest(&x, 0).is_err());
        let g = upsample_nearest_backward(x.shape(), 2, &[1.0f64; 16]);
        assert_eq!(g, vec![4.0; 4]);
    }

    #[test]
    fn batch_norm_population_variance() {
        let x = Tensor::new(vec![2, 1, 1, 1], vec![1.0f64, 3.0]).unwrap();
        let (m, v) = channel_moments(&x).unwrap();
        assert_eq!((m[0], v[0]), (2.0, 1.0));
        let g = Tensor::full(&[1], 1.0);
        let b = Tensor::full(&[1], 0.0);
        let (y, _, _) = batch_norm_apply(&x, &g, &b, &m, &v, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_constant_channel_is_beta() {
        let x = Tensor::<f64>::full(&[2, 1, 2, 2], 3.0);
        let (m, v) = channel_moments(&x).unwrap();
        let g = Tensor::full(&[1], 2.0);
        let b = Tensor::full(&[1], 0.5);
        let (y, _, _) = batch_norm_apply(&x, &g, &b, &m, &v, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn linear_hand_example() {
        let x = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![3.0f64, 4.0]).unwrap();
        let b = Tensor::new(vec![1], vec![5.0f64]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[16.0]);
        let eye = Tensor::new(vec![2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let z = Tensor::zeros(&[2]);
        assert_eq!(linear(&x, &eye, Some(&z)).unwrap(), x);
        assert!(linear(&x, &Tensor::<f64>::zeros(&[2, 3]), None).is_err());
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape(), &[1, 5, 4, 4]);
        let c = Tensor::<f32>::zeros(&[1, 3, 2, 4]);
        assert!(concat_channels(&[&a, &c]).is_err());
    }
}

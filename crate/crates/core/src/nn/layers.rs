use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Computational layer kinds used by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Cross-correlation, weight `[out, in, k, k]`, bias `[out]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// `y = x W^T + b`, weight `[out, in]`, bias `[out]`, input `[n, in]`.
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
            padding: 1,
        }
    }

    pub fn conv1x1(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    /// Parameter shapes `(weight, bias)`, if the layer has any.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Linear { in_features, .. } => in_features,
            _ => 0,
        }
    }

    /// Output spatial extent for an input extent, for conv and pool layers.
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => (extent + 2 * padding)
                .checked_sub(kernel)
                .map(|v| v / stride + 1),
            LayerSpec::MaxPool { kernel, stride } => {
                extent.checked_sub(kernel).map(|v| v / stride + 1)
            }
            _ => Some(extent),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training,
}

/// State retained by a training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Empty,
    Conv {
        input_shape: Vec<usize>,
        /// One im2col matrix per batch item.
        cols: Vec<Vec<f32>>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    Relu {
        output: Tensor,
    },
    Linear {
        input: Tensor,
    },
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Option<LayerParams>,
}

fn require_params<'a>(
    spec: &LayerSpec,
    params: Option<&'a LayerParams>,
) -> Result<&'a LayerParams> {
    let (ws, bs) = spec
        .param_shapes()
        .ok_or_else(|| Error::Usage(format!("{spec:?} has no parameters")))?;
    let p = params.ok_or_else(|| Error::Usage(format!("{spec:?} needs parameters")))?;
    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
        return Err(Error::Shape(format!(
            "{spec:?} expects weight {ws:?} / bias {bs:?}, got {:?} / {:?}",
            p.weight.shape(),
            p.bias.shape()
        )));
    }
    Ok(p)
}

pub fn forward(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (out, cache) = match *spec {
        LayerSpec::Conv2d { .. } => conv_forward(spec, require_params(spec, params)?, input, mode)?,
        LayerSpec::MaxPool { kernel, stride } => maxpool_forward(kernel, stride, input, mode)?,
        LayerSpec::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
            let cache = match mode {
                Mode::Training => Cache::Relu {
                    output: out.clone(),
                },
                Mode::Inference => Cache::Empty,
            };
            (out, cache)
        }
        LayerSpec::Linear { .. } => {
            linear_forward(spec, require_params(spec, params)?, input, mode)?
        }
    };
    out.debug_check_finite("forward");
    Ok((out, cache))
}

pub fn backward(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    cache: &Cache,
    upstream: &Tensor,
) -> Result<Gradients> {
    if matches!(cache, Cache::Empty) {
        return Err(Error::Usage(format!(
            "backward through {spec:?} without a training-mode forward cache"
        )));
    }
    let grads = match (spec, cache) {
        (LayerSpec::Conv2d { .. }, Cache::Conv { input_shape, cols }) => {
            let (input, params) = conv_backward(
                spec,
                require_params(spec, params)?,
                input_shape,
                cols,
                upstream,
                true,
            )?;
            Gradients {
                input: Tensor::new(input_shape.to_vec(), input.expect("requested"))?,
                params: Some(params),
            }
        }
        (
            LayerSpec::MaxPool { .. },
            Cache::MaxPool {
                input_shape,
                argmax,
            },
        ) => {
            expect_len(upstream, argmax.len())?;
            let mut grad = Tensor::zeros(input_shape);
            let g = grad.data_mut();
            for (&src, &u) in argmax.iter().zip(upstream.data()) {
                g[src as usize] += u;
            }
            Gradients {
                input: grad,
                params: None,
            }
        }
        (LayerSpec::Relu, Cache::Relu { output }) => {
            expect_len(upstream, output.len())?;
            let mut grad = upstream.clone();
            for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                *g = if y > 0.0 { *g } else { 0.0 };
            }
            Gradients {
                input: grad,
                params: None,
            }
        }
        (LayerSpec::Linear { .. }, Cache::Linear { input }) => {
            linear_backward(require_params(spec, params)?, input, upstream)?
        }
        _ => {
            return Err(Error::Usage(format!(
                "cache kind does not belong to {spec:?}"
            )))
        }
    };
    grads.input.debug_check_finite("backward");
    Ok(grads)
}

/// Parameter gradients only; skips the input gradient where that saves work
/// (the first layer of a network never needs it).
pub fn param_backward(
    spec: &LayerSpec,
    params: Option<&LayerParams>,
    cache: &Cache,
    upstream: &Tensor,
) -> Result<Option<LayerParams>> {
    match (spec, cache) {
        (LayerSpec::Conv2d { .. }, Cache::Conv { input_shape, cols }) => {
            let (_, p) = conv_backward(
                spec,
                require_params(spec, params)?,
                input_shape,
                cols,
                upstream,
                false,
            )?;
            Ok(Some(p))
        }
        _ => Ok(backward(spec, params, cache, upstream)?.params),
    }
}

fn expect_len(t: &Tensor, n: usize) -> Result<()> {
    if t.len() != n {
        return Err(Error::Shape(format!(
            "upstream gradient has {} values, expected {n}",
            t.len()
        )));
    }
    Ok(())
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_geom(spec: &LayerSpec, input_shape: &[usize]) -> Result<(usize, usize, ConvGeom)> {
    let LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel,
        stride,
        padding,
    } = *spec
    else {
        unreachable!()
    };
    let [n, c, h, w] = *input_shape else {
        return Err(Error::Shape(format!(
            "conv input must be rank 4, got {input_shape:?}"
        )));
    };
    if c != in_channels {
        return Err(Error::Shape(format!(
            "conv expects {in_channels} input channels, got {c}"
        )));
    }
    let (Some(oh), Some(ow)) = (spec.output_extent(h), spec.output_extent(w)) else {
        return Err(Error::Shape(format!(
            "input {h}x{w} smaller than kernel {kernel}"
        )));
    };
    Ok((
        n,
        out_channels,
        ConvGeom {
            c,
            h,
            w,
            k: kernel,
            stride,
            pad: padding,
            oh,
            ow,
        },
    ))
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad`
/// falls inside `0..w`.
fn valid_range(out: usize, stride: usize, offset: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).div_ceil(stride);
    let hi = if w + pad > offset {
        (w + pad - offset - 1) / stride + 1
    } else {
        0
    };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

/// Appends `n` elements of `src` taken every `stride` values.
fn extend_strided(dst: &mut Vec<f32>, src: &[f32], n: usize, stride: usize) {
    match stride {
        1 => dst.extend_from_slice(&src[..n]),
        2 => {
            let pairs = &src[..2 * (n - 1)];
            dst.extend(pairs.chunks_exact(2).map(|c| c[0]));
            dst.push(src[2 * (n - 1)]);
        }
        _ => dst.extend((0..n).map(|i| src[i * stride])),
    }
}

fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let ncols = g.cols();
    let mut cols = Vec::with_capacity(g.rows() * ncols);
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = valid_range(g.oh, g.stride, ki, g.pad, g.h);
            for kj in 0..g.k {
                let (xlo, xhi) = valid_range(g.ow, g.stride, kj, g.pad, g.w);
                cols.resize(cols.len() + ylo * g.ow, 0.0);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    cols.resize(cols.len() + xlo, 0.0);
                    if xhi > xlo {
                        extend_strided(
                            &mut cols,
                            &src[xlo * g.stride + kj - g.pad..],
                            xhi - xlo,
                            g.stride,
                        );
                    }
                    cols.resize(cols.len() + g.ow - xhi, 0.0);
                }
                cols.resize(cols.len() + (g.oh - yhi) * g.ow, 0.0);
            }
        }
    }
    debug_assert_eq!(cols.len(), g.rows() * ncols);
    cols
}

fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = valid_range(g.oh, g.stride, ki, g.pad, g.h);
            for kj in 0..g.k {
                let (xlo, xhi) = valid_range(g.ow, g.stride, kj, g.pad, g.w);
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.ow + xlo..oy * g.ow + xhi];
                    let start = xlo * g.stride + kj - g.pad;
                    let n = srow.len();
                    if n == 0 {
                        continue;
                    }
                    let dst = &mut dst[start..start + (n - 1) * g.stride + 1];
                    match g.stride {
                        1 => {
                            for (d, s) in dst.iter_mut().zip(srow) {
                                *d += *s;
                            }
                        }
                        2 => {
                            for (d, s) in dst[..2 * (n - 1)].chunks_exact_mut(2).zip(&srow[..n - 1])
                            {
                                d[0] += *s;
                            }
                            dst[2 * (n - 1)] += srow[n - 1];
                        }
                        _ => {
                            for (i, s) in srow.iter().enumerate() {
                                dst[i * g.stride] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * op(a) * op(b) + beta * c` on row-major buffers with
/// explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index touched is inside the slices given the strides
    // computed by the callers, which are checked by the debug assertions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(
    spec: &LayerSpec,
    p: &LayerParams,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (n, oc, g) = conv_geom(spec, input.shape())?;
    let in_plane = g.c * g.h * g.w;
    let out_plane = oc * g.cols();
    let (rows, ncols) = (g.rows(), g.cols());
    let mut out = Vec::with_capacity(n * out_plane);
    for _ in 0..n {
        for &b in p.bias.data() {
            out.resize(out.len() + ncols, b);
        }
    }
    let mut cached = Vec::new();
    for b in 0..n {
        let x = &input.data()[b * in_plane..(b + 1) * in_plane];
        let y = &mut out[b * out_plane..(b + 1) * out_plane];
        let one_by_one = g.k == 1 && g.stride == 1 && g.pad == 0;
        if one_by_one {
            gemm(
                oc,
                rows,
                ncols,
                p.weight.data(),
                (rows, 1),
                x,
                (ncols, 1),
                1.0,
                y,
            );
            if mode == Mode::Training {
                cached.push(x.to_vec());
            }
        } else {
            let cols = im2col(x, &g);
            gemm(
                oc,
                rows,
                ncols,
                p.weight.data(),
                (rows, 1),
                &cols,
                (ncols, 1),
                1.0,
                y,
            );
            if mode == Mode::Training {
                cached.push(cols);
            }
        }
    }
    let cache = match mode {
        Mode::Training => Cache::Conv {
            input_shape: input.shape().to_vec(),
            cols: cached,
        },
        Mode::Inference => Cache::Empty,
    };
    Ok((Tensor::new(vec![n, oc, g.oh, g.ow], out)?, cache))
}

fn conv_backward(
    spec: &LayerSpec,
    p: &LayerParams,
    input_shape: &[usize],
    cols: &[Vec<f32>],
    upstream: &Tensor,
    want_input: bool,
) -> Result<(Option<Vec<f32>>, LayerParams)> {
    let (n, oc, g) = conv_geom(spec, input_shape)?;
    let (rows, ncols) = (g.rows(), g.cols());
    if upstream.shape() != [n, oc, g.oh, g.ow] {
        return Err(Error::Shape(format!(
            "conv upstream {:?} vs output [{n}, {oc}, {}, {}]",
            upstream.shape(),
            g.oh,
            g.ow
        )));
    }
    if cols.len() != n {
        return Err(Error::Usage("conv cache does not match the batch".into()));
    }
    let in_plane = g.c * g.h * g.w;
    let mut grad_in = if want_input {
        vec![0.0f32; n * in_plane]
    } else {
        Vec::new()
    };
    let mut grad_w = vec![0.0f32; oc * rows];
    let mut grad_b = vec![0.0f32; oc];
    let one_by_one = g.k == 1 && g.stride == 1 && g.pad == 0;
    let mut dcols = if want_input && !one_by_one {
        vec![0.0f32; rows * ncols]
    } else {
        Vec::new()
    };
    for b in 0..n {
        let dy = &upstream.data()[b * oc * ncols..(b + 1) * oc * ncols];
        let col = &cols[b];
        for (o, chunk) in dy.chunks(ncols).enumerate() {
            grad_b[o] += chunk.iter().sum::<f32>();
        }
        // dW += dY * cols^T
        gemm(
            oc,
            ncols,
            rows,
            dy,
            (ncols, 1),
            col,
            (1, ncols),
            1.0,
            &mut grad_w,
        );
        if !want_input {
            continue;
        }
        let gi = &mut grad_in[b * in_plane..(b + 1) * in_plane];
        if one_by_one {
            // dX = W^T * dY directly in input layout
            gemm(
                rows,
                oc,
                ncols,
                p.weight.data(),
                (1, rows),
                dy,
                (ncols, 1),
                0.0,
                gi,
            );
        } else {
            gemm(
                rows,
                oc,
                ncols,
                p.weight.data(),
                (1, rows),
                dy,
                (ncols, 1),
                0.0,
                &mut dcols,
            );
            col2im(&dcols, &g, gi);
        }
    }
    Ok((
        want_input.then_some(grad_in),
        LayerParams {
            weight: Tensor::new(p.weight.shape().to_vec(), grad_w)?,
            bias: Tensor::new(vec![oc], grad_b)?,
        },
    ))
}

fn maxpool_forward(
    kernel: usize,
    stride: usize,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (n, c, h, w) = input.dims4()?;
    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
        return Err(Error::Shape(format!(
            "max pool kernel {kernel} stride {stride} on {h}x{w}"
        )));
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(if mode == Mode::Training {
        out.capacity()
    } else {
        0
    });
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = base;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..kernel {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                if mode == Mode::Training {
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    let cache = match mode {
        Mode::Training => Cache::MaxPool {
            input_shape: input.shape().to_vec(),
            argmax,
        },
        Mode::Inference => Cache::Empty,
    };
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, cache))
}

fn linear_forward(
    spec: &LayerSpec,
    p: &LayerParams,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let LayerSpec::Linear {
        in_features,
        out_features,
    } = *spec
    else {
        unreachable!()
    };
    let (n, d) = input.dims2()?;
    if d != in_features {
        return Err(Error::Shape(format!(
            "linear expects {in_features} features, got {d}"
        )));
    }
    let mut out = Vec::with_capacity(n * out_features);
    for _ in 0..n {
        out.extend_from_slice(p.bias.data());
    }
    gemm(
        n,
        d,
        out_features,
        input.data(),
        (d, 1),
        p.weight.data(),
        (1, d),
        1.0,
        &mut out,
    );
    let cache = match mode {
        Mode::Training => Cache::Linear {
            input: input.clone(),
        },
        Mode::Inference => Cache::Empty,
    };
    Ok((Tensor::new(vec![n, out_features], out)?, cache))
}

fn linear_backward(p: &LayerParams, input: &Tensor, upstream: &Tensor) -> Result<Gradients> {
    let (n, d) = input.dims2()?;
    let out_features = p.weight.shape()[0];
    if upstream.shape() != [n, out_features] {
        return Err(Error::Shape(format!(
            "linear upstream {:?} vs [{n}, {out_features}]",
            upstream.shape()
        )));
    }
    let dy = upstream.data();
    let mut grad_in = vec![0.0f32; n * d];
    gemm(
        n,
        out_features,
        d,
        dy,
        (out_features, 1),
        p.weight.data(),
        (d, 1),
        0.0,
        &mut grad_in,
    );
    let mut grad_w = vec![0.0f32; out_features * d];
    gemm(
        out_features,
        n,
        d,
        dy,
        (1, out_features),
        input.data(),
        (d, 1),
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0f32; out_features];
    for row in dy.chunks(out_features) {
        for (g, v) in grad_b.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(Gradients {
        input: Tensor::new(vec![n, d], grad_in)?,
        params: Some(LayerParams {
            weight: Tensor::new(vec![out_features, d], grad_w)?,
            bias: Tensor::new(vec![out_features], grad_b)?,
        }),
    })
}

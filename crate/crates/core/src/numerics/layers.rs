//! The differentiable layers of the surface-regression network.
//!
//! Every forward op is a pure function of its inputs. Backward ops return
//! the gradient with respect to the layer input and accumulate parameter
//! gradients into the owned [`LayerParams`] buffers.

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::tensor::{gemm, MatRef, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
    Fc,
    Relu,
    Loss,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Pool => 1,
            LayerKind::Fc => 2,
            LayerKind::Relu => 3,
            LayerKind::Loss => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Conv,
            1 => LayerKind::Pool,
            2 => LayerKind::Fc,
            3 => LayerKind::Relu,
            4 => LayerKind::Loss,
            _ => return None,
        })
    }
}

/// Shape hyperparameters. `out` is the output channel count for conv and
/// the neuron count for fc; `kernel_*`/`stride` describe the pooling window
/// for pool layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Hyper {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub hyper: Hyper,
}

impl<T: Scalar> LayerParams<T> {
    fn with_params(kind: LayerKind, wshape: &[usize], bshape: &[usize], hyper: Hyper) -> Self {
        Self {
            kind,
            weights: Tensor::zeros(wshape),
            bias: Tensor::zeros(bshape),
            grad_weights: Tensor::zeros(wshape),
            grad_bias: Tensor::zeros(bshape),
            hyper,
        }
    }

    fn without_params(kind: LayerKind, hyper: Hyper) -> Self {
        Self {
            kind,
            weights: Tensor::empty(),
            bias: Tensor::empty(),
            grad_weights: Tensor::empty(),
            grad_bias: Tensor::empty(),
            hyper,
        }
    }

    /// Zero-initialized convolution with `out_channels` kernels of size
    /// `kh x kw` over `in_channels`.
    pub fn conv(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> Self {
        Self::with_params(
            LayerKind::Conv,
            &[out_channels, in_channels, kh, kw],
            &[out_channels],
            Hyper {
                kernel_h: kh,
                kernel_w: kw,
                stride: 1,
                out: out_channels,
            },
        )
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        Self::with_params(
            LayerKind::Fc,
            &[outputs, inputs],
            &[outputs],
            Hyper {
                kernel_h: 0,
                kernel_w: 0,
                stride: 0,
                out: outputs,
            },
        )
    }

    pub fn pool(size: usize, stride: usize) -> Self {
        Self::without_params(
            LayerKind::Pool,
            Hyper {
                kernel_h: size,
                kernel_w: size,
                stride,
                out: 0,
            },
        )
    }

    pub fn relu() -> Self {
        Self::without_params(LayerKind::Relu, Hyper::default())
    }

    pub fn loss() -> Self {
        Self::without_params(LayerKind::Loss, Hyper::default())
    }

    pub fn has_params(&self) -> bool {
        !self.weights.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    /// Fan-in/fan-out scaled uniform init, `U(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`; biases zero.
    pub fn init_uniform(&mut self, rng: &mut RngState) {
        let (fan_in, fan_out) = match self.kind {
            LayerKind::Conv => {
                let s = self.weights.shape();
                (s[1] * s[2] * s[3], s[0] * s[2] * s[3])
            }
            LayerKind::Fc => {
                let s = self.weights.shape();
                (s[1], s[0])
            }
            _ => return,
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in self.weights.data_mut() {
            *w = T::from_f64_lossy(rng.uniform(-a, a));
        }
        self.bias.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            weights: self.weights.cast(),
            bias: self.bias.cast(),
            grad_weights: self.grad_weights.cast(),
            grad_bias: self.grad_bias.cast(),
            hyper: self.hyper,
        }
    }
}

fn expect_kind<T>(params: &LayerParams<T>, kind: LayerKind) -> Result<()> {
    if params.kind != kind {
        return Err(Error::Shape(format!(
            "expected {kind:?} layer, got {:?}",
            params.kind
        )));
    }
    Ok(())
}

fn chw(input: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape(format!("expected [C,H,W] input, got {s:?}"))),
    }
}

/// Unfolds `input` (C x H x W) into a `(C*kh*kw) x (H*W)` matrix of
/// zero-padded "same" neighbourhoods.
fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<T> {
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    let mut cols = vec![T::zero(); c * kh * kw * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &mut cols[((ch * kh + dy) * kw + dx) * hw..][..hw];
                let x_lo = pl.saturating_sub(dx);
                let x_hi = (w + pl).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < pt || sy - pt >= h {
                        continue;
                    }
                    let src = &plane[(sy - pt) * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let sx0 = x_lo + dx - pl;
                    dst[x_lo..x_hi].copy_from_slice(&src[sx0..sx0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, out: &mut [T]) {
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    for ch in 0..c {
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &cols[((ch * kh + dy) * kw + dx) * hw..][..hw];
                let x_lo = pl.saturating_sub(dx);
                let x_hi = (w + pl).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < pt || sy - pt >= h {
                        continue;
                    }
                    let dst = &mut out[ch * hw + (sy - pt) * w..][..w];
                    let src = &row[y * w..][..w];
                    let sx0 = x_lo + dx - pl;
                    for (d, s) in dst[sx0..sx0 + (x_hi - x_lo)].iter_mut().zip(&src[x_lo..x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize, usize, usize, usize, usize)> {
    expect_kind(params, LayerKind::Conv)?;
    let (c, h, w) = chw(input)?;
    let ws = params.weights.shape();
    let (k, kc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kc != c {
        return Err(Error::Shape(format!(
            "conv input has {c} channels, kernel expects {kc}"
        )));
    }
    if kh == 0 || kw == 0 {
        return Err(Error::Shape("empty convolution kernel".into()));
    }
    Ok((c, h, w, k, kh, kw))
}

/// Stride-1 cross-correlation with "same" zero padding: `[C,H,W] -> [K,H,W]`.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (c, h, w, k, kh, kw) = conv_dims(input, params)?;
    let hw = h * w;
    let cols = im2col(input.data(), c, h, w, kh, kw);
    let mut out = vec![T::zero(); k * hw];
    for (kk, b) in params.bias.data().iter().enumerate() {
        out[kk * hw..(kk + 1) * hw].fill(*b);
    }
    gemm(
        MatRef::new(params.weights.data(), k, c * kh * kw),
        MatRef::new(&cols, c * kh * kw, hw),
        &mut out,
        true,
    );
    Tensor::from_vec(&[k, h, w], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w, k, kh, kw) = conv_dims(input, params)?;
    if grad_out.shape() != [k, h, w] {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} does not match output [{k}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let hw = h * w;
    let ckk = c * kh * kw;
    let cols = im2col(input.data(), c, h, w, kh, kw);
    let g = grad_out.data();

    gemm(
        MatRef::new(g, k, hw),
        MatRef::transposed(&cols, hw, ckk),
        params.grad_weights.data_mut(),
        true,
    );
    for (kk, gb) in params.grad_bias.data_mut().iter_mut().enumerate() {
        *gb += g[kk * hw..(kk + 1) * hw].iter().copied().sum::<T>();
    }

    let mut grad_cols = vec![T::zero(); ckk * hw];
    gemm(
        MatRef::transposed(params.weights.data(), ckk, k),
        MatRef::new(g, k, hw),
        &mut grad_cols,
        false,
    );
    let mut grad_in = vec![T::zero(); c * hw];
    col2im(&grad_cols, c, h, w, kh, kw, &mut grad_in);
    Tensor::from_vec(&[c, h, w], grad_in)
}

/// Output extent of a pooling axis; the last window shrinks rather than
/// dropping the trailing edge.
pub fn pooled_len(len: usize, size: usize, stride: usize) -> usize {
    if len <= size {
        1
    } else {
        (len - size).div_ceil(stride) + 1
    }
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input index of the winning element (ties go to the smallest index).
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = chw(input)?;
    if h == 0 || w == 0 || size == 0 || stride == 0 {
        return Err(Error::Shape(format!(
            "cannot pool {:?} with size {size}, stride {stride}",
            input.shape()
        )));
    }
    let (oh, ow) = (pooled_len(h, size, stride), pooled_len(w, size, stride));
    let data = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let (y0, y1) = (oy * stride, (oy * stride + size).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * stride, (ox * stride + size).min(w));
                let mut best_idx = base + y0 * w + x0;
                let mut best = data[best_idx];
                // Row-major scan visits indices in increasing order, so a
                // strict comparison keeps the smallest index on ties.
                for y in y0..y1 {
                    for x in x0..x1 {
                        let idx = base + y * w + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "pool grad has {} elements but {} argmax entries",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        if idx >= gi.len() {
            return Err(Error::Shape(format!("argmax index {idx} out of range")));
        }
        gi[idx] += *g;
    }
    Ok(grad_in)
}

fn fc_dims<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<(usize, usize)> {
    expect_kind(params, LayerKind::Fc)?;
    let ws = params.weights.shape();
    let (m, d) = (ws[0], ws[1]);
    if input.len() != d {
        return Err(Error::Shape(format!(
            "fc expects {d} inputs, got {}",
            input.len()
        )));
    }
    Ok((m, d))
}

/// `out = W * flatten(input) + b`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let (m, d) = fc_dims(input, params)?;
    let mut out = params.bias.data().to_vec();
    gemm(
        MatRef::new(params.weights.data(), m, d),
        MatRef::new(input.data(), d, 1),
        &mut out,
        true,
    );
    Tensor::from_vec(&[m], out)
}

/// Returns the gradient with respect to `input`, in the input's shape.
pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, d) = fc_dims(input, params)?;
    if grad_out.len() != m {
        return Err(Error::Shape(format!(
            "fc grad_out has {} elements, expected {m}",
            grad_out.len()
        )));
    }
    let g = grad_out.data();
    gemm(
        MatRef::new(g, m, 1),
        MatRef::new(input.data(), 1, d),
        params.grad_weights.data_mut(),
        true,
    );
    params.grad_bias.add_assign(&Tensor::from_vec(&[m], g.to_vec())?);
    let mut grad_in = vec![T::zero(); d];
    gemm(
        MatRef::transposed(params.weights.data(), d, m),
        MatRef::new(g, m, 1),
        &mut grad_in,
        false,
    );
    Tensor::from_vec(input.shape(), grad_in)
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu grad {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

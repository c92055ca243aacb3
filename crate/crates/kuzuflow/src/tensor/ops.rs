//! Forward and backward passes for every layer kind used by the models.
//!
//! All functions are pure: identical inputs (including explicit PRNG state)
//! produce identical outputs bit-for-bit. Convolutions go through a per-sample
//! im2col buffer and a single-threaded GEMM; batches are processed in fixed
//! chunks (see [`crate::parallel`]) so weight-gradient reductions have a fixed
//! summation order at any thread count.

use super::{sgemm, Tensor};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::Rng;

/// Gradients produced by one layer's backward pass.
///
/// `d_params` pairs each parameter name with a gradient tensor of the same
/// shape; parameter-free layers leave it empty.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_params: Vec<(String, Tensor)>,
}

impl LayerGrads {
    fn input_only(d_input: Tensor) -> Self {
        LayerGrads {
            d_input,
            d_params: Vec::new(),
        }
    }
}

/// Execution phase; dropout is the only phase-sensitive layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvDims {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k_h: usize,
    k_w: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_dims(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    if input.rank() != 4 {
        return Err(Error::dimension(
            "conv2d",
            format!("input must be NCHW rank 4, got shape {:?}", input.shape()),
        ));
    }
    if kernel.rank() != 4 {
        return Err(Error::dimension(
            "conv2d",
            format!("kernel must be OIHW rank 4, got shape {:?}", kernel.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::config("conv2d stride must be positive"));
    }
    let (batch, in_c, in_h, in_w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let (out_c, k_in_c, k_h, k_w) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
    if in_c != k_in_c {
        return Err(Error::dimension(
            "conv2d",
            format!("input channel axis ({in_c}) != kernel input-channel axis ({k_in_c})"),
        ));
    }
    if let Some(b) = bias {
        if b.rank() != 1 || b.dim(0) != out_c {
            return Err(Error::dimension(
                "conv2d",
                format!(
                    "bias shape {:?} does not match output channels ({out_c})",
                    b.shape()
                ),
            ));
        }
    }
    if in_h + 2 * padding < k_h || in_w + 2 * padding < k_w {
        return Err(Error::dimension(
            "conv2d",
            format!(
                "padded spatial extents ({}x{}) smaller than kernel ({k_h}x{k_w})",
                in_h + 2 * padding,
                in_w + 2 * padding
            ),
        ));
    }
    Ok(ConvDims {
        batch,
        in_c,
        in_h,
        in_w,
        out_c,
        k_h,
        k_w,
        out_h: (in_h + 2 * padding - k_h) / stride + 1,
        out_w: (in_w + 2 * padding - k_w) / stride + 1,
    })
}

/// Unrolls one padded sample into a `[in_c*k_h*k_w, out_h*out_w]` matrix.
/// Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    sample: &[f32],
    d: &ConvDims,
    stride: usize,
    padding: usize,
    cols: &mut [f32],
) {
    let spatial = d.out_h * d.out_w;
    debug_assert_eq!(cols.len(), d.in_c * d.k_h * d.k_w * spatial);
    let mut row = 0;
    for c in 0..d.in_c {
        let chan = &sample[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for kh in 0..d.k_h {
            for kw in 0..d.k_w {
                let out_row = &mut cols[row * spatial..(row + 1) * spatial];
                for oh in 0..d.out_h {
                    let y = (oh * stride + kh) as isize - padding as isize;
                    let dst = &mut out_row[oh * d.out_w..(oh + 1) * d.out_w];
                    if y < 0 || y >= d.in_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &chan[y as usize * d.in_w..(y as usize + 1) * d.in_w];
                    for (ow, v) in dst.iter_mut().enumerate() {
                        let x = (ow * stride + kw) as isize - padding as isize;
                        *v = if x < 0 || x >= d.in_w as isize {
                            0.0
                        } else {
                            src[x as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a `[in_c*k_h*k_w, out_h*out_w]` gradient matrix back onto one
/// input sample; the adjoint of [`im2col`].
fn col2im(cols: &[f32], d: &ConvDims, stride: usize, padding: usize, sample: &mut [f32]) {
    let spatial = d.out_h * d.out_w;
    let mut row = 0;
    for c in 0..d.in_c {
        let chan = &mut sample[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
        for kh in 0..d.k_h {
            for kw in 0..d.k_w {
                let src_row = &cols[row * spatial..(row + 1) * spatial];
                for oh in 0..d.out_h {
                    let y = (oh * stride + kh) as isize - padding as isize;
                    if y < 0 || y >= d.in_h as isize {
                        continue;
                    }
                    let dst = &mut chan[y as usize * d.in_w..(y as usize + 1) * d.in_w];
                    for ow in 0..d.out_w {
                        let x = (ow * stride + kw) as isize - padding as isize;
                        if x >= 0 && x < d.in_w as isize {
                            dst[x as usize] += src_row[oh * d.out_w + ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D convolution over an NCHW batch with an OIHW kernel.
///
/// Output spatial extents are `floor((H + 2*padding - KH)/stride) + 1` per
/// axis.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, kernel, Some(bias), stride, padding)?;
    let spatial = d.out_h * d.out_w;
    let k_rows = d.in_c * d.k_h * d.k_w;
    let in_stride = d.in_c * d.in_h * d.in_w;
    let out_stride = d.out_c * spatial;

    let chunks = parallel::map_chunks(d.batch, |_, range| {
        let mut cols = vec![0.0f32; k_rows * spatial];
        let mut out = vec![0.0f32; range.len() * out_stride];
        for (local, n) in range.clone().enumerate() {
            let sample = &input.data()[n * in_stride..(n + 1) * in_stride];
            im2col(sample, &d, stride, padding, &mut cols);
            let dst = &mut out[local * out_stride..(local + 1) * out_stride];
            sgemm(
                false,
                false,
                d.out_c,
                k_rows,
                spatial,
                1.0,
                kernel.data(),
                &cols,
                0.0,
                dst,
            );
            for (o, b) in bias.data().iter().enumerate() {
                for v in &mut dst[o * spatial..(o + 1) * spatial] {
                    *v += b;
                }
            }
        }
        out
    });

    let mut data = Vec::with_capacity(d.batch * out_stride);
    for chunk in chunks {
        data.extend_from_slice(&chunk);
    }
    Tensor::new(vec![d.batch, d.out_c, d.out_h, d.out_w], data)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernel and bias, given the
/// upstream gradient on the output.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    let d = conv_dims(input, kernel, None, stride, padding)?;
    let spatial = d.out_h * d.out_w;
    if upstream.shape() != [d.batch, d.out_c, d.out_h, d.out_w] {
        return Err(Error::dimension(
            "conv2d backward",
            format!(
                "upstream shape {:?} does not match output {:?}",
                upstream.shape(),
                [d.batch, d.out_c, d.out_h, d.out_w]
            ),
        ));
    }
    let k_rows = d.in_c * d.k_h * d.k_w;
    let in_stride = d.in_c * d.in_h * d.in_w;
    let out_stride = d.out_c * spatial;

    struct Partial {
        d_input: Vec<f32>,
        d_kernel: Vec<f32>,
        d_bias: Vec<f32>,
    }

    let chunks = parallel::map_chunks(d.batch, |_, range| {
        let mut cols = vec![0.0f32; k_rows * spatial];
        let mut d_cols = vec![0.0f32; k_rows * spatial];
        let mut part = Partial {
            d_input: vec![0.0f32; range.len() * in_stride],
            d_kernel: vec![0.0f32; kernel.len()],
            d_bias: vec![0.0f32; d.out_c],
        };
        for (local, n) in range.clone().enumerate() {
            let sample = &input.data()[n * in_stride..(n + 1) * in_stride];
            let g = &upstream.data()[n * out_stride..(n + 1) * out_stride];
            im2col(sample, &d, stride, padding, &mut cols);
            // d_kernel += g [O, OHW] @ cols^T [OHW, IKK]
            sgemm(
                false,
                true,
                d.out_c,
                spatial,
                k_rows,
                1.0,
                g,
                &cols,
                1.0,
                &mut part.d_kernel,
            );
            // d_cols = kernel^T [IKK, O] @ g [O, OHW]
            sgemm(
                true,
                false,
                k_rows,
                d.out_c,
                spatial,
                1.0,
                kernel.data(),
                g,
                0.0,
                &mut d_cols,
            );
            col2im(
                &d_cols,
                &d,
                stride,
                padding,
                &mut part.d_input[local * in_stride..(local + 1) * in_stride],
            );
            for o in 0..d.out_c {
                let mut s = 0.0f32;
                for v in &g[o * spatial..(o + 1) * spatial] {
                    s += v;
                }
                part.d_bias[o] += s;
            }
        }
        part
    });

    let mut d_input = Vec::with_capacity(d.batch * in_stride);
    let mut d_kernel = vec![0.0f32; kernel.len()];
    let mut d_bias = vec![0.0f32; d.out_c];
    for part in chunks {
        d_input.extend_from_slice(&part.d_input);
        for (a, b) in d_kernel.iter_mut().zip(&part.d_kernel) {
            *a += b;
        }
        for (a, b) in d_bias.iter_mut().zip(&part.d_bias) {
            *a += b;
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::new(input.shape().to_vec(), d_input)?,
        d_params: vec![
            ("kernel".to_string(), Tensor::new(kernel.shape().to_vec(), d_kernel)?),
            ("bias".to_string(), Tensor::new(vec![d.out_c], d_bias)?),
        ],
    })
}

// ---------------------------------------------------------------------------
// avgpool2d
// ---------------------------------------------------------------------------

fn pool_dims(input: &Tensor, window: usize, stride: usize) -> Result<(usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::dimension(
            "avgpool2d",
            format!("input must be NCHW rank 4, got shape {:?}", input.shape()),
        ));
    }
    if window == 0 || stride == 0 {
        return Err(Error::config("avgpool2d window and stride must be positive"));
    }
    let (h, w) = (input.dim(2), input.dim(3));
    if h < window || w < window {
        return Err(Error::dimension(
            "avgpool2d",
            format!("window {window} larger than spatial extents {h}x{w}"),
        ));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Average pooling: each output cell is the arithmetic mean of its window.
pub fn avgpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (out_h, out_w) = pool_dims(input, window, stride)?;
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let inv = 1.0 / (window * window) as f32;
    let mut data = vec![0.0f32; n * c * out_h * out_w];
    let mut di = 0;
    for img in 0..n * c {
        let plane = &input.data()[img * h * w..(img + 1) * h * w];
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut s = 0.0f32;
                for ky in 0..window {
                    let row = (oh * stride + ky) * w + ow * stride;
                    for v in &plane[row..row + window] {
                        s += v;
                    }
                }
                data[di] = s * inv;
                di += 1;
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], data)
}

/// Backward of average pooling: the upstream gradient is spread uniformly,
/// `1/window^2` per contributing cell (windows may overlap).
pub fn avgpool2d_backward(
    input: &Tensor,
    window: usize,
    stride: usize,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    let (out_h, out_w) = pool_dims(input, window, stride)?;
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if upstream.shape() != [n, c, out_h, out_w] {
        return Err(Error::dimension(
            "avgpool2d backward",
            format!(
                "upstream shape {:?} does not match output {:?}",
                upstream.shape(),
                [n, c, out_h, out_w]
            ),
        ));
    }
    let inv = 1.0 / (window * window) as f32;
    let mut d_input = vec![0.0f32; input.len()];
    let mut gi = 0;
    for img in 0..n * c {
        let plane = &mut d_input[img * h * w..(img + 1) * h * w];
        for oh in 0..out_h {
            for ow in 0..out_w {
                let g = upstream.data()[gi] * inv;
                gi += 1;
                for ky in 0..window {
                    let row = (oh * stride + ky) * w + ow * stride;
                    for v in &mut plane[row..row + window] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(LayerGrads::input_only(Tensor::new(
        input.shape().to_vec(),
        d_input,
    )?))
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

fn dense_dims(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(Error::dimension(
            "dense",
            format!(
                "expected rank-2 input and weights, got {:?} and {:?}",
                input.shape(),
                weights.shape()
            ),
        ));
    }
    let (n, d) = (input.dim(0), input.dim(1));
    let (wd, c) = (weights.dim(0), weights.dim(1));
    if d != wd {
        return Err(Error::dimension(
            "dense",
            format!("input feature axis ({d}) != weight input axis ({wd})"),
        ));
    }
    if let Some(b) = bias {
        if b.rank() != 1 || b.dim(0) != c {
            return Err(Error::dimension(
                "dense",
                format!("bias shape {:?} does not match outputs ({c})", b.shape()),
            ));
        }
    }
    Ok((n, d, c))
}

/// Fully connected layer: `input[N,D] @ weights[D,C] + bias`, bias broadcast
/// per row.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, c) = dense_dims(input, weights, Some(bias))?;
    let mut data = vec![0.0f32; n * c];
    sgemm(
        false,
        false,
        n,
        d,
        c,
        1.0,
        input.data(),
        weights.data(),
        0.0,
        &mut data,
    );
    for row in data.chunks_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(vec![n, c], data)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let (n, d, c) = dense_dims(input, weights, None)?;
    if upstream.shape() != [n, c] {
        return Err(Error::dimension(
            "dense backward",
            format!(
                "upstream shape {:?} does not match output [{n}, {c}]",
                upstream.shape()
            ),
        ));
    }
    let mut d_input = vec![0.0f32; n * d];
    sgemm(
        false,
        true,
        n,
        c,
        d,
        1.0,
        upstream.data(),
        weights.data(),
        0.0,
        &mut d_input,
    );
    let mut d_weights = vec![0.0f32; d * c];
    sgemm(
        true,
        false,
        d,
        n,
        c,
        1.0,
        input.data(),
        upstream.data(),
        0.0,
        &mut d_weights,
    );
    let mut d_bias = vec![0.0f32; c];
    for row in upstream.data().chunks(c) {
        for (b, g) in d_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::new(vec![n, d], d_input)?,
        d_params: vec![
            ("weights".to_string(), Tensor::new(vec![d, c], d_weights)?),
            ("bias".to_string(), Tensor::new(vec![c], d_bias)?),
        ],
    })
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

/// Subgradient convention: the gradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    if input.shape() != upstream.shape() {
        return Err(Error::dimension(
            "relu backward",
            format!(
                "upstream shape {:?} does not match input {:?}",
                upstream.shape(),
                input.shape()
            ),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(LayerGrads::input_only(Tensor {
        shape: input.shape().to_vec(),
        data,
    }))
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Per-element keep factors recorded by a dropout forward pass: `0` for a
/// dropped element, `1/(1-p)` for a kept one. `None` means the pass was the
/// identity (eval phase or p = 0).
#[derive(Debug, Clone)]
pub struct DropoutMask {
    factors: Option<Vec<f32>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask { factors: None }
    }

    pub fn from_factors(factors: Vec<f32>) -> Self {
        DropoutMask {
            factors: Some(factors),
        }
    }

    pub fn factors(&self) -> Option<&[f32]> {
        self.factors.as_deref()
    }
}

/// Inverted dropout: in the train phase each element is zeroed independently
/// with probability `p` and survivors are scaled by `1/(1-p)`; the eval phase
/// is the identity.
pub fn dropout_forward(
    input: &Tensor,
    p: f32,
    phase: Phase,
    rng: &mut Rng,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if phase == Phase::Eval || p == 0.0 {
        return Ok((input.clone(), DropoutMask::identity()));
    }
    let scale = 1.0 / (1.0 - p);
    let factors: Vec<f32> = (0..input.len())
        .map(|_| if rng.bernoulli(p) { 0.0 } else { scale })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&factors)
        .map(|(&x, &f)| x * f)
        .collect();
    Ok((
        Tensor {
            shape: input.shape().to_vec(),
            data,
        },
        DropoutMask::from_factors(factors),
    ))
}

pub fn dropout_backward(mask: &DropoutMask, upstream: &Tensor) -> LayerGrads {
    let data = match mask.factors() {
        None => upstream.data().to_vec(),
        Some(f) => upstream.data().iter().zip(f).map(|(&g, &m)| g * m).collect(),
    };
    LayerGrads::input_only(Tensor {
        shape: upstream.shape().to_vec(),
        data,
    })
}

// ---------------------------------------------------------------------------
// flatten
// ---------------------------------------------------------------------------

/// Row-major reshape of `[N,C,H,W]` to `[N, C*H*W]`.
pub fn flatten_forward(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::dimension(
            "flatten",
            format!("expected rank-4 input, got shape {:?}", input.shape()),
        ));
    }
    let n = input.dim(0);
    let rest: usize = input.shape()[1..].iter().product();
    input.clone().reshape(vec![n, rest])
}

/// Inverse reshape back to the original rank-4 shape.
pub fn flatten_backward(input_shape: &[usize], upstream: &Tensor) -> Result<LayerGrads> {
    let expected: usize = input_shape.iter().product();
    if upstream.len() != expected {
        return Err(Error::dimension(
            "flatten backward",
            format!(
                "upstream has {} elements but original shape {:?} holds {expected}",
                upstream.len(),
                input_shape
            ),
        ));
    }
    Ok(LayerGrads::input_only(
        upstream.clone().reshape(input_shape.to_vec())?,
    ))
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

/// Row-wise softmax, stabilized by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::dimension(
            "softmax",
            format!("expected rank-2 logits, got shape {:?}", logits.shape()),
        ));
    }
    let c = logits.dim(1);
    let mut data = logits.data().to_vec();
    for row in data.chunks_mut(c) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Tensor::new(logits.shape().to_vec(), data)
}

/// Mean cross-entropy over a batch of logit rows with integer class labels.
///
/// Returns `(loss, d_logits, probs)` where `loss` is the mean of
/// `-ln p_true`, `d_logits = (probs - onehot)/N`, and `probs` rows sum to 1.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f32, Tensor, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            format!("expected rank-2 logits, got shape {:?}", logits.shape()),
        ));
    }
    let (n, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            format!("{} labels for {n} logit rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index {
            op: "softmax_cross_entropy",
            detail: format!("label {bad} out of range for {c} classes"),
        });
    }
    let probs = softmax(logits)?;
    let inv_n = 1.0 / n as f32;
    let mut loss_acc = 0.0f64;
    let mut d = probs.data().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let log_sum: f32 = row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
        loss_acc += f64::from(log_sum - (row[label] - max));
        d[i * c + label] -= 1.0;
    }
    for v in &mut d {
        *v *= inv_n;
    }
    Ok((
        (loss_acc / n as f64) as f32,
        Tensor::new(vec![n, c], d)?,
        probs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let input = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let kernel = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_zero_kernel_outputs_bias() {
        let input = t(&[1, 2, 3, 3], &[0.5; 18]);
        let kernel = Tensor::zeros(vec![3, 2, 2, 2]);
        let bias = t(&[3], &[1.0, -2.0, 0.25]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        for o in 0..3 {
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(out.at4(0, o, h, w), bias.data()[o]);
                }
            }
        }
    }

    #[test]
    fn conv_sliding_window_example() {
        // Hand-derived by direct sliding-window summation.
        let input = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let kernel = t(&[1, 1, 2, 2], &[1.0; 4]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(vec![1, 3, 5, 5]);
        let kernel = Tensor::zeros(vec![4, 2, 3, 3]);
        let bias = Tensor::zeros(vec![4]);
        let err = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(3)") && msg.contains("(2)"), "{msg}");
    }

    #[test]
    fn conv_rejects_kernel_larger_than_padded_input() {
        let input = Tensor::zeros(vec![1, 1, 2, 2]);
        let kernel = Tensor::zeros(vec![1, 1, 5, 5]);
        let bias = Tensor::zeros(vec![1]);
        assert!(conv2d_forward(&input, &kernel, &bias, 1, 1).is_err());
    }

    #[test]
    fn conv_same_padding_keeps_extent() {
        let input = Tensor::filled(vec![2, 1, 7, 7], 0.3);
        let kernel = Tensor::filled(vec![4, 1, 3, 3], 0.1);
        let bias = Tensor::zeros(vec![4]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 7, 7]);
    }

    #[test]
    fn avgpool_constant_input() {
        let input = Tensor::filled(vec![1, 1, 4, 4], 3.25);
        let out = avgpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn avgpool_mean_and_backward() {
        let input = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let out = avgpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
        let up = t(&[1, 1, 1, 1], &[1.0]);
        let g = avgpool2d_backward(&input, 2, 2, &up).unwrap();
        assert_eq!(g.d_input.data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn avgpool_window_too_large_errors() {
        let input = Tensor::zeros(vec![1, 1, 3, 3]);
        assert!(avgpool2d_forward(&input, 4, 1).is_err());
    }

    #[test]
    fn dense_identity_and_bias() {
        let input = t(&[2, 2], &[1., 2., 3., 4.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let zero_bias = Tensor::zeros(vec![2]);
        assert_eq!(
            dense_forward(&input, &eye, &zero_bias).unwrap().data(),
            input.data()
        );
        let zero_w = Tensor::zeros(vec![2, 2]);
        let bias = t(&[2], &[5.0, -1.0]);
        let out = dense_forward(&input, &zero_w, &bias).unwrap();
        assert_eq!(out.data(), &[5.0, -1.0, 5.0, -1.0]);
    }

    #[test]
    fn dense_hand_matrix_multiply() {
        // [1,2] @ (3*I) + [1,1] = [4,7]
        let input = t(&[1, 2], &[1., 2.]);
        let w = t(&[2, 2], &[3., 0., 0., 3.]);
        let bias = t(&[2], &[1., 1.]);
        let out = dense_forward(&input, &w, &bias).unwrap();
        assert_eq!(out.data(), &[4.0, 7.0]);
    }

    #[test]
    fn relu_examples() {
        let input = t(&[1, 3], &[-1., 0., 2.]);
        assert_eq!(relu_forward(&input).data(), &[0., 0., 2.]);
        let up = t(&[1, 3], &[10., 10., 10.]);
        let g = relu_backward(&input, &up).unwrap();
        assert_eq!(g.d_input.data(), &[0., 0., 10.]);
    }

    #[test]
    fn dropout_identity_cases() {
        let input = t(&[1, 4], &[1., 2., 3., 4.]);
        let mut rng = Rng::new(1);
        let (out, mask) = dropout_forward(&input, 0.0, Phase::Train, &mut rng).unwrap();
        assert_eq!(out, input);
        assert!(mask.factors().is_none());
        let (out, _) = dropout_forward(&input, 0.9, Phase::Eval, &mut rng).unwrap();
        assert_eq!(out, input);
        assert!(dropout_forward(&input, 1.0, Phase::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo_expectation() {
        // Mean over many independent masks approximates the input (inverted
        // dropout is unbiased).
        let input = t(&[1, 8], &[1., -2., 3., 4., -5., 6., 7., 8.]);
        let mut rng = Rng::new(99);
        let mut acc = vec![0.0f64; 8];
        let trials = 100_000;
        for _ in 0..trials {
            let (out, _) = dropout_forward(&input, 0.5, Phase::Train, &mut rng).unwrap();
            for (a, &v) in acc.iter_mut().zip(out.data()) {
                *a += f64::from(v);
            }
        }
        for (a, &x) in acc.iter().zip(input.data()) {
            let mean = a / trials as f64;
            assert!(
                (mean - f64::from(x)).abs() < 0.01 * f64::from(x.abs()).max(1.0),
                "mean {mean} vs {x}"
            );
        }
    }

    #[test]
    fn flatten_round_trip() {
        let input = t(&[2, 1, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let flat = flatten_forward(&input).unwrap();
        assert_eq!(flat.shape(), &[2, 4]);
        assert_eq!(flat.data(), input.data());
        let back = flatten_backward(input.shape(), &flat).unwrap();
        assert_eq!(back.d_input, input);
    }

    #[test]
    fn flatten_single_pixel_channels() {
        let input = t(&[1, 3, 1, 1], &[1., 2., 3.]);
        let flat = flatten_forward(&input).unwrap();
        assert_eq!(flat.shape(), &[1, 3]);
    }

    #[test]
    fn softmax_uniform_loss_is_ln_c() {
        let logits = Tensor::zeros(vec![4, 10]);
        let (loss, _, probs) = softmax_cross_entropy(&logits, &[0, 3, 5, 9]).unwrap();
        assert!((loss - 10.0f32.ln()).abs() < 1e-6, "loss {loss}");
        for row in probs.data().chunks(10) {
            for &p in row {
                assert!((p - 0.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_saturated_loss_is_tiny() {
        let mut logits = Tensor::zeros(vec![1, 5]);
        logits.data_mut()[2] = 50.0;
        let (loss, _, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn softmax_stable_at_large_magnitude() {
        let logits = t(&[2, 3], &[1e4, -1e4, 0.0, -1e4, -1e4, 1e4]);
        let probs = softmax(&logits).unwrap();
        for row in probs.data().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn softmax_label_out_of_range() {
        let logits = Tensor::zeros(vec![1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
    }

    #[test]
    fn ops_are_bit_deterministic() {
        let input = t(
            &[1, 2, 4, 4],
            &(0..32).map(|v| (v as f32) * 0.37 - 3.0).collect::<Vec<_>>(),
        );
        let kernel = t(
            &[3, 2, 3, 3],
            &(0..54).map(|v| (v as f32) * 0.11 - 1.5).collect::<Vec<_>>(),
        );
        let bias = t(&[3], &[0.1, -0.2, 0.3]);
        let a = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap();
        let b = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

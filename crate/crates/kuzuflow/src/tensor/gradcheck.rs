//! Finite-difference gradient verification.
//!
//! The oracle here is deliberately independent of the production kernels: it
//! re-implements every layer forward as plain nested loops in `f64` and
//! differentiates that reference numerically with central differences. The
//! analytic `f32` backward passes from [`super::ops`] are then compared
//! against it coordinate by coordinate.

use super::{ops, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A layer configuration under gradient test. Parameters are borrowed so the
/// caller controls their values.
pub enum LayerUnderTest<'a> {
    Conv {
        kernel: &'a Tensor,
        bias: &'a Tensor,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    Dense {
        weights: &'a Tensor,
        bias: &'a Tensor,
    },
    Relu,
    /// Dropout with a frozen factor mask (0 or 1/(1-p) per element), making
    /// the layer deterministic for the check.
    DropoutFrozen {
        factors: &'a [f32],
    },
    Flatten,
}

struct Arr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Arr {
    fn from_tensor(t: &Tensor) -> Arr {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Reference forward pass in f64: naive loops, no im2col, no GEMM.
fn ref_forward(layer: &LayerUnderTest<'_>, input: &Arr, params: &[Arr]) -> Vec<f64> {
    match layer {
        LayerUnderTest::Conv {
            stride, padding, ..
        } => {
            let kernel = &params[0];
            let bias = &params[1];
            let (n, in_c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
            let (out_c, k_h, k_w) = (kernel.shape[0], kernel.shape[2], kernel.shape[3]);
            let out_h = (h + 2 * padding - k_h) / stride + 1;
            let out_w = (w + 2 * padding - k_w) / stride + 1;
            let mut out = vec![0.0f64; n * out_c * out_h * out_w];
            let mut oi = 0;
            for b in 0..n {
                for o in 0..out_c {
                    for oh in 0..out_h {
                        for ow in 0..out_w {
                            let mut acc = bias.data[o];
                            for c in 0..in_c {
                                for ky in 0..k_h {
                                    for kx in 0..k_w {
                                        let y = (oh * stride + ky) as isize - *padding as isize;
                                        let x = (ow * stride + kx) as isize - *padding as isize;
                                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                            continue;
                                        }
                                        let iv = input.data
                                            [((b * in_c + c) * h + y as usize) * w + x as usize];
                                        let kv =
                                            kernel.data[((o * in_c + c) * k_h + ky) * k_w + kx];
                                        acc += iv * kv;
                                    }
                                }
                            }
                            out[oi] = acc;
                            oi += 1;
                        }
                    }
                }
            }
            out
        }
        LayerUnderTest::AvgPool { window, stride } => {
            let (n, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
            let out_h = (h - window) / stride + 1;
            let out_w = (w - window) / stride + 1;
            let inv = 1.0 / (*window * *window) as f64;
            let mut out = Vec::with_capacity(n * c * out_h * out_w);
            for img in 0..n * c {
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let mut s = 0.0;
                        for ky in 0..*window {
                            for kx in 0..*window {
                                s += input.data
                                    [img * h * w + (oh * stride + ky) * w + ow * stride + kx];
                            }
                        }
                        out.push(s * inv);
                    }
                }
            }
            out
        }
        LayerUnderTest::Dense { .. } => {
            let weights = &params[0];
            let bias = &params[1];
            let (n, d) = (input.shape[0], input.shape[1]);
            let c = weights.shape[1];
            let mut out = vec![0.0f64; n * c];
            for i in 0..n {
                for j in 0..c {
                    let mut acc = bias.data[j];
                    for l in 0..d {
                        acc += input.data[i * d + l] * weights.data[l * c + j];
                    }
                    out[i * c + j] = acc;
                }
            }
            out
        }
        LayerUnderTest::Relu => input.data.iter().map(|&v| v.max(0.0)).collect(),
        LayerUnderTest::DropoutFrozen { factors } => input
            .data
            .iter()
            .zip(factors.iter())
            .map(|(&v, &f)| v * f64::from(f))
            .collect(),
        LayerUnderTest::Flatten => input.data.clone(),
    }
}

fn analytic_grads(
    layer: &LayerUnderTest<'_>,
    input: &Tensor,
    upstream: &Tensor,
) -> Result<ops::LayerGrads> {
    match layer {
        LayerUnderTest::Conv {
            kernel,
            stride,
            padding,
            ..
        } => ops::conv2d_backward(input, kernel, *stride, *padding, upstream),
        LayerUnderTest::AvgPool { window, stride } => {
            ops::avgpool2d_backward(input, *window, *stride, upstream)
        }
        LayerUnderTest::Dense { weights, .. } => ops::dense_backward(input, weights, upstream),
        LayerUnderTest::Relu => ops::relu_backward(input, upstream),
        LayerUnderTest::DropoutFrozen { factors } => Ok(ops::dropout_backward(
            &ops::DropoutMask::from_factors(factors.to_vec()),
            upstream,
        )),
        LayerUnderTest::Flatten => ops::flatten_backward(input.shape(), upstream),
    }
}

fn forward_f32(layer: &LayerUnderTest<'_>, input: &Tensor) -> Result<Tensor> {
    match layer {
        LayerUnderTest::Conv {
            kernel,
            bias,
            stride,
            padding,
        } => ops::conv2d_forward(input, kernel, bias, *stride, *padding),
        LayerUnderTest::AvgPool { window, stride } => {
            ops::avgpool2d_forward(input, *window, *stride)
        }
        LayerUnderTest::Dense { weights, bias } => ops::dense_forward(input, weights, bias),
        LayerUnderTest::Relu => Ok(ops::relu_forward(input)),
        LayerUnderTest::DropoutFrozen { factors } => {
            let data = input
                .data()
                .iter()
                .zip(factors.iter())
                .map(|(&v, &f)| v * f)
                .collect();
            Tensor::new(input.shape().to_vec(), data)
        }
        LayerUnderTest::Flatten => ops::flatten_forward(input),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn differentiable_params<'a>(layer: &'a LayerUnderTest<'a>) -> Vec<&'a Tensor> {
    match layer {
        LayerUnderTest::Conv { kernel, bias, .. } => vec![kernel, bias],
        LayerUnderTest::Dense { weights, bias } => vec![weights, bias],
        _ => Vec::new(),
    }
}

/// Maximum relative disagreement between the production f32 forward and the
/// naive f64 reference, over all output coordinates.
pub fn forward_ref_error(layer: &LayerUnderTest<'_>, input: &Tensor) -> Result<f64> {
    let got = forward_f32(layer, input)?;
    let params: Vec<Arr> = differentiable_params(layer)
        .iter()
        .map(|t| Arr::from_tensor(t))
        .collect();
    let want = ref_forward(layer, &Arr::from_tensor(input), &params);
    Ok(got
        .data()
        .iter()
        .zip(&want)
        .map(|(&g, &w)| rel_err(f64::from(g), w))
        .fold(0.0, f64::max))
}

/// Central finite-difference check of a layer's analytic gradients.
///
/// A fixed random projection turns the layer output into a scalar
/// `L = sum(output * r)`; the analytic gradient of `L` (f32 backward with
/// upstream `r`) is compared against `(L(x+eps) - L(x-eps)) / (2*eps)`
/// evaluated on the f64 reference forward, for every coordinate of the input
/// and of each parameter. Returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check(
    layer: &LayerUnderTest<'_>,
    input: &Tensor,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::config("finite-difference epsilon must be positive"));
    }
    let params32 = differentiable_params(layer);
    let params: Vec<Arr> = params32.iter().map(|t| Arr::from_tensor(t)).collect();
    let mut input_arr = Arr::from_tensor(input);

    let out_len = ref_forward(layer, &input_arr, &params).len();
    let mut proj_rng = Rng::new(0xC0FF_EE);
    let r: Vec<f64> = (0..out_len)
        .map(|_| f64::from(proj_rng.uniform(-1.0, 1.0)))
        .collect();
    let r32: Vec<f32> = r.iter().map(|&v| v as f32).collect();

    let out32 = forward_f32(layer, input)?;
    let upstream = Tensor::new(out32.shape().to_vec(), r32)?;
    let grads = analytic_grads(layer, input, &upstream)?;

    let scalar = |args: (&Arr, &[Arr])| -> f64 {
        ref_forward(layer, args.0, args.1)
            .iter()
            .zip(&r)
            .map(|(o, w)| o * w)
            .sum()
    };

    let mut max_err = 0.0f64;

    // Input coordinates.
    for i in 0..input_arr.data.len() {
        let orig = input_arr.data[i];
        input_arr.data[i] = orig + epsilon;
        let plus = scalar((&input_arr, &params));
        input_arr.data[i] = orig - epsilon;
        let minus = scalar((&input_arr, &params));
        input_arr.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = f64::from(grads.d_input.data()[i]);
        max_err = max_err.max(rel_err(analytic, numeric));
    }

    // Parameter coordinates.
    let mut params = params;
    for (pi, grad) in grads.d_params.iter().enumerate() {
        for i in 0..params[pi].data.len() {
            let orig = params[pi].data[i];
            params[pi].data[i] = orig + epsilon;
            let plus = scalar((&input_arr, &params));
            params[pi].data[i] = orig - epsilon;
            let minus = scalar((&input_arr, &params));
            params[pi].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = f64::from(grad.1.data()[i]);
            max_err = max_err.max(rel_err(analytic, numeric));
        }
    }
    Ok(max_err)
}

/// Finite-difference check of `softmax_cross_entropy`'s `d_logits` against
/// the f64 reference loss. Returns the maximum relative error.
pub fn cross_entropy_grad_check(logits: &Tensor, labels: &[usize], epsilon: f64) -> Result<f64> {
    let (_, d_logits, _) = ops::softmax_cross_entropy(logits, labels)?;
    let mut z: Vec<f64> = logits.data().iter().map(|&v| f64::from(v)).collect();
    let (n, c) = (logits.dim(0), logits.dim(1));
    let loss = |z: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            acc += log_sum - (row[label] - max);
        }
        acc / n as f64
    };
    let mut max_err = 0.0f64;
    for i in 0..z.len() {
        let orig = z[i];
        z[i] = orig + epsilon;
        let plus = loss(&z);
        z[i] = orig - epsilon;
        let minus = loss(&z);
        z[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        max_err = max_err.max(rel_err(f64::from(d_logits.data()[i]), numeric));
    }
    Ok(max_err)
}

//! Layer kinds and their forward/backward kernels.
//!
//! All kernels run in a fixed single-threaded order so results are
//! bit-identical across runs. Input tensors carry an explicit batch
//! dimension: `[n, ...]`.

use crate::tensor::Tensor;

/// A single network layer. Convolution and dense layers own their
/// parameters; the rest are stateless.
#[derive(Debug, Clone)]
pub enum Layer {
    /// 2-D convolution, no padding. Weights `[out_ch, in_ch, k, k]`, bias `[out_ch]`.
    Conv2d {
        weights: Tensor,
        bias: Tensor,
        stride: usize,
    },
    Relu,
    /// Non-overlapping max pooling with a square `window` (stride == window).
    MaxPool2d { window: usize },
    Flatten,
    /// Fully connected layer. Weights `[in_dim, out_dim]`, bias `[out_dim]`.
    Dense { weights: Tensor, bias: Tensor },
}

/// Parameter gradients for one layer, shaped like the layer's own tensors.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "Conv2D",
            Layer::Relu => "ReLU",
            Layer::MaxPool2d { .. } => "MaxPool2D",
            Layer::Flatten => "Flatten",
            Layer::Dense { .. } => "Dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias } => {
                weights.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Shape the layer expects per batched input, or `None` if `input` does
    /// not compose with this layer.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match self {
            Layer::Conv2d {
                weights, stride, ..
            } => {
                let [n, c, h, w] = *four_dims(input)?;
                let (oc, ic, k) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
                if c != ic || h < k || w < k {
                    return None;
                }
                let oh = (h - k) / stride + 1;
                let ow = (w - k) / stride + 1;
                Some(vec![n, oc, oh, ow])
            }
            Layer::Relu => Some(input.to_vec()),
            Layer::MaxPool2d { window } => {
                let [n, c, h, w] = *four_dims(input)?;
                if h < *window || w < *window {
                    return None;
                }
                Some(vec![n, c, h / window, w / window])
            }
            Layer::Flatten => {
                let n = *input.first()?;
                let rest: usize = input[1..].iter().product();
                if input.len() < 2 || rest == 0 {
                    return None;
                }
                Some(vec![n, rest])
            }
            Layer::Dense { weights, .. } => {
                if input.len() != 2 || input[1] != weights.shape()[0] {
                    return None;
                }
                Some(vec![input[0], weights.shape()[1]])
            }
        }
    }

    /// Applies the layer. The input must already satisfy `output_shape`.
    pub fn forward(&self, input: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => conv2d_forward(input, weights, bias, *stride),
            Layer::Relu => {
                let data = input.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(input.shape().to_vec(), data).expect("relu preserves shape")
            }
            Layer::MaxPool2d { window } => maxpool_forward(input, *window),
            Layer::Flatten => {
                let shape = self
                    .output_shape(input.shape())
                    .expect("flatten shape checked by caller");
                input.clone().reshape(shape).expect("flatten preserves size")
            }
            Layer::Dense { weights, bias } => dense_forward(input, weights, bias),
        }
    }

    /// Backpropagates `grad_out` through the layer given the cached forward
    /// `input`, returning the input gradient and parameter gradients.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> (Tensor, Option<LayerGrads>) {
        match self {
            Layer::Conv2d {
                weights,
                bias,
                stride,
            } => {
                let (gin, gw, gb) = conv2d_backward(input, weights, bias, *stride, grad_out);
                (gin, Some(LayerGrads { weights: gw, bias: gb }))
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                (
                    Tensor::new(input.shape().to_vec(), data).expect("relu grad shape"),
                    None,
                )
            }
            Layer::MaxPool2d { window } => (maxpool_backward(input, *window, grad_out), None),
            Layer::Flatten => (
                grad_out
                    .clone()
                    .reshape(input.shape().to_vec())
                    .expect("flatten grad preserves size"),
                None,
            ),
            Layer::Dense { weights, bias } => {
                let (gin, gw, gb) = dense_backward(input, weights, bias, grad_out);
                (gin, Some(LayerGrads { weights: gw, bias: gb }))
            }
        }
    }
}

fn four_dims(shape: &[usize]) -> Option<&[usize; 4]> {
    shape.try_into().ok()
}

fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let n = input.shape()[0];
    let din = weights.shape()[0];
    let dout = weights.shape()[1];
    let mut out = vec![0.0; n * dout];
    for b in 0..n {
        let row = &input.data()[b * din..(b + 1) * din];
        let orow = &mut out[b * dout..(b + 1) * dout];
        orow.copy_from_slice(bias.data());
        for (i, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &weights.data()[i * dout..(i + 1) * dout];
            for (o, &w) in orow.iter_mut().zip(wrow) {
                *o += x * w;
            }
        }
    }
    Tensor::new(vec![n, dout], out).expect("dense output shape")
}

fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    _bias: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = input.shape()[0];
    let din = weights.shape()[0];
    let dout = weights.shape()[1];
    let mut gin = vec![0.0; n * din];
    let mut gw = vec![0.0; din * dout];
    let mut gb = vec![0.0; dout];
    for b in 0..n {
        let xrow = &input.data()[b * din..(b + 1) * din];
        let grow = &grad_out.data()[b * dout..(b + 1) * dout];
        for (j, &g) in grow.iter().enumerate() {
            gb[j] += g;
        }
        let ginrow = &mut gin[b * din..(b + 1) * din];
        for i in 0..din {
            let wrow = &weights.data()[i * dout..(i + 1) * dout];
            let x = xrow[i];
            let gwrow = &mut gw[i * dout..(i + 1) * dout];
            let mut acc = 0.0;
            for j in 0..dout {
                let g = grow[j];
                acc += g * wrow[j];
                gwrow[j] += x * g;
            }
            ginrow[i] = acc;
        }
    }
    (
        Tensor::new(vec![n, din], gin).expect("dense input grad shape"),
        Tensor::new(vec![din, dout], gw).expect("dense weight grad shape"),
        Tensor::new(vec![dout], gb).expect("dense bias grad shape"),
    )
}

fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
    let [n, ic, h, w] = *four_dims(input.shape()).expect("conv input is 4-d");
    let (oc, k) = (weights.shape()[0], weights.shape()[2]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    let x = input.data();
    let wd = weights.data();
    for b in 0..n {
        for o in 0..oc {
            let b0 = bias.data()[o];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for c in 0..ic {
                        for ky in 0..k {
                            let iy = oy * stride + ky;
                            let xbase = ((b * ic + c) * h + iy) * w + ox * stride;
                            let wbase = ((o * ic + c) * k + ky) * k;
                            for kx in 0..k {
                                acc += x[xbase + kx] * wd[wbase + kx];
                            }
                        }
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out).expect("conv output shape")
}

fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, ic, h, w] = *four_dims(input.shape()).expect("conv input is 4-d");
    let (oc, k) = (weights.shape()[0], weights.shape()[2]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; bias.len()];
    let x = input.data();
    let wd = weights.data();
    let go = grad_out.data();
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go[((b * oc + o) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for c in 0..ic {
                        for ky in 0..k {
                            let iy = oy * stride + ky;
                            let xbase = ((b * ic + c) * h + iy) * w + ox * stride;
                            let wbase = ((o * ic + c) * k + ky) * k;
                            for kx in 0..k {
                                gw[wbase + kx] += x[xbase + kx] * g;
                                gin[xbase + kx] += wd[wbase + kx] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gin).expect("conv input grad shape"),
        Tensor::new(weights.shape().to_vec(), gw).expect("conv weight grad shape"),
        Tensor::new(bias.shape().to_vec(), gb).expect("conv bias grad shape"),
    )
}

fn maxpool_forward(input: &Tensor, window: usize) -> Tensor {
    let [n, c, h, w] = *four_dims(input.shape()).expect("pool input is 4-d");
    let oh = h / window;
    let ow = w / window;
    let mut out = vec![0.0; n * c * oh * ow];
    let x = input.data();
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..window {
                        let iy = oy * window + ky;
                        let base = ((b * c + ch) * h + iy) * w + ox * window;
                        for kx in 0..window {
                            let v = x[base + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((b * c + ch) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("pool output shape")
}

fn maxpool_backward(input: &Tensor, window: usize, grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = *four_dims(input.shape()).expect("pool input is 4-d");
    let oh = h / window;
    let ow = w / window;
    let mut gin = vec![0.0; input.len()];
    let x = input.data();
    let go = grad_out.data();
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    // Route the gradient to the first maximum in scan order,
                    // matching the forward pass tie-break.
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..window {
                        let iy = oy * window + ky;
                        let base = ((b * c + ch) * h + iy) * w + ox * window;
                        for kx in 0..window {
                            let v = x[base + kx];
                            if v > best {
                                best = v;
                                best_idx = base + kx;
                            }
                        }
                    }
                    gin[best_idx] += go[((b * c + ch) * oh + oy) * ow + ox];
                }
            }
        }
    }
    Tensor::new(input.shape().to_vec(), gin).expect("pool input grad shape")
}

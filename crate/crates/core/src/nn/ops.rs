use crate::error::{Error, Result};
use crate::gemm::dot;
use crate::tensor::{Scalar, Shape, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Passes `grad` where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad.shape() {
        return Err(Error::shape(input.shape(), grad.shape()));
    }
    let data = relu_backward_slice(input.data(), grad.data());
    Tensor::from_vec(input.shape(), data)
}

pub(crate) fn relu_backward_slice<T: Scalar>(input: &[T], grad: &[T]) -> Vec<T> {
    input
        .iter()
        .zip(grad)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

fn check_pool(extent: usize, h: usize, w: usize) -> Result<()> {
    if extent == 0 || !h.is_multiple_of(extent) || !w.is_multiple_of(extent) {
        return Err(Error::NonDivisiblePool {
            extent,
            height: h,
            width: w,
        });
    }
    Ok(())
}

/// 2x2 max pooling of one `(c, h, w)` map; also returns, per output, the
/// flat input index it was taken from (first maximum in row-major order).
pub(crate) fn maxpool2_map<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Max-pooling over non-overlapping 2x2 windows, with the recorded routing.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    check_pool(2, s.h, s.w)?;
    let mut data = Vec::with_capacity(s.numel() / 4);
    let mut routing = Vec::with_capacity(s.numel() / 4);
    for b in 0..s.n {
        let (out, arg) = maxpool2_map(x.item(b), s.c, s.h, s.w);
        data.extend(out);
        routing.extend(arg.into_iter().map(|i| i + b * s.item()));
    }
    Ok((Tensor::from_vec((s.n, s.c, s.h / 2, s.w / 2), data)?, routing))
}

pub fn maxpool2_backward<T: Scalar>(input: &Tensor<T>, routing: &[usize], grad: &Tensor<T>) -> Result<Tensor<T>> {
    if routing.len() != grad.len() {
        return Err(Error::MissingCache);
    }
    let mut out = Tensor::zeros(input.shape())?;
    let data = out.data_mut();
    for (&i, &g) in routing.iter().zip(grad.data()) {
        data[i] += g;
    }
    Ok(out)
}

pub(crate) fn avgpool_map<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, extent: usize) -> Vec<T> {
    let (ho, wo) = (h / extent, w / extent);
    let inv = T::one() / T::of((extent * extent) as f64);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..extent {
                    let row = &plane[(oy * extent + dy) * w + ox * extent..][..extent];
                    for &v in row {
                        acc += v;
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    out
}

pub(crate) fn avgpool_map_backward<T: Scalar>(grad: &[T], c: usize, h: usize, w: usize, extent: usize) -> Vec<T> {
    let (ho, wo) = (h / extent, w / extent);
    let inv = T::one() / T::of((extent * extent) as f64);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad[(ch * ho + oy) * wo + ox] * inv;
                for dy in 0..extent {
                    let start = ch * h * w + (oy * extent + dy) * w + ox * extent;
                    out[start..start + extent].iter_mut().for_each(|v| *v = g);
                }
            }
        }
    }
    out
}

/// Average pooling over non-overlapping `extent x extent` windows.
pub fn avgpool<T: Scalar>(x: &Tensor<T>, extent: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    check_pool(extent, s.h, s.w)?;
    let mut data = Vec::with_capacity(s.numel() / (extent * extent));
    for b in 0..s.n {
        data.extend(avgpool_map(x.item(b), s.c, s.h, s.w, extent));
    }
    Tensor::from_vec((s.n, s.c, s.h / extent, s.w / extent), data)
}

pub fn avgpool_backward<T: Scalar>(input: &Tensor<T>, extent: usize, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    check_pool(extent, s.h, s.w)?;
    let mut data = Vec::with_capacity(s.numel());
    for b in 0..s.n {
        data.extend(avgpool_map_backward(grad.item(b), s.c, s.h, s.w, extent));
    }
    Tensor::from_vec(s, data)
}

/// Fully connected layer, `W` stored `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(
                format!("{} weights and {outputs} biases", inputs * outputs),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(Dense {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn forward_vec(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect()
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub(crate) fn backward_vec(&self, x: &[T], grad: &[T], gw: &mut [T], gb: &mut [T]) -> Vec<T> {
        let mut gx = vec![T::zero(); self.inputs];
        for (o, &g) in grad.iter().enumerate() {
            gb[o] += g;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().item() != self.inputs {
            return Err(Error::shape(format!("{} features", self.inputs), x.shape()));
        }
        Ok(())
    }

    /// Flattens each item and maps it to `(n, outputs, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let n = x.shape().n;
        let data = (0..n).flat_map(|b| self.forward_vec(x.item(b))).collect();
        Tensor::from_vec((n, self.outputs, 1, 1), data)
    }

    pub fn backward(&self, x: &Tensor<T>, grad: &Tensor<T>) -> Result<DenseGrads<T>> {
        self.check(x)?;
        let n = x.shape().n;
        if grad.len() != n * self.outputs {
            return Err(Error::shape(Shape::new(n, self.outputs, 1, 1), grad.shape()));
        }
        let mut weights = vec![T::zero(); self.weights.len()];
        let mut bias = vec![T::zero(); self.outputs];
        let mut input = Vec::with_capacity(x.len());
        for b in 0..n {
            let g = &grad.data()[b * self.outputs..(b + 1) * self.outputs];
            input.extend(self.backward_vec(x.item(b), g, &mut weights, &mut bias));
        }
        Ok(DenseGrads {
            input: Tensor::from_vec(x.shape(), input)?,
            weights,
            bias,
        })
    }
}

/// Softmax cross-entropy of one logit vector; returns the loss and writes
/// `softmax - onehot` into `grad`.
pub(crate) fn softmax_ce_vec<T: Scalar>(logits: &[T], label: usize, grad: &mut [T]) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - m).exp();
        total += *g;
    }
    for g in grad.iter_mut() {
        *g = *g / total;
    }
    grad[label] -= T::one();
    Ok(total.ln() + m - logits[label])
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits. Logits are read as `(n, classes)` from each item.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let n = logits.shape().n;
    if labels.len() != n {
        return Err(Error::shape(format!("{n} labels"), format!("{} labels", labels.len())));
    }
    let classes = logits.shape().item();
    let inv = T::one() / T::of(n as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        let g = &mut grad[b * classes..(b + 1) * classes];
        loss += softmax_ce_vec(logits.item(b), label, g)?;
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, Tensor::from_vec(logits.shape(), grad)?))
}

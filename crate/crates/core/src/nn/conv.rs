use crate::error::{Error, Result};
use crate::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Shape, Tensor};

/// Output extent of a strided, zero-padded window.
pub fn output_extent(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad).saturating_sub(k) / stride + 1
}

/// Standard convolution with weights in Cartesian grid order
/// (`out x in x K x K`, row-major within the window).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of one convolution-like layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        k: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if k == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "convolution needs positive extents, got k={k} in={in_channels} out={out_channels} stride={stride}"
            )));
        }
        let expected = out_channels * in_channels * k * k;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                format!("{expected} weights and {out_channels} biases"),
                format!("{} weights and {} biases", weights.len(), bias.len()),
            ));
        }
        Ok(Conv2d {
            k,
            in_channels,
            out_channels,
            stride,
            pad,
            weights,
            bias,
        })
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            output_extent(h, self.k, self.stride, self.pad),
            output_extent(w, self.k, self.stride, self.pad),
        )
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.in_channels),
                format!("{} input channels", shape.c),
            ));
        }
        if shape.h + 2 * self.pad < self.k || shape.w + 2 * self.pad < self.k {
            return Err(Error::shape(format!("spatial size >= {}", self.k), shape));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let (ho, wo) = self.output_dims(s.h, s.w);
        let mut out = Vec::with_capacity(s.n * self.out_channels * ho * wo);
        let mut col = Vec::new();
        for b in 0..s.n {
            im2col(input.item(b), s.c, s.h, s.w, self.k, self.stride, self.pad, &mut col);
            out.extend(self.apply_columns(&col, ho * wo));
        }
        Tensor::from_vec((s.n, self.out_channels, ho, wo), out)
    }

    /// `W * col + bias` for an im2col matrix with `p` columns.
    pub(crate) fn apply_columns(&self, col: &[T], p: usize) -> Vec<T> {
        let rows = self.in_channels * self.k * self.k;
        let mut out = vec![T::zero(); self.out_channels * p];
        gemm_nn(&self.weights, col, &mut out, self.out_channels, rows, p);
        add_bias(&mut out, &self.bias, p);
        out
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        self.check_input(input.shape())?;
        let s = input.shape();
        let (ho, wo) = self.output_dims(s.h, s.w);
        let expected = Shape::new(s.n, self.out_channels, ho, wo);
        if grad_out.shape() != expected {
            return Err(Error::shape(expected, grad_out.shape()));
        }
        let p = ho * wo;
        let mut grads = ConvGrads {
            input: Tensor::zeros(s)?,
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); self.out_channels],
        };
        let mut col = Vec::new();
        let mut grad_col = Vec::new();
        for b in 0..s.n {
            im2col(input.item(b), s.c, s.h, s.w, self.k, self.stride, self.pad, &mut col);
            let g = grad_out.item(b);
            self.accumulate_param_grads(&col, g, p, &mut grads.weights, &mut grads.bias);
            self.column_grads(g, p, &mut grad_col);
            col2im(
                &grad_col,
                s.c,
                s.h,
                s.w,
                self.k,
                self.stride,
                self.pad,
                grads.input.item_mut(b),
            );
        }
        Ok(grads)
    }

    pub(crate) fn accumulate_param_grads(&self, col: &[T], grad_out: &[T], p: usize, gw: &mut [T], gb: &mut [T]) {
        let rows = self.in_channels * self.k * self.k;
        let mut tmp = vec![T::zero(); self.out_channels * rows];
        gemm_nt(grad_out, col, &mut tmp, self.out_channels, p, rows);
        gw.iter_mut().zip(&tmp).for_each(|(g, &t)| *g += t);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += grad_out[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
    }

    /// `W^T * grad_out`, one row per im2col row.
    pub(crate) fn column_grads(&self, grad_out: &[T], p: usize, grad_col: &mut Vec<T>) {
        let rows = self.in_channels * self.k * self.k;
        grad_col.clear();
        grad_col.resize(rows * p, T::zero());
        gemm_tn(&self.weights, grad_out, grad_col, rows, self.out_channels, p);
    }
}

pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], p: usize) {
    for (o, &b) in bias.iter().enumerate() {
        out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += b);
    }
}

/// Unrolls every window into a column: row `(ci, ky, kx)`, column `(oy, ox)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    col: &mut Vec<T>,
) {
    let (ho, wo) = (output_extent(h, k, stride, pad), output_extent(w, k, stride, pad));
    let p = ho * wo;
    col.clear();
    col.resize(c * k * k * p, T::zero());
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients onto `x`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    x: &mut [T],
) {
    let (ho, wo) = (output_extent(h, k, stride, pad), output_extent(w, k, stride, pad));
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Standard convolution (`conv_forward`).
pub fn conv_forward<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>) -> Result<Tensor<T>> {
    conv.forward(input)
}

pub fn conv_backward<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    conv.backward(input, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn naive(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (ho, wo) = conv.output_dims(s.h, s.w);
        let k = conv.k;
        let mut out = Tensor::zeros((s.n, conv.out_channels, ho, wo)).unwrap();
        for b in 0..s.n {
            for o in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..s.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += conv.weights[((o * s.c + ci) * k + ky) * k + kx]
                                            * x.get(b, ci, iy as usize, ix as usize).unwrap();
                                    }
                                }
                            }
                        }
                        out.set(b, o, oy, ox, acc + conv.bias[o]).unwrap();
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_vec((1, 1, 3, 3), (0..9).map(f64::from).collect()).unwrap();
        let conv = Conv2d::new(1, 1, 1, 1, 0, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn constant_field() {
        let x = Tensor::full((1, 1, 5, 5), 2.0).unwrap();
        let w: Vec<f64> = (0..9).map(|i| i as f64 * 0.5 - 1.0).collect();
        let conv = Conv2d::new(3, 1, 1, 1, 1, w.clone(), vec![0.25]).unwrap();
        let out = conv.forward(&x).unwrap();
        assert_eq!(out.get(0, 0, 2, 2).unwrap(), 2.0 * w.iter().sum::<f64>() + 0.25);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec((1, 1, 6, 6), random(&mut rng, 36)).unwrap();
        let conv = Conv2d::new(3, 1, 1, 1, 1, random(&mut rng, 9), vec![0.3]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), naive(&x, &conv));

        let x = Tensor::from_vec((2, 3, 7, 5), random(&mut rng, 210)).unwrap();
        let conv = Conv2d::new(3, 3, 4, 2, 1, random(&mut rng, 108), random(&mut rng, 4)).unwrap();
        let out = conv.forward(&x).unwrap();
        let expect = naive(&x, &conv);
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f64>::zeros((1, 2, 4, 4)).unwrap();
        let conv = Conv2d::new(3, 1, 1, 1, 1, vec![0.0; 9], vec![0.0]).unwrap();
        assert!(matches!(conv.forward(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_vec((1, 2, 5, 5), random(&mut rng, 50)).unwrap();
        let mut conv = Conv2d::new(3, 2, 3, 2, 1, random(&mut rng, 54), random(&mut rng, 3)).unwrap();
        let (ho, wo) = conv.output_dims(5, 5);
        let proj = Tensor::from_vec((1, 3, ho, wo), random(&mut rng, 3 * ho * wo)).unwrap();
        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| c.forward(x).unwrap().mul(&proj).unwrap().sum();
        let g = conv.backward(&x, &proj).unwrap();
        let h = 1e-6;
        for i in 0..conv.weights.len() {
            let w0 = conv.weights[i];
            conv.weights[i] = w0 + h;
            let up = loss(&conv, &x);
            conv.weights[i] = w0 - h;
            let down = loss(&conv, &x);
            conv.weights[i] = w0;
            assert!(((up - down) / (2.0 * h) - g.weights[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - g.input.data()[i]).abs() < 1e-7);
        }
        let total: f64 = proj.item(0)[..ho * wo].iter().sum();
        assert!((g.bias[0] - total).abs() < 1e-12);
    }
}

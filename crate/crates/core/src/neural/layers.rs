//! Convolution and fully-connected layers.
//!
//! Batched activations use a channel-major layout `[C, B, H, W]`, so a whole
//! batch convolution is a single `[O, K] × [K, B·OH·OW]` product.

use rand::Rng;

use super::NeuralError;
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_channels, in_channels · kernel · kernel]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Output side for a valid (unpadded) convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride);
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        fill_uniform(&mut layer.weight, bound, rng);
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), NeuralError> {
        match (conv_output_size(h, self.kernel, self.stride), conv_output_size(w, self.kernel, self.stride)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(NeuralError::IncompatibleConv { height: h, width: w, kernel: self.kernel, stride: self.stride }),
        }
    }

    /// Unfolds `x` (`[C, B, H, W]`) into `[C·k·k, B·OH·OW]`.
    fn im2col(&self, x: &[T], batch: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let s = self.stride;
        let n = batch * oh * ow;
        let mut cols = vec![T::zero(); self.fan_in() * n];
        for c in 0..self.in_channels {
            for i in 0..k {
                for j in 0..k {
                    let row = (c * k + i) * k + j;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let mut idx = 0;
                    for b in 0..batch {
                        let plane = (c * batch + b) * h * w;
                        for y in 0..oh {
                            let src = &x[plane + (y * s + i) * w + j..];
                            let out = &mut dst[idx..idx + ow];
                            if s == 1 {
                                out.copy_from_slice(&src[..ow]);
                            } else {
                                for (d, v) in out.iter_mut().zip(src.iter().step_by(s)) {
                                    *d = *v;
                                }
                            }
                            idx += ow;
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], batch: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let s = self.stride;
        let n = batch * oh * ow;
        let mut dx = vec![T::zero(); self.in_channels * batch * h * w];
        for c in 0..self.in_channels {
            for i in 0..k {
                for j in 0..k {
                    let row = (c * k + i) * k + j;
                    let src = &cols[row * n..(row + 1) * n];
                    let mut idx = 0;
                    for b in 0..batch {
                        let plane = (c * batch + b) * h * w;
                        for y in 0..oh {
                            let start = plane + (y * s + i) * w + j;
                            for (d, v) in dx[start..].iter_mut().step_by(s).zip(&src[idx..idx + ow]) {
                                *d += *v;
                            }
                            idx += ow;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the pre-activation output `[O, B, OH, OW]` and the unfolded input.
    pub fn forward(&self, x: &[T], batch: usize, h: usize, w: usize) -> Result<(Vec<T>, Vec<T>, usize, usize), NeuralError> {
        let (oh, ow) = self.output_hw(h, w)?;
        if x.len() != self.in_channels * batch * h * w {
            return Err(NeuralError::ShapeMismatch {
                expected: vec![self.in_channels, batch, h, w],
                found: vec![x.len()],
            });
        }
        let cols = self.im2col(x, batch, h, w, oh, ow);
        let n = batch * oh * ow;
        let mut y = vec![T::zero(); self.out_channels * n];
        for (o, row) in y.chunks_exact_mut(n.max(1)).enumerate().take(self.out_channels) {
            row.fill(self.bias[o]);
        }
        gemm(
            T::one(),
            MatRef::row_major(&self.weight, self.out_channels, self.fan_in()),
            MatRef::row_major(&cols, self.fan_in(), n),
            T::one(),
            &mut y,
        );
        Ok((y, cols, oh, ow))
    }

    /// Gradients of weight and bias, plus the input gradient when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        cols: &[T],
        dy: &[T],
        batch: usize,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
        want_dx: bool,
    ) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let n = batch * oh * ow;
        let kdim = self.fan_in();
        let mut dw = vec![T::zero(); self.weight.len()];
        gemm(
            T::one(),
            MatRef::row_major(dy, self.out_channels, n),
            MatRef::transposed(cols, kdim, n),
            T::zero(),
            &mut dw,
        );
        let db = dy.chunks_exact(n).map(|r| r.iter().copied().sum()).collect();
        let dx = want_dx.then(|| {
            let mut dcols = vec![T::zero(); kdim * n];
            gemm(
                T::one(),
                MatRef::transposed(&self.weight, self.out_channels, kdim),
                MatRef::row_major(dy, self.out_channels, n),
                T::zero(),
                &mut dcols,
            );
            self.col2im(&dcols, batch, h, w, oh, ow)
        });
        (dw, db, dx)
    }
}

/// Valid cross-correlation of one `[C, H, W]` image with a filter bank
/// `[O, C, k, k]` (no bias). Returns `([O, OH, OW], OH, OW)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Scalar>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
    filters: &[T],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Result<(Vec<T>, usize, usize), NeuralError> {
    if filters.len() != out_channels * channels * kernel * kernel {
        return Err(NeuralError::ShapeMismatch {
            expected: vec![out_channels, channels, kernel, kernel],
            found: vec![filters.len()],
        });
    }
    let layer = Conv2d {
        in_channels: channels,
        out_channels,
        kernel,
        stride,
        weight: filters.to_vec(),
        bias: vec![T::zero(); out_channels],
    };
    let (y, _, oh, ow) = layer.forward(input, 1, height, width)?;
    Ok((y, oh, ow))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features, in_features]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self { in_features, out_features, weight: vec![T::zero(); in_features * out_features], bias: vec![T::zero(); out_features] }
    }

    pub fn he_uniform<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_features, out_features);
        fill_uniform(&mut layer.weight, (6.0 / in_features as f64).sqrt(), rng);
        layer
    }

    /// Weights and bias uniform in `±1/√fan_in`.
    pub fn lecun_uniform<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_features, out_features);
        let bound = 1.0 / (in_features as f64).sqrt();
        fill_uniform(&mut layer.weight, bound, rng);
        fill_uniform(&mut layer.bias, bound, rng);
        layer
    }

    /// `x`: `[B, in]` → `[B, out]`.
    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), batch * self.in_features);
        let mut y = Vec::with_capacity(batch * self.out_features);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            T::one(),
            MatRef::row_major(x, batch, self.in_features),
            MatRef::transposed(&self.weight, self.out_features, self.in_features),
            T::one(),
            &mut y,
        );
        y
    }

    pub fn backward(&self, x: &[T], dy: &[T], batch: usize, want_dx: bool) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let mut dw = vec![T::zero(); self.weight.len()];
        gemm(
            T::one(),
            MatRef::transposed(dy, batch, self.out_features),
            MatRef::row_major(x, batch, self.in_features),
            T::zero(),
            &mut dw,
        );
        let mut db = vec![T::zero(); self.out_features];
        for row in dy.chunks_exact(self.out_features) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let dx = want_dx.then(|| {
            let mut dx = vec![T::zero(); batch * self.in_features];
            gemm(
                T::one(),
                MatRef::row_major(dy, batch, self.out_features),
                MatRef::row_major(&self.weight, self.out_features, self.in_features),
                T::zero(),
                &mut dx,
            );
            dx
        });
        (dw, db, dx)
    }
}

fn fill_uniform<T: Scalar, R: Rng + ?Sized>(buf: &mut [T], bound: f64, rng: &mut R) {
    for v in buf {
        *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
pub fn relu_backward<T: Scalar>(activation: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_shape_chain() {
        assert_eq!(conv_output_size(48, 8, 4), Some(11));
        assert_eq!(conv_output_size(11, 4, 2), Some(4));
        assert_eq!(conv_output_size(4, 3, 1), Some(2));
        assert_eq!(conv_output_size(2, 3, 1), None);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x: Vec<f64> = (0..2 * 5 * 5).map(|i| i as f64 * 0.5 - 3.0).collect();
        // Two 1x1 filters selecting channel 0 and channel 1.
        let filters = [1.0, 0.0, 0.0, 1.0];
        let (y, oh, ow) = conv2d(&x, 2, 5, 5, &filters, 2, 1, 1).unwrap();
        assert_eq!((oh, ow), (5, 5));
        assert_eq!(y, x);
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = vec![0.0f32; 9];
        let f = vec![0.0f32; 16];
        assert!(matches!(conv2d(&x, 1, 3, 3, &f, 1, 4, 1), Err(NeuralError::IncompatibleConv { .. })));
    }
}

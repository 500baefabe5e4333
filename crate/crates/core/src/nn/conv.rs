//! Time-preserving 1-D convolution with optional dilation and causal padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::glorot_uniform;
use crate::tensor::{Scalar, Tensor};

/// Weights `[out_ch, in_ch, kernel]` and bias `[out_ch]` of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub dilation: usize,
    pub causal: bool,
}

/// Static description of a convolution, used to build and validate [`ConvParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub causal: bool,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, causal: bool) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            dilation,
            causal,
        }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::new(in_ch, out_ch, 1, 1, true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kernel == 0 || self.dilation == 0 {
            return Err(Error::Config(format!(
                "convolution extents must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + self.out_ch
    }
}

/// Gradients of one convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Glorot-uniform weights and zero bias.
    pub fn init(spec: ConvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_ch * spec.kernel;
        let fan_out = spec.out_ch * spec.kernel;
        Ok(Self {
            weight: glorot_uniform(&[spec.out_ch, spec.in_ch, spec.kernel], fan_in, fan_out, seed),
            bias: Tensor::zeros(&[spec.out_ch]),
            dilation: spec.dilation,
            causal: spec.causal,
        })
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            weight: Tensor::zeros(&[spec.out_ch, spec.in_ch, spec.kernel]),
            bias: Tensor::zeros(&[spec.out_ch]),
            dilation: spec.dilation,
            causal: spec.causal,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        let s = self.weight.shape();
        ConvSpec::new(s[1], s[0], s[2], self.dilation, self.causal)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Zero padding inserted before the first input sample.
    pub fn left_pad(&self) -> usize {
        let total = (self.kernel() - 1) * self.dilation;
        if self.causal {
            total
        } else {
            total / 2
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        let (c, t) = input.dims2()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok((c, t))
    }

    /// Time offset of tap `j` relative to the output index.
    #[inline]
    fn tap_offset(&self, j: usize) -> isize {
        (j * self.dilation) as isize - self.left_pad() as isize
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (c_in, t) = self.check_input(input)?;
        let c_out = self.out_channels();
        let k = self.kernel();
        let w = self.weight.data();
        let mut out = Tensor::zeros(&[c_out, t]);
        for o in 0..c_out {
            let row = out.row_mut(o);
            row.fill(self.bias.data()[o]);
            for c in 0..c_in {
                let x = input.row(c);
                for j in 0..k {
                    let wv = w[(o * c_in + c) * k + j];
                    if let Some((dst, src)) = overlap(t, self.tap_offset(j)) {
                        axpy(wv, &x[src.clone()], &mut row[dst]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (c_in, t) = self.check_input(input)?;
        let c_out = self.out_channels();
        if upstream.shape() != [c_out, t] {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output [{c_out}, {t}]",
                upstream.shape()
            )));
        }
        let k = self.kernel();
        let w = self.weight.data();
        let mut d_input = Tensor::zeros(&[c_in, t]);
        let mut d_weight = Tensor::zeros(self.weight.shape());
        let mut d_bias = Tensor::zeros(&[c_out]);
        for o in 0..c_out {
            let g = upstream.row(o);
            d_bias.data_mut()[o] = g.iter().copied().sum();
            for c in 0..c_in {
                let x = input.row(c);
                for j in 0..k {
                    let idx = (o * c_in + c) * k + j;
                    if let Some((dst, src)) = overlap(t, self.tap_offset(j)) {
                        d_weight.data_mut()[idx] = dot(&g[dst.clone()], &x[src.clone()]);
                        axpy(w[idx], &g[dst], &mut d_input.row_mut(c)[src]);
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: d_input,
            weight: d_weight,
            bias: d_bias,
        })
    }
}

/// Output and input index ranges for which `out[t]` reads `in[t + offset]`.
fn overlap(t: usize, offset: isize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let start = (-offset).max(0) as usize;
    let end = (t as isize - offset).min(t as isize);
    if end <= start as isize {
        return None;
    }
    let end = end as usize;
    let s = (start as isize + offset) as usize;
    Some((start..end, s..s + (end - start)))
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

//! Max pooling and adaptive average pooling over the time axis of `[channels, time]` tensors.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output length of a max pool, or `None` when the input is shorter than the window.
pub fn maxpool_len(t: usize, window: usize, stride: usize) -> Option<usize> {
    (t >= window && window >= 1 && stride >= 1).then(|| (t - window) / stride + 1)
}

/// Max pool result plus the argmax position of every output element.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput<T = f32> {
    pub output: Tensor<T>,
    /// Input time index chosen for each output element, row-major like `output`.
    pub argmax: Vec<usize>,
}

pub fn maxpool1d<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    let (c, t) = x.dims2()?;
    let out_t = maxpool_len(t, window, stride).ok_or_else(|| {
        Error::Shape(format!(
            "max pool window {window} (stride {stride}) does not fit time length {t}"
        ))
    })?;
    let mut out = Tensor::zeros(&[c, out_t]);
    let mut argmax = Vec::with_capacity(c * out_t);
    for ch in 0..c {
        let row = x.row(ch);
        for (j, dst) in out.row_mut(ch).iter_mut().enumerate() {
            let start = j * stride;
            let mut best = start;
            // strict comparison keeps the first index on ties
            for i in start + 1..start + window {
                if row[i] > row[best] {
                    best = i;
                }
            }
            *dst = row[best];
            argmax.push(best);
        }
    }
    Ok(MaxPoolOutput { output: out, argmax })
}

/// Routes each upstream value to the recorded argmax of its window.
pub fn maxpool1d_backward<T: Scalar>(
    input_shape: &[usize],
    pooled: &MaxPoolOutput<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    pooled.output.check_same_shape(upstream, "max pool upstream")?;
    let (c, out_t) = upstream.dims2()?;
    let mut d_input = Tensor::zeros(input_shape);
    for ch in 0..c {
        let g = upstream.row(ch);
        let dst = d_input.row_mut(ch);
        for j in 0..out_t {
            dst[pooled.argmax[ch * out_t + j]] += g[j];
        }
    }
    Ok(d_input)
}

/// Bin `j` of `out_t` covers input indices `[floor(j*t/out_t), floor((j+1)*t/out_t))`.
fn adaptive_bin(j: usize, t: usize, out_t: usize) -> (usize, usize) {
    (j * t / out_t, (j + 1) * t / out_t)
}

pub fn adaptive_avg_pool1d<T: Scalar>(x: &Tensor<T>, out_t: usize) -> Result<Tensor<T>> {
    let (c, t) = x.dims2()?;
    if out_t == 0 || out_t > t {
        return Err(Error::Shape(format!(
            "adaptive pool output length {out_t} must be in 1..={t}"
        )));
    }
    let mut out = Tensor::zeros(&[c, out_t]);
    for ch in 0..c {
        let row = x.row(ch);
        for (j, dst) in out.row_mut(ch).iter_mut().enumerate() {
            let (lo, hi) = adaptive_bin(j, t, out_t);
            let s: T = row[lo..hi].iter().copied().sum();
            *dst = s / T::from_f64((hi - lo) as f64);
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool1d_backward<T: Scalar>(input_shape: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, out_t) = upstream.dims2()?;
    let t = match input_shape {
        &[ic, it] if ic == c && it >= out_t => it,
        s => {
            return Err(Error::Shape(format!(
                "adaptive pool input {s:?} incompatible with upstream {:?}",
                upstream.shape()
            )))
        }
    };
    let mut d_input = Tensor::zeros(input_shape);
    for ch in 0..c {
        let g = upstream.row(ch);
        let dst = d_input.row_mut(ch);
        for (j, &gv) in g.iter().enumerate() {
            let (lo, hi) = adaptive_bin(j, t, out_t);
            let share = gv / T::from_f64((hi - lo) as f64);
            for v in &mut dst[lo..hi] {
                *v += share;
            }
        }
    }
    Ok(d_input)
}

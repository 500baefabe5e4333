//! Convolution + max-pool downsampling head mapping an encoder feature map to class logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_backward};
use crate::nn::conv::{ConvParams, ConvSpec};
use crate::nn::init::sub_seed;
use crate::nn::loss::softmax;
use crate::nn::pool::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, maxpool1d, maxpool1d_backward, maxpool_len, MaxPoolOutput,
};
use crate::tensor::{Scalar, Tensor};

/// One `conv -> relu -> maxpool` stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadBlock {
    pub out_channels: usize,
    pub conv_kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl HeadBlock {
    pub const fn new(out_channels: usize, conv_kernel: usize, pool_window: usize, pool_stride: usize) -> Self {
        Self {
            out_channels,
            conv_kernel,
            pool_window,
            pool_stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub blocks: Vec<HeadBlock>,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            blocks: vec![
                HeadBlock::new(64, 3, 4, 4),
                HeadBlock::new(96, 3, 4, 4),
                HeadBlock::new(128, 3, 4, 4),
            ],
            n_classes: 20,
        }
    }
}

impl HeadConfig {
    /// Time length after each block for an input of length `t`, or an error if
    /// a pool window no longer fits.
    pub fn time_lengths(&self, t: usize) -> Result<Vec<usize>> {
        let mut lens = Vec::with_capacity(self.blocks.len());
        let mut cur = t;
        for (i, b) in self.blocks.iter().enumerate() {
            cur = maxpool_len(cur, b.pool_window, b.pool_stride).ok_or_else(|| {
                Error::Config(format!(
                    "head block {i}: pool window {} does not fit time length {cur}",
                    b.pool_window
                ))
            })?;
            lens.push(cur);
        }
        Ok(lens)
    }

    pub fn validate(&self, in_channels: usize, t: usize) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        if in_channels == 0 {
            return Err(Error::Config("head input channels must be positive".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.conv_kernel == 0 || b.pool_window == 0 || b.pool_stride == 0 {
                return Err(Error::Config(format!("head block {i} has a zero extent: {b:?}")));
            }
        }
        self.time_lengths(t).map(|_| ())
    }

    pub fn final_channels(&self, in_channels: usize) -> usize {
        self.blocks.last().map_or(in_channels, |b| b.out_channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f32> {
    pub config: HeadConfig,
    pub convs: Vec<ConvParams<T>>,
    /// Kernel-1 projection of the pooled vector to `n_classes` logits.
    pub output: ConvParams<T>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T = f32> {
    pub input: Tensor<T>,
    pub conv_out: Tensor<T>,
    pub pooled: MaxPoolOutput<T>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T = f32> {
    pub blocks: Vec<BlockCache<T>>,
    pub last_shape: Vec<usize>,
    pub averaged: Tensor<T>,
}

/// Pre-softmax logits of one segment; the learned embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckVector {
    pub segment_id: String,
    pub values: Vec<f32>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn build(cfg: &HeadConfig, in_channels: usize, t: usize, seed: u64) -> Result<Self> {
        cfg.validate(in_channels, t)?;
        let mut c = in_channels;
        let mut convs = Vec::with_capacity(cfg.blocks.len());
        for (i, b) in cfg.blocks.iter().enumerate() {
            let spec = ConvSpec::new(c, b.out_channels, b.conv_kernel, 1, true);
            convs.push(ConvParams::init(spec, sub_seed(seed, 1000 + i as u64))?);
            c = b.out_channels;
        }
        let output = ConvParams::init(ConvSpec::pointwise(c, cfg.n_classes), sub_seed(seed, 2000))?;
        Ok(Self {
            config: cfg.clone(),
            convs,
            output,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().unwrap_or(&self.output).in_channels()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
        z
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("head.blocks.{i}.conv.weight"), &c.weight));
            out.push((format!("head.blocks.{i}.conv.bias"), &c.bias));
        }
        out.push(("head.output.weight".to_string(), &self.output.weight));
        out.push(("head.output.bias".to_string(), &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn forward_cached(&self, features: &Tensor<T>) -> Result<(Tensor<T>, HeadCache<T>)> {
        let (c, t) = features.dims2()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "head expects {} feature channels, got {c}",
                self.in_channels()
            )));
        }
        self.config.time_lengths(t).map_err(|e| Error::Shape(e.to_string()))?;
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut x = features.clone();
        for (conv, b) in self.convs.iter().zip(&self.config.blocks) {
            let conv_out = conv.forward(&x)?;
            let pooled = maxpool1d(&relu(&conv_out), b.pool_window, b.pool_stride)?;
            let next = pooled.output.clone();
            blocks.push(BlockCache {
                input: x,
                conv_out,
                pooled,
            });
            x = next;
        }
        let last_shape = x.shape().to_vec();
        let averaged = adaptive_avg_pool1d(&x, 1)?;
        let logits = self.output.forward(&averaged)?;
        let logits = logits.reshape(vec![self.n_classes()])?;
        Ok((
            logits,
            HeadCache {
                blocks,
                last_shape,
                averaged,
            },
        ))
    }

    /// `[channels, time]` feature map to `[n_classes]` logits.
    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn backward(&self, cache: &HeadCache<T>, d_logits: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let d = d_logits.clone().reshape(vec![self.n_classes(), 1])?;
        let out = self.output.backward(&cache.averaged, &d)?;
        grads.output.weight.add_assign(&out.weight)?;
        grads.output.bias.add_assign(&out.bias)?;
        let mut d_x = adaptive_avg_pool1d_backward(&cache.last_shape, &out.input)?;
        for ((conv, bc), g) in self.convs.iter().zip(&cache.blocks).zip(grads.convs.iter_mut()).rev() {
            let d_relu = maxpool1d_backward(bc.conv_out.shape(), &bc.pooled, &d_x)?;
            let d_conv = relu_backward(&bc.conv_out, &d_relu)?;
            let cg = conv.backward(&bc.input, &d_conv)?;
            g.weight.add_assign(&cg.weight)?;
            g.bias.add_assign(&cg.bias)?;
            d_x = cg.input;
        }
        Ok(d_x)
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
            dilation: c.dilation,
            causal: c.causal,
        };
        HeadParams {
            config: self.config.clone(),
            convs: self.convs.iter().map(conv).collect(),
            output: conv(&self.output),
        }
    }
}

impl HeadParams<f32> {
    pub fn bottleneck(&self, segment_id: &str, features: &Tensor<f32>) -> Result<BottleneckVector> {
        Ok(BottleneckVector {
            segment_id: segment_id.to_string(),
            values: self.forward(features)?.into_data(),
        })
    }
}

/// Class probabilities and the argmax class; ties go to the lowest index.
pub fn predict<T: Scalar>(logits: &[T]) -> (usize, Vec<T>) {
    let probs = softmax(logits);
    (argmax(logits), probs)
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

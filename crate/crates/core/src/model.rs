//! Encoder + head, trained end to end.

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::head::{predict, HeadBlock, HeadConfig, HeadParams};
use crate::nn::init::sub_seed;
use crate::nn::loss::softmax_cross_entropy;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate(self.encoder.channels, self.encoder.seg_len)
    }

    pub fn seg_len(&self) -> usize {
        self.encoder.seg_len
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes
    }

    /// A small configuration for fast experiments on one-second segments.
    ///
    /// Seven layers give a 128-sample receptive field, enough to span a full
    /// period of mid-range tones; four layers (16 samples) trained unreliably.
    pub fn compact(n_classes: usize, seg_len: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                n_layers: 7,
                channels: 8,
                kernel: 2,
                seg_len,
            },
            head: HeadConfig {
                blocks: vec![HeadBlock::new(12, 3, 4, 4), HeadBlock::new(16, 3, 4, 4)],
                n_classes,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub encoder: EncoderParams<T>,
    pub head: HeadParams<T>,
}

/// Per-parameter gradients, shape-matched to the model they were computed for.
pub type GradTape<T = f32> = Model<T>;

impl<T: Scalar> Model<T> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            encoder: EncoderParams::build(&cfg.encoder, sub_seed(seed, 1))?,
            head: HeadParams::build(&cfg.head, cfg.encoder.channels, cfg.encoder.seg_len, sub_seed(seed, 2))?,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.config.clone(),
            head: self.head.config.clone(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    pub fn seg_len(&self) -> usize {
        self.encoder.config.seg_len
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.encoder.named_tensors();
        v.extend(self.head.named_tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other` over every parameter.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        let theirs: Vec<&Tensor<T>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            mine.add_assign(t)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    /// Raw samples of one segment as a `[1, seg_len]` tensor.
    pub fn segment_tensor(&self, samples: &[f32]) -> Result<Tensor<T>> {
        if samples.len() != self.seg_len() {
            return Err(Error::Shape(format!(
                "model expects segments of {} samples, got {}",
                self.seg_len(),
                samples.len()
            )));
        }
        Ok(Tensor::from_signal(
            &samples.iter().map(|&s| T::from_f64(s as f64)).collect::<Vec<_>>(),
        ))
    }

    pub fn features(&self, segment: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.forward(segment)
    }

    pub fn forward(&self, segment: &Tensor<T>) -> Result<Tensor<T>> {
        self.head.forward(&self.encoder.forward(segment)?)
    }

    /// Predicted class and probabilities for a raw segment.
    pub fn predict(&self, samples: &[f32]) -> Result<(usize, Vec<T>)> {
        let logits = self.forward(&self.segment_tensor(samples)?)?;
        Ok(predict(logits.data()))
    }

    /// Cross-entropy loss, logits, and full parameter gradient for one labelled segment.
    pub fn loss_and_grad(&self, segment: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>, GradTape<T>)> {
        let (features, enc_cache) = self.encoder.forward_cached(segment)?;
        let (logits, head_cache) = self.head.forward_cached(&features)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, label)?;
        let mut grads = self.zeros_like();
        let d_features = self.head.backward(&head_cache, &d_logits, &mut grads.head)?;
        self.encoder.backward(&enc_cache, &d_features, &mut grads.encoder)?;
        Ok((loss, logits, grads))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            encoder: self.encoder.cast(),
            head: self.head.cast(),
        }
    }

    /// Replaces every parameter with the given tensors (same order as [`Self::named_tensors`]).
    pub fn set_tensors(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        let mine = self.tensors_mut();
        if mine.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                mine.len(),
                tensors.len()
            )));
        }
        for (dst, src) in mine.into_iter().zip(tensors) {
            dst.check_same_shape(src, "parameter")?;
            *dst = src.clone();
        }
        Ok(())
    }
}

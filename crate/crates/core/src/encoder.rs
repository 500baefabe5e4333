//! Gated dilated-convolution encoder.
//!
//! A kernel-1 input projection lifts the waveform to `channels` channels.
//! Each layer `l` then computes
//!
//! ```text
//! z      = tanh(filter_l * h) . sigmoid(gate_l * h)     (causal, dilation 2^l)
//! h'     = h + residual_l(z)
//! skip_l = skip_l(z)
//! ```
//!
//! and the encoder output is `relu(post(relu(sum_l skip_l)))`, a
//! `[channels, time]` feature map with the same time length as the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{gated_activation, gated_activation_backward, relu, relu_backward};
use crate::nn::conv::{ConvParams, ConvSpec};
use crate::nn::init::sub_seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub seg_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 10,
            channels: 40,
            kernel: 2,
            seg_len: 16000,
        }
    }
}

impl EncoderConfig {
    /// Dilation of layer `i` is `2^i`; the default ten layers span 1 to 512.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.n_layers).map(|i| 1usize << i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_layers > 24 {
            return Err(Error::Config(format!(
                "encoder n_layers must be in 1..=24, got {}",
                self.n_layers
            )));
        }
        if self.channels == 0 || self.kernel == 0 || self.seg_len == 0 {
            return Err(Error::Config(
                "encoder channels, kernel and seg_len must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of past samples (including the current one) that can influence an output sample.
    pub fn receptive_field(&self) -> usize {
        1 + self.dilations().iter().map(|d| d * (self.kernel - 1)).sum::<usize>()
    }

    fn dilated_spec(&self, dilation: usize) -> ConvSpec {
        ConvSpec::new(self.channels, self.channels, self.kernel, dilation, true)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let input = c + c;
        let per_layer = 2 * (c * c * self.kernel + c) + 2 * (c * c + c);
        let post = c * c + c;
        input + self.n_layers * per_layer + post
    }
}

/// Free-function form of [`EncoderConfig::receptive_field`].
pub fn receptive_field(cfg: &EncoderConfig) -> usize {
    cfg.receptive_field()
}

/// Convolutions of one gated residual layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualLayer<T = f32> {
    pub filter: ConvParams<T>,
    pub gate: ConvParams<T>,
    pub residual: ConvParams<T>,
    pub skip: ConvParams<T>,
}

impl<T: Scalar> ResidualLayer<T> {
    fn convs(&self) -> [&ConvParams<T>; 4] {
        [&self.filter, &self.gate, &self.residual, &self.skip]
    }

    fn convs_mut(&mut self) -> [&mut ConvParams<T>; 4] {
        [&mut self.filter, &mut self.gate, &mut self.residual, &mut self.skip]
    }

    pub fn channels(&self) -> usize {
        self.filter.out_channels()
    }
}

/// Intermediate values of one layer needed by the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache<T = f32> {
    pub input: Tensor<T>,
    pub filter_out: Tensor<T>,
    pub gate_out: Tensor<T>,
    pub z: Tensor<T>,
}

/// Residual-block forward: returns `(residual_out, skip_out)` and the cache.
pub fn residual_block_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ResidualLayer<T>,
) -> Result<(Tensor<T>, Tensor<T>, LayerCache<T>)> {
    let (c, _) = x.dims2()?;
    if c != layer.channels() {
        return Err(Error::Shape(format!(
            "residual block expects {} channels, got {c}",
            layer.channels()
        )));
    }
    let filter_out = layer.filter.forward(x)?;
    let gate_out = layer.gate.forward(x)?;
    let z = gated_activation(&filter_out, &gate_out)?;
    let mut residual_out = layer.residual.forward(&z)?;
    residual_out.add_assign(x)?;
    let skip_out = layer.skip.forward(&z)?;
    let cache = LayerCache {
        input: x.clone(),
        filter_out,
        gate_out,
        z,
    };
    Ok((residual_out, skip_out, cache))
}

/// Backward through one residual block. Returns the gradient with respect to
/// the block input and fills `grads` with parameter gradients.
pub fn residual_block_backward<T: Scalar>(
    layer: &ResidualLayer<T>,
    cache: &LayerCache<T>,
    d_residual: &Tensor<T>,
    d_skip: &Tensor<T>,
    grads: &mut ResidualLayer<T>,
) -> Result<Tensor<T>> {
    let skip = layer.skip.backward(&cache.z, d_skip)?;
    let res = layer.residual.backward(&cache.z, d_residual)?;
    let mut d_z = skip.input;
    d_z.add_assign(&res.input)?;
    let (d_f, d_g) = gated_activation_backward(&cache.filter_out, &cache.gate_out, &d_z)?;
    let filt = layer.filter.backward(&cache.input, &d_f)?;
    let gate = layer.gate.backward(&cache.input, &d_g)?;

    let mut d_x = d_residual.clone();
    d_x.add_assign(&filt.input)?;
    d_x.add_assign(&gate.input)?;

    grads.skip.weight.add_assign(&skip.weight)?;
    grads.skip.bias.add_assign(&skip.bias)?;
    grads.residual.weight.add_assign(&res.weight)?;
    grads.residual.bias.add_assign(&res.bias)?;
    grads.filter.weight.add_assign(&filt.weight)?;
    grads.filter.bias.add_assign(&filt.bias)?;
    grads.gate.weight.add_assign(&gate.weight)?;
    grads.gate.bias.add_assign(&gate.bias)?;
    Ok(d_x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub config: EncoderConfig,
    pub input_proj: ConvParams<T>,
    pub layers: Vec<ResidualLayer<T>>,
    pub post_proj: ConvParams<T>,
}

/// Everything the encoder backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache<T = f32> {
    pub input: Tensor<T>,
    pub layers: Vec<LayerCache<T>>,
    /// Sum of all skip outputs, before any nonlinearity.
    pub skip_sum: Tensor<T>,
    pub post_in: Tensor<T>,
    pub post_out: Tensor<T>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Glorot-initialized encoder, deterministic per seed.
    pub fn build(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut next = 0u64;
        let mut seed_for = || {
            next += 1;
            sub_seed(seed, next)
        };
        let input_proj = ConvParams::init(ConvSpec::pointwise(1, c), seed_for())?;
        let layers = cfg
            .dilations()
            .into_iter()
            .map(|d| {
                Ok(ResidualLayer {
                    filter: ConvParams::init(cfg.dilated_spec(d), seed_for())?,
                    gate: ConvParams::init(cfg.dilated_spec(d), seed_for())?,
                    residual: ConvParams::init(ConvSpec::pointwise(c, c), seed_for())?,
                    skip: ConvParams::init(ConvSpec::pointwise(c, c), seed_for())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let post_proj = ConvParams::init(ConvSpec::pointwise(c, c), seed_for())?;
        Ok(Self {
            config: cfg.clone(),
            input_proj,
            layers,
            post_proj,
        })
    }

    /// Same structure with every tensor zeroed; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
        z
    }

    pub fn convs(&self) -> Vec<(String, &ConvParams<T>)> {
        let mut out = vec![("encoder.input_proj".to_string(), &self.input_proj)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (part, conv) in ["filter", "gate", "residual", "skip"].iter().zip(layer.convs()) {
                out.push((format!("encoder.layers.{i}.{part}"), conv));
            }
        }
        out.push(("encoder.post_proj".to_string(), &self.post_proj));
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.convs()
            .into_iter()
            .flat_map(|(name, c)| [(format!("{name}.weight"), &c.weight), (format!("{name}.bias"), &c.bias)])
            .collect()
    }

    /// Mutable tensors in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        out.push(&mut self.input_proj.weight);
        out.push(&mut self.input_proj.bias);
        for layer in &mut self.layers {
            for conv in layer.convs_mut() {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
            }
        }
        out.push(&mut self.post_proj.weight);
        out.push(&mut self.post_proj.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_segment(&self, segment: &Tensor<T>) -> Result<()> {
        let (c, t) = segment.dims2()?;
        if c != 1 || t != self.config.seg_len {
            return Err(Error::Shape(format!(
                "encoder expects a [1, {}] segment, got {:?}",
                self.config.seg_len,
                segment.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, segment: &Tensor<T>) -> Result<(Tensor<T>, EncoderCache<T>)> {
        self.check_segment(segment)?;
        let (_, t) = segment.dims2()?;
        let mut h = self.input_proj.forward(segment)?;
        let mut skip_sum = Tensor::zeros(&[self.config.channels, t]);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (res, skip, cache) = residual_block_forward(&h, layer)?;
            skip_sum.add_assign(&skip)?;
            layers.push(cache);
            h = res;
        }
        let post_in = relu(&skip_sum);
        let post_out = self.post_proj.forward(&post_in)?;
        let out = relu(&post_out);
        Ok((
            out,
            EncoderCache {
                input: segment.clone(),
                layers,
                skip_sum,
                post_in,
                post_out,
            },
        ))
    }

    /// `[1, seg_len]` waveform segment to `[channels, seg_len]` feature map.
    pub fn forward(&self, segment: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(segment)?.0)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input segment.
    pub fn backward(&self, cache: &EncoderCache<T>, d_out: &Tensor<T>, grads: &mut Self) -> Result<Tensor<T>> {
        let d_post = relu_backward(&cache.post_out, d_out)?;
        let post = self.post_proj.backward(&cache.post_in, &d_post)?;
        grads.post_proj.weight.add_assign(&post.weight)?;
        grads.post_proj.bias.add_assign(&post.bias)?;
        let d_skip = relu_backward(&cache.skip_sum, &post.input)?;

        // the residual stream after the last layer feeds nothing
        let mut d_h = Tensor::zeros(d_skip.shape());
        for ((layer, lc), lg) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            d_h = residual_block_backward(layer, lc, &d_h, &d_skip, lg)?;
        }
        let inp = self.input_proj.backward(&cache.input, &d_h)?;
        grads.input_proj.weight.add_assign(&inp.weight)?;
        grads.input_proj.bias.add_assign(&inp.bias)?;
        Ok(inp.input)
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
            dilation: c.dilation,
            causal: c.causal,
        };
        EncoderParams {
            config: self.config.clone(),
            input_proj: conv(&self.input_proj),
            layers: self
                .layers
                .iter()
                .map(|l| ResidualLayer {
                    filter: conv(&l.filter),
                    gate: conv(&l.gate),
                    residual: conv(&l.residual),
                    skip: conv(&l.skip),
                })
                .collect(),
            post_proj: conv(&self.post_proj),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use crate::nn::init::uniform_tensor;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            n_layers: 3,
            channels: 4,
            kernel: 2,
            seg_len: 32,
        }
    }

    /// Random non-zero biases so the gradient check does not sit on ReLU kinks.
    fn randomized(cfg: &EncoderConfig, seed: u64) -> EncoderParams<f64> {
        let mut p = EncoderParams::<f64>::build(cfg, seed).unwrap();
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            if t.shape().len() == 1 {
                *t = uniform_tensor(t.shape(), 0.3, seed + i as u64);
            }
        }
        p
    }

    #[test]
    fn default_config_shapes() {
        let p = EncoderParams::<f32>::build(&EncoderConfig::default(), 1).unwrap();
        // dilations 1, 2, ..., 512
        assert_eq!(p.layers.len(), 10);
        for (i, l) in p.layers.iter().enumerate() {
            assert_eq!(l.filter.weight.shape(), &[40, 40, 2]);
            assert_eq!(l.gate.weight.shape(), &[40, 40, 2]);
            assert_eq!(l.filter.dilation, 1 << i);
            assert!(l.filter.causal && l.gate.causal);
        }
        assert_eq!(p.config.dilations().last(), Some(&512));
    }

    #[test]
    fn param_count_matches_enumeration() {
        for cfg in [EncoderConfig::default(), small_cfg()] {
            let p = EncoderParams::<f32>::build(&cfg, 0).unwrap();
            let enumerated: usize = p
                .convs()
                .iter()
                .map(|(_, c)| c.weight.len() + c.bias.len())
                .sum();
            assert_eq!(enumerated, cfg.param_count());
            assert_eq!(p.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = EncoderParams::<f32>::build(&small_cfg(), 5).unwrap();
        let b = EncoderParams::<f32>::build(&small_cfg(), 5).unwrap();
        let c = EncoderParams::<f32>::build(&small_cfg(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = small_cfg();
        cfg.channels = 0;
        assert!(matches!(EncoderParams::<f32>::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn receptive_field_examples() {
        let one = EncoderConfig {
            n_layers: 1,
            ..EncoderConfig::default()
        };
        assert_eq!(one.receptive_field(), 2);
        assert_eq!(EncoderConfig::default().receptive_field(), 1024);
        let k1 = EncoderConfig {
            kernel: 1,
            ..EncoderConfig::default()
        };
        assert_eq!(receptive_field(&k1), 1);
    }

    #[test]
    fn zero_block_is_identity_on_residual_path() {
        let spec = ConvSpec::new(4, 4, 2, 2, true);
        let layer = ResidualLayer {
            filter: ConvParams::<f64>::zeros(spec),
            gate: ConvParams::zeros(spec),
            residual: ConvParams::zeros(ConvSpec::pointwise(4, 4)),
            skip: ConvParams::zeros(ConvSpec::pointwise(4, 4)),
        };
        let x = uniform_tensor(&[4, 10], 1.0, 3);
        let (res, skip, _) = residual_block_forward(&x, &layer).unwrap();
        assert_eq!(res, x);
        assert!(skip.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_is_causal() {
        let p = randomized(&small_cfg(), 8);
        let layer = &p.layers[2];
        let x = uniform_tensor(&[4, 20], 1.0, 4);
        let (r0, s0, _) = residual_block_forward(&x, layer).unwrap();
        for t0 in 0..20 {
            let mut xp = x.clone();
            xp.row_mut(t0 % 4)[t0] += 0.7;
            let (r, s, _) = residual_block_forward(&xp, layer).unwrap();
            for c in 0..4 {
                assert_eq!(&r.row(c)[..t0], &r0.row(c)[..t0]);
                assert_eq!(&s.row(c)[..t0], &s0.row(c)[..t0]);
            }
        }
    }

    #[test]
    fn block_backward_matches_finite_differences() {
        let p = randomized(&small_cfg(), 21);
        let layer = p.layers[1].clone();
        let x = uniform_tensor::<f64>(&[4, 16], 1.0, 2);
        let w_res = uniform_tensor::<f64>(&[4, 16], 1.0, 3);
        let w_skip = uniform_tensor::<f64>(&[4, 16], 1.0, 4);
        // scalar objective: <w_res, residual_out> + <w_skip, skip_out>
        let objective = |ps: &[Tensor<f64>]| {
            let mut l = layer.clone();
            let [fw, fb, gw, gb, rw, rb, sw, sb, xin] = ps else { unreachable!() };
            l.filter.weight = fw.clone();
            l.filter.bias = fb.clone();
            l.gate.weight = gw.clone();
            l.gate.bias = gb.clone();
            l.residual.weight = rw.clone();
            l.residual.bias = rb.clone();
            l.skip.weight = sw.clone();
            l.skip.bias = sb.clone();
            let (r, s, cache) = residual_block_forward(xin, &l).unwrap();
            let v: f64 = r.data().iter().zip(w_res.data()).map(|(a, b)| a * b).sum::<f64>()
                + s.data().iter().zip(w_skip.data()).map(|(a, b)| a * b).sum::<f64>();
            let mut g = ResidualLayer {
                filter: ConvParams::zeros(l.filter.spec()),
                gate: ConvParams::zeros(l.gate.spec()),
                residual: ConvParams::zeros(l.residual.spec()),
                skip: ConvParams::zeros(l.skip.spec()),
            };
            let dx = residual_block_backward(&l, &cache, &w_res, &w_skip, &mut g).unwrap();
            let grads = vec![
                g.filter.weight, g.filter.bias, g.gate.weight, g.gate.bias,
                g.residual.weight, g.residual.bias, g.skip.weight, g.skip.bias, dx,
            ];
            (v, grads)
        };
        let params = vec![
            layer.filter.weight.clone(), layer.filter.bias.clone(),
            layer.gate.weight.clone(), layer.gate.bias.clone(),
            layer.residual.weight.clone(), layer.residual.bias.clone(),
            layer.skip.weight.clone(), layer.skip.bias.clone(), x,
        ];
        let names: Vec<String> = (0..params.len()).map(|i| format!("p{i}")).collect();
        let report = grad_check(objective, &params, &names, &GradCheckOptions::with_tolerance(1e-4));
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let p = EncoderParams::<f32>::build(&small_cfg(), 3).unwrap();
        let y = p.forward(&Tensor::zeros(&[1, 32])).unwrap();
        assert_eq!(y.shape(), &[4, 32]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_segment_length() {
        let p = EncoderParams::<f32>::build(&small_cfg(), 3).unwrap();
        assert!(matches!(p.forward(&Tensor::zeros(&[1, 31])), Err(Error::Shape(_))));
    }

    #[test]
    fn skip_sum_scales_linearly_with_skip_weights() {
        let p = EncoderParams::<f64>::build(&small_cfg(), 12).unwrap();
        let x = uniform_tensor::<f64>(&[1, 32], 1.0, 5);
        let base = p.forward_cached(&x).unwrap().1.skip_sum;
        let alpha = 2.5;
        let mut scaled = p.clone();
        for l in &mut scaled.layers {
            l.skip.weight.scale(alpha);
        }
        let s = scaled.forward_cached(&x).unwrap().1.skip_sum;
        for (a, b) in s.data().iter().zip(base.data()) {
            assert!((a - alpha * b).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_backward_matches_finite_differences() {
        let cfg = small_cfg();
        let p = randomized(&cfg, 33);
        let x = uniform_tensor::<f64>(&[1, 32], 1.0, 6);
        let w = uniform_tensor::<f64>(&[4, 32], 1.0, 7);
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut params: Vec<Tensor<f64>> = p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
        params.push(x);
        let mut all_names = names.clone();
        all_names.push("input".into());
        let objective = |ps: &[Tensor<f64>]| {
            let mut q = p.clone();
            for (dst, src) in q.tensors_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            let input = ps.last().unwrap();
            let (y, cache) = q.forward_cached(input).unwrap();
            let v = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
            let mut g = q.zeros_like();
            let dx = q.backward(&cache, &w, &mut g).unwrap();
            let mut grads: Vec<Tensor<f64>> = g.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
            grads.push(dx);
            (v, grads)
        };
        let report = grad_check(objective, &params, &all_names, &GradCheckOptions::with_tolerance(1e-4));
        assert!(report.passed(), "worst: {:?}", report.worst());
    }
}

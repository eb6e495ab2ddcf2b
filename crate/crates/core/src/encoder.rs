//! Strided convolutional encoder and the projection head used during
//! pretraining.
//!
//! The input record `M × 2 × T` is treated as an image with `M` channels,
//! height 2 (I/Q) and width `T`. The first convolution spans both I and Q
//! rows, so every later stage works on a `C × 1 × T'` map. Global average
//! pooling over time precedes the embedding map, so any `T` that survives
//! the stride chain is accepted.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{params_digest, read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Param, Tensor, Var};
use crate::scalar::Scalar;
use crate::signal::IqTensor;
use crate::NORM_EPS;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub antennas: usize,
    /// Nominal record length; only used for validation and echoes.
    pub time: usize,
    pub widths: Vec<usize>,
    /// Time stride of the first convolution in each stage.
    pub strides: Vec<usize>,
    /// Odd kernel width along time.
    pub kernel: usize,
    pub blocks_per_stage: usize,
    pub embedding_dim: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    /// Rescale each input to unit RMS before the first convolution.
    pub per_sample_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            antennas: 4,
            time: 256,
            widths: vec![24, 48, 96],
            strides: vec![2, 2, 2],
            kernel: 7,
            blocks_per_stage: 2,
            embedding_dim: 128,
            projection_hidden: 128,
            projection_dim: 64,
            per_sample_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::invalid("encoder needs at least one antenna"));
        }
        if self.widths.is_empty() {
            return Err(Error::invalid("encoder needs at least one stage"));
        }
        if self.strides.len() != self.widths.len() {
            return Err(Error::invalid(format!(
                "{} stage widths but {} strides",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) {
            return Err(Error::invalid("stage widths and strides must be positive"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel width {} must be odd", self.kernel)));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::invalid("blocks_per_stage must be at least 1"));
        }
        if self.embedding_dim < 2 || self.projection_dim < 2 {
            return Err(Error::invalid("embedding and projection dims must be at least 2"));
        }
        if self.time < self.min_time() {
            return Err(Error::invalid(format!(
                "time {} is below the minimum length {}",
                self.time,
                self.min_time()
            )));
        }
        Ok(())
    }

    /// Shortest record for which the last stage still sees one stride step.
    pub fn min_time(&self) -> usize {
        self.strides.iter().product()
    }

    /// Trainable scalars in the encoder alone (without projection head).
    pub fn encoder_parameter_count(&self) -> usize {
        let k = self.kernel;
        let mut count = 0;
        let mut in_ch = self.antennas;
        let mut first = true;
        for &w in &self.widths {
            for _ in 0..self.blocks_per_stage {
                let kh = if first { 2 } else { 1 };
                count += w * in_ch * kh * k + w;
                in_ch = w;
                first = false;
            }
        }
        count + linear_parameter_count(in_ch, self.embedding_dim, true)
    }

    pub fn head_parameter_count(&self) -> usize {
        if self.projection_hidden == 0 {
            return linear_parameter_count(self.embedding_dim, self.projection_dim, false);
        }
        linear_parameter_count(self.embedding_dim, self.projection_hidden, true)
            + linear_parameter_count(self.projection_hidden, self.projection_dim, true)
    }
}

pub fn linear_parameter_count(fan_in: usize, fan_out: usize, bias: bool) -> usize {
    fan_in * fan_out + if bias { fan_out } else { 0 }
}

/// Encoder plus projection head.
pub fn parameter_count(config: &EncoderConfig) -> usize {
    config.encoder_parameter_count() + config.head_parameter_count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Conv { stride: (usize, usize), padding: (usize, usize) },
    Linear,
}

/// A weight-bearing layer and where its tensors live in the parameter list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
    pub weight: usize,
    pub bias: Option<usize>,
    pub relu: bool,
}

/// Uniform `±sqrt(gain / fan_in)` weights, zero biases.
fn init_weight<S: Scalar>(shape: Vec<usize>, gain: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (gain / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    Ok(Tensor::new(shape, data)?.requiring_grad())
}

fn zero_bias<S: Scalar>(n: usize) -> Result<Tensor<S>> {
    Ok(Tensor::zeros(vec![n])?.requiring_grad())
}

const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

fn check_params<S: Scalar>(expected: &[(String, Vec<usize>)], params: &[Param<S>]) -> Result<()> {
    if expected.len() != params.len() {
        return Err(Error::HeaderMismatch(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), p) in expected.iter().zip(params) {
        if *name != p.name || shape.as_slice() != p.tensor.shape() {
            return Err(Error::HeaderMismatch(format!(
                "expected {name} {shape:?}, found {} {:?}",
                p.name,
                p.tensor.shape()
            )));
        }
    }
    Ok(())
}

/// Applies a sequence of layers to `x`, reading weights from `vars`.
pub(crate) fn apply_layers<S: Scalar>(g: &mut Graph<'_, S>, mut x: Var, layers: &[Layer], vars: &[Var]) -> Result<Var> {
    for layer in layers {
        let w = vars[layer.weight];
        let b = layer.bias.map(|i| vars[i]);
        x = match layer.op {
            LayerOp::Conv { stride, padding } => g.conv2d(x, w, b, stride, padding)?,
            LayerOp::Linear => g.linear(x, w, b)?,
        };
        if layer.relu {
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<S> {
    config: EncoderConfig,
    convs: Vec<Layer>,
    embed: Layer,
    params: Vec<Param<S>>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Self::layout(&config);
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = if shape.len() == 1 {
                zero_bias(shape[0])?
            } else if name.starts_with("embed") {
                init_weight(shape, LINEAR_GAIN, &mut rng)?
            } else {
                init_weight(shape, RELU_GAIN, &mut rng)?
            };
            params.push(Param::new(name, t));
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: EncoderConfig, params: Vec<Param<S>>) -> Result<Self> {
        config.validate()?;
        check_params(&Self::layout(&config), &params)?;
        let (convs, embed) = Self::layers_for(&config);
        Ok(Self {
            config,
            convs,
            embed,
            params,
        })
    }

    /// Parameter names and shapes in checkpoint order.
    fn layout(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut in_ch = config.antennas;
        let mut first = true;
        for (s, &w) in config.widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let kh = if first { 2 } else { 1 };
                out.push((format!("stage{s}.conv{b}.weight"), vec![w, in_ch, kh, config.kernel]));
                out.push((format!("stage{s}.conv{b}.bias"), vec![w]));
                in_ch = w;
                first = false;
            }
        }
        out.push(("embed.weight".into(), vec![config.embedding_dim, in_ch]));
        out.push(("embed.bias".into(), vec![config.embedding_dim]));
        out
    }

    fn layers_for(config: &EncoderConfig) -> (Vec<Layer>, Layer) {
        let mut convs = Vec::new();
        let pad = config.kernel / 2;
        for (s, &stride) in config.strides.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let i = convs.len();
                convs.push(Layer {
                    name: format!("stage{s}.conv{b}"),
                    op: LayerOp::Conv {
                        stride: (1, if b == 0 { stride } else { 1 }),
                        padding: (0, pad),
                    },
                    weight: 2 * i,
                    bias: Some(2 * i + 1),
                    relu: true,
                });
            }
        }
        let n = convs.len();
        let embed = Layer {
            name: "embed".into(),
            op: LayerOp::Linear,
            weight: 2 * n,
            bias: Some(2 * n + 1),
            relu: false,
        };
        (convs, embed)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    /// Every weight-bearing layer, convolutions first.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.convs.iter().chain(std::iter::once(&self.embed))
    }

    pub fn conv_layers(&self) -> &[Layer] {
        &self.convs
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn set_trainable(&mut self, on: bool) {
        for p in &mut self.params {
            p.tensor.set_requires_grad(on);
        }
    }

    /// Binds all parameters to `g` in checkpoint order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.tensor)).collect()
    }

    /// Pads missing antennas, checks the length and applies the optional
    /// RMS normalization.
    pub fn prepare(&self, x: &IqTensor<S>) -> Result<Tensor<S>> {
        if x.antennas() > self.config.antennas {
            return Err(Error::shape(
                "encode",
                format!("{} antennas exceed the encoder's {}", x.antennas(), self.config.antennas),
            ));
        }
        if x.time() < self.config.min_time() {
            return Err(Error::shape(
                "encode",
                format!("time {} is below the minimum length {}", x.time(), self.config.min_time()),
            ));
        }
        let mut t = x.zero_padded(self.config.antennas)?.to_tensor();
        if self.config.per_sample_norm {
            let ms = t.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / t.numel() as f64;
            let inv = S::from_f64_lossy(1.0 / ms.sqrt().max(NORM_EPS));
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        Ok(t)
    }

    /// Records the encoder on `g` using weight handles `vars` (checkpoint
    /// order) and returns the `D`-vector embedding.
    pub fn forward(&self, g: &mut Graph<'_, S>, x: Var, vars: &[Var]) -> Result<Var> {
        let h = apply_layers(g, x, &self.convs, vars)?;
        let h = g.global_avg_pool(h)?;
        apply_layers(g, h, std::slice::from_ref(&self.embed), vars)
    }

    pub fn encode(&self, x: &IqTensor<S>) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let input = g.input(self.prepare(x)?);
        let h = self.forward(&mut g, input, &vars)?;
        Ok(g.value(h)?.data().to_vec())
    }

    /// Embeds every record, in parallel, preserving order.
    pub fn encode_all(&self, xs: &[IqTensor<S>]) -> Result<Vec<Vec<S>>> {
        xs.par_iter().map(|x| self.encode(x)).collect()
    }

    pub fn digest(&self) -> String {
        params_digest(&self.params.iter().collect::<Vec<_>>())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(
            path,
            "encoder",
            serde_json::to_value(&self.config)?,
            &self.params.iter().collect::<Vec<_>>(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, params) = read_checkpoint(path)?;
        if header.kind != "encoder" {
            return Err(Error::HeaderMismatch(format!("expected an encoder checkpoint, found {}", header.kind)));
        }
        let config: EncoderConfig = serde_json::from_value(header.config)?;
        let mut enc = Self::from_params(config, params)?;
        enc.set_trainable(true);
        Ok(enc)
    }
}

/// Maps embeddings into the unit sphere where the contrastive loss lives.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead<S> {
    layers: Vec<Layer>,
    params: Vec<Param<S>>,
}

impl<S: Scalar> ProjectionHead<S> {
    /// Two-layer perceptron `D → hidden → P`, or a single bias-free linear
    /// map when `projection_hidden` is 0.
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let (d, hdim, p) = (config.embedding_dim, config.projection_hidden, config.projection_dim);
        if hdim == 0 {
            let w = init_weight(vec![p, d], LINEAR_GAIN, &mut rng)?;
            return Ok(Self {
                layers: vec![Layer {
                    name: "proj.0".into(),
                    op: LayerOp::Linear,
                    weight: 0,
                    bias: None,
                    relu: false,
                }],
                params: vec![Param::new("proj.0.weight", w)],
            });
        }
        let params = vec![
            Param::new("proj.0.weight", init_weight(vec![hdim, d], RELU_GAIN, &mut rng)?),
            Param::new("proj.0.bias", zero_bias(hdim)?),
            Param::new("proj.1.weight", init_weight(vec![p, hdim], LINEAR_GAIN, &mut rng)?),
            Param::new("proj.1.bias", zero_bias(p)?),
        ];
        let layers = vec![
            Layer {
                name: "proj.0".into(),
                op: LayerOp::Linear,
                weight: 0,
                bias: Some(1),
                relu: true,
            },
            Layer {
                name: "proj.1".into(),
                op: LayerOp::Linear,
                weight: 2,
                bias: Some(3),
                relu: false,
            },
        ];
        Ok(Self { layers, params })
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, S>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(&p.tensor)).collect()
    }

    pub fn forward(&self, g: &mut Graph<'_, S>, h: Var, vars: &[Var]) -> Result<Var> {
        let z = apply_layers(g, h, &self.layers, vars)?;
        g.l2_normalize(z)
    }

    pub fn project(&self, h: &[S]) -> Result<Vec<S>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let x = g.input(Tensor::vector(h.to_vec())?);
        let z = self.forward(&mut g, x, &vars)?;
        Ok(g.value(z)?.data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            widths: vec![4, 6],
            strides: vec![2, 2],
            kernel: 3,
            blocks_per_stage: 1,
            embedding_dim: 5,
            projection_hidden: 4,
            projection_dim: 3,
            time: 16,
            ..EncoderConfig::default()
        }
    }

    fn record(seed: u64, m: usize, t: usize) -> IqTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IqTensor::new(m, t, (0..m * 2 * t).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_count() {
        assert_eq!(linear_parameter_count(4, 3, true), 15);
    }

    #[test]
    fn counts_agree_with_construction() {
        for cfg in [EncoderConfig::default(), small()] {
            let enc = Encoder::<f64>::new(cfg.clone(), 1).unwrap();
            let head = ProjectionHead::<f64>::new(&cfg, 1).unwrap();
            let built: usize = head.params().iter().map(|p| p.tensor.numel()).sum::<usize>() + enc.parameter_count();
            assert_eq!(built, parameter_count(&cfg));
        }
    }

    #[test]
    fn wider_is_bigger() {
        let cfg = EncoderConfig::default();
        let mut wide = cfg.clone();
        wide.widths.iter_mut().for_each(|w| *w *= 2);
        assert!(parameter_count(&wide) > parameter_count(&cfg));
    }

    #[test]
    fn embedding_length_is_time_independent() {
        let enc = Encoder::<f64>::new(small(), 3).unwrap();
        let a = enc.encode(&record(1, 4, 128)).unwrap();
        let b = enc.encode(&record(2, 4, 256)).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(b.len(), 5);
        assert_eq!(enc.encode(&record(1, 4, 128)).unwrap(), a);
    }

    #[test]
    fn zero_input_and_padding() {
        let enc = Encoder::<f64>::new(small(), 3).unwrap();
        assert!(enc.encode(&IqTensor::zeros(4, 32)).unwrap().iter().all(|v| v.is_finite()));
        let single = record(5, 1, 32);
        let padded = single.zero_padded(4).unwrap();
        assert_eq!(enc.encode(&single).unwrap(), enc.encode(&padded).unwrap());
        assert!(enc.encode(&record(5, 5, 32)).is_err());
        assert!(enc.encode(&record(5, 4, 3)).is_err());
    }

    #[test]
    fn projection_is_unit_norm_and_scale_invariant() {
        let cfg = small();
        let head = ProjectionHead::<f64>::new(&cfg, 2).unwrap();
        let z = head.project(&[0.3, -1.0, 2.0, 0.1, 0.5]).unwrap();
        assert!((z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);

        let lin = ProjectionHead::<f64>::new(&EncoderConfig { projection_hidden: 0, ..cfg }, 2).unwrap();
        let h = [0.3, -1.0, 2.0, 0.1, 0.5];
        let h3: Vec<f64> = h.iter().map(|v| v * 3.0).collect();
        let (a, b) = (lin.project(&h).unwrap(), lin.project(&h3).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = Encoder::<f64>::new(small(), 9).unwrap();
        let path = dir.path().join("enc.ckpt");
        enc.save(&path).unwrap();
        let back = Encoder::<f64>::load(&path).unwrap();
        assert_eq!(back.digest(), enc.digest());
        assert_eq!(back.params(), enc.params());
    }

    #[test]
    fn rolled_input_changes_embedding() {
        let enc = Encoder::<f64>::new(small(), 4).unwrap();
        let x = record(8, 4, 32);
        let rolled = crate::augment::time_roll(&x, 5, 1).unwrap();
        assert_ne!(enc.encode(&x).unwrap(), enc.encode(&rolled).unwrap());
    }
}

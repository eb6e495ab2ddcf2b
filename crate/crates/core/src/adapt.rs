//! Adapting a frozen encoder to a labeled task: linear probes, low-rank
//! adapters on the encoder weights, and a supervised from-scratch baseline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{IqDataset, SplitManifest};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, cosine_anneal, AdamWConfig, Graph, OptimizerState, Param, Tensor, Var};
use crate::scalar::Scalar;
use crate::signal::{record_rng, IqTensor};
use crate::ssl::{collect_grads, reduce_in_chunks, zero_grads};

/// Per-class few-shot subset of a train partition plus the full test side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotSplit {
    pub field: String,
    pub k: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `min(k, available)` train records per class without replacement.
pub fn few_shot_split(dataset: &IqDataset, manifest: &SplitManifest, field: &str, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    manifest.validate(dataset.len())?;
    let f = dataset.field_index(field)?;
    let classes = dataset.num_classes(field)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in &manifest.train {
        let y = dataset.label(i, f);
        if y >= 0 {
            by_class[y as usize].push(i);
        }
    }
    let mut train = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(Error::invalid(format!("class {c} of `{field}` has no train records")));
        }
        members.sort_unstable();
        members.shuffle(&mut record_rng(seed, c as u64));
        train.extend_from_slice(&members[..k.min(members.len())]);
    }
    train.sort_unstable();
    Ok(FewShotSplit {
        field: field.to_string(),
        k,
        seed,
        train,
        test: manifest.test.clone(),
    })
}

/// Top-1 accuracy and a `K × K` confusion matrix (rows: truth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(predictions: &[usize], truth: &[usize], classes: usize) -> Result<Evaluation> {
    if truth.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty test set"));
    }
    if predictions.len() != truth.len() {
        return Err(Error::shape("evaluate", format!("{} predictions, {} labels", predictions.len(), truth.len())));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::invalid(format!("label {} outside {classes} classes", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        confusion,
    })
}

/// Optimization settings shared by probe, adapter and supervised training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Floor of the per-epoch cosine schedule.
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

fn default_lr_min() -> f64 {
    1e-7
}

impl FitConfig {
    pub fn probe(seed: u64) -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 32,
            seed,
            lr_min: default_lr_min(),
            optimizer: AdamWConfig::default(),
        }
    }

    fn lr_at(&self, epoch: usize) -> Result<f64> {
        cosine_anneal(self.lr, epoch, self.epochs, self.lr_min)
    }

    /// Adapter and supervised defaults.
    pub fn end_to_end(seed: u64) -> Self {
        Self {
            lr: 1e-2,
            ..Self::probe(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Affine classifier `W·h + b`, `W` stored `K × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ProbeHead<S> {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::invalid(format!("probe needs dim ≥ 1 and ≥ 2 classes, got {dim} and {classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / dim as f64).sqrt();
        let w = (0..dim * classes).map(|_| S::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
        Ok(Self {
            params: vec![
                Param::new("head.weight", Tensor::new(vec![classes, dim], w)?.requiring_grad()),
                Param::new("head.bias", Tensor::zeros(vec![classes])?.requiring_grad()),
            ],
        })
    }

    pub fn classes(&self) -> usize {
        self.params[0].tensor.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.params[0].tensor.shape()[1]
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

    pub fn logits(&self, h: &[S]) -> Vec<S> {
        let (w, b) = (self.params[0].tensor.data(), self.params[1].tensor.data());
        let d = self.dim();
        (0..self.classes())
            .map(|c| w[c * d..(c + 1) * d].iter().zip(h).fold(b[c], |acc, (&wi, &hi)| acc + wi * hi))
            .collect()
    }

    pub fn predict(&self, h: &[S]) -> usize {
        argmax(&self.logits(h))
    }
}

fn argmax<S: Scalar>(v: &[S]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, S::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn class_labels(dataset: &IqDataset, field: &str, indices: &[usize]) -> Result<Vec<usize>> {
    let f = dataset.field_index(field)?;
    indices
        .iter()
        .map(|&i| {
            let y = dataset.label(i, f);
            usize::try_from(y).map_err(|_| Error::invalid(format!("record {i} is unlabeled for `{field}`")))
        })
        .collect()
}

fn check_classes(labels: &[usize]) -> Result<()> {
    let first = labels.first().ok_or_else(|| Error::invalid("empty training split"))?;
    if labels.iter().all(|y| y == first) {
        return Err(Error::invalid("training split holds a single class"));
    }
    Ok(())
}

/// Result of one adaptation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub evaluation: Evaluation,
    /// Test accuracy after each epoch (probe) or at the end (others).
    pub curve: Vec<f64>,
    pub params_trainable: usize,
}

/// Metrics record written per adaptation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptMetrics {
    pub task: String,
    pub k: usize,
    pub seed: u64,
    pub method: String,
    pub accuracy: f64,
    pub params_trainable: usize,
}

/// Per-dimension z-scoring fitted on the training embeddings.
struct Standardizer<S> {
    mean: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> Standardizer<S> {
    fn fit(rows: &[Vec<S>]) -> Self {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v.as_f64() / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v.as_f64() - m).powi(2) / n;
            }
        }
        // Constant dimensions are centered but not rescaled.
        let inv_std = var
            .iter()
            .map(|&v| S::from_f64_lossy(if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }))
            .collect();
        Self {
            mean: mean.into_iter().map(S::from_f64_lossy).collect(),
            inv_std,
        }
    }

    fn apply(&self, h: &[S]) -> Vec<S> {
        h.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((&v, &m), &s)| (v - m) * s)
            .collect()
    }

    /// Rewrites `W·z(h) + b` as an affine map of the raw embedding.
    fn fold_into(&self, head: &mut ProbeHead<S>) {
        let (k, d) = (head.classes(), head.dim());
        let mut shift = vec![S::zero(); k];
        let w = head.params[0].tensor.data_mut();
        for c in 0..k {
            for j in 0..d {
                w[c * d + j] = w[c * d + j] * self.inv_std[j];
                shift[c] = shift[c] + w[c * d + j] * self.mean[j];
            }
        }
        let b = head.params[1].tensor.data_mut();
        for c in 0..k {
            b[c] = b[c] - shift[c];
        }
    }
}

/// Trains a probe on cached embeddings with minibatch AdamW.
///
/// Embeddings are standardized with training-set statistics; the returned
/// head has the standardization folded in and acts on raw embeddings.
pub fn fit_probe<S: Scalar>(
    train: &[Vec<S>],
    train_y: &[usize],
    test: &[Vec<S>],
    test_y: &[usize],
    classes: usize,
    config: &FitConfig,
) -> Result<(ProbeHead<S>, FitReport)> {
    config.validate()?;
    check_classes(train_y)?;
    let raw_test = test;
    let dim = train[0].len();
    let standardizer = Standardizer::fit(train);
    let train: Vec<Vec<S>> = train.iter().map(|h| standardizer.apply(h)).collect();
    let test: Vec<Vec<S>> = test.iter().map(|h| standardizer.apply(h)).collect();
    let mut head = ProbeHead::new(dim, classes, config.seed)?;
    let mut state = OptimizerState::new(config.optimizer, head.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch)?;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x: Vec<S> = batch.iter().flat_map(|&i| train[i].iter().copied()).collect();
            let grads = {
                let mut g = Graph::new();
                let vars = head.bind(&mut g);
                let xv = g.input(Tensor::new(vec![batch.len(), dim], x)?);
                let logits = g.linear(xv, vars[0], Some(vars[1]))?;
                let loss = g.softmax_cross_entropy(logits, batch.iter().map(|&i| train_y[i]).collect())?;
                let gr = g.backward(loss)?;
                collect_grads(&gr, &vars, &head.params().iter().collect::<Vec<_>>())
            };
            let mut params: Vec<&mut Param<S>> = head.params_mut().iter_mut().collect();
            adamw_step(&mut params, &grads, &mut state, lr)?;
        }
        let preds: Vec<usize> = test.iter().map(|h| head.predict(h)).collect();
        curve.push(evaluate(&preds, test_y, classes)?.accuracy);
    }
    standardizer.fold_into(&mut head);
    let preds: Vec<usize> = raw_test.iter().map(|h| head.predict(h)).collect();
    let evaluation = evaluate(&preds, test_y, classes)?;
    let params_trainable = head.params().iter().map(|p| p.tensor.numel()).sum();
    Ok((
        head,
        FitReport {
            evaluation,
            curve,
            params_trainable,
        },
    ))
}

fn gather<S: Scalar>(dataset: &IqDataset, indices: &[usize]) -> Vec<IqTensor<S>> {
    indices.iter().map(|&i| dataset.sample(i).cast()).collect()
}

/// Frozen-encoder linear probe on a few-shot split.
pub fn train_linear_probe<S: Scalar>(
    encoder: &Encoder<S>,
    dataset: &IqDataset,
    split: &FewShotSplit,
    config: &FitConfig,
) -> Result<(ProbeHead<S>, FitReport)> {
    let classes = dataset.num_classes(&split.field)?;
    let train_y = class_labels(dataset, &split.field, &split.train)?;
    check_classes(&train_y)?;
    let test_y = class_labels(dataset, &split.field, &split.test)?;
    let train = encoder.encode_all(&gather(dataset, &split.train))?;
    let test = encoder.encode_all(&gather(dataset, &split.test))?;
    fit_probe(&train, &train_y, &test, &test_y, classes, config)
}

/// Which encoder layers receive adapters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoraTargets {
    #[default]
    Convs,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default)]
    pub targets: LoraTargets,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            alpha: 1.0,
            targets: LoraTargets::Convs,
        }
    }
}

/// Low-rank factors for one wrapped weight.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraLayer<S> {
    pub layer: String,
    /// Index of the wrapped weight in the encoder's parameter list.
    pub weight: usize,
    pub shape: Vec<usize>,
    pub a: Param<S>,
    pub b: Param<S>,
}

impl<S: Scalar> LoraLayer<S> {
    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn fan_out(&self) -> usize {
        self.shape[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<S> {
    pub rank: usize,
    pub alpha: f64,
    pub layers: Vec<LoraLayer<S>>,
}

/// Attaches rank-`r` factors to the selected weights. `B` starts at zero,
/// so the adapted encoder initially computes exactly the base function.
pub fn lora_wrap<S: Scalar>(encoder: &Encoder<S>, config: &LoraConfig, seed: u64) -> Result<LoraAdapter<S>> {
    let r = config.rank;
    if r == 0 {
        return Err(Error::invalid("adapter rank must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let chosen: Vec<_> = match config.targets {
        LoraTargets::Convs => encoder.conv_layers().iter().collect(),
        LoraTargets::All => encoder.layers().collect(),
    };
    for layer in chosen {
        let shape = encoder.params()[layer.weight].tensor.shape().to_vec();
        let fan_out = shape[0];
        let fan_in: usize = shape[1..].iter().product();
        if r > fan_in.min(fan_out) {
            return Err(Error::invalid(format!(
                "rank {r} exceeds min(fan_in, fan_out) = {} for {}",
                fan_in.min(fan_out),
                layer.name
            )));
        }
        let bound = (1.0 / fan_in as f64).sqrt();
        let a = (0..r * fan_in).map(|_| S::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
        layers.push(LoraLayer {
            layer: layer.name.clone(),
            weight: layer.weight,
            a: Param::new(format!("{}.lora_a", layer.name), Tensor::new(vec![r, fan_in], a)?.requiring_grad()),
            b: Param::new(format!("{}.lora_b", layer.name), Tensor::zeros(vec![fan_out, r])?.requiring_grad()),
            shape,
        });
    }
    Ok(LoraAdapter {
        rank: r,
        alpha: config.alpha,
        layers,
    })
}

impl<S: Scalar> LoraAdapter<S> {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.layers.iter().flat_map(|l| [&l.a, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.a, &mut l.b]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces the wrapped entries of `encoder_vars` with `W + (α/r)·B·A`
    /// and returns the adapter handles in [`Self::params`] order.
    pub fn apply<'a>(&'a self, g: &mut Graph<'a, S>, encoder_vars: &mut [Var]) -> Result<Vec<Var>> {
        let mut vars = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            let a = g.param(&l.a.tensor);
            let b = g.param(&l.b.tensor);
            let ba = g.matmul(b, a)?;
            let delta = g.scale(ba, self.scaling())?;
            let delta = g.reshape(delta, l.shape.clone())?;
            encoder_vars[l.weight] = g.add(encoder_vars[l.weight], delta)?;
            vars.extend([a, b]);
        }
        Ok(vars)
    }

    /// Encoder whose weights absorb the adapters.
    pub fn merge(&self, encoder: &Encoder<S>) -> Result<Encoder<S>> {
        let mut params = encoder.params().to_vec();
        let s = S::from_f64_lossy(self.scaling());
        for l in &self.layers {
            let (fan_in, fan_out) = (l.fan_in(), l.fan_out());
            let ba = crate::numerics::kernels::matmul(l.b.tensor.data(), l.a.tensor.data(), fan_out, self.rank, fan_in);
            let w = params[l.weight].tensor.data_mut();
            w.iter_mut().zip(&ba).for_each(|(wi, &d)| *wi += s * d);
        }
        Encoder::from_params(encoder.config().clone(), params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, base_digest: &str) -> Result<()> {
        let config = serde_json::json!({
            "rank": self.rank,
            "alpha": self.alpha,
            "base_digest": base_digest,
            "layers": self.layers.iter().map(|l| serde_json::json!({
                "layer": l.layer, "weight": l.weight, "shape": l.shape,
            })).collect::<Vec<_>>(),
        });
        crate::checkpoint::write_checkpoint(path, "adapter", config, &self.params())
    }
}

/// Cross-entropy training of `head` on top of `encoder`, optionally through
/// an adapter. Gradients reach the encoder only when `train_encoder` is set.
fn fit_end_to_end<S: Scalar>(
    encoder: &mut Encoder<S>,
    mut adapter: Option<&mut LoraAdapter<S>>,
    head: &mut ProbeHead<S>,
    samples: &[IqTensor<S>],
    labels: &[usize],
    train_encoder: bool,
    config: &FitConfig,
) -> Result<()> {
    config.validate()?;
    encoder.set_trainable(train_encoder);
    let mut state = {
        let mut p: Vec<&Param<S>> = head.params().iter().collect();
        if train_encoder {
            p.extend(encoder.params());
        }
        if let Some(a) = adapter.as_deref() {
            p.extend(a.params());
        }
        OptimizerState::new(config.optimizer, p)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch)?;
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = S::one() / S::from_usize_lossy(batch.len());
            let grads = {
                let enc: &Encoder<S> = encoder;
                let ad = adapter.as_deref();
                let hd: &ProbeHead<S> = head;
                let mut tracked: Vec<&Param<S>> = hd.params().iter().collect();
                if train_encoder {
                    tracked.extend(enc.params());
                }
                if let Some(a) = ad {
                    tracked.extend(a.params());
                }
                let mut zero = zero_grads(&tracked);
                zero.push(vec![S::zero()]);
                reduce_in_chunks(batch, &zero, |&i| {
                    let mut g = Graph::new();
                    let mut ev = enc.bind(&mut g);
                    let av = match ad {
                        Some(a) => a.apply(&mut g, &mut ev)?,
                        None => Vec::new(),
                    };
                    let hv = hd.bind(&mut g);
                    let x = g.input(enc.prepare(&samples[i])?);
                    let h = enc.forward(&mut g, x, &ev)?;
                    let logits = g.linear(h, hv[0], Some(hv[1]))?;
                    let logits = g.reshape(logits, vec![1, hd.classes()])?;
                    let loss = g.softmax_cross_entropy(logits, vec![labels[i]])?;
                    let lv = g.value(loss)?.data()[0];
                    let gr = g.backward_from(loss, vec![weight])?;
                    let mut vars = hv.clone();
                    if train_encoder {
                        vars.extend(&ev[..enc.params().len()]);
                    }
                    vars.extend(av);
                    let mut out = collect_grads(&gr, &vars, &tracked);
                    out.push(vec![lv * weight]);
                    Ok(out)
                })?
            };
            let loss = grads.last().expect("loss slot")[0];
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: loss.as_f64(),
                    epoch,
                    batch: b,
                    lr: config.lr,
                    tau: f64::NAN,
                });
            }
            let mut params: Vec<&mut Param<S>> = head.params_mut().iter_mut().collect();
            if train_encoder {
                params.extend(encoder.params_mut().iter_mut());
            }
            if let Some(a) = adapter.as_deref_mut() {
                params.extend(a.params_mut());
            }
            adamw_step(&mut params, &grads[..grads.len() - 1], &mut state, lr)?;
        }
    }
    encoder.set_trainable(true);
    Ok(())
}

fn head_report<S: Scalar>(
    encoder: &Encoder<S>,
    head: &ProbeHead<S>,
    dataset: &IqDataset,
    split: &FewShotSplit,
    params_trainable: usize,
) -> Result<FitReport> {
    let classes = head.classes();
    let test_y = class_labels(dataset, &split.field, &split.test)?;
    let test = encoder.encode_all(&gather(dataset, &split.test))?;
    let preds: Vec<usize> = test.iter().map(|h| head.predict(h)).collect();
    let evaluation = evaluate(&preds, &test_y, classes)?;
    Ok(FitReport {
        curve: vec![evaluation.accuracy],
        evaluation,
        params_trainable,
    })
}

/// Trains adapters and a task head over a frozen encoder.
pub fn train_lora<S: Scalar>(
    encoder: &Encoder<S>,
    dataset: &IqDataset,
    split: &FewShotSplit,
    lora: &LoraConfig,
    config: &FitConfig,
) -> Result<(LoraAdapter<S>, ProbeHead<S>, FitReport)> {
    let classes = dataset.num_classes(&split.field)?;
    let labels = class_labels(dataset, &split.field, &split.train)?;
    check_classes(&labels)?;
    let samples = gather(dataset, &split.train);
    let mut adapter = lora_wrap(encoder, lora, config.seed)?;
    let mut head = ProbeHead::new(encoder.config().embedding_dim, classes, config.seed)?;
    let mut base = encoder.clone();
    fit_end_to_end(&mut base, Some(&mut adapter), &mut head, &samples, &labels, false, config)?;
    debug_assert_eq!(base.digest(), encoder.digest());
    let merged = adapter.merge(encoder)?;
    let trainable = adapter.parameter_count() + head.params().iter().map(|p| p.tensor.numel()).sum::<usize>();
    let report = head_report(&merged, &head, dataset, split, trainable)?;
    Ok((adapter, head, report))
}

/// Trains a freshly initialized encoder and head end to end.
pub fn train_supervised_baseline<S: Scalar>(
    encoder_config: &EncoderConfig,
    dataset: &IqDataset,
    split: &FewShotSplit,
    config: &FitConfig,
) -> Result<(Encoder<S>, ProbeHead<S>, FitReport)> {
    let classes = dataset.num_classes(&split.field)?;
    let labels = class_labels(dataset, &split.field, &split.train)?;
    check_classes(&labels)?;
    let samples = gather(dataset, &split.train);
    let mut encoder = Encoder::new(encoder_config.clone(), config.seed)?;
    let mut head = ProbeHead::new(encoder_config.embedding_dim, classes, config.seed)?;
    fit_end_to_end(&mut encoder, None, &mut head, &samples, &labels, true, config)?;
    let trainable = encoder.parameter_count() + head.params().iter().map(|p| p.tensor.numel()).sum::<usize>();
    let report = head_report(&encoder, &head, dataset, split, trainable)?;
    Ok((encoder, head, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_examples() {
        let truth = vec![0, 1, 2, 0, 1, 2];
        let perfect = evaluate(&truth, &truth, 3).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        let constant = evaluate(&[1; 6], &truth, 3).unwrap();
        assert!((constant.accuracy - 1.0 / 3.0).abs() < 1e-15);
        let e = evaluate(&[0, 1, 1, 0, 2, 2], &truth, 3).unwrap();
        let trace: usize = (0..3).map(|c| e.confusion[c][c]).sum();
        let total: usize = e.confusion.iter().flatten().sum();
        assert_eq!(e.accuracy, trace as f64 / total as f64);
        for (c, row) in e.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
        }
        assert!(evaluate(&[], &[], 3).is_err());
    }

    #[test]
    fn folded_standardization_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.gen_range(-3.0..5.0), 2.5, rng.gen_range(0.0..0.01)])
            .collect();
        let s = Standardizer::fit(&rows);
        let mut head = ProbeHead::<f64>::new(3, 4, 1).unwrap();
        head.params[1].tensor.data_mut().copy_from_slice(&[0.3, -0.2, 0.1, 0.0]);
        let explicit: Vec<Vec<f64>> = rows.iter().map(|h| head.logits(&s.apply(h))).collect();
        s.fold_into(&mut head);
        for (h, want) in rows.iter().zip(&explicit) {
            for (a, b) in head.logits(h).iter().zip(want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn probe_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            xs.push(vec![center + rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)]);
            ys.push(c);
        }
        let (head, report) = fit_probe::<f64>(&xs, &ys, &xs, &ys, 2, &FitConfig::probe(1)).unwrap();
        assert_eq!(report.evaluation.accuracy, 1.0);
        assert_eq!(report.curve.len(), 100);
        assert_eq!(head.classes(), 2);
        assert!(fit_probe::<f64>(&xs[..1], &ys[..1], &xs, &ys, 2, &FitConfig::probe(1)).is_err());
    }
}

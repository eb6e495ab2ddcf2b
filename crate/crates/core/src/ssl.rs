//! Contrastive pretraining: two augmented views per record, a shared
//! encoder and projection head, and the InfoNCE objective over the batch.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_view, AugmentationPolicy};
use crate::encoder::{Encoder, ProjectionHead};
use crate::error::{Error, Result};
use crate::numerics::kernels::{self, info_nce_from_similarity};
use crate::numerics::{adamw_step, cosine_anneal, AdamWConfig, Graph, OptimizerState, Param, Var};
use crate::scalar::Scalar;
use crate::signal::{record_rng, IqTensor};
use crate::NORM_EPS;

/// Views per gradient-reduction chunk; fixed so sums are thread-count independent.
pub(crate) const REDUCE_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
    pub policy: AugmentationPolicy,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Stop once the relative epoch-to-epoch loss change stays below 1e-4
    /// for three consecutive epochs.
    #[serde(default)]
    pub early_stop: bool,
}

fn default_lr_min() -> f64 {
    1e-7
}

impl SslConfig {
    /// Learning rate and temperature of the matching preset.
    pub fn for_preset(name: &str, epochs: usize, seed: u64) -> Result<Self> {
        let policy = AugmentationPolicy::preset(name)?;
        let (lr, temperature) = match policy.task {
            crate::augment::Task::Mod | crate::augment::Task::Aoa => (0.1, 1.5),
            crate::augment::Task::Joint => (0.5, 0.12),
        };
        Ok(Self {
            batch_size: 64,
            temperature,
            epochs,
            lr,
            lr_min: default_lr_min(),
            policy,
            seed,
            optimizer: AdamWConfig::default(),
            early_stop: false,
        })
    }

    pub fn validate(&self, time: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lr > 0.0) || self.lr < self.lr_min {
            return Err(Error::invalid(format!("lr {} must be positive and above lr_min {}", self.lr, self.lr_min)));
        }
        self.policy.validate(time)
    }
}

/// Pairwise cosine similarities of the rows of `z` (`rows × d`).
pub fn cosine_similarity_matrix<S: Scalar>(z: &[S], rows: usize, d: usize) -> Result<Vec<S>> {
    if rows == 0 || d == 0 || z.len() != rows * d {
        return Err(Error::shape("cosine_similarity_matrix", format!("{} values for {rows} x {d}", z.len())));
    }
    if let Some(i) = (0..rows).find(|&i| z[i * d..(i + 1) * d].iter().all(|v| v.is_zero())) {
        return Err(Error::invalid(format!("row {i} has zero norm")));
    }
    let (zn, _) = kernels::l2_normalize_rows(z, d, S::from_f64_lossy(NORM_EPS));
    Ok(kernels::matmul_nt(&zn, &zn, rows, d, rows))
}

/// Mean InfoNCE over a `2N × 2N` similarity matrix whose positives are the
/// consecutive pairs `(0,1), (2,3), …`.
pub fn info_nce_loss<S: Scalar>(sim: &[S], rows: usize, tau: f64) -> Result<S> {
    if rows == 0 {
        return Err(Error::invalid("InfoNCE needs at least one pair"));
    }
    if rows % 2 != 0 || sim.len() != rows * rows {
        return Err(Error::shape("info_nce_loss", format!("{} entries for {rows} rows", sim.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(info_nce_from_similarity(sim, rows, S::from_f64_lossy(tau)).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for e in trace {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.mean_loss, e.lr);
    }
    out
}

pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[EpochLoss]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loss_trace_csv(trace)).map_err(|e| Error::io(path, e))
}

pub struct Pretrained<S> {
    pub encoder: Encoder<S>,
    pub head: ProjectionHead<S>,
    pub trace: Vec<EpochLoss>,
}

/// Adds `src` into `dst` element-wise, slot by slot.
pub(crate) fn add_grads<S: Scalar>(dst: &mut [Vec<S>], src: &[Vec<S>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
    }
}

/// Gradient of every handle in `vars`, zeros where none flowed.
pub(crate) fn collect_grads<S: Scalar>(
    grads: &crate::numerics::Gradients<S>,
    vars: &[Var],
    params: &[&Param<S>],
) -> Vec<Vec<S>> {
    vars.iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).map_or_else(|| vec![S::zero(); p.tensor.numel()], <[S]>::to_vec))
        .collect()
}

/// Sums per-item gradient lists in fixed chunks, then chunk totals in order.
pub(crate) fn reduce_in_chunks<S, T, F>(items: &[T], zero: &[Vec<S>], f: F) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    T: Sync,
    F: Fn(&T) -> Result<Vec<Vec<S>>> + Sync,
{
    let partials: Vec<Vec<Vec<S>>> = items
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = zero.to_vec();
            for item in chunk {
                add_grads(&mut acc, &f(item)?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = zero.to_vec();
    for p in &partials {
        add_grads(&mut total, p);
    }
    Ok(total)
}

pub(crate) fn zero_grads<S: Scalar>(params: &[&Param<S>]) -> Vec<Vec<S>> {
    params.iter().map(|p| vec![S::zero(); p.tensor.numel()]).collect()
}

/// Loss and parameter gradients (encoder then head) for `2N` views laid out
/// as consecutive positive pairs.
pub fn contrastive_step<S: Scalar>(
    encoder: &Encoder<S>,
    head: &ProjectionHead<S>,
    views: &[IqTensor<S>],
    tau: f64,
) -> Result<(f64, Vec<Vec<S>>)> {
    let rows = views.len();
    if rows < 2 || rows % 2 != 0 {
        return Err(Error::invalid(format!("need an even number of views, got {rows}")));
    }
    let params: Vec<&Param<S>> = encoder.params().iter().chain(head.params()).collect();
    let n_enc = encoder.params().len();

    let tapes: Vec<(Graph<'_, S>, Vec<Var>, Var)> = views
        .par_iter()
        .map(|x| {
            let mut g = Graph::new();
            let mut vars = encoder.bind(&mut g);
            vars.extend(head.bind(&mut g));
            let input = g.input(encoder.prepare(x)?);
            let h = encoder.forward(&mut g, input, &vars[..n_enc])?;
            let z = head.forward(&mut g, h, &vars[n_enc..])?;
            Ok((g, vars, z))
        })
        .collect::<Result<_>>()?;

    let p = tapes[0].0.value(tapes[0].2)?.numel();
    let mut z = Vec::with_capacity(rows * p);
    for (g, _, zv) in &tapes {
        z.extend_from_slice(g.value(*zv)?.data());
    }
    let (loss, dz) = kernels::info_nce(&z, rows, p, S::from_f64_lossy(tau), S::from_f64_lossy(NORM_EPS));

    let indexed: Vec<(usize, &(Graph<'_, S>, Vec<Var>, Var))> = tapes.iter().enumerate().collect();
    let grads = reduce_in_chunks(&indexed, &zero_grads(&params), |(i, (g, vars, zv))| {
        let seed = dz[i * p..(i + 1) * p].to_vec();
        let gr = g.backward_from(*zv, seed)?;
        Ok(collect_grads(&gr, vars, &params))
    })?;
    Ok((loss.as_f64(), grads))
}

/// Runs contrastive pretraining and returns the trained networks with the
/// per-epoch loss trace.
pub fn pretrain<S: Scalar>(
    samples: &[IqTensor<S>],
    mut encoder: Encoder<S>,
    mut head: ProjectionHead<S>,
    config: &SslConfig,
) -> Result<Pretrained<S>> {
    if samples.is_empty() {
        return Err(Error::invalid("pretraining needs at least one record"));
    }
    config.validate(samples[0].time())?;
    let mut state = OptimizerState::new(config.optimizer, encoder.params().iter().chain(head.params()));
    let n_enc = encoder.params().len();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        let lr = cosine_anneal(config.lr, epoch, config.epochs, config.lr_min)?;
        let mut shuffle_rng = record_rng(config.seed, u64::MAX - epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        // A trailing batch of one record has no negatives and is skipped.
        for (b, batch) in order.chunks(config.batch_size).filter(|c| c.len() >= 2).enumerate() {
            let views: Vec<IqTensor<S>> = batch
                .par_iter()
                .flat_map_iter(|&i| {
                    let stream = (epoch as u64) << 32 | i as u64;
                    let mut rng = record_rng(config.seed, stream);
                    let (a, _) = sample_view(&samples[i], &config.policy, &mut rng);
                    let (c, _) = sample_view(&samples[i], &config.policy, &mut rng);
                    [a, c]
                })
                .collect();
            let (loss, grads) = contrastive_step(&encoder, &head, &views, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch,
                    batch: b,
                    lr,
                    tau: config.temperature,
                });
            }
            let mut params: Vec<&mut Param<S>> = encoder.params_mut().iter_mut().chain(head.params_mut()).collect();
            adamw_step(&mut params, &grads, &mut state, lr)?;
            debug_assert_eq!(params.len() - n_enc, head.params().len());
            total += loss;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::invalid("no batch holds two records; lower the batch size or add data"));
        }
        trace.push(EpochLoss {
            epoch: epoch + 1,
            mean_loss: total / batches as f64,
            lr,
        });
        if config.early_stop && plateaued(&trace) {
            break;
        }
    }
    Ok(Pretrained { encoder, head, trace })
}

fn plateaued(trace: &[EpochLoss]) -> bool {
    if trace.len() < 4 {
        return false;
    }
    trace[trace.len() - 4..]
        .windows(2)
        .all(|w| ((w[1].mean_loss - w[0].mean_loss) / w[0].mean_loss.abs().max(NORM_EPS)).abs() < 1e-4)
}

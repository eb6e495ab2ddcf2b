//! End-to-end experiment drivers: pretrain-then-probe runs, augmentation
//! sweeps, the augmentation ablation grid and the clustering report.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapt::{few_shot_split, train_linear_probe, FitConfig};
use crate::analysis::{choose_anchors, kmeans, pca_project, pseudo_label, silhouette_sweep, Pca, SweepResult};
use crate::augment::{AugmentationPolicy, Task};
use crate::config::{label_field, AblateSection, AnalysisSection, SweepAxis, SweepSection};
use crate::dataio::{IqDataset, SplitManifest};
use crate::encoder::{Encoder, EncoderConfig, ProjectionHead};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{record_rng, IqTensor};
use crate::ssl::{pretrain, Pretrained, SslConfig};

/// Train-partition records used for pretraining, optionally a seeded subset.
pub fn pretraining_records<S: Scalar>(
    dataset: &IqDataset,
    split: &SplitManifest,
    subset: Option<usize>,
    seed: u64,
) -> Result<Vec<IqTensor<S>>> {
    split.validate(dataset.len())?;
    let mut idx = split.train.clone();
    if let Some(n) = subset {
        if n < 2 {
            return Err(Error::invalid("a pretraining subset needs at least 2 records"));
        }
        idx.shuffle(&mut record_rng(seed, u64::MAX - 1));
        idx.truncate(n);
        idx.sort_unstable();
    }
    Ok(idx.iter().map(|&i| dataset.sample(i).cast()).collect())
}

/// Fresh encoder and head from `(encoder_config, ssl.seed)`, pretrained on
/// the train partition.
pub fn pretrain_encoder<S: Scalar>(
    dataset: &IqDataset,
    split: &SplitManifest,
    encoder_config: &EncoderConfig,
    ssl: &SslConfig,
    subset: Option<usize>,
) -> Result<Pretrained<S>> {
    let records = pretraining_records(dataset, split, subset, ssl.seed)?;
    let encoder = Encoder::new(encoder_config.clone(), ssl.seed)?;
    let head = ProjectionHead::new(encoder_config, ssl.seed)?;
    pretrain(&records, encoder, head, ssl)
}

/// Test accuracy of a `k`-per-class linear probe on `task`.
pub fn probe_accuracy<S: Scalar>(
    encoder: &Encoder<S>,
    dataset: &IqDataset,
    split: &SplitManifest,
    task: Task,
    k: usize,
    fit: &FitConfig,
) -> Result<f64> {
    let shots = few_shot_split(dataset, split, label_field(task)?, k, fit.seed)?;
    Ok(train_linear_probe(encoder, dataset, &shots, fit)?.1.evaluation.accuracy)
}

/// Policy of one sweep cell: the axis's preset with the swept probability
/// and roll length substituted.
pub fn sweep_policy(axis: SweepAxis, prob: f64, tr_len: usize) -> AugmentationPolicy {
    match axis {
        SweepAxis::CdProb => AugmentationPolicy {
            cd_prob: prob,
            tr_len,
            ..AugmentationPolicy::ssl_mod()
        },
        SweepAxis::CmProb => AugmentationPolicy {
            cm_prob: prob,
            tr_len,
            ..AugmentationPolicy::ssl_aoa()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub prob: f64,
    pub tr_len: usize,
    pub accuracy: f64,
}

/// Pretrains one encoder per `(prob, tr_len)` cell and probes it on the
/// axis's task. `base` supplies every SSL setting except the policy and
/// epoch count.
pub fn sweep_surface(
    dataset: &IqDataset,
    split: &SplitManifest,
    encoder_config: &EncoderConfig,
    base: &SslConfig,
    sweep: &SweepSection,
    subset: Option<usize>,
    probe: &FitConfig,
) -> Result<Vec<SweepCell>> {
    if sweep.probs.is_empty() || sweep.tr_lens.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut cells = Vec::with_capacity(sweep.probs.len() * sweep.tr_lens.len());
    for &prob in &sweep.probs {
        for &tr_len in &sweep.tr_lens {
            let ssl = SslConfig {
                policy: sweep_policy(sweep.axis, prob, tr_len),
                epochs: sweep.epochs,
                ..base.clone()
            };
            let trained = pretrain_encoder::<f64>(dataset, split, encoder_config, &ssl, subset)?;
            let accuracy = probe_accuracy(&trained.encoder, dataset, split, sweep.axis.task(), sweep.k, probe)?;
            cells.push(SweepCell { prob, tr_len, accuracy });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(axis: SweepAxis, cells: &[SweepCell]) -> String {
    let mut out = format!("{},tr_len,accuracy\n", axis.name());
    for c in cells {
        let _ = writeln!(out, "{},{},{}", c.prob, c.tr_len, c.accuracy);
    }
    out
}

/// Row names of the ablation grid, in table order.
pub const ABLATION_ROWS: [&str; 6] = ["TR", "CM", "CD", "TR+CM", "TR+CD", "TR+CM+CD"];

/// Policy for an ablation row: enabled augmentations take the section's
/// settings, disabled ones are switched off.
pub fn ablation_policy(row: &str, ablate: &AblateSection) -> Result<AugmentationPolicy> {
    let parts: Vec<&str> = row.split('+').collect();
    if parts.iter().any(|p| !matches!(*p, "TR" | "CM" | "CD")) {
        return Err(Error::invalid(format!("unknown ablation row `{row}`")));
    }
    let on = |name: &str| parts.contains(&name);
    let mut policy = AugmentationPolicy::identity(Task::Joint);
    policy.amp_range = AugmentationPolicy::ssl_joint().amp_range;
    policy.noise_sigma = AugmentationPolicy::ssl_joint().noise_sigma;
    if on("TR") {
        policy.tr_prob = ablate.tr_prob;
        policy.tr_len = ablate.tr_len;
    }
    if on("CM") {
        policy.cm_prob = ablate.cm_prob;
        policy.cm_len = ablate.cm_len;
    }
    if on("CD") {
        policy.cd_prob = ablate.cd_prob;
    }
    Ok(policy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub augmentations: String,
    pub task: Task,
    pub budget: usize,
    pub accuracy: f64,
}

/// One pretraining per row, then a probe per `(task, budget)`.
pub fn ablation_table(
    dataset: &IqDataset,
    split: &SplitManifest,
    encoder_config: &EncoderConfig,
    base: &SslConfig,
    ablate: &AblateSection,
    subset: Option<usize>,
    probe: &FitConfig,
) -> Result<Vec<AblationCell>> {
    if ablate.budgets.is_empty() {
        return Err(Error::invalid("ablation needs at least one budget"));
    }
    let mut cells = Vec::with_capacity(ABLATION_ROWS.len() * 2 * ablate.budgets.len());
    for row in ABLATION_ROWS {
        let ssl = SslConfig {
            policy: ablation_policy(row, ablate)?,
            epochs: ablate.epochs,
            ..base.clone()
        };
        let trained = pretrain_encoder::<f64>(dataset, split, encoder_config, &ssl, subset)?;
        for task in [Task::Aoa, Task::Mod] {
            for &budget in &ablate.budgets {
                let accuracy = probe_accuracy(&trained.encoder, dataset, split, task, budget, probe)?;
                cells.push(AblationCell {
                    augmentations: row.to_string(),
                    task,
                    budget,
                    accuracy,
                });
            }
        }
    }
    Ok(cells)
}

pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let mut out = String::from("augmentations,task,budget,accuracy\n");
    for c in cells {
        let task = match c.task {
            Task::Aoa => "aoa",
            Task::Mod => "mod",
            Task::Joint => "joint",
        };
        let _ = writeln!(out, "{},{task},{},{}", c.augmentations, c.budget, c.accuracy);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelReport {
    pub field: String,
    pub classes: usize,
    pub clusters: usize,
    pub accuracy: f64,
    pub chance: f64,
    pub anchors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub records: Vec<usize>,
    pub sweep: SweepResult,
    pub pseudo_labels: Vec<PseudoLabelReport>,
    pub pca: Pca,
}

/// Records analyzed by the clustering workflow: the test partition first,
/// then train. A cap keeps a seeded random subset of each partition in that
/// order, so every class stays represented.
pub fn analysis_records(split: &SplitManifest, max_records: Option<usize>, seed: u64) -> Vec<usize> {
    let mut test = split.test.clone();
    let mut train = split.train.clone();
    if max_records.is_some() {
        test.shuffle(&mut record_rng(seed, u64::MAX - 2));
        train.shuffle(&mut record_rng(seed, u64::MAX - 3));
    }
    let mut idx: Vec<usize> = test.into_iter().chain(train).collect();
    if let Some(n) = max_records {
        idx.truncate(n);
    }
    idx
}

/// Silhouette sweep, per-field pseudo-labeling and PCA over the embeddings
/// of `records`.
pub fn cluster_report<S: Scalar>(
    encoder: &Encoder<S>,
    dataset: &IqDataset,
    records: &[usize],
    analysis: &AnalysisSection,
    seed: u64,
) -> Result<ClusterReport> {
    if analysis.k_min < 2 || analysis.k_max < analysis.k_min {
        return Err(Error::invalid(format!(
            "cluster range {}..={} must satisfy 2 ≤ k_min ≤ k_max",
            analysis.k_min, analysis.k_max
        )));
    }
    if records.len() < analysis.k_max {
        return Err(Error::invalid(format!(
            "{} records cannot be split into {} clusters",
            records.len(),
            analysis.k_max
        )));
    }
    let samples: Vec<IqTensor<S>> = records.iter().map(|&i| dataset.sample(i).cast()).collect();
    let features = encoder.encode_all(&samples)?;
    let k_list: Vec<usize> = (analysis.k_min..=analysis.k_max).collect();
    let sweep = silhouette_sweep(&features, &k_list, seed, analysis.max_iter)?;

    let mut pseudo_labels = Vec::new();
    for field in dataset.label_fields() {
        let f = dataset.field_index(field)?;
        let raw: Vec<i32> = records.iter().map(|&i| dataset.label(i, f)).collect();
        if raw.iter().any(|&y| y < 0) {
            continue;
        }
        let truth: Vec<usize> = raw.iter().map(|&y| y as usize).collect();
        let classes = dataset.num_classes(field)?;
        let clusters = analysis.pseudo_k.unwrap_or(classes);
        if clusters > records.len() {
            return Err(Error::invalid(format!("{clusters} clusters exceed {} records", records.len())));
        }
        let anchors = choose_anchors(&truth, classes, seed)?;
        let result = kmeans(&features, clusters, seed, analysis.max_iter)?;
        let labels = pseudo_label(&features, &anchors, classes, &result)?;
        pseudo_labels.push(PseudoLabelReport {
            field: field.clone(),
            classes,
            clusters,
            accuracy: labels.accuracy(&truth)?,
            chance: 1.0 / classes as f64,
            anchors: anchors.iter().map(|&a| records[a]).collect(),
        });
    }
    let pca = pca_project(&features, analysis.pca_dims)?;
    Ok(ClusterReport {
        records: records.to_vec(),
        sweep,
        pseudo_labels,
        pca,
    })
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use iqssl::adapt::{few_shot_split, train_linear_probe, train_lora, train_supervised_baseline, AdaptMetrics, FewShotSplit};
use iqssl::augment::Task;
use iqssl::checkpoint::bytes_digest;
use iqssl::config::{label_field, AdaptMethod, PolicySpec, RunConfig, SweepAxis};
use iqssl::dataio::{read_dataset, read_json, split_path, write_dataset, write_json, IqDataset, SplitManifest};
use iqssl::encoder::Encoder;
use iqssl::experiments::{
    ablation_csv, ablation_table, analysis_records, cluster_report, pretrain_encoder, sweep_csv, sweep_surface,
};
use iqssl::signal::build_dataset;
use iqssl::ssl::write_loss_trace;
use iqssl::{Error, Result};

/// Environment variable naming the output root.
const OUTPUT_ROOT_ENV: &str = "IQSSL_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "iqssl", version, about = "Contrastive pretraining workbench for multi-antenna IQ data")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the environment and the config file.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset file, relative to the output root unless absolute.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Encoder checkpoint, relative to the output root unless absolute.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Downstream task: mod or aoa (joint for pretraining policies).
    #[arg(long, global = true)]
    task: Option<Task>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled dataset and its train/test split.
    Gen(GenArgs),
    /// Contrastive pretraining; writes encoder and head checkpoints plus the loss trace.
    Pretrain(PretrainArgs),
    /// Probe, low-rank adapter or supervised training on a few-shot split.
    Adapt(AdaptArgs),
    /// Augmentation probability × roll length surface.
    Sweep(SweepArgs),
    /// Silhouette sweep, pseudo-labels and PCA of encoder embeddings.
    Cluster(ClusterArgs),
    /// Augmentation ablation grid.
    Ablate(AblateArgs),
    /// Aggregates adaptation metrics under the output root.
    Report,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    classes_aoa: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Preset name: ssl-mod, ssl-aoa or ssl-joint.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    method: Option<AdaptMethod>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated probabilities.
    #[arg(long, value_delimiter = ',')]
    probs: Option<Vec<f64>>,
    /// Comma-separated roll lengths.
    #[arg(long, value_delimiter = ',')]
    tr_lens: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    max_records: Option<usize>,
    #[arg(long)]
    pca_dims: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Config file, then environment, then flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
        config.output_dir = PathBuf::from(root);
    }
    set(&mut config.output_dir, cli.output_dir.clone());
    set(&mut config.seed, cli.seed);
    set(&mut config.dataset, cli.dataset.clone());
    set(&mut config.task, cli.task);
    if cli.checkpoint.is_some() {
        config.checkpoint = cli.checkpoint.clone();
    }
    match &cli.command {
        Command::Gen(a) => {
            set(&mut config.gen.per_class, a.per_class);
            set(&mut config.gen.train_ratio, a.train_ratio);
            set(&mut config.gen.synthesis.snr_db, a.snr_db);
            if a.classes_aoa.is_some() {
                config.gen.aoa_classes = a.classes_aoa;
            }
        }
        Command::Pretrain(a) => {
            if let Some(p) = &a.policy {
                config.ssl.policy = PolicySpec::Preset(p.clone());
            }
            set(&mut config.ssl.epochs, a.epochs);
            set(&mut config.ssl.batch_size, a.batch_size);
            if a.lr.is_some() {
                config.ssl.lr = a.lr;
            }
            if a.temperature.is_some() {
                config.ssl.temperature = a.temperature;
            }
            if a.subset.is_some() {
                config.ssl.subset = a.subset;
            }
        }
        Command::Adapt(a) => {
            set(&mut config.adapt.method, a.method);
            set(&mut config.adapt.k, a.k);
            set(&mut config.adapt.lora.rank, a.rank);
            set(&mut config.adapt.lora.alpha, a.alpha);
            if a.epochs.is_some() {
                config.adapt.epochs = a.epochs;
            }
            if a.lr.is_some() {
                config.adapt.lr = a.lr;
            }
        }
        Command::Sweep(a) => {
            set(&mut config.sweep.axis, a.axis);
            set(&mut config.sweep.probs, a.probs.clone());
            set(&mut config.sweep.tr_lens, a.tr_lens.clone());
            set(&mut config.sweep.epochs, a.epochs);
            set(&mut config.sweep.k, a.k);
        }
        Command::Cluster(a) => {
            set(&mut config.analysis.k_min, a.k_min);
            set(&mut config.analysis.k_max, a.k_max);
            set(&mut config.analysis.pca_dims, a.pca_dims);
            if a.max_records.is_some() {
                config.analysis.max_records = a.max_records;
            }
        }
        Command::Ablate(a) => {
            set(&mut config.ablate.epochs, a.epochs);
            set(&mut config.ablate.budgets, a.budgets.clone());
        }
        Command::Report => {}
    }
    Ok(config)
}

struct Run {
    config: RunConfig,
}

impl Run {
    fn root(&self) -> &Path {
        &self.config.output_dir
    }

    fn under_root(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root().join(p)
        }
    }

    fn dataset_path(&self) -> PathBuf {
        self.under_root(&self.config.dataset)
    }

    fn checkpoint_path(&self) -> PathBuf {
        match &self.config.checkpoint {
            Some(p) => self.under_root(p),
            None => self.root().join("pretrain").join("encoder.ckpt"),
        }
    }

    /// Creates `<root>/<name>` and echoes the resolved config into it.
    fn out_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.root().join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        self.config.write_resolved(&dir)?;
        Ok(dir)
    }

    fn load_data(&self) -> Result<(IqDataset, SplitManifest)> {
        let path = self.dataset_path();
        let dataset = read_dataset(&path)?;
        let split: SplitManifest = read_json(split_path(&path))?;
        split.validate(dataset.len())?;
        Ok((dataset, split))
    }

    fn load_encoder(&self) -> Result<Encoder<f64>> {
        Encoder::load(self.checkpoint_path())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(bytes_digest(&bytes))
}

#[derive(Serialize)]
struct GenMetrics {
    records: usize,
    train: usize,
    test: usize,
    modulation_classes: usize,
    aoa_classes: usize,
    dataset_digest: String,
}

fn cmd_gen(run: &Run) -> Result<()> {
    let c = &run.config;
    let synthesis = c.gen.resolved_synthesis(c.seed);
    let (dataset, split) = build_dataset(&synthesis, c.gen.per_class, c.gen.train_ratio)?;
    let path = run.dataset_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    write_dataset(&dataset, &path)?;
    write_json(&split, split_path(&path))?;
    let dir = run.out_dir("gen")?;
    let metrics = GenMetrics {
        records: dataset.len(),
        train: split.train.len(),
        test: split.test.len(),
        modulation_classes: synthesis.modulations.len(),
        aoa_classes: synthesis.aoa_grid_deg.len(),
        dataset_digest: file_digest(&path)?,
    };
    write_json(&metrics, dir.join("metrics.json"))
}

#[derive(Serialize)]
struct PretrainMetrics {
    policy: iqssl::augment::AugmentationPolicy,
    epochs_run: usize,
    final_loss: Option<f64>,
    dataset_digest: String,
    checkpoint_digest: String,
    encoder_parameters: usize,
}

fn cmd_pretrain(run: &Run) -> Result<()> {
    let c = &run.config;
    let (dataset, split) = run.load_data()?;
    let ssl = c.ssl.resolve(c.seed)?;
    let trained = pretrain_encoder::<f64>(&dataset, &split, &c.encoder, &ssl, c.ssl.subset)?;
    let dir = run.out_dir("pretrain")?;
    let ckpt = run.checkpoint_path();
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    trained.encoder.save(&ckpt)?;
    iqssl::checkpoint::write_checkpoint(
        dir.join("head.ckpt"),
        "projection_head",
        serde_json::to_value(&c.encoder)?,
        &trained.head.params().iter().collect::<Vec<_>>(),
    )?;
    write_loss_trace(dir.join("loss.csv"), &trained.trace)?;
    let metrics = PretrainMetrics {
        policy: ssl.policy.clone(),
        epochs_run: trained.trace.len(),
        final_loss: trained.trace.last().map(|e| e.mean_loss),
        dataset_digest: file_digest(&run.dataset_path())?,
        checkpoint_digest: file_digest(&ckpt)?,
        encoder_parameters: trained.encoder.parameter_count(),
    };
    write_json(&metrics, dir.join("metrics.json"))
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Mod => "mod",
        Task::Aoa => "aoa",
        Task::Joint => "joint",
    }
}

/// The few-shot split for `(task, k, seed)`, written once and reused by
/// every method so that all arms see identical records.
fn shared_split(run: &Run, dataset: &IqDataset, manifest: &SplitManifest) -> Result<FewShotSplit> {
    let c = &run.config;
    let dir = run.root().join("splits");
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join(format!("{}-k{}-seed{}.json", task_name(c.task), c.adapt.k, c.seed));
    if path.exists() {
        let split: FewShotSplit = read_json(&path)?;
        if split.field != label_field(c.task)? || split.k != c.adapt.k || split.seed != c.seed {
            return Err(Error::HeaderMismatch(format!("{} does not match the requested split", path.display())));
        }
        return Ok(split);
    }
    let split = few_shot_split(dataset, manifest, label_field(c.task)?, c.adapt.k, c.seed)?;
    write_json(&split, &path)?;
    Ok(split)
}

fn cmd_adapt(run: &Run) -> Result<()> {
    let c = &run.config;
    let (dataset, manifest) = run.load_data()?;
    let split = shared_split(run, &dataset, &manifest)?;
    let fit = c.adapt.fit_config(c.seed);
    let name = format!(
        "adapt/{}-{}-k{}-seed{}",
        task_name(c.task),
        c.adapt.method.name(),
        c.adapt.k,
        c.seed
    );
    let report = match c.adapt.method {
        AdaptMethod::Probe => train_linear_probe(&run.load_encoder()?, &dataset, &split, &fit)?.1,
        AdaptMethod::Lora => {
            let encoder = run.load_encoder()?;
            let (adapter, _, report) = train_lora(&encoder, &dataset, &split, &c.adapt.lora, &fit)?;
            let dir = run.out_dir(&name)?;
            adapter.save(dir.join("adapter.ckpt"), &encoder.digest())?;
            report
        }
        AdaptMethod::Supervised => train_supervised_baseline::<f64>(&c.encoder, &dataset, &split, &fit)?.2,
    };
    let dir = run.out_dir(&name)?;
    let metrics = AdaptMetrics {
        task: task_name(c.task).to_string(),
        k: c.adapt.k,
        seed: c.seed,
        method: c.adapt.method.name().to_string(),
        accuracy: report.evaluation.accuracy,
        params_trainable: report.params_trainable,
    };
    write_json(&metrics, dir.join("metrics.json"))?;
    write_json(&report.evaluation.confusion, dir.join("confusion.json"))
}

fn cmd_sweep(run: &Run) -> Result<()> {
    let c = &run.config;
    let (dataset, split) = run.load_data()?;
    let base = c.ssl.resolve(c.seed)?;
    let probe = iqssl::adapt::FitConfig::probe(c.seed);
    let cells = sweep_surface(&dataset, &split, &c.encoder, &base, &c.sweep, c.ssl.subset, &probe)?;
    let dir = run.out_dir("sweep")?;
    write_text(&dir.join("surface.csv"), &sweep_csv(c.sweep.axis, &cells))
}

fn cmd_cluster(run: &Run) -> Result<()> {
    let c = &run.config;
    let (dataset, split) = run.load_data()?;
    let encoder = run.load_encoder()?;
    let records = analysis_records(&split, c.analysis.max_records, c.seed);
    let report = cluster_report(&encoder, &dataset, &records, &c.analysis, c.seed)?;
    let dir = run.out_dir("cluster")?;
    write_text(&dir.join("silhouette.csv"), &report.sweep.to_csv())?;
    let labels: Vec<(&str, Vec<i32>)> = dataset
        .label_fields()
        .iter()
        .map(|f| {
            let idx = dataset.field_index(f).expect("listed field");
            (f.as_str(), records.iter().map(|&i| dataset.label(i, idx)).collect())
        })
        .collect();
    write_text(&dir.join("pca.csv"), &report.pca.to_csv(&labels))?;
    write_text(&dir.join("pca_variance.csv"), &report.pca.variance_csv())?;
    write_json(
        &serde_json::json!({
            "best_k": report.sweep.best_k,
            "pseudo_labels": report.pseudo_labels,
        }),
        dir.join("pseudo_labels.json"),
    )
}

fn cmd_ablate(run: &Run) -> Result<()> {
    let c = &run.config;
    let (dataset, split) = run.load_data()?;
    let base = c.ssl.resolve(c.seed)?;
    let probe = iqssl::adapt::FitConfig::probe(c.seed);
    let cells = ablation_table(&dataset, &split, &c.encoder, &base, &c.ablate, c.ssl.subset, &probe)?;
    let dir = run.out_dir("ablate")?;
    write_text(&dir.join("ablation.csv"), &ablation_csv(&cells))
}

#[derive(Serialize)]
struct ReportRow {
    task: String,
    method: String,
    k: usize,
    seeds: Vec<u64>,
    median_accuracy: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cmd_report(run: &Run) -> Result<()> {
    let adapt_dir = run.root().join("adapt");
    let entries = fs::read_dir(&adapt_dir).map_err(|e| Error::Io {
        path: adapt_dir.clone(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path().join("metrics.json")))
        .filter(|p| p.exists())
        .collect();
    paths.sort();
    let mut groups: BTreeMap<(String, String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    let mut csv = String::from("task,method,k,seed,accuracy,params_trainable\n");
    for p in &paths {
        let m: AdaptMetrics = read_json(p)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.task, m.method, m.k, m.seed, m.accuracy, m.params_trainable
        ));
        groups.entry((m.task, m.method, m.k)).or_default().push((m.seed, m.accuracy));
    }
    let rows: Vec<ReportRow> = groups
        .into_iter()
        .map(|((task, method, k), runs)| ReportRow {
            task,
            method,
            k,
            seeds: runs.iter().map(|r| r.0).collect(),
            median_accuracy: median(runs.iter().map(|r| r.1).collect()),
        })
        .collect();
    let dir = run.out_dir("report")?;
    write_text(&dir.join("runs.csv"), &csv)?;
    write_json(&rows, dir.join("summary.json"))
}

fn execute(cli: &Cli) -> Result<()> {
    let run = Run {
        config: resolve_config(cli)?,
    };
    fs::create_dir_all(run.root()).map_err(|e| Error::Io {
        path: run.root().to_path_buf(),
        source: e,
    })?;
    match cli.command {
        Command::Gen(_) => cmd_gen(&run),
        Command::Pretrain(_) => cmd_pretrain(&run),
        Command::Adapt(_) => cmd_adapt(&run),
        Command::Sweep(_) => cmd_sweep(&run),
        Command::Cluster(_) => cmd_cluster(&run),
        Command::Ablate(_) => cmd_ablate(&run),
        Command::Report => cmd_report(&run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tskip::data::{export_audio, gen_delayed_recall, load_manifest, Dataset, RecallConfig};
use tskip::engine::Tensor;
use tskip::graph::{ArchSpec, Network};
use tskip::metrics::{energy_total, profile_network, EnergyModel};
use tskip::nas::{random_search, write_report, Sahd, SearchConfig, SearchSpace};
use tskip::seed::{derive_seed, stream};
use tskip::trainer::{checkpoint, train as fit, LossKind, MetricsLog, Scheduler, TrainConfig, TrainReport};

use crate::config::record;
use crate::error::CliError;

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

#[derive(Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "recall")]
    pub task: String,
    #[serde(rename = "D", default = "sixteen")]
    pub delay: usize,
    #[serde(rename = "T", default = "ninety_nine")]
    pub timesteps: usize,
    #[serde(default = "two_thousand")]
    pub n: usize,
    #[serde(default = "five_hundred")]
    pub n_test: usize,
    #[serde(default = "ten")]
    pub classes: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn recall() -> String {
    "delayed-recall".into()
}
fn sixteen() -> usize {
    16
}
fn ninety_nine() -> usize {
    99
}
fn two_thousand() -> usize {
    2000
}
fn five_hundred() -> usize {
    500
}
fn ten() -> usize {
    10
}
/// Three copies of every symbol in a 99-step, 10-class sequence.
pub fn default_noise() -> f64 {
    0.3
}

pub fn synth(cfg: SynthConfig) -> Result<(), CliError> {
    if cfg.task != "delayed-recall" {
        return Err(CliError::Usage(format!("unknown task '{}' (delayed-recall)", cfg.task)));
    }
    let out = required(&cfg.out, "out")?;
    let recall = RecallConfig {
        delay: cfg.delay,
        timesteps: cfg.timesteps,
        samples: cfg.n + cfg.n_test,
        classes: cfg.classes,
        noise: cfg.noise,
        seed: derive_seed(cfg.seed, "data", 0),
    };
    let all = gen_delayed_recall(&recall)?;
    let (train, test) = split(&all, cfg.n);
    let manifest = export_audio(&out, &train, &test)?;
    manifest.write(&out.join("manifest.json"))?;
    record(&out, "synth", &cfg)?;
    println!(
        "wrote {} training and {} test samples to {}",
        train.len(),
        test.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn split(all: &Dataset, n: usize) -> (Dataset, Dataset) {
    let idx: Vec<usize> = (0..all.len()).collect();
    (all.subset(&idx[..n]), all.subset(&idx[n..]))
}

/// Optimization settings shared by `train` and `ablate`.
#[derive(Clone, Serialize, Deserialize)]
pub struct Hyper {
    #[serde(default = "hundred")]
    pub epochs: usize,
    #[serde(default = "fifty")]
    pub batch_size: usize,
    #[serde(default = "milli")]
    pub lr: f64,
    #[serde(default = "cosine_name")]
    pub scheduler: String,
    #[serde(default = "min_lr")]
    pub min_lr: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "ten")]
    pub every: usize,
    #[serde(default = "ce")]
    pub loss: String,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn hundred() -> usize {
    100
}
fn fifty() -> usize {
    50
}
fn milli() -> f64 {
    1e-3
}
fn cosine_name() -> String {
    "cosine".into()
}
fn min_lr() -> f64 {
    5e-6
}
fn gamma() -> f64 {
    0.7
}
fn ce() -> String {
    "cross-entropy".into()
}
fn clip() -> f64 {
    10.0
}

impl Hyper {
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let scheduler = match self.scheduler.as_str() {
            "cosine" => Scheduler::Cosine {
                min_lr: self.min_lr,
                period: None,
                every: self.every as u64,
            },
            "multistep" => Scheduler::multistep(self.gamma, self.every),
            "constant" => Scheduler::Constant,
            s => {
                return Err(CliError::Usage(format!(
                    "unknown scheduler '{s}' (cosine, multistep, constant)"
                )))
            }
        };
        let loss = match self.loss.as_str() {
            "cross-entropy" | "ce" => LossKind::CrossEntropy,
            "mse" => LossKind::Mse,
            s => return Err(CliError::Usage(format!("unknown loss '{s}' (cross-entropy, mse)"))),
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_init: self.lr,
            scheduler,
            loss,
            dropout: self.dropout,
            seed: derive_seed(self.seed, "train", 0),
            clip_norm: self.clip_norm,
            target_accuracy: self.target_accuracy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init", 0)
    }
}

#[derive(Serialize, Deserialize)]
pub struct TrainRun {
    pub spec: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub hyper: Hyper,
}

pub fn load_data(path: &Path) -> Result<(Dataset, Option<Dataset>), CliError> {
    let (train, test) = load_manifest(path)?;
    Ok((train, (!test.is_empty()).then_some(test)))
}

/// Trains `spec`, streaming metrics to `metrics` when given.
pub fn train_model(
    spec: ArchSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    hyper: &Hyper,
    metrics: Option<&Path>,
    label: &str,
) -> Result<(Network, TrainReport), CliError> {
    let cfg = hyper.train_config()?;
    let mut net = Network::new(spec, hyper.init_seed())?;
    let mut log = metrics.map(MetricsLog::create).transpose()?;
    let report = fit(&mut net, train, test, &cfg, |rows| {
        for r in rows {
            eprintln!("{label}epoch {} {}: loss {:.4} acc {:.4}", r.epoch, r.split, r.loss, r.accuracy);
            if let Some(l) = log.as_mut() {
                l.append(r)?;
            }
        }
        Ok(())
    })?;
    Ok((net, report))
}

pub fn train(run: TrainRun) -> Result<(), CliError> {
    let spec = ArchSpec::read(&required(&run.spec, "spec")?)?;
    let (train_set, test_set) = load_data(&required(&run.data, "data")?)?;
    let out = required(&run.out, "out")?;
    record(&out, "train", &run)?;
    spec.write(&out.join("spec.json"))?;
    let (net, report) = train_model(
        spec,
        &train_set,
        test_set.as_ref(),
        &run.hyper,
        Some(&out.join("metrics.csv")),
        "",
    )?;
    checkpoint::save(&net, &out.join("checkpoint.tskp"))?;
    match report.final_test {
        Some(r) => println!(
            "trained {} epochs: test accuracy {:.4}, loss {:.4}, spike rate {:.4}",
            report.epochs_run, r.accuracy, r.loss, r.spike_rate
        ),
        None => println!("trained {} epochs", report.epochs_run),
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SearchRun {
    pub space: Option<PathBuf>,
    pub preset: Option<String>,
    #[serde(default = "hundred")]
    pub n: usize,
    #[serde(default = "ten")]
    pub k: usize,
    pub probe: Option<PathBuf>,
    #[serde(default = "thirty_two")]
    pub probe_batch: usize,
    #[serde(default = "one")]
    pub parallel: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn thirty_two() -> usize {
    32
}
fn one() -> usize {
    1
}

/// Thread pool of `threads` workers for the sweeps.
pub fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    if threads == 0 {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn random_probe(space: &SearchSpace, batch: usize, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = stream(seed, "probe", 0);
    let mut shape = vec![space.timesteps, batch];
    shape.extend(space.input.shape());
    let n = shape.iter().product();
    let data = (0..n).map(|_| (rng.gen::<f64>() < 0.1) as u8 as f64).collect();
    Tensor::new(shape, data).expect("probe shape")
}

pub fn search(run: SearchRun) -> Result<(), CliError> {
    let space = match (&run.space, &run.preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --space or --preset".into())),
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            SearchSpace::from_json(&text)?
        }
        (None, Some(name)) => SearchSpace::preset(name)?,
        (None, None) => return Err(CliError::Usage("--space or --preset is required".into())),
    };
    space.validate()?;
    let out = required(&run.out, "out")?;
    if run.probe_batch < 2 {
        return Err(CliError::Usage("--probe-batch must be at least 2".into()));
    }
    let probe = match &run.probe {
        Some(path) => {
            let (data, _) = load_data(path)?;
            let b = run.probe_batch.min(data.len());
            data.batch(&(0..b).collect::<Vec<_>>())?.0
        }
        None => random_probe(&space, run.probe_batch, derive_seed(run.seed, "search", 1)),
    };
    record(&out, "search", &run)?;
    let cfg = SearchConfig {
        candidates: run.n,
        top_k: run.k,
        seed: derive_seed(run.seed, "search", 0),
        parallel: run.parallel > 1,
    };
    let ranked = pool(run.parallel)?.install(|| random_search(&space, &probe, &cfg, &Sahd, &[]))?;
    write_report(&out, &ranked)?;
    for (i, c) in ranked.iter().enumerate() {
        println!(
            "{:>3}  score {:>12.4}  params {:>9}  {}",
            i + 1,
            c.score,
            c.params,
            c.spec.tskips.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
        );
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct EnergyRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(default = "test_split")]
    pub split: String,
    #[serde(default = "fifty")]
    pub batch_size: usize,
    pub out: Option<PathBuf>,
}

fn test_split() -> String {
    "test".into()
}

pub fn energy(run: EnergyRun) -> Result<(), CliError> {
    let mut net = checkpoint::load(&required(&run.checkpoint, "checkpoint")?)?;
    let (train_set, test_set) = load_manifest(&required(&run.data, "data")?)?;
    let data = match run.split.as_str() {
        "test" => test_set,
        "train" => train_set,
        s => return Err(CliError::Usage(format!("unknown split '{s}' (test, train)"))),
    };
    let profile = profile_network(&mut net, &data, run.batch_size)?;
    let mut report = energy_total(&profile, &EnergyModel::default());
    report.params = Some(net.param_count());
    print!("{}", report.table());
    if let Some(out) = &run.out {
        record(out, "energy", &run)?;
        let csv = out.join("energy.csv");
        std::fs::write(&csv, report.to_csv()).map_err(|e| CliError::io(&csv, e))?;
        let txt = out.join("energy.txt");
        std::fs::write(&txt, report.table()).map_err(|e| CliError::io(&txt, e))?;
    }
    Ok(())
}

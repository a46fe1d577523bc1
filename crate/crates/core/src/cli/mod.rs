//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. Every subcommand that writes an artifact also writes a
//! [`RunManifest`] beside it.
//!
//! CSV schemas:
//!
//! ```text
//! embed     sample,label,e0..e{d-1}
//! probe     kind,k,n_train,n_eval,accuracy,macro_f1,rmse
//! finetune  seed,accuracy,macro_f1,epochs        plus rows "mean" and "stderr"
//! flops     config,input,mode,tokens,tokenizer,encoder,decoder,total,mflops,params,encoder_params
//! ablation  kind,name,depth,width,params,mflops,val_f1,final_mse
//! history   epoch,mse,ce,n_cont,n_cat,total,lr_last,val_f1
//! ```

pub mod ablation;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use ablation::{masking_grid, run_ablation, scaling_grid, AblationKind, AblationReport, AblationRow};
pub use manifest::RunManifest;

use crate::dataio::{generate_synthetic, read_csv, read_pts, write_csv, write_pts, DataError, Dataset, NormStats, SyntheticWorldConfig};
use crate::downstream::{self, accuracy, macro_f1, rmse, FinetuneConfig, ProbeKind, ProbeSpec, ProbeTarget};
use crate::error::{Error, Result};
use crate::masking::{parse_strategies, MaskStrategy};
use crate::model::{count_flops, Checkpoint, FlopInput, FlopMode, ModelConfig};
use crate::pretrain::{pretrain_with, PretrainConfig, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "pixmae", version, about = "Masked-autoencoder pretraining for pixel timeseries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (.pts, or .csv by extension).
    Synth(SynthArgs),
    /// Pretrain an encoder-decoder by masked reconstruction.
    Pretrain(PretrainArgs),
    /// Write pooled embeddings of a dataset as CSV.
    Embed(EmbedArgs),
    /// Fit a shallow probe on frozen embeddings and report metrics.
    Probe(ProbeArgs),
    /// Fine-tune encoder and linear head over several seeds.
    Finetune(FinetuneArgs),
    /// Report parameter and FLOP counts.
    Flops(FlopsArgs),
    /// Run the masking-strategy or model-size sweep.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f32,
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides of [`PretrainConfig`]; unset flags keep the config-file or
/// default value.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// JSON file with (a subset of) the pretraining configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of random,channel,timestep,contiguous.
    #[arg(long, value_parser = strategies_arg)]
    pub strategies: Option<StrategyList>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyList(pub Vec<MaskStrategy>);

fn strategies_arg(s: &str) -> std::result::Result<StrategyList, String> {
    parse_strategies(s).map(StrategyList).map_err(|e| e.to_string())
}

impl TrainOverrides {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<PretrainConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => PretrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(if let Some(v) = self.$flag.clone() { c.$field = v; })*};
        }
        set!(epochs => epochs, batch_size => batch_size, micro_batch => micro_batch, mask_ratio => mask_ratio,
             lambda => lambda, lr => lr_max, weight_decay => weight_decay, seed => seed);
        if let Some(s) = &self.strategies {
            c.strategies = s.0.clone();
        }
        if let Some(w) = self.warmup_steps {
            c.warmup_steps = Some(w);
        }
        if self.depth.is_some() || self.width.is_some() {
            c.model = ModelConfig::scaled(self.depth.unwrap_or(c.model.depth), self.width.unwrap_or(c.model.d_e));
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Pretraining data (.pts or .csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled data for the per-epoch validation probe.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Final checkpoint. Epoch checkpoints go to `<out>.epochs/`, the loss
    /// history to `<out>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub keep_last: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKindArg {
    Linear,
    Logistic,
    Knn,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Labeled data the probe is fitted on.
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled data the probe is scored on.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, value_enum, default_value_t = ProbeKindArg::Logistic)]
    pub kind: ProbeKindArg,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Metrics CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Labeled training data; its tail is held out for validation.
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled test data; the validation split is scored when omitted.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 42, 84])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlopModeArg {
    Encoder,
    Full,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// JSON model configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// One of full, ms-pixel, rgb-pixel; all three when omitted.
    #[arg(long)]
    pub input: Option<FlopInput>,
    #[arg(long, value_enum, default_value_t = FlopModeArg::Full)]
    pub mode: FlopModeArg,
    /// Report the three scaling-grid models instead of one config.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(value_enum)]
    pub kind: AblationKind,
    /// Pretraining data.
    #[arg(long)]
    pub data: PathBuf,
    /// Labeled validation data.
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

/// Runs the CLI on `args` (program name first) and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Embed(a) => embed(a),
        Command::Probe(a) => probe(a),
        Command::Finetune(a) => finetune(a),
        Command::Flops(a) => flops(a),
        Command::Ablation(a) => ablation(a),
    }
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a `.pts` or `.csv` dataset.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(DataError::Invalid(format!(
            "dataset {} not found; create one with `pixmae synth --out {}`",
            path.display(),
            path.display()
        ))
        .into());
    }
    Ok(if is_csv(path) { read_csv(path)? } else { read_pts(path)? })
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Serializes rows as CSV to `out`, or stdout.
fn write_rows<S: Serialize>(out: Option<&Path>, rows: &[S]) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SyntheticWorldConfig::new(a.samples, a.classes, a.noise, a.dropout, a.seed);
    let ds = generate_synthetic(&cfg)?;
    if is_csv(&a.out) {
        write_csv(&a.out, &ds)?;
    } else {
        write_pts(&a.out, &ds)?;
    }
    RunManifest::new("synth", &cfg, Some(a.seed), &[], &[&a.out])?.write_beside(&a.out)?;
    log::info!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

/// Loads training data and computes its statistics; `others` are
/// normalized with the same statistics.
fn load_normalized(train: &Path, others: &[&Path]) -> Result<(Dataset, NormStats, Vec<Dataset>)> {
    let raw = load_dataset(train)?;
    let stats = NormStats::compute_dataset(&raw)?;
    let ds = stats.normalize_dataset(&raw)?;
    let rest = others
        .iter()
        .map(|p| Ok(stats.normalize_dataset(&load_dataset(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((ds, stats, rest))
}

fn pretrain_cmd(a: PretrainArgs) -> Result<()> {
    let cfg = a.train.resolve()?;
    let vals: Vec<&Path> = a.val.iter().map(PathBuf::as_path).collect();
    let (ds, stats, rest) = load_normalized(&a.data, &vals)?;
    let epochs_dir = with_suffix(&a.out, ".epochs");
    let opts = RunOptions { validation: rest.first(), out_dir: Some(epochs_dir.clone()), keep_last: a.keep_last, ..Default::default() };
    let res = pretrain_with(&ds, stats, &cfg, &opts)?;
    res.checkpoint.save(&a.out)?;
    let history = with_suffix(&a.out, ".history.csv");
    crate::pretrain::write_history(&history, &res.history)?;
    let mut inputs = vec![a.data.as_path()];
    inputs.extend(vals);
    RunManifest::new("pretrain", &cfg, Some(cfg.seed), &inputs, &[&a.out, &history, &epochs_dir])?.write_beside(&a.out)?;
    Ok(())
}

fn load_for(ckpt: &Checkpoint, path: &Path) -> Result<Dataset> {
    Ok(ckpt.norm.normalize_dataset(&load_dataset(path)?)?)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let ds = load_for(&ckpt, &a.data)?;
    let emb = downstream::embed_dataset(&ckpt, &ds, &ckpt.norm)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = vec!["sample".to_string(), "label".to_string()];
    header.extend((0..ckpt.config.d_e).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for (i, (e, l)) in emb.iter().zip(&ds.labels).enumerate() {
        let mut rec = vec![i.to_string(), l.map(|l| l.to_string()).unwrap_or_default()];
        rec.extend(e.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    RunManifest::new("embed", serde_json::json!({}), None, &[&a.ckpt, &a.data], &[&a.out])?.write_beside(&a.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProbeRow {
    kind: ProbeKindArg,
    k: Option<usize>,
    n_train: usize,
    n_eval: usize,
    accuracy: Option<f64>,
    macro_f1: Option<f64>,
    rmse: Option<f64>,
}

fn probe(a: ProbeArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let (train, eval) = (load_for(&ckpt, &a.train)?, load_for(&ckpt, &a.eval)?);
    let xtr = downstream::embed_dataset(&ckpt, &train, &ckpt.norm)?;
    let xev = downstream::embed_dataset(&ckpt, &eval, &ckpt.norm)?;
    let (ytr, yev) = (train.class_labels()?, eval.class_labels()?);
    let kind = match a.kind {
        ProbeKindArg::Linear => ProbeKind::Linear,
        ProbeKindArg::Logistic => ProbeKind::Logistic,
        ProbeKindArg::Knn => ProbeKind::Knn { k: a.k },
    };
    let mut row = ProbeRow {
        kind: a.kind,
        k: (a.kind == ProbeKindArg::Knn).then_some(a.k),
        n_train: train.len(),
        n_eval: eval.len(),
        accuracy: None,
        macro_f1: None,
        rmse: None,
    };
    if kind == ProbeKind::Linear {
        let to_f = |y: &[usize]| y.iter().map(|&v| v as f64).collect::<Vec<_>>();
        let p = downstream::fit_probe(&xtr, &ProbeTarget::Values(to_f(&ytr)), &ProbeSpec::new(kind))?;
        let pred = downstream::predict(&p, &xev);
        row.rmse = Some(rmse(&to_f(&yev), pred.values().expect("regression")));
    } else {
        let p = downstream::fit_probe(&xtr, &ProbeTarget::Classes(ytr), &ProbeSpec::new(kind))?;
        let pred = downstream::predict(&p, &xev);
        let c = pred.classes().expect("classifier");
        row.accuracy = Some(accuracy(&yev, c));
        row.macro_f1 = Some(macro_f1(&yev, c));
    }
    write_rows(a.out.as_deref(), &[row])?;
    if let Some(out) = &a.out {
        let cfg = serde_json::json!({"kind": a.kind, "k": a.k});
        RunManifest::new("probe", cfg, None, &[&a.ckpt, &a.train, &a.eval], &[out])?.write_beside(out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FinetuneRow {
    seed: String,
    accuracy: f64,
    macro_f1: f64,
    epochs: Option<usize>,
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(Error::Usage(format!("--val-fraction {} must lie in [0, 1)", a.val_fraction)));
    }
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let data = load_for(&ckpt, &a.data)?;
    let n_val = (data.len() as f64 * a.val_fraction).round() as usize;
    let (train, val) = data.split_at(data.len() - n_val);
    let test = match &a.test {
        Some(p) => load_for(&ckpt, p)?,
        None => val.clone(),
    };
    let cfg = FinetuneConfig {
        lr: a.lr,
        weight_decay: a.weight_decay,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        patience: a.patience,
        freeze_encoder: a.freeze_encoder,
        seed: 0,
    };
    let summary = downstream::finetune_seeds(&ckpt, &train, &val, &test, &cfg, &a.seeds)?;
    let mut rows: Vec<FinetuneRow> = summary
        .runs
        .iter()
        .map(|r| FinetuneRow { seed: r.seed.to_string(), accuracy: r.accuracy, macro_f1: r.macro_f1, epochs: Some(r.epochs) })
        .collect();
    rows.push(FinetuneRow { seed: "mean".into(), accuracy: summary.accuracy_mean, macro_f1: summary.f1_mean, epochs: None });
    rows.push(FinetuneRow { seed: "stderr".into(), accuracy: summary.accuracy_stderr, macro_f1: summary.f1_stderr, epochs: None });
    write_rows(a.out.as_deref(), &rows)?;
    if let Some(out) = &a.out {
        let mut inputs = vec![a.ckpt.as_path(), a.data.as_path()];
        inputs.extend(a.test.as_deref());
        let cfg_json = serde_json::json!({"finetune": cfg, "seeds": a.seeds, "val_fraction": a.val_fraction});
        RunManifest::new("finetune", cfg_json, None, &inputs, &[out])?.write_beside(out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct FlopRow {
    pub config: String,
    pub input: &'static str,
    pub mode: &'static str,
    pub tokens: usize,
    pub tokenizer: u64,
    pub encoder: u64,
    pub decoder: u64,
    pub total: u64,
    pub mflops: f64,
    pub params: usize,
    pub encoder_params: usize,
}

/// FLOP and parameter rows for `config` on each input.
pub fn flop_rows(name: &str, config: &ModelConfig, inputs: &[FlopInput], mode: FlopMode) -> Result<Vec<FlopRow>> {
    let ckpt = Checkpoint::init(*config, NormStats::identity(), 0)?;
    Ok(inputs
        .iter()
        .map(|&i| {
            let slots = i.slots();
            let r = count_flops(config, &slots, mode);
            FlopRow {
                config: name.to_string(),
                input: i.name(),
                mode: match mode {
                    FlopMode::Encoder => "encoder",
                    FlopMode::EncoderDecoder => "full",
                },
                tokens: slots.len(),
                tokenizer: r.tokenizer,
                encoder: r.encoder,
                decoder: r.decoder,
                total: r.total(),
                mflops: r.total() as f64 / 1e6,
                params: ckpt.count_params(),
                encoder_params: ckpt.encoder_params(),
            }
        })
        .collect())
}

fn flops(a: FlopsArgs) -> Result<()> {
    let mode = match a.mode {
        FlopModeArg::Encoder => FlopMode::Encoder,
        FlopModeArg::Full => FlopMode::EncoderDecoder,
    };
    let inputs: Vec<FlopInput> = a.input.map_or(FlopInput::ALL.to_vec(), |i| vec![i]);
    let configs: Vec<(String, ModelConfig)> = if a.grid {
        scaling_grid().to_vec()
    } else {
        let mut c: ModelConfig = match &a.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => ModelConfig::default(),
        };
        if a.depth.is_some() || a.width.is_some() {
            c = ModelConfig::scaled(a.depth.unwrap_or(c.depth), a.width.unwrap_or(c.d_e));
        }
        c.validate()?;
        vec![(format!("{}x{}", c.depth, c.d_e), c)]
    };
    let mut rows = Vec::new();
    for (name, c) in &configs {
        rows.extend(flop_rows(name, c, &inputs, mode)?);
    }
    write_rows(a.out.as_deref(), &rows)
}

fn ablation(a: AblationArgs) -> Result<()> {
    let base = a.train.resolve()?;
    let (ds, stats, rest) = load_normalized(&a.data, &[&a.val])?;
    let report = run_ablation(a.kind, &base, &ds, &stats, &rest[0])?;
    write_rows(a.out.as_deref(), &report.rows)?;
    if let Some(out) = &a.out {
        let cfg = serde_json::json!({"kind": a.kind, "base": base});
        RunManifest::new("ablation", cfg, Some(base.seed), &[&a.data, &a.val], &[out])?.write_beside(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

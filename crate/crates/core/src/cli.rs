//! Command-line front end: `synth`, `pretrain`, `train`, `evaluate`, `report`.
//!
//! Exit codes: 0 success, 2 configuration or validation, 3 I/O, 4 numerics.
//! Every command that writes an output directory also writes `manifest.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{load_split, synthesize_dataset, SynthOptions, TRAIN_SPLIT};
use crate::error::{bail, Error, Result};
use crate::metrics::{evaluate_split, make_report, make_report_csv, published_rows, EvalReport, ReportRow};
use crate::model::checkpoint::Checkpoint;
use crate::model::{build_model, NameMap, RenameRule};
use crate::pretrain::{build_encoder, pretrain};
use crate::trainer::{log_to_json_lines, train};

pub const DATA_ROOT_ENV: &str = "EXPR_DATA_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "affectkit", version, about = "Frame-wise expression classification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset in the Aff-Wild2 layout.
    Synth(SynthArgs),
    /// Warp-contrastive pretraining of a backbone.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier.
    Train(TrainArgs),
    /// Score a checkpoint on a split.
    Evaluate(EvaluateArgs),
    /// Render a results table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub videos: usize,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 112)]
    pub size: usize,
    #[arg(long, default_value = TRAIN_SPLIT)]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root; falls back to $EXPR_DATA_ROOT.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: DataArgs,
    #[arg(long)]
    pub iters: Option<u64>,
    /// Checkpoint whose tensors initialise the model (e.g. pretrained backbone).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// `identity`, `torchvision`, or a list of `from=to` rules separated by `,`.
    #[arg(long, default_value = "identity")]
    pub name_map: String,
    /// Also score the validation split every `eval_every` iterations.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Defaults to the checkpoint's `eval.split`.
    #[arg(long)]
    pub split: Option<String>,
    /// Config the checkpoint must have been trained with.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label for the "Pre-trained" column.
    #[arg(long, default_value = "none")]
    pub pretrained: String,
    /// Defaults to `<checkpoint dir>/eval-<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// EvalReport JSON files, one row each.
    #[arg(long, num_args = 0..)]
    pub results: Vec<PathBuf>,
    /// Prepend the stored reference rows.
    #[arg(long)]
    pub reference_rows: bool,
    #[arg(long)]
    pub csv: bool,
    /// Directory for `report.txt` and a manifest; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub toolkit_version: String,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    fn new(command: &str, config_hash: Option<String>, seed: Option<u64>, start: Instant) -> Self {
        RunManifest {
            command: command.into(),
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self).expect("plain struct") + "\n")
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn data_root(flag: &Option<PathBuf>) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => match std::env::var_os(DATA_ROOT_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => bail!(Config, "no --data-root given and ${DATA_ROOT_ENV} is unset"),
        },
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn parse_name_map(spec: &str) -> Result<NameMap> {
    match spec {
        "identity" => Ok(NameMap::identity()),
        "torchvision" => Ok(NameMap::torchvision()),
        rules => Ok(NameMap {
            rules: rules.split(',').map(RenameRule::parse).collect::<Result<_>>()?,
        }),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let mut opts = SynthOptions::new(a.videos, a.frames, a.size, a.seed);
    opts.split = a.split.clone();
    let tracks = synthesize_dataset(&a.out, &opts)?;
    println!("wrote {} videos x {} frames to {}", tracks.len(), a.frames, a.out.display());
    let mut m = RunManifest::new("synth", None, Some(a.seed), start);
    m.outputs = vec![path_str(&a.out.join("annotations").join(&a.split)), path_str(&a.out.join("images"))];
    m.write(&a.out)
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut run = load_config(&a.common.config)?;
    if let Some(s) = a.common.seed {
        run.pretrain.seed = s;
    }
    if let Some(n) = a.steps {
        run.pretrain.steps = n;
    }
    run.validate()?;
    let root = data_root(&a.common.data_root)?;
    let data = load_split(&root, &run.data.train_split, run.model.input_resolution)?;
    let mut encoder = build_encoder::<f32>(&run)?;
    let out = pretrain(&mut encoder, &data, &run)?;
    let ck_path = a.common.out.join("pretrain.afk");
    out.checkpoint.save(&ck_path)?;
    let losses: String = out.losses.iter().map(|l| format!("{l}\n")).collect();
    let loss_path = a.common.out.join("pretrain_loss.txt");
    write_file(&loss_path, losses)?;
    println!(
        "pretrained {} steps, final loss {:.4}",
        run.pretrain.steps,
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    let mut m = RunManifest::new("pretrain", Some(run.hash()), Some(run.pretrain.seed), start);
    m.inputs = vec![path_str(&root)];
    m.inputs.extend(a.common.config.iter().map(|p| path_str(p)));
    m.outputs = vec![path_str(&ck_path), path_str(&loss_path)];
    m.write(&a.common.out)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut run = load_config(&a.common.config)?;
    if let Some(s) = a.common.seed {
        run.train.seed = s;
    }
    if let Some(n) = a.iters {
        run.train.total_iters = n;
    }
    run.validate()?;
    let root = data_root(&a.common.data_root)?;
    let data = load_split(&root, &run.data.train_split, run.model.input_resolution)?;
    let val = if a.validate {
        Some(load_split(&root, &run.data.val_split, run.model.input_resolution)?)
    } else {
        None
    };
    let mut model = build_model::<f32>(&run.model.backbone_spec()?, &run.model.head_config(), run.model.init_seed)?;
    let out_dir = &a.common.out;
    let mut m = RunManifest::new("train", Some(run.hash()), Some(run.train.seed), start);
    m.inputs = vec![path_str(&root)];
    m.inputs.extend(a.common.config.iter().map(|p| path_str(p)));
    if let Some(w) = &a.weights {
        let ck = Checkpoint::load(w)?;
        let report = model.import_weights(&ck.tensors, &parse_name_map(&a.name_map)?);
        println!("weights {}: {}", w.display(), report.summary());
        if !report.shape_mismatch.is_empty() {
            log::warn!("{} tensors skipped for shape mismatch", report.shape_mismatch.len());
        }
        let path = out_dir.join("match_report.json");
        write_file(&path, serde_json::to_string_pretty(&report).expect("plain struct") + "\n")?;
        m.inputs.push(path_str(w));
        m.outputs.push(path_str(&path));
    }
    let outcome = train(&mut model, &data, &run, val.as_ref())?;
    let ck_path = out_dir.join("checkpoint.afk");
    outcome.checkpoint.save(&ck_path)?;
    let log_path = out_dir.join("train_log.jsonl");
    write_file(&log_path, log_to_json_lines(&outcome.log))?;
    m.outputs.extend([path_str(&ck_path), path_str(&log_path)]);
    if let Some((f1, best)) = &outcome.best {
        let p = out_dir.join("best.afk");
        best.save(&p)?;
        println!("best validation macro F1 {f1:.2} at iter {}", best.iteration);
        m.outputs.push(path_str(&p));
    }
    if let Some(last) = outcome.log.last() {
        println!("{}", serde_json::to_string(last).expect("plain record"));
    }
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    m.write(out_dir)
}

/// Scores a checkpoint; shared by the CLI and library callers.
pub fn evaluate_checkpoint(ck: &Checkpoint, root: &Path, split: &str, pretrained: &str, weights_id: &str) -> Result<EvalReport> {
    let run = RunConfig::from_checkpoint(&ck.config, &ck.config_hash)?;
    let mut model = build_model::<f32>(&run.model.backbone_spec()?, &run.model.head_config(), run.model.init_seed)?;
    let report = model.import_weights(&ck.tensors, &NameMap::identity());
    if !report.missing.is_empty() || !report.shape_mismatch.is_empty() {
        bail!(Format, "checkpoint does not cover the model: {}", report.summary());
    }
    model.normalization = ck.normalization;
    let data = load_split(root, split, run.model.input_resolution)?;
    if data.is_empty() {
        bail!(Data, "split {split} has no labelled frames");
    }
    let scores = evaluate_split(&mut model, &data, run.eval.batch_size)?;
    Ok(EvalReport {
        per_class_f1: scores.f1.per_class,
        macro_f1: scores.macro_f1,
        n_frames: data.len(),
        config_hash: ck.config_hash.clone(),
        weights_id: weights_id.into(),
        backbone: run.model.backbone.clone(),
        pretrained: pretrained.into(),
        split: split.into(),
        confusion: scores.confusion,
    })
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    if let Some(cfg) = &a.config {
        let expected = RunConfig::load(cfg)?;
        if expected.hash() != ck.config_hash {
            bail!(Config, "checkpoint config hash {} differs from {}", ck.config_hash, expected.hash());
        }
    }
    let run = RunConfig::from_checkpoint(&ck.config, &ck.config_hash)?;
    let split = a.split.clone().unwrap_or(run.eval.split.clone());
    let root = data_root(&a.data_root)?;
    let weights_id = hex::encode(Sha256::digest(&bytes));
    let report = evaluate_checkpoint(&ck, &root, &split, &a.pretrained, &weights_id)?;
    print!("{}", make_report(&[report.row()]));
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join(format!("eval-{split}")),
    };
    let path = out.join("eval_report.json");
    write_file(&path, report.to_json())?;
    let mut m = RunManifest::new("evaluate", Some(ck.config_hash.clone()), None, start);
    m.inputs = vec![path_str(&a.checkpoint), path_str(&root.join("annotations").join(&split))];
    m.outputs = vec![path_str(&path)];
    m.write(&out)
}

pub fn report_rows(results: &[PathBuf], reference_rows: bool) -> Result<Vec<ReportRow>> {
    let mut rows = if reference_rows { published_rows() } else { Vec::new() };
    for p in results {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        rows.push(r.row());
    }
    Ok(rows)
}

pub fn cmd_report(a: &ReportArgs) -> Result<String> {
    let start = Instant::now();
    let rows = report_rows(&a.results, a.reference_rows)?;
    if let Some(r) = rows.iter().find(|r| !(0.0..=100.0).contains(&r.f1)) {
        bail!(Config, "F1 {} outside [0, 100]", r.f1);
    }
    let text = if a.csv { make_report_csv(&rows) } else { make_report(&rows) };
    print!("{text}");
    if let Some(out) = &a.out {
        let path = out.join(if a.csv { "report.csv" } else { "report.txt" });
        write_file(&path, &text)?;
        let mut m = RunManifest::new("report", None, None, start);
        m.inputs = a.results.iter().map(|p| path_str(p)).collect();
        m.outputs = vec![path_str(&path)];
        m.write(out)?;
    }
    Ok(text)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! The `subgnn` command line: argument parsing, run directories and
//! manifests. The binary is a one-line wrapper around [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DatasetMeta};
use crate::eval::{run_study, Study, StudyConfig, StudyInputs};
use crate::gnn::{Checkpoint, Model};
use crate::gradcheck::{full_model_check, GradcheckConfig};
use crate::sim::{generate_substation, SimScenario, SizeClass, TieClosure};
use crate::training::{finetune, load_config, train, write_history_csv, TrainConfig, TrainReport};

/// Environment variable overriding the default run directory.
pub const RUN_DIR_ENV: &str = "SUBGNN_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "subgnn", version, about = "Substation voltage estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic substation and simulate a snapshot dataset.
    Generate(GenerateArgs),
    /// Pretrain a model with the observability curriculum.
    Train(TrainArgs),
    /// Fine-tune a pretrained model on a new substation.
    Finetune(FinetuneArgs),
    /// Run one case study and write CSV plus a summary table.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
}

fn parse_der(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v @ (0 | 20 | 30 | 40)) => Ok(v),
        _ => Err(format!("`{s}` is not one of 0, 20, 30, 40")),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "tiny")]
    pub size: SizeClass,
    #[arg(long, default_value_t = 3)]
    pub feeders: usize,
    /// PV penetration in percent of peak load.
    #[arg(long, default_value_t = 30, value_parser = parse_der)]
    pub der: u32,
    #[arg(long, default_value_t = 2000 * 15)]
    pub horizon_minutes: u32,
    /// Close every normally open tie from the first step.
    #[arg(long)]
    pub close_ties: bool,
    /// Simulation seed; defaults to `--seed`.
    #[arg(long)]
    pub scenario_seed: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub load_scale: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory; repeat for several substations. Replaces the
    /// config's list.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Snapshot count of the pretraining data; defaults to the total over
    /// the config's substations.
    #[arg(long)]
    pub pretrain_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub study: Study,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test dataset directory; repeatable.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Training data for the linear baseline (study A).
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Fine-tuned checkpoint (study D).
    #[arg(long)]
    pub finetuned: Option<PathBuf>,
    /// Checkpoint trained without the physics term (study E).
    #[arg(long)]
    pub ablation: Option<PathBuf>,
    /// Comma-separated observability levels in percent.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<u32>,
    /// Number of mask seeds (0..n).
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub max_snapshots: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Entries per tensor; 0 checks every entry.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure categories printed as `error[category]: message`.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments and inputs (exit 2).
    Usage(String),
    /// The run itself failed (exit 1).
    Run { category: &'static str, error: anyhow::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run { .. } => 1,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Run { category, .. } => category,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error[usage]: {m}"),
            CliError::Run { category, error } => write!(f, "error[{category}]: {error:#}"),
        }
    }
}

trait Category<T> {
    fn category(self, category: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Category<T> for Result<T, E> {
    fn category(self, category: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Run {
            category,
            error: e.into(),
        })
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn require_path(path: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let p = path.ok_or_else(|| usage(format!("missing {what} path")))?;
    if !p.exists() {
        return Err(usage(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p.clone())
}

/// One output file and its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written once per output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration as JSON.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputFile>,
    pub toolkit_version: String,
    pub wall_clock_secs: f64,
}

pub const MANIFEST: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file's bytes.
pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// Files under `dir` except the manifest, sorted, with their hashes.
fn collect_outputs(dir: &Path) -> std::io::Result<Vec<OutputFile>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST) {
                out.push(OutputFile {
                    sha256: file_hash(&path)?,
                    path: path.strip_prefix(dir).unwrap_or(&path).to_path_buf(),
                });
            }
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn write_manifest(dir: &Path, mut manifest: RunManifest, started: Instant) -> anyhow::Result<RunManifest> {
    manifest.outputs = collect_outputs(dir).with_context(|| format!("hashing outputs in {}", dir.display()))?;
    manifest.toolkit_version = env!("CARGO_PKG_VERSION").to_string();
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)?).with_context(|| tmp.display().to_string())?;
    fs::rename(&tmp, dir.join(MANIFEST)).with_context(|| format!("finalizing manifest in {}", dir.display()))?;
    Ok(manifest)
}

fn output_dir(explicit: Option<&PathBuf>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    let base = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    base.join(command)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .category("io")
}

fn new_manifest(command: &str, config_hash: String, seeds: Vec<u64>, inputs: Vec<PathBuf>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_hash,
        seeds,
        inputs,
        outputs: Vec::new(),
        toolkit_version: String::new(),
        wall_clock_secs: 0.0,
    }
}

fn load_train_config(path: Option<&PathBuf>) -> Result<TrainConfig, CliError> {
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("config `{}` does not exist", p.display())));
            }
            load_config(p).category("config")
        }
        None => Ok(TrainConfig::default()),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(usage(format!("dataset `{}` does not exist", path.display())));
    }
    Dataset::read(path)
        .with_context(|| format!("reading dataset {}", path.display()))
        .category("data")
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .category("checkpoint")
}

fn save_training(dir: &Path, report: &TrainReport, cfg: &TrainConfig) -> Result<(), CliError> {
    let ck = cfg.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
    Checkpoint::from_model(&report.model).save(&ck).category("io")?;
    let hist = dir.join("history.csv");
    let file = fs::File::create(&hist).with_context(|| hist.display().to_string()).category("io")?;
    write_history_csv(&report.history, file).category("io")?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).category("io")?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let spec = generate_substation(a.seed, a.size, a.feeders).map_err(|e| usage(e.to_string()))?;
    let mut scenario = SimScenario::new(a.scenario_seed.unwrap_or(a.seed), a.der, a.horizon_minutes);
    scenario.load_scale = a.load_scale;
    if a.close_ties {
        scenario.tie_closures = spec
            .tie_switches
            .iter()
            .filter(|t| t.normally_open)
            .map(|t| TieClosure { tie: t.id, at_step: 0 })
            .collect();
    }
    let dir = output_dir(a.out.as_ref(), "generate");
    prepare_dir(&dir)?;
    let data = Dataset::simulate(spec, scenario.clone()).category("simulate")?;
    data.write(&dir).category("io")?;
    log::info!("{}: {} snapshots of {} bus-phases", data.name(), data.snapshots.len(), data.snapshots[0].len());
    let hash = config_hash(&(a.seed, a.size, a.feeders, &scenario));
    write_manifest(&dir, new_manifest("generate", hash, vec![a.seed, scenario.seed], Vec::new()), started).category("io")?;
    Ok(dir)
}

fn train_cmd(a: &TrainArgs) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let mut cfg = load_train_config(a.config.as_ref())?;
    if !a.data.is_empty() {
        cfg.substations = a.data.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.substations.is_empty() {
        return Err(usage("no training data: pass --data or list substations in the config"));
    }
    let datasets = cfg.substations.iter().map(|p| read_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let dir = output_dir(a.out.as_ref(), "train");
    prepare_dir(&dir)?;
    let report = train(Model::new(cfg.model.clone(), cfg.seed), &datasets, &cfg).category("train")?;
    log::info!("trained for {} steps", report.steps);
    save_training(&dir, &report, &cfg)?;
    let manifest = new_manifest("train", config_hash(&cfg), vec![cfg.seed], cfg.substations.clone());
    write_manifest(&dir, manifest, started).category("io")?;
    Ok(dir)
}

fn pretrain_size(cfg: &TrainConfig) -> Result<usize, CliError> {
    if cfg.substations.is_empty() {
        return Err(usage("pass --pretrain-size or a config listing the pretraining substations"));
    }
    let mut total = 0;
    for dir in &cfg.substations {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let meta: DatasetMeta = serde_json::from_str(&text).category("data")?;
        total += meta.snapshots;
    }
    Ok(total)
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let ck = require_path(a.checkpoint.as_ref(), "checkpoint")?;
    let data_path = require_path(a.data.as_ref(), "dataset")?;
    let mut cfg = load_train_config(a.config.as_ref())?;
    let pre = match a.pretrain_size {
        Some(n) => n,
        None => pretrain_size(&cfg)?,
    };
    let model = load_model(&ck)?;
    let data = read_dataset(&data_path)?;
    let dir = output_dir(a.out.as_ref(), "finetune");
    prepare_dir(&dir)?;
    cfg.checkpoint = None;
    let report = finetune(model, &data, pre, &cfg).category("finetune")?;
    save_training(&dir, &report, &cfg)?;
    let manifest = new_manifest("finetune", config_hash(&(&cfg, pre)), vec![cfg.seed], vec![ck, data_path]);
    write_manifest(&dir, manifest, started).category("io")?;
    Ok(dir)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let ck = require_path(a.checkpoint.as_ref(), "checkpoint")?;
    if a.data.is_empty() {
        return Err(usage("missing --data"));
    }
    if a.study == Study::D && a.finetuned.is_none() {
        return Err(usage("study D needs --finetuned"));
    }
    let mut cfg = StudyConfig::default();
    if !a.levels.is_empty() {
        cfg.sweep.levels = a.levels.clone();
    }
    if let Some(n) = a.seeds {
        cfg.sweep.seeds = (0..n).collect();
    }
    if let Some(m) = a.max_snapshots {
        cfg.sweep.max_snapshots = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.sweep.validate().map_err(|e| usage(e.to_string()))?;

    let model = load_model(&ck)?;
    let test = a.data.iter().map(|p| read_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let train_data = a.train_data.as_deref().map(read_dataset).transpose()?;
    let tuned = match &a.finetuned {
        Some(p) => Some(load_model(&require_path(Some(p), "fine-tuned checkpoint")?)?),
        None => None,
    };
    let ablation = match &a.ablation {
        Some(p) => Some(load_model(&require_path(Some(p), "ablation checkpoint")?)?),
        None => None,
    };
    let inputs = StudyInputs {
        model: &model,
        test: &test,
        train: train_data.as_ref(),
        finetuned: tuned.as_ref(),
        ablation: ablation.as_ref(),
    };
    let dir = output_dir(a.out_dir.as_ref(), "evaluate");
    prepare_dir(&dir)?;
    let report = run_study(a.study, &inputs, &cfg).category("evaluate")?;
    report.write(&dir).category("io")?;
    print!("{}", report.summary_text());

    let mut in_paths = vec![ck];
    in_paths.extend(a.data.iter().cloned());
    in_paths.extend(a.train_data.iter().cloned());
    in_paths.extend(a.finetuned.iter().cloned());
    in_paths.extend(a.ablation.iter().cloned());
    let seeds: Vec<u64> = std::iter::once(cfg.seed).chain(cfg.sweep.seeds.iter().copied()).collect();
    let manifest = new_manifest("evaluate", config_hash(&(a.study, &cfg)), seeds, in_paths);
    write_manifest(&dir, manifest, started).category("io")?;
    Ok(dir)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<Option<PathBuf>, CliError> {
    let started = Instant::now();
    let cfg = GradcheckConfig {
        samples_per_tensor: a.samples,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let report = full_model_check(a.seed, &cfg).category("gradcheck")?;
    print!("{}", report.table());
    let dir = a.out.clone();
    if let Some(dir) = &dir {
        prepare_dir(dir)?;
        fs::write(dir.join("gradcheck.json"), serde_json::to_string_pretty(&report).category("io")?).category("io")?;
        write_manifest(dir, new_manifest("gradcheck", config_hash(&cfg), vec![a.seed], Vec::new()), started)
            .category("io")?;
    }
    if !report.passed() {
        return Err(CliError::Run {
            category: "gradcheck",
            error: anyhow!("analytic and numeric gradients disagree (max rel err {:.3e})", report.max_rel_err()),
        });
    }
    Ok(dir)
}

/// Executes a parsed command; returns the output directory if any.
pub fn execute(cli: &Cli) -> Result<Option<PathBuf>, CliError> {
    match &cli.command {
        Command::Generate(a) => generate(a).map(Some),
        Command::Train(a) => train_cmd(a).map(Some),
        Command::Finetune(a) => finetune_cmd(a).map(Some),
        Command::Evaluate(a) => evaluate_cmd(a).map(Some),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Some(dir)) => {
            println!("wrote {}", dir.display());
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["subgnn", "generate", "--bogus"]), 2);
        assert_eq!(run(["subgnn", "evaluate", "--study", "Q"]), 2);
    }

    #[test]
    fn evaluate_without_checkpoint_exits_2() {
        let cli = Cli::try_parse_from(["subgnn", "evaluate", "--study", "A", "--data", "x"]).unwrap();
        let err = execute(&cli).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().starts_with("error[usage]"));
        let cli = Cli::try_parse_from(["subgnn", "evaluate", "--study", "A", "--checkpoint", "/no/such.json", "--data", "x"]).unwrap();
        assert_eq!(execute(&cli).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn generate_writes_dataset_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g");
        let args = ["subgnn", "generate", "--seed", "7", "--feeders", "2", "--der", "20", "--horizon-minutes", "60"];
        let code = run(args.iter().map(|s| s.to_string()).chain(["--out".into(), out.display().to_string()]));
        assert_eq!(code, 0);
        let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest.command, "generate");
        assert!(manifest.outputs.iter().any(|o| o.path == Path::new("nodes.csv")));
        assert!(!out.join("manifest.json.tmp").exists());
        assert_eq!(Dataset::read(&out).unwrap().snapshots.len(), 4);
    }

    #[test]
    fn der_flag_rejects_off_grid_values() {
        assert!(Cli::try_parse_from(["subgnn", "generate", "--der", "10"]).is_err());
        assert!(Cli::try_parse_from(["subgnn", "generate", "--der", "40"]).is_ok());
    }
}

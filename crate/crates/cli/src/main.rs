//! `topo`: dataset generation, simulation, training and evaluation.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use topo_core::evalharness::{evaluate, EvalError, EvalOptions, EvalReport};
use topo_core::generator::{build_dataset, generate_unique_with, DatasetRecord, GenError, Prompt, MAX_COMPONENTS, MIN_COMPONENTS};
use topo_core::policy::{
    iterative_adapt, rl_train, sft_examples, sft_train, Checkpoint, NetlistGrammar, PolicyError, StepMetrics, TrainPhase,
};
use topo_core::reward::{train_estimators, EstimatorBackend, FitOptions, LearnedEstimators};
use topo_core::simulator::{simulate, Design, SimResult};

use config::{Backend, RunConfig};
use output::{read_jsonl, to_jsonl, write_atomic, write_manifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Diverged(m) => CliError::Diverged(m),
            PolicyError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyPromptSet | EvalError::InvalidM => CliError::Usage(e.to_string()),
            EvalError::Policy(p) => p.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "topo", version, about = "Power-converter topology synthesis")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override; repeatable, applied after the config file.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Sft,
    Rl,
    Ia,
}

#[derive(Subcommand)]
enum Command {
    /// Random-search unique topologies, simulate each at five duties and
    /// write the prompted dataset.
    Gen {
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a JSONL file of designs.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training phase.
    Train {
        #[arg(long, value_enum)]
        phase: PhaseArg,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint from the previous phase (rl and ia).
        #[arg(long)]
        from: Option<PathBuf>,
        /// Learned estimator artifact; trained from the dataset when absent.
        #[arg(long)]
        estimators: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample from a checkpoint and report metrics.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSONL file of prompts.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, default_value = "1,3,5")]
        m: String,
        #[arg(long)]
        samples: Option<usize>,
        /// Learned estimators for the classifier columns.
        #[arg(long)]
        estimators: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn with_flags(cli: &Cli, flags: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    let mut overrides = cli.set.clone();
    for (k, v) in flags {
        if let Some(v) = v {
            overrides.push(format!("{k}={v}"));
        }
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen { components, target, seed, out } => {
            let cfg = with_flags(
                &cli,
                &[
                    ("components", components.map(|v| v.to_string())),
                    ("target", target.map(|v| v.to_string())),
                    ("seed", seed.map(|v| v.to_string())),
                    ("out", out.as_ref().map(|p| p.display().to_string())),
                ],
            )?;
            cmd_gen(&cfg)
        }
        Command::Simulate { input, out } => {
            let cfg = with_flags(&cli, &[])?;
            cmd_simulate(&cfg, input, out)
        }
        Command::Train { phase, data, from, estimators, seed, out } => {
            let cfg = with_flags(&cli, &[("seed", seed.map(|v| v.to_string()))])?;
            cmd_train(&cfg, *phase, data, from.as_deref(), estimators.as_deref(), out)
        }
        Command::Eval { ckpt, prompts, m, samples, estimators, seed, out } => {
            let cfg = with_flags(
                &cli,
                &[
                    ("samples", samples.map(|v| v.to_string())),
                    ("seed", seed.map(|v| v.to_string())),
                ],
            )?;
            cmd_eval(&cfg, ckpt, prompts, m, estimators.as_deref(), out.as_deref())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SimRecord {
    design: Design,
    sim: SimResult,
}

#[derive(Serialize)]
struct GenSummary {
    unique: usize,
    designs: usize,
    records: usize,
    group_histogram: [usize; 4],
    exhausted: bool,
}

fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    if !(MIN_COMPONENTS..=MAX_COMPONENTS).contains(&cfg.components) {
        return Err(CliError::Usage(format!(
            "components must lie in {MIN_COMPONENTS}..={MAX_COMPONENTS}, got {}",
            cfg.components
        )));
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("gen needs --out".into()))?;
    let (netlists, exhausted) = match generate_unique_with(cfg.components, cfg.target, cfg.seed, cfg.budget()) {
        Ok(n) => (n, None),
        Err(GenError::SpaceExhausted { found, target, netlists }) => (netlists, Some((found, target))),
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let data = build_dataset(&netlists, &cfg.sim, cfg.train.mix, cfg.seed);
    let simulated: Vec<SimRecord> = data
        .simulated
        .iter()
        .map(|(design, sim)| SimRecord { design: design.clone(), sim: sim.clone() })
        .collect();
    let prompts: Vec<&Prompt> = data.records.iter().map(|r| &r.prompt).collect();
    write_atomic(&out.join("simulated.jsonl"), to_jsonl(&simulated).as_bytes())?;
    write_atomic(&out.join("records.jsonl"), to_jsonl(&data.records).as_bytes())?;
    write_atomic(&out.join("prompts.jsonl"), to_jsonl(&prompts).as_bytes())?;
    let summary = GenSummary {
        unique: netlists.len(),
        designs: simulated.len(),
        records: data.records.len(),
        group_histogram: data.group_histogram(),
        exhausted: exhausted.is_some(),
    };
    write_manifest(&out.join("manifest.json"), "gen", cfg, &summary)?;
    println!("unique topologies: {}", summary.unique);
    println!("group histogram (G1..G4): {:?}", summary.group_histogram);
    match exhausted {
        Some((found, target)) => Err(CliError::Data(format!(
            "design space exhausted: {found} of {target} unique topologies (partial output kept)"
        ))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct SimLine {
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<SimResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_simulate(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        lines.push(match serde_json::from_str::<Design>(l) {
            Ok(d) => SimLine { line, result: Some(simulate(&d, &cfg.sim)), error: None },
            Err(e) => SimLine { line, result: None, error: Some(e.to_string()) },
        });
    }
    write_atomic(out, to_jsonl(&lines).as_bytes())?;
    let failed = lines.iter().filter(|l| l.error.is_some()).count();
    println!("simulated {} designs, {failed} unreadable", lines.len() - failed);
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Checkpoint::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_estimators(path: &Path) -> Result<LearnedEstimators, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    LearnedEstimators::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn reward_backend(
    cfg: &RunConfig,
    data: &Path,
    estimators: Option<&Path>,
    out: &Path,
) -> Result<EstimatorBackend, CliError> {
    Ok(match cfg.reward_backend {
        Backend::Oracle => EstimatorBackend::oracle(cfg.sim.clone()),
        Backend::Learned => {
            let est = match estimators {
                Some(p) => load_estimators(p)?,
                None => {
                    let sims: Vec<SimRecord> = read_jsonl(&data.join("simulated.jsonl"))?;
                    let pairs: Vec<(Design, SimResult)> = sims.into_iter().map(|r| (r.design, r.sim)).collect();
                    info!("training estimators on {} designs", pairs.len());
                    let est = train_estimators(&pairs, &FitOptions { seed: cfg.seed, ..FitOptions::default() });
                    write_atomic(&sidecar(out, ".estimators.json"), est.to_json().as_bytes())?;
                    est
                }
            };
            EstimatorBackend::learned(Some(est), cfg.sim.clone())
        }
    })
}

fn require_phase(from: Option<&Path>, want: TrainPhase, phase: &str) -> Result<Checkpoint, CliError> {
    let order = "phases run in order sft -> rl -> ia";
    let path = from.ok_or_else(|| {
        CliError::Usage(format!("{phase} needs --from with a {want:?} checkpoint ({order})"))
    })?;
    let ck = load_checkpoint(path)?;
    if ck.phase != want {
        return Err(CliError::Usage(format!(
            "{phase} needs a {want:?} checkpoint, got {:?} ({order})",
            ck.phase
        )));
    }
    Ok(ck)
}

fn cmd_train(
    cfg: &RunConfig,
    phase: PhaseArg,
    data: &Path,
    from: Option<&Path>,
    estimators: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let g = NetlistGrammar;
    let records: Vec<DatasetRecord> = read_jsonl(&data.join("records.jsonl"))?;
    let prompts: Vec<Prompt> = records.iter().map(|r| r.prompt.clone()).collect();
    let metrics_path = sidecar(out, ".metrics.csv");
    let (ck, summary) = match phase {
        PhaseArg::Sft => {
            let examples = sft_examples(&records)?;
            let (params, report) = sft_train(&g, &examples, &cfg.train)?;
            let mut csv = String::from("step,nll\n");
            for (i, v) in report.batch_nll.iter().enumerate() {
                csv.push_str(&format!("{i},{v:.6}\n"));
            }
            write_atomic(&metrics_path, csv.as_bytes())?;
            let last = report.batch_nll.last().copied().unwrap_or(f64::NAN);
            (
                Checkpoint::new(TrainPhase::Sft, cfg.train.clone(), params.clone(), params),
                serde_json::json!({ "final_batch_nll": last, "examples": examples.len() }),
            )
        }
        PhaseArg::Rl => {
            let prev = require_phase(from, TrainPhase::Sft, "rl")?;
            let backend = reward_backend(cfg, data, estimators, out)?;
            let (params, metrics) = rl_train(&g, &prev.params, &prev.reference, &prompts, &backend, &cfg.train)?;
            write_atomic(&metrics_path, step_csv(&metrics).as_bytes())?;
            let tail = &metrics[metrics.len().saturating_sub(200)..];
            let mean = tail.iter().map(|m| m.reward_mean).sum::<f64>() / tail.len().max(1) as f64;
            (
                Checkpoint::new(TrainPhase::Rl, cfg.train.clone(), params, prev.reference),
                serde_json::json!({ "steps": metrics.len(), "final_reward_moving_average": mean }),
            )
        }
        PhaseArg::Ia => {
            let prev = require_phase(from, TrainPhase::Rl, "ia")?;
            if cfg.train.ia_iters == 0 {
                let bytes = std::fs::read(from.unwrap()).map_err(|e| CliError::Data(e.to_string()))?;
                write_atomic(out, &bytes)?;
                write_manifest(&sidecar(out, ".manifest.json"), "train ia", cfg, serde_json::json!({ "rounds": 0 }))?;
                println!("ia_iters = 0: checkpoint copied unchanged");
                return Ok(());
            }
            let backend = reward_backend(cfg, data, estimators, out)?;
            let (params, rounds) = iterative_adapt(&g, &prev.params, &prev.reference, &prompts, &backend, &cfg.train)?;
            let mut csv = String::from("round,sampled,kept,starved,min_kept_efficiency\n");
            for (i, r) in rounds.iter().enumerate() {
                csv.push_str(&format!(
                    "{i},{},{},{},{}\n",
                    r.sampled,
                    r.kept,
                    r.starved,
                    r.min_kept_efficiency.map_or(String::new(), |v| format!("{v:.6}"))
                ));
            }
            write_atomic(&metrics_path, csv.as_bytes())?;
            (
                Checkpoint::new(TrainPhase::Ia, cfg.train.clone(), params, prev.reference),
                serde_json::json!({ "rounds": rounds }),
            )
        }
    };
    let text = serde_json::to_string(&ck).expect("serializable checkpoint");
    write_atomic(out, text.as_bytes())?;
    write_manifest(&sidecar(out, ".manifest.json"), "train", cfg, &summary)?;
    println!("wrote {:?} checkpoint to {}", ck.phase, out.display());
    Ok(())
}

fn step_csv(metrics: &[StepMetrics]) -> String {
    let mut csv = format!("{}\n", StepMetrics::CSV_HEADER);
    for m in metrics {
        csv.push_str(&m.csv_row());
        csv.push('\n');
    }
    csv
}

fn parse_ms(text: &str) -> Result<Vec<usize>, CliError> {
    let ms: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--m: expected comma-separated counts, got `{text}`")))?;
    if ms.is_empty() || ms.contains(&0) {
        return Err(CliError::Usage("--m values must be at least 1".into()));
    }
    Ok(ms)
}

fn cmd_eval(
    cfg: &RunConfig,
    ckpt: &Path,
    prompts_path: &Path,
    m: &str,
    estimators: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ms = parse_ms(m)?;
    let prompts: Vec<Prompt> = read_jsonl(prompts_path)?;
    if prompts.is_empty() {
        return Err(CliError::Usage(format!("{}: no prompts", prompts_path.display())));
    }
    let ck = load_checkpoint(ckpt)?;
    let oracle = EstimatorBackend::oracle(cfg.sim.clone());
    let learned = estimators
        .map(|p| load_estimators(p).map(|e| EstimatorBackend::learned(Some(e), cfg.sim.clone())))
        .transpose()?;
    let opts = EvalOptions {
        samples: cfg.samples,
        draw_factor: cfg.draw_factor,
        ms,
        sampling: cfg.train.sampling(),
        seed: cfg.seed,
    };
    let label = format!("{:?}", ck.phase).to_lowercase();
    let report = evaluate(&label, &ck.params, &prompts, &oracle, learned.as_ref(), &opts)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable report");
    let csv = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    if let Some(dir) = out {
        write_atomic(&dir.join("report.json"), json.as_bytes())?;
        write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
        write_manifest(&dir.join("manifest.json"), "eval", cfg, &report)?;
    }
    println!("{json}");
    print!("{csv}");
    Ok(())
}

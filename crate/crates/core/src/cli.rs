//! Command-line front end.
//!
//! Output directories resolve as `--out`, then `out` in the config file,
//! then `$HGMP_OUT`, then the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::AugmentMode;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::encoder::{Backbone, EncoderParams};
use crate::error::{HgmpError, Result};
use crate::experiments::{
    evaluate, pretrain_encoder, run_ablation_with, shot_sweep_with, sweep_svg, write_results_csv, write_summary_json,
    RunResult,
};
use crate::hetgraph::{generate_synthetic, save_graph, HetGraph, SyntheticSpec};
use crate::prompt::prompt_checkpoint;
use crate::taskbuilder::{build_tasks, TaskKind};

pub const OUT_ENV: &str = "HGMP_OUT";
pub const ENCODER_FILE: &str = "encoder.json";
pub const UNIFORM_ENCODER_FILE: &str = "encoder_uniform.json";
pub const TRACE_FILE: &str = "pretrain_trace.csv";

#[derive(Debug, Parser)]
#[command(name = "hgmp", version, about = "Few-shot prompting on heterogeneous graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-class synthetic dataset.
    Synth {
        /// Synthetic spec (JSON or TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contrastive pre-training; writes a frozen encoder checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Type-blind augmentation instead of the heterogeneous schedule.
        #[arg(long)]
        uniform: bool,
    },
    /// Prompt tuning and query evaluation with a frozen encoder.
    TuneEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        /// Overrides `k`.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Four-variant ablation table per task kind.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Directory holding `encoder.json` and `encoder_uniform.json`;
        /// missing encoders are pre-trained and written there.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
    },
    /// Shot-count sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shot counts, e.g. `1,3,5,10`.
        #[arg(long, value_parser = parse_shots)]
        shots: Option<ShotList>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        /// Also write `sweep.svg`.
        #[arg(long)]
        plot: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed: sets the pre-training seed and shifts the evaluation
    /// seeds to `seed, seed+1, ...`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<Backbone>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotList(pub Vec<usize>);

pub fn parse_shots(s: &str) -> std::result::Result<ShotList, String> {
    let shots = s
        .split(',')
        .map(|p| {
            let p = p.trim();
            match p.parse::<usize>() {
                Ok(0) => Err("shot counts must be positive".to_string()),
                Ok(k) => Ok(k),
                Err(_) => Err(format!("`{p}` is not a shot count")),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ShotList(shots))
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: HgmpError| e.to_string())
}

fn parse_backbone(s: &str) -> std::result::Result<Backbone, String> {
    s.parse().map_err(|e: HgmpError| e.to_string())
}

fn resolve_out(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HgmpError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HgmpError::io(path, e))
}

/// Config with flag overrides applied, plus the output directory.
fn prepare(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.pipeline.pretrain.seed = seed;
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (seed..seed + n).collect();
    }
    if let Some(b) = common.backbone {
        cfg.pipeline.encoder.backbone = b;
    }
    let out = resolve_out(common.out.as_deref(), cfg.out.as_deref());
    ensure_dir(&out)?;
    Ok((cfg, out))
}

fn load_encoder(path: &Path, g: &HetGraph) -> Result<EncoderParams> {
    let ck = Checkpoint::load(path)?;
    let enc = EncoderParams::from_checkpoint(&ck, g.schema())?;
    if !enc.is_frozen() {
        return Err(HgmpError::NotFrozen);
    }
    Ok(enc)
}

fn write_results(results: &[RunResult], out: &Path) -> Result<()> {
    write_results_csv(results, out.join("results.csv"))?;
    write_summary_json(results, out.join("summary.json"))
}

fn print_table(results: &[RunResult]) {
    for r in results {
        println!(
            "{:<10} {:<5} k={:<3} micro {:.4} ± {:.4}  macro {:.4} ± {:.4}",
            r.variant, r.task, r.k, r.micro_mean, r.micro_std, r.macro_mean, r.macro_std
        );
    }
}

fn cmd_synth(spec: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let text = fs::read_to_string(spec).map_err(|e| HgmpError::io(spec, e))?;
    let mut spec_v: SyntheticSpec = if spec.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| HgmpError::Config(format!("{}: {e}", spec.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| HgmpError::Config(format!("{}: {e}", spec.display())))?
    };
    if let Some(s) = seed {
        spec_v.seed = s;
    }
    let g = generate_synthetic(&spec_v)?;
    let dir = resolve_out(out, None);
    save_graph(&g, &dir)?;
    Ok(dir)
}

fn cmd_pretrain(common: &Common, uniform: bool) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let g = cfg.load_graph()?;
    let mode = if uniform { AugmentMode::Uniform } else { AugmentMode::Heterogeneous };
    let (enc, trace) = pretrain_encoder(&g, &cfg.pipeline, mode)?;
    let name = if uniform { UNIFORM_ENCODER_FILE } else { ENCODER_FILE };
    enc.to_checkpoint().save(out.join(name))?;
    trace.save(out.join(TRACE_FILE))?;
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn cmd_tune_eval(common: &Common, checkpoint: &Path, task: Option<TaskKind>, shots: Option<usize>) -> Result<()> {
    let (mut cfg, out) = prepare(common)?;
    if let Some(k) = shots {
        cfg.pipeline.k = k;
    }
    let g = cfg.load_graph()?;
    let enc = load_encoder(checkpoint, &g)?;
    let kind = task.or_else(|| cfg.tasks.first().copied()).unwrap_or(TaskKind::Node);
    let tasks = build_tasks(&g, kind, cfg.pipeline.tau, cfg.pipeline.edge_tie)?;
    let outcomes = evaluate(kind, &tasks, &enc, &cfg.pipeline, cfg.pipeline.k, true, &cfg.seeds)?;
    let prompts = out.join("prompts");
    ensure_dir(&prompts)?;
    for o in &outcomes {
        prompt_checkpoint(&o.bank, &o.head).save(prompts.join(format!("{kind}_seed_{}.json", o.score.seed)))?;
    }
    let result = RunResult::aggregate(
        "HGMP",
        kind,
        cfg.pipeline.k,
        outcomes.into_iter().map(|o| o.score).collect(),
        cfg.pipeline.fingerprint(),
    );
    write_results(std::slice::from_ref(&result), &out)?;
    print_table(&[result]);
    Ok(())
}

fn encoder_or_pretrain(dir: &Path, name: &str, g: &HetGraph, cfg: &RunConfig, mode: AugmentMode) -> Result<EncoderParams> {
    let path = dir.join(name);
    if path.exists() {
        return load_encoder(&path, g);
    }
    log::info!("pre-training {} encoder", if mode == AugmentMode::Uniform { "uniform" } else { "heterogeneous" });
    let (enc, _) = pretrain_encoder(g, &cfg.pipeline, mode)?;
    ensure_dir(dir)?;
    enc.to_checkpoint().save(&path)?;
    Ok(enc)
}

fn cmd_ablate(common: &Common, checkpoint_dir: Option<&Path>, task: Option<TaskKind>) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let kinds: Vec<TaskKind> = match task {
        Some(k) => vec![k],
        None => cfg.tasks.clone(),
    };
    if kinds.is_empty() {
        return Err(HgmpError::Config("no task kinds to ablate".into()));
    }
    let g = cfg.load_graph()?;
    let dir = checkpoint_dir.map(Path::to_path_buf).unwrap_or_else(|| out.clone());
    let het = encoder_or_pretrain(&dir, ENCODER_FILE, &g, &cfg, AugmentMode::Heterogeneous)?;
    let uniform = encoder_or_pretrain(&dir, UNIFORM_ENCODER_FILE, &g, &cfg, AugmentMode::Uniform)?;
    let mut results = Vec::new();
    for kind in kinds {
        let tasks = build_tasks(&g, kind, cfg.pipeline.tau, cfg.pipeline.edge_tie)?;
        results.extend(run_ablation_with(kind, &tasks, &het, &uniform, &cfg.pipeline, &cfg.seeds)?);
    }
    write_results(&results, &out)?;
    print_table(&results);
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    shots: Option<&ShotList>,
    checkpoint: Option<&Path>,
    task: Option<TaskKind>,
    plot: bool,
) -> Result<()> {
    let (cfg, out) = prepare(common)?;
    let shots = shots.map(|s| s.0.clone()).unwrap_or_else(|| cfg.shots.clone());
    let g = cfg.load_graph()?;
    let kind = task.or_else(|| cfg.tasks.first().copied()).unwrap_or(TaskKind::Node);
    let enc = match checkpoint {
        Some(p) => load_encoder(p, &g)?,
        None => pretrain_encoder(&g, &cfg.pipeline, AugmentMode::Heterogeneous)?.0,
    };
    let tasks = build_tasks(&g, kind, cfg.pipeline.tau, cfg.pipeline.edge_tie)?;
    let results = shot_sweep_with(kind, &tasks, &enc, &cfg.pipeline, &shots, &cfg.seeds)?;
    write_results(&results, &out)?;
    if plot {
        write_text(&out.join("sweep.svg"), &sweep_svg(&results))?;
    }
    print_table(&results);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, seed, out } => {
            let dir = cmd_synth(spec, *seed, out.as_deref())?;
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Pretrain { common, uniform } => cmd_pretrain(common, *uniform),
        Command::TuneEval {
            common,
            checkpoint,
            task,
            shots,
        } => cmd_tune_eval(common, checkpoint, *task, *shots),
        Command::Ablate {
            common,
            checkpoint_dir,
            task,
        } => cmd_ablate(common, checkpoint_dir.as_deref(), *task),
        Command::Sweep {
            common,
            shots,
            checkpoint,
            task,
            plot,
        } => cmd_sweep(common, shots.as_ref(), checkpoint.as_deref(), *task, *plot),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

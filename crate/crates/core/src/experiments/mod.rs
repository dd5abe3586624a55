//! End-to-end task suites, ablation variants, shot sweeps and result files.

mod metrics;

pub use metrics::{accuracy, macro_f1, mean_std, micro_f1};

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentMode;
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams};
use crate::error::{HgmpError, Result};
use crate::hetgraph::HetGraph;
use crate::pretrain::{pretrain, PretrainConfig, PretrainTrace};
use crate::prompt::{init_prompts, predict_batch, tune, PromptBank, PromptInit, PromptMode, TaskHead, TuneConfig};
use crate::rng::derive_seed;
use crate::taskbuilder::{build_target_corpus, build_tasks, sample_k_shot, EdgeTieRule, InducedSubgraph, TaskKind};

/// Everything that determines one pipeline run apart from the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tau: usize,
    pub edge_tie: EdgeTieRule,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub tune: TuneConfig,
    pub prompt_init: PromptInit,
    pub prompt_mode: PromptMode,
    pub k: usize,
    pub query_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: crate::taskbuilder::DEFAULT_TAU,
            edge_tie: EdgeTieRule::Skip,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            tune: TuneConfig::default(),
            prompt_init: PromptInit::Ones,
            prompt_mode: PromptMode::Multiplicative,
            k: 10,
            query_fraction: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Which of the two heterogeneous components are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub het_augmentation: bool,
    pub het_prompt_feature: bool,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::new(false, false),
        AblationVariant::new(false, true),
        AblationVariant::new(true, false),
        AblationVariant::new(true, true),
    ];

    pub const fn new(het_augmentation: bool, het_prompt_feature: bool) -> Self {
        Self {
            het_augmentation,
            het_prompt_feature,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.het_augmentation, self.het_prompt_feature) {
            (false, false) => "VARIANT 1",
            (false, true) => "VARIANT 2",
            (true, false) => "VARIANT 3",
            (true, true) => "HGMP",
        }
    }

    pub fn augment_mode(&self) -> AugmentMode {
        if self.het_augmentation {
            AugmentMode::Heterogeneous
        } else {
            AugmentMode::Uniform
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub task: TaskKind,
    pub k: usize,
    pub per_seed: Vec<SeedScore>,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
    pub config_fingerprint: String,
}

impl RunResult {
    pub fn aggregate(variant: &str, task: TaskKind, k: usize, per_seed: Vec<SeedScore>, fingerprint: String) -> Self {
        let micro: Vec<f64> = per_seed.iter().map(|s| s.micro_f1).collect();
        let macro_: Vec<f64> = per_seed.iter().map(|s| s.macro_f1).collect();
        let (micro_mean, micro_std) = mean_std(&micro);
        let (macro_mean, macro_std) = mean_std(&macro_);
        Self {
            variant: variant.to_string(),
            task,
            k,
            per_seed,
            micro_mean,
            micro_std,
            macro_mean,
            macro_std,
            config_fingerprint: fingerprint,
        }
    }
}

/// Tuned artifacts and scores of one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub score: SeedScore,
    pub bank: PromptBank,
    pub head: TaskHead,
    pub support_loss: Vec<f64>,
}

/// Fresh encoder pre-trained on the target-node corpus with the given
/// augmentation mode.
pub fn pretrain_encoder(g: &HetGraph, cfg: &PipelineConfig, mode: AugmentMode) -> Result<(EncoderParams, PretrainTrace)> {
    let corpus = build_target_corpus(g, cfg.tau)?;
    let encoder = init_encoder(g.schema(), &cfg.encoder, derive_seed(cfg.pretrain.seed, &[0xE4C]))?;
    let mut pcfg = cfg.pretrain.clone();
    pcfg.augment.mode = mode;
    pretrain(&corpus, encoder, &pcfg)
}

/// Tunes and evaluates one few-shot episode per seed, in parallel.
pub fn evaluate(
    kind: TaskKind,
    tasks: &[Arc<InducedSubgraph>],
    encoder: &EncoderParams,
    cfg: &PipelineConfig,
    k: usize,
    train_prompt: bool,
    seeds: &[u64],
) -> Result<Vec<SeedOutcome>> {
    let first = tasks
        .first()
        .ok_or_else(|| HgmpError::NoLabels(format!("no {kind} tasks to evaluate")))?;
    let schema = first.graph.schema_arc().clone();
    let num_classes = schema.num_classes;
    let tune_cfg = TuneConfig {
        train_prompt,
        ..cfg.tune.clone()
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let episode = sample_k_shot(kind, tasks, k, cfg.query_fraction, seed)?;
            if episode.query.is_empty() {
                return Err(HgmpError::InvalidArgument("query set is empty".into()));
            }
            let bank = if train_prompt {
                init_prompts(&schema, cfg.prompt_init, cfg.prompt_mode, derive_seed(seed, &[0xB4]))
            } else {
                init_prompts(&schema, PromptInit::Ones, PromptMode::Multiplicative, 0)
            };
            let head = TaskHead::init(encoder.hidden(), num_classes, derive_seed(seed, &[0x4E]));
            let (bank, head, trace) = tune(&episode, encoder, bank, head, &tune_cfg)?;
            let graphs: Vec<&HetGraph> = episode.query.iter().map(|s| &s.graph).collect();
            let preds: Vec<usize> = predict_batch(&graphs, encoder, &bank, &head)?
                .into_iter()
                .map(|p| p.class)
                .collect();
            let golds: Vec<usize> = episode.query.iter().map(|s| s.label.expect("labeled")).collect();
            Ok(SeedOutcome {
                score: SeedScore {
                    seed,
                    micro_f1: micro_f1(&preds, &golds, num_classes)?,
                    macro_f1: macro_f1(&preds, &golds, num_classes)?,
                },
                bank,
                head,
                support_loss: trace.loss,
            })
        })
        .collect()
}

fn scores(outcomes: &[SeedOutcome]) -> Vec<SeedScore> {
    outcomes.iter().map(|o| o.score.clone()).collect()
}

/// Full pipeline: task construction, heterogeneous pre-training, prompt
/// tuning per seed, query evaluation.
pub fn run_task(g: &HetGraph, kind: TaskKind, cfg: &PipelineConfig, seeds: &[u64]) -> Result<RunResult> {
    let tasks = build_tasks(g, kind, cfg.tau, cfg.edge_tie)?;
    let (encoder, _) = pretrain_encoder(g, cfg, AugmentMode::Heterogeneous)?;
    let outcomes = evaluate(kind, &tasks, &encoder, cfg, cfg.k, true, seeds)?;
    Ok(RunResult::aggregate("HGMP", kind, cfg.k, scores(&outcomes), cfg.fingerprint()))
}

/// The four ablation rows given already pre-trained encoders for the
/// heterogeneous and uniform augmentation modes.
pub fn run_ablation_with(
    kind: TaskKind,
    tasks: &[Arc<InducedSubgraph>],
    het_encoder: &EncoderParams,
    uniform_encoder: &EncoderParams,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    AblationVariant::ALL
        .iter()
        .map(|v| {
            let encoder = if v.het_augmentation { het_encoder } else { uniform_encoder };
            let outcomes = evaluate(kind, tasks, encoder, cfg, cfg.k, v.het_prompt_feature, seeds)?;
            Ok(RunResult::aggregate(v.name(), kind, cfg.k, scores(&outcomes), cfg.fingerprint()))
        })
        .collect()
}

pub fn run_ablation(g: &HetGraph, kind: TaskKind, cfg: &PipelineConfig, seeds: &[u64]) -> Result<Vec<RunResult>> {
    let tasks = build_tasks(g, kind, cfg.tau, cfg.edge_tie)?;
    let (het, _) = pretrain_encoder(g, cfg, AugmentMode::Heterogeneous)?;
    let (uniform, _) = pretrain_encoder(g, cfg, AugmentMode::Uniform)?;
    run_ablation_with(kind, &tasks, &het, &uniform, cfg, seeds)
}

/// Smallest per-class item count among labeled tasks.
fn min_class_size(tasks: &[Arc<InducedSubgraph>]) -> (usize, usize) {
    let mut counts = std::collections::BTreeMap::new();
    for t in tasks {
        if let Some(y) = t.label {
            *counts.entry(y).or_insert(0usize) += 1;
        }
    }
    counts.into_iter().map(|(c, n)| (n, c)).min().map(|(n, c)| (c, n)).unwrap_or((0, 0))
}

/// One result per shot count, each over the same seeds and encoder.
pub fn shot_sweep_with(
    kind: TaskKind,
    tasks: &[Arc<InducedSubgraph>],
    encoder: &EncoderParams,
    cfg: &PipelineConfig,
    shots: &[usize],
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let &max_k = shots
        .iter()
        .max()
        .ok_or_else(|| HgmpError::InvalidArgument("no shot counts given".into()))?;
    let (class, available) = min_class_size(tasks);
    if available < max_k + 1 {
        return Err(HgmpError::InsufficientClass {
            class,
            available,
            k: max_k,
            needed: max_k + 1,
        });
    }
    shots
        .iter()
        .map(|&k| {
            let outcomes = evaluate(kind, tasks, encoder, cfg, k, true, seeds)?;
            Ok(RunResult::aggregate("HGMP", kind, k, scores(&outcomes), cfg.fingerprint()))
        })
        .collect()
}

pub fn shot_sweep(
    g: &HetGraph,
    kind: TaskKind,
    cfg: &PipelineConfig,
    shots: &[usize],
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let tasks = build_tasks(g, kind, cfg.tau, cfg.edge_tie)?;
    if shots.is_empty() {
        return Err(HgmpError::InvalidArgument("no shot counts given".into()));
    }
    let (encoder, _) = pretrain_encoder(g, cfg, AugmentMode::Heterogeneous)?;
    shot_sweep_with(kind, &tasks, &encoder, cfg, shots, seeds)
}

/// `variant,task,k,seed,micro,macro` rows.
pub fn write_results_csv(results: &[RunResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| HgmpError::io(path, e.into()))?;
    let wrap = |e: csv::Error| HgmpError::io(path, e.into());
    w.write_record(["variant", "task", "k", "seed", "micro", "macro"]).map_err(wrap)?;
    for r in results {
        for s in &r.per_seed {
            w.write_record([
                r.variant.clone(),
                r.task.to_string(),
                r.k.to_string(),
                s.seed.to_string(),
                s.micro_f1.to_string(),
                s.macro_f1.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| HgmpError::io(path, e))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    variant: &'a str,
    task: TaskKind,
    k: usize,
    seeds: usize,
    micro_mean: f64,
    micro_std: f64,
    macro_mean: f64,
    macro_std: f64,
    config_fingerprint: &'a str,
}

pub fn write_summary_json(results: &[RunResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rows: Vec<SummaryRow> = results
        .iter()
        .map(|r| SummaryRow {
            variant: &r.variant,
            task: r.task,
            k: r.k,
            seeds: r.per_seed.len(),
            micro_mean: r.micro_mean,
            micro_std: r.micro_std,
            macro_mean: r.macro_mean,
            macro_std: r.macro_std,
            config_fingerprint: &r.config_fingerprint,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rows).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| HgmpError::io(path, e))
}

/// Mean micro-F1 against shot count, with a one-std band, as SVG.
pub fn sweep_svg(results: &[RunResult]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let kmax = results.iter().map(|r| r.k).max().unwrap_or(1).max(1) as f64;
    let x = |k: usize| PAD + (W - 2.0 * PAD) * k as f64 / kmax;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\">shots</text>\n\
         <text x=\"12\" y=\"{cy}\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">micro-F1</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        lx = H - 12.0,
        cy = H / 2.0,
    );
    for tick in [0.0, 0.5, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.1}</text>\n",
            PAD - 6.0,
            y(tick) + 4.0
        ));
    }
    let points: Vec<String> = results.iter().map(|r| format!("{:.2},{:.2}", x(r.k), y(r.micro_mean))).collect();
    for r in results {
        svg.push_str(&format!(
            "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"steelblue\" stroke-opacity=\"0.5\"/>\n\
             <circle cx=\"{0:.2}\" cy=\"{3:.2}\" r=\"3\" fill=\"steelblue\"/>\n\
             <text x=\"{0:.2}\" y=\"{4:.2}\" text-anchor=\"middle\">{5}</text>\n",
            x(r.k),
            y(r.micro_mean - r.micro_std),
            y(r.micro_mean + r.micro_std),
            y(r.micro_mean),
            H - PAD + 16.0,
            r.k
        ));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n</svg>\n",
        points.join(" ")
    ));
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{generate_synthetic, SyntheticSpec};

    fn quick() -> PipelineConfig {
        PipelineConfig {
            tau: 1,
            encoder: EncoderConfig {
                hidden: 8,
                latent: 4,
                ..EncoderConfig::default()
            },
            pretrain: PretrainConfig {
                epochs: 1,
                batch_size: 16,
                ..PretrainConfig::default()
            },
            tune: TuneConfig {
                steps: 10,
                ..TuneConfig::default()
            },
            k: 3,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn variant_names_and_components() {
        let names: Vec<_> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
        assert_eq!(names, ["VARIANT 1", "VARIANT 2", "VARIANT 3", "HGMP"]);
        let base = AblationVariant::ALL[0];
        for v in &AblationVariant::ALL[1..3] {
            let diffs = usize::from(v.het_augmentation != base.het_augmentation)
                + usize::from(v.het_prompt_feature != base.het_prompt_feature);
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn run_task_shape_and_determinism() {
        let g = generate_synthetic(&SyntheticSpec::benchmark(45, 3, 0.9, 1)).unwrap();
        let a = run_task(&g, TaskKind::Node, &quick(), &[1, 2, 3]).unwrap();
        assert_eq!(a.per_seed.len(), 3);
        assert!(a.micro_std >= 0.0 && (0.0..=1.0).contains(&a.micro_mean));
        let b = run_task(&g, TaskKind::Node, &quick(), &[1, 2, 3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_rejects_oversized_shot() {
        let g = generate_synthetic(&SyntheticSpec::benchmark(30, 3, 0.9, 1)).unwrap();
        let err = shot_sweep(&g, TaskKind::Node, &quick(), &[1, 10], &[1]).unwrap_err();
        assert!(matches!(err, HgmpError::InsufficientClass { .. }));
    }

    #[test]
    fn result_files() {
        let r = RunResult::aggregate(
            "HGMP",
            TaskKind::Node,
            3,
            vec![
                SeedScore {
                    seed: 1,
                    micro_f1: 0.5,
                    macro_f1: 0.25,
                },
                SeedScore {
                    seed: 2,
                    micro_f1: 0.75,
                    macro_f1: 0.5,
                },
            ],
            "ab".into(),
        );
        let dir = tempfile::tempdir().unwrap();
        write_results_csv(&[r.clone()], dir.path().join("results.csv")).unwrap();
        write_summary_json(&[r.clone()], dir.path().join("summary.json")).unwrap();
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("variant,task,k,seed,micro,macro"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(json[0]["micro_mean"], 0.625);
        assert!(sweep_svg(&[r]).starts_with("<svg"));
    }
}

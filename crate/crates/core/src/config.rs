//! Declarative run configuration (TOML).
//!
//! ```toml
//! dataset = "data/acm"          # or a [synthetic] table
//! seeds = [0, 1, 2, 3, 4]
//! out = "runs/acm"
//! tasks = ["node"]
//! shots = [1, 3, 5, 10]
//! tau = 2
//! k = 10
//! query_fraction = 1.0
//!
//! [encoder]
//! backbone = "gcn"
//! hidden = 64
//! layers = 2
//! latent = 32
//!
//! [pretrain]
//! temperature = 0.5
//! batch_size = 32
//! epochs = 20
//! lr = 0.01
//! optimizer = "sgd"
//! seed = 0
//!
//! [pretrain.augment]
//! ratio = 0.2
//! views = [["node_mask"], ["edge_permute"]]
//!
//! [tune]
//! steps = 200
//! lr = 0.003
//! optimizer = "adam"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HgmpError, Result};
use crate::experiments::PipelineConfig;
use crate::hetgraph::{generate_synthetic, load_graph, HetGraph, SyntheticSpec};
use crate::taskbuilder::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub tasks: Vec<TaskKind>,
    pub shots: Vec<usize>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: None,
            seeds: (0..5).collect(),
            out: None,
            tasks: vec![TaskKind::Node],
            shots: vec![1, 3, 5, 10],
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HgmpError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HgmpError::Config(format!("{}: {e}", path.display())))?;
        // Relative dataset paths resolve against the config file.
        if let (Some(ds), Some(dir)) = (&cfg.dataset, path.parent()) {
            if ds.is_relative() {
                cfg.dataset = Some(dir.join(ds));
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.dataset.is_some() == self.synthetic.is_some() {
            return Err(HgmpError::Config("set exactly one of `dataset` or `[synthetic]`".into()));
        }
        if self.seeds.is_empty() {
            return Err(HgmpError::Config("`seeds` is empty".into()));
        }
        if self.pipeline.k == 0 {
            return Err(HgmpError::Config("`k` must be at least 1".into()));
        }
        self.pipeline
            .pretrain
            .check()
            .map_err(|e| HgmpError::Config(e.to_string()))
    }

    pub fn load_graph(&self) -> Result<HetGraph> {
        match (&self.dataset, &self.synthetic) {
            (Some(path), _) => load_graph(path),
            (None, Some(spec)) => generate_synthetic(spec),
            (None, None) => Err(HgmpError::Config("no dataset configured".into())),
        }
    }
}

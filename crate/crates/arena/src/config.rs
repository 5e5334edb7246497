//! The judge configuration document.
//!
//! One JSON file holds data and model setup, budgets, score weights, phases,
//! submitters and board layouts. Every error names the offending field as a
//! JSON pointer.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use maestro_core::attack::{AttackBudget, GaConfig};
use maestro_core::defense::DefenseConfig;
use maestro_core::model::ModelSpec;
use maestro_core::scoring::{Budgets, ScoreWeights, WarWeights};
use maestro_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::board::{BoardConfig, MetricConfig};
use crate::clock::{Clock, ClockMode};
use crate::records::{PhaseKind, Submitter, SubmitterKind};
use crate::{ArenaError, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_ENV: &str = "MAESTRO_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub config_version: u32,
    pub data_dir: PathBuf,
    /// Seeds the synthetic dataset.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub hidden_models: usize,
    pub eval: EvalConfig,
    pub attack_budget: AttackBudget,
    pub ga: GaConfig,
    pub defense: DefenseConfig,
    pub scoring: ScoringConfig,
    pub phases: Vec<PhaseConfig>,
    pub submitters: Vec<Submitter>,
    #[serde(default)]
    pub boards: BTreeMap<String, BoardConfig>,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub server: ServerConfig,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic { n_train: usize, n_test: usize, num_classes: usize, dims: [usize; 3] },
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf, num_classes: usize },
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::Synthetic { num_classes, .. } | DatasetConfig::Idx { num_classes, .. } => *num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp { hidden: Vec<usize> },
    Lenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out samples each evaluation runs on.
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    #[serde(default)]
    pub budgets: Budgets,
    pub attack_weights: ScoreWeights,
    pub defense_weights: ScoreWeights,
    #[serde(default)]
    pub war: WarWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub name: String,
    pub kind: PhaseKind,
    pub deadline: DateTime<Utc>,
    /// War only: phases whose best records qualify.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
    /// War only: qualifiers per side; `None` admits every submitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub clock: ClockMode,
    /// First timestamp of a frozen clock.
    pub frozen_start: DateTime<Utc>,
    /// Wall-clock limit for one external submission process.
    pub submission_timeout_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            clock: ClockMode::Wall,
            frozen_start: "2026-01-01T00:00:00Z".parse().expect("valid timestamp"),
            submission_timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080 }
    }
}

impl Config {
    /// The desk setup: 12×12 synthetic images, 10 classes, two hidden MLPs.
    pub fn desk(data_dir: impl Into<PathBuf>) -> Self {
        let deadline: DateTime<Utc> = "2030-01-01T00:00:00Z".parse().expect("valid timestamp");
        let phase = |name: &str, kind| PhaseConfig { name: name.into(), kind, deadline, sources: vec![], top_k: None };
        let mut boards = BTreeMap::new();
        boards.insert("attack".to_string(), BoardConfig::default_for(PhaseKind::Attack));
        boards.insert("defense".to_string(), BoardConfig::default_for(PhaseKind::Defense));
        boards.insert("war".to_string(), BoardConfig::default_for(PhaseKind::War));
        Self {
            config_version: CONFIG_VERSION,
            data_dir: data_dir.into(),
            seed: 7,
            dataset: DatasetConfig::Synthetic { n_train: 2000, n_test: 500, num_classes: 10, dims: [12, 12, 1] },
            model: ModelConfig::Mlp { hidden: vec![64, 32] },
            train: TrainConfig::default(),
            hidden_models: 2,
            eval: EvalConfig { n_samples: 100 },
            attack_budget: AttackBudget { epsilon: 0.2, step_size: 0.05, iterations: 10, ..AttackBudget::default() },
            ga: GaConfig::default(),
            defense: DefenseConfig::default(),
            scoring: ScoringConfig {
                budgets: Budgets::default(),
                attack_weights: ScoreWeights::default_attack(),
                defense_weights: ScoreWeights::default_defense(),
                war: WarWeights::default(),
            },
            phases: vec![
                phase("attack", PhaseKind::Attack),
                phase("defense", PhaseKind::Defense),
                PhaseConfig { sources: vec!["attack".into(), "defense".into()], ..phase("war", PhaseKind::War) },
            ],
            submitters: vec![
                Submitter { id: "alice".into(), display_name: "Alice".into(), kind: SubmitterKind::Individual, members: vec![] },
                Submitter { id: "bob".into(), display_name: "Bob".into(), kind: SubmitterKind::Individual, members: vec![] },
                Submitter {
                    id: "ali-team".into(),
                    display_name: "ALI-team".into(),
                    kind: SubmitterKind::Team,
                    members: vec!["alice".into(), "lin".into()],
                },
            ],
            boards,
            timing: TimingConfig::default(),
            workers: 1,
            server: ServerConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            ArenaError::config(pointer, e.into_inner().to_string())
        })?;
        config.fill_boards();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ArenaError::config("", format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn fill_boards(&mut self) {
        for phase in &self.phases {
            self.boards.entry(phase.name.clone()).or_insert_with(|| BoardConfig::default_for(phase.kind));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(ArenaError::config(
                "/config_version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.config_version),
            ));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { n_train, n_test, num_classes, dims } => {
                if *n_train == 0 || *n_test == 0 {
                    return Err(ArenaError::config("/dataset", "n_train and n_test must be >= 1"));
                }
                if *num_classes < 2 {
                    return Err(ArenaError::config("/dataset/num_classes", "need at least 2 classes"));
                }
                if dims.contains(&0) {
                    return Err(ArenaError::config("/dataset/dims", "dims must be >= 1"));
                }
            }
            DatasetConfig::Idx { num_classes, .. } => {
                if *num_classes < 2 {
                    return Err(ArenaError::config("/dataset/num_classes", "need at least 2 classes"));
                }
            }
        }
        if self.hidden_models == 0 {
            return Err(ArenaError::config("/hidden_models", "need at least one hidden model"));
        }
        if self.eval.n_samples == 0 {
            return Err(ArenaError::config("/eval/n_samples", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(ArenaError::config("/workers", "must be >= 1"));
        }
        if !(self.timing.submission_timeout_s > 0.0) {
            return Err(ArenaError::config("/timing/submission_timeout_s", "must be > 0"));
        }
        let core = |pointer: &str, r: maestro_core::Result<()>| r.map_err(|e| ArenaError::config(pointer, e.to_string()));
        core("/train", self.train.validate())?;
        core("/attack_budget", self.attack_budget.validate().map(|_| ()))?;
        core("/ga", self.ga.validate())?;
        core("/defense", self.defense.validate())?;
        core("/scoring/budgets", self.scoring.budgets.validate())?;
        core("/scoring/attack_weights", self.scoring.attack_weights.validate())?;
        core("/scoring/defense_weights", self.scoring.defense_weights.validate())?;
        core("/scoring/war", self.scoring.war.validate())?;
        if let Some(d) = self.model_spec_dims() {
            core("/model", self.model_spec_for(d).validate())?;
        }

        let mut names = HashSet::new();
        for (i, phase) in self.phases.iter().enumerate() {
            if !names.insert(phase.name.as_str()) {
                return Err(ArenaError::config(format!("/phases/{i}/name"), format!("duplicate phase {:?}", phase.name)));
            }
        }
        for (i, phase) in self.phases.iter().enumerate() {
            if phase.kind == PhaseKind::War {
                if phase.sources.is_empty() {
                    return Err(ArenaError::config(format!("/phases/{i}/sources"), "war phase needs source phases"));
                }
                for (j, source) in phase.sources.iter().enumerate() {
                    match self.phase(source) {
                        Some(p) if p.kind != PhaseKind::War => {}
                        Some(_) => {
                            return Err(ArenaError::config(format!("/phases/{i}/sources/{j}"), "a war phase cannot source another war phase"))
                        }
                        None => return Err(ArenaError::config(format!("/phases/{i}/sources/{j}"), format!("unknown phase {source:?}"))),
                    }
                }
                if phase.top_k == Some(0) {
                    return Err(ArenaError::config(format!("/phases/{i}/top_k"), "top_k must be >= 1"));
                }
            } else if !phase.sources.is_empty() || phase.top_k.is_some() {
                return Err(ArenaError::config(format!("/phases/{i}"), "only war phases take sources and top_k"));
            }
        }
        let mut ids = HashSet::new();
        for (i, s) in self.submitters.iter().enumerate() {
            if s.id.is_empty() {
                return Err(ArenaError::config(format!("/submitters/{i}/id"), "id must not be empty"));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(ArenaError::config(format!("/submitters/{i}/id"), format!("duplicate submitter {:?}", s.id)));
            }
            if s.kind == SubmitterKind::Team && s.members.is_empty() {
                return Err(ArenaError::config(format!("/submitters/{i}/members"), "a team needs at least one member"));
            }
        }
        for (name, board) in &self.boards {
            let pointer = format!("/boards/{}", escape_pointer(name));
            if !names.contains(name.as_str()) {
                return Err(ArenaError::config(pointer, format!("board for unknown phase {name:?}")));
            }
            board.validate().map_err(|(i, msg)| ArenaError::config(format!("{pointer}/metrics/{i}"), msg))?;
        }
        Ok(())
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseConfig> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn submitter(&self, id: &str) -> Option<&Submitter> {
        self.submitters.iter().find(|s| s.id == id)
    }

    pub fn board(&self, phase: &str) -> Option<&BoardConfig> {
        self.boards.get(phase)
    }

    fn model_spec_dims(&self) -> Option<[usize; 3]> {
        match &self.dataset {
            DatasetConfig::Synthetic { dims, .. } => Some(*dims),
            DatasetConfig::Idx { .. } => None,
        }
    }

    fn model_spec_for(&self, dims: [usize; 3]) -> ModelSpec {
        let classes = self.dataset.num_classes();
        match &self.model {
            ModelConfig::Mlp { hidden } => ModelSpec::mlp(dims, hidden, classes),
            ModelConfig::Lenet => ModelSpec::lenet(dims, classes),
        }
    }

    /// Hidden-model architecture for images of `dims`.
    pub fn model_spec(&self, dims: [usize; 3]) -> ModelSpec {
        self.model_spec_for(dims)
    }

    pub fn clock(&self, prior_readings: i64) -> Clock {
        match self.timing.clock {
            ClockMode::Wall => Clock::Wall,
            ClockMode::Frozen => Clock::frozen_at(self.timing.frozen_start, prior_readings),
        }
    }

    pub fn metric_config(&self, phase: &str, key: &str) -> Option<&MetricConfig> {
        self.board(phase)?.metrics.iter().find(|m| m.key == key)
    }
}

fn escape_pointer(segment: &str) -> String {
    segment.replace('~', "~0").replace('/', "~1")
}

/// RFC 6901 pointer for a deserializer path.
pub fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for segment in path.iter() {
        match segment {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape_pointer(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape_pointer(variant))),
            Segment::Unknown => {}
        }
    }
    out
}

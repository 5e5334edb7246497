//! Adversarial training and the robustness harness.

use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{fgsm, measure_attack, oracle_for, pgd, Attack, AttackBudget};
use crate::data::Dataset;
use crate::model::{ModelParams, ModelSpec};
use crate::oracle::ModelOracle;
use crate::rng::SplitMix64;
use crate::train::{sgd_train, train_with, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerAttack {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub inner_attack: InnerAttack,
    pub inner_budget: AttackBudget,
    /// Fraction ρ of each batch replaced by adversarial versions.
    pub mix_ratio: f64,
    pub train: TrainConfig,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            inner_attack: InnerAttack::Pgd,
            inner_budget: AttackBudget { epsilon: 0.2, step_size: 0.05, iterations: 5, random_start: true, ..AttackBudget::default() },
            mix_ratio: 0.5,
            train: TrainConfig::default(),
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!("mix_ratio must be in [0, 1], got {}", self.mix_ratio)));
        }
        self.inner_budget.validate()?;
        self.train.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardenedModel {
    pub params: ModelParams,
    pub hardening_seconds: f64,
    pub baseline_seconds: f64,
    pub provenance: String,
}

impl HardenedModel {
    /// Extra time spent hardening over plain training, never negative.
    pub fn overhead_seconds(&self) -> f64 {
        (self.hardening_seconds - self.baseline_seconds).max(0.0)
    }
}

/// Trains with adversarial examples mixed into every batch.
///
/// Before each SGD step the first `⌊ρ·b⌋` samples of the shuffled batch are
/// replaced by inner-attack perturbations computed against the parameters
/// about to be updated, so adversarial examples are regenerated throughout
/// training. PGD random starts draw from a stream keyed by the batch position.
/// The plain-training baseline is run with the same [`TrainConfig`] and timed
/// in the same way.
pub fn adversarial_train(spec: &ModelSpec, data: &Dataset, cfg: &DefenseConfig) -> Result<HardenedModel> {
    cfg.validate()?;
    let started = Instant::now();
    let params = train_with(spec, data, &cfg.train, |current, x, y, pos| {
        let k = (cfg.mix_ratio * x.rows() as f64).floor() as usize;
        if k == 0 {
            return Ok(());
        }
        let head: Vec<usize> = (0..k).collect();
        let clean = x.select_rows(&head)?;
        let oracle = ModelOracle::white_box(Arc::new(current.clone()));
        let adv = match cfg.inner_attack {
            InnerAttack::Fgsm => fgsm(&oracle, &clean, &y[..k], cfg.inner_budget.epsilon)?,
            InnerAttack::Pgd => {
                let stream = ((pos.epoch as u64) << 32) | pos.batch as u64;
                let seed = SplitMix64::derive(cfg.inner_budget.seed, stream).next_u64();
                pgd(&oracle, &clean, &y[..k], &AttackBudget { seed, ..cfg.inner_budget.clone() })?
            }
        };
        let width = x.row_len();
        x.data_mut()[..k * width].copy_from_slice(adv.perturbed.data());
        Ok(())
    })?;
    let hardening_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    sgd_train(spec, data, &cfg.train)?;
    let baseline_seconds = started.elapsed().as_secs_f64();

    Ok(HardenedModel { params, hardening_seconds, baseline_seconds, provenance: cfg.digest() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseResult {
    pub clean_acc: f64,
    /// Accuracy under each suite attack that completed, keyed by attack name.
    pub robust_acc: IndexMap<String, f64>,
    /// Suite attacks that failed, with their error text.
    pub failed: IndexMap<String, String>,
    pub overhead_seconds: f64,
}

/// Runs every suite attack on a fresh oracle over `eval` and records the
/// hardened model's accuracy on the perturbed images.
pub fn measure_defense(
    hardened: &HardenedModel,
    suite: &[Box<dyn Attack>],
    eval: &Dataset,
    query_budget: Option<u64>,
) -> Result<DefenseResult> {
    if suite.is_empty() {
        return Err(Error::Input("attack suite is empty".into()));
    }
    let target = Arc::new(hardened.params.clone());
    let clean_acc = target.accuracy(eval)?;
    let mut robust_acc = IndexMap::new();
    let mut failed = IndexMap::new();
    for attack in suite {
        match measure_attack(|| oracle_for(&target, attack.as_ref(), query_budget), attack.as_ref(), eval) {
            Ok(m) => {
                robust_acc.insert(attack.name(), m.raw.adv_acc);
            }
            Err(e) => {
                failed.insert(attack.name(), e.to_string());
            }
        }
    }
    Ok(DefenseResult { clean_acc, robust_acc, failed, overhead_seconds: hardened.overhead_seconds() })
}

//! Reference attacks and the harness that measures them.
//!
//! All attacks produce images inside the L∞ ball of radius ε around the input,
//! intersected with the pixel box `[0, 1]`.

mod genetic;
mod gradient;
mod random;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::ModelParams;
use crate::oracle::{Capability, ModelOracle, Oracle};
use crate::{Error, Result, Tensor};

pub use genetic::{ga_attack, GaConfig, Genetic};
pub use gradient::{fgsm, pgd, Fgsm, Pgd};
pub use random::{random_search, RandomSearch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    /// L∞ radius ε.
    pub epsilon: f32,
    /// PGD step α.
    pub step_size: f32,
    /// PGD iterations T.
    pub iterations: usize,
    /// Maximum per-sample prediction queries Q; `None` is unlimited.
    pub query_budget: Option<u64>,
    /// Wall-clock limit in seconds; `None` is unlimited.
    pub time_budget: Option<f64>,
    pub random_start: bool,
    /// Seeds PGD random starts, one stream per sample index.
    #[serde(default)]
    pub seed: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            step_size: 0.05,
            iterations: 10,
            query_budget: None,
            time_budget: None,
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackBudget {
    pub fn with_epsilon(epsilon: f32) -> Self {
        Self { epsilon, ..Self::default() }
    }

    /// Hard errors for invalid budgets; returns soft warnings otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 1], got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return Err(Error::Config(format!("time_budget must be > 0, got {t}")));
            }
        }
        let mut warnings = Vec::new();
        if self.step_size > self.epsilon {
            warnings.push(format!(
                "step_size {} exceeds epsilon {}; every PGD step will hit the ball boundary",
                self.step_size, self.epsilon
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub perturbed: Tensor,
    /// Whether each perturbed image is misclassified. Black-box searches fill
    /// this from the predictions they paid for; [`measure_attack`] always
    /// recomputes it from the hidden model.
    pub per_sample_success: Vec<bool>,
    pub queries_used: u64,
    pub gradient_queries_used: u64,
    pub runtime_seconds: f64,
    /// The query budget ran out before the search finished.
    pub budget_exhausted: bool,
}

pub trait Attack: Send + Sync {
    fn name(&self) -> String;

    fn required_capability(&self) -> Capability;

    fn run(&self, oracle: &dyn Oracle, images: &Tensor, labels: &[usize]) -> Result<AttackResult>;
}

/// Returns the input unchanged without touching the oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Attack for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn required_capability(&self) -> Capability {
        Capability::BlackBox
    }

    fn run(&self, _oracle: &dyn Oracle, images: &Tensor, _labels: &[usize]) -> Result<AttackResult> {
        Ok(AttackResult {
            perturbed: images.clone(),
            per_sample_success: Vec::new(),
            queries_used: 0,
            gradient_queries_used: 0,
            runtime_seconds: 0.0,
            budget_exhausted: false,
        })
    }
}

/// Clamps `candidate` into `[origin - ε, origin + ε] ∩ [0, 1]`, elementwise.
pub fn project(candidate: &mut [f32], origin: &[f32], epsilon: f32) {
    for (c, &o) in candidate.iter_mut().zip(origin) {
        *c = c.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

pub fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Euclidean distance between two flattened images, accumulated in `f64`.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn linf_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Mean over rows of the L2 distance between corresponding rows.
pub fn mean_l2(original: &Tensor, perturbed: &Tensor) -> f64 {
    let n = original.rows();
    original
        .iter_rows()
        .zip(perturbed.iter_rows())
        .map(|(a, b)| l2_distance(a, b))
        .sum::<f64>()
        / n as f64
}

/// Raw measurements of one attack run against one hidden model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAttackMetrics {
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub mean_l2: f64,
    pub queries: f64,
    pub gradient_queries: f64,
    pub runtime_s: f64,
}

impl RawAttackMetrics {
    /// Uniform average across runs (one per hidden model).
    pub fn average(runs: &[RawAttackMetrics]) -> Option<RawAttackMetrics> {
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&RawAttackMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Some(RawAttackMetrics {
            clean_acc: mean(|r| r.clean_acc),
            adv_acc: mean(|r| r.adv_acc),
            mean_l2: mean(|r| r.mean_l2),
            queries: mean(|r| r.queries),
            gradient_queries: mean(|r| r.gradient_queries),
            runtime_s: mean(|r| r.runtime_s),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttackMeasurement {
    pub result: AttackResult,
    pub raw: RawAttackMetrics,
}

/// Runs `attack` on a fresh oracle and measures it against the oracle's hidden
/// model.
///
/// Clean and adversarial accuracy are judged directly on the hidden model, so
/// they never show up on the query meter. The reported query counts are read
/// from the oracle, not from the attack's own bookkeeping.
pub fn measure_attack<F>(oracle_factory: F, attack: &dyn Attack, eval: &Dataset) -> Result<AttackMeasurement>
where
    F: FnOnce() -> ModelOracle,
{
    measure_run(oracle_factory, |oracle, x, y| attack.run(oracle, x, y), eval)
}

/// [`measure_attack`] for any attack procedure, including ones whose failures
/// are richer than [`Error`].
pub fn measure_run<F, R, E>(oracle_factory: F, run: R, eval: &Dataset) -> Result<AttackMeasurement, E>
where
    F: FnOnce() -> ModelOracle,
    R: FnOnce(&ModelOracle, &Tensor, &[usize]) -> Result<AttackResult, E>,
    E: From<Error>,
{
    let oracle = oracle_factory();
    let target: Arc<ModelParams> = oracle.target().clone();
    let clean_acc = target.accuracy(eval)?;

    let started = Instant::now();
    let mut result = run(&oracle, &eval.images, &eval.labels)?;
    let runtime_s = started.elapsed().as_secs_f64();

    if result.perturbed.shape() != eval.images.shape() {
        return Err(Error::Shape(format!(
            "attack returned shape {:?} for input {:?}",
            result.perturbed.shape(),
            eval.images.shape()
        ))
        .into());
    }
    let predicted = target.predict_labels(&result.perturbed)?;
    result.per_sample_success = predicted.iter().zip(&eval.labels).map(|(p, y)| p != y).collect();
    let adv_acc = result.per_sample_success.iter().filter(|s| !**s).count() as f64 / eval.len() as f64;
    result.queries_used = oracle.queries_used();
    result.gradient_queries_used = oracle.gradient_queries_used();

    let raw = RawAttackMetrics {
        clean_acc,
        adv_acc,
        mean_l2: mean_l2(&eval.images, &result.perturbed),
        queries: result.queries_used as f64,
        gradient_queries: result.gradient_queries_used as f64,
        runtime_s,
    };
    Ok(AttackMeasurement { result, raw })
}

/// Oracle for `attack` on `target` with the capability the attack requires.
pub fn oracle_for(target: &Arc<ModelParams>, attack: &dyn Attack, query_budget: Option<u64>) -> ModelOracle {
    ModelOracle::new(target.clone(), attack.required_capability(), query_budget)
}

pub(crate) struct Deadline {
    started: Instant,
    budget: Option<f64>,
}

impl Deadline {
    pub(crate) fn start(budget: Option<f64>) -> Self {
        Self { started: Instant::now(), budget }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub(crate) fn expired(&self) -> bool {
        self.budget.is_some_and(|b| self.elapsed() > b)
    }

    pub(crate) fn timeout(&self, partial: AttackResult) -> Error {
        Error::Timeout { budget_seconds: self.budget.unwrap_or(f64::INFINITY), partial: Some(Box::new(partial)) }
    }
}

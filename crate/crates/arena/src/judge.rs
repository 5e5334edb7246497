//! Submission intake and evaluation.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use maestro_core::attack::{
    measure_run, project, Attack, AttackBudget, AttackResult, Fgsm, Genetic, Identity, Pgd, RandomSearch, RawAttackMetrics,
};
use maestro_core::data::Dataset;
use maestro_core::defense::{adversarial_train, measure_defense, DefenseResult, HardenedModel};
use maestro_core::model::{ModelParams, ModelSpec};
use maestro_core::oracle::{ModelOracle, Oracle};
use maestro_core::rng::SplitMix64;
use maestro_core::scoring::{attack_subscores, defense_subscores, overall, MetricMap};
use maestro_core::train::sgd_train;
use maestro_core::weights::{load_weights, save_weights};
use maestro_core::{Error, Tensor};

use crate::clock::Clock;
use crate::config::Config;
use crate::protocol::{handle_attack_line, ClientMessage, Failure, ServerMessage, Step};
use crate::records::{
    truncate_message, ErrorCategory, ErrorRecord, EvaluationRecord, Payload, PhaseKind, Record, Role, Submission, SubmissionId,
};
use crate::sandbox::{run_session, ProcessSpec};
use crate::setup::{check_labels, load_hidden, load_test, load_train, Layout};
use crate::store::{Snapshot, Store};
use crate::{ArenaError, Result};

pub const ATTACK_METHODS: [&str; 5] = ["fgsm", "pgd", "ga", "random", "identity"];
pub const DEFENSE_METHODS: [&str; 2] = ["adversarial-training", "plain"];

/// Terminal state of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Evaluated(EvaluationRecord),
    Failed(ErrorRecord),
}

impl Outcome {
    pub fn submission_id(&self) -> SubmissionId {
        match self {
            Outcome::Evaluated(r) => r.submission_id,
            Outcome::Failed(r) => r.submission_id,
        }
    }
}

/// Why an evaluation step stopped: the submission failed, or the judge did.
#[derive(Debug)]
pub(crate) enum Stop {
    Submission(Failure),
    Judge(ArenaError),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Judge(e.into())
    }
}

impl From<ArenaError> for Stop {
    fn from(e: ArenaError) -> Self {
        Stop::Judge(e)
    }
}

impl From<Failure> for Stop {
    fn from(f: Failure) -> Self {
        Stop::Submission(f)
    }
}

/// Errors from reference methods are the submission's outcome, not the judge's.
fn reference_failure(e: Error) -> Stop {
    let category = match e {
        Error::Timeout { .. } => ErrorCategory::Timeout,
        Error::BudgetExhausted { .. } => ErrorCategory::Budget,
        _ => ErrorCategory::Crash,
    };
    Stop::Submission(Failure::new(category, e.to_string()))
}

/// Loaded evaluation inputs, shared by every evaluation.
pub(crate) struct Assets {
    pub spec: ModelSpec,
    pub eval: Dataset,
    pub hidden: Vec<Arc<ModelParams>>,
    /// Mean clean accuracy of the hidden models on `eval`.
    pub base_clean_acc: f64,
}

pub struct Arena {
    config: Config,
    store: Store,
    clock: Clock,
    layout: Layout,
    assets: Mutex<Option<Arc<Assets>>>,
}

impl std::fmt::Debug for Arena {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Arena").field("data_dir", &self.config.data_dir).finish_non_exhaustive()
    }
}

fn timestamp_metric(t: DateTime<Utc>) -> f64 {
    t.timestamp_micros() as f64 / 1e6
}

impl Arena {
    /// Opens the store under the configured data directory. A frozen clock
    /// resumes after one reading per stored record.
    pub fn open(config: Config) -> Result<Self> {
        let layout = Layout::new(&config.data_dir);
        let store = Store::open(&layout.store())?;
        let clock = config.clock(store.snapshot().record_count() as i64);
        Ok(Self { config, store, clock, layout, assets: Mutex::new(None) })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.store.snapshot()
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn assets(&self) -> Result<Arc<Assets>> {
        let mut guard = self.assets.lock().expect("assets lock");
        if let Some(a) = guard.as_ref() {
            return Ok(a.clone());
        }
        let test = load_test(&self.config)?;
        check_labels(&test, self.config.dataset.num_classes())?;
        let spec = self.config.model_spec(test.dims);
        let n = self.config.eval.n_samples.min(test.len());
        let eval = test.head(n)?;
        let hidden: Vec<Arc<ModelParams>> = load_hidden(&self.config, &spec)?.into_iter().map(Arc::new).collect();
        let mut base = 0.0;
        for h in &hidden {
            base += h.accuracy(&eval)?;
        }
        let assets = Arc::new(Assets { spec, eval, base_clean_acc: base / hidden.len() as f64, hidden });
        *guard = Some(assets.clone());
        Ok(assets)
    }

    /// Registers a submission. Rejects unknown phases and submitters, payloads
    /// that do not fit the phase, and anything after the phase deadline.
    pub fn submit(&self, submitter_id: &str, phase: &str, payload: Payload) -> Result<Submission> {
        let phase_cfg = self.config.phase(phase).ok_or_else(|| ArenaError::NotFound(format!("unknown phase {phase:?}")))?;
        if self.config.submitter(submitter_id).is_none() {
            return Err(ArenaError::NotFound(format!("unknown submitter {submitter_id:?}")));
        }
        let role = payload.role().ok_or_else(|| ArenaError::Input("war entries are created by war runs".into()))?;
        match (phase_cfg.kind, role) {
            (PhaseKind::Attack, Role::Attack) | (PhaseKind::Defense, Role::Defense) | (PhaseKind::War, _) => {}
            (kind, role) => {
                return Err(ArenaError::Input(format!("a {} payload cannot be submitted to a {kind:?} phase", role.as_str())))
            }
        }
        match &payload {
            Payload::Reference { role: Role::Attack, method } if !ATTACK_METHODS.contains(&method.as_str()) => {
                return Err(ArenaError::Input(format!("unknown attack method {method:?}; known: {}", ATTACK_METHODS.join(", "))))
            }
            Payload::Reference { role: Role::Defense, method } if !DEFENSE_METHODS.contains(&method.as_str()) => {
                return Err(ArenaError::Input(format!(
                    "unknown defense method {method:?}; known: {}",
                    DEFENSE_METHODS.join(", ")
                )))
            }
            Payload::External { program, .. } if program.trim().is_empty() => {
                return Err(ArenaError::Input("external payload needs a program".into()))
            }
            _ => {}
        }
        let now = self.clock.now();
        if now > phase_cfg.deadline {
            return Err(ArenaError::DeadlinePassed { phase: phase.to_string(), deadline: phase_cfg.deadline });
        }
        self.store.create_submission(submitter_id, phase, payload, now)
    }

    /// Evaluates one submission and appends exactly one record for it.
    ///
    /// Submission failures become error records. Judge failures (missing data
    /// or hidden models) are returned as errors and leave the submission
    /// pending. A submission that already has a record is re-evaluated only
    /// when `force` is set.
    pub fn evaluate(&self, id: SubmissionId, force: bool) -> Result<Outcome> {
        let snapshot = self.snapshot();
        let submission = snapshot.submission(id).cloned().ok_or_else(|| ArenaError::NotFound(format!("unknown submission {id}")))?;
        if !force && !snapshot.pending().iter().any(|s| s.id == id) {
            return Err(ArenaError::Input(format!("submission {id} already has a record; re-evaluate with force")));
        }
        let kind = self.config.phase(&submission.phase).map(|p| p.kind).ok_or_else(|| {
            ArenaError::Operator(format!("submission {id} belongs to phase {:?}, which is not configured", submission.phase))
        })?;
        let result = match (kind, &submission.payload) {
            (PhaseKind::Attack, _) => self.evaluate_attack(&submission),
            (PhaseKind::Defense, _) => self.evaluate_defense(&submission),
            (PhaseKind::War, Payload::WarEntry { .. }) => {
                return Err(ArenaError::Input(format!("submission {id} is a war entry; run the war again instead")))
            }
            (PhaseKind::War, _) => self.evaluate_war_submission(&submission),
        };
        match result {
            Ok(mut metrics) => {
                let eval_timestamp = self.clock.now();
                metrics.insert("eval_timestamp", timestamp_metric(eval_timestamp));
                let record = EvaluationRecord {
                    submission_id: id,
                    submitter_id: submission.submitter_id.clone(),
                    phase: submission.phase.clone(),
                    metrics,
                    eval_timestamp,
                };
                self.store.append(Record::Evaluation(record.clone()))?;
                Ok(Outcome::Evaluated(record))
            }
            Err(Stop::Submission(failure)) => Ok(Outcome::Failed(self.record_failure(&submission, failure)?)),
            Err(Stop::Judge(e)) => Err(e),
        }
    }

    fn record_failure(&self, submission: &Submission, failure: Failure) -> Result<ErrorRecord> {
        let record = ErrorRecord {
            submission_id: submission.id,
            submitter_id: submission.submitter_id.clone(),
            phase: submission.phase.clone(),
            category: failure.category,
            message: truncate_message(&failure.message),
            eval_timestamp: self.clock.now(),
        };
        self.store.append(Record::Error(record.clone()))?;
        Ok(record)
    }

    /// Evaluates every pending submission in id order, skipping war entries.
    pub fn evaluate_pending(&self) -> Result<Vec<Outcome>> {
        let pending: Vec<SubmissionId> = self
            .snapshot()
            .pending()
            .iter()
            .filter(|s| !matches!(s.payload, Payload::WarEntry { .. }))
            .map(|s| s.id)
            .collect();
        pending.into_iter().map(|id| self.evaluate(id, false)).collect()
    }

    /// Per-submission seed for stochastic reference methods.
    fn seed_for(&self, id: SubmissionId) -> u64 {
        SplitMix64::derive(self.config.seed, id).next_u64()
    }

    pub(crate) fn reference_attack(&self, method: &str, seed: u64) -> Result<Box<dyn Attack>> {
        let budget = AttackBudget { seed, ..self.config.attack_budget.clone() };
        Ok(match method {
            "fgsm" => Box::new(Fgsm { epsilon: budget.epsilon }),
            "pgd" => Box::new(Pgd { budget }),
            "ga" => Box::new(Genetic { budget, config: maestro_core::attack::GaConfig { seed, ..self.config.ga.clone() } }),
            "random" => {
                let draws = self.config.ga.population * self.config.ga.generations;
                Box::new(RandomSearch { budget, draws, seed })
            }
            "identity" => Box::new(Identity),
            other => return Err(ArenaError::Input(format!("unknown attack method {other:?}"))),
        })
    }

    fn process(&self, submission: &Submission, program: &str, args: &[String], tag: &str) -> ProcessSpec {
        ProcessSpec {
            program: program.to_string(),
            args: args.to_vec(),
            scratch: self.layout.scratch(submission.id).join(tag),
            timeout: Duration::from_secs_f64(self.config.timing.submission_timeout_s),
        }
    }

    /// Raw metrics of one attack payload against one target model.
    pub(crate) fn attack_raw(
        &self,
        submission: &Submission,
        target: &Arc<ModelParams>,
        eval: &Dataset,
        tag: &str,
    ) -> Result<RawAttackMetrics, Stop> {
        let query_budget = self.config.attack_budget.query_budget;
        let measured = match &submission.payload {
            Payload::Reference { method, .. } => {
                let attack = self.reference_attack(method, self.seed_for(submission.id))?;
                let capability = attack.required_capability();
                measure_run(
                    || ModelOracle::new(target.clone(), capability, query_budget),
                    |oracle, x, y| attack.run(oracle, x, y).map_err(reference_failure),
                    eval,
                )?
            }
            Payload::External { program, args, capability, .. } => {
                let spec = self.process(submission, program, args, tag);
                let epsilon = self.config.attack_budget.epsilon;
                measure_run(
                    || ModelOracle::new(target.clone(), *capability, query_budget),
                    |oracle, x, y| external_attack(&spec, oracle, x, y, epsilon, query_budget),
                    eval,
                )?
            }
            Payload::WarEntry { .. } => return Err(Stop::Judge(ArenaError::Input("war entries cannot attack".into()))),
        };
        let mut raw = measured.raw;
        raw.runtime_s = self.clock.duration(raw.runtime_s);
        Ok(raw)
    }

    fn attack_metrics(&self, raw: &RawAttackMetrics, input_len: usize) -> Result<MetricMap, Stop> {
        let scoring = &self.config.scoring;
        let subs = attack_subscores(raw, &scoring.budgets, input_len)?;
        let score = overall(&subs, &scoring.attack_weights)?;
        let mut m = MetricMap::new();
        m.insert("clean_acc", raw.clean_acc);
        m.insert("adv_acc", raw.adv_acc);
        m.insert("mean_l2", raw.mean_l2);
        m.insert("queries", raw.queries);
        m.insert("gradient_queries", raw.gradient_queries);
        m.insert("runtime_s", raw.runtime_s);
        m.extend(&subs);
        m.insert("overall_score", score);
        Ok(m)
    }

    /// Runs the attack against every hidden model, averages the raw metrics
    /// uniformly and scores the average.
    fn evaluate_attack(&self, submission: &Submission) -> Result<MetricMap, Stop> {
        let assets = self.assets()?;
        let mut runs = Vec::with_capacity(assets.hidden.len());
        for (i, target) in assets.hidden.iter().enumerate() {
            runs.push(self.attack_raw(submission, target, &assets.eval, &format!("model-{i}"))?);
        }
        let raw = RawAttackMetrics::average(&runs).expect("at least one hidden model");
        self.attack_metrics(&raw, assets.spec.input_len())
    }

    /// Hardened model for a defense payload.
    pub(crate) fn harden(&self, submission: &Submission, assets: &Assets) -> Result<HardenedModel, Stop> {
        let train = load_train(&self.config)?;
        let cfg = &self.config.defense;
        let hardened = match &submission.payload {
            Payload::Reference { method, .. } if method == "adversarial-training" => {
                adversarial_train(&assets.spec, &train, cfg).map_err(reference_failure)?
            }
            Payload::Reference { method, .. } if method == "plain" => {
                let watch = self.clock.stopwatch();
                let params = sgd_train(&assets.spec, &train, &cfg.train).map_err(reference_failure)?;
                let t = watch.seconds();
                HardenedModel { params, hardening_seconds: t, baseline_seconds: t, provenance: "plain".into() }
            }
            Payload::Reference { method, .. } => {
                return Err(Stop::Judge(ArenaError::Input(format!("unknown defense method {method:?}"))))
            }
            Payload::External { program, args, .. } => {
                let spec = self.process(submission, program, args, "defense");
                let watch = self.clock.stopwatch();
                let params = external_defense(&spec, &self.layout, &assets.spec, cfg.train.clone(), self.config.attack_budget.epsilon)?;
                let hardening_seconds = watch.seconds();
                let baseline_seconds = if self.clock.is_frozen() {
                    0.0
                } else {
                    let watch = self.clock.stopwatch();
                    sgd_train(&assets.spec, &train, &cfg.train)?;
                    watch.seconds()
                };
                HardenedModel { params, hardening_seconds, baseline_seconds, provenance: format!("external {program}") }
            }
            Payload::WarEntry { .. } => return Err(Stop::Judge(ArenaError::Input("war entries cannot defend".into()))),
        };
        let hardening_seconds = self.clock.duration(hardened.hardening_seconds);
        let baseline_seconds = self.clock.duration(hardened.baseline_seconds);
        let hardened = HardenedModel { hardening_seconds, baseline_seconds, ..hardened };
        let path = self.layout.weights(submission.id);
        std::fs::create_dir_all(path.parent().expect("weights dir")).map_err(ArenaError::from)?;
        save_weights(&hardened.params, &path)?;
        Ok(hardened)
    }

    pub(crate) fn defense_suite(&self, seed: u64) -> Result<Vec<Box<dyn Attack>>> {
        ["fgsm", "pgd", "ga"].iter().map(|m| self.reference_attack(m, seed)).collect()
    }

    pub(crate) fn defense_metrics(&self, result: &DefenseResult, hardening_s: f64, base_clean_acc: f64) -> Result<MetricMap, Stop> {
        let scoring = &self.config.scoring;
        let subs = defense_subscores(result, base_clean_acc, &scoring.budgets)?;
        let score = overall(&subs, &scoring.defense_weights)?;
        let mut m = MetricMap::new();
        m.insert("clean_acc", result.clean_acc);
        for (name, acc) in &result.robust_acc {
            m.insert(format!("robust_acc_{name}"), *acc);
        }
        m.insert("failed_suite_attacks", result.failed.len() as f64);
        m.insert("overhead_s", result.overhead_seconds);
        m.insert("hardening_s", hardening_s);
        m.extend(&subs);
        m.insert("overall_score", score);
        Ok(m)
    }

    fn evaluate_defense(&self, submission: &Submission) -> Result<MetricMap, Stop> {
        let assets = self.assets()?;
        let hardened = self.harden(submission, &assets)?;
        let suite = self.defense_suite(self.seed_for(submission.id))?;
        let result = measure_defense(&hardened, &suite, &assets.eval, self.config.attack_budget.query_budget)?;
        self.defense_metrics(&result, hardened.hardening_seconds, assets.base_clean_acc)
    }

    /// Hardened weights stored for an evaluated defense submission.
    pub fn hardened_weights(&self, id: SubmissionId) -> Result<ModelParams> {
        let spec = self.assets()?.spec.clone();
        let path = self.layout.weights(id);
        load_weights(&path, &spec).map_err(|e| ArenaError::Operator(format!("weights of submission {id}: {e}")))
    }
}

/// Runs an external attack process against `oracle` and returns its
/// perturbed images projected onto the ε-ball and the pixel box.
fn external_attack(
    spec: &ProcessSpec,
    oracle: &ModelOracle,
    x: &Tensor,
    y: &[usize],
    epsilon: f32,
    query_budget: Option<u64>,
) -> Result<AttackResult, Stop> {
    let task = ServerMessage::AttackTask { images: x.to_rows(), labels: y.to_vec(), epsilon, query_budget };
    let result = run_session(spec, &task, |line| handle_attack_line(oracle, line))?;
    let rows = match result {
        ClientMessage::Result { perturbed: Some(rows), .. } => rows,
        _ => return Err(Failure::protocol("result message carries no perturbed images").into()),
    };
    if rows.len() != x.rows() || rows.iter().any(|r| r.len() != x.row_len()) {
        return Err(Failure::protocol(format!(
            "result has {} rows, expected {} rows of width {}",
            rows.len(),
            x.rows(),
            x.row_len()
        ))
        .into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Failure::protocol("result contains non-finite pixels").into());
    }
    let mut perturbed = Tensor::from_rows(&rows)?;
    for i in 0..x.rows() {
        project(perturbed.row_mut(i), x.row(i), epsilon);
    }
    Ok(AttackResult {
        perturbed,
        per_sample_success: Vec::new(),
        queries_used: oracle.queries_used(),
        gradient_queries_used: 0,
        runtime_seconds: 0.0,
        budget_exhausted: false,
    })
}

/// Runs an external defense process and loads the weights it wrote.
fn external_defense(
    spec: &ProcessSpec,
    layout: &Layout,
    model_spec: &ModelSpec,
    train: maestro_core::train::TrainConfig,
    epsilon: f32,
) -> Result<ModelParams, Stop> {
    let absolute = |p: std::path::PathBuf| std::fs::canonicalize(&p).unwrap_or(p).display().to_string();
    let weights_path = spec.scratch.join("hardened.maes");
    std::fs::create_dir_all(&spec.scratch).map_err(ArenaError::from)?;
    let task = ServerMessage::DefenseTask {
        train_images: absolute(layout.train_images()),
        train_labels: absolute(layout.train_labels()),
        model_spec: model_spec.clone(),
        train,
        epsilon,
        weights_path: absolute(spec.scratch.clone()).to_string() + "/hardened.maes",
    };
    let result = run_session(spec, &task, |line| match serde_json::from_str::<ClientMessage>(line) {
        Ok(done @ ClientMessage::Result { .. }) => Ok(Step::Done(done)),
        Ok(_) => Ok(Step::Reply(ServerMessage::Error { message: "defense tasks have no oracle".into() })),
        Err(e) => Err(Failure::protocol(format!("malformed message: {e}"))),
    })?;
    let path = match result {
        ClientMessage::Result { weights: Some(p), .. } => {
            let p = std::path::PathBuf::from(p);
            if p.is_relative() {
                spec.scratch.join(p)
            } else {
                p
            }
        }
        _ => weights_path,
    };
    load_weights(&path, model_spec).map_err(|e| Stop::Submission(Failure::protocol(format!("invalid hardened weights: {e}"))))
}

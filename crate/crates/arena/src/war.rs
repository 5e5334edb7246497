//! The war tournament: qualifying attacks against qualifying defenses.

use std::collections::BTreeMap;
use std::sync::Arc;

use indexmap::IndexMap;
use maestro_core::defense::DefenseResult;
use maestro_core::model::ModelParams;
use maestro_core::scoring::{attack_subscores, defense_subscores, overall, war_overall, MatchupScore, MetricMap, WarScore};
use serde::Serialize;

use crate::config::PhaseConfig;
use crate::judge::{Assets, Stop};
use crate::records::{EvaluationRecord, MatchupRecord, Payload, PhaseKind, Record, Role, Submission, SubmissionId};
use crate::store::Snapshot;
use crate::{Arena, ArenaError, Result};

/// A submitter's best record on one side of the war.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Qualifier {
    pub submitter_id: String,
    pub submission_id: SubmissionId,
    pub phase: String,
    pub overall_score: f64,
}

/// Best evaluated submission per submitter for `role` in the source phases,
/// ordered by score (ties by earlier submission) and cut to `top_k`, then
/// returned in submitter order.
pub fn qualifiers(snapshot: &Snapshot, phase: &PhaseConfig, role: Role) -> Vec<Qualifier> {
    let mut best: BTreeMap<&str, Qualifier> = BTreeMap::new();
    for source in &phase.sources {
        for record in snapshot.evaluations_in(source) {
            let Some(submission) = snapshot.submission(record.submission_id) else { continue };
            if submission.payload.role() != Some(role) {
                continue;
            }
            let Some(score) = record.overall() else { continue };
            let candidate = Qualifier {
                submitter_id: record.submitter_id.clone(),
                submission_id: record.submission_id,
                phase: record.phase.clone(),
                overall_score: score,
            };
            let better = match best.get(record.submitter_id.as_str()) {
                None => true,
                Some(cur) => rank(&candidate, cur) == std::cmp::Ordering::Less,
            };
            if better {
                best.insert(&record.submitter_id, candidate);
            }
        }
    }
    let mut ranked: Vec<Qualifier> = best.into_values().collect();
    ranked.sort_by(rank);
    if let Some(k) = phase.top_k {
        ranked.truncate(k);
    }
    ranked.sort_by(|a, b| a.submitter_id.cmp(&b.submitter_id));
    ranked
}

fn rank(a: &Qualifier, b: &Qualifier) -> std::cmp::Ordering {
    b.overall_score.total_cmp(&a.overall_score).then(a.submission_id.cmp(&b.submission_id))
}

/// A defense as a war target.
struct Target {
    qualifier: Qualifier,
    params: Arc<ModelParams>,
    clean_acc: f64,
    overhead_s: f64,
}

/// Scores of one attack against one target.
struct Bout {
    attack_score: f64,
    defense_score: f64,
    metrics: MetricMap,
    failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarReport {
    pub run: u64,
    pub phase: String,
    pub attackers: Vec<Qualifier>,
    pub defenders: Vec<Qualifier>,
    pub matchups: Vec<MatchupRecord>,
    pub scores: BTreeMap<String, WarScore>,
}

impl Arena {
    fn war_phase(&self, phase: &str) -> Result<&PhaseConfig> {
        let cfg = self.config().phase(phase).ok_or_else(|| ArenaError::NotFound(format!("unknown phase {phase:?}")))?;
        if cfg.kind != PhaseKind::War {
            return Err(ArenaError::Input(format!("phase {phase:?} is not a war phase")));
        }
        Ok(cfg)
    }

    fn side(&self, snapshot: &Snapshot, phase: &PhaseConfig, role: Role) -> Result<Vec<Qualifier>> {
        let side = qualifiers(snapshot, phase, role);
        if side.is_empty() {
            return Err(ArenaError::Config {
                pointer: "/phases".into(),
                message: format!(
                    "war phase {:?} has no qualifying {} submissions in {:?}",
                    phase.name,
                    role.as_str(),
                    phase.sources
                ),
            });
        }
        Ok(side)
    }

    fn target(&self, snapshot: &Snapshot, qualifier: Qualifier) -> Result<Target> {
        let record = snapshot
            .evaluation_of(qualifier.submission_id)
            .ok_or_else(|| ArenaError::Store(format!("qualifier {} has no evaluation", qualifier.submission_id)))?;
        let metric = |key: &str| {
            record.metrics.get(key).ok_or_else(|| {
                ArenaError::Store(format!("evaluation of submission {} lacks {key}", qualifier.submission_id))
            })
        };
        Ok(Target {
            clean_acc: metric("clean_acc")?,
            overhead_s: metric("overhead_s")?,
            params: Arc::new(self.hardened_weights(qualifier.submission_id)?),
            qualifier,
        })
    }

    /// One attack against one defended model. A failing attack scores 0 and
    /// leaves the defense at its clean accuracy.
    fn bout(&self, attacker: &Submission, target: &Target, assets: &Assets, tag: &str) -> Result<Bout> {
        let scoring = &self.config().scoring;
        let (attack_score, robust, mut metrics, failure) = match self.attack_raw(attacker, &target.params, &assets.eval, tag) {
            Ok(raw) => match attack_subscores(&raw, &scoring.budgets, assets.spec.input_len()) {
                Ok(subs) => {
                    let mut m = MetricMap::new();
                    m.insert("clean_acc", raw.clean_acc);
                    m.insert("adv_acc", raw.adv_acc);
                    m.insert("mean_l2", raw.mean_l2);
                    m.insert("queries", raw.queries);
                    m.insert("runtime_s", raw.runtime_s);
                    m.extend(&subs);
                    (overall(&subs, &scoring.attack_weights)?, raw.adv_acc, m, None)
                }
                Err(e) => (0.0, raw.adv_acc, MetricMap::new(), Some(e.to_string())),
            },
            Err(Stop::Submission(f)) => (0.0, target.clean_acc, MetricMap::new(), Some(f.to_string())),
            Err(Stop::Judge(e)) => return Err(e),
        };
        let result = DefenseResult {
            clean_acc: target.clean_acc,
            robust_acc: IndexMap::from([("war".to_string(), robust)]),
            failed: IndexMap::new(),
            overhead_seconds: target.overhead_s,
        };
        let subs = defense_subscores(&result, assets.base_clean_acc, &scoring.budgets)?;
        let defense_score = overall(&subs, &scoring.defense_weights)?;
        metrics.insert("attack_score", attack_score);
        metrics.insert("defense_score", defense_score);
        Ok(Bout { attack_score, defense_score, metrics, failure })
    }

    /// Plays every qualifying attack against every qualifying defense and
    /// records one matchup per pair plus one war entry per participant.
    pub fn run_war(&self, phase: &str) -> Result<WarReport> {
        let phase_cfg = self.war_phase(phase)?.clone();
        let snapshot = self.snapshot();
        let attackers = self.side(&snapshot, &phase_cfg, Role::Attack)?;
        let defenders = self.side(&snapshot, &phase_cfg, Role::Defense)?;
        let assets = self.assets()?;
        let targets: Vec<Target> = defenders.iter().map(|q| self.target(&snapshot, q.clone())).collect::<Result<_>>()?;
        let run = snapshot.next_war_run();

        let mut matchups = Vec::new();
        for a in &attackers {
            let submission = snapshot.submission(a.submission_id).expect("qualifier submission").clone();
            for t in &targets {
                let tag = format!("war-{run}-vs-{}", t.qualifier.submission_id);
                let bout = self.bout(&submission, t, &assets, &tag)?;
                let record = MatchupRecord {
                    run,
                    phase: phase.to_string(),
                    attacker: a.submitter_id.clone(),
                    defender: t.qualifier.submitter_id.clone(),
                    attack_submission: a.submission_id,
                    defense_submission: t.qualifier.submission_id,
                    attack_score: bout.attack_score,
                    defense_score: bout.defense_score,
                    metrics: bout.metrics,
                    failure: bout.failure,
                    eval_timestamp: self.clock().now(),
                };
                self.store().append(Record::Matchup(record.clone()))?;
                matchups.push(record);
            }
        }

        let scores: Vec<MatchupScore> = matchups
            .iter()
            .map(|m| MatchupScore {
                attacker: m.attacker.clone(),
                defender: m.defender.clone(),
                attack_score: m.attack_score,
                defense_score: m.defense_score,
            })
            .collect();
        let ids = |side: &[Qualifier]| side.iter().map(|q| q.submitter_id.clone()).collect::<Vec<_>>();
        let totals = war_overall(&scores, &ids(&attackers), &ids(&defenders), &self.config().scoring.war)?;

        for (submitter, score) in &totals {
            let entry = self.store().create_submission(submitter, phase, Payload::WarEntry { run }, self.clock().now())?;
            let faced = matchups.iter().filter(|m| &m.attacker == submitter || &m.defender == submitter).count();
            let eval_timestamp = self.clock().now();
            let mut metrics = MetricMap::new();
            if let Some(a) = score.attack_side {
                metrics.insert("attack_side", a);
            }
            if let Some(d) = score.defense_side {
                metrics.insert("defense_side", d);
            }
            metrics.insert("matchups", faced as f64);
            metrics.insert("overall_score", score.combined);
            metrics.insert("eval_timestamp", eval_timestamp.timestamp_micros() as f64 / 1e6);
            self.store().append(Record::Evaluation(EvaluationRecord {
                submission_id: entry.id,
                submitter_id: submitter.clone(),
                phase: phase.to_string(),
                metrics,
                eval_timestamp,
            }))?;
        }

        Ok(WarReport { run, phase: phase.to_string(), attackers, defenders, matchups, scores: totals })
    }

    /// A submission made directly to a war phase plays the opposite side's
    /// current qualifiers.
    pub(crate) fn evaluate_war_submission(&self, submission: &Submission) -> std::result::Result<MetricMap, Stop> {
        let phase_cfg = self.war_phase(&submission.phase)?.clone();
        let snapshot = self.snapshot();
        let assets = self.assets()?;
        let role = submission.payload.role().ok_or_else(|| ArenaError::Input("war entries cannot be evaluated".into()))?;
        let me = submission.submitter_id.clone();
        let mut scores = Vec::new();
        let (attackers, defenders) = match role {
            Role::Attack => {
                let defenders = self.side(&snapshot, &phase_cfg, Role::Defense)?;
                for q in &defenders {
                    let target = self.target(&snapshot, q.clone())?;
                    let bout = self.bout(submission, &target, &assets, &format!("vs-{}", q.submission_id))?;
                    scores.push(MatchupScore {
                        attacker: me.clone(),
                        defender: q.submitter_id.clone(),
                        attack_score: bout.attack_score,
                        defense_score: bout.defense_score,
                    });
                }
                (vec![me.clone()], defenders.into_iter().map(|q| q.submitter_id).collect())
            }
            Role::Defense => {
                let attackers = self.side(&snapshot, &phase_cfg, Role::Attack)?;
                let hardened = self.harden(submission, &assets)?;
                let params = Arc::new(hardened.params.clone());
                let target = Target {
                    qualifier: Qualifier {
                        submitter_id: me.clone(),
                        submission_id: submission.id,
                        phase: submission.phase.clone(),
                        overall_score: 0.0,
                    },
                    clean_acc: params.accuracy(&assets.eval)?,
                    overhead_s: hardened.overhead_seconds(),
                    params,
                };
                for q in &attackers {
                    let attacker = snapshot.submission(q.submission_id).expect("qualifier submission").clone();
                    let bout = self.bout(&attacker, &target, &assets, &format!("vs-{}", submission.id))?;
                    scores.push(MatchupScore {
                        attacker: q.submitter_id.clone(),
                        defender: me.clone(),
                        attack_score: bout.attack_score,
                        defense_score: bout.defense_score,
                    });
                }
                (attackers.into_iter().map(|q| q.submitter_id).collect(), vec![me.clone()])
            }
        };
        let totals = war_overall(&scores, &attackers, &defenders, &self.config().scoring.war)?;
        let mine = &totals[&me];
        let side = match role {
            Role::Attack => mine.attack_side,
            Role::Defense => mine.defense_side,
        }
        .expect("submitter fielded this side");
        let mut metrics = MetricMap::new();
        metrics.insert(format!("{}_side", role.as_str()), side);
        metrics.insert("matchups", scores.len() as f64);
        metrics.insert("overall_score", side);
        Ok(metrics)
    }
}

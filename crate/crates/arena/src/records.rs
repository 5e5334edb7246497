//! Entities persisted in the event log.

use chrono::{DateTime, Utc};
use maestro_core::oracle::Capability;
use maestro_core::scoring::MetricMap;
use serde::{Deserialize, Serialize};

pub type SubmissionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitterKind {
    Individual,
    Team,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitter {
    pub id: String,
    pub display_name: String,
    pub kind: SubmitterKind,
    #[serde(default)]
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Attack,
    Defense,
    War,
}

/// Which side of the game a payload plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Attack,
    Defense,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Attack => "attack",
            Role::Defense => "defense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// A built-in method, e.g. `fgsm` or `adversarial-training`.
    Reference { role: Role, method: String },
    /// An external program speaking the line protocol on its standard streams.
    External {
        role: Role,
        program: String,
        #[serde(default)]
        args: Vec<String>,
        /// Oracle access granted to an external attack.
        #[serde(default = "default_capability")]
        capability: Capability,
    },
    /// Aggregate war score produced by a war run.
    WarEntry { run: u64 },
}

fn default_capability() -> Capability {
    Capability::BlackBox
}

impl Payload {
    pub fn role(&self) -> Option<Role> {
        match self {
            Payload::Reference { role, .. } | Payload::External { role, .. } => Some(*role),
            Payload::WarEntry { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Payload::Reference { role, method } => format!("reference {} {method}", role.as_str()),
            Payload::External { role, program, .. } => format!("external {} {program}", role.as_str()),
            Payload::WarEntry { run } => format!("war run {run}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: SubmissionId,
    pub submitter_id: String,
    pub phase: String,
    pub payload: Payload,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub submission_id: SubmissionId,
    pub submitter_id: String,
    pub phase: String,
    pub metrics: MetricMap,
    pub eval_timestamp: DateTime<Utc>,
}

impl EvaluationRecord {
    pub fn overall(&self) -> Option<f64> {
        self.metrics.get("overall_score")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Crash,
    Timeout,
    Protocol,
    Budget,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Crash => "crash",
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::Protocol => "protocol",
            ErrorCategory::Budget => "budget",
        }
    }
}

/// Captured failure text is cut to this many bytes.
pub const MAX_ERROR_MESSAGE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub submission_id: SubmissionId,
    pub submitter_id: String,
    pub phase: String,
    pub category: ErrorCategory,
    pub message: String,
    pub eval_timestamp: DateTime<Utc>,
}

/// Truncates to at most [`MAX_ERROR_MESSAGE`] bytes on a character boundary.
pub fn truncate_message(message: &str) -> String {
    if message.len() <= MAX_ERROR_MESSAGE {
        return message.to_string();
    }
    let mut end = MAX_ERROR_MESSAGE;
    while !message.is_char_boundary(end) {
        end -= 1;
    }
    message[..end].to_string()
}

/// One attack-versus-defense evaluation inside a war run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupRecord {
    pub run: u64,
    pub phase: String,
    pub attacker: String,
    pub defender: String,
    pub attack_submission: SubmissionId,
    pub defense_submission: SubmissionId,
    pub attack_score: f64,
    pub defense_score: f64,
    pub metrics: MetricMap,
    /// Set when the attack failed against this defense.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub eval_timestamp: DateTime<Utc>,
}

/// One line of the per-phase event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum Record {
    Submission(Submission),
    Evaluation(EvaluationRecord),
    Error(ErrorRecord),
    Matchup(MatchupRecord),
}

impl Record {
    pub fn phase(&self) -> &str {
        match self {
            Record::Submission(r) => &r.phase,
            Record::Evaluation(r) => &r.phase,
            Record::Error(r) => &r.phase,
            Record::Matchup(r) => &r.phase,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_lines_carry_a_discriminator() {
        let r = Record::Error(ErrorRecord {
            submission_id: 3,
            submitter_id: "alice".into(),
            phase: "attack".into(),
            category: ErrorCategory::Crash,
            message: "exit status 3".into(),
            eval_timestamp: "2026-01-01T00:00:00Z".parse().unwrap(),
        });
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.starts_with(r#"{"record_type":"error""#), "{line}");
        assert_eq!(serde_json::from_str::<Record>(&line).unwrap(), r);
    }

    #[test]
    fn payload_json_shape() {
        let p: Payload = serde_json::from_str(r#"{"kind":"external","role":"attack","program":"./a.out"}"#).unwrap();
        assert_eq!(
            p,
            Payload::External { role: Role::Attack, program: "./a.out".into(), args: vec![], capability: Capability::BlackBox }
        );
        let p: Payload = serde_json::from_str(r#"{"kind":"reference","role":"defense","method":"plain"}"#).unwrap();
        assert_eq!(p.role(), Some(Role::Defense));
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        let long = "é".repeat(3000);
        let cut = truncate_message(&long);
        assert!(cut.len() <= MAX_ERROR_MESSAGE);
        assert!(cut.chars().all(|c| c == 'é'));
        assert_eq!(truncate_message("short"), "short");
    }
}

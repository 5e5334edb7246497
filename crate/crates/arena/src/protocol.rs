//! Line protocol between the judge and an external submission process.
//!
//! Each message is one JSON object on one line, tagged by `"type"`. The judge
//! writes a task to the child's standard input; the child answers with
//! requests on its standard output, each of which gets exactly one reply, and
//! finishes with a `result` message.
//!
//! ```text
//! judge → child  {"type":"attack_task","images":[[…]],"labels":[…],"epsilon":0.2,"query_budget":5000}
//! child → judge  {"type":"predict","images":[[…]]}
//! judge → child  {"type":"prediction","probs":[[…]]}
//! child → judge  {"type":"gradient","images":[[…]],"labels":[…]}
//! judge → child  {"type":"gradient_result","loss":0.41,"grads":[[…]]}
//! child → judge  {"type":"result","perturbed":[[…]]}
//! ```
//!
//! Requests the judge refuses (wrong width, gradients on a black-box task) get
//! `{"type":"error","message":…}` and cost nothing. Exceeding the query budget
//! ends the run.

use maestro_core::model::ModelSpec;
use maestro_core::oracle::Oracle;
use maestro_core::train::TrainConfig;
use maestro_core::{Error, Tensor};
use serde::{Deserialize, Serialize};

use crate::records::ErrorCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    AttackTask {
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
        epsilon: f32,
        query_budget: Option<u64>,
    },
    /// Train a hardened model and write it to `weights_path` in the weight
    /// file format.
    DefenseTask {
        train_images: String,
        train_labels: String,
        model_spec: ModelSpec,
        train: TrainConfig,
        epsilon: f32,
        weights_path: String,
    },
    Prediction {
        probs: Vec<Vec<f32>>,
    },
    GradientResult {
        loss: f64,
        grads: Vec<Vec<f32>>,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Predict {
        images: Vec<Vec<f32>>,
    },
    Gradient {
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
    },
    Result {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturbed: Option<Vec<Vec<f32>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<String>,
    },
}

/// One message as a newline-terminated line.
pub fn encode<T: Serialize>(message: &T) -> String {
    let mut line = serde_json::to_string(message).expect("protocol messages serialize");
    line.push('\n');
    line
}

/// A submission-side failure, categorized for the error board.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub category: ErrorCategory,
    pub message: String,
}

impl Failure {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(ErrorCategory::Protocol, message)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.category.as_str(), self.message)
    }
}

/// What the judge does after one client line.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Reply(ServerMessage),
    Done(ClientMessage),
}

fn tensor(rows: Vec<Vec<f32>>) -> Result<Tensor, String> {
    if rows.is_empty() {
        return Err("empty image batch".into());
    }
    Tensor::from_rows(&rows).map_err(|e| e.to_string())
}

/// Handles one line from an attack client against `oracle`.
///
/// Malformed JSON and unexpected message types are protocol failures;
/// exhausting the query budget is a budget failure. Requests the oracle
/// rejects for shape or capability reasons are answered with an error
/// message and the session continues.
pub fn handle_attack_line(oracle: &dyn Oracle, line: &str) -> Result<Step, Failure> {
    let message: ClientMessage =
        serde_json::from_str(line).map_err(|e| Failure::protocol(format!("malformed message: {e}")))?;
    let reply = |r: Result<ServerMessage, Error>| match r {
        Ok(m) => Ok(Step::Reply(m)),
        Err(Error::BudgetExhausted { used, budget, requested }) => Err(Failure::new(
            ErrorCategory::Budget,
            format!("query budget exceeded: {used} of {budget} used, {requested} more requested"),
        )),
        Err(e) => Ok(Step::Reply(ServerMessage::Error { message: e.to_string() })),
    };
    match message {
        ClientMessage::Predict { images } => match tensor(images) {
            Err(message) => Ok(Step::Reply(ServerMessage::Error { message })),
            Ok(batch) => reply(oracle.predict(&batch).map(|p| ServerMessage::Prediction { probs: p.to_rows() })),
        },
        ClientMessage::Gradient { images, labels } => match tensor(images) {
            Err(message) => Ok(Step::Reply(ServerMessage::Error { message })),
            Ok(batch) => reply(
                oracle
                    .gradient(&batch, &labels)
                    .map(|(loss, grads)| ServerMessage::GradientResult { loss, grads: grads.to_rows() }),
            ),
        },
        done @ ClientMessage::Result { .. } => Ok(Step::Done(done)),
    }
}

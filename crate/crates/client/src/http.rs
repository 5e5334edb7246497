//! Blocking client for the judge's HTTP API.

use std::time::Duration;

use maestro_arena::records::{Payload, Submission, SubmissionId};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{kind} ({status}): {message}")]
    Api { status: u16, kind: String, message: String, body: Value },

    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("submission {0} still pending after {1:?}")]
    Pending(SubmissionId, Duration),
}

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: Client,
}

impl ApiClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        Ok(Self { base: base.trim_end_matches('/').to_string(), http: Client::builder().build()? })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check(response: Response) -> Result<Response, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body: Value = response.json().unwrap_or(Value::Null);
        let field = |k: &str| body["error"][k].as_str().unwrap_or_default().to_string();
        Err(ClientError::Api { status: status.as_u16(), kind: field("kind"), message: field("message"), body })
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, ClientError> {
        Ok(Self::check(self.http.get(self.url(path)).query(query).send()?)?.json()?)
    }

    pub fn phases(&self) -> Result<Value, ClientError> {
        self.get("/api/phases", &[])
    }

    pub fn config(&self) -> Result<Value, ClientError> {
        self.get("/api/config", &[])
    }

    /// Board view; `query` holds the board query parameters as strings.
    pub fn board(&self, phase: &str, query: &[(&str, String)]) -> Result<Value, ClientError> {
        self.get(&format!("/api/boards/{phase}"), query)
    }

    pub fn errors(&self, phase: &str, query: &[(&str, String)]) -> Result<Value, ClientError> {
        self.get(&format!("/api/boards/{phase}/errors"), query)
    }

    pub fn history(&self, phase: &str, submitter: &str) -> Result<Value, ClientError> {
        self.get(&format!("/api/boards/{phase}/history/{submitter}"), &[])
    }

    pub fn csv(&self, phase: &str) -> Result<String, ClientError> {
        Ok(Self::check(self.http.get(self.url(&format!("/api/boards/{phase}/csv"))).send()?)?.text()?)
    }

    pub fn submit(&self, submitter_id: &str, phase: &str, payload: &Payload) -> Result<Submission, ClientError> {
        let body = json!({ "submitter_id": submitter_id, "phase": phase, "payload": payload });
        Ok(Self::check(self.http.post(self.url("/api/submissions")).json(&body).send()?)?.json()?)
    }

    pub fn status(&self, id: SubmissionId) -> Result<Value, ClientError> {
        self.get(&format!("/api/submissions/{id}"), &[])
    }

    /// Polls until the submission is evaluated or failed.
    pub fn wait(&self, id: SubmissionId, timeout: Duration) -> Result<Value, ClientError> {
        let started = std::time::Instant::now();
        loop {
            let status = self.status(id)?;
            if status["status"] != "pending" {
                return Ok(status);
            }
            if started.elapsed() > timeout {
                return Err(ClientError::Pending(id, timeout));
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }
}

//! Client side of the judge: the HTTP API and the submission protocol.

pub mod http;
pub mod session;
pub mod submission;

pub use http::{ApiClient, ClientError};
pub use session::{RemoteOracle, Session};

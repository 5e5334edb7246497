//! HTTP service over the judge.
//!
//! All GET routes read the store's current snapshot and never write. Posted
//! submissions are appended synchronously and evaluated by background
//! workers.

pub mod api;
pub mod worker;

use std::net::SocketAddr;
use std::sync::Arc;

use maestro_arena::Arena;
use tokio::net::TcpListener;

pub use api::{router, AppState};

/// Router plus the worker queue, which must run inside a tokio runtime.
pub fn app(arena: Arc<Arena>) -> (axum::Router, AppState) {
    let queue = worker::start(arena.clone(), arena.config().workers);
    let state = AppState { arena, queue };
    (router(state.clone()), state)
}

/// Serves until the process is stopped.
pub async fn serve(arena: Arc<Arena>, listener: TcpListener) -> std::io::Result<()> {
    let (router, _) = app(arena);
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router).await
}

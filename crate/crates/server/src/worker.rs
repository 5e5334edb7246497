//! Background evaluation of queued submissions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use maestro_arena::records::SubmissionId;
use maestro_arena::Arena;
use tokio::sync::{mpsc, Semaphore};

/// Handle for queueing submissions. Cloning shares the queue.
#[derive(Debug, Clone)]
pub struct Queue {
    tx: mpsc::UnboundedSender<SubmissionId>,
    in_flight: Arc<AtomicUsize>,
}

impl Queue {
    pub fn push(&self, id: SubmissionId) {
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        if self.tx.send(id).is_err() {
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            tracing::error!(id, "evaluation queue is closed");
        }
    }

    /// Submissions queued or under evaluation.
    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }
}

/// Starts the dispatcher with at most `workers` concurrent evaluations and
/// queues every submission still pending in the store. With one worker,
/// submissions are evaluated in queue order.
pub fn start(arena: Arc<Arena>, workers: usize) -> Queue {
    let (tx, mut rx) = mpsc::unbounded_channel::<SubmissionId>();
    let in_flight = Arc::new(AtomicUsize::new(0));
    let queue = Queue { tx, in_flight: in_flight.clone() };
    let slots = Arc::new(Semaphore::new(workers.max(1)));

    let dispatcher_arena = arena.clone();
    tokio::spawn(async move {
        while let Some(id) = rx.recv().await {
            let permit = slots.clone().acquire_owned().await.expect("semaphore is never closed");
            let arena = dispatcher_arena.clone();
            let in_flight = in_flight.clone();
            tokio::spawn(async move {
                let outcome = tokio::task::spawn_blocking(move || arena.evaluate(id, false)).await;
                match outcome {
                    Ok(Ok(_)) => tracing::info!(id, "evaluated"),
                    Ok(Err(e)) => tracing::error!(id, error = %e, "evaluation left pending"),
                    Err(e) => tracing::error!(id, error = %e, "evaluation task panicked"),
                }
                in_flight.fetch_sub(1, Ordering::SeqCst);
                drop(permit);
            });
        }
    });

    for submission in arena.snapshot().pending() {
        if !matches!(submission.payload, maestro_arena::records::Payload::WarEntry { .. }) {
            queue.push(submission.id);
        }
    }
    queue
}

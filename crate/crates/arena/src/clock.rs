//! Time source for timestamps and measured durations.
//!
//! A frozen clock makes whole pipelines reproducible: timestamps advance by one
//! second per reading from a fixed start, and every measured duration reads as
//! zero.

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Wall,
    Frozen,
}

#[derive(Debug)]
pub enum Clock {
    Wall,
    Frozen { start: DateTime<Utc>, ticks: AtomicI64 },
}

impl Clock {
    pub fn frozen(start: DateTime<Utc>) -> Self {
        Clock::Frozen { start, ticks: AtomicI64::new(0) }
    }

    /// Frozen clocks resume after `ticks` earlier readings.
    pub fn frozen_at(start: DateTime<Utc>, ticks: i64) -> Self {
        Clock::Frozen { start, ticks: AtomicI64::new(ticks) }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, Clock::Frozen { .. })
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::Wall => Utc::now(),
            Clock::Frozen { start, ticks } => *start + Duration::seconds(ticks.fetch_add(1, Ordering::SeqCst)),
        }
    }

    pub fn stopwatch(&self) -> Stopwatch {
        Stopwatch { started: Instant::now(), frozen: self.is_frozen() }
    }

    /// `measured` on a wall clock, zero on a frozen one.
    pub fn duration(&self, measured: f64) -> f64 {
        if self.is_frozen() {
            0.0
        } else {
            measured
        }
    }
}

pub struct Stopwatch {
    started: Instant,
    frozen: bool,
}

impl Stopwatch {
    pub fn seconds(&self) -> f64 {
        if self.frozen {
            0.0
        } else {
            self.started.elapsed().as_secs_f64()
        }
    }
}

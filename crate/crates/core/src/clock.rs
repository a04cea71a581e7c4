//! Time sources. Sessions, tokens and the bus read time through [`Clock`] so
//! benchmark runs can execute on simulated time.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync + std::fmt::Debug {
    /// Milliseconds since the clock's epoch. Monotonic.
    fn now_ms(&self) -> u64;

    /// Wall-clock timestamp corresponding to `now_ms`.
    fn timestamp(&self) -> DateTime<Utc>;
}

pub type SharedClock = Arc<dyn Clock>;

/// Real time.
#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
    origin_wall: DateTime<Utc>,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now(), origin_wall: Utc::now() }
    }

    pub fn shared() -> SharedClock {
        Arc::new(Self::new())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn timestamp(&self) -> DateTime<Utc> {
        self.origin_wall + chrono::Duration::milliseconds(self.now_ms() as i64)
    }
}

/// Simulated time that only moves when advanced.
#[derive(Debug)]
pub struct ManualClock {
    elapsed_ms: AtomicU64,
    origin_wall: DateTime<Utc>,
}

impl ManualClock {
    pub fn new(origin_wall: DateTime<Utc>) -> Self {
        Self { elapsed_ms: AtomicU64::new(0), origin_wall }
    }

    /// Starts at midnight UTC on 2026-01-01.
    pub fn at_fixed_origin() -> Arc<Self> {
        Arc::new(Self::new(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).single().expect("valid date")))
    }

    pub fn advance(&self, by: Duration) {
        self.elapsed_ms.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.elapsed_ms.load(Ordering::SeqCst)
    }

    fn timestamp(&self) -> DateTime<Utc> {
        self.origin_wall + chrono::Duration::milliseconds(self.now_ms() as i64)
    }
}

//! Exponential backoff schedule and a shared request-spacing limiter.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackoffPolicy {
    pub base_ms: u64,
    pub max_ms: u64,
    /// Randomizes each delay into `[delay/2, delay]`. Off for tests and
    /// reproducible runs.
    #[serde(default)]
    pub jitter: bool,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base_ms: 500,
            max_ms: 30_000,
            jitter: false,
        }
    }
}

impl BackoffPolicy {
    /// Deterministic delay before retry number `retry` (1-based):
    /// `min(base * 2^(retry-1), max)`.
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = retry.saturating_sub(1).min(32);
        let ms = self.base_ms.saturating_mul(1u64 << exp).min(self.max_ms);
        Duration::from_millis(ms)
    }

    /// Delay actually slept: the schedule, raised to any server-provided
    /// `Retry-After`, capped at `max_ms`, then jittered if enabled.
    pub fn wait(&self, retry: u32, retry_after: Option<Duration>) -> Duration {
        let mut d = self.delay(retry);
        if let Some(ra) = retry_after {
            d = d.max(ra).min(Duration::from_millis(self.max_ms));
        }
        if self.jitter && !d.is_zero() {
            let factor: f64 = rand::rng().random_range(0.5..=1.0);
            d = d.mul_f64(factor);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub outcome: String,
    /// Wait before the next attempt, if one followed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_ms: Option<u64>,
}

/// Spaces request starts at least `min_interval` apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    /// Blocks until this caller's slot. Slot reservation happens under the
    /// lock; sleeping happens outside it.
    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.min_interval);
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

//! Retry with exponential backoff for provider transport failures.

use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn new(attempts: u32, base_delay: Duration) -> Self {
        Self {
            attempts: attempts.max(1),
            base_delay,
        }
    }

    /// Delay slept after failed attempt `n` (0-based): `base * 2^n`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }

    /// Sum of all sleeps taken when every attempt fails.
    pub fn total_backoff(&self) -> Duration {
        (0..self.attempts.saturating_sub(1)).map(|n| self.delay_after(n)).sum()
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if retryable(&e) && attempt + 1 < self.attempts => {
                    log::warn!("attempt {} failed, retrying", attempt + 1);
                    thread::sleep(self.delay_after(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

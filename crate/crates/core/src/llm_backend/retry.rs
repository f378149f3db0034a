use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, Clock, ErrorClass};

/// Exponential backoff with symmetric jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub jitter_fraction: f64,
    pub retryable: Vec<ErrorClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay_ms: 500,
            multiplier: 2.0,
            jitter_fraction: 0.2,
            retryable: vec![ErrorClass::Timeout, ErrorClass::RateLimited, ErrorClass::Server5xx],
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("retry.max_attempts must be at least 1".into());
        }
        if !(self.multiplier >= 1.0 && self.multiplier.is_finite()) {
            return Err("retry.multiplier must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err("retry.jitter_fraction must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn is_retryable(&self, class: ErrorClass) -> bool {
        self.retryable.contains(&class)
    }

    /// Delay before retry `n` (1-based) without jitter.
    pub fn nominal_delay(&self, n: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.multiplier.powi(n.saturating_sub(1) as i32);
        Duration::from_secs_f64(ms / 1000.0)
    }

    /// Delay before retry `n` with jitter drawn from `unit` in [0, 1).
    pub fn delay(&self, n: u32, unit: f64) -> Duration {
        let factor = 1.0 + self.jitter_fraction * (2.0 * unit.clamp(0.0, 1.0) - 1.0);
        self.nominal_delay(n).mul_f64(factor.max(0.0))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable class, or the
    /// attempt budget is spent. `op` receives the 1-based attempt number.
    /// Returns the value and the number of attempts used.
    pub fn run<T>(
        &self,
        clock: &dyn Clock,
        mut jitter: impl FnMut() -> f64,
        mut op: impl FnMut(u32) -> Result<T, (ErrorClass, String)>,
    ) -> Result<(T, u32), BackendError> {
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err((class, cause)) => {
                    if !self.is_retryable(class) || attempt >= self.max_attempts {
                        return Err(BackendError::Request { class, attempts: attempt, cause });
                    }
                    let wait = self.delay(attempt, jitter());
                    log::debug!("attempt {attempt} failed ({class}: {cause}); retrying in {wait:?}");
                    clock.sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::Clock;

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding 60 s admission window over request count and estimated tokens.
///
/// `acquire` blocks until the request fits; nothing is ever dropped. A
/// request is always admitted into an empty window, even when its token
/// estimate alone exceeds the per-minute budget.
pub struct RateLimiter {
    rpm: Option<u32>,
    tpm: Option<u64>,
    clock: Arc<dyn Clock>,
    admitted: Mutex<VecDeque<(Duration, u64)>>,
}

impl RateLimiter {
    /// `None` means unlimited.
    pub fn new(rpm: Option<u32>, tpm: Option<u64>, clock: Arc<dyn Clock>) -> Self {
        RateLimiter { rpm: rpm.filter(|&r| r > 0), tpm: tpm.filter(|&t| t > 0), clock, admitted: Mutex::new(VecDeque::new()) }
    }

    pub fn unlimited(clock: Arc<dyn Clock>) -> Self {
        Self::new(None, None, clock)
    }

    /// Blocks until a request with `tokens` estimated tokens may proceed.
    /// Returns the admission time.
    pub fn acquire(&self, tokens: u64) -> Duration {
        loop {
            let wait = {
                let mut log = self.admitted.lock().unwrap_or_else(|p| p.into_inner());
                let now = self.clock.now();
                while log.front().is_some_and(|&(t, _)| t + WINDOW <= now) {
                    log.pop_front();
                }
                match self.wait_needed(&log, now, tokens) {
                    None => {
                        log.push_back((now, tokens));
                        return now;
                    }
                    Some(w) => w,
                }
            };
            self.clock.sleep(wait);
        }
    }

    fn wait_needed(&self, log: &VecDeque<(Duration, u64)>, now: Duration, tokens: u64) -> Option<Duration> {
        if log.is_empty() {
            return None;
        }
        // index of the newest entry that has to expire before admission
        let mut must_expire: Option<usize> = None;
        if let Some(rpm) = self.rpm {
            let rpm = rpm as usize;
            if log.len() >= rpm {
                must_expire = Some(log.len() - rpm);
            }
        }
        if let Some(tpm) = self.tpm {
            let mut in_window: u64 = log.iter().map(|&(_, t)| t).sum();
            let mut idx = None;
            for (i, &(_, t)) in log.iter().enumerate() {
                if in_window + tokens <= tpm {
                    break;
                }
                in_window -= t;
                idx = Some(i);
            }
            must_expire = must_expire.max(idx);
        }
        must_expire.map(|i| (log[i].0 + WINDOW).saturating_sub(now).max(Duration::from_millis(1)))
    }
}

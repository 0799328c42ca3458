use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for rate limiting, backoff and transcript timing.
pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary fixed origin.
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
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

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Virtual clock: sleeping advances time instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: u64) {
        let target = self.now_ms() + ms;
        self.now.fetch_max(target, Ordering::SeqCst);
    }
}

const WINDOW_MS: u64 = 60_000;

/// Sliding-window limiter: at most `per_minute` grants in any 60 s window.
pub struct RateLimiter {
    per_minute: usize,
    clock: Arc<dyn Clock>,
    granted: Mutex<VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1) as usize,
            clock,
            granted: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request may be sent, then records it.
    pub fn acquire(&self) -> u64 {
        let mut granted = self.granted.lock().unwrap();
        loop {
            let now = self.clock.now_ms();
            while granted.front().is_some_and(|&t| now >= t + WINDOW_MS) {
                granted.pop_front();
            }
            if granted.len() < self.per_minute {
                granted.push_back(now);
                return now;
            }
            let wait = granted.front().unwrap() + WINDOW_MS - now;
            // lock stays held while waiting
            self.clock.sleep_ms(wait);
        }
    }
}

/// Largest number of timestamps falling in any half-open window of
/// `window_ms`.
pub fn max_in_window(timestamps: &[u64], window_ms: u64) -> usize {
    let mut ts = timestamps.to_vec();
    ts.sort_unstable();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..ts.len() {
        while ts[hi] >= ts[lo] + window_ms {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_sleep_advances() {
        let c = ManualClock::new();
        c.sleep_ms(500);
        c.advance(10);
        assert_eq!(c.now_ms(), 510);
    }

    #[test]
    fn limiter_spreads_requests() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::new(5, clock.clone());
        let stamps: Vec<u64> = (0..23)
            .map(|_| {
                let t = limiter.acquire();
                clock.advance(100);
                t
            })
            .collect();
        assert!(max_in_window(&stamps, WINDOW_MS) <= 5);
        assert_eq!(stamps[5], 60_000);
        assert!(clock.now_ms() >= 4 * 60_000);
    }

    #[test]
    fn window_count() {
        assert_eq!(max_in_window(&[0, 10, 59_999, 60_000, 60_001], 60_000), 4);
        assert_eq!(max_in_window(&[0, 59_999, 60_000, 119_999], 60_000), 2);
        assert_eq!(max_in_window(&[], 60_000), 0);
    }
}

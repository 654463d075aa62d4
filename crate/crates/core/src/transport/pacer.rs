use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket refilled at `rate` bytes/s and holding at most 10 ms worth
/// of tokens. A request larger than the balance is granted on credit and
/// the caller sleeps until the debt is repaid, so the long-run rate never
/// exceeds `rate` by more than one bucket plus one request.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

pub const GRANULARITY: Duration = Duration::from_millis(10);

impl TokenBucket {
    /// `rate == 0` means unlimited.
    pub fn new(rate_bytes_per_s: u64) -> Self {
        let rate = rate_bytes_per_s as f64;
        let capacity = rate * GRANULARITY.as_secs_f64();
        TokenBucket { rate, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn is_unlimited(&self) -> bool {
        self.rate == 0.0
    }

    /// Blocks until `bytes` may be sent.
    pub fn acquire(&self, bytes: usize) {
        if let Some(wait) = self.reserve(bytes) {
            std::thread::sleep(wait);
        }
    }

    /// Takes `bytes` tokens and returns how long the caller must wait before
    /// sending, if at all.
    pub fn reserve(&self, bytes: usize) -> Option<Duration> {
        if self.is_unlimited() {
            return None;
        }
        let mut st = self.state.lock().unwrap();
        let now = Instant::now();
        let (tokens, last) = *st;
        let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
        let left = tokens - bytes as f64;
        *st = (left, now);
        (left < 0.0).then(|| Duration::from_secs_f64(-left / self.rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unlimited_never_waits() {
        let b = TokenBucket::new(0);
        assert!(b.reserve(usize::MAX / 2).is_none());
    }

    #[test]
    fn long_run_rate_is_bounded() {
        let rate = 2_000_000;
        let b = TokenBucket::new(rate);
        let start = Instant::now();
        let mut sent = 0usize;
        while start.elapsed() < Duration::from_millis(500) {
            b.acquire(16 * 1024);
            sent += 16 * 1024;
        }
        let secs = start.elapsed().as_secs_f64();
        let bound = rate as f64 * secs + rate as f64 * 0.01 + 16.0 * 1024.0;
        assert!(sent as f64 <= bound, "{sent} > {bound}");
        assert!(sent as f64 >= 0.8 * rate as f64 * secs);
    }

    #[test]
    fn oversized_request_waits_for_debt() {
        let b = TokenBucket::new(1_000_000);
        let w = b.reserve(1_010_000).unwrap();
        assert!((w.as_secs_f64() - 1.0).abs() < 0.01);
    }
}

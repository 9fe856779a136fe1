use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::RateLimit;

/// Blocking token bucket shared by all threads using one profile.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(limit: RateLimit) -> Self {
        let capacity = limit.burst.max(1) as f64;
        TokenBucket {
            rate: limit.requests_per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token, sleeping until one is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let (tokens, last) = *state;
                let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if refilled >= 1.0 {
                    *state = (refilled - 1.0, now);
                    return;
                }
                *state = (refilled, now);
                Duration::from_secs_f64((1.0 - refilled) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_throttle() {
        let bucket = TokenBucket::new(RateLimit {
            requests_per_second: 50.0,
            burst: 3,
        });
        let start = Instant::now();
        for _ in 0..3 {
            bucket.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(15));
        for _ in 0..5 {
            bucket.acquire();
        }
        // five more tokens at 50/s take at least ~100ms
        assert!(start.elapsed() >= Duration::from_millis(90));
    }
}

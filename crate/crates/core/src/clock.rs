use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Time source for latencies, stage timings and timestamps.
///
/// The pipeline never reads the system time directly so that runs can be
/// replayed byte-for-byte with [`TickClock`].
pub trait Clock: Send + Sync {
    /// Monotonic reading, relative to an arbitrary origin.
    fn elapsed(&self) -> Duration;
    /// Wall-clock seconds since the Unix epoch.
    fn unix_seconds(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn unix_seconds(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Deterministic clock: every reading advances by a fixed step.
#[derive(Debug)]
pub struct TickClock {
    step_micros: u64,
    ticks: AtomicU64,
    unix: u64,
}

impl TickClock {
    pub fn new(step: Duration, unix_seconds: u64) -> Self {
        Self {
            step_micros: step.as_micros() as u64,
            ticks: AtomicU64::new(0),
            unix: unix_seconds,
        }
    }
}

impl Clock for TickClock {
    fn elapsed(&self) -> Duration {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        Duration::from_micros(n * self.step_micros)
    }

    fn unix_seconds(&self) -> u64 {
        self.unix
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_clock_is_monotonic_and_deterministic() {
        let a = TickClock::new(Duration::from_millis(1), 42);
        let b = TickClock::new(Duration::from_millis(1), 42);
        let ra: Vec<_> = (0..4).map(|_| a.elapsed()).collect();
        let rb: Vec<_> = (0..4).map(|_| b.elapsed()).collect();
        assert_eq!(ra, rb);
        assert!(ra.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.unix_seconds(), 42);
    }
}

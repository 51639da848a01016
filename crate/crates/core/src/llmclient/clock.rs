use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Time source for latency accounting, backoff, and rate limiting.
pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary, clock-specific origin.
    fn now(&self) -> f64;
    fn sleep(&self, secs: f64);
    /// Virtual clocks only move when something sleeps on them.
    fn is_virtual(&self) -> bool {
        false
    }
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
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep(&self, secs: f64) {
        if secs > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
    }
}

/// Synthetic clock: `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<f64>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, secs: f64) {
        *self.now.lock().unwrap() += secs.max(0.0);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, secs: f64) {
        self.advance(secs);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

/// Measures one call. On a virtual clock the elapsed time is the sum of the
/// sleeps issued through this stopwatch, so concurrent calls sharing the clock
/// still get exact per-call latencies.
pub struct Stopwatch<'a> {
    clock: &'a dyn Clock,
    start: f64,
    accrued: f64,
}

impl<'a> Stopwatch<'a> {
    pub fn start(clock: &'a dyn Clock) -> Self {
        Stopwatch {
            clock,
            start: clock.now(),
            accrued: 0.0,
        }
    }

    pub fn sleep(&mut self, secs: f64) {
        if secs > 0.0 {
            self.clock.sleep(secs);
            self.accrued += secs;
        }
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock
    }

    pub fn elapsed(&self) -> f64 {
        if self.clock.is_virtual() {
            self.accrued
        } else {
            (self.clock.now() - self.start).max(0.0)
        }
    }
}

/// Spaces call starts at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: f64,
    next_slot: Mutex<Option<f64>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Option<Self> {
        (rate.is_finite() && rate > 0.0).then(|| RateLimiter {
            interval: 1.0 / rate,
            next_slot: Mutex::new(None),
        })
    }

    /// Waits for the next slot; returns the clock time at which the call may start.
    pub fn acquire(&self, sw: &mut Stopwatch<'_>) -> f64 {
        let now = sw.clock().now();
        let start = {
            let mut slot = self.next_slot.lock().unwrap();
            let start = slot.map_or(now, |s: f64| s.max(now));
            *slot = Some(start + self.interval);
            start
        };
        sw.sleep(start - now);
        start
    }
}

//! Injected time sources.

use chrono::{Duration, NaiveDateTime, Utc};
use parking_lot::Mutex;

pub trait Clock: Send + Sync {
    fn now(&self) -> NaiveDateTime;
}

/// Real time, UTC.
#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> NaiveDateTime {
        Utc::now().naive_utc()
    }
}

/// Time that only moves when told to.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<NaiveDateTime>,
}

impl VirtualClock {
    pub fn new(start: NaiveDateTime) -> Self {
        Self { now: Mutex::new(start) }
    }

    pub fn advance(&self, by: Duration) -> NaiveDateTime {
        let mut now = self.now.lock();
        *now += by;
        *now
    }

    pub fn set(&self, to: NaiveDateTime) {
        *self.now.lock() = to;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> NaiveDateTime {
        *self.now.lock()
    }
}

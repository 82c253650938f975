use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Sub};

/// A point (or span) of simulated time.
///
/// Always non-negative and never NaN, so it carries a total order and can be
/// used as a schedule key. [`SimTime::INFINITY`] is a passive state's time
/// advance; arithmetic with it saturates.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);
    pub const INFINITY: SimTime = SimTime(f64::INFINITY);

    /// Returns `None` for negative or NaN values.
    pub fn new(value: f64) -> Option<SimTime> {
        if value >= 0.0 {
            Some(SimTime(value))
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

/// Saturating difference: never negative, `INFINITY - x` stays infinite for
/// finite `x`, and anything minus `INFINITY` is zero.
impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        if rhs.is_infinite() {
            SimTime::ZERO
        } else if self.is_infinite() {
            SimTime::INFINITY
        } else {
            SimTime((self.0 - rhs.0).max(0.0))
        }
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl From<SimTime> for f64 {
    fn from(t: SimTime) -> f64 {
        t.0
    }
}

//! Timestamp source for logs and caches.
//!
//! Offline (simulated) runs use a fixed instant so that their artifacts are
//! byte-identical across invocations.

use chrono::{SecondsFormat, Utc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(String),
}

/// Instant used by [`Clock::deterministic`].
pub const EPOCH: &str = "1970-01-01T00:00:00Z";

impl Clock {
    pub fn deterministic() -> Self {
        Clock::Fixed(EPOCH.to_string())
    }

    /// RFC 3339 UTC timestamp, second precision.
    pub fn now(&self) -> String {
        match self {
            Clock::System => Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            Clock::Fixed(s) => s.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_clock_is_constant() {
        let c = Clock::deterministic();
        assert_eq!(c.now(), c.now());
        assert_eq!(c.now(), EPOCH);
    }

    #[test]
    fn system_clock_is_utc() {
        assert!(Clock::System.now().ends_with('Z'));
    }
}

use serde::{Deserialize, Serialize};

/// Time base of a trace's timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    /// Deterministic nanoseconds from the mock runtime.
    #[default]
    Virtual,
    /// `CLOCK_MONOTONIC`, shared by every process on the host.
    MonotonicWall,
}

/// Nanoseconds on the host-wide monotonic clock.
pub fn monotonic_now_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: clock_gettime only writes into the provided timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    debug_assert_eq!(rc, 0);
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotonic_does_not_go_back() {
        let a = monotonic_now_ns();
        let b = monotonic_now_ns();
        assert!(b >= a);
        assert_eq!(
            serde_json::to_string(&ClockKind::MonotonicWall).unwrap(),
            "\"monotonic-wall\""
        );
    }
}

//! Time as a capability: a trait the gateway and manifests consume, with a
//! real implementation and a scripted one for tests.
//!
//! Rate limiting and retry backoff are timing behaviors; asserting on them
//! against the wall clock makes tests slow and flaky. Everything that reads
//! or spends time goes through [`Clock`], so tests swap in [`FakeClock`] and
//! observe exact dispatch instants.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_millis(&self) -> u64;

    fn sleep_millis(&self, millis: u64);
}

/// Wall clock; sleeps block the calling thread.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep_millis(&self, millis: u64) {
        std::thread::sleep(Duration::from_millis(millis));
    }
}

/// Clock that only moves when someone sleeps on it. Starts at zero.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: AtomicU64,
}

impl FakeClock {
    pub fn new(start_millis: u64) -> Self {
        FakeClock { now: AtomicU64::new(start_millis) }
    }
}

impl Clock for FakeClock {
    fn now_millis(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_millis(&self, millis: u64) {
        self.now.fetch_add(millis, Ordering::SeqCst);
    }
}

/// Render epoch milliseconds as UTC RFC 3339 with second precision, e.g.
/// "2024-05-31T07:45:12Z". Days-to-date via the standard civil-from-days
/// arithmetic; good for any date this tool will ever stamp.
pub fn rfc3339_utc(epoch_millis: u64) -> String {
    let secs = epoch_millis / 1000;
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem / 60) % 60, rem % 60);

    // Shift epoch from 1970-01-01 to 0000-03-01 so leap days land at the
    // end of the cycle year.
    let z = days as i64 + 719_468;
    let era = z / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };

    format!("{year:04}-{month:02}-{day:02}T{hh:02}:{mm:02}:{ss:02}Z")
}

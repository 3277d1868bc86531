//! Pass/fail bookkeeping for the acceptance run in `tests/acceptance.rs`.

use std::fmt;
use std::time::{Duration, Instant};

/// Outcome of one numbered criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub criterion: u8,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2}: {status}  {}  [{:.1} s]", self.criterion, self.detail, self.elapsed.as_secs_f64())
    }
}

/// Runs `check`, which returns whether it passed and a one-line detail,
/// and times it. An `Err` counts as a failure with the error as detail.
pub fn judge<E: fmt::Display>(criterion: u8, check: impl FnOnce() -> Result<(bool, String), E>) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = match check() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Verdict { criterion, passed, detail, elapsed: start.elapsed() }
}

/// `|value - target| <= tol`, false for NaN.
pub fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

/// Closing summary line.
pub fn summary(verdicts: &[Verdict]) -> String {
    let passed = verdicts.iter().filter(|v| v.passed).count();
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.passed).map(|v| v.criterion.to_string()).collect();
    if failed.is_empty() {
        format!("{passed} of {} criteria pass", verdicts.len())
    } else {
        format!("{passed} of {} criteria pass; failing: {}", verdicts.len(), failed.join(", "))
    }
}

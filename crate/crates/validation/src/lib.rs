//! Runner for the acceptance suite: each criterion runs in isolation, prints
//! one PASS/FAIL line and contributes to the process exit status.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// What a criterion reports: whether it held, plus the measured numbers.
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub struct Outcome {
    pub id: &'static str,
    pub passed: bool,
    pub elapsed: Duration,
}

#[derive(Default)]
pub struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check`; a panic counts as a failure. `budget` is the stated
    /// runtime limit, if any, and is part of the verdict.
    pub fn run<F>(&mut self, id: &'static str, name: &str, budget: Option<Duration>, check: F)
    where
        F: FnOnce() -> Verdict,
    {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match result {
            Ok(v) => (v.passed, v.detail),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                (false, format!("panic: {msg}"))
            }
        };
        if let Some(limit) = budget {
            if elapsed > limit {
                passed = false;
                detail.push_str(&format!("; over runtime budget of {:.0}s", limit.as_secs_f64()));
            }
        }
        println!(
            "criterion {id:>2} {} {name}: {detail} [{:.2}s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.outcomes.push(Outcome { id, passed, elapsed });
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    /// Prints a summary and exits non-zero if any criterion failed.
    pub fn finish(self) -> ! {
        let failed: Vec<&str> = self.outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
        println!(
            "acceptance: {} checks passed, {} failed{}",
            self.outcomes.len() - failed.len(),
            failed.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" ({})", failed.join(", "))
            }
        );
        std::process::exit(if failed.is_empty() { 0 } else { 1 });
    }
}

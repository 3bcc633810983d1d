//! Execution of candidate programs against test cases.
//!
//! Every test runs in a fresh child process inside a fresh temporary
//! directory, with a cleared environment, resource limits and a hard kill at
//! the deadline. Block-level traces come from an external harness (see
//! [`trace`]) or from pre-recorded reports.

mod process;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::SandboxError;
use crate::problem::{ProblemSpec, TestCase};

pub use process::{ProcessSandbox, SandboxConfig};
pub use trace::{BlockTraceReport, FixtureTracer, HarnessTracer, TracedBlock, Tracer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    WrongOutput,
    RuntimeError,
    Timeout,
    CompileError,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::WrongOutput => "wrong_output",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::CompileError => "compile_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// In functional mode this is the repr of the returned value.
    pub stdout: String,
    pub stderr: String,
    /// Wall-clock seconds.
    pub duration: f64,
}

impl ExecutionOutcome {
    pub fn passed(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// What the program produced, in a form suitable for feedback: the output
    /// for wrong answers, the error text otherwise.
    pub fn observed(&self) -> String {
        match self.status {
            ExecStatus::Ok | ExecStatus::WrongOutput => self.stdout.clone(),
            ExecStatus::Timeout => format!("timeout after {:.1}s", self.duration),
            ExecStatus::RuntimeError | ExecStatus::CompileError => {
                if self.stderr.trim().is_empty() {
                    self.status.as_str().to_string()
                } else {
                    self.stderr.clone()
                }
            }
        }
    }
}

/// Runs programs; implemented by [`ProcessSandbox`] and by test doubles.
pub trait Sandbox: Send + Sync {
    /// One outcome per test, in input order.
    fn execute_tests(
        &self,
        program: &str,
        tests: &[TestCase],
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<Vec<ExecutionOutcome>, SandboxError>;

    /// Block-level trace of `program` on a single (previously failing) test.
    fn execute_traced(
        &self,
        program: &str,
        test: &TestCase,
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError>;
}

fn normalize(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Whitespace-tolerant comparison: trailing whitespace on each line and
/// trailing blank lines are ignored.
pub fn judge_output(actual: &str, expected: &str) -> bool {
    normalize(actual) == normalize(expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn judge_examples() {
        assert!(judge_output("5", "5\n"));
        assert!(judge_output("5 ", "5"));
        assert!(!judge_output("5\n6", "6\n5"));
        assert!(judge_output("a\r\nb\r\n\r\n", "a\nb"));
        assert!(!judge_output(" 5", "5"));
        assert!(judge_output("", "\n\n"));
    }

    proptest! {
        #[test]
        fn judge_ignores_trailing_whitespace(
            lines in proptest::collection::vec("[a-z0-9 ]{0,8}", 0..6),
            pad in "[ \t]{0,3}",
            blank in 0usize..3,
        ) {
            let expected = lines.join("\n");
            let mut actual: String = lines.iter().map(|l| format!("{l}{pad}\n")).collect();
            actual.push_str(&"\n".repeat(blank));
            prop_assert!(judge_output(&actual, &expected));
            prop_assert!(judge_output(&expected, &actual));
        }
    }
}

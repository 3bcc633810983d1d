//! Block-level execution traces.
//!
//! A trace harness is an external program invoked as
//!
//! ```text
//! <harness command...> PROGRAM_FILE INPUT_FILE CONFIG_JSON REPORT_JSON
//! ```
//!
//! inside a fresh temporary directory. `CONFIG_JSON` carries
//! `{"io_mode", "entry_point", "timeout"}`. The harness writes a
//! [`BlockTraceReport`] to `REPORT_JSON` and exits 0, even when the subject
//! program fails; a nonzero exit means the harness itself broke.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::process::{hermetic, run_child};
use super::ExecStatus;
use crate::error::SandboxError;
use crate::problem::{IoMode, ProblemSpec, TestCase};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
const HARNESS_GRACE: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedBlock {
    pub block_index: usize,
    pub start_line: usize,
    pub end_line: usize,
    pub source: String,
    /// Variable name to truncated repr, snapshotted after the block's last line.
    #[serde(default)]
    pub vars_after: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTraceReport {
    pub schema_version: u32,
    pub status: ExecStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub blocks: Vec<TracedBlock>,
    #[serde(default)]
    pub executed_sequence: Vec<usize>,
    /// Optional per-step snapshots aligned with `executed_sequence`, so loop
    /// bodies show one state per iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_vars: Vec<BTreeMap<String, String>>,
    /// The executed sequence hit the harness's length cap.
    #[serde(default)]
    pub truncated: bool,
}

impl BlockTraceReport {
    /// Report for a harness that died without writing anything useful.
    pub fn degenerate(stderr: impl Into<String>) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            status: ExecStatus::RuntimeError,
            stdout: String::new(),
            stderr: stderr.into(),
            blocks: Vec::new(),
            executed_sequence: Vec::new(),
            step_vars: Vec::new(),
            truncated: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SandboxError> {
        let report: Self =
            serde_json::from_str(text).map_err(|e| SandboxError::TraceHarness(format!("unreadable report: {e}")))?;
        report.check()?;
        Ok(report)
    }

    pub fn block(&self, index: usize) -> Option<&TracedBlock> {
        self.blocks.iter().find(|b| b.block_index == index)
    }

    /// Structural checks: known schema version, sequence refers to existing
    /// blocks, line spans well-formed and disjoint.
    pub fn check(&self) -> Result<(), SandboxError> {
        let bad = |m: String| Err(SandboxError::TraceHarness(m));
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if let Some(i) = self.executed_sequence.iter().find(|&&i| self.block(i).is_none()) {
            return bad(format!("executed_sequence refers to unknown block {i}"));
        }
        if !self.step_vars.is_empty() && self.step_vars.len() != self.executed_sequence.len() {
            return bad("step_vars does not align with executed_sequence".into());
        }
        let mut spans: Vec<(usize, usize)> = self.blocks.iter().map(|b| (b.start_line, b.end_line)).collect();
        spans.sort_unstable();
        for (i, &(start, end)) in spans.iter().enumerate() {
            if start > end {
                return bad(format!("block span {start}-{end} is inverted"));
            }
            if i > 0 && spans[i - 1].1 >= start {
                return bad(format!("block spans overlap at line {start}"));
            }
        }
        Ok(())
    }

    /// Blocks in the order they ran, with the snapshot taken on the final run of each.
    pub fn last_snapshots(&self) -> Vec<&TracedBlock> {
        let mut seen = Vec::new();
        for &i in &self.executed_sequence {
            if !seen.contains(&i) {
                seen.push(i);
            }
        }
        seen.into_iter().filter_map(|i| self.block(i)).collect()
    }
}

pub trait Tracer: Send + Sync {
    fn trace(
        &self,
        program: &str,
        test: &TestCase,
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError>;
}

/// Child-process tracer speaking the harness contract described in the module docs.
#[derive(Debug, Clone)]
pub struct HarnessTracer {
    command: Vec<String>,
    memory_limit: u64,
}

impl HarnessTracer {
    /// `command` is the program and leading arguments, e.g. `["python3", "trace_harness.py"]`.
    pub fn new(command: Vec<String>) -> Self {
        Self { command, memory_limit: 512 * 1024 * 1024 }
    }
}

impl Tracer for HarnessTracer {
    fn trace(
        &self,
        program: &str,
        test: &TestCase,
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError> {
        let Some((exe, args)) = self.command.split_first() else {
            return Err(SandboxError::TraceHarness("empty harness command".into()));
        };
        let dir = tempfile::Builder::new().prefix("tstrace-").tempdir()?;
        let files = HarnessFiles::new(dir.path());
        std::fs::write(&files.program, program)?;
        std::fs::write(&files.input, &test.input)?;
        let io_mode = match problem.io_mode {
            IoMode::StdinStdout => "stdin_stdout",
            IoMode::Functional => "functional",
        };
        let config = json!({
            "io_mode": io_mode,
            "entry_point": problem.entry_point,
            "timeout": timeout,
        });
        std::fs::write(&files.config, config.to_string())?;

        // Relative harness paths resolve against the caller's directory, not the temp dir.
        let mut args: Vec<PathBuf> = args.iter().map(PathBuf::from).collect();
        if let Ok(cwd) = std::env::current_dir() {
            for a in args.iter_mut().filter(|a| a.is_relative() && cwd.join(&**a).exists()) {
                *a = cwd.join(&*a);
            }
        }
        let mut cmd = Command::new(exe);
        cmd.args(&args).arg(&files.program).arg(&files.input).arg(&files.config).arg(&files.report);
        hermetic(&mut cmd, dir.path(), self.memory_limit, timeout + HARNESS_GRACE.as_secs_f64());
        let run = run_child(cmd, &[], Duration::from_secs_f64(timeout) + HARNESS_GRACE)
            .map_err(|e| SandboxError::TraceHarness(format!("cannot launch harness {exe}: {e}")))?;
        if run.timed_out {
            return Err(SandboxError::Timeout { seconds: run.duration.as_secs_f64(), partial_stderr: run.stderr });
        }
        if run.status.is_some_and(|s| s.success()) {
            let text = std::fs::read_to_string(&files.report)
                .map_err(|e| SandboxError::TraceHarness(format!("harness exited 0 without a report: {e}")))?;
            BlockTraceReport::from_json(&text)
        } else {
            Ok(BlockTraceReport::degenerate(run.stderr))
        }
    }
}

struct HarnessFiles {
    program: PathBuf,
    input: PathBuf,
    config: PathBuf,
    report: PathBuf,
}

impl HarnessFiles {
    fn new(dir: &Path) -> Self {
        Self {
            program: dir.join("program.py"),
            input: dir.join("input.txt"),
            config: dir.join("config.json"),
            report: dir.join("report.json"),
        }
    }
}

/// Serves pre-recorded reports, keyed by test input with an optional fallback.
#[derive(Debug, Clone, Default)]
pub struct FixtureTracer {
    by_input: HashMap<String, BlockTraceReport>,
    fallback: Option<BlockTraceReport>,
}

impl FixtureTracer {
    pub fn new(fallback: BlockTraceReport) -> Self {
        Self { by_input: HashMap::new(), fallback: Some(fallback) }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(Self::new(BlockTraceReport::from_json(&text)?))
    }

    pub fn with_report_for(mut self, input: impl Into<String>, report: BlockTraceReport) -> Self {
        self.by_input.insert(input.into(), report);
        self
    }
}

impl Tracer for FixtureTracer {
    fn trace(
        &self,
        _program: &str,
        test: &TestCase,
        _problem: &ProblemSpec,
        _timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError> {
        self.by_input
            .get(&test.input)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| SandboxError::TraceHarness(format!("no recorded trace for input {:?}", test.input)))
    }
}

//! Fakes shared by the unit tests.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::SandboxError;
use crate::gateway::{Gateway, GatewaySettings, ReplayBackend};
use crate::problem::{IoMode, ProblemSpec, TestCase};
use crate::sandbox::{BlockTraceReport, ExecStatus, ExecutionOutcome, Sandbox, TracedBlock};

pub fn stdin_problem(id: &str, public: usize, private: usize) -> ProblemSpec {
    let test = |i: usize| TestCase::new(format!("in{i}"), format!("out{i}"));
    ProblemSpec {
        id: id.into(),
        statement: format!("Statement for {id}."),
        io_mode: IoMode::StdinStdout,
        entry_point: None,
        starter_code: None,
        public_tests: (0..public).map(test).collect(),
        private_tests: (public..public + private)
            .map(|i| TestCase::new(format!("secret{i}"), format!("hidden{i}")))
            .collect(),
    }
}

pub fn gateway(replay: ReplayBackend) -> Gateway {
    Gateway::new(Arc::new(replay), GatewaySettings::default())
}

pub fn two_block_trace() -> BlockTraceReport {
    let block = |i: usize, line: usize, src: &str| TracedBlock {
        block_index: i,
        start_line: line,
        end_line: line,
        source: src.into(),
        vars_after: BTreeMap::from([("x".to_string(), i.to_string())]),
    };
    BlockTraceReport {
        schema_version: crate::sandbox::trace::TRACE_SCHEMA_VERSION,
        status: ExecStatus::Ok,
        stdout: "wrong\n".into(),
        stderr: String::new(),
        blocks: vec![block(0, 1, "x = int(input())"), block(1, 2, "print('wrong')")],
        executed_sequence: vec![0, 1],
        step_vars: Vec::new(),
        truncated: false,
    }
}

/// Judges programs by marker text instead of running them: `PASS_ALL` passes
/// every test, `pass:<input>` passes that one test, anything else prints `wrong`.
#[derive(Default)]
pub struct MarkerSandbox {
    pub runs: AtomicUsize,
    pub traces: AtomicUsize,
}

impl MarkerSandbox {
    fn outcome(program: &str, test: &TestCase) -> ExecutionOutcome {
        let ok = program.contains("PASS_ALL") || program.contains(&format!("pass:{}", test.input));
        ExecutionOutcome {
            status: if ok { ExecStatus::Ok } else { ExecStatus::WrongOutput },
            stdout: if ok { test.expected_output.clone() } else { "wrong".into() },
            stderr: String::new(),
            duration: 0.0,
        }
    }
}

impl Sandbox for MarkerSandbox {
    fn execute_tests(
        &self,
        program: &str,
        tests: &[TestCase],
        _problem: &ProblemSpec,
        _timeout: f64,
    ) -> Result<Vec<ExecutionOutcome>, SandboxError> {
        if program.trim().is_empty() {
            return Err(SandboxError::EmptyProgram);
        }
        self.runs.fetch_add(1, Ordering::SeqCst);
        Ok(tests.iter().map(|t| Self::outcome(program, t)).collect())
    }

    fn execute_traced(
        &self,
        _program: &str,
        _test: &TestCase,
        _problem: &ProblemSpec,
        _timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError> {
        self.traces.fetch_add(1, Ordering::SeqCst);
        Ok(two_block_trace())
    }
}

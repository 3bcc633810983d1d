//! Rewards, verbal feedback and benchmark metrics.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::BenchError;
use crate::gateway::Gateway;
use crate::problem::{ProblemSpec, TestCase};
use crate::sandbox::{BlockTraceReport, ExecStatus, ExecutionOutcome, Sandbox};
use crate::tree::{BlockAnalysis, CandidateProgram, FailedCase, VerbalFeedback};

pub const SUMMARY_CAP: usize = 4000;
const FIELD_CAP: usize = 1200;

/// Dual reward: the public pass rate while some public test fails, then a
/// weighted mix of the pass rate and the model's self-evaluation.
pub fn compute_reward(v_test: f64, v_llm: Option<f64>, cfg: &RunConfig) -> f64 {
    if v_test < 1.0 {
        return v_test;
    }
    match v_llm {
        Some(v) => cfg.w_test * v_test + cfg.w_llm * v,
        None => v_test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub v_test: f64,
    pub v_llm: Option<f64>,
    pub reward: f64,
    pub feedback: Option<VerbalFeedback>,
    pub failed_cases: Vec<FailedCase>,
    /// Execution machinery failed; the program was never judged.
    pub error: Option<String>,
}

fn clip(text: &str, limit: usize) -> String {
    let text = text.trim_end();
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let head: String = text.chars().take(limit).collect();
    format!("{head}\n... [truncated]")
}

/// Feedback text: the failing input, expected and observed output, then one
/// line per block verdict. Capped at [`SUMMARY_CAP`] characters (tail cut).
pub fn render_summary(test: &TestCase, actual: &str, blocks: &[BlockAnalysis]) -> String {
    let mut s = format!(
        "Failed test input:\n{}\nExpected output:\n{}\nActual output:\n{}\n",
        clip(&test.input, FIELD_CAP),
        clip(&test.expected_output, FIELD_CAP),
        clip(actual, FIELD_CAP),
    );
    if !blocks.is_empty() {
        s.push_str("Block-level analysis:\n");
        for b in blocks {
            s.push_str(&format!(
                "Block {} (lines {}-{}): {}",
                b.block_index,
                b.line_span.0,
                b.line_span.1,
                b.verdict.as_str()
            ));
            if !b.explanation.trim().is_empty() {
                s.push_str(" - ");
                s.push_str(b.explanation.trim());
            }
            s.push('\n');
        }
    }
    if s.chars().count() > SUMMARY_CAP {
        s = s.chars().take(SUMMARY_CAP).collect();
    }
    s
}

pub fn build_verbal_feedback(
    outcome: &ExecutionOutcome,
    test: &TestCase,
    trace: Option<&BlockTraceReport>,
    verdicts: Option<&[BlockAnalysis]>,
) -> VerbalFeedback {
    let mut actual = outcome.observed();
    // A traced crash can explain an otherwise silent failure.
    if actual.trim().is_empty() {
        if let Some(t) = trace.filter(|t| !t.stderr.trim().is_empty()) {
            actual = t.stderr.clone();
        }
    }
    let blocks = verdicts.map(<[BlockAnalysis]>::to_vec).unwrap_or_default();
    VerbalFeedback {
        summary: render_summary(test, &actual, &blocks),
        failed_test: test.clone(),
        actual_output: actual,
        block_reports: blocks,
    }
}

/// Scores candidate programs. Holds the per-problem cache of model-written
/// tests used in generated-tests evaluation mode.
#[derive(Debug, Default)]
pub struct Evaluator {
    generated_tests: Mutex<HashMap<String, Vec<TestCase>>>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    fn generated_tests(&self, problem: &ProblemSpec, cfg: &RunConfig, gateway: &Gateway) -> Vec<TestCase> {
        let mut cache = self.generated_tests.lock().expect("test cache lock");
        cache
            .entry(problem.id.clone())
            .or_insert_with(|| {
                gateway.generate_unit_tests(problem, cfg.gen_tests_count).unwrap_or_else(|e| {
                    tracing::warn!(problem = %problem.id, error = %e, "test generation failed");
                    Vec::new()
                })
            })
            .clone()
    }

    /// Runs the public tests and derives the reward and, on failure, the verbal feedback.
    pub fn evaluate_candidate(
        &self,
        program: &str,
        problem: &ProblemSpec,
        cfg: &RunConfig,
        sandbox: &dyn Sandbox,
        gateway: &Gateway,
    ) -> RewardSignal {
        let tests = &problem.public_tests;
        let outcomes = match sandbox.execute_tests(program, tests, problem, cfg.exec_timeout) {
            Ok(o) => o,
            Err(e) => {
                let message = e.to_string();
                let feedback = (cfg.flags.verbal_feedback && !tests.is_empty()).then(|| {
                    let outcome = ExecutionOutcome {
                        status: ExecStatus::RuntimeError,
                        stdout: String::new(),
                        stderr: message.clone(),
                        duration: 0.0,
                    };
                    build_verbal_feedback(&outcome, &tests[0], None, None)
                });
                return RewardSignal {
                    v_test: 0.0,
                    v_llm: None,
                    reward: 0.0,
                    feedback,
                    failed_cases: Vec::new(),
                    error: Some(message),
                };
            }
        };
        let passed = outcomes.iter().filter(|o| o.passed()).count();
        let v_test = if tests.is_empty() { 0.0 } else { passed as f64 / tests.len() as f64 };
        let failed_cases: Vec<FailedCase> = tests
            .iter()
            .zip(&outcomes)
            .filter(|(_, o)| !o.passed())
            .map(|(t, o)| FailedCase { test: t.clone(), actual: o.observed() })
            .collect();

        let mut feedback = None;
        let mut v_llm = None;
        if v_test < 1.0 {
            if cfg.flags.verbal_feedback {
                let (test, outcome) =
                    tests.iter().zip(&outcomes).find(|(_, o)| !o.passed()).expect("v_test < 1 implies a failing test");
                feedback = Some(self.feedback_for(program, problem, cfg, sandbox, gateway, test, outcome));
            }
        } else if cfg.flags.gen_tests_eval {
            let extra = self.generated_tests(problem, cfg, gateway);
            if !extra.is_empty() {
                v_llm = Some(match sandbox.execute_tests(program, &extra, problem, cfg.exec_timeout) {
                    Ok(o) => o.iter().filter(|o| o.passed()).count() as f64 / extra.len() as f64,
                    Err(_) => 0.0,
                });
            } else if cfg.flags.self_eval {
                v_llm = Some(self.self_score(program, problem, gateway));
            }
        } else if cfg.flags.self_eval {
            v_llm = Some(self.self_score(program, problem, gateway));
        }

        RewardSignal { v_test, v_llm, reward: compute_reward(v_test, v_llm, cfg), feedback, failed_cases, error: None }
    }

    fn self_score(&self, program: &str, problem: &ProblemSpec, gateway: &Gateway) -> f64 {
        gateway.self_evaluate_program(problem, program).unwrap_or_else(|e| {
            tracing::warn!(problem = %problem.id, error = %e, "self-evaluation failed");
            0.0
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn feedback_for(
        &self,
        program: &str,
        problem: &ProblemSpec,
        cfg: &RunConfig,
        sandbox: &dyn Sandbox,
        gateway: &Gateway,
        test: &TestCase,
        outcome: &ExecutionOutcome,
    ) -> VerbalFeedback {
        if !cfg.flags.block_info {
            return build_verbal_feedback(outcome, test, None, None);
        }
        let trace = match sandbox.execute_traced(program, test, problem, cfg.exec_timeout) {
            Ok(t) => Some(t),
            Err(e) => {
                tracing::debug!(problem = %problem.id, error = %e, "no block trace");
                None
            }
        };
        let verdicts = trace.as_ref().filter(|t| !t.blocks.is_empty()).and_then(|t| {
            gateway
                .analyze_blocks(problem, program, t, test, &outcome.observed())
                .map_err(|e| tracing::warn!(problem = %problem.id, error = %e, "block analysis failed"))
                .ok()
        });
        build_verbal_feedback(outcome, test, trace.as_ref(), verdicts.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean private pass fraction, as a percentage.
    pub pass_rate: f64,
    /// Percentage of problems whose best program passes every private test.
    pub pass_at_1: f64,
    pub problems: usize,
}

pub fn aggregate_metrics(private_fractions: &[f64]) -> Result<Metrics, BenchError> {
    if private_fractions.is_empty() {
        return Err(BenchError::NoResults);
    }
    let n = private_fractions.len() as f64;
    let sum: f64 = private_fractions.iter().sum();
    let full = private_fractions.iter().filter(|&&f| f >= 1.0).count() as f64;
    Ok(Metrics { pass_rate: sum / n * 100.0, pass_at_1: full / n * 100.0, problems: private_fractions.len() })
}

/// Quality of everything a search generated. Both readings of a tree-level
/// success rate are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    /// Fraction of candidates passing every public test.
    pub full_pass_fraction: f64,
    pub mean_v_test: f64,
    pub candidates: usize,
}

pub fn tree_statistics(candidates: &[CandidateProgram]) -> TreeStats {
    if candidates.is_empty() {
        return TreeStats { full_pass_fraction: 0.0, mean_v_test: 0.0, candidates: 0 };
    }
    let n = candidates.len() as f64;
    let full = candidates.iter().filter(|c| c.v_test >= 1.0).count() as f64;
    let mean = candidates.iter().map(|c| c.v_test).sum::<f64>() / n;
    TreeStats { full_pass_fraction: full / n, mean_v_test: mean, candidates: candidates.len() }
}

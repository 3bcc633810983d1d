//! Program synthesis by Monte Carlo Tree Search over natural-language thoughts.
//!
//! The search proposes reasoning steps with a language model, turns each
//! root-to-node chain of steps into a complete program, scores it against the
//! public tests (plus a model self-assessment once every public test passes),
//! and repairs failing steps in place using block-level execution feedback.
//!
//! Module map:
//!
//! - [`problem`], [`config`], [`tree`]: the shared data model.
//! - [`search`]: selection, expansion, rollouts, backpropagation and rethink.
//! - [`gateway`]: prompts, structured-output parsing and chat backends.
//! - [`sandbox`]: subprocess execution of candidate programs and trace ingestion.
//! - [`evaluator`]: rewards, verbal feedback, metrics and tree statistics.
//! - [`bench`](mod@bench): dataset loading, benchmark orchestration and result files.

pub mod bench;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod gateway;
pub mod problem;
pub mod sandbox;
pub mod search;
pub mod tree;

pub use config::{Flags, Granularity, RunConfig};
pub use error::{BenchError, ConfigError, GatewayError, SandboxError, SearchError};
pub use evaluator::{aggregate_metrics, compute_reward, tree_statistics, Evaluator, Metrics, RewardSignal, TreeStats};
pub use gateway::Gateway;
pub use problem::{validate_problem, IoMode, ProblemSpec, TestCase, ValidationResult};
pub use sandbox::{BlockTraceReport, ExecStatus, ExecutionOutcome, ProcessSandbox, Sandbox};
pub use search::{compute_beta, compute_p_ucb, run_search, SearchResult, SearchState};
pub use tree::{BlockAnalysis, CandidateProgram, NodeId, SearchTree, ThoughtNode, VerbalFeedback, Verdict};

#[cfg(test)]
pub(crate) mod test_support;

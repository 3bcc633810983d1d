//! Search configuration.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// What a search action is: a reasoning step, or a whole program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Thought,
    Code,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thought" => Ok(Granularity::Thought),
            "code" => Ok(Granularity::Code),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

/// Component switches, used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub verbal_feedback: bool,
    pub block_info: bool,
    pub rethink: bool,
    pub self_eval: bool,
    pub gen_tests_eval: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self { verbal_feedback: true, block_info: true, rethink: true, self_eval: true, gen_tests_eval: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Total code-generation-plus-evaluation cycles, rethinks included.
    pub max_rollouts: u32,
    /// Thoughts requested per expansion.
    pub max_children: usize,
    pub c_base: f64,
    pub c_explore: f64,
    /// Weight of the public-test pass rate once every public test passes.
    pub w_test: f64,
    /// Weight of the model's self-evaluation once every public test passes.
    pub w_llm: f64,
    /// Number of thought steps below the root; nodes at this depth are not expanded.
    pub max_depth: usize,
    pub rethink_limit_per_node: u32,
    pub flags: Flags,
    pub granularity: Granularity,
    pub seed: u64,
    /// Per-test wall-clock limit in seconds.
    pub exec_timeout: f64,
    pub model_name: String,
    pub temperature: f64,
    /// Stop as soon as a candidate reaches the perfect dual score.
    pub early_stop: bool,
    /// Unit tests requested from the model in generated-tests evaluation mode.
    pub gen_tests_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_rollouts: 16,
            max_children: 3,
            c_base: 10.0,
            c_explore: 4.0,
            w_test: 0.8,
            w_llm: 0.2,
            max_depth: 4,
            rethink_limit_per_node: 1,
            flags: Flags::default(),
            granularity: Granularity::Thought,
            seed: 0,
            exec_timeout: 10.0,
            model_name: "gpt-4o-mini".into(),
            temperature: 0.7,
            early_stop: false,
            gen_tests_count: 5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("w_test", self.w_test),
            ("w_llm", self.w_llm),
            ("c_explore", self.c_explore),
            ("c_base", self.c_base),
            ("exec_timeout", self.exec_timeout),
            ("temperature", self.temperature),
        ] {
            // NaN counts as invalid.
            if v.is_nan() || v < 0.0 {
                return Err(ConfigError::Negative(name));
            }
        }
        if self.c_base <= 0.0 {
            return Err(ConfigError::NonPositiveCBase);
        }
        let sum = self.w_test + self.w_llm;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::WeightSum(sum));
        }
        if self.max_rollouts == 0 {
            return Err(ConfigError::NoRollouts);
        }
        if self.max_children == 0 {
            return Err(ConfigError::NoChildren);
        }
        Ok(())
    }

    /// Depth limit actually used by the search: whole-program actions form a single level.
    pub fn effective_max_depth(&self) -> usize {
        match self.granularity {
            Granularity::Thought => self.max_depth,
            Granularity::Code => self.max_depth.min(1),
        }
    }

    /// Best reward a candidate can receive under these weights.
    pub fn perfect_reward(&self) -> f64 {
        if self.flags.self_eval || self.flags.gen_tests_eval {
            self.w_test + self.w_llm
        } else {
            1.0
        }
    }
}

//! Everything that talks to the language model.
//!
//! [`Gateway`] builds prompts, sends them through a [`ChatBackend`], parses
//! the structured reply and applies the per-operation fallback. Parsing gets
//! exactly one re-prompt; after that each operation degrades to a fixed
//! fallback instead of looping.

pub mod backend;
pub mod parse;
pub mod prompts;
pub mod replay;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use backend::{
    ChatBackend, ChatMessage, ChatRequest, HttpBackend, MockBackend, PromptClass, RequestMeta, RetryPolicy, Role,
};
pub use replay::{fingerprint, ReplayBackend};

use crate::error::GatewayError;
use crate::problem::{IoMode, ProblemSpec, TestCase};
use crate::sandbox::BlockTraceReport;
use crate::tree::{BlockAnalysis, VerbalFeedback, Verdict};

const MAX_TRACE_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredThought {
    pub thought: String,
    /// Reasonableness score, always within [0, 1].
    pub score: f64,
}

/// One request as sent to the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub class: PromptClass,
    pub problem_id: String,
    pub fingerprint: String,
    pub attempt: u32,
    pub messages: Vec<ChatMessage>,
}

impl PromptRecord {
    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Shared, append-only log of every prompt a gateway sent.
#[derive(Debug, Clone, Default)]
pub struct PromptLog(Arc<Mutex<Vec<PromptRecord>>>);

impl PromptLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, record: PromptRecord) {
        self.0.lock().expect("prompt log lock").push(record);
    }

    pub fn records(&self) -> Vec<PromptRecord> {
        self.0.lock().expect("prompt log lock").clone()
    }

    pub fn count(&self, class: PromptClass) -> usize {
        self.0.lock().expect("prompt log lock").iter().filter(|r| r.class == class).count()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("prompt log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub model_name: String,
    /// Sampling temperature for proposals, programs and rethinks.
    pub temperature: f64,
    /// Sampling temperature for self-evaluation and block analysis.
    pub eval_temperature: f64,
    pub max_tokens: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self { model_name: "gpt-4o-mini".into(), temperature: 0.7, eval_temperature: 0.0, max_tokens: 2048 }
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    settings: GatewaySettings,
    log: PromptLog,
}

struct Exchange<'a> {
    class: PromptClass,
    problem: &'a ProblemSpec,
    fingerprint: String,
    items: usize,
    temperature: f64,
    prompt: String,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, settings: GatewaySettings) -> Self {
        Self { backend, settings, log: PromptLog::new() }
    }

    pub fn with_log(mut self, log: PromptLog) -> Self {
        self.log = log;
        self
    }

    pub fn log(&self) -> &PromptLog {
        &self.log
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    /// Sends one request, recording it in the prompt log first.
    pub fn complete_chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        self.log.push(PromptRecord {
            class: request.meta.class,
            problem_id: request.meta.problem_id.clone(),
            fingerprint: request.meta.fingerprint.clone(),
            attempt: request.meta.attempt,
            messages: request.messages.clone(),
        });
        self.backend.complete(request)
    }

    /// Sends the prompt, parses, and re-prompts once on a parse failure.
    /// The inner `Err` carries the last parse failure reason.
    fn exchange<T>(
        &self,
        ex: Exchange<'_>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Result<T, String>, GatewayError> {
        let mut request = ChatRequest {
            model_name: self.settings.model_name.clone(),
            messages: vec![ChatMessage::system(prompts::SYSTEM.trim()), ChatMessage::user(ex.prompt)],
            temperature: ex.temperature,
            max_tokens: self.settings.max_tokens,
            meta: RequestMeta {
                class: ex.class,
                problem_id: ex.problem.id.clone(),
                fingerprint: ex.fingerprint,
                attempt: 0,
                items: ex.items,
                io_mode: ex.problem.io_mode,
                entry_point: ex.problem.entry_point.clone(),
            },
        };
        let reply = self.complete_chat(&request)?;
        let reason = match parse(&reply) {
            Ok(v) => return Ok(Ok(v)),
            Err(reason) => reason,
        };
        tracing::debug!(class = %ex.class, %reason, "re-prompting after parse failure");
        request.messages.push(ChatMessage::assistant(reply));
        request.messages.push(ChatMessage::user(prompts::retry(&reason)));
        request.meta.attempt = 1;
        let reply = self.complete_chat(&request)?;
        Ok(parse(&reply))
    }

    /// Asks for `k` next reasoning steps with reasonableness scores. Feedback,
    /// when given, is embedded in the prompt. A reply that stays unparseable
    /// after one retry yields an empty list.
    pub fn propose_thoughts(
        &self,
        problem: &ProblemSpec,
        chain: &[String],
        feedback: Option<&VerbalFeedback>,
        k: usize,
        include_blocks: bool,
    ) -> Result<Vec<ScoredThought>, GatewayError> {
        if k == 0 {
            return Err(GatewayError::Precondition("k must be at least 1"));
        }
        let ex = Exchange {
            class: PromptClass::ProposeThoughts,
            problem,
            fingerprint: fingerprint(&problem.id, chain),
            items: k,
            temperature: self.settings.temperature,
            prompt: prompts::propose_thoughts(problem, chain, feedback, k, include_blocks),
        };
        Ok(self.exchange(ex, |r| parse_scored(r, &["thought"], k))?.unwrap_or_default())
    }

    /// Whole-program actions for code-granularity search.
    pub fn propose_programs(
        &self,
        problem: &ProblemSpec,
        feedback: Option<&VerbalFeedback>,
        k: usize,
        include_blocks: bool,
    ) -> Result<Vec<ScoredThought>, GatewayError> {
        if k == 0 {
            return Err(GatewayError::Precondition("k must be at least 1"));
        }
        let ex = Exchange {
            class: PromptClass::ProposeCode,
            problem,
            fingerprint: fingerprint::<&str>(&problem.id, &[]),
            items: k,
            temperature: self.settings.temperature,
            prompt: prompts::propose_code(problem, feedback, k, include_blocks),
        };
        let items = self.exchange(ex, |r| parse_scored(r, &["code", "program", "thought"], k))?;
        Ok(items
            .unwrap_or_default()
            .into_iter()
            .map(|mut s| {
                if let Some(code) = parse::extract_code_block(&s.thought) {
                    s.thought = code;
                }
                s.thought = assemble_program(problem, &s.thought);
                s
            })
            .collect())
    }

    /// One complete program written from the thought chain, taken from the
    /// first fenced block of the reply, with starter code prepended when the
    /// reply leaves it out.
    pub fn generate_program(&self, problem: &ProblemSpec, chain: &[String]) -> Result<String, GatewayError> {
        let ex = Exchange {
            class: PromptClass::GenerateProgram,
            problem,
            fingerprint: fingerprint(&problem.id, chain),
            items: 1,
            temperature: self.settings.temperature,
            prompt: prompts::generate_program(problem, chain),
        };
        let code = self
            .exchange(ex, |r| parse::extract_code_block(r).ok_or_else(|| "no fenced code block".to_string()))?
            .map_err(|_| GatewayError::NoCodeBlock)?;
        Ok(assemble_program(problem, &code))
    }

    /// Model's confidence that a program passing the public tests is correct
    /// in general. Last number in the reply, clamped; 0 when unparseable.
    pub fn self_evaluate_program(&self, problem: &ProblemSpec, program: &str) -> Result<f64, GatewayError> {
        let ex = Exchange {
            class: PromptClass::SelfEvaluate,
            problem,
            fingerprint: fingerprint(&problem.id, &[program]),
            items: 1,
            temperature: self.settings.eval_temperature,
            prompt: prompts::self_evaluate(problem, program),
        };
        let score = self.exchange(ex, |r| parse::last_number(r).ok_or_else(|| "no number found".to_string()))?;
        Ok(score.map(parse::clamp_unit).unwrap_or(0.0))
    }

    /// Replacement for `old_thought`, conditioned on the earlier steps and the failure feedback.
    pub fn regenerate_thought(
        &self,
        problem: &ProblemSpec,
        chain: &[String],
        old_thought: &str,
        feedback: &VerbalFeedback,
        include_blocks: bool,
    ) -> Result<String, GatewayError> {
        let mut state: Vec<&str> = chain.iter().map(String::as_str).collect();
        state.push(old_thought);
        let ex = Exchange {
            class: PromptClass::RegenerateThought,
            problem,
            fingerprint: fingerprint(&problem.id, &state),
            items: 1,
            temperature: self.settings.temperature,
            prompt: prompts::regenerate_thought(problem, chain, old_thought, feedback, include_blocks),
        };
        self.exchange(ex, parse_single_thought)?.map_err(GatewayError::Parse)
    }

    /// Per-block verdicts for a failing run. Blocks the reply does not cover
    /// are `unknown`; an unusable reply leaves every block `unknown`.
    pub fn analyze_blocks(
        &self,
        problem: &ProblemSpec,
        program: &str,
        trace: &BlockTraceReport,
        failed_test: &TestCase,
        actual: &str,
    ) -> Result<Vec<BlockAnalysis>, GatewayError> {
        if trace.blocks.is_empty() {
            return Err(GatewayError::Precondition("trace has no blocks"));
        }
        let ex = Exchange {
            class: PromptClass::AnalyzeBlocks,
            problem,
            fingerprint: fingerprint(&problem.id, &[program, &failed_test.input]),
            items: trace.blocks.len(),
            temperature: self.settings.eval_temperature,
            prompt: prompts::analyze_blocks(
                problem,
                program,
                &render_trace(trace),
                &failed_test.input,
                &failed_test.expected_output,
                actual,
            ),
        };
        let verdicts = self.exchange(ex, parse_verdicts)?.unwrap_or_default();
        Ok(trace
            .blocks
            .iter()
            .map(|b| {
                let (verdict, explanation) =
                    verdicts.get(&b.block_index).cloned().unwrap_or((Verdict::Unknown, String::new()));
                BlockAnalysis {
                    block_index: b.block_index,
                    line_span: (b.start_line, b.end_line),
                    source: b.source.clone(),
                    vars_after: b.vars_after.clone(),
                    verdict,
                    explanation,
                }
            })
            .collect())
    }

    /// Up to `n` model-written tests; malformed entries are dropped.
    pub fn generate_unit_tests(&self, problem: &ProblemSpec, n: usize) -> Result<Vec<TestCase>, GatewayError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let ex = Exchange {
            class: PromptClass::GenerateTests,
            problem,
            fingerprint: fingerprint::<&str>(&problem.id, &[]),
            items: n,
            temperature: self.settings.temperature,
            prompt: prompts::generate_tests(problem, n),
        };
        Ok(self.exchange(ex, |r| parse_tests(r, n))?.unwrap_or_default())
    }
}

/// Prepends starter code when the model's program does not already contain it.
pub fn assemble_program(problem: &ProblemSpec, code: &str) -> String {
    let Some(starter) = problem.starter_code.as_deref().filter(|s| !s.trim().is_empty()) else {
        return code.to_string();
    };
    let present = match (problem.io_mode, problem.entry_point.as_deref()) {
        (IoMode::Functional, Some(entry)) => code.contains(&format!("def {entry}(")),
        _ => starter.lines().find(|l| !l.trim().is_empty()).is_none_or(|first| code.contains(first.trim())),
    };
    if present {
        code.to_string()
    } else {
        format!("{}\n{}", starter.trim_end(), code)
    }
}

fn render_trace(trace: &BlockTraceReport) -> String {
    let fmt_vars = |vars: &std::collections::BTreeMap<String, String>| {
        vars.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join(", ")
    };
    let mut out = String::new();
    if trace.executed_sequence.is_empty() {
        for b in &trace.blocks {
            out.push_str(&format!(
                "[Block {} (lines {}-{})]\n{}\n# after: {}\n",
                b.block_index,
                b.start_line,
                b.end_line,
                b.source,
                fmt_vars(&b.vars_after)
            ));
        }
    } else {
        for (step, &i) in trace.executed_sequence.iter().enumerate().take(MAX_TRACE_STEPS) {
            let Some(b) = trace.block(i) else { continue };
            let vars = trace.step_vars.get(step).unwrap_or(&b.vars_after);
            out.push_str(&format!(
                "[Block {} (lines {}-{})]\n{}\n# after: {}\n",
                b.block_index,
                b.start_line,
                b.end_line,
                b.source,
                fmt_vars(vars)
            ));
        }
        let more = trace.executed_sequence.len().saturating_sub(MAX_TRACE_STEPS);
        if more > 0 || trace.truncated {
            out.push_str(&format!("... ({more} more steps not shown)\n"));
        }
    }
    if !trace.stderr.trim().is_empty() {
        out.push_str(&format!("stderr:\n{}\n", trace.stderr.trim_end()));
    }
    out
}

fn parse_scored(reply: &str, keys: &[&str], k: usize) -> Result<Vec<ScoredThought>, String> {
    let items = parse::extract_json_array(reply).ok_or("no JSON array found")?;
    let total = items.len();
    let parsed: Vec<ScoredThought> = items
        .iter()
        .filter_map(|item| {
            let text = keys.iter().find_map(|k| item.get(*k).and_then(Value::as_str))?.trim();
            if text.is_empty() {
                return None;
            }
            let score = item.get("score").and_then(parse::as_f64).map_or(0.0, parse::clamp_unit);
            Some(ScoredThought { thought: text.to_string(), score })
        })
        .take(k)
        .collect();
    if total > 0 && parsed.is_empty() {
        return Err(format!("none of the {total} items has a non-empty {:?} field", keys[0]));
    }
    Ok(parsed)
}

fn parse_single_thought(reply: &str) -> Result<String, String> {
    if let Some(v) = parse::extract_json(reply) {
        if let Some(t) = v.get("thought").and_then(Value::as_str).map(str::trim).filter(|t| !t.is_empty()) {
            return Ok(t.to_string());
        }
        return Err("JSON reply lacks a non-empty \"thought\" field".into());
    }
    let text = parse::fenced_blocks(reply).next().unwrap_or(reply).trim();
    if text.is_empty() {
        Err("empty reply".into())
    } else {
        Ok(text.to_string())
    }
}

fn parse_verdicts(reply: &str) -> Result<HashMap<usize, (Verdict, String)>, String> {
    let items = parse::extract_json_array(reply).ok_or("no JSON array found")?;
    Ok(items
        .iter()
        .filter_map(|item| {
            let idx = item.get("block_index").and_then(parse::as_f64)?;
            if idx < 0.0 || idx.fract() != 0.0 {
                return None;
            }
            let verdict = item.get("verdict").and_then(Value::as_str).map_or(Verdict::Unknown, Verdict::parse);
            let explanation = item.get("explanation").and_then(Value::as_str).unwrap_or_default().to_string();
            Some((idx as usize, (verdict, explanation)))
        })
        .collect())
}

fn parse_tests(reply: &str, n: usize) -> Result<Vec<TestCase>, String> {
    let items = parse::extract_json_array(reply).ok_or("no JSON array found")?;
    Ok(items
        .iter()
        .filter_map(|item| {
            let input = item.get("input").and_then(parse::as_text)?;
            let output = item.get("output").or_else(|| item.get("expected_output")).and_then(parse::as_text)?;
            Some(TestCase::new(input, output))
        })
        .take(n)
        .collect())
}

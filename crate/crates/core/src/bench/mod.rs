//! Benchmark plumbing: dataset ingestion, public/private splitting, running
//! the search over many problems, and the results/tree-dump files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::BenchError;
use crate::evaluator::{aggregate_metrics, tree_statistics, Evaluator, Metrics, TreeStats};
use crate::gateway::Gateway;
use crate::problem::{validate_problem, IoMode, ProblemSpec, TestCase};
use crate::sandbox::Sandbox;
use crate::search::{run_search, SearchEvent};
use crate::tree::{CandidateProgram, SearchTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Apps,
    Humaneval,
    GenericJsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "apps" => Ok(DatasetFormat::Apps),
            "humaneval" => Ok(DatasetFormat::Humaneval),
            "generic_jsonl" => Ok(DatasetFormat::GenericJsonl),
            other => Err(BenchError::UnknownFormat(other.to_string())),
        }
    }
}

/// Order-preserving split: the first ceil(n/2) tests are public, the rest private.
pub fn split_tests(tests: Vec<TestCase>) -> (Vec<TestCase>, Vec<TestCase>) {
    let mut public = tests;
    let private = public.split_off(public.len().div_ceil(2));
    (public, private)
}

/// Reads one problem per JSON line. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<ProblemSpec>, BenchError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut problems = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BenchError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| BenchError::MalformedRecord { index, reason };
        let record: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let problem = match format {
            DatasetFormat::Apps => apps_record(&record),
            DatasetFormat::Humaneval => humaneval_record(&record),
            DatasetFormat::GenericJsonl => generic_record(record),
        }
        .map_err(malformed)?;
        let validation = validate_problem(&problem);
        if let Some(v) = validation.violations().first() {
            return Err(malformed(v.to_string()));
        }
        problems.push(problem);
    }
    Ok(problems)
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) if items.iter().all(Value::is_string) => {
            items.iter().filter_map(Value::as_str).collect::<Vec<_>>().join("\n")
        }
        other => other.to_string(),
    }
}

fn id_of(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn apps_record(r: &Value) -> Result<ProblemSpec, String> {
    let id = id_of(r.get("problem_id").or_else(|| r.get("id"))).ok_or("missing problem_id")?;
    let statement = r.get("question").and_then(Value::as_str).ok_or("missing question")?.to_string();
    let io = match r.get("input_output").ok_or("missing input_output")? {
        Value::String(s) => serde_json::from_str::<Value>(s).map_err(|e| format!("input_output: {e}"))?,
        other => other.clone(),
    };
    let inputs = io.get("inputs").and_then(Value::as_array).ok_or("input_output.inputs missing")?;
    let outputs = io.get("outputs").and_then(Value::as_array).ok_or("input_output.outputs missing")?;
    if inputs.len() != outputs.len() {
        return Err(format!("{} inputs but {} outputs", inputs.len(), outputs.len()));
    }
    if inputs.is_empty() {
        return Err("no test cases".into());
    }
    let tests = inputs.iter().zip(outputs).map(|(i, o)| TestCase::new(text_of(i), text_of(o))).collect();
    let (public_tests, private_tests) = split_tests(tests);
    let starter_code = r.get("starter_code").and_then(Value::as_str).filter(|s| !s.trim().is_empty()).map(String::from);
    Ok(ProblemSpec {
        id,
        statement,
        io_mode: IoMode::StdinStdout,
        entry_point: None,
        starter_code,
        public_tests,
        private_tests,
    })
}

fn humaneval_record(r: &Value) -> Result<ProblemSpec, String> {
    let id = id_of(r.get("task_id").or_else(|| r.get("id"))).ok_or("missing task_id")?;
    let prompt = r.get("prompt").and_then(Value::as_str).ok_or("missing prompt")?.to_string();
    let entry = r
        .get("entry_point")
        .and_then(Value::as_str)
        .filter(|e| !e.trim().is_empty())
        .ok_or("entry_point required")?
        .to_string();
    let tests: Vec<TestCase> = match r.get("tests").and_then(Value::as_array) {
        Some(items) => items
            .iter()
            .map(|t| {
                let input = t.get("input").map(text_of).ok_or("test without input")?;
                let output =
                    t.get("output").or_else(|| t.get("expected_output")).map(text_of).ok_or("test without output")?;
                Ok(TestCase::new(input, output))
            })
            .collect::<Result<_, &str>>()?,
        None => parse_candidate_asserts(r.get("test").and_then(Value::as_str).unwrap_or_default()),
    };
    if tests.is_empty() {
        return Err("no usable test cases".into());
    }
    let (public_tests, private_tests) = split_tests(tests);
    Ok(ProblemSpec {
        id,
        statement: prompt.clone(),
        io_mode: IoMode::Functional,
        entry_point: Some(entry),
        starter_code: Some(prompt),
        public_tests,
        private_tests,
    })
}

/// Index just past the parenthesis closing the one that precedes `start`.
fn closing_paren(s: &str, start: usize) -> Option<usize> {
    let mut depth = 1usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if let Some(q) = quote {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                _ if c == q => quote = None,
                _ => {}
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts input/output pairs from `assert candidate(ARGS) == EXPECTED`
/// lines (plus the bare and negated boolean forms). Other asserts are skipped.
pub fn parse_candidate_asserts(test_code: &str) -> Vec<TestCase> {
    const CALL: &str = "candidate(";
    let mut out = Vec::new();
    for line in test_code.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix("assert ") else { continue };
        let rest = rest.trim_start();
        let (negated, rest) = match rest.strip_prefix("not ") {
            Some(r) => (true, r.trim_start()),
            None => (false, rest),
        };
        let Some(args_start) = rest.strip_prefix(CALL).map(|_| CALL.len()) else { continue };
        let Some(end) = closing_paren(rest, args_start) else { continue };
        let args = rest[args_start..end - 1].trim().to_string();
        let tail = rest[end..].trim();
        let expected = if tail.is_empty() || tail.starts_with(',') {
            Some(if negated { "False" } else { "True" }.to_string())
        } else if negated {
            None
        } else {
            tail.strip_prefix("==").map(|e| e.trim().to_string())
        };
        if let Some(expected) = expected.filter(|e| !e.is_empty()) {
            out.push(TestCase::new(args, expected));
        }
    }
    out
}

#[derive(Deserialize)]
struct GenericRecord {
    id: Value,
    statement: String,
    io_mode: IoMode,
    #[serde(default)]
    entry_point: Option<String>,
    #[serde(default)]
    starter_code: Option<String>,
    #[serde(default)]
    public_tests: Option<Vec<TestCase>>,
    #[serde(default)]
    private_tests: Option<Vec<TestCase>>,
    /// Unsplit tests, used when `public_tests` is absent.
    #[serde(default)]
    tests: Option<Vec<TestCase>>,
}

fn generic_record(r: Value) -> Result<ProblemSpec, String> {
    let rec: GenericRecord = serde_json::from_value(r).map_err(|e| e.to_string())?;
    let id = id_of(Some(&rec.id)).ok_or("id must be a string or number")?;
    let (public_tests, private_tests) = match (rec.public_tests, rec.tests) {
        (Some(public), _) => (public, rec.private_tests.unwrap_or_default()),
        (None, Some(all)) => split_tests(all),
        (None, None) => return Err("public_tests empty".into()),
    };
    Ok(ProblemSpec {
        id,
        statement: rec.statement,
        io_mode: rec.io_mode,
        entry_point: rec.entry_point,
        starter_code: rec.starter_code,
        public_tests,
        private_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub problem_id: String,
    pub best_program: String,
    pub best_reward: f64,
    pub public_fraction: f64,
    /// Graded once, after the search, on tests the search never saw.
    pub private_fraction: f64,
    pub rollouts_used: u32,
    pub rethinks_used: u32,
    pub tree_stats: TreeStats,
    pub wall_clock: f64,
    pub tree_dump_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ResultRecord {
    Result(RunResult),
    Metrics(Metrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub problem_id: String,
    pub seed: u64,
    pub config: RunConfig,
    pub tree: SearchTree,
    pub candidates: Vec<CandidateProgram>,
    pub events: Vec<SearchEvent>,
    pub stats: TreeStats,
}

/// Appends result records as they arrive; [`ResultsWriter::finish`] adds the metrics line.
pub struct ResultsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ResultsWriter {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, BenchError> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| BenchError::io(&path, e))?;
        Ok(Self { out: BufWriter::new(file), path })
    }

    fn line(&mut self, record: &ResultRecord) -> Result<(), BenchError> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").and_then(|_| self.out.flush()).map_err(|e| BenchError::io(&self.path, e))
    }

    pub fn append(&mut self, result: &RunResult) -> Result<(), BenchError> {
        self.line(&ResultRecord::Result(result.clone()))
    }

    pub fn finish(mut self, metrics: &Metrics) -> Result<(), BenchError> {
        self.line(&ResultRecord::Metrics(*metrics))
    }
}

/// Writes a complete results file: one line per problem, then the metrics line.
pub fn write_results(results: &[RunResult], metrics: &Metrics, out_path: impl Into<PathBuf>) -> Result<(), BenchError> {
    let mut writer = ResultsWriter::create(out_path)?;
    for r in results {
        writer.append(r)?;
    }
    writer.finish(metrics)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>, BenchError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| BenchError::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}

/// Metrics recomputed from the per-problem lines of a results file, and the
/// metrics line the file itself carries (if any).
pub fn recompute_metrics(path: impl AsRef<Path>) -> Result<(Metrics, Option<Metrics>), BenchError> {
    let records = read_results(path)?;
    let fractions: Vec<f64> = records
        .iter()
        .filter_map(|r| match r {
            ResultRecord::Result(r) => Some(r.private_fraction),
            ResultRecord::Metrics(_) => None,
        })
        .collect();
    let recorded = records.iter().rev().find_map(|r| match r {
        ResultRecord::Metrics(m) => Some(*m),
        ResultRecord::Result(_) => None,
    });
    Ok((aggregate_metrics(&fractions)?, recorded))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub results: Vec<RunResult>,
    pub metrics: Metrics,
    /// Problems whose search failed outright (recorded with reward 0).
    pub failures: usize,
}

/// Where tree dumps for a results file go: `<out>.trees/` next to it.
pub fn tree_dir_for(out_path: &Path) -> PathBuf {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".trees");
    out_path.with_file_name(name)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn pass_fraction(sandbox: &dyn Sandbox, program: &str, tests: &[TestCase], problem: &ProblemSpec, timeout: f64) -> f64 {
    if program.trim().is_empty() || tests.is_empty() {
        return 0.0;
    }
    match sandbox.execute_tests(program, tests, problem, timeout) {
        Ok(o) => o.iter().filter(|o| o.passed()).count() as f64 / tests.len() as f64,
        Err(e) => {
            tracing::warn!(problem = %problem.id, error = %e, "grading failed");
            0.0
        }
    }
}

/// Searches every problem, grades the best program on the private tests,
/// streams results to `out_path` and finishes with the aggregate metrics.
pub fn run_benchmark(
    problems: &[ProblemSpec],
    cfg: &RunConfig,
    gateway: &Gateway,
    sandbox: &dyn Sandbox,
    out_path: &Path,
) -> Result<BenchReport, BenchError> {
    if problems.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    cfg.validate()?;
    let tree_dir = tree_dir_for(out_path);
    std::fs::create_dir_all(&tree_dir).map_err(|e| BenchError::io(&tree_dir, e))?;
    let mut writer = ResultsWriter::create(out_path)?;
    let mut results = Vec::with_capacity(problems.len());
    let mut failures = 0;

    for problem in problems {
        let started = Instant::now();
        let evaluator = Evaluator::new();
        let result = match run_search(problem, cfg, gateway, sandbox, &evaluator) {
            Ok(search) => {
                let stats = tree_statistics(&search.candidates);
                let dump_path = tree_dir.join(format!("{}.json", sanitize(&problem.id)));
                let dump = TreeDump {
                    problem_id: problem.id.clone(),
                    seed: cfg.seed,
                    config: cfg.clone(),
                    tree: search.tree,
                    candidates: search.candidates,
                    events: search.events,
                    stats,
                };
                let text = serde_json::to_string_pretty(&dump)?;
                std::fs::write(&dump_path, text).map_err(|e| BenchError::io(&dump_path, e))?;
                let grading_set =
                    if problem.private_tests.is_empty() { &problem.public_tests } else { &problem.private_tests };
                let private_fraction =
                    pass_fraction(sandbox, &search.best.source, grading_set, problem, cfg.exec_timeout);
                RunResult {
                    problem_id: problem.id.clone(),
                    best_program: search.best.source.clone(),
                    best_reward: search.best.reward,
                    public_fraction: search.best.v_test,
                    private_fraction,
                    rollouts_used: search.rollouts_used,
                    rethinks_used: search.rethinks_used,
                    tree_stats: stats,
                    wall_clock: started.elapsed().as_secs_f64(),
                    tree_dump_path: Some(dump_path.display().to_string()),
                    error: None,
                }
            }
            Err(e) => {
                failures += 1;
                tracing::warn!(problem = %problem.id, error = %e, "search failed");
                RunResult {
                    problem_id: problem.id.clone(),
                    best_program: String::new(),
                    best_reward: 0.0,
                    public_fraction: 0.0,
                    private_fraction: 0.0,
                    rollouts_used: 0,
                    rethinks_used: 0,
                    tree_stats: tree_statistics(&[]),
                    wall_clock: started.elapsed().as_secs_f64(),
                    tree_dump_path: None,
                    error: Some(e.to_string()),
                }
            }
        };
        tracing::info!(
            problem = %result.problem_id,
            reward = result.best_reward,
            private = result.private_fraction,
            "problem finished"
        );
        writer.append(&result)?;
        results.push(result);
    }
    let fractions: Vec<f64> = results.iter().map(|r| r.private_fraction).collect();
    let metrics = aggregate_metrics(&fractions)?;
    writer.finish(&metrics)?;
    Ok(BenchReport { results, metrics, failures })
}

//! Prompt templates. The text lives in `prompts/v1/*.txt` at the crate root;
//! bump [`PROMPT_VERSION`] when a template changes meaning.

use crate::evaluator::render_summary;
use crate::problem::{IoMode, ProblemSpec};
use crate::tree::VerbalFeedback;

pub const PROMPT_VERSION: &str = "v1";

pub const SYSTEM: &str = include_str!("../../prompts/v1/system.txt");
const PROBLEM: &str = include_str!("../../prompts/v1/problem.txt");
const PROPOSE_THOUGHTS: &str = include_str!("../../prompts/v1/propose_thoughts.txt");
const PROPOSE_CODE: &str = include_str!("../../prompts/v1/propose_code.txt");
const GENERATE_PROGRAM: &str = include_str!("../../prompts/v1/generate_program.txt");
const SELF_EVALUATE: &str = include_str!("../../prompts/v1/self_evaluate.txt");
const REGENERATE_THOUGHT: &str = include_str!("../../prompts/v1/regenerate_thought.txt");
const ANALYZE_BLOCKS: &str = include_str!("../../prompts/v1/analyze_blocks.txt");
const GENERATE_TESTS: &str = include_str!("../../prompts/v1/generate_tests.txt");
const RETRY: &str = include_str!("../../prompts/v1/retry.txt");

const TEST_TEXT_CAP: usize = 1000;

/// Single-pass substitution of `{name}` placeholders. Unknown `{...}` spans
/// (JSON examples) are left alone, and substituted values are never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn cap(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        text.to_string()
    } else {
        let head: String = text.chars().take(limit).collect();
        format!("{head}... [truncated]")
    }
}

fn io_reminder(problem: &ProblemSpec) -> String {
    match (problem.io_mode, problem.entry_point.as_deref()) {
        (IoMode::Functional, Some(entry)) => format!("The program must define the function `{entry}`."),
        _ => "The program must read from standard input and write to standard output.".into(),
    }
}

/// Problem statement, I/O contract and public tests. Private tests are never rendered.
pub fn problem_section(problem: &ProblemSpec) -> String {
    let io_contract = match (problem.io_mode, problem.entry_point.as_deref()) {
        (IoMode::Functional, Some(entry)) => format!(
            "Implement the Python function `{entry}`. Test inputs are Python argument lists; expected outputs are Python literals of the return value."
        ),
        _ => "Read the input from standard input and print the answer to standard output.".into(),
    };
    let starter = problem
        .starter_code
        .as_deref()
        .filter(|s| !s.trim().is_empty())
        .map(|s| format!("\n## Starter code\n```python\n{}\n```\n", s.trim_end()))
        .unwrap_or_default();
    let tests: String = problem
        .public_tests
        .iter()
        .enumerate()
        .map(|(i, t)| {
            format!(
                "Test {}\nInput:\n{}\nExpected output:\n{}\n",
                i + 1,
                cap(t.input.trim_end(), TEST_TEXT_CAP),
                cap(t.expected_output.trim_end(), TEST_TEXT_CAP)
            )
        })
        .collect();
    render(
        PROBLEM,
        &[
            ("statement", problem.statement.trim()),
            ("io_contract", &io_contract),
            ("starter", &starter),
            ("public_tests", &tests),
        ],
    )
}

fn numbered(chain: &[String]) -> String {
    if chain.is_empty() {
        return "(none yet)".into();
    }
    chain.iter().enumerate().map(|(i, t)| format!("{}. {}\n", i + 1, t.trim())).collect()
}

/// Feedback text for a prompt; block verdict lines only when `include_blocks`.
pub fn feedback_text(feedback: &VerbalFeedback, include_blocks: bool) -> String {
    if include_blocks {
        feedback.summary.clone()
    } else {
        render_summary(&feedback.failed_test, &feedback.actual_output, &[])
    }
}

pub fn propose_thoughts(
    problem: &ProblemSpec,
    chain: &[String],
    feedback: Option<&VerbalFeedback>,
    k: usize,
    include_blocks: bool,
) -> String {
    let (section, hint) = feedback_parts(feedback, include_blocks);
    render(
        PROPOSE_THOUGHTS,
        &[
            ("problem", &problem_section(problem)),
            ("thoughts", &numbered(chain)),
            ("feedback", &section),
            ("k", &k.to_string()),
            ("feedback_hint", hint),
        ],
    )
}

pub fn propose_code(
    problem: &ProblemSpec,
    feedback: Option<&VerbalFeedback>,
    k: usize,
    include_blocks: bool,
) -> String {
    let (section, hint) = feedback_parts(feedback, include_blocks);
    render(
        PROPOSE_CODE,
        &[
            ("problem", &problem_section(problem)),
            ("feedback", &section),
            ("k", &k.to_string()),
            ("feedback_hint", hint),
        ],
    )
}

fn feedback_parts(feedback: Option<&VerbalFeedback>, include_blocks: bool) -> (String, &'static str) {
    match feedback {
        Some(fb) => (
            format!("\n## Feedback from the last attempt\n{}\n", feedback_text(fb, include_blocks)),
            "Use the feedback to steer away from the failure.",
        ),
        None => (String::new(), ""),
    }
}

pub fn generate_program(problem: &ProblemSpec, chain: &[String]) -> String {
    render(
        GENERATE_PROGRAM,
        &[
            ("problem", &problem_section(problem)),
            ("thoughts", &numbered(chain)),
            ("io_reminder", &io_reminder(problem)),
        ],
    )
}

pub fn self_evaluate(problem: &ProblemSpec, program: &str) -> String {
    render(SELF_EVALUATE, &[("problem", &problem_section(problem)), ("program", program.trim_end())])
}

pub fn regenerate_thought(
    problem: &ProblemSpec,
    chain: &[String],
    old_thought: &str,
    feedback: &VerbalFeedback,
    include_blocks: bool,
) -> String {
    render(
        REGENERATE_THOUGHT,
        &[
            ("problem", &problem_section(problem)),
            ("thoughts", &numbered(chain)),
            ("old_thought", old_thought.trim()),
            ("feedback", &feedback_text(feedback, include_blocks)),
        ],
    )
}

pub fn analyze_blocks(
    problem: &ProblemSpec,
    program: &str,
    trace: &str,
    input: &str,
    expected: &str,
    actual: &str,
) -> String {
    render(
        ANALYZE_BLOCKS,
        &[
            ("problem", &problem_section(problem)),
            ("program", program.trim_end()),
            ("trace", trace),
            ("input", &cap(input.trim_end(), TEST_TEXT_CAP)),
            ("expected", &cap(expected.trim_end(), TEST_TEXT_CAP)),
            ("actual", &cap(actual.trim_end(), TEST_TEXT_CAP)),
        ],
    )
}

pub fn generate_tests(problem: &ProblemSpec, n: usize) -> String {
    render(
        GENERATE_TESTS,
        &[("problem", &problem_section(problem)), ("n", &n.to_string()), ("io_reminder", &io_reminder(problem))],
    )
}

pub fn retry(reason: &str) -> String {
    render(RETRY, &[("reason", reason)])
}

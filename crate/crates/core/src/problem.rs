//! Coding problems and their test cases.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoMode {
    /// The program reads the test input from stdin and writes its answer to stdout.
    StdinStdout,
    /// The program defines `entry_point`; the input is a Python argument list
    /// literal and the expected output a Python literal of the return value.
    Functional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    #[serde(alias = "output")]
    pub expected_output: String,
}

impl TestCase {
    pub fn new(input: impl Into<String>, expected_output: impl Into<String>) -> Self {
        Self { input: input.into(), expected_output: expected_output.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    pub statement: String,
    pub io_mode: IoMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starter_code: Option<String>,
    pub public_tests: Vec<TestCase>,
    #[serde(default)]
    pub private_tests: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyStatement,
    NoPublicTests,
    MissingEntryPoint,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Violation::EmptyId => "id empty",
            Violation::EmptyStatement => "statement empty",
            Violation::NoPublicTests => "public_tests empty",
            Violation::MissingEntryPoint => "entry_point required",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    Ok,
    Invalid(Vec<Violation>),
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationResult::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationResult::Ok => &[],
            ValidationResult::Invalid(v) => v,
        }
    }
}

/// Checks the invariants a problem must satisfy before it can be searched.
pub fn validate_problem(spec: &ProblemSpec) -> ValidationResult {
    let mut violations = Vec::new();
    if spec.id.trim().is_empty() {
        violations.push(Violation::EmptyId);
    }
    if spec.statement.trim().is_empty() {
        violations.push(Violation::EmptyStatement);
    }
    if spec.public_tests.is_empty() {
        violations.push(Violation::NoPublicTests);
    }
    if spec.io_mode == IoMode::Functional && spec.entry_point.as_deref().is_none_or(|e| e.trim().is_empty()) {
        violations.push(Violation::MissingEntryPoint);
    }
    if violations.is_empty() {
        ValidationResult::Ok
    } else {
        ValidationResult::Invalid(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stdin_problem() -> ProblemSpec {
        ProblemSpec {
            id: "p1".into(),
            statement: "Echo the number.".into(),
            io_mode: IoMode::StdinStdout,
            entry_point: None,
            starter_code: None,
            public_tests: vec![TestCase::new("1\n", "1"), TestCase::new("2\n", "2")],
            private_tests: vec![TestCase::new("3\n", "3"), TestCase::new("4\n", "4")],
        }
    }

    #[test]
    fn well_formed_problem_is_ok() {
        assert_eq!(validate_problem(&stdin_problem()), ValidationResult::Ok);
    }

    #[test]
    fn functional_without_entry_point() {
        let mut p = stdin_problem();
        p.io_mode = IoMode::Functional;
        let res = validate_problem(&p);
        assert_eq!(res.violations(), &[Violation::MissingEntryPoint]);
        assert_eq!(res.violations()[0].to_string(), "entry_point required");
    }

    #[test]
    fn zero_public_tests() {
        let mut p = stdin_problem();
        p.public_tests.clear();
        let res = validate_problem(&p);
        assert_eq!(res.violations(), &[Violation::NoPublicTests]);
        assert_eq!(res.violations()[0].to_string(), "public_tests empty");
    }

    #[test]
    fn empty_private_tests_are_allowed() {
        let mut p = stdin_problem();
        p.private_tests.clear();
        assert!(validate_problem(&p).is_ok());
    }

    #[test]
    fn collects_every_violation() {
        let p = ProblemSpec {
            id: "".into(),
            statement: "  ".into(),
            io_mode: IoMode::Functional,
            entry_point: Some("".into()),
            starter_code: None,
            public_tests: vec![],
            private_tests: vec![],
        };
        assert_eq!(validate_problem(&p).violations().len(), 4);
    }
}

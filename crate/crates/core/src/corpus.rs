//! Base-benchmark corpora.
//!
//! Two line-delimited JSON layouts are accepted:
//!
//! * `humaneval_like`: `task_id`, `prompt`, `canonical_solution` (the body
//!   completing `prompt`), `entry_point`, and `test`, a `check(candidate)`
//!   function whose `assert` statements form the assertion suite.
//! * `classeval_like`: `task_id`, `class_name`, optional `import_statement`
//!   and `skeleton`, `solution_code` (the whole class), `entry_point`
//!   (`method` or `Class.method`) and `test_cases`, a list of
//!   `{name, assertions: [..]}` objects. All assertions of all test cases are
//!   kept.
//!
//! Each distinct call found in an assertion becomes one [`InputCase`].

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::literal::LiteralValue;
use crate::pysrc;
use crate::sandbox::{self, ResourceLimits};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {ordinal}: {message}")]
    Format { ordinal: usize, message: String },
    #[error("cannot read corpus {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    HumanevalLike,
    ClassevalLike,
}

impl FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "humaneval_like" => Ok(Self::HumanevalLike),
            "classeval_like" => Ok(Self::ClassevalLike),
            other => Err(format!(
                "unknown corpus format `{other}` (expected humaneval_like or classeval_like)"
            )),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HumanevalLike => "humaneval_like",
            Self::ClassevalLike => "classeval_like",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCase {
    pub input_id: String,
    pub arguments: Vec<LiteralValue>,
    pub invocation_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionStmt {
    pub text: String,
    pub rhs_literal: Option<LiteralValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub record_id: String,
    pub source_code: String,
    pub entry_point: String,
    pub canonical_solution: String,
    pub test_inputs: Vec<InputCase>,
    pub assertions: Vec<AssertionStmt>,
    pub context: Option<String>,
}

/// Name the humaneval test suites use for the function under test.
const CANDIDATE: &str = "candidate";

impl BenchmarkRecord {
    /// The text that is traced, rendered and graded: context followed by the
    /// canonical solution. Line numbers everywhere refer to this text.
    pub fn program_text(&self) -> String {
        match self.context.as_deref().map(str::trim_end) {
            Some(ctx) if !ctx.is_empty() => format!("{ctx}\n{}", self.canonical_solution),
            _ => self.canonical_solution.clone(),
        }
    }

    /// Code run between the program and an assertion when grading, binding
    /// `candidate` for humaneval-style suites.
    pub fn grading_prelude(&self) -> Option<String> {
        let uses_candidate = self
            .assertions
            .iter()
            .any(|a| pysrc::find_call(&a.text, CANDIDATE).is_some());
        (uses_candidate && !self.entry_point.contains('.')).then(|| format!("{CANDIDATE} = {}", self.entry_point))
    }

    /// Name of the callable the invocations must reach.
    pub fn entry_callable(&self) -> &str {
        self.entry_point.rsplit('.').next().unwrap_or(&self.entry_point)
    }

    /// Literal assertions that exercise `input`, in suite order.
    pub fn assertions_for(&self, input: &InputCase) -> Vec<&AssertionStmt> {
        self.assertions
            .iter()
            .filter(|a| invocation_of(&a.text, &self.entry_point).as_deref() == Some(input.invocation_text.as_str()))
            .collect()
    }
}

impl AssertionStmt {
    pub fn from_text(text: &str) -> Self {
        let text = text.trim().to_string();
        let rhs_literal = pysrc::split_equality(&text)
            .and_then(|eq| LiteralValue::parse(&eq.rhs).ok())
            .filter(LiteralValue::is_constant);
        Self { text, rhs_literal }
    }
}

/// The call an assertion exercises, rewritten to call the entry point
/// directly.
pub fn invocation_of(assertion: &str, entry_point: &str) -> Option<String> {
    if let Some((s, e)) = pysrc::find_call(assertion, CANDIDATE) {
        if !entry_point.contains('.') {
            return Some(pysrc::rename_identifier(&assertion[s..e], CANDIDATE, entry_point));
        }
    }
    let eq = pysrc::split_equality(assertion)?;
    let method = entry_point.rsplit('.').next().unwrap_or(entry_point);
    (eq.lhs.contains('(') && eq.lhs.contains(method)).then_some(eq.lhs)
}

fn literal_arguments(invocation: &str) -> Vec<LiteralValue> {
    let Some(&open) = pysrc::top_level_positions(invocation, "(").last() else {
        return Vec::new();
    };
    let args = pysrc::call_arguments(&invocation[open..]);
    args.iter()
        .map(|a| LiteralValue::parse(a).ok())
        .collect::<Option<Vec<_>>>()
        .unwrap_or_default()
}

/// Derives one input per distinct invocation in the assertion suite.
pub fn derive_inputs(assertions: &[AssertionStmt], entry_point: &str) -> Vec<InputCase> {
    let mut seen = HashSet::new();
    let mut inputs = Vec::new();
    for a in assertions {
        let Some(invocation) = invocation_of(&a.text, entry_point) else {
            continue;
        };
        if seen.insert(invocation.clone()) {
            inputs.push(InputCase {
                input_id: format!("in{}", inputs.len()),
                arguments: literal_arguments(&invocation),
                invocation_text: invocation,
            });
        }
    }
    inputs
}

fn field<'a>(obj: &'a Value, name: &str, ordinal: usize) -> Result<&'a str, CorpusError> {
    obj.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| CorpusError::Format {
            ordinal,
            message: format!("missing field `{name}`"),
        })
}

fn opt_field<'a>(obj: &'a Value, name: &str) -> Option<&'a str> {
    obj.get(name).and_then(Value::as_str).filter(|s| !s.trim().is_empty())
}

fn assertions_from_check(test: &str) -> Vec<AssertionStmt> {
    pysrc::logical_lines(test)
        .into_iter()
        .filter(|(_, line)| pysrc::assertion_body(line).is_some())
        .map(|(_, line)| AssertionStmt::from_text(&line))
        .collect()
}

fn parse_humaneval(obj: &Value, ordinal: usize) -> Result<BenchmarkRecord, CorpusError> {
    let record_id = field(obj, "task_id", ordinal)?.to_string();
    let prompt = field(obj, "prompt", ordinal)?;
    let body = field(obj, "canonical_solution", ordinal)?;
    let entry_point = field(obj, "entry_point", ordinal)?.to_string();
    let test = field(obj, "test", ordinal)?;
    let assertions = assertions_from_check(test);
    let test_inputs = derive_inputs(&assertions, &entry_point);
    Ok(BenchmarkRecord {
        record_id,
        source_code: prompt.to_string(),
        canonical_solution: format!("{prompt}{body}"),
        entry_point,
        test_inputs,
        assertions,
        context: None,
    })
}

fn parse_classeval(obj: &Value, ordinal: usize) -> Result<BenchmarkRecord, CorpusError> {
    let record_id = field(obj, "task_id", ordinal)?.to_string();
    let class_name = field(obj, "class_name", ordinal)?;
    let solution = field(obj, "solution_code", ordinal)?.to_string();
    let entry = field(obj, "entry_point", ordinal)?;
    let entry_point = if entry.contains('.') {
        entry.to_string()
    } else {
        format!("{class_name}.{entry}")
    };
    let cases = obj
        .get("test_cases")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::Format {
            ordinal,
            message: "missing field `test_cases`".into(),
        })?;
    let mut assertions = Vec::new();
    for case in cases {
        let list = case
            .get("assertions")
            .and_then(Value::as_array)
            .ok_or_else(|| CorpusError::Format {
                ordinal,
                message: "test case without `assertions`".into(),
            })?;
        for a in list {
            let text = a.as_str().ok_or_else(|| CorpusError::Format {
                ordinal,
                message: "assertion is not a string".into(),
            })?;
            assertions.push(AssertionStmt::from_text(text));
        }
    }
    let test_inputs = derive_inputs(&assertions, &entry_point);
    Ok(BenchmarkRecord {
        record_id,
        source_code: opt_field(obj, "skeleton").unwrap_or(&solution).to_string(),
        canonical_solution: solution,
        entry_point,
        test_inputs,
        assertions,
        context: opt_field(obj, "import_statement").map(str::to_string),
    })
}

/// Parses one corpus line. `ordinal` is 1-based and only used in errors.
pub fn parse_record(line: &str, format: CorpusFormat, ordinal: usize) -> Result<BenchmarkRecord, CorpusError> {
    let obj: Value = serde_json::from_str(line).map_err(|e| CorpusError::Format {
        ordinal,
        message: format!("malformed line: {e}"),
    })?;
    let record = match format {
        CorpusFormat::HumanevalLike => parse_humaneval(&obj, ordinal)?,
        CorpusFormat::ClassevalLike => parse_classeval(&obj, ordinal)?,
    };
    if record.record_id.trim().is_empty() {
        return Err(CorpusError::Format {
            ordinal,
            message: "empty record id".into(),
        });
    }
    if record.assertions.is_empty() {
        return Err(CorpusError::Format {
            ordinal,
            message: "no assertions in test suite".into(),
        });
    }
    Ok(record)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<BenchmarkRecord>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let ordinal = i + 1;
        let record = parse_record(&line, format, ordinal)?;
        if !ids.insert(record.record_id.clone()) {
            return Err(CorpusError::Format {
                ordinal,
                message: format!("duplicate record id `{}`", record.record_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Serializes a record back into the given corpus layout.
pub fn serialize_record(record: &BenchmarkRecord, format: CorpusFormat) -> String {
    let value = match format {
        CorpusFormat::HumanevalLike => {
            let body = record
                .canonical_solution
                .strip_prefix(&record.source_code)
                .unwrap_or(&record.canonical_solution);
            let mut test = String::from("def check(candidate):\n");
            for a in &record.assertions {
                test.push_str("    ");
                test.push_str(&a.text);
                test.push('\n');
            }
            json!({
                "task_id": record.record_id,
                "prompt": if body.len() == record.canonical_solution.len() { "" } else { record.source_code.as_str() },
                "canonical_solution": body,
                "entry_point": record.entry_point,
                "test": test,
            })
        }
        CorpusFormat::ClassevalLike => {
            let (class_name, _) = record
                .entry_point
                .split_once('.')
                .unwrap_or(("", record.entry_point.as_str()));
            json!({
                "task_id": record.record_id,
                "class_name": class_name,
                "import_statement": record.context.clone().unwrap_or_default(),
                "skeleton": record.source_code,
                "solution_code": record.canonical_solution,
                "entry_point": record.entry_point,
                "test_cases": [{
                    "name": "suite",
                    "assertions": record.assertions.iter().map(|a| a.text.clone()).collect::<Vec<_>>(),
                }],
            })
        }
    };
    value.to_string()
}

/// Writes the normalized snapshot (one serialized [`BenchmarkRecord`] per line).
pub fn write_normalized(path: &Path, records: &[BenchmarkRecord]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::File::create(&tmp)?.write_all(&buf)?;
    fs::rename(tmp, path)
}

/// Invariant violations of a record; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

/// Checks every record invariant, including that the program parses in the
/// subject language (which needs the sandboxed runtime).
pub fn validate_record(record: &BenchmarkRecord) -> ValidationReport {
    let mut violations = Vec::new();
    if record.record_id.trim().is_empty() {
        violations.push("record_id empty".to_string());
    }
    if record.entry_point.trim().is_empty() {
        violations.push("entry_point empty".to_string());
    }
    if record.assertions.is_empty() {
        violations.push("assertions empty".to_string());
    }
    for (i, a) in record.assertions.iter().enumerate() {
        if pysrc::assertion_body(&a.text).is_none() {
            violations.push(format!("assertion {i} does not start with `assert`"));
        }
    }
    let callable = record.entry_callable();
    for input in &record.test_inputs {
        if pysrc::find_call(&input.invocation_text, callable).is_none()
            && !input.invocation_text.contains(&format!(".{callable}("))
        {
            violations.push(format!("input {} does not call {}", input.input_id, record.entry_point));
        }
    }
    if let Err(msg) = check_parses(&record.program_text()) {
        violations.push(format!("parse failure: {msg}"));
    }
    ValidationReport { violations }
}

fn check_parses(program: &str) -> Result<(), String> {
    let request = json!({"mode": "parse", "program": program});
    let out = sandbox::run_helper(&request, ResourceLimits::default().wall()).map_err(|e| e.to_string())?;
    let rec = out.record("parse").ok_or_else(|| "no parse result".to_string())?;
    if rec.get("ok").and_then(Value::as_bool) == Some(true) {
        Ok(())
    } else {
        Err(rec
            .get("error")
            .and_then(Value::as_str)
            .unwrap_or("unknown")
            .to_string())
    }
}

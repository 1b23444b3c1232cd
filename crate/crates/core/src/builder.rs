//! Problem construction: the four aligned task sets with ground truth taken
//! from traces and static analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::analyzer::{self, BlockGraph, PspTarget, StatementTable};
use crate::corpus::{BenchmarkRecord, InputCase};
use crate::literal::LiteralValue;
use crate::pysrc;
use crate::tracer::{StepEvent, Trace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("skipped: {0}")]
    BuildSkip(String),
    #[error("statement {0} never executed")]
    NotExecuted(usize),
    #[error("variable {variable} absent after statement {stmt_index}")]
    VariableAbsent { stmt_index: usize, variable: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "CCP")]
    Ccp,
    #[serde(rename = "PSP")]
    Psp,
    #[serde(rename = "EPP")]
    Epp,
    #[serde(rename = "OP")]
    Op,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Ccp, Task::Psp, Task::Epp, Task::Op];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ccp => "CCP",
            Task::Psp => "PSP",
            Task::Epp => "EPP",
            Task::Op => "OP",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

/// Identifies a question. CCP and EPP leave `variable` empty; OP leaves both
/// `stmt_index` and `variable` empty since it is asked once per input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProblemKey {
    pub record_id: String,
    pub input_id: String,
    pub stmt_index: Option<usize>,
    pub variable: Option<String>,
}

impl fmt::Display for ProblemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stmt = self.stmt_index.map_or_else(|| "-".to_string(), |i| i.to_string());
        write!(
            f,
            "{}|{}|{}|{}",
            self.record_id,
            self.input_id,
            stmt,
            self.variable.as_deref().unwrap_or("-")
        )
    }
}

/// A successor in the execution path: a program line or leaving the function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NextStep {
    Line(u32),
    Exit,
}

pub const EXIT_TOKEN: &str = "EXIT";

impl fmt::Display for NextStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NextStep::Line(n) => write!(f, "line {n}"),
            NextStep::Exit => f.write_str(EXIT_TOKEN),
        }
    }
}

impl Serialize for NextStep {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NextStep::Line(n) => s.serialize_u32(*n),
            NextStep::Exit => s.serialize_str(EXIT_TOKEN),
        }
    }
}

impl<'de> Deserialize<'de> for NextStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Line(u32),
            Token(String),
        }
        match Wire::deserialize(d)? {
            Wire::Line(n) => Ok(NextStep::Line(n)),
            Wire::Token(t) if t == EXIT_TOKEN => Ok(NextStep::Exit),
            Wire::Token(t) => Err(serde::de::Error::custom(format!("bad successor {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Coverage {
        executed: bool,
    },
    ValueType {
        value_repr: String,
        type_name: String,
        occurrence: u32,
    },
    NextLines {
        next_lines: BTreeSet<NextStep>,
        occurrence: u32,
    },
    Output {
        expected_literal: LiteralValue,
        assertion: String,
    },
}

/// Task-specific question fields; unused ones are omitted on the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPayload {
    pub invocation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_assertion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub key: ProblemKey,
    pub task: Task,
    pub rendered_program: String,
    pub question_payload: QuestionPayload,
    pub ground_truth: GroundTruth,
}

impl ProblemInstance {
    /// Line number of the questioned statement (CCP, PSP, EPP).
    pub fn line(&self) -> Option<u32> {
        self.question_payload.line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub site_budget: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { site_budget: 3 }
    }
}

pub const MASK: &str = "??";

/// Program text with a 1-based line number prefixed to every line.
pub fn render_program(program: &str) -> String {
    let lines: Vec<&str> = program.lines().collect();
    let width = lines.len().to_string().len();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        out.push_str(&format!("{:>width$}  {}\n", i + 1, line));
    }
    out
}

/// Masks the right operand of every assertion whose operand is a literal.
pub fn mask_assertions(record: &BenchmarkRecord) -> Vec<(String, LiteralValue)> {
    let mut out = Vec::new();
    for a in &record.assertions {
        let (Some(eq), Some(lit)) = (pysrc::split_equality(&a.text), a.rhs_literal.as_ref()) else {
            log::info!(
                "{}: assertion without literal operand skipped: {}",
                record.record_id,
                a.text
            );
            continue;
        };
        let (s, e) = eq.rhs_span;
        out.push((format!("{}{MASK}{}", &a.text[..s], &a.text[e..]), lit.clone()));
    }
    out
}

fn line_of(table: &StatementTable, stmt_index: usize) -> Result<u32, BuildError> {
    table
        .get(stmt_index)
        .map(|e| e.line_no)
        .ok_or(BuildError::NotExecuted(stmt_index))
}

/// Observed successors of statement `stmt_index` over all of its executions;
/// leaving the function is reported as [`NextStep::Exit`].
pub fn next_statements(
    trace: &Trace,
    table: &StatementTable,
    stmt_index: usize,
) -> Result<BTreeSet<NextStep>, BuildError> {
    let line = line_of(table, stmt_index)?;
    let positions = trace.stmt_positions(line);
    if positions.is_empty() {
        return Err(BuildError::NotExecuted(stmt_index));
    }
    let acts = trace.activations();
    Ok(positions
        .into_iter()
        .map(|p| match trace.next_in_frame(p, &acts).map(|j| &trace.steps[j]) {
            Some(step) if step.event == StepEvent::Stmt => NextStep::Line(step.line_no),
            _ => NextStep::Exit,
        })
        .collect())
}

/// Value and type of `variable` right after the `occurrence`-th (1-based)
/// execution of statement `stmt_index`.
pub fn state_after(
    trace: &Trace,
    table: &StatementTable,
    stmt_index: usize,
    variable: &str,
    occurrence: usize,
) -> Result<(String, String), BuildError> {
    let line = line_of(table, stmt_index)?;
    let positions = trace.stmt_positions(line);
    let pos = occurrence
        .checked_sub(1)
        .and_then(|i| positions.get(i))
        .ok_or(BuildError::NotExecuted(stmt_index))?;
    trace.steps[*pos]
        .state_after
        .get(variable)
        .filter(|s| s.representable)
        .map(|s| (s.value_repr.clone(), s.type_name.clone()))
        .ok_or_else(|| BuildError::VariableAbsent {
            stmt_index,
            variable: variable.to_string(),
        })
}

fn input_of<'a>(record: &'a BenchmarkRecord, trace: &Trace) -> Result<&'a InputCase, BuildError> {
    record
        .test_inputs
        .iter()
        .find(|i| i.input_id == trace.input_id)
        .ok_or_else(|| BuildError::BuildSkip(format!("unknown input {}", trace.input_id)))
}

/// Builds every problem for one (record, input) trace: CCP, PSP and EPP at
/// each selected executed site, CCP alone at unexecuted block terminals, and
/// one OP problem for the input.
pub fn build_problems(
    record: &BenchmarkRecord,
    trace: &Trace,
    table: &StatementTable,
    graph: &BlockGraph,
    config: &BuildConfig,
) -> Result<Vec<ProblemInstance>, BuildError> {
    if !trace.is_ok() {
        return Err(BuildError::BuildSkip(format!(
            "trace terminated {:?}",
            trace.terminated
        )));
    }
    let input = input_of(record, trace)?;
    let program = record.program_text();

    let assertion = record
        .assertions_for(input)
        .into_iter()
        .find_map(|a| {
            let eq = pysrc::split_equality(&a.text)?;
            let lit = a.rhs_literal.clone()?;
            let (s, e) = eq.rhs_span;
            Some((a.text.clone(), format!("{}{MASK}{}", &a.text[..s], &a.text[e..]), lit))
        })
        .ok_or_else(|| BuildError::BuildSkip(format!("no literal assertion for {}", input.input_id)))?;

    let targets: BTreeMap<usize, PspTarget> = analyzer::select_psp_targets(table, trace)
        .into_iter()
        .map(|t| (t.stmt_index, t))
        .collect();
    let ranking = analyzer::select_sites(table, graph, trace, usize::MAX);
    let executed = |i: usize| table.get(i).is_some_and(|e| trace.executed_lines.contains(&e.line_no));
    let ic_sites: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|&i| executed(i) && targets.contains_key(&i))
        .take(config.site_budget)
        .collect();
    if ic_sites.is_empty() {
        return Err(BuildError::BuildSkip(format!(
            "no admissible sites for {}",
            input.input_id
        )));
    }
    let ccp_only: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|&i| !executed(i))
        .take(config.site_budget)
        .collect();

    let rendered = render_program(&program);
    let key = |stmt: Option<usize>, variable: Option<String>| ProblemKey {
        record_id: record.record_id.clone(),
        input_id: input.input_id.clone(),
        stmt_index: stmt,
        variable,
    };
    let site_payload = |stmt: usize| {
        let entry = table.get(stmt).expect("sites come from the table");
        QuestionPayload {
            invocation: input.invocation_text.clone(),
            line: Some(entry.line_no),
            statement: Some(entry.text.clone()),
            ..QuestionPayload::default()
        }
    };
    let instance = |key: ProblemKey, task: Task, payload: QuestionPayload, truth: GroundTruth| ProblemInstance {
        key,
        task,
        rendered_program: rendered.clone(),
        question_payload: payload,
        ground_truth: truth,
    };

    let mut out = Vec::new();
    for &stmt in &ic_sites {
        let target = &targets[&stmt];
        out.push(instance(
            key(Some(stmt), None),
            Task::Ccp,
            site_payload(stmt),
            GroundTruth::Coverage { executed: true },
        ));
        let (value_repr, type_name) = state_after(trace, table, stmt, &target.variable, 1)?;
        out.push(instance(
            key(Some(stmt), Some(target.variable.clone())),
            Task::Psp,
            QuestionPayload {
                variable: Some(target.variable.clone()),
                ..site_payload(stmt)
            },
            GroundTruth::ValueType {
                value_repr,
                type_name,
                occurrence: 1,
            },
        ));
        out.push(instance(
            key(Some(stmt), None),
            Task::Epp,
            site_payload(stmt),
            GroundTruth::NextLines {
                next_lines: next_statements(trace, table, stmt)?,
                occurrence: 1,
            },
        ));
    }
    for &stmt in &ccp_only {
        out.push(instance(
            key(Some(stmt), None),
            Task::Ccp,
            site_payload(stmt),
            GroundTruth::Coverage { executed: false },
        ));
    }
    let (assertion_text, masked, literal) = assertion;
    out.push(instance(
        key(None, None),
        Task::Op,
        QuestionPayload {
            invocation: input.invocation_text.clone(),
            masked_assertion: Some(masked),
            ..QuestionPayload::default()
        },
        GroundTruth::Output {
            expected_literal: literal,
            assertion: assertion_text,
        },
    ));
    Ok(out)
}

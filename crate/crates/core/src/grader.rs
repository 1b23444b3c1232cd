//! Answer parsing and per-task correctness decisions.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{GroundTruth, NextStep, ProblemInstance, ProblemKey, Task, MASK};
use crate::corpus::BenchmarkRecord;
use crate::literal::LiteralValue;
use crate::pysrc;
use crate::sandbox::{grade_in_sandbox, GradeOutcome, ResourceLimits};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GradeError {
    #[error("answer for {found} graded against a {expected} problem")]
    TaskMismatch { expected: Task, found: Task },
    #[error("no program known for record {0}")]
    UnknownRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerPayload {
    Coverage { executed: bool },
    ValueType { value_repr: String, type_name: String },
    Next { next: NextStep },
    Literal { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub task: Task,
    pub payload: Option<AnswerPayload>,
    pub parse_ok: bool,
    pub raw_excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Match,
    Mismatch,
    ParseFail,
    SandboxError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub key: ProblemKey,
    pub task: Task,
    pub correct: bool,
    pub reason: Reason,
}

struct Grammar {
    answer: Regex,
    ccp: Regex,
    psp: Regex,
    epp_line: Regex,
    epp_exit: Regex,
    bare_line: Regex,
}

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar {
        answer: Regex::new(r"(?i)^answer\s*:\s*(.*?)\s*$").unwrap(),
        ccp: Regex::new(r"(?i)^(yes|no)\b\W*$").unwrap(),
        psp: Regex::new(r"(?i)^value\s*=\s*(.*)\s+type\s*=\s*([A-Za-z_][\w.]*)\W*$").unwrap(),
        epp_line: Regex::new(r"(?i)^(?:line\s*)?(\d+)\W*$").unwrap(),
        epp_exit: Regex::new(r"(?i)^exit\b\W*$").unwrap(),
        bare_line: Regex::new(r"(?i)^line\s+(\d+)\W*$|^(\d+)$").unwrap(),
    })
}

/// Strips markdown emphasis and code ticks around a line or value.
fn unwrap_markup(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '*' || c == '`' || c == '_').trim()
}

fn excerpt(line: &str) -> String {
    line.chars().take(200).collect()
}

fn parse_body(task: Task, body: &str) -> Option<AnswerPayload> {
    let g = grammar();
    let body = unwrap_markup(body);
    match task {
        Task::Ccp => g.ccp.captures(body).map(|c| AnswerPayload::Coverage {
            executed: c[1].eq_ignore_ascii_case("yes"),
        }),
        Task::Psp => g.psp.captures(body).map(|c| AnswerPayload::ValueType {
            value_repr: unwrap_markup(&c[1]).to_string(),
            type_name: c[2].to_string(),
        }),
        Task::Epp => {
            if g.epp_exit.is_match(body) {
                Some(AnswerPayload::Next { next: NextStep::Exit })
            } else {
                let n = g.epp_line.captures(body)?[1].parse().ok()?;
                Some(AnswerPayload::Next {
                    next: NextStep::Line(n),
                })
            }
        }
        Task::Op => {
            let lit = LiteralValue::parse(body).ok().filter(LiteralValue::is_constant)?;
            Some(AnswerPayload::Literal { text: lit.to_string() })
        }
    }
}

fn fallback(task: Task, line: &str) -> Option<AnswerPayload> {
    let g = grammar();
    match task {
        Task::Ccp => parse_body(task, line),
        Task::Epp => {
            let c = g.bare_line.captures(line)?;
            let n = c.get(1).or_else(|| c.get(2))?.as_str().parse().ok()?;
            Some(AnswerPayload::Next {
                next: NextStep::Line(n),
            })
        }
        _ => None,
    }
}

/// Reads the last answer line matching the task grammar; bare yes/no (CCP)
/// and `line N` or a bare integer (EPP) are accepted when no answer line
/// matches.
pub fn parse_answer(task: Task, raw: &str) -> ParsedAnswer {
    let lines: Vec<&str> = raw.lines().map(unwrap_markup).filter(|l| !l.is_empty()).collect();
    let g = grammar();
    let hit = lines.iter().rev().find_map(|line| {
        let body = g.answer.captures(line)?.get(1)?.as_str();
        parse_body(task, body).map(|p| (p, *line))
    });
    let hit = hit.or_else(|| {
        lines
            .iter()
            .rev()
            .find_map(|line| fallback(task, line).map(|p| (p, *line)))
    });
    match hit {
        Some((payload, line)) => ParsedAnswer {
            task,
            payload: Some(payload),
            parse_ok: true,
            raw_excerpt: excerpt(line),
        },
        None => ParsedAnswer {
            task,
            payload: None,
            parse_ok: false,
            raw_excerpt: excerpt(lines.last().copied().unwrap_or("")),
        },
    }
}

/// Like [`parse_answer`], additionally accepting an EPP answer that quotes a
/// statement's text when exactly one program line carries that text.
pub fn parse_answer_for(problem: &ProblemInstance, raw: &str) -> ParsedAnswer {
    let parsed = parse_answer(problem.task, raw);
    if parsed.parse_ok || problem.task != Task::Epp {
        return parsed;
    }
    let g = grammar();
    let quoted = raw.lines().rev().find_map(|l| {
        g.answer
            .captures(unwrap_markup(l))
            .map(|c| unwrap_markup(&c[1]).to_string())
    });
    let Some(quoted) = quoted.filter(|q| !q.is_empty()) else {
        return parsed;
    };
    let matches: Vec<u32> = problem
        .rendered_program
        .lines()
        .filter_map(|l| {
            let (num, text) = l.trim_start().split_once("  ")?;
            (text.trim() == quoted).then(|| num.parse().ok()).flatten()
        })
        .collect();
    if let [n] = matches[..] {
        log::info!("{}: EPP answer matched by statement text on line {n}", problem.key);
        return ParsedAnswer {
            task: Task::Epp,
            payload: Some(AnswerPayload::Next {
                next: NextStep::Line(n),
            }),
            parse_ok: true,
            raw_excerpt: excerpt(&quoted),
        };
    }
    parsed
}

fn normalize_text(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| if c == '"' { '\'' } else { c })
        .collect()
}

/// Value equality under the subject language's `==`, falling back to a
/// whitespace- and quote-normalized text comparison when either side is not
/// a literal.
pub fn values_equal(predicted: &str, truth: &str) -> bool {
    match (LiteralValue::parse(predicted), LiteralValue::parse(truth)) {
        (Ok(a), Ok(b)) => a.py_eq(&b),
        _ => normalize_text(predicted) == normalize_text(truth),
    }
}

/// Places `literal` where the mask stands in a masked assertion.
pub fn substitute_mask(masked: &str, literal: &str) -> String {
    if let Some(eq) = pysrc::split_equality(masked) {
        let (s, e) = eq.rhs_span;
        if &masked[s..e] == MASK {
            return format!("{}{literal}{}", &masked[..s], &masked[e..]);
        }
    }
    masked.replacen(MASK, literal, 1)
}

/// What OP grading needs beyond the problem itself: each record's program
/// and grading prelude, plus sandbox limits. Sandbox outcomes are memoized.
pub struct GradeEnv {
    programs: HashMap<String, (String, Option<String>)>,
    limits: ResourceLimits,
    cache: Mutex<HashMap<(String, String), GradeOutcome>>,
}

impl GradeEnv {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a BenchmarkRecord>, limits: ResourceLimits) -> Self {
        let programs = records
            .into_iter()
            .map(|r| (r.record_id.clone(), (r.program_text(), r.grading_prelude())))
            .collect();
        Self {
            programs,
            limits,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Runs `assertion` against the record's program in the sandbox.
    pub fn run_assertion(&self, record_id: &str, assertion: &str) -> Result<GradeOutcome, GradeError> {
        let (program, prelude) = self
            .programs
            .get(record_id)
            .ok_or_else(|| GradeError::UnknownRecord(record_id.to_string()))?;
        let key = (record_id.to_string(), assertion.to_string());
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(*hit);
        }
        let outcome = grade_in_sandbox(program, prelude.as_deref(), assertion, &self.limits);
        self.cache.lock().expect("cache poisoned").insert(key, outcome);
        Ok(outcome)
    }
}

pub fn grade(problem: &ProblemInstance, parsed: &ParsedAnswer, env: &GradeEnv) -> Result<Judgment, GradeError> {
    if parsed.task != problem.task {
        return Err(GradeError::TaskMismatch {
            expected: problem.task,
            found: parsed.task,
        });
    }
    let judgment = |correct: bool, reason: Reason| Judgment {
        key: problem.key.clone(),
        task: problem.task,
        correct,
        reason,
    };
    let verdict = |ok: bool| judgment(ok, if ok { Reason::Match } else { Reason::Mismatch });
    let Some(payload) = parsed.payload.as_ref().filter(|_| parsed.parse_ok) else {
        return Ok(judgment(false, Reason::ParseFail));
    };
    Ok(match (&problem.ground_truth, payload) {
        (GroundTruth::Coverage { executed }, AnswerPayload::Coverage { executed: p }) => verdict(executed == p),
        (
            GroundTruth::ValueType {
                value_repr, type_name, ..
            },
            AnswerPayload::ValueType {
                value_repr: pv,
                type_name: pt,
            },
        ) => verdict(values_equal(pv, value_repr) && pt.trim() == type_name),
        (GroundTruth::NextLines { next_lines, .. }, AnswerPayload::Next { next }) => verdict(next_lines.contains(next)),
        (GroundTruth::Output { .. }, AnswerPayload::Literal { text }) => {
            let masked = problem.question_payload.masked_assertion.as_deref().unwrap_or(MASK);
            let assertion = substitute_mask(masked, text);
            match env.run_assertion(&problem.key.record_id, &assertion)? {
                GradeOutcome::Pass => verdict(true),
                GradeOutcome::Fail => verdict(false),
                GradeOutcome::Error => judgment(false, Reason::SandboxError),
            }
        }
        _ => judgment(false, Reason::ParseFail),
    })
}

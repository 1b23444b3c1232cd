//! Prompt rendering: task questions over a numbered program, with few-shot
//! exemplars or chain-of-thought scaffolding.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer;
use crate::builder::{self, BuildConfig, GroundTruth, NextStep, ProblemInstance, Task};
use crate::corpus::{self, CorpusFormat};
use crate::sandbox::ResourceLimits;
use crate::tracer::{self, StepEvent, Trace};

pub const TEMPLATE_VERSION: &str = "v1";

mod templates {
    pub const SYSTEM: &str = include_str!("../templates/v1/system.txt");
    pub const PROBLEM: &str = include_str!("../templates/v1/problem.txt");
    pub const CCP: &str = include_str!("../templates/v1/ccp.txt");
    pub const PSP: &str = include_str!("../templates/v1/psp.txt");
    pub const EPP: &str = include_str!("../templates/v1/epp.txt");
    pub const OP: &str = include_str!("../templates/v1/op.txt");
    pub const FEWSHOT: &str = include_str!("../templates/v1/fewshot.txt");
    pub const COT: &str = include_str!("../templates/v1/cot.txt");
}

const EXEMPLAR_CORPUS: &str = include_str!("../exemplars/humaneval_like.jsonl");

pub const DEFAULT_SHOTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Fewshot,
    Cot,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fewshot" | "few-shot" | "few_shot" => Ok(Strategy::Fewshot),
            "cot" => Ok(Strategy::Cot),
            _ => Err(format!("unknown strategy {s:?} (expected fewshot or cot)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Fewshot => "fewshot",
            Strategy::Cot => "cot",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("exemplar for {found} supplied to a {expected} problem")]
    ExemplarTaskMismatch { expected: Task, found: Task },
    #[error("exemplar {0} is the evaluated problem")]
    ExemplarOverlap(String),
    #[error("exemplar pool unavailable: {0}")]
    Pool(String),
}

/// A solved problem with worked reasoning, shown ahead of the real question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub problem: ProblemInstance,
    pub reasoning: String,
}

impl Exemplar {
    pub fn id(&self) -> String {
        format!("{}|{}", self.problem.task, self.problem.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub strategy: Strategy,
    pub shot_keys: Vec<String>,
    pub answer_format_spec: String,
    pub template_version: String,
}

/// The exact answer-line grammar requested for `task`.
pub fn answer_format_spec(task: Task) -> &'static str {
    match task {
        Task::Ccp => "ANSWER: YES or ANSWER: NO",
        Task::Psp => "ANSWER: value=<literal> type=<type_name>",
        Task::Epp => "ANSWER: line <int> or ANSWER: EXIT",
        Task::Op => "ANSWER: <literal>",
    }
}

/// The answer line that is correct for a ground truth. For several valid
/// successors the lowest line is chosen.
pub fn truth_answer_line(truth: &GroundTruth) -> String {
    match truth {
        GroundTruth::Coverage { executed } => format!("ANSWER: {}", if *executed { "YES" } else { "NO" }),
        GroundTruth::ValueType {
            value_repr, type_name, ..
        } => format!("ANSWER: value={value_repr} type={type_name}"),
        GroundTruth::NextLines { next_lines, .. } => match next_lines.iter().next() {
            Some(NextStep::Line(n)) => format!("ANSWER: line {n}"),
            _ => "ANSWER: EXIT".to_string(),
        },
        GroundTruth::Output { expected_literal, .. } => format!("ANSWER: {expected_literal}"),
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    out
}

/// The problem's own section of the prompt: program, call and question.
pub fn problem_section(problem: &ProblemInstance) -> String {
    let q = &problem.question_payload;
    let line = q.line.map(|l| l.to_string()).unwrap_or_default();
    let vars = [
        ("line", line.as_str()),
        ("statement", q.statement.as_deref().unwrap_or("")),
        ("variable", q.variable.as_deref().unwrap_or("")),
        ("masked_assertion", q.masked_assertion.as_deref().unwrap_or("")),
        ("invocation", q.invocation.as_str()),
    ];
    let question = fill(
        match problem.task {
            Task::Ccp => templates::CCP,
            Task::Psp => templates::PSP,
            Task::Epp => templates::EPP,
            Task::Op => templates::OP,
        },
        &vars,
    );
    fill(
        templates::PROBLEM,
        &[
            ("program", problem.rendered_program.trim_end()),
            ("invocation", q.invocation.as_str()),
            ("question", &question),
        ],
    )
}

pub fn render_prompt(
    problem: &ProblemInstance,
    strategy: Strategy,
    shots: &[Exemplar],
) -> Result<PromptBundle, PromptError> {
    for shot in shots {
        if shot.problem.task != problem.task {
            return Err(PromptError::ExemplarTaskMismatch {
                expected: problem.task,
                found: shot.problem.task,
            });
        }
        if shot.problem.key == problem.key {
            return Err(PromptError::ExemplarOverlap(shot.problem.key.to_string()));
        }
    }
    let spec = answer_format_spec(problem.task);
    let mut parts = Vec::new();
    for (n, shot) in shots.iter().enumerate() {
        let mut block = format!("### Example {}\n{}\n", n + 1, problem_section(&shot.problem));
        if strategy == Strategy::Cot {
            block.push_str(&format!("Reasoning: {}\n", shot.reasoning));
        }
        block.push_str(&truth_answer_line(&shot.problem.ground_truth));
        parts.push(block);
    }
    let instruction = fill(
        match strategy {
            Strategy::Fewshot => templates::FEWSHOT,
            Strategy::Cot => templates::COT,
        },
        &[("spec", spec)],
    );
    parts.push(format!("### Task\n{}\n{}", problem_section(problem), instruction));
    Ok(PromptBundle {
        system_text: templates::SYSTEM.trim_end().to_string(),
        user_text: parts.join("\n\n"),
        strategy,
        shot_keys: shots.iter().map(Exemplar::id).collect(),
        answer_format_spec: spec.to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
    })
}

// ------------------------------------------------------------ exemplar pool

const PATH_LIMIT: usize = 14;

fn path_text(lines: &[u32]) -> String {
    let mut parts: Vec<String> = lines.iter().take(PATH_LIMIT).map(u32::to_string).collect();
    if lines.len() > PATH_LIMIT {
        parts.push("…".into());
    }
    parts.join(" → ")
}

/// Worked reasoning for a solved problem, narrated from its trace.
fn reasoning_for(problem: &ProblemInstance, trace: &Trace) -> String {
    let stmt_lines: Vec<u32> = trace
        .steps
        .iter()
        .filter(|s| s.event == StepEvent::Stmt)
        .map(|s| s.line_no)
        .collect();
    let q = &problem.question_payload;
    let call = &q.invocation;
    let upto = |line: u32| -> Vec<u32> {
        match stmt_lines.iter().position(|&l| l == line) {
            Some(p) => stmt_lines[..=p].to_vec(),
            None => stmt_lines.clone(),
        }
    };
    match &problem.ground_truth {
        GroundTruth::Coverage { executed } => {
            let line = q.line.unwrap_or_default();
            if *executed {
                format!(
                    "Running {call}, execution visits lines {}, so line {line} is executed.",
                    path_text(&upto(line))
                )
            } else {
                format!(
                    "Running {call}, execution visits lines {} and never reaches line {line}.",
                    path_text(&stmt_lines)
                )
            }
        }
        GroundTruth::ValueType {
            value_repr, type_name, ..
        } => {
            let line = q.line.unwrap_or_default();
            format!(
                "Running {call}, execution visits lines {}. Right after the first execution of line {line}, `{}` holds {value_repr}, which is a {type_name}.",
                path_text(&upto(line)),
                q.variable.as_deref().unwrap_or("?")
            )
        }
        GroundTruth::NextLines { next_lines, .. } => {
            let line = q.line.unwrap_or_default();
            let next: Vec<String> = next_lines
                .iter()
                .map(|n| match n {
                    NextStep::Line(l) => format!("line {l}"),
                    NextStep::Exit => "the function exit".to_string(),
                })
                .collect();
            format!(
                "Running {call}, execution visits lines {}. After line {line}, control moves to {}.",
                path_text(&upto(line)),
                next.join(" or ")
            )
        }
        GroundTruth::Output { expected_literal, .. } => {
            let output = trace
                .output_value
                .as_ref()
                .map_or_else(|| expected_literal.to_string(), |o| o.value_repr.clone());
            format!(
                "Running {call}, execution visits lines {} and the call returns {output}, so ?? must be {expected_literal}.",
                path_text(&stmt_lines)
            )
        }
    }
}

fn build_pool() -> Result<Vec<Exemplar>, String> {
    let limits = ResourceLimits::default();
    let mut per_record = Vec::new();
    for (n, line) in EXEMPLAR_CORPUS.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let record = corpus::parse_record(line, CorpusFormat::HumanevalLike, n + 1).map_err(|e| e.to_string())?;
        let parsed = analyzer::parse_program(&record.program_text()).map_err(|e| e.to_string())?;
        let table = parsed.table();
        let graph = parsed.blocks(&table);
        let mut solved = Vec::new();
        for input in &record.test_inputs {
            let trace = tracer::trace_input(&record, input, &limits).map_err(|e| e.to_string())?;
            let Ok(problems) = builder::build_problems(&record, &trace, &table, &graph, &BuildConfig::default()) else {
                continue;
            };
            for p in problems {
                let reasoning = reasoning_for(&p, &trace);
                solved.push(Exemplar { problem: p, reasoning });
            }
        }
        per_record.push(solved);
    }
    // interleave records so consecutive shots come from different programs
    let mut pool = Vec::new();
    let longest = per_record.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for solved in &per_record {
            if let Some(e) = solved.get(i) {
                pool.push(e.clone());
            }
        }
    }
    Ok(pool)
}

/// Solved problems built from a small held-out program set bundled with the
/// tool; built once per process.
pub fn exemplar_pool() -> Result<&'static [Exemplar], PromptError> {
    static POOL: OnceLock<Result<Vec<Exemplar>, String>> = OnceLock::new();
    POOL.get_or_init(build_pool)
        .as_deref()
        .map_err(|e| PromptError::Pool(e.clone()))
}

/// The first `n` exemplars of `task`'s pool, none sharing the problem's key.
pub fn select_shots(problem: &ProblemInstance, n: usize) -> Result<Vec<Exemplar>, PromptError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(exemplar_pool()?
        .iter()
        .filter(|e| e.problem.task == problem.task && e.problem.key != problem.key)
        .take(n)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{ProblemKey, QuestionPayload};

    fn ccp_problem(executed: bool) -> ProblemInstance {
        ProblemInstance {
            key: ProblemKey {
                record_id: "R".into(),
                input_id: "in0".into(),
                stmt_index: Some(1),
                variable: None,
            },
            task: Task::Ccp,
            rendered_program: builder::render_program("def f(x):\n    y = x + 1\n    return y\n"),
            question_payload: QuestionPayload {
                invocation: "f(1)".into(),
                line: Some(2),
                statement: Some("y = x + 1".into()),
                ..QuestionPayload::default()
            },
            ground_truth: GroundTruth::Coverage { executed },
        }
    }

    #[test]
    fn pool_covers_every_task() {
        let pool = exemplar_pool().unwrap();
        for task in Task::ALL {
            assert!(
                pool.iter().filter(|e| e.problem.task == task).count() >= DEFAULT_SHOTS,
                "{task}"
            );
        }
        assert!(pool.iter().all(|e| e.problem.key.record_id.starts_with("exemplar/")));
    }

    #[test]
    fn fewshot_ccp_prompt() {
        let p = ccp_problem(true);
        let shots = select_shots(&p, 2).unwrap();
        assert_eq!(shots.len(), 2);
        assert_ne!(shots[0].problem.key.record_id, shots[1].problem.key.record_id);
        let b = render_prompt(&p, Strategy::Fewshot, &shots).unwrap();
        assert!(b
            .user_text
            .lines()
            .last()
            .unwrap()
            .ends_with("ANSWER: YES or ANSWER: NO"));
        assert!(b.user_text.contains(" 2      y = x + 1") || b.user_text.contains("2      y = x + 1"));
        assert!(b.user_text.contains("Call: f(1)"));
        assert_eq!(b.shot_keys.len(), 2);
        assert!(!b.user_text.contains("Reasoning:"));
    }

    #[test]
    fn cot_psp_exemplars_end_with_answer_lines() {
        let pool = exemplar_pool().unwrap();
        let psp = pool
            .iter()
            .find(|e| e.problem.task == Task::Psp)
            .unwrap()
            .problem
            .clone();
        let mut target = psp.clone();
        target.key.record_id = "other".into();
        let shots = select_shots(&target, 2).unwrap();
        let b = render_prompt(&target, Strategy::Cot, &shots).unwrap();
        for block in b.user_text.split("### Example").skip(1) {
            let block = block.split("### Task").next().unwrap().trim_end();
            let last = block.lines().last().unwrap();
            assert!(last.starts_with("ANSWER: value=") && last.contains(" type="), "{last}");
            assert!(block.contains("Reasoning: Running"));
        }
        assert!(b.user_text.lines().last().unwrap().starts_with("Reason step by step"));
    }

    #[test]
    fn mismatched_exemplar_is_rejected() {
        let pool = exemplar_pool().unwrap();
        let op = pool.iter().find(|e| e.problem.task == Task::Op).unwrap().clone();
        let mut epp = pool
            .iter()
            .find(|e| e.problem.task == Task::Epp)
            .unwrap()
            .problem
            .clone();
        epp.key.record_id = "x".into();
        assert_eq!(
            render_prompt(&epp, Strategy::Fewshot, &[op]),
            Err(PromptError::ExemplarTaskMismatch {
                expected: Task::Epp,
                found: Task::Op
            })
        );
        let same = pool.iter().find(|e| e.problem.task == Task::Epp).unwrap().clone();
        assert!(matches!(
            render_prompt(&same.problem, Strategy::Fewshot, std::slice::from_ref(&same)),
            Err(PromptError::ExemplarOverlap(_))
        ));
    }

    #[test]
    fn prompts_are_deterministic_and_do_not_leak() {
        for executed in [true, false] {
            let p = ccp_problem(executed);
            let shots = select_shots(&p, 2).unwrap();
            let a = render_prompt(&p, Strategy::Cot, &shots).unwrap();
            let b = render_prompt(&p, Strategy::Cot, &select_shots(&p, 2).unwrap()).unwrap();
            assert_eq!(a, b);
            let own = problem_section(&p);
            assert!(!own.contains(&truth_answer_line(&p.ground_truth)));
        }
        for e in exemplar_pool().unwrap() {
            let own = problem_section(&e.problem);
            assert!(!own.contains(&truth_answer_line(&e.problem.ground_truth)), "{}", e.id());
        }
    }
}

//! Statement-level dynamic tracing of subject programs.
//!
//! A trace records, for one `(program, invocation)` pair, every statement
//! executed in frames of functions defined by the program itself, in the order
//! the statements start, together with the canonicalized local state right
//! after each statement completes. Calls into and returns from those frames
//! are recorded as `call` / `return_event` steps so frame activations can be
//! reconstructed from the flat sequence.
//!
//! Wire format (one JSON object per line, field order fixed):
//!
//! ```text
//! {"record_id":"...","input_id":"..."}
//! {"step_index":0,"line_no":1,"event":"call","state_after":{...}}
//! ...
//! {"terminated":"ok","output_value":{"value_repr":"2","type_name":"int","representable":true}}
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{BenchmarkRecord, InputCase};
use crate::sandbox::{self, ResourceLimits, SandboxError};

#[derive(Debug, Error)]
pub enum TracerError {
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("program could not be loaded: {0}")]
    Setup(String),
    #[error("malformed trace: {0}")]
    Wire(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSnapshot {
    pub value_repr: String,
    pub type_name: String,
    pub representable: bool,
}

impl VariableSnapshot {
    pub fn new(value_repr: impl Into<String>, type_name: impl Into<String>) -> Self {
        Self {
            value_repr: value_repr.into(),
            type_name: type_name.into(),
            representable: true,
        }
    }
}

/// Local bindings of one frame, keyed by name (`self.attr` for attributes).
pub type ProgramState = BTreeMap<String, VariableSnapshot>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    Stmt,
    Call,
    ReturnEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionStep {
    pub step_index: u64,
    pub line_no: u32,
    pub event: StepEvent,
    pub state_after: ProgramState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Ok,
    Timeout,
    Exception,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub record_id: String,
    pub input_id: String,
    pub steps: Vec<ExecutionStep>,
    pub output_value: Option<VariableSnapshot>,
    pub terminated: Termination,
    pub executed_lines: BTreeSet<u32>,
}

#[derive(Serialize, Deserialize)]
struct WireHeader {
    record_id: String,
    input_id: String,
}

#[derive(Serialize, Deserialize)]
struct WireTrailer {
    terminated: Termination,
    output_value: Option<VariableSnapshot>,
}

impl Trace {
    pub fn new(
        record_id: impl Into<String>,
        input_id: impl Into<String>,
        steps: Vec<ExecutionStep>,
        terminated: Termination,
        output_value: Option<VariableSnapshot>,
    ) -> Self {
        let executed_lines = steps
            .iter()
            .filter(|s| s.event == StepEvent::Stmt)
            .map(|s| s.line_no)
            .collect();
        Self {
            record_id: record_id.into(),
            input_id: input_id.into(),
            steps,
            output_value,
            terminated,
            executed_lines,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.terminated == Termination::Ok
    }

    /// Serializes to the line-delimited wire format.
    pub fn to_wire(&self) -> String {
        let mut out = String::new();
        let header = WireHeader {
            record_id: self.record_id.clone(),
            input_id: self.input_id.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        let trailer = WireTrailer {
            terminated: self.terminated,
            output_value: self.output_value.clone(),
        };
        out.push_str(&serde_json::to_string(&trailer).expect("trailer serializes"));
        out.push('\n');
        out
    }

    pub fn from_wire(text: &str) -> Result<Self, TracerError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: WireHeader = lines
            .next()
            .ok_or_else(|| TracerError::Wire("empty trace".into()))
            .and_then(|l| serde_json::from_str(l).map_err(|e| TracerError::Wire(format!("header: {e}"))))?;
        let rest: Vec<&str> = lines.collect();
        let (last, body) = rest
            .split_last()
            .ok_or_else(|| TracerError::Wire("missing trailer".into()))?;
        let trailer: WireTrailer =
            serde_json::from_str(last).map_err(|e| TracerError::Wire(format!("trailer: {e}")))?;
        let steps = body
            .iter()
            .map(|l| serde_json::from_str(l).map_err(|e| TracerError::Wire(format!("step: {e}"))))
            .collect::<Result<Vec<ExecutionStep>, _>>()?;
        Ok(Trace::new(
            header.record_id,
            header.input_id,
            steps,
            trailer.terminated,
            trailer.output_value,
        ))
    }

    /// Frame activation ordinal of every step, reconstructed from the
    /// call/return events.
    pub fn activations(&self) -> Vec<usize> {
        let mut stack: Vec<usize> = Vec::new();
        let mut next = 0usize;
        self.steps
            .iter()
            .map(|s| match s.event {
                StepEvent::Call => {
                    stack.push(next);
                    next += 1;
                    next - 1
                }
                StepEvent::Stmt => stack.last().copied().unwrap_or(usize::MAX),
                StepEvent::ReturnEvent => stack.pop().unwrap_or(usize::MAX),
            })
            .collect()
    }

    /// Positions (into `steps`) of the stmt steps at `line_no`, in order.
    pub fn stmt_positions(&self, line_no: u32) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.event == StepEvent::Stmt && s.line_no == line_no)
            .map(|(i, _)| i)
            .collect()
    }

    /// For the step at `pos`, the next step of the same activation (a stmt
    /// or its return event).
    pub fn next_in_frame(&self, pos: usize, activations: &[usize]) -> Option<usize> {
        let frame = activations[pos];
        (pos + 1..self.steps.len()).find(|&j| {
            activations[j] == frame && matches!(self.steps[j].event, StepEvent::Stmt | StepEvent::ReturnEvent)
        })
    }

    /// State of the same activation just before the step at `pos` executed.
    pub fn state_before(&self, pos: usize, activations: &[usize]) -> Option<&ProgramState> {
        let frame = activations[pos];
        (0..pos)
            .rev()
            .find(|&j| activations[j] == frame)
            .map(|j| &self.steps[j].state_after)
    }
}

fn snapshot_from(value: &Value) -> Option<VariableSnapshot> {
    serde_json::from_value(value.clone()).ok()
}

/// Runs `invocation` against `program` in the sandbox and records the trace.
///
/// Timeouts, step-cap overflow and uncaught subject exceptions are reported
/// through [`Trace::terminated`] with the steps recorded so far.
pub fn trace_execution(program: &str, invocation: &str, limits: &ResourceLimits) -> Result<Trace, TracerError> {
    let request = json!({
        "mode": "trace",
        "program": program,
        "invocation": invocation,
        "max_steps": limits.max_steps,
    });
    let out = sandbox::run_helper(&request, limits.wall())?;
    if let Some(err) = out.record("setup_error") {
        let detail = err.get("detail").and_then(Value::as_str).unwrap_or("unknown");
        return Err(TracerError::Setup(detail.to_string()));
    }
    let mut steps = Vec::new();
    for rec in out
        .records
        .iter()
        .filter(|r| r.get("rec").and_then(Value::as_str) == Some("step"))
    {
        let mut rec = rec.clone();
        if let Some(obj) = rec.as_object_mut() {
            obj.remove("rec");
        }
        let step: ExecutionStep =
            serde_json::from_value(rec).map_err(|e| TracerError::Wire(format!("helper step: {e}")))?;
        steps.push(step);
    }
    steps.sort_by_key(|s| s.step_index);
    // Steps still pending at a kill never report; renumber densely so the
    // indices stay a gapless ordinal.
    for (i, s) in steps.iter_mut().enumerate() {
        s.step_index = i as u64;
    }
    let (terminated, output_value) = match out.record("end") {
        Some(end) => {
            let terminated = match end.get("terminated").and_then(Value::as_str) {
                Some("ok") => Termination::Ok,
                Some("timeout") => Termination::Timeout,
                _ => Termination::Exception,
            };
            let output = end.get("output_value").and_then(snapshot_from);
            (terminated, output)
        }
        None if out.timed_out => (Termination::Timeout, None),
        None => {
            return Err(TracerError::Setup(format!(
                "subject runtime exited without a result: {}",
                out.stderr.lines().last().unwrap_or("")
            )))
        }
    };
    Ok(Trace::new("", "", steps, terminated, output_value))
}

/// Traces one input of a record.
pub fn trace_input(record: &BenchmarkRecord, input: &InputCase, limits: &ResourceLimits) -> Result<Trace, TracerError> {
    let mut trace = trace_execution(&record.program_text(), &input.invocation_text, limits)?;
    trace.record_id = record.record_id.clone();
    trace.input_id = input.input_id.clone();
    Ok(trace)
}

/// Canonicalizes the bindings a code fragment leaves in its namespace, using
/// the same rules the trace hook applies to frame locals.
pub fn snapshot_state(bindings_code: &str) -> Result<ProgramState, TracerError> {
    let request = json!({"mode": "snapshot", "program": bindings_code});
    let out = sandbox::run_helper(&request, ResourceLimits::default().wall())?;
    let rec = out
        .record("state")
        .ok_or_else(|| TracerError::Setup(out.stderr.lines().last().unwrap_or("no state").to_string()))?;
    serde_json::from_value(rec["state"].clone()).map_err(|e| TracerError::Wire(e.to_string()))
}

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(name: &str) -> PathBuf {
    crate_dir().join("fixtures").join(name)
}

pub fn golden_dir() -> PathBuf {
    crate_dir().join("tests").join("golden")
}

pub fn golden_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(golden_dir())
        .expect("golden dir")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "py").then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))?
        })
        .collect();
    names.sort();
    names
}

pub fn invocation_of(program: &str) -> String {
    program
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# call:"))
        .expect("first line names the call")
        .trim()
        .to_string()
}

fn snapshot_json(value: &str) -> String {
    let (repr, ty) = value.rsplit_once(':').expect("value has a type suffix");
    format!(
        r#"{{"value_repr":{},"type_name":{},"representable":true}}"#,
        serde_json::to_string(repr).unwrap(),
        serde_json::to_string(ty).unwrap()
    )
}

/// Expands a hand-written `.expect` trace into wire-format bytes.
///
/// Each line is `<event> <line> | name=repr:type ; ...` with names in sorted
/// order, or a final `output repr:type`.
pub fn expand_expectation(record_id: &str, input_id: &str, expect: &str) -> String {
    let mut out = format!(
        r#"{{"record_id":{},"input_id":{}}}"#,
        serde_json::to_string(record_id).unwrap(),
        serde_json::to_string(input_id).unwrap()
    );
    out.push('\n');
    let mut output = String::from("null");
    let mut step = 0;
    for line in expect.lines().filter(|l| !l.trim().is_empty()) {
        if let Some(v) = line.strip_prefix("output ") {
            output = snapshot_json(v.trim());
            continue;
        }
        let (head, vars) = line.split_once(" | ").unwrap_or((line, ""));
        let (event, line_no) = head.trim().split_once(' ').expect("event and line");
        let event = if event == "return" { "return_event" } else { event };
        let state: Vec<String> = vars
            .split(" ; ")
            .filter(|v| !v.trim().is_empty())
            .map(|v| {
                let (name, value) = v.trim().split_once('=').expect("name=value");
                format!("{}:{}", serde_json::to_string(name).unwrap(), snapshot_json(value))
            })
            .collect();
        writeln!(
            out,
            r#"{{"step_index":{step},"line_no":{line_no},"event":"{event}","state_after":{{{}}}}}"#,
            state.join(",")
        )
        .unwrap();
        step += 1;
    }
    writeln!(out, r#"{{"terminated":"ok","output_value":{output}}}"#).unwrap();
    out
}

pub struct Golden {
    pub name: String,
    pub program: String,
    pub expected_wire: String,
    pub committed_wire: Option<String>,
}

pub fn load_golden(name: &str) -> Golden {
    let dir = golden_dir();
    let read = |ext: &str| std::fs::read_to_string(dir.join(format!("{name}.{ext}")));
    let program = read("py").expect("program");
    let expect = read("expect").expect("hand-written expectation");
    Golden {
        name: name.to_string(),
        program,
        expected_wire: expand_expectation(name, "golden", &expect),
        committed_wire: read("trace.jsonl").ok(),
    }
}

/// Traces a golden program and returns its wire text with the ids filled in.
pub fn trace_golden(g: &Golden) -> String {
    let invocation = invocation_of(&g.program);
    let mut t = reval::tracer::trace_execution(&g.program, &invocation, &Default::default())
        .unwrap_or_else(|e| panic!("{}: {e}", g.name));
    t.record_id = g.name.clone();
    t.input_id = "golden".into();
    t.to_wire()
}

pub fn first_difference(a: &str, b: &str) -> String {
    for (i, (x, y)) in a.lines().zip(b.lines()).enumerate() {
        if x != y {
            return format!("line {}:\n  expected {x}\n  actual   {y}", i + 1);
        }
    }
    format!("line counts differ: {} vs {}", a.lines().count(), b.lines().count())
}

pub fn temp_workdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}

use reval::builder::{ProblemInstance, Task};
use reval::gateway::{anti_oracle_answer, oracle_answer, transcript_key, TranscriptEntry};
use reval::grader::Judgment;
use reval::harness::{self, FileConfig, RunConfig};

pub fn config(
    corpus: &Path,
    format: &str,
    workdir: &Path,
    backend: &str,
    tweak: impl FnOnce(&mut FileConfig),
) -> RunConfig {
    let mut f = FileConfig {
        corpus: Some(corpus.to_path_buf()),
        format: Some(format.into()),
        workdir: Some(workdir.to_path_buf()),
        backend: Some(backend.into()),
        runs: Some(1),
        seed: Some(7),
        workers: Some(4),
        ..FileConfig::default()
    };
    tweak(&mut f);
    f.resolve().expect("valid test config")
}

pub fn humaneval_config(workdir: &Path, backend: &str, tweak: impl FnOnce(&mut FileConfig)) -> RunConfig {
    config(
        &fixture("humaneval_like.jsonl"),
        "humaneval_like",
        workdir,
        backend,
        tweak,
    )
}

pub fn problems(c: &RunConfig) -> Vec<ProblemInstance> {
    harness::load_problems(c).expect("problems").problems
}

pub fn run_dir(c: &RunConfig, run_index: usize) -> PathBuf {
    let meta = harness::load_problems(c).expect("problems").meta;
    harness::experiment_dir(c, &meta.config_hash).join(format!("r{run_index}"))
}

pub fn judgments(c: &RunConfig, run_index: usize) -> Vec<Judgment> {
    harness::read_jsonl(&run_dir(c, run_index).join("judgments.jsonl")).expect("judgments")
}

/// Writes a scripted transcript answering each problem with the oracle line
/// when `right` says so and with the anti-oracle line otherwise.
pub fn write_transcript(path: &Path, problems: &[ProblemInstance], right: impl Fn(&ProblemInstance) -> bool) {
    let mut text = String::new();
    for p in problems {
        let answer = if right(p) {
            oracle_answer(p)
        } else {
            anti_oracle_answer(p)
        };
        let entry = TranscriptEntry {
            key: transcript_key(p),
            text: format!("Working through it.\n{answer}"),
        };
        text.push_str(&serde_json::to_string(&entry).unwrap());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

pub fn first_of(problems: &[ProblemInstance], task: Task) -> &ProblemInstance {
    problems.iter().find(|p| p.task == task).expect("task present")
}

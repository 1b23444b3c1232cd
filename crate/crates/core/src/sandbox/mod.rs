//! Subprocess sandbox for the subject runtime.
//!
//! Every parse, trace and grading request runs the embedded Python helper in a
//! fresh interpreter process with a cleared environment, a private working
//! directory, a fixed hash seed and a wall-clock deadline. The helper answers
//! with line-delimited JSON records; records written before a kill are kept so
//! callers can recover partial traces.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

const HELPER: &str = include_str!("helper.py");

/// Environment variable naming the interpreter; defaults to `python3`.
pub const PYTHON_ENV: &str = "REVAL_PYTHON";

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to start subject runtime `{interpreter}`: {source}")]
    Spawn {
        interpreter: String,
        source: std::io::Error,
    },
    #[error("sandbox i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed helper output: {0}")]
    Protocol(String),
}

/// Per-execution resource bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub wall_seconds: f64,
    pub max_steps: u64,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        Self {
            wall_seconds: 10.0,
            max_steps: 100_000,
        }
    }
}

impl ResourceLimits {
    pub fn wall(&self) -> Duration {
        Duration::from_secs_f64(self.wall_seconds.max(0.001))
    }
}

#[derive(Debug)]
pub struct HelperOutput {
    pub records: Vec<Value>,
    pub timed_out: bool,
    pub exit_success: bool,
    pub stderr: String,
}

impl HelperOutput {
    /// First record whose `rec` tag equals `tag`.
    pub fn record(&self, tag: &str) -> Option<&Value> {
        self.records
            .iter()
            .find(|r| r.get("rec").and_then(Value::as_str) == Some(tag))
    }
}

pub fn interpreter() -> String {
    std::env::var(PYTHON_ENV).unwrap_or_else(|_| "python3".to_string())
}

/// Runs one helper request under the given wall-clock limit.
pub fn run_helper(request: &Value, wall: Duration) -> Result<HelperOutput, SandboxError> {
    let interpreter = interpreter();
    let workdir = tempfile::tempdir()?;
    let mut cmd = Command::new(&interpreter);
    cmd.args(["-s", "-B", "-c", HELPER])
        .env_clear()
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONIOENCODING", "utf-8")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .current_dir(workdir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Ok(path) = std::env::var("PATH") {
        cmd.env("PATH", path);
    }
    let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
        interpreter: interpreter.clone(),
        source,
    })?;

    let payload = serde_json::to_vec(request).map_err(|e| SandboxError::Protocol(e.to_string()))?;
    {
        let mut stdin = child.stdin.take().expect("stdin piped");
        // The helper may exit before reading everything on a broken request.
        let _ = stdin.write_all(&payload);
    }

    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || {
        let mut lines = Vec::new();
        for line in BufReader::new(stdout).lines() {
            match line {
                Ok(l) => lines.push(l),
                Err(_) => break,
            }
        }
        lines
    });
    let err_reader = thread::spawn(move || {
        let mut buf = String::new();
        let _ = BufReader::new(stderr).take(64 * 1024).read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + wall;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            let _ = child.kill();
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(2));
    };

    let lines = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let mut records = Vec::with_capacity(lines.len());
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(v) => records.push(v),
            // a kill can truncate the final line
            Err(_) if timed_out => break,
            Err(e) => return Err(SandboxError::Protocol(format!("{e}: {line}"))),
        }
    }
    Ok(HelperOutput {
        records,
        timed_out,
        exit_success: status.success(),
        stderr,
    })
}

/// Outcome of running an assertion against a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeOutcome {
    Pass,
    Fail,
    Error,
}

/// Executes `program`, then `prelude` (if any), then `assertion_text`, in a
/// fresh sandboxed interpreter.
pub fn grade_in_sandbox(
    program: &str,
    prelude: Option<&str>,
    assertion_text: &str,
    limits: &ResourceLimits,
) -> GradeOutcome {
    let request = serde_json::json!({
        "mode": "grade",
        "program": program,
        "prelude": prelude.unwrap_or(""),
        "assertion": assertion_text,
    });
    let out = match run_helper(&request, limits.wall()) {
        Ok(out) => out,
        Err(e) => {
            log::warn!("grading sandbox failed: {e}");
            return GradeOutcome::Error;
        }
    };
    if out.timed_out {
        return GradeOutcome::Error;
    }
    match out
        .record("grade")
        .and_then(|r| r.get("outcome"))
        .and_then(Value::as_str)
    {
        Some("pass") => GradeOutcome::Pass,
        Some("fail") => GradeOutcome::Fail,
        _ => GradeOutcome::Error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INC: &str = "def f(x):\n    return x + 1\n";

    #[test]
    fn passing_assertion() {
        let limits = ResourceLimits::default();
        assert_eq!(
            grade_in_sandbox(INC, None, "assert f(3) == 4", &limits),
            GradeOutcome::Pass
        );
    }

    #[test]
    fn failing_assertion() {
        let limits = ResourceLimits::default();
        assert_eq!(
            grade_in_sandbox(INC, None, "assert f(3) == 5", &limits),
            GradeOutcome::Fail
        );
    }

    #[test]
    fn undefined_name_is_error() {
        let limits = ResourceLimits::default();
        assert_eq!(
            grade_in_sandbox(INC, None, "assert g(3) == 4", &limits),
            GradeOutcome::Error
        );
    }

    #[test]
    fn prelude_aliases_candidate() {
        let limits = ResourceLimits::default();
        assert_eq!(
            grade_in_sandbox(INC, Some("candidate = f"), "assert candidate(1) == 2", &limits),
            GradeOutcome::Pass
        );
    }

    #[test]
    fn runaway_program_times_out() {
        let limits = ResourceLimits {
            wall_seconds: 0.5,
            max_steps: 10,
        };
        let start = Instant::now();
        let outcome = grade_in_sandbox(
            "def spin():\n    while True:\n        pass\n",
            None,
            "assert spin() == 1",
            &limits,
        );
        assert_eq!(outcome, GradeOutcome::Error);
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn subject_stdout_does_not_corrupt_protocol() {
        let limits = ResourceLimits::default();
        let program = "def f(x):\n    print('{not json')\n    return x\n";
        assert_eq!(
            grade_in_sandbox(program, None, "assert f(2) == 2", &limits),
            GradeOutcome::Pass
        );
    }
}

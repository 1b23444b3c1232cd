mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::*;
use reval::builder::{GroundTruth, NextStep, ProblemInstance, ProblemKey, Task};
use reval::corpus::{load_corpus, CorpusFormat};
use reval::gateway::{anti_oracle_answer, Backend, Gateway, ModelConfig, TranscriptEntry};
use reval::grader::{grade, parse_answer_for, substitute_mask, GradeEnv};
use reval::harness::{self, RunConfig};
use reval::metrics::{self, ic_weight, CcpOutcome, RunMetrics};
use reval::promptkit::{render_prompt, Strategy};
use reval::sandbox::{GradeOutcome, ResourceLimits};
use reval::tracer;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pipeline(c: &RunConfig) -> Result<RunMetrics, String> {
    harness::cmd_adapt(c).map_err(|e| e.to_string())?;
    harness::cmd_run(c).map_err(|e| e.to_string())?;
    let score = harness::cmd_score(c).map_err(|e| e.to_string())?;
    harness::cmd_report(c).map_err(|e| e.to_string())?;
    score.runs.into_iter().next().ok_or_else(|| "no run scored".into())
}

fn summary(m: &RunMetrics) -> String {
    format!(
        "CCP {} F1 {} PSP {} EPP {} OP {} IC {} (N={}, N'={})",
        m.acc_ccp, m.f1_ccp, m.acc_psp, m.acc_epp, m.acc_op, m.ic_score, m.n, m.n_prime
    )
}

fn oracle_closure(workdir: &Path) -> Check {
    let start = Instant::now();
    let m = pipeline(&humaneval_config(workdir, "oracle", |_| {}))?;
    let secs = start.elapsed().as_secs_f64();
    let all = [m.acc_ccp, m.acc_psp, m.acc_epp, m.acc_op, m.f1_ccp];
    ensure(all.iter().all(|a| *a == 1.0) && m.ic_score == 100.0, || summary(&m))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", summary(&m)))
}

fn anti_oracle_closure(workdir: &Path) -> Check {
    let m = pipeline(&humaneval_config(workdir, "anti_oracle", |_| {}))?;
    let all = [m.acc_ccp, m.acc_psp, m.acc_epp, m.acc_op];
    ensure(all.iter().all(|a| *a == 0.0) && m.ic_score == 0.0, || summary(&m))?;
    Ok(summary(&m))
}

fn site_of(key: &ProblemKey) -> ProblemKey {
    ProblemKey {
        variable: None,
        ..key.clone()
    }
}

fn input_of(key: &ProblemKey) -> ProblemKey {
    ProblemKey {
        stmt_index: None,
        variable: None,
        ..key.clone()
    }
}

fn scripted_run(
    workdir: &Path,
    name: &str,
    right: impl Fn(&ProblemInstance) -> bool,
) -> Result<(RunConfig, Vec<ProblemInstance>), String> {
    let base = humaneval_config(workdir, "oracle", |_| {});
    let problems = problems(&base);
    let transcript = workdir.join(format!("{name}.transcript.jsonl"));
    write_transcript(&transcript, &problems, right);
    let c = humaneval_config(workdir, "scripted", |f| {
        f.transcript = Some(transcript.clone());
        f.model = Some(name.into());
    });
    harness::cmd_run(&c).map_err(|e| e.to_string())?;
    Ok((c, problems))
}

fn ic_patterns(workdir: &Path) -> Check {
    let wanted: [([bool; 4], f64); 5] = [
        ([true, true, true, true], 1.0),
        ([true, true, true, false], 0.5),
        ([true, true, false, false], 0.25),
        ([true, false, false, false], 0.125),
        ([false, true, true, true], 0.0),
    ];
    let base = humaneval_config(workdir, "oracle", |_| {});
    let all = problems(&base);
    // one program-state problem per input, so output bits never conflict
    let mut seen_inputs = BTreeSet::new();
    let chosen: Vec<ProblemKey> = all
        .iter()
        .filter(|p| p.task == Task::Psp && seen_inputs.insert(input_of(&p.key)))
        .map(|p| p.key.clone())
        .take(wanted.len())
        .collect();
    ensure(chosen.len() == wanted.len(), || {
        format!("only {} distinct inputs", chosen.len())
    })?;
    let mut plan: BTreeMap<(Task, ProblemKey), bool> = BTreeMap::new();
    for (key, (bits, _)) in chosen.iter().zip(&wanted) {
        for (task, k, bit) in [
            (Task::Ccp, site_of(key), bits[0]),
            (Task::Psp, key.clone(), bits[1]),
            (Task::Epp, site_of(key), bits[2]),
            (Task::Op, input_of(key), bits[3]),
        ] {
            plan.insert((task, k), bit);
        }
    }
    let (c, problems) = scripted_run(workdir, "patterns", |p| {
        plan.get(&(p.task, p.key.clone())).copied().unwrap_or(false)
    })?;
    let judgments = judgments(&c, 0);
    let vectors = metrics::result_vectors(&problems, &judgments).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (key, (bits, weight)) in chosen.iter().zip(&wanted) {
        let v = vectors
            .iter()
            .find(|v| &v.key == key)
            .ok_or_else(|| format!("{key}: no vector"))?;
        ensure(v.bits == *bits && ic_weight(v.bits) == *weight, || {
            format!("{key}: bits {:?} weight {}", v.bits, ic_weight(v.bits))
        })?;
        got.push(ic_weight(v.bits).to_string());
    }
    // mixed set {1111, 1100, 1000, 0111}: score the run restricted to those problems
    let mixed: BTreeSet<ProblemKey> = [0, 2, 3, 4].iter().map(|i| chosen[*i].clone()).collect();
    let keep = |p: &ProblemInstance| match p.task {
        Task::Psp => mixed.contains(&p.key),
        Task::Ccp | Task::Epp => mixed.iter().any(|k| site_of(k) == p.key),
        Task::Op => mixed.iter().any(|k| input_of(k) == p.key),
    };
    let subset: Vec<ProblemInstance> = problems.iter().filter(|p| keep(p)).cloned().collect();
    let m = metrics::run_metrics(&subset, &judgments).map_err(|e| e.to_string())?;
    ensure(m.ic_score == 34.375, || format!("mixed set scored {}", m.ic_score))?;
    Ok(format!("per-problem {} ; mixed set {}", got.join(", "), m.ic_score))
}

fn decoupling(workdir: &Path) -> Check {
    let (c, _) = scripted_run(workdir, "decoupled", |p| p.task != Task::Ccp)?;
    let score = harness::cmd_score(&c).map_err(|e| e.to_string())?;
    let m = &score.runs[0];
    ensure(m.acc_avg == 0.75 && m.ic_score == 0.0 && m.acc_ccp == 0.0, || {
        summary(m)
    })?;
    Ok(format!("acc_avg {} IC {}", m.acc_avg * 100.0, m.ic_score))
}

fn golden_suite() -> Check {
    let names = golden_names();
    ensure(names.len() >= 10, || format!("{} programs", names.len()))?;
    for name in &names {
        let g = load_golden(name);
        let actual = trace_golden(&g);
        ensure(actual == g.expected_wire, || {
            format!("{name}: {}", first_difference(&g.expected_wire, &actual))
        })?;
        ensure(g.committed_wire.as_deref() == Some(actual.as_str()), || {
            format!("{name}: committed file differs")
        })?;
    }
    Ok(format!("{} programs byte-identical", names.len()))
}

fn case_study(workdir: &Path) -> Check {
    let c = humaneval_config(workdir, "oracle", |_| {});
    let records =
        load_corpus(&fixture("humaneval_like.jsonl"), CorpusFormat::HumanevalLike).map_err(|e| e.to_string())?;
    let record = records
        .iter()
        .find(|r| r.record_id == "HumanEval/59")
        .ok_or("record missing")?;
    let program = record.program_text();
    let line_of = |needle: &str| {
        program
            .lines()
            .position(|l| l.trim() == needle)
            .map(|i| i as u32 + 1)
            .ok_or_else(|| format!("no line `{needle}`"))
    };
    let (def_inner, init, header, test, update, ret) = (
        line_of("def is_prime(k):")?,
        line_of("largest = 1")?,
        line_of("for j in range(2, n + 1):")?,
        line_of("if n % j == 0 and is_prime(j):")?,
        line_of("largest = max(largest, j)")?,
        line_of("return largest")?,
    );
    // hand trace of the outer frame for n = 15: divisors 3, 5 and 15, of
    // which only 3 and 5 are prime
    let mut hand = vec![def_inner, init];
    for j in 2..=15 {
        hand.extend([header, test]);
        if j == 3 || j == 5 {
            hand.push(update);
        }
    }
    hand.extend([header, ret]);

    let input = record
        .test_inputs
        .iter()
        .find(|i| i.invocation_text.ends_with("(15)"))
        .ok_or("no input 15")?;
    let trace = tracer::trace_input(record, input, &ResourceLimits::default()).map_err(|e| e.to_string())?;
    let acts = trace.activations();
    let outer: Vec<u32> = trace
        .steps
        .iter()
        .zip(&acts)
        .filter(|(s, a)| **a == acts[0] && s.event == tracer::StepEvent::Stmt)
        .map(|(s, _)| s.line_no)
        .collect();
    ensure(outer == hand, || format!("outer frame {outer:?} vs hand {hand:?}"))?;

    let problem = problems(&c)
        .into_iter()
        .find(|p| {
            p.task == Task::Epp
                && p.key.record_id == "HumanEval/59"
                && p.key.input_id == input.input_id
                && p.question_payload.statement.as_deref().map(str::trim) == Some("largest = max(largest, j)")
        })
        .ok_or("no EPP problem at the update site")?;
    let GroundTruth::NextLines { next_lines, .. } = &problem.ground_truth else {
        return Err("not a next-line truth".into());
    };
    ensure(
        next_lines.contains(&NextStep::Line(header)) && !next_lines.contains(&NextStep::Line(ret)),
        || format!("next_lines {next_lines:?}"),
    )?;
    Ok(format!(
        "line {update} -> {next_lines:?} (header {header}, return {ret})"
    ))
}

fn f1_equivalence() -> Check {
    let mut rng = StdRng::seed_from_u64(20240611);
    for set in 0..100 {
        let n = rng.gen_range(0..60);
        let pairs: Vec<(bool, bool)> = (0..n).map(|_| (rng.gen_bool(0.6), rng.gen_bool(0.5))).collect();
        let outcomes: Vec<CcpOutcome> = pairs
            .iter()
            .map(|(truth, pred)| CcpOutcome {
                truth: *truth,
                correct: truth == pred,
            })
            .collect();
        let tp = pairs.iter().filter(|(t, p)| *t && *p).count() as f64;
        let fp = pairs.iter().filter(|(t, p)| !*t && *p).count() as f64;
        let fn_ = pairs.iter().filter(|(t, p)| *t && !*p).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let expected = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let got = metrics::f1_ccp(&outcomes);
        ensure((got - expected).abs() < 1e-9, || {
            format!("set {set}: {got} vs {expected}")
        })?;
    }
    Ok("100 sets within 1e-9".into())
}

fn op_soundness(workdir: &Path) -> Check {
    let c = humaneval_config(workdir, "oracle", |_| {});
    let loaded = harness::load_problems(&c).map_err(|e| e.to_string())?;
    let env = GradeEnv::new(&loaded.records, ResourceLimits::default());
    let mut n = 0;
    for p in loaded.problems.iter().filter(|p| p.task == Task::Op) {
        let GroundTruth::Output { expected_literal, .. } = &p.ground_truth else {
            return Err(format!("{}: not an output truth", p.key));
        };
        let masked = p
            .question_payload
            .masked_assertion
            .as_deref()
            .ok_or("no masked assertion")?;
        let anti = anti_oracle_answer(p);
        let anti = anti.strip_prefix("ANSWER: ").unwrap_or(&anti);
        let run = |lit: &str| {
            env.run_assertion(&p.key.record_id, &substitute_mask(masked, lit))
                .map_err(|e| e.to_string())
        };
        ensure(run(&expected_literal.to_string())? == GradeOutcome::Pass, || {
            format!("{}: truth fails", p.key)
        })?;
        ensure(run(anti)? == GradeOutcome::Fail, || {
            format!("{}: anti-oracle `{anti}` does not fail", p.key)
        })?;
        n += 1;
    }
    ensure(n > 0, || "no output problems".into())?;
    Ok(format!("{n} output problems"))
}

fn determinism(workdir: &Path) -> Check {
    let mut files = Vec::new();
    for side in ["a", "b"] {
        let dir = workdir.join(side);
        let c = humaneval_config(&dir, "oracle", |_| {});
        pipeline(&c)?;
        let problems = std::fs::read(c.problems_path()).map_err(|e| e.to_string())?;
        let judgments = std::fs::read(run_dir(&c, 0).join("judgments.jsonl")).map_err(|e| e.to_string())?;
        files.push((problems, judgments));
    }
    ensure(files[0].0 == files[1].0, || "problems.jsonl differs".into())?;
    ensure(files[0].1 == files[1].1, || "judgments.jsonl differs".into())?;
    Ok(format!("{} + {} bytes identical", files[0].0.len(), files[0].1.len()))
}

fn psp_joint_match(workdir: &Path) -> Check {
    let c = humaneval_config(workdir, "oracle", |_| {});
    let loaded = harness::load_problems(&c).map_err(|e| e.to_string())?;
    let problem = loaded
        .problems
        .iter()
        .find(|p| matches!(&p.ground_truth, GroundTruth::ValueType { type_name, .. } if type_name == "int"))
        .ok_or("no int-valued state problem")?;
    let GroundTruth::ValueType { value_repr, .. } = &problem.ground_truth else {
        unreachable!()
    };
    let cases = [
        (format!("ANSWER: value={value_repr} type=str"), false),
        (format!("ANSWER: value={value_repr}7 type=int"), false),
        (format!("ANSWER: value={value_repr} type=int"), true),
    ];
    let env = GradeEnv::new(&loaded.records, ResourceLimits::default());
    let prompt = render_prompt(problem, Strategy::Fewshot, &[]).map_err(|e| e.to_string())?;
    let mut verdicts = Vec::new();
    for (i, (answer, expected)) in cases.iter().enumerate() {
        let transcript = workdir.join(format!("joint{i}.jsonl"));
        let entry = TranscriptEntry {
            key: reval::gateway::transcript_key(problem),
            text: answer.clone(),
        };
        std::fs::write(&transcript, serde_json::to_string(&entry).unwrap()).unwrap();
        let gateway = Gateway::new(ModelConfig {
            backend: Backend::Scripted,
            transcript: Some(transcript),
            ..ModelConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let raw = gateway.complete(problem, &prompt).map_err(|e| e.to_string())?;
        let judgment = grade(problem, &parse_answer_for(problem, &raw.text), &env).map_err(|e| e.to_string())?;
        ensure(judgment.correct == *expected, || {
            format!("`{answer}` graded {}", judgment.correct)
        })?;
        verdicts.push(if judgment.correct { "right" } else { "wrong" });
    }
    Ok(format!(
        "wrong type / wrong value / both right -> {}",
        verdicts.join(" / ")
    ))
}

fn outcome(f: impl FnOnce() -> Check + std::panic::UnwindSafe) -> Check {
    std::panic::catch_unwind(f).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let shared = temp_workdir();
    let own = temp_workdir();
    let w = shared.path().to_path_buf();
    let results = vec![
        ("oracle closure", outcome(|| oracle_closure(&w))),
        ("anti-oracle closure", outcome(|| anti_oracle_closure(&w))),
        ("consistency weights", outcome(|| ic_patterns(&w))),
        ("decoupling witness", outcome(|| decoupling(&w))),
        ("tracer golden suite", outcome(golden_suite)),
        ("largest-prime-factor case study", outcome(|| case_study(&w))),
        ("F1 equivalence", outcome(f1_equivalence)),
        ("output delegation soundness", outcome(|| op_soundness(&w))),
        ("determinism", outcome(|| determinism(own.path()))),
        ("state joint match", outcome(|| psp_joint_match(&w))),
    ];
    let mut failed = Vec::new();
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

//! Task accuracies, coverage F1, the incremental consistency score and
//! multi-run aggregation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{GroundTruth, ProblemInstance, ProblemKey, Task};
use crate::grader::Judgment;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no {0} judgments")]
    EmptySet(String),
    #[error("expected {expected} judgments, found {found}")]
    MixedTasks { expected: Task, found: Task },
    #[error("{} problem(s) without a judgment, e.g. {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingJudgments(Vec<String>),
}

/// Correctness across the ordered task chain CCP → PSP → EPP → OP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultVector {
    pub key: ProblemKey,
    pub bits: [bool; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcpOutcome {
    pub truth: bool,
    pub correct: bool,
}

impl CcpOutcome {
    pub fn predicted(&self) -> bool {
        self.truth == self.correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub acc_ccp: f64,
    pub f1_ccp: f64,
    pub acc_psp: f64,
    pub acc_epp: f64,
    pub acc_op: f64,
    pub acc_avg: f64,
    pub ic_score: f64,
    /// Keys in the consistency pool.
    pub n: usize,
    /// Distinct (record, input) pairs asked for output prediction.
    pub n_prime: usize,
    /// Coverage questions, including those at unexecuted sites.
    pub n_ccp: usize,
}

pub const METRIC_FIELDS: [&str; 7] = [
    "acc_ccp", "f1_ccp", "acc_psp", "acc_epp", "acc_op", "acc_avg", "ic_score",
];

impl RunMetrics {
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "acc_ccp" => self.acc_ccp,
            "f1_ccp" => self.f1_ccp,
            "acc_psp" => self.acc_psp,
            "acc_epp" => self.acc_epp,
            "acc_op" => self.acc_op,
            "acc_avg" => self.acc_avg,
            "ic_score" => self.ic_score,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub runs: usize,
    pub fields: BTreeMap<String, Stat>,
}

/// Share of correct judgments. OP judgments count once per (record, input).
pub fn accuracy(judgments: &[Judgment], task: Task) -> Result<f64, MetricsError> {
    if let Some(j) = judgments.iter().find(|j| j.task != task) {
        return Err(MetricsError::MixedTasks {
            expected: task,
            found: j.task,
        });
    }
    let (correct, total) = if task == Task::Op {
        let mut seen: HashMap<(&str, &str), bool> = HashMap::new();
        for j in judgments {
            seen.entry((&j.key.record_id, &j.key.input_id)).or_insert(j.correct);
        }
        (seen.values().filter(|c| **c).count(), seen.len())
    } else {
        (judgments.iter().filter(|j| j.correct).count(), judgments.len())
    };
    if total == 0 {
        return Err(MetricsError::EmptySet(task.to_string()));
    }
    Ok(correct as f64 / total as f64)
}

/// F1 of the "executed" class; 0 when there are no positives at all.
pub fn f1_ccp(outcomes: &[CcpOutcome]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for o in outcomes {
        match (o.truth, o.predicted()) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Weight of one result vector: 1, 1/2, 1/4, 1/8 for the non-declining
/// patterns 1111, 1110, 1100, 1000; 0 otherwise.
pub fn ic_weight(bits: [bool; 4]) -> f64 {
    let prefix = bits.iter().take_while(|b| **b).count();
    if prefix == 0 || bits[prefix..].iter().any(|b| *b) {
        return 0.0;
    }
    1.0 / f64::from(1u32 << (4 - prefix))
}

pub fn ic_score(vectors: &[ResultVector]) -> Result<f64, MetricsError> {
    if vectors.is_empty() {
        return Err(MetricsError::EmptySet("result vector".into()));
    }
    let sum: f64 = vectors.iter().map(|v| ic_weight(v.bits)).sum();
    Ok(100.0 * sum / vectors.len() as f64)
}

fn index<'a>(judgments: &'a [Judgment]) -> HashMap<(Task, &'a ProblemKey), &'a Judgment> {
    judgments.iter().map(|j| ((j.task, &j.key), j)).collect()
}

/// One vector per program-state problem, joining the coverage and path
/// judgments at the same statement and the output judgment of the input.
pub fn result_vectors(problems: &[ProblemInstance], judgments: &[Judgment]) -> Result<Vec<ResultVector>, MetricsError> {
    let by_key = index(judgments);
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for p in problems.iter().filter(|p| p.task == Task::Psp) {
        let site = ProblemKey {
            variable: None,
            ..p.key.clone()
        };
        let op = ProblemKey {
            stmt_index: None,
            ..site.clone()
        };
        let lookups = [
            (Task::Ccp, &site),
            (Task::Psp, &p.key),
            (Task::Epp, &site),
            (Task::Op, &op),
        ];
        let mut bits = [false; 4];
        let mut complete = true;
        for (i, (task, key)) in lookups.into_iter().enumerate() {
            match by_key.get(&(task, key)) {
                Some(j) => bits[i] = j.correct,
                None => {
                    complete = false;
                    missing.push(format!("{task}|{key}"));
                }
            }
        }
        if complete {
            out.push(ResultVector {
                key: p.key.clone(),
                bits,
            });
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(MetricsError::MissingJudgments(missing));
    }
    Ok(out)
}

/// Problems that have no judgment.
pub fn missing_judgments(problems: &[ProblemInstance], judgments: &[Judgment]) -> Vec<String> {
    let by_key = index(judgments);
    problems
        .iter()
        .filter(|p| !by_key.contains_key(&(p.task, &p.key)))
        .map(|p| format!("{}|{}", p.task, p.key))
        .collect()
}

pub fn run_metrics(problems: &[ProblemInstance], judgments: &[Judgment]) -> Result<RunMetrics, MetricsError> {
    let missing = missing_judgments(problems, judgments);
    if !missing.is_empty() {
        return Err(MetricsError::MissingJudgments(missing));
    }
    let by_key = index(judgments);
    let of_task = |task: Task| -> Vec<Judgment> {
        problems
            .iter()
            .filter(|p| p.task == task)
            .map(|p| by_key[&(task, &p.key)].clone())
            .collect()
    };
    let ccp_outcomes: Vec<CcpOutcome> = problems
        .iter()
        .filter_map(|p| match p.ground_truth {
            GroundTruth::Coverage { executed } => Some(CcpOutcome {
                truth: executed,
                correct: by_key[&(Task::Ccp, &p.key)].correct,
            }),
            _ => None,
        })
        .collect();
    let ccp = of_task(Task::Ccp);
    let op = of_task(Task::Op);
    let acc_ccp = accuracy(&ccp, Task::Ccp)?;
    let acc_psp = accuracy(&of_task(Task::Psp), Task::Psp)?;
    let acc_epp = accuracy(&of_task(Task::Epp), Task::Epp)?;
    let acc_op = accuracy(&op, Task::Op)?;
    let vectors = result_vectors(problems, judgments)?;
    let n_prime = op
        .iter()
        .map(|j| (&j.key.record_id, &j.key.input_id))
        .collect::<std::collections::HashSet<_>>()
        .len();
    Ok(RunMetrics {
        acc_ccp,
        f1_ccp: f1_ccp(&ccp_outcomes),
        acc_psp,
        acc_epp,
        acc_op,
        acc_avg: (acc_ccp + acc_psp + acc_epp + acc_op) / 4.0,
        ic_score: ic_score(&vectors)?,
        n: vectors.len(),
        n_prime,
        n_ccp: ccp.len(),
    })
}

/// Per-field mean and sample standard deviation (0 for a single run).
pub fn aggregate_runs(per_run: &[RunMetrics]) -> AggregateMetrics {
    let n = per_run.len();
    let fields = METRIC_FIELDS
        .iter()
        .map(|name| {
            let xs: Vec<f64> = per_run.iter().filter_map(|m| m.field(name)).collect();
            let mean = if n == 0 { 0.0 } else { xs.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            (name.to_string(), Stat { mean, std })
        })
        .collect();
    AggregateMetrics { runs: n, fields }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grader::Reason;
    use proptest::prelude::*;

    fn key(r: &str, i: &str, s: Option<usize>, v: Option<&str>) -> ProblemKey {
        ProblemKey {
            record_id: r.into(),
            input_id: i.into(),
            stmt_index: s,
            variable: v.map(str::to_string),
        }
    }

    fn judgment(task: Task, key: ProblemKey, correct: bool) -> Judgment {
        Judgment {
            key,
            task,
            correct,
            reason: if correct { Reason::Match } else { Reason::Mismatch },
        }
    }

    fn bits(s: &str) -> [bool; 4] {
        let b: Vec<bool> = s.chars().map(|c| c == '1').collect();
        [b[0], b[1], b[2], b[3]]
    }

    fn vec_of(patterns: &[&str]) -> Vec<ResultVector> {
        patterns
            .iter()
            .enumerate()
            .map(|(n, p)| ResultVector {
                key: key("R", &format!("in{n}"), Some(1), Some("v")),
                bits: bits(p),
            })
            .collect()
    }

    #[test]
    fn accuracy_examples() {
        let js: Vec<Judgment> = [true, true, true, false]
            .iter()
            .enumerate()
            .map(|(n, c)| judgment(Task::Psp, key("R", "in0", Some(n), Some("x")), *c))
            .collect();
        assert_eq!(accuracy(&js, Task::Psp).unwrap(), 0.75);
        assert_eq!(accuracy(&js[..3], Task::Psp).unwrap(), 1.0);
        assert_eq!(accuracy(&[], Task::Ccp), Err(MetricsError::EmptySet("CCP".into())));
        assert!(matches!(accuracy(&js, Task::Ccp), Err(MetricsError::MixedTasks { .. })));

        let op: Vec<Judgment> = (0..3)
            .map(|_| judgment(Task::Op, key("P1", "X1", None, None), true))
            .collect();
        let mut op2 = op.clone();
        op2.push(judgment(Task::Op, key("P2", "X1", None, None), false));
        assert_eq!(accuracy(&op, Task::Op).unwrap(), 1.0);
        assert_eq!(accuracy(&op2, Task::Op).unwrap(), 0.5);
    }

    #[test]
    fn f1_examples() {
        let o = |truth, correct| CcpOutcome { truth, correct };
        assert_eq!(f1_ccp(&[o(true, true), o(false, true)]), 1.0);
        // TP=2, FP=1, FN=1
        let mixed = [
            o(true, true),
            o(true, true),
            o(false, false),
            o(true, false),
            o(false, true),
        ];
        assert!((f1_ccp(&mixed) - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(f1_ccp(&[o(false, true), o(false, true)]), 0.0);
        assert_eq!(f1_ccp(&[]), 0.0);
    }

    #[test]
    fn ic_examples() {
        assert_eq!(ic_score(&vec_of(&["1111"])).unwrap(), 100.0);
        assert_eq!(ic_score(&vec_of(&["1100"])).unwrap(), 25.0);
        assert_eq!(ic_score(&vec_of(&["0111"])).unwrap(), 0.0);
        assert_eq!(ic_score(&vec_of(&["1111", "1100", "1000", "0111"])).unwrap(), 34.375);
        for (p, w) in [
            ("1111", 1.0),
            ("1110", 0.5),
            ("1100", 0.25),
            ("1000", 0.125),
            ("0111", 0.0),
            ("1011", 0.0),
            ("0000", 0.0),
        ] {
            assert_eq!(ic_weight(bits(p)), w, "{p}");
        }
        assert!(ic_score(&[]).is_err());
    }

    #[test]
    fn aggregation() {
        let run = |ic: f64| RunMetrics {
            acc_ccp: 0.5,
            f1_ccp: 0.5,
            acc_psp: 0.5,
            acc_epp: 0.5,
            acc_op: 0.5,
            acc_avg: 0.5,
            ic_score: ic,
            n: 1,
            n_prime: 1,
            n_ccp: 1,
        };
        let agg = aggregate_runs(&[run(10.0), run(12.0), run(14.0)]);
        assert_eq!(agg.fields["ic_score"], Stat { mean: 12.0, std: 2.0 });
        assert_eq!(agg.fields["acc_psp"].std, 0.0);
        let single = aggregate_runs(&[run(7.0)]);
        assert!(single.fields.values().all(|s| s.std == 0.0));
        assert_eq!(single.runs, 1);
    }

    #[test]
    fn decoupling_witness() {
        let patterns = vec!["0111"; 5];
        let vectors = vec_of(&patterns);
        assert_eq!(ic_score(&vectors).unwrap(), 0.0);
        let task_acc: Vec<f64> = (0..4)
            .map(|t| vectors.iter().filter(|v| v.bits[t]).count() as f64 / vectors.len() as f64)
            .collect();
        assert_eq!(task_acc.iter().sum::<f64>() / 4.0, 0.75);
    }

    fn pattern() -> impl Strategy<Value = [bool; 4]> {
        prop::array::uniform4(any::<bool>())
    }

    proptest! {
        #[test]
        fn ic_bounds(ps in prop::collection::vec(pattern(), 1..40)) {
            let vs: Vec<ResultVector> = ps.iter().map(|b| ResultVector { key: key("R", "i", None, None), bits: *b }).collect();
            let s = ic_score(&vs).unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
            prop_assert_eq!(s == 100.0, ps.iter().all(|b| *b == [true; 4]));
            prop_assert_eq!(s == 0.0, ps.iter().all(|b| ic_weight(*b) == 0.0));
        }

        #[test]
        fn ic_monotone_within_patterns(ps in prop::collection::vec(pattern(), 1..20), which in 0usize..20, bit in 0usize..4) {
            let which = which % ps.len();
            let mut flipped = ps.clone();
            if !flipped[which][bit] {
                flipped[which][bit] = true;
                let to_vs = |ps: &[[bool; 4]]| -> Vec<ResultVector> {
                    ps.iter().map(|b| ResultVector { key: key("R", "i", None, None), bits: *b }).collect()
                };
                if ic_weight(flipped[which]) > 0.0 {
                    prop_assert!(ic_score(&to_vs(&flipped)).unwrap() >= ic_score(&to_vs(&ps)).unwrap());
                }
            }
        }

        #[test]
        fn f1_matches_confusion_tally(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
            let outcomes: Vec<CcpOutcome> = pairs.iter().map(|&(truth, predicted)| CcpOutcome { truth, correct: truth == predicted }).collect();
            let tp = pairs.iter().filter(|(t, p)| *t && *p).count() as f64;
            let fp = pairs.iter().filter(|(t, p)| !*t && *p).count() as f64;
            let fn_ = pairs.iter().filter(|(t, p)| *t && !*p).count() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let expected = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            prop_assert!((f1_ccp(&outcomes) - expected).abs() < 1e-9);
        }
    }
}

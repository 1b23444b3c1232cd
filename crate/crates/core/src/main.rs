use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reval::harness::{self, FileConfig, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "reval", version, about = "Runtime-behavior reasoning benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the corpus, trace every input and build problems.jsonl
    Adapt(Opts),
    /// Query the model on every problem and grade the answers
    Run(Opts),
    /// Compute per-run metrics and their aggregate
    Score(Opts),
    /// Render the scored experiment as markdown and CSV
    Report(Opts),
    /// adapt, run, score and report in one go
    All(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Key = value settings file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// humaneval_like or classeval_like
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// http_chat, oracle, anti_oracle, fixed or scripted
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completion URL for http_chat
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Requests per minute for http_chat
    #[arg(long)]
    rate_limit: Option<u32>,
    #[arg(long)]
    retries: Option<u32>,
    /// fewshot or cot
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    site_budget: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Wall-clock seconds per sandboxed execution
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Transcript file for the scripted backend
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Response text for the fixed backend
    #[arg(long)]
    fixed_text: Option<String>,
    /// Also write each record's statement table and block graph
    #[arg(long)]
    emit_analysis: bool,
}

impl Opts {
    fn resolve(self) -> Result<RunConfig, HarnessError> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let flags = FileConfig {
            corpus: self.corpus,
            format: self.format,
            workdir: self.workdir,
            backend: self.backend,
            model: self.model,
            endpoint: self.endpoint,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            rate_limit: self.rate_limit,
            retries: self.retries,
            fixed_text: self.fixed_text,
            transcript: self.transcript,
            strategy: self.strategy,
            shots: self.shots,
            runs: self.runs,
            seed: self.seed,
            site_budget: self.site_budget,
            workers: self.workers,
            timeout: self.timeout,
            max_steps: self.max_steps,
            emit_analysis: self.emit_analysis.then_some(true),
        };
        file.merged(flags).resolve()
    }
}

fn adapt(c: &RunConfig) -> Result<(), HarnessError> {
    let s = harness::cmd_adapt(c)?;
    println!(
        "adapted {} record(s): {} rebuilt, {} reused, {} skipped; {} problem(s) in {}",
        s.records,
        s.rebuilt,
        s.reused,
        s.skipped.len(),
        s.instances,
        c.problems_path().display()
    );
    for (id, why) in &s.skipped {
        println!("  skipped {id}: {why}");
    }
    Ok(())
}

fn run(c: &RunConfig) -> Result<(), HarnessError> {
    let s = harness::cmd_run(c)?;
    println!(
        "experiment {}: {} run(s) complete, {} judgment(s) new, {} resumed",
        s.experiment, s.completed_runs, s.judged, s.resumed
    );
    Ok(())
}

fn score(c: &RunConfig) -> Result<(), HarnessError> {
    let s = harness::cmd_score(c)?;
    for (i, m) in s.runs.iter().enumerate() {
        println!(
            "run {i}: CCP {:.3} (F1 {:.3})  PSP {:.3}  EPP {:.3}  OP {:.3}  avg {:.3}  IC {:.2}",
            m.acc_ccp, m.f1_ccp, m.acc_psp, m.acc_epp, m.acc_op, m.acc_avg, m.ic_score
        );
    }
    if !s.incomplete_runs.is_empty() {
        return Err(HarnessError::Partial(format!(
            "runs {:?} incomplete",
            s.incomplete_runs
        )));
    }
    Ok(())
}

fn report(c: &RunConfig) -> Result<(), HarnessError> {
    let (path, md) = harness::cmd_report(c)?;
    print!("{md}");
    println!("written to {}", path.display());
    Ok(())
}

type Step = fn(&RunConfig) -> Result<(), HarnessError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (opts, steps): (Opts, Vec<Step>) = match cli.command {
        Command::Adapt(o) => (o, vec![adapt]),
        Command::Run(o) => (o, vec![run]),
        Command::Score(o) => (o, vec![score]),
        Command::Report(o) => (o, vec![report]),
        Command::All(o) => (o, vec![adapt, run, score, report]),
    };
    let result = opts
        .resolve()
        .and_then(|config| steps.iter().try_for_each(|step| step(&config)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reval: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use orsplit::bench::{
    self, check_exactly_once, compare_with_oracle, emit_report, load_job, run_benchmark, BenchConfig, BenchError,
    BenchReport, Format,
};
use orsplit::run::{Driver, LoadPropagation, RunConfig};
use orsplit::scheduler::Policy;
use orsplit::splitting::Strategy;

#[derive(Parser)]
#[command(
    name = "orsplit",
    version,
    about = "Or-parallel Prolog by incremental stack-splitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program on several agents and check it against the sequential oracle.
    Run(RunArgs),
    /// Run a program sequentially and print its answers and output.
    Oracle(Source),
    /// Run every corpus benchmark over a matrix of configurations.
    Batch(BatchArgs),
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    query: String,
}

#[derive(Args)]
struct Tuning {
    /// Fraction of the stack the giver keeps under vertical block splitting.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 2)]
    threshold: u32,
    #[arg(long, default_value_t = 200)]
    poll_frequency: u32,
    /// Also broadcast loads every this many polls.
    #[arg(long)]
    load_period: Option<u32>,
    /// Drop labels after every this many sharings an agent takes part in.
    #[arg(long)]
    gc_invalidation_period: Option<u32>,
    #[arg(long)]
    delay_termination: bool,
    /// Largest random message delay, in bus ticks.
    #[arg(long, default_value_t = 0)]
    reorder_window: u64,
    /// One thread per agent instead of the deterministic lockstep driver.
    #[arg(long)]
    threads: bool,
    #[arg(long, default_value_t = 300)]
    time_limit_secs: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 4)]
    agents: u32,
    #[arg(long, default_value_t = Policy::BottomMost)]
    policy: Policy,
    #[arg(long, default_value_t = Strategy::VerticalBlock)]
    strategy: Strategy,
    /// Keep side effects in sequential order.
    #[arg(long)]
    osc: bool,
    /// Ship only the part of the stack the receiver lacks.
    #[arg(long)]
    incremental: bool,
    /// Stop at the first solution.
    #[arg(long)]
    first_solution: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a CSV report to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also check that every alternative ran exactly once.
    #[arg(long)]
    ledger: bool,
    /// Print the side-effect output of the run.
    #[arg(long)]
    show_output: bool,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct BatchArgs {
    /// Benchmarks to run; all of the corpus by default.
    #[arg(long, value_delimiter = ',')]
    benchmarks: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    agents: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "bottom_most")]
    policies: Vec<Policy>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "horizontal,vertical_alternate,vertical_block"
    )]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "false,true")]
    incremental: Vec<bool>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

fn config(t: &Tuning) -> RunConfig {
    RunConfig {
        ratio: t.ratio,
        threshold: t.threshold,
        poll_frequency: t.poll_frequency,
        gc_invalidation_period: t.gc_invalidation_period,
        delay_termination: t.delay_termination,
        load_propagation: t
            .load_period
            .map_or(LoadPropagation::OnSharing, LoadPropagation::Periodic),
        reorder_window: t.reorder_window,
        driver: if t.threads { Driver::Threads } else { Driver::Lockstep },
        time_limit: Duration::from_secs(t.time_limit_secs),
        ..RunConfig::default()
    }
}

fn write_csv(path: &PathBuf, reports: &[BenchReport]) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.clone(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    emit_report(reports, Format::Csv, file).map_err(io_err)
}

/// Checks one run; returns whether it passed.
fn check(report: &BenchReport, oracle: &bench::Oracle, ledger: bool, out: &mut impl Write) -> io::Result<bool> {
    let verdict = compare_with_oracle(&report.run, oracle);
    let mut pass = verdict.pass() && report.run.halted;
    writeln!(out, "verdict: {verdict}")?;
    if ledger && !report.run.config.first_solution {
        match check_exactly_once(&report.run, oracle) {
            Ok(()) => writeln!(out, "ledger: every alternative ran once")?,
            Err(e) => {
                pass = false;
                writeln!(out, "ledger: {e}")?;
            }
        }
    }
    Ok(pass)
}

fn run(a: RunArgs) -> Result<bool, BenchError> {
    let cfg = BenchConfig {
        name: a
            .source
            .program
            .file_stem()
            .map_or("program".into(), |s| s.to_string_lossy().into_owned()),
        program: a.source.program.clone(),
        query: a.source.query.clone(),
        run: RunConfig {
            agents: a.agents,
            policy: a.policy,
            strategy: a.strategy,
            osc: a.osc,
            incremental: a.incremental,
            first_solution: a.first_solution,
            seed: a.seed,
            record_executions: a.ledger,
            ..config(&a.tuning)
        },
    };
    let report = run_benchmark(&cfg)?;
    let oracle = bench::oracle(load_job(&cfg.program, &cfg.query)?)?;
    let mut out = io::stdout().lock();
    let io = |e| BenchError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    for s in &report.run.solutions {
        writeln!(out, "{s}").map_err(io)?;
    }
    if a.show_output {
        write!(out, "{}", report.run.output).map_err(io)?;
    }
    emit_report(std::slice::from_ref(&report), Format::Text, &mut out).map_err(io)?;
    let pass = check(&report, &oracle, a.ledger, &mut out).map_err(io)?;
    if let Some(path) = &a.csv {
        write_csv(path, std::slice::from_ref(&report))?;
    }
    Ok(pass)
}

fn oracle(s: Source) -> Result<bool, BenchError> {
    let o = bench::oracle(load_job(&s.program, &s.query)?)?;
    let mut out = io::stdout().lock();
    let io = |e| BenchError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    for a in &o.answers {
        writeln!(out, "{a}").map_err(io)?;
    }
    write!(out, "{}", o.output).map_err(io)?;
    writeln!(out, "{} solutions, {} alternatives", o.answers.len(), o.executions).map_err(io)?;
    Ok(true)
}

fn batch(a: BatchArgs) -> Result<bool, BenchError> {
    let chosen: Vec<&bench::Benchmark> = if a.benchmarks.is_empty() {
        bench::CORPUS.iter().collect()
    } else {
        let mut v = Vec::new();
        for name in &a.benchmarks {
            match bench::benchmark(name) {
                Some(b) => v.push(b),
                None => {
                    eprintln!("unknown benchmark {name:?}");
                    return Ok(false);
                }
            }
        }
        v
    };
    let base = config(&a.tuning);
    let mut reports = Vec::new();
    let mut pass = true;
    for b in chosen {
        let oracle = bench::oracle(b.job()?)?;
        for &agents in &a.agents {
            for &policy in &a.policies {
                for &strategy in &a.strategies {
                    for &incremental in &a.incremental {
                        let cfg = b.config(RunConfig {
                            agents,
                            policy,
                            strategy,
                            incremental,
                            seed: a.seed,
                            record_executions: true,
                            ..base.clone()
                        });
                        let report = run_benchmark(&cfg)?;
                        let mut line = Vec::new();
                        let ok = check(&report, &oracle, true, &mut line).unwrap_or(false);
                        println!(
                            "{} agents={agents} {policy} {strategy} incremental={incremental}: {} solutions, {} ms, {}",
                            b.name,
                            report.run.solution_count(),
                            report.run.wall.as_millis(),
                            if ok { "pass" } else { "FAIL" }
                        );
                        if !ok {
                            print!("{}", String::from_utf8_lossy(&line));
                        }
                        pass &= ok;
                        reports.push(report);
                    }
                }
            }
        }
    }
    if let Some(path) = &a.csv {
        write_csv(path, &reports)?;
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Oracle(s) => oracle(s),
        Command::Batch(a) => batch(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::process::ExitCode;
use std::time::Duration;

use orsplit::bench::{self, check_exactly_once, compare_with_oracle, Benchmark, Oracle, CORPUS};
use orsplit::run::{RunConfig, RunReport};
use orsplit::scheduler::{model, Policy};
use orsplit::splitting::Strategy;

const AGENTS: [u32; 4] = [1, 2, 4, 8];
const TIME_LIMIT: Duration = Duration::from_secs(60);

struct Row {
    bench: &'static Benchmark,
    report: RunReport,
}

struct Criterion {
    pass: bool,
    detail: String,
}

impl Criterion {
    fn new(failures: &[String], ok: String) -> Criterion {
        match failures.first() {
            None => Criterion { pass: true, detail: ok },
            Some(f) => Criterion {
                pass: false,
                detail: format!("{} failures, first: {f}", failures.len()),
            },
        }
    }
}

fn label(r: &RunReport) -> String {
    let c = &r.config;
    format!(
        "agents={} {} {} incremental={} osc={} seed={}",
        c.agents, c.policy, c.strategy, c.incremental, c.osc, c.seed
    )
}

fn run(b: &Benchmark, cfg: RunConfig) -> RunReport {
    let cfg = b.config(RunConfig {
        first_solution: b.first_solution,
        time_limit: TIME_LIMIT,
        record_executions: true,
        ..cfg
    });
    bench::run_benchmark(&cfg)
        .unwrap_or_else(|e| panic!("{}: {e}", b.name))
        .run
}

/// Every corpus program on every agent count, policy, strategy and
/// incremental mode.
fn matrix() -> Vec<Row> {
    let mut rows = Vec::new();
    for b in &CORPUS {
        for agents in AGENTS {
            for policy in Policy::ALL {
                for strategy in Strategy::ALL {
                    for incremental in [false, true] {
                        let report = run(
                            b,
                            RunConfig {
                                agents,
                                policy,
                                strategy,
                                incremental,
                                ..RunConfig::default()
                            },
                        );
                        rows.push(Row { bench: b, report });
                    }
                }
            }
        }
    }
    rows
}

fn oracle_of<'a>(oracles: &'a [Oracle], b: &Benchmark) -> &'a Oracle {
    &oracles[CORPUS.iter().position(|c| c.name == b.name).unwrap()]
}

fn known_counts(rows: &[Row]) -> Criterion {
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut slowest = Duration::ZERO;
    for (name, want) in [("queens10", 724), ("costas9", 760)] {
        for row in rows.iter().filter(|r| r.bench.name == name) {
            runs += 1;
            let r = &row.report;
            slowest = slowest.max(r.wall);
            if r.solution_count() != want || r.wall >= TIME_LIMIT || !r.halted {
                failures.push(format!(
                    "{name} {}: {} solutions in {:?}",
                    label(r),
                    r.solution_count(),
                    r.wall
                ));
            }
        }
    }
    Criterion::new(
        &failures,
        format!("{runs} runs, 724 and 760 found, slowest {slowest:.2?}"),
    )
}

fn multiset(rows: &[Row], oracles: &[Oracle]) -> Criterion {
    let mut failures = Vec::new();
    for row in rows {
        let v = compare_with_oracle(&row.report, oracle_of(oracles, row.bench));
        if !v.pass() {
            failures.push(format!("{} {}: {v}", row.bench.name, label(&row.report)));
        }
    }
    let per = rows.len() / CORPUS.len();
    Criterion::new(&failures, format!("{} programs x {per} configurations", CORPUS.len()))
}

fn exactly_once(rows: &[Row], oracles: &[Oracle]) -> Criterion {
    let mut failures = Vec::new();
    let mut checked = 0;
    for row in rows.iter().filter(|r| !r.bench.first_solution) {
        checked += 1;
        if let Err(e) = check_exactly_once(&row.report, oracle_of(oracles, row.bench)) {
            failures.push(format!("{} {}: {e}", row.bench.name, label(&row.report)));
        }
    }
    Criterion::new(
        &failures,
        format!("{checked} ledgers with no duplicate and no missing alternative"),
    )
}

fn order_sensitive() -> Criterion {
    let mut failures = Vec::new();
    let mut runs = 0;
    for name in ["knight", "hamilton", "map"] {
        let b = bench::benchmark(name).unwrap();
        let o = bench::oracle(b.job().unwrap()).unwrap();
        for agents in [2, 4, 8] {
            for seed in 0..10u64 {
                let r = run(
                    b,
                    RunConfig {
                        agents,
                        osc: true,
                        policy: Policy::ALL[seed as usize % Policy::ALL.len()],
                        seed,
                        reorder_window: [3, 16, 64, 300][seed as usize % 4],
                        ..RunConfig::default()
                    },
                );
                runs += 1;
                if r.output != o.output {
                    let at = bench::first_divergence(&o.output, &r.output).unwrap_or(0);
                    failures.push(format!("{name} {}: output diverges at byte {at}", label(&r)));
                }
            }
        }
    }
    Criterion::new(
        &failures,
        format!("{runs} reordered runs byte-identical to the sequential output"),
    )
}

fn incremental_bytes() -> Criterion {
    let mut tried = Vec::new();
    let mut fewer = None;
    for name in ["knight", "hamilton"] {
        let b = bench::benchmark(name).unwrap();
        let cfg = |incremental| RunConfig {
            agents: 8,
            incremental,
            seed: 1,
            ..RunConfig::default()
        };
        let (inc, full) = (run(b, cfg(true)), run(b, cfg(false)));
        let (ib, fb) = (inc.share_bytes(true) + inc.share_bytes(false), full.share_bytes(false));
        let (is, fs) = (inc.sharings.len(), full.sharings.len());
        let line = format!(
            "{name}: {ib} bytes over {is} sharings ({} incremental) vs {fb} bytes over {fs}",
            inc.sharings_incremental()
        );
        if fewer.is_none() && is >= 20 && fs >= 20 && ib < fb {
            fewer = Some(line.clone());
        }
        tried.push(line);
    }
    let mut agreed = 0;
    let mut seed = 0;
    let mut disagreement = None;
    while agreed < 1000 && seed < 50_000 {
        match common::differential(seed) {
            Ok(common::Differential::Agreed(_)) => agreed += 1,
            Ok(common::Differential::NoChance) => {}
            Err(e) => {
                disagreement = Some(e.lines().next().unwrap_or_default().to_owned());
                break;
            }
        }
        seed += 1;
    }
    let failures: Vec<String> = match (fewer, disagreement) {
        (_, Some(d)) => vec![d],
        (None, None) => tried,
        (Some(_), None) if agreed < 1000 => vec![format!("only {agreed} differential programs")],
        (Some(f), None) => {
            return Criterion {
                pass: true,
                detail: format!("{f}; install(incremental) = install(full) on {agreed} random programs"),
            }
        }
    };
    Criterion::new(&failures, String::new())
}

fn termination(rows: &[Row]) -> Criterion {
    let mut failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.report.halted)
        .map(|r| format!("{} {}: did not halt", r.bench.name, label(&r.report)))
        .collect();
    let mut in_flight = 0;
    for seed in 0..10_000 {
        match model::run(seed) {
            Ok(m) => in_flight += (m.in_flight_work > 0) as u32,
            Err(e) => failures.push(e),
        }
    }
    Criterion::new(
        &failures,
        format!(
            "{} runs halted; 10000 token-ring interleavings, {in_flight} with work in flight at a token decision",
            rows.len()
        ),
    )
}

fn single_agent(rows: &[Row], oracles: &[Oracle]) -> Criterion {
    let mut failures = Vec::new();
    let mut runs = 0;
    for row in rows.iter().filter(|r| r.report.config.agents == 1) {
        runs += 1;
        let (r, o) = (&row.report, oracle_of(oracles, row.bench));
        let want = if row.bench.first_solution {
            &o.answers[..1]
        } else {
            &o.answers[..]
        };
        if r.solutions != want || r.output != o.output || !r.sharings.is_empty() {
            failures.push(format!(
                "{} {}: {} sharings",
                row.bench.name,
                label(r),
                r.sharings.len()
            ));
        }
    }
    Criterion::new(
        &failures,
        format!("{runs} single-agent runs match the sequential order with zero sharings"),
    )
}

fn invalidation(oracles: &[Oracle]) -> Criterion {
    let mut failures = Vec::new();
    let (mut runs, mut after) = (0, 0);
    for b in CORPUS.iter().filter(|b| !matches!(b.name, "queens10" | "costas9")) {
        for agents in [2, 4, 8] {
            for strategy in Strategy::ALL {
                let r = run(
                    b,
                    RunConfig {
                        agents,
                        strategy,
                        incremental: true,
                        gc_invalidation_period: Some(1),
                        ..RunConfig::default()
                    },
                );
                runs += 1;
                let o = oracle_of(oracles, b);
                let v = compare_with_oracle(&r, o);
                if !v.pass() || !r.halted {
                    failures.push(format!("{} {}: {v}", b.name, label(&r)));
                }
                if !b.first_solution {
                    if let Err(e) = check_exactly_once(&r, o) {
                        failures.push(format!("{} {}: {e}", b.name, label(&r)));
                    }
                }
                for s in r.sharings.iter().filter(|s| s.after_invalidation) {
                    after += 1;
                    if s.incremental {
                        failures.push(format!(
                            "{} {}: incremental sharing after invalidation",
                            b.name,
                            label(&r)
                        ));
                    }
                }
            }
        }
    }
    Criterion::new(
        &failures,
        format!("{runs} runs, {after} post-invalidation sharings all full"),
    )
}

fn main() -> ExitCode {
    let oracles: Vec<Oracle> = CORPUS
        .iter()
        .map(|b| bench::oracle(b.job().unwrap()).unwrap())
        .collect();
    let rows = matrix();
    let results = [
        (
            "10-Queens = 724 and 9-Costas = 760, each run under 60 s",
            known_counts(&rows),
        ),
        (
            "answer multisets equal the oracle across the matrix",
            multiset(&rows, &oracles),
        ),
        ("every alternative executed exactly once", exactly_once(&rows, &oracles)),
        (
            "order-sensitive output byte-identical under reordering",
            order_sensitive(),
        ),
        (
            "incremental sharing ships fewer bytes and installs the same state",
            incremental_bytes(),
        ),
        ("every run halts; no false termination", termination(&rows)),
        ("one agent reproduces the sequential run", single_agent(&rows, &oracles)),
        (
            "invalidation every sharing keeps counts and forces full copies",
            invalidation(&oracles),
        ),
    ];
    let mut all = true;
    for (i, (what, c)) in results.iter().enumerate() {
        all &= c.pass;
        println!(
            "criterion {}: {} {what}: {}",
            i + 1,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

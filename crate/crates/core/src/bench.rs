//! Benchmark corpus, sequential oracle, verdicts and reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::engine::{Answer, Engine, EngineError, EngineEvent, Execution, Job};
use crate::message::MessageKind;
use crate::parser::{parse_program, parse_query, ParseError};
use crate::run::{run_job, RunConfig, RunError, RunReport};

/// A corpus program and the query that drives it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Benchmark {
    pub name: &'static str,
    /// File under the corpus directory.
    pub file: &'static str,
    pub query: &'static str,
    pub first_solution: bool,
}

pub const CORPUS: [Benchmark; 9] = [
    Benchmark {
        name: "queens8",
        file: "queens.pl",
        query: "queens(8, Qs)",
        first_solution: false,
    },
    Benchmark {
        name: "queens10",
        file: "queens.pl",
        query: "queens(10, Qs)",
        first_solution: false,
    },
    Benchmark {
        name: "costas8",
        file: "costas.pl",
        query: "costas(8, P)",
        first_solution: false,
    },
    Benchmark {
        name: "costas9",
        file: "costas.pl",
        query: "costas(9, P)",
        first_solution: false,
    },
    Benchmark {
        name: "knight",
        file: "knight.pl",
        query: "tour([20,11,0], P)",
        first_solution: false,
    },
    Benchmark {
        name: "hamilton",
        file: "hamilton.pl",
        query: "cycle(P)",
        first_solution: false,
    },
    Benchmark {
        name: "map",
        file: "map.pl",
        query: "colors(C)",
        first_solution: false,
    },
    Benchmark {
        name: "sendmore",
        file: "sendmore.pl",
        query: "puzzle(L)",
        first_solution: true,
    },
    Benchmark {
        name: "stable",
        file: "stable.pl",
        query: "stable(M)",
        first_solution: false,
    },
];

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

pub fn benchmark(name: &str) -> Option<&'static Benchmark> {
    CORPUS.iter().find(|b| b.name == name)
}

impl Benchmark {
    pub fn path(&self) -> PathBuf {
        corpus_dir().join(self.file)
    }

    pub fn job(&self) -> Result<Arc<Job>, BenchError> {
        load_job(&self.path(), self.query)
    }

    /// `run` with this benchmark's solution mode.
    pub fn config(&self, run: RunConfig) -> BenchConfig {
        BenchConfig {
            name: self.name.to_owned(),
            program: self.path(),
            query: self.query.to_owned(),
            run: RunConfig {
                first_solution: self.first_solution,
                ..run
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("query: {0}")]
    Query(ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Run(#[from] RunError),
}

pub fn load_job(path: &Path, query: &str) -> Result<Arc<Job>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })?;
    let program = parse_program(&text).map_err(|source| BenchError::Parse {
        path: path.to_owned(),
        source,
    })?;
    let query = parse_query(query).map_err(BenchError::Query)?;
    Ok(Job::new(Arc::new(program), query))
}

/// A run of one program and query.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Label used in reports.
    pub name: String,
    pub program: PathBuf,
    pub query: String,
    pub run: RunConfig,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub name: String,
    pub run: RunReport,
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let job = load_job(&cfg.program, &cfg.query)?;
    Ok(BenchReport {
        name: cfg.name.clone(),
        run: run_job(job, &cfg.run)?,
    })
}

/// What a plain sequential execution observes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Oracle {
    pub answers: Vec<Answer>,
    pub output: String,
    /// Alternatives executed.
    pub executions: u64,
}

/// Runs the job to exhaustion on one engine.
pub fn oracle(job: Arc<Job>) -> Result<Oracle, EngineError> {
    let mut engine = Engine::new(job, 0);
    let mut answers = Vec::new();
    let mut output = String::new();
    loop {
        match engine.run()? {
            EngineEvent::Solution(a) => answers.push(a),
            EngineEvent::SideEffect(text) => output.push_str(&text),
            EngineEvent::PollPoint(_) => {}
            EngineEvent::Exhausted => break,
        }
    }
    Ok(Oracle {
        answers,
        output,
        executions: engine.alternatives_run(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    /// Found `extra` more times than the oracle finds it.
    Duplicated {
        answer: Answer,
        extra: usize,
    },
    Missing(Answer),
    Unexpected(Answer),
    /// Single-agent runs must also keep the oracle's order.
    Order {
        index: usize,
    },
    Output {
        position: usize,
        expected: String,
        found: String,
    },
    NoSolution,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Duplicated { answer, extra } => write!(f, "duplicated answer ({extra} extra): {answer}"),
            Mismatch::Missing(a) => write!(f, "missing answer: {a}"),
            Mismatch::Unexpected(a) => write!(f, "unexpected answer: {a}"),
            Mismatch::Order { index } => write!(f, "answer {index} out of order"),
            Mismatch::Output {
                position,
                expected,
                found,
            } => write!(
                f,
                "output diverges at byte {position}: expected {expected:?}, found {found:?}"
            ),
            Mismatch::NoSolution => f.write_str("no solution found"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub mismatches: Vec<Mismatch>,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass() {
            return f.write_str("pass");
        }
        write!(f, "fail")?;
        for m in &self.mismatches {
            write!(f, "\n  {m}")?;
        }
        Ok(())
    }
}

/// Byte offset of the first difference, if any.
pub fn first_divergence(expected: &str, found: &str) -> Option<usize> {
    let (a, b) = (expected.as_bytes(), found.as_bytes());
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

fn counts(answers: &[Answer]) -> BTreeMap<&Answer, usize> {
    let mut m = BTreeMap::new();
    for a in answers {
        *m.entry(a).or_insert(0) += 1;
    }
    m
}

fn excerpt(s: &str, at: usize) -> String {
    let b = &s.as_bytes()[at.min(s.len())..];
    String::from_utf8_lossy(&b[..b.len().min(40)]).into_owned()
}

/// Compares a run with the oracle of the same program and query.
pub fn compare_with_oracle(report: &RunReport, oracle: &Oracle) -> Verdict {
    let mut mismatches = Vec::new();
    let want = counts(&oracle.answers);
    let got = counts(&report.solutions);
    if report.config.first_solution {
        if report.solutions.is_empty() && !oracle.answers.is_empty() {
            mismatches.push(Mismatch::NoSolution);
        }
        for (a, _) in got.iter().filter(|(a, _)| !want.contains_key(*a)) {
            mismatches.push(Mismatch::Unexpected((*a).clone()));
        }
        return Verdict { mismatches };
    }
    for (a, &n) in &got {
        match want.get(a) {
            None => mismatches.push(Mismatch::Unexpected((*a).clone())),
            Some(&m) if n > m => mismatches.push(Mismatch::Duplicated {
                answer: (*a).clone(),
                extra: n - m,
            }),
            _ => {}
        }
    }
    for (a, &m) in &want {
        if got.get(a).copied().unwrap_or(0) < m {
            mismatches.push(Mismatch::Missing((*a).clone()));
        }
    }
    let ordered = report.config.agents == 1;
    if ordered && mismatches.is_empty() {
        if let Some(index) = report.solutions.iter().zip(&oracle.answers).position(|(a, b)| a != b) {
            mismatches.push(Mismatch::Order { index });
        }
    }
    if ordered || report.config.osc {
        if let Some(position) = first_divergence(&oracle.output, &report.output) {
            mismatches.push(Mismatch::Output {
                position,
                expected: excerpt(&oracle.output, position),
                found: excerpt(&report.output, position),
            });
        }
    }
    Verdict { mismatches }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerError {
    pub duplicates: Vec<Execution>,
    pub expected: u64,
    pub executed: u64,
}

impl fmt::Display for LedgerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} alternatives executed, {} expected, {} duplicated",
            self.executed,
            self.expected,
            self.duplicates.len()
        )
    }
}

/// Every alternative the oracle runs must be run once by some agent. The
/// run must have recorded its executions.
pub fn check_exactly_once(report: &RunReport, oracle: &Oracle) -> Result<(), LedgerError> {
    let mut seen = HashSet::new();
    let duplicates: Vec<Execution> = report
        .executions
        .iter()
        .filter(|e| !seen.insert(**e))
        .copied()
        .collect();
    let executed = report.executions.len() as u64;
    if duplicates.is_empty() && executed == oracle.executions {
        Ok(())
    } else {
        Err(LedgerError {
            duplicates,
            expected: oracle.executions,
            executed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Text,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Format, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "text" => Ok(Format::Text),
            _ => Err(format!("unknown format {s:?}")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "benchmark",
    "agents",
    "policy",
    "strategy",
    "incremental",
    "solutions",
    "messages_total",
    "bytes_total",
    "sharings_full",
    "sharings_incremental",
    "wall_ms",
    "seed",
];

fn csv_row(r: &BenchReport) -> [String; 12] {
    let c = &r.run.config;
    [
        r.name.clone(),
        c.agents.to_string(),
        c.policy.to_string(),
        c.split_spec().strategy.to_string(),
        c.incremental.to_string(),
        r.run.solution_count().to_string(),
        r.run.stats.messages_total().to_string(),
        r.run.stats.bytes_total().to_string(),
        r.run.sharings_full().to_string(),
        r.run.sharings_incremental().to_string(),
        r.run.wall.as_millis().to_string(),
        c.seed.to_string(),
    ]
}

pub fn emit_report(reports: &[BenchReport], format: Format, out: impl Write) -> io::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for r in reports {
                w.write_record(csv_row(r))?;
            }
            w.flush()
        }
        Format::Text => {
            let mut out = out;
            for r in reports {
                write_text(r, &mut out)?;
            }
            Ok(())
        }
    }
}

fn write_text(r: &BenchReport, out: &mut impl Write) -> io::Result<()> {
    let run = &r.run;
    let c = &run.config;
    writeln!(
        out,
        "{}: {} agents, {}, {}, incremental {}, osc {}, seed {}",
        r.name,
        c.agents,
        c.policy,
        c.split_spec().strategy,
        c.incremental,
        c.osc,
        c.seed
    )?;
    writeln!(out, "  solutions  {}", run.solution_count())?;
    writeln!(
        out,
        "  sharings   {} full, {} incremental, {} + {} payload bytes",
        run.sharings_full(),
        run.sharings_incremental(),
        run.share_bytes(false),
        run.share_bytes(true)
    )?;
    let alts: Vec<String> = run.alternatives.iter().map(u64::to_string).collect();
    writeln!(out, "  alternatives per agent  {}", alts.join(" "))?;
    for kind in MessageKind::ALL {
        let k = run.stats.get(kind);
        if k.messages > 0 {
            writeln!(
                out,
                "  {:<20} {:>8} msgs {:>10} bytes",
                kind.name(),
                k.messages,
                k.bytes
            )?;
        }
    }
    writeln!(
        out,
        "  total      {} msgs, {} bytes, {} ms, halted {}",
        run.stats.messages_total(),
        run.stats.bytes_total(),
        run.wall.as_millis(),
        run.halted
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::RunConfig;
    use std::time::Duration;

    fn answer(v: &str) -> Answer {
        Answer(vec![("X".into(), v.into())])
    }

    fn report(solutions: &[&str], output: &str, agents: u32, osc: bool) -> RunReport {
        RunReport {
            config: RunConfig {
                agents,
                osc,
                ..RunConfig::default()
            },
            solutions: solutions.iter().map(|s| answer(s)).collect(),
            output: output.into(),
            stats: Default::default(),
            sharings: Vec::new(),
            alternatives: vec![0; agents as usize],
            executions: Vec::new(),
            halted: true,
            wall: Duration::ZERO,
        }
    }

    fn oracle_of(solutions: &[&str], output: &str) -> Oracle {
        Oracle {
            answers: solutions.iter().map(|s| answer(s)).collect(),
            output: output.into(),
            executions: 0,
        }
    }

    #[test]
    fn same_multiset_passes() {
        let o = oracle_of(&["1", "2", "3"], "");
        assert!(compare_with_oracle(&report(&["3", "1", "2"], "", 4, false), &o).pass());
    }

    #[test]
    fn duplicate_is_named() {
        let o = oracle_of(&["1", "2"], "");
        let v = compare_with_oracle(&report(&["1", "2", "2"], "", 4, false), &o);
        assert_eq!(
            v.mismatches,
            vec![Mismatch::Duplicated {
                answer: answer("2"),
                extra: 1
            }]
        );
    }

    #[test]
    fn missing_and_unexpected() {
        let o = oracle_of(&["1", "2"], "");
        let v = compare_with_oracle(&report(&["1", "5"], "", 2, false), &o);
        assert_eq!(
            v.mismatches,
            vec![Mismatch::Unexpected(answer("5")), Mismatch::Missing(answer("2"))]
        );
    }

    #[test]
    fn single_agent_keeps_order() {
        let o = oracle_of(&["1", "2"], "");
        let v = compare_with_oracle(&report(&["2", "1"], "", 1, false), &o);
        assert_eq!(v.mismatches, vec![Mismatch::Order { index: 0 }]);
    }

    #[test]
    fn osc_output_divergence_position() {
        let o = oracle_of(&[], "abcdef");
        let v = compare_with_oracle(&report(&[], "abXdef", 4, true), &o);
        assert!(matches!(v.mismatches[..], [Mismatch::Output { position: 2, .. }]));
        // Without order-sensitivity the output is not compared.
        assert!(compare_with_oracle(&report(&[], "abXdef", 4, false), &o).pass());
    }

    /// Naive diff: walk both strings with explicit indices.
    fn diff_oracle(a: &str, b: &str) -> Option<usize> {
        let (a, b) = (a.as_bytes(), b.as_bytes());
        let mut i = 0;
        loop {
            match (a.get(i), b.get(i)) {
                (None, None) => return None,
                (Some(x), Some(y)) if x == y => i += 1,
                _ => return Some(i),
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn divergence_matches_naive(a in "[ab\n]{0,12}", b in "[ab\n]{0,12}") {
            proptest::prop_assert_eq!(first_divergence(&a, &b), diff_oracle(&a, &b));
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_report() {
        let rs: Vec<BenchReport> = (0..3)
            .map(|i| BenchReport {
                name: format!("b{i}"),
                run: report(&["1"], "", 2, false),
            })
            .collect();
        let mut out = Vec::new();
        emit_report(&rs[..1], Format::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        let mut out = Vec::new();
        emit_report(&rs, Format::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .nth(3)
            .unwrap()
            .starts_with("b2,2,bottom_most,vertical_block,true,1,"));
    }

    #[test]
    fn text_lists_alternatives_per_agent() {
        let mut r = report(&["1"], "", 3, false);
        r.alternatives = vec![7, 8, 9];
        let mut out = Vec::new();
        emit_report(
            &[BenchReport {
                name: "x".into(),
                run: r,
            }],
            Format::Text,
            &mut out,
        )
        .unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .contains("alternatives per agent  7 8 9"));
    }

    #[test]
    fn corpus_files_exist() {
        for b in CORPUS {
            assert!(b.job().is_ok(), "{}", b.name);
        }
    }
}

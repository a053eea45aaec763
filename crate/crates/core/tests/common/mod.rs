#![allow(dead_code)]

use std::sync::Arc;

use orsplit::engine::{Engine, EngineEvent, Job};
use orsplit::parser::{parse_program, parse_query};
use orsplit::splitting::{
    build_share_payload, find_common_frontier, install_payload, label_parallel_choicepoints, SplitSpec, Strategy,
};
use orsplit::term::Term;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random program over small integers: two fact tables, then rules that
/// join lower predicates, and a query on the top one.
pub fn random_program(rng: &mut ChaCha8Rng) -> (String, String) {
    let mut text = String::new();
    let preds = rng.gen_range(3..7);
    let mut parallel = Vec::new();
    for p in 0..preds {
        if rng.gen_bool(0.6) {
            parallel.push(format!("p{p}/2"));
        }
    }
    if !parallel.is_empty() {
        text.push_str(&format!(":- parallel {}.\n", parallel.join(", ")));
    }
    for p in 0..2 {
        for _ in 0..rng.gen_range(1..5) {
            text.push_str(&format!("p{p}({}, {}).\n", rng.gen_range(0..4), rng.gen_range(0..4)));
        }
    }
    for p in 2..preds {
        for _ in 0..rng.gen_range(1..4) {
            let a = rng.gen_range(0..p);
            let b = rng.gen_range(0..p);
            let body = match rng.gen_range(0..4) {
                0 => format!("p{a}(X, Z), p{b}(Z, Y)"),
                1 => format!("p{a}(X, Y), p{b}(Y, Z), Z \\== X"),
                2 => format!("p{a}(X, Z), Y is Z + 1"),
                _ => format!("p{a}(X, Y), p{b}(X, W), W =< Y"),
            };
            text.push_str(&format!("p{p}(X, Y) :- {body}.\n"));
        }
    }
    (text, format!("p{}(A, B)", preds - 1))
}

pub fn job_of(text: &str, query: &str) -> Arc<Job> {
    Job::new(Arc::new(parse_program(text).unwrap()), parse_query(query).unwrap())
}

/// Steps `e` through `polls` poll points; false once it has run dry.
pub fn advance(e: &mut Engine, polls: u32) -> bool {
    let mut seen = 0;
    while seen < polls {
        match e.run().unwrap() {
            EngineEvent::PollPoint(_) => seen += 1,
            EngineEvent::Exhausted => return false,
            _ => {}
        }
    }
    true
}

/// Runs `e` dry, returning its answers, output and executed alternatives.
pub fn drain(e: &mut Engine) -> (Vec<String>, String, Vec<orsplit::engine::Execution>) {
    let mut answers = Vec::new();
    let mut output = String::new();
    loop {
        match e.run().unwrap() {
            EngineEvent::Solution(a) => answers.push(a.to_string()),
            EngineEvent::SideEffect(t) => output.push_str(&t),
            EngineEvent::PollPoint(_) => {}
            EngineEvent::Exhausted => break,
        }
    }
    (answers, output, e.take_executions())
}

/// Everything observable about a stack: choice-points with their goals and
/// next-clause fields, labels, and every heap cell under current bindings.
pub fn snapshot(e: &Engine) -> String {
    let mut s = String::new();
    for cp in e.choicepoints() {
        s.push_str(&format!(
            "{:?} {} {:?} h{} t{} {:?} {:?}\n",
            cp.id,
            cp.parallel,
            cp.par_index,
            cp.heap_mark,
            cp.trail_mark,
            cp.next,
            e.goal_term(&cp.call)
        ));
    }
    s.push_str(&format!("labels {:?}\n", e.labels().labels()));
    s.push_str(&format!("trail {}\n", e.trail_len()));
    for v in 0..e.heap_len() {
        s.push_str(&format!("{:?} ", e.resolve(&Term::Var(v as u32))));
    }
    s
}

pub enum Differential {
    /// Incremental and full installation agreed; true if the first payload
    /// really was incremental.
    Agreed(bool),
    /// The program never offered an incremental share.
    NoChance,
}

/// Shares from a giver to an idle receiver, lets the receiver run dry,
/// then shares again both incrementally and by full copy and checks that
/// the two receivers are the same.
pub fn differential(seed: u64) -> Result<Differential, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (text, query) = random_program(&mut rng);
    let job = job_of(&text, &query);
    let spec = SplitSpec {
        strategy: Strategy::ALL[rng.gen_range(0..3)],
        ratio: [0.25, 0.5, 0.75][rng.gen_range(0..3)],
        top_most: rng.gen_bool(0.2),
    };
    let mut giver = Engine::new(Arc::clone(&job), 0);
    giver.set_poll_interval(1);
    let mut receiver = Engine::idle(Arc::clone(&job), 1);
    receiver.set_poll_interval(1);
    receiver.record_executions(true);

    let mut shared = false;
    for _ in 0..20 {
        if !advance(&mut giver, rng.gen_range(0..4)) {
            return Ok(Differential::NoChance);
        }
        label_parallel_choicepoints(&mut giver);
        if let Some(p) = build_share_payload(&mut giver, None, spec, false).map_err(|e| e.to_string())? {
            install_payload(&mut receiver, &p).map_err(|e| e.to_string())?;
            shared = true;
            break;
        }
    }
    if !shared {
        return Ok(Differential::NoChance);
    }
    drain(&mut receiver);

    for _ in 0..20 {
        if !advance(&mut giver, rng.gen_range(0..4)) {
            return Ok(Differential::NoChance);
        }
        label_parallel_choicepoints(&mut giver);
        let Some(common) = find_common_frontier(giver.labels().labels(), receiver.labels().labels()) else {
            continue;
        };
        let mut g_inc = giver.clone();
        let mut g_full = giver.clone();
        let inc = build_share_payload(&mut g_inc, Some(common), spec, true).map_err(|e| e.to_string())?;
        let full = build_share_payload(&mut g_full, None, spec, false).map_err(|e| e.to_string())?;
        let (inc, full) = match (inc, full) {
            (Some(i), Some(f)) => (i, f),
            (None, None) => continue,
            _ => return Err(format!("seed {seed}: only one mode produced a share")),
        };
        if snapshot(&g_inc) != snapshot(&g_full) {
            return Err(format!("seed {seed}: givers differ after the split"));
        }
        let mut r_inc = receiver.clone();
        let mut r_full = receiver.clone();
        install_payload(&mut r_inc, &inc).map_err(|e| format!("seed {seed}: incremental: {e}"))?;
        install_payload(&mut r_full, &full).map_err(|e| format!("seed {seed}: full: {e}"))?;
        let (a, b) = (snapshot(&r_inc), snapshot(&r_full));
        if a != b {
            return Err(format!(
                "seed {seed}: receivers differ\n{text}\n--- incremental\n{a}\n--- full\n{b}"
            ));
        }
        r_inc.take_executions();
        r_full.take_executions();
        if drain(&mut r_inc) != drain(&mut r_full) {
            return Err(format!("seed {seed}: receivers behave differently"));
        }
        return Ok(Differential::Agreed(inc.is_incremental()));
    }
    Ok(Differential::NoChance)
}

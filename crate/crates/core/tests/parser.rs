mod common;

use orsplit::bench::{corpus_dir, CORPUS};
use orsplit::engine::run_sequential;
use orsplit::parser::{parse_program, parse_query};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Printing then parsing again reaches a fixpoint after one round.
fn round_trips(text: &str) -> Result<(), String> {
    let once = parse_program(text).map_err(|e| e.to_string())?.to_string();
    let twice = parse_program(&once).map_err(|e| format!("{e}\n{once}"))?.to_string();
    if once == twice {
        Ok(())
    } else {
        Err(format!("print is not a fixpoint:\n{once}\n---\n{twice}"))
    }
}

#[test]
fn corpus_prints_and_parses_back() {
    for b in &CORPUS {
        let text = std::fs::read_to_string(corpus_dir().join(b.file)).unwrap();
        round_trips(&text).unwrap_or_else(|e| panic!("{}: {e}", b.file));
    }
}

#[test]
fn printed_program_has_the_same_answers() {
    let b = orsplit::bench::benchmark("map").unwrap();
    let text = std::fs::read_to_string(b.path()).unwrap();
    let printed = parse_program(&text).unwrap().to_string();
    let run = |t: &str| run_sequential(common::job_of(t, b.query), None).unwrap();
    let (a, p) = (run(&text), run(&printed));
    assert_eq!(a.answers, p.answers);
    assert_eq!(a.output, p.output);
}

#[test]
fn query_prints_its_source_variables() {
    let q = parse_query("tour([20, 11, 0], P), Q = f(P, 'a b')").unwrap();
    assert_eq!(parse_query(&q.to_string()).unwrap().to_string(), q.to_string());
    assert!(q.to_string().contains('P'));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn random_programs_round_trip(seed in any::<u64>()) {
        let (text, _) = common::random_program(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(round_trips(&text).is_ok(), "{}", round_trips(&text).unwrap_err());
    }
}

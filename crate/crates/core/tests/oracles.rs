//! Independent oracles checked against the engine and the splitting rules.

use std::collections::BTreeSet;
use std::sync::Arc;

use orsplit::bench::benchmark;
use orsplit::engine::run_sequential;
use orsplit::splitting::{block_keep_count, find_common_frontier, Label};
use proptest::prelude::*;

/// Every permutation of 0..n, by plain recursion.
fn permutations(n: usize) -> Vec<Vec<i64>> {
    fn go(n: usize, cur: &mut Vec<i64>, used: &mut Vec<bool>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                cur.push(v as i64 + 1);
                go(n, cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(n, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn is_queens(p: &[i64]) -> bool {
    (0..p.len()).all(|i| (i + 1..p.len()).all(|j| (p[i] - p[j]).abs() != (j - i) as i64))
}

fn is_costas(p: &[i64]) -> bool {
    let mut seen = BTreeSet::new();
    for d in 1..p.len() {
        for i in 0..p.len() - d {
            if !seen.insert((d, p[i + d] - p[i])) {
                return false;
            }
        }
    }
    true
}

/// Integers of the single list in an answer such as `Qs = [2, 4, 1, 3]`.
fn list_of(answer: &str) -> Vec<i64> {
    let inner = answer.split('[').nth(1).unwrap().trim_end_matches(']');
    inner.split(',').map(|x| x.trim().parse().unwrap()).collect()
}

#[test]
fn eight_queens_brute_force_is_92() {
    let brute: BTreeSet<Vec<i64>> = permutations(8).into_iter().filter(|p| is_queens(p)).collect();
    assert_eq!(brute.len(), 92);
    let job = benchmark("queens8").unwrap().job().unwrap();
    let seq = run_sequential(job, None).unwrap();
    let found: BTreeSet<Vec<i64>> = seq.answers.iter().map(|a| list_of(&a.to_string())).collect();
    assert_eq!(seq.answers.len(), 92);
    // The program lists the last placed queen first.
    let reversed: BTreeSet<Vec<i64>> = found
        .into_iter()
        .map(|mut v| {
            v.reverse();
            v
        })
        .collect();
    assert_eq!(reversed, brute);
}

#[test]
fn small_costas_orders_match_brute_force() {
    let src = benchmark("costas8").unwrap();
    for n in 4..=7 {
        let brute: BTreeSet<Vec<i64>> = permutations(n).into_iter().filter(|p| is_costas(p)).collect();
        let job = orsplit::bench::load_job(&src.path(), &format!("costas({n}, P)")).unwrap();
        let seq = run_sequential(Arc::clone(&job), None).unwrap();
        let found: BTreeSet<Vec<i64>> = seq
            .answers
            .iter()
            .map(|a| {
                let mut v = list_of(&a.to_string());
                v.reverse();
                v
            })
            .collect();
        assert_eq!(seq.answers.len(), brute.len(), "order {n}");
        assert_eq!(found, brute, "order {n}");
    }
}

#[test]
fn block_count_matches_ceiling() {
    // ceil(0.75 * 8) in integers.
    assert_eq!(block_keep_count(8, 0.75), (3 * 8usize).div_ceil(4));
    for n in 2..40usize {
        for (num, den) in [(1usize, 4usize), (1, 2), (3, 4)] {
            let ceil = (num * n).div_ceil(den);
            assert_eq!(block_keep_count(n, num as f64 / den as f64), ceil.clamp(1, n - 1));
        }
    }
}

/// Longest common prefix of two label stacks, compared field by field.
fn lcp_oracle(a: &[Label], b: &[Label]) -> Option<Label> {
    let mut last = None;
    for i in 0..a.len().min(b.len()) {
        if a[i].rank != b[i].rank || a[i].counter != b[i].counter || a[i].cp_index != b[i].cp_index {
            break;
        }
        last = Some(a[i]);
    }
    last
}

fn stack() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec((0u32..3, 1u64..4), 0..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (rank, counter))| Label {
                rank,
                counter,
                cp_index: i as u32,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn common_frontier_is_lcp(shared in stack(), a in stack(), b in stack()) {
        let extend = |tail: &[Label]| -> Vec<Label> {
            let mut s = shared.clone();
            for l in tail {
                s.push(Label { cp_index: s.len() as u32, ..*l });
            }
            s
        };
        let (ga, gb) = (extend(&a), extend(&b));
        prop_assert_eq!(find_common_frontier(&ga, &gb), lcp_oracle(&ga, &gb));
    }
}

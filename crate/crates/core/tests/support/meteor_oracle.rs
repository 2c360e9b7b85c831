//! Brute-force METEOR used as a test oracle.
//!
//! Enumerates every one-to-one matching allowed in a stage, keeps those of
//! maximum size, and picks the one with the fewest crossings against
//! everything aligned so far; ties go to the lexicographically smallest
//! sorted pair list. Stems come from a frozen table produced by an
//! independent Porter implementation, never from the code under test.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::OnceLock;

pub type Pair = (usize, usize);

/// Ten text pairs covering repeats, stems, reordering, punctuation and
/// empty input.
pub const REGRESSION_PAIRS: [(&str, &str); 10] = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("sat cat the", "the cat sat"),
    ("the dogs were running in the park", "a dog runs in the park"),
    ("I would rather bury the nets than bury you", "I'd rather bury you than the nets"),
    ("cats chase the cat", "the cat chases cats"),
    ("nothing in common here", "completely different words"),
    ("", "the reference only"),
    ("jumped jumping jumps", "jump jumps jumped"),
    ("the the the cat", "cat the the"),
    ("Hello, world! It's a fine day.", "a fine day, hello world"),
];

fn stem_table() -> &'static HashMap<&'static str, &'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../data/porter_reference.tsv")
            .lines()
            .map(|l| l.split_once('\t').expect("word<TAB>stem"))
            .collect()
    })
}

/// Reference stem. Tokens of two letters or fewer, or with anything but
/// lowercase ASCII letters, are never stemmed.
pub fn ref_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_owned();
    }
    match stem_table().get(word) {
        Some(s) => (*s).to_owned(),
        None => panic!("no reference stem for {word:?}; extend tests/data/porter_reference.tsv"),
    }
}

/// Lowercase, strip surrounding punctuation, drop empties.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn crossings(pairs: &[Pair]) -> usize {
    let mut n = 0;
    for (k, a) in pairs.iter().enumerate() {
        for b in &pairs[k + 1..] {
            if (a.0 < b.0 && a.1 > b.1) || (a.0 > b.0 && a.1 < b.1) {
                n += 1;
            }
        }
    }
    n
}

/// Every one-to-one matching using only `allowed(i, j)` edges between open
/// positions.
fn all_matchings(n: usize, m: usize, allowed: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<Pair>> {
    fn go(
        i: usize,
        n: usize,
        m: usize,
        allowed: &dyn Fn(usize, usize) -> bool,
        used: &mut Vec<bool>,
        cur: &mut Vec<Pair>,
        out: &mut Vec<Vec<Pair>>,
    ) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        go(i + 1, n, m, allowed, used, cur, out);
        for j in 0..m {
            if !used[j] && allowed(i, j) {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, n, m, allowed, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, m, allowed, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

fn best_stage(candidates: Vec<Vec<Pair>>, fixed: &[Pair]) -> Vec<Pair> {
    let max = candidates.iter().map(Vec::len).max().unwrap_or(0);
    candidates
        .into_iter()
        .filter(|c| c.len() == max)
        .map(|c| {
            let mut all: Vec<Pair> = fixed.iter().copied().chain(c.iter().copied()).collect();
            all.sort_unstable();
            (crossings(&all), all, c)
        })
        .min_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)))
        .map(|(_, _, c)| c)
        .unwrap_or_default()
}

/// Oracle alignment, sorted by candidate index.
pub fn brute_align(cand: &[String], refs: &[String]) -> Vec<Pair> {
    let exact = all_matchings(cand.len(), refs.len(), &|i, j| cand[i] == refs[j]);
    let stage1 = best_stage(exact, &[]);

    let cand_free: Vec<bool> = (0..cand.len()).map(|i| !stage1.iter().any(|p| p.0 == i)).collect();
    let ref_free: Vec<bool> = (0..refs.len()).map(|j| !stage1.iter().any(|p| p.1 == j)).collect();
    let cstem: Vec<String> = cand.iter().map(|t| ref_stem(t)).collect();
    let rstem: Vec<String> = refs.iter().map(|t| ref_stem(t)).collect();
    let stem = all_matchings(cand.len(), refs.len(), &|i, j| cand_free[i] && ref_free[j] && cstem[i] == rstem[j]);
    let stage2 = best_stage(stem, &stage1);

    let mut all: Vec<Pair> = stage1.into_iter().chain(stage2).collect();
    all.sort_unstable();
    all
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScore {
    pub matches: usize,
    pub chunks: usize,
    pub score: f64,
}

pub fn brute_score(cand: &[String], refs: &[String]) -> OracleScore {
    let pairs = brute_align(cand, refs);
    let m = pairs.len();
    if m == 0 {
        return OracleScore { matches: 0, chunks: 0, score: 0.0 };
    }
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refs.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    OracleScore { matches: m, chunks, score: f_mean * (1.0 - penalty) }
}

/// All sequences over `alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for tok in alphabet {
                let mut s = seq.clone();
                s.push((*tok).to_owned());
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

//! METEOR with exact and Porter-stem matching stages, using the original
//! parameterization: recall-weighted harmonic mean `10PR / (R + 9P)` and
//! fragmentation penalty `0.5 * (chunks / matches)^3`.
//!
//! Alignment: in each stage, among the matchings of maximum size choose the
//! one with the fewest crossing pairs, counting crossings against pairs
//! fixed by earlier stages; remaining ties go to the lexicographically
//! smallest pair list sorted by candidate index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::porter::stem;
use crate::tokenize::metric_tokens;

/// Upper bound on complete assignments examined by the exact search in one
/// stage. Beyond it the stage falls back to coordinate descent.
const EXACT_SEARCH_LIMIT: u64 = 200_000;
/// Classes with more options than this are not searched at all in the
/// fallback path.
const DESCENT_CLASS_LIMIT: u64 = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStage {
    Exact,
    Stem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub candidate: usize,
    pub reference: usize,
    pub stage: MatchStage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    /// Sorted by candidate index.
    pub pairs: Vec<AlignedPair>,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn crossings(&self) -> usize {
        let pairs: Vec<(usize, usize)> = self.pairs.iter().map(|p| (p.candidate, p.reference)).collect();
        count_crossings(&pairs)
    }

    /// Maximal runs of pairs adjacent in both candidate and reference.
    pub fn chunks(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        1 + self
            .pairs
            .windows(2)
            .filter(|w| !(w[1].candidate == w[0].candidate + 1 && w[1].reference == w[0].reference + 1))
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeteorScore {
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub matches: usize,
    pub chunks: usize,
    pub penalty: f64,
    pub score: f64,
}

fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 < b.0 && a.1 > b.1) || (a.0 > b.0 && a.1 < b.1)
}

fn count_crossings(pairs: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for (i, &a) in pairs.iter().enumerate() {
        n += pairs[i + 1..].iter().filter(|&&b| crosses(a, b)).count();
    }
    n
}

fn crossings_between(new: &[(usize, usize)], existing: &[(usize, usize)]) -> usize {
    new.iter().map(|&a| existing.iter().filter(|&&b| crosses(a, b)).count()).sum()
}

/// Tokens sharing a match key: `candidate` and `reference` positions, ascending.
#[derive(Debug)]
struct MatchClass {
    candidate: Vec<usize>,
    reference: Vec<usize>,
}

impl MatchClass {
    /// Every way to pair the smaller side, in order, with a subset of the
    /// larger side. Pairing in order is never worse: swapping partners of
    /// two crossed same-class pairs removes their crossing and cannot add
    /// crossings with any other pair.
    fn options(&self) -> Vec<Vec<(usize, usize)>> {
        let (small, large, cand_small) = if self.candidate.len() <= self.reference.len() {
            (&self.candidate, &self.reference, true)
        } else {
            (&self.reference, &self.candidate, false)
        };
        let mut out = Vec::new();
        let mut chosen = Vec::with_capacity(small.len());
        combinations(large.len(), small.len(), 0, &mut chosen, &mut |subset| {
            let pairs = small
                .iter()
                .zip(subset.iter().map(|&i| large[i]))
                .map(|(&s, l)| if cand_small { (s, l) } else { (l, s) })
                .collect();
            out.push(pairs);
        });
        out
    }

    fn leftmost_option(&self) -> Vec<(usize, usize)> {
        let n = self.candidate.len().min(self.reference.len());
        self.candidate[..n].iter().copied().zip(self.reference[..n].iter().copied()).collect()
    }

    fn option_count(&self) -> u64 {
        let (a, b) = (self.candidate.len() as u64, self.reference.len() as u64);
        binomial(a.max(b), a.min(b))
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn combinations(n: usize, k: usize, start: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    let remaining = k - chosen.len();
    for i in start..=n - remaining {
        chosen.push(i);
        combinations(n, k, i + 1, chosen, f);
        chosen.pop();
    }
}

fn sorted(mut pairs: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    pairs.sort_unstable();
    pairs
}

/// Chooses one option per class so that, together with `fixed`, the
/// matching has the fewest crossings, breaking ties lexicographically.
fn best_stage_matching(classes: &[MatchClass], fixed: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut base: Vec<(usize, usize)> = fixed.to_vec();
    let mut open: Vec<&MatchClass> = Vec::new();
    for class in classes {
        if class.candidate.len() == class.reference.len() {
            base.extend(class.candidate.iter().copied().zip(class.reference.iter().copied()));
        } else if !class.candidate.is_empty() && !class.reference.is_empty() {
            open.push(class);
        }
    }
    let total = open.iter().fold(1u64, |acc, c| acc.saturating_mul(c.option_count()));
    let choice_classes: Vec<Vec<Vec<(usize, usize)>>> = if total <= EXACT_SEARCH_LIMIT {
        open.iter().map(|c| c.options()).collect()
    } else {
        // too many combinations: classes that are large on their own are
        // pinned to their leftmost option, the rest go to local search
        let mut searchable = Vec::new();
        for class in open {
            if class.option_count() > DESCENT_CLASS_LIMIT {
                base.extend(class.leftmost_option());
            } else {
                searchable.push(class.options());
            }
        }
        searchable
    };
    let chosen = if total <= EXACT_SEARCH_LIMIT {
        exact_search(&choice_classes, &base)
    } else {
        descent_search(&choice_classes, &base)
    };
    let mut all = base[fixed.len()..].to_vec();
    for (class, &pick) in choice_classes.iter().zip(&chosen) {
        all.extend_from_slice(&class[pick]);
    }
    sorted(all)
}

fn key_of(base: &[(usize, usize)], classes: &[Vec<Vec<(usize, usize)>>], picks: &[usize]) -> (usize, Vec<(usize, usize)>) {
    let mut all = base.to_vec();
    for (class, &p) in classes.iter().zip(picks) {
        all.extend_from_slice(&class[p]);
    }
    let crossings = count_crossings(&all);
    (crossings, sorted(all))
}

type Pairs = Vec<(usize, usize)>;
type KeyFn = fn(&str) -> String;

fn exact_search(classes: &[Vec<Vec<(usize, usize)>>], base: &[(usize, usize)]) -> Vec<usize> {
    struct Search<'a> {
        classes: &'a [Vec<Vec<(usize, usize)>>],
        base: &'a [(usize, usize)],
        // (crossings, sorted pairs, picks)
        best: Option<(usize, Pairs, Vec<usize>)>,
    }

    impl Search<'_> {
        fn go(&mut self, depth: usize, placed: &mut Vec<(usize, usize)>, crossings: usize, picks: &mut Vec<usize>) {
            if let Some((best, ..)) = &self.best {
                if crossings > *best {
                    return;
                }
            }
            if depth == self.classes.len() {
                let list = sorted(placed.clone());
                let better = match &self.best {
                    None => true,
                    Some((c, l, _)) => (crossings, &list) < (*c, l),
                };
                if better {
                    self.best = Some((crossings, list, picks.clone()));
                }
                return;
            }
            for (i, option) in self.classes[depth].iter().enumerate() {
                let added = crossings_between(option, placed) + count_crossings(option);
                let mark = placed.len();
                placed.extend_from_slice(option);
                picks.push(i);
                self.go(depth + 1, placed, crossings + added, picks);
                picks.pop();
                placed.truncate(mark);
            }
        }
    }

    let mut search = Search { classes, base, best: None };
    let mut placed = search.base.to_vec();
    let start = count_crossings(&placed);
    search.go(0, &mut placed, start, &mut Vec::new());
    search.best.map(|(_, _, picks)| picks).unwrap_or_default()
}

/// Local search for inputs too large to enumerate: repeatedly re-pick each
/// class's option given the others until nothing improves.
fn descent_search(classes: &[Vec<Vec<(usize, usize)>>], base: &[(usize, usize)]) -> Vec<usize> {
    let mut picks = vec![0usize; classes.len()];
    let mut best = key_of(base, classes, &picks);
    loop {
        let mut improved = false;
        for c in 0..classes.len() {
            for option in 0..classes[c].len() {
                if option == picks[c] {
                    continue;
                }
                let previous = picks[c];
                picks[c] = option;
                let key = key_of(base, classes, &picks);
                if key < best {
                    best = key;
                    improved = true;
                } else {
                    picks[c] = previous;
                }
            }
        }
        if !improved {
            return picks;
        }
    }
}

fn group<F: Fn(&str) -> String>(
    candidate: &[String],
    reference: &[String],
    cand_open: &[bool],
    ref_open: &[bool],
    key: F,
) -> Vec<MatchClass> {
    let mut classes: BTreeMap<String, MatchClass> = BTreeMap::new();
    for (i, tok) in candidate.iter().enumerate().filter(|(i, _)| cand_open[*i]) {
        classes.entry(key(tok)).or_insert_with(|| MatchClass { candidate: vec![], reference: vec![] }).candidate.push(i);
    }
    for (i, tok) in reference.iter().enumerate().filter(|(i, _)| ref_open[*i]) {
        if let Some(class) = classes.get_mut(&key(tok)) {
            class.reference.push(i);
        }
    }
    classes.into_values().filter(|c| !c.reference.is_empty()).collect()
}

/// Aligns already-normalized tokens: exact matches first, then Porter-stem
/// matches among the leftovers.
pub fn align_unigrams(candidate: &[String], reference: &[String]) -> Alignment {
    let mut cand_open = vec![true; candidate.len()];
    let mut ref_open = vec![true; reference.len()];
    let mut pairs: Vec<AlignedPair> = Vec::new();
    let mut fixed: Vec<(usize, usize)> = Vec::new();

    let stages: [(MatchStage, KeyFn); 2] =
        [(MatchStage::Exact, |t| t.to_owned()), (MatchStage::Stem, stem)];
    for (stage, key) in stages {
        let classes = group(candidate, reference, &cand_open, &ref_open, key);
        for (c, r) in best_stage_matching(&classes, &fixed) {
            cand_open[c] = false;
            ref_open[r] = false;
            fixed.push((c, r));
            pairs.push(AlignedPair { candidate: c, reference: r, stage });
        }
    }
    pairs.sort_by_key(|p| p.candidate);
    Alignment { pairs }
}

/// Score from an alignment and the two token counts.
pub fn score_alignment(alignment: &Alignment, candidate_len: usize, reference_len: usize) -> MeteorScore {
    let m = alignment.len();
    if m == 0 {
        return MeteorScore::default();
    }
    let precision = m as f64 / candidate_len as f64;
    let recall = m as f64 / reference_len as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let chunks = alignment.chunks();
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorScore { precision, recall, f_mean, matches: m, chunks, penalty, score: f_mean * (1.0 - penalty) }
}

pub fn meteor(candidate: &str, reference: &str) -> MeteorScore {
    let cand = metric_tokens(candidate);
    let refs = metric_tokens(reference);
    let alignment = align_unigrams(&cand, &refs);
    score_alignment(&alignment, cand.len(), refs.len())
}

//! Tree averaging over an ensemble of parses of one sentence.
//!
//! The average tree is the binary tree that maximizes the summed F1 against
//! every teacher parse. Because every binary tree over `n` tokens has exactly
//! `2n - 1` constituents, that is the same as maximizing the total hit count
//! of its constituents, where a span's hit count is the number of teachers
//! that contain it. A span's best total only depends on the span itself, so
//! a CYK-style chart finds the optimum exactly in `O(n^3)`.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::Zero;
use thiserror::Error;

use crate::treebank::{Span, SpanSet, Token, Tree, TreeError};

/// Longest sentence [`enumerate_binary_trees`] accepts by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("no teacher trees given")]
    NoTeachers,
    #[error("teacher {teacher} has different tokens from teacher 1 (first difference at position {position})")]
    TokenMismatch { teacher: usize, position: usize },
    #[error("sentence of {n} tokens exceeds the enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Number of teachers containing each span. Spans no teacher contains are
/// absent and read as zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HitCountTable {
    counts: HashMap<Span, u32>,
    tokens: Vec<Token>,
    k: u32,
}

impl HitCountTable {
    /// Builds a table directly from counts over placeholder tokens `w1 … wn`.
    /// Single-token spans and the root span are always set to `k`.
    pub fn from_counts<I>(n: usize, k: u32, counts: I) -> Result<Self, EnsembleError>
    where
        I: IntoIterator<Item = (Span, u32)>,
    {
        if n == 0 {
            return Err(TreeError::NoTokens.into());
        }
        let mut map = HashMap::new();
        for (span, c) in counts {
            if span.end > n + 1 {
                return Err(TreeError::SpanOutOfRange { span, len: n }.into());
            }
            if c > 0 {
                map.insert(span, c.min(k));
            }
        }
        for b in 1..=n {
            map.insert(Span::new(b, b + 1), k);
        }
        map.insert(Span::new(1, n + 1), k);
        let tokens = (1..=n).map(|i| Token { surface: format!("w{i}"), index: i }).collect();
        Ok(HitCountTable { counts: map, tokens, k })
    }

    pub fn get(&self, span: Span) -> u32 {
        self.counts.get(&span).copied().unwrap_or(0)
    }

    /// Sentence length.
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    /// Teacher count.
    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Nonzero entries, sorted by span.
    pub fn entries(&self) -> Vec<(Span, u32)> {
        let mut v: Vec<(Span, u32)> = self.counts.iter().map(|(s, c)| (*s, *c)).collect();
        v.sort();
        v
    }

    /// Summed hit count of every constituent of `tree`, trivial spans
    /// included. For binary teachers this is `(2n - 1)` times the summed F1.
    pub fn total_hits(&self, tree: &Tree) -> u64 {
        tree.constituents(true).iter().map(|s| u64::from(self.get(*s))).sum()
    }
}

fn first_difference(a: &Tree, b: &Tree) -> usize {
    let (x, y) = (a.surfaces(), b.surfaces());
    x.iter().zip(&y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len())) + 1
}

fn check_teachers(teachers: &[Tree]) -> Result<&Tree, EnsembleError> {
    let first = teachers.first().ok_or(EnsembleError::NoTeachers)?;
    for (i, t) in teachers.iter().enumerate().skip(1) {
        if !t.same_tokens(first) {
            return Err(EnsembleError::TokenMismatch { teacher: i + 1, position: first_difference(first, t) });
        }
    }
    Ok(first)
}

/// Counts, for every span, how many of the whole-sentence teacher parses
/// contain it. Teachers may be non-binary.
pub fn hit_counts(teachers: &[Tree]) -> Result<HitCountTable, EnsembleError> {
    let first = check_teachers(teachers)?;
    let mut counts: HashMap<Span, u32> = HashMap::with_capacity(2 * first.len() * teachers.len());
    for t in teachers {
        for span in t.constituents(true).iter() {
            *counts.entry(*span).or_insert(0) += 1;
        }
    }
    Ok(HitCountTable { counts, tokens: first.tokens().to_vec(), k: teachers.len() as u32 })
}

/// Best total hit count and best split point for every span, stored as a
/// dense triangular table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chart {
    n: usize,
    best: Vec<u64>,
    split: Vec<usize>,
    evaluations: usize,
}

impl Chart {
    fn index(&self, span: Span) -> usize {
        assert!(span.end <= self.n + 1, "span {span} outside chart of {} tokens", self.n);
        (span.begin - 1) * (self.n + 1) + (span.end - 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Best total hit count of any binary bracketing of `span`.
    pub fn best(&self, span: Span) -> u64 {
        self.best[self.index(span)]
    }

    /// Split point of the best bracketing of `span` (the first token of the
    /// right part); `None` for single tokens.
    pub fn split(&self, span: Span) -> Option<usize> {
        (span.width() > 1).then(|| self.split[self.index(span)])
    }

    /// The maximized objective, i.e. the best total of the whole sentence.
    pub fn objective(&self) -> u64 {
        self.best(Span::new(1, self.n + 1))
    }

    /// How many candidate splits were compared while filling the chart.
    pub fn split_evaluations(&self) -> usize {
        self.evaluations
    }

    /// Best totals of all spans of the given width, left to right.
    pub fn row(&self, width: usize) -> Vec<u64> {
        (1..=self.n + 1 - width).map(|b| self.best(Span::new(b, b + width))).collect()
    }

    fn spans_of_best(&self, span: Span, out: &mut Vec<Span>) {
        if let Some(j) = self.split(span) {
            out.push(span);
            self.spans_of_best(Span::new(span.begin, j), out);
            self.spans_of_best(Span::new(j, span.end), out);
        }
    }
}

/// Fills the chart bottom-up and reads off the best binary tree. Among equal
/// totals the smallest split point wins.
pub fn avg_tree(hits: &HitCountTable) -> (Tree, Chart) {
    let n = hits.n();
    let size = (n + 1) * (n + 1);
    let mut chart = Chart { n, best: vec![0; size], split: vec![0; size], evaluations: 0 };
    let k = u64::from(hits.k());
    for b in 1..=n {
        let i = chart.index(Span::new(b, b + 1));
        chart.best[i] = k;
    }
    for width in 2..=n {
        for b in 1..=n + 1 - width {
            let e = b + width;
            // own hit count is constant in j and is added after the argmax
            let mut best_j = b + 1;
            let mut best_sum = 0;
            for j in b + 1..e {
                let sum = chart.best(Span::new(b, j)) + chart.best(Span::new(j, e));
                if j == b + 1 || sum > best_sum {
                    best_j = j;
                    best_sum = sum;
                }
                chart.evaluations += 1;
            }
            let span = Span::new(b, e);
            let i = chart.index(span);
            chart.best[i] = best_sum + u64::from(hits.get(span));
            chart.split[i] = best_j;
        }
    }
    let mut spans = Vec::with_capacity(n);
    chart.spans_of_best(Span::new(1, n + 1), &mut spans);
    let surfaces: Vec<&str> = hits.tokens().iter().map(|t| t.surface.as_str()).collect();
    let tree = Tree::from_spans(&surfaces, spans).expect("chart splits always nest");
    (tree, chart)
}

/// Average tree of the teachers together with its total hit count.
pub fn average(teachers: &[Tree]) -> Result<(Tree, u64), EnsembleError> {
    let hits = hit_counts(teachers)?;
    let (tree, chart) = avg_tree(&hits);
    Ok((tree, chart.objective()))
}

/// Exact `F1(candidate, reference)` with trivial spans included.
pub fn exact_f1(candidate: &Tree, reference: &Tree) -> BigRational {
    f1_sum_of_sets(&candidate.constituents(true), std::slice::from_ref(&reference.constituents(true)))
}

/// `Σ_k F1(candidate, teacher_k)`, exactly.
pub fn f1_sum(candidate: &Tree, teachers: &[Tree]) -> BigRational {
    let sets: Vec<SpanSet> = teachers.iter().map(|t| t.constituents(true)).collect();
    f1_sum_of_sets(&candidate.constituents(true), &sets)
}

fn f1_sum_of_sets(candidate: &SpanSet, teachers: &[SpanSet]) -> BigRational {
    // group terms 2m / (|c| + |t|) by denominator; teachers of equal size share one
    let mut by_denominator: BTreeMap<usize, usize> = BTreeMap::new();
    for t in teachers {
        *by_denominator.entry(candidate.len() + t.len()).or_insert(0) += 2 * candidate.intersection_len(t);
    }
    by_denominator.into_iter().fold(BigRational::zero(), |acc, (d, num)| {
        acc + BigRational::new(BigInt::from(num), BigInt::from(d))
    })
}

/// Picks the teacher parse with the highest summed F1 against all teachers
/// (itself included). Ties go to the lowest teacher index.
pub fn selective_mbr(teachers: &[Tree]) -> Result<Tree, EnsembleError> {
    check_teachers(teachers)?;
    let sets: Vec<SpanSet> = teachers.iter().map(|t| t.constituents(true)).collect();
    let mut best: Option<(usize, BigRational)> = None;
    for (i, cand) in sets.iter().enumerate() {
        let score = f1_sum_of_sets(cand, &sets);
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((i, score));
        }
    }
    let (i, _) = best.expect("at least one teacher");
    Ok(teachers[i].unlabeled())
}

/// Every unlabeled binary bracketing of `n` placeholder tokens, ordered by
/// root split, then left subtree, then right subtree.
pub fn enumerate_binary_trees(n: usize) -> Result<impl Iterator<Item = Tree>, EnsembleError> {
    enumerate_binary_trees_capped(n, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_binary_trees_capped(n: usize, cap: usize) -> Result<impl Iterator<Item = Tree>, EnsembleError> {
    let surfaces: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    enumerate_over(surfaces, cap)
}

fn check_cap(n: usize, cap: usize) -> Result<(), EnsembleError> {
    if n == 0 {
        return Err(TreeError::NoTokens.into());
    }
    if n > cap {
        return Err(EnsembleError::CapExceeded { n, cap });
    }
    Ok(())
}

/// Internal spans of every binary bracketing of `n` tokens, each list in
/// preorder, ordered by root split, then left part, then right part.
fn bracketings(n: usize) -> Vec<Vec<Span>> {
    // shapes[w]: bracketings of a span of width w starting at token 1
    let mut shapes: Vec<Vec<Vec<Span>>> = vec![Vec::new(), vec![Vec::new()]];
    for w in 2..=n {
        let mut out = Vec::new();
        for j in 1..w {
            for left in &shapes[j] {
                for right in &shapes[w - j] {
                    let mut spans = Vec::with_capacity(w - 1);
                    spans.push(Span::new(1, w + 1));
                    spans.extend_from_slice(left);
                    spans.extend(right.iter().map(|s| Span::new(s.begin + j, s.end + j)));
                    out.push(spans);
                }
            }
        }
        shapes.push(out);
    }
    shapes.swap_remove(n)
}

fn enumerate_over(surfaces: Vec<String>, cap: usize) -> Result<impl Iterator<Item = Tree>, EnsembleError> {
    check_cap(surfaces.len(), cap)?;
    Ok(bracketings(surfaces.len())
        .into_iter()
        .map(move |spans| Tree::from_spans(&surfaces, spans).expect("enumerated spans nest")))
}

/// Exhaustive search for the binary tree maximizing `Σ_k F1(T, T_k)`.
/// Among maximizers the tree with the lexicographically smallest preorder
/// split sequence is returned. Test oracle for [`avg_tree`].
pub fn brute_force_avg(teachers: &[Tree]) -> Result<(Tree, BigRational), EnsembleError> {
    brute_force_avg_capped(teachers, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_avg_capped(teachers: &[Tree], cap: usize) -> Result<(Tree, BigRational), EnsembleError> {
    let first = check_teachers(teachers)?;
    let n = first.len();
    check_cap(n, cap)?;
    // dense membership table per teacher, indexed by (begin, end)
    let index = |s: &Span| (s.begin - 1) * (n + 1) + (s.end - 1);
    let tables: Vec<(Vec<bool>, usize)> = teachers
        .iter()
        .map(|t| {
            let set = t.constituents(true);
            let mut table = vec![false; n * (n + 1)];
            for s in set.iter() {
                table[index(s)] = true;
            }
            (table, set.len())
        })
        .collect();
    let singletons: Vec<Span> = (1..=n).map(|b| Span::new(b, b + 1)).collect();
    // denominators are at most 4n, so u128 holds their lcm for any feasible n
    let mut best: Option<(Vec<usize>, Ratio<u128>, Vec<Span>)> = None;
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    for internal in bracketings(n) {
        let size = internal.len() + singletons.len();
        groups.clear();
        for (table, len) in &tables {
            let matched = internal.iter().chain(&singletons).filter(|s| table[index(s)]).count();
            *groups.entry(size + len).or_insert(0) += 2 * matched;
        }
        let score = groups.iter().fold(Ratio::<u128>::zero(), |acc, (&d, &num)| acc + Ratio::new(num as u128, d as u128));
        let better = match &best {
            None => true,
            Some((_, best_score, _)) if score > *best_score => true,
            Some((best_splits, best_score, _)) if score == *best_score => {
                split_sequence_of(&internal) < *best_splits
            }
            _ => false,
        };
        if better {
            best = Some((split_sequence_of(&internal), score, internal));
        }
    }
    let (_, score, spans) = best.expect("at least one bracketing");
    let score = BigRational::new(BigInt::from(*score.numer()), BigInt::from(*score.denom()));
    Ok((Tree::from_spans(&first.surfaces(), spans)?, score))
}

// Split point of every internal span, in preorder. `spans` is a preorder
// list of the internal spans of one binary tree.
fn split_sequence_of(spans: &[Span]) -> Vec<usize> {
    spans
        .iter()
        .enumerate()
        .map(|(i, s)| match spans.get(i + 1) {
            // the left child, if internal, directly follows its parent
            Some(next) if next.begin == s.begin && next.end < s.end => next.end,
            _ => s.begin + 1,
        })
        .collect()
}

/// The binary tree closest to `gold` in F1. Every binary tree has `2n - 1`
/// spans and gold's span count is fixed, so maximizing F1 is maximizing the
/// number of gold spans hit: a one-teacher average.
pub fn binary_oracle(gold: &Tree) -> Tree {
    let hits = hit_counts(std::slice::from_ref(gold)).expect("one teacher");
    avg_tree(&hits).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_bracketed;

    fn t(s: &str) -> Tree {
        parse_bracketed(s).unwrap()
    }

    fn teachers() -> Vec<Tree> {
        [
            "(((w1 w2) (w3 w4)) w5)",
            "((w1 w2) ((w3 w4) w5))",
            "(((w1 w2) w3) (w4 w5))",
            "(w1 ((w2 (w3 w4)) w5))",
        ]
        .iter()
        .map(|s| t(s))
        .collect()
    }

    #[test]
    fn worked_example_hit_counts() {
        let h = hit_counts(&teachers()).unwrap();
        let get = |b, e| h.get(Span::new(b, e));
        assert_eq!([get(1, 3), get(2, 4), get(3, 5), get(4, 6)], [3, 0, 3, 1]);
        assert_eq!([get(1, 4), get(2, 5), get(3, 6)], [1, 1, 1]);
        assert_eq!([get(1, 5), get(2, 6)], [1, 1]);
        assert_eq!(get(1, 6), 4);
        assert!((1..=5).all(|b| get(b, b + 1) == 4));
    }

    #[test]
    fn worked_example_chart() {
        let (tree, chart) = avg_tree(&hit_counts(&teachers()).unwrap());
        assert_eq!(chart.row(1), vec![4; 5]);
        assert_eq!(chart.row(2), vec![11, 8, 11, 9]);
        assert_eq!(chart.row(3), vec![16, 16, 16]);
        assert_eq!(chart.row(4), vec![23, 21]);
        assert_eq!(chart.objective(), 31);
        assert_eq!(chart.split(Span::new(2, 6)), Some(3));
        assert_eq!(chart.split(Span::new(1, 6)), Some(3));
        assert_eq!(tree.render(), "((w1 w2) ((w3 w4) w5))");
    }

    #[test]
    fn single_teacher_is_reproduced() {
        let teacher = t("((a (b c)) ((d e) f))");
        let (tree, chart) = avg_tree(&hit_counts(std::slice::from_ref(&teacher)).unwrap());
        assert_eq!(tree, teacher);
        assert_eq!(chart.objective(), 11);
    }

    #[test]
    fn identical_teachers() {
        let teacher = t("((a b) (c (d e)))");
        let h = hit_counts(&vec![teacher.clone(); 3]).unwrap();
        for (span, c) in h.entries() {
            assert!(teacher.constituents(true).contains(&span));
            assert_eq!(c, 3);
        }
        assert_eq!(h.entries().len(), 9);
        assert_eq!(selective_mbr(&vec![teacher.clone(); 3]).unwrap(), teacher);
    }

    #[test]
    fn selective_mbr_tie_goes_to_first() {
        let ts = teachers();
        let h = hit_counts(&ts).unwrap();
        let totals: Vec<u64> = ts.iter().map(|x| h.total_hits(x)).collect();
        assert_eq!(totals, vec![31, 31, 29, 29]);
        assert_eq!(selective_mbr(&ts).unwrap(), ts[0]);
    }

    #[test]
    fn mismatched_teachers_rejected() {
        let e = hit_counts(&[t("((a b) c)"), t("((a x) c)")]).unwrap_err();
        assert_eq!(e, EnsembleError::TokenMismatch { teacher: 2, position: 2 });
        assert_eq!(hit_counts(&[]).unwrap_err(), EnsembleError::NoTeachers);
        assert_eq!(selective_mbr(&[]).unwrap_err(), EnsembleError::NoTeachers);
    }

    #[test]
    fn enumeration_counts() {
        let counts: Vec<usize> = (1..=8).map(|n| enumerate_binary_trees(n).unwrap().count()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 14, 42, 132, 429]);
        assert_eq!(
            enumerate_binary_trees(13).err(),
            Some(EnsembleError::CapExceeded { n: 13, cap: DEFAULT_ENUMERATION_CAP })
        );
        let renders: Vec<String> = enumerate_binary_trees(3).unwrap().map(|t| t.render()).collect();
        assert_eq!(renders, vec!["(w1 (w2 w3))", "((w1 w2) w3)"]);
    }

    #[test]
    fn split_sequences_agree_with_trees() {
        for (spans, tree) in bracketings(6).into_iter().zip(enumerate_binary_trees(6).unwrap()) {
            assert_eq!(split_sequence_of(&spans), tree.split_sequence());
        }
    }

    #[test]
    fn worked_example_brute_force() {
        let ts = teachers();
        let (tree, score) = brute_force_avg(&ts).unwrap();
        assert_eq!(tree.render(), "((w1 w2) ((w3 w4) w5))");
        assert_eq!(score, BigRational::new(31.into(), 9.into()));
    }

    #[test]
    fn oracle_examples() {
        let gold = t("((a b) (c (d e)))");
        assert_eq!(binary_oracle(&gold), gold);

        let gold = t("(A (B w1 w2 w3) (C w4 w5))");
        let best = binary_oracle(&gold);
        assert!(best.is_binary());
        let spans = best.constituents(false);
        assert!(spans.contains(&Span::new(1, 4)) && spans.contains(&Span::new(4, 6)));
        assert_eq!(best.render(), "((w1 (w2 w3)) (w4 w5))");

        let flat = t("(S w1 w2 w3)");
        assert!(binary_oracle(&flat).is_binary());
    }

    #[test]
    fn from_counts_fills_trivial_spans() {
        let h = HitCountTable::from_counts(3, 2, [(Span::new(2, 4), 2)]).unwrap();
        assert_eq!(h.get(Span::new(1, 2)), 2);
        assert_eq!(h.get(Span::new(1, 4)), 2);
        let (tree, chart) = avg_tree(&h);
        assert_eq!(tree.render(), "(w1 (w2 w3))");
        assert_eq!(chart.objective(), 10);
    }

    #[test]
    fn split_evaluation_count() {
        let n = 9;
        let (_, chart) = avg_tree(&hit_counts(&[crate::treebank::branching_tree(n, crate::treebank::Direction::Left).unwrap()]).unwrap());
        let expected: usize = (2..=n).map(|l| (n - l + 1) * (l - 1)).sum();
        assert_eq!(chart.split_evaluations(), expected);
    }
}

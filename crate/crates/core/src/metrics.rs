//! Unlabeled bracket scoring: precision/recall/F1 over span sets,
//! sentence-averaged corpus F1 with punctuation and trivial spans removed,
//! pairwise agreement, and breakdowns by sentence length and gold label.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use thiserror::Error;

use crate::treebank::{SpanSet, Tree, TreeError};

/// Punctuation surface forms dropped before scoring.
pub const DEFAULT_PUNCTUATION: &[&str] =
    &[".", ",", ":", ";", "``", "''", "'", "`", "?", "!", "-LRB-", "-RRB-", "...", "--", "-"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("sentence {sentence}: prediction and gold tokens differ at position {position} ({pred:?} vs {gold:?})")]
    TokenMismatch { sentence: usize, position: usize, pred: String, gold: String },
    #[error("{pred} predicted trees but {gold} gold trees")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("sentence {sentence}: {source}")]
    Tree { sentence: usize, source: TreeError },
    #[error("length buckets must be non-empty, ordered and non-overlapping")]
    BadBuckets,
}

/// Inclusive sentence-length range; `hi = None` is open-ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl LengthBucket {
    pub fn contains(&self, len: usize) -> bool {
        len >= self.lo && self.hi.is_none_or(|hi| len <= hi)
    }
}

impl std::fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "{}-{}", self.lo, hi),
            None => write!(f, "{}+", self.lo),
        }
    }
}

impl std::str::FromStr for LengthBucket {
    type Err = String;

    /// Accepts `lo-hi`, `lo+` or `lo-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad length bucket {s:?} (expected lo-hi or lo+)");
        let s = s.trim();
        if let Some(lo) = s.strip_suffix('+').or_else(|| s.strip_suffix('-')) {
            return Ok(LengthBucket { lo: lo.parse().map_err(|_| bad())?, hi: None });
        }
        let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
        let lo: usize = lo.parse().map_err(|_| bad())?;
        let hi: usize = hi.parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        Ok(LengthBucket { lo, hi: Some(hi) })
    }
}

pub fn default_buckets() -> Vec<LengthBucket> {
    vec![
        LengthBucket { lo: 1, hi: Some(10) },
        LengthBucket { lo: 11, hi: Some(20) },
        LengthBucket { lo: 21, hi: Some(30) },
        LengthBucket { lo: 31, hi: Some(40) },
        LengthBucket { lo: 41, hi: None },
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub punctuation: HashSet<String>,
    /// Sentences whose filtered gold span set is smaller than this are skipped.
    pub min_gold_constituents: usize,
    pub length_buckets: Vec<LengthBucket>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            punctuation: DEFAULT_PUNCTUATION.iter().map(|s| s.to_string()).collect(),
            min_gold_constituents: 1,
            length_buckets: default_buckets(),
        }
    }
}

impl EvalConfig {
    /// Scoring without any punctuation removal.
    pub fn keep_punctuation() -> Self {
        EvalConfig { punctuation: HashSet::new(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let b = &self.length_buckets;
        let ordered = b.windows(2).all(|w| w[0].hi.is_some_and(|hi| hi < w[1].lo));
        if b.is_empty() || !ordered {
            return Err(MetricsError::BadBuckets);
        }
        Ok(())
    }

    pub fn is_punctuation(&self, surface: &str) -> bool {
        self.punctuation.contains(surface)
    }

    /// Drops punctuation; a sentence made only of punctuation is left as is.
    pub fn strip(&self, tree: &Tree) -> Tree {
        if self.punctuation.is_empty() {
            return tree.clone();
        }
        tree.strip_tokens(|t| self.is_punctuation(&t.surface)).unwrap_or_else(|_| tree.clone())
    }
}

/// Match counts behind a precision/recall/F1 triple. All ratios are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prf {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    /// `None` when nothing was predicted.
    pub fn precision(&self) -> Option<Ratio<usize>> {
        (self.predicted > 0).then(|| Ratio::new(self.matched, self.predicted))
    }

    /// `None` when the gold set is empty.
    pub fn recall(&self) -> Option<Ratio<usize>> {
        (self.gold > 0).then(|| Ratio::new(self.matched, self.gold))
    }

    /// Harmonic mean of precision and recall, `2m / (|pred| + |gold|)`.
    /// Zero when either side is empty; `None` when both are.
    pub fn f1(&self) -> Option<Ratio<usize>> {
        let denom = self.predicted + self.gold;
        (denom > 0).then(|| Ratio::new(2 * self.matched, denom))
    }

    pub fn precision_f64(&self) -> Option<f64> {
        self.precision().map(to_f64)
    }

    pub fn recall_f64(&self) -> Option<f64> {
        self.recall().map(to_f64)
    }

    pub fn f1_f64(&self) -> Option<f64> {
        self.f1().map(to_f64)
    }
}

pub(crate) fn to_f64(r: Ratio<usize>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn prf(pred: &SpanSet, gold: &SpanSet) -> Prf {
    Prf { matched: pred.intersection_len(gold), predicted: pred.len(), gold: gold.len() }
}

fn check_tokens(pred: &Tree, gold: &Tree, sentence: usize) -> Result<(), MetricsError> {
    if pred.same_tokens(gold) {
        return Ok(());
    }
    let p = pred.surfaces();
    let g = gold.surfaces();
    let position = p.iter().zip(&g).position(|(a, b)| a != b).unwrap_or(p.len().min(g.len()));
    Err(MetricsError::TokenMismatch {
        sentence,
        position: position + 1,
        pred: p.get(position).copied().unwrap_or("<end>").to_string(),
        gold: g.get(position).copied().unwrap_or("<end>").to_string(),
    })
}

/// Outcome of scoring one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceScore {
    /// Token count after punctuation removal.
    pub length: usize,
    /// `None` when the sentence is excluded by `min_gold_constituents`.
    pub prf: Option<Prf>,
}

impl SentenceScore {
    pub fn f1(&self) -> Option<f64> {
        self.prf.and_then(|p| p.f1_f64())
    }
}

pub fn score_sentence(pred: &Tree, gold: &Tree, cfg: &EvalConfig, sentence: usize) -> Result<SentenceScore, MetricsError> {
    check_tokens(pred, gold, sentence)?;
    let pred = cfg.strip(pred);
    let gold = cfg.strip(gold);
    let gold_spans = gold.constituents(false);
    let length = gold.len();
    if gold_spans.is_empty() || gold_spans.len() < cfg.min_gold_constituents {
        return Ok(SentenceScore { length, prf: None });
    }
    Ok(SentenceScore { length, prf: Some(prf(&pred.constituents(false), &gold_spans)) })
}

/// F1 of one sentence after removing punctuation and trivial spans, or
/// `None` when the sentence is excluded.
pub fn sentence_f1(pred: &Tree, gold: &Tree, cfg: &EvalConfig) -> Result<Option<f64>, MetricsError> {
    Ok(score_sentence(pred, gold, cfg, 1)?.f1())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEval {
    /// 1-based line number.
    pub id: usize,
    pub length: usize,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sentences: Vec<SentenceEval>,
    /// Mean of the included sentence F1 values; `None` if all were skipped.
    pub corpus_f1: Option<f64>,
    pub skipped: usize,
}

impl EvalReport {
    pub fn from_sentences(sentences: Vec<SentenceEval>) -> Self {
        let included: Vec<f64> = sentences.iter().filter_map(|s| s.f1).collect();
        let skipped = sentences.len() - included.len();
        EvalReport { corpus_f1: mean(&included), skipped, sentences }
    }

    /// (id, F1) for every included sentence.
    pub fn per_sentence_f1(&self) -> Vec<(usize, f64)> {
        self.sentences.iter().filter_map(|s| s.f1.map(|f| (s.id, f))).collect()
    }

    /// One `id length f1` row per sentence, then a summary row. Excluded
    /// sentences carry `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tlength\tf1\n");
        for s in &self.sentences {
            let _ = writeln!(out, "{}\t{}\t{}", s.id, s.length, fmt_opt(s.f1));
        }
        let _ = writeln!(
            out,
            "corpus\t{}\t{}\tskipped={}",
            self.sentences.len() - self.skipped,
            fmt_opt(self.corpus_f1),
            self.skipped
        );
        out
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn paired<'a>(preds: &'a [Tree], golds: &'a [Tree]) -> Result<impl Iterator<Item = (usize, &'a Tree, &'a Tree)>, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch { pred: preds.len(), gold: golds.len() });
    }
    Ok(preds.iter().zip(golds).enumerate().map(|(i, (p, g))| (i + 1, p, g)))
}

pub fn corpus_eval(preds: &[Tree], golds: &[Tree], cfg: &EvalConfig) -> Result<EvalReport, MetricsError> {
    let sentences = paired(preds, golds)?
        .map(|(id, p, g)| {
            let s = score_sentence(p, g, cfg, id)?;
            Ok(SentenceEval { id, length: s.length, f1: s.f1() })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(EvalReport::from_sentences(sentences))
}

/// Entry `(i, j)` scores model `i` against model `j` as the reference.
pub fn agreement_matrix(models: &[Vec<Tree>], cfg: &EvalConfig) -> Result<Vec<Vec<Option<f64>>>, MetricsError> {
    models
        .iter()
        .map(|pred| models.iter().map(|gold| Ok(corpus_eval(pred, gold, cfg)?.corpus_f1)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Breakdown {
    /// Bucket name or constituent label.
    pub key: String,
    pub count: usize,
    /// `None` when `count` is zero.
    pub score: Option<f64>,
}

pub fn breakdown_tsv(header: &str, rows: &[Breakdown]) -> String {
    let mut out = format!("{header}\tcount\tscore\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.key, r.count, fmt_opt(r.score));
    }
    out
}

pub const DEFAULT_LABELS: [&str; 5] = ["NP", "PP", "VP", "S", "SBAR"];

/// Category part of a treebank label: `NP-SBJ-1` and `NP=2` become `NP`.
/// Labels that start with `-` (such as `-NONE-`) are kept whole.
pub fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    label.split(['-', '=']).next().unwrap_or(label)
}

/// Corpus-wide recall of gold constituents carrying each label, compared on
/// [`base_label`]. Counts only non-trivial spans after punctuation removal,
/// in sentences that are not excluded.
pub fn recall_by_label(
    preds: &[Tree],
    golds: &[Tree],
    cfg: &EvalConfig,
    labels: &[&str],
) -> Result<Vec<Breakdown>, MetricsError> {
    let mut tally: BTreeMap<&str, (usize, usize)> = labels.iter().map(|l| (*l, (0, 0))).collect();
    for (id, p, g) in paired(preds, golds)? {
        check_tokens(p, g, id)?;
        let g = cfg.strip(g);
        let gold_spans = g.constituents(false);
        if gold_spans.is_empty() || gold_spans.len() < cfg.min_gold_constituents {
            continue;
        }
        let pred_spans = cfg.strip(p).constituents(false);
        for ls in g.labeled_spans() {
            if !gold_spans.contains(&ls.span) {
                continue;
            }
            if let Some((hit, total)) = tally.get_mut(base_label(&ls.label)) {
                *total += 1;
                if pred_spans.contains(&ls.span) {
                    *hit += 1;
                }
            }
        }
    }
    Ok(labels
        .iter()
        .map(|l| {
            let (hit, total) = tally[l];
            Breakdown {
                key: l.to_string(),
                count: total,
                score: (total > 0).then(|| hit as f64 / total as f64),
            }
        })
        .collect())
}

/// Mean sentence F1 per length bucket, bucketing on the gold length after
/// punctuation removal.
pub fn f1_by_length(preds: &[Tree], golds: &[Tree], cfg: &EvalConfig) -> Result<Vec<Breakdown>, MetricsError> {
    cfg.validate()?;
    let report = corpus_eval(preds, golds, cfg)?;
    Ok(cfg
        .length_buckets
        .iter()
        .map(|b| {
            let scores: Vec<f64> =
                report.sentences.iter().filter(|s| b.contains(s.length)).filter_map(|s| s.f1).collect();
            Breakdown { key: b.to_string(), count: scores.len(), score: mean(&scores) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{parse_bracketed, Span};

    fn t(s: &str) -> Tree {
        parse_bracketed(s).unwrap()
    }

    fn set(v: &[(usize, usize)]) -> SpanSet {
        v.iter().map(|&(b, e)| Span::new(b, e)).collect()
    }

    #[test]
    fn prf_examples() {
        let a = set(&[(1, 3), (3, 5)]);
        let p = prf(&a, &a);
        assert_eq!((p.precision(), p.recall(), p.f1()), (Some(Ratio::from(1)), Some(Ratio::from(1)), Some(Ratio::from(1))));

        let p = prf(&set(&[(1, 3)]), &set(&[(1, 3), (3, 5)]));
        assert_eq!(p.precision(), Some(Ratio::from(1)));
        assert_eq!(p.recall(), Some(Ratio::new(1, 2)));
        assert_eq!(p.f1(), Some(Ratio::new(2, 3)));

        let p = prf(&set(&[(1, 3)]), &set(&[(2, 4)]));
        assert_eq!(p.f1(), Some(Ratio::from(0)));
        assert_eq!(p.precision(), Some(Ratio::from(0)));
    }

    #[test]
    fn prf_empty_conventions() {
        let p = prf(&SpanSet::new(), &set(&[(1, 3)]));
        assert_eq!(p.precision(), None);
        assert_eq!(p.f1(), Some(Ratio::from(0)));
        assert_eq!(prf(&SpanSet::new(), &SpanSet::new()).f1(), None);
    }

    #[test]
    fn sentence_f1_examples() {
        let cfg = EvalConfig::default();
        let g = t("((a b) ((c d) e))");
        assert_eq!(sentence_f1(&g, &g, &cfg).unwrap(), Some(1.0));
        assert_eq!(sentence_f1(&t("(a b)"), &t("(a b)"), &cfg).unwrap(), None);
        let f = sentence_f1(&t("((a b) (c d))"), &t("(S (NP a b) (VP c d))"), &cfg).unwrap();
        assert_eq!(f, Some(1.0));
    }

    #[test]
    fn sentence_f1_ignores_punctuation() {
        let cfg = EvalConfig::default();
        let pred = t("(((a b) c) .)");
        let gold = t("((a (b c)) .)");
        // after stripping: ((a b) c) vs (a (b c)), no non-trivial span shared
        assert_eq!(sentence_f1(&pred, &gold, &cfg).unwrap(), Some(0.0));
        assert_eq!(sentence_f1(&pred, &gold, &EvalConfig::keep_punctuation()).unwrap(), Some(0.5));
    }

    #[test]
    fn token_mismatch_is_reported() {
        let e = sentence_f1(&t("((a b) c)"), &t("((a x) c)"), &EvalConfig::default()).unwrap_err();
        assert_eq!(
            e,
            MetricsError::TokenMismatch { sentence: 1, position: 2, pred: "b".into(), gold: "x".into() }
        );
    }

    #[test]
    fn corpus_eval_examples() {
        let cfg = EvalConfig::default();
        let gold = vec![t("((a b) (c d))"), t("((a b) (c d))")];
        let r = corpus_eval(&gold, &gold, &cfg).unwrap();
        assert_eq!(r.corpus_f1, Some(1.0));

        let pred = vec![t("((a b) (c d))"), t("(a ((b c) d))")];
        let r = corpus_eval(&pred, &gold, &cfg).unwrap();
        assert_eq!(r.corpus_f1, Some(0.5));
        assert_eq!(r.per_sentence_f1(), vec![(1, 1.0), (2, 0.0)]);

        let short = vec![t("(a b)"), t("(c)")];
        let r = corpus_eval(&short, &short, &cfg).unwrap();
        assert_eq!(r.corpus_f1, None);
        assert_eq!(r.skipped, 2);

        assert_eq!(
            corpus_eval(&short, &gold[..1], &cfg).unwrap_err(),
            MetricsError::LengthMismatch { pred: 2, gold: 1 }
        );
    }

    #[test]
    fn report_tsv_layout() {
        let gold = vec![t("((a b) (c d))"), t("(a b)")];
        let r = corpus_eval(&gold, &gold, &EvalConfig::default()).unwrap();
        assert_eq!(r.to_tsv(), "id\tlength\tf1\n1\t4\t1\n2\t2\tNA\ncorpus\t1\t1\tskipped=1\n");
    }

    #[test]
    fn agreement_examples() {
        let cfg = EvalConfig::default();
        let a = vec![t("((a b) (c d))")];
        let m = agreement_matrix(&[a.clone(), a.clone(), a], &cfg).unwrap();
        assert!(m.iter().flatten().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn recall_by_label_examples() {
        let cfg = EvalConfig::default();
        let gold = vec![t("(S (NP a b) (VP c d))")];
        let r = recall_by_label(&[t("((a b) (c d))")], &gold, &cfg, &["NP", "PP"]).unwrap();
        assert_eq!(r[0], Breakdown { key: "NP".into(), count: 1, score: Some(1.0) });
        assert_eq!(r[1], Breakdown { key: "PP".into(), count: 0, score: None });

        let gold = vec![t("(S (NP w1 w2) w3)")];
        let pred = vec![crate::treebank::branching_tree(3, crate::treebank::Direction::Right).unwrap()];
        let r = recall_by_label(&pred, &gold, &cfg, &["NP"]).unwrap();
        assert_eq!(r[0].score, Some(0.0));

        let gold = vec![t("(S (NP-SBJ (DT a) (NN b)) (VP (VBZ c) (NP=2 (NN d) (NN e))))")];
        let r = recall_by_label(&[t("((a b) (c (d e)))")], &gold, &cfg, &DEFAULT_LABELS).unwrap();
        assert_eq!(r[0], Breakdown { key: "NP".into(), count: 2, score: Some(1.0) });
        assert_eq!(base_label("-NONE-"), "-NONE-");
        assert_eq!(base_label("PRT|ADVP"), "PRT|ADVP");
    }

    #[test]
    fn by_length_examples() {
        let mut cfg = EvalConfig::default();
        let gold = vec![t("((a b) (c d))"), t("(((a b) c) ((d e) f))")];
        let pred = vec![t("((a b) (c d))"), t("(a ((b c) (d (e f))))")];
        let report = corpus_eval(&pred, &gold, &cfg).unwrap();

        cfg.length_buckets = vec![LengthBucket { lo: 1, hi: None }];
        let rows = f1_by_length(&pred, &gold, &cfg).unwrap();
        assert_eq!(rows[0].score, report.corpus_f1);

        cfg.length_buckets = vec![
            LengthBucket { lo: 1, hi: Some(4) },
            LengthBucket { lo: 5, hi: Some(8) },
            LengthBucket { lo: 9, hi: None },
        ];
        let rows = f1_by_length(&pred, &gold, &cfg).unwrap();
        assert_eq!(rows[0].score, Some(1.0));
        // pred {[2,4),[2,7),[4,7),[5,7)} vs gold {[1,3),[1,4),[4,7),[4,6)}: one match of four each
        assert_eq!(rows[1].score, Some(0.25));
        assert_eq!(rows[2], Breakdown { key: "9+".into(), count: 0, score: None });
    }

    #[test]
    fn bucket_parsing_and_validation() {
        assert_eq!("1-10".parse::<LengthBucket>().unwrap(), LengthBucket { lo: 1, hi: Some(10) });
        assert_eq!("41+".parse::<LengthBucket>().unwrap(), LengthBucket { lo: 41, hi: None });
        assert!("10-1".parse::<LengthBucket>().is_err());
        let mut cfg = EvalConfig::default();
        cfg.validate().unwrap();
        cfg.length_buckets = vec![LengthBucket { lo: 1, hi: Some(10) }, LengthBucket { lo: 5, hi: None }];
        assert_eq!(cfg.validate(), Err(MetricsError::BadBuckets));
    }
}

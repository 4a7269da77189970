#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use treeavg::ensemble::enumerate_binary_trees;
use treeavg::treebank::{Span, SpanSet, Tree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn words(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("w{i}")).collect()
}

/// All binary trees over `w1 … wn`, for uniform sampling.
pub fn all_binary(n: usize) -> Vec<Tree> {
    enumerate_binary_trees(n).unwrap().collect()
}

/// Binary tree over `surfaces` built by splitting each span at a uniformly
/// chosen point. Not uniform over bracketings; used where n is too large to
/// enumerate.
pub fn random_binary_over<R: Rng>(rng: &mut R, surfaces: &[String]) -> Tree {
    fn go<R: Rng>(rng: &mut R, b: usize, e: usize, out: &mut Vec<Span>) {
        if e - b < 2 {
            return;
        }
        out.push(Span::new(b, e));
        let j = rng.gen_range(b + 1..e);
        go(rng, b, j, out);
        go(rng, j, e, out);
    }
    let mut spans = Vec::new();
    go(rng, 1, surfaces.len() + 1, &mut spans);
    Tree::from_spans(surfaces, spans).unwrap()
}

pub fn random_binary<R: Rng>(rng: &mut R, n: usize) -> Tree {
    random_binary_over(rng, &words(n))
}

/// A tree with at least one node of three or more children (n >= 3):
/// a random binary tree with some internal nodes removed.
pub fn random_nonbinary<R: Rng>(rng: &mut R, n: usize) -> Tree {
    assert!(n >= 3);
    loop {
        let base = random_binary(rng, n);
        let spans: Vec<Span> = base.constituents(true).iter().copied().filter(|s| s.width() >= 2).collect();
        let kept: Vec<Span> = spans.iter().copied().filter(|s| s.width() == n || rng.gen_bool(0.6)).collect();
        let t = Tree::from_spans(&words(n), kept).unwrap();
        if !t.is_binary() {
            return t;
        }
    }
}

/// A random set of spans over `n` tokens, not necessarily laminar.
pub fn random_span_set<R: Rng>(rng: &mut R, n: usize) -> SpanSet {
    let mut all = Vec::new();
    for b in 1..=n {
        for e in b + 1..=n + 1 {
            all.push(Span::new(b, e));
        }
    }
    let k = rng.gen_range(0..=all.len().min(12));
    all.shuffle(rng);
    all.into_iter().take(k).collect()
}

const LABELS: &[&str] = &["S", "NP", "VP", "PP", "SBAR", "ADJP", "ADVP"];
const TAGS: &[&str] = &["DT", "NN", "VBZ", "IN", "JJ", "RB", "PRP"];

/// Bracketed text of a random tree. `labeled` puts a label on every group
/// and a POS tag on every token; `unary` wraps some groups and tokens in
/// extra single-child groups.
pub fn random_bracketed<R: Rng>(rng: &mut R, n: usize, labeled: bool, unary: bool) -> String {
    fn go<R: Rng>(rng: &mut R, b: usize, e: usize, labeled: bool, unary: bool, top: bool, out: &mut String) {
        let wrap = unary && rng.gen_bool(0.25);
        if wrap {
            out.push('(');
            if labeled {
                out.push_str(LABELS.choose(rng).unwrap());
                out.push(' ');
            }
        }
        if e - b == 1 {
            if labeled {
                out.push_str(&format!("({} w{b})", TAGS.choose(rng).unwrap()));
            } else if top && !wrap {
                out.push_str(&format!("(w{b})"));
            } else {
                out.push_str(&format!("w{b}"));
            }
        } else {
            // split into 2..=3 children
            let parts = if e - b >= 3 && rng.gen_bool(0.3) { 3 } else { 2 };
            let mut cuts: Vec<usize> = (b + 1..e).collect();
            cuts.shuffle(rng);
            let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
            cuts.sort();
            out.push('(');
            if labeled {
                out.push_str(LABELS.choose(rng).unwrap());
                out.push(' ');
            }
            let mut start = b;
            for (i, c) in cuts.iter().copied().chain(std::iter::once(e)).enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                go(rng, start, c, labeled, unary, false, out);
                start = c;
            }
            out.push(')');
        }
        if wrap {
            out.push(')');
        }
    }
    let mut out = String::new();
    go(rng, 1, n + 1, labeled, unary, true, &mut out);
    out
}

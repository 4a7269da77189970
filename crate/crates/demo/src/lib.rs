//! Browser bindings for the tree averager. Every export takes plain text and
//! returns a JSON string; `www/index.html` draws the results.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use treeavg::ensemble::{avg_tree, enumerate_binary_trees_capped, hit_counts, selective_mbr};
use treeavg::metrics::{score_sentence, EvalConfig};
use treeavg::treebank::{parse_bracketed, Tree};

/// Largest sentence `candidates` will list.
pub const CANDIDATE_CAP: usize = 9;

#[derive(Debug, Serialize)]
pub struct HitCell {
    pub begin: usize,
    pub end: usize,
    pub hits: u32,
    pub best: u64,
    pub split: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Averaged {
    pub tokens: Vec<String>,
    pub k: u32,
    pub tree: String,
    pub objective: u64,
    /// Rows by span width, narrowest first.
    pub chart: Vec<Vec<HitCell>>,
    pub teacher_hits: Vec<u64>,
    pub selected: String,
    pub selected_hits: u64,
}

#[derive(Debug, Serialize)]
pub struct Scored {
    pub tokens: usize,
    pub matched: Option<usize>,
    pub predicted: Option<usize>,
    pub gold: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Candidate {
    pub tree: String,
    pub hits: u64,
    pub chosen: bool,
}

fn parse_lines(text: &str) -> Result<Vec<Tree>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_bracketed(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

fn parse_one(text: &str) -> Result<Tree, String> {
    parse_bracketed(text.trim()).map_err(|e| e.to_string())
}

/// Averages the teacher trees in `text`, one per line.
pub fn average_teachers(text: &str) -> Result<Averaged, String> {
    let teachers = parse_lines(text)?;
    let hits = hit_counts(&teachers).map_err(|e| e.to_string())?;
    let (tree, chart) = avg_tree(&hits);
    let n = hits.n();
    let rows = (1..=n)
        .map(|w| {
            (1..=n + 1 - w)
                .map(|b| {
                    let span = treeavg::Span::new(b, b + w);
                    HitCell { begin: b, end: b + w, hits: hits.get(span), best: chart.best(span), split: chart.split(span) }
                })
                .collect()
        })
        .collect();
    let selected = selective_mbr(&teachers).map_err(|e| e.to_string())?;
    Ok(Averaged {
        tokens: tree.surfaces().into_iter().map(String::from).collect(),
        k: hits.k(),
        tree: tree.render(),
        objective: chart.objective(),
        chart: rows,
        teacher_hits: teachers.iter().map(|t| hits.total_hits(t)).collect(),
        selected_hits: hits.total_hits(&selected),
        selected: selected.render(),
    })
}

/// Unlabeled scores of `pred` against `gold`, with punctuation and trivial
/// spans removed.
pub fn score_pair(pred: &str, gold: &str) -> Result<Scored, String> {
    let (pred, gold) = (parse_one(pred)?, parse_one(gold)?);
    let s = score_sentence(&pred, &gold, &EvalConfig::default(), 1).map_err(|e| e.to_string())?;
    let prf = s.prf.as_ref();
    Ok(Scored {
        tokens: s.length,
        matched: prf.map(|p| p.matched),
        predicted: prf.map(|p| p.predicted),
        gold: prf.map(|p| p.gold),
        precision: prf.and_then(|p| p.precision_f64()),
        recall: prf.and_then(|p| p.recall_f64()),
        f1: prf.and_then(|p| p.f1_f64()),
    })
}

/// Every binary tree over the teachers' sentence with its total hit count,
/// best first. The averaged tree is marked.
pub fn list_candidates(text: &str) -> Result<Vec<Candidate>, String> {
    let teachers = parse_lines(text)?;
    let hits = hit_counts(&teachers).map_err(|e| e.to_string())?;
    let (best, _) = avg_tree(&hits);
    let surfaces = best.surfaces();
    let trees = enumerate_binary_trees_capped(hits.n(), CANDIDATE_CAP).map_err(|e| e.to_string())?;
    let mut out: Vec<Candidate> = trees
        .map(|t| {
            let t = Tree::from_spans(&surfaces, t.constituents(false).iter().copied()).expect("same length");
            Candidate { hits: hits.total_hits(&t), chosen: t == best, tree: t.render() }
        })
        .collect();
    // the averaged tree leads its tie group; otherwise enumeration order
    out.sort_by_key(|c| (std::cmp::Reverse(c.hits), !c.chosen));
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn average(teachers: &str) -> Result<String, JsValue> {
    to_js(average_teachers(teachers))
}

#[wasm_bindgen]
pub fn score(pred: &str, gold: &str) -> Result<String, JsValue> {
    to_js(score_pair(pred, gold))
}

#[wasm_bindgen]
pub fn candidates(teachers: &str) -> Result<String, JsValue> {
    to_js(list_candidates(teachers))
}

//! Minimum-Bayes-risk averaging of constituency trees.
//!
//! Given several parsers' outputs for the same sentence, [`ensemble::avg_tree`]
//! finds the binary tree with the highest summed F1 against all of them. The
//! surrounding modules read and write bracketed trees ([`treebank`]), score
//! trees evalb-style ([`metrics`]) and run whole corpora ([`pipeline`]).

pub mod ensemble;
pub mod metrics;
pub mod pipeline;
pub mod treebank;

pub use ensemble::{avg_tree, binary_oracle, brute_force_avg, enumerate_binary_trees, hit_counts, selective_mbr, Chart, HitCountTable};
pub use metrics::{corpus_eval, prf, sentence_f1, EvalConfig, EvalReport, Prf};
pub use treebank::{branching_tree, parse_bracketed, Direction, Span, SpanSet, Token, Tree};

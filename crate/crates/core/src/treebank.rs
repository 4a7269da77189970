//! Constituency trees over token sequences, the one-tree-per-line bracketed
//! text format, and span-set extraction.
//!
//! Token positions are 1-based and spans are half-open: `[b, e)` covers the
//! tokens `b..e`. A tree over `n` tokens always has the root span `[1, n+1)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// A half-open interval of 1-based token positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    /// Panics if `begin == 0` or `end <= begin`.
    pub fn new(begin: usize, end: usize) -> Self {
        assert!(begin >= 1 && begin < end, "invalid span [{begin},{end})");
        Span { begin, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.begin
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }

    pub fn is_disjoint(&self, other: &Span) -> bool {
        self.end <= other.begin || other.end <= self.begin
    }

    /// Two spans cross when they overlap without one containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        !self.is_disjoint(other) && !self.contains(other) && !other.contains(self)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.begin, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    /// 1-based position in the sentence.
    pub index: usize,
}

fn valid_surface(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub span: Span,
    pub label: Option<String>,
    pub children: Vec<Node>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("a tree needs at least one token")]
    NoTokens,
    #[error("invalid token {0:?}: tokens must be non-empty and free of whitespace and parentheses")]
    InvalidToken(String),
    #[error("span {span} lies outside a sentence of {len} tokens")]
    SpanOutOfRange { span: Span, len: usize },
    #[error("spans {0} and {1} cross")]
    CrossingSpans(Span, Span),
    #[error("every token was dropped")]
    AllTokensDropped,
}

/// A rooted, ordered constituency tree. Unary chains never occur: every
/// node has zero or at least two children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    tokens: Vec<Token>,
    root: Node,
}

// Intermediate shape used while building trees: spans are assigned and unary
// chains collapsed only when the draft is finalized.
enum Draft {
    Leaf { surface: String, label: Option<String> },
    Inner { label: Option<String>, children: Vec<Draft> },
}

impl Draft {
    // Drops empty inner nodes and collapses unary chains keeping the topmost label.
    fn normalize(self) -> Option<Draft> {
        match self {
            leaf @ Draft::Leaf { .. } => Some(leaf),
            Draft::Inner { label, children } => {
                let mut children: Vec<Draft> =
                    children.into_iter().filter_map(Draft::normalize).collect();
                match children.len() {
                    0 => None,
                    1 => {
                        let child = children.pop().unwrap();
                        Some(match child {
                            Draft::Leaf { surface, label: l } => Draft::Leaf { surface, label: label.or(l) },
                            Draft::Inner { label: l, children } => Draft::Inner { label: label.or(l), children },
                        })
                    }
                    _ => Some(Draft::Inner { label, children }),
                }
            }
        }
    }

    fn into_tree(self) -> Result<Tree, TreeError> {
        let draft = self.normalize().ok_or(TreeError::NoTokens)?;
        let mut tokens = Vec::new();
        let root = draft.assign(&mut tokens);
        Ok(Tree { tokens, root })
    }

    fn assign(self, tokens: &mut Vec<Token>) -> Node {
        match self {
            Draft::Leaf { surface, label } => {
                let index = tokens.len() + 1;
                tokens.push(Token { surface, index });
                Node { span: Span::new(index, index + 1), label, children: Vec::new() }
            }
            Draft::Inner { label, children } => {
                let begin = tokens.len() + 1;
                let children: Vec<Node> = children.into_iter().map(|c| c.assign(tokens)).collect();
                Node { span: Span::new(begin, tokens.len() + 1), label, children }
            }
        }
    }

    fn from_node(node: &Node, tokens: &[Token]) -> Draft {
        if node.is_leaf() {
            Draft::Leaf {
                surface: tokens[node.span.begin - 1].surface.clone(),
                label: node.label.clone(),
            }
        } else {
            Draft::Inner {
                label: node.label.clone(),
                children: node.children.iter().map(|c| Draft::from_node(c, tokens)).collect(),
            }
        }
    }
}

impl Tree {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn same_tokens(&self, other: &Tree) -> bool {
        self.tokens.len() == other.tokens.len()
            && self.tokens.iter().zip(&other.tokens).all(|(a, b)| a.surface == b.surface)
    }

    /// Nodes in preorder.
    pub fn nodes(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(2 * self.tokens.len());
        self.root.walk(&mut out);
        out
    }

    pub fn is_binary(&self) -> bool {
        self.nodes().iter().all(|n| n.children.is_empty() || n.children.len() == 2)
    }

    pub fn root_span(&self) -> Span {
        self.root.span
    }

    /// Builds the unlabeled tree whose internal nodes are exactly `spans`
    /// (plus the root); single-token and whole-sentence spans are implied and
    /// may be omitted. The spans must be pairwise nested or disjoint.
    pub fn from_spans<S, I>(surfaces: &[S], spans: I) -> Result<Tree, TreeError>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = Span>,
    {
        let n = surfaces.len();
        if n == 0 {
            return Err(TreeError::NoTokens);
        }
        if let Some(bad) = surfaces.iter().find(|s| !valid_surface(s.as_ref())) {
            return Err(TreeError::InvalidToken(bad.as_ref().to_string()));
        }
        let mut sorted: Vec<Span> = Vec::new();
        for s in spans {
            if s.end > n + 1 {
                return Err(TreeError::SpanOutOfRange { span: s, len: n });
            }
            if s.width() >= 2 && s.width() < n {
                sorted.push(s);
            }
        }
        sorted.sort_by(|a, b| a.begin.cmp(&b.begin).then(b.end.cmp(&a.end)));
        sorted.dedup();

        let mut stack: Vec<Span> = Vec::new();
        for s in &sorted {
            while stack.last().is_some_and(|top| top.end <= s.begin) {
                stack.pop();
            }
            if let Some(top) = stack.last() {
                if s.end > top.end {
                    return Err(TreeError::CrossingSpans(*top, *s));
                }
            }
            stack.push(*s);
        }

        // ends by begin, widest first
        let mut by_begin: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in &sorted {
            by_begin.entry(s.begin).or_default().push(s.end);
        }

        fn build<S: AsRef<str>>(
            begin: usize,
            end: usize,
            surfaces: &[S],
            by_begin: &BTreeMap<usize, Vec<usize>>,
        ) -> Draft {
            if end - begin == 1 {
                return Draft::Leaf { surface: surfaces[begin - 1].as_ref().to_string(), label: None };
            }
            let mut children = Vec::new();
            let mut pos = begin;
            while pos < end {
                let child_end = by_begin
                    .get(&pos)
                    .and_then(|ends| ends.iter().copied().find(|&e| e <= end && (e, pos) != (end, begin)));
                match child_end {
                    Some(e) => {
                        children.push(build(pos, e, surfaces, by_begin));
                        pos = e;
                    }
                    None => {
                        children.push(build(pos, pos + 1, surfaces, by_begin));
                        pos += 1;
                    }
                }
            }
            Draft::Inner { label: None, children }
        }

        build(1, n + 1, surfaces, &by_begin).into_tree()
    }

    /// All node spans; with `include_trivial` unset, single-token spans and
    /// the whole-sentence span are left out.
    pub fn constituents(&self, include_trivial: bool) -> SpanSet {
        let root = self.root.span;
        self.nodes()
            .into_iter()
            .map(|n| n.span)
            .filter(|s| include_trivial || (s.width() > 1 && *s != root))
            .collect()
    }

    /// Spans of labeled nodes, in preorder. Leaf labels (POS tags) are
    /// included; callers filter by width as needed.
    pub fn labeled_spans(&self) -> Vec<LabeledSpan> {
        self.nodes()
            .into_iter()
            .filter_map(|n| n.label.as_ref().map(|l| LabeledSpan { span: n.span, label: l.clone() }))
            .collect()
    }

    /// The same bracketing with every label removed.
    pub fn unlabeled(&self) -> Tree {
        fn clear(node: &Node) -> Node {
            Node { span: node.span, label: None, children: node.children.iter().map(clear).collect() }
        }
        Tree { tokens: self.tokens.clone(), root: clear(&self.root) }
    }

    /// Split points of the binary nodes in preorder (root first, then the
    /// left subtree, then the right). Identifies a binary tree uniquely.
    pub fn split_sequence(&self) -> Vec<usize> {
        self.nodes()
            .into_iter()
            .filter(|n| n.children.len() == 2)
            .map(|n| n.children[1].span.begin)
            .collect()
    }

    /// Bracketed text of the tree. An unlabeled tree that would read back as
    /// labeled, like `(a b (c d))`, is written with its first token wrapped:
    /// `((a) b (c d))`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(&self.root, true, &mut out);
        let ambiguous = !self.root.is_leaf()
            && self.nodes().iter().all(|n| n.label.is_none() && (n.is_leaf() || n.children[0].is_leaf()));
        if ambiguous && read_sexp(&out).is_ok_and(|s| s.looks_labeled()) {
            let first = &self.tokens[0].surface;
            out.replace_range(1..1 + first.len(), &format!("({first})"));
        }
        out
    }

    fn render_node(&self, node: &Node, top: bool, out: &mut String) {
        if node.is_leaf() {
            let surface = &self.tokens[node.span.begin - 1].surface;
            match &node.label {
                Some(l) => {
                    out.push('(');
                    out.push_str(l);
                    out.push(' ');
                    out.push_str(surface);
                    out.push(')');
                }
                None if top => {
                    out.push('(');
                    out.push_str(surface);
                    out.push(')');
                }
                None => out.push_str(surface),
            }
            return;
        }
        out.push('(');
        if let Some(l) = &node.label {
            out.push_str(l);
            out.push(' ');
        }
        for (i, c) in node.children.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            self.render_node(c, false, out);
        }
        out.push(')');
    }

    /// Removes the tokens matching `drop`, deletes nodes left empty, collapses
    /// the resulting unary chains and renumbers the surviving tokens.
    pub fn strip_tokens<F>(&self, mut drop: F) -> Result<Tree, TreeError>
    where
        F: FnMut(&Token) -> bool,
    {
        if !self.tokens.iter().any(|t| !drop(t)) {
            return Err(TreeError::AllTokensDropped);
        }
        fn prune<F: FnMut(&Token) -> bool>(d: Draft, tokens: &[Token], next: &mut usize, drop: &mut F) -> Option<Draft> {
            match d {
                Draft::Leaf { surface, label } => {
                    let tok = &tokens[*next];
                    *next += 1;
                    if drop(tok) {
                        None
                    } else {
                        Some(Draft::Leaf { surface, label })
                    }
                }
                Draft::Inner { label, children } => {
                    let children: Vec<Draft> =
                        children.into_iter().filter_map(|c| prune(c, tokens, next, drop)).collect();
                    Some(Draft::Inner { label, children })
                }
            }
        }
        let draft = Draft::from_node(&self.root, &self.tokens);
        let mut next = 0;
        let pruned = prune(draft, &self.tokens, &mut next, &mut drop).ok_or(TreeError::AllTokensDropped)?;
        pruned.into_tree()
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledSpan {
    pub span: Span,
    pub label: String,
}

/// An ordered set of spans.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanSet(BTreeSet<Span>);

impl SpanSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, span: Span) -> bool {
        self.0.insert(span)
    }

    pub fn contains(&self, span: &Span) -> bool {
        self.0.contains(span)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Span> + '_ {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &SpanSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    /// True when no two spans cross.
    pub fn is_laminar(&self) -> bool {
        let spans: Vec<&Span> = self.0.iter().collect();
        spans.iter().enumerate().all(|(i, a)| spans[i + 1..].iter().all(|b| !a.crosses(b)))
    }
}

impl FromIterator<Span> for SpanSet {
    fn from_iter<I: IntoIterator<Item = Span>>(iter: I) -> Self {
        SpanSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a SpanSet {
    type Item = &'a Span;
    type IntoIter = std::collections::btree_set::Iter<'a, Span>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            other => Err(format!("unknown direction {other:?} (expected left or right)")),
        }
    }
}

/// Fully left- or right-branching binary tree over the placeholder tokens
/// `w1 … wn`.
pub fn branching_tree(n: usize, direction: Direction) -> Result<Tree, TreeError> {
    let surfaces: Vec<String> = (1..=n).map(|i| format!("w{i}")).collect();
    branching_over(&surfaces, direction)
}

/// Fully left- or right-branching binary tree over the given tokens.
pub fn branching_over<S: AsRef<str>>(surfaces: &[S], direction: Direction) -> Result<Tree, TreeError> {
    let n = surfaces.len();
    let spans = (2..n).map(|w| match direction {
        Direction::Left => Span::new(1, 1 + w),
        Direction::Right => Span::new(n + 1 - w, n + 1),
    });
    Tree::from_spans(surfaces, spans)
}

// ---------------------------------------------------------------------------
// Bracketed text

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LabelMode {
    /// Read the first atom of a group as its label only if the whole line
    /// looks like a labeled treebank tree (see [`parse_bracketed`]).
    #[default]
    Auto,
    /// A group's leading atom is its label whenever more items follow it.
    Labeled,
    /// Every atom is a token.
    Unlabeled,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(LabelMode::Auto),
            "labeled" => Ok(LabelMode::Labeled),
            "unlabeled" => Ok(LabelMode::Unlabeled),
            other => Err(format!("unknown label mode {other:?} (expected auto, labeled or unlabeled)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnbalancedParens,
    EmptyConstituent,
    NoTokens,
    TrailingInput,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::UnbalancedParens => "unbalanced parentheses",
            ParseErrorKind::EmptyConstituent => "empty constituent",
            ParseErrorKind::NoTokens => "no tokens",
            ParseErrorKind::TrailingInput => "trailing input after tree",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind} at character {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// 0-based character offset into the line.
    pub offset: usize,
}

enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl Sexp {
    fn groups_are_labeled(&self) -> bool {
        match self {
            Sexp::Atom(_) => true,
            Sexp::List(items) => {
                items.len() >= 2
                    && matches!(items[0], Sexp::Atom(_))
                    && items[1..].iter().all(Sexp::groups_are_labeled)
            }
        }
    }

    /// Under the labeled reading: (tokens, tokens inside `(TAG word)`
    /// groups, bare tokens).
    fn labeled_leaf_counts(&self) -> (usize, usize, usize) {
        match self {
            Sexp::Atom(_) => (1, 0, 1),
            Sexp::List(items) if items.len() == 2 && matches!(items[1], Sexp::Atom(_)) => (1, 1, 0),
            Sexp::List(items) => items[1..].iter().map(Sexp::labeled_leaf_counts).fold((0, 0, 0), |a, b| {
                (a.0 + b.0, a.1 + b.1, a.2 + b.2)
            }),
        }
    }

    fn looks_labeled(&self) -> bool {
        if !self.groups_are_labeled() {
            return false;
        }
        let (tokens, tagged, bare) = self.labeled_leaf_counts();
        tokens >= 2 && (tagged == 0 || bare == 0)
    }

    fn into_draft(self, labeled: bool) -> Draft {
        match self {
            Sexp::Atom(surface) => Draft::Leaf { surface, label: None },
            Sexp::List(mut items) => {
                let label = if labeled && items.len() >= 2 && matches!(items[0], Sexp::Atom(_)) {
                    match items.remove(0) {
                        Sexp::Atom(l) => Some(l),
                        Sexp::List(_) => unreachable!(),
                    }
                } else {
                    None
                };
                Draft::Inner { label, children: items.into_iter().map(|c| c.into_draft(labeled)).collect() }
            }
        }
    }
}

fn read_sexp(line: &str) -> Result<Sexp, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let err = |kind, offset| ParseError { kind, offset };
    let mut stack: Vec<(usize, Vec<Sexp>)> = Vec::new();
    let mut done: Option<Sexp> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if done.is_some() {
            return Err(err(ParseErrorKind::TrailingInput, i));
        }
        match c {
            '(' => {
                stack.push((i, Vec::new()));
                i += 1;
            }
            ')' => {
                let (open, items) = stack.pop().ok_or(err(ParseErrorKind::UnbalancedParens, i))?;
                if items.is_empty() {
                    return Err(err(ParseErrorKind::EmptyConstituent, open));
                }
                let list = Sexp::List(items);
                match stack.last_mut() {
                    Some((_, parent)) => parent.push(list),
                    None => done = Some(list),
                }
                i += 1;
            }
            _ => {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != ')' {
                    i += 1;
                }
                let atom = Sexp::Atom(chars[start..i].iter().collect());
                match stack.last_mut() {
                    Some((_, parent)) => parent.push(atom),
                    None => done = Some(atom),
                }
            }
        }
    }
    if let Some((open, _)) = stack.pop() {
        return Err(err(ParseErrorKind::UnbalancedParens, open));
    }
    done.ok_or(err(ParseErrorKind::NoTokens, 0))
}

/// Parses one bracketed tree, deciding automatically whether group-initial
/// atoms are labels.
///
/// A line is read as labeled when every group starts with an atom followed
/// by at least one more item, that reading leaves two or more tokens, and
/// its tokens are either all POS-tagged `(TAG word)` or all bare. Otherwise
/// every atom is a token. Every tree produced by [`Tree::render`] and every
/// fully labeled tree of two or more tokens is read back as written. Flat
/// unlabeled groups that open with a bare token, such as `(a b c)`, read as
/// labeled; use [`parse_bracketed_with`] to force a reading.
pub fn parse_bracketed(line: &str) -> Result<Tree, ParseError> {
    parse_bracketed_with(line, LabelMode::Auto)
}

pub fn parse_bracketed_with(line: &str, mode: LabelMode) -> Result<Tree, ParseError> {
    let mut sexp = read_sexp(line)?;
    // PTB files wrap each tree in an unlabeled outer group: `( (S ...) )`.
    while let Sexp::List(items) = &mut sexp {
        if items.len() == 1 && matches!(items[0], Sexp::List(_)) {
            sexp = items.pop().unwrap();
        } else {
            break;
        }
    }
    let labeled = match mode {
        LabelMode::Labeled => true,
        LabelMode::Unlabeled => false,
        LabelMode::Auto => sexp.looks_labeled(),
    };
    sexp.into_draft(labeled)
        .into_tree()
        .map_err(|_| ParseError { kind: ParseErrorKind::NoTokens, offset: 0 })
}

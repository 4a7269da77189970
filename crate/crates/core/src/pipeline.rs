//! Whole-corpus runs: reading teacher and gold files line by line, checking
//! that every line agrees on its tokens, and producing one output tree per
//! input line.
//!
//! Sentences are independent, so each batch of lines is processed in
//! parallel and written back in input order.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::ensemble::{avg_tree, hit_counts, selective_mbr};
use crate::metrics::{score_sentence, EvalConfig, EvalReport, MetricsError, SentenceEval};
use crate::treebank::{branching_over, parse_bracketed_with, Direction, LabelMode, Token, Tree};

pub const DEFAULT_BATCH_SIZE: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Average tree of all teachers.
    Ensemble,
    /// The best of the teachers' own trees.
    Selective,
    /// Best binary tree against gold.
    Oracle,
    /// Left- or right-branching trees over the gold tokens.
    Baseline(Direction),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub teacher_paths: Vec<PathBuf>,
    pub gold_path: Option<PathBuf>,
    pub eval: EvalConfig,
    pub mode: Mode,
    pub output_path: PathBuf,
    /// Remove punctuation before ensembling instead of only at scoring time.
    pub strip_punct_pre: bool,
    /// Worker threads; 0 lets rayon decide.
    pub workers: usize,
    pub batch_size: usize,
    pub label_mode: LabelMode,
}

impl RunConfig {
    pub fn new(mode: Mode, output_path: impl Into<PathBuf>) -> Self {
        RunConfig {
            teacher_paths: Vec::new(),
            gold_path: None,
            eval: EvalConfig::default(),
            mode,
            output_path: output_path.into(),
            strip_punct_pre: false,
            workers: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            label_mode: LabelMode::Auto,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match self.mode {
            Mode::Ensemble | Mode::Selective if self.teacher_paths.is_empty() => {
                Err(PipelineError::Config("this mode needs at least one teacher file".into()))
            }
            Mode::Oracle | Mode::Baseline(_) if self.gold_path.is_none() => {
                Err(PipelineError::Config("this mode needs a gold file".into()))
            }
            _ if self.batch_size == 0 => Err(PipelineError::Config("batch size must be positive".into())),
            _ => Ok(()),
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = self.teacher_paths.clone();
        v.extend(self.gold_path.iter().cloned());
        v
    }
}

/// One validation failure, located by file and 1-based line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file.display(), self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Config(String),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedSentence {
    /// 1-based line number.
    pub id: usize,
    pub tokens: Vec<Token>,
    pub teachers: Vec<Tree>,
    pub gold: Option<Tree>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedCorpus {
    pub sentences: Vec<AlignedSentence>,
    /// Teachers per sentence.
    pub k: usize,
}

/// Reads several files in lockstep, one line from each per sentence.
struct LockstepLines {
    paths: Vec<PathBuf>,
    readers: Vec<io::Lines<BufReader<File>>>,
    line: usize,
}

impl LockstepLines {
    fn open(paths: Vec<PathBuf>) -> Result<Self, PipelineError> {
        let readers = paths
            .iter()
            .map(|p| File::open(p).map(|f| BufReader::new(f).lines()).map_err(|e| PipelineError::io(p, e)))
            .collect::<Result<_, _>>()?;
        Ok(LockstepLines { paths, readers, line: 0 })
    }

    /// Up to `max` rows of one line per file. Stops early at end of input;
    /// files of unequal length produce a diagnostic naming the counts.
    fn next_batch(&mut self, max: usize) -> Result<(Vec<Vec<String>>, Option<Diagnostic>), PipelineError> {
        let mut rows = Vec::with_capacity(max);
        while rows.len() < max {
            let mut row = Vec::with_capacity(self.readers.len());
            let mut ended = Vec::new();
            for (i, r) in self.readers.iter_mut().enumerate() {
                match r.next() {
                    Some(Ok(l)) => row.push(l),
                    Some(Err(e)) => return Err(PipelineError::io(&self.paths[i], e)),
                    None => ended.push(i),
                }
            }
            if ended.len() == self.readers.len() {
                break;
            }
            self.line += 1;
            if !ended.is_empty() {
                return Ok((rows, Some(self.count_mismatch(&ended))));
            }
            rows.push(row);
        }
        Ok((rows, None))
    }

    // Called once some files ended early; drains the rest to report totals.
    fn count_mismatch(&mut self, ended: &[usize]) -> Diagnostic {
        let line = self.line;
        let lens: Vec<usize> = self
            .readers
            .iter_mut()
            .enumerate()
            .map(|(i, r)| if ended.contains(&i) { line - 1 } else { line + r.by_ref().count() })
            .collect();
        let short = (0..lens.len()).min_by_key(|&i| lens[i]).unwrap();
        let long = (0..lens.len()).max_by_key(|&i| lens[i]).unwrap();
        Diagnostic {
            file: self.paths[short].clone(),
            line: lens[short] + 1,
            message: format!(
                "line count mismatch: {} has {} lines but {} has {}",
                self.paths[short].display(),
                lens[short],
                self.paths[long].display(),
                lens[long]
            ),
        }
    }
}

fn read_all_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    BufReader::new(f).lines().collect::<Result<_, _>>().map_err(|e| PipelineError::io(path, e))
}

fn parse_line(line: &str, mode: LabelMode, file: &Path, id: usize) -> Result<Tree, Diagnostic> {
    let diag = |message: String| Diagnostic { file: file.to_path_buf(), line: id, message };
    if line.trim().is_empty() {
        return Err(diag("blank line".into()));
    }
    parse_bracketed_with(line, mode).map_err(|e| diag(format!("parse error: {e}")))
}

fn first_token_difference(a: &Tree, b: &Tree) -> String {
    let (x, y) = (a.surfaces(), b.surfaces());
    let i = x.iter().zip(&y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len()));
    format!(
        "token mismatch at index {}: {:?} vs {:?}",
        i + 1,
        x.get(i).copied().unwrap_or("<end>"),
        y.get(i).copied().unwrap_or("<end>")
    )
}

/// Parses one row (a line from each input file) and checks token agreement.
/// The first file is the reference for token comparisons.
fn align_row(
    id: usize,
    row: &[String],
    cfg: &RunConfig,
    paths: &[PathBuf],
) -> Result<AlignedSentence, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut trees = Vec::with_capacity(row.len());
    for (line, path) in row.iter().zip(paths) {
        match parse_line(line.trim_end_matches('\r'), cfg.label_mode, path, id) {
            Ok(t) => trees.push(Some(if cfg.strip_punct_pre { cfg.eval.strip(&t) } else { t })),
            Err(d) => {
                diags.push(d);
                trees.push(None);
            }
        }
    }
    if let Some(reference) = trees.iter().flatten().next().cloned() {
        for (t, path) in trees.iter().zip(paths) {
            if let Some(t) = t {
                if !t.same_tokens(&reference) {
                    diags.push(Diagnostic {
                        file: path.clone(),
                        line: id,
                        message: first_token_difference(&reference, t),
                    });
                }
            }
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let mut trees: Vec<Tree> = trees.into_iter().map(Option::unwrap).collect();
    let gold = cfg.gold_path.as_ref().map(|_| trees.pop().unwrap());
    let tokens = gold.as_ref().or(trees.first()).map(|t| t.tokens().to_vec()).unwrap_or_default();
    Ok(AlignedSentence { id, tokens, teachers: trees, gold })
}

/// Reads every input file completely and returns the aligned corpus, or all
/// validation failures found.
pub fn load_aligned(cfg: &RunConfig) -> Result<AlignedCorpus, PipelineError> {
    let paths = cfg.inputs();
    if paths.is_empty() {
        return Err(PipelineError::Config("no input files".into()));
    }
    let files: Vec<Vec<String>> = paths.iter().map(|p| read_all_lines(p)).collect::<Result<_, _>>()?;
    let mut diags = Vec::new();
    let lens: Vec<usize> = files.iter().map(Vec::len).collect();
    for i in 1..lens.len() {
        if lens[i] != lens[0] {
            diags.push(Diagnostic {
                file: paths[i].clone(),
                line: lens[i].min(lens[0]) + 1,
                message: format!(
                    "line count mismatch: {} has {} lines but {} has {}",
                    paths[0].display(),
                    lens[0],
                    paths[i].display(),
                    lens[i]
                ),
            });
        }
    }
    let rows = *lens.iter().min().unwrap();
    let mut sentences = Vec::with_capacity(rows);
    for r in 0..rows {
        let row: Vec<String> = files.iter().map(|f| f[r].clone()).collect();
        match align_row(r + 1, &row, cfg, &paths) {
            Ok(s) => sentences.push(s),
            Err(d) => diags.extend(d),
        }
    }
    if !diags.is_empty() {
        return Err(PipelineError::Invalid(diags));
    }
    Ok(AlignedCorpus { sentences, k: cfg.teacher_paths.len() })
}

/// Reads one tree per line, reporting every malformed line.
pub fn read_trees(path: &Path, mode: LabelMode) -> Result<Vec<Tree>, PipelineError> {
    let lines = read_all_lines(path)?;
    let mut diags = Vec::new();
    let mut trees = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        match parse_line(l.trim_end_matches('\r'), mode, path, i + 1) {
            Ok(t) => trees.push(t),
            Err(d) => diags.push(d),
        }
    }
    if diags.is_empty() {
        Ok(trees)
    } else {
        Err(PipelineError::Invalid(diags))
    }
}

pub fn write_trees(path: &Path, trees: &[Tree]) -> Result<(), PipelineError> {
    let f = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for t in trees {
        writeln!(w, "{t}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Output tree for one sentence plus its total hit count against the
/// teachers (or against gold for the oracle).
pub fn process_sentence(sentence: &AlignedSentence, mode: Mode) -> (Tree, Option<u64>) {
    match mode {
        Mode::Ensemble => {
            let hits = hit_counts(&sentence.teachers).expect("aligned teachers");
            let (tree, chart) = avg_tree(&hits);
            (tree, Some(chart.objective()))
        }
        Mode::Selective => {
            let tree = selective_mbr(&sentence.teachers).expect("aligned teachers");
            let hits = hit_counts(&sentence.teachers).expect("aligned teachers");
            let total = hits.total_hits(&tree);
            (tree, Some(total))
        }
        Mode::Oracle => {
            let gold = sentence.gold.as_ref().expect("oracle needs gold");
            let hits = hit_counts(std::slice::from_ref(gold)).expect("one tree");
            let (tree, chart) = avg_tree(&hits);
            (tree, Some(chart.objective()))
        }
        Mode::Baseline(direction) => {
            let surfaces: Vec<&str> = sentence.tokens.iter().map(|t| t.surface.as_str()).collect();
            (branching_over(&surfaces, direction).expect("non-empty sentence"), None)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub sentences: usize,
    pub k: usize,
    /// Mean total hit count of the output trees, when defined for the mode.
    pub mean_objective: Option<f64>,
    pub report: Option<EvalReport>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let noun = if self.sentences == 1 { "sentence" } else { "sentences" };
        write!(f, "{} {noun}, K={}", self.sentences, self.k)?;
        if let Some(m) = self.mean_objective {
            write!(f, ", mean objective {m}")?;
        }
        if let Some(r) = &self.report {
            match r.corpus_f1 {
                Some(f1) => write!(f, ", F1 {:.1}", 100.0 * f1)?,
                None => write!(f, ", F1 undefined")?,
            }
            write!(f, " ({} skipped)", r.skipped)?;
        }
        Ok(())
    }
}

type Processed = (Tree, Option<u64>, Option<Result<SentenceEval, MetricsError>>);

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

/// Runs one mode over the whole corpus and writes one tree per input line
/// to `cfg.output_path`. Nothing is written if any line fails validation.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    cfg.eval.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;

    let paths = cfg.inputs();
    let mut source = LockstepLines::open(paths.clone())?;
    let tmp = partial_path(&cfg.output_path);
    let file = File::create(&tmp).map_err(|e| PipelineError::io(&cfg.output_path, e))?;
    let mut out = BufWriter::new(file);

    let result = (|| {
        let mut diags = Vec::new();
        let mut evals = Vec::new();
        let mut objective_sum = 0u64;
        let mut scored = 0usize;
        let mut count = 0usize;
        loop {
            let first_id = source.line + 1;
            let (rows, mismatch) = source.next_batch(cfg.batch_size)?;
            if rows.is_empty() && mismatch.is_none() {
                break;
            }
            let aligned: Vec<Result<AlignedSentence, Vec<Diagnostic>>> = pool.install(|| {
                rows.par_iter().enumerate().map(|(i, row)| align_row(first_id + i, row, cfg, &paths)).collect()
            });
            let mut batch = Vec::with_capacity(aligned.len());
            for a in aligned {
                match a {
                    Ok(s) => batch.push(s),
                    Err(d) => diags.extend(d),
                }
            }
            if let Some(d) = mismatch {
                diags.push(d);
                break;
            }
            if !diags.is_empty() {
                // keep scanning for further diagnostics only
                continue;
            }
            let mode = cfg.mode;
            let eval = &cfg.eval;
            let processed: Vec<Processed> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|s| {
                        let (tree, objective) = process_sentence(s, mode);
                        let scored = s.gold.as_ref().map(|g| {
                            score_sentence(&tree, g, eval, s.id)
                                .map(|r| SentenceEval { id: s.id, length: r.length, f1: r.f1() })
                        });
                        (tree, objective, scored)
                    })
                    .collect()
            });
            for (tree, objective, eval) in processed {
                writeln!(out, "{tree}").map_err(|e| PipelineError::io(&cfg.output_path, e))?;
                count += 1;
                if let Some(o) = objective {
                    objective_sum += o;
                    scored += 1;
                }
                if let Some(e) = eval {
                    evals.push(e?);
                }
            }
        }
        if !diags.is_empty() {
            return Err(PipelineError::Invalid(diags));
        }
        out.flush().map_err(|e| PipelineError::io(&cfg.output_path, e))?;
        Ok(RunSummary {
            sentences: count,
            k: cfg.teacher_paths.len(),
            mean_objective: (scored > 0).then(|| objective_sum as f64 / scored as f64),
            report: cfg.gold_path.as_ref().map(|_| EvalReport::from_sentences(evals)),
        })
    })();

    drop(out);
    match result {
        Ok(summary) => {
            std::fs::rename(&tmp, &cfg.output_path).map_err(|e| PipelineError::io(&cfg.output_path, e))?;
            Ok(summary)
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    #[test]
    fn loads_aligned_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(dir.path(), "a", &["((a b) c)", "(x y)", "((p q) (r s))"]);
        let b = file(dir.path(), "b", &["(a (b c))", "(x y)", "(p (q (r s)))"]);
        let mut cfg = RunConfig::new(Mode::Ensemble, dir.path().join("out"));
        cfg.teacher_paths = vec![a, b];
        let corpus = load_aligned(&cfg).unwrap();
        assert_eq!(corpus.k, 2);
        assert_eq!(corpus.sentences.len(), 3);
        assert_eq!(corpus.sentences[2].teachers.len(), 2);
        assert_eq!(corpus.sentences[2].id, 3);
    }

    #[test]
    fn line_count_mismatch_names_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(dir.path(), "a", &["(a b)", "(a b)", "(a b)"]);
        let b = file(dir.path(), "b", &["(a b)", "(a b)"]);
        let mut cfg = RunConfig::new(Mode::Ensemble, dir.path().join("out"));
        cfg.teacher_paths = vec![a, b];
        let err = load_aligned(&cfg).unwrap_err().to_string();
        assert!(err.contains("has 3 lines") && err.contains("has 2"), "{err}");
        let err = run(&cfg).unwrap_err().to_string();
        assert!(err.contains("has 2 lines") && err.contains("has 3"), "{err}");
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn token_mismatch_cites_line_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..7).map(|_| "((the dog) barks)".to_string()).collect();
        let mut other = lines.clone();
        other[6] = "((the dogs) barks)".to_string();
        let a = file(dir.path(), "a", &lines.iter().map(String::as_str).collect::<Vec<_>>());
        let b = file(dir.path(), "b", &other.iter().map(String::as_str).collect::<Vec<_>>());
        let mut cfg = RunConfig::new(Mode::Ensemble, dir.path().join("out"));
        cfg.teacher_paths = vec![a, b.clone()];
        match load_aligned(&cfg).unwrap_err() {
            PipelineError::Invalid(d) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].file, b);
                assert_eq!(d[0].line, 7);
                assert!(d[0].message.contains("index 2"), "{}", d[0].message);
                assert!(d[0].message.contains("\"dogs\""));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn all_errors_are_collected() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(dir.path(), "a", &["((a b) c)", "((a b", "", "(x y)"]);
        let mut cfg = RunConfig::new(Mode::Ensemble, dir.path().join("out"));
        cfg.teacher_paths = vec![a];
        match run(&cfg).unwrap_err() {
            PipelineError::Invalid(d) => {
                assert_eq!(d.iter().map(|d| d.line).collect::<Vec<_>>(), vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn mode_requirements() {
        let cfg = RunConfig::new(Mode::Oracle, "out");
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = RunConfig::new(Mode::Ensemble, "out");
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn pre_stripping_changes_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let a = file(dir.path(), "a", &["(((a b) c) .)"]);
        let b = file(dir.path(), "b", &["((a (b c)) .)"]);
        let mut cfg = RunConfig::new(Mode::Ensemble, dir.path().join("out"));
        cfg.teacher_paths = vec![a, b];
        cfg.strip_punct_pre = true;
        run(&cfg).unwrap();
        let out = std::fs::read_to_string(dir.path().join("out")).unwrap();
        // tied teachers: the smaller root split wins
        assert_eq!(out, "(a (b c))\n");
    }
}

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treeavg::ensemble::{enumerate_binary_trees_capped, DEFAULT_ENUMERATION_CAP};
use treeavg::metrics::{
    agreement_matrix, breakdown_tsv, corpus_eval, f1_by_length, recall_by_label, EvalConfig, LengthBucket,
    DEFAULT_LABELS, DEFAULT_PUNCTUATION,
};
use treeavg::pipeline::{read_trees, run, Mode, RunConfig, RunSummary, DEFAULT_BATCH_SIZE};
use treeavg::treebank::{Direction, LabelMode, Tree};

const PUNCT_HELP: &str = "Punctuation surfaces removed before scoring, as one space-separated \
string [default: \". , : ; `` '' ' ` ? ! -LRB- -RRB- ... -- -\"]";
const DEFAULT_BUCKETS: &str = "1-10,11-20,21-30,31-40,41+";

#[derive(Parser)]
#[command(name = "treeavg", version, about = "Average constituency trees and score them against gold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average tree of all teachers, one output line per input line
    Ensemble(TeacherArgs),
    /// Pick the teacher tree that agrees most with the others
    MbrSelect(TeacherArgs),
    /// Per-sentence F1 of predictions against gold, as TSV
    Eval(PairArgs),
    /// Pairwise F1 between files, in percent
    Agree {
        /// Tree files with the same sentences
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Print raw fractions as TSV instead of a percent table
        #[arg(long)]
        tsv: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Best binary trees against gold
    Oracle(GoldArgs),
    /// Left- or right-branching trees over the gold tokens
    Baseline {
        /// left or right
        #[arg(long)]
        direction: Direction,
        #[command(flatten)]
        gold: GoldArgs,
    },
    /// Mean sentence F1 per gold length bucket, as TSV
    ByLength(PairArgs),
    /// Recall of gold constituents per label, as TSV
    ByLabel {
        #[command(flatten)]
        pair: PairArgs,
        /// Labels to report; function tags on gold labels are ignored
        #[arg(long, num_args = 1.., default_values_t = DEFAULT_LABELS.map(String::from))]
        labels: Vec<String>,
    },
    /// Print every binary bracketing of w1 … wN
    Enumerate {
        #[arg(long)]
        n: usize,
        /// Refuse larger N
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        cap: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, allow_hyphen_values = true, help = PUNCT_HELP)]
    punct: Option<String>,
    /// Score punctuation like any other token
    #[arg(long, conflicts_with = "punct")]
    keep_punct: bool,
    /// Skip sentences with fewer gold constituents than this
    #[arg(long, default_value_t = 1)]
    min_gold: usize,
    /// Length buckets for by-length, comma separated
    #[arg(long, default_value = DEFAULT_BUCKETS, value_delimiter = ',')]
    buckets: Vec<LengthBucket>,
    /// How to read bracketed input: auto, labeled or unlabeled
    #[arg(long, default_value = "auto")]
    label_mode: LabelMode,
    /// Worker threads; 0 uses one per core
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn eval_config(&self) -> EvalConfig {
        let punctuation: HashSet<String> = if self.keep_punct {
            HashSet::new()
        } else {
            match &self.punct {
                Some(p) => p.split_whitespace().map(String::from).collect(),
                None => DEFAULT_PUNCTUATION.iter().map(|s| s.to_string()).collect(),
            }
        };
        EvalConfig { punctuation, min_gold_constituents: self.min_gold, length_buckets: self.buckets.clone() }
    }

    fn run_config(&self, mode: Mode, out: &Path) -> RunConfig {
        let mut cfg = RunConfig::new(mode, out);
        cfg.eval = self.eval_config();
        cfg.label_mode = self.label_mode;
        cfg.workers = self.workers;
        cfg
    }
}

#[derive(Args)]
struct TeacherArgs {
    /// Teacher tree files, one bracketed tree per line
    #[arg(long, num_args = 1.., required = true)]
    teachers: Vec<PathBuf>,
    /// Output trees, one per input line
    #[arg(long)]
    out: PathBuf,
    /// Gold trees to score the output against
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Remove punctuation before combining teachers
    #[arg(long)]
    strip_punct_pre: bool,
    /// Write the per-sentence TSV report here (needs --gold)
    #[arg(long, requires = "gold")]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GoldArgs {
    #[arg(long)]
    gold: PathBuf,
    /// Output trees, one per gold line
    #[arg(long)]
    out: PathBuf,
    /// Write the per-sentence TSV report here
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[command(flatten)]
    common: Common,
}

impl PairArgs {
    fn load(&self) -> Result<(Vec<Tree>, Vec<Tree>), String> {
        let mode = self.common.label_mode;
        let pred = read_trees(&self.pred, mode).map_err(|e| e.to_string())?;
        let gold = read_trees(&self.gold, mode).map_err(|e| e.to_string())?;
        Ok((pred, gold))
    }
}

fn finish_run(cfg: &RunConfig, report: Option<&Path>) -> Result<String, String> {
    let summary: RunSummary = run(cfg).map_err(|e| e.to_string())?;
    if let (Some(path), Some(r)) = (report, &summary.report) {
        std::fs::write(path, r.to_tsv()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(format!("{summary}\n"))
}

fn teacher_run(args: &TeacherArgs, mode: Mode) -> Result<String, String> {
    let mut cfg = args.common.run_config(mode, &args.out);
    cfg.teacher_paths = args.teachers.clone();
    cfg.gold_path = args.gold.clone();
    cfg.strip_punct_pre = args.strip_punct_pre;
    cfg.batch_size = args.batch_size;
    finish_run(&cfg, args.report.as_deref())
}

fn gold_run(args: &GoldArgs, mode: Mode) -> Result<String, String> {
    let mut cfg = args.common.run_config(mode, &args.out);
    cfg.gold_path = Some(args.gold.clone());
    finish_run(&cfg, args.report.as_deref())
}

fn agreement_table(names: &[String], matrix: &[Vec<Option<f64>>], tsv: bool) -> String {
    let cell = |v: Option<f64>| match (v, tsv) {
        (None, _) => "NA".to_string(),
        (Some(x), true) => x.to_string(),
        (Some(x), false) => format!("{:.1}", 100.0 * x),
    };
    let mut out = String::new();
    if tsv {
        out.push_str("pred\\gold");
        for n in names {
            let _ = write!(out, "\t{n}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(matrix) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, "\t{}", cell(*v));
            }
            out.push('\n');
        }
        return out;
    }
    let width = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(5);
    let _ = write!(out, "{:width$}", "");
    for n in names {
        let _ = write!(out, "  {n:>width$}");
    }
    out.push('\n');
    for (n, row) in names.iter().zip(matrix) {
        let _ = write!(out, "{n:width$}");
        for v in row {
            let _ = write!(out, "  {:>width$}", cell(*v));
        }
        out.push('\n');
    }
    out
}

fn execute(cmd: Command) -> Result<String, String> {
    match cmd {
        Command::Ensemble(a) => teacher_run(&a, Mode::Ensemble),
        Command::MbrSelect(a) => teacher_run(&a, Mode::Selective),
        Command::Oracle(a) => gold_run(&a, Mode::Oracle),
        Command::Baseline { direction, gold } => gold_run(&gold, Mode::Baseline(direction)),
        Command::Eval(p) => {
            let (pred, gold) = p.load()?;
            let report = corpus_eval(&pred, &gold, &p.common.eval_config()).map_err(|e| e.to_string())?;
            Ok(report.to_tsv())
        }
        Command::ByLength(p) => {
            let (pred, gold) = p.load()?;
            let rows = f1_by_length(&pred, &gold, &p.common.eval_config()).map_err(|e| e.to_string())?;
            Ok(breakdown_tsv("bucket", &rows))
        }
        Command::ByLabel { pair, labels } => {
            let (pred, gold) = pair.load()?;
            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
            let rows = recall_by_label(&pred, &gold, &pair.common.eval_config(), &labels).map_err(|e| e.to_string())?;
            Ok(breakdown_tsv("label", &rows))
        }
        Command::Agree { inputs, tsv, common } => {
            let models = inputs
                .iter()
                .map(|p| read_trees(p, common.label_mode))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let matrix = agreement_matrix(&models, &common.eval_config()).map_err(|e| e.to_string())?;
            let names: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
            Ok(agreement_table(&names, &matrix, tsv))
        }
        Command::Enumerate { n, cap } => {
            let trees = enumerate_binary_trees_capped(n, cap).map_err(|e| e.to_string())?;
            Ok(trees.map(|t| t.render() + "\n").collect())
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

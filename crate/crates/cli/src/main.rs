use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ngram_shap::cnn::{
    load_model, predict, save_model, train, write_atomic, Architecture, CnnModel, TrainConfig,
};
use ngram_shap::corpus::{
    read_tsv, synthetic_corpus, synthetic_embeddings, write_tsv, LabeledText, SyntheticConfig,
};
use ngram_shap::explain::{
    exact_dedup, explain_document, feature_background, merge_dedup, subsample_background,
    Attribution, DedupedAttribution, ExplainConfig, Target,
};
use ngram_shap::ranking::{global_report, GlobalConfig, Partition, Scorer};
use ngram_shap::shapley::{
    default_budget, weight_capture_rate, weights_curve, BackgroundSet, Regularization,
    SamplingOrder,
};
use ngram_shap::sim::{run_linear_study, SimulationConfig};
use ngram_shap::similarity::similarity_histogram;
use ngram_shap::text::{load_embeddings, tokenize, TokenizedDocument, Vocabulary};

const THREADS_ENV: &str = "NGRAM_SHAP_THREADS";

#[derive(Parser)]
#[command(
    name = "ngram-shap",
    version,
    about = "SHAP explanations for text CNNs, mapped to n-grams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus, its vocabulary and embeddings.
    GenCorpus(GenCorpusArgs),
    /// Train a text CNN on a labelled TSV corpus.
    Train(TrainArgs),
    /// Explain one document.
    Explain(ExplainArgs),
    /// Rank n-grams across a corpus by their per-document SHAP ranks.
    Global(GlobalArgs),
    /// Pairwise filter similarity and its histogram.
    Filters(FiltersArgs),
    /// Exact vs kernel SHAP on the ten-feature linear study.
    Simulate(SimulateArgs),
    /// Per-coalition kernel weight by coalition size.
    WeightsCurve(WeightsCurveArgs),
    /// Share of total kernel weight captured by a coalition budget.
    CaptureCurve(CaptureCurveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchChoice {
    Desk,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Dedup {
    None,
    Exact,
    Merge,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    documents: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    marker_rate: f64,
    #[arg(long, default_value_t = 0.35)]
    cue_noise: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    embedding_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchChoice::Desk)]
    arch: ArchChoice,
    /// Overrides the architecture's padded length.
    #[arg(long)]
    pad_len: Option<usize>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Seeds both the initial weights and the batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ShapArgs {
    /// Coalition budget; defaults to 2h + 2048.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Background documents sampled from the corpus; all when omitted.
    #[arg(long)]
    background_size: Option<usize>,
    #[arg(long, default_value = "logit")]
    target: Target,
    #[arg(long, default_value = "ascending")]
    order: SamplingOrder,
    /// L1 penalty for feature selection before the constrained fit.
    #[arg(long)]
    l1: Option<f64>,
}

impl ShapArgs {
    fn explain_config(&self) -> ExplainConfig {
        ExplainConfig {
            budget: self.budget,
            seed: self.seed,
            target: self.target,
            order: self.order,
            regularization: match self.l1 {
                Some(alpha) => Regularization::L1 { alpha },
                None => Regularization::None,
            },
        }
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(
        long,
        conflicts_with = "text_file",
        required_unless_present = "text_file"
    )]
    text: Option<String>,
    #[arg(long)]
    text_file: Option<PathBuf>,
    /// Labelled TSV corpus supplying the background.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    shap: ShapArgs,
    /// Rows shown in the table.
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Which list the table shows.
    #[arg(long, value_enum, default_value_t = Dedup::Exact)]
    dedup: Dedup,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GlobalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    shap: ShapArgs,
    /// Ranks kept per document.
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, default_value = "ira")]
    scorer: Scorer,
    #[arg(long, default_value = "predicted")]
    partition: Partition,
    /// Rows per polarity in the output; all when omitted.
    #[arg(long)]
    top: Option<usize>,
    /// Add the summed |SHAP| column.
    #[arg(long)]
    compare_abs_shap: bool,
    /// Keep spans whose filters fire at or below their background mean.
    #[arg(long)]
    include_absent: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FiltersArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fixed segment length; the k-partial maximum when omitted.
    #[arg(long)]
    segment_len: Option<usize>,
    /// Pairwise similarity CSV (or the JSON report with `--format json`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    histogram_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,200,500")]
    budgets: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    background_size: usize,
    /// Skip the full-enumeration column.
    #[arg(long)]
    no_full: bool,
    #[arg(long, default_value = "ascending")]
    order: SamplingOrder,
    /// Explain an OLS fit to noisy responses instead of the true function.
    #[arg(long)]
    fit_regression: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    capture_out: Option<PathBuf>,
}

#[derive(Args)]
struct WeightsCurveArgs {
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaptureCurveArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    #[arg(long, default_value = "ascending")]
    order: SamplingOrder,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads().and_then(|_| run(cli)) {
        let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
        eprintln!("error: {}", chain.join(": "));
        return ExitCode::from(exit_code(&e));
    }
    ExitCode::SUCCESS
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use ngram_shap::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Io { .. } => 3,
                E::Format { .. } | E::Schema(_) | E::Version { .. } | E::Shape(_) => 4,
                E::InvalidArgument(_) | E::Config(_) | E::Budget { .. } | E::EmptyRanks => 5,
                E::EmptyBackground => 5,
                E::Divergence { .. }
                | E::InfiniteWeight { .. }
                | E::RankDeficient { .. }
                | E::LocalAccuracy { .. } => 6,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| ngram_shap::Error::Config(format!("{THREADS_ENV}={raw:?} is not a count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Global(a) => global_cmd(a),
        Command::Filters(a) => filters_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::WeightsCurve(a) => {
            let mut out = String::from("cardinality,weight\n");
            for (s, w) in weights_curve(a.m)? {
                writeln!(out, "{s},{w}")?;
            }
            emit(a.out.as_deref(), &out)
        }
        Command::CaptureCurve(a) => {
            let mut out = String::from("M,K,capture_rate\n");
            for &m in &a.m {
                for &k in &a.k {
                    writeln!(out, "{m},{k},{}", weight_capture_rate(m, k, a.order)?)?;
                }
            }
            emit(a.out.as_deref(), &out)
        }
    }
}

/// Atomic write to `path`, or stdout.
fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => Ok(write_atomic(p, content.as_bytes())?),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn unsupported(command: &str, format: &str) -> anyhow::Error {
    ngram_shap::Error::InvalidArgument(format!("{command} does not support --format {format}"))
        .into()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    for (name, rate) in [("marker-rate", a.marker_rate), ("cue-noise", a.cue_noise)] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(
                ngram_shap::Error::InvalidArgument(format!("--{name} must lie in [0, 1]")).into(),
            );
        }
    }
    let docs = synthetic_corpus(&SyntheticConfig {
        documents: a.documents,
        seed: a.seed,
        marker_rate: a.marker_rate,
        cue_noise: a.cue_noise,
    });
    let vocab = Vocabulary::from_corpus(docs.iter().map(|d| d.text.as_str()), 1, None);
    let emb = synthetic_embeddings(&vocab, a.dim, a.embedding_seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_tsv(&docs, a.out_dir.join("corpus.tsv"))?;
    vocab.save(a.out_dir.join("vocab.txt"))?;
    emb.save(&vocab, a.out_dir.join("embeddings.txt"))?;
    eprintln!(
        "wrote {} documents, {} vocabulary entries to {}",
        docs.len(),
        vocab.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn tokenize_corpus(
    docs: &[LabeledText],
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<Vec<TokenizedDocument>> {
    Ok(docs
        .iter()
        .map(|d| tokenize(&d.text, vocab, pad_len))
        .collect::<ngram_shap::Result<_>>()?)
}

/// How the model file should refer to `target`: a bare file name when it
/// sits next to the model, otherwise an absolute path.
fn reference(model_out: &Path, target: &Path) -> Result<String> {
    let target = fs::canonicalize(target).map_err(|e| ngram_shap::Error::io(target, e))?;
    let model_dir = model_out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let model_dir = fs::canonicalize(model_dir).map_err(|e| ngram_shap::Error::io(model_dir, e))?;
    Ok(match target.strip_prefix(&model_dir) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => target.to_string_lossy().into_owned(),
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut arch = match a.arch {
        ArchChoice::Desk => Architecture::desk(),
        ArchChoice::Full => Architecture::full(),
    };
    if let Some(l) = a.pad_len {
        arch.pad_len = l;
    }
    let docs = read_tsv(&a.corpus)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let emb = Arc::new(load_embeddings(&a.embeddings, &vocab)?);
    let tokenized = tokenize_corpus(&docs, &vocab, arch.pad_len)?;
    let labelled: Vec<(TokenizedDocument, u8)> = tokenized
        .into_iter()
        .zip(docs.iter().map(|d| d.label))
        .collect();
    let init = CnnModel::init(emb, &arch, a.seed)?;
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let (model, report) = train(&init, &labelled, &config)?;
    let correct = labelled
        .iter()
        .map(|(d, y)| predict(&model, d).map(|p| (p.probability >= 0.5) == (*y == 1)))
        .collect::<ngram_shap::Result<Vec<bool>>>()?
        .into_iter()
        .filter(|ok| *ok)
        .count();
    let vocab_ref = reference(&a.out, &a.vocab)?;
    let emb_ref = reference(&a.out, &a.embeddings)?;
    save_model(&model, &a.out, &vocab_ref, &emb_ref)?;
    eprintln!(
        "final loss {:.4}, training accuracy {:.3}",
        report.losses.last().copied().unwrap_or(f64::NAN),
        correct as f64 / labelled.len().max(1) as f64
    );
    Ok(())
}

/// Feature-space background from the corpus, optionally subsampled.
fn corpus_background(
    model: &CnnModel,
    vocab: &Vocabulary,
    corpus: &Path,
    size: Option<usize>,
    seed: u64,
) -> Result<(Vec<LabeledText>, Vec<TokenizedDocument>, BackgroundSet)> {
    let docs = read_tsv(corpus)?;
    if docs.is_empty() {
        return Err(ngram_shap::Error::EmptyBackground.into());
    }
    let tokenized = tokenize_corpus(&docs, vocab, model.pad_len)?;
    let mut bg = feature_background(model, &tokenized)?;
    if let Some(n) = size {
        bg = subsample_background(&bg, n, seed)?;
    }
    Ok((docs, tokenized, bg))
}

#[derive(Serialize)]
struct ExplainRecord<'a> {
    text: &'a str,
    logit: f64,
    probability: f64,
    base_value: f64,
    target: Target,
    budget: usize,
    seed: u64,
    attributions: &'a [Attribution],
    deduped: &'a [DedupedAttribution],
    merged: &'a [DedupedAttribution],
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let text = match (&a.text, &a.text_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => fs::read_to_string(p).map_err(|e| ngram_shap::Error::io(p, e))?,
        (None, None) => bail!("either --text or --text-file is required"),
    };
    let bundle = load_model(&a.model)?;
    let model = &bundle.model;
    let (_, _, bg) = corpus_background(
        model,
        &bundle.vocab,
        &a.corpus,
        a.shap.background_size,
        a.shap.seed,
    )?;
    let doc = tokenize(&text, &bundle.vocab, model.pad_len)?;
    let config = a.shap.explain_config();
    let e = explain_document(model, &doc, &bg, &config)?;
    let deduped = exact_dedup(&e.attributions);
    let merged = merge_dedup(&deduped);
    let out = match a.format {
        Format::Csv => return Err(unsupported("explain", "csv")),
        Format::Json => to_json(&ExplainRecord {
            text: &text,
            logit: e.logit,
            probability: e.probability,
            base_value: e.base_value,
            target: e.target,
            budget: config
                .budget
                .unwrap_or_else(|| default_budget(model.filter_count())),
            seed: config.seed,
            attributions: &e.attributions,
            deduped: &deduped,
            merged: &merged,
        })?,
        Format::Table => {
            let rows: Vec<(String, String, f64)> = match a.dedup {
                Dedup::None => {
                    let mut v: Vec<&Attribution> = e.attributions.iter().collect();
                    v.sort_by(|x, y| y.shap.abs().total_cmp(&x.shap.abs()));
                    v.into_iter()
                        .map(|x| (x.filter.to_string(), x.ngram.clone(), x.shap))
                        .collect()
                }
                Dedup::Exact | Dedup::Merge => {
                    let list = if a.dedup == Dedup::Exact {
                        &deduped
                    } else {
                        &merged
                    };
                    list.iter()
                        .map(|d| {
                            let ids: Vec<String> =
                                d.filters.iter().map(ToString::to_string).collect();
                            (ids.join(" "), d.ngram.clone(), d.shap)
                        })
                        .collect()
                }
            };
            let mut out = format!(
                "logit {:.4}  probability {:.4}  base {:.4}\n",
                e.logit, e.probability, e.base_value
            );
            out.push_str(&three_column_table(
                ["Filter", "N-gram", "SHAP"],
                rows.into_iter().take(a.topk),
            ));
            out
        }
    };
    emit(a.out.as_deref(), &out)
}

fn three_column_table(
    header: [&str; 3],
    rows: impl Iterator<Item = (String, String, f64)>,
) -> String {
    let rows: Vec<(String, String, String)> =
        rows.map(|(a, b, c)| (a, b, format!("{c:.3}"))).collect();
    let w0 = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max(header[0].len());
    let w1 = rows
        .iter()
        .map(|r| r.1.chars().count())
        .max()
        .unwrap_or(0)
        .max(header[1].len());
    let mut out = format!("{:<w0$}  {:<w1$}  {:>8}\n", header[0], header[1], header[2]);
    for (a, b, c) in rows {
        out.push_str(&format!("{a:<w0$}  {b:<w1$}  {c:>8}\n"));
    }
    out
}

fn global_cmd(a: GlobalArgs) -> Result<()> {
    let bundle = load_model(&a.model)?;
    let model = &bundle.model;
    let (docs, tokenized, bg) = corpus_background(
        model,
        &bundle.vocab,
        &a.corpus,
        a.shap.background_size,
        a.shap.seed,
    )?;
    let labels: Vec<u8> = docs.iter().map(|d| d.label).collect();
    let config = GlobalConfig {
        k: a.topk,
        scorer: a.scorer,
        partition: a.partition,
        explain: a.shap.explain_config(),
        presence_only: !a.include_absent,
    };
    let mut report = global_report(model, &tokenized, Some(&labels), &bg, &config)?;
    let out = match a.format {
        Format::Csv => report.to_csv(a.top, a.compare_abs_shap),
        Format::Table => report.to_table(a.top.unwrap_or(10)),
        Format::Json => {
            if let Some(n) = a.top {
                report.positive.truncate(n);
                report.negative.truncate(n);
            }
            to_json(&report)?
        }
    };
    emit(a.out.as_deref(), &out)
}

fn filters_cmd(a: FiltersArgs) -> Result<()> {
    let bundle = load_model(&a.model)?;
    let report = similarity_histogram(&bundle.model, a.segment_len);
    match a.format {
        Format::Json => emit(a.out.as_deref(), &to_json(&report)?)?,
        Format::Csv => emit(a.out.as_deref(), &report.pairs_csv())?,
        Format::Table => return Err(unsupported("filters", "table")),
    }
    if let Some(p) = &a.histogram_out {
        write_atomic(p, report.histogram_csv().as_bytes())?;
    }
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let config = SimulationConfig {
        budgets: a.budgets,
        replications: a.reps,
        seed: a.seed,
        background_size: a.background_size,
        include_full: !a.no_full,
        order: a.order,
        fit_regression: a.fit_regression,
        ..SimulationConfig::ten_feature()
    };
    let report = run_linear_study(&config)?;
    let main = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => report.table_csv(),
        Format::Table => return Err(unsupported("simulate", "table")),
    };
    if let Some(p) = &a.capture_out {
        write_atomic(p, report.capture_csv().as_bytes())?;
    }
    emit(a.out.as_deref(), &main)
}

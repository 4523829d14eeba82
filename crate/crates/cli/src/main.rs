use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use picopat::corpus::{
    merge_pattern_tokens, parse_labeled_jsonl, parse_segments, write_labeled_jsonl,
};
use picopat::crf::{train_crf, CrfModel, CrfTrainConfig, FeatureConfig};
use picopat::embeddings::{
    cosine_neighbors, discover_collocations, kmeans_cluster, overlap_statistic, pca_project,
    read_word2vec, train_skipgram, write_overlap_tsv, write_projection_csv, write_word2vec,
    CollocationConfig, SkipGramConfig, WordVectors,
};
use picopat::eval::{token_prf, write_report_row, REPORT_HEADER};
use picopat::neural::{train_neural, NeuralConfig, NeuralError, NeuralModel, Strategy};
use picopat::patterns::{mine_bigrams_baseline, mine_patterns, MiningConfig, PatternLexicon};
use picopat::{Category, Document, SegmentCorpus, Sentence, Tag};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "picopat",
    version,
    about = "Pattern mining and pattern-aware taggers for PICO spans"
)]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads for mining, decoding and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine patterns for one category from segment pools.
    Mine(MineArgs),
    /// Train a linear-chain CRF tagger.
    TrainCrf(TrainCrfArgs),
    /// Train a BiLSTM-CRF tagger.
    TrainNeural(TrainNeuralArgs),
    /// Tag documents with a trained model.
    Tag(TagArgs),
    /// Token-level precision/recall/F1 of predictions against gold labels.
    Eval(EvalArgs),
    /// Train skip-gram vectors, optionally over pattern- or collocation-merged text.
    Embed(EmbedArgs),
    /// Nearest neighbors of a token by cosine.
    Neighbors(NeighborsArgs),
    /// Neighborhood overlap between merged patterns and their constituents.
    Overlap(OverlapArgs),
    /// PCA projection with k-means cluster ids, as CSV.
    Project(ProjectArgs),
}

fn parse_prob(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Args)]
struct MineArgs {
    /// Segments of the target category (JSONL with tokens and pos).
    #[arg(long)]
    relevant: PathBuf,
    /// Segments of the other categories; may be repeated.
    #[arg(long, required = true)]
    irrelevant: Vec<PathBuf>,
    #[arg(long)]
    category: Category,
    #[arg(long, default_value_t = 10)]
    min_freq: u64,
    #[arg(long, default_value_t = 0.8, value_parser = parse_prob)]
    min_prob: f64,
    /// Mine plain adjacent bigrams instead of syntactic patterns.
    #[arg(long)]
    baseline_bigrams: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCrfArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    category: Category,
    /// Pattern lexicon TSV(s) enabling the indicator features.
    #[arg(long)]
    patterns: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainNeuralArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    category: Category,
    #[arg(long, default_value = "none")]
    strategy: Strategy,
    #[arg(long)]
    patterns: Vec<PathBuf>,
    /// Pre-trained vectors in word2vec text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    word_dim: usize,
    #[arg(long, default_value_t = 25)]
    char_emb_dim: usize,
    #[arg(long, default_value_t = 25)]
    char_dim: usize,
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Manifest path; tensors go next to it with a `.bin` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TagArgs {
    /// CRF model JSON or neural manifest.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Expected strategy of a neural model.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Categories to score; defaults to every category labeled in both files.
    #[arg(long)]
    category: Vec<Category>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Segments (JSONL with tokens and pos), one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Merge occurrences of these patterns into single tokens first.
    #[arg(long)]
    patterns: Vec<PathBuf>,
    /// Merge discovered collocations instead of patterns.
    #[arg(long, conflicts_with = "patterns")]
    collocations: bool,
    #[arg(long, default_value_t = 5.0)]
    delta: f64,
    #[arg(long, default_value_t = 10.0)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// Where to list the discovered collocations.
    #[arg(long)]
    collocations_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 1e-3)]
    subsample: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NeighborsArgs {
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    token: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    /// Only the first N (most frequent) rows are candidates.
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[arg(long)]
    vectors: PathBuf,
    /// Lexicon TSV(s); every multi-word pattern is looked up as `a_b`.
    #[arg(long)]
    patterns: Vec<PathBuf>,
    /// Merged tokens, one per line.
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    vectors: PathBuf,
    /// Tokens to project, one per line; defaults to the whole vocabulary.
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(short, long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Input problems exit with 2, anything else with 1.
enum Failure {
    Input(String),
    Internal(String),
}

type Res<T> = Result<T, Failure>;

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Input(format!("{context}: {e}"))
}

fn internal<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Internal(e.to_string())
}

fn neural_failure(e: NeuralError) -> Failure {
    match e {
        NeuralError::NonFinite(_) => Failure::Internal(e.to_string()),
        _ => Failure::Input(e.to_string()),
    }
}

fn open(path: &Path) -> Res<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(input(path.display()))
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(input(path.display()))
}

fn output(path: &Option<PathBuf>) -> Res<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The run configuration; written as a comment line or embedded in model
/// files. Paths are reduced to file names so reruns elsewhere match.
struct RunConfig {
    command: &'static str,
    fields: BTreeMap<&'static str, Value>,
}

impl RunConfig {
    fn new(command: &'static str, seed: u64) -> Self {
        let mut fields = BTreeMap::new();
        fields.insert("seed", json!(seed));
        RunConfig { command, fields }
    }

    fn set(&mut self, key: &'static str, value: impl Into<Value>) -> &mut Self {
        self.fields.insert(key, value.into());
        self
    }

    fn path(&mut self, key: &'static str, path: &Path) -> &mut Self {
        self.set(key, name_of(path))
    }

    fn paths(&mut self, key: &'static str, paths: &[PathBuf]) -> &mut Self {
        self.set(key, paths.iter().map(|p| name_of(p)).collect::<Vec<_>>())
    }

    fn to_value(&self) -> Value {
        let mut v = serde_json::Map::new();
        v.insert("command".into(), json!(self.command));
        for (k, x) in &self.fields {
            v.insert((*k).into(), x.clone());
        }
        Value::Object(v)
    }

    fn header(&self) -> String {
        format!("# picopat {}", self.to_value())
    }
}

fn read_docs(path: &Path) -> Res<Vec<Document>> {
    parse_labeled_jsonl(open(path)?).map_err(input(path.display()))
}

fn read_segments(path: &Path, category: Category) -> Res<SegmentCorpus> {
    parse_segments(open(path)?, category).map_err(input(path.display()))
}

fn read_lexicons(paths: &[PathBuf]) -> Res<Option<PatternLexicon>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let mut lex = PatternLexicon::default();
    for p in paths {
        lex.extend(PatternLexicon::read_tsv(open(p)?).map_err(input(p.display()))?);
    }
    Ok(Some(lex))
}

fn read_vectors(path: &Path, max_vocab: Option<usize>) -> Res<WordVectors> {
    let mut v = read_word2vec(open(path)?).map_err(input(path.display()))?;
    if let Some(n) = max_vocab {
        v.truncate(n);
    }
    Ok(v)
}

fn read_lines(path: &Path) -> Res<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(input(path.display()))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            // first column, so TSV listings can be passed directly
            out.push(t.split('\t').next().unwrap_or(t).to_string());
        }
    }
    Ok(out)
}

fn sentences(docs: &[Document]) -> Vec<Sentence> {
    docs.iter()
        .flat_map(|d| d.sentences.iter().cloned())
        .collect()
}

fn ignore_threads(threads: usize, command: &str) {
    if threads > 1 {
        warn!("{command} trains sequentially; --threads {threads} is ignored");
    }
}

fn cmd_mine(cli: &Cli, a: &MineArgs) -> Res<()> {
    let rel = read_segments(&a.relevant, a.category)?;
    let mut irrel = SegmentCorpus::default();
    for p in &a.irrelevant {
        irrel.extend(read_segments(p, a.category)?);
    }
    let config = MiningConfig {
        min_freq: a.min_freq,
        min_prob: a.min_prob,
    };
    let lex = if a.baseline_bigrams {
        mine_bigrams_baseline(&rel, &irrel, a.category, &config)
    } else {
        mine_patterns(&rel, &irrel, a.category, &config)
    };
    info!(
        "{} patterns from {} relevant / {} irrelevant segments",
        lex.len(),
        rel.len(),
        irrel.len()
    );
    let mut rc = RunConfig::new("mine", cli.seed);
    rc.path("relevant", &a.relevant)
        .paths("irrelevant", &a.irrelevant)
        .set("category", a.category.as_str())
        .set("min_freq", a.min_freq)
        .set("min_prob", a.min_prob)
        .set("baseline_bigrams", a.baseline_bigrams);
    let mut w = output(&a.out)?;
    writeln!(w, "{}", rc.header()).map_err(internal)?;
    lex.write_tsv(&mut w).map_err(internal)?;
    w.flush().map_err(internal)
}

fn cmd_train_crf(cli: &Cli, a: &TrainCrfArgs) -> Res<()> {
    ignore_threads(cli.threads, "train-crf");
    let train = sentences(&read_docs(&a.train)?);
    let dev = a
        .dev
        .as_deref()
        .map(read_docs)
        .transpose()?
        .map(|d| sentences(&d));
    let lexicon = read_lexicons(&a.patterns)?;
    let config = CrfTrainConfig {
        l2: a.l2,
        epochs: a.epochs,
        batch_size: a.batch_size.max(1),
        lr: a.lr,
        decay: a.decay,
        seed: cli.seed,
        patience: Some(a.patience),
    };
    let (model, report) = train_crf(
        &train,
        dev.as_deref(),
        a.category,
        FeatureConfig { lexicon },
        &config,
    )
    .map_err(input("training"))?;
    info!(
        "trained {} epochs, best {}",
        report.epoch_loss.len(),
        report.best_epoch
    );
    let mut rc = RunConfig::new("train-crf", cli.seed);
    rc.path("train", &a.train)
        .set("dev", a.dev.as_deref().map(name_of))
        .set("category", a.category.as_str())
        .paths("patterns", &a.patterns)
        .set("l2", a.l2)
        .set("epochs", a.epochs)
        .set("batch_size", a.batch_size)
        .set("lr", a.lr)
        .set("decay", a.decay)
        .set("patience", a.patience);
    let text = model.to_json(Some(rc.to_value())).map_err(internal)?;
    let mut w = create(&a.out)?;
    writeln!(w, "{text}").map_err(internal)?;
    w.flush().map_err(internal)
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn cmd_train_neural(cli: &Cli, a: &TrainNeuralArgs) -> Res<()> {
    ignore_threads(cli.threads, "train-neural");
    let train = sentences(&read_docs(&a.train)?);
    let dev = a
        .dev
        .as_deref()
        .map(read_docs)
        .transpose()?
        .map(|d| sentences(&d));
    let lexicon = read_lexicons(&a.patterns)?;
    let pretrained = a
        .embeddings
        .as_deref()
        .map(|p| read_vectors(p, None))
        .transpose()?;
    let config = NeuralConfig {
        word_dim: a.word_dim,
        char_emb_dim: a.char_emb_dim,
        char_dim: a.char_dim,
        hidden: a.hidden,
        dropout: a.dropout,
        lr: a.lr,
        epochs: a.epochs,
        seed: cli.seed,
        strategy: a.strategy,
        ..NeuralConfig::default()
    };
    let vocab_source: Vec<Sentence> = match (&lexicon, a.strategy) {
        (Some(lex), Strategy::Embedding) => train
            .iter()
            .map(|s| merge_pattern_tokens(s, lex).sentence)
            .collect(),
        _ => train.clone(),
    };
    let model = NeuralModel::build(
        config,
        a.category,
        &vocab_source,
        pretrained.as_ref(),
        lexicon,
    )
    .map_err(neural_failure)?;
    let (model, report) = train_neural(model, &train, dev.as_deref()).map_err(neural_failure)?;
    info!(
        "trained {} epochs, best {}",
        report.epoch_loss.len(),
        report.best_epoch
    );
    let mut rc = RunConfig::new("train-neural", cli.seed);
    rc.path("train", &a.train)
        .set("dev", a.dev.as_deref().map(name_of))
        .set("category", a.category.as_str())
        .set("strategy", a.strategy.as_str())
        .paths("patterns", &a.patterns)
        .set("embeddings", a.embeddings.as_deref().map(name_of))
        .set("epochs", a.epochs);
    let mut manifest = create(&a.out)?;
    let mut blob = create(&blob_path(&a.out))?;
    model
        .save(&mut manifest, &mut blob, Some(rc.to_value()))
        .map_err(neural_failure)?;
    manifest.flush().map_err(internal)?;
    blob.flush().map_err(internal)
}

enum Tagger {
    Crf(Box<CrfModel>),
    Neural(Box<NeuralModel>),
}

impl Tagger {
    fn category(&self) -> Category {
        match self {
            Tagger::Crf(m) => m.category,
            Tagger::Neural(m) => m.category,
        }
    }

    fn tag(&self, s: &Sentence) -> Res<Vec<Tag>> {
        match self {
            Tagger::Crf(m) => Ok(m.decode(s)),
            Tagger::Neural(m) => m.decode(s).map_err(neural_failure),
        }
    }
}

fn load_tagger(path: &Path) -> Res<Tagger> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    let value: Value = serde_json::from_str(&text).map_err(input(path.display()))?;
    if value.get("tensors").is_some() {
        let blob = open(&blob_path(path))?;
        let model = NeuralModel::load(text.as_bytes(), blob).map_err(input(path.display()))?;
        Ok(Tagger::Neural(Box::new(model)))
    } else {
        let model = CrfModel::from_json(&text).map_err(input(path.display()))?;
        Ok(Tagger::Crf(Box::new(model)))
    }
}

fn cmd_tag(cli: &Cli, a: &TagArgs) -> Res<()> {
    let tagger = load_tagger(&a.model)?;
    if let (Some(want), Tagger::Neural(m)) = (a.strategy, &tagger) {
        if m.config.strategy != want {
            return Err(Failure::Input(format!(
                "model was trained with strategy `{}`, not `{want}`",
                m.config.strategy
            )));
        }
    }
    let mut docs = read_docs(&a.input)?;
    let category = tagger.category();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()
        .map_err(internal)?;
    let tagged: Vec<Res<Vec<Vec<Tag>>>> = pool.install(|| {
        use rayon::prelude::*;
        docs.par_iter()
            .map(|d| d.sentences.iter().map(|s| tagger.tag(s)).collect())
            .collect()
    });
    for (doc, tags) in docs.iter_mut().zip(tagged) {
        for (s, t) in doc.sentences.iter_mut().zip(tags?) {
            s.set_labels(category, t);
        }
    }
    let mut w = output(&a.out)?;
    write_labeled_jsonl(&mut w, &docs).map_err(internal)?;
    w.flush().map_err(internal)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Res<()> {
    let gold = read_docs(&a.gold)?;
    let pred = read_docs(&a.pred)?;
    if gold.len() != pred.len() {
        return Err(Failure::Input(format!(
            "gold has {} documents, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.iter().zip(&pred) {
        if g.doc_id != p.doc_id || g.sentences.len() != p.sentences.len() {
            return Err(Failure::Input(format!(
                "document `{}` does not line up with `{}`",
                g.doc_id, p.doc_id
            )));
        }
    }
    let (gs, ps) = (sentences(&gold), sentences(&pred));
    let labeled =
        |ss: &[Sentence], c: Category| !ss.is_empty() && ss.iter().all(|s| s.labels(c).is_some());
    let categories: Vec<Category> = if a.category.is_empty() {
        Category::ALL
            .into_iter()
            .filter(|&c| labeled(&gs, c) && labeled(&ps, c))
            .collect()
    } else {
        a.category.clone()
    };
    let mut rc = RunConfig::new("eval", cli.seed);
    rc.path("gold", &a.gold).path("pred", &a.pred).set(
        "category",
        categories.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
    );
    let mut w = output(&a.out)?;
    writeln!(w, "{}", rc.header()).map_err(internal)?;
    writeln!(w, "{REPORT_HEADER}").map_err(internal)?;
    for c in categories {
        let collect = |ss: &[Sentence]| -> Res<Vec<Vec<Tag>>> {
            ss.iter()
                .enumerate()
                .map(|(k, s)| {
                    s.labels(c)
                        .map(<[Tag]>::to_vec)
                        .ok_or_else(|| Failure::Input(format!("sentence {k} has no {c} labels")))
                })
                .collect()
        };
        let score = token_prf(&collect(&gs)?, &collect(&ps)?).map_err(input("evaluation"))?;
        write_report_row(&mut w, c, &score).map_err(internal)?;
    }
    w.flush().map_err(internal)
}

fn cmd_embed(cli: &Cli, a: &EmbedArgs) -> Res<()> {
    ignore_threads(cli.threads, "embed");
    let segments = read_segments(&a.corpus, Category::P)?;
    let lexicon = read_lexicons(&a.patterns)?;
    let mut corpus: Vec<Vec<String>> = segments
        .sentences()
        .map(|s| {
            let s = match &lexicon {
                Some(lex) => merge_pattern_tokens(s, lex).sentence,
                None => s.clone(),
            };
            s.tokens().iter().map(|t| t.lower().to_string()).collect()
        })
        .collect();
    let mut rc = RunConfig::new("embed", cli.seed);
    rc.path("corpus", &a.corpus)
        .paths("patterns", &a.patterns)
        .set("collocations", a.collocations)
        .set("dim", a.dim)
        .set("window", a.window)
        .set("negatives", a.negatives)
        .set("subsample", a.subsample)
        .set("epochs", a.epochs)
        .set("min_count", a.min_count)
        .set("lr", a.lr);
    if a.collocations {
        let config = CollocationConfig {
            delta: a.delta,
            threshold: a.threshold,
            passes: a.passes,
        };
        rc.set("delta", a.delta)
            .set("threshold", a.threshold)
            .set("passes", a.passes);
        let (found, merged) = discover_collocations(&corpus, &config);
        info!("{} collocations", found.len());
        if let Some(path) = &a.collocations_out {
            let mut w = create(path)?;
            writeln!(w, "{}", rc.header()).map_err(internal)?;
            writeln!(w, "#collocation\tscore").map_err(internal)?;
            for c in &found {
                writeln!(w, "{}\t{:.6}", c.token(), c.score).map_err(internal)?;
            }
            w.flush().map_err(internal)?;
        }
        corpus = merged;
    } else if lexicon.is_none() && a.collocations_out.is_some() {
        return Err(Failure::Input(
            "--collocations-out needs --collocations".into(),
        ));
    }
    let config = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        subsample: a.subsample,
        epochs: a.epochs,
        min_count: a.min_count,
        lr: a.lr,
        seed: cli.seed,
    };
    let model = train_skipgram(&corpus, &config).map_err(input("embedding"))?;
    info!(
        "{} vectors; epoch losses {:?}",
        model.input.len(),
        model.epoch_loss
    );
    let mut w = create(&a.out)?;
    write_word2vec(&mut w, model.vectors()).map_err(internal)?;
    w.flush().map_err(internal)
}

fn cmd_neighbors(cli: &Cli, a: &NeighborsArgs) -> Res<()> {
    let vectors = read_vectors(&a.vectors, a.max_vocab)?;
    let list = cosine_neighbors(&vectors, &a.token, a.k).map_err(input("query"))?;
    let mut rc = RunConfig::new("neighbors", cli.seed);
    rc.path("vectors", &a.vectors)
        .set("token", a.token.as_str())
        .set("k", a.k)
        .set("max_vocab", a.max_vocab);
    let mut w = output(&a.out)?;
    writeln!(w, "{}", rc.header()).map_err(internal)?;
    writeln!(w, "#rank\ttoken\tcosine").map_err(internal)?;
    for (rank, (t, c)) in list.iter().enumerate() {
        writeln!(w, "{}\t{t}\t{c:.6}", rank + 1).map_err(internal)?;
    }
    w.flush().map_err(internal)
}

fn cmd_overlap(cli: &Cli, a: &OverlapArgs) -> Res<()> {
    let vectors = read_vectors(&a.vectors, a.max_vocab)?;
    let mut tokens = Vec::new();
    let mut seen = HashSet::new();
    if let Some(lex) = read_lexicons(&a.patterns)? {
        for p in lex.ranked() {
            if p.arity() > 1 && seen.insert(p.joined()) {
                tokens.push(p.joined());
            }
        }
    }
    if let Some(path) = &a.tokens {
        for t in read_lines(path)? {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
    }
    if tokens.is_empty() {
        return Err(Failure::Input(
            "no merged pattern tokens given (use --patterns or --tokens)".into(),
        ));
    }
    let report = overlap_statistic(&vectors, &tokens);
    let mut rc = RunConfig::new("overlap", cli.seed);
    rc.path("vectors", &a.vectors)
        .paths("patterns", &a.patterns)
        .set("tokens", a.tokens.as_deref().map(name_of))
        .set("max_vocab", a.max_vocab);
    let mut w = output(&a.out)?;
    writeln!(w, "{}", rc.header()).map_err(internal)?;
    write_overlap_tsv(&mut w, &report).map_err(internal)?;
    w.flush().map_err(internal)
}

fn cmd_project(cli: &Cli, a: &ProjectArgs) -> Res<()> {
    let vectors = read_vectors(&a.vectors, None)?;
    let tokens = match &a.tokens {
        Some(p) => read_lines(p)?,
        None => vectors.words().to_vec(),
    };
    let pca = pca_project(&vectors, &tokens, a.dims).map_err(input("projection"))?;
    let clusters = kmeans_cluster(&pca.coords, a.k, cli.seed).map_err(input("clustering"))?;
    let mut w = output(&a.out)?;
    write_projection_csv(&mut w, &tokens, &pca.coords, &clusters.assignments).map_err(internal)?;
    w.flush().map_err(internal)
}

fn run(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Mine(a) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cli.threads.max(1))
                .build_global()
                .map_err(internal)?;
            cmd_mine(cli, a)
        }
        Command::TrainCrf(a) => cmd_train_crf(cli, a),
        Command::TrainNeural(a) => cmd_train_neural(cli, a),
        Command::Tag(a) => cmd_tag(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Embed(a) => cmd_embed(cli, a),
        Command::Neighbors(a) => cmd_neighbors(cli, a),
        Command::Overlap(a) => cmd_overlap(cli, a),
        Command::Project(a) => cmd_project(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}

use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairlex::classifier::{evaluate, train, write_predictions, ClassWeighting, MultiClass};
use fairlex::corpus::{load_corpus, save_corpus, Document};
use fairlex::explainer::{
    aggregate_global, explain_documents, predicted_as, read_ranking_csv, render_attributions, select_top,
    write_attributions, write_ranking_csv, ExplainerMethod, RenderFormat,
};
use fairlex::identifier::{
    default_traps, format_annotations_tsv, identify_dictionary, identify_llm, load_traps, read_annotations_tsv,
    Dictionary, LlmConfig,
};
use fairlex::lexical::{load_embeddings, HypernymLexicon};
use fairlex::moderator::{moderate, scope_words, MitigationPlan, Resources, Strategy};
use fairlex::pipeline::{compare_rankings, render_measurement, Pipeline, PipelineConfig};
use fairlex::{LinearModel, ProtectedCategory, TopSelection, TrainConfig};

use crate::annotate::{self, ServeOptions, SessionSettings, Store};
use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "fairlex", version, about = "Find and reduce a text classifier's reliance on protected-attribute words")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a bag-of-words logistic regression model.
    Train(TrainArgs),
    /// Write class probabilities for every document.
    Predict(PredictArgs),
    /// Attribute predictions to tokens and rank words globally.
    Explain(ExplainArgs),
    /// Decide which words refer to protected attributes.
    Identify(IdentifyArgs),
    /// Rewrite a training corpus with a mitigation strategy.
    Moderate(ModerateArgs),
    /// Run the whole loop from a config file.
    Run(RunArgs),
    /// Overlap of the top words of two rankings.
    Compare(CompareArgs),
    /// Serve the human annotation API.
    AnnotateServe(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weighting {
    None,
    InverseFrequency,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Multi {
    OneVsRest,
    Softmax,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled JSONL corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the model JSON.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    class_weighting: Option<Weighting>,
    #[arg(long, value_enum)]
    multiclass: Option<Multi>,
    /// Binary tasks: the class the weights score.
    #[arg(long)]
    positive_class: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions JSONL.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    LinearExact,
    Occlusion,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Ansi,
    Html,
}

#[derive(Debug, Args)]
struct Selection {
    /// Number of top words to keep (default 400).
    #[arg(long, conflicts_with = "top_fraction")]
    top_k: Option<usize>,
    /// Fraction of the ranked words to keep.
    #[arg(long)]
    top_fraction: Option<f64>,
}

impl Selection {
    fn get(&self) -> Result<TopSelection> {
        let s = match (self.top_k, self.top_fraction) {
            (_, Some(f)) => TopSelection::Fraction(f),
            (Some(k), None) => TopSelection::TopK(k),
            (None, None) => TopSelection::TopK(fairlex::pipeline::DEFAULT_TOP_K),
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    target_class: String,
    /// Receives `attributions.jsonl` and `ranking.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "linear-exact")]
    method: Method,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Explain every document, not only those predicted as the target class.
    #[arg(long)]
    all_documents: bool,
    #[command(flatten)]
    selection: Selection,
    /// Print the attributions of this document instead of the top words.
    #[arg(long)]
    render: Option<String>,
    #[arg(long, value_enum, default_value = "ansi")]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Dictionary,
    Llm,
    File,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Words to annotate, one per line.
    #[arg(long, required_unless_present = "ranking", conflicts_with = "ranking")]
    words: Option<PathBuf>,
    /// Annotate the top words of this ranking CSV.
    #[arg(long)]
    ranking: Option<PathBuf>,
    #[command(flatten)]
    selection: Selection,
    #[arg(long, value_enum, default_value = "dictionary")]
    backend: Backend,
    /// Dictionary TSV for the dictionary backend; the built-in list otherwise.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Annotation TSV for the file backend.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Annotation TSV to write; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Debug, Args)]
struct LlmArgs {
    /// Chat-completions URL; falls back to FAIRLEX_LLM_ENDPOINT.
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    llm_temperature: Option<f64>,
    #[arg(long)]
    llm_max_retries: Option<usize>,
    #[arg(long)]
    llm_timeout_secs: Option<u64>,
    #[arg(long)]
    llm_concurrency: Option<usize>,
    #[arg(long)]
    llm_batch_size: Option<usize>,
    #[arg(long)]
    llm_backoff_ms: Option<u64>,
}

impl LlmArgs {
    fn config(&self) -> LlmConfig {
        let mut c = LlmConfig::default();
        if let Some(v) = &self.llm_endpoint {
            c.endpoint = v.clone();
        }
        if let Some(v) = &self.llm_model {
            c.model = v.clone();
        }
        c.temperature = self.llm_temperature.unwrap_or(c.temperature);
        c.max_retries = self.llm_max_retries.unwrap_or(c.max_retries);
        c.timeout_secs = self.llm_timeout_secs.unwrap_or(c.timeout_secs);
        c.concurrency = self.llm_concurrency.unwrap_or(c.concurrency);
        c.batch_size = self.llm_batch_size.unwrap_or(c.batch_size);
        c.backoff_ms = self.llm_backoff_ms.unwrap_or(c.backoff_ms);
        c
    }
}

#[derive(Debug, Args)]
pub struct ModerateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Rewritten corpus JSONL.
    #[arg(long)]
    out: PathBuf,
    /// MS1 to MS5.
    #[arg(long)]
    strategy: Strategy,
    /// Annotation TSV; its protected words are mitigated.
    #[arg(long, required_unless_present = "words", conflicts_with = "words")]
    annotations: Option<PathBuf>,
    /// Protected words, one per line.
    #[arg(long)]
    words: Option<PathBuf>,
    /// Only mitigate words of these categories (with --annotations).
    #[arg(long = "category", requires = "annotations")]
    categories: Vec<ProtectedCategory>,
    /// Only rewrite documents with this gold label.
    #[arg(long)]
    class_scope: Option<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// MS4: drop the documents that were expanded.
    #[arg(long)]
    drop_original: bool,
    /// Word vectors in GloVe text format (MS3, MS4).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// `word<TAB>hypernym` lexicon (MS5).
    #[arg(long)]
    hypernyms: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline config, TOML or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Measure the original model only.
    #[arg(long)]
    measure_only: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// First ranking CSV.
    #[arg(long)]
    a: PathBuf,
    /// Second ranking CSV.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = fairlex::pipeline::DEFAULT_TOP_K)]
    top_k: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Words to annotate, one per line.
    #[arg(long)]
    words: PathBuf,
    /// Trap fixture `word<TAB>low|high`; the built-in fifteen words otherwise.
    #[arg(long)]
    traps: Option<PathBuf>,
    /// Append-only votes log, created if missing.
    #[arg(long)]
    votes: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory with the annotation UI.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    words_per_session: usize,
    /// One trap after every N words; 0 disables traps.
    #[arg(long, default_value_t = 4)]
    trap_every: usize,
    /// Stop assigning a word once this many sessions hold it.
    #[arg(long, default_value_t = 5)]
    target_votes: usize,
    /// Preload an annotation source, `name=path.tsv`.
    #[arg(long = "source", value_parser = parse_source)]
    sources: Vec<(String, PathBuf)>,
}

fn parse_source(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected name=path")?;
    Ok((name.to_string(), PathBuf::from(path)))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Moderate(a) => moderate_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::AnnotateServe(a) => serve_cmd(a),
    }
}

fn read_words(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| fairlex::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut seen = BTreeSet::new();
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .filter(|w| seen.insert(w.clone()))
        .collect())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| fairlex::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.message())))?
        }
        None => TrainConfig::default(),
    };
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.learning_rate = a.learning_rate.unwrap_or(config.learning_rate);
    config.l2 = a.l2.unwrap_or(config.l2);
    config.seed = a.seed.unwrap_or(config.seed);
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    if let Some(w) = a.class_weighting {
        config.class_weighting = match w {
            Weighting::None => ClassWeighting::None,
            Weighting::InverseFrequency => ClassWeighting::InverseFrequency,
        };
    }
    if let Some(m) = a.multiclass {
        config.multiclass = match m {
            Multi::OneVsRest => MultiClass::OneVsRest,
            Multi::Softmax => MultiClass::Softmax,
        };
    }
    if a.positive_class.is_some() {
        config.positive_class = a.positive_class;
    }
    let corpus = load_corpus(&a.corpus)?;
    let model = train(&corpus, &config)?;
    model.save(&a.out)?;
    log::info!("model with {} words written to {}", model.vocabulary.len(), a.out.display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(UsageError(format!("threshold {} is outside (0, 1)", a.threshold)).into());
    }
    let model = LinearModel::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let probs: Vec<_> = corpus.documents.iter().map(|d| model.predict(d)).collect();
    write_predictions(&a.out, corpus.documents.iter().map(|d| d.id.as_str()).zip(&probs))?;
    let labeled = corpus.labeled();
    if !labeled.is_empty() {
        print_json(&evaluate(&model, &labeled, a.threshold)?)?;
    }
    Ok(())
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let model = LinearModel::load(&a.model)?;
    if !model.classes.contains(&a.target_class) {
        return Err(fairlex::Error::UnknownClass(a.target_class).into());
    }
    let selection = a.selection.get()?;
    let corpus = load_corpus(&a.corpus)?;
    let documents: Vec<&Document> = if a.all_documents {
        corpus.documents.iter().collect()
    } else {
        predicted_as(&model, &corpus, &a.target_class, a.threshold)
    };
    if let Some(id) = &a.render {
        let doc = corpus.get(id).ok_or_else(|| fairlex::Error::NotFound(format!("document `{id}`")))?;
        let record = explain_documents(&model, &[doc], &a.target_class, method(a.method))?.remove(0);
        let format = match a.format {
            Format::Ansi => RenderFormat::Ansi,
            Format::Html => RenderFormat::Html,
        };
        println!("{}", render_attributions(&record, format));
        return Ok(());
    }
    if documents.is_empty() {
        return Err(fairlex::Error::Invalid(format!("no document is predicted as `{}`", a.target_class)).into());
    }
    let records = explain_documents(&model, &documents, &a.target_class, method(a.method))?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_attributions(a.out_dir.join("attributions.jsonl"), &records)?;
    let ranking = aggregate_global(&records)?;
    write_ranking_csv(a.out_dir.join("ranking.csv"), &ranking)?;
    let mut out = std::io::stdout().lock();
    for w in select_top(&ranking, selection)? {
        writeln!(out, "{w}")?;
    }
    Ok(())
}

fn method(m: Method) -> ExplainerMethod {
    match m {
        Method::LinearExact => ExplainerMethod::LinearExact,
        Method::Occlusion => ExplainerMethod::Occlusion,
    }
}

fn identify_cmd(a: IdentifyArgs) -> Result<()> {
    let words = match (&a.words, &a.ranking) {
        (Some(path), _) => read_words(path)?,
        (None, Some(path)) => select_top(&read_ranking_csv(path)?, a.selection.get()?)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let annotations = match a.backend {
        Backend::Dictionary => {
            let dictionary = match &a.dictionary {
                Some(p) => Dictionary::load(p)?,
                None => Dictionary::builtin(),
            };
            identify_dictionary(&words, &dictionary)
        }
        Backend::File => {
            let path = a
                .annotations
                .as_ref()
                .ok_or_else(|| UsageError("--backend file needs --annotations".into()))?;
            let all = read_annotations_tsv(path)?;
            let wanted: BTreeSet<&String> = words.iter().collect();
            all.into_iter().filter(|x| wanted.contains(&x.word)).collect()
        }
        Backend::Llm => {
            let outcome = identify_llm(&words, &a.llm.config())?;
            for f in &outcome.failures {
                eprintln!("warning: `{}` not annotated: {}", f.word, f.reason);
            }
            outcome.annotations
        }
    };
    let text = format_annotations_tsv(&annotations);
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn moderate_cmd(a: ModerateArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let scope: Option<BTreeSet<ProtectedCategory>> =
        (!a.categories.is_empty()).then(|| a.categories.iter().copied().collect());
    let words = match (&a.annotations, &a.words) {
        (Some(path), _) => scope_words(&read_annotations_tsv(path)?, scope.as_ref()),
        (None, Some(path)) => read_words(path)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut plan = MitigationPlan::new(a.strategy, words);
    plan.category_scope = scope;
    plan.class_scope = a.class_scope;
    plan.k = a.k;
    plan.seed = a.seed;
    plan.keep_original = !a.drop_original;
    let embeddings = a.embeddings.as_ref().map(load_embeddings).transpose()?;
    let hypernyms = a.hypernyms.as_ref().map(HypernymLexicon::load).transpose()?;
    let resources = Resources {
        embeddings: embeddings.as_ref(),
        hypernyms: hypernyms.as_ref(),
    };
    let outcome = moderate(&corpus, &plan, resources)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    save_corpus(&outcome.corpus, &a.out)?;
    print_json(&outcome.delta)
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let config = PipelineConfig::load(&a.config)?;
    let target = config.target_class.clone();
    let mut pipeline = Pipeline::new(config)?;
    if a.measure_only {
        let m = pipeline.measure()?;
        print!("{}", render_measurement(&target, &m.summary()));
    } else {
        let report = pipeline.mitigate()?;
        print!("{}", report.render_text());
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let selection = TopSelection::TopK(a.top_k);
    selection.validate()?;
    let ra = read_ranking_csv(&a.a)?;
    let rb = read_ranking_csv(&a.b)?;
    if ra.len() < a.top_k || rb.len() < a.top_k {
        return Err(UsageError(format!(
            "--top-k {} exceeds a ranking's length ({} and {})",
            a.top_k,
            ra.len(),
            rb.len()
        ))
        .into());
    }
    let overlap = compare_rankings(&select_top(&ra, selection)?, &select_top(&rb, selection)?)?;
    print_json(&overlap)
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let words = read_words(&a.words)?;
    let traps = match &a.traps {
        Some(p) => load_traps(p)?,
        None => default_traps(),
    };
    let settings = SessionSettings {
        words_per_session: a.words_per_session,
        trap_every: a.trap_every,
        target_votes: a.target_votes,
    };
    let mut store = Store::open(&a.votes, words, traps, settings)?;
    for (name, path) in &a.sources {
        let text = std::fs::read_to_string(path).map_err(|e| fairlex::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        store
            .put_source(name, &text)
            .map_err(|e| UsageError(format!("source `{name}`: {e}")))?;
    }
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime
        .block_on(annotate::serve(
            store,
            ServeOptions {
                addr: SocketAddr::new(a.bind, a.port),
                static_dir: a.static_dir,
            },
        ))
        .with_context(|| format!("serving on {}:{}", a.bind, a.port))
}

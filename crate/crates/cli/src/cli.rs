use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use saeir::control::{
    amplification_grid_search, perspective_experiment, Aggregation, ControlContext, DocumentMode, KeywordLabeler, Labeler,
    PerspectiveOptions, Pipeline, TableLabeler, DEFAULT_GRID_STEPS, GRID_START, PERSPECTIVE_CUTOFF,
};
use saeir::interpret::{
    activation_series, augment_trie, build_trie, explain_features, frequency_profile, loglog_slope, prune_trie,
    read_explanations, tokenize, top_activating_docs, write_explanations, CooccurrenceSubstitutes, Embedder,
    FeatureTrie, LlmClient, RecordingLlm, ReplayLlm, RetryingLlm, SeriesMode, ToyHashingEmbedder, TrieConfig,
};
use saeir::io::{
    load_checkpoint, read_jsonl_embeddings, read_qrels, read_raw_matrix, read_store, save_checkpoint, write_qrels,
    write_store, Checkpoint,
};
use saeir::retrieval::{evaluate_fidelity, reconstruct_store, FidelityReport, DEFAULT_CUTOFF};
use saeir::synth::{atom_word, generate_synthetic, SynthConfig};
use saeir::training::{TrainConfig, Trainer, TrainingSet};
use saeir::{EmbeddingStore, QrelSet, StoreKind};
use serde::Serialize;

use crate::clients::{HttpEmbedder, HttpLlm};
use crate::data;
use crate::service::{ModelInfo, ServiceState};

#[derive(Parser, Debug)]
#[command(name = "saeir", version, about = "Sparse autoencoders over dense retrieval embeddings")]
pub struct Cli {
    /// Relative paths are resolved against this directory.
    #[arg(long, global = true, env = "SAEIR_DATA_ROOT")]
    pub data_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted synthetic benchmark.
    Synth(SynthArgs),
    /// Train an SAE on query/positive pairs.
    Train(TrainArgs),
    /// Compare retrieval on original, reconstructed and sparse embeddings.
    Eval(EvalArgs),
    /// Train once per KLD weight and compare.
    Ablate(AblateArgs),
    /// Build feature tries and keyword explanations.
    Interpret(InterpretArgs),
    /// Feature (and optionally word) rank-frequency profile.
    Frequency(FrequencyArgs),
    /// Amplification grid search.
    ControlGrid(GridArgs),
    /// Steer single queries toward one of two features.
    Perspective(PerspectiveArgs),
    /// Run the HTTP steering service.
    Serve(ServeArgs),
    /// Convert JSON-lines or raw f32 embeddings to a store file.
    Convert(ConvertArgs),
}

struct Ctx {
    root: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p).components().collect(),
            _ => p.components().collect(),
        }
    }

    fn store(&self, p: &Path, kind: StoreKind) -> Result<EmbeddingStore> {
        let path = self.path(p);
        let store = read_store(&path).with_context(|| format!("loading {}", path.display()))?;
        if store.kind() != kind {
            bail!("{} holds {:?} embeddings, expected {:?}", path.display(), store.kind(), kind);
        }
        Ok(store)
    }

    fn qrels(&self, p: &Path) -> Result<QrelSet> {
        let path = self.path(p);
        read_qrels(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn checkpoint(&self, p: &Path) -> Result<Checkpoint> {
        let path = self.path(p);
        load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn out_dir(&self, p: &Path) -> Result<PathBuf> {
        let dir = self.path(p);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ten relevant docs per query split into two dominant perspective clusters.
    #[arg(long)]
    pub two_cluster: bool,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 128)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 16)]
    pub positives: usize,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 256)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl HyperArgs {
    fn config(&self, kld_weight: f64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            initial_lr: self.lr,
            min_lr: self.min_lr,
            positives_per_query: self.positives,
            kld_weight,
            k: self.k,
            latent_dim: self.latent_dim,
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 1.0)]
    pub kld_weight: f64,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSON-lines report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Continue from a checkpoint with optimizer state; its config wins.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: usize,
    /// JSON report to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// One training arm per weight.
    #[arg(long = "kld-weight", value_delimiter = ',', default_values_t = [0.0, 1.0])]
    pub kld_weights: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: usize,
    /// Directory for per-arm reports, checkpoints and the comparison.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmbedderArgs {
    /// External embedder endpoint; the toy hashing embedder is used without it.
    #[arg(long, env = "SAEIR_EMBEDDER_URL")]
    pub embedder_url: Option<String>,
    #[arg(long, env = "SAEIR_EMBEDDER_API_KEY", hide_env_values = true)]
    pub embedder_api_key: Option<String>,
    /// JSON map of token to vector for the toy embedder.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub embed_seed: u64,
    /// Scale of toy vectors for tokens outside the lexicon.
    #[arg(long)]
    pub unknown_scale: Option<f64>,
}

impl EmbedderArgs {
    fn build(&self, ctx: &Ctx, dim: usize) -> Result<Arc<dyn Embedder>> {
        if let Some(url) = &self.embedder_url {
            return Ok(Arc::new(HttpEmbedder::new(url.clone(), self.embedder_api_key.clone(), dim)?));
        }
        let mut toy = ToyHashingEmbedder::new(dim, self.embed_seed);
        if let Some(s) = self.unknown_scale {
            toy = toy.with_unknown_scale(s);
        }
        if let Some(p) = &self.lexicon {
            let lexicon: HashMap<String, Vec<f64>> = data::read_json(&ctx.path(p))?;
            toy = toy.with_lexicon(lexicon)?;
        }
        Ok(Arc::new(toy))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Raw,
    FirstDifference,
}

#[derive(Args, Debug)]
pub struct InterpretArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Document texts as JSON lines of {id, text}.
    #[arg(long)]
    pub texts: PathBuf,
    /// Features to explain; defaults to the most frequent ones.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub top_features: usize,
    #[arg(long, default_value_t = 512)]
    pub top_docs: usize,
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    #[arg(long, default_value_t = 0.5)]
    pub theta_peak: f64,
    #[arg(long, default_value_t = 0.8)]
    pub theta_keep: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    pub series_mode: ModeArg,
    /// Substitutes per peak token when augmenting; 0 skips augmentation.
    #[arg(long, default_value_t = 0)]
    pub substitutes: usize,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, env = "SAEIR_LLM_URL")]
    pub llm_url: Option<String>,
    #[arg(long, env = "SAEIR_LLM_MODEL")]
    pub llm_model: Option<String>,
    #[arg(long, env = "SAEIR_LLM_API_KEY", hide_env_values = true)]
    pub llm_api_key: Option<String>,
    /// Append every LLM exchange to this JSON-lines file.
    #[arg(long)]
    pub llm_record: Option<PathBuf>,
    /// Answer from a recorded exchange log instead of the network.
    #[arg(long, conflicts_with = "llm_url")]
    pub llm_replay: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub llm_concurrency: usize,
    /// Explanations as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the tries as JSON.
    #[arg(long)]
    pub tries: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FrequencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Adds a unigram profile of these texts.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Points below this count are left out of the slope fit.
    #[arg(long, default_value_t = 5)]
    pub min_count: u64,
    /// Rank-frequency TSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetArg {
    Document,
    Query,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum DocModeArg {
    Isolated,
    Shared,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum AggregationArg {
    Mean,
    Max,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    #[arg(long, value_enum, default_value_t = DocModeArg::Isolated)]
    pub mode: DocModeArg,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    pub aggregation: AggregationArg,
    #[arg(long, default_value_t = GRID_START)]
    pub start: f64,
    /// Doublings after the start level.
    #[arg(long, default_value_t = DEFAULT_GRID_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: usize,
    /// Output prefix; writes PREFIX.jsonl and PREFIX.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PerspectiveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Tab-separated query_id feature_a feature_b; or use --query-id/--features.
    #[arg(long, conflicts_with_all = ["query_id", "features"])]
    pub pairs: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub query_id: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 2, requires = "query_id")]
    pub features: Vec<usize>,
    #[arg(long, default_value_t = 100.0)]
    pub delta: f64,
    #[arg(long, default_value_t = PERSPECTIVE_CUTOFF)]
    pub cutoff: usize,
    /// `doc_id feature 0|1` lines.
    #[arg(long, conflicts_with = "keywords")]
    pub labels: Option<PathBuf>,
    /// JSON map of feature to keywords; a doc is related when its text has one.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Document texts as JSON lines of {id, text}.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    /// Query texts as JSON lines of {id, text}.
    #[arg(long)]
    pub query_texts: Option<PathBuf>,
    #[arg(long)]
    pub explanations: Option<PathBuf>,
    /// JSON-lines outcomes to write; printed to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Enables query_id sessions.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long)]
    pub explanations: Option<PathBuf>,
    /// Enables query_text sessions with the toy embedder when no URL is set.
    #[arg(long)]
    pub toy_embedder: bool,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, default_value_t = saeir::steering::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = 3600)]
    pub idle_timeout_secs: u64,
    #[arg(long, env = "SAEIR_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum InputFormat {
    Jsonl,
    Raw,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum KindArg {
    Query,
    Document,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: InputFormat,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// One id per line, for raw input.
    #[arg(long, required_if_eq("format", "raw"))]
    pub ids: Option<PathBuf>,
    #[arg(long, required_if_eq("format", "raw"))]
    pub dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    let ctx = Ctx { root: cli.data_root };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Interpret(a) => interpret(&ctx, a),
        Command::Frequency(a) => frequency(&ctx, a),
        Command::ControlGrid(a) => control_grid(&ctx, a),
        Command::Perspective(a) => perspective(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Convert(a) => convert(&ctx, a),
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let base = if a.two_cluster { SynthConfig::two_cluster() } else { SynthConfig::default() };
    let config = SynthConfig {
        seed: a.seed,
        n_queries: a.queries.unwrap_or(base.n_queries),
        n_distractors: a.distractors.unwrap_or(base.n_distractors),
        noise_sigma: a.noise.unwrap_or(base.noise_sigma),
        zipf_exponent: a.zipf_exponent.unwrap_or(base.zipf_exponent),
        ..base
    };
    let b = generate_synthetic(&config)?;
    let dir = ctx.out_dir(&a.out)?;
    write_store(dir.join("queries.embs"), &b.queries)?;
    write_store(dir.join("corpus.embs"), &b.corpus)?;
    write_qrels(dir.join("qrels.txt"), &b.qrels)?;
    data::write_texts(&dir.join("texts.jsonl"), b.corpus.ids().iter().map(String::as_str).zip(b.doc_texts.iter().map(String::as_str)))?;
    data::write_texts(
        &dir.join("query_texts.jsonl"),
        b.queries.ids().iter().map(String::as_str).zip(b.query_texts.iter().map(String::as_str)),
    )?;
    data::write_json(&dir.join("lexicon.json"), &b.lexicon())?;
    let keywords: std::collections::BTreeMap<String, Vec<String>> =
        (0..config.n_atoms).map(|i| (i.to_string(), vec![atom_word(i)])).collect();
    data::write_json(&dir.join("keywords.json"), &keywords)?;
    let mut pairs = String::from("# query_id\tfeature_a\tfeature_b\n");
    for (row, (fa, fb)) in b.query_perspectives.iter().enumerate() {
        pairs.push_str(&format!("{}\t{fa}\t{fb}\n", b.queries.id(row)));
    }
    std::fs::write(dir.join("perspectives.tsv"), pairs)?;
    // planted dictionary as an SAE: feature i is atom i
    save_checkpoint(
        dir.join("oracle.sae"),
        &Checkpoint {
            params: b.oracle_params(config.k_true)?,
            config: TrainConfig {
                latent_dim: config.n_atoms,
                k: config.k_true,
                epochs: 0,
                seed: config.seed,
                ..TrainConfig::default()
            },
            epoch: 0,
            optimizer: None,
        },
    )?;
    data::write_json(&dir.join("synth.json"), &config)?;
    println!(
        "wrote {} queries, {} documents, {} judgments to {}",
        b.queries.len(),
        b.corpus.len(),
        b.qrels.len(),
        dir.display()
    );
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let queries = ctx.store(&a.data.queries, StoreKind::Query)?;
    let corpus = ctx.store(&a.data.corpus, StoreKind::Document)?;
    let qrels = ctx.qrels(&a.data.qrels)?;
    let data = TrainingSet::new(&queries, &corpus, &qrels)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let state = ctx.checkpoint(p)?.into_train_state()?;
            log::info!("resuming at epoch {} of {}", state.epoch, state.config.epochs);
            Trainer::resume(data, state)?
        }
        None => Trainer::new(data, a.hyper.config(a.kld_weight))?,
    };
    let out = ctx.path(&a.out);
    let report = trainer.run()?;
    save_checkpoint(&out, &Checkpoint::from_state(trainer.state()))?;
    if let Some(p) = &a.report {
        report.write_jsonl(ctx.path(p))?;
    }
    match report.last() {
        Some(r) => println!("epoch {}: mse {:.6} kld {:.6} total {:.6}", r.epoch, r.mse, r.kld, r.total),
        None => println!("no epochs run"),
    }
    Ok(())
}

fn fidelity(ctx: &Ctx, a: &DataArgs, params: &saeir::SaeParams, cutoff: usize) -> Result<FidelityReport> {
    let queries = ctx.store(&a.queries, StoreKind::Query)?;
    let corpus = ctx.store(&a.corpus, StoreKind::Document)?;
    let qrels = ctx.qrels(&a.qrels)?;
    Ok(evaluate_fidelity(params, &queries, &corpus, &qrels, cutoff)?)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let ckpt = ctx.checkpoint(&a.checkpoint)?;
    let report = fidelity(ctx, &a.data, &ckpt.params, a.cutoff)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        data::write_json(&ctx.path(p), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationArm {
    kld_weight: f64,
    final_mse: Option<f64>,
    final_kld: Option<f64>,
    fidelity: FidelityReport,
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    if a.kld_weights.is_empty() {
        bail!("need at least one --kld-weight");
    }
    let queries = ctx.store(&a.data.queries, StoreKind::Query)?;
    let corpus = ctx.store(&a.data.corpus, StoreKind::Document)?;
    let qrels = ctx.qrels(&a.data.qrels)?;
    let dir = ctx.out_dir(&a.out)?;
    let mut arms = Vec::new();
    for &w in &a.kld_weights {
        let config = a.hyper.config(w);
        log::info!("training arm kld_weight={w}");
        let data = TrainingSet::new(&queries, &corpus, &qrels)?;
        let mut trainer = Trainer::new(data, config)?;
        let report = trainer.run()?;
        let tag = format!("kld{w}");
        report.write_jsonl(dir.join(format!("train_{tag}.jsonl")))?;
        let state = trainer.into_state();
        save_checkpoint(dir.join(format!("{tag}.sae")), &Checkpoint::from_state(&state))?;
        let fidelity = evaluate_fidelity(&state.params, &queries, &corpus, &qrels, a.cutoff)?;
        arms.push(AblationArm {
            kld_weight: w,
            final_mse: report.last().map(|r| r.mse),
            final_kld: report.last().map(|r| r.kld),
            fidelity,
        });
    }
    data::write_json(&dir.join("ablation.json"), &arms)?;
    println!(
        "{:>8}{:>12}{:>12}{:>12}{:>10}{:>10}{:>10}",
        "lambda", "train mse", "train kld", "eval mse", "orig", "recon", "sparse"
    );
    for arm in &arms {
        let f = &arm.fidelity;
        println!(
            "{:>8}{:>12.6}{:>12.6}{:>12.6}{:>10.4}{:>10.4}{:>10.4}",
            arm.kld_weight,
            arm.final_mse.unwrap_or(f64::NAN),
            arm.final_kld.unwrap_or(f64::NAN),
            f.eval_mse,
            f.original.mrr,
            f.reconstructed.mrr,
            f.sparse.mrr
        );
    }
    Ok(())
}

struct DynLlm(Box<dyn LlmClient>);

impl LlmClient for DynLlm {
    fn complete(&self, prompt: &str) -> saeir::Result<String> {
        self.0.complete(prompt)
    }
}

fn llm_client(ctx: &Ctx, a: &InterpretArgs) -> Result<Option<Box<dyn LlmClient>>> {
    let inner: Box<dyn LlmClient> = if let Some(p) = &a.llm_replay {
        Box::new(ReplayLlm::load(ctx.path(p))?)
    } else if let Some(url) = &a.llm_url {
        let model = a.llm_model.clone().context("--llm-model (or SAEIR_LLM_MODEL) is required with --llm-url")?;
        Box::new(RetryingLlm::new(
            HttpLlm::new(url, model, a.llm_api_key.clone())?,
            3,
            Duration::from_millis(500),
        ))
    } else {
        return Ok(None);
    };
    Ok(Some(match &a.llm_record {
        Some(p) => Box::new(RecordingLlm::new(DynLlm(inner), ctx.path(p))?),
        None => inner,
    }))
}

fn interpret(ctx: &Ctx, a: InterpretArgs) -> Result<()> {
    let ckpt = ctx.checkpoint(&a.checkpoint)?;
    let params = ckpt.params;
    let corpus = ctx.store(&a.corpus, StoreKind::Document)?;
    let texts = data::read_texts(&ctx.path(&a.texts))?;
    let embedder = a.embedder.build(ctx, params.input_dim())?;
    let config = TrieConfig {
        theta_peak: a.theta_peak,
        theta_keep: a.theta_keep,
        context_window: a.window,
    };
    let mode = match a.series_mode {
        ModeArg::Raw => SeriesMode::Raw,
        ModeArg::FirstDifference => SeriesMode::FirstDifference,
    };
    let (latents, _) = reconstruct_store(&params, &corpus)?;
    let features = if a.features.is_empty() {
        let profile = frequency_profile(&latents, None)?;
        let mut order: Vec<(usize, Option<usize>)> = profile.feature_ranks().into_iter().enumerate().collect();
        order.retain(|(_, r)| r.is_some());
        order.sort_by_key(|(_, r)| *r);
        order.into_iter().take(a.top_features).map(|(f, _)| f).collect()
    } else {
        a.features.clone()
    };
    let mut tries: Vec<FeatureTrie> = Vec::new();
    for &feature in &features {
        let top = top_activating_docs(feature, corpus.ids(), &latents, Some(a.top_docs))?;
        let mut series = Vec::new();
        for (doc_id, _) in &top {
            let Some(text) = texts.get(doc_id) else {
                log::warn!("no text for {doc_id}; skipped");
                continue;
            };
            let tokens = tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            series.push(activation_series(&params, embedder.as_ref(), doc_id, &tokens, feature, mode)?);
        }
        let built = build_trie(feature, &series, &config)?;
        if built.is_empty() {
            log::warn!("feature {feature}: no peaks");
            continue;
        }
        let mut trie = prune_trie(&built, &params, embedder.as_ref(), &config)?;
        if a.substitutes > 0 && !trie.is_empty() {
            let source = CooccurrenceSubstitutes::from_trie(&trie, a.substitutes);
            let out = augment_trie(&trie, &params, embedder.as_ref(), &source, &config)?;
            if let Some(w) = &out.warning {
                log::warn!("feature {feature}: {w}");
            }
            trie = out.trie;
        }
        log::info!("feature {feature}: {} docs, {} nodes after pruning", series.len(), trie.node_count());
        tries.push(trie);
    }
    let llm = llm_client(ctx, &a)?;
    let explanations = explain_features(&tries, llm.as_deref(), a.llm_concurrency)?;
    write_explanations(ctx.path(&a.out), &explanations)?;
    if let Some(p) = &a.tries {
        data::write_json(&ctx.path(p), &tries)?;
    }
    for e in &explanations {
        println!("{}\t{}", e.feature, e.summary);
    }
    Ok(())
}

fn frequency(ctx: &Ctx, a: FrequencyArgs) -> Result<()> {
    let ckpt = ctx.checkpoint(&a.checkpoint)?;
    let corpus = ctx.store(&a.corpus, StoreKind::Document)?;
    let (latents, _) = reconstruct_store(&ckpt.params, &corpus)?;
    let texts: Option<Vec<String>> = match &a.texts {
        Some(p) => {
            let map = data::read_texts(&ctx.path(p))?;
            Some(corpus.ids().iter().map(|id| map.get(id).cloned().unwrap_or_default()).collect())
        }
        None => None,
    };
    let profile = frequency_profile(&latents, texts.as_deref())?;
    let active = profile.feature_rank_frequency.len();
    println!("active features: {active} of {}", ckpt.params.latent_dim());
    match loglog_slope(&profile.feature_rank_frequency, a.min_count) {
        Ok(s) => println!("latent log-log slope: {s:.4}"),
        Err(e) => println!("latent log-log slope: n/a ({e})"),
    }
    if let Some(words) = &profile.word_rank_frequency {
        match loglog_slope(words, a.min_count) {
            Ok(s) => println!("word log-log slope: {s:.4}"),
            Err(e) => println!("word log-log slope: n/a ({e})"),
        }
    }
    if let Some(p) = &a.out {
        std::fs::write(ctx.path(p), profile.to_tsv())?;
    }
    Ok(())
}

fn control_context(ctx: &Ctx, checkpoint: &Path, a: &DataArgs) -> Result<ControlContext> {
    let params = ctx.checkpoint(checkpoint)?.params;
    let queries = ctx.store(&a.queries, StoreKind::Query)?;
    let corpus = ctx.store(&a.corpus, StoreKind::Document)?;
    let qrels = ctx.qrels(&a.qrels)?;
    Ok(ControlContext::new(params, &queries, &corpus, &qrels)?)
}

fn control_grid(ctx: &Ctx, a: GridArgs) -> Result<()> {
    let cc = control_context(ctx, &a.checkpoint, &a.data)?;
    let pipeline = match a.target {
        TargetArg::Document => Pipeline::Document {
            mode: match a.mode {
                DocModeArg::Isolated => DocumentMode::Isolated,
                DocModeArg::Shared => DocumentMode::Shared,
            },
        },
        TargetArg::Query => Pipeline::Query {
            aggregation: match a.aggregation {
                AggregationArg::Mean => Aggregation::Mean,
                AggregationArg::Max => Aggregation::Max,
            },
        },
    };
    let result = amplification_grid_search(&cc, pipeline, a.start, a.steps, a.cutoff)?;
    let prefix = ctx.path(&a.out);
    let with_ext = |ext: &str| {
        let mut s = prefix.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    result.write(with_ext(".jsonl"), with_ext(".csv"))?;
    println!("baseline mrr {:.4}", result.baseline.mrr);
    print!("{}", result.to_csv());
    Ok(())
}

fn perspective(ctx: &Ctx, a: PerspectiveArgs) -> Result<()> {
    let cc = control_context(ctx, &a.checkpoint, &a.data)?;
    let pairs = match (&a.pairs, &a.query_id) {
        (Some(p), _) => data::read_perspectives(&ctx.path(p))?,
        (None, Some(q)) => vec![(q.clone(), a.features[0], a.features[1])],
        (None, None) => bail!("give --pairs or --query-id with --features"),
    };
    let texts = a.texts.as_ref().map(|p| data::read_texts(&ctx.path(p))).transpose()?;
    let query_texts = a.query_texts.as_ref().map(|p| data::read_texts(&ctx.path(p))).transpose()?;
    let labeler: Box<dyn Labeler> = match (&a.labels, &a.keywords) {
        (Some(p), _) => Box::new(TableLabeler::load(ctx.path(p))?),
        (None, Some(p)) => {
            let texts = texts.as_ref().context("--keywords needs --texts")?;
            Box::new(KeywordLabeler::new(
                texts.iter().map(|(k, v)| (k.as_str(), v.as_str())),
                data::read_keywords(&ctx.path(p))?,
            ))
        }
        (None, None) => bail!("give --labels or --keywords"),
    };
    let summaries: Option<HashMap<usize, String>> = a
        .explanations
        .as_ref()
        .map(|p| read_explanations(ctx.path(p)))
        .transpose()?
        .map(|es| es.into_iter().map(|e| (e.feature, e.summary)).collect());
    let mut lines = String::new();
    let (mut counted, mut full) = (0, 0);
    for (qid, fa, fb) in &pairs {
        let options = PerspectiveOptions {
            query_text: query_texts.as_ref().and_then(|t| t.get(qid).cloned()),
            summaries: summaries.as_ref(),
            texts: texts.as_ref(),
        };
        let (oa, ob) = perspective_experiment(&cc, qid, (*fa, *fb), a.delta, a.cutoff, labeler.as_ref(), &options)?;
        for o in [&oa, &ob] {
            if let Some(after) = o.after {
                counted += 1;
                if after == a.cutoff {
                    full += 1;
                }
            }
            lines.push_str(&serde_json::to_string(o)?);
            lines.push('\n');
        }
    }
    match &a.out {
        Some(p) => std::fs::write(ctx.path(p), &lines)?,
        None => print!("{lines}"),
    }
    eprintln!("{full}/{counted} labeled runs have all top-{} documents related", a.cutoff);
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let path = ctx.path(&a.checkpoint);
    let ckpt = ctx.checkpoint(&a.checkpoint)?;
    let corpus = ctx.store(&a.corpus, StoreKind::Document)?;
    let input_dim = ckpt.params.input_dim();
    let mut state = ServiceState::new(ckpt.params, &corpus)?
        .with_top_k(a.top_k)
        .with_idle_timeout(Duration::from_secs(a.idle_timeout_secs))
        .with_info(ModelInfo {
            checkpoint: Some(path.display().to_string()),
            epoch: Some(ckpt.epoch),
        });
    if let Some(p) = &a.queries {
        state = state.with_queries(ctx.store(p, StoreKind::Query)?);
    }
    if let Some(p) = &a.texts {
        state = state.with_texts(data::read_texts(&ctx.path(p))?);
    }
    if let Some(p) = &a.explanations {
        state = state.with_explanations(read_explanations(ctx.path(p))?);
    }
    // kept alive past the runtime: the blocking HTTP client must not drop inside it
    let embedder = if a.embedder.embedder_url.is_some() || a.toy_embedder {
        Some(a.embedder.build(ctx, input_dim)?)
    } else {
        None
    };
    if let Some(e) = &embedder {
        state = state.with_embedder(e.clone());
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::service::serve(state, &a.listen))?;
    drop(rt);
    drop(embedder);
    Ok(())
}

fn convert(ctx: &Ctx, a: ConvertArgs) -> Result<()> {
    let kind = match a.kind {
        KindArg::Query => StoreKind::Query,
        KindArg::Document => StoreKind::Document,
    };
    let input = ctx.path(&a.input);
    let store = match a.format {
        InputFormat::Jsonl => read_jsonl_embeddings(&input, kind)?,
        InputFormat::Raw => {
            let ids = a.ids.as_ref().context("--ids is required for raw input")?;
            let dim = a.dim.context("--dim is required for raw input")?;
            read_raw_matrix(&input, ctx.path(ids), dim, kind)?
        }
    };
    write_store(ctx.path(&a.out), &store)?;
    println!("{} embeddings of dimension {}", store.len(), store.dim());
    Ok(())
}

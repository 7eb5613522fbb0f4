//! Command-line harness: generation, evaluation, benchmark sweeps,
//! reward-model training, judge-prompt tooling, and the loopback provider
//! stub.

use argsearch::core::{
    validate_config, Context, DecodeConfig, LikelihoodMode, Method, TokenId, Vocabulary,
};
use argsearch::decode::{instrument_report, run_method, write_traces_jsonl, GenerationSummary};
use argsearch::harness::{
    compare_winrate, ingest_prompts, read_generations_jsonl, run_benchmark, BenchmarkPlan,
    StubJudge,
};
use argsearch::metrics::build_report;
use argsearch::models::{
    rm_train, Embedder, FeatureSpec, HashedBowEmbedder, LanguageModel, LexicalReward,
    LinearNgramReward, RewardFormat, RewardModel, RewardModelParams, TableLm,
};
use argsearch::providers::{
    build_judge_prompt, RemoteEndpoint, RemoteLm, StubServer,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROVIDER: u8 = 3;

#[derive(Parser)]
#[command(name = "argsearch", about = "Reward-guided decoding engine and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DecodeFlags {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    max_prompt_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    likelihood_mode: Option<LikelihoodMode>,
    #[arg(long)]
    no_cache: bool,
}

impl DecodeFlags {
    fn build(&self) -> Result<DecodeConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
                DecodeConfig::from_flat(&text)
                    .map_err(|e| CliError::usage(format!("bad config file: {e}")))?
            }
            None => DecodeConfig::default(),
        };
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        over!(w);
        over!(k);
        over!(tau);
        over!(top_p);
        over!(alpha);
        over!(method);
        over!(max_new_tokens);
        over!(max_prompt_tokens);
        over!(seed);
        over!(likelihood_mode);
        if self.no_cache {
            cfg.use_cache = false;
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Table-model JSON file, or `tcp://host:port` for a remote provider.
    #[arg(long)]
    model: String,
    /// Lexical reward: target token (reward = frequency in the scored text).
    #[arg(long)]
    rm_target: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    rm_weight: f64,
    /// Trained linear reward-model params (JSON with feature_spec + theta).
    #[arg(long)]
    rm_params: Option<PathBuf>,
    /// Transcript template for reward scoring.
    #[arg(long)]
    reward_template: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one prompt and print the generation as JSON.
    Generate {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        decode: DecodeFlags,
        /// Prompt text (whitespace-tokenized against the model vocabulary).
        #[arg(long)]
        prompt: String,
        /// Write per-step traces as JSONL to this file.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Print the full record instead of the summary.
        #[arg(long)]
        full: bool,
    },
    /// Evaluate a generations.jsonl file and print the report.
    Eval {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        per_item: bool,
    },
    /// Run a benchmark sweep over (method, w, k).
    Bench {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        decode: DecodeFlags,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.5])]
        w_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize])]
        k_grid: Vec<usize>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train the linear reward model on JSONL preference pairs.
    TrainRm {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        learning_rate: f64,
        #[arg(long, default_value_t = 4096)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        max_order: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the trained params JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a judge prompt for two answers and print it as JSON.
    JudgePrompt {
        #[arg(long)]
        question: String,
        #[arg(long)]
        answer_a: String,
        #[arg(long)]
        answer_b: String,
        #[arg(long, default_value_t = 0)]
        order_seed: u64,
    },
    /// Compare two generation sets with the reward-difference stub judge.
    CompareWinrate {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        generations_a: PathBuf,
        #[arg(long)]
        generations_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve a toy model over the wire protocol on a loopback port.
    ServeStub {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
    fn provider(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PROVIDER,
            message: message.into(),
        }
    }
}

#[derive(Deserialize)]
struct TableModelFile {
    lexemes: Vec<String>,
    eos: Option<u32>,
    rows: Vec<Vec<f64>>,
}

fn load_table_lm(path: &str) -> Result<TableLm, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read model {path}: {e}")))?;
    let file: TableModelFile = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("bad model file {path}: {e}")))?;
    let vocab = Vocabulary::new(file.lexemes, file.eos.map(TokenId))
        .map_err(|e| CliError::data(format!("bad model vocabulary: {e}")))?;
    TableLm::new(vocab, file.rows).map_err(|e| CliError::data(format!("bad model table: {e}")))
}

fn load_lm(model: &str) -> Result<Box<dyn LanguageModel>, CliError> {
    if let Some(addr) = model.strip_prefix("tcp://") {
        let lm = RemoteLm::connect(RemoteEndpoint::new(addr), 0)
            .map_err(|e| CliError::provider(format!("remote model: {e}")))?;
        Ok(Box::new(lm))
    } else {
        Ok(Box::new(load_table_lm(model)?))
    }
}

fn load_rm(flags: &ModelFlags) -> Result<Option<Box<dyn RewardModel>>, CliError> {
    match (&flags.rm_params, &flags.rm_target) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            let params: RewardModelParams = serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("bad rm params: {e}")))?;
            let rm = LinearNgramReward::new(params)
                .map_err(|e| CliError::data(format!("bad rm params: {e}")))?;
            Ok(Some(Box::new(rm)))
        }
        (None, Some(target)) => Ok(Some(Box::new(LexicalReward::new(
            target.clone(),
            flags.rm_weight,
        )))),
        (None, None) => Ok(None),
    }
}

fn reward_format(flags: &ModelFlags) -> RewardFormat {
    match &flags.reward_template {
        Some(template) => RewardFormat {
            template: template.clone(),
        },
        None => RewardFormat::default(),
    }
}

fn encode_prompt(vocab: &Vocabulary, prompt: &str) -> Result<Context, CliError> {
    let tokens = vocab
        .encode(prompt)
        .map_err(|e| CliError::data(format!("prompt: {e}")))?;
    Ok(Context::from_prompt(tokens))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            model,
            decode,
            prompt,
            traces,
            full,
        } => {
            let lm = load_lm(&model.model)?;
            let rm = load_rm(&model)?;
            let fmt = reward_format(&model);
            let cfg = decode.build()?;
            let embedder = HashedBowEmbedder::default();
            validate_config(&cfg, lm.vocab().len())
                .map_err(|e| CliError::usage(format!("{e}")))?;
            let ctx = encode_prompt(lm.vocab(), &prompt)?;
            let record = run_method(
                lm.as_ref(),
                rm.as_deref(),
                Some(&embedder as &dyn Embedder),
                &fmt,
                &ctx,
                &cfg,
                0,
            )
            .map_err(|e| CliError::provider(format!("decode failed: {e}")))?;
            instrument_report(&record)
                .map_err(|e| CliError::provider(format!("counter check failed: {e}")))?;
            if let Some(path) = traces {
                let file = std::fs::File::create(&path)
                    .map_err(|e| CliError::data(format!("cannot write traces: {e}")))?;
                write_traces_jsonl(&record, file)
                    .map_err(|e| CliError::data(format!("cannot write traces: {e}")))?;
            }
            let json = if full {
                serde_json::to_string_pretty(&record)
            } else {
                serde_json::to_string_pretty(&GenerationSummary::from(&record))
            }
            .expect("record serializes");
            println!("{json}");
            Ok(())
        }
        Command::Eval {
            model,
            generations,
            per_item,
        } => {
            let rm = load_rm(&model)?
                .ok_or_else(|| CliError::usage("eval requires --rm-target or --rm-params"))?;
            let fmt = reward_format(&model);
            let file = std::fs::File::open(&generations)
                .map_err(|e| CliError::data(format!("cannot read generations: {e}")))?;
            let records = read_generations_jsonl(std::io::BufReader::new(file))
                .map_err(|e| CliError::data(format!("bad generations file: {e}")))?;
            if records.is_empty() {
                return Err(CliError::data("no generations to evaluate"));
            }
            let embedder = HashedBowEmbedder::default();
            let report = build_report(rm.as_ref(), &fmt, &embedder, &records, per_item);
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::Bench {
            model,
            decode,
            prompts,
            methods,
            w_grid,
            k_grid,
            out_dir,
            jobs,
        } => {
            let lm = load_lm(&model.model)?;
            let rm = load_rm(&model)?;
            let fmt = reward_format(&model);
            let base = decode.build()?;
            let embedder = HashedBowEmbedder::default();
            let corpus = ingest_prompts(&prompts)
                .map_err(|e| CliError::data(format!("prompt ingestion: {e}")))?;
            if corpus.skipped > 0 {
                eprintln!("warning: skipped {} malformed prompt lines", corpus.skipped);
            }
            let eval_rm = rm
                .as_deref()
                .ok_or_else(|| CliError::usage("bench requires --rm-target or --rm-params"))?;
            let plan = BenchmarkPlan {
                prompts_path: prompts.to_string_lossy().into_owned(),
                methods,
                w_grid,
                k_grid,
                tau: base.tau,
                seed: base.seed,
                out_dir: out_dir.to_string_lossy().into_owned(),
                jobs,
            };
            let outcome = run_benchmark(
                &plan,
                &base,
                lm.as_ref(),
                rm.as_deref(),
                Some(&embedder as &dyn Embedder),
                &fmt,
                &corpus.prompts,
                eval_rm,
                &embedder,
            )
            .map_err(|e| CliError::provider(format!("benchmark: {e}")))?;
            for result in &outcome.results {
                println!("{}: {}", result.label, result.row.to_csv_line());
            }
            for (label, err) in &outcome.failures {
                eprintln!("FAILED {label}: {err}");
            }
            if outcome.results.is_empty() {
                return Err(CliError::provider("every configuration failed"));
            }
            Ok(())
        }
        Command::TrainRm {
            pairs,
            epochs,
            learning_rate,
            width,
            max_order,
            seed,
            out,
        } => {
            let corpus = ingest_prompts(&pairs)
                .map_err(|e| CliError::data(format!("pair ingestion: {e}")))?;
            if corpus.pairs.is_empty() {
                return Err(CliError::data("no preference pairs in the input"));
            }
            let spec = FeatureSpec { max_order, width };
            let fmt = RewardFormat::default();
            let outcome = rm_train(
                RewardModelParams::zeros(spec),
                &fmt,
                &corpus.pairs,
                epochs,
                learning_rate,
                seed,
            )
            .map_err(|e| CliError::data(format!("training failed: {e}")))?;
            for stats in &outcome.trace {
                println!(
                    "epoch {}: loss {:.6} accuracy {:.4}",
                    stats.epoch, stats.mean_loss, stats.accuracy
                );
            }
            let json =
                serde_json::to_string_pretty(&outcome.params).expect("params serialize");
            std::fs::write(&out, json)
                .map_err(|e| CliError::data(format!("cannot write {}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::JudgePrompt {
            question,
            answer_a,
            answer_b,
            order_seed,
        } => {
            let req = argsearch::providers::JudgeRequest {
                question,
                answer_a,
                answer_b,
                order_seed,
            };
            req.validate().map_err(CliError::usage)?;
            let (system, user) = build_judge_prompt(&req);
            let json = serde_json::json!({
                "system": system,
                "user": user,
                "order_swapped": argsearch::providers::order_swapped(req.order_seed),
            });
            println!("{}", serde_json::to_string_pretty(&json).unwrap());
            Ok(())
        }
        Command::CompareWinrate {
            model,
            generations_a,
            generations_b,
            seed,
        } => {
            let rm = load_rm(&model)?
                .ok_or_else(|| CliError::usage("compare-winrate requires a reward model"))?;
            let read = |path: &PathBuf| -> Result<_, CliError> {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
                read_generations_jsonl(std::io::BufReader::new(file))
                    .map_err(|e| CliError::data(format!("bad generations: {e}")))
            };
            let a = read(&generations_a)?;
            let b = read(&generations_b)?;
            // Reward-difference stub judge: maps rewards into [1, 10].
            let rm = rm.as_ref();
            let judge = StubJudge {
                score: move |x: &str, y: &str| {
                    let clamp = |r: f64| 1.0 + 9.0 * (0.5 + (r - 0.5)).clamp(0.0, 1.0);
                    (clamp(rm.score_text(x)), clamp(rm.score_text(y)))
                },
            };
            let rate = compare_winrate(&a, &b, &judge, seed)
                .map_err(|e| CliError::data(format!("{e}")))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&rate).expect("rate serializes")
            );
            Ok(())
        }
        Command::ServeStub { model, port } => {
            let lm = load_table_lm(&model.model)?;
            let rm = load_rm(&model)?
                .ok_or_else(|| CliError::usage("serve-stub requires a reward model"))?;
            let lm: Arc<dyn LanguageModel> = Arc::new(lm);
            let rm: Arc<dyn RewardModel> = Arc::from(rm);
            if port != 0 {
                return Err(CliError::usage(
                    "fixed ports are not supported; the stub always binds an ephemeral port",
                ));
            }
            let server = StubServer::spawn(lm, rm)
                .map_err(|e| CliError::provider(format!("cannot start stub: {e}")))?;
            println!("listening on {}", server.addr());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

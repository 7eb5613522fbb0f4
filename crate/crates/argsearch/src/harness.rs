//! Benchmark harness: corpus ingestion, sweeps over (method, w, k),
//! report emission, and judged win-rate comparison.

use crate::core::{
    validate_config, ConfigError, Context, DecodeConfig, GenerationRecord, Method,
};
use crate::decode::{run_method, write_traces_jsonl, DecodeError};
use crate::metrics::{build_report, EvalReport, ReportRow, CSV_HEADER};
use crate::models::{Embedder, LanguageModel, PreferencePair, RewardFormat, RewardModel};
use crate::providers::{build_judge_prompt, order_swapped, parse_judge_scores, JudgeOutcome, JudgeRequest};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} contains no valid lines")]
    NoValidLines { path: PathBuf },
    #[error("invalid plan: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("prompt {index} cannot be tokenized: {message}")]
    BadPrompt { index: usize, message: String },
    #[error("prompt sets are misaligned: {0}")]
    Misaligned(String),
    #[error("judge failed on item {index}: {message}")]
    JudgeFailed { index: usize, message: String },
}

/// Ingested corpus: prompts in file order, preference pairs for the lines
/// that carried both responses, and a count of skipped malformed lines.
#[derive(Debug, Default)]
pub struct IngestResult {
    pub prompts: Vec<String>,
    pub pairs: Vec<PreferencePair>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct PromptLine {
    prompt: String,
    chosen: Option<String>,
    rejected: Option<String>,
}

/// Streams a JSONL prompt file. Lines must carry a `prompt` field; `chosen`
/// and `rejected`, when both present and distinct, become preference pairs.
/// Malformed lines are skipped and counted.
pub fn ingest_prompts(path: &Path) -> Result<IngestResult, HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut result = IngestResult::default();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PromptLine>(&line) {
            Ok(parsed) => {
                if let (Some(chosen), Some(rejected)) = (&parsed.chosen, &parsed.rejected) {
                    if let Ok(pair) =
                        PreferencePair::new(parsed.prompt.clone(), chosen.clone(), rejected.clone())
                    {
                        result.pairs.push(pair);
                    }
                }
                result.prompts.push(parsed.prompt);
            }
            Err(_) => result.skipped += 1,
        }
    }
    if result.prompts.is_empty() {
        return Err(HarnessError::NoValidLines {
            path: path.to_path_buf(),
        });
    }
    Ok(result)
}

/// A sweep over (method, w, k) at fixed tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub prompts_path: String,
    pub methods: Vec<Method>,
    pub w_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub tau: f64,
    pub seed: u64,
    pub out_dir: String,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    1
}

impl BenchmarkPlan {
    pub fn validate(&self, base: &DecodeConfig, vocab_size: usize) -> Result<(), HarnessError> {
        if self.methods.is_empty() || self.w_grid.is_empty() || self.k_grid.is_empty() {
            return Err(HarnessError::BadPlan("grids must be nonempty".into()));
        }
        for &method in &self.methods {
            for &w in &self.w_grid {
                for &k in &self.k_grid {
                    let cfg = DecodeConfig {
                        method,
                        w,
                        k,
                        tau: self.tau,
                        seed: self.seed,
                        ..base.clone()
                    };
                    validate_config(&cfg, vocab_size)?;
                }
            }
        }
        Ok(())
    }

    pub fn configurations(&self, base: &DecodeConfig) -> Vec<DecodeConfig> {
        let mut cfgs = Vec::new();
        for &method in &self.methods {
            for &w in &self.w_grid {
                for &k in &self.k_grid {
                    cfgs.push(DecodeConfig {
                        method,
                        w,
                        k,
                        tau: self.tau,
                        seed: self.seed,
                        ..base.clone()
                    });
                }
            }
        }
        cfgs
    }
}

pub fn config_label(cfg: &DecodeConfig) -> String {
    format!("{}_w{}_k{}", cfg.method, cfg.w, cfg.k)
}

/// Result of one swept configuration.
#[derive(Debug)]
pub struct BenchResult {
    pub cfg: DecodeConfig,
    pub label: String,
    pub report: EvalReport,
    pub row: ReportRow,
    pub records: Vec<GenerationRecord>,
}

/// Outcome of a full sweep; failed configurations are recorded without
/// aborting the rest.
#[derive(Debug, Default)]
pub struct BenchOutcome {
    pub results: Vec<BenchResult>,
    pub failures: Vec<(String, String)>,
}

/// Runs every prompt under one configuration. Sequence `i` always uses RNG
/// stream `i`, so results are independent of execution order and of `jobs`.
pub fn run_config(
    lm: &dyn LanguageModel,
    rm: Option<&dyn RewardModel>,
    embedder: Option<&dyn Embedder>,
    fmt: &RewardFormat,
    prompts: &[String],
    cfg: &DecodeConfig,
    jobs: usize,
) -> Result<Vec<GenerationRecord>, HarnessError> {
    let vocab = lm.vocab();
    let mut prompt_ctxs = Vec::with_capacity(prompts.len());
    for (index, p) in prompts.iter().enumerate() {
        let tokens = vocab
            .encode(p)
            .map_err(|message| HarnessError::BadPrompt { index, message })?;
        prompt_ctxs.push(Context::from_prompt(tokens));
    }

    let slots: Vec<Mutex<Option<Result<GenerationRecord, DecodeError>>>> =
        (0..prompts.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(prompts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompt_ctxs.len() {
                    break;
                }
                let result = run_method(lm, rm, embedder, fmt, &prompt_ctxs[i], cfg, i as u64);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut records = Vec::with_capacity(prompts.len());
    for (index, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().unwrap().expect("worker filled every slot") {
            Ok(rec) => records.push(rec),
            Err(e) => {
                return Err(HarnessError::BadPrompt {
                    index,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `generations.jsonl`, `traces.jsonl`, `report.json`, and
/// `report.csv` into `dir`.
pub fn emit_config_outputs(
    dir: &Path,
    result: &BenchResult,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut generations = Vec::new();
    let mut traces = Vec::new();
    for rec in &result.records {
        serde_json::to_writer(&mut generations, rec).expect("record serializes");
        generations.push(b'\n');
        write_traces_jsonl(rec, &mut traces).expect("in-memory write");
    }
    write_file(&dir.join("generations.jsonl"), &generations)?;
    write_file(&dir.join("traces.jsonl"), &traces)?;
    let mut report_json = serde_json::to_vec_pretty(&result.report).expect("report serializes");
    report_json.push(b'\n');
    write_file(&dir.join("report.json"), &report_json)?;
    let csv = format!("{}\n{}\n", CSV_HEADER, result.row.to_csv_line());
    write_file(&dir.join("report.csv"), csv.as_bytes())?;
    Ok(())
}

/// Runs the full sweep: one report per configuration, outputs under
/// `out_dir/<method>_w<w>_k<k>/`. A failing configuration is recorded and
/// the remaining configurations still run.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    plan: &BenchmarkPlan,
    base: &DecodeConfig,
    lm: &dyn LanguageModel,
    rm: Option<&dyn RewardModel>,
    embedder: Option<&dyn Embedder>,
    fmt: &RewardFormat,
    prompts: &[String],
    eval_rm: &dyn RewardModel,
    eval_embedder: &dyn Embedder,
) -> Result<BenchOutcome, HarnessError> {
    plan.validate(base, lm.vocab().len())?;
    let mut outcome = BenchOutcome::default();
    let out_dir = Path::new(&plan.out_dir);
    for cfg in plan.configurations(base) {
        let label = config_label(&cfg);
        match run_config(lm, rm, embedder, fmt, prompts, &cfg, plan.jobs) {
            Ok(records) => {
                let report = build_report(eval_rm, fmt, eval_embedder, &records, true);
                let row = ReportRow {
                    method: cfg.method.to_string(),
                    w: cfg.w,
                    k: cfg.k,
                    tau: cfg.tau,
                    average_reward: report.average_reward,
                    diversity: report.diversity,
                    coherence: report.coherence,
                    n: report.n,
                };
                let result = BenchResult {
                    label: label.clone(),
                    cfg,
                    report,
                    row,
                    records,
                };
                if !plan.out_dir.is_empty() {
                    emit_config_outputs(&out_dir.join(&label), &result)?;
                }
                outcome.results.push(result);
            }
            Err(e) => outcome.failures.push((label, e.to_string())),
        }
    }
    if !plan.out_dir.is_empty() && !outcome.results.is_empty() {
        let mut summary = String::from(CSV_HEADER);
        summary.push('\n');
        for r in &outcome.results {
            summary.push_str(&r.row.to_csv_line());
            summary.push('\n');
        }
        std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        write_file(&out_dir.join("summary.csv"), summary.as_bytes())?;
    }
    Ok(outcome)
}

/// A judge that answers a built (system, user) prompt pair with the raw
/// response text the parser expects.
pub trait JudgeClient {
    fn judge(&self, system: &str, user: &str) -> Result<String, String>;
}

/// Stub judge for tests: recovers the two presented answers from the user
/// prompt and scores them with a callback.
pub struct StubJudge<F: Fn(&str, &str) -> (f64, f64) + Send + Sync> {
    pub score: F,
}

/// Extracts the two answers, in presentation order, from a built user prompt.
pub fn extract_presented_answers(user: &str) -> Option<(String, String)> {
    let grab = |start_marker: &str, end_marker: &str| {
        let start = user.find(start_marker)? + start_marker.len();
        let end = user[start..].find(end_marker)? + start;
        Some(user[start..end].trim().to_string())
    };
    Some((
        grab(
            "[The Start of Assistant 1's Answer]",
            "[The End of Assistant 1's Answer]",
        )?,
        grab(
            "[The Start of Assistant 2's Answer]",
            "[The End of Assistant 2's Answer]",
        )?,
    ))
}

impl<F: Fn(&str, &str) -> (f64, f64) + Send + Sync> JudgeClient for StubJudge<F> {
    fn judge(&self, _system: &str, user: &str) -> Result<String, String> {
        let (a1, a2) =
            extract_presented_answers(user).ok_or_else(|| "missing answer markers".to_string())?;
        let (s1, s2) = (self.score)(&a1, &a2);
        Ok(format!("{s1} {s2}\nScored by stub."))
    }
}

/// Win-tie tally for method A against method B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub total: usize,
    pub win_tie_pct: f64,
}

/// Judges aligned generation sets pairwise with presentation-order
/// randomization seeded per item. Identical continuations tie without
/// consulting the judge. Win-tie percentage is `(wins + ties) / total * 100`.
pub fn compare_winrate(
    reports_a: &[GenerationRecord],
    reports_b: &[GenerationRecord],
    judge: &dyn JudgeClient,
    seed: u64,
) -> Result<WinRate, HarnessError> {
    if reports_a.len() != reports_b.len() {
        return Err(HarnessError::Misaligned(format!(
            "{} vs {} generations",
            reports_a.len(),
            reports_b.len()
        )));
    }
    let mut wins = 0;
    let mut ties = 0;
    let mut losses = 0;
    for (index, (a, b)) in reports_a.iter().zip(reports_b).enumerate() {
        if a.prompt_text != b.prompt_text {
            return Err(HarnessError::Misaligned(format!(
                "prompt {index} differs between the two sets"
            )));
        }
        if a.continuation_text == b.continuation_text {
            ties += 1;
            continue;
        }
        let req = JudgeRequest {
            question: a.prompt_text.clone(),
            answer_a: a.continuation_text.clone(),
            answer_b: b.continuation_text.clone(),
            order_seed: seed.wrapping_add(index as u64),
        };
        let (system, user) = build_judge_prompt(&req);
        let response = judge
            .judge(&system, &user)
            .map_err(|message| HarnessError::JudgeFailed { index, message })?;
        let verdict = parse_judge_scores(&response, order_swapped(req.order_seed))
            .map_err(|e| HarnessError::JudgeFailed {
                index,
                message: e.to_string(),
            })?;
        match verdict.outcome {
            JudgeOutcome::Win => wins += 1,
            JudgeOutcome::Tie => ties += 1,
            JudgeOutcome::Loss => losses += 1,
        }
    }
    let total = reports_a.len();
    Ok(WinRate {
        wins,
        ties,
        losses,
        total,
        win_tie_pct: (wins + ties) as f64 / total as f64 * 100.0,
    })
}

/// Writes a generation record set as JSONL.
pub fn write_generations_jsonl<W: Write>(
    records: &[GenerationRecord],
    mut out: W,
) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a generation record set from JSONL.
pub fn read_generations_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<GenerationRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        records.push(rec);
    }
    Ok(records)
}

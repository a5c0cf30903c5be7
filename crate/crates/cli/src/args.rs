use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dimt_core::bleu::{BleuConfig, Smoothing};
use dimt_core::dataset::TaskKind;
use dimt_core::evaluate::ReportFormat;
use dimt_core::postprocess::PostprocessConfig;
use dimt_core::text::TokenScheme;
use dimt_core::types::{Split, SubTask, TrackKind};
use dimt_genclient::{EndpointConfig, SamplingConfig};
use url::Url;

use crate::config::{GenerateSettings, PipelineConfig};
use crate::error::EXIT_CODES_HELP;

/// Document image translation pipeline: collect candidates from a model
/// endpoint, select by minimum Bayes risk, post-process, and score.
///
/// Every subcommand accepts `--config <file>` (TOML, or JSON by extension).
/// Values from the file are used unless a flag overrides them.
#[derive(Debug, Parser)]
#[command(name = "dimt", version, propagate_version = true, after_help = EXIT_CODES_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect one deterministic output and N samples per segment.
    Generate(GenerateArgs),
    /// Select one candidate per segment by expected BLEU against the others.
    Mbr(MbrArgs),
    /// Cap symbol runs, suppress complex tables, normalize spaces.
    Postprocess(PostprocessArgs),
    /// Corpus BLEU of hypotheses against references, as a report cell.
    Score(ScoreArgs),
    /// Assemble fine-tuning conversations from segments with a task mixture.
    BuildData(BuildDataArgs),
    /// Run generate, mbr, postprocess and score from one config file.
    Pipeline(PipelineArgs),
    /// Serve pre-recorded completions on a local chat-completion endpoint.
    MockServer(MockServerArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline config file (TOML, or JSON with a .json extension).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    /// API root; requests go to {base-url}/chat/completions.
    #[arg(long, value_name = "URL")]
    pub base_url: Option<Url>,
    /// Model name sent with every request.
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<f64>,
    /// Retries per request after the first attempt.
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Maximum requests in flight.
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Backoff base in milliseconds (doubles per retry).
    #[arg(long, value_name = "MS")]
    pub backoff_base_ms: Option<u64>,
    /// Backoff ceiling in milliseconds.
    #[arg(long, value_name = "MS")]
    pub backoff_cap_ms: Option<u64>,
}

impl EndpointArgs {
    pub fn apply(&self, cfg: &mut EndpointConfig) {
        if let Some(v) = &self.base_url {
            cfg.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model_name = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            cfg.api_key_env = v.clone();
        }
        set(&mut cfg.timeout_secs, self.timeout);
        set(&mut cfg.max_retries, self.max_retries);
        set(&mut cfg.max_concurrent_requests, self.concurrency);
        set(&mut cfg.backoff_base_ms, self.backoff_base_ms);
        set(&mut cfg.backoff_cap_ms, self.backoff_cap_ms);
    }
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Sampling temperature for the sampled requests.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Nucleus sampling mass for the sampled requests.
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Number of sampled candidates per segment.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
    /// Skip the deterministic (greedy) request.
    #[arg(long)]
    pub no_deterministic: bool,
    /// Completion length limit sent as max_tokens.
    #[arg(long, value_name = "N")]
    pub max_output_tokens: Option<u32>,
}

impl SamplingArgs {
    pub fn apply(&self, cfg: &mut SamplingConfig) {
        set(&mut cfg.temperature, self.temperature);
        set(&mut cfg.top_p, self.top_p);
        set(&mut cfg.num_samples, self.samples);
        set(&mut cfg.max_output_tokens, self.max_output_tokens);
        if self.no_deterministic {
            cfg.deterministic_pass = false;
        }
    }
}

#[derive(Debug, Args)]
pub struct BleuArgs {
    /// Highest n-gram order.
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Smoothing: none or floor.
    #[arg(long)]
    pub smoothing: Option<Smoothing>,
    /// Floor numerator for zero-match orders under floor smoothing.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Tokenization: whitespace, cjk_char or mixed.
    #[arg(long)]
    pub tokenize: Option<TokenScheme>,
    /// Lowercase before tokenizing.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub lowercase: Option<bool>,
}

impl BleuArgs {
    pub fn apply(&self, cfg: &mut BleuConfig) {
        set(&mut cfg.max_order, self.max_order);
        set(&mut cfg.smoothing, self.smoothing);
        set(&mut cfg.epsilon, self.epsilon);
        set(&mut cfg.tokenization, self.tokenize);
        set(&mut cfg.lowercase, self.lowercase);
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Segments JSONL (defaults to paths.segments).
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Candidate sets JSONL (defaults to paths.generate). Failed segments
    /// go to <out>.errors.jsonl.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    /// User prompt; must contain {source_text}, may contain {segment_id}.
    #[arg(long, value_name = "TEXT")]
    pub prompt_template: Option<String>,
    /// Directory that relative image_ref paths are resolved against.
    #[arg(long, value_name = "DIR")]
    pub image_root: Option<PathBuf>,
    /// Stop at the first segment whose collection fails.
    #[arg(long)]
    pub fail_fast: bool,
    /// Answer from this pre-recorded responses JSONL on a local mock endpoint.
    #[arg(long, value_name = "FILE")]
    pub mock_responses: Option<PathBuf>,
}

impl GenerateArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        self.sampling.apply(&mut cfg.sampling);
        self.endpoint.apply(&mut cfg.endpoint);
        apply_generate(&mut cfg.generate, self);
    }
}

fn apply_generate(g: &mut GenerateSettings, a: &GenerateArgs) {
    if let Some(t) = &a.prompt_template {
        g.prompt_template = t.clone();
    }
    if a.image_root.is_some() {
        g.image_root = a.image_root.clone();
    }
    if a.fail_fast {
        g.fail_fast = true;
    }
    if a.mock_responses.is_some() {
        g.mock_responses = a.mock_responses.clone();
    }
}

#[derive(Debug, Args)]
pub struct MbrArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Candidate sets JSONL (defaults to paths.generate).
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Selections JSONL (defaults to paths.mbr).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub bleu: BleuArgs,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Hypotheses JSONL: MBR selections or {id, text} lines (defaults to paths.mbr).
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Post-processed JSONL (defaults to paths.postprocess).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Comma-separated symbols whose runs are capped.
    #[arg(long, value_delimiter = ',', value_name = "SYMS")]
    pub special_symbols: Option<Vec<String>>,
    /// Longest run kept for a special symbol.
    #[arg(long, value_name = "N")]
    pub max_run_length: Option<usize>,
    /// Pipe count at which an output is treated as a complex table.
    #[arg(long, value_name = "N")]
    pub table_pipe_threshold: Option<usize>,
    /// Count of lines with two or more pipes at which an output is a complex table.
    #[arg(long, value_name = "N")]
    pub table_row_threshold: Option<usize>,
    /// Collapse and trim ASCII space runs.
    #[arg(long, value_name = "BOOL")]
    pub collapse_spaces: Option<bool>,
    /// Chinese segmenter: lexicon or char.
    #[arg(long)]
    pub segmenter: Option<String>,
    /// Remove spaces between CJK words.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub join_cjk_words: Option<bool>,
}

impl PostprocessArgs {
    pub fn apply(&self, cfg: &mut PostprocessConfig) {
        if let Some(v) = &self.special_symbols {
            cfg.special_symbols = v.clone();
        }
        set(&mut cfg.max_run_length, self.max_run_length);
        set(&mut cfg.table_pipe_threshold, self.table_pipe_threshold);
        set(&mut cfg.table_row_threshold, self.table_row_threshold);
        set(&mut cfg.collapse_spaces, self.collapse_spaces);
        if let Some(v) = &self.segmenter {
            cfg.segmenter = v.clone();
        }
        set(&mut cfg.join_cjk_words, self.join_cjk_words);
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Track: 1 (web documents) or 2 (arXiv).
    #[arg(long)]
    pub track: Option<TrackKind>,
    /// Split: valid or test.
    #[arg(long)]
    pub split: Option<Split>,
    /// Sub-task: ocr (against source text) or mt (against reference translation).
    #[arg(long)]
    pub subtask: Option<SubTask>,
    /// Hypotheses JSONL (defaults to paths.postprocess).
    #[arg(long, value_name = "FILE")]
    pub hyp: Option<PathBuf>,
    /// Reference segments JSONL (defaults to paths.references).
    #[arg(long = "ref", value_name = "FILE")]
    pub reference: Option<PathBuf>,
    /// Score the joined ids only; unjoined ids go to the diagnostics sidecar.
    #[arg(long)]
    pub allow_partial: bool,
    /// Row label in the report.
    #[arg(long)]
    pub label: Option<String>,
    /// markdown, csv or json; defaults to the --out extension, else markdown.
    #[arg(long)]
    pub format: Option<ReportFormat>,
    /// Report file (defaults to paths.score, else stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Add the cell to the existing JSON report at --out instead of replacing it.
    #[arg(long)]
    pub merge: bool,
    #[command(flatten)]
    pub bleu: BleuArgs,
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    /// Track the segments belong to: 1 or 2.
    #[arg(long)]
    pub track: TrackKind,
    /// Split label recorded on every example.
    #[arg(long)]
    pub split: Split,
    /// Segments JSONL.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Training examples JSONL; statistics go to <out>.stats.json.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Mixture file (TOML or JSON) with weights, seed and prompt templates.
    #[arg(long, value_name = "FILE")]
    pub mixture: Option<PathBuf>,
    /// Task weight, e.g. --weight pcot_chained=2 (repeatable; replaces the file's weights).
    #[arg(long = "weight", value_name = "TASK=W", value_parser = parse_weight)]
    pub weights: Vec<(TaskKind, f64)>,
    /// Seed for the task draw.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_weight(s: &str) -> Result<(TaskKind, f64), String> {
    let (k, w) = s.split_once('=').ok_or_else(|| format!("expected TASK=WEIGHT, got `{s}`"))?;
    let w: f64 = w.trim().parse().map_err(|e| format!("weight `{w}`: {e}"))?;
    Ok((k.trim().parse()?, w))
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_name = "FILE")]
    /// Pipeline config file.
    pub config: PathBuf,
    /// Comma-separated ordered subset of generate,mbr,postprocess,score.
    #[arg(long, value_delimiter = ',', default_value = "generate,mbr,postprocess,score")]
    pub stages: Vec<String>,
    /// Override endpoint.base_url.
    #[arg(long, value_name = "URL")]
    pub base_url: Option<Url>,
    /// Override generate.mock_responses.
    #[arg(long, value_name = "FILE")]
    pub mock_responses: Option<PathBuf>,
    /// Override mbr.parallelism.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Override score.system_label.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct MockServerArgs {
    /// Recorded responses JSONL: {segment_id, deterministic, samples}.
    #[arg(long, value_name = "FILE")]
    pub responses: PathBuf,
    /// Port on 127.0.0.1; 0 picks a free one.
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
    /// Delay before every reply, in milliseconds.
    #[arg(long, value_name = "MS", default_value_t = 0)]
    pub latency_ms: u64,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::try_parse_from([
            "dimt", "generate", "--temperature", "0.5", "--samples", "3", "--no-deterministic", "--concurrency", "2",
        ])
        .unwrap();
        let Command::Generate(args) = cli.command else { panic!() };
        let mut cfg = PipelineConfig::default();
        cfg.sampling.top_p = 0.5;
        args.apply(&mut cfg);
        assert_eq!(cfg.sampling.temperature, 0.5);
        assert_eq!(cfg.sampling.top_p, 0.5);
        assert_eq!(cfg.sampling.num_samples, 3);
        assert!(!cfg.sampling.deterministic_pass);
        assert_eq!(cfg.endpoint.max_concurrent_requests, 2);
    }

    #[test]
    fn weights_parse() {
        assert_eq!(parse_weight("ocr_only=0.5").unwrap(), (TaskKind::OcrOnly, 0.5));
        assert!(parse_weight("ocr_only").is_err());
        assert!(parse_weight("bogus=1").is_err());
    }
}

//! One function per pipeline stage. Each reads its input file, writes its
//! output file and returns a [`StageRecord`] for the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dimt_core::bleu::BleuConfig;
use dimt_core::evaluate::{parse_report_json, render_report, score_subtask, Column, EvalReport, HypothesisRecord, ReportFormat};
use dimt_core::jsonl::{read_all, read_jsonl, JsonlWriter};
use dimt_core::mbr::{mbr_batch, CandidateSet};
use dimt_core::postprocess::{run_pipeline, PostprocessConfig, PostprocessedRecord};
use dimt_core::types::Segment;
use dimt_genclient::mock::{MockServer, Recorded};
use dimt_genclient::{EndpointConfig, GenClient, PromptTemplate, SamplingConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{sha256_file, GenerateSettings, ScoreSettings};
use crate::error::{CliError, CliResult, FailureClass};

pub const STAGES: [&str; 4] = ["generate", "mbr", "postprocess", "score"];

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<InputRecord>,
    pub output: Option<PathBuf>,
    pub records_in: usize,
    pub records_out: usize,
    pub wall_ms: u128,
    pub metrics: BTreeMap<String, Value>,
}

impl StageRecord {
    fn new(stage: &str) -> Self {
        StageRecord {
            stage: stage.to_string(),
            inputs: Vec::new(),
            output: None,
            records_in: 0,
            records_out: 0,
            wall_ms: 0,
            metrics: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.inputs.push(InputRecord { path: path.to_path_buf(), sha256, bytes });
        Ok(())
    }
}

/// Fails with an I/O-class error naming who normally writes `path`.
pub fn require_input(path: &Path, what: &str, producer: Option<&str>) -> CliResult<()> {
    if path.is_file() {
        return Ok(());
    }
    let hint = match producer {
        Some(stage) => format!("it is written by the `{stage}` stage; run that stage first or fix paths.{stage}"),
        None => "it is a pipeline input and must be supplied".to_string(),
    };
    Err(CliError::new(
        FailureClass::Io,
        format!("{what} not found at {}: {hint}", path.display()),
    ))
}

pub fn required(path: Option<PathBuf>, flag: &str, key: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::usage(format!("no {flag} given and no paths.{key} in the config")))
}

fn timed<F>(stage: &str, f: F) -> CliResult<StageRecord>
where
    F: FnOnce(&mut StageRecord) -> CliResult<()>,
{
    let start = Instant::now();
    let mut rec = StageRecord::new(stage);
    f(&mut rec).map_err(|e| e.in_stage(stage))?;
    rec.wall_ms = start.elapsed().as_millis();
    Ok(rec)
}

pub struct GenerateJob<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub endpoint: EndpointConfig,
    pub sampling: SamplingConfig,
    pub settings: &'a GenerateSettings,
    /// Resolved counterparts of the path settings.
    pub image_root: Option<PathBuf>,
    pub mock_responses: Option<PathBuf>,
}

pub fn errors_sidecar(out: &Path) -> PathBuf {
    sidecar(out, "errors.jsonl")
}

pub fn diagnostics_sidecar(path: &Path) -> PathBuf {
    sidecar(path, "diagnostics.json")
}

pub fn stats_sidecar(path: &Path) -> PathBuf {
    sidecar(path, "stats.json")
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

pub fn generate(job: GenerateJob<'_>) -> CliResult<StageRecord> {
    timed("generate", |rec| {
        require_input(job.input, "segments file", None)?;
        rec.input(job.input)?;
        let segments: Vec<Segment> = read_all(job.input)?;
        rec.records_in = segments.len();
        let template = PromptTemplate::new(job.settings.prompt_template.clone())?;

        let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("cannot start async runtime", e))?;
        let (outcomes, requests, retries) = runtime.block_on(async {
            let mut endpoint = job.endpoint.clone();
            let _mock = match &job.mock_responses {
                Some(path) => {
                    require_input(path, "recorded responses file", None)?;
                    let server = MockServer::start(Recorded::load(path)?)
                        .await
                        .map_err(|e| CliError::io("cannot start mock endpoint", e))?;
                    endpoint.base_url = server.base_url();
                    Some(server)
                }
                None => None,
            };
            let mut client = GenClient::new(endpoint, job.sampling.clone())?;
            if let Some(root) = &job.image_root {
                client = client.with_image_root(root);
            }
            let outcomes = client.collect_batch(segments, &template, job.settings.fail_fast).await?;
            Ok::<_, CliError>((outcomes, client.requests_sent(), client.retries()))
        })?;

        let mut writer = JsonlWriter::create(job.out)?;
        let mut errors = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(set) => writer.write(&set)?,
                Err(e) => errors.push(json!({
                    "segment_id": e.segment_id(),
                    "configuration": e.is_configuration(),
                    "error": e.to_string(),
                })),
            }
        }
        rec.records_out = writer.finish()?;
        rec.output = Some(job.out.to_path_buf());
        rec.metrics.insert("requests".into(), requests.into());
        rec.metrics.insert("retries".into(), retries.into());
        rec.metrics.insert("failed_segments".into(), errors.len().into());

        let sidecar = errors_sidecar(job.out);
        if errors.is_empty() {
            if sidecar.exists() {
                std::fs::remove_file(&sidecar).map_err(|e| CliError::io(sidecar.display(), e))?;
            }
            return Ok(());
        }
        let body: String = errors.iter().map(|e| format!("{e}\n")).collect();
        std::fs::write(&sidecar, body).map_err(|e| CliError::io(sidecar.display(), e))?;
        Err(CliError::new(
            FailureClass::Collection,
            format!(
                "{} of {} segment(s) failed; details in {}",
                errors.len(),
                rec.records_in,
                sidecar.display()
            ),
        ))
    })
}

pub fn mbr(input: &Path, out: &Path, bleu: &BleuConfig, parallelism: usize) -> CliResult<StageRecord> {
    timed("mbr", |rec| {
        require_input(input, "candidate sets file", Some("generate"))?;
        rec.input(input)?;
        let sets: Vec<CandidateSet> = read_all(input)?;
        rec.records_in = sets.len();
        let threads = match parallelism {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        };
        let results = mbr_batch(&sets, bleu, threads)?;
        let mut writer = JsonlWriter::create(out)?;
        let mut changed = 0;
        for r in &results {
            if r.selected_index != 0 {
                changed += 1;
            }
            writer.write(r)?;
        }
        rec.records_out = writer.finish()?;
        rec.output = Some(out.to_path_buf());
        rec.metrics.insert("selected_non_first".into(), changed.into());
        rec.metrics.insert("utility".into(), bleu.describe().into());
        Ok(())
    })
}

pub fn postprocess(input: &Path, out: &Path, cfg: &PostprocessConfig) -> CliResult<StageRecord> {
    timed("postprocess", |rec| {
        cfg.validate()?;
        require_input(input, "hypotheses file", Some("mbr"))?;
        rec.input(input)?;
        let mut writer = JsonlWriter::create(out)?;
        let mut fired: BTreeMap<String, usize> = BTreeMap::new();
        for hyp in read_jsonl::<HypothesisRecord>(input)?.records() {
            let hyp = hyp?;
            rec.records_in += 1;
            let report = run_pipeline(&hyp.text, cfg);
            for rule in &report.rules_fired {
                *fired.entry(rule.to_string()).or_default() += 1;
            }
            writer.write(&PostprocessedRecord {
                id: hyp.id,
                text: report.output_text,
                rules_fired: report.rules_fired,
                runs_compressed: report.runs_compressed,
            })?;
        }
        rec.records_out = writer.finish()?;
        rec.output = Some(out.to_path_buf());
        rec.metrics.insert("rules_fired".into(), serde_json::to_value(fired)?);
        Ok(())
    })
}

pub struct ScoreJob<'a> {
    pub hyp: &'a Path,
    pub reference: &'a Path,
    pub settings: &'a ScoreSettings,
    pub format: Option<ReportFormat>,
    /// Report destination; stdout when `None`.
    pub out: Option<&'a Path>,
    pub merge: bool,
}

pub fn score(job: ScoreJob<'_>) -> CliResult<StageRecord> {
    timed("score", |rec| {
        let s = job.settings;
        require_input(job.hyp, "hypotheses file", Some("postprocess"))?;
        require_input(job.reference, "references file", None)?;
        rec.input(job.hyp)?;
        rec.input(job.reference)?;
        let column = Column::new(s.track, s.split, s.sub_task);

        let result = score_subtask(job.hyp, job.reference, s.sub_task, &s.bleu, s.allow_partial)?;
        let sidecar = diagnostics_sidecar(job.out.unwrap_or(job.hyp));
        if result.diagnostics.is_clean() {
            if sidecar.exists() {
                std::fs::remove_file(&sidecar).map_err(|e| CliError::io(sidecar.display(), e))?;
            }
        } else {
            let body = serde_json::to_string_pretty(&result.diagnostics)? + "\n";
            std::fs::write(&sidecar, body).map_err(|e| CliError::io(sidecar.display(), e))?;
        }

        let format = job.format.or(job.out.map(ReportFormat::from_path)).unwrap_or(ReportFormat::Markdown);
        let mut report = match job.out {
            Some(out) if job.merge && out.is_file() => {
                if format != ReportFormat::Json {
                    return Err(CliError::usage("--merge needs a JSON report"));
                }
                let text = std::fs::read_to_string(out).map_err(|e| CliError::io(out.display(), e))?;
                let existing = parse_report_json(&text)?;
                if existing.config_fingerprint != EvalReport::new(&s.bleu).config_fingerprint {
                    return Err(CliError::data(format!(
                        "{} was scored with a different BLEU configuration ({})",
                        out.display(),
                        existing.scoring
                    )));
                }
                existing
            }
            _ => EvalReport::new(&s.bleu),
        };
        report.set(&s.system_label, column, result.detail.score * 100.0)?;
        let text = render_report(&report, format);
        match job.out {
            Some(out) => {
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
                }
                std::fs::write(out, text).map_err(|e| CliError::io(out.display(), e))?;
                rec.output = Some(out.to_path_buf());
            }
            None => print!("{text}"),
        }
        rec.records_in = result.pairs;
        rec.records_out = 1;
        rec.metrics.insert("column".into(), format!("{}/{}", s.track.as_str(), column.label()).into());
        rec.metrics.insert("bleu".into(), result.bleu.into());
        rec.metrics.insert("bleu_unrounded".into(), (result.detail.score * 100.0).into());
        rec.metrics.insert("brevity_penalty".into(), result.detail.brevity_penalty.into());
        rec.metrics.insert("precisions".into(), serde_json::to_value(&result.detail.precisions)?);
        rec.metrics.insert("unjoined_ids".into(),
            (result.diagnostics.missing_hypotheses.len() + result.diagnostics.unmatched_hypotheses.len()).into());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecars_append_to_the_file_name() {
        assert_eq!(errors_sidecar(Path::new("out/c.jsonl")), PathBuf::from("out/c.jsonl.errors.jsonl"));
        assert_eq!(diagnostics_sidecar(Path::new("r.md")), PathBuf::from("r.md.diagnostics.json"));
    }

    #[test]
    fn missing_input_names_producer() {
        let err = require_input(Path::new("/nonexistent/x.jsonl"), "hypotheses file", Some("postprocess")).unwrap_err();
        assert_eq!(err.class, FailureClass::Io);
        assert!(err.message.contains("`postprocess`"));
    }
}

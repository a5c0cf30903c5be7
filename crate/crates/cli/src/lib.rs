//! The `dimt` command-line tool.

pub mod args;
pub mod config;
pub mod error;
pub mod stages;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dimt_core::dataset::{build_mixture, DatasetStats, MixtureSpec, TaskKind};
use dimt_core::evaluate::config_fingerprint;
use dimt_core::jsonl::{read_jsonl, JsonlWriter};
use dimt_core::types::Segment;
use dimt_genclient::mock::{MockOptions, MockServer, Recorded};
use serde::Serialize;

use crate::args::{BuildDataArgs, Cli, Command, GenerateArgs, MbrArgs, MockServerArgs, PipelineArgs, PostprocessArgs, ScoreArgs};
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::stages::{GenerateJob, ScoreJob, StageRecord, STAGES};

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Mbr(a) => cmd_mbr(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Score(a) => cmd_score(a),
        Command::BuildData(a) => cmd_build_data(a),
        Command::Pipeline(a) => cmd_pipeline(a).map(|_| ()),
        Command::MockServer(a) => cmd_mock_server(a),
    }
}

/// Flag paths are taken as given (relative to the working directory);
/// config paths are resolved against the config file.
fn pick(flag: Option<PathBuf>, loaded: &LoadedConfig, from_config: Option<&PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| loaded.resolve_opt(from_config))
}

fn report_stage(rec: &StageRecord) {
    eprintln!(
        "{}: {} in, {} out ({} ms)",
        rec.stage, rec.records_in, rec.records_out, rec.wall_ms
    );
}

fn generate_job<'a>(loaded: &'a LoadedConfig, input: &'a Path, out: &'a Path) -> GenerateJob<'a> {
    let c = &loaded.config;
    GenerateJob {
        input,
        out,
        endpoint: c.endpoint.clone(),
        sampling: c.sampling.clone(),
        settings: &c.generate,
        image_root: loaded.resolve_opt(c.generate.image_root.as_ref()),
        mock_responses: loaded.resolve_opt(c.generate.mock_responses.as_ref()),
    }
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let mut loaded = LoadedConfig::load(a.config.config.as_deref())?;
    // Flag paths stay relative to the working directory.
    let mock = a.mock_responses.clone();
    let image_root = a.image_root.clone();
    a.apply(&mut loaded.config);
    loaded.validate()?;
    let input = stages::required(pick(a.input, &loaded, loaded.config.paths.segments.as_ref()), "--input", "segments")?;
    let out = stages::required(pick(a.out, &loaded, loaded.config.paths.generate.as_ref()), "--out", "generate")?;
    let mut job = generate_job(&loaded, &input, &out);
    if mock.is_some() {
        job.mock_responses = mock;
    }
    if image_root.is_some() {
        job.image_root = image_root;
    }
    report_stage(&stages::generate(job)?);
    Ok(())
}

fn cmd_mbr(a: MbrArgs) -> CliResult<()> {
    let mut loaded = LoadedConfig::load(a.config.config.as_deref())?;
    a.bleu.apply(&mut loaded.config.bleu);
    if let Some(p) = a.parallelism {
        loaded.config.mbr.parallelism = p;
    }
    loaded.config.bleu.validate()?;
    let input = stages::required(pick(a.input, &loaded, loaded.config.paths.generate.as_ref()), "--input", "generate")?;
    let out = stages::required(pick(a.out, &loaded, loaded.config.paths.mbr.as_ref()), "--out", "mbr")?;
    report_stage(&stages::mbr(&input, &out, &loaded.config.bleu, loaded.config.mbr.parallelism)?);
    Ok(())
}

fn cmd_postprocess(a: PostprocessArgs) -> CliResult<()> {
    let mut loaded = LoadedConfig::load(a.config.config.as_deref())?;
    a.apply(&mut loaded.config.postprocess);
    let input = stages::required(pick(a.input, &loaded, loaded.config.paths.mbr.as_ref()), "--input", "mbr")?;
    let out = stages::required(pick(a.out, &loaded, loaded.config.paths.postprocess.as_ref()), "--out", "postprocess")?;
    report_stage(&stages::postprocess(&input, &out, &loaded.config.postprocess)?);
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> CliResult<()> {
    let mut loaded = LoadedConfig::load(a.config.config.as_deref())?;
    let s = &mut loaded.config.score;
    if let Some(v) = a.track {
        s.track = v;
    }
    if let Some(v) = a.split {
        s.split = v;
    }
    if let Some(v) = a.subtask {
        s.sub_task = v;
    }
    if let Some(v) = &a.label {
        s.system_label = v.clone();
    }
    if a.allow_partial {
        s.allow_partial = true;
    }
    a.bleu.apply(&mut s.bleu);
    s.bleu.validate()?;
    let paths = &loaded.config.paths;
    let hyp = stages::required(pick(a.hyp, &loaded, paths.postprocess.as_ref()), "--hyp", "postprocess")?;
    let reference = stages::required(pick(a.reference, &loaded, paths.references.as_ref()), "--ref", "references")?;
    let out = pick(a.out, &loaded, paths.score.as_ref());
    let rec = stages::score(ScoreJob {
        hyp: &hyp,
        reference: &reference,
        settings: &loaded.config.score,
        format: a.format,
        out: out.as_deref(),
        merge: a.merge,
    })?;
    eprintln!("BLEU {} over {} pair(s)", rec.metrics["bleu"], rec.records_in);
    Ok(())
}

fn load_mixture(path: &Path) -> CliResult<MixtureSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read mixture {}", path.display()), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("mixture {}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::data(format!("mixture {}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct BuildDataStats<'a> {
    seed: u64,
    weights: &'a std::collections::BTreeMap<TaskKind, f64>,
    summary: &'a dimt_core::dataset::MixtureSummary,
    stats: &'a DatasetStats,
}

fn cmd_build_data(a: BuildDataArgs) -> CliResult<()> {
    let mut spec = match &a.mixture {
        Some(path) => load_mixture(path)?,
        None => MixtureSpec::new(TaskKind::ALL.map(|k| (k, 1.0)), 0),
    };
    if !a.weights.is_empty() {
        spec.weights = a.weights.iter().copied().collect();
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    stages::require_input(&a.input, "segments file", None)?;

    let segments = read_jsonl::<Segment>(&a.input)?.records();
    let mut first_error = None;
    let segments = segments.map_while(|r| match r {
        Ok(seg) => Some(seg),
        Err(e) => {
            first_error = Some(e);
            None
        }
    });
    let mut mixture = build_mixture(segments, &spec, a.track, a.split)?;
    let mut writer = JsonlWriter::create(&a.out)?;
    let mut stats = DatasetStats::default();
    for example in mixture.by_ref() {
        stats.add(&example);
        writer.write(&example)?;
    }
    let summary = mixture.summary().clone();
    drop(mixture);
    if let Some(e) = first_error {
        return Err(e.into());
    }
    writer.finish()?;

    let stats_path = stages::stats_sidecar(&a.out);
    let body = serde_json::to_string_pretty(&BuildDataStats {
        seed: spec.seed,
        weights: &spec.weights,
        summary: &summary,
        stats: &stats,
    })? + "\n";
    std::fs::write(&stats_path, body).map_err(|e| CliError::io(stats_path.display(), e))?;
    eprint!("{}", stats.to_markdown());
    eprintln!(
        "{} example(s) from {} segment(s), {} skipped; statistics in {}",
        summary.emitted(),
        summary.segments_seen,
        summary.skipped,
        stats_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: Option<PathBuf>,
    pub config_fingerprint: String,
    pub scoring_fingerprint: String,
    pub stages: Vec<StageRecord>,
    pub started_unix_secs: u64,
    pub wall_ms: u128,
}

fn parse_stages(requested: &[String]) -> CliResult<Vec<&'static str>> {
    let mut out: Vec<&'static str> = Vec::new();
    for name in requested.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let Some(pos) = STAGES.iter().position(|s| *s == name) else {
            return Err(CliError::usage(format!("unknown stage `{name}` (expected {})", STAGES.join(", "))));
        };
        if let Some(last) = out.last() {
            if STAGES.iter().position(|s| s == last).unwrap() >= pos {
                return Err(CliError::usage(format!(
                    "stages must be listed once each in pipeline order ({}); `{name}` is out of place",
                    STAGES.join(", ")
                )));
            }
        }
        out.push(STAGES[pos]);
    }
    if out.is_empty() {
        return Err(CliError::usage("no stages selected"));
    }
    Ok(out)
}

/// Runs the selected stages and writes the manifest. Returns the manifest
/// path.
pub fn cmd_pipeline(a: PipelineArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let stages = parse_stages(&a.stages)?;
    let mut loaded = LoadedConfig::load(Some(&a.config))?;
    let mut mock_override = None;
    {
        let c = &mut loaded.config;
        if let Some(url) = a.base_url {
            c.endpoint.base_url = url;
            c.generate.mock_responses = None;
        }
        if let Some(path) = a.mock_responses {
            mock_override = Some(path);
        }
        if let Some(p) = a.parallelism {
            c.mbr.parallelism = p;
        }
        if let Some(l) = a.label {
            c.score.system_label = l;
        }
    }
    loaded.validate()?;

    let c = &loaded.config;
    let path = |p: Option<&PathBuf>, key: &str| {
        loaded
            .resolve_opt(p)
            .ok_or_else(|| CliError::usage(format!("paths.{key} is required by the selected stages")))
    };
    let mut records = Vec::new();
    for stage in &stages {
        let rec = match *stage {
            "generate" => {
                let input = path(c.paths.segments.as_ref(), "segments")?;
                let out = path(c.paths.generate.as_ref(), "generate")?;
                let mut job = generate_job(&loaded, &input, &out);
                if mock_override.is_some() {
                    job.mock_responses = mock_override.clone();
                }
                stages::generate(job)?
            }
            "mbr" => stages::mbr(
                &path(c.paths.generate.as_ref(), "generate")?,
                &path(c.paths.mbr.as_ref(), "mbr")?,
                &c.bleu,
                c.mbr.parallelism,
            )?,
            "postprocess" => stages::postprocess(
                &path(c.paths.mbr.as_ref(), "mbr")?,
                &path(c.paths.postprocess.as_ref(), "postprocess")?,
                &c.postprocess,
            )?,
            "score" => {
                let hyp = path(c.paths.postprocess.as_ref(), "postprocess")?;
                let reference = path(c.paths.references.as_ref(), "references")?;
                let out = path(c.paths.score.as_ref(), "score")?;
                stages::score(ScoreJob {
                    hyp: &hyp,
                    reference: &reference,
                    settings: &c.score,
                    format: None,
                    out: Some(&out),
                    merge: false,
                })?
            }
            _ => unreachable!("stage names are validated"),
        };
        report_stage(&rec);
        records.push(rec);
    }

    let manifest_path = match &c.paths.manifest {
        Some(p) => loaded.resolve(p),
        None => records
            .iter()
            .rev()
            .find_map(|r| r.output.as_ref()?.parent().map(|d| d.join("manifest.json")))
            .unwrap_or_else(|| loaded.base_dir.join("manifest.json")),
    };
    let manifest = Manifest {
        tool: "dimt",
        version: env!("CARGO_PKG_VERSION"),
        config: loaded.source.clone(),
        config_fingerprint: loaded.fingerprint(),
        scoring_fingerprint: config_fingerprint(&c.score.bleu),
        stages: records,
        started_unix_secs,
        wall_ms: started.elapsed().as_millis(),
    };
    if let Some(dir) = manifest_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&manifest_path, body).map_err(|e| CliError::io(manifest_path.display(), e))?;
    eprintln!("manifest: {}", manifest_path.display());
    Ok(manifest_path)
}

fn cmd_mock_server(a: MockServerArgs) -> CliResult<()> {
    stages::require_input(&a.responses, "recorded responses file", None)?;
    let recorded = Recorded::load(&a.responses)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("cannot start async runtime", e))?;
    runtime.block_on(async {
        let options = MockOptions {
            latency: std::time::Duration::from_millis(a.latency_ms),
            addr: Some(([127, 0, 0, 1], a.port).into()),
        };
        let server = MockServer::start_with(recorded, options)
            .await
            .map_err(|e| CliError::io(format!("cannot bind port {}", a.port), e))?;
        println!("{}", server.base_url());
        eprintln!("serving recorded completions; Ctrl-C to stop");
        tokio::signal::ctrl_c().await.map_err(|e| CliError::io("signal handler", e))?;
        eprintln!("{} request(s) served", server.request_count());
        Ok(())
    })
}

//! The shared pipeline configuration file (TOML or JSON).
//!
//! Every section is optional and falls back to its defaults, so a file with
//! only `[postprocess]` is a valid post-processing config. Relative paths are
//! resolved against the directory holding the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dimt_core::bleu::BleuConfig;
use dimt_core::postprocess::PostprocessConfig;
use dimt_core::types::{Split, SubTask, TrackKind};
use dimt_genclient::{EndpointConfig, PromptTemplate, SamplingConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub endpoint: EndpointConfig,
    pub sampling: SamplingConfig,
    pub generate: GenerateSettings,
    /// Utility used for MBR selection (sentence BLEU).
    pub bleu: BleuConfig,
    pub mbr: MbrSettings,
    pub postprocess: PostprocessConfig,
    pub score: ScoreSettings,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub prompt_template: String,
    /// Directory that relative `image_ref`s are resolved against.
    pub image_root: Option<PathBuf>,
    pub fail_fast: bool,
    /// Serve pre-recorded responses from this JSONL file on a local mock
    /// endpoint instead of calling `endpoint.base_url`.
    pub mock_responses: Option<PathBuf>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            prompt_template: PromptTemplate::DEFAULT.to_string(),
            image_root: None,
            fail_fast: false,
            mock_responses: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbrSettings {
    /// Worker threads; 0 uses every available core.
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub track: TrackKind,
    pub split: Split,
    pub sub_task: SubTask,
    pub system_label: String,
    pub allow_partial: bool,
    /// Evaluation BLEU (corpus level, unsmoothed by default).
    pub bleu: BleuConfig,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        ScoreSettings {
            track: TrackKind::Track1WebDoc,
            split: Split::Valid,
            sub_task: SubTask::Mt,
            system_label: "system".into(),
            allow_partial: false,
            bleu: BleuConfig::corpus(),
        }
    }
}

/// Artifact locations. Stage keys name the file that stage writes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Source segments read by `generate`.
    pub segments: Option<PathBuf>,
    /// Reference segments read by `score`.
    pub references: Option<PathBuf>,
    pub generate: Option<PathBuf>,
    pub mbr: Option<PathBuf>,
    pub postprocess: Option<PathBuf>,
    pub score: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub source: Option<PathBuf>,
}

impl LoadedConfig {
    /// Reads `path` (`.json` as JSON, anything else as TOML), or returns the
    /// defaults rooted at the working directory.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            let cwd = std::env::current_dir().map_err(|e| CliError::io("working directory", e))?;
            return Ok(LoadedConfig { config: PipelineConfig::default(), base_dir: cwd, source: None });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}", path.display()), e))?;
        let config: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?
        };
        let abs = std::path::absolute(path).map_err(|e| CliError::io(path.display(), e))?;
        let base_dir = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir, source: Some(abs) })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn resolve_opt(&self, path: Option<&PathBuf>) -> Option<PathBuf> {
        path.map(|p| self.resolve(p))
    }

    /// Hash of the configuration as written (paths unresolved).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        hex_prefix(&Sha256::digest(json.as_bytes()), 8)
    }

    pub fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        c.endpoint.validate()?;
        c.sampling.validate()?;
        PromptTemplate::new(c.generate.prompt_template.clone())?;
        c.bleu.validate()?;
        c.score.bleu.validate()?;
        c.postprocess.validate()?;
        Ok(())
    }
}

pub fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    Ok((hex_prefix(&Sha256::digest(&bytes), 32), bytes.len() as u64))
}

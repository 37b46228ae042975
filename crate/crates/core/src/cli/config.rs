//! Run configuration. Sources are layered: command-line flags override
//! environment variables, which override the config file, which overrides
//! built-in defaults. The LLM key is never accepted as a flag.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::embed::DEFAULT_DIM;
use crate::llmtag::{RetryPolicy, DEFAULT_CONFIDENCE_MIN, DEFAULT_MAX_TOKENS, DEFAULT_MODEL};
use crate::simtag::{Threshold, DEFAULT_THRESHOLD};

pub const ENV_LLM_ENDPOINT: &str = "SDGMAP_LLM_ENDPOINT";
pub const ENV_LLM_KEY: &str = "SDGMAP_LLM_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    Remote,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// SDG taxonomy JSON
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Publications (.csv or .jsonl)
    #[arg(long, global = true)]
    pub publications: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderKind>,
    /// URL of the embedding service (remote provider)
    #[arg(long, global = true)]
    pub embed_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Similarity threshold in [0, 1]
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Keep only scores strictly above the threshold
    #[arg(long, global = true)]
    pub exclusive_threshold: bool,
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
    /// Minimum LLM confidence percentage kept
    #[arg(long, global = true)]
    pub confidence_min: Option<u32>,
    /// Chat-completions API base URL
    #[arg(long, global = true)]
    pub llm_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    #[arg(long, global = true)]
    pub llm_max_tokens: Option<u32>,
    /// Seconds to wait between retries
    #[arg(long, global = true)]
    pub retry_sleep_secs: Option<f64>,
    #[arg(long, global = true)]
    pub retry_max_attempts: Option<u32>,
    /// Concurrent LLM requests
    #[arg(long, global = true)]
    pub llm_concurrency: Option<usize>,
    /// Worker threads for similarity scoring
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
}

/// Keys accepted in the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub publications: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub embed_endpoint: Option<String>,
    pub dim: Option<usize>,
    pub embed_max_in_flight: Option<usize>,
    pub similarity_threshold: Option<f64>,
    pub threshold_inclusive: Option<bool>,
    pub histogram_bin_width: Option<f64>,
    pub confidence_min: Option<u32>,
    pub llm_endpoint: Option<String>,
    pub llm_key: Option<String>,
    pub llm_model: Option<String>,
    pub llm_max_tokens: Option<u32>,
    pub retry_sleep_secs: Option<f64>,
    pub retry_max_attempts: Option<u32>,
    pub llm_concurrency: Option<usize>,
    pub request_timeout_secs: Option<f64>,
    pub parallelism: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    #[serde(skip)]
    pub key: Option<String>,
    pub model: String,
    pub max_tokens: u32,
    pub retry_sleep_secs: f64,
    pub retry_max_attempts: u32,
    pub concurrency: usize,
    pub request_timeout_secs: f64,
}

impl LlmConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            sleep: Duration::from_secs_f64(self.retry_sleep_secs),
            max_attempts: self.retry_max_attempts,
        }
    }
}

/// Fully resolved configuration. Serialises without the LLM key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub corpus_path: Option<PathBuf>,
    pub publications_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub provider: ProviderConfig,
    pub similarity_threshold: f64,
    pub threshold_inclusive: bool,
    pub histogram_bin_width: f64,
    pub confidence_min: u8,
    pub llm: LlmConfig,
    pub parallelism: usize,
}

/// Reads the two supported environment variables.
pub fn env_overrides() -> (Option<String>, Option<String>) {
    let get = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
    (get(ENV_LLM_ENDPOINT), get(ENV_LLM_KEY))
}

impl RunConfig {
    /// Resolves flags, environment and file, then validates.
    pub fn resolve(
        args: &ConfigArgs,
        env: (Option<String>, Option<String>),
    ) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let (env_endpoint, env_key) = env;
        let cfg = RunConfig {
            corpus_path: args.corpus.clone().or(file.corpus),
            publications_path: args.publications.clone().or(file.publications),
            output_dir: args
                .output_dir
                .clone()
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            provider: ProviderConfig {
                kind: args
                    .provider
                    .or(file.provider)
                    .unwrap_or(ProviderKind::Hash),
                endpoint: args.embed_endpoint.clone().or(file.embed_endpoint),
                dim: args.dim.or(file.dim).unwrap_or(DEFAULT_DIM),
                max_in_flight: file.embed_max_in_flight.unwrap_or(4),
            },
            similarity_threshold: args
                .threshold
                .or(file.similarity_threshold)
                .unwrap_or(DEFAULT_THRESHOLD),
            threshold_inclusive: !args.exclusive_threshold
                && file.threshold_inclusive.unwrap_or(true),
            histogram_bin_width: args.bin_width.or(file.histogram_bin_width).unwrap_or(0.05),
            confidence_min: {
                let v = args
                    .confidence_min
                    .or(file.confidence_min)
                    .unwrap_or(DEFAULT_CONFIDENCE_MIN as u32);
                u8::try_from(v).ok().filter(|v| *v <= 100).ok_or_else(|| {
                    CliError::Config(format!("confidence_min {v} outside 0..=100"))
                })?
            },
            llm: LlmConfig {
                endpoint: args
                    .llm_endpoint
                    .clone()
                    .or(env_endpoint)
                    .or(file.llm_endpoint),
                key: env_key.or(file.llm_key),
                model: args
                    .llm_model
                    .clone()
                    .or(file.llm_model)
                    .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
                max_tokens: args
                    .llm_max_tokens
                    .or(file.llm_max_tokens)
                    .unwrap_or(DEFAULT_MAX_TOKENS),
                retry_sleep_secs: args
                    .retry_sleep_secs
                    .or(file.retry_sleep_secs)
                    .unwrap_or(60.0),
                retry_max_attempts: args
                    .retry_max_attempts
                    .or(file.retry_max_attempts)
                    .unwrap_or(10),
                concurrency: args.llm_concurrency.or(file.llm_concurrency).unwrap_or(1),
                request_timeout_secs: file.request_timeout_secs.unwrap_or(120.0),
            },
            parallelism: args.parallelism.or(file.parallelism).unwrap_or(4),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if Threshold::new(self.similarity_threshold, self.threshold_inclusive).is_err() {
            return bad(format!(
                "similarity threshold {} outside [0, 1]",
                self.similarity_threshold
            ));
        }
        if !(self.histogram_bin_width > 0.0 && self.histogram_bin_width <= 1.0) {
            return bad(format!(
                "bin width {} outside (0, 1]",
                self.histogram_bin_width
            ));
        }
        if self.provider.dim < 2 {
            return bad(format!(
                "dimension {} must be at least 2",
                self.provider.dim
            ));
        }
        if self.provider.kind == ProviderKind::Remote && self.provider.endpoint.is_none() {
            return bad("remote provider requires embed_endpoint".into());
        }
        if self.llm.max_tokens == 0 || self.llm.retry_max_attempts == 0 {
            return bad("llm max_tokens and retry_max_attempts must be at least 1".into());
        }
        if !(self.llm.retry_sleep_secs.is_finite() && self.llm.retry_sleep_secs >= 0.0) {
            return bad(format!(
                "retry sleep {} is not a valid duration",
                self.llm.retry_sleep_secs
            ));
        }
        if !(self.llm.request_timeout_secs.is_finite() && self.llm.request_timeout_secs > 0.0) {
            return bad("request timeout must be positive".into());
        }
        if self.parallelism == 0 || self.llm.concurrency == 0 || self.provider.max_in_flight == 0 {
            return bad("parallelism bounds must be at least 1".into());
        }
        Ok(())
    }

    pub fn threshold(&self) -> Threshold {
        Threshold {
            value: self.similarity_threshold,
            inclusive: self.threshold_inclusive,
        }
    }

    /// Creates the output directory and checks that it accepts files.
    pub fn prepare_output_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output_dir).map_err(|e| {
            CliError::Config(format!("cannot create {}: {e}", self.output_dir.display()))
        })?;
        let probe = self.output_dir.join(".sdgmap-write-test");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| {
                CliError::Config(format!(
                    "{} is not writable: {e}",
                    self.output_dir.display()
                ))
            })
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = RunConfig::resolve(&ConfigArgs::default(), (None, None)).unwrap();
        assert_eq!(cfg.similarity_threshold, 0.4);
        assert!(cfg.threshold_inclusive);
        assert_eq!(cfg.confidence_min, 60);
        assert_eq!(cfg.llm.model, "gpt-3.5-turbo");
        assert_eq!(cfg.llm.max_tokens, 600);
        assert_eq!(cfg.llm.retry_policy(), RetryPolicy::default());
        assert_eq!(cfg.llm.concurrency, 1);
        assert_eq!(cfg.provider.dim, 768);
    }

    #[test]
    fn precedence_flag_env_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "similarity_threshold = 0.5\nllm_endpoint = \"http://file\"\nllm_key = \"file-key\"\nconfidence_min = 70\n",
        )
        .unwrap();
        let mut args = ConfigArgs {
            config: Some(path),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&args, (None, None)).unwrap();
        assert_eq!(cfg.similarity_threshold, 0.5);
        assert_eq!(cfg.llm.endpoint.as_deref(), Some("http://file"));
        assert_eq!(cfg.llm.key.as_deref(), Some("file-key"));

        let cfg =
            RunConfig::resolve(&args, (Some("http://env".into()), Some("env-key".into()))).unwrap();
        assert_eq!(cfg.llm.endpoint.as_deref(), Some("http://env"));
        assert_eq!(cfg.llm.key.as_deref(), Some("env-key"));

        args.llm_endpoint = Some("http://flag".into());
        args.threshold = Some(0.3);
        let cfg = RunConfig::resolve(&args, (Some("http://env".into()), None)).unwrap();
        assert_eq!(cfg.llm.endpoint.as_deref(), Some("http://flag"));
        assert_eq!(cfg.similarity_threshold, 0.3);
        assert_eq!(cfg.confidence_min, 70);
    }

    #[test]
    fn rejects_out_of_range_threshold() {
        let args = ConfigArgs {
            threshold: Some(1.01),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(&args, (None, None)),
            Err(CliError::Config(_))
        ));
        let args = ConfigArgs {
            confidence_min: Some(101),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&args, (None, None)).is_err());
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "threshhold = 0.5\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(&args, (None, None)),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn key_not_serialised() {
        let cfg =
            RunConfig::resolve(&ConfigArgs::default(), (None, Some("secret".into()))).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("secret"));
    }
}

//! Settings shared by every subcommand. Each one can come from a flag or
//! from the flat `--config` file; a flag beats the file, the file beats the
//! built-in default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use docrag::ingest::ChunkerConfig;
use docrag::llm::CacheMode;
use docrag::pipeline::{PromptStyle, TextBackend};
use docrag::session::{EmbedderSpec, LlmSpec, SessionOptions};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Text chunks retrieved per question.
    #[arg(long, global = true)]
    pub k_text: Option<usize>,
    /// Page images retrieved per question.
    #[arg(long, global = true)]
    pub k_visual: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub max_tokens: Option<u32>,
    /// Model identifier sent to the generation endpoint.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// `full` or `simple`.
    #[arg(long, global = true)]
    pub prompt_style: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub allow_refusal: Option<bool>,
    /// `dense` or `bm25`.
    #[arg(long, global = true)]
    pub text_backend: Option<String>,
    /// `hashing:<dim>` or the URL of an embedding service.
    #[arg(long, global = true)]
    pub text_embedder: Option<String>,
    /// `hashing-mv:<dim>` or the URL of an embedding service.
    #[arg(long, global = true)]
    pub page_embedder: Option<String>,
    /// `mock` or the base URL of an OpenAI-compatible endpoint.
    #[arg(long, global = true)]
    pub llm: Option<String>,
    /// Environment variable holding the generation API key.
    #[arg(long, global = true)]
    pub llm_api_key_env: Option<String>,
    /// Directory of recorded generations.
    #[arg(long, global = true)]
    pub replay_cache: Option<PathBuf>,
    /// `off`, `record` or `replay`.
    #[arg(long, global = true)]
    pub cache_mode: Option<String>,
    /// Samples processed concurrently by `run`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Generation requests in flight at once.
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    /// Token budget of the long-context prompt.
    #[arg(long, global = true)]
    pub context_budget: Option<u64>,
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    #[arg(long, global = true)]
    pub chunk_size: Option<usize>,
    #[arg(long, global = true)]
    pub overlap_fraction: Option<f64>,
    /// Drop gold documents from every sample before running.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub remove_oracle: Option<bool>,
}

macro_rules! overlay {
    ($self:ident, $other:ident, $($field:ident),+) => {
        ConfigLayer { $($field: $self.$field.or($other.$field)),+ }
    };
}

impl ConfigLayer {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    /// Fields set here win; the rest come from `fallback`.
    pub fn over(self, fallback: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, fallback, k_text, k_visual, temperature, max_tokens, model, prompt_style, allow_refusal,
            text_backend, text_embedder, page_embedder, llm, llm_api_key_env, replay_cache, cache_mode, workers,
            max_in_flight, context_budget, timeout_secs, chunk_size, overlap_fraction, remove_oracle
        )
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub session: SessionOptions,
    pub chunker: ChunkerConfig,
    pub workers: usize,
    pub remove_oracle: bool,
}

fn parse_cache_mode(s: &str) -> Result<CacheMode, String> {
    match s {
        "off" => Ok(CacheMode::Off),
        "record" => Ok(CacheMode::Record),
        "replay" => Ok(CacheMode::Replay),
        other => Err(format!("unknown cache_mode `{other}` (expected off, record or replay)")),
    }
}

fn positive(name: &str, v: usize) -> Result<usize, String> {
    if v == 0 {
        return Err(format!("{name} must be positive"));
    }
    Ok(v)
}

impl Settings {
    pub fn resolve(layer: &ConfigLayer) -> Result<Self, String> {
        let mut s = SessionOptions::default();
        let p = &mut s.pipeline;
        if let Some(k) = layer.k_text {
            p.k_text = positive("k_text", k)?;
        }
        if let Some(k) = layer.k_visual {
            p.k_visual = positive("k_visual", k)?;
        }
        if let Some(t) = layer.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("temperature must be a non-negative number, got {t}"));
            }
            p.generation.temperature = t;
        }
        if let Some(m) = layer.max_tokens {
            p.generation.max_tokens = positive("max_tokens", m as usize)? as u32;
        }
        if let Some(m) = &layer.model {
            p.generation.model_id = m.clone();
        }
        if let Some(style) = &layer.prompt_style {
            p.style = style.parse::<PromptStyle>()?;
        }
        if let Some(r) = layer.allow_refusal {
            p.allow_refusal = r;
        }
        if let Some(b) = layer.context_budget {
            p.context_budget = b;
        }
        if let Some(b) = &layer.text_backend {
            s.text_backend = b.parse::<TextBackend>()?;
        }
        if let Some(e) = &layer.text_embedder {
            s.text_embedder = e.parse::<EmbedderSpec>().map_err(|e| e.to_string())?;
        }
        if let Some(e) = &layer.page_embedder {
            s.page_embedder = e.parse::<EmbedderSpec>().map_err(|e| e.to_string())?;
        }
        if let Some(llm) = &layer.llm {
            s.llm = if llm == "mock" {
                LlmSpec::Mock
            } else if llm.starts_with("http://") || llm.starts_with("https://") {
                let api_key = match &layer.llm_api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
                    None => None,
                };
                LlmSpec::Http {
                    base_url: llm.clone(),
                    api_key,
                }
            } else {
                return Err(format!("bad llm `{llm}` (expected mock or an http(s) URL)"));
            };
        }
        let mode = layer.cache_mode.as_deref().map(parse_cache_mode).transpose()?;
        s.replay = match (&layer.replay_cache, mode) {
            (Some(dir), mode) => Some((dir.clone(), mode.unwrap_or_default())),
            (None, Some(CacheMode::Off) | None) => None,
            (None, Some(_)) => return Err("cache_mode needs replay_cache".into()),
        };
        if let Some(n) = layer.max_in_flight {
            s.max_in_flight = positive("max_in_flight", n)?;
        }
        if let Some(t) = layer.timeout_secs {
            s.timeout = Duration::from_secs(positive("timeout_secs", t as usize)? as u64);
        }
        let mut chunker = ChunkerConfig::default();
        if let Some(c) = layer.chunk_size {
            chunker.chunk_size = c;
        }
        if let Some(f) = layer.overlap_fraction {
            chunker.overlap_fraction = f;
        }
        chunker.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            session: s,
            chunker,
            workers: positive("workers", layer.workers.unwrap_or(4))?,
            remove_oracle: layer.remove_oracle.unwrap_or(false),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let file: ConfigLayer = toml::from_str("k_text = 3\nk_visual = 2\nprompt_style = \"simple\"").unwrap();
        let flags = ConfigLayer {
            k_text: Some(9),
            ..Default::default()
        };
        let s = Settings::resolve(&flags.over(file)).unwrap();
        assert_eq!(s.session.pipeline.k_text, 9);
        assert_eq!(s.session.pipeline.k_visual, 2);
        assert_eq!(s.session.pipeline.style, PromptStyle::Simple);
        assert_eq!(s.session.pipeline.generation.temperature, 0.5);
        assert_eq!(s.workers, 4);
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(&ConfigLayer::default()).unwrap();
        let p = &s.session.pipeline;
        assert_eq!((p.k_text, p.k_visual, p.allow_refusal), (7, 5, false));
        assert_eq!(p.style, PromptStyle::Full);
        assert!(s.session.replay.is_none());
        assert_eq!(s.chunker, ChunkerConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<ConfigLayer>("k_txt = 3").is_err());
        for bad in [
            ConfigLayer { k_text: Some(0), ..Default::default() },
            ConfigLayer { cache_mode: Some("replay".into()), ..Default::default() },
            ConfigLayer { llm: Some("gpt".into()), ..Default::default() },
            ConfigLayer { overlap_fraction: Some(1.5), ..Default::default() },
            ConfigLayer { temperature: Some(-1.0), ..Default::default() },
        ] {
            assert!(Settings::resolve(&bad).is_err(), "{bad:?}");
        }
    }
}

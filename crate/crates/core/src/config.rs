//! The shared TOML configuration file.
//!
//! ```toml
//! [paths]
//! corpus = "docs.jsonl"
//! index = "index.rfix"
//! projection = "projection.rfpj"
//!
//! [train]
//! epochs = 20
//!
//! [llm]
//! provider = "http"
//! endpoint = "https://llm.example/v1/completions"
//! model = "my-model"
//! ```
//!
//! Every section is optional. Unknown keys are rejected, and errors carry
//! the dotted key path. Relative paths resolve against the config file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedder::{Embedder, FeatureConfig, Projection, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::SynthConfig;
use crate::finetune::FinetuneConfig;
use crate::llm::{BoundedClient, HttpProvider, LlmClient, ScriptedProvider};
use crate::product_intent::ProductCatalog;
use crate::qa_gen::GeneratorConfig;
use crate::rag::{DedupConfig, RagConfig, RagEngine};
use crate::vector_index::Index;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    /// Scripted-provider fixture directory.
    pub fixtures: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            provider: ProviderKind::Scripted,
            endpoint: None,
            model: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 1000,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub host: String,
    pub port: u16,
    /// Allowed UI origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SanitizeSettings {
    /// Lines that open a signature block; built-in markers when empty.
    pub signature_markers: Vec<String>,
    /// Names the dictionary NER provider redacts.
    pub person_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { k: crate::eval::DEFAULT_K }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub rag: RagConfig,
    pub dedup: DedupConfig,
    pub finetune: FinetuneConfig,
    pub qa: GeneratorConfig,
    pub sanitize: SanitizeSettings,
    pub llm: LlmSettings,
    pub service: ServiceSettings,
    pub eval: EvalSettings,
    pub synth: SynthConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let key = if key == "." { "<root>".to_string() } else { key };
            Error::config(key, e.inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.corpus, &mut p.index, &mut p.projection, &mut p.fixtures, &mut p.catalog] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &'static str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config { key, message } if key.contains('.') => Error::Config { key, message },
                Error::Config { message, .. } => Error::config(name, message),
                other => Error::config(name, other.to_string()),
            })
        };
        section("features", self.features.validate())?;
        section("train", self.train.validate())?;
        section("rag", self.rag_config().validate())?;
        section("finetune", self.finetune.validate())?;
        section("synth", self.synth.validate())?;
        if self.eval.k == 0 {
            return Err(Error::config("eval.k", "must be at least 1"));
        }
        if self.qa.concurrency == 0 {
            return Err(Error::config("qa.concurrency", "must be at least 1"));
        }
        if self.llm.max_in_flight == 0 {
            return Err(Error::config("llm.max_in_flight", "must be at least 1"));
        }
        if self.llm.provider == ProviderKind::Http && (self.llm.endpoint.is_none() || self.llm.model.is_none()) {
            return Err(Error::config("llm.endpoint", "the http provider needs endpoint and model"));
        }
        Ok(())
    }

    /// Answering settings with the top-level `[dedup]` section folded in.
    pub fn rag_config(&self) -> RagConfig {
        RagConfig {
            dedup: self.dedup.clone(),
            ..self.rag.clone()
        }
    }

    /// Applies one seed to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.rng_seed = seed;
        self.finetune.rng_seed = seed;
        self.synth.rng_seed = seed;
    }

    pub fn require<'a>(&self, slot: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        slot.as_deref()
            .ok_or_else(|| Error::config(format!("paths.{key}"), "not set; pass it on the command line or in the config"))
    }

    pub fn catalog(&self) -> Result<Option<ProductCatalog>> {
        self.paths.catalog.as_deref().map(ProductCatalog::load).transpose()
    }

    /// Loads index, projection and catalog from `[paths]` and wires up the
    /// configured LLM client.
    pub fn rag_engine(&self) -> Result<RagEngine> {
        let index = Index::load(self.require(&self.paths.index, "index")?)?;
        let projection = Projection::load(self.require(&self.paths.projection, "projection")?)?;
        let embedder = Embedder::new(projection, self.features.clone())?;
        RagEngine::new(index, embedder, self.catalog()?, self.llm_client()?, self.rag_config())
    }

    /// The configured completion backend behind the in-flight limit.
    pub fn llm_client(&self) -> Result<Arc<dyn LlmClient>> {
        let s = &self.llm;
        Ok(match s.provider {
            ProviderKind::Scripted => {
                let dir = self.require(&self.paths.fixtures, "fixtures")?;
                Arc::new(BoundedClient::new(ScriptedProvider::from_fixture_dir(dir)?, s.max_in_flight))
            }
            ProviderKind::Http => {
                let endpoint = s.endpoint.clone().unwrap_or_default();
                let model = s.model.clone().unwrap_or_default();
                let provider = HttpProvider::new(endpoint, model)
                    .with_env_key()
                    .with_timeout(Duration::from_secs(s.timeout_secs))
                    .with_retry(s.max_attempts, Duration::from_millis(s.backoff_ms));
                Arc::new(BoundedClient::new(provider, s.max_in_flight))
            }
        })
    }
}

//! Query answering: product intent, retrieval, dedup, prompt, completion.

mod dedup;
pub mod service;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient};
use crate::product_intent::{augment_query, detect_products, IntentResult, ProductCatalog};
use crate::vector_index::{Index, RetrievedItem};

pub use dedup::{dedup, levenshtein, normalized_levenshtein, DedupConfig, DropReason, DroppedDuplicate};

/// Returned whenever nothing relevant was retrieved. Also the target answer
/// of unanswerable finetuning samples.
pub const UNANSWERABLE: &str = "This question cannot be answered at the moment.";

pub const DEFAULT_ANSWER_TEMPLATE: &str = "You are an assistant that helps humans use {product}. \
You will be given a list of question-answer pairs (some pairs might be irrelevant) and a user query. \
Your goal is to answer the user query using only information from the given question-answer pairs.\n\
\n\
List of question-answer pairs:\n\
{qa_pairs}\n\
\n\
User query: {query}\n\
Answer:";

const GENERIC_PRODUCT: &str = "this product";

/// Fills `{product}`, `{qa_pairs}` and `{query}` in `template`.
///
/// Pairs are numbered from 1 and separated by blank lines. `items` must be
/// non-empty; an empty context goes down the unanswerable path instead.
pub fn assemble_prompt(query: &str, items: &[RetrievedItem], product: Option<&str>, template: &str) -> Result<String> {
    if items.is_empty() {
        return Err(Error::EmptyInput("no question-answer pairs for the prompt"));
    }
    let pairs = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            format!(
                "{}. Question: {}\nAnswer: {}",
                i + 1,
                it.payload.question_text().trim(),
                it.payload.answer_text().trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    // Single pass so placeholder-like text inside items is never expanded.
    let mut out = String::with_capacity(template.len() + pairs.len() + query.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let (value, len) = if tail.starts_with("{product}") {
            (product.unwrap_or(GENERIC_PRODUCT), "{product}".len())
        } else if tail.starts_with("{qa_pairs}") {
            (pairs.as_str(), "{qa_pairs}".len())
        } else if tail.starts_with("{query}") {
            (query.trim(), "{query}".len())
        } else {
            ("{", 1)
        };
        out.push_str(value);
        rest = &tail[len..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub k: usize,
    pub context_budget: usize,
    pub min_score: f64,
    pub use_intent: bool,
    pub template: String,
    pub max_tokens: usize,
    /// Read from its own config section.
    #[serde(skip)]
    pub dedup: DedupConfig,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            k: 8,
            context_budget: 5,
            min_score: 0.15,
            use_intent: true,
            template: DEFAULT_ANSWER_TEMPLATE.to_string(),
            max_tokens: 512,
            dedup: DedupConfig::default(),
        }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("rag.k", "must be at least 1"));
        }
        if self.context_budget == 0 {
            return Err(Error::config("rag.context_budget", "must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.min_score) {
            return Err(Error::config("rag.min_score", "must lie in [-1, 1]"));
        }
        if !self.template.contains("{qa_pairs}") || !self.template.contains("{query}") {
            return Err(Error::config("rag.template", "needs {qa_pairs} and {query} placeholders"));
        }
        self.dedup.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBundle {
    pub answer: String,
    pub used_items: Vec<RetrievedItem>,
    pub dropped_duplicates: Vec<DroppedDuplicate>,
    pub products: IntentResult,
    /// Empty when the question was not sent to the model.
    pub prompt: String,
    /// Milliseconds per stage.
    #[serde(default)]
    pub timings: BTreeMap<String, u64>,
}

impl AnswerBundle {
    pub fn is_unanswerable(&self) -> bool {
        self.answer == UNANSWERABLE
    }
}

/// Failure of the completion step, carrying everything computed before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct AnswerError {
    #[source]
    pub error: Error,
    pub partial: Option<Box<AnswerBundle>>,
}

impl From<Error> for AnswerError {
    fn from(error: Error) -> Self {
        AnswerError { error, partial: None }
    }
}

impl From<AnswerError> for Error {
    fn from(e: AnswerError) -> Self {
        e.error
    }
}

/// Per-request options.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AskOptions {
    /// Explicit product filter replacing automatic detection.
    pub products: Option<Vec<String>>,
    pub k: Option<usize>,
}

/// Everything needed to answer queries. Immutable once built, so one engine
/// can serve concurrent requests.
pub struct RagEngine {
    index: Index,
    embedder: Embedder,
    catalog: Option<ProductCatalog>,
    client: Arc<dyn LlmClient>,
    config: RagConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub products: IntentResult,
    pub items: Vec<RetrievedItem>,
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

impl RagEngine {
    pub fn new(
        index: Index,
        embedder: Embedder,
        catalog: Option<ProductCatalog>,
        client: Arc<dyn LlmClient>,
        config: RagConfig,
    ) -> Result<Self> {
        config.validate()?;
        if embedder.projection.version() != index.projection_version() {
            return Err(Error::config(
                "paths.projection",
                format!(
                    "projection version {:08x} does not match index built with {:08x}",
                    embedder.projection.version(),
                    index.projection_version()
                ),
            ));
        }
        if embedder.projection.dim() != index.dim() {
            return Err(Error::DimMismatch {
                expected: index.dim(),
                got: embedder.projection.dim(),
            });
        }
        Ok(RagEngine {
            index,
            embedder,
            catalog,
            client,
            config,
        })
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn catalog(&self) -> Option<&ProductCatalog> {
        self.catalog.as_ref()
    }

    pub fn config(&self) -> &RagConfig {
        &self.config
    }

    fn intent(&self, query: &str, opts: &AskOptions) -> IntentResult {
        match &opts.products {
            Some(p) if !p.is_empty() => IntentResult::manual(p.iter().cloned()),
            _ if !self.config.use_intent => IntentResult::none(),
            _ => match &self.catalog {
                Some(c) => detect_products(query, c),
                None => IntentResult::none(),
            },
        }
    }

    fn retrieve_timed(
        &self,
        query: &str,
        opts: &AskOptions,
        timings: &mut BTreeMap<String, u64>,
    ) -> Result<Retrieval> {
        if query.trim().is_empty() {
            return Err(Error::InvalidInput("query is empty".into()));
        }
        let t = Instant::now();
        let products = self.intent(query, opts);
        let augmented = augment_query(query, &products);
        timings.insert("intent".into(), elapsed_ms(t));

        let t = Instant::now();
        let q = self.embedder.embed(&augmented.query);
        timings.insert("embed".into(), elapsed_ms(t));

        let t = Instant::now();
        let k = opts.k.unwrap_or(self.config.k);
        let items = self.index.search(&q, k, Some(&augmented.product_filter))?;
        timings.insert("search".into(), elapsed_ms(t));
        Ok(Retrieval { products, items })
    }

    /// Ranked items without calling the model.
    pub fn retrieve(&self, query: &str, opts: &AskOptions) -> Result<Retrieval> {
        self.retrieve_timed(query, opts, &mut BTreeMap::new())
    }

    pub fn answer(&self, query: &str) -> Result<AnswerBundle, AnswerError> {
        self.answer_with(query, &AskOptions::default())
    }

    pub fn answer_with(&self, query: &str, opts: &AskOptions) -> Result<AnswerBundle, AnswerError> {
        let mut timings = BTreeMap::new();
        let Retrieval { products, items } = self.retrieve_timed(query, opts, &mut timings)?;

        let t = Instant::now();
        let relevant: Vec<RetrievedItem> = items
            .into_iter()
            .filter(|it| it.score >= self.config.min_score)
            .collect();
        let (mut kept, dropped) = dedup(&relevant, &self.config.dedup, |text| self.embedder.embed(text));
        kept.truncate(self.config.context_budget);
        timings.insert("dedup".into(), elapsed_ms(t));

        let mut bundle = AnswerBundle {
            answer: String::new(),
            used_items: kept,
            dropped_duplicates: dropped,
            products,
            prompt: String::new(),
            timings,
        };
        if bundle.used_items.is_empty() {
            tracing::debug!(query, "no items above min score");
            bundle.answer = UNANSWERABLE.to_string();
            return Ok(bundle);
        }

        let t = Instant::now();
        bundle.prompt = assemble_prompt(
            query,
            &bundle.used_items,
            bundle.products.top(),
            &self.config.template,
        )?;
        bundle.timings.insert("prompt".into(), elapsed_ms(t));

        let t = Instant::now();
        let mut request = CompletionRequest::new(bundle.prompt.clone());
        request.max_tokens = self.config.max_tokens;
        let result = self.client.complete(&request);
        bundle.timings.insert("complete".into(), elapsed_ms(t));
        match result {
            Ok(r) => {
                bundle.answer = r.samples.into_iter().next().unwrap_or_default().trim().to_string();
                Ok(bundle)
            }
            Err(error) => Err(AnswerError {
                error,
                partial: Some(Box::new(bundle)),
            }),
        }
    }
}

//! Retrieval and answer-quality evaluation.

mod judge;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::click_ingest::{normalize_query, ClickRecord};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::vector_index::Index;

pub use judge::{judge_prompt, judge_relevance, judge_rows, parse_score, JudgeReport, JudgeRow, JudgeScore, JUDGE_TEMPLATE};
pub use synth::{synth_clicks, SynthConfig, SynthCorpus};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query: String,
    /// Doc id to relevance grade in (0, 1].
    pub relevant: BTreeMap<String, f64>,
}

/// Linear-gain nDCG over the first `k` entries of `ranked`.
///
/// Unlisted docs have grade 0. Returns 0 when no graded doc exists.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], grades: &BTreeMap<String, f64>, k: usize) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, id)| grades.get(id.as_ref()).copied().unwrap_or(0.0) * discount(i))
        .sum();
    let mut ideal: Vec<f64> = grades.values().copied().filter(|g| *g > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| g * discount(i)).sum();
    if idcg <= 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Groups click records into graded queries (clicks over the per-query max).
pub fn eval_set_from_clicks(records: &[ClickRecord]) -> Vec<EvalQuery> {
    let mut by_query: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.clicks > 0) {
        let q = normalize_query(&r.query);
        if q.is_empty() {
            continue;
        }
        *by_query.entry(q).or_default().entry(r.doc_id.clone()).or_default() += r.clicks;
    }
    by_query
        .into_iter()
        .map(|(query, docs)| {
            let max = docs.values().copied().max().unwrap_or(1) as f64;
            EvalQuery {
                query,
                relevant: docs.into_iter().map(|(d, c)| (d, c as f64 / max)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query: String,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_ndcg: f64,
    pub k: usize,
    pub per_query: Vec<QueryScore>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self.per_query.iter().map(|q| q.query.chars().count()).max().unwrap_or(5).clamp(5, 60);
        let _ = writeln!(out, "{:<width$}  nDCG@{}", "query", self.k);
        for q in &self.per_query {
            let shown: String = q.query.chars().take(width).collect();
            let _ = writeln!(out, "{shown:<width$}  {:.4}", q.ndcg);
        }
        let _ = writeln!(out, "{:<width$}  {:.4}", "mean", self.mean_ndcg);
        out
    }
}

/// Scores every query against the whole index, without product filtering.
pub fn evaluate_retriever(index: &Index, embedder: &Embedder, eval: &[EvalQuery], k: usize) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation set has no queries"));
    }
    let known: BTreeSet<&str> = index.items().iter().map(|it| it.payload.item_id.as_str()).collect();
    for q in eval {
        if let Some(missing) = q.relevant.keys().find(|id| !known.contains(id.as_str())) {
            return Err(Error::UnknownDoc(missing.clone()));
        }
    }
    let mut per_query = Vec::with_capacity(eval.len());
    for q in eval {
        let hits = index.search(&embedder.embed(&q.query), k, None)?;
        let ranked: Vec<&str> = hits.iter().map(|h| h.payload.item_id.as_str()).collect();
        per_query.push(QueryScore {
            query: q.query.clone(),
            ndcg: ndcg_at_k(&ranked, &q.relevant, k),
        });
    }
    let mean_ndcg = per_query.iter().map(|q| q.ndcg).sum::<f64>() / per_query.len() as f64;
    Ok(EvalReport {
        mean_ndcg,
        k,
        per_query,
    })
}

//! Click-log ingestion and graded relevance.
//!
//! Each query's clicks are normalized by the most-clicked document for that
//! query, so the top document gets ratio 1.0 and the rest fall in (0, 1).
//! The natural log of that ratio is kept alongside it.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub query: String,
    pub doc_id: String,
    pub clicks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub query: String,
    pub doc_text: String,
    pub ratio: f64,
    pub log_ratio: f64,
    pub weight: f64,
}

impl TrainingPair {
    /// Builds a pair from a click ratio; weight is the ratio itself.
    pub fn from_ratio(query: impl Into<String>, doc_text: impl Into<String>, ratio: f64) -> Self {
        TrainingPair {
            query: query.into(),
            doc_text: doc_text.into(),
            ratio,
            log_ratio: ratio.ln(),
            weight: ratio,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedClicks {
    /// Aggregated records, sorted by (query, doc_id).
    pub records: Vec<ClickRecord>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceOutput {
    /// Pairs sorted by (query, doc_text).
    pub pairs: Vec<TrainingPair>,
    pub unresolved: usize,
}

/// Trims, lowercases and collapses internal whitespace.
pub fn normalize_query(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Deserialize)]
struct RawLine {
    query: Option<String>,
    doc_id: Option<String>,
    clicks: Option<serde_json::Value>,
}

fn parse_line(line: &str) -> Option<(String, String, u64)> {
    let raw: RawLine = serde_json::from_str(line).ok()?;
    let query = normalize_query(&raw.query?);
    let doc_id = raw.doc_id?.trim().to_string();
    let clicks = raw.clicks?.as_u64()?;
    if query.is_empty() || doc_id.is_empty() || clicks == 0 {
        return None;
    }
    Some((query, doc_id, clicks))
}

/// Parses a JSONL click log. Malformed lines (and zero-click lines) are
/// skipped and counted; duplicate (query, doc) lines are summed.
pub fn parse_click_log<R: BufRead>(reader: R) -> Result<ParsedClicks> {
    let mut agg: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Some((q, d, c)) => *agg.entry((q, d)).or_default() += c,
            None => skipped += 1,
        }
    }
    if agg.is_empty() {
        return Err(Error::EmptyInput("click log has no valid lines"));
    }
    let records = agg
        .into_iter()
        .map(|((query, doc_id), clicks)| ClickRecord { query, doc_id, clicks })
        .collect();
    Ok(ParsedClicks { records, skipped })
}

/// Converts aggregated clicks into training pairs.
///
/// Records whose doc id is not in `docs` are dropped (and counted) before the
/// per-query maximum is taken, so every emitted query keeps one pair at 1.0.
pub fn compute_relevance(
    records: &[ClickRecord],
    docs: &HashMap<String, Document>,
) -> Result<RelevanceOutput> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no click records"));
    }
    let mut unresolved = 0;
    let mut by_query: BTreeMap<String, BTreeMap<&str, u64>> = BTreeMap::new();
    for rec in records {
        if rec.clicks == 0 {
            continue;
        }
        if !docs.contains_key(&rec.doc_id) {
            unresolved += 1;
            continue;
        }
        let query = normalize_query(&rec.query);
        if query.is_empty() {
            continue;
        }
        *by_query
            .entry(query)
            .or_default()
            .entry(rec.doc_id.as_str())
            .or_default() += rec.clicks;
    }

    let mut pairs = Vec::new();
    for (query, group) in by_query {
        let max = group.values().copied().max().unwrap_or(0);
        for (doc_id, clicks) in group {
            let ratio = clicks as f64 / max as f64;
            pairs.push(TrainingPair::from_ratio(
                query.clone(),
                docs[doc_id].doc_text(),
                ratio,
            ));
        }
    }
    pairs.sort_by(|a, b| (&a.query, &a.doc_text).cmp(&(&b.query, &b.doc_text)));
    Ok(RelevanceOutput { pairs, unresolved })
}

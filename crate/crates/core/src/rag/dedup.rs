//! Near-duplicate removal over retrieved QA items.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedder::Embedding;
use crate::error::{Error, Result};
use crate::vector_index::RetrievedItem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub levenshtein_norm_threshold: f64,
    pub question_sim_threshold: f64,
    pub answer_sim_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            levenshtein_norm_threshold: 0.2,
            question_sim_threshold: 0.92,
            answer_sim_threshold: 0.85,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("dedup.levenshtein_norm_threshold", self.levenshtein_norm_threshold),
            ("dedup.question_sim_threshold", self.question_sim_threshold),
            ("dedup.answer_sim_threshold", self.answer_sim_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(key, format!("must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance divided by the longer length; 0 when both are empty.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Kept item comes from a more credible source.
    Credibility,
    /// Same credibility, kept item has the longer answer.
    AnswerLength,
    /// Same credibility and answer length, kept item ranked higher.
    Rank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedDuplicate {
    pub kept: String,
    pub dropped: String,
    pub reason: DropReason,
}

struct Keyed {
    question: String,
    answer_len: usize,
    q_emb: Embedding,
    a_emb: Embedding,
}

/// Whether `a` beats `b` when the two are duplicates.
fn preference(a: &RetrievedItem, ka: &Keyed, b: &RetrievedItem, kb: &Keyed) -> Ordering {
    a.payload
        .kind
        .credibility()
        .cmp(&b.payload.kind.credibility())
        .then(ka.answer_len.cmp(&kb.answer_len))
        .then(b.rank.cmp(&a.rank))
}

fn reason(kept: &RetrievedItem, kk: &Keyed, dropped: &RetrievedItem, kd: &Keyed) -> DropReason {
    if kept.payload.kind.credibility() != dropped.payload.kind.credibility() {
        DropReason::Credibility
    } else if kk.answer_len != kd.answer_len {
        DropReason::AnswerLength
    } else {
        DropReason::Rank
    }
}

fn is_duplicate(a: &Keyed, b: &Keyed, cfg: &DedupConfig) -> bool {
    let similar_question = normalized_levenshtein(&a.question, &b.question) < cfg.levenshtein_norm_threshold
        || a.q_emb.cosine(&b.q_emb) > cfg.question_sim_threshold;
    similar_question && a.a_emb.cosine(&b.a_emb) > cfg.answer_sim_threshold
}

/// Removes near-duplicate items.
///
/// Items are visited from most to least preferred (credibility, then answer
/// length, then rank); an item is dropped when it duplicates one already
/// kept. Survivors keep their original order.
pub fn dedup<F>(items: &[RetrievedItem], cfg: &DedupConfig, embed: F) -> (Vec<RetrievedItem>, Vec<DroppedDuplicate>)
where
    F: Fn(&str) -> Embedding,
{
    let keyed: Vec<Keyed> = items
        .iter()
        .map(|it| {
            let question = it.payload.question_text().to_string();
            let answer = it.payload.answer_text();
            Keyed {
                q_emb: embed(&question),
                a_emb: embed(answer),
                answer_len: answer.chars().count(),
                question,
            }
        })
        .collect();

    let mut visit: Vec<usize> = (0..items.len()).collect();
    visit.sort_by(|&a, &b| preference(&items[b], &keyed[b], &items[a], &keyed[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    for i in visit {
        match kept.iter().find(|&&k| is_duplicate(&keyed[k], &keyed[i], cfg)) {
            Some(&k) => log.push(DroppedDuplicate {
                kept: items[k].payload.item_id.clone(),
                dropped: items[i].payload.item_id.clone(),
                reason: reason(&items[k], &keyed[k], &items[i], &keyed[i]),
            }),
            None => kept.push(i),
        }
    }
    kept.sort_unstable();
    (kept.into_iter().map(|i| items[i].clone()).collect(), log)
}

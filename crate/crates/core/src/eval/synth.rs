//! Topic-structured synthetic corpus with a click log.
//!
//! Every topic owns a set of concepts. Documents spell a concept with its
//! document word, users usually type a different "query word" for the same
//! concept, so lexical overlap alone only partly explains the clicks and a
//! trained projection has something to learn.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::click_ingest::ClickRecord;
use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub topics: usize,
    pub vocab_per_topic: usize,
    pub queries_per_topic: usize,
    pub docs_per_topic: usize,
    pub noise_tokens: usize,
    pub click_temperature: f64,
    pub rng_seed: u64,
    /// Concepts per document.
    pub concepts_per_doc: usize,
    /// Concepts per query, drawn from its target document.
    pub concepts_per_query: usize,
    /// Chance a query spells a concept with its query word.
    pub synonym_rate: f64,
    /// Simulated clicks per query.
    pub clicks_per_query: usize,
    /// Share of queries held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 10,
            vocab_per_topic: 24,
            queries_per_topic: 40,
            docs_per_topic: 30,
            noise_tokens: 3,
            click_temperature: 0.3,
            rng_seed: 42,
            concepts_per_doc: 6,
            concepts_per_query: 3,
            synonym_rate: 0.75,
            clicks_per_query: 60,
            eval_fraction: 0.07,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synth.topics", self.topics),
            ("synth.vocab_per_topic", self.vocab_per_topic),
            ("synth.queries_per_topic", self.queries_per_topic),
            ("synth.docs_per_topic", self.docs_per_topic),
            ("synth.noise_tokens", self.noise_tokens),
            ("synth.concepts_per_doc", self.concepts_per_doc),
            ("synth.concepts_per_query", self.concepts_per_query),
            ("synth.clicks_per_query", self.clicks_per_query),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.concepts_per_doc > self.vocab_per_topic {
            return Err(Error::config("synth.concepts_per_doc", "exceeds vocab_per_topic"));
        }
        if self.concepts_per_query > self.concepts_per_doc {
            return Err(Error::config("synth.concepts_per_query", "exceeds concepts_per_doc"));
        }
        if !(self.click_temperature > 0.0 && self.click_temperature.is_finite()) {
            return Err(Error::config("synth.click_temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.synonym_rate) {
            return Err(Error::config("synth.synonym_rate", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::config("synth.eval_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub train_clicks: Vec<ClickRecord>,
    pub eval_clicks: Vec<ClickRecord>,
    /// The document each query was written from.
    pub targets: BTreeMap<String, String>,
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "tu", "re", "sa", "no", "vi", "pe", "da", "zu", "fo", "gi", "be", "ru", "ti", "ma", "ne", "so", "xa",
];

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=4);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

struct Concept {
    doc_word: String,
    query_word: String,
}

struct SynthDoc {
    topic: usize,
    concepts: BTreeSet<usize>,
}

/// Generates documents, a training click log and a held-out evaluation log.
///
/// Click counts per query come from `clicks_per_query` draws over all
/// documents with probability proportional to
/// `exp(affinity / click_temperature)`, where affinity is 1 for a same-topic
/// doc, plus the share of the query's concepts the doc covers, plus 1 for
/// the query's target doc.
pub fn synth_clicks(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut used = HashSet::new();

    let concepts: Vec<Vec<Concept>> = (0..cfg.topics)
        .map(|_| {
            (0..cfg.vocab_per_topic)
                .map(|_| Concept {
                    doc_word: fresh_word(&mut rng, &mut used),
                    query_word: fresh_word(&mut rng, &mut used),
                })
                .collect()
        })
        .collect();
    let noise: Vec<String> = (0..cfg.noise_tokens * 8).map(|_| fresh_word(&mut rng, &mut used)).collect();

    let mut docs = Vec::new();
    let mut meta = Vec::new();
    for (t, topic) in concepts.iter().enumerate() {
        for j in 0..cfg.docs_per_topic {
            let picked: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.vocab_per_topic, cfg.concepts_per_doc).into_vec();
            let title_len = (cfg.concepts_per_doc / 2).max(1);
            let title: Vec<&str> = picked[..title_len].iter().map(|&c| topic[c].doc_word.as_str()).collect();
            let mut body: Vec<&str> = picked[title_len..].iter().map(|&c| topic[c].doc_word.as_str()).collect();
            body.extend((0..cfg.noise_tokens).map(|_| noise.choose(&mut rng).expect("non-empty").as_str()));
            body.shuffle(&mut rng);
            docs.push(Document::helpx(format!("t{t:02}-d{j:03}"), title.join(" "), body.join(" ")));
            meta.push(SynthDoc {
                topic: t,
                concepts: picked.into_iter().collect(),
            });
        }
    }

    let mut queries: Vec<(String, usize, Vec<usize>)> = Vec::new();
    let mut seen = HashSet::new();
    for (t, vocab) in concepts.iter().enumerate() {
        let mut made = 0;
        let mut attempts = 0;
        while made < cfg.queries_per_topic && attempts < cfg.queries_per_topic * 50 {
            attempts += 1;
            let target = t * cfg.docs_per_topic + rng.gen_range(0..cfg.docs_per_topic);
            let pool: Vec<usize> = meta[target].concepts.iter().copied().collect();
            let chosen: Vec<usize> = pool.choose_multiple(&mut rng, cfg.concepts_per_query).copied().collect();
            let words: Vec<&str> = chosen
                .iter()
                .map(|&c| {
                    let concept = &vocab[c];
                    if rng.gen_bool(cfg.synonym_rate) {
                        concept.query_word.as_str()
                    } else {
                        concept.doc_word.as_str()
                    }
                })
                .collect();
            let query = words.join(" ");
            if seen.insert(query.clone()) {
                queries.push((query, target, chosen));
                made += 1;
            }
        }
    }

    let mut records_by_query: Vec<Vec<ClickRecord>> = Vec::with_capacity(queries.len());
    let mut targets = BTreeMap::new();
    for (query, target, chosen) in &queries {
        let t = meta[*target].topic;
        let affinity: Vec<f64> = meta
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut a = 0.0;
                if d.topic == t {
                    a += 1.0;
                    let covered = chosen.iter().filter(|c| d.concepts.contains(c)).count();
                    a += covered as f64 / chosen.len() as f64;
                }
                if i == *target {
                    a += 1.0;
                }
                a
            })
            .collect();
        let top = affinity.iter().copied().fold(f64::MIN, f64::max);
        let weights: Vec<f64> = affinity
            .iter()
            .map(|a| ((a - top) / cfg.click_temperature).exp())
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for _ in 0..cfg.clicks_per_query {
            *counts.entry(dist.sample(&mut rng)).or_default() += 1;
        }
        records_by_query.push(
            counts
                .into_iter()
                .map(|(i, clicks)| ClickRecord {
                    query: query.clone(),
                    doc_id: docs[i].item_id.clone(),
                    clicks,
                })
                .collect(),
        );
        targets.insert(query.clone(), docs[*target].item_id.clone());
    }

    let n_eval = (cfg.eval_fraction * queries.len() as f64).round() as usize;
    let held: BTreeSet<usize> = rand::seq::index::sample(&mut rng, queries.len(), n_eval).into_iter().collect();
    let mut train_clicks = Vec::new();
    let mut eval_clicks = Vec::new();
    for (i, recs) in records_by_query.into_iter().enumerate() {
        if held.contains(&i) {
            eval_clicks.extend(recs);
        } else {
            train_clicks.extend(recs);
        }
    }
    Ok(SynthCorpus {
        documents: docs,
        train_clicks,
        eval_clicks,
        targets,
    })
}

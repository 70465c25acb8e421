//! Generates a synthetic click corpus, trains the retriever projection and
//! compares nDCG@10 before and after training on the held-out queries.
//!
//!     cargo run --release --example synthetic_eval [seed]

use std::collections::HashMap;
use std::time::Instant;

use ragforge::click_ingest::compute_relevance;
use ragforge::embedder::{train, Embedder, FeatureConfig, Projection, TrainConfig};
use ragforge::eval::{eval_set_from_clicks, evaluate_retriever, synth_clicks, SynthConfig, DEFAULT_K};
use ragforge::vector_index::Index;

fn main() -> ragforge::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let corpus = synth_clicks(&SynthConfig {
        rng_seed: seed,
        ..Default::default()
    })?;
    let docs: HashMap<_, _> = corpus.documents.iter().map(|d| (d.item_id.clone(), d.clone())).collect();
    let pairs = compute_relevance(&corpus.train_clicks, &docs)?.pairs;
    let eval = eval_set_from_clicks(&corpus.eval_clicks);
    println!(
        "{} docs, {} training pairs, {} held-out queries",
        corpus.documents.len(),
        pairs.len(),
        eval.len()
    );

    let features = FeatureConfig::default();
    let train_cfg = TrainConfig::default();
    let score = |proj: Projection| -> ragforge::Result<f64> {
        let embedder = Embedder::new(proj, features.clone())?;
        let index = Index::build(&corpus.documents, &embedder)?;
        Ok(evaluate_retriever(&index, &embedder, &eval, DEFAULT_K)?.mean_ndcg)
    };

    let before = score(Projection::init(features.dim, train_cfg.rng_seed))?;
    let started = Instant::now();
    let outcome = train(&pairs, &train_cfg, &features)?;
    let took = started.elapsed();
    let after = score(outcome.projection)?;
    println!("epoch losses: {:?}", outcome.epoch_losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>());
    println!("nDCG@{DEFAULT_K} untrained {before:.4}  trained {after:.4}  gain {:+.4}  ({took:.1?})", after - before);
    Ok(())
}

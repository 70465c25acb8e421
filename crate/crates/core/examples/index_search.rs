//! Builds a mixed-source index, round-trips it through disk and runs
//! filtered and unfiltered searches.
//!
//!     cargo run --example index_search

use std::collections::BTreeSet;

use ragforge::corpus::{Document, SourceKind};
use ragforge::embedder::{Embedder, FeatureConfig, Projection};
use ragforge::vector_index::Index;

fn main() -> ragforge::Result<()> {
    let docs = vec![
        Document::helpx("acro-rotate", "Rotate PDF pages", "Choose Organize Pages and click the rotate arrows.")
            .with_tags(["Adobe Acrobat"]),
        Document::qa("forum-42", SourceKind::CommunityQuestion, "page rotation not saved", "Save the file after rotating pages.")
            .with_tags(["Adobe Acrobat"]),
        Document::helpx("ps-rotate", "Rotate an image", "Choose Image > Image Rotation and pick an angle.")
            .with_tags(["Adobe Photoshop"]),
        Document::helpx("pr-speed", "Change clip speed", "Right-click a clip and choose Speed/Duration.")
            .with_tags(["Adobe Premiere Pro"]),
    ];
    let features = FeatureConfig::default();
    let embedder = Embedder::new(Projection::init(features.dim, 0), features)?;
    let index = Index::build(&docs, &embedder)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("index.rfix");
    index.save(&path)?;
    let index = Index::load(&path)?;
    println!("{} items, dim {}, projection {:08x}", index.len(), index.dim(), index.projection_version());

    let q = embedder.embed("how to rotate pages");
    for (label, filter) in [("no filter", None), ("Acrobat first", Some(BTreeSet::from(["Adobe Acrobat".to_string()])))] {
        println!("{label}:");
        for hit in index.search(&q, 3, filter.as_ref())? {
            println!("  {}. {:<12} {:.3} {:?}", hit.rank, hit.payload.item_id, hit.score, hit.payload.product_tags);
        }
    }
    Ok(())
}

//! Detects which products a query is about and builds the search filter.
//!
//!     cargo run --example product_intent

use ragforge::product_intent::{augment_query, detect_products, ProductCatalog};

const CATALOG: &str = include_str!("../data/catalog.json");

fn main() -> ragforge::Result<()> {
    let catalog = ProductCatalog::from_json_str(CATALOG)?;
    for query in [
        "how do I remove a background in photoshop express",
        "sign a fillable form",
        "premiere pro and illustrator keyboard shortcuts",
        "what is a keyframe",
    ] {
        let intent = detect_products(query, &catalog);
        let aug = augment_query(query, &intent);
        println!("{query}");
        println!("  method {:?}, filter {:?}", intent.method, aug.product_filter);
        println!("  embedded as {:?}", aug.query);
    }
    Ok(())
}

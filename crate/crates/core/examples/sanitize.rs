//! Redacts contact details, signatures and known names from community posts.
//!
//!     cargo run --example sanitize

use ragforge::sanitizer::{DictionaryProvider, Sanitizer};
use serde_json::json;

fn main() -> ragforge::Result<()> {
    let sanitizer = Sanitizer::default();
    let names = DictionaryProvider::new(["Dana Whitfield"]);
    let post = json!({
        "id": "thread-17",
        "title": "Export fails, mail dana.w@example.org",
        "body": "Dana Whitfield here. Export stops at 80%. Call me on +1 415 555 0199.\n\nThanks,\nDana\nSenior Editor",
    });
    let fields = vec!["title".to_string(), "body".to_string()];
    let (clean, counts) = sanitizer.sanitize_record(&post, &fields, &names)?;
    println!("{}", serde_json::to_string_pretty(&clean)?);
    println!("{}", serde_json::to_string(&counts)?);
    Ok(())
}

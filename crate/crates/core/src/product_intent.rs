//! Maps free text onto catalog products so retrieval can prefer items for
//! the product the user is actually asking about.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// At most this many products become the retrieval filter.
pub const FILTER_CAP: usize = 2;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntry {
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Product {
    name: String,
    aliases: Vec<Vec<String>>,
    keywords: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductCatalog {
    products: Vec<Product>,
    longest_alias: usize,
}

/// Lowercases and turns every non-alphanumeric run into a single space.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl ProductCatalog {
    /// `entries` maps canonical product name to (aliases, keywords). The
    /// canonical name is always an alias of its own product.
    pub fn new<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<String>, Vec<String>)>,
    {
        let mut owner: HashMap<String, String> = HashMap::new();
        let mut products = Vec::new();
        for (name, aliases, keywords) in entries {
            let mut alias_set: BTreeSet<String> = BTreeSet::new();
            for a in std::iter::once(&name).chain(&aliases) {
                let norm = normalize(a);
                if !norm.is_empty() {
                    alias_set.insert(norm);
                }
            }
            if alias_set.is_empty() {
                return Err(Error::config(format!("catalog.{name}"), "product has no usable alias"));
            }
            for a in &alias_set {
                if let Some(prev) = owner.insert(a.clone(), name.clone()) {
                    return Err(Error::config(
                        format!("catalog.{name}.aliases"),
                        format!("alias `{a}` already belongs to `{prev}`"),
                    ));
                }
            }
            let split = |s: &String| s.split(' ').map(str::to_string).collect::<Vec<_>>();
            products.push(Product {
                name,
                aliases: alias_set.iter().map(split).collect(),
                keywords: keywords
                    .iter()
                    .map(|k| normalize(k))
                    .filter(|k| !k.is_empty())
                    .collect::<BTreeSet<_>>()
                    .iter()
                    .map(split)
                    .collect(),
            });
        }
        let longest_alias = products
            .iter()
            .flat_map(|p| p.aliases.iter())
            .map(|a| a.join(" ").chars().count())
            .max()
            .unwrap_or(1);
        Ok(ProductCatalog {
            products,
            longest_alias,
        })
    }

    /// JSON object: `{"Product": {"aliases": [..], "keywords": [..]}}`.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let raw: BTreeMap<String, CatalogEntry> = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(format!("catalog.{}", e.path()), e.inner().to_string()))?;
        Self::new(raw.into_iter().map(|(n, e)| (n, e.aliases, e.keywords)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json_str(&body)
    }

    pub fn product_names(&self) -> impl Iterator<Item = &str> {
        self.products.iter().map(|p| p.name.as_str())
    }

    fn confidence(&self, matched: &[String]) -> f64 {
        let len = matched.join(" ").chars().count();
        (len as f64 / self.longest_alias as f64).clamp(f64::MIN_POSITIVE, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentMethod {
    AliasMatch,
    FallbackDefault,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMatch {
    pub product: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentResult {
    /// Sorted by confidence, highest first.
    pub products: Vec<ProductMatch>,
    pub method: IntentMethod,
}

impl IntentResult {
    pub fn none() -> Self {
        IntentResult {
            products: Vec::new(),
            method: IntentMethod::None,
        }
    }

    /// Manually chosen products, all at full confidence.
    pub fn manual<I, S>(products: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let products: Vec<ProductMatch> = products
            .into_iter()
            .map(|p| ProductMatch {
                product: p.into(),
                confidence: 1.0,
            })
            .collect();
        let method = if products.is_empty() {
            IntentMethod::None
        } else {
            IntentMethod::AliasMatch
        };
        IntentResult { products, method }
    }

    pub fn top(&self) -> Option<&str> {
        self.products.first().map(|p| p.product.as_str())
    }
}

struct Candidate<'a> {
    start: usize,
    end: usize,
    chars: usize,
    product: &'a str,
    phrase: &'a [String],
}

fn occurrences<'a>(text: &[String], phrase: &'a [String], product: &'a str, out: &mut Vec<Candidate<'a>>) {
    if phrase.is_empty() || phrase.len() > text.len() {
        return;
    }
    let chars = phrase.join(" ").chars().count();
    for start in 0..=text.len() - phrase.len() {
        if text[start..start + phrase.len()] == *phrase {
            out.push(Candidate {
                start,
                end: start + phrase.len(),
                chars,
                product,
                phrase,
            });
        }
    }
}

fn rank(catalog: &ProductCatalog, mut cands: Vec<Candidate<'_>>) -> Vec<ProductMatch> {
    // Longest phrase first; a shorter phrase inside an accepted span is dropped.
    cands.sort_by(|a, b| b.chars.cmp(&a.chars).then(a.start.cmp(&b.start)));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut best: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for c in cands {
        if taken.iter().any(|&(s, e)| c.start < e && s < c.end) {
            continue;
        }
        taken.push((c.start, c.end));
        let conf = catalog.confidence(c.phrase);
        let entry = best.entry(c.product).or_insert((conf, c.start));
        if conf > entry.0 {
            entry.0 = conf;
        }
        entry.1 = entry.1.min(c.start);
    }
    let mut out: Vec<(&str, f64, usize)> = best.into_iter().map(|(p, (c, s))| (p, c, s)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
    out.into_iter()
        .map(|(p, c, _)| ProductMatch {
            product: p.to_string(),
            confidence: c,
        })
        .collect()
}

/// Longest-alias-first matching, then keyword fallback.
pub fn detect_products(text: &str, catalog: &ProductCatalog) -> IntentResult {
    let toks = tokens(text);
    let mut cands = Vec::new();
    for p in &catalog.products {
        for a in &p.aliases {
            occurrences(&toks, a, &p.name, &mut cands);
        }
    }
    if !cands.is_empty() {
        return IntentResult {
            products: rank(catalog, cands),
            method: IntentMethod::AliasMatch,
        };
    }
    for p in &catalog.products {
        for k in &p.keywords {
            occurrences(&toks, k, &p.name, &mut cands);
        }
    }
    if !cands.is_empty() {
        return IntentResult {
            products: rank(catalog, cands),
            method: IntentMethod::FallbackDefault,
        };
    }
    IntentResult::none()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedQuery {
    pub query: String,
    pub product_filter: BTreeSet<String>,
}

/// Attaches the top products as a retrieval filter. The query text is
/// passed through byte for byte.
pub fn augment_query(query: &str, intent: &IntentResult) -> AugmentedQuery {
    AugmentedQuery {
        query: query.to_string(),
        product_filter: intent
            .products
            .iter()
            .take(FILTER_CAP)
            .map(|p| p.product.clone())
            .collect(),
    }
}

//! Exact cosine top-k index over every retrieval source.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SourceKind};
use crate::embedder::{Embedder, Embedding};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFIX";
const FORMAT_VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub item_id: String,
    pub kind: SourceKind,
    pub match_text: String,
    pub question: Option<String>,
    pub answer: Option<String>,
    pub url: Option<String>,
    pub product_tags: BTreeSet<String>,
}

impl ItemPayload {
    pub fn from_document(doc: &Document) -> Self {
        let nonempty = |s: String| if s.is_empty() { None } else { Some(s) };
        ItemPayload {
            item_id: doc.item_id.clone(),
            kind: doc.kind,
            match_text: doc.match_text(),
            question: nonempty(doc.question_text()),
            answer: nonempty(doc.answer_text()),
            url: doc.url.clone(),
            product_tags: doc.product_tags.clone(),
        }
    }

    pub fn question_text(&self) -> &str {
        self.question.as_deref().unwrap_or(&self.match_text)
    }

    pub fn answer_text(&self) -> &str {
        self.answer.as_deref().unwrap_or("")
    }

    /// Question and answer as one context passage.
    pub fn context_text(&self) -> String {
        match self.answer.as_deref() {
            Some(a) => format!("{}\n{}", self.question_text(), a),
            None => self.match_text.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.match_text.trim().is_empty() {
            return Err(Error::Build(format!("item `{}` has empty match text", self.item_id)));
        }
        if self.kind.is_generated() && (self.question.is_none() || self.answer.is_none()) {
            return Err(Error::Build(format!(
                "generated item `{}` needs both question and answer",
                self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexItem {
    pub payload: ItemPayload,
    pub embedding: Embedding,
}

/// One search hit. Ranks are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub rank: usize,
    pub score: f64,
    #[serde(flatten)]
    pub payload: ItemPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    items: Vec<IndexItem>,
    dim: usize,
    projection_version: u32,
    built_at: u64,
    positions: HashMap<String, usize>,
}

fn build_timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Index {
    /// Embeds every document's match text with `embedder`.
    ///
    /// `built_at` comes from `SOURCE_DATE_EPOCH` when set, otherwise the
    /// wall clock.
    pub fn build(docs: &[Document], embedder: &Embedder) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyInput("no source records to index"));
        }
        let items = docs
            .iter()
            .map(|doc| {
                let payload = ItemPayload::from_document(doc);
                let embedding = embedder.embed(&payload.match_text);
                IndexItem { payload, embedding }
            })
            .collect();
        Self::from_items(
            items,
            embedder.features.dim,
            embedder.projection.version(),
            build_timestamp(),
        )
    }

    pub fn from_items(
        items: Vec<IndexItem>,
        dim: usize,
        projection_version: u32,
        built_at: u64,
    ) -> Result<Self> {
        let mut positions = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            item.payload.validate()?;
            if item.embedding.dim() != dim {
                return Err(Error::Build(format!(
                    "item `{}` has embedding dim {}, index dim is {dim}",
                    item.payload.item_id,
                    item.embedding.dim()
                )));
            }
            if (item.embedding.norm() - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Build(format!(
                    "item `{}` embedding is not unit norm",
                    item.payload.item_id
                )));
            }
            if positions.insert(item.payload.item_id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(item.payload.item_id.clone()));
            }
        }
        Ok(Index {
            items,
            dim,
            projection_version,
            built_at,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection_version(&self) -> u32 {
        self.projection_version
    }

    pub fn built_at(&self) -> u64 {
        self.built_at
    }

    pub fn items(&self) -> &[IndexItem] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&IndexItem> {
        self.positions.get(item_id).map(|&p| &self.items[p])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.positions.get(item_id).copied()
    }

    pub fn kind_counts(&self) -> BTreeMap<SourceKind, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.payload.kind).or_insert(0) += 1;
        }
        counts
    }

    /// Cosine of `query` against every item, in index order.
    pub fn scores(&self, query: &Embedding) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(self.items.iter().map(|it| query.cosine(&it.embedding)).collect())
    }

    /// Exact top-k search.
    ///
    /// Items tagged with any product in `product_filter` rank ahead of all
    /// others; within each block the order is score descending, then item id.
    pub fn search(
        &self,
        query: &Embedding,
        k: usize,
        product_filter: Option<&BTreeSet<String>>,
    ) -> Result<Vec<RetrievedItem>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be positive".into()));
        }
        let scores = self.scores(query)?;
        let filter = product_filter.filter(|f| !f.is_empty());
        let mut order: Vec<(bool, f64, usize)> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let preferred = filter
                    .map(|f| !self.items[i].payload.product_tags.is_disjoint(f))
                    .unwrap_or(false);
                (preferred, s, i)
            })
            .collect();
        let cmp = |a: &(bool, f64, usize), b: &(bool, f64, usize)| -> Ordering {
            b.0.cmp(&a.0)
                .then_with(|| b.1.total_cmp(&a.1))
                .then_with(|| {
                    self.items[a.2]
                        .payload
                        .item_id
                        .cmp(&self.items[b.2].payload.item_id)
                })
        };
        let take = k.min(order.len());
        if take < order.len() {
            order.select_nth_unstable_by(take - 1, cmp);
            order.truncate(take);
        }
        order.sort_by(cmp);
        Ok(order
            .into_iter()
            .enumerate()
            .map(|(r, (_, score, i))| RetrievedItem {
                rank: r + 1,
                score,
                payload: self.items[i].payload.clone(),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.projection_version.to_le_bytes());
        out.extend_from_slice(&self.built_at.to_le_bytes());
        for item in &self.items {
            let payload = serde_json::to_vec(&item.payload)?;
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&payload);
            for x in item.embedding.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(Error::Format(format!(
                "bad index magic {found:?}, expected \"RFIX\""
            )));
        }
        if bytes.len() < 32 {
            return Err(Error::Format("index file truncated".into()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes")) {
            return Err(Error::Format("index CRC mismatch (truncated or corrupt file)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported index format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let projection_version = r.u32()?;
        let built_at = r.u64()?;
        let mut items = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let payload: ItemPayload = serde_json::from_slice(r.take(len)?)
                .map_err(|e| Error::Format(format!("bad item payload: {e}")))?;
            let floats = r.take(dim * 4)?;
            let embedding = Embedding(
                floats
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            );
            items.push(IndexItem { payload, embedding });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after index items".into()));
        }
        Self::from_items(items, dim, projection_version, built_at)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("index file truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

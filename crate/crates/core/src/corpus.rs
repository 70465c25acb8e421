//! Source documents shared by every stage, plus JSONL helpers.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four retrieval sources, in no particular order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    HelpxDoc,
    CommunityQuestion,
    GeneratedHelpxQa,
    GeneratedVideoQa,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [
        SourceKind::HelpxDoc,
        SourceKind::CommunityQuestion,
        SourceKind::GeneratedHelpxQa,
        SourceKind::GeneratedVideoQa,
    ];

    /// Dedup credibility: Helpx > Community > video QA > LLM-generated Helpx QA.
    /// Higher is more credible.
    pub fn credibility(self) -> u8 {
        match self {
            SourceKind::HelpxDoc => 4,
            SourceKind::CommunityQuestion => 3,
            SourceKind::GeneratedVideoQa => 2,
            SourceKind::GeneratedHelpxQa => 1,
        }
    }

    pub fn is_generated(self) -> bool {
        matches!(self, SourceKind::GeneratedHelpxQa | SourceKind::GeneratedVideoQa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::HelpxDoc => "helpx_doc",
            SourceKind::CommunityQuestion => "community_question",
            SourceKind::GeneratedHelpxQa => "generated_helpx_qa",
            SourceKind::GeneratedVideoQa => "generated_video_qa",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown source kind `{s}`")))
    }
}

/// One retrievable source record as it appears in corpus JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub item_id: String,
    pub kind: SourceKind,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub product_tags: BTreeSet<String>,
}

impl Document {
    pub fn helpx(id: impl Into<String>, title: impl Into<String>, description: impl Into<String>) -> Self {
        Document {
            item_id: id.into(),
            kind: SourceKind::HelpxDoc,
            title: title.into(),
            description: description.into(),
            question: None,
            answer: None,
            url: None,
            product_tags: BTreeSet::new(),
        }
    }

    pub fn qa(
        id: impl Into<String>,
        kind: SourceKind,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        Document {
            item_id: id.into(),
            kind,
            title: String::new(),
            description: String::new(),
            question: Some(question.into()),
            answer: Some(answer.into()),
            url: None,
            product_tags: BTreeSet::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.product_tags = tags.into_iter().map(Into::into).collect();
        self
    }

    /// Title and description joined by a single space.
    pub fn doc_text(&self) -> String {
        join_nonempty(&self.title, &self.description)
    }

    /// The text that gets embedded for retrieval: title + description for
    /// Helpx articles, the question for QA kinds (falling back to the title).
    pub fn match_text(&self) -> String {
        match self.kind {
            SourceKind::HelpxDoc => self.doc_text(),
            _ => match self.question.as_deref().map(str::trim) {
                Some(q) if !q.is_empty() => q.to_string(),
                _ => self.doc_text(),
            },
        }
    }

    /// Question side of the item as presented to the LLM.
    pub fn question_text(&self) -> String {
        match self.question.as_deref() {
            Some(q) if !q.trim().is_empty() => q.trim().to_string(),
            _ => self.title.trim().to_string(),
        }
    }

    /// Answer side of the item as presented to the LLM.
    pub fn answer_text(&self) -> String {
        match self.answer.as_deref() {
            Some(a) if !a.trim().is_empty() => a.trim().to_string(),
            _ => self.description.trim().to_string(),
        }
    }

    /// Full text used as a context block (finetune samples).
    pub fn context_text(&self) -> String {
        match self.kind {
            SourceKind::HelpxDoc => self.doc_text(),
            _ => format!("{}\n{}", self.question_text(), self.answer_text()),
        }
    }
}

fn join_nonempty(a: &str, b: &str) -> String {
    match (a.trim(), b.trim()) {
        ("", b) => b.to_string(),
        (a, "") => a.to_string(),
        (a, b) => format!("{a} {b}"),
    }
}

/// Reads every non-blank line of a JSONL file. Any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))
}

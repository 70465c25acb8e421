//! PII removal for community-sourced text.
//!
//! Two layers run in order: a regex pass for emails, phone numbers and
//! signature blocks, then a named-entity pass that replaces PERSON spans.
//! Every detected span is replaced by a bracketed category placeholder.
//!
//! All offsets in this module are character (Unicode scalar) offsets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiCategory {
    Person,
    Email,
    Phone,
    Signature,
}

impl PiiCategory {
    pub const ALL: [PiiCategory; 4] = [
        PiiCategory::Person,
        PiiCategory::Email,
        PiiCategory::Phone,
        PiiCategory::Signature,
    ];

    pub fn placeholder(self) -> &'static str {
        match self {
            PiiCategory::Person => "[PERSON]",
            PiiCategory::Email => "[EMAIL]",
            PiiCategory::Phone => "[PHONE]",
            PiiCategory::Signature => "[SIGNATURE]",
        }
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PiiCategory::Person => "person",
            PiiCategory::Email => "email",
            PiiCategory::Phone => "phone",
            PiiCategory::Signature => "signature",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redaction {
    pub start: usize,
    pub end: usize,
    pub category: PiiCategory,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scrubbed {
    pub text: String,
    /// Sorted, non-overlapping spans in the input text.
    pub redactions: Vec<Redaction>,
}

/// An entity span reported by a recognizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// A named-entity recognizer. Only `PERSON` labels are acted on.
pub trait NerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String>;
}

/// Exact, case-sensitive, word-bounded lookup of known person names.
#[derive(Debug, Clone)]
pub struct DictionaryProvider {
    pattern: Option<Regex>,
}

impl DictionaryProvider {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut names: Vec<String> = names
            .into_iter()
            .map(|n| n.as_ref().trim().to_string())
            .filter(|n| !n.is_empty())
            .collect();
        names.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        names.dedup();
        let pattern = (!names.is_empty()).then(|| {
            let alts: Vec<String> = names.iter().map(|n| regex::escape(n)).collect();
            Regex::new(&format!(r"\b(?:{})\b", alts.join("|"))).expect("escaped names form a valid regex")
        });
        DictionaryProvider { pattern }
    }

    pub fn empty() -> Self {
        DictionaryProvider { pattern: None }
    }
}

impl NerProvider for DictionaryProvider {
    fn name(&self) -> &str {
        "dictionary"
    }

    fn detect(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String> {
        let Some(re) = &self.pattern else {
            return Ok(Vec::new());
        };
        let offsets = CharOffsets::new(text);
        Ok(re
            .find_iter(text)
            .map(|m| EntitySpan {
                start: offsets.to_char(m.start()),
                end: offsets.to_char(m.end()),
                label: "PERSON".into(),
            })
            .collect())
    }
}

/// Byte <-> char offset conversion for one string.
struct CharOffsets {
    byte_starts: Vec<usize>,
    len_bytes: usize,
}

impl CharOffsets {
    fn new(text: &str) -> Self {
        CharOffsets {
            byte_starts: text.char_indices().map(|(b, _)| b).collect(),
            len_bytes: text.len(),
        }
    }

    fn char_len(&self) -> usize {
        self.byte_starts.len()
    }

    fn to_char(&self, byte: usize) -> usize {
        self.byte_starts.partition_point(|&b| b < byte)
    }

    fn to_byte(&self, ch: usize) -> usize {
        self.byte_starts.get(ch).copied().unwrap_or(self.len_bytes)
    }
}

/// Byte-offset candidate before overlap resolution.
#[derive(Debug, Clone, Copy)]
struct Hit {
    start: usize,
    end: usize,
    category: PiiCategory,
}

fn resolve(mut hits: Vec<Hit>) -> Vec<Hit> {
    hits.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut kept: Vec<Hit> = Vec::with_capacity(hits.len());
    for h in hits {
        match kept.last() {
            Some(last) if h.start < last.end => {}
            _ => kept.push(h),
        }
    }
    kept
}

fn apply(text: &str, hits: &[Hit]) -> Scrubbed {
    let offsets = CharOffsets::new(text);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut redactions = Vec::with_capacity(hits.len());
    for h in hits {
        out.push_str(&text[cursor..h.start]);
        out.push_str(h.category.placeholder());
        cursor = h.end;
        redactions.push(Redaction {
            start: offsets.to_char(h.start),
            end: offsets.to_char(h.end),
            category: h.category,
            replacement: h.category.placeholder().to_string(),
        });
    }
    out.push_str(&text[cursor..]);
    Scrubbed {
        text: out,
        redactions,
    }
}

pub const DEFAULT_SIGNATURE_MARKERS: [&str; 3] = ["Regards,", "Thanks,", "Best,"];

/// Regex layer.
#[derive(Debug, Clone)]
pub struct Sanitizer {
    email: Regex,
    phone: Regex,
    signature_markers: Vec<String>,
}

impl Default for Sanitizer {
    fn default() -> Self {
        Self::new(DEFAULT_SIGNATURE_MARKERS.iter().map(|s| s.to_string()).collect())
    }
}

impl Sanitizer {
    pub fn new(signature_markers: Vec<String>) -> Self {
        Sanitizer {
            email: Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")
                .expect("email regex"),
            phone: Regex::new(
                r"(?:\+\d{1,3}[ .-]?)?(?:\(\d{1,4}\)[ .-]?)?\d{1,8}(?:[ .-]\d{1,8}){1,5}|\+\d{7,15}|\d{9,15}",
            )
            .expect("phone regex"),
            signature_markers,
        }
    }

    pub fn signature_markers(&self) -> &[String] {
        &self.signature_markers
    }

    fn email_hits(&self, text: &str) -> Vec<Hit> {
        self.email
            .find_iter(text)
            .map(|m| Hit {
                start: m.start(),
                end: m.end(),
                category: PiiCategory::Email,
            })
            .collect()
    }

    fn phone_hits(&self, text: &str) -> Vec<Hit> {
        let bytes = text.as_bytes();
        self.phone
            .find_iter(text)
            .filter(|m| {
                let s = m.as_str();
                let digits = s.bytes().filter(u8::is_ascii_digit).count();
                let marked = s.starts_with('+') || s.contains('(');
                let long_enough = digits >= 9 || (marked && digits >= 7);
                let before_ok = text[..m.start()]
                    .chars()
                    .next_back()
                    .is_none_or(|c| !c.is_alphanumeric() && c != '+' && c != '@');
                let after_ok = bytes
                    .get(m.end())
                    .is_none_or(|&b| !(b as char).is_ascii_alphanumeric() && b != b'@');
                (7..=15).contains(&digits) && long_enough && before_ok && after_ok
            })
            .map(|m| Hit {
                start: m.start(),
                end: m.end(),
                category: PiiCategory::Phone,
            })
            .collect()
    }

    fn signature_hits(&self, text: &str) -> Vec<Hit> {
        let lines: Vec<(usize, &str)> = line_spans(text);
        let mut hits = Vec::new();
        for (i, &(start, line)) in lines.iter().enumerate() {
            let lead = line.len() - line.trim_start().len();
            let body = line.trim();
            let Some(marker) = self.signature_markers.iter().find(|m| body.starts_with(m.as_str())) else {
                continue;
            };
            let rest = body[marker.len()..].trim();
            let sig_start = start + lead;
            if rest.is_empty() {
                if let Some(&(next_start, next)) = lines.get(i + 1) {
                    if is_name_line(next.trim()) {
                        let next_lead = next.len() - next.trim_start().len();
                        hits.push(Hit {
                            start: sig_start,
                            end: next_start + next_lead + next.trim().len(),
                            category: PiiCategory::Signature,
                        });
                    }
                }
            } else if is_name_line(rest) {
                hits.push(Hit {
                    start: sig_start,
                    end: sig_start + body.len(),
                    category: PiiCategory::Signature,
                });
            }
        }
        hits
    }

    fn hits(&self, text: &str) -> Vec<Hit> {
        let mut hits = self.signature_hits(text);
        hits.extend(self.email_hits(text));
        hits.extend(self.phone_hits(text));
        resolve(hits)
    }

    /// Replaces emails, phone numbers and signature blocks.
    pub fn regex_scrub(&self, text: &str) -> Scrubbed {
        apply(text, &self.hits(text))
    }

    /// True when the email or phone detectors fire anywhere in `text`.
    pub fn contains_contact_pii(&self, text: &str) -> bool {
        !self.email_hits(text).is_empty() || !self.phone_hits(text).is_empty()
    }

    /// Runs both layers over one text.
    pub fn scrub(&self, text: &str, provider: &dyn NerProvider) -> Result<(String, Vec<Redaction>)> {
        let first = self.regex_scrub(text);
        let second = ner_scrub(&first.text, provider)?;
        let mut all = first.redactions;
        all.extend(second.redactions);
        Ok((second.text, all))
    }

    /// Sanitizes the listed string fields of a JSON object; other fields are
    /// left untouched. Missing fields are an error and nothing is modified.
    pub fn sanitize_record(
        &self,
        record: &Value,
        fields: &[String],
        provider: &dyn NerProvider,
    ) -> Result<(Value, CategoryCounts)> {
        let obj = record
            .as_object()
            .ok_or_else(|| Error::InvalidInput("record is not a JSON object".into()))?;
        let mut out = obj.clone();
        let mut counts = CategoryCounts::default();
        for field in fields {
            let text = match obj.get(field) {
                Some(Value::String(s)) => s,
                Some(_) => {
                    return Err(Error::InvalidInput(format!("field `{field}` is not a string")))
                }
                None => return Err(Error::MissingField(field.clone())),
            };
            let (clean, redactions) = self.scrub(text, provider)?;
            for r in &redactions {
                counts.add(r.category, 1);
            }
            if clean != *text {
                out.insert(field.clone(), Value::String(clean));
            }
        }
        Ok((Value::Object(out), counts))
    }

    /// Streams a JSONL file. Records that cannot be sanitized are dropped
    /// and counted as skipped.
    pub fn sanitize_jsonl<R: BufRead, W: Write>(
        &self,
        input: R,
        mut output: W,
        fields: &[String],
        provider: &dyn NerProvider,
    ) -> Result<SanitizeReport> {
        let mut report = SanitizeReport::default();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(e) => {
                    tracing::warn!(error = %e, "skipping unparseable record");
                    report.skipped += 1;
                    continue;
                }
            };
            match self.sanitize_record(&record, fields, provider) {
                Ok((clean, counts)) => {
                    serde_json::to_writer(&mut output, &clean)?;
                    output.write_all(b"\n")?;
                    report.counts.merge(&counts);
                    report.processed += 1;
                }
                Err(Error::Sanitize { provider, message }) => {
                    return Err(Error::Sanitize { provider, message })
                }
                Err(e) => {
                    tracing::warn!(error = %e, "skipping record");
                    report.skipped += 1;
                }
            }
        }
        output.flush()?;
        Ok(report)
    }
}

fn line_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for line in text.split('\n') {
        let trimmed = line.strip_suffix('\r').unwrap_or(line);
        out.push((start, trimmed));
        start += line.len() + 1;
    }
    out
}

fn is_name_line(s: &str) -> bool {
    let words: Vec<&str> = s.split_whitespace().collect();
    !words.is_empty()
        && words.len() <= 4
        && s.chars().count() <= 40
        && words.iter().all(|w| {
            w.chars().next().is_some_and(|c| c.is_uppercase())
                && w.chars().all(|c| c.is_alphabetic() || matches!(c, '.' | '-' | '\''))
        })
}

/// Replaces PERSON spans from `provider` with `[PERSON]`. Overlapping spans
/// are merged first. A provider failure leaves the text untouched.
pub fn ner_scrub(text: &str, provider: &dyn NerProvider) -> Result<Scrubbed> {
    let spans = provider.detect(text).map_err(|message| Error::Sanitize {
        provider: provider.name().to_string(),
        message,
    })?;
    let offsets = CharOffsets::new(text);
    let mut person: Vec<(usize, usize)> = Vec::new();
    for s in spans.into_iter().filter(|s| s.label == "PERSON") {
        if s.start >= s.end || s.end > offsets.char_len() {
            return Err(Error::Sanitize {
                provider: provider.name().to_string(),
                message: format!("span ({}, {}) outside text of length {}", s.start, s.end, offsets.char_len()),
            });
        }
        person.push((s.start, s.end));
    }
    let merged = merge_intervals(person);
    let hits: Vec<Hit> = merged
        .into_iter()
        .map(|(s, e)| Hit {
            start: offsets.to_byte(s),
            end: offsets.to_byte(e),
            category: PiiCategory::Person,
        })
        .collect();
    Ok(apply(text, &hits))
}

/// Merges overlapping half-open intervals.
pub fn merge_intervals(mut spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    spans.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s < last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Per-category redaction counts; every category is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryCounts(pub BTreeMap<PiiCategory, usize>);

impl Default for CategoryCounts {
    fn default() -> Self {
        CategoryCounts(PiiCategory::ALL.iter().map(|&c| (c, 0)).collect())
    }
}

impl CategoryCounts {
    pub fn add(&mut self, cat: PiiCategory, n: usize) {
        *self.0.entry(cat).or_insert(0) += n;
    }

    pub fn get(&self, cat: PiiCategory) -> usize {
        self.0.get(&cat).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &CategoryCounts) {
        for (&c, &n) in &other.0 {
            self.add(c, n);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeReport {
    pub counts: CategoryCounts,
    pub processed: usize,
    pub skipped: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Fixed(Vec<EntitySpan>);

    impl NerProvider for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn detect(&self, _: &str) -> std::result::Result<Vec<EntitySpan>, String> {
            Ok(self.0.clone())
        }
    }

    struct Failing;

    impl NerProvider for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn detect(&self, _: &str) -> std::result::Result<Vec<EntitySpan>, String> {
            Err("model unavailable".into())
        }
    }

    fn span(start: usize, end: usize) -> EntitySpan {
        EntitySpan { start, end, label: "PERSON".into() }
    }

    #[test]
    fn email_is_replaced() {
        let out = Sanitizer::default().regex_scrub("contact john@x.com now");
        assert_eq!(out.text, "contact [EMAIL] now");
        assert_eq!(out.redactions.len(), 1);
        assert_eq!(out.redactions[0].category, PiiCategory::Email);
        assert_eq!((out.redactions[0].start, out.redactions[0].end), (8, 18));
    }

    #[test]
    fn clean_text_is_unchanged() {
        let text = "Open Acrobat and choose Tools > Create PDF. Version 2023 works.";
        let out = Sanitizer::default().regex_scrub(text);
        assert_eq!(out.text, text);
        assert!(out.redactions.is_empty());
    }

    #[test]
    fn international_phone_formats() {
        let formats = [
            "+1 (555) 123-4567",
            "(555) 123-4567",
            "555-123-4567",
            "555.123.4567",
            "+44 20 7946 0958",
            "+91 98765 43210",
            "+33 1 23 45 67 89",
            "+49 30 1234567",
            "+81 3-1234-5678",
            "+61 2 9876 5432",
            "020 7946 0958",
            "+15551234567",
        ];
        let s = Sanitizer::default();
        for f in formats {
            assert_eq!(s.regex_scrub(f).text, "[PHONE]", "format {f}");
            let embedded = format!("call me at {f}, thanks");
            assert_eq!(s.regex_scrub(&embedded).text, "call me at [PHONE], thanks", "format {f}");
        }
    }

    #[test]
    fn short_numbers_are_not_phones() {
        let s = Sanitizer::default();
        for text in ["version 12.3.4", "page 2023-10", "order 1234567", "abc555-123-4567"] {
            assert_eq!(s.regex_scrub(text).text, text);
        }
    }

    #[test]
    fn signature_blocks() {
        let s = Sanitizer::default();
        assert_eq!(
            s.regex_scrub("It worked.\nRegards,\nJane Doe").text,
            "It worked.\n[SIGNATURE]"
        );
        assert_eq!(s.regex_scrub("Fixed it.\nThanks, Maria").text, "Fixed it.\n[SIGNATURE]");
        let casual = "Thanks, that worked great!";
        assert_eq!(s.regex_scrub(casual).text, casual);
        let no_name = "Best,\nthe export failed again";
        assert_eq!(s.regex_scrub(no_name).text, no_name);
    }

    #[test]
    fn ner_no_entities() {
        let out = ner_scrub("Alice helped me", &Fixed(vec![])).unwrap();
        assert_eq!(out.text, "Alice helped me");
    }

    #[test]
    fn dictionary_provider() {
        let provider = DictionaryProvider::new(["Alice"]);
        let out = ner_scrub("Alice helped me", &provider).unwrap();
        assert_eq!(out.text, "[PERSON] helped me");
        assert_eq!(ner_scrub("Malice helped", &provider).unwrap().text, "Malice helped");
    }

    #[test]
    fn overlapping_spans_merge() {
        let out = ner_scrub("Mary Ann Smith said hi", &Fixed(vec![span(0, 5), span(3, 8)])).unwrap();
        assert_eq!(out.redactions.len(), 1);
        assert_eq!((out.redactions[0].start, out.redactions[0].end), (0, 8));
        assert_eq!(out.text, "[PERSON] Smith said hi");
        assert_eq!(merge_intervals(vec![(3, 8), (0, 5), (10, 12)]), vec![(0, 8), (10, 12)]);
    }

    #[test]
    fn non_person_labels_ignored() {
        let spans = vec![EntitySpan { start: 0, end: 5, label: "ORG".into() }];
        assert_eq!(ner_scrub("Adobe rocks", &Fixed(spans)).unwrap().text, "Adobe rocks");
    }

    #[test]
    fn provider_failure_carries_name() {
        match ner_scrub("text", &Failing) {
            Err(Error::Sanitize { provider, .. }) => assert_eq!(provider, "failing"),
            other => panic!("{other:?}"),
        }
        assert!(ner_scrub("abc", &Fixed(vec![span(1, 9)])).is_err());
    }

    #[test]
    fn char_offsets_with_multibyte_text() {
        let provider = DictionaryProvider::new(["José"]);
        let out = ner_scrub("¿José?", &provider).unwrap();
        assert_eq!(out.text, "¿[PERSON]?");
        assert_eq!((out.redactions[0].start, out.redactions[0].end), (1, 5));
    }

    #[test]
    fn record_field_isolation() {
        let s = Sanitizer::default();
        let provider = DictionaryProvider::empty();
        let rec = json!({"title": "mail me", "body": "write a@b.io", "id": 3});
        let (out, counts) = s.sanitize_record(&rec, &["body".into()], &provider).unwrap();
        assert_eq!(out, json!({"title": "mail me", "body": "write [EMAIL]", "id": 3}));
        assert_eq!(counts.get(PiiCategory::Email), 1);

        let clean = json!({"body": "nothing here"});
        let (out, _) = s.sanitize_record(&clean, &["body".into()], &provider).unwrap();
        assert_eq!(serde_json::to_string(&out).unwrap(), serde_json::to_string(&clean).unwrap());

        match s.sanitize_record(&clean, &["title".into()], &provider) {
            Err(Error::MissingField(f)) => assert_eq!(f, "title"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn length_accounting() {
        let text = "Ping bob@mail.com or +44 20 7946 0958.\nRegards,\nBob Stone";
        let out = Sanitizer::default().regex_scrub(text);
        let removed: usize = out.redactions.iter().map(|r| r.end - r.start).sum();
        let added: usize = out.redactions.iter().map(|r| r.replacement.chars().count()).sum();
        assert_eq!(out.text.chars().count(), text.chars().count() - removed + added);
        assert!(out.redactions.windows(2).all(|w| w[0].end <= w[1].start));
    }
}

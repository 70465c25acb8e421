//! LLM-as-judge answer scoring on a 1-5 scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{CompletionRequest, LlmClient};

pub const JUDGE_SAMPLES: usize = 20;

pub const JUDGE_TEMPLATE: &str = "Rate how well the candidate answer matches the reference answer for the question below, \
on a scale from 1 (unrelated or wrong) to 5 (same content and correctness). \
Reply with the score as a single integer first, optionally followed by a short reason.\n\n\
Question: {question}\n\n\
Reference answer: {gold}\n\n\
Candidate answer: {candidate}\n\n\
Score:";

pub fn judge_prompt(question: &str, gold: &str, candidate: &str) -> String {
    JUDGE_TEMPLATE
        .replacen("{question}", question.trim(), 1)
        .replacen("{gold}", gold.trim(), 1)
        .replacen("{candidate}", candidate.trim(), 1)
}

/// Leading integer of a sample if it lies in 1..=5.
pub fn parse_score(sample: &str) -> Option<u8> {
    let s = sample.trim_start();
    let digits: String = s.chars().take_while(char::is_ascii_digit).collect();
    match digits.parse::<u8>() {
        Ok(n @ 1..=5) if digits.len() == 1 => Some(n),
        _ => None,
    }
}

/// Mean of the parseable scores over twenty samples at temperature 1.
pub fn judge_relevance(question: &str, gold: &str, candidate: &str, client: &dyn LlmClient) -> Result<f64> {
    let mut request = CompletionRequest::new(judge_prompt(question, gold, candidate)).with_sampling(JUDGE_SAMPLES, 1.0, 1.0);
    request.max_tokens = 16;
    let result = client.complete(&request)?;
    let scores: Vec<u8> = result.samples.iter().filter_map(|s| parse_score(s)).collect();
    if scores.is_empty() {
        return Err(Error::Judge(result.samples.len()));
    }
    if scores.len() < result.samples.len() {
        tracing::debug!(
            discarded = result.samples.len() - scores.len(),
            "unparseable judge samples"
        );
    }
    Ok(scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRow {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub id: String,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    /// Mean over rows that produced a score.
    pub mean: Option<f64>,
    pub scored: usize,
    pub failed: usize,
    pub rows: Vec<JudgeScore>,
}

/// Scores each row; a row whose samples are all unparseable is reported,
/// not fatal. Transport errors abort.
pub fn judge_rows(rows: &[JudgeRow], client: &dyn LlmClient) -> Result<JudgeReport> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        match judge_relevance(&row.question, &row.gold, &row.candidate, client) {
            Ok(s) => out.push(JudgeScore {
                id: row.id.clone(),
                score: Some(s),
                error: None,
            }),
            Err(e @ Error::Judge(_)) => out.push(JudgeScore {
                id: row.id.clone(),
                score: None,
                error: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = out.iter().filter_map(|r| r.score).collect();
    Ok(JudgeReport {
        mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        scored: scores.len(),
        failed: out.len() - scores.len(),
        rows: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedProvider;
    use std::sync::{Arc, Mutex};

    #[test]
    fn constant_and_alternating() {
        let c = ScriptedProvider::script(["4"]);
        assert_eq!(judge_relevance("q", "g", "c", &c).unwrap(), 4.0);
        let c = ScriptedProvider::script(["5", "3"]);
        assert_eq!(judge_relevance("q", "g", "c", &c).unwrap(), 4.0);
    }

    #[test]
    fn request_shape() {
        let seen = Arc::new(Mutex::new(None));
        let s = Arc::clone(&seen);
        let c = ScriptedProvider::from_fn(move |req| {
            *s.lock().unwrap() = Some(req.clone());
            vec!["3".into(); req.n]
        });
        judge_relevance("q", "g", "c", &c).unwrap();
        let req = seen.lock().unwrap().clone().unwrap();
        assert_eq!((req.n, req.temperature, req.top_p), (20, 1.0, 1.0));
        assert!(req.prompt.contains("Candidate answer: c"));
    }

    #[test]
    fn parsing() {
        assert_eq!(parse_score(" 4 - close"), Some(4));
        assert_eq!(parse_score("5/5"), Some(5));
        assert_eq!(parse_score("0"), None);
        assert_eq!(parse_score("6"), None);
        assert_eq!(parse_score("12"), None);
        assert_eq!(parse_score("Score: 3"), None);
        let c = ScriptedProvider::script(["4", "junk"]);
        assert_eq!(judge_relevance("q", "g", "c", &c).unwrap(), 4.0);
    }

    #[test]
    fn nothing_parseable() {
        let c = ScriptedProvider::script(["n/a"]);
        assert!(matches!(judge_relevance("q", "g", "c", &c), Err(Error::Judge(20))));
        let rows = vec![JudgeRow {
            id: "r1".into(),
            question: "q".into(),
            gold: "g".into(),
            candidate: "c".into(),
        }];
        let report = judge_rows(&rows, &c).unwrap();
        assert_eq!((report.scored, report.failed, report.mean), (0, 1, None));
    }
}

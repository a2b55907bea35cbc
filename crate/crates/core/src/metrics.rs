//! The four caption scorers behind one verdict type: keyword matching,
//! sentence-embedding cosine similarity (threshold 0.5), token-embedding
//! precision (threshold 0.9), and a True/False model judge.
//!
//! Both thresholds use strict ">": a score exactly at the threshold is
//! incorrect. Token-embedding precision carries no IDF weighting and no
//! baseline rescaling, so the 0.9 threshold's meaning is fixed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{keyword_hits, ActivityLabel, KeywordLexicon};
use crate::providers::{
    ChatMessage, ChatParams, ChatProvider, EmbeddingVector, ImagePayload, MessagePart,
    ProviderError, Role, TextEmbedder, TokenEmbedder, JUDGE_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("lexicon has no entry for label {0:?}")]
    MissingLexiconEntry(String),
    #[error("judge output is neither True nor False: {0:?}")]
    AmbiguousJudgeOutput(String),
    #[error("judge prompt needs at least one image")]
    NoImages,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Keywords,
    Cosine,
    BertPrecision,
    VlmJudge,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Keywords => "keywords",
            MetricKind::Cosine => "cosine",
            MetricKind::BertPrecision => "bert_precision",
            MetricKind::VlmJudge => "vlm_judge",
        }
    }

    pub fn parse(name: &str) -> Option<MetricKind> {
        match name {
            "keywords" => Some(MetricKind::Keywords),
            "cosine" => Some(MetricKind::Cosine),
            "bert_precision" => Some(MetricKind::BertPrecision),
            "vlm_judge" => Some(MetricKind::VlmJudge),
            _ => None,
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decision thresholds, both strictly exceeded to count as correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub cosine_threshold: f64,
    pub bert_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            cosine_threshold: 0.5,
            bert_threshold: 0.9,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("cosine_threshold", self.cosine_threshold),
            ("bert_threshold", self.bert_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        Ok(())
    }
}

/// One scorer's boolean decision with its raw score and threshold where
/// the metric has them (the judge has neither).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub metric: MetricKind,
    pub correct: bool,
    pub score: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl MetricVerdict {
    /// Builds a thresholded verdict; correctness is derived, never stored
    /// independently: correct ⇔ score > threshold.
    pub fn thresholded(
        metric: MetricKind,
        score: f64,
        threshold: f64,
        detail: impl Into<String>,
    ) -> Self {
        MetricVerdict {
            metric,
            correct: score > threshold,
            score: Some(score),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }

    pub fn boolean(metric: MetricKind, correct: bool, detail: impl Into<String>) -> Self {
        MetricVerdict {
            metric,
            correct,
            score: None,
            threshold: None,
            detail: detail.into(),
        }
    }
}

/// A verdict as persisted to JSONL, joined with its sample and scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub video_id: String,
    pub metric: MetricKind,
    pub correct: bool,
    pub score: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
    pub model_id: String,
}

impl VerdictRow {
    pub fn new(video_id: impl Into<String>, model_id: impl Into<String>, v: MetricVerdict) -> Self {
        VerdictRow {
            video_id: video_id.into(),
            metric: v.metric,
            correct: v.correct,
            score: v.score,
            threshold: v.threshold,
            detail: v.detail,
            model_id: model_id.into(),
        }
    }
}

/// Correct iff the generated caption contains any lexicon keyword for the
/// label; the hits fill the verdict detail.
pub fn eval_keywords(
    generated: &str,
    label: &ActivityLabel,
    lexicon: &KeywordLexicon,
) -> Result<MetricVerdict, MetricError> {
    let keywords = lexicon
        .get(label)
        .ok_or_else(|| MetricError::MissingLexiconEntry(label.as_str().to_string()))?;
    let hits = keyword_hits(generated, keywords);
    let correct = !hits.is_empty();
    Ok(MetricVerdict {
        metric: MetricKind::Keywords,
        correct,
        score: None,
        threshold: None,
        detail: hits.join(","),
    })
}

/// cos(A, B) = A·B / (‖A‖‖B‖), clamped into [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    if a.dimension() != b.dimension() {
        return Err(MetricError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b: f64 = b.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Embeds ground truth and candidate in one batch and thresholds their
/// cosine similarity.
pub fn eval_cosine(
    ground_truth: &str,
    generated: &str,
    embedder: &dyn TextEmbedder,
    cfg: &MetricConfig,
) -> Result<MetricVerdict, MetricError> {
    let vectors = embedder.embed_text(&[ground_truth.to_string(), generated.to_string()])?;
    let score = cosine_similarity(&vectors[0], &vectors[1])?;
    Ok(MetricVerdict::thresholded(
        MetricKind::Cosine,
        score,
        cfg.cosine_threshold,
        vectors[0].model_id(),
    ))
}

/// Greedy-max token-embedding scores. Only precision feeds verdicts;
/// recall and F1 are computed for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// P = mean over candidate tokens of the max cosine similarity to any
/// reference token; recall swaps the roles; F1 is their harmonic mean.
pub fn bert_score(
    reference: &str,
    candidate: &str,
    token_embedder: &dyn TokenEmbedder,
) -> Result<BertScore, MetricError> {
    let r = token_embedder.embed_tokens(reference)?;
    let c = token_embedder.embed_tokens(candidate)?;
    if r.vectors.is_empty() || c.vectors.is_empty() {
        return Err(MetricError::Provider(ProviderError::EmptyTokenization));
    }
    let mut sim = vec![vec![0.0f64; r.vectors.len()]; c.vectors.len()];
    for (i, cv) in c.vectors.iter().enumerate() {
        for (j, rv) in r.vectors.iter().enumerate() {
            sim[i][j] = cosine_similarity(cv, rv)?;
        }
    }
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / c.vectors.len() as f64;
    let recall = (0..r.vectors.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / r.vectors.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BertScore {
        precision,
        recall,
        f1,
    })
}

pub fn bert_precision(
    reference: &str,
    candidate: &str,
    token_embedder: &dyn TokenEmbedder,
) -> Result<f64, MetricError> {
    Ok(bert_score(reference, candidate, token_embedder)?.precision)
}

/// Thresholds token-embedding precision at cfg.bert_threshold (strictly).
pub fn eval_bert(
    ground_truth: &str,
    generated: &str,
    token_embedder: &dyn TokenEmbedder,
    cfg: &MetricConfig,
) -> Result<MetricVerdict, MetricError> {
    let score = bert_score(ground_truth, generated, token_embedder)?;
    Ok(MetricVerdict::thresholded(
        MetricKind::BertPrecision,
        score.precision,
        cfg.bert_threshold,
        format!("recall={:.6},f1={:.6}", score.recall, score.f1),
    ))
}

/// Builds the judge prompt: frames, both captions verbatim, and the
/// fixed instruction to output only True or False.
pub fn build_judge_prompt(
    images: &[ImagePayload],
    ground_truth: &str,
    generated: &str,
) -> Result<Vec<ChatMessage>, MetricError> {
    if images.is_empty() {
        return Err(MetricError::NoImages);
    }
    let system = ChatMessage::system(
        "You judge whether a generated caption describes the same human \
         activity as the ground truth caption, given frames from the video.",
    );
    let mut parts: Vec<MessagePart> = images.iter().cloned().map(ImagePayload::into_part).collect();
    parts.push(MessagePart::Text(format!(
        "Ground truth caption: {ground_truth}\n\
         Generated caption: {generated}\n\
         Does the generated caption describe the same activity? {JUDGE_INSTRUCTION}"
    )));
    let user = ChatMessage::new(Role::User, parts)?;
    Ok(vec![system, user])
}

/// Maps a raw judge reply to a boolean: trims surrounding whitespace and
/// punctuation, lowercases, then accepts exactly "true" or "false".
pub fn parse_judge(raw: &str) -> Result<bool, MetricError> {
    let cleaned = raw
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase();
    match cleaned.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(MetricError::AmbiguousJudgeOutput(raw.to_string())),
    }
}

const STRICT_JUDGE_SYSTEM: &str = "Reply with exactly one word: True or False. \
     No punctuation, no explanation.";

/// Runs the judge once, retries once with a stricter system message on an
/// ambiguous reply, and records a second ambiguity as an incorrect
/// "abstain" verdict.
pub fn eval_judge(
    ground_truth: &str,
    generated: &str,
    chat: &dyn ChatProvider,
    params: &ChatParams,
    images: &[ImagePayload],
) -> Result<MetricVerdict, MetricError> {
    let messages = build_judge_prompt(images, ground_truth, generated)?;
    let raw = chat.chat_complete(&messages, params)?;
    match parse_judge(&raw) {
        Ok(correct) => Ok(MetricVerdict::boolean(MetricKind::VlmJudge, correct, raw)),
        Err(MetricError::AmbiguousJudgeOutput(_)) => {
            let mut strict = messages;
            strict[0] = ChatMessage::system(STRICT_JUDGE_SYSTEM);
            let retry = chat.chat_complete(&strict, params)?;
            match parse_judge(&retry) {
                Ok(correct) => Ok(MetricVerdict::boolean(MetricKind::VlmJudge, correct, retry)),
                Err(MetricError::AmbiguousJudgeOutput(_)) => Ok(MetricVerdict::boolean(
                    MetricKind::VlmJudge,
                    false,
                    "abstain",
                )),
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

//! Descriptive ground-truth caption generation: build a prompt from
//! keyframes, label, and keywords; generate; check keyword containment;
//! switch to a refinement prompt and retry; then verify coverage over the
//! whole dataset.
//!
//! The keyword check reuses the normalized token matching from
//! [`crate::dataset`], so generation and the keyword-matching scorer
//! agree on what counts as a hit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    keyword_hits, ActivityLabel, CaptionRecord, CaptionStatus, KeywordLexicon, VideoRecord,
};
use crate::providers::{
    ChatMessage, ChatParams, ChatProvider, ImagePayload, MessagePart, ProviderError, Role,
};

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("template error: {0}")]
    Template(String),
    #[error("lexicon has no entry for label {0:?}")]
    MissingLexiconEntry(String),
    #[error("keywords must be non-empty")]
    EmptyKeywords,
    #[error("prompt needs at least one image")]
    NoImages,
    #[error("{got} images exceed the limit of {max}")]
    TooManyImages { got: usize, max: usize },
    #[error("max_attempts must be at least 1")]
    InvalidMaxAttempts,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Images per generation prompt; the reference setting is two frames.
pub const DEFAULT_MAX_IMAGES: usize = 2;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

/// Prompt text templates with `{label}` and `{keywords}` slots. The
/// refinement template must differ from the initial one and both user
/// templates must reference `{keywords}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    pub initial_user_text: String,
    pub refine_user_text: String,
}

impl PromptTemplate {
    pub fn new(
        system_text: impl Into<String>,
        initial_user_text: impl Into<String>,
        refine_user_text: impl Into<String>,
    ) -> Result<Self, CaptionError> {
        let tpl = PromptTemplate {
            system_text: system_text.into(),
            initial_user_text: initial_user_text.into(),
            refine_user_text: refine_user_text.into(),
        };
        for (name, text) in [
            ("initial", &tpl.initial_user_text),
            ("refine", &tpl.refine_user_text),
        ] {
            if !text.contains("{keywords}") {
                return Err(CaptionError::Template(format!(
                    "{name} template must reference {{keywords}}"
                )));
            }
        }
        if tpl.initial_user_text == tpl.refine_user_text {
            return Err(CaptionError::Template(
                "refine template must differ from the initial template".into(),
            ));
        }
        Ok(tpl)
    }

    /// Loads a template file: plain text split into `[system]`,
    /// `[initial]`, and `[refine]` sections.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CaptionError> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut sections: [(&str, String); 3] = [
            ("[system]", String::new()),
            ("[initial]", String::new()),
            ("[refine]", String::new()),
        ];
        let mut current: Option<usize> = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(idx) = sections.iter().position(|(h, _)| *h == trimmed) {
                current = Some(idx);
                continue;
            }
            match current {
                Some(idx) => {
                    let body = &mut sections[idx].1;
                    if !body.is_empty() {
                        body.push('\n');
                    }
                    body.push_str(line);
                }
                None if trimmed.is_empty() => {}
                None => {
                    return Err(CaptionError::Template(format!(
                        "text before any section header: {trimmed:?}"
                    )));
                }
            }
        }
        for (header, body) in &sections {
            if body.trim().is_empty() {
                return Err(CaptionError::Template(format!("missing section {header}")));
            }
        }
        let [system, initial, refine] = sections.map(|(_, body)| body.trim().to_string());
        PromptTemplate::new(system, initial, refine)
    }

    fn fill(template: &str, label: &ActivityLabel, keywords: &[String]) -> String {
        template
            .replace("{label}", label.as_str())
            .replace("{keywords}", &keywords.join(", "))
    }
}

fn build_prompt(
    user_template: &str,
    tpl: &PromptTemplate,
    label: &ActivityLabel,
    keywords: &[String],
    images: &[ImagePayload],
    max_images: usize,
) -> Result<Vec<ChatMessage>, CaptionError> {
    if keywords.is_empty() {
        return Err(CaptionError::EmptyKeywords);
    }
    if images.is_empty() {
        return Err(CaptionError::NoImages);
    }
    if images.len() > max_images {
        return Err(CaptionError::TooManyImages {
            got: images.len(),
            max: max_images,
        });
    }
    let mut parts: Vec<MessagePart> = images.iter().cloned().map(ImagePayload::into_part).collect();
    parts.push(MessagePart::Text(PromptTemplate::fill(
        user_template,
        label,
        keywords,
    )));
    Ok(vec![
        ChatMessage::system(tpl.system_text.clone()),
        ChatMessage::new(Role::User, parts).map_err(CaptionError::Provider)?,
    ])
}

/// One system message plus one user message carrying all images followed
/// by the filled initial template.
pub fn build_initial_prompt(
    label: &ActivityLabel,
    keywords: &[String],
    images: &[ImagePayload],
    tpl: &PromptTemplate,
) -> Result<Vec<ChatMessage>, CaptionError> {
    build_prompt(
        &tpl.initial_user_text,
        tpl,
        label,
        keywords,
        images,
        DEFAULT_MAX_IMAGES,
    )
}

/// As [`build_initial_prompt`] but with the refinement template, used
/// from the second attempt onward.
pub fn build_refine_prompt(
    label: &ActivityLabel,
    keywords: &[String],
    images: &[ImagePayload],
    tpl: &PromptTemplate,
) -> Result<Vec<ChatMessage>, CaptionError> {
    build_prompt(
        &tpl.refine_user_text,
        tpl,
        label,
        keywords,
        images,
        DEFAULT_MAX_IMAGES,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    pub prompt_text: String,
    pub response_text: String,
    pub matched_keywords: Vec<String>,
}

/// Ordered audit trail of one video's generation loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub video_id: String,
    pub attempts: Vec<GenerationAttempt>,
}

/// Runs the generate/check/refine loop for one video. Returns a verified
/// record as soon as a caption lands a keyword; after `max_attempts`
/// misses the record is marked exhausted (keeping the last caption for
/// review) rather than failing the build. Transport failures propagate.
pub fn generate_caption(
    video: &VideoRecord,
    lexicon: &KeywordLexicon,
    chat: &dyn ChatProvider,
    params: &ChatParams,
    tpl: &PromptTemplate,
    images: &[ImagePayload],
    max_attempts: u32,
) -> Result<(CaptionRecord, GenerationTrace), CaptionError> {
    if max_attempts == 0 {
        return Err(CaptionError::InvalidMaxAttempts);
    }
    let keywords = lexicon
        .get(&video.label)
        .ok_or_else(|| CaptionError::MissingLexiconEntry(video.label.as_str().to_string()))?;

    let mut trace = GenerationTrace {
        video_id: video.video_id.clone(),
        attempts: Vec::new(),
    };
    let mut last_response = String::new();
    for attempt in 1..=max_attempts {
        let messages = if attempt == 1 {
            build_initial_prompt(&video.label, keywords, images, tpl)?
        } else {
            build_refine_prompt(&video.label, keywords, images, tpl)?
        };
        let response = chat.chat_complete(&messages, params)?;
        let hits = keyword_hits(&response, keywords);
        trace.attempts.push(GenerationAttempt {
            prompt_text: messages
                .iter()
                .map(ChatMessage::text)
                .collect::<Vec<_>>()
                .join("\n"),
            response_text: response.clone(),
            matched_keywords: hits.clone(),
        });
        if !hits.is_empty() {
            let record = CaptionRecord {
                video_id: video.video_id.clone(),
                label: video.label.clone(),
                caption: response,
                matched_keywords: hits,
                attempts: attempt,
                status: CaptionStatus::Verified,
            };
            return Ok((record, trace));
        }
        last_response = response;
    }
    let record = CaptionRecord {
        video_id: video.video_id.clone(),
        label: video.label.clone(),
        caption: last_response,
        matched_keywords: Vec::new(),
        attempts: max_attempts,
        status: CaptionStatus::Exhausted,
    };
    Ok((record, trace))
}

/// Coverage of the keyword-containment guarantee over a caption set.
/// `empty` flags the vacuous case of zero records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub verified: usize,
    pub coverage_fraction: f64,
    pub offending_ids: Vec<String>,
    pub empty: bool,
}

/// Recomputes keyword hits for every record from its caption text (stored
/// `matched_keywords` are not trusted) and reports the fraction covered.
pub fn verify_dataset(records: &[CaptionRecord], lexicon: &KeywordLexicon) -> CoverageReport {
    if records.is_empty() {
        return CoverageReport {
            total: 0,
            verified: 0,
            coverage_fraction: 1.0,
            offending_ids: Vec::new(),
            empty: true,
        };
    }
    let mut offending_ids = Vec::new();
    for r in records {
        let covered = lexicon
            .get(&r.label)
            .map(|keywords| !keyword_hits(&r.caption, keywords).is_empty())
            .unwrap_or(false);
        if !covered {
            offending_ids.push(r.video_id.clone());
        }
    }
    let verified = records.len() - offending_ids.len();
    CoverageReport {
        total: records.len(),
        verified,
        coverage_fraction: verified as f64 / records.len() as f64,
        offending_ids,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ScriptedChatProvider;

    fn test_template() -> PromptTemplate {
        PromptTemplate::new(
            "You write one-sentence activity captions.",
            "The frames show \"{label}\". Describe the activity in one sentence. \
             Relevant terms: {keywords}.",
            "Rewrite the caption for \"{label}\" and use at least one of these \
             words verbatim: {keywords}.",
        )
        .unwrap()
    }

    fn cook_video() -> VideoRecord {
        VideoRecord {
            video_id: "v1".into(),
            label: ActivityLabel::new("Cook_Cleanup").unwrap(),
            subject_id: 3,
            camera_id: 1,
            frames_uri: "frames/v1".into(),
        }
    }

    fn cook_lexicon() -> KeywordLexicon {
        KeywordLexicon::new([(
            ActivityLabel::new("Cook_Cleanup").unwrap(),
            vec!["wipe".to_string(), "counter".to_string()],
        )])
        .unwrap()
    }

    fn images(n: usize) -> Vec<ImagePayload> {
        (0..n)
            .map(|i| ImagePayload::new(vec![i as u8 + 1], "image/png"))
            .collect()
    }

    #[test]
    fn template_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.txt");
        std::fs::write(
            &path,
            "[system]\nsys text\n[initial]\ninitial {label} {keywords}\n\
             [refine]\nrefine {label} {keywords}\n",
        )
        .unwrap();
        let tpl = PromptTemplate::load(&path).unwrap();
        assert_eq!(tpl.system_text, "sys text");
        assert!(tpl.initial_user_text.starts_with("initial"));
        assert!(tpl.refine_user_text.starts_with("refine"));
    }

    #[test]
    fn template_requires_keywords_slot_and_distinct_refine() {
        assert!(matches!(
            PromptTemplate::new("s", "no slot {label}", "refine {keywords}"),
            Err(CaptionError::Template(_))
        ));
        assert!(matches!(
            PromptTemplate::new("s", "same {keywords}", "same {keywords}"),
            Err(CaptionError::Template(_))
        ));
    }

    #[test]
    fn template_file_missing_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.txt");
        std::fs::write(&path, "[system]\nsys\n[initial]\ninit {keywords}\n").unwrap();
        assert!(matches!(
            PromptTemplate::load(&path),
            Err(CaptionError::Template(_))
        ));
    }

    #[test]
    fn initial_prompt_structure() {
        let label = ActivityLabel::new("Cook_Cleanup").unwrap();
        let keywords: Vec<String> = (0..18).map(|i| format!("kw{i}")).collect();
        let messages =
            build_initial_prompt(&label, &keywords, &images(2), &test_template()).unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, Role::System);
        assert_eq!(messages[1].parts.len(), 3);
        let text = messages[1].text();
        for kw in &keywords {
            assert!(text.contains(kw));
        }
        assert!(text.contains("Cook_Cleanup"));
    }

    #[test]
    fn prompt_precondition_violations() {
        let label = ActivityLabel::new("Cook_Cleanup").unwrap();
        let keywords = vec!["wipe".to_string()];
        assert!(matches!(
            build_initial_prompt(&label, &[], &images(1), &test_template()),
            Err(CaptionError::EmptyKeywords)
        ));
        assert!(matches!(
            build_initial_prompt(&label, &keywords, &images(3), &test_template()),
            Err(CaptionError::TooManyImages { got: 3, max: 2 })
        ));
        assert!(matches!(
            build_initial_prompt(&label, &keywords, &[], &test_template()),
            Err(CaptionError::NoImages)
        ));
    }

    #[test]
    fn miss_then_hit_verifies_on_second_attempt() {
        let chat = ScriptedChatProvider::new(vec![
            "A person stands.".into(),
            "The person wipes the counter.".into(),
        ]);
        let (record, trace) = generate_caption(
            &cook_video(),
            &cook_lexicon(),
            &chat,
            &ChatParams::default(),
            &test_template(),
            &images(2),
            5,
        )
        .unwrap();
        assert_eq!(record.status, CaptionStatus::Verified);
        assert_eq!(record.attempts, 2);
        assert_eq!(record.matched_keywords, vec!["wipe", "counter"]);
        assert_eq!(trace.attempts.len(), 2);
        assert!(trace.attempts[0].matched_keywords.is_empty());
        // the refinement template is used from attempt 2 onward
        assert!(trace.attempts[0].prompt_text.contains("The frames show"));
        assert!(trace.attempts[1].prompt_text.contains("Rewrite the caption"));
    }

    #[test]
    fn immediate_hit_verifies_in_one_attempt() {
        let chat = ScriptedChatProvider::new(vec!["Wiping the counter now.".into()]);
        let (record, trace) = generate_caption(
            &cook_video(),
            &cook_lexicon(),
            &chat,
            &ChatParams::default(),
            &test_template(),
            &images(1),
            5,
        )
        .unwrap();
        assert_eq!(record.status, CaptionStatus::Verified);
        assert_eq!(record.attempts, 1);
        assert_eq!(trace.attempts.len(), 1);
    }

    #[test]
    fn always_miss_exhausts_at_cap() {
        let chat = ScriptedChatProvider::new(vec!["The person sleeps.".into()]);
        let (record, trace) = generate_caption(
            &cook_video(),
            &cook_lexicon(),
            &chat,
            &ChatParams::default(),
            &test_template(),
            &images(2),
            3,
        )
        .unwrap();
        assert_eq!(record.status, CaptionStatus::Exhausted);
        assert_eq!(record.attempts, 3);
        assert!(record.matched_keywords.is_empty());
        assert_eq!(trace.attempts.len(), 3);
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn missing_lexicon_entry_is_an_error() {
        let mut video = cook_video();
        video.label = ActivityLabel::new("Walk").unwrap();
        let chat = ScriptedChatProvider::new(vec!["x".into()]);
        assert!(matches!(
            generate_caption(
                &video,
                &cook_lexicon(),
                &chat,
                &ChatParams::default(),
                &test_template(),
                &images(1),
                2,
            ),
            Err(CaptionError::MissingLexiconEntry(_))
        ));
    }

    #[test]
    fn verified_record_rechecks_without_provider() {
        let chat = ScriptedChatProvider::new(vec!["The person wipes everything.".into()]);
        let lexicon = cook_lexicon();
        let (record, _) = generate_caption(
            &cook_video(),
            &lexicon,
            &chat,
            &ChatParams::default(),
            &test_template(),
            &images(1),
            2,
        )
        .unwrap();
        let keywords = lexicon.get(&record.label).unwrap();
        assert!(!keyword_hits(&record.caption, keywords).is_empty());
    }

    fn verified_record(id: &str, caption: &str) -> CaptionRecord {
        CaptionRecord {
            video_id: id.into(),
            label: ActivityLabel::new("Cook_Cleanup").unwrap(),
            caption: caption.into(),
            matched_keywords: vec!["wipe".into()],
            attempts: 1,
            status: CaptionStatus::Verified,
        }
    }

    #[test]
    fn coverage_full() {
        let records: Vec<CaptionRecord> = (0..4)
            .map(|i| verified_record(&format!("v{i}"), "The person wipes the counter."))
            .collect();
        let report = verify_dataset(&records, &cook_lexicon());
        assert_eq!(report.coverage_fraction, 1.0);
        assert!(report.offending_ids.is_empty());
        assert!(!report.empty);
    }

    #[test]
    fn coverage_does_not_trust_stored_keywords() {
        let mut records: Vec<CaptionRecord> = (0..9)
            .map(|i| verified_record(&format!("v{i}"), "The person wipes the counter."))
            .collect();
        // stored matched_keywords claim a hit, but the caption has none
        records.push(verified_record("v9", "The person sleeps."));
        let report = verify_dataset(&records, &cook_lexicon());
        assert_eq!(report.total, 10);
        assert_eq!(report.verified, 9);
        assert!((report.coverage_fraction - 0.9).abs() < 1e-12);
        assert_eq!(report.offending_ids, vec!["v9"]);
    }

    #[test]
    fn coverage_empty_input_is_flagged() {
        let report = verify_dataset(&[], &cook_lexicon());
        assert_eq!(report.total, 0);
        assert_eq!(report.coverage_fraction, 1.0);
        assert!(report.empty);
    }
}

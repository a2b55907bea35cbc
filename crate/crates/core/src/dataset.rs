//! Core domain types, manifest/lexicon/caption file I/O, and the keyword
//! normalization and matching primitive shared by caption generation and
//! the keyword-matching scorer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate video_id {0:?}")]
    DuplicateId(String),
    #[error("duplicate keyword {keyword:?} in entry {label:?}")]
    DuplicateKeyword { label: String, keyword: String },
    #[error("empty keyword entry for {0:?}")]
    EmptyEntry(String),
}

/// One activity class name, e.g. `"Cook_Cleanup"`. Always non-empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivityLabel(String);

impl ActivityLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, DatasetError> {
        let name = name.into();
        if name.is_empty() {
            return Err(DatasetError::Parse("empty activity label".into()));
        }
        Ok(ActivityLabel(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One video's identity: label, subject, camera, and where its
/// pre-decoded still frames live (lexicographic filename order is
/// temporal order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub label: ActivityLabel,
    pub subject_id: u32,
    pub camera_id: u32,
    pub frames_uri: String,
}

/// An ordered list of [`VideoRecord`]s plus the distinct labels they carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<VideoRecord>,
    taxonomy: BTreeSet<ActivityLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestFormat {
    Csv,
    Jsonl,
}

impl Manifest {
    /// Builds a manifest, deriving the taxonomy and rejecting duplicate
    /// video ids.
    pub fn new(records: Vec<VideoRecord>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        let mut taxonomy = BTreeSet::new();
        for r in &records {
            if r.video_id.is_empty() {
                return Err(DatasetError::Parse("empty video_id".into()));
            }
            if r.frames_uri.is_empty() {
                return Err(DatasetError::Parse(format!(
                    "record {:?} has empty frames_uri",
                    r.video_id
                )));
            }
            if !seen.insert(r.video_id.clone()) {
                return Err(DatasetError::DuplicateId(r.video_id.clone()));
            }
            taxonomy.insert(r.label.clone());
        }
        Ok(Manifest { records, taxonomy })
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn taxonomy(&self) -> &BTreeSet<ActivityLabel> {
        &self.taxonomy
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn load(path: impl AsRef<Path>, format: ManifestFormat) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        match format {
            ManifestFormat::Csv => {
                let mut reader = csv::Reader::from_path(path)?;
                let mut records = Vec::new();
                for (i, row) in reader.deserialize::<VideoRecord>().enumerate() {
                    let rec = row.map_err(|e| {
                        DatasetError::Parse(format!("{}: row {}: {e}", path.display(), i + 2))
                    })?;
                    records.push(rec);
                }
                Manifest::new(records)
            }
            ManifestFormat::Jsonl => {
                let file = fs::File::open(path)?;
                let mut records = Vec::new();
                for (i, line) in BufReader::new(file).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: VideoRecord = serde_json::from_str(&line).map_err(|e| {
                        DatasetError::Parse(format!("{}: line {}: {e}", path.display(), i + 1))
                    })?;
                    records.push(rec);
                }
                Manifest::new(records)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: ManifestFormat) -> Result<(), DatasetError> {
        let path = path.as_ref();
        match format {
            ManifestFormat::Csv => {
                let mut writer = csv::Writer::from_path(path)?;
                for r in &self.records {
                    writer
                        .serialize(r)
                        .map_err(|e| DatasetError::Parse(e.to_string()))?;
                }
                writer.flush()?;
            }
            ManifestFormat::Jsonl => {
                let mut out = fs::File::create(path)?;
                for r in &self.records {
                    serde_json::to_writer(&mut out, r)
                        .map_err(|e| DatasetError::Parse(e.to_string()))?;
                    out.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }
}

/// Per-activity curated keyword lists. Keywords are stored lowercase in
/// their original listing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordLexicon {
    entries: BTreeMap<ActivityLabel, Vec<String>>,
}

impl KeywordLexicon {
    /// Validates and builds a lexicon. Each entry must be non-empty and
    /// each keyword non-empty, whitespace-free, and lowercased here.
    ///
    /// Exact repeats of a keyword inside one entry are preserved (the
    /// published Cook_Cleanup listing itself repeats "wipe", and repeats
    /// are harmless because match results are deduplicated). Two raw
    /// keywords that only collide after lowercasing are rejected as a
    /// curation error.
    pub fn new(
        raw: impl IntoIterator<Item = (ActivityLabel, Vec<String>)>,
    ) -> Result<Self, DatasetError> {
        let mut entries = BTreeMap::new();
        for (label, keywords) in raw {
            if keywords.is_empty() {
                return Err(DatasetError::EmptyEntry(label.as_str().to_string()));
            }
            let mut lowered: Vec<String> = Vec::with_capacity(keywords.len());
            let mut raw_by_lower: BTreeMap<String, String> = BTreeMap::new();
            for kw in keywords {
                if kw.is_empty() || kw.chars().any(char::is_whitespace) {
                    return Err(DatasetError::Parse(format!(
                        "keyword {kw:?} in entry {:?} is empty or contains whitespace",
                        label.as_str()
                    )));
                }
                let lower = kw.to_lowercase();
                match raw_by_lower.get(&lower) {
                    Some(prev) if *prev != kw => {
                        return Err(DatasetError::DuplicateKeyword {
                            label: label.as_str().to_string(),
                            keyword: lower,
                        });
                    }
                    _ => {
                        raw_by_lower.insert(lower.clone(), kw);
                    }
                }
                lowered.push(lower);
            }
            if entries.insert(label.clone(), lowered).is_some() {
                return Err(DatasetError::Parse(format!(
                    "duplicate lexicon entry for label {:?}",
                    label.as_str()
                )));
            }
        }
        Ok(KeywordLexicon { entries })
    }

    pub fn get(&self, label: &ActivityLabel) -> Option<&[String]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = &ActivityLabel> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a lexicon from a JSON file holding a single object that maps
    /// label to an array of keyword strings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path.as_ref())?;
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Parse(format!("{}: {e}", path.as_ref().display())))?;
        let mut pairs = Vec::with_capacity(raw.len());
        for (label, keywords) in raw {
            pairs.push((ActivityLabel::new(label)?, keywords));
        }
        KeywordLexicon::new(pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let json = serde_json::to_string_pretty(&self.entries)
            .map_err(|e| DatasetError::Parse(e.to_string()))?;
        fs::write(path, json + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionStatus {
    /// The caption contains at least one lexicon keyword for its label.
    Verified,
    /// Refinement ran out of attempts without landing a keyword.
    Exhausted,
}

/// A generated ground-truth caption plus its keyword hits and loop count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub label: ActivityLabel,
    pub caption: String,
    pub matched_keywords: Vec<String>,
    pub attempts: u32,
    pub status: CaptionStatus,
}

impl CaptionRecord {
    fn check_invariants(&self) -> Result<(), DatasetError> {
        if self.attempts == 0 {
            return Err(DatasetError::Parse(format!(
                "caption {:?}: attempts must be >= 1",
                self.video_id
            )));
        }
        let verified = matches!(self.status, CaptionStatus::Verified);
        if verified != !self.matched_keywords.is_empty() {
            return Err(DatasetError::Parse(format!(
                "caption {:?}: status {:?} inconsistent with {} matched keywords",
                self.video_id,
                self.status,
                self.matched_keywords.len()
            )));
        }
        Ok(())
    }
}

/// Writes caption records as JSONL, one object per line, in input order.
pub fn save_captions(
    records: &[CaptionRecord],
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let mut out = fs::File::create(path.as_ref())?;
    for r in records {
        r.check_invariants()?;
        serde_json::to_writer(&mut out, r).map_err(|e| DatasetError::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads caption records from JSONL, validating the status/keyword
/// invariant per row.
pub fn load_captions(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>, DatasetError> {
    let file = fs::File::open(path.as_ref())?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| {
            DatasetError::Parse(format!("{}: line {}: {e}", path.as_ref().display(), i + 1))
        })?;
        rec.check_invariants()?;
        records.push(rec);
    }
    Ok(records)
}

const SUFFIXES: [&str; 4] = ["ing", "ed", "es", "s"];

fn is_ascii_vowel(b: u8) -> bool {
    matches!(b, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn is_ascii_consonant(b: u8) -> bool {
    b.is_ascii_lowercase() && !is_ascii_vowel(b)
}

/// One stripping pass: removes the longest matching suffix that leaves a
/// stem of at least three characters, then repairs the stem the way a
/// light stemmer does (collapse a trailing double consonant other than
/// l/s/z, or restore a final "e" after a consonant-vowel-consonant
/// ending). Bare plural "s" is never stripped after "ss" and gets no
/// repair. Returns `None` when no suffix applies.
fn strip_suffix_once(token: &str) -> Option<String> {
    for suffix in SUFFIXES {
        let Some(stem) = token.strip_suffix(suffix) else {
            continue;
        };
        if stem.chars().count() < 3 {
            continue;
        }
        if suffix == "s" {
            if stem.ends_with('s') {
                continue;
            }
            return Some(stem.to_string());
        }
        let b = stem.as_bytes();
        let n = b.len();
        if n >= 2
            && b[n - 1] == b[n - 2]
            && is_ascii_consonant(b[n - 1])
            && !matches!(b[n - 1], b'l' | b's' | b'z')
        {
            return Some(stem[..n - 1].to_string());
        }
        if n >= 3
            && is_ascii_consonant(b[n - 1])
            && is_ascii_vowel(b[n - 2])
            && is_ascii_consonant(b[n - 3])
            && !matches!(b[n - 1], b'w' | b'x' | b'y')
        {
            return Some(format!("{stem}e"));
        }
        return Some(stem.to_string());
    }
    None
}

/// Normalizes one already-lowercased token by stripping inflectional
/// suffixes to a fixpoint, so the result is idempotent:
/// "wipes"/"wiping"/"wiped"/"wipe" all map to "wipe", "dishes" to "dish".
pub fn normalize_token(token: &str) -> String {
    let mut current = token.to_string();
    while let Some(next) = strip_suffix_once(&current) {
        current = next;
    }
    current
}

/// Lowercases, splits on non-alphanumeric boundaries, drops empty tokens,
/// and suffix-normalizes each token, preserving order.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(normalize_token)
        .collect()
}

/// Returns the lexicon keywords present in `caption`.
///
/// A keyword matches when it equals, or suffix-normalizes to, the
/// normalized form of any caption token; the keyword side is normalized
/// with the same rule. The result preserves lexicon order and contains no
/// duplicates. Keywords are expected lowercase already.
pub fn keyword_hits(caption: &str, keywords: &[String]) -> Vec<String> {
    let tokens: BTreeSet<String> = normalize_tokens(caption).into_iter().collect();
    let mut hits = Vec::new();
    let mut seen = BTreeSet::new();
    for kw in keywords {
        if seen.contains(kw.as_str()) {
            continue;
        }
        if tokens.contains(kw.as_str()) || tokens.contains(normalize_token(kw).as_str()) {
            seen.insert(kw.as_str());
            hits.push(kw.clone());
        }
    }
    hits
}

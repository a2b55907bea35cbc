//! Keyframe selection: frame differencing, brightness/entropy filtering,
//! and k-means over 64-bin intensity histograms, with a per-cluster
//! nearest-to-centroid representative.

use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image decode error in {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("frame dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("k = {k} exceeds the {available} available features")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no frames found in {0}")]
    NoFrames(String),
}

/// A single grayscale frame. RGB inputs are reduced on ingest with
/// luma = round(0.299 R + 0.587 G + 0.114 B).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    index: usize,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, KeyframeError> {
        if width == 0 || height == 0 {
            return Err(KeyframeError::InvalidFrame(
                "frame dimensions must be positive".into(),
            ));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(KeyframeError::InvalidFrame(format!(
                "expected {} pixels for {width}x{height}, got {}",
                (width as usize) * (height as usize),
                pixels.len()
            )));
        }
        Ok(Frame {
            index,
            width,
            height,
            pixels,
        })
    }

    pub fn from_rgb8(
        index: usize,
        width: u32,
        height: u32,
        rgb: &[u8],
    ) -> Result<Self, KeyframeError> {
        if rgb.len() != (width as usize) * (height as usize) * 3 {
            return Err(KeyframeError::InvalidFrame(format!(
                "expected {} rgb bytes for {width}x{height}, got {}",
                (width as usize) * (height as usize) * 3,
                rgb.len()
            )));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| {
                (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
                    .round() as u8
            })
            .collect();
        Frame::new(index, width, height, pixels)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Per-frame scores used by the candidate filter. The first frame's diff
/// is +inf so it is always a difference candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub diff: f64,
    pub brightness: f64,
    pub entropy: f64,
}

/// Mean absolute intensity difference between two equally sized frames.
pub fn frame_difference(a: &Frame, b: &Frame) -> Result<f64, KeyframeError> {
    if a.width != b.width || a.height != b.height {
        return Err(KeyframeError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| f64::from(x.abs_diff(y)))
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// Mean intensity.
pub fn brightness(f: &Frame) -> f64 {
    let sum: f64 = f.pixels.iter().map(|&p| f64::from(p)).sum();
    sum / f.pixels.len() as f64
}

/// Shannon entropy in bits of the 256-bin intensity distribution, with
/// 0 * log 0 taken as 0. Ranges over [0, 8].
pub fn entropy(f: &Frame) -> f64 {
    let mut counts = [0u64; 256];
    for &p in &f.pixels {
        counts[p as usize] += 1;
    }
    let n = f.pixels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn score_frames(frames: &[Frame]) -> Result<Vec<FrameScore>, KeyframeError> {
    let mut scores = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let diff = if i == 0 {
            f64::INFINITY
        } else {
            frame_difference(&frames[i - 1], f)?
        };
        scores.push(FrameScore {
            diff,
            brightness: brightness(f),
            entropy: entropy(f),
        });
    }
    Ok(scores)
}

/// Thresholds for the candidate filter plus the clustering seed. The
/// defaults are permissive and overridable from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    pub min_diff: f64,
    pub min_brightness: f64,
    pub max_brightness: f64,
    pub min_entropy: f64,
    pub seed: u64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        KeyframeConfig {
            min_diff: 2.0,
            min_brightness: 10.0,
            max_brightness: 245.0,
            min_entropy: 0.5,
            seed: 0,
        }
    }
}

/// Indices of frames that pass the diff/brightness/entropy thresholds.
/// Falls back to all indices when the filter would empty a non-empty
/// input, so a pipeline always has keyframe candidates.
pub fn candidate_filter(frames: &[Frame], cfg: &KeyframeConfig) -> Result<Vec<usize>, KeyframeError> {
    let scores = score_frames(frames)?;
    let kept: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.diff >= cfg.min_diff
                && s.brightness >= cfg.min_brightness
                && s.brightness <= cfg.max_brightness
                && s.entropy >= cfg.min_entropy
        })
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        Ok((0..frames.len()).collect())
    } else {
        Ok(kept)
    }
}

/// L1-normalized 64-bin intensity histogram; bin j covers [4j, 4j+4).
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFeature {
    bins: Vec<f64>,
}

impl HistogramFeature {
    pub fn new(bins: Vec<f64>) -> Result<Self, KeyframeError> {
        if bins.len() != 64 {
            return Err(KeyframeError::InvalidFrame(format!(
                "histogram feature needs 64 bins, got {}",
                bins.len()
            )));
        }
        if bins.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(KeyframeError::InvalidFrame(
                "histogram bins must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KeyframeError::InvalidFrame(format!(
                "histogram bins must sum to 1, got {sum}"
            )));
        }
        Ok(HistogramFeature { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }
}

pub fn histogram64(f: &Frame) -> HistogramFeature {
    let mut bins = vec![0.0f64; 64];
    for &p in &f.pixels {
        bins[(p >> 2) as usize] += 1.0;
    }
    let n = f.pixels.len() as f64;
    for b in &mut bins {
        *b /= n;
    }
    HistogramFeature { bins }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Result of Lloyd's algorithm. `inertia_trace` records the inertia after
/// every assignment pass; it is non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
}

const KMEANS_MAX_ITERS: usize = 100;

/// Seeded, deterministic k-means: k-means++ initialization from a
/// ChaCha8 stream keyed by `seed`, Lloyd iterations until assignments
/// are fixed (or 100 passes), ties broken by lowest index, and empty
/// clusters reseeded with the point farthest from its centroid.
pub fn kmeans(
    features: &[HistogramFeature],
    k: usize,
    seed: u64,
) -> Result<ClusterModel, KeyframeError> {
    if k == 0 {
        return Err(KeyframeError::InvalidK);
    }
    let n = features.len();
    if k > n {
        return Err(KeyframeError::KTooLarge { k, available: n });
    }
    let points: Vec<&[f64]> = features.iter().map(|f| f.bins.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut chosen: Vec<usize> = vec![(rng.next_u64() % n as u64) as usize];
    while chosen.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(p, points[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total > 0.0 {
            let target = uniform01(&mut rng) * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            chosen.push(pick);
        } else {
            // all points coincide with existing centroids
            let pick = (0..n).find(|i| !chosen.contains(i)).unwrap_or(0);
            chosen.push(pick);
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].to_vec()).collect();

    let mut assignments = vec![0usize; n];
    let mut prev: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
        }

        // reseed empty clusters with the globally farthest point; a zero
        // distance means every point already sits on a centroid and the
        // cluster stays empty (identical features collapse)
        for c in 0..k {
            if assignments.iter().any(|&a| a == c) {
                continue;
            }
            let mut far = 0usize;
            let mut far_d = 0.0;
            for (i, p) in points.iter().enumerate() {
                let d = sq_dist(p, &centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            if far_d > 0.0 {
                centroids[c] = points[far].to_vec();
                assignments[far] = c;
            }
        }

        let inertia: f64 = points
            .iter()
            .enumerate()
            .map(|(i, p)| sq_dist(p, &centroids[assignments[i]]))
            .sum();
        trace.push(inertia);

        if prev.as_deref() == Some(assignments.as_slice()) {
            break;
        }
        prev = Some(assignments.clone());

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&&[f64]> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, slot) in centroid.iter_mut().enumerate() {
                *slot = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }

    let inertia = *trace.last().expect("at least one iteration");
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
    })
}

/// Selects up to `k` representative frame indices: candidate filter,
/// 64-bin histograms, k-means with k clipped to the candidate count, then
/// per cluster the candidate nearest its centroid (ties to the lowest
/// frame index). Output is ascending and duplicate-free; identical scenes
/// may collapse to fewer than `k` frames.
pub fn select_keyframes(
    frames: &[Frame],
    k: usize,
    cfg: &KeyframeConfig,
) -> Result<Vec<usize>, KeyframeError> {
    if frames.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let candidates = candidate_filter(frames, cfg)?;
    let kk = k.min(candidates.len());
    let features: Vec<HistogramFeature> =
        candidates.iter().map(|&i| histogram64(&frames[i])).collect();
    let model = kmeans(&features, kk, cfg.seed)?;

    let mut picked = std::collections::BTreeSet::new();
    for c in 0..kk {
        let mut best: Option<(f64, usize)> = None;
        for (slot, &frame_idx) in candidates.iter().enumerate() {
            if model.assignments[slot] != c {
                continue;
            }
            let d = sq_dist(features[slot].bins(), &model.centroids[c]);
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && frame_idx < bi),
            };
            if better {
                best = Some((d, frame_idx));
            }
        }
        if let Some((_, frame_idx)) = best {
            picked.insert(frame_idx);
        }
    }
    Ok(picked.into_iter().collect())
}

/// Loads the still frames of one video directory: 8-bit PNG or PGM files
/// in lexicographic filename order. Returns the filenames alongside the
/// decoded frames.
pub fn load_frames_dir(dir: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Frame>), KeyframeError> {
    let dir = dir.as_ref();
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| {
            let lower = n.to_lowercase();
            lower.ends_with(".png") || lower.ends_with(".pgm")
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(KeyframeError::NoFrames(dir.display().to_string()));
    }
    let mut frames = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let path = dir.join(name);
        let img = image::open(&path).map_err(|source| KeyframeError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = img.to_rgb8();
        frames.push(Frame::from_rgb8(i, rgb.width(), rgb.height(), rgb.as_raw())?);
    }
    Ok((names, frames))
}

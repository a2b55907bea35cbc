//! Experiment protocols: the cross-subject and cross-view train/test
//! splits, per-class subset sampling, and Mean Class Accuracy.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ActivityLabel, Manifest, VideoRecord};

/// Subject ids whose videos form the cross-subject training side; the
/// remaining subjects are reserved for testing.
pub const CS_TRAIN_SUBJECTS: [u32; 11] = [3, 4, 6, 7, 9, 12, 13, 15, 17, 19, 25];

/// Cross-view evaluation always tests on camera 2.
pub const CV_TEST_CAMERA: u32 = 2;

pub const CV1_TRAIN_CAMERAS: [u32; 1] = [1];
pub const CV2_TRAIN_CAMERAS: [u32; 5] = [1, 3, 4, 6, 7];

/// On the reference dataset the camera-1 ∩ camera-2 label set has 19
/// classes; splits warn when the computed set differs.
pub const CV_EXPECTED_RESTRICTED_CLASSES: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Cs,
    Cv1,
    Cv2,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Cs => "cs",
            SplitName::Cv1 => "cv1",
            SplitName::Cv2 => "cv2",
        }
    }

    pub fn parse(name: &str) -> Option<SplitName> {
        match name.to_lowercase().as_str() {
            "cs" => Some(SplitName::Cs),
            "cv1" => Some(SplitName::Cv1),
            "cv2" => Some(SplitName::Cv2),
            _ => None,
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvVariant {
    Cv1,
    Cv2,
}

impl CvVariant {
    pub fn train_cameras(&self) -> &'static [u32] {
        match self {
            CvVariant::Cv1 => &CV1_TRAIN_CAMERAS,
            CvVariant::Cv2 => &CV2_TRAIN_CAMERAS,
        }
    }

    pub fn name(&self) -> SplitName {
        match self {
            CvVariant::Cv1 => SplitName::Cv1,
            CvVariant::Cv2 => SplitName::Cv2,
        }
    }
}

/// A resolved train/test split. `restricted_taxonomy` is present for
/// cross-view splits only; `flags` carries non-fatal anomalies such as
/// subjects listed in the protocol but absent from the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub name: SplitName,
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
    pub restricted_taxonomy: Option<BTreeSet<ActivityLabel>>,
    pub flags: Vec<String>,
}

/// Cross-subject split: train on the 11 protocol subjects, test on all
/// other subjects, no class restriction.
pub fn split_cs(manifest: &Manifest) -> SplitResult {
    let train_set: BTreeSet<u32> = CS_TRAIN_SUBJECTS.into_iter().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in manifest.records() {
        if train_set.contains(&r.subject_id) {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let mut flags = Vec::new();
    if manifest.is_empty() {
        flags.push("empty manifest".to_string());
    }
    let present: BTreeSet<u32> = manifest.records().iter().map(|r| r.subject_id).collect();
    for subject in CS_TRAIN_SUBJECTS {
        if !present.contains(&subject) {
            flags.push(format!("train subject {subject} absent from manifest"));
        }
    }
    if !manifest.is_empty() && test.is_empty() {
        flags.push("test split is empty".to_string());
    }
    SplitResult {
        name: SplitName::Cs,
        train,
        test,
        restricted_taxonomy: None,
        flags,
    }
}

/// Cross-view split: the admitted taxonomy is the set of labels seen on
/// both camera 1 and camera 2 in this manifest (computed, not
/// hard-coded); training cameras depend on the variant and camera 2 is
/// the test side.
pub fn split_cv(manifest: &Manifest, variant: CvVariant) -> SplitResult {
    let labels_on = |camera: u32| -> BTreeSet<ActivityLabel> {
        manifest
            .records()
            .iter()
            .filter(|r| r.camera_id == camera)
            .map(|r| r.label.clone())
            .collect()
    };
    let restricted: BTreeSet<ActivityLabel> = labels_on(1)
        .intersection(&labels_on(CV_TEST_CAMERA))
        .cloned()
        .collect();

    let train_cameras: BTreeSet<u32> = variant.train_cameras().iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in manifest.records() {
        if !restricted.contains(&r.label) {
            continue;
        }
        if r.camera_id == CV_TEST_CAMERA {
            test.push(r.clone());
        } else if train_cameras.contains(&r.camera_id) {
            train.push(r.clone());
        }
    }
    let mut flags = Vec::new();
    if manifest.is_empty() {
        flags.push("empty manifest".to_string());
    }
    if restricted.len() != CV_EXPECTED_RESTRICTED_CLASSES {
        flags.push(format!(
            "restricted taxonomy has {} classes, protocol expects {}",
            restricted.len(),
            CV_EXPECTED_RESTRICTED_CLASSES
        ));
    }
    SplitResult {
        name: variant.name(),
        train,
        test,
        restricted_taxonomy: Some(restricted),
        flags,
    }
}

fn per_label_rng(seed: u64, label: &ActivityLabel) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_str().as_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Uniform per-class sample without replacement: min(n, available)
/// records per label, chosen by a ChaCha8 stream keyed by (seed, label)
/// so each class's draw is independent of the others. The selection is
/// returned in manifest order; under-filled classes are flagged.
pub fn sample_per_class(
    manifest: &Manifest,
    n: usize,
    seed: u64,
) -> (Vec<VideoRecord>, Vec<String>) {
    let mut by_label: BTreeMap<&ActivityLabel, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records().iter().enumerate() {
        by_label.entry(&r.label).or_default().push(i);
    }
    let mut picked_indices = BTreeSet::new();
    let mut flags = Vec::new();
    for (label, indices) in by_label {
        if indices.len() <= n {
            if indices.len() < n {
                flags.push(format!(
                    "class {label}: only {} of {n} requested samples",
                    indices.len()
                ));
            }
            picked_indices.extend(indices);
            continue;
        }
        // partial Fisher-Yates: the first n slots end up holding the draw
        let mut pool = indices;
        let mut rng = per_label_rng(seed, label);
        for slot in 0..n {
            let remaining = pool.len() - slot;
            let offset = (rng.next_u64() % remaining as u64) as usize;
            pool.swap(slot, slot + offset);
        }
        picked_indices.extend(pool.into_iter().take(n));
    }
    let records = picked_indices
        .into_iter()
        .map(|i| manifest.records()[i].clone())
        .collect();
    (records, flags)
}

/// One scored sample, as consumed by [`mca`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledVerdict {
    pub video_id: String,
    pub label: ActivityLabel,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-class accuracies and their unweighted mean. Classes absent from
/// the verdicts are excluded from the mean, not scored zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCAReport {
    pub per_class: BTreeMap<ActivityLabel, ClassStats>,
    pub mca: f64,
}

pub fn mca(verdicts: &[LabeledVerdict]) -> MCAReport {
    let mut tallies: BTreeMap<ActivityLabel, (usize, usize)> = BTreeMap::new();
    for v in verdicts {
        let entry = tallies.entry(v.label.clone()).or_insert((0, 0));
        entry.0 += 1;
        if v.correct {
            entry.1 += 1;
        }
    }
    let per_class: BTreeMap<ActivityLabel, ClassStats> = tallies
        .into_iter()
        .map(|(label, (total, correct))| {
            (
                label,
                ClassStats {
                    total,
                    correct,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect();
    let mca = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|s| s.accuracy).sum::<f64>() / per_class.len() as f64
    };
    MCAReport { per_class, mca }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, label: &str, subject: u32, camera: u32) -> VideoRecord {
        VideoRecord {
            video_id: id.to_string(),
            label: ActivityLabel::new(label).unwrap(),
            subject_id: subject,
            camera_id: camera,
            frames_uri: format!("frames/{id}"),
        }
    }

    /// One video per subject for the 11 protocol subjects plus 7 others.
    fn eighteen_subject_manifest() -> Manifest {
        let mut subjects: Vec<u32> = CS_TRAIN_SUBJECTS.to_vec();
        subjects.extend([1, 2, 5, 8, 10, 11, 14]);
        let records = subjects
            .iter()
            .enumerate()
            .map(|(i, &s)| record(&format!("v{i}"), "A", s, 1))
            .collect();
        Manifest::new(records).unwrap()
    }

    #[test]
    fn cs_split_counts() {
        let split = split_cs(&eighteen_subject_manifest());
        assert_eq!(split.train.len(), 11);
        assert_eq!(split.test.len(), 7);
        assert!(split.flags.is_empty());
        let train_subjects: BTreeSet<u32> = split.train.iter().map(|r| r.subject_id).collect();
        assert_eq!(
            train_subjects,
            CS_TRAIN_SUBJECTS.into_iter().collect::<BTreeSet<u32>>()
        );
    }

    #[test]
    fn cs_split_missing_subjects_flagged() {
        let manifest =
            Manifest::new(vec![record("v1", "A", 3, 1), record("v2", "A", 4, 1)]).unwrap();
        let split = split_cs(&manifest);
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.test.len(), 0);
        assert!(!split.flags.is_empty());
    }

    #[test]
    fn cs_split_empty_manifest_flagged() {
        let manifest = Manifest::new(vec![]).unwrap();
        let split = split_cs(&manifest);
        assert!(split.train.is_empty());
        assert!(split.test.is_empty());
        assert!(split.flags.iter().any(|f| f.contains("empty manifest")));
    }

    fn cv_fixture() -> Manifest {
        Manifest::new(vec![
            record("a1", "A", 1, 1),
            record("a2", "A", 2, 2),
            record("a3", "A", 3, 3),
            record("b1", "B", 1, 1),
            record("b2", "B", 2, 2),
            record("c1", "C", 1, 1), // C never appears on camera 2
        ])
        .unwrap()
    }

    #[test]
    fn cv_restriction_is_computed_from_cameras() {
        let split = split_cv(&cv_fixture(), CvVariant::Cv1);
        let restricted = split.restricted_taxonomy.unwrap();
        let names: Vec<&str> = restricted.iter().map(|l| l.as_str()).collect();
        assert_eq!(names, vec!["A", "B"]);
        assert!(split.train.iter().all(|r| r.label.as_str() != "C"));
        assert!(split.test.iter().all(|r| r.label.as_str() != "C"));
    }

    #[test]
    fn cv1_trains_on_camera_one_only() {
        let split = split_cv(&cv_fixture(), CvVariant::Cv1);
        assert!(split.train.iter().all(|r| r.camera_id == 1));
        assert!(split.test.iter().all(|r| r.camera_id == 2));
        assert_eq!(split.train.len(), 2); // a1, b1
        assert_eq!(split.test.len(), 2); // a2, b2
    }

    #[test]
    fn cv2_trains_on_allowed_cameras_present() {
        let split = split_cv(&cv_fixture(), CvVariant::Cv2);
        let cameras: BTreeSet<u32> = split.train.iter().map(|r| r.camera_id).collect();
        assert_eq!(cameras, BTreeSet::from([1, 3]));
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn cv_flags_unexpected_restriction_size() {
        let split = split_cv(&cv_fixture(), CvVariant::Cv1);
        assert!(split
            .flags
            .iter()
            .any(|f| f.contains("restricted taxonomy has 2 classes")));
    }

    #[test]
    fn sample_fills_each_class() {
        let mut records = Vec::new();
        for class in 0..31 {
            for i in 0..12 {
                records.push(record(
                    &format!("c{class}v{i}"),
                    &format!("L{class:02}"),
                    1,
                    1,
                ));
            }
        }
        let manifest = Manifest::new(records).unwrap();
        let (picked, flags) = sample_per_class(&manifest, 10, 7);
        assert_eq!(picked.len(), 310);
        assert!(flags.is_empty());
    }

    #[test]
    fn sample_underfilled_class_flagged() {
        let records = (0..4)
            .map(|i| record(&format!("v{i}"), "A", 1, 1))
            .collect();
        let manifest = Manifest::new(records).unwrap();
        let (picked, flags) = sample_per_class(&manifest, 10, 7);
        assert_eq!(picked.len(), 4);
        assert_eq!(flags.len(), 1);
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let records = (0..40)
            .map(|i| record(&format!("v{i}"), if i % 2 == 0 { "A" } else { "B" }, 1, 1))
            .collect::<Vec<_>>();
        let manifest = Manifest::new(records).unwrap();
        let (a, _) = sample_per_class(&manifest, 5, 11);
        let (b, _) = sample_per_class(&manifest, 5, 11);
        assert_eq!(a, b);
        let (c, _) = sample_per_class(&manifest, 5, 12);
        assert_ne!(a, c, "different seeds should draw differently here");
    }

    fn verdict(label: &str, correct: bool) -> LabeledVerdict {
        LabeledVerdict {
            video_id: format!("{label}-{correct}"),
            label: ActivityLabel::new(label).unwrap(),
            correct,
        }
    }

    #[test]
    fn mca_hand_case() {
        let report = mca(&[
            verdict("A", true),
            verdict("A", false),
            verdict("B", true),
        ]);
        assert_eq!(report.per_class[&ActivityLabel::new("A").unwrap()].accuracy, 0.5);
        assert_eq!(report.per_class[&ActivityLabel::new("B").unwrap()].accuracy, 1.0);
        assert!((report.mca - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mca_all_correct() {
        let report = mca(&[verdict("A", true), verdict("B", true)]);
        assert_eq!(report.mca, 1.0);
    }

    #[test]
    fn mca_ignores_class_imbalance() {
        let mut verdicts = vec![verdict("A", true)];
        verdicts.extend((0..1000).map(|i| LabeledVerdict {
            video_id: format!("b{i}"),
            label: ActivityLabel::new("B").unwrap(),
            correct: true,
        }));
        assert_eq!(mca(&verdicts).mca, 1.0);
    }

    proptest! {
        #[test]
        fn cs_split_disjoint_exhaustive(
            subjects in proptest::collection::vec(0u32..30, 0..40),
        ) {
            let records: Vec<VideoRecord> = subjects
                .iter()
                .enumerate()
                .map(|(i, &s)| record(&format!("v{i}"), "A", s, 1))
                .collect();
            let manifest = Manifest::new(records).unwrap();
            let split = split_cs(&manifest);
            prop_assert_eq!(split.train.len() + split.test.len(), manifest.len());
            let train_set: BTreeSet<u32> = CS_TRAIN_SUBJECTS.into_iter().collect();
            for r in &split.train {
                prop_assert!(train_set.contains(&r.subject_id));
            }
            for r in &split.test {
                prop_assert!(!train_set.contains(&r.subject_id));
            }
        }

        #[test]
        fn cv_split_disjoint_exhaustive_over_admitted(
            cams in proptest::collection::vec(1u32..8, 1..40),
        ) {
            let records: Vec<VideoRecord> = cams
                .iter()
                .enumerate()
                .map(|(i, &c)| record(&format!("v{i}"), if i % 3 == 0 { "A" } else { "B" }, 1, c))
                .collect();
            let manifest = Manifest::new(records).unwrap();
            for variant in [CvVariant::Cv1, CvVariant::Cv2] {
                let split = split_cv(&manifest, variant);
                let restricted = split.restricted_taxonomy.clone().unwrap();
                let mut cameras_admitted: BTreeSet<u32> =
                    variant.train_cameras().iter().copied().collect();
                cameras_admitted.insert(CV_TEST_CAMERA);
                let admitted = manifest
                    .records()
                    .iter()
                    .filter(|r| restricted.contains(&r.label) && cameras_admitted.contains(&r.camera_id))
                    .count();
                prop_assert_eq!(split.train.len() + split.test.len(), admitted);
                for r in split.train.iter().chain(&split.test) {
                    prop_assert!(restricted.contains(&r.label));
                }
            }
        }

        #[test]
        fn mca_invariances(
            outcomes in proptest::collection::vec((0usize..4, proptest::bool::ANY), 1..60),
            rotation in 0usize..60,
        ) {
            let labels = ["A", "B", "C", "D"];
            let verdicts: Vec<LabeledVerdict> = outcomes
                .iter()
                .enumerate()
                .map(|(i, &(class, correct))| LabeledVerdict {
                    video_id: format!("v{i}"),
                    label: ActivityLabel::new(labels[class]).unwrap(),
                    correct,
                })
                .collect();
            let base = mca(&verdicts);

            // order invariance
            let mut rotated = verdicts.clone();
            let by = rotation % rotated.len();
            rotated.rotate_left(by);
            prop_assert!((mca(&rotated).mca - base.mca).abs() < 1e-12);

            // duplication invariance
            let mut doubled = verdicts.clone();
            doubled.extend(verdicts.iter().cloned());
            prop_assert!((mca(&doubled).mca - base.mca).abs() < 1e-12);

            // concatenation equals merged tallies
            let (left, right) = verdicts.split_at(verdicts.len() / 2);
            let whole: Vec<LabeledVerdict> =
                left.iter().chain(right.iter()).cloned().collect();
            prop_assert!((mca(&whole).mca - base.mca).abs() < 1e-12);
        }
    }
}

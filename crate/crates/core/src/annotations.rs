//! Per-annotator suspicion labels: median aggregation, Indeterminate
//! filtering and the binary Dangerous / NotDangerous mapping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cropping::BoundingBox;
use crate::error::{Error, Result};

/// Ordinal malignancy suspicion level assigned by a radiologist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum SuspicionLevel {
    HighlyUnlikely = 0,
    ModeratelyUnlikely = 1,
    Indeterminate = 2,
    ModeratelySuspicious = 3,
    HighlySuspicious = 4,
}

impl SuspicionLevel {
    pub const ALL: [SuspicionLevel; 5] = [
        SuspicionLevel::HighlyUnlikely,
        SuspicionLevel::ModeratelyUnlikely,
        SuspicionLevel::Indeterminate,
        SuspicionLevel::ModeratelySuspicious,
        SuspicionLevel::HighlySuspicious,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Result<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
            .ok_or(Error::InvalidSuspicionCode(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            SuspicionLevel::HighlyUnlikely => "HighlyUnlikely",
            SuspicionLevel::ModeratelyUnlikely => "ModeratelyUnlikely",
            SuspicionLevel::Indeterminate => "Indeterminate",
            SuspicionLevel::ModeratelySuspicious => "ModeratelySuspicious",
            SuspicionLevel::HighlySuspicious => "HighlySuspicious",
        }
    }
}

impl TryFrom<i64> for SuspicionLevel {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        Self::from_code(code)
    }
}

impl From<SuspicionLevel> for u8 {
    fn from(s: SuspicionLevel) -> u8 {
        s.code()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum BinaryLabel {
    NotDangerous = 0,
    Dangerous = 1,
}

impl BinaryLabel {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<i64> for BinaryLabel {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        match code {
            0 => Ok(BinaryLabel::NotDangerous),
            1 => Ok(BinaryLabel::Dangerous),
            other => Err(Error::InvalidSuspicionCode(other)),
        }
    }
}

impl From<BinaryLabel> for u8 {
    fn from(b: BinaryLabel) -> u8 {
        b.code()
    }
}

/// One annotated nodule as listed in a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoduleRecord {
    pub patient_id: String,
    pub scan_id: String,
    pub nodule_id: String,
    pub bbox: BoundingBox,
    #[serde(rename = "labels", alias = "annotator_labels")]
    pub annotator_labels: Vec<SuspicionLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

impl NoduleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.annotator_labels.is_empty() {
            return Err(Error::EmptyAnnotations);
        }
        self.bbox.validate()
    }

    /// `(scan_id, nodule_id)` key, unique within a manifest.
    pub fn key(&self) -> String {
        format!("{}/{}", self.scan_id, self.nodule_id)
    }
}

/// Median of the ordinal codes. Even counts take the upper of the two middle
/// values' midpoint, i.e. a half-integer median rounds toward higher
/// suspicion.
pub fn aggregate_annotations(labels: &[SuspicionLevel]) -> Result<SuspicionLevel> {
    if labels.is_empty() {
        return Err(Error::EmptyAnnotations);
    }
    let mut codes: Vec<i64> = labels.iter().map(|l| l.code() as i64).collect();
    codes.sort_unstable();
    let n = codes.len();
    let median = if n % 2 == 1 {
        codes[n / 2]
    } else {
        (codes[n / 2 - 1] + codes[n / 2] + 1) / 2
    };
    SuspicionLevel::from_code(median)
}

/// Pairs every record with its aggregated label, optionally dropping those
/// whose aggregate is Indeterminate. Input order is preserved.
pub fn filter_targets(records: &[NoduleRecord], keep_indeterminate: bool) -> Result<Vec<(NoduleRecord, SuspicionLevel)>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let level = aggregate_annotations(&r.annotator_labels)?;
        if keep_indeterminate || level != SuspicionLevel::Indeterminate {
            out.push((r.clone(), level));
        }
    }
    Ok(out)
}

pub fn binarize_label(s: SuspicionLevel) -> Result<BinaryLabel> {
    match s {
        SuspicionLevel::HighlyUnlikely | SuspicionLevel::ModeratelyUnlikely => Ok(BinaryLabel::NotDangerous),
        SuspicionLevel::ModeratelySuspicious | SuspicionLevel::HighlySuspicious => Ok(BinaryLabel::Dangerous),
        SuspicionLevel::Indeterminate => Err(Error::NoBinaryMapping),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<NoduleRecord>> {
    let records: Vec<NoduleRecord> = crate::io::read_json(path.as_ref())?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn save_manifest(records: &[NoduleRecord], path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_json(path.as_ref(), &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SuspicionLevel::*;

    fn levels(codes: &[i64]) -> Vec<SuspicionLevel> {
        codes.iter().map(|&c| SuspicionLevel::from_code(c).unwrap()).collect()
    }

    #[test]
    fn median_examples() {
        assert_eq!(aggregate_annotations(&levels(&[1, 3, 4])).unwrap(), ModeratelySuspicious);
        assert_eq!(aggregate_annotations(&levels(&[4])).unwrap(), HighlySuspicious);
        assert_eq!(aggregate_annotations(&levels(&[0, 1])).unwrap(), ModeratelyUnlikely);
        assert_eq!(aggregate_annotations(&levels(&[1, 3])).unwrap(), Indeterminate);
        assert_eq!(aggregate_annotations(&levels(&[0, 0, 4, 4])).unwrap(), Indeterminate);
        assert!(matches!(aggregate_annotations(&[]), Err(Error::EmptyAnnotations)));
    }

    #[test]
    fn binary_mapping() {
        assert_eq!(binarize_label(HighlyUnlikely).unwrap(), BinaryLabel::NotDangerous);
        assert_eq!(binarize_label(ModeratelyUnlikely).unwrap(), BinaryLabel::NotDangerous);
        assert_eq!(binarize_label(ModeratelySuspicious).unwrap(), BinaryLabel::Dangerous);
        assert_eq!(binarize_label(HighlySuspicious).unwrap(), BinaryLabel::Dangerous);
        let err = binarize_label(Indeterminate).unwrap_err();
        assert!(err.to_string().contains("no binary mapping"));
    }

    fn record(id: &str, codes: &[i64]) -> NoduleRecord {
        NoduleRecord {
            patient_id: "p".into(),
            scan_id: "s".into(),
            nodule_id: id.into(),
            bbox: BoundingBox::new([0, 0, 0, 4, 4, 4]).unwrap(),
            annotator_labels: levels(codes),
            fold: None,
        }
    }

    #[test]
    fn filtering_preserves_order() {
        let recs = vec![record("a", &[0]), record("b", &[2, 2]), record("c", &[1, 3]), record("d", &[4, 3])];
        let kept = filter_targets(&recs, false).unwrap();
        let ids: Vec<_> = kept.iter().map(|(r, _)| r.nodule_id.as_str()).collect();
        assert_eq!(ids, ["a", "d"]);
        assert_eq!(filter_targets(&recs, true).unwrap().len(), 4);
        assert!(filter_targets(&[], false).unwrap().is_empty());
    }

    #[test]
    fn manifest_json_shape() {
        let json = r#"[{"patient_id":"p1","scan_id":"s1","nodule_id":"n1",
            "bbox":[1,2,3,5,6,7],"labels":[1,3,4]}]"#;
        let recs: Vec<NoduleRecord> = serde_json::from_str(json).unwrap();
        assert_eq!(recs[0].annotator_labels, vec![ModeratelyUnlikely, ModeratelySuspicious, HighlySuspicious]);
        assert_eq!(recs[0].bbox.as_array(), [1, 2, 3, 5, 6, 7]);
        let back = serde_json::to_value(&recs).unwrap();
        assert_eq!(back[0]["labels"], serde_json::json!([1, 3, 4]));
        assert!(serde_json::from_str::<Vec<NoduleRecord>>(&json.replace("[1,3,4]", "[7]")).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_labels() -> impl Strategy<Value = Vec<SuspicionLevel>> {
            prop::collection::vec((0i64..5).prop_map(|c| SuspicionLevel::from_code(c).unwrap()), 1..8)
        }

        proptest! {
            #[test]
            fn median_bounded(labels in arb_labels()) {
                let m = aggregate_annotations(&labels).unwrap();
                prop_assert!(*labels.iter().min().unwrap() <= m && m <= *labels.iter().max().unwrap());
            }

            #[test]
            fn median_of_repeats(code in 0i64..5, k in 1usize..6) {
                let l = SuspicionLevel::from_code(code).unwrap();
                prop_assert_eq!(aggregate_annotations(&vec![l; k]).unwrap(), l);
            }

            #[test]
            fn raising_a_label_never_lowers_target(labels in arb_labels(), which in any::<prop::sample::Index>()) {
                let i = which.index(labels.len());
                let before = aggregate_annotations(&labels).unwrap();
                let mut raised = labels.clone();
                raised[i] = SuspicionLevel::from_code((raised[i].code() as i64 + 1).min(4)).unwrap();
                let after = aggregate_annotations(&raised).unwrap();
                prop_assert!(after >= before);
                if let (Ok(b0), Ok(b1)) = (binarize_label(before), binarize_label(after)) {
                    prop_assert!(b1 >= b0);
                }
            }
        }
    }
}

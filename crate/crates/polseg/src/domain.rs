//! Core vocabulary and sequence/segment representations shared by all modules.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Control direction of a pattern-of-life task. East-west (longitude) and
/// north-south (latitude/inclination) maneuvers are modeled independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    EW,
    NS,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::EW => "EW",
            Direction::NS => "NS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EW" => Ok(Direction::EW),
            "NS" => Ok(Direction::NS),
            other => Err(Error::InvalidConfig(format!(
                "unknown direction '{other}' (expected EW or NS)"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered class vocabulary for one direction.
///
/// Class order is a stable contract: serialized class indices never depend on
/// insertion order, only on the order given at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoLVocab {
    pub direction: Direction,
    classes: Vec<String>,
}

impl PoLVocab {
    pub fn new(direction: Direction, classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidVocab(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        for (i, a) in classes.iter().enumerate() {
            if classes[..i].contains(a) {
                return Err(Error::InvalidVocab(format!("duplicate class name '{a}'")));
            }
        }
        Ok(PoLVocab { direction, classes })
    }

    /// Default east-west vocabulary: initial drift, adjust drift, and the
    /// three station-keeping propulsion types.
    pub fn default_ew() -> Self {
        PoLVocab {
            direction: Direction::EW,
            classes: ["ID", "AD", "EK", "CK", "HK"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Default north-south vocabulary (4 classes). Which station-keeping
    /// types appear in NS is a configuration choice, never hard-coded in
    /// algorithms; this is only the default.
    pub fn default_ns() -> Self {
        PoLVocab {
            direction: Direction::NS,
            classes: ["ID", "AD", "CK", "EK"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn default_for(direction: Direction) -> Self {
        match direction {
            Direction::EW => Self::default_ew(),
            Direction::NS => Self::default_ns(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_name(&self, index: usize) -> Result<&str> {
        self.classes
            .get(index)
            .map(|s| s.as_str())
            .ok_or(Error::ClassOutOfRange {
                index,
                size: self.classes.len(),
            })
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidVocab(format!("unknown class name '{name}'")))
    }
}

/// A multivariate orbital feature series for one object.
///
/// `values` is T x d; timestamps are strictly increasing epoch seconds on a
/// nominal 2-hour grid. No NaN/Inf survives construction: missing values must
/// be resolved by the data module first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSeries {
    pub object_id: String,
    pub timestamps: Vec<i64>,
    #[serde(with = "crate::domain::array2_serde")]
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
}

impl OrbitSeries {
    pub fn new(
        object_id: String,
        timestamps: Vec<i64>,
        values: Array2<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if timestamps.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps but {} value rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        if feature_names.len() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature names but {} value columns",
                feature_names.len(),
                values.ncols()
            )));
        }
        if timestamps.is_empty() {
            return Err(Error::EmptyInput(format!("series {object_id} has no rows")));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::ShapeMismatch(format!(
                    "timestamps not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series {object_id} values")));
        }
        Ok(OrbitSeries {
            object_id,
            timestamps,
            values,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Select a subset of features by name, preserving the given order.
    pub fn select_features(&self, names: &[String]) -> Result<OrbitSeries> {
        let mut missing = Vec::new();
        let mut cols = Vec::new();
        for n in names {
            match self.feature_names.iter().position(|f| f == n) {
                Some(i) => cols.push(i),
                None => missing.push(n.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingFeatures(missing));
        }
        let mut values = Array2::zeros((self.len(), cols.len()));
        for (j, &c) in cols.iter().enumerate() {
            values.column_mut(j).assign(&self.values.column(c));
        }
        OrbitSeries::new(
            self.object_id.clone(),
            self.timestamps.clone(),
            values,
            names.to_vec(),
        )
    }
}

/// Per-timestep class labels for one object and direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeq {
    pub object_id: String,
    pub direction: Direction,
    pub labels: Vec<usize>,
}

impl LabelSeq {
    pub fn new(object_id: String, direction: Direction, labels: Vec<usize>) -> Self {
        LabelSeq {
            object_id,
            direction,
            labels,
        }
    }

    pub fn validate(&self, vocab: &PoLVocab) -> Result<()> {
        if self.direction != vocab.direction {
            return Err(Error::VocabMismatch(format!(
                "labels are {} but vocab is {}",
                self.direction, vocab.direction
            )));
        }
        let c = vocab.num_classes();
        for &l in &self.labels {
            if l >= c {
                return Err(Error::ClassOutOfRange { index: l, size: c });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One maximal run of a single class: half-open timestep interval
/// `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class_index: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Run-length-encoded form of a label sequence. Segments tile `[0, T)`
/// exactly and adjacent segments always have different classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
}

impl SegmentList {
    /// Class sequence with run lengths removed (one symbol per segment).
    pub fn class_string(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.class_index).collect()
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }
}

/// Run-length encode a label sequence into maximal same-class segments.
pub fn rle_encode(labels: &LabelSeq) -> Result<SegmentList> {
    if labels.labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let mut segments = Vec::new();
    let mut start = 0usize;
    for t in 1..labels.labels.len() {
        if labels.labels[t] != labels.labels[start] {
            segments.push(Segment {
                class_index: labels.labels[start],
                start,
                end: t,
            });
            start = t;
        }
    }
    segments.push(Segment {
        class_index: labels.labels[start],
        start,
        end: labels.labels.len(),
    });
    Ok(SegmentList { segments })
}

/// Inverse of [`rle_encode`]. Errors name the first gap, overlap, or
/// non-maximal adjacent run.
pub fn rle_decode(
    segments: &SegmentList,
    t_len: usize,
    object_id: String,
    direction: Direction,
) -> Result<LabelSeq> {
    let mut labels = Vec::with_capacity(t_len);
    let mut cursor = 0usize;
    let mut prev_class: Option<usize> = None;
    for seg in &segments.segments {
        if seg.start > cursor {
            return Err(Error::TilingViolation {
                at: cursor,
                kind: format!("gap before segment starting at {}", seg.start),
            });
        }
        if seg.start < cursor {
            return Err(Error::TilingViolation {
                at: seg.start,
                kind: format!("overlap: segment starts at {} but cursor is {}", seg.start, cursor),
            });
        }
        if seg.end <= seg.start {
            return Err(Error::TilingViolation {
                at: seg.start,
                kind: "empty or inverted segment".into(),
            });
        }
        if prev_class == Some(seg.class_index) {
            return Err(Error::TilingViolation {
                at: seg.start,
                kind: "non-maximal adjacent runs of the same class".into(),
            });
        }
        labels.extend(std::iter::repeat(seg.class_index).take(seg.len()));
        cursor = seg.end;
        prev_class = Some(seg.class_index);
    }
    if cursor != t_len {
        return Err(Error::TilingViolation {
            at: cursor,
            kind: format!("segments end at {cursor} but T = {t_len}"),
        });
    }
    Ok(LabelSeq::new(object_id, direction, labels))
}

/// One-hot encode class indices into a T x C matrix (row-stochastic).
pub fn onehot_indices(labels: &[usize], num_classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (t, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::ClassOutOfRange {
                index: l,
                size: num_classes,
            });
        }
        out[[t, l]] = 1.0;
    }
    Ok(out)
}

/// One-hot encode a label sequence under a vocabulary.
pub fn onehot(labels: &LabelSeq, vocab: &PoLVocab) -> Result<Array2<f64>> {
    labels.validate(vocab)?;
    onehot_indices(&labels.labels, vocab.num_classes())
}

/// serde helpers for `Array2<f64>` as `{ shape: [r, c], data: [...] }`.
pub mod array2_serde {
    use ndarray::Array2;
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        shape: [usize; 2],
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data)
            .map_err(|e| D::Error::custom(format!("bad array shape: {e}")))
    }
}

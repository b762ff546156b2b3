//! Evaluation metrics: frame accuracy, segmental edit score, and segmental
//! F1 over IoU thresholds, plus dataset-level aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{rle_encode, LabelSeq, PoLVocab, Segment};
use crate::error::{Error, Result};

/// Frame-level accuracy in percent.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("accuracy over empty sequences".into()));
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Levenshtein distance between two symbol sequences (insert/delete/substitute,
/// all cost 1), computed with the standard DP recurrence.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let n = a.len();
    let m = b.len();
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Granularity for the edit score's alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditGranularity {
    /// Run-length-encoded segment class strings (the segmentation-literature
    /// convention; default).
    Segments,
    /// Raw per-frame label sequences.
    Frames,
}

/// Normalized Levenshtein similarity in percent between the two sequences'
/// run-length-encoded segment strings.
pub fn edit_score(truth: &LabelSeq, pred: &LabelSeq) -> Result<f64> {
    edit_score_with(truth, pred, EditGranularity::Segments)
}

pub fn edit_score_with(
    truth: &LabelSeq,
    pred: &LabelSeq,
    granularity: EditGranularity,
) -> Result<f64> {
    if truth.is_empty() || pred.is_empty() {
        return Err(Error::EmptyInput("edit score over empty sequences".into()));
    }
    let (a, b) = match granularity {
        EditGranularity::Segments => (
            rle_encode(truth)?.class_string(),
            rle_encode(pred)?.class_string(),
        ),
        EditGranularity::Frames => (truth.labels.clone(), pred.labels.clone()),
    };
    let e = levenshtein(&a, &b);
    Ok((1.0 - e as f64 / a.len().max(b.len()) as f64) * 100.0)
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.end.max(b.end) - a.start.min(b.start);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Raw true/false positive and false negative counts for one sequence pair at
/// one IoU threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn add(&mut self, other: &MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Precision/recall/F1 in percent; 0/0 is defined as 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            100.0 * self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            100.0 * self.tp as f64 / (self.tp + self.fn_) as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
}

/// Segment matching at threshold `tau`: each predicted segment is greedily
/// matched to its best-IoU unmatched ground-truth segment of the same class;
/// it is a true positive if that IoU reaches `tau`, otherwise a false
/// positive. Ground-truth segments left unmatched are false negatives. A
/// ground-truth segment can absorb only one true positive; extra predictions
/// over its span count as false positives.
pub fn match_segments(
    truth: &[Segment],
    pred: &[Segment],
    tau: f64,
    num_classes: usize,
) -> (MatchCounts, Vec<MatchCounts>) {
    let mut per_class = vec![MatchCounts::default(); num_classes];
    let mut gt_used = vec![false; truth.len()];
    for p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in truth.iter().enumerate() {
            if gt_used[gi] || g.class_index != p.class_index {
                continue;
            }
            let v = iou(g, p);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= tau => {
                gt_used[gi] = true;
                per_class[p.class_index].tp += 1;
            }
            _ => per_class[p.class_index].fp += 1,
        }
    }
    for (gi, g) in truth.iter().enumerate() {
        if !gt_used[gi] {
            per_class[g.class_index].fn_ += 1;
        }
    }
    let mut pooled = MatchCounts::default();
    for c in &per_class {
        pooled.add(c);
    }
    (pooled, per_class)
}

/// Segmental F1 at IoU threshold `tau` for one sequence pair, pooled over
/// classes. Returns (precision, recall, f1) in percent.
pub fn segmental_f1(truth: &LabelSeq, pred: &LabelSeq, tau: f64) -> Result<(f64, f64, f64)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau must be in (0,1), got {tau}")));
    }
    let gt = rle_encode(truth)?;
    let pr = rle_encode(pred)?;
    let c = truth
        .labels
        .iter()
        .chain(pred.labels.iter())
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let (pooled, _) = match_segments(&gt.segments, &pr.segments, tau, c);
    Ok(pooled.prf())
}

/// Per-class precision/recall/F1 entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

/// Aggregated evaluation over a set of objects for one direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: String,
    pub n_objects: usize,
    /// Frame accuracy, averaged per object then macro-averaged, percent.
    pub acc: f64,
    /// Edit score, averaged per object then macro-averaged, percent.
    pub edit: f64,
    /// Micro-pooled F1 per IoU threshold (TP/FP/FN pooled over objects and
    /// classes before computing P/R/F1). Keys are formatted thresholds.
    pub f1: BTreeMap<String, f64>,
    /// Macro average over classes of the per-class F1, per threshold.
    pub f1_macro: BTreeMap<String, f64>,
    /// Per-class precision/recall/F1, per threshold, pooled over objects.
    pub per_class: BTreeMap<String, BTreeMap<String, ClassScores>>,
    pub edit_granularity: EditGranularity,
    pub taus: Vec<f64>,
}

impl EvalReport {
    pub fn f1_at(&self, tau: f64) -> Option<f64> {
        self.f1.get(&format_tau(tau)).copied()
    }
}

pub fn format_tau(tau: f64) -> String {
    format!("{tau:.2}")
}

pub const DEFAULT_TAUS: [f64; 3] = [0.10, 0.25, 0.50];

/// Evaluate predictions against ground truth for a set of objects.
///
/// `pairs` maps object id -> (truth, prediction); every truth object must be
/// covered by a prediction of identical length.
pub fn evaluate(
    pairs: &[(LabelSeq, LabelSeq)],
    vocab: &PoLVocab,
    taus: &[f64],
    granularity: EditGranularity,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no objects to evaluate".into()));
    }
    let c = vocab.num_classes();
    let mut acc_sum = 0.0;
    let mut edit_sum = 0.0;
    let mut pooled: Vec<MatchCounts> = vec![MatchCounts::default(); taus.len()];
    let mut per_class: Vec<Vec<MatchCounts>> = vec![vec![MatchCounts::default(); c]; taus.len()];

    for (truth, pred) in pairs {
        truth.validate(vocab)?;
        pred.validate(vocab)?;
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                got: pred.len(),
            });
        }
        acc_sum += accuracy(&truth.labels, &pred.labels)?;
        edit_sum += edit_score_with(truth, pred, granularity)?;
        let gt = rle_encode(truth)?;
        let pr = rle_encode(pred)?;
        for (k, &tau) in taus.iter().enumerate() {
            let (pool, by_class) = match_segments(&gt.segments, &pr.segments, tau, c);
            pooled[k].add(&pool);
            for (ci, cc) in by_class.iter().enumerate() {
                per_class[k][ci].add(cc);
            }
        }
    }

    let n = pairs.len() as f64;
    let mut f1 = BTreeMap::new();
    let mut f1_macro = BTreeMap::new();
    let mut per_class_out = BTreeMap::new();
    for (k, &tau) in taus.iter().enumerate() {
        let key = format_tau(tau);
        let (_, _, pooled_f1) = pooled[k].prf();
        f1.insert(key.clone(), pooled_f1);
        let mut macro_sum = 0.0;
        let mut class_map = BTreeMap::new();
        for ci in 0..c {
            let (p, r, f) = per_class[k][ci].prf();
            macro_sum += f;
            class_map.insert(
                vocab.class_name(ci)?.to_string(),
                ClassScores {
                    precision: p,
                    recall: r,
                    f1: f,
                    counts: per_class[k][ci],
                },
            );
        }
        f1_macro.insert(key.clone(), macro_sum / c as f64);
        per_class_out.insert(key, class_map);
    }

    Ok(EvalReport {
        direction: vocab.direction.as_str().to_string(),
        n_objects: pairs.len(),
        acc: acc_sum / n,
        edit: edit_sum / n,
        f1,
        f1_macro,
        per_class: per_class_out,
        edit_granularity: granularity,
        taus: taus.to_vec(),
    })
}

/// Render an aligned-column text table of the report's headline numbers.
pub fn render_table(report: &EvalReport, per_class: bool) -> String {
    let mut out = String::new();
    let mut header = format!("{:<10} {:>8} {:>8}", "direction", "acc", "edit");
    for tau in &report.taus {
        header.push_str(&format!(" {:>8}", format!("f1@{}", format_tau(*tau))));
    }
    out.push_str(&header);
    out.push('\n');
    let mut row = format!(
        "{:<10} {:>8.2} {:>8.2}",
        report.direction, report.acc, report.edit
    );
    for tau in &report.taus {
        row.push_str(&format!(" {:>8.2}", report.f1_at(*tau).unwrap_or(0.0)));
    }
    out.push_str(&row);
    out.push('\n');
    if per_class {
        for (tau, classes) in &report.per_class {
            out.push_str(&format!("per-class @ tau={tau}\n"));
            out.push_str(&format!(
                "  {:<8} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5}\n",
                "class", "precision", "recall", "f1", "tp", "fp", "fn"
            ));
            for (name, s) in classes {
                out.push_str(&format!(
                    "  {:<8} {:>9.2} {:>9.2} {:>9.2} {:>5} {:>5} {:>5}\n",
                    name, s.precision, s.recall, s.f1, s.counts.tp, s.counts.fp, s.counts.fn_
                ));
            }
        }
    }
    out
}

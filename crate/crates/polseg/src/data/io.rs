//! On-disk interchange formats.
//!
//! - Positional files: one CSV per object, header `timestamp,<features...>`,
//!   RFC 3339 timestamps, one row per grid step.
//! - Label file: CSV `object_id,time_index,direction,class_name` listing
//!   per-direction transitions; dense labels are reconstructed by forward
//!   fill from each transition to the next.
//! - Prediction files: CSV `object_id,time_index,class_name`, dense.
//! - Interval table: CSV `interval_hours,weight` for empirical downsampling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat};
use ndarray::Array2;

use crate::data::DatasetObject;
use crate::domain::{rle_encode, Direction, LabelSeq, OrbitSeries, PoLVocab};
use crate::error::{Error, Result};

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_positional_csv(path: &Path, series: &OrbitSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.feature_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e.to_string()))?;
    for (t, &ts) in series.timestamps.iter().enumerate() {
        let stamp = DateTime::from_timestamp(ts, 0)
            .ok_or_else(|| csv_err(path, format!("timestamp {ts} out of range")))?
            .to_rfc3339_opts(SecondsFormat::Secs, true);
        let mut rec = vec![stamp];
        for v in series.values.row(t) {
            rec.push(format!("{v:.10}"));
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| csv_err(path, e.to_string()))?;
    Ok(())
}

/// Read a positional CSV. `feature_map` optionally renames on-disk column
/// names to canonical feature names (canonical -> on-disk).
pub fn read_positional_csv(
    path: &Path,
    feature_map: Option<&BTreeMap<String, String>>,
) -> Result<OrbitSeries> {
    let object_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| csv_err(path, "cannot derive object id from filename"))?
        .to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("timestamp") {
        return Err(csv_err(path, "first column must be 'timestamp'"));
    }
    let mut names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    if let Some(map) = feature_map {
        let reverse: BTreeMap<&str, &str> = map
            .iter()
            .map(|(canon, actual)| (actual.as_str(), canon.as_str()))
            .collect();
        for n in &mut names {
            if let Some(&canon) = reverse.get(n.as_str()) {
                *n = canon.to_string();
            }
        }
    }
    let mut timestamps = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e.to_string()))?;
        if rec.len() != names.len() + 1 {
            return Err(csv_err(
                path,
                format!("row {} has {} fields, expected {}", timestamps.len() + 2, rec.len(), names.len() + 1),
            ));
        }
        let stamp = DateTime::parse_from_rfc3339(rec.get(0).unwrap())
            .map_err(|e| csv_err(path, format!("bad timestamp '{}': {e}", rec.get(0).unwrap())))?;
        timestamps.push(stamp.timestamp());
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(path, format!("bad numeric field '{field}'")))?;
            rows.push(v);
        }
    }
    let t_len = timestamps.len();
    let values = Array2::from_shape_vec((t_len, names.len()), rows)
        .map_err(|e| csv_err(path, e.to_string()))?;
    OrbitSeries::new(object_id, timestamps, values, names)
}

/// One row of the transition-format label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub object_id: String,
    pub time_index: usize,
    pub direction: Direction,
    pub class_name: String,
}

pub fn write_label_transitions(
    path: &Path,
    objects: &[DatasetObject],
    vocab_ew: &PoLVocab,
    vocab_ns: &PoLVocab,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    w.write_record(["object_id", "time_index", "direction", "class_name"])
        .map_err(|e| csv_err(path, e.to_string()))?;
    for obj in objects {
        for (labels, vocab) in [(&obj.labels_ew, vocab_ew), (&obj.labels_ns, vocab_ns)] {
            let segs = rle_encode(labels)?;
            for seg in &segs.segments {
                w.write_record([
                    obj.series.object_id.as_str(),
                    &seg.start.to_string(),
                    vocab.direction.as_str(),
                    vocab.class_name(seg.class_index)?,
                ])
                .map_err(|e| csv_err(path, e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| csv_err(path, e.to_string()))?;
    Ok(())
}

pub fn read_label_transitions(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e.to_string()))?;
        if rec.len() != 4 {
            return Err(csv_err(path, format!("expected 4 columns, got {}", rec.len())));
        }
        let time_index: usize = rec.get(1).unwrap().trim().parse().map_err(|_| {
            csv_err(
                path,
                format!("bad time_index '{}' (must be a non-negative integer grid index)", rec.get(1).unwrap()),
            )
        })?;
        rows.push(LabelRow {
            object_id: rec.get(0).unwrap().to_string(),
            time_index,
            direction: Direction::parse(rec.get(2).unwrap())?,
            class_name: rec.get(3).unwrap().to_string(),
        });
    }
    Ok(rows)
}

/// Forward-fill transition rows for one object/direction into dense labels
/// of length `t_len`.
pub fn dense_labels_from_transitions(
    rows: &[LabelRow],
    object_id: &str,
    vocab: &PoLVocab,
    t_len: usize,
) -> Result<LabelSeq> {
    let mut transitions: Vec<&LabelRow> = rows
        .iter()
        .filter(|r| r.object_id == object_id && r.direction == vocab.direction)
        .collect();
    if transitions.is_empty() {
        return Err(Error::BadTransition {
            object_id: object_id.to_string(),
            reason: format!("no {} transitions found", vocab.direction),
        });
    }
    transitions.sort_by_key(|r| r.time_index);
    if transitions[0].time_index != 0 {
        return Err(Error::BadTransition {
            object_id: object_id.to_string(),
            reason: format!(
                "first transition at index {}, expected the initial state at 0",
                transitions[0].time_index
            ),
        });
    }
    let mut labels = vec![0usize; t_len];
    for (i, row) in transitions.iter().enumerate() {
        if row.time_index >= t_len {
            return Err(Error::BadTransition {
                object_id: object_id.to_string(),
                reason: format!("transition index {} is off the grid (T = {t_len})", row.time_index),
            });
        }
        if i > 0 && row.time_index == transitions[i - 1].time_index {
            return Err(Error::BadTransition {
                object_id: object_id.to_string(),
                reason: format!("duplicate transition at index {}", row.time_index),
            });
        }
        let class = vocab.class_index(&row.class_name)?;
        let end = transitions
            .get(i + 1)
            .map(|n| n.time_index)
            .unwrap_or(t_len);
        for slot in labels.iter_mut().take(end).skip(row.time_index) {
            *slot = class;
        }
    }
    Ok(LabelSeq::new(object_id.to_string(), vocab.direction, labels))
}

/// Write a dataset in the SPLID-compatible layout:
/// `<dir>/positional/<object_id>.csv` plus `<dir>/labels.csv`.
pub fn write_dataset(
    dir: &Path,
    objects: &[DatasetObject],
    vocab_ew: &PoLVocab,
    vocab_ns: &PoLVocab,
) -> Result<()> {
    let pos_dir = dir.join("positional");
    fs::create_dir_all(&pos_dir).map_err(|e| Error::IoPath {
        path: pos_dir.clone(),
        source: e,
    })?;
    for obj in objects {
        let path = pos_dir.join(format!("{}.csv", obj.series.object_id));
        write_positional_csv(&path, &obj.series)?;
    }
    write_label_transitions(&dir.join("labels.csv"), objects, vocab_ew, vocab_ns)?;
    Ok(())
}

/// Locate the positional directory for a dataset root: accepts either the
/// root (containing `positional/`) or the positional directory itself.
pub fn positional_dir(data_dir: &Path) -> PathBuf {
    let nested = data_dir.join("positional");
    if nested.is_dir() {
        nested
    } else {
        data_dir.to_path_buf()
    }
}

/// Load a dataset of positional CSVs plus a transition label file. Selects
/// `features` (erroring with the missing names) and reconstructs dense
/// labels for both directions.
pub fn load_splid(
    data_dir: &Path,
    label_file: &Path,
    vocab_ew: &PoLVocab,
    vocab_ns: &PoLVocab,
    feature_map: Option<&BTreeMap<String, String>>,
    features: &[String],
) -> Result<Vec<DatasetObject>> {
    let pos_dir = positional_dir(data_dir);
    let mut paths: Vec<PathBuf> = fs::read_dir(&pos_dir)
        .map_err(|e| Error::IoPath {
            path: pos_dir.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no positional CSV files under {}",
            pos_dir.display()
        )));
    }
    let rows = read_label_transitions(label_file)?;
    let mut objects = Vec::with_capacity(paths.len());
    for path in paths {
        let series = read_positional_csv(&path, feature_map)?.select_features(features)?;
        let t_len = series.len();
        let labels_ew = dense_labels_from_transitions(&rows, &series.object_id, vocab_ew, t_len)?;
        let labels_ns = dense_labels_from_transitions(&rows, &series.object_id, vocab_ns, t_len)?;
        objects.push(DatasetObject {
            series,
            labels_ew,
            labels_ns,
        });
    }
    Ok(objects)
}

pub fn write_predictions(path: &Path, preds: &[LabelSeq], vocab: &PoLVocab) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    w.write_record(["object_id", "time_index", "class_name"])
        .map_err(|e| csv_err(path, e.to_string()))?;
    for p in preds {
        for (t, &l) in p.labels.iter().enumerate() {
            w.write_record([p.object_id.as_str(), &t.to_string(), vocab.class_name(l)?])
                .map_err(|e| csv_err(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| csv_err(path, e.to_string()))?;
    Ok(())
}

/// Rows of `(time_index, class_name)` per object, merged from one prediction
/// CSV or every CSV in a directory.
pub fn read_prediction_rows(path: &Path) -> Result<BTreeMap<String, Vec<(usize, String)>>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for e in fs::read_dir(path).map_err(|e| Error::IoPath {
            path: path.to_path_buf(),
            source: e,
        })? {
            let p = e?.path();
            if p.extension().map_or(false, |x| x == "csv") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no prediction CSVs under {}",
            path.display()
        )));
    }
    let mut out: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for file in files {
        let mut r = csv::Reader::from_path(&file).map_err(|e| csv_err(&file, e.to_string()))?;
        let has_direction = r
            .headers()
            .map_err(|e| csv_err(&file, e.to_string()))?
            .iter()
            .any(|h| h == "direction");
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(&file, e.to_string()))?;
            let (id, idx, class) = if has_direction {
                (rec.get(0), rec.get(1), rec.get(3))
            } else {
                (rec.get(0), rec.get(1), rec.get(2))
            };
            let (id, idx, class) = match (id, idx, class) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(csv_err(&file, "short record")),
            };
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| csv_err(&file, format!("bad time_index '{idx}'")))?;
            out.entry(id.to_string())
                .or_default()
                .push((idx, class.to_string()));
        }
    }
    Ok(out)
}

/// Convert per-object rows into a dense label sequence. Rows covering every
/// index `0..T` are taken verbatim; otherwise they are treated as
/// transitions and forward-filled to `t_len` (which must then be given).
pub fn rows_to_dense_labels(
    object_id: &str,
    rows: &[(usize, String)],
    vocab: &PoLVocab,
    t_len: Option<usize>,
) -> Result<LabelSeq> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|(i, _)| *i);
    let dense = t_len.map_or(true, |t| sorted.len() == t)
        && sorted.iter().enumerate().all(|(i, (idx, _))| *idx == i);
    if dense && !sorted.is_empty() {
        let labels = sorted
            .iter()
            .map(|(_, name)| vocab.class_index(name))
            .collect::<Result<Vec<_>>>()?;
        return Ok(LabelSeq::new(object_id.to_string(), vocab.direction, labels));
    }
    let t_len = t_len.ok_or_else(|| Error::BadTransition {
        object_id: object_id.to_string(),
        reason: "transition-form labels need a known sequence length".into(),
    })?;
    let label_rows: Vec<LabelRow> = sorted
        .into_iter()
        .map(|(idx, name)| LabelRow {
            object_id: object_id.to_string(),
            time_index: idx,
            direction: vocab.direction,
            class_name: name,
        })
        .collect();
    dense_labels_from_transitions(&label_rows, object_id, vocab, t_len)
}

/// Load an empirical interval table (`interval_hours,weight`).
pub fn read_interval_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    let mut hours = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e.to_string()))?;
        if rec.len() < 2 {
            return Err(csv_err(path, "expected interval_hours,weight"));
        }
        let h: f64 = rec.get(0).unwrap().trim().parse().map_err(|_| {
            csv_err(path, format!("bad interval '{}'", rec.get(0).unwrap()))
        })?;
        let w: f64 = rec.get(1).unwrap().trim().parse().map_err(|_| {
            csv_err(path, format!("bad weight '{}'", rec.get(1).unwrap()))
        })?;
        if h <= 0.0 || w < 0.0 {
            return Err(csv_err(path, "intervals must be positive and weights non-negative"));
        }
        hours.push(h);
        weights.push(w);
    }
    if hours.is_empty() {
        return Err(csv_err(path, "empty interval table"));
    }
    Ok((hours, weights))
}

/// Load a canonical->actual feature-name mapping from a JSON object file.
pub fn read_feature_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::data::FEATURES_ALL;

    fn small_dataset() -> Vec<DatasetObject> {
        let cfg = SynthConfig {
            n_objects: 3,
            t_len: 60,
            mean_seg_len: [("ID", 15.0), ("AD", 15.0), ("EK", 20.0), ("CK", 20.0), ("HK", 20.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            ..SynthConfig::default()
        };
        synth_generate(&cfg, &PoLVocab::default_ew(), &PoLVocab::default_ns()).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let objects = small_dataset();
        let (ew, ns) = (PoLVocab::default_ew(), PoLVocab::default_ns());
        write_dataset(dir.path(), &objects, &ew, &ns).unwrap();
        let features: Vec<String> = FEATURES_ALL.iter().map(|s| s.to_string()).collect();
        let loaded = load_splid(
            dir.path(),
            &dir.path().join("labels.csv"),
            &ew,
            &ns,
            None,
            &features,
        )
        .unwrap();
        assert_eq!(loaded.len(), objects.len());
        for (a, b) in loaded.iter().zip(&objects) {
            assert_eq!(a.series.object_id, b.series.object_id);
            assert_eq!(a.series.timestamps, b.series.timestamps);
            assert_eq!(a.labels_ew.labels, b.labels_ew.labels);
            assert_eq!(a.labels_ns.labels, b.labels_ns.labels);
            let diff = (&a.series.values - &b.series.values)
                .mapv(f64::abs)
                .into_iter()
                .fold(0.0, f64::max);
            assert!(diff < 1e-9, "csv round trip error {diff}");
        }
    }

    #[test]
    fn forward_fill_semantics() {
        let vocab = PoLVocab::default_ew();
        let rows = vec![
            LabelRow {
                object_id: "o".into(),
                time_index: 0,
                direction: Direction::EW,
                class_name: "ID".into(),
            },
            LabelRow {
                object_id: "o".into(),
                time_index: 100,
                direction: Direction::EW,
                class_name: "EK".into(),
            },
        ];
        let dense = dense_labels_from_transitions(&rows, "o", &vocab, 200).unwrap();
        let id = vocab.class_index("ID").unwrap();
        let ek = vocab.class_index("EK").unwrap();
        assert!(dense.labels[..100].iter().all(|&l| l == id));
        assert!(dense.labels[100..].iter().all(|&l| l == ek));
    }

    #[test]
    fn transition_errors() {
        let vocab = PoLVocab::default_ew();
        // zero transitions
        assert!(dense_labels_from_transitions(&[], "o", &vocab, 10).is_err());
        // first transition not at 0
        let rows = vec![LabelRow {
            object_id: "o".into(),
            time_index: 5,
            direction: Direction::EW,
            class_name: "ID".into(),
        }];
        assert!(dense_labels_from_transitions(&rows, "o", &vocab, 10).is_err());
        // off-grid index
        let rows = vec![
            LabelRow {
                object_id: "o".into(),
                time_index: 0,
                direction: Direction::EW,
                class_name: "ID".into(),
            },
            LabelRow {
                object_id: "o".into(),
                time_index: 10,
                direction: Direction::EW,
                class_name: "EK".into(),
            },
        ];
        assert!(dense_labels_from_transitions(&rows, "o", &vocab, 10).is_err());
    }

    #[test]
    fn missing_feature_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let objects = small_dataset();
        let (ew, ns) = (PoLVocab::default_ew(), PoLVocab::default_ns());
        write_dataset(dir.path(), &objects, &ew, &ns).unwrap();
        let mut features: Vec<String> = FEATURES_ALL.iter().map(|s| s.to_string()).collect();
        features.push("thrust_n".into());
        let err = load_splid(
            dir.path(),
            &dir.path().join("labels.csv"),
            &ew,
            &ns,
            None,
            &features,
        )
        .unwrap_err();
        match err {
            Error::MissingFeatures(names) => assert_eq!(names, vec!["thrust_n".to_string()]),
            other => panic!("expected MissingFeatures, got {other:?}"),
        }
    }

    #[test]
    fn feature_map_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let objects = small_dataset();
        // write one series with nonstandard column names
        let mut series = objects[0].series.clone();
        series.feature_names = (0..9).map(|i| format!("col{i}")).collect();
        let path = dir.path().join(format!("{}.csv", series.object_id));
        write_positional_csv(&path, &series).unwrap();
        let map: BTreeMap<String, String> = FEATURES_ALL
            .iter()
            .enumerate()
            .map(|(i, canon)| (canon.to_string(), format!("col{i}")))
            .collect();
        let loaded = read_positional_csv(&path, Some(&map)).unwrap();
        assert_eq!(
            loaded.feature_names,
            FEATURES_ALL.iter().map(|s| s.to_string()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn predictions_round_trip_dense_and_transition() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = PoLVocab::default_ew();
        let labels = LabelSeq::new("obj-a".into(), Direction::EW, vec![0, 0, 2, 2, 1]);
        let path = dir.path().join("preds.csv");
        write_predictions(&path, &[labels.clone()], &vocab).unwrap();
        let rows = read_prediction_rows(&path).unwrap();
        let back = rows_to_dense_labels("obj-a", &rows["obj-a"], &vocab, Some(5)).unwrap();
        assert_eq!(back.labels, labels.labels);
        // transition-form rows forward-fill
        let sparse = vec![(0usize, "ID".to_string()), (3, "EK".to_string())];
        let filled = rows_to_dense_labels("obj-a", &sparse, &vocab, Some(6)).unwrap();
        assert_eq!(filled.labels, vec![0, 0, 0, 2, 2, 2]);
    }
}

//! Scripted experiment harness: ablation variants, sampling-rate robustness,
//! and single-axis sensitivity sweeps. Every run emits a timestamped
//! directory with the resolved config snapshot, metrics JSON, plots, and the
//! trained bundle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{downsample_forward_fill, split, DatasetObject, DatasetSplit, SamplingProfile};
use crate::data::synth::synth_generate;
use crate::domain::{Direction, LabelSeq, PoLVocab};
use crate::engine::{
    predict_objects_with_noise, save_bundle, train, InferResult, ModelBundle,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::plot::{line_chart, Series, PALETTE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoDecoder,
    NoGeodetic,
    NoSloss,
    NoMask,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoDecoder,
        AblationVariant::NoGeodetic,
        AblationVariant::NoSloss,
        AblationVariant::NoMask,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoDecoder => "no_decoder",
            AblationVariant::NoGeodetic => "no_geodetic",
            AblationVariant::NoSloss => "no_sloss",
            AblationVariant::NoMask => "no_mask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown ablation variant '{s}' (expected one of full, no_decoder, no_geodetic, no_sloss, no_mask)"
                ))
            })
    }
}

/// The configuration delta defining each ablation: identical to `full`
/// except in the documented keys.
pub fn variant_config(base: &RunConfig, variant: AblationVariant) -> RunConfig {
    let mut cfg = base.clone();
    match variant {
        AblationVariant::Full => {}
        AblationVariant::NoDecoder => {} // handled by use_decoder below
        AblationVariant::NoGeodetic => cfg.data.geodetic = false,
        AblationVariant::NoSloss => {
            cfg.loss.w_smo = 0.0;
            cfg.loss.w_bd = 0.0;
        }
        AblationVariant::NoMask => cfg.masking.enabled = false,
    }
    cfg
}

pub fn variant_uses_decoder(variant: AblationVariant) -> bool {
    variant != AblationVariant::NoDecoder
}

/// Artifacts of one train-and-evaluate run.
pub struct RunOutput {
    pub report: EvalReport,
    pub bundle: ModelBundle,
    pub run_dir: PathBuf,
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S").to_string()
}

/// Create a fresh timestamped run directory; never overwrites an existing
/// one.
pub fn make_run_dir(base: &Path, label: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base).map_err(|e| Error::IoPath {
        path: base.to_path_buf(),
        source: e,
    })?;
    let stem = format!("{}_{label}", timestamp());
    for attempt in 0..1000 {
        let name = if attempt == 0 {
            stem.clone()
        } else {
            format!("{stem}-{attempt}")
        };
        let dir = base.join(&name);
        if !dir.exists() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::IoPath {
                path: dir.clone(),
                source: e,
            })?;
            return Ok(dir);
        }
    }
    Err(Error::InvalidConfig("cannot allocate a run directory".into()))
}

pub fn write_run_metadata(dir: &Path, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let meta = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash()?,
        "seed": cfg.train.seed,
        "created_utc": chrono::Utc::now().to_rfc3339(),
        "extra": extra,
    });
    std::fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn labels_for(obj: &DatasetObject, direction: Direction) -> &LabelSeq {
    match direction {
        Direction::EW => &obj.labels_ew,
        Direction::NS => &obj.labels_ns,
    }
}

/// Pair ground truth with predictions and aggregate the metric suite.
pub fn eval_predictions(
    cfg: &RunConfig,
    vocab: &PoLVocab,
    direction: Direction,
    test: &[DatasetObject],
    preds: &[InferResult],
) -> Result<EvalReport> {
    let pairs: Vec<(LabelSeq, LabelSeq)> = test
        .iter()
        .zip(preds)
        .map(|(obj, pred)| (labels_for(obj, direction).clone(), pred.labels.clone()))
        .collect();
    evaluate(&pairs, vocab, &cfg.eval.taus, cfg.eval.edit_granularity)
}

/// Generate the synthetic dataset and split it per the config.
pub fn build_dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    let vocab_ew = PoLVocab::default_ew();
    let vocab_ns = PoLVocab::default_ns();
    let objects = synth_generate(&cfg.synth, &vocab_ew, &vocab_ns)?;
    split(objects, cfg.data.split_ratio, cfg.data.split_seed)
}

fn loss_curve_plot(dir: &Path, bundle: &ModelBundle) -> Result<()> {
    if bundle.loss_curve.is_empty() {
        return Ok(());
    }
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    line_chart(
        &plots.join("loss_curve.png"),
        "TRAINING LOSS",
        "ITERATION",
        "LOSS",
        &[Series {
            label: "LOSS".into(),
            points: bundle
                .loss_curve
                .iter()
                .enumerate()
                .map(|(i, &l)| (i as f64, l))
                .collect(),
            color: PALETTE[0],
        }],
    )
}

/// Train on the config's synthetic dataset and evaluate on its test split.
pub fn train_and_eval(
    cfg: &RunConfig,
    direction: Direction,
    use_decoder: bool,
    label: &str,
    out_base: &Path,
) -> Result<RunOutput> {
    let run_dir = make_run_dir(out_base, label)?;
    let vocab = PoLVocab::default_for(direction);
    let dataset = build_dataset(cfg)?;
    log::info!(
        "{label}: {} train / {} test objects, T = {}",
        dataset.train.len(),
        dataset.test.len(),
        cfg.synth.t_len
    );
    let setup = cfg.train_setup(direction, use_decoder);
    let bundle = train(&dataset, &vocab, &setup)?;
    let preds = predict_objects_with_noise(
        &bundle,
        &dataset.test,
        cfg.diffusion.infer_steps,
        cfg.eval.seed,
        0.0,
    )?;
    let report = eval_predictions(cfg, &vocab, direction, &dataset.test, &preds)?;

    std::fs::write(run_dir.join("config.snapshot.toml"), cfg.to_toml()?)?;
    std::fs::write(
        run_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    save_bundle(&bundle, &run_dir.join("bundle.bin"))?;
    loss_curve_plot(&run_dir, &bundle)?;
    write_run_metadata(&run_dir, cfg, json!({ "label": label, "direction": direction.as_str() }))?;
    Ok(RunOutput {
        report,
        bundle,
        run_dir,
    })
}

/// Train and evaluate one ablation variant.
pub fn run_ablation(
    base: &RunConfig,
    variant: AblationVariant,
    direction: Direction,
    out_base: &Path,
) -> Result<RunOutput> {
    let cfg = variant_config(base, variant);
    train_and_eval(
        &cfg,
        direction,
        variant_uses_decoder(variant),
        &format!("ablate_{}", variant.name()),
        out_base,
    )
}

/// Robustness to degraded sampling: train once on full-rate data, then
/// evaluate the same model on forward-filled test copies for each mean
/// interval. Reports are ordered to match `mean_hours`.
pub fn run_robustness(
    cfg: &RunConfig,
    direction: Direction,
    mean_hours: &[f64],
    out_base: &Path,
) -> Result<(RunOutput, Vec<EvalReport>)> {
    if mean_hours.is_empty() {
        return Err(Error::InvalidConfig("need at least one sampling profile".into()));
    }
    let full = train_and_eval(cfg, direction, true, "robustness_full_rate", out_base)?;
    let dataset = build_dataset(cfg)?;
    let vocab = PoLVocab::default_for(direction);
    let mut reports = Vec::with_capacity(mean_hours.len());
    for (pi, &mean) in mean_hours.iter().enumerate() {
        let profile = SamplingProfile::lognormal(mean, cfg.eval.seed);
        let degraded: Vec<DatasetObject> = dataset
            .test
            .iter()
            .map(|obj| {
                Ok(DatasetObject {
                    series: downsample_forward_fill(&obj.series, &profile)?,
                    labels_ew: obj.labels_ew.clone(),
                    labels_ns: obj.labels_ns.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let preds = predict_objects_with_noise(
            &full.bundle,
            &degraded,
            cfg.diffusion.infer_steps,
            cfg.eval.seed,
            0.0,
        )?;
        let report = eval_predictions(cfg, &vocab, direction, &degraded, &preds)?;
        std::fs::write(
            full.run_dir.join(format!("metrics_mean{mean:.1}h.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        log::info!(
            "robustness mean {mean:.1}h: acc {:.2} edit {:.2} f1@0.10 {:.2}",
            report.acc,
            report.edit,
            report.f1_at(0.10).unwrap_or(0.0)
        );
        reports.push(report);
        let _ = pi;
    }
    // comparison plot: metric vs mean interval, native rate first
    let grid_hours = crate::data::synth::GRID_HOURS;
    let mut xs = vec![grid_hours];
    xs.extend_from_slice(mean_hours);
    let series: Vec<Series> = [
        ("ACC", PALETTE[0]),
        ("EDIT", PALETTE[1]),
        ("F1@0.10", PALETTE[2]),
    ]
    .iter()
    .map(|(name, color)| {
        let pick = |r: &EvalReport| match *name {
            "ACC" => r.acc,
            "EDIT" => r.edit,
            _ => r.f1_at(0.10).unwrap_or(0.0),
        };
        let mut points = vec![(xs[0], pick(&full.report))];
        points.extend(reports.iter().zip(&xs[1..]).map(|(r, &x)| (x, pick(r))));
        Series {
            label: name.to_string(),
            points,
            color: *color,
        }
    })
    .collect();
    let plots = full.run_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    line_chart(
        &plots.join("robustness.png"),
        "SAMPLING-RATE ROBUSTNESS",
        "MEAN INTERVAL (H)",
        "PERCENT",
        &series,
    )?;
    Ok((full, reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DiffusionSteps,
    SequenceLength,
    NoiseLevel,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DiffusionSteps => "diffusion_steps",
            SweepAxis::SequenceLength => "sequence_length",
            SweepAxis::NoiseLevel => "noise_level",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diffusion_steps" => Ok(SweepAxis::DiffusionSteps),
            "sequence_length" => Ok(SweepAxis::SequenceLength),
            "noise_level" => Ok(SweepAxis::NoiseLevel),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis '{other}' (expected diffusion_steps, sequence_length, or noise_level)"
            ))),
        }
    }

    fn check_value(&self, v: f64) -> Result<()> {
        let ok = match self {
            SweepAxis::DiffusionSteps => v >= 2.0 && v.fract() == 0.0,
            SweepAxis::SequenceLength => v >= 24.0 && v.fract() == 0.0,
            SweepAxis::NoiseLevel => v >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "value {v} is not valid for axis {}",
                self.name()
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub report: EvalReport,
}

/// One trained/evaluated run per axis value. For the input-noise axis the
/// training configuration is value-independent, so the model is trained once
/// and each value only perturbs the evaluation inputs.
pub fn run_sensitivity(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    direction: Direction,
    out_base: &Path,
    resume: Option<&Path>,
) -> Result<(PathBuf, Vec<SweepPoint>)> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    for &v in values {
        axis.check_value(v)?;
    }
    let sweep_dir = match resume {
        Some(dir) if dir.is_dir() => dir.to_path_buf(),
        Some(dir) => {
            return Err(Error::InvalidConfig(format!(
                "resume directory {} does not exist",
                dir.display()
            )))
        }
        None => make_run_dir(out_base, &format!("sweep_{}", axis.name()))?,
    };

    let mut shared_noise_model: Option<RunOutput> = None;
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let point_dir = sweep_dir.join(format!("point_{}_{v}", axis.name()));
        let metrics_path = point_dir.join("metrics.json");
        if metrics_path.is_file() {
            let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)?;
            log::info!("sweep {}={v}: reusing existing point", axis.name());
            points.push(SweepPoint {
                axis: axis.name().into(),
                value: v,
                report,
            });
            continue;
        }
        std::fs::create_dir_all(&point_dir)?;
        let report = match axis {
            SweepAxis::DiffusionSteps => {
                let mut c = cfg.clone();
                c.diffusion.steps = v as usize;
                train_point(&c, direction, &point_dir)?
            }
            SweepAxis::SequenceLength => {
                let mut c = cfg.clone();
                c.synth.t_len = v as usize;
                train_point(&c, direction, &point_dir)?
            }
            SweepAxis::NoiseLevel => {
                if shared_noise_model.is_none() {
                    shared_noise_model =
                        Some(train_and_eval(cfg, direction, true, "sweep_noise_base", &point_dir)?);
                }
                let base = shared_noise_model.as_ref().expect("trained above");
                let dataset = build_dataset(cfg)?;
                let vocab = PoLVocab::default_for(direction);
                let preds = predict_objects_with_noise(
                    &base.bundle,
                    &dataset.test,
                    cfg.diffusion.infer_steps,
                    cfg.eval.seed,
                    v,
                )?;
                eval_predictions(cfg, &vocab, direction, &dataset.test, &preds)?
            }
        };
        std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
        log::info!(
            "sweep {}={v}: acc {:.2} edit {:.2} f1@0.10 {:.2}",
            axis.name(),
            report.acc,
            report.edit,
            report.f1_at(0.10).unwrap_or(0.0)
        );
        points.push(SweepPoint {
            axis: axis.name().into(),
            value: v,
            report,
        });
    }

    std::fs::write(
        sweep_dir.join("sweep_summary.json"),
        serde_json::to_string_pretty(&points)?,
    )?;
    let plots = sweep_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let series: Vec<Series> = [
        ("ACC", PALETTE[0]),
        ("EDIT", PALETTE[1]),
        ("F1@0.10", PALETTE[2]),
    ]
    .iter()
    .map(|(name, color)| Series {
        label: name.to_string(),
        points: points
            .iter()
            .map(|p| {
                let y = match *name {
                    "ACC" => p.report.acc,
                    "EDIT" => p.report.edit,
                    _ => p.report.f1_at(0.10).unwrap_or(0.0),
                };
                (p.value, y)
            })
            .collect(),
        color: *color,
    })
    .collect();
    line_chart(
        &plots.join("sensitivity.png"),
        &format!("SENSITIVITY: {}", axis.name().to_uppercase()),
        axis.name().to_uppercase().as_str(),
        "PERCENT",
        &series,
    )?;
    write_run_metadata(&sweep_dir, cfg, json!({ "axis": axis.name(), "values": values }))?;
    Ok((sweep_dir, points))
}

fn train_point(cfg: &RunConfig, direction: Direction, point_dir: &Path) -> Result<EvalReport> {
    let out = train_and_eval(cfg, direction, true, "point", point_dir)?;
    Ok(out.report)
}

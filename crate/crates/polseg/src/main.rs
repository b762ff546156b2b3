//! Command-line entry point: dataset synthesis, sampling-rate degradation,
//! training, inference, evaluation, and the experiment harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use polseg::config::RunConfig;
use polseg::data::io::{
    load_splid, positional_dir, read_feature_map, read_interval_table, read_positional_csv,
    read_prediction_rows, rows_to_dense_labels, write_dataset, write_positional_csv,
    write_predictions,
};
use polseg::data::synth::synth_generate;
use polseg::data::{downsample_forward_fill, split, IntervalDistribution, SamplingProfile};
use polseg::domain::{Direction, LabelSeq, PoLVocab};
use polseg::engine::{infer, load_bundle, save_bundle, train};
use polseg::error::Error;
use polseg::harness::{run_ablation, run_robustness, run_sensitivity, AblationVariant, SweepAxis};
use polseg::metrics::{evaluate, render_table, EditGranularity};

#[derive(Parser)]
#[command(
    name = "polseg",
    version,
    about = "Diffusion-based pattern-of-life segmentation for satellite positional series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; omitted sections use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (sets the synth, split, train, and eval seeds).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> polseg::Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.synth.seed = seed;
            cfg.train.seed = seed;
            cfg.eval.seed = seed;
            cfg.data.split_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset in the CSV interchange layout.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset directory (positional/*.csv + labels.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade a dataset's sampling rate and re-impute by forward fill.
    Downsample {
        /// Input dataset directory.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mean observation interval in hours.
        #[arg(long, default_value_t = 13.7)]
        mean_hours: f64,
        /// Cap on a single interval, hours.
        #[arg(long, default_value_t = 504.0)]
        max_hours: f64,
        /// Empirical interval table (CSV interval_hours,weight) instead of
        /// the lognormal default.
        #[arg(long)]
        intervals_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a dataset directory plus transition labels.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory with positional CSVs.
        #[arg(long)]
        data: PathBuf,
        /// Transition label file.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_parser = Direction::parse)]
        direction: Direction,
        /// Output bundle path.
        #[arg(long)]
        out: PathBuf,
        /// JSON file mapping canonical feature names to on-disk columns.
        #[arg(long)]
        feature_map: Option<PathBuf>,
    },
    /// Label one positional series with a trained bundle.
    Infer {
        /// Trained model bundle.
        #[arg(long)]
        bundle: PathBuf,
        /// Input positional CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output label CSV (object_id,time_index,class_name).
        #[arg(long)]
        out: PathBuf,
        /// Directory for decoded intermediate-state snapshots.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Reverse-process steps (default: the bundle's setting).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        feature_map: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Prediction CSV file or directory of CSVs.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth labels: transition file or dense prediction-format file.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_parser = Direction::parse)]
        direction: Direction,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Also print per-class precision/recall.
        #[arg(long)]
        per_class: bool,
        /// Edit-score alphabet: segments (default) or frames.
        #[arg(long, default_value = "segments")]
        edit_granularity: String,
        /// IoU thresholds, comma separated.
        #[arg(long, default_value = "0.10,0.25,0.50")]
        taus: String,
    },
    /// Train and evaluate one ablation variant on synthetic data.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of: full, no_decoder, no_geodetic, no_sloss, no_mask.
        #[arg(long)]
        variant: String,
        #[arg(long, value_parser = Direction::parse)]
        direction: Direction,
        /// Base directory for timestamped run directories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampling-rate robustness: train once, evaluate on degraded test data.
    Robustness {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = Direction::parse)]
        direction: Direction,
        /// Mean observation intervals (hours), comma separated.
        #[arg(long, default_value = "13.7")]
        means: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-axis sensitivity sweep.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of: diffusion_steps, sequence_length, noise_level.
        #[arg(long)]
        axis: String,
        /// Axis values, comma separated.
        #[arg(long)]
        values: String,
        #[arg(long, value_parser = Direction::parse)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
        /// Re-attach to a partial sweep directory, skipping finished points.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

fn write_meta(path: &Path, cfg_hash: &str, seed: u64, extra: serde_json::Value) -> polseg::Result<()> {
    let meta = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg_hash,
        "seed": seed,
        "created_utc": chrono::Utc::now().to_rfc3339(),
        "extra": extra,
    });
    let meta_path = if path.is_dir() {
        path.join("metadata.json")
    } else {
        path.with_extension("meta.json")
    };
    std::fs::write(meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn parse_f64_list(s: &str) -> polseg::Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad numeric value '{v}'")))
        })
        .collect()
}

fn parse_granularity(s: &str) -> polseg::Result<EditGranularity> {
    match s {
        "segments" => Ok(EditGranularity::Segments),
        "frames" => Ok(EditGranularity::Frames),
        other => Err(Error::InvalidConfig(format!(
            "unknown edit granularity '{other}' (expected segments or frames)"
        ))),
    }
}

/// Truth files may be 4-column transition files (with a direction column) or
/// dense 3-column prediction-format files.
fn read_truth_rows(
    path: &Path,
    direction: Direction,
) -> polseg::Result<BTreeMap<String, Vec<(usize, String)>>> {
    let head = std::fs::read_to_string(path)
        .ok()
        .and_then(|t| t.lines().next().map(|l| l.to_string()));
    let has_direction = head.map_or(false, |h| h.contains("direction"));
    if !has_direction {
        return read_prediction_rows(path);
    }
    let rows = polseg::data::io::read_label_transitions(path)?;
    let mut out: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for r in rows {
        if r.direction == direction {
            out.entry(r.object_id)
                .or_default()
                .push((r.time_index, r.class_name));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no {direction} rows in {}",
            path.display()
        )));
    }
    Ok(out)
}

fn run(cli: Cli) -> polseg::Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => {
            let cfg = cfg.load()?;
            let vocab_ew = PoLVocab::default_ew();
            let vocab_ns = PoLVocab::default_ns();
            let objects = synth_generate(&cfg.synth, &vocab_ew, &vocab_ns)?;
            std::fs::create_dir_all(&out)?;
            write_dataset(&out, &objects, &vocab_ew, &vocab_ns)?;
            write_meta(
                &out,
                &cfg.hash()?,
                cfg.synth.seed,
                json!({ "n_objects": objects.len(), "t_len": cfg.synth.t_len }),
            )?;
            println!(
                "wrote {} objects (T = {}) to {}",
                objects.len(),
                cfg.synth.t_len,
                out.display()
            );
            Ok(())
        }
        Command::Downsample {
            input,
            out,
            mean_hours,
            max_hours,
            intervals_file,
            seed,
        } => {
            let distribution = match &intervals_file {
                Some(path) => {
                    let (intervals_hours, weights) = read_interval_table(path)?;
                    IntervalDistribution::EmpiricalFile {
                        intervals_hours,
                        weights,
                    }
                }
                None => IntervalDistribution::Lognormal { sigma_log: 1.0 },
            };
            let profile = SamplingProfile {
                mean_interval_hours: mean_hours,
                max_interval_hours: max_hours,
                distribution,
                seed,
            };
            let pos_in = positional_dir(&input);
            let pos_out = out.join("positional");
            std::fs::create_dir_all(&pos_out)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&pos_in)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |x| x == "csv"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::EmptyInput(format!(
                    "no positional CSVs under {}",
                    pos_in.display()
                )));
            }
            let mut count = 0usize;
            for path in paths {
                let series = read_positional_csv(&path, None)?;
                let degraded = downsample_forward_fill(&series, &profile)?;
                write_positional_csv(&pos_out.join(path.file_name().unwrap()), &degraded)?;
                count += 1;
            }
            let labels_src = input.join("labels.csv");
            if labels_src.is_file() {
                std::fs::copy(&labels_src, out.join("labels.csv"))?;
            }
            write_meta(
                &out,
                "-",
                seed,
                json!({ "mean_hours": mean_hours, "objects": count }),
            )?;
            println!(
                "degraded {count} series to mean {mean_hours}h at {}",
                out.display()
            );
            Ok(())
        }
        Command::Train {
            cfg,
            data,
            labels,
            direction,
            out,
            feature_map,
        } => {
            let cfg = cfg.load()?;
            let vocab_ew = PoLVocab::default_ew();
            let vocab_ns = PoLVocab::default_ns();
            let map = feature_map.as_deref().map(read_feature_map).transpose()?;
            let features = cfg.features();
            let objects = load_splid(&data, &labels, &vocab_ew, &vocab_ns, map.as_ref(), &features)?;
            println!("loaded {} objects", objects.len());
            let dataset = split(objects, cfg.data.split_ratio, cfg.data.split_seed)?;
            let test_ids: Vec<String> = dataset
                .test
                .iter()
                .map(|o| o.series.object_id.clone())
                .collect();
            println!(
                "training on {} objects ({} held out), direction {direction}",
                dataset.train.len(),
                dataset.test.len()
            );
            let vocab = PoLVocab::default_for(direction);
            let setup = cfg.train_setup(direction, true);
            let bundle = train(&dataset, &vocab, &setup)?;
            save_bundle(&bundle, &out)?;
            write_meta(
                &out,
                &cfg.hash()?,
                cfg.train.seed,
                json!({
                    "direction": direction.as_str(),
                    "iterations": bundle.iterations,
                    "final_loss": bundle.loss_curve.last(),
                    "test_object_ids": test_ids,
                }),
            )?;
            println!(
                "trained {} iterations, bundle written to {}",
                bundle.iterations,
                out.display()
            );
            Ok(())
        }
        Command::Infer {
            bundle,
            input,
            out,
            snapshots,
            steps,
            seed,
            feature_map,
        } => {
            let bundle = load_bundle(&bundle)?;
            let map = feature_map.as_deref().map(read_feature_map).transpose()?;
            let series = read_positional_csv(&input, map.as_ref())?;
            let steps = steps.unwrap_or(bundle.diffusion.infer_steps);
            let result = infer(&bundle, &series, steps, seed)?;
            write_predictions(&out, &[result.labels.clone()], &bundle.vocab)?;
            if let Some(snap_dir) = &snapshots {
                std::fs::create_dir_all(snap_dir)?;
                for (s, labels) in &result.snapshots {
                    write_predictions(
                        &snap_dir.join(format!("snapshot_{s:04}.csv")),
                        &[labels.clone()],
                        &bundle.vocab,
                    )?;
                }
            }
            write_meta(
                &out,
                "-",
                seed,
                json!({
                    "bundle_direction": bundle.direction.as_str(),
                    "infer_steps": steps,
                    "object_id": series.object_id,
                }),
            )?;
            println!(
                "labeled {} steps of {} ({} reverse steps)",
                series.len(),
                series.object_id,
                steps
            );
            Ok(())
        }
        Command::Eval {
            pred,
            truth,
            direction,
            out,
            per_class,
            edit_granularity,
            taus,
        } => {
            let vocab = PoLVocab::default_for(direction);
            let granularity = parse_granularity(&edit_granularity)?;
            let taus = parse_f64_list(&taus)?;
            let pred_rows = read_prediction_rows(&pred)?;
            let truth_rows = read_truth_rows(&truth, direction)?;
            let missing: Vec<String> = truth_rows
                .keys()
                .filter(|id| !pred_rows.contains_key(*id))
                .cloned()
                .chain(
                    pred_rows
                        .keys()
                        .filter(|id| !truth_rows.contains_key(*id))
                        .cloned(),
                )
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingObjects(missing));
            }
            let mut pairs: Vec<(LabelSeq, LabelSeq)> = Vec::new();
            for (id, p_rows) in &pred_rows {
                let prediction = rows_to_dense_labels(id, p_rows, &vocab, None)?;
                let t_len = prediction.len();
                let gt = rows_to_dense_labels(id, &truth_rows[id], &vocab, Some(t_len))?;
                pairs.push((gt, prediction));
            }
            let report = evaluate(&pairs, &vocab, &taus, granularity)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            write_meta(&out, "-", 0, json!({ "n_objects": report.n_objects }))?;
            print!("{}", render_table(&report, per_class));
            Ok(())
        }
        Command::Ablate {
            cfg,
            variant,
            direction,
            out,
        } => {
            let cfg = cfg.load()?;
            let variant = AblationVariant::parse(&variant)?;
            let result = run_ablation(&cfg, variant, direction, &out)?;
            print!("{}", render_table(&result.report, false));
            println!("run directory: {}", result.run_dir.display());
            Ok(())
        }
        Command::Robustness {
            cfg,
            direction,
            means,
            out,
        } => {
            let cfg = cfg.load()?;
            let means = parse_f64_list(&means)?;
            let (full, reports) = run_robustness(&cfg, direction, &means, &out)?;
            println!("full rate:");
            print!("{}", render_table(&full.report, false));
            for (mean, report) in means.iter().zip(&reports) {
                println!("mean {mean}h:");
                print!("{}", render_table(report, false));
            }
            println!("run directory: {}", full.run_dir.display());
            Ok(())
        }
        Command::Sweep {
            cfg,
            axis,
            values,
            direction,
            out,
            resume,
        } => {
            let cfg = cfg.load()?;
            let axis = SweepAxis::parse(&axis)?;
            let values = parse_f64_list(&values)?;
            let (sweep_dir, points) =
                run_sensitivity(&cfg, axis, &values, direction, &out, resume.as_deref())?;
            for p in &points {
                println!("{} = {}:", p.axis, p.value);
                print!("{}", render_table(&p.report, false));
            }
            println!("sweep directory: {}", sweep_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::MissingObjects(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

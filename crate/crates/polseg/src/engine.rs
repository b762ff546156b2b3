//! End-to-end training (joint encoder + decoder optimization with condition
//! masking and a sampled diffusion step per example), iterative skipped-step
//! inference, and the self-contained model bundle.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetObject, DatasetSplit, NormStats};
use crate::decoder::{Decoder, DecoderConfig};
use crate::diffusion::{
    decode_labels, encode_labels, forward_diffuse, make_mask, sample_mask_kind, ddim_step,
    MaskKind, NoiseSchedule,
};
use crate::domain::{Direction, LabelSeq, OrbitSeries, PoLVocab};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::losses::{
    boundary_target, ce_loss, ce_loss_backward, total_loss_grad, LossWeights,
};
use crate::metrics::accuracy;
use crate::nn::{
    accumulate, randn, rng_for, scale, softmax_rows, softmax_rows_backward, Adam, Mat, Params,
};

const TAG_TRAIN: u64 = 0x545249;
const TAG_INFER: u64 = 0x494e46;
const TAG_EPOCH: u64 = 0x45504f;
const TAG_PRED: u64 = 0x505244;

/// Diffusion-process parameters carried by the model bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionParams {
    pub steps: usize,
    pub infer_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eta: f64,
    pub embed_scale: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            steps: 1000,
            infer_steps: 25,
            beta_start: 1e-4,
            beta_end: 0.02,
            eta: 0.0,
            embed_scale: 1.0,
        }
    }
}

impl DiffusionParams {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let sched = NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?;
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// L2 weight-decay coefficient folded into the Adam gradient.
    pub weight_decay: f64,
    /// Optional inverse-time learning-rate decay (the alternative reading of
    /// a "decayed rate"); 0 keeps the learning rate constant.
    pub lr_decay: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub direction: Direction,
    /// When false, only the encoder is trained (cross-entropy on the
    /// auxiliary head) and inference is its frame-wise argmax.
    pub use_decoder: bool,
    /// When false, condition masking is disabled and training always sees
    /// the full embedding.
    pub mask_enabled: bool,
    /// Half-width of the boundary-prior mask around each transition.
    pub boundary_window: usize,
    /// Evaluate train-subset accuracy every N iterations (0 = never).
    pub eval_every: usize,
    /// Stop once the evaluated train accuracy reaches this fraction
    /// (0 disables early stopping).
    pub early_stop_train_acc: f64,
    /// Save a checkpoint bundle every N iterations into `checkpoint_dir`
    /// (0 = never), plus a best-by-evaluated-accuracy copy.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            lr: 5e-4,
            weight_decay: 1e-5,
            lr_decay: 0.0,
            max_iters: 2000,
            seed: 0,
            direction: Direction::EW,
            use_decoder: true,
            mask_enabled: true,
            boundary_window: 2,
            eval_every: 0,
            early_stop_train_acc: 0.0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Full model/run specification handed to [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub diffusion: DiffusionParams,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub features: Vec<String>,
}

/// Everything needed to rebuild the model and run inference: configurations,
/// normalization statistics, vocabulary, and parameters.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub direction: Direction,
    pub vocab: PoLVocab,
    pub encoder_cfg: EncoderConfig,
    pub decoder_cfg: DecoderConfig,
    pub diffusion: DiffusionParams,
    pub loss: LossWeights,
    pub norm_stats: NormStats,
    pub use_decoder: bool,
    pub seed: u64,
    pub iterations: usize,
    pub loss_curve: Vec<f64>,
    pub encoder: Encoder,
    pub decoder: Option<Decoder>,
}

impl ModelBundle {
    pub fn check_direction(&self, direction: Direction, vocab: &PoLVocab) -> Result<()> {
        if self.direction != direction {
            return Err(Error::VocabMismatch(format!(
                "bundle was trained for {} but {} was requested",
                self.direction, direction
            )));
        }
        if &self.vocab != vocab {
            return Err(Error::VocabMismatch(
                "bundle vocabulary differs from the requested one".into(),
            ));
        }
        Ok(())
    }
}

struct Example {
    x: Mat,
    labels: Vec<usize>,
    label_seq: LabelSeq,
    bbar: Vec<f64>,
}

fn labels_for(obj: &DatasetObject, direction: Direction) -> &LabelSeq {
    match direction {
        Direction::EW => &obj.labels_ew,
        Direction::NS => &obj.labels_ns,
    }
}

fn prepare_examples(
    objects: &[DatasetObject],
    stats: &NormStats,
    vocab: &PoLVocab,
    direction: Direction,
    boundary_sigma: f64,
) -> Result<Vec<Example>> {
    objects
        .iter()
        .map(|obj| {
            let labels = labels_for(obj, direction);
            labels.validate(vocab)?;
            if labels.len() != obj.series.len() {
                return Err(Error::LengthMismatch {
                    expected: obj.series.len(),
                    got: labels.len(),
                });
            }
            let x = stats.apply(&obj.series)?.values;
            Ok(Example {
                x,
                labels: labels.labels.clone(),
                label_seq: labels.clone(),
                bbar: boundary_target(&labels.labels, boundary_sigma),
            })
        })
        .collect()
}

/// Joint training per the diffusion training loop: embed, mask, corrupt the
/// label embedding to a sampled step, denoise, and descend the combined
/// loss. Deterministic given the seed.
pub fn train(split: &DatasetSplit, vocab: &PoLVocab, setup: &TrainSetup) -> Result<ModelBundle> {
    let tc = &setup.train;
    tc.validate()?;
    setup.loss.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyInput("empty training split".into()));
    }
    let c = vocab.num_classes();
    let mut enc_cfg = setup.encoder;
    enc_cfg.d_in = setup.features.len();
    enc_cfg.num_classes = c;
    let mut dec_cfg = setup.decoder;
    dec_cfg.num_classes = c;

    // statistics come from the training split only
    let selected: Vec<OrbitSeries> = split
        .train
        .iter()
        .map(|o| o.series.select_features(&setup.features))
        .collect::<Result<Vec<_>>>()?;
    let stats = NormStats::fit(&selected)?;
    let examples = prepare_examples(&split.train, &stats, vocab, tc.direction, setup.loss.boundary_sigma)?;

    let sched = setup.diffusion.schedule()?;
    let mut encoder = Encoder::new(enc_cfg, tc.seed)?;
    log::info!(
        "encoder receptive field: {} steps (T = {})",
        encoder.receptive_field,
        examples[0].x.nrows()
    );
    let mut decoder = if tc.use_decoder {
        Some(Decoder::new(dec_cfg, tc.seed)?)
    } else {
        None
    };
    let mut opt_enc = Adam::new(tc.lr, tc.weight_decay, tc.lr_decay);
    let mut opt_dec = Adam::new(tc.lr, tc.weight_decay, tc.lr_decay);

    let n = examples.len();
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut loss_curve = Vec::with_capacity(tc.max_iters);
    let mut best_acc = f64::NEG_INFINITY;
    let mut iterations_run = 0usize;

    for iter in 0..tc.max_iters {
        let mut batch = Vec::with_capacity(tc.batch_size);
        while batch.len() < tc.batch_size {
            if order.is_empty() {
                order = (0..n).collect();
                let mut rng = rng_for(tc.seed, &[TAG_EPOCH, epoch]);
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    order.swap(i, j);
                }
                epoch += 1;
            }
            batch.push(order.pop().expect("refilled above"));
        }

        let results: Vec<Result<(f64, Encoder, Option<Decoder>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &ei)| {
                train_example(
                    &examples[ei],
                    &encoder,
                    decoder.as_ref(),
                    &sched,
                    setup,
                    iter as u64,
                    slot as u64,
                )
            })
            .collect();

        let mut total = 0.0;
        let mut enc_g = encoder.zeros_like();
        let mut dec_g = decoder.as_ref().map(|d| d.zeros_like());
        for r in results {
            let (loss, eg, dg) = r?;
            total += loss;
            accumulate(&mut enc_g, &eg);
            if let (Some(acc), Some(dg)) = (dec_g.as_mut(), dg.as_ref()) {
                accumulate(acc, dg);
            }
        }
        let inv = 1.0 / tc.batch_size as f64;
        let mean_loss = total * inv;
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                diagnostics: format!("batch {batch:?}, mean loss {mean_loss}"),
            });
        }
        scale(&mut enc_g, inv);
        opt_enc.step(&mut encoder, &enc_g);
        if let (Some(dec), Some(mut dg)) = (decoder.as_mut(), dec_g) {
            scale(&mut dg, inv);
            opt_dec.step(dec, &dg);
        }
        loss_curve.push(mean_loss);
        iterations_run = iter + 1;
        if tc.log_every > 0 && iter % tc.log_every == 0 {
            log::info!("iter {iter}: loss {mean_loss:.6}");
        }

        let due_eval = tc.eval_every > 0 && (iter + 1) % tc.eval_every == 0;
        if due_eval || (tc.checkpoint_every > 0 && (iter + 1) % tc.checkpoint_every == 0) {
            let bundle = assemble_bundle(
                vocab, &enc_cfg, &dec_cfg, setup, &stats, &encoder, &decoder, iterations_run,
                loss_curve.clone(),
            );
            if tc.checkpoint_every > 0 && (iter + 1) % tc.checkpoint_every == 0 {
                if let Some(dir) = &tc.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    save_bundle(&bundle, &dir.join("checkpoint-latest.bin"))?;
                }
            }
            if due_eval {
                let acc = train_subset_accuracy(&bundle, &examples, tc.seed)?;
                log::info!("iter {iter}: train-subset accuracy {acc:.2}%");
                if let Some(dir) = &tc.checkpoint_dir {
                    if tc.checkpoint_every > 0 && acc > best_acc {
                        std::fs::create_dir_all(dir)?;
                        save_bundle(&bundle, &dir.join("checkpoint-best.bin"))?;
                    }
                }
                best_acc = best_acc.max(acc);
                if tc.early_stop_train_acc > 0.0 && acc >= tc.early_stop_train_acc * 100.0 {
                    log::info!("early stop at iter {iter}: accuracy {acc:.2}%");
                    break;
                }
            }
        }
    }

    Ok(assemble_bundle(
        vocab, &enc_cfg, &dec_cfg, setup, &stats, &encoder, &decoder, iterations_run, loss_curve,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_bundle(
    vocab: &PoLVocab,
    enc_cfg: &EncoderConfig,
    dec_cfg: &DecoderConfig,
    setup: &TrainSetup,
    stats: &NormStats,
    encoder: &Encoder,
    decoder: &Option<Decoder>,
    iterations: usize,
    loss_curve: Vec<f64>,
) -> ModelBundle {
    ModelBundle {
        direction: setup.train.direction,
        vocab: vocab.clone(),
        encoder_cfg: *enc_cfg,
        decoder_cfg: *dec_cfg,
        diffusion: setup.diffusion,
        loss: setup.loss,
        norm_stats: stats.clone(),
        use_decoder: setup.train.use_decoder,
        seed: setup.train.seed,
        iterations,
        loss_curve,
        encoder: encoder.clone(),
        decoder: decoder.clone(),
    }
}

fn train_example(
    ex: &Example,
    encoder: &Encoder,
    decoder: Option<&Decoder>,
    sched: &NoiseSchedule,
    setup: &TrainSetup,
    iter: u64,
    slot: u64,
) -> Result<(f64, Encoder, Option<Decoder>)> {
    let tc = &setup.train;
    let mut rng = rng_for(tc.seed, &[TAG_TRAIN, iter, slot]);
    let t_len = ex.x.nrows();
    let c = encoder.cfg.num_classes;

    let (enc_out, enc_cache) = encoder.forward(&ex.x, Some(&mut rng))?;
    let p_aux = softmax_rows(&enc_out.aux_logits);
    let mut enc_g = encoder.zeros_like();

    match decoder {
        None => {
            // encoder-only: plain cross entropy on the auxiliary head
            let loss = ce_loss(&p_aux, &ex.labels)?;
            let dp_aux = ce_loss_backward(&p_aux, &ex.labels)?;
            let d_aux_logits = softmax_rows_backward(&p_aux, &dp_aux);
            let d_emb = Array2::zeros((t_len, encoder.cfg.hidden));
            encoder.backward(&enc_cache, &d_emb, &d_aux_logits, &mut enc_g);
            Ok((loss, enc_g, None))
        }
        Some(decoder) => {
            let kind = if tc.mask_enabled {
                sample_mask_kind(&mut rng)
            } else {
                MaskKind::None
            };
            let mask = make_mask(kind, t_len, Some(&ex.label_seq), tc.boundary_window)?;
            let x_enc_m = mask.apply(&enc_out.embedding);
            let s = rng.random_range(1..=sched.steps);
            let eps = randn(t_len, c, &mut rng);
            let x0 = encode_labels(&ex.labels, c, setup.diffusion.embed_scale)?;
            let y_s = forward_diffuse(&x0, s, sched, &eps);
            let dec_cache = decoder.forward(&y_s, &x_enc_m, s, Some(&mut rng))?;
            let (loss, dp_dec, dp_aux) = total_loss_grad(
                &dec_cache.probs,
                &p_aux,
                &ex.labels,
                &ex.bbar,
                &setup.loss,
            )?;
            let d_aux_logits = softmax_rows_backward(&p_aux, &dp_aux);
            let mut dec_g = decoder.zeros_like();
            let dx_enc_m = decoder.backward(&dec_cache, &dp_dec, &mut dec_g);
            let dx_enc = mask.apply_backward(&dx_enc_m);
            encoder.backward(&enc_cache, &dx_enc, &d_aux_logits, &mut enc_g);
            Ok((loss, enc_g, Some(dec_g)))
        }
    }
}

/// Frame accuracy of full inference over (a subset of) training examples;
/// used for logging, checkpoint selection, and early stopping.
fn train_subset_accuracy(bundle: &ModelBundle, examples: &[Example], seed: u64) -> Result<f64> {
    let subset = examples.len().min(8);
    let accs: Vec<Result<f64>> = (0..subset)
        .into_par_iter()
        .map(|i| {
            let pred = infer_normalized(
                bundle,
                &examples[i].x,
                bundle.diffusion.infer_steps,
                rng_seed_for(seed, &[TAG_PRED, i as u64]),
                "train-subset".to_string(),
                false,
            )?;
            accuracy(&examples[i].labels, &pred.labels.labels)
        })
        .collect();
    let mut total = 0.0;
    for a in accs {
        total += a?;
    }
    Ok(total / subset as f64)
}

fn rng_seed_for(seed: u64, tags: &[u64]) -> u64 {
    let mut rng = rng_for(seed, tags);
    rng.random()
}

/// Result of iterative inference: final labels plus decoded intermediate
/// states ordered from the noisiest visited step down to 0.
#[derive(Debug, Clone)]
pub struct InferResult {
    pub labels: LabelSeq,
    pub snapshots: Vec<(usize, LabelSeq)>,
}

/// Run inference on a raw series: normalize with the bundle's statistics,
/// embed, then iteratively denoise from pure noise with the deterministic
/// skipped-step sampler.
pub fn infer(
    bundle: &ModelBundle,
    x: &OrbitSeries,
    infer_steps: usize,
    seed: u64,
) -> Result<InferResult> {
    infer_with_input_noise(bundle, x, infer_steps, seed, 0.0)
}

/// [`infer`] with zero-mean Gaussian noise of std `input_noise_std` added to
/// the normalized inputs (measurement-error robustness probes).
pub fn infer_with_input_noise(
    bundle: &ModelBundle,
    x: &OrbitSeries,
    infer_steps: usize,
    seed: u64,
    input_noise_std: f64,
) -> Result<InferResult> {
    if x.is_empty() {
        return Err(Error::EmptyInput(format!("series {} has no rows", x.object_id)));
    }
    let normalized = bundle.norm_stats.apply(x)?;
    let mut values = normalized.values;
    if input_noise_std > 0.0 {
        let mut rng = rng_for(seed, &[TAG_INFER, 0x4e4f49]); // "NOI"
        let noise = randn(values.nrows(), values.ncols(), &mut rng);
        values = values + noise * input_noise_std;
    }
    infer_normalized(
        bundle,
        &values,
        infer_steps,
        seed,
        x.object_id.clone(),
        true,
    )
}

fn infer_normalized(
    bundle: &ModelBundle,
    x_norm: &Mat,
    infer_steps: usize,
    seed: u64,
    object_id: String,
    with_snapshots: bool,
) -> Result<InferResult> {
    let (enc_out, _) = bundle.encoder.forward(x_norm, None)?;
    let direction = bundle.direction;
    let decoder = match (&bundle.decoder, bundle.use_decoder) {
        (Some(d), true) => d,
        _ => {
            // encoder-only model: frame-wise argmax of the auxiliary head
            let labels = decode_labels(&enc_out.aux_logits, object_id, direction);
            return Ok(InferResult {
                labels,
                snapshots: Vec::new(),
            });
        }
    };
    if infer_steps == 0 {
        return Err(Error::InvalidConfig("infer_steps must be >= 1".into()));
    }
    let sched = bundle.diffusion.schedule()?;
    let t_len = x_norm.nrows();
    let c = bundle.vocab.num_classes();
    let cond = decoder.precompute_condition(&enc_out.embedding)?;
    let mut rng = rng_for(seed, &[TAG_INFER]);
    let mut y = randn(t_len, c, &mut rng);
    let steps = sched.skip_steps(infer_steps);
    let mut snapshots = Vec::new();
    for (i, &s) in steps.iter().enumerate() {
        if with_snapshots {
            snapshots.push((s, decode_labels(&y, object_id.clone(), direction)));
        }
        let probs = decoder.denoise_with_cache(&y, s, &cond)?;
        let x0_hat = Decoder::probs_to_x0(&probs, bundle.diffusion.embed_scale);
        let s_to = steps.get(i + 1).copied().unwrap_or(0);
        let noise = if bundle.diffusion.eta > 0.0 {
            Some(randn(t_len, c, &mut rng))
        } else {
            None
        };
        y = ddim_step(&y, s, s_to, &x0_hat, &sched, bundle.diffusion.eta, noise.as_ref())?;
    }
    let labels = decode_labels(&y, object_id.clone(), direction);
    if with_snapshots {
        snapshots.push((0, labels.clone()));
    }
    Ok(InferResult { labels, snapshots })
}

/// Parallel inference over a set of objects; deterministic per (seed, index).
pub fn predict_objects(
    bundle: &ModelBundle,
    objects: &[DatasetObject],
    infer_steps: usize,
    seed: u64,
) -> Result<Vec<InferResult>> {
    predict_objects_with_noise(bundle, objects, infer_steps, seed, 0.0)
}

pub fn predict_objects_with_noise(
    bundle: &ModelBundle,
    objects: &[DatasetObject],
    infer_steps: usize,
    seed: u64,
    input_noise_std: f64,
) -> Result<Vec<InferResult>> {
    objects
        .par_iter()
        .enumerate()
        .map(|(i, obj)| {
            infer_with_input_noise(
                bundle,
                &obj.series,
                infer_steps,
                rng_seed_for(seed, &[TAG_PRED, i as u64]),
                input_noise_std,
            )
        })
        .collect()
}

const BUNDLE_MAGIC: &[u8; 4] = b"PLSB";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    format_version: u32,
    tool_version: String,
    direction: Direction,
    vocab: PoLVocab,
    encoder_cfg: EncoderConfig,
    decoder_cfg: DecoderConfig,
    diffusion: DiffusionParams,
    loss: LossWeights,
    norm_stats: NormStats,
    use_decoder: bool,
    seed: u64,
    iterations: usize,
    loss_curve: Vec<f64>,
}

fn collect_blobs<P: Params>(p: &P) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit(&mut |name, s| out.push((name.to_string(), s.to_vec())));
    out
}

/// Serialize a bundle: magic, version, JSON header, named parameter blobs,
/// and a trailing SHA-256 of everything before it.
pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let header = BundleHeader {
        format_version: BUNDLE_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        direction: bundle.direction,
        vocab: bundle.vocab.clone(),
        encoder_cfg: bundle.encoder_cfg,
        decoder_cfg: bundle.decoder_cfg,
        diffusion: bundle.diffusion,
        loss: bundle.loss,
        norm_stats: bundle.norm_stats.clone(),
        use_decoder: bundle.use_decoder,
        seed: bundle.seed,
        iterations: bundle.iterations,
        loss_curve: bundle.loss_curve.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(BUNDLE_MAGIC);
    buf.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    let mut blobs = collect_blobs(&bundle.encoder);
    if let Some(dec) = &bundle.decoder {
        blobs.extend(collect_blobs(dec));
    }
    buf.extend_from_slice(&(blobs.len() as u64).to_le_bytes());
    for (name, data) in &blobs {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut f = std::fs::File::create(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::BundleFormat("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::IoPath {
            path: path.to_path_buf(),
            source: e,
        })?
        .read_to_end(&mut buf)?;
    if buf.len() < 32 + 16 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, stored) = buf.split_at(buf.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(Error::ChecksumMismatch);
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != BUNDLE_MAGIC {
        return Err(Error::BundleFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != BUNDLE_VERSION {
        return Err(Error::BundleFormat(format!(
            "unsupported bundle version {version} (expected {BUNDLE_VERSION})"
        )));
    }
    let hlen = cur.take_u64()? as usize;
    let header: BundleHeader = serde_json::from_slice(cur.take(hlen)?)?;
    let nblobs = cur.take_u64()? as usize;
    let mut blobs: std::collections::BTreeMap<String, Vec<f64>> = std::collections::BTreeMap::new();
    for _ in 0..nblobs {
        let nlen = cur.take_u64()? as usize;
        let name = String::from_utf8(cur.take(nlen)?.to_vec())
            .map_err(|e| Error::BundleFormat(format!("bad blob name: {e}")))?;
        let dlen = cur.take_u64()? as usize;
        let raw = cur.take(8 * dlen)?;
        let mut data = Vec::with_capacity(dlen);
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        blobs.insert(name, data);
    }

    let mut encoder = Encoder::new(header.encoder_cfg, 0)?;
    fill_params(&mut encoder, &blobs)?;
    let decoder = if header.use_decoder {
        let mut d = Decoder::new(header.decoder_cfg, 0)?;
        fill_params(&mut d, &blobs)?;
        Some(d)
    } else {
        None
    };
    Ok(ModelBundle {
        direction: header.direction,
        vocab: header.vocab,
        encoder_cfg: header.encoder_cfg,
        decoder_cfg: header.decoder_cfg,
        diffusion: header.diffusion,
        loss: header.loss,
        norm_stats: header.norm_stats,
        use_decoder: header.use_decoder,
        seed: header.seed,
        iterations: header.iterations,
        loss_curve: header.loss_curve,
        encoder,
        decoder,
    })
}

fn fill_params<P: Params>(
    p: &mut P,
    blobs: &std::collections::BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let mut missing: Vec<String> = Vec::new();
    p.visit_mut(&mut |name, slice| match blobs.get(name) {
        Some(data) if data.len() == slice.len() => slice.copy_from_slice(data),
        Some(data) => missing.push(format!("{name} (size {} != {})", data.len(), slice.len())),
        None => missing.push(name.to_string()),
    });
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::BundleFormat(format!(
            "missing or mismatched parameter blobs: {}",
            missing.join(", ")
        )))
    }
}

//! Time-series encoder: a fully convolutional stack of dilated residual
//! blocks mapping a normalized T x d positional series to a T x h
//! conditional embedding, plus an auxiliary per-timestep class head.

use ndarray::{concatenate, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    apply_mask, dropout_mask, relu, relu_backward, rng_for, Conv1d, ConvPadding, Linear, Mat,
    Params,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_in: 9,
            hidden: 64,
            n_layers: 9,
            kernel: 12,
            dropout: 0.1,
            num_classes: 5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 || self.kernel < 1 || self.d_in < 1 || self.hidden < 1 {
            return Err(Error::InvalidConfig(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Span of input timesteps feeding one output step:
    /// `1 + sum_{l=1..L} (K-1) * 2^l`.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        for l in 1..=self.n_layers {
            rf += (self.kernel - 1) * (1usize << l);
        }
        rf
    }
}

/// One residual block: two dilated convolutions sharing a dilation factor
/// with a rectified-linear unit between them and dropout before the residual
/// add.
#[derive(Debug, Clone)]
struct DilatedBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

struct BlockCache {
    input: Mat,
    post_relu: Mat,
    drop_mask: Option<Mat>,
}

impl DilatedBlock {
    fn new(hidden: usize, kernel: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        DilatedBlock {
            conv1: Conv1d::new(hidden, hidden, kernel, dilation, ConvPadding::Symmetric, rng),
            conv2: Conv1d::new(hidden, hidden, kernel, dilation, ConvPadding::Symmetric, rng),
        }
    }

    fn forward(&self, x: &Mat, dropout: f64, rng: Option<&mut ChaCha8Rng>) -> (Mat, BlockCache) {
        let a = relu(&self.conv1.forward(x));
        let h2 = self.conv2.forward(&a);
        let drop_mask = rng.and_then(|r| dropout_mask((h2.nrows(), h2.ncols()), dropout, r));
        let y = x + &apply_mask(&h2, drop_mask.as_ref());
        (
            y,
            BlockCache {
                input: x.clone(),
                post_relu: a,
                drop_mask,
            },
        )
    }

    fn backward(&self, cache: &BlockCache, dy: &Mat, g: &mut DilatedBlock) -> Mat {
        let dh2 = apply_mask(dy, cache.drop_mask.as_ref());
        let da = self.conv2.backward(&cache.post_relu, &dh2, &mut g.conv2);
        let dh1 = relu_backward(&cache.post_relu, &da);
        let dx_conv = self.conv1.backward(&cache.input, &dh1, &mut g.conv1);
        dy + &dx_conv
    }
}

/// Forward-pass byproducts needed for the backward pass.
pub struct EncoderCache {
    input: Mat,
    blocks: Vec<BlockCache>,
    concat: Mat,
    x_enc: Mat,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    in_fc: Linear,
    blocks: Vec<DilatedBlock>,
    out_fc: Linear,
    aux_fc: Linear,
    pub receptive_field: usize,
}

pub struct EncoderOutput {
    pub embedding: Mat,  // T x h
    pub aux_logits: Mat, // T x C
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(seed, &[0x454e43]); // "ENC"
        let in_fc = Linear::new(cfg.d_in, cfg.hidden, &mut rng);
        let blocks = (1..=cfg.n_layers)
            .map(|l| DilatedBlock::new(cfg.hidden, cfg.kernel, 1usize << l, &mut rng))
            .collect();
        let out_fc = Linear::new(cfg.n_layers * cfg.hidden, cfg.hidden, &mut rng);
        let aux_fc = Linear::new(cfg.hidden, cfg.num_classes, &mut rng);
        Ok(Encoder {
            receptive_field: cfg.receptive_field(),
            cfg,
            in_fc,
            blocks,
            out_fc,
            aux_fc,
        })
    }

    /// Run the encoder. `rng` enables dropout (training); pass `None` for
    /// the deterministic evaluation mode.
    pub fn forward(
        &self,
        x: &Mat,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(EncoderOutput, EncoderCache)> {
        if x.ncols() != self.cfg.d_in {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} features, got {}",
                self.cfg.d_in,
                x.ncols()
            )));
        }
        let mut z = self.in_fc.forward(x);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut features: Vec<Mat> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(&z, self.cfg.dropout, rng.as_deref_mut());
            block_caches.push(cache);
            features.push(out.clone());
            z = out;
        }
        let views: Vec<_> = features.iter().map(|f| f.view()).collect();
        let concat = concatenate(Axis(1), &views).expect("uniform feature shapes");
        let x_enc = self.out_fc.forward(&concat);
        let aux_logits = self.aux_fc.forward(&x_enc);
        if x_enc.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder embedding".into()));
        }
        Ok((
            EncoderOutput {
                embedding: x_enc.clone(),
                aux_logits,
            },
            EncoderCache {
                input: x.clone(),
                blocks: block_caches,
                concat,
                x_enc,
            },
        ))
    }

    /// Backward pass; returns the gradient w.r.t. the input series and
    /// accumulates parameter gradients into `g`.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_embedding: &Mat,
        d_aux_logits: &Mat,
        g: &mut Encoder,
    ) -> Mat {
        let d_x_enc = d_embedding + &self.aux_fc.backward(&cache.x_enc, d_aux_logits, &mut g.aux_fc);
        let d_concat = self.out_fc.backward(&cache.concat, &d_x_enc, &mut g.out_fc);
        let h = self.cfg.hidden;
        let l = self.blocks.len();
        // gradient flowing into block l's output: its slice of the concat
        // plus whatever the next block propagated back
        let mut acc = d_concat
            .slice(ndarray::s![.., (l - 1) * h..l * h])
            .to_owned();
        for li in (0..l).rev() {
            let dz_in = self.blocks[li].backward(&cache.blocks[li], &acc, &mut g.blocks[li]);
            if li > 0 {
                acc = dz_in + &d_concat.slice(ndarray::s![.., (li - 1) * h..li * h]);
            } else {
                acc = dz_in;
            }
        }
        self.in_fc.backward(&cache.input, &acc, &mut g.in_fc)
    }
}

impl Params for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.in_fc.visit("enc.in_fc", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv1.visit(&format!("enc.block{i}.conv1"), f);
            b.conv2.visit(&format!("enc.block{i}.conv2"), f);
        }
        self.out_fc.visit("enc.out_fc", f);
        self.aux_fc.visit("enc.aux_fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.in_fc.visit_mut("enc.in_fc", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.conv1.visit_mut(&format!("enc.block{i}.conv1"), f);
            b.conv2.visit_mut(&format!("enc.block{i}.conv2"), f);
        }
        self.out_fc.visit_mut("enc.out_fc", f);
        self.aux_fc.visit_mut("enc.aux_fc", f);
    }

    fn zeros_like(&self) -> Self {
        Encoder {
            cfg: self.cfg,
            in_fc: self.in_fc.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| DilatedBlock {
                    conv1: b.conv1.zeros_like(),
                    conv2: b.conv2.zeros_like(),
                })
                .collect(),
            out_fc: self.out_fc.zeros_like(),
            aux_fc: self.aux_fc.zeros_like(),
            receptive_field: self.receptive_field,
        }
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{softmax_rows, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Adam, ParamSet, ParamTensor};
use crate::sphere::{argmax, top_indices, Codebook, PredictionSet};

/// Shape of the spatial-temporal attention predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub channels: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    /// Frames per input window (F).
    pub frames: usize,
    /// Past viewpoints per input window (A).
    pub history: usize,
    /// Predicted steps (B).
    pub horizon: usize,
    /// Codebook size (K).
    pub classes: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub viewpoint_layers: usize,
    pub decoder_layers: usize,
    /// Start with an all-zero classifier head (uniform outputs).
    pub zero_head: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            frame_height: 8,
            frame_width: 16,
            channels: 3,
            patch_height: 4,
            patch_width: 4,
            frames: 5,
            history: 5,
            horizon: 5,
            classes: 64,
            embed_dim: 32,
            heads: 4,
            ff_dim: 64,
            spatial_layers: 2,
            temporal_layers: 2,
            viewpoint_layers: 1,
            decoder_layers: 1,
            zero_head: false,
        }
    }
}

impl AttentionConfig {
    /// The full-size configuration (1500 classes, 768-wide, 12 heads).
    pub fn full_scale() -> Self {
        Self {
            frame_height: 224,
            frame_width: 448,
            channels: 3,
            patch_height: 16,
            patch_width: 16,
            classes: 1500,
            embed_dim: 768,
            heads: 12,
            ff_dim: 3072,
            spatial_layers: 4,
            temporal_layers: 4,
            viewpoint_layers: 2,
            decoder_layers: 2,
            ..Self::default()
        }
    }

    /// Number of patches per frame (Z).
    pub fn patches(&self) -> usize {
        (self.frame_height / self.patch_height) * (self.frame_width / self.patch_width)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_height * self.patch_width * self.channels
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            self.frame_height,
            self.frame_width,
            self.channels,
            self.patch_height,
            self.patch_width,
            self.frames,
            self.history,
            self.horizon,
            self.classes,
            self.embed_dim,
            self.heads,
            self.ff_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid("attention config", "all sizes must be positive"));
        }
        if self.frame_height % self.patch_height != 0 || self.frame_width % self.patch_width != 0 {
            return Err(Error::invalid("attention config", "patches must tile the frame"));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::invalid("attention config", "embed_dim must be divisible by heads"));
        }
        Ok(())
    }
}

/// A pre-extracted `height x width x channels` feature grid, row-major with
/// channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature grid {height}x{width}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Flattened `ph x pw` patches, row-major over the patch grid.
    fn patches(&self, ph: usize, pw: usize) -> Mat {
        let (gh, gw) = (self.height / ph, self.width / pw);
        let dim = ph * pw * self.channels;
        let mut out = Mat::zeros(gh * gw, dim);
        for pi in 0..gh {
            for pj in 0..gw {
                let row = out.row_mut(pi * gw + pj);
                let mut k = 0;
                for y in 0..ph {
                    for x in 0..pw {
                        let base = ((pi * ph + y) * self.width + pj * pw + x) * self.channels;
                        row[k..k + self.channels].copy_from_slice(&self.data[base..base + self.channels]);
                        k += self.channels;
                    }
                }
            }
        }
        out
    }
}

/// One training example: input window plus the target class sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Vec<FeatureGrid>,
    pub history: Vec<usize>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Ln {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Mha {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
struct Ff {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    ln1: Ln,
    attn: Mha,
    ln2: Ln,
    ff: Ff,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    ln1: Ln,
    self_attn: Mha,
    ln2: Ln,
    cross_attn: Mha,
    ln3: Ln,
    ff: Ff,
}

#[derive(Debug, Clone)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    spatial_pos: usize,
    spatial: Vec<EncoderBlock>,
    temporal_pos: usize,
    temporal: Vec<EncoderBlock>,
    vp_embed: usize,
    vp_pos: usize,
    viewpoint: Vec<EncoderBlock>,
    dec_embed: usize,
    dec_pos: usize,
    decoder: Vec<DecoderBlock>,
    out_ln: Ln,
    head_w: usize,
    head_b: usize,
}

struct Builder {
    params: ParamSet,
    rng: ChaCha8Rng,
}

impl Builder {
    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> usize {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        self.params.push(ParamTensor {
            name,
            rows,
            cols,
            data,
        })
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.params.push(ParamTensor::zeros(name, rows, cols))
    }

    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        self.normal(name, fan_in, fan_out, std)
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        let gain = self.params.push(ParamTensor {
            name: format!("{prefix}.gain"),
            rows: 1,
            cols: d,
            data: vec![1.0; d],
        });
        Ln {
            gain,
            bias: self.zeros(format!("{prefix}.bias"), 1, d),
        }
    }

    fn mha(&mut self, prefix: &str, d: usize) -> Mha {
        Mha {
            wq: self.linear(format!("{prefix}.wq"), d, d),
            wk: self.linear(format!("{prefix}.wk"), d, d),
            wv: self.linear(format!("{prefix}.wv"), d, d),
            wo: self.linear(format!("{prefix}.wo"), d, d),
            bo: self.zeros(format!("{prefix}.bo"), 1, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, hidden: usize) -> Ff {
        Ff {
            w1: self.linear(format!("{prefix}.w1"), d, hidden),
            b1: self.zeros(format!("{prefix}.b1"), 1, hidden),
            w2: self.linear(format!("{prefix}.w2"), hidden, d),
            b2: self.zeros(format!("{prefix}.b2"), 1, d),
        }
    }

    fn encoder(&mut self, prefix: &str, d: usize, hidden: usize) -> EncoderBlock {
        EncoderBlock {
            ln1: self.ln(&format!("{prefix}.ln1"), d),
            attn: self.mha(&format!("{prefix}.attn"), d),
            ln2: self.ln(&format!("{prefix}.ln2"), d),
            ff: self.ff(&format!("{prefix}.ff"), d, hidden),
        }
    }

    fn decoder(&mut self, prefix: &str, d: usize, hidden: usize) -> DecoderBlock {
        DecoderBlock {
            ln1: self.ln(&format!("{prefix}.ln1"), d),
            self_attn: self.mha(&format!("{prefix}.self"), d),
            ln2: self.ln(&format!("{prefix}.ln2"), d),
            cross_attn: self.mha(&format!("{prefix}.cross"), d),
            ln3: self.ln(&format!("{prefix}.ln3"), d),
            ff: self.ff(&format!("{prefix}.ff"), d, hidden),
        }
    }
}

/// Multimodal spatial-temporal attention predictor: a visual encoder (spatial
/// attention within each frame, temporal attention across frames), a
/// viewpoint encoder over codebook tokens, and a causal decoder producing one
/// class distribution per future step.
#[derive(Debug, Clone)]
pub struct AttentionModel {
    config: AttentionConfig,
    params: ParamSet,
    layout: Layout,
    adam: Adam,
}

impl AttentionModel {
    pub fn new(config: AttentionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.embed_dim;
        let mut b = Builder {
            params: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let emb_std = 0.1;
        let patch_w = b.linear("patch.w".into(), c.patch_dim(), d);
        let patch_b = b.zeros("patch.b".into(), 1, d);
        let spatial_pos = b.normal("spatial.pos".into(), c.patches(), d, emb_std);
        let spatial = (0..c.spatial_layers)
            .map(|l| b.encoder(&format!("spatial.{l}"), d, c.ff_dim))
            .collect();
        let temporal_pos = b.normal("temporal.pos".into(), c.frames, d, emb_std);
        let temporal = (0..c.temporal_layers)
            .map(|l| b.encoder(&format!("temporal.{l}"), d, c.ff_dim))
            .collect();
        let vp_embed = b.normal("viewpoint.embed".into(), c.classes, d, emb_std);
        let vp_pos = b.normal("viewpoint.pos".into(), c.history, d, emb_std);
        let viewpoint = (0..c.viewpoint_layers)
            .map(|l| b.encoder(&format!("viewpoint.{l}"), d, c.ff_dim))
            .collect();
        // the extra row is the start-of-sequence token
        let dec_embed = b.normal("decoder.embed".into(), c.classes + 1, d, emb_std);
        let dec_pos = b.normal("decoder.pos".into(), c.horizon, d, emb_std);
        let decoder = (0..c.decoder_layers)
            .map(|l| b.decoder(&format!("decoder.{l}"), d, c.ff_dim))
            .collect();
        let out_ln = b.ln("decoder.out_ln", d);
        let head_w = if c.zero_head {
            b.zeros("head.w".into(), d, c.classes)
        } else {
            b.linear("head.w".into(), d, c.classes)
        };
        let head_b = b.zeros("head.b".into(), 1, c.classes);
        let layout = Layout {
            patch_w,
            patch_b,
            spatial_pos,
            spatial,
            temporal_pos,
            temporal,
            vp_embed,
            vp_pos,
            viewpoint,
            dec_embed,
            dec_pos,
            decoder,
            out_ln,
            head_w,
            head_b,
        };
        Ok(Self {
            config,
            params: b.params,
            layout,
            adam: Adam::new(5e-4),
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn save(&self, stem: impl AsRef<std::path::Path>) -> Result<()> {
        self.params.save(stem)
    }

    /// Loads parameters saved from a model with the same configuration.
    pub fn load_params(&mut self, stem: impl AsRef<std::path::Path>) -> Result<()> {
        let loaded = ParamSet::load(stem)?;
        self.params.assign(&loaded)
    }

    fn check_inputs(&self, frames: &[FeatureGrid], history: &[usize]) -> Result<()> {
        let c = &self.config;
        if frames.len() != c.frames {
            return Err(Error::Shape(format!("expected {} frames, got {}", c.frames, frames.len())));
        }
        for f in frames {
            if (f.height, f.width, f.channels) != (c.frame_height, c.frame_width, c.channels)
                || f.data.len() != f.height * f.width * f.channels
            {
                return Err(Error::Shape(format!(
                    "frame {}x{}x{} does not match {}x{}x{}",
                    f.height, f.width, f.channels, c.frame_height, c.frame_width, c.channels
                )));
            }
        }
        if history.len() != c.history {
            return Err(Error::Shape(format!(
                "expected {} history tokens, got {}",
                c.history,
                history.len()
            )));
        }
        if let Some(&bad) = history.iter().find(|&&h| h >= c.classes) {
            return Err(Error::OutOfRange {
                what: "history class",
                index: bad,
                limit: c.classes,
            });
        }
        Ok(())
    }

    fn attention(&self, t: &mut Tape, q_in: Var, kv_in: Var, m: &Mha, causal: bool) -> Var {
        let heads = self.config.heads;
        let dh = self.config.embed_dim / heads;
        let (wq, wk, wv, wo, bo) = (t.param(m.wq), t.param(m.wk), t.param(m.wv), t.param(m.wo), t.param(m.bo));
        let q = t.matmul(q_in, wq);
        let k = t.matmul(kv_in, wk);
        let v = t.matmul(kv_in, wv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let scores = t.matmul_t(qh, kh);
            let scores = t.scale(scores, 1.0 / (dh as f64).sqrt());
            let w = t.softmax(scores, causal);
            outs.push(t.matmul(w, vh));
        }
        let cat = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        let o = t.matmul(cat, wo);
        t.add_row(o, bo)
    }

    fn layer_norm(&self, t: &mut Tape, x: Var, ln: &Ln) -> Var {
        let (g, b) = (t.param(ln.gain), t.param(ln.bias));
        t.layer_norm(x, g, b)
    }

    fn feed_forward(&self, t: &mut Tape, x: Var, ff: &Ff) -> Var {
        let (w1, b1, w2, b2) = (t.param(ff.w1), t.param(ff.b1), t.param(ff.w2), t.param(ff.b2));
        let h = t.matmul(x, w1);
        let h = t.add_row(h, b1);
        let h = t.gelu(h);
        let o = t.matmul(h, w2);
        t.add_row(o, b2)
    }

    fn encoder_block(&self, t: &mut Tape, x: Var, blk: &EncoderBlock) -> Var {
        let h = self.layer_norm(t, x, &blk.ln1);
        let a = self.attention(t, h, h, &blk.attn, false);
        let x = t.add(x, a);
        let h = self.layer_norm(t, x, &blk.ln2);
        let f = self.feed_forward(t, h, &blk.ff);
        t.add(x, f)
    }

    /// Encoder memory: F visual tokens followed by A viewpoint tokens.
    fn encode(&self, t: &mut Tape, frames: &[FeatureGrid], history: &[usize]) -> Var {
        let c = &self.config;
        let l = &self.layout;
        let (pw, pb, ppos) = (t.param(l.patch_w), t.param(l.patch_b), t.param(l.spatial_pos));
        let mut pooled = Vec::with_capacity(frames.len());
        for f in frames {
            let patches = t.input(f.patches(c.patch_height, c.patch_width));
            let x = t.matmul(patches, pw);
            let x = t.add_row(x, pb);
            let mut x = t.add(x, ppos);
            for blk in &l.spatial {
                x = self.encoder_block(t, x, blk);
            }
            pooled.push(t.mean_rows(x));
        }
        let tpos = t.param(l.temporal_pos);
        let x = t.concat_rows(&pooled);
        let mut z = t.add(x, tpos);
        for blk in &l.temporal {
            z = self.encoder_block(t, z, blk);
        }
        let (emb, vpos) = (t.param(l.vp_embed), t.param(l.vp_pos));
        let y = t.gather(emb, history);
        let mut y = t.add(y, vpos);
        for blk in &l.viewpoint {
            y = self.encoder_block(t, y, blk);
        }
        t.concat_rows(&[z, y])
    }

    /// Logits (one row per input token) for a decoder input that starts with
    /// the start token.
    fn decode(&self, t: &mut Tape, memory: Var, tokens: &[usize]) -> Var {
        let l = &self.layout;
        let (emb, pos) = (t.param(l.dec_embed), t.param(l.dec_pos));
        let x = t.gather(emb, tokens);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let p = t.gather(pos, &positions);
        let mut x = t.add(x, p);
        for blk in &l.decoder {
            let h = self.layer_norm(t, x, &blk.ln1);
            let a = self.attention(t, h, h, &blk.self_attn, true);
            x = t.add(x, a);
            let h = self.layer_norm(t, x, &blk.ln2);
            let a = self.attention(t, h, memory, &blk.cross_attn, false);
            x = t.add(x, a);
            let h = self.layer_norm(t, x, &blk.ln3);
            let f = self.feed_forward(t, h, &blk.ff);
            x = t.add(x, f);
        }
        let x = self.layer_norm(t, x, &l.out_ln);
        let (hw, hb) = (t.param(l.head_w), t.param(l.head_b));
        let logits = t.matmul(x, hw);
        t.add_row(logits, hb)
    }

    fn bos(&self) -> usize {
        self.config.classes
    }

    /// Greedy autoregressive decoding after forcing `prefix` as the first
    /// classes. Returns B probability vectors over the K classes.
    fn rollout(&self, frames: &[FeatureGrid], history: &[usize], prefix: &[usize]) -> Vec<Vec<f64>> {
        let mut t = Tape::new(&self.params);
        let memory = self.encode(&mut t, frames, history);
        let mut tokens = vec![self.bos()];
        let mut out = Vec::with_capacity(self.config.horizon);
        for step in 0..self.config.horizon {
            let logits = self.decode(&mut t, memory, &tokens);
            let last = t.value(logits).row(tokens.len() - 1).to_vec();
            let probs = softmax_rows(&Mat::from_vec(1, last.len(), last), false).data;
            let next = prefix.get(step).copied().unwrap_or_else(|| argmax(&probs));
            tokens.push(next);
            out.push(probs);
        }
        out
    }

    /// Per-step class distributions (B x K) with greedy feedback of the
    /// previous argmax class.
    pub fn forward(&self, frames: &[FeatureGrid], history: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(frames, history)?;
        Ok(self.rollout(frames, history, &[]))
    }

    /// I trajectories: the top-I first-step classes, each continued greedily
    /// through the decoder. Probabilities are the first-step class
    /// probabilities.
    pub fn predict(
        &self,
        frames: &[FeatureGrid],
        history: &[usize],
        count: usize,
        codebook: &Codebook,
    ) -> Result<PredictionSet> {
        self.check_inputs(frames, history)?;
        if codebook.len() != self.config.classes {
            return Err(Error::Shape(format!(
                "codebook has {} classes, model {}",
                codebook.len(),
                self.config.classes
            )));
        }
        if count == 0 || count > self.config.classes {
            return Err(Error::invalid("count", format!("I = {count} out of range")));
        }
        let first = self.rollout(frames, history, &[]).swap_remove(0);
        let mut trajectories = Vec::with_capacity(count);
        let mut probabilities = Vec::with_capacity(count);
        for class in top_indices(&first, count) {
            let steps = self.rollout(frames, history, &[class]);
            let mut tr = vec![codebook.centroid(class)];
            tr.extend(steps[1..].iter().map(|p| codebook.centroid(argmax(p))));
            trajectories.push(tr);
            probabilities.push(first[class].max(f64::MIN_POSITIVE));
        }
        PredictionSet::new(trajectories, probabilities)
    }

    fn sample_loss(&self, s: &Sample, grads: Option<(&mut [Vec<f64>], f64)>) -> Result<f64> {
        self.check_inputs(&s.frames, &s.history)?;
        let c = &self.config;
        if s.targets.len() != c.horizon {
            return Err(Error::Shape(format!(
                "expected {} targets, got {}",
                c.horizon,
                s.targets.len()
            )));
        }
        if let Some(&bad) = s.targets.iter().find(|&&x| x >= c.classes) {
            return Err(Error::OutOfRange {
                what: "target class",
                index: bad,
                limit: c.classes,
            });
        }
        let mut t = Tape::new(&self.params);
        let memory = self.encode(&mut t, &s.frames, &s.history);
        // teacher forcing: start token followed by all but the last target
        let mut tokens = vec![self.bos()];
        tokens.extend_from_slice(&s.targets[..c.horizon - 1]);
        let logits = self.decode(&mut t, memory, &tokens);
        let loss = t.cross_entropy(logits, &s.targets);
        let value = t.value(loss).data[0];
        if let Some((g, seed)) = grads {
            t.backward(loss, seed, g);
        }
        Ok(value)
    }

    /// Mean cross-entropy over the batch and all steps.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s, None)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter
    /// tensor.
    pub fn loss_and_grads(&self, batch: &[Sample]) -> Result<(f64, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "empty batch"));
        }
        let mut grads = self.params.zero_grads();
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s, Some((&mut grads, w)))?;
        }
        Ok((total * w, grads))
    }

    /// One Adam step on the batch cross-entropy. Returns the loss before the
    /// update; a non-finite loss leaves the parameters untouched.
    pub fn train_step(&mut self, batch: &[Sample], learning_rate: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        self.adam.lr = learning_rate;
        self.adam.step(&mut self.params, &grads);
        Ok(loss)
    }
}

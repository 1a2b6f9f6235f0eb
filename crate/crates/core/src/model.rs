//! The three encoders: an image-level vision encoder, a text encoder, and a
//! multi-modal encoder whose layers run text self-attention, cross-attention
//! with text as query over visual tokens as key/value, then a feed-forward
//! network. Plus the bias-free contrastive projection heads and the match
//! and MLM output heads.
//!
//! All blocks are pre-norm with GELU activations and layer-norm eps 1e-6.
//! Weights initialize from a truncated normal (std 0.02, cut at two sigma).

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tokenizer::{TokenSequence, Vocab};

pub const LN_EPS: f64 = 1e-6;
pub const PROJ_EPS: f64 = 1e-12;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;

/// One video frame: image_size x image_size x channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub pixels: Array3<f32>,
}

impl FrameTensor {
    pub fn zeros(config: &ModelConfig) -> Self {
        FrameTensor {
            pixels: Array3::zeros((config.image_size, config.image_size, config.channels)),
        }
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        let want = (config.image_size, config.image_size, config.channels);
        if self.pixels.dim() != want {
            return Err(Error::Config(format!(
                "frame shape {:?} does not match config {:?}",
                self.pixels.dim(),
                want
            )));
        }
        if self.pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::Input("frame contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Encoder output: states with validity mask and the CLS (position 0) state.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub states: Mat,
    pub mask: Vec<bool>,
    pub pooled: Vec<f64>,
}

/// Multi-modal encoder output over the text positions.
#[derive(Debug, Clone)]
pub struct FusedOutput {
    pub states: Mat,
    pub match_logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionHead {
    Vision,
    Text,
}

/// Flat name -> matrix parameter store; iteration order is always sorted.
#[derive(Debug, Clone, Default)]
pub struct Params {
    map: BTreeMap<String, Mat>,
}

impl Params {
    pub fn get(&self, name: &str) -> &Mat {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.map.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller, resampled until within two standard deviations.
    loop {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn init_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| trunc_normal(rng, 0.02))
}

/// The model: config, tokenizer vocabulary and parameters. Forward passes
/// are pure functions of `(params, inputs)`; training mutates params
/// externally through the optimizer.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

fn block_shapes(prefix: &str, d: usize, cross: bool, out: &mut BTreeMap<String, (usize, usize)>) {
    let mut put = |name: String, shape: (usize, usize)| {
        out.insert(name, shape);
    };
    put(format!("{prefix}.ln1.g"), (1, d));
    put(format!("{prefix}.ln1.b"), (1, d));
    for w in ["wq", "wk", "wv", "wo"] {
        put(format!("{prefix}.attn.{w}"), (d, d));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        put(format!("{prefix}.attn.{b}"), (1, d));
    }
    if cross {
        put(format!("{prefix}.lnx.g"), (1, d));
        put(format!("{prefix}.lnx.b"), (1, d));
        for w in ["wq", "wk", "wv", "wo"] {
            put(format!("{prefix}.xattn.{w}"), (d, d));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            put(format!("{prefix}.xattn.{b}"), (1, d));
        }
    }
    put(format!("{prefix}.ln2.g"), (1, d));
    put(format!("{prefix}.ln2.b"), (1, d));
    put(format!("{prefix}.ffn.w1"), (d, 4 * d));
    put(format!("{prefix}.ffn.b1"), (1, 4 * d));
    put(format!("{prefix}.ffn.w2"), (4 * d, d));
    put(format!("{prefix}.ffn.b2"), (1, d));
}

/// Expected parameter inventory for a configuration.
pub fn expected_shapes(
    config: &ModelConfig,
    temporal: bool,
    qa: bool,
) -> BTreeMap<String, (usize, usize)> {
    let d = config.hidden_dim;
    let mut out = BTreeMap::new();
    out.insert("vision.patch.w".into(), (config.patch_dim(), d));
    out.insert("vision.patch.b".into(), (1, d));
    out.insert("vision.cls".into(), (1, d));
    out.insert("vision.pos".into(), (config.vision_len(), d));
    for i in 0..config.vision_layers {
        block_shapes(&format!("vision.block{i}"), d, false, &mut out);
    }
    out.insert("vision.ln_out.g".into(), (1, d));
    out.insert("vision.ln_out.b".into(), (1, d));

    out.insert("text.tok".into(), (config.vocab_size, d));
    out.insert("text.pos".into(), (config.max_text_len, d));
    for i in 0..config.text_layers {
        block_shapes(&format!("text.block{i}"), d, false, &mut out);
    }
    out.insert("text.ln_out.g".into(), (1, d));
    out.insert("text.ln_out.b".into(), (1, d));

    for i in 0..config.multimodal_layers {
        block_shapes(&format!("mm.block{i}"), d, true, &mut out);
    }
    out.insert("mm.ln_out.g".into(), (1, d));
    out.insert("mm.ln_out.b".into(), (1, d));

    out.insert("proj.vision.w".into(), (d, config.proj_dim));
    out.insert("proj.text.w".into(), (d, config.proj_dim));
    out.insert("vtm.w".into(), (d, 1));
    out.insert("vtm.b".into(), (1, 1));
    out.insert("mlm.w".into(), (d, config.vocab_size));
    out.insert("mlm.b".into(), (1, config.vocab_size));
    out.insert("log_tau".into(), (1, 1));

    if temporal {
        out.insert("temporal.table".into(), (config.t_train_temporal, d));
        for i in 0..config.temporal_layers {
            block_shapes(&format!("temporal.block{i}"), d, false, &mut out);
        }
        out.insert("temporal.ln_out.g".into(), (1, d));
        out.insert("temporal.ln_out.b".into(), (1, d));
    }
    if qa {
        for i in 0..config.multimodal_layers {
            block_shapes(&format!("qa.block{i}"), d, true, &mut out);
        }
        out.insert("qa.ln_out.g".into(), (1, d));
        out.insert("qa.ln_out.b".into(), (1, d));
        out.insert("qa.lm.w".into(), (d, config.vocab_size));
        out.insert("qa.lm.b".into(), (1, config.vocab_size));
    }
    out
}

fn fill_param(name: &str, shape: (usize, usize), rng: &mut ChaCha8Rng, tau_init: f64) -> Mat {
    let is_ln_gain = name.ends_with(".g") || name.ends_with("ln_out.g");
    let is_ln_shift = name.ends_with(".b") && (name.contains(".ln") || name.contains("ln_out"));
    if name == "log_tau" {
        return Mat::from_elem((1, 1), tau_init.ln());
    }
    if name == "temporal.table" {
        return Mat::zeros(shape);
    }
    if is_ln_gain {
        return Mat::from_elem(shape, 1.0);
    }
    if is_ln_shift {
        return Mat::zeros(shape);
    }
    init_mat(rng, shape.0, shape.1)
}

impl Model {
    /// Fresh single-frame model. `config.vocab_size` is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        config.vocab_size = vocab.size();
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let mut params = Params::default();
        for (name, shape) in expected_shapes(&config, false, false) {
            params.insert(name.clone(), fill_param(&name, shape, &mut rng, config.temperature_init));
        }
        Ok(Model { config, vocab, params })
    }

    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: Params) -> Result<Model> {
        config.validate()?;
        if config.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "config vocab_size {} != vocabulary size {}",
                config.vocab_size,
                vocab.size()
            )));
        }
        let model = Model { config, vocab, params };
        let want = expected_shapes(&model.config, model.has_temporal(), model.has_qa());
        for (name, shape) in &want {
            if !model.params.contains(name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
            let got = model.params.get(name).dim();
            if got != *shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        if model.params.len() != want.len() {
            let extra: Vec<&String> =
                model.params.names().filter(|n| !want.contains_key(*n)).collect();
            return Err(Error::Checkpoint(format!("unexpected parameters: {extra:?}")));
        }
        Ok(model)
    }

    pub fn has_temporal(&self) -> bool {
        self.params.contains("temporal.table")
    }

    pub fn has_qa(&self) -> bool {
        self.params.contains("qa.lm.w")
    }

    /// Add the temporal encoder on top of an existing (typically pre-trained
    /// single-frame) model. The temporal position table starts at zero.
    pub fn add_temporal(&mut self, seed: u64) {
        if self.has_temporal() {
            return;
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let base = expected_shapes(&self.config, false, false);
        for (name, shape) in expected_shapes(&self.config, true, false) {
            if !base.contains_key(&name) {
                self.params
                    .insert(name.clone(), fill_param(&name, shape, &mut rng, self.config.temperature_init));
            }
        }
    }

    /// Add the answer decoder, initialized from the multi-modal encoder
    /// weights; only the LM head is fresh.
    pub fn add_qa_decoder(&mut self, seed: u64) {
        if self.has_qa() {
            return;
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let base = expected_shapes(&self.config, self.has_temporal(), false);
        for (name, shape) in expected_shapes(&self.config, self.has_temporal(), true) {
            if base.contains_key(&name) {
                continue;
            }
            let value = if let Some(mm_name) = name.strip_prefix("qa.") {
                let source = format!("mm.{mm_name}");
                if self.params.contains(&source) {
                    self.params.get(&source).clone()
                } else {
                    fill_param(&name, shape, &mut rng, self.config.temperature_init)
                }
            } else {
                fill_param(&name, shape, &mut rng, self.config.temperature_init)
            };
            self.params.insert(name, value);
        }
    }

    pub fn forward(&self) -> Forward<'_> {
        Forward {
            tape: Tape::new(),
            model: self,
            bound: BTreeMap::new(),
        }
    }

    /// Encode one frame into `(num_patches + 1) x D` states (CLS first).
    pub fn encode_frame(&self, frame: &FrameTensor) -> Result<EncodedSequence> {
        let mut fw = self.forward();
        let seq = fw.encode_frame(frame)?;
        Ok(fw.extract(&seq))
    }

    /// Encode a token sequence into `max_text_len x D` states (CLS first).
    /// Padded positions are excluded from attention.
    pub fn encode_text(&self, tokens: &TokenSequence) -> Result<EncodedSequence> {
        let mut fw = self.forward();
        let seq = fw.encode_text(tokens)?;
        Ok(fw.extract(&seq))
    }

    /// Fuse text and visual encodings. Visual tokens enter only as an
    /// unordered key/value set, so the output is invariant to any
    /// permutation of visual rows.
    pub fn multimodal_fuse(
        &self,
        text: &EncodedSequence,
        visual: &EncodedSequence,
    ) -> Result<FusedOutput> {
        let mut fw = self.forward();
        let t = SeqVars {
            states: fw.tape.leaf(text.states.clone()),
            mask: text.mask.clone(),
        };
        let v = fw.tape.leaf(visual.states.clone());
        let fused = fw.fuse(&t, v)?;
        Ok(FusedOutput {
            states: fw.tape.value(fused.states).clone(),
            match_logit: fw.tape.scalar(fused.match_logit),
        })
    }

    /// CLS state through the bias-free projection head, L2-normalized.
    pub fn project_pool(&self, seq: &EncodedSequence, head: ProjectionHead) -> Result<Vec<f64>> {
        if seq.pooled.len() != self.config.hidden_dim {
            return Err(Error::Config(format!(
                "pooled state length {} != hidden dim {}",
                seq.pooled.len(),
                self.config.hidden_dim
            )));
        }
        let mut fw = self.forward();
        let pooled = Mat::from_shape_vec((1, seq.pooled.len()), seq.pooled.clone())
            .expect("pooled row");
        let v = fw.tape.leaf(pooled);
        let p = fw.project(v, head);
        Ok(fw.tape.value(p).row(0).to_vec())
    }

    /// Learned temperature after clamping into `[0.01, 1.0]`.
    pub fn temperature(&self) -> f64 {
        self.params.get("log_tau")[(0, 0)].exp().clamp(TAU_MIN, TAU_MAX)
    }
}

/// Variables of one encoded sequence inside a live tape.
#[derive(Debug, Clone)]
pub struct SeqVars {
    pub states: Var,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FusedVars {
    pub states: Var,
    pub match_logit: Var,
}

/// A forward context: one tape plus memoized parameter bindings. All loss
/// construction for a batch happens inside a single context so gradients
/// flow back to every named parameter at once.
pub struct Forward<'a> {
    pub tape: Tape,
    model: &'a Model,
    bound: BTreeMap<String, Var>,
}

impl<'a> Forward<'a> {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    /// Bind a named parameter as a tape leaf (memoized).
    pub fn p(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let var = self.tape.leaf(self.model.params.get(name).clone());
        self.bound.insert(name.to_string(), var);
        var
    }

    /// Gradients of `loss` for every bound parameter.
    pub fn grads(&mut self, loss: Var) -> BTreeMap<String, Mat> {
        let g = self.tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, var) in &self.bound {
            if let Some(m) = g.get(*var) {
                out.insert(name.clone(), m.clone());
            }
        }
        out
    }

    pub fn extract(&self, seq: &SeqVars) -> EncodedSequence {
        let states = self.tape.value(seq.states).clone();
        let pooled = states.row(0).to_vec();
        EncodedSequence {
            states,
            mask: seq.mask.clone(),
            pooled,
        }
    }

    fn linear(&mut self, x: Var, w: &str, b: Option<&str>) -> Var {
        let wv = self.p(w);
        let y = self.tape.matmul(x, wv);
        match b {
            Some(b) => {
                let bv = self.p(b);
                self.tape.add_row(y, bv)
            }
            None => y,
        }
    }

    pub(crate) fn layer_norm_block(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Multi-head attention. `allowed` has one row per query position and
    /// one column per key position.
    fn attention(
        &mut self,
        q_in: Var,
        kv_in: Var,
        allowed: Option<&Array2<bool>>,
        prefix: &str,
    ) -> Var {
        let d = self.config().hidden_dim;
        let heads = self.config().heads;
        let dh = d / heads;
        let q = self.linear(q_in, &format!("{prefix}.wq"), Some(&format!("{prefix}.bq")));
        let k = self.linear(kv_in, &format!("{prefix}.wk"), Some(&format!("{prefix}.bk")));
        let v = self.linear(kv_in, &format!("{prefix}.wv"), Some(&format!("{prefix}.bv")));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = self.tape.slice_cols(k, h * dh, (h + 1) * dh);
            let vh = self.tape.slice_cols(v, h * dh, (h + 1) * dh);
            let kt = self.tape.transpose(kh);
            let scores = self.tape.matmul(qh, kt);
            let scores = self.tape.scale(scores, scale);
            let probs = self.tape.softmax_rows(scores, allowed);
            ctx.push(self.tape.matmul(probs, vh));
        }
        let merged = self.tape.concat_cols(&ctx);
        self.linear(merged, &format!("{prefix}.wo"), Some(&format!("{prefix}.bo")))
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")));
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))
    }

    /// Pre-norm self-attention block: x + attn(ln(x)), then x + ffn(ln(x)).
    pub(crate) fn self_block(
        &mut self,
        x: Var,
        allowed: Option<&Array2<bool>>,
        prefix: &str,
    ) -> Var {
        let n = self.layer_norm_block(x, &format!("{prefix}.ln1"));
        let a = self.attention(n, n, allowed, &format!("{prefix}.attn"));
        let x = self.tape.add(x, a);
        let n = self.layer_norm_block(x, &format!("{prefix}.ln2"));
        let f = self.ffn(n, &format!("{prefix}.ffn"));
        self.tape.add(x, f)
    }

    /// Multi-modal block: self-attention over text, then cross-attention
    /// with text as query and the key/value sequence, then FFN.
    pub(crate) fn cross_block(
        &mut self,
        x: Var,
        kv: Var,
        self_allowed: Option<&Array2<bool>>,
        cross_allowed: Option<&Array2<bool>>,
        prefix: &str,
    ) -> Var {
        let n = self.layer_norm_block(x, &format!("{prefix}.ln1"));
        let a = self.attention(n, n, self_allowed, &format!("{prefix}.attn"));
        let x = self.tape.add(x, a);
        let n = self.layer_norm_block(x, &format!("{prefix}.lnx"));
        let c = self.attention(n, kv, cross_allowed, &format!("{prefix}.xattn"));
        let x = self.tape.add(x, c);
        let n = self.layer_norm_block(x, &format!("{prefix}.ln2"));
        let f = self.ffn(n, &format!("{prefix}.ffn"));
        self.tape.add(x, f)
    }

    /// Raster-ordered patch matrix of a frame, one row per patch.
    fn patch_matrix(&self, frame: &FrameTensor) -> Mat {
        let c = self.config();
        let grid = c.grid();
        let p = c.patch_size;
        let mut out = Mat::zeros((grid * grid, c.patch_dim()));
        for gy in 0..grid {
            for gx in 0..grid {
                let row = gy * grid + gx;
                let mut col = 0;
                for y in 0..p {
                    for x in 0..p {
                        for ch in 0..c.channels {
                            out[(row, col)] = frame.pixels[(gy * p + y, gx * p + x, ch)] as f64;
                            col += 1;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn encode_frame(&mut self, frame: &FrameTensor) -> Result<SeqVars> {
        frame.check_shape(self.config())?;
        let patches = self.patch_matrix(frame);
        let patches = self.tape.leaf(patches);
        let tokens = self.linear(patches, "vision.patch.w", Some("vision.patch.b"));
        let cls = self.p("vision.cls");
        let seq = self.tape.concat_rows(&[cls, tokens]);
        let pos = self.p("vision.pos");
        let mut x = self.tape.add(seq, pos);
        for i in 0..self.config().vision_layers {
            x = self.self_block(x, None, &format!("vision.block{i}"));
        }
        let x = self.layer_norm_block(x, "vision.ln_out");
        let len = self.config().vision_len();
        Ok(SeqVars {
            states: x,
            mask: vec![true; len],
        })
    }

    pub fn encode_text(&mut self, tokens: &TokenSequence) -> Result<SeqVars> {
        let c = self.config();
        if tokens.len() != c.max_text_len {
            return Err(Error::Input(format!(
                "token sequence length {} != max_text_len {}",
                tokens.len(),
                c.max_text_len
            )));
        }
        tokens.validate(c.vocab_size)?;
        let text_layers = c.text_layers;
        let tok_table = self.p("text.tok");
        let emb = self.tape.gather_rows(tok_table, &tokens.ids);
        let pos = self.p("text.pos");
        let mut x = self.tape.add(emb, pos);
        let allowed = key_mask(tokens.len(), &tokens.mask, false);
        for i in 0..text_layers {
            x = self.self_block(x, Some(&allowed), &format!("text.block{i}"));
        }
        let x = self.layer_norm_block(x, "text.ln_out");
        Ok(SeqVars {
            states: x,
            mask: tokens.mask.clone(),
        })
    }

    /// Multi-modal fusion; `visual_states` may be one frame's states or a
    /// row-concatenation of several frames'.
    pub fn fuse(&mut self, text: &SeqVars, visual_states: Var) -> Result<FusedVars> {
        let d = self.config().hidden_dim;
        let vdim = self.tape.value(visual_states).dim();
        if vdim.0 == 0 {
            return Err(Error::Input("multimodal fuse needs at least one visual token".into()));
        }
        if vdim.1 != d {
            return Err(Error::Config(format!(
                "visual token width {} != hidden dim {d}",
                vdim.1
            )));
        }
        let tdim = self.tape.value(text.states).dim();
        if tdim.1 != d {
            return Err(Error::Config(format!("text token width {} != hidden dim {d}", tdim.1)));
        }
        if text.mask.len() != tdim.0 {
            return Err(Error::Input(format!(
                "text mask length {} != text length {}",
                text.mask.len(),
                tdim.0
            )));
        }
        let allowed = key_mask(tdim.0, &text.mask, false);
        let mut x = text.states;
        for i in 0..self.config().multimodal_layers {
            x = self.cross_block(x, visual_states, Some(&allowed), None, &format!("mm.block{i}"));
        }
        let x = self.layer_norm_block(x, "mm.ln_out");
        let cls = self.tape.slice_rows(x, 0, 1);
        let logit = self.linear(cls, "vtm.w", Some("vtm.b"));
        Ok(FusedVars {
            states: x,
            match_logit: logit,
        })
    }

    /// CLS pooling + bias-free linear map + L2 normalization.
    pub fn project(&mut self, pooled: Var, head: ProjectionHead) -> Var {
        let w = match head {
            ProjectionHead::Vision => self.p("proj.vision.w"),
            ProjectionHead::Text => self.p("proj.text.w"),
        };
        let x = self.tape.matmul(pooled, w);
        self.tape.row_l2_normalize(x, PROJ_EPS)
    }

    /// CLS row of an encoded sequence as a 1 x D variable.
    pub fn pool(&mut self, seq: &SeqVars) -> Var {
        self.tape.slice_rows(seq.states, 0, 1)
    }

    /// Clamped temperature and its reciprocal as tape variables.
    pub fn tau(&mut self) -> (Var, Var) {
        let log_tau = self.p("log_tau");
        let tau = self.tape.exp(log_tau);
        let tau = self.tape.clamp(tau, TAU_MIN, TAU_MAX);
        let inv = self.tape.recip(tau);
        (tau, inv)
    }
}

/// Attention mask: query rows may attend to key j iff `key_valid[j]`
/// (and j <= i when `causal`).
pub fn key_mask(q_len: usize, key_valid: &[bool], causal: bool) -> Array2<bool> {
    Array2::from_shape_fn((q_len, key_valid.len()), |(i, j)| {
        key_valid[j] && (!causal || j <= i)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocab;
    use rand::Rng;

    fn test_model() -> Model {
        let vocab = Vocab::build(["red square", "blue circle", "green triangle"]);
        Model::new(ModelConfig::default(), vocab, 7).unwrap()
    }

    fn random_frame(config: &ModelConfig, seed: u64) -> FrameTensor {
        let mut rng = stream_rng(seed, Stream::Generator);
        FrameTensor {
            pixels: Array3::from_shape_fn(
                (config.image_size, config.image_size, config.channels),
                |_| rng.random_range(0.0..1.0),
            ),
        }
    }

    #[test]
    fn frame_encoding_shape_and_determinism() {
        let m = test_model();
        let f = random_frame(&m.config, 1);
        let a = m.encode_frame(&f).unwrap();
        assert_eq!(a.states.dim(), (17, 64));
        assert_eq!(a.pooled.len(), 64);
        let b = m.encode_frame(&f).unwrap();
        let max_diff = (&a.states - &b.states).iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn frame_shape_mismatch_is_config_error() {
        let m = test_model();
        let f = FrameTensor {
            pixels: Array3::zeros((16, 16, 3)),
        };
        assert!(matches!(m.encode_frame(&f), Err(Error::Config(_))));
    }

    #[test]
    fn zero_patch_weights_make_encoding_frame_independent() {
        // With the patch embedding zeroed, every frame reduces to the
        // position encodings propagated through the blocks.
        let mut m = test_model();
        *m.params.get_mut("vision.patch.w") = Mat::zeros((m.config.patch_dim(), 64));
        *m.params.get_mut("vision.patch.b") = Mat::zeros((1, 64));
        let a = m.encode_frame(&random_frame(&m.config, 1)).unwrap();
        let b = m.encode_frame(&random_frame(&m.config, 2)).unwrap();
        let zero = m.encode_frame(&FrameTensor::zeros(&m.config)).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x, y);
        }
        for (x, y) in a.states.iter().zip(zero.states.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn text_encoding_shape_and_padding_invariance() {
        let m = test_model();
        let t = m.vocab.encode("red square", 16).unwrap();
        let a = m.encode_text(&t).unwrap();
        assert_eq!(a.states.dim(), (16, 64));

        // mutate a padded position's id
        let mut t2 = t.clone();
        t2.ids[10] = MASK_ID_FOR_TEST;
        let b = m.encode_text(&t2).unwrap();
        let diff = a
            .pooled
            .iter()
            .zip(b.pooled.iter())
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        assert!(diff <= 1e-6, "pooled state changed by {diff}");
        // valid positions unchanged too
        for i in 0..16 {
            if t.mask[i] {
                for j in 0..64 {
                    assert!((a.states[(i, j)] - b.states[(i, j)]).abs() <= 1e-6);
                }
            }
        }
    }

    const MASK_ID_FOR_TEST: usize = 3;

    #[test]
    fn text_rejects_out_of_vocab() {
        let m = test_model();
        let mut t = m.vocab.encode("red square", 16).unwrap();
        t.ids[1] = m.vocab.size() + 5;
        assert!(matches!(m.encode_text(&t), Err(Error::Input(_))));
    }

    #[test]
    fn text_encoding_bitwise_deterministic() {
        let m = test_model();
        let t = m.vocab.encode("blue circle", 16).unwrap();
        let a = m.encode_text(&t).unwrap();
        let b = m.encode_text(&t).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x, y, "outputs must be bitwise identical");
        }
    }

    #[test]
    fn fuse_shape_and_visual_permutation_invariance() {
        let m = test_model();
        let t = m.vocab.encode("red square", 16).unwrap();
        let text = m.encode_text(&t).unwrap();
        let visual = m.encode_frame(&random_frame(&m.config, 3)).unwrap();
        let fused = m.multimodal_fuse(&text, &visual).unwrap();
        assert_eq!(fused.states.dim(), (16, 64));
        assert!(fused.match_logit.is_finite());

        // permute visual rows
        let mut rng = stream_rng(11, Stream::Shuffle);
        let mut perm: Vec<usize> = (0..visual.states.nrows()).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut permuted = visual.clone();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..visual.states.ncols() {
                permuted.states[(new_row, j)] = visual.states[(old_row, j)];
            }
        }
        let fused_p = m.multimodal_fuse(&text, &permuted).unwrap();
        assert!((fused.match_logit - fused_p.match_logit).abs() <= 1e-5);
        for (a, b) in fused.states.iter().zip(fused_p.states.iter()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn fuse_rejects_empty_visual() {
        let m = test_model();
        let t = m.vocab.encode("red square", 16).unwrap();
        let text = m.encode_text(&t).unwrap();
        let empty = EncodedSequence {
            states: Mat::zeros((0, 64)),
            mask: vec![],
            pooled: vec![0.0; 64],
        };
        assert!(matches!(m.multimodal_fuse(&text, &empty), Err(Error::Input(_))));
    }

    #[test]
    fn projection_is_unit_norm_and_scale_invariant() {
        let m = test_model();
        let visual = m.encode_frame(&random_frame(&m.config, 4)).unwrap();
        let p = m.project_pool(&visual, ProjectionHead::Vision).unwrap();
        assert_eq!(p.len(), 32);
        let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);

        let mut scaled = visual.clone();
        scaled.pooled.iter_mut().for_each(|x| *x *= 3.0);
        let q = m.project_pool(&scaled, ProjectionHead::Vision).unwrap();
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn match_logit_grads_pass_finite_differences() {
        // D=8 configuration per the gradient-correctness contract.
        let vocab = Vocab::build(["red square", "blue circle"]);
        let model = Model::new(ModelConfig::tiny(), vocab, 3).unwrap();
        let frame = random_frame(&model.config, 5);
        let tokens = model.vocab.encode("red square", model.config.max_text_len).unwrap();

        let run = |m: &Model| -> f64 {
            let mut fw = m.forward();
            let text = fw.encode_text(&tokens).unwrap();
            let vis = fw.encode_frame(&frame).unwrap();
            let fused = fw.fuse(&text, vis.states).unwrap();
            fw.tape.scalar(fused.match_logit)
        };

        let mut fw = model.forward();
        let text = fw.encode_text(&tokens).unwrap();
        let vis = fw.encode_frame(&frame).unwrap();
        let fused = fw.fuse(&text, vis.states).unwrap();
        let grads = fw.grads(fused.match_logit);

        let h = 1e-5;
        let mut checked = 0usize;
        for (name, grad) in &grads {
            let base = model.params.get(name).clone();
            for i in 0..base.nrows() {
                for j in 0..base.ncols() {
                    let mut mp = model.clone();
                    mp.params.get_mut(name)[(i, j)] += h;
                    let up = run(&mp);
                    let mut mm = model.clone();
                    mm.params.get_mut(name)[(i, j)] -= h;
                    let down = run(&mm);
                    let num = (up - down) / (2.0 * h);
                    let ana = grad[(i, j)];
                    let denom = num.abs().max(ana.abs()).max(1e-6);
                    assert!(
                        (num - ana).abs() / denom <= 1e-4,
                        "{name}({i},{j}): fd {num} vs grad {ana}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000, "expected to check many parameter entries, got {checked}");
    }
}

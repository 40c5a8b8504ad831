//! Grid encoder and three structurally identical pre-LN decoders with
//! independent parameters and positional tables.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vstp_core::codec::{CONTENT_MAX_LEN, REGION_LEN, STRUCTURED_MAX_LEN};
use vstp_core::synth::{ImageGrid, GRID_CHANNELS};
use vstp_core::{TokenId, Vocabulary};

use crate::error::{ModelError, Result};
use crate::graph::{Graph, NodeId, Segment};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Structured,
    Region,
    Content,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 3] = [DecoderKind::Structured, DecoderKind::Region, DecoderKind::Content];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Structured => "structured",
            DecoderKind::Region => "region",
            DecoderKind::Content => "content",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        DecoderKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| ModelError::Config(format!("unknown decoder {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxLens {
    pub structured: usize,
    pub region: usize,
    pub content: usize,
}

impl Default for MaxLens {
    fn default() -> Self {
        Self { structured: STRUCTURED_MAX_LEN, region: REGION_LEN, content: CONTENT_MAX_LEN }
    }
}

impl MaxLens {
    pub fn get(&self, kind: DecoderKind) -> usize {
        match kind {
            DecoderKind::Structured => self.structured,
            DecoderKind::Region => self.region,
            DecoderKind::Content => self.content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_factor: usize,
    pub encoder_layers: usize,
    /// Input grid cells per side.
    pub grid: usize,
    pub channels: usize,
    /// Patch side of the encoder's input projection.
    pub stride: usize,
    pub max_len: MaxLens,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            layers: 4,
            heads: 8,
            mlp_factor: 4,
            encoder_layers: 2,
            grid: 32,
            channels: GRID_CHANNELS,
            stride: 4,
            max_len: MaxLens::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.layers == 0 || self.mlp_factor == 0 {
            return bad("layers and mlp_factor must be positive".into());
        }
        if self.stride == 0 || !self.grid.is_multiple_of(self.stride) {
            return bad(format!("stride {} does not divide grid {}", self.stride, self.grid));
        }
        for kind in DecoderKind::ALL {
            if self.max_len.get(kind) < 3 {
                return bad(format!("{kind} max length must be at least 3"));
            }
        }
        Ok(())
    }

    /// Visual embeddings per image.
    pub fn n_patches(&self) -> usize {
        (self.grid / self.stride).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.stride * self.stride * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbeddings {
    pub v: Mat,
}

impl VisualEmbeddings {
    pub fn n(&self) -> usize {
        self.v.rows
    }

    pub fn d(&self) -> usize {
        self.v.cols
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct Mlp {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct Encoder {
    patch: Linear,
    pos: ParamId,
    layers: Vec<EncoderLayer>,
    ln_f: Norm,
}

#[derive(Debug, Clone)]
struct Decoder {
    tok: ParamId,
    pos: ParamId,
    layers: Vec<DecoderLayer>,
    ln_f: Norm,
    head: Linear,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let std = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: self.store.normal(format!("{name}.w"), fan_in, fan_out, std, &mut self.rng),
            b: self.store.constant(format!("{name}.b"), 1, fan_out, 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm { g: self.store.constant(format!("{name}.g"), 1, d, 1.0), b: self.store.constant(format!("{name}.b"), 1, d, 0.0) }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, factor: usize) -> Mlp {
        Mlp { up: self.linear(&format!("{name}.up"), d, d * factor), down: self.linear(&format!("{name}.down"), d * factor, d) }
    }
}

/// Sinusoidal code of an ordinal value, used to seed coordinate embeddings.
fn sinusoid(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let angle = t as f64 / 10_000f64.powf((i / 2 * 2) as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    encoder: Encoder,
    decoders: Vec<Decoder>,
}

/// Per-layer cross-attention keys and values of one image for one decoder.
pub struct CrossKv {
    layers: Vec<(NodeId, NodeId)>,
}

/// Self-attention keys and values of the positions decoded so far.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

impl DecoderCache {
    pub fn new(model: &Model) -> Self {
        Self { layers: vec![(Vec::new(), Vec::new()); model.config.layers], len: 0 }
    }

    /// Tokens fed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Cross-attention keys and values as plain matrices, for reuse across
/// decoding steps.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    pub kind: DecoderKind,
    kv: Vec<(Mat, Mat)>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        let (d, f) = (config.d, config.mlp_factor);
        let encoder = Encoder {
            patch: init.linear("enc.patch", config.patch_dim(), d),
            pos: init.store.normal("enc.pos", config.n_patches(), d, 0.1, &mut init.rng),
            layers: (0..config.encoder_layers)
                .map(|l| EncoderLayer {
                    ln1: init.norm(&format!("enc.{l}.ln1"), d),
                    attn: init.attn(&format!("enc.{l}.attn"), d),
                    ln2: init.norm(&format!("enc.{l}.ln2"), d),
                    mlp: init.mlp(&format!("enc.{l}.mlp"), d, f),
                })
                .collect(),
            ln_f: init.norm("enc.ln_f", d),
        };
        let v = vocab.len();
        let n_coords = vocab.n_bins() as usize;
        let decoders = DecoderKind::ALL
            .into_iter()
            .map(|kind| {
                let p = kind.as_str();
                let tok = init.store.normal(format!("{p}.tok"), v, d, 0.5, &mut init.rng);
                let table = init.store.get_mut(tok);
                for t in 0..n_coords {
                    table.row_mut(t).copy_from_slice(&sinusoid(t, d));
                }
                Decoder {
                    tok,
                    pos: init.store.normal(format!("{p}.pos"), config.max_len.get(kind), d, 0.1, &mut init.rng),
                    layers: (0..config.layers)
                        .map(|l| DecoderLayer {
                            ln1: init.norm(&format!("{p}.{l}.ln1"), d),
                            self_attn: init.attn(&format!("{p}.{l}.self"), d),
                            ln2: init.norm(&format!("{p}.{l}.ln2"), d),
                            cross: init.attn(&format!("{p}.{l}.cross"), d),
                            ln3: init.norm(&format!("{p}.{l}.ln3"), d),
                            mlp: init.mlp(&format!("{p}.{l}.mlp"), d, f),
                        })
                        .collect(),
                    ln_f: init.norm(&format!("{p}.ln_f"), d),
                    head: init.linear(&format!("{p}.head"), d, v),
                }
            })
            .collect();
        Ok(Self { config, vocab, params: store, encoder, decoders })
    }

    pub fn max_len(&self, kind: DecoderKind) -> usize {
        self.config.max_len.get(kind)
    }

    /// Flattens the grid into `n_patches × patch_dim` rows.
    pub fn patchify(&self, img: &ImageGrid) -> Result<Mat> {
        let c = &self.config;
        if (img.height, img.width, img.channels) != (c.grid, c.grid, c.channels) {
            return Err(ModelError::Config(format!(
                "grid {}x{}x{} does not match the configured {}x{}x{}",
                img.height, img.width, img.channels, c.grid, c.grid, c.channels
            )));
        }
        let per_side = c.grid / c.stride;
        let mut out = Mat::zeros(c.n_patches(), c.patch_dim());
        for py in 0..per_side {
            for px in 0..per_side {
                let row = out.row_mut(py * per_side + px);
                let mut k = 0;
                for dy in 0..c.stride {
                    for dx in 0..c.stride {
                        for ch in 0..c.channels {
                            row[k] = img.at(py * c.stride + dy, px * c.stride + dx, ch);
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn linear(&self, g: &mut Graph, x: NodeId, l: &Linear) -> NodeId {
        let w = g.param(l.w);
        let b = g.param(l.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph, x: NodeId, n: &Norm) -> NodeId {
        let (gm, bt) = (g.param(n.g), g.param(n.b));
        g.layer_norm(x, gm, bt)
    }

    fn mlp(&self, g: &mut Graph, x: NodeId, m: &Mlp) -> NodeId {
        let h = self.linear(g, x, &m.up);
        let h = g.gelu(h);
        self.linear(g, h, &m.down)
    }

    /// Visual embeddings of a patchified grid, recorded on `g`.
    pub fn encode_graph(&self, g: &mut Graph, patches: &Mat) -> NodeId {
        let e = &self.encoder;
        let x = g.input(patches.clone());
        let x = self.linear(g, x, &e.patch);
        let pos = g.param(e.pos);
        let mut x = g.add(x, pos);
        let segs = [Segment::aligned(0, patches.rows)];
        for layer in &e.layers {
            let h = self.norm(g, x, &layer.ln1);
            let q = self.linear(g, h, &layer.attn.q);
            let k = self.linear(g, h, &layer.attn.k);
            let v = self.linear(g, h, &layer.attn.v);
            let a = g.attention(q, k, v, self.config.heads, false, &segs);
            let a = self.linear(g, a, &layer.attn.o);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.ln2);
            let m = self.mlp(g, h, &layer.mlp);
            x = g.add(x, m);
        }
        self.norm(g, x, &e.ln_f)
    }

    pub fn encode(&self, img: &ImageGrid) -> Result<VisualEmbeddings> {
        Ok(self.encode_patches(&self.patchify(img)?))
    }

    pub fn encode_patches(&self, patches: &Mat) -> VisualEmbeddings {
        let mut g = Graph::new(&self.params);
        let out = self.encode_graph(&mut g, patches);
        VisualEmbeddings { v: g.value(out).clone() }
    }

    pub fn cross_kv(&self, g: &mut Graph, kind: DecoderKind, memory: NodeId) -> CrossKv {
        let dec = &self.decoders[kind.index()];
        CrossKv { layers: dec.layers.iter().map(|l| (self.linear(g, memory, &l.cross.k), self.linear(g, memory, &l.cross.v))).collect() }
    }

    pub fn decoder_context(&self, kind: DecoderKind, v: &VisualEmbeddings) -> DecoderContext {
        let mut g = Graph::new(&self.params);
        let mem = g.input(v.v.clone());
        let kv = self.cross_kv(&mut g, kind, mem);
        DecoderContext { kind, kv: kv.layers.iter().map(|&(k, v)| (g.value(k).clone(), g.value(v).clone())).collect() }
    }

    /// Places a context's matrices on `g`.
    pub fn context_on(&self, g: &mut Graph, ctx: &DecoderContext) -> CrossKv {
        CrossKv { layers: ctx.kv.iter().map(|(k, v)| (g.input(k.clone()), g.input(v.clone()))).collect() }
    }

    /// Logits for every position of every input sequence (rows concatenated),
    /// or only for each sequence's last position when `last_only`.
    pub fn decode_graph(&self, g: &mut Graph, kind: DecoderKind, kv: &CrossKv, inputs: &[&[TokenId]], last_only: bool) -> Result<NodeId> {
        let dec = &self.decoders[kind.index()];
        let max = self.max_len(kind);
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut self_segs = Vec::new();
        let mut cross_segs = Vec::new();
        let n_mem = g.value(kv.layers[0].0).rows;
        for seq in inputs {
            if seq.is_empty() || seq.len() > max {
                return Err(ModelError::Config(format!("{kind} input of length {} outside 1..={max}", seq.len())));
            }
            let start = ids.len();
            for (p, &t) in seq.iter().enumerate() {
                if t as usize >= self.vocab.len() {
                    return Err(ModelError::Config(format!("token {t} outside the vocabulary")));
                }
                ids.push(t as usize);
                positions.push(p);
            }
            self_segs.push(Segment::aligned(start, seq.len()));
            cross_segs.push(Segment { q_start: start, q_len: seq.len(), k_start: 0, k_len: n_mem });
        }
        let tok = g.embed(dec.tok, &ids);
        let pos = g.embed(dec.pos, &positions);
        let mut x = g.add(tok, pos);
        let heads = self.config.heads;
        for (layer, &(mk, mv)) in dec.layers.iter().zip(&kv.layers) {
            let h = self.norm(g, x, &layer.ln1);
            let q = self.linear(g, h, &layer.self_attn.q);
            let k = self.linear(g, h, &layer.self_attn.k);
            let v = self.linear(g, h, &layer.self_attn.v);
            let a = g.attention(q, k, v, heads, true, &self_segs);
            let a = self.linear(g, a, &layer.self_attn.o);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.ln2);
            let q = self.linear(g, h, &layer.cross.q);
            let a = g.attention(q, mk, mv, heads, false, &cross_segs);
            let a = self.linear(g, a, &layer.cross.o);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.ln3);
            let m = self.mlp(g, h, &layer.mlp);
            x = g.add(x, m);
        }
        let mut x = self.norm(g, x, &dec.ln_f);
        if last_only {
            let last: Vec<usize> = self_segs.iter().map(|s| s.q_start + s.q_len - 1).collect();
            x = g.select_rows(x, &last);
        }
        Ok(self.linear(g, x, &dec.head))
    }

    /// Logits of the next token after feeding `token` at the cache's next
    /// position; self-attention keys and values of earlier positions come
    /// from `cache`.
    pub fn decode_step(&self, ctx: &DecoderContext, cache: &mut DecoderCache, token: TokenId) -> Result<Vec<f64>> {
        let dec = &self.decoders[ctx.kind.index()];
        let pos = cache.len;
        if pos >= self.max_len(ctx.kind) {
            return Err(ModelError::Config(format!("{} cache is full at {pos} tokens", ctx.kind)));
        }
        if token as usize >= self.vocab.len() {
            return Err(ModelError::Config(format!("token {token} outside the vocabulary")));
        }
        let mut g = Graph::new(&self.params);
        let tok = g.embed(dec.tok, &[token as usize]);
        let p = g.embed(dec.pos, &[pos]);
        let mut x = g.add(tok, p);
        let heads = self.config.heads;
        let d = self.config.d;
        for (l, (layer, (mk, mv))) in dec.layers.iter().zip(&ctx.kv).enumerate() {
            let h = self.norm(&mut g, x, &layer.ln1);
            let q = self.linear(&mut g, h, &layer.self_attn.q);
            let k = self.linear(&mut g, h, &layer.self_attn.k);
            let v = self.linear(&mut g, h, &layer.self_attn.v);
            let (ck, cv) = &mut cache.layers[l];
            ck.extend_from_slice(g.value(k).row(0));
            cv.extend_from_slice(g.value(v).row(0));
            let keys = g.input(Mat::from_vec(pos + 1, d, ck.clone()));
            let values = g.input(Mat::from_vec(pos + 1, d, cv.clone()));
            let seg = [Segment { q_start: 0, q_len: 1, k_start: 0, k_len: pos + 1 }];
            let a = g.attention(q, keys, values, heads, false, &seg);
            let a = self.linear(&mut g, a, &layer.self_attn.o);
            x = g.add(x, a);
            let h = self.norm(&mut g, x, &layer.ln2);
            let q = self.linear(&mut g, h, &layer.cross.q);
            let (mk, mv) = (g.input(mk.clone()), g.input(mv.clone()));
            let seg = [Segment { q_start: 0, q_len: 1, k_start: 0, k_len: g.value(mk).rows }];
            let a = g.attention(q, mk, mv, heads, false, &seg);
            let a = self.linear(&mut g, a, &layer.cross.o);
            x = g.add(x, a);
            let h = self.norm(&mut g, x, &layer.ln3);
            let m = self.mlp(&mut g, h, &layer.mlp);
            x = g.add(x, m);
        }
        cache.len += 1;
        let x = self.norm(&mut g, x, &dec.ln_f);
        let out = self.linear(&mut g, x, &dec.head);
        Ok(g.value(out).row(0).to_vec())
    }

    /// Full-sequence logits of one decoder input, without gradients.
    pub fn logits(&self, ctx: &DecoderContext, input: &[TokenId]) -> Result<Mat> {
        let mut g = Graph::new(&self.params);
        let kv = self.context_on(&mut g, ctx);
        let out = self.decode_graph(&mut g, ctx.kind, &kv, &[input], false)?;
        Ok(g.value(out).clone())
    }
}

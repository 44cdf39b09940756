use std::hash::Hasher;
use std::ops::Range;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::layers::{gelu, gelu_grad, LayerNormCache};
use super::params::join;
use super::{LayerNorm, Linear, NnError, ParamView, ParamViewMut, Parameterized, Tensor2};
use crate::cost::CostProbe;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    #[default]
    Causal,
    Bidirectional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub d: usize,
    pub heads: usize,
    pub l_low: usize,
    pub l_high: usize,
    pub vocab_size: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub attention: Attention,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            l_low: 2,
            l_high: 2,
            vocab_size: 512,
            ffn_mult: default_ffn_mult(),
            init_std: default_init_std(),
            attention: Attention::Causal,
        }
    }
}

fn default_ffn_mult() -> usize {
    4
}

fn default_init_std() -> f64 {
    0.02
}

impl StackConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.d == 0 || self.heads == 0 || self.vocab_size == 0 || self.ffn_mult == 0 {
            return bad("d, heads, vocab_size and ffn_mult must be positive");
        }
        if !self.d.is_multiple_of(self.heads) {
            return bad("d must be divisible by heads");
        }
        if !self.d.is_multiple_of(2) {
            return bad("d must be even for sinusoidal positions");
        }
        if self.l_low == 0 || self.l_high == 0 {
            return bad("l_low and l_high must both be at least 1");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn total_layers(&self) -> usize {
        self.l_low + self.l_high
    }
}

/// Sinusoidal encoding of one position.
pub fn positional_row(pos: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    for i in 0..d / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
        let angle = pos as f64 * freq;
        row[2 * i] = angle.sin();
        row[2 * i + 1] = angle.cos();
    }
    row
}

/// Pre-norm transformer block: `h = x + Attn(LN1 x)`, `y = h + FFN(LN2 h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub frozen: bool,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    z1: Tensor2,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    /// `heads × T × T`, zero above the diagonal under causal attention.
    probs: Vec<f64>,
    ctx: Tensor2,
    ln2: LayerNormCache,
    z2: Tensor2,
    u: Tensor2,
    g: Tensor2,
}

/// Everything the backward pass of one stack invocation needs.
#[derive(Clone, Debug)]
pub struct StackCache {
    range: Range<usize>,
    attention: Attention,
    blocks: Vec<BlockCache>,
}

impl StackCache {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }
}

impl Block {
    fn new<R: rand::Rng + ?Sized>(d: usize, ffn: usize, std: f64, rng: &mut R) -> Self {
        Self {
            ln1: LayerNorm::new(d),
            wq: Linear::new(d, d, std, rng),
            wk: Linear::new(d, d, std, rng),
            wv: Linear::new(d, d, std, rng),
            wo: Linear::new(d, d, std, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, ffn, std, rng),
            ff2: Linear::new(ffn, d, std, rng),
            frozen: false,
        }
    }

    fn forward(&self, x: &Tensor2, heads: usize, attention: Attention, keep: bool) -> (Tensor2, Option<BlockCache>) {
        let (z1, ln1) = self.ln1.forward(x);
        let q = self.wq.forward(&z1);
        let k = self.wk.forward(&z1);
        let v = self.wv.forward(&z1);
        let (ctx, probs) = attend(&q, &k, &v, heads, attention, keep);
        let mut h = self.wo.forward(&ctx);
        h.add_assign(x);
        let (z2, ln2) = self.ln2.forward(&h);
        let u = self.ff1.forward(&z2);
        let mut g = u.clone();
        g.data_mut().iter_mut().for_each(|e| *e = gelu(*e));
        let mut out = self.ff2.forward(&g);
        out.add_assign(&h);
        let cache = keep.then_some(BlockCache { ln1, z1, q, k, v, probs, ctx, ln2, z2, u, g });
        (out, cache)
    }

    fn backward(&self, c: &BlockCache, heads: usize, attention: Attention, dy: &Tensor2, grad: &mut Block) -> Tensor2 {
        let train = !self.frozen;
        // FFN branch
        let dg = self.ff2.backward(&c.g, dy, train.then_some(&mut grad.ff2));
        let mut du = dg;
        for (d, u) in du.data_mut().iter_mut().zip(c.u.data()) {
            *d *= gelu_grad(*u);
        }
        let dz2 = self.ff1.backward(&c.z2, &du, train.then_some(&mut grad.ff1));
        let mut dh = self.ln2.backward(&c.ln2, &dz2, train.then_some(&mut grad.ln2));
        dh.add_assign(dy);
        // attention branch
        let dctx = self.wo.backward(&c.ctx, &dh, train.then_some(&mut grad.wo));
        let (dq, dk, dv) = attend_backward(c, &dctx, heads, attention);
        let mut dz1 = self.wq.backward(&c.z1, &dq, train.then_some(&mut grad.wq));
        dz1.add_assign(&self.wk.backward(&c.z1, &dk, train.then_some(&mut grad.wk)));
        dz1.add_assign(&self.wv.backward(&c.z1, &dv, train.then_some(&mut grad.wv)));
        let mut dx = self.ln1.backward(&c.ln1, &dz1, train.then_some(&mut grad.ln1));
        dx.add_assign(&dh);
        dx
    }
}

/// Multi-head scaled dot-product attention, one query row at a time.
/// With `keep` the normalised weights are returned for the backward pass.
fn attend(q: &Tensor2, k: &Tensor2, v: &Tensor2, heads: usize, attention: Attention, keep: bool) -> (Tensor2, Vec<f64>) {
    let (t, d) = (q.rows(), q.cols());
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Tensor2::zeros(t, d);
    let mut probs = if keep { vec![0.0; heads * t * t] } else { Vec::new() };
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let span = match attention {
                Attention::Causal => i + 1,
                Attention::Bidirectional => t,
            };
            let qi = &q.row(i)[off..off + dh];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores[..span].iter_mut().enumerate() {
                let kj = &k.row(j)[off..off + dh];
                *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                max = max.max(*s);
            }
            let mut sum = 0.0;
            for s in &mut scores[..span] {
                *s = (*s - max).exp();
                sum += *s;
            }
            let inv = 1.0 / sum;
            let out = &mut ctx.row_mut(i)[off..off + dh];
            for (j, s) in scores[..span].iter_mut().enumerate() {
                *s *= inv;
                let vj = &v.row(j)[off..off + dh];
                for (o, vv) in out.iter_mut().zip(vj) {
                    *o += *s * vv;
                }
            }
            if keep {
                probs[(h * t + i) * t..(h * t + i) * t + span].copy_from_slice(&scores[..span]);
            }
        }
    }
    (ctx, probs)
}

fn attend_backward(c: &BlockCache, dctx: &Tensor2, heads: usize, attention: Attention) -> (Tensor2, Tensor2, Tensor2) {
    let (t, d) = (c.q.rows(), c.q.cols());
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor2::zeros(t, d);
    let mut dk = Tensor2::zeros(t, d);
    let mut dv = Tensor2::zeros(t, d);
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let span = match attention {
                Attention::Causal => i + 1,
                Attention::Bidirectional => t,
            };
            let p = &c.probs[(h * t + i) * t..(h * t + i) * t + span];
            let dci = &dctx.row(i)[off..off + dh];
            let mut dot = 0.0;
            for j in 0..span {
                let vj = &c.v.row(j)[off..off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                dot += p[j] * dp[j];
                let dvj = &mut dv.row_mut(j)[off..off + dh];
                for (o, g) in dvj.iter_mut().zip(dci) {
                    *o += p[j] * g;
                }
            }
            let qi = c.q.row(i)[off..off + dh].to_vec();
            for j in 0..span {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &c.k.row(j)[off..off + dh];
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                for (o, kk) in dqi.iter_mut().zip(kj) {
                    *o += ds * kk;
                }
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                for (o, qq) in dkj.iter_mut().zip(&qi) {
                    *o += ds * qq;
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Token embedding, sinusoidal positions and `l_low + l_high` blocks.
/// Blocks `[0, l_low)` are the low stack, the rest the high stack.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerStack {
    pub config: StackConfig,
    pub token_embedding: Tensor2,
    pub embedding_frozen: bool,
    pub blocks: Vec<Block>,
}

impl TransformerStack {
    /// Deterministic initialisation from the `init/stack` stream of `seed`.
    pub fn new(config: StackConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, "init/stack");
        let std = config.init_std;
        let token_embedding = Tensor2::randn(config.vocab_size, config.d, std, &mut rng);
        let ffn = config.d * config.ffn_mult;
        let blocks = (0..config.total_layers()).map(|_| Block::new(config.d, ffn, std, &mut rng)).collect();
        Ok(Self { config, token_embedding, embedding_frozen: false, blocks })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn attention(&self) -> Attention {
        self.config.attention
    }

    pub fn total_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn low_range(&self) -> Range<usize> {
        0..self.config.l_low
    }

    pub fn high_range(&self) -> Range<usize> {
        self.config.l_low..self.total_layers()
    }

    pub fn full_range(&self) -> Range<usize> {
        0..self.total_layers()
    }

    /// Freezes (or unfreezes) the token embedding and the low blocks.
    pub fn set_low_frozen(&mut self, frozen: bool) {
        self.embedding_frozen = frozen;
        let l_low = self.config.l_low;
        for b in &mut self.blocks[..l_low] {
            b.frozen = frozen;
        }
    }

    /// `E[token]·√d + PE(position)`, positions starting at 0.
    pub fn embed(&self, tokens: &[u32]) -> Result<Tensor2, NnError> {
        if tokens.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let d = self.d();
        let scale = (d as f64).sqrt();
        let mut x = Tensor2::zeros(tokens.len(), d);
        for (pos, &tok) in tokens.iter().enumerate() {
            if tok as usize >= self.token_embedding.rows() {
                return Err(NnError::TokenOutOfRange { token: tok, vocab: self.token_embedding.rows() });
            }
            let e = self.token_embedding.row(tok as usize);
            let pe = positional_row(pos, d);
            for ((o, ev), pv) in x.row_mut(pos).iter_mut().zip(e).zip(&pe) {
                *o = ev * scale + pv;
            }
        }
        Ok(x)
    }

    pub fn embed_backward(&self, tokens: &[u32], dx: &Tensor2, grad: &mut TransformerStack) {
        if self.embedding_frozen {
            return;
        }
        let scale = (self.d() as f64).sqrt();
        for (pos, &tok) in tokens.iter().enumerate() {
            let g = grad.token_embedding.row_mut(tok as usize);
            for (o, v) in g.iter_mut().zip(dx.row(pos)) {
                *o += v * scale;
            }
        }
    }

    /// Adds positions `0..rows` to a sequence of already-embedded rows.
    pub fn add_positions(&self, x: &mut Tensor2) {
        let d = x.cols();
        for pos in 0..x.rows() {
            let pe = positional_row(pos, d);
            for (o, p) in x.row_mut(pos).iter_mut().zip(&pe) {
                *o += p;
            }
        }
    }

    fn check(&self, range: &Range<usize>, input: &Tensor2) -> Result<(), NnError> {
        if range.start >= range.end || range.end > self.total_layers() {
            return Err(NnError::InvalidLayerRange { from: range.start, to: range.end, total: self.total_layers() });
        }
        if input.cols() != self.d() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} columns", self.d()),
                found: format!("{} columns", input.cols()),
            });
        }
        if input.rows() == 0 {
            return Err(NnError::EmptySequence);
        }
        Ok(())
    }

    fn record(&self, range: &Range<usize>, t: usize, probe: Option<&CostProbe>) {
        if let Some(p) = probe {
            let l_low = self.config.l_low;
            let low = range.end.min(l_low).saturating_sub(range.start);
            let high = range.len() - low;
            p.record_stack(low, high, t, self.d(), self.config.heads);
        }
    }

    /// Runs blocks `range` over `input` (`T × d`) without keeping activations.
    pub fn forward(
        &self,
        range: Range<usize>,
        input: &Tensor2,
        attention: Attention,
        probe: Option<&CostProbe>,
    ) -> Result<Tensor2, NnError> {
        self.check(&range, input)?;
        self.record(&range, input.rows(), probe);
        let mut x = input.clone();
        for block in &self.blocks[range] {
            x = block.forward(&x, self.config.heads, attention, false).0;
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite("transformer forward"));
        }
        Ok(x)
    }

    /// Same arithmetic as [`forward`](Self::forward), keeping what the
    /// backward pass needs.
    pub fn forward_train(
        &self,
        range: Range<usize>,
        input: &Tensor2,
        attention: Attention,
        probe: Option<&CostProbe>,
    ) -> Result<(Tensor2, StackCache), NnError> {
        self.check(&range, input)?;
        self.record(&range, input.rows(), probe);
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(range.len());
        for block in &self.blocks[range.clone()] {
            let (y, c) = block.forward(&x, self.config.heads, attention, true);
            caches.push(c.expect("cache requested"));
            x = y;
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite("transformer forward"));
        }
        Ok((x, StackCache { range, attention, blocks: caches }))
    }

    /// Backpropagates `d_out` through the cached invocation, accumulating
    /// parameter gradients of unfrozen blocks into `grad`. Returns `d_input`.
    pub fn backward(&self, cache: &StackCache, d_out: &Tensor2, grad: &mut TransformerStack) -> Tensor2 {
        let mut d = d_out.clone();
        for (idx, c) in cache.range.clone().zip(&cache.blocks).rev() {
            d = self.blocks[idx].backward(c, self.config.heads, cache.attention, &d, &mut grad.blocks[idx]);
        }
        d
    }

    /// 64-bit FNV-1a over the shape and the exact bits of every parameter
    /// that the low stack depends on (token embedding and low blocks).
    pub fn low_fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for v in [self.config.d, self.config.heads, self.config.l_low, self.config.ffn_mult, self.token_embedding.rows()] {
            h.write_u64(v as u64);
        }
        h.write_u8(self.config.attention as u8);
        let mut feed = |t: &Tensor2| {
            for v in t.data() {
                h.write(&v.to_le_bytes());
            }
        };
        feed(&self.token_embedding);
        for b in &self.blocks[..self.config.l_low] {
            for p in b.params() {
                feed(p.tensor);
            }
        }
        h.finish()
    }
}

impl Parameterized for Block {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        let start = out.len();
        self.ln1.collect_params(&join(prefix, "ln1"), out);
        self.wq.collect_params(&join(prefix, "wq"), out);
        self.wk.collect_params(&join(prefix, "wk"), out);
        self.wv.collect_params(&join(prefix, "wv"), out);
        self.wo.collect_params(&join(prefix, "wo"), out);
        self.ln2.collect_params(&join(prefix, "ln2"), out);
        self.ff1.collect_params(&join(prefix, "ff1"), out);
        self.ff2.collect_params(&join(prefix, "ff2"), out);
        out[start..].iter_mut().for_each(|p| p.frozen = self.frozen);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        let start = out.len();
        let frozen = self.frozen;
        self.ln1.collect_params_mut(&join(prefix, "ln1"), out);
        self.wq.collect_params_mut(&join(prefix, "wq"), out);
        self.wk.collect_params_mut(&join(prefix, "wk"), out);
        self.wv.collect_params_mut(&join(prefix, "wv"), out);
        self.wo.collect_params_mut(&join(prefix, "wo"), out);
        self.ln2.collect_params_mut(&join(prefix, "ln2"), out);
        self.ff1.collect_params_mut(&join(prefix, "ff1"), out);
        self.ff2.collect_params_mut(&join(prefix, "ff2"), out);
        out[start..].iter_mut().for_each(|p| p.frozen = frozen);
    }
}

impl Parameterized for TransformerStack {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: join(prefix, "token_embedding"),
            tensor: &self.token_embedding,
            frozen: self.embedding_frozen,
        });
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("blocks.{i}")), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut {
            name: join(prefix, "token_embedding"),
            tensor: &mut self.token_embedding,
            frozen: self.embedding_frozen,
        });
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{example_bce, example_bce_grad};
use super::PipelineError;
use crate::aggregator::{assemble_sequence, segment_backward, segment_forward, segment_forward_train, SegmentCache, SegmentInput};
use crate::aggregator::{ItemRepr, UserRepr};
use crate::atomic::{BehaviorEmbeddingTable, StalePolicy, TokenStateCache};
use crate::cost::CostProbe;
use crate::data::{extract_atomic_set, AtomicBehavior, CtrRecord, Dataset, UserProfile};
use crate::nn::{
    join, Attention, Mlp, MlpCache, MlpSpec, NnError, ParamView, ParamViewMut, Parameterized, PoolMode, StackConfig,
    Tensor2, TransformerStack,
};
use crate::rng::stream;

/// Rows of the ablation, each adding one idea to the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// The item title followed by every behavior token of every domain, as
    /// one sequence through all layers. Title first, so that under causal
    /// attention every behavior token can attend to it.
    Baseline,
    /// One token sequence per domain (and one for the title) through all
    /// layers, encoded independently.
    Fp,
    /// Per-domain sequences built from cached low-layer token states of each
    /// distinct behavior; only the high layers run per example.
    FpAbe,
    /// Per-domain sequences of pooled behavior vectors from the table.
    Bahe,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 4] = [Self::Baseline, Self::Fp, Self::FpAbe, Self::Bahe];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Fp => "fp",
            Self::FpAbe => "fp_abe",
            Self::Bahe => "bahe",
        }
    }

    /// Whether the low layers are frozen and served from precomputed state.
    pub fn uses_table(self) -> bool {
        matches!(self, Self::FpAbe | Self::Bahe)
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of baseline, fp, fp_abe, bahe"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub d_hat: usize,
    pub l_low: usize,
    pub l_high: usize,
    pub heads: usize,
    pub pool: PoolMode,
    /// Overrides `pool` for the table's per-behavior pooling.
    pub pool_atomic: Option<PoolMode>,
    /// Overrides `pool` for pooling the high-layer output of a sequence.
    pub pool_sequence: Option<PoolMode>,
    pub attention: Attention,
    pub fd_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_hat: 16,
            l_low: 2,
            l_high: 2,
            heads: 4,
            pool: PoolMode::Mean,
            pool_atomic: None,
            pool_sequence: None,
            attention: Attention::Causal,
            fd_hidden: Vec::new(),
            head_hidden: vec![32],
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn atomic_pool(&self) -> PoolMode {
        self.pool_atomic.unwrap_or(self.pool)
    }

    pub fn sequence_pool(&self) -> PoolMode {
        self.pool_sequence.unwrap_or(self.pool)
    }

    pub fn stack_config(&self, vocab_size: usize) -> StackConfig {
        StackConfig {
            d: self.d,
            heads: self.heads,
            l_low: self.l_low,
            l_high: self.l_high,
            vocab_size,
            attention: self.attention,
            init_std: self.init_std,
            ..StackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.d_hat == 0 {
            return Err(PipelineError::InvalidConfig("d_hat must be positive".into()));
        }
        if self.fd_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(PipelineError::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(PipelineError::InvalidConfig("init_std must be positive".into()));
        }
        self.stack_config(2).validate()?;
        Ok(())
    }

    /// Number of encoded segments feeding the head.
    pub fn segments(mode: PipelineMode, n_domains: usize) -> usize {
        match mode {
            PipelineMode::Baseline => 1,
            _ => n_domains + 1,
        }
    }
}

/// Precomputed low-layer state for the table-backed modes.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub table: Option<BehaviorEmbeddingTable>,
    pub token_cache: Option<TokenStateCache>,
}

impl Artifacts {
    /// Builds whatever `model`'s mode needs from its current low layers.
    pub fn build(model: &CtrModel, dataset: &Dataset, probe: Option<&CostProbe>) -> Result<Self, PipelineError> {
        if !model.mode.uses_table() {
            return Ok(Self::default());
        }
        let set = extract_atomic_set(&dataset.users, &dataset.items);
        let table = crate::atomic::build_table(&model.stack, &set, model.config.atomic_pool(), probe)?;
        let mut art = Self { table: Some(table), token_cache: None };
        art.ensure_token_cache(model, dataset, probe)?;
        Ok(art)
    }

    /// Adds the token-state cache the `fp_abe` mode reads.
    pub fn ensure_token_cache(
        &mut self,
        model: &CtrModel,
        dataset: &Dataset,
        probe: Option<&CostProbe>,
    ) -> Result<(), PipelineError> {
        if model.mode == PipelineMode::FpAbe && self.token_cache.is_none() {
            let set = extract_atomic_set(&dataset.users, &dataset.items);
            self.token_cache = Some(TokenStateCache::build(&model.stack, &set, probe)?);
        }
        Ok(())
    }

    /// Errors unless the mode's artifacts are present and were built from the
    /// model's current low layers.
    pub fn check(&self, model: &CtrModel) -> Result<(), PipelineError> {
        if !model.mode.uses_table() {
            return Ok(());
        }
        let table = self.table.as_ref().ok_or(PipelineError::MissingTable { mode: model.mode })?;
        table.check_fresh(&model.stack, StalePolicy::Error)?;
        if model.mode == PipelineMode::FpAbe && self.token_cache.is_none() {
            return Err(PipelineError::InvalidConfig("fp_abe needs the token-state cache".into()));
        }
        Ok(())
    }
}

/// Read-only inputs shared by every example of a run.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub dataset: &'a Dataset,
    pub artifacts: &'a Artifacts,
    /// Per-example token budget; behaviors beyond it are dropped oldest first.
    pub token_budget: Option<usize>,
}

/// Transformer stack, reducer `F_d` and probability head `F_θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CtrModel {
    pub config: ModelConfig,
    pub mode: PipelineMode,
    pub n_domains: usize,
    pub stack: TransformerStack,
    pub fd: Mlp,
    pub head: Mlp,
}

/// Cached forward of one example.
pub struct ExampleCache {
    segments: Vec<SegmentCache>,
    head: MlpCache,
}

impl CtrModel {
    pub fn new(
        config: ModelConfig,
        mode: PipelineMode,
        n_domains: usize,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if n_domains == 0 {
            return Err(PipelineError::InvalidConfig("n_domains must be positive".into()));
        }
        let mut stack = TransformerStack::new(config.stack_config(vocab_size), seed)?;
        stack.set_low_frozen(mode.uses_table());
        let mut fd_widths = vec![config.d];
        fd_widths.extend(&config.fd_hidden);
        fd_widths.push(config.d_hat);
        let mut head_widths = vec![ModelConfig::segments(mode, n_domains) * config.d_hat];
        head_widths.extend(&config.head_hidden);
        head_widths.push(1);
        // Heads use a wider init than the stack so the logit starts with
        // some spread; fan-in scaled.
        let fd_std = (1.0 / config.d as f64).sqrt();
        let fd = Mlp::new(MlpSpec::new(fd_widths, false)?, fd_std, &mut stream(seed, "init/fd"));
        let head_std = (1.0 / head_widths[0] as f64).sqrt();
        let head = Mlp::new(MlpSpec::new(head_widths, true)?, head_std, &mut stream(seed, "init/head"));
        Ok(Self { config, mode, n_domains, stack, fd, head })
    }

    fn sequence_input(&self, ctx: &Context<'_>, seq: &[std::sync::Arc<AtomicBehavior>]) -> Result<SegmentInput, PipelineError> {
        Ok(match self.mode {
            PipelineMode::Baseline => unreachable!("baseline builds one joint segment"),
            PipelineMode::Fp => SegmentInput::Tokens(seq.iter().flat_map(|b| b.tokens().iter().copied()).collect()),
            PipelineMode::FpAbe => {
                let cache = ctx
                    .artifacts
                    .token_cache
                    .as_ref()
                    .ok_or_else(|| PipelineError::InvalidConfig("fp_abe needs the token-state cache".into()))?;
                let parts = seq.iter().map(|b| cache.get(b)).collect::<Result<Vec<_>, _>>()?;
                SegmentInput::Rows(Tensor2::vstack(&parts)?)
            }
            PipelineMode::Bahe => {
                let table = ctx.artifacts.table.as_ref().ok_or(PipelineError::MissingTable { mode: self.mode })?;
                SegmentInput::Rows(assemble_sequence(table, seq)?)
            }
        })
    }

    fn range(&self) -> std::ops::Range<usize> {
        if self.mode.uses_table() {
            self.stack.high_range()
        } else {
            self.stack.full_range()
        }
    }

    fn user<'c>(&self, ctx: &Context<'c>, idx: usize) -> Result<std::borrow::Cow<'c, UserProfile>, PipelineError> {
        let user = ctx.dataset.users.get(idx).ok_or_else(|| bad_index("user", idx))?;
        if user.n_domains() != self.n_domains {
            return Err(PipelineError::InvalidConfig(format!(
                "user {} has {} domains, model expects {}",
                user.user_id,
                user.n_domains(),
                self.n_domains
            )));
        }
        Ok(match ctx.token_budget {
            Some(b) => std::borrow::Cow::Owned(user.truncated(b)),
            None => std::borrow::Cow::Borrowed(user),
        })
    }

    /// One encoder input per domain sequence of user `idx`.
    pub fn user_inputs(&self, ctx: &Context<'_>, idx: usize) -> Result<Vec<SegmentInput>, PipelineError> {
        let user = self.user(ctx, idx)?;
        user.sequences.iter().map(|seq| self.sequence_input(ctx, seq)).collect()
    }

    pub fn item_input(&self, ctx: &Context<'_>, idx: usize) -> Result<SegmentInput, PipelineError> {
        let item = ctx.dataset.items.get(idx).ok_or_else(|| bad_index("item", idx))?;
        self.sequence_input(ctx, std::slice::from_ref(&item.title))
    }

    /// The encoder inputs of one impression, in head order.
    pub fn segment_inputs(&self, ctx: &Context<'_>, rec: &CtrRecord) -> Result<Vec<SegmentInput>, PipelineError> {
        if self.mode == PipelineMode::Baseline {
            let user = self.user(ctx, rec.user)?;
            let item = ctx.dataset.items.get(rec.item).ok_or_else(|| bad_index("item", rec.item))?;
            let tokens = std::iter::once(&item.title)
                .chain(user.sequences.iter().flatten())
                .flat_map(|b| b.tokens().iter().copied())
                .collect();
            return Ok(vec![SegmentInput::Tokens(tokens)]);
        }
        let mut inputs = self.user_inputs(ctx, rec.user)?;
        inputs.push(self.item_input(ctx, rec.item)?);
        Ok(inputs)
    }

    /// Click probability of one impression.
    pub fn predict(&self, ctx: &Context<'_>, rec: &CtrRecord, probe: Option<&CostProbe>) -> Result<f64, PipelineError> {
        let mut q = Vec::with_capacity(self.head.spec.input_dim());
        for input in self.segment_inputs(ctx, rec)? {
            q.extend(self.encode(input, probe)?);
        }
        Ok(self.head.forward(&q, probe)?[0])
    }

    fn encode(&self, input: SegmentInput, probe: Option<&CostProbe>) -> Result<Vec<f64>, PipelineError> {
        Ok(segment_forward(&self.stack, &self.fd, input, self.range(), self.config.sequence_pool(), probe)?)
    }

    fn require_split(&self) -> Result<(), PipelineError> {
        if self.mode == PipelineMode::Baseline {
            return Err(PipelineError::InvalidConfig("baseline mode has no separate user and item representations".into()));
        }
        Ok(())
    }

    /// `Q_u`: the reduced domain sequences of user `idx`, concatenated.
    pub fn user_repr(&self, ctx: &Context<'_>, idx: usize, probe: Option<&CostProbe>) -> Result<UserRepr, PipelineError> {
        self.require_split()?;
        let mut q_u = Vec::with_capacity(self.n_domains * self.config.d_hat);
        for input in self.user_inputs(ctx, idx)? {
            q_u.extend(self.encode(input, probe)?);
        }
        Ok(UserRepr { q_u, segment_dim: self.config.d_hat })
    }

    /// `Q_i`: the reduced title of item `idx`.
    pub fn item_repr(&self, ctx: &Context<'_>, idx: usize, probe: Option<&CostProbe>) -> Result<ItemRepr, PipelineError> {
        self.require_split()?;
        Ok(ItemRepr { q_i: self.encode(self.item_input(ctx, idx)?, probe)? })
    }

    pub fn forward_train(
        &self,
        ctx: &Context<'_>,
        rec: &CtrRecord,
        probe: Option<&CostProbe>,
    ) -> Result<(f64, ExampleCache), PipelineError> {
        let mut q = Vec::with_capacity(self.head.spec.input_dim());
        let mut segments = Vec::new();
        for input in self.segment_inputs(ctx, rec)? {
            let (qn, c) =
                segment_forward_train(&self.stack, &self.fd, input, self.range(), self.config.sequence_pool(), probe)?;
            q.extend(qn);
            segments.push(c);
        }
        let (y, head) = self.head.forward_train(&q, probe)?;
        Ok((y[0], ExampleCache { segments, head }))
    }

    /// Accumulates the gradient of `dlogit · logit` into `grad`.
    pub fn backward(&self, cache: &ExampleCache, dlogit: f64, grad: &mut CtrModel) {
        let dq = self.head.backward(&cache.head, &[dlogit], &mut grad.head);
        let w = self.config.d_hat;
        for (n, seg) in cache.segments.iter().enumerate() {
            segment_backward(
                &self.stack,
                &self.fd,
                seg,
                &dq[n * w..(n + 1) * w],
                self.config.sequence_pool(),
                &mut grad.stack,
                &mut grad.fd,
            );
        }
    }

    /// Mean BCE over `batch` and its gradient, summed in batch order.
    pub fn loss_and_grad(
        &self,
        ctx: &Context<'_>,
        batch: &[CtrRecord],
        probe: Option<&CostProbe>,
    ) -> Result<(f64, CtrModel), PipelineError> {
        use rayon::prelude::*;
        if batch.is_empty() {
            return Err(PipelineError::Empty);
        }
        let scale = 1.0 / batch.len() as f64;
        let per: Vec<(f64, CtrModel)> = batch
            .par_iter()
            .map(|rec| {
                let (p, cache) = self.forward_train(ctx, rec, probe)?;
                let mut g = crate::nn::zeros_like(self);
                self.backward(&cache, example_bce_grad(p, rec.label) * scale, &mut g);
                Ok((example_bce(p, rec.label), g))
            })
            .collect::<Result<_, PipelineError>>()?;
        let mut iter = per.into_iter();
        let (mut loss, mut grad) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            crate::nn::accumulate(&mut grad, &g);
        }
        Ok((loss * scale, grad))
    }
}

fn bad_index(kind: &str, i: usize) -> PipelineError {
    PipelineError::Data(crate::data::DataError::Inconsistent(format!("{kind} index {i} out of range")))
}

impl Parameterized for CtrModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.stack.collect_params(&join(prefix, "stack"), out);
        self.fd.collect_params(&join(prefix, "fd"), out);
        self.head.collect_params(&join(prefix, "head"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.stack.collect_params_mut(&join(prefix, "stack"), out);
        self.fd.collect_params_mut(&join(prefix, "fd"), out);
        self.head.collect_params_mut(&join(prefix, "head"), out);
    }
}

/// `y = F_θ(Q_u ⊕ Q_i)`.
pub fn predict_ctr(head: &Mlp, q_u: &UserRepr, q_i: &ItemRepr) -> Result<f64, NnError> {
    let mut x = q_u.q_u.clone();
    x.extend(&q_i.q_i);
    Ok(head.forward(&x, None)?[0])
}

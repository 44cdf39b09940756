use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{bce_loss, evaluate_auc};
use super::model::{Artifacts, Context, CtrModel, ModelConfig, PipelineMode};
use super::pretrain::{pretrain_stack, PretrainConfig};
use super::PipelineError;
use crate::cost::{measured_cost, CostParams, CostProbe, MeasuredCost, ProbeSnapshot, ReportRow};
use crate::data::{extract_atomic_set, Dataset, Split};
use crate::nn::{cosine_lr, Adam, AdamConfig, Parameterized, PoolMode};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of steps with linear warmup before cosine decay to zero.
    pub warmup_frac: f64,
    pub seed: u64,
    pub mode: PipelineMode,
    pub adam: AdamConfig,
    pub token_budget: Option<usize>,
    pub pretrain: PretrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 1,
            lr: 1e-3,
            warmup_frac: 0.01,
            seed: 0,
            mode: PipelineMode::Bahe,
            adam: AdamConfig::default(),
            token_budget: None,
            pretrain: PretrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must be in [0, 1)");
        }
        if self.token_budget == Some(0) {
            return bad("token_budget must be positive");
        }
        self.pretrain.validate()
    }
}

/// Test-split metrics plus the cost of everything recorded by the run probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: PipelineMode,
    pub pool: PoolMode,
    pub split: Split,
    pub auc: f64,
    pub logloss: f64,
    pub n: usize,
    pub wall_ms: f64,
    pub flops: MeasuredCost,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub model: CtrModel,
    /// Mean batch loss per optimizer step.
    pub history: Vec<f64>,
    /// Counters of the optimisation steps alone.
    pub train_cost: ProbeSnapshot,
    pub report: EvalReport,
}

/// Scores `split` in parallel; results are reduced in record order.
pub fn evaluate(
    ctx: &Context<'_>,
    model: &CtrModel,
    split: Split,
    probe: &CostProbe,
    seed: u64,
) -> Result<EvalReport, PipelineError> {
    model.config.validate()?;
    ctx.artifacts.check(model)?;
    let start = Instant::now();
    let records = ctx.dataset.split(split);
    let scores: Vec<f64> =
        records.par_iter().map(|r| model.predict(ctx, r, Some(probe))).collect::<Result<_, PipelineError>>()?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let auc = evaluate_auc(&scores, &labels)?;
    let logloss = bce_loss(&scores, &labels)?;
    probe.mark_complete();
    Ok(EvalReport {
        mode: model.mode,
        pool: model.config.sequence_pool(),
        split,
        auc,
        logloss,
        n: records.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        flops: measured_cost(&probe.snapshot())?,
        seed,
    })
}

fn grads_finite(g: &CtrModel) -> bool {
    g.params().iter().all(|p| p.tensor.is_finite())
}

/// Adam over the train split in `cfg.batch_size` batches, then a test-split
/// evaluation. Frozen parameters never move.
pub fn train(
    ctx: &Context<'_>,
    mut model: CtrModel,
    cfg: &TrainConfig,
    probe: &CostProbe,
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    if cfg.mode != model.mode {
        return Err(PipelineError::InvalidConfig(format!(
            "train config mode {} does not match model mode {}",
            cfg.mode, model.mode
        )));
    }
    ctx.artifacts.check(&model)?;
    let ctx = Context { token_budget: cfg.token_budget, ..*ctx };
    let start = Instant::now();
    let train = ctx.dataset.split(Split::Train);
    if train.is_empty() {
        return Err(PipelineError::Empty);
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(cfg.adam, &model);
    let mut history = Vec::with_capacity(total);
    let before = probe.snapshot();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &format!("train/order/{epoch}")));
        for chunk in order.chunks(cfg.batch_size) {
            let step = history.len();
            let batch: Vec<_> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grad) = model.loss_and_grad(&ctx, &batch, Some(probe))?;
            if !loss.is_finite() || !grads_finite(&grad) {
                return Err(PipelineError::DivergedLoss { step });
            }
            adam.step(&mut model, &grad, cosine_lr(cfg.lr, step, total, cfg.warmup_frac));
            history.push(loss);
            if step % 200 == 0 {
                log::debug!("{} step {step}/{total} loss {loss:.5}", model.mode);
            }
        }
    }
    let train_cost = diff(&probe.snapshot(), &before);
    let mut report = evaluate(&ctx, &model, Split::Test, probe, cfg.seed)?;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    log::info!("{} trained {total} steps, test auc {:.4}", model.mode, report.auc);
    Ok(TrainOutcome { model, history, train_cost, report })
}

fn diff(after: &ProbeSnapshot, before: &ProbeSnapshot) -> ProbeSnapshot {
    let sub = |a: &std::collections::BTreeMap<u64, u64>, b: &std::collections::BTreeMap<u64, u64>| {
        a.iter()
            .map(|(k, v)| (*k, v - b.get(k).copied().unwrap_or(0)))
            .filter(|(_, v)| *v > 0)
            .collect()
    };
    ProbeSnapshot {
        low_invocations: after.low_invocations - before.low_invocations,
        high_invocations: after.high_invocations - before.high_invocations,
        low_attn_macs: after.low_attn_macs - before.low_attn_macs,
        high_attn_macs: after.high_attn_macs - before.high_attn_macs,
        low_dense_macs: after.low_dense_macs - before.low_dense_macs,
        high_dense_macs: after.high_dense_macs - before.high_dense_macs,
        mlp_macs: after.mlp_macs - before.mlp_macs,
        peak_activations: after.peak_activations,
        low_lengths: sub(&after.low_lengths, &before.low_lengths),
        high_lengths: sub(&after.high_lengths, &before.high_lengths),
        complete: true,
    }
}

/// Fresh model for `mode`: seeded initialisation followed by language-model
/// pre-training of the stack on the dataset's behavior texts. Deterministic,
/// so `encode` and `train` arrive at the same low layers independently.
pub fn initial_model(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mode: PipelineMode,
) -> Result<CtrModel, PipelineError> {
    train_cfg.validate()?;
    let mut model = CtrModel::new(model_cfg.clone(), mode, dataset.n_domains()?, dataset.vocab.len(), train_cfg.seed)?;
    let set = extract_atomic_set(&dataset.users, &dataset.items);
    pretrain_stack(&mut model.stack, &set, &train_cfg.pretrain, train_cfg.seed)?;
    Ok(model)
}

/// One mode of an ablation: the report plus what it took.
pub struct AblationRun {
    pub report: EvalReport,
    pub history: Vec<f64>,
    /// Counters of the whole run: artifact build, training and evaluation.
    pub cost: ProbeSnapshot,
    pub train_cost: ProbeSnapshot,
    pub model: CtrModel,
}

/// Trains and evaluates every mode from the same initial weights, seed and
/// batch order.
pub fn run_ablation(
    dataset: &Dataset,
    modes: &[PipelineMode],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRun>, PipelineError> {
    let mut runs = Vec::with_capacity(modes.len());
    for &mode in modes {
        let model = initial_model(dataset, model_cfg, train_cfg, mode)?;
        let probe = CostProbe::new();
        let start = Instant::now();
        let artifacts = Artifacts::build(&model, dataset, Some(&probe))?;
        let ctx = Context { dataset, artifacts: &artifacts, token_budget: train_cfg.token_budget };
        let cfg = TrainConfig { mode, ..train_cfg.clone() };
        let out = train(&ctx, model, &cfg, &probe)?;
        let mut report = out.report;
        report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        runs.push(AblationRun { report, history: out.history, cost: probe.snapshot(), train_cost: out.train_cost, model: out.model });
    }
    Ok(runs)
}

/// Closed-form workload of a run over `dataset`: mean sequence length and
/// behavior length, the distinct behaviors including titles, and one user
/// encoding per scored or trained example.
pub fn workload_params(dataset: &Dataset, cfg: &ModelConfig, passes: usize) -> Result<CostParams, PipelineError> {
    let n = dataset.n_domains()?;
    let seqs: usize = dataset.users.iter().map(|u| u.sequences.len()).sum();
    let behaviors: usize = dataset.users.iter().map(|u| u.behavior_count()).sum();
    let tokens: usize = dataset.users.iter().map(|u| u.token_length()).sum();
    if seqs == 0 || behaviors == 0 {
        return Err(PipelineError::Empty);
    }
    Ok(CostParams {
        n,
        m: (behaviors as f64 / seqs as f64).round().max(1.0) as usize,
        k: tokens as f64 / behaviors as f64,
        h_size: extract_atomic_set(&dataset.users, &dataset.items).len(),
        l_low: cfg.l_low,
        l_high: cfg.l_high,
        d: cfg.d,
        heads: cfg.heads,
        users: passes.max(1),
    })
}

/// Table rows of an ablation, one per mode.
pub fn ablation_rows(runs: &[AblationRun], params: &CostParams) -> Result<Vec<ReportRow>, PipelineError> {
    runs.iter()
        .map(|r| {
            let c = measured_cost(&r.cost)?;
            Ok(ReportRow::from_measured(r.report.mode.as_str(), params, &c, r.report.wall_ms, Some(r.report.auc)))
        })
        .collect()
}

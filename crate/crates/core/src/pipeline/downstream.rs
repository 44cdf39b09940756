use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_auc, example_bce_grad};
use super::model::{Context, CtrModel};
use super::PipelineError;
use crate::data::{CtrRecord, Dataset, Split};
use crate::nn::{
    accumulate, cosine_lr, join, zeros_like, Adam, AdamConfig, Linear, Mlp, ParamView, ParamViewMut, Parameterized,
    Tensor2,
};
use crate::rng::stream;

/// Frozen `Q_u` per user and `Q_i` per item from a trained pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub user: Vec<Vec<f64>>,
    pub item: Vec<Vec<f64>>,
}

impl Features {
    pub fn width(&self) -> usize {
        self.user.first().map_or(0, Vec::len) + self.item.first().map_or(0, Vec::len)
    }

    /// Same shapes, every value zero.
    pub fn zeroed(&self) -> Self {
        let z = |v: &Vec<Vec<f64>>| v.iter().map(|r| vec![0.0; r.len()]).collect();
        Self { user: z(&self.user), item: z(&self.item) }
    }
}

/// Encodes every user and item once with `model` (any mode but baseline).
pub fn compute_features(model: &CtrModel, ctx: &Context<'_>) -> Result<Features, PipelineError> {
    let users = (0..ctx.dataset.users.len())
        .into_par_iter()
        .map(|u| model.user_repr(ctx, u, None).map(|r| r.q_u))
        .collect::<Result<_, _>>()?;
    let items = (0..ctx.dataset.items.len())
        .into_par_iter()
        .map(|i| model.item_repr(ctx, i, None).map(|r| r.q_i))
        .collect::<Result<_, _>>()?;
    Ok(Features { user: users, item: items })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub id_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self { id_dim: 8, hidden: vec![32], lr: 3e-3, epochs: 2, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub auc_ids: f64,
    pub auc_with_q: f64,
    pub width_ids: usize,
    pub width_with_q: usize,
    pub seed: u64,
}

/// Id embeddings feeding a ReLU MLP with a sigmoid output; optionally the
/// frozen representation features are appended to the MLP input.
#[derive(Clone, Debug, PartialEq)]
struct DownstreamNet {
    user_emb: Tensor2,
    item_emb: Tensor2,
    mlp: Mlp,
}

impl Parameterized for DownstreamNet {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView { name: join(prefix, "user_emb"), tensor: &self.user_emb, frozen: false });
        out.push(ParamView { name: join(prefix, "item_emb"), tensor: &self.item_emb, frozen: false });
        self.mlp.collect_params(&join(prefix, "mlp"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut { name: join(prefix, "user_emb"), tensor: &mut self.user_emb, frozen: false });
        out.push(ParamViewMut { name: join(prefix, "item_emb"), tensor: &mut self.item_emb, frozen: false });
        self.mlp.collect_params_mut(&join(prefix, "mlp"), out);
    }
}

impl DownstreamNet {
    /// The id part of every weight comes from the same streams whatever
    /// `extra` is, so a zero feature block reproduces the id-only model.
    fn new(dataset: &Dataset, extra: usize, cfg: &DownstreamConfig) -> Result<Self, PipelineError> {
        let k = cfg.id_dim;
        let mut rng = stream(cfg.seed, "downstream/emb");
        let user_emb = Tensor2::randn(dataset.users.len(), k, 0.1, &mut rng);
        let item_emb = Tensor2::randn(dataset.items.len(), k, 0.1, &mut rng);
        let mut widths = vec![2 * k];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let mut rng = stream(cfg.seed, "downstream/mlp");
        let mut layers: Vec<Linear> =
            widths.windows(2).map(|w| Linear::new(w[0], w[1], (1.0 / w[0] as f64).sqrt(), &mut rng)).collect();
        if extra > 0 {
            let out = layers[0].output_dim();
            let mut rng = stream(cfg.seed, "downstream/extra");
            let rows = Tensor2::randn(extra, out, (1.0 / (2 * k) as f64).sqrt(), &mut rng);
            layers[0].w = Tensor2::vstack(&[&layers[0].w, &rows])?;
        }
        Ok(Self { user_emb, item_emb, mlp: Mlp::from_layers(layers, true)? })
    }

    fn input(&self, rec: &CtrRecord, features: Option<&Features>) -> Vec<f64> {
        let mut x = self.user_emb.row(rec.user).to_vec();
        x.extend(self.item_emb.row(rec.item));
        if let Some(f) = features {
            x.extend(&f.user[rec.user]);
            x.extend(&f.item[rec.item]);
        }
        x
    }

    fn predict(&self, rec: &CtrRecord, features: Option<&Features>) -> Result<f64, PipelineError> {
        Ok(self.mlp.forward(&self.input(rec, features), None)?[0])
    }

    fn grad(&self, rec: &CtrRecord, features: Option<&Features>, scale: f64) -> Result<DownstreamNet, PipelineError> {
        let (y, cache) = self.mlp.forward_train(&self.input(rec, features), None)?;
        let mut g = zeros_like(self);
        let dx = self.mlp.backward(&cache, &[example_bce_grad(y[0], rec.label) * scale], &mut g.mlp);
        let k = self.user_emb.cols();
        for (o, v) in g.user_emb.row_mut(rec.user).iter_mut().zip(&dx[..k]) {
            *o += v;
        }
        for (o, v) in g.item_emb.row_mut(rec.item).iter_mut().zip(&dx[k..2 * k]) {
            *o += v;
        }
        Ok(g)
    }
}

/// Trains one downstream variant and returns its test AUC and input width.
pub fn train_downstream_variant(
    dataset: &Dataset,
    features: Option<&Features>,
    cfg: &DownstreamConfig,
) -> Result<(f64, usize), PipelineError> {
    if cfg.id_dim == 0 || cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(PipelineError::InvalidConfig("downstream id_dim, batch_size, epochs must be positive".into()));
    }
    if let Some(f) = features {
        if f.user.len() != dataset.users.len() || f.item.len() != dataset.items.len() {
            return Err(PipelineError::InvalidConfig("feature table does not cover the dataset".into()));
        }
    }
    let extra = features.map_or(0, Features::width);
    let mut net = DownstreamNet::new(dataset, extra, cfg)?;
    let train = dataset.split(Split::Train);
    let total = train.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut adam = Adam::new(AdamConfig::default(), &net);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &format!("downstream/order/{epoch}")));
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grad = zeros_like(&net);
            for &i in chunk {
                accumulate(&mut grad, &net.grad(&train[i], features, scale)?);
            }
            adam.step(&mut net, &grad, cosine_lr(cfg.lr, step, total, 0.01));
            step += 1;
        }
    }
    let test = dataset.split(Split::Test);
    let scores = test.iter().map(|r| net.predict(r, features)).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    Ok((evaluate_auc(&scores, &labels)?, net.mlp.spec.input_dim()))
}

/// Id-only DNN against the same DNN with frozen `Q_u ⊕ Q_i` appended.
pub fn train_downstream(
    dataset: &Dataset,
    features: &Features,
    cfg: &DownstreamConfig,
) -> Result<DownstreamReport, PipelineError> {
    let (auc_ids, width_ids) = train_downstream_variant(dataset, None, cfg)?;
    let (auc_with_q, width_with_q) = train_downstream_variant(dataset, Some(features), cfg)?;
    Ok(DownstreamReport { auc_ids, auc_with_q, width_ids, width_with_q, seed: cfg.seed })
}

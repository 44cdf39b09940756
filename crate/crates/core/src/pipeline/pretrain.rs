//! Toy language-model pre-training of the transformer stack.
//!
//! Stands in for a pre-trained backbone: next-token prediction over the
//! distinct behavior texts with the output projection tied to the token
//! embedding. Words that share contexts end up with related embeddings,
//! which is what the frozen low layers are expected to provide.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::{AtomicBehavior, AtomicSet};
use crate::nn::{accumulate, cosine_lr, zeros_like, Adam, AdamConfig, Parameterized, Tensor2, TransformerStack};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Passes over the behavior set; 0 disables pre-training.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 3, lr: 3e-3, batch_size: 16 }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 || !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(PipelineError::InvalidConfig("pretrain batch_size must be positive and lr finite".into()));
        }
        Ok(())
    }
}

/// Mean next-token cross-entropy of one text and its gradient.
pub fn lm_loss_and_grad(stack: &TransformerStack, tokens: &[u32]) -> Result<(f64, TransformerStack), PipelineError> {
    if tokens.len() < 2 {
        return Err(PipelineError::InvalidConfig("next-token loss needs at least two tokens".into()));
    }
    let x = stack.embed(tokens)?;
    let (h, cache) = stack.forward_train(stack.full_range(), &x, stack.attention(), None)?;
    let t = tokens.len() - 1;
    let inputs = h.slice_rows(0, t);
    let mut dlogits = inputs.matmul_t(&stack.token_embedding);
    let mut loss = 0.0;
    for (i, &target) in tokens[1..].iter().enumerate() {
        let row = dlogits.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        loss += z.ln() + max - (row[target as usize].ln() + max);
        for v in row.iter_mut() {
            *v /= z * t as f64;
        }
        row[target as usize] -= 1.0 / t as f64;
    }
    let mut grad = zeros_like(stack);
    dlogits.t_matmul_acc(&inputs, &mut grad.token_embedding);
    let mut dh = Tensor2::zeros(h.rows(), h.cols());
    let dinputs = dlogits.matmul(&stack.token_embedding);
    for i in 0..t {
        dh.row_mut(i).copy_from_slice(dinputs.row(i));
    }
    let dx = stack.backward(&cache, &dh, &mut grad);
    stack.embed_backward(tokens, &dx, &mut grad);
    Ok((loss / t as f64, grad))
}

/// Trains every layer and the embedding on the behavior texts of `set`.
/// Returns the mean loss of each step.
pub fn pretrain_stack(
    stack: &mut TransformerStack,
    set: &AtomicSet,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<Vec<f64>, PipelineError> {
    cfg.validate()?;
    let texts: Vec<&Arc<AtomicBehavior>> = set.iter().filter(|b| b.token_len() >= 2).collect();
    if cfg.epochs == 0 || texts.is_empty() {
        return Ok(Vec::new());
    }
    let was_frozen = stack.embedding_frozen;
    stack.set_low_frozen(false);
    let total = texts.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut adam = Adam::new(AdamConfig::default(), &*stack);
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut history = Vec::with_capacity(total);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(seed, &format!("pretrain/order/{epoch}")));
        for chunk in order.chunks(cfg.batch_size) {
            let per: Vec<(f64, TransformerStack)> = chunk
                .par_iter()
                .map(|&i| lm_loss_and_grad(stack, texts[i].tokens()))
                .collect::<Result<_, _>>()?;
            let scale = 1.0 / chunk.len() as f64;
            let mut grad = zeros_like(&*stack);
            let mut loss = 0.0;
            for (l, g) in &per {
                loss += l * scale;
                accumulate(&mut grad, g);
            }
            for p in grad.params_mut() {
                p.tensor.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            if !loss.is_finite() {
                return Err(PipelineError::DivergedLoss { step: history.len() });
            }
            adam.step(stack, &grad, cosine_lr(cfg.lr, history.len(), total, 0.01));
            history.push(loss);
        }
    }
    stack.set_low_frozen(was_frozen);
    log::info!(
        "pre-trained on {} texts: loss {:.4} -> {:.4}",
        texts.len(),
        history.first().copied().unwrap_or(0.0),
        history.last().copied().unwrap_or(0.0)
    );
    Ok(history)
}

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Elements cached per token per transformer layer for the backward pass:
/// residual input, two normalised copies, q/k/v, attention context, the
/// post-attention residual and the 4d-wide FFN pre- and post-activation.
pub const ACTIVATIONS_PER_TOKEN_PER_DIM: u64 = 16;

/// Multiply-accumulates per token per layer outside attention scores:
/// four d×d projections plus the d→4d→d feed-forward.
pub const DENSE_MACS_PER_TOKEN_PER_DIM2: u64 = 12;

/// Thread-safe operation counters filled in by the transformer stack and
/// the MLP heads.
///
/// Counts follow a fixed accounting rule rather than timing: one layer over a
/// length-`t` sequence costs `2·t²·d` attention MACs (scores and weighted sum,
/// dense) plus `12·t·d²` projection/FFN MACs. Totals are sums of per-call
/// integers, so they do not depend on worker scheduling.
#[derive(Debug)]
pub struct CostProbe {
    enabled: AtomicBool,
    complete: AtomicBool,
    low_invocations: AtomicU64,
    high_invocations: AtomicU64,
    low_attn_macs: AtomicU64,
    high_attn_macs: AtomicU64,
    low_dense_macs: AtomicU64,
    high_dense_macs: AtomicU64,
    mlp_macs: AtomicU64,
    peak_activations: AtomicU64,
    low_lengths: Mutex<BTreeMap<u64, u64>>,
    high_lengths: Mutex<BTreeMap<u64, u64>>,
}

impl Default for CostProbe {
    fn default() -> Self {
        Self::new()
    }
}

impl CostProbe {
    pub fn new() -> Self {
        Self {
            enabled: AtomicBool::new(true),
            complete: AtomicBool::new(false),
            low_invocations: AtomicU64::new(0),
            high_invocations: AtomicU64::new(0),
            low_attn_macs: AtomicU64::new(0),
            high_attn_macs: AtomicU64::new(0),
            low_dense_macs: AtomicU64::new(0),
            high_dense_macs: AtomicU64::new(0),
            mlp_macs: AtomicU64::new(0),
            peak_activations: AtomicU64::new(0),
            low_lengths: Mutex::new(BTreeMap::new()),
            high_lengths: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn disabled() -> Self {
        let p = Self::new();
        p.set_enabled(false);
        p
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::Relaxed);
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.load(Ordering::Relaxed)
    }

    /// Marks the capture as covering a whole run.
    pub fn mark_complete(&self) {
        self.complete.store(true, Ordering::Release);
    }

    pub fn reset(&self) {
        for c in [
            &self.low_invocations,
            &self.high_invocations,
            &self.low_attn_macs,
            &self.high_attn_macs,
            &self.low_dense_macs,
            &self.high_dense_macs,
            &self.mlp_macs,
            &self.peak_activations,
        ] {
            c.store(0, Ordering::Relaxed);
        }
        self.low_lengths.lock().expect("probe lock").clear();
        self.high_lengths.lock().expect("probe lock").clear();
        self.complete.store(false, Ordering::Release);
    }

    /// One forward pass of `low_layers + high_layers` consecutive layers over
    /// a sequence of `len` rows.
    pub fn record_stack(&self, low_layers: usize, high_layers: usize, len: usize, d: usize, heads: usize) {
        if !self.is_enabled() {
            return;
        }
        let t = len as u64;
        let d = d as u64;
        let attn = 2 * t * t * d;
        let dense = DENSE_MACS_PER_TOKEN_PER_DIM2 * t * d * d;
        if low_layers > 0 {
            let l = low_layers as u64;
            self.low_invocations.fetch_add(1, Ordering::Relaxed);
            self.low_attn_macs.fetch_add(l * attn, Ordering::Relaxed);
            self.low_dense_macs.fetch_add(l * dense, Ordering::Relaxed);
            *self.low_lengths.lock().expect("probe lock").entry(t).or_default() += 1;
        }
        if high_layers > 0 {
            let l = high_layers as u64;
            self.high_invocations.fetch_add(1, Ordering::Relaxed);
            self.high_attn_macs.fetch_add(l * attn, Ordering::Relaxed);
            self.high_dense_macs.fetch_add(l * dense, Ordering::Relaxed);
            *self.high_lengths.lock().expect("probe lock").entry(t).or_default() += 1;
        }
        let layers = (low_layers + high_layers) as u64;
        let act = layers * (ACTIVATIONS_PER_TOKEN_PER_DIM * t * d + heads as u64 * t * t);
        self.peak_activations.fetch_max(act, Ordering::Relaxed);
    }

    pub fn record_mlp(&self, macs: u64) {
        if self.is_enabled() {
            self.mlp_macs.fetch_add(macs, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> ProbeSnapshot {
        let lengths = |m: &Mutex<BTreeMap<u64, u64>>| m.lock().expect("probe lock").clone();
        ProbeSnapshot {
            low_invocations: self.low_invocations.load(Ordering::Relaxed),
            high_invocations: self.high_invocations.load(Ordering::Relaxed),
            low_attn_macs: self.low_attn_macs.load(Ordering::Relaxed),
            high_attn_macs: self.high_attn_macs.load(Ordering::Relaxed),
            low_dense_macs: self.low_dense_macs.load(Ordering::Relaxed),
            high_dense_macs: self.high_dense_macs.load(Ordering::Relaxed),
            mlp_macs: self.mlp_macs.load(Ordering::Relaxed),
            peak_activations: self.peak_activations.load(Ordering::Relaxed),
            low_lengths: lengths(&self.low_lengths),
            high_lengths: lengths(&self.high_lengths),
            complete: self.complete.load(Ordering::Acquire),
        }
    }
}

/// Plain copy of the probe counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSnapshot {
    pub low_invocations: u64,
    pub high_invocations: u64,
    pub low_attn_macs: u64,
    pub high_attn_macs: u64,
    pub low_dense_macs: u64,
    pub high_dense_macs: u64,
    pub mlp_macs: u64,
    pub peak_activations: u64,
    /// Sequence length → number of low-stage invocations at that length.
    pub low_lengths: BTreeMap<u64, u64>,
    pub high_lengths: BTreeMap<u64, u64>,
    pub complete: bool,
}

impl ProbeSnapshot {
    pub fn is_zero(&self) -> bool {
        *self == ProbeSnapshot { complete: self.complete, ..Default::default() }
    }

    pub fn max_high_length(&self) -> Option<u64> {
        self.high_lengths.keys().next_back().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_rule_for_one_low_pass() {
        let p = CostProbe::new();
        p.record_stack(2, 0, 5, 8, 2);
        let s = p.snapshot();
        assert_eq!(s.low_invocations, 1);
        assert_eq!(s.high_invocations, 0);
        assert_eq!(s.low_attn_macs, 2 * 2 * 25 * 8);
        assert_eq!(s.low_dense_macs, 2 * 12 * 5 * 64);
        assert_eq!(s.low_lengths.get(&5), Some(&1));
        assert_eq!(s.peak_activations, 2 * (16 * 5 * 8 + 2 * 25));
    }

    #[test]
    fn disabled_probe_stays_zero() {
        let p = CostProbe::disabled();
        p.record_stack(1, 1, 10, 4, 1);
        p.record_mlp(100);
        assert!(p.snapshot().is_zero());
    }

    #[test]
    fn reset_clears_everything() {
        let p = CostProbe::new();
        p.record_stack(1, 1, 3, 4, 1);
        p.mark_complete();
        p.reset();
        let s = p.snapshot();
        assert!(s.is_zero());
        assert!(!s.complete);
    }
}

//! Attention cost model: closed-form estimates, runtime counters and
//! baseline-versus-hierarchical comparisons.

mod probe;
mod report;
mod sweep;

pub use probe::{CostProbe, ProbeSnapshot, ACTIVATIONS_PER_TOKEN_PER_DIM, DENSE_MACS_PER_TOKEN_PER_DIM2};
pub use report::{render_csv, render_table, speedup_report, CostReport, ReportRow, CSV_HEADER};
pub use sweep::{run_sweep, SweepConfig, SweepPoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("probe capture is incomplete; run the whole stage with the probe attached")]
    IncompleteCapture,
}

/// Shape of a workload: `n` domain sequences of `m` behaviors of `k` tokens
/// (mean) per user, `h_size` distinct behaviors, `users` users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub n: usize,
    pub m: usize,
    pub k: f64,
    pub h_size: usize,
    pub l_low: usize,
    pub l_high: usize,
    pub d: usize,
    pub heads: usize,
    #[serde(default = "one")]
    pub users: usize,
}

fn one() -> usize {
    1
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        let ints = [
            ("n", self.n),
            ("m", self.m),
            ("h_size", self.h_size),
            ("l_low", self.l_low),
            ("l_high", self.l_high),
            ("d", self.d),
            ("heads", self.heads),
            ("users", self.users),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(CostError::InvalidParams(format!("{name} must be positive")));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(CostError::InvalidParams(format!("k must be positive, got {}", self.k)));
        }
        Ok(())
    }

    pub fn l(&self) -> usize {
        self.l_low + self.l_high
    }
}

/// Abstract attention units with constants dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalCost {
    pub baseline: f64,
    pub bahe_low: f64,
    pub bahe_high: f64,
}

impl TheoreticalCost {
    pub fn bahe(&self) -> f64 {
        self.bahe_low + self.bahe_high
    }

    pub fn speedup(&self) -> f64 {
        self.baseline / self.bahe()
    }

    pub fn improvement(&self) -> f64 {
        self.baseline - self.bahe()
    }
}

/// `baseline = U·L·(NMK)²`, `bahe_low = L_low·H·K²`, `bahe_high = U·L_high·N·M²`.
///
/// The low stage is shared by all users; the other two terms are per user.
pub fn theoretical_cost(p: &CostParams) -> Result<TheoreticalCost, CostError> {
    p.validate()?;
    let (n, m, k, h, u) = (p.n as f64, p.m as f64, p.k, p.h_size as f64, p.users as f64);
    let nmk = n * m * k;
    Ok(TheoreticalCost {
        baseline: u * p.l() as f64 * nmk * nmk,
        bahe_low: p.l_low as f64 * h * k * k,
        bahe_high: u * p.l_high as f64 * n * m * m,
    })
}

/// Three evaluations of `baseline − bahe` for a single user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCheck {
    /// `baseline − (bahe_low + bahe_high)`.
    pub direct: f64,
    /// `L_low·((NMK)² − H·K²) + L_high·((NMK)² − N·M²)`.
    pub expanded: f64,
    /// `L_low·(N²M² − H)·K² + L_high·(N²K² − N)·M²`, the factored form.
    pub factored: f64,
}

impl ImprovementCheck {
    /// Largest relative disagreement between the three forms.
    pub fn discrepancy(&self) -> f64 {
        let scale = self.direct.abs().max(1.0);
        let a = (self.direct - self.expanded).abs();
        let b = (self.direct - self.factored).abs();
        a.max(b) / scale
    }
}

pub fn improvement_check(p: &CostParams) -> Result<ImprovementCheck, CostError> {
    let single = CostParams { users: 1, ..p.clone() };
    let t = theoretical_cost(&single)?;
    let (n, m, k, h) = (p.n as f64, p.m as f64, p.k, p.h_size as f64);
    let (lo, hi) = (p.l_low as f64, p.l_high as f64);
    let nmk2 = (n * m * k).powi(2);
    Ok(ImprovementCheck {
        direct: t.improvement(),
        expanded: lo * (nmk2 - h * k * k) + hi * (nmk2 - n * m * m),
        factored: lo * (n * n * m * m - h) * k * k + hi * (n * n * k * k - n) * m * m,
    })
}

/// Per-stage operation totals of one captured run, in multiply-accumulates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredCost {
    pub low_passes: u64,
    pub high_passes: u64,
    pub low_attn_macs: u64,
    pub high_attn_macs: u64,
    pub low_macs: u64,
    pub high_macs: u64,
    pub mlp_macs: u64,
    pub total_macs: u64,
    pub peak_activations: u64,
}

impl MeasuredCost {
    pub fn attn_macs(&self) -> u64 {
        self.low_attn_macs + self.high_attn_macs
    }
}

/// Aggregates a finished capture into stage totals.
pub fn measured_cost(snapshot: &ProbeSnapshot) -> Result<MeasuredCost, CostError> {
    if !snapshot.complete {
        return Err(CostError::IncompleteCapture);
    }
    let low_macs = snapshot.low_attn_macs + snapshot.low_dense_macs;
    let high_macs = snapshot.high_attn_macs + snapshot.high_dense_macs;
    Ok(MeasuredCost {
        low_passes: snapshot.low_invocations,
        high_passes: snapshot.high_invocations,
        low_attn_macs: snapshot.low_attn_macs,
        high_attn_macs: snapshot.high_attn_macs,
        low_macs,
        high_macs,
        mlp_macs: snapshot.mlp_macs,
        total_macs: low_macs + high_macs + snapshot.mlp_macs,
        peak_activations: snapshot.peak_activations,
    })
}

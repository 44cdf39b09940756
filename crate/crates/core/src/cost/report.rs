use serde::{Deserialize, Serialize};

use super::{theoretical_cost, CostError, CostParams, MeasuredCost, TheoreticalCost};

/// Baseline against hierarchical encoding for one workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: CostParams,
    pub theoretical_baseline: f64,
    pub theoretical_bahe_low: f64,
    pub theoretical_bahe_high: f64,
    pub baseline: MeasuredCost,
    pub bahe: MeasuredCost,
    pub speedup_theoretical: f64,
    /// Ratio of attention MACs, the quantity the closed form models.
    pub speedup_measured: f64,
    /// Ratio of all counted MACs.
    pub speedup_measured_total: f64,
    pub peak_activation_ratio: f64,
}

fn ratio(a: u64, b: u64) -> Result<f64, CostError> {
    if a == 0 || b == 0 {
        return Err(CostError::InvalidParams(format!("cannot form a ratio of {a} and {b}")));
    }
    Ok(a as f64 / b as f64)
}

pub fn speedup_report(params: &CostParams, baseline: &MeasuredCost, bahe: &MeasuredCost) -> Result<CostReport, CostError> {
    let TheoreticalCost { baseline: tb, bahe_low, bahe_high } = theoretical_cost(params)?;
    Ok(CostReport {
        params: params.clone(),
        theoretical_baseline: tb,
        theoretical_bahe_low: bahe_low,
        theoretical_bahe_high: bahe_high,
        baseline: baseline.clone(),
        bahe: bahe.clone(),
        speedup_theoretical: tb / (bahe_low + bahe_high),
        speedup_measured: ratio(baseline.attn_macs(), bahe.attn_macs())?,
        speedup_measured_total: ratio(baseline.total_macs, bahe.total_macs)?,
        peak_activation_ratio: ratio(baseline.peak_activations, bahe.peak_activations)?,
    })
}

pub const CSV_HEADER: [&str; 11] =
    ["mode", "N", "M", "K", "H", "flops_low", "flops_high", "flops_total", "peak_act", "wall_ms", "auc"];

/// One line of the plain-text / CSV cost table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    pub n: usize,
    pub m: usize,
    pub k: f64,
    pub h: usize,
    pub flops_low: u64,
    pub flops_high: u64,
    pub flops_total: u64,
    pub peak_act: u64,
    pub wall_ms: f64,
    pub auc: Option<f64>,
}

impl ReportRow {
    pub fn from_measured(mode: &str, p: &CostParams, c: &MeasuredCost, wall_ms: f64, auc: Option<f64>) -> Self {
        Self {
            mode: mode.to_string(),
            n: p.n,
            m: p.m,
            k: p.k,
            h: p.h_size,
            flops_low: c.low_macs,
            flops_high: c.high_macs,
            flops_total: c.total_macs,
            peak_act: c.peak_activations,
            wall_ms,
            auc,
        }
    }

    fn cells(&self) -> [String; 11] {
        [
            self.mode.clone(),
            self.n.to_string(),
            self.m.to_string(),
            format!("{:.2}", self.k),
            self.h.to_string(),
            self.flops_low.to_string(),
            self.flops_high.to_string(),
            self.flops_total.to_string(),
            self.peak_act.to_string(),
            format!("{:.1}", self.wall_ms),
            self.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}")),
        ]
    }
}

/// Right-aligned columns separated by two spaces.
pub fn render_table(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 11]> = rows.iter().map(ReportRow::cells).collect();
    let mut widths = CSV_HEADER.map(str::len);
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |r: &[String]| {
        let parts: Vec<String> = r.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ")
    };
    let mut out = line(&CSV_HEADER.map(String::from));
    out.push('\n');
    for r in &cells {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let mut cells = r.cells();
        if r.auc.is_none() {
            cells[10].clear();
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost(low: u64, high: u64, mlp: u64) -> MeasuredCost {
        MeasuredCost {
            low_attn_macs: low / 2,
            high_attn_macs: high / 2,
            low_macs: low,
            high_macs: high,
            mlp_macs: mlp,
            total_macs: low + high + mlp,
            peak_activations: low + high,
            ..MeasuredCost::default()
        }
    }

    fn params() -> CostParams {
        CostParams { n: 2, m: 4, k: 3.0, h_size: 5, l_low: 1, l_high: 1, d: 8, heads: 2, users: 1 }
    }

    #[test]
    fn report_ratios() {
        let r = speedup_report(&params(), &cost(1000, 1000, 10), &cost(100, 100, 10)).unwrap();
        assert_eq!(r.speedup_theoretical, 1152.0 / 77.0);
        assert_eq!(r.speedup_measured, 10.0);
        assert_eq!(r.theoretical_bahe_low + r.theoretical_bahe_high, 77.0);
        assert!(speedup_report(&params(), &cost(0, 0, 0), &cost(1, 1, 0)).is_err());
    }

    #[test]
    fn rendering() {
        let rows = vec![
            ReportRow::from_measured("baseline", &params(), &cost(0, 2000, 5), 12.5, Some(0.71)),
            ReportRow::from_measured("bahe", &params(), &cost(40, 60, 5), 1.0, None),
        ];
        let csv = render_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "mode,N,M,K,H,flops_low,flops_high,flops_total,peak_act,wall_ms,auc");
        assert_eq!(lines[1], "baseline,2,4,3.00,5,0,2000,2005,2000,12.5,0.7100");
        assert!(lines[2].ends_with(",1.0,"));
        for r in &rows {
            assert_eq!(r.flops_low + r.flops_high + cost(0, 0, 5).mlp_macs, r.flops_total);
        }
        let table = render_table(&rows);
        let widths: Vec<usize> = table.lines().map(str::len).collect();
        assert!(widths.iter().all(|w| *w == widths[0]));
    }
}

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{measured_cost, CostError, theoretical_cost, CostParams, CostProbe, MeasuredCost, TheoreticalCost};
use crate::aggregator::encode_user;
use crate::atomic::build_table;
use crate::data::{extract_atomic_set, AtomicBehavior, UserProfile, Vocab, UNK_TOKEN};
use crate::nn::{Mlp, MlpSpec, PoolMode, StackConfig, TransformerStack};
use crate::rng::stream;

/// Synthetic workload grid: every `(k, m)` pair is measured once for the
/// token-level baseline and once for table build plus behavior aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub n: usize,
    pub users: usize,
    /// Distinct behaviors users draw from; `None` makes every behavior
    /// instance distinct.
    pub pool_size: Option<usize>,
    pub d: usize,
    pub heads: usize,
    pub l_low: usize,
    pub l_high: usize,
    pub vocab_size: usize,
    pub pool: PoolMode,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ks: vec![16, 32, 64],
            ms: vec![16, 32, 64],
            n: 2,
            users: 1,
            pool_size: None,
            d: 8,
            heads: 2,
            l_low: 2,
            l_high: 2,
            vocab_size: 256,
            pool: PoolMode::Mean,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub params: CostParams,
    pub theoretical: TheoreticalCost,
    pub baseline: MeasuredCost,
    pub bahe: MeasuredCost,
    pub baseline_wall_ms: f64,
    pub bahe_wall_ms: f64,
}

impl SweepPoint {
    /// Baseline over hierarchical attention MACs.
    pub fn speedup_measured(&self) -> f64 {
        self.baseline.attn_macs() as f64 / self.bahe.attn_macs() as f64
    }

    pub fn speedup_theoretical(&self) -> f64 {
        self.theoretical.speedup()
    }

    pub fn baseline_tokens(&self) -> usize {
        self.params.n * self.params.m * self.params.k as usize
    }
}

fn workload(
    cfg: &SweepConfig,
    vocab: &Vocab,
    k: usize,
    m: usize,
) -> crate::Result<Vec<UserProfile>> {
    let mut rng = stream(cfg.seed, &format!("sweep/k{k}/m{m}"));
    let words: Vec<&String> = vocab.words().iter().filter(|w| *w != UNK_TOKEN).collect();
    let instances = cfg.users * cfg.n * m;
    let distinct = cfg.pool_size.unwrap_or(instances);
    if (words.len() as f64).powi(k.min(1000) as i32) < 2.0 * distinct as f64 {
        return Err(CostError::InvalidParams(format!("vocabulary too small for {distinct} distinct behaviors of {k} tokens")).into());
    }
    let mut seen = HashSet::with_capacity(distinct);
    let mut pool = Vec::with_capacity(distinct);
    while pool.len() < distinct {
        let text = (0..k).map(|_| words.choose(&mut rng).expect("non-empty vocabulary").as_str()).collect::<Vec<_>>().join(" ");
        if seen.insert(text.clone()) {
            pool.push(Arc::new(AtomicBehavior::new(&text, vocab)?));
        }
    }
    let mut next = 0;
    let mut pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        if cfg.pool_size.is_some() {
            Arc::clone(&pool[rng.random_range(0..pool.len())])
        } else {
            next += 1;
            Arc::clone(&pool[next - 1])
        }
    };
    Ok((0..cfg.users)
        .map(|u| UserProfile {
            user_id: format!("u{u}"),
            sequences: (0..cfg.n).map(|_| (0..m).map(|_| pick(&mut rng)).collect()).collect(),
        })
        .collect())
}

fn measure_baseline(stack: &TransformerStack, users: &[UserProfile]) -> crate::Result<(MeasuredCost, f64)> {
    let probe = CostProbe::new();
    let start = Instant::now();
    for u in users {
        let tokens: Vec<u32> = u.sequences.iter().flatten().flat_map(|b| b.tokens().iter().copied()).collect();
        let x = stack.embed(&tokens)?;
        stack.forward(stack.full_range(), &x, stack.attention(), Some(&probe))?;
    }
    probe.mark_complete();
    Ok((measured_cost(&probe.snapshot())?, start.elapsed().as_secs_f64() * 1e3))
}

fn measure_bahe(
    stack: &TransformerStack,
    fd: &Mlp,
    users: &[UserProfile],
    pool: PoolMode,
) -> crate::Result<(MeasuredCost, f64, usize)> {
    let probe = CostProbe::new();
    let start = Instant::now();
    let set = extract_atomic_set(users, &[]);
    let table = build_table(stack, &set, pool, Some(&probe))?;
    for u in users {
        encode_user(stack, fd, &table, u, pool, Some(&probe))?;
    }
    probe.mark_complete();
    Ok((measured_cost(&probe.snapshot())?, start.elapsed().as_secs_f64() * 1e3, set.len()))
}

/// Measures every grid point. `k` and `m` loops run in the order given.
pub fn run_sweep(cfg: &SweepConfig) -> crate::Result<Vec<SweepPoint>> {
    let mut words = vec![UNK_TOKEN.to_string()];
    words.extend((1..cfg.vocab_size).map(|i| format!("w{i}")));
    let vocab = Vocab::from_words(words)?;
    let stack = TransformerStack::new(
        StackConfig {
            d: cfg.d,
            heads: cfg.heads,
            l_low: cfg.l_low,
            l_high: cfg.l_high,
            vocab_size: vocab.len(),
            ..StackConfig::default()
        },
        cfg.seed,
    )?;
    let mut rng = stream(cfg.seed, "sweep/fd");
    let fd = Mlp::new(MlpSpec::new(vec![cfg.d, (cfg.d / 2).max(1)], false)?, 0.02, &mut rng);
    let mut points = Vec::new();
    for &k in &cfg.ks {
        for &m in &cfg.ms {
            let users = workload(cfg, &vocab, k, m)?;
            let (baseline, baseline_wall_ms) = measure_baseline(&stack, &users)?;
            let (bahe, bahe_wall_ms, h) = measure_bahe(&stack, &fd, &users, cfg.pool)?;
            let params = CostParams {
                n: cfg.n,
                m,
                k: k as f64,
                h_size: h,
                l_low: cfg.l_low,
                l_high: cfg.l_high,
                d: cfg.d,
                heads: cfg.heads,
                users: cfg.users,
            };
            let theoretical = theoretical_cost(&params)?;
            log::info!(
                "sweep k={k} m={m}: theoretical {:.2}x, measured {:.2}x",
                theoretical.speedup(),
                baseline.attn_macs() as f64 / bahe.attn_macs() as f64
            );
            points.push(SweepPoint { params, theoretical, baseline, bahe, baseline_wall_ms, bahe_wall_ms });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepConfig {
        SweepConfig { ks: vec![2, 4], ms: vec![3, 6], n: 2, d: 8, heads: 2, l_low: 1, l_high: 1, vocab_size: 40, ..SweepConfig::default() }
    }

    #[test]
    fn attention_ratio_matches_theory_exactly_for_fixed_k() {
        for p in run_sweep(&small()).unwrap() {
            assert_eq!(p.params.h_size, p.params.n * p.params.m);
            let rel = (p.speedup_measured() - p.speedup_theoretical()).abs() / p.speedup_theoretical();
            assert!(rel < 1e-12, "{p:?}");
            assert_eq!(p.bahe.low_passes as usize, p.params.h_size);
        }
    }

    #[test]
    fn high_stage_does_not_depend_on_k() {
        let pts = run_sweep(&small()).unwrap();
        for m in [3, 6] {
            let hs: Vec<u64> = pts.iter().filter(|p| p.params.m == m).map(|p| p.bahe.high_attn_macs).collect();
            assert_eq!(hs[0], hs[1]);
        }
    }

    #[test]
    fn low_stage_fixed_pool_ignores_user_count() {
        let mut cfg = SweepConfig { ks: vec![3], ms: vec![4], pool_size: Some(6), ..small() };
        cfg.users = 30;
        let many = run_sweep(&cfg).unwrap().remove(0);
        cfg.users = 60;
        let more = run_sweep(&cfg).unwrap().remove(0);
        assert_eq!(many.params.h_size, 6);
        assert_eq!(more.params.h_size, 6);
        assert_eq!(many.bahe.low_macs, more.bahe.low_macs);
        assert_eq!(more.bahe.high_attn_macs, 2 * many.bahe.high_attn_macs);
    }
}

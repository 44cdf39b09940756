//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `BAHE_ACCEPTANCE=1,5,11` restricts the run to listed criteria.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;

use bahe::aggregator::encode_user;
use bahe::atomic::{build_table, decode_table, encode_atomic, encode_table, load_table, save_table, StalePolicy, TableError};
use bahe::cost::{run_sweep, CostProbe, SweepConfig};
use bahe::data::{extract_atomic_set, generate_synthetic, shuffle_labels, GenConfig, Generated, Split};
use bahe::nn::{grad_check, Attention, NnError, Parameterized, PoolMode, StackConfig, Tensor2, TransformerStack};
use bahe::pipeline::{
    bce_loss, compute_features, evaluate_auc, run_ablation, train_downstream, Artifacts, Context, CtrModel,
    DownstreamConfig, ModelConfig, PipelineMode, TrainConfig,
};
use bahe::rng::stream;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gen(cfg: &GenConfig, seed: u64) -> Result<Generated, String> {
    generate_synthetic(cfg, seed).map_err(err)
}

fn random_stack(seed: u64) -> Result<TransformerStack, String> {
    let cfg = StackConfig { vocab_size: GenConfig::default().vocab_size, ..StackConfig::default() };
    TransformerStack::new(cfg, seed).map_err(err)
}

fn c1_dedup() -> Outcome {
    let start = Instant::now();
    let g = gen(&GenConfig::default(), 11)?;
    let ds = &g.dataset;
    let set = extract_atomic_set(&ds.users, &ds.items);
    let reuse = ds.behavior_instances() as f64 / set.len() as f64;
    ensure(reuse >= 10.0, format!("behavior reuse {reuse:.1}x below 10x"))?;
    let stack = random_stack(1)?;
    let probe = CostProbe::new();
    build_table(&stack, &set, PoolMode::Mean, Some(&probe)).map_err(err)?;
    let s = probe.snapshot();
    let secs = start.elapsed().as_secs_f64();
    ensure(s.low_invocations == set.len() as u64, format!("{} low passes for |H| = {}", s.low_invocations, set.len()))?;
    ensure(s.high_invocations == 0, "encode ran high layers")?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("|H| = {} low passes = {} reuse {reuse:.1}x in {secs:.1}s", set.len(), s.low_invocations))
}

fn c2_cache_transparency() -> Outcome {
    let g = gen(&GenConfig::default(), 12)?;
    let ds = &g.dataset;
    let set = extract_atomic_set(&ds.users, &ds.items);
    let stack = random_stack(2)?;
    let table = build_table(&stack, &set, PoolMode::Mean, None).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("table.bin");
    save_table(&table, &path).map_err(err)?;
    let loaded = load_table(&path).map_err(err)?;
    let all: Vec<_> = set.iter().collect();
    let mut rng = stream(2, "acceptance/c2");
    for _ in 0..1000 {
        let b = *all.choose(&mut rng).ok_or("empty set")?;
        let fresh = encode_atomic(&stack, b, PoolMode::Mean, None).map_err(err)?;
        let stored = loaded.get(b.key()).ok_or_else(|| format!("{:?} missing", b.key()))?;
        ensure(fresh.len() == stored.len(), "dimension mismatch")?;
        for (f, s) in fresh.iter().zip(stored) {
            ensure((*f as f32).to_bits() == s.to_bits(), format!("{:?}: {f} vs {s}", b.key()))?;
        }
    }
    Ok("1000 sampled behaviors bit-exact".into())
}

fn c3_feature_parallel() -> Outcome {
    let cfg = GenConfig { n_users: 200, n_records: 1000, ..GenConfig::default() };
    let g = gen(&cfg, 13)?;
    let ds = &g.dataset;
    let n = ds.n_domains().map_err(err)?;
    let model = CtrModel::new(ModelConfig::default(), PipelineMode::Bahe, n, ds.vocab.len(), 3).map_err(err)?;
    let set = extract_atomic_set(&ds.users, &ds.items);
    let all: Vec<_> = set.iter().cloned().collect();
    let pool = model.config.sequence_pool();
    let table = build_table(&model.stack, &set, model.config.atomic_pool(), None).map_err(err)?;
    let mut rng = stream(3, "acceptance/c3");
    for trial in 0..100 {
        let user = &ds.users[rng.random_range(0..ds.users.len())];
        let before = encode_user(&model.stack, &model.fd, &table, user, pool, None).map_err(err)?;
        let mut changed = user.clone();
        let dom = rng.random_range(0..n);
        let pos = rng.random_range(0..changed.sequences[dom].len());
        changed.sequences[dom][pos] = all.choose(&mut rng).ok_or("empty set")?.clone();
        let after = encode_user(&model.stack, &model.fd, &table, &changed, pool, None).map_err(err)?;
        for other in (0..n).filter(|&s| s != dom) {
            let same = before.segment(other).iter().zip(after.segment(other)).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, format!("trial {trial}: segment {other} moved after editing segment {dom}"))?;
        }
    }
    Ok("100 trials, untouched segments bit-identical".into())
}

fn c4_gradients() -> Outcome {
    let cfg = GenConfig {
        n_domains: 2,
        behaviors_per_sequence: 3,
        k_min: 1,
        k_max: 3,
        vocab_size: 24,
        pool_size: 30,
        n_topics: 2,
        n_users: 6,
        n_items: 5,
        n_records: 40,
        ..GenConfig::default()
    };
    let g = gen(&cfg, 14)?;
    let ds = &g.dataset;
    let mc = ModelConfig {
        d: 8,
        d_hat: 3,
        l_low: 1,
        l_high: 2,
        heads: 2,
        fd_hidden: vec![5],
        head_hidden: vec![4],
        init_std: 0.3,
        ..ModelConfig::default()
    };
    let model = CtrModel::new(mc, PipelineMode::Bahe, ds.n_domains().map_err(err)?, ds.vocab.len(), 4).map_err(err)?;
    let art = Artifacts::build(&model, ds, None).map_err(err)?;
    let ctx = Context { dataset: ds, artifacts: &art, token_budget: None };
    let batch: Vec<_> = ds.split(Split::Train).iter().take(6).copied().collect();
    let report = grad_check(
        &model,
        |m: &CtrModel| m.loss_and_grad(&ctx, &batch, None).map_err(|e| NnError::InvalidConfig(e.to_string())),
        1e-5,
        12,
        4,
    )
    .map_err(err)?;
    let trainable = model.params().iter().filter(|p| !p.frozen).count();
    ensure(report.per_param.len() == trainable, "not every trainable group was checked")?;
    ensure(report.max_relative_error <= 1e-4, format!("max relative error {:e}", report.max_relative_error))?;
    ensure(report.frozen_nonzero == 0, format!("{} frozen gradient entries non-zero", report.frozen_nonzero))?;
    Ok(format!("{} groups, max relative error {:.2e}, frozen gradients 0", trainable, report.max_relative_error))
}

fn c5_oracles() -> Outcome {
    let mut rng = stream(5, "acceptance/c5");
    let mut worst_auc: f64 = 0.0;
    let mut worst_bce: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=300);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).floor() / 20.0).collect();
        let auc = evaluate_auc(&scores, &labels).map_err(err)?;
        worst_auc = worst_auc.max((auc - common::auc_pairs(&scores, &labels)).abs());
        let preds: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let bce = bce_loss(&preds, &labels).map_err(err)?;
        worst_bce = worst_bce.max((bce - common::bce_scalar(&preds, &labels)).abs());
    }
    ensure(worst_auc <= 1e-12, format!("auc deviates by {worst_auc:e}"))?;
    ensure(worst_bce <= 1e-12, format!("bce deviates by {worst_bce:e}"))?;
    let mut worst_fwd: f64 = 0.0;
    for (i, attention) in [Attention::Causal, Attention::Bidirectional].into_iter().enumerate() {
        let cfg = StackConfig { d: 16, heads: 4, l_low: 1, l_high: 1, vocab_size: 8, init_std: 0.3, attention, ..StackConfig::default() };
        let mut stack = TransformerStack::new(cfg, 50 + i as u64).map_err(err)?;
        for p in stack.params_mut() {
            for v in p.tensor.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let rows: Vec<Vec<f64>> = (0..7).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = Tensor2::from_rows(&rows).map_err(err)?;
        let y = stack.forward(0..1, &x, attention, None).map_err(err)?;
        let want = common::block(&stack.blocks[0], &rows, 4, attention == Attention::Causal);
        worst_fwd = worst_fwd.max(common::max_rel_diff(&common::to_mat(&y), &want));
    }
    ensure(worst_fwd <= 1e-9, format!("one-layer forward deviates by {worst_fwd:e}"))?;
    Ok(format!("auc {worst_auc:.1e}, bce {worst_bce:.1e}, forward {worst_fwd:.1e}"))
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn c6_complexity() -> Outcome {
    let start = Instant::now();
    let points = run_sweep(&SweepConfig::default()).map_err(err)?;
    ensure(points.len() == 9, format!("{} sweep points", points.len()))?;
    let mut worst: f64 = 0.0;
    for p in &points {
        let rel = p.speedup_measured() / p.speedup_theoretical() - 1.0;
        worst = worst.max(rel.abs());
        ensure(rel.abs() <= 0.15, format!("K={} M={}: measured {:.3} theoretical {:.3}", p.params.k, p.params.m, p.speedup_measured(), p.speedup_theoretical()))?;
    }
    let logs: Vec<(f64, f64)> =
        points.iter().map(|p| ((p.baseline_tokens() as f64).ln(), (p.baseline.attn_macs() as f64).ln())).collect();
    let slope = fit_slope(&logs);
    ensure((slope - 2.0).abs() <= 0.1, format!("baseline log-log slope {slope:.4}"))?;
    for a in &points {
        for b in points.iter().filter(|b| b.params.m == a.params.m) {
            ensure(a.bahe.high_macs == b.bahe.high_macs, format!("high MACs vary with K at M={}", a.params.m))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, format!("took {secs:.0}s"))?;
    Ok(format!("worst speedup deviation {:.2}%, slope {slope:.4}, high MACs K-invariant, {secs:.1}s", worst * 100.0))
}

struct Learned {
    generated: Generated,
    model: CtrModel,
    artifacts: Artifacts,
}

fn bahe_run(ds: &bahe::data::Dataset, mc: &ModelConfig) -> Result<bahe::pipeline::AblationRun, String> {
    let tc = TrainConfig { mode: PipelineMode::Bahe, ..TrainConfig::default() };
    run_ablation(ds, &[PipelineMode::Bahe], mc, &tc).map_err(err)?.pop().ok_or_else(|| "no run".into())
}

fn c7_learning(keep: &mut Option<Learned>) -> Outcome {
    let start = Instant::now();
    let g = gen(&GenConfig::default(), 7)?;
    let ds = &g.dataset;
    ensure(ds.train.len() == 20_000 && ds.test.len() == 2_500, format!("split {}/{}", ds.train.len(), ds.test.len()))?;
    let test = ds.split(Split::Test);
    let bayes: Vec<f64> = test.iter().map(|r| g.truth.bayes_score(r)).collect();
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let bayes_auc = evaluate_auc(&bayes, &labels).map_err(err)?;
    let mc = ModelConfig::default();
    let run = bahe_run(ds, &mc)?;
    let mut shuffled = ds.clone();
    shuffle_labels(&mut shuffled, 7);
    let control = bahe_run(&shuffled, &mc)?;
    let secs = start.elapsed().as_secs_f64();
    let auc = run.report.auc;
    let detail = format!("bayes auc {bayes_auc:.4}, bahe auc {auc:.4}, shuffled control {:.4}, {secs:.0}s", control.report.auc);
    let artifacts = Artifacts::build(&run.model, ds, None).map_err(err)?;
    *keep = Some(Learned { generated: g, model: run.model, artifacts });
    ensure(auc >= 0.70, detail.clone())?;
    ensure((control.report.auc - 0.5).abs() <= 0.05, detail.clone())?;
    ensure(secs < 900.0, detail.clone())?;
    Ok(detail)
}

fn ablation_data() -> Result<Generated, String> {
    gen(&GenConfig { n_records: 5_000, ..GenConfig::default() }, 8)
}

fn c8_ablation(keep: &mut Option<f64>) -> Outcome {
    let g = ablation_data()?;
    let ds = &g.dataset;
    let tc = TrainConfig::default();
    let runs = run_ablation(ds, &PipelineMode::ALL, &ModelConfig::default(), &tc).map_err(err)?;
    let modes: Vec<_> = runs.iter().map(|r| r.report.mode).collect();
    ensure(modes == PipelineMode::ALL, format!("modes {modes:?}"))?;
    let mut lines = Vec::new();
    for r in &runs {
        ensure(r.report.auc.is_finite() && r.report.logloss.is_finite(), format!("{} report not finite", r.report.mode))?;
        lines.push(format!(
            "{} auc {:.4} macs {:.3e} peak {} {:.0}ms",
            r.report.mode,
            r.report.auc,
            bahe::cost::measured_cost(&r.cost).map_err(err)?.total_macs as f64,
            r.cost.peak_activations,
            r.report.wall_ms
        ));
    }
    let get = |m: PipelineMode| runs.iter().find(|r| r.report.mode == m).ok_or(format!("{m} missing"));
    let base = bahe::cost::measured_cost(&get(PipelineMode::Baseline)?.cost).map_err(err)?;
    let bahe_run = get(PipelineMode::Bahe)?;
    let bahe_cost = bahe::cost::measured_cost(&bahe_run.cost).map_err(err)?;
    *keep = Some(bahe_run.report.auc);
    let detail = format!("{}; flops ratio {:.3}", lines.join("; "), bahe_cost.total_macs as f64 / base.total_macs as f64);
    ensure(2 * bahe_cost.total_macs < base.total_macs, detail.clone())?;
    ensure(bahe_cost.peak_activations < base.peak_activations, detail.clone())?;
    Ok(detail)
}

fn c9_downstream(learned: &Option<Learned>) -> Outcome {
    let l = learned.as_ref().ok_or("criterion 7 produced no model")?;
    let ds = &l.generated.dataset;
    let ctx = Context { dataset: ds, artifacts: &l.artifacts, token_budget: None };
    let features = compute_features(&l.model, &ctx).map_err(err)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let r = train_downstream(ds, &features, &DownstreamConfig { seed, ..DownstreamConfig::default() }).map_err(err)?;
        ok &= r.auc_with_q >= r.auc_ids;
        lines.push(format!("seed {seed}: ids {:.4} with q {:.4}", r.auc_ids, r.auc_with_q));
    }
    ensure(ok, lines.join("; "))?;
    Ok(lines.join("; "))
}

fn c10_pool_modes(mean_auc: Option<f64>) -> Outcome {
    let g = ablation_data()?;
    let ds = &g.dataset;
    let mean = match mean_auc {
        Some(a) => a,
        None => bahe_run(ds, &ModelConfig::default())?.report.auc,
    };
    let eos = bahe_run(ds, &ModelConfig { pool: PoolMode::Eos, ..ModelConfig::default() })?;
    ensure(eos.report.pool == PoolMode::Eos, "report does not carry the pool mode")?;
    ensure(eos.report.auc.is_finite() && eos.report.logloss.is_finite(), "eos report not finite")?;
    Ok(format!("mean auc {mean:.4} vs eos auc {:.4}", eos.report.auc))
}

fn c11_persistence() -> Outcome {
    let cfg = GenConfig { n_users: 200, n_records: 1000, ..GenConfig::default() };
    let g = gen(&cfg, 15)?;
    let ds = &g.dataset;
    let set = extract_atomic_set(&ds.users, &ds.items);
    let stack = random_stack(6)?;
    let table = build_table(&stack, &set, PoolMode::Mean, None).map_err(err)?;
    let bytes = encode_table(&table);
    let back = decode_table(&bytes).map_err(err)?;
    ensure(encode_table(&back) == bytes && back == table, "roundtrip changed the table")?;
    let mut rng = stream(11, "acceptance/c11");
    for _ in 0..200 {
        let mut bad = bytes.clone();
        let at = rng.random_range(0..bad.len());
        bad[at] ^= 1 << rng.random_range(0..8);
        ensure(decode_table(&bad).is_err(), format!("flip at byte {at} went unnoticed"))?;
    }
    let mut crc_only = bytes.clone();
    // Last byte of the last embedding value.
    let at = crc_only.len() - 5;
    crc_only[at] ^= 0x40;
    ensure(matches!(decode_table(&crc_only), Err(TableError::ChecksumMismatch { .. })), "payload flip not reported as checksum mismatch")?;
    let other = random_stack(7)?;
    ensure(
        matches!(back.check_fresh(&other, StalePolicy::Error), Err(TableError::StaleTable { .. })),
        "stale fingerprint not detected",
    )?;
    ensure(back.check_fresh(&stack, StalePolicy::Error).is_ok(), "fresh table rejected")?;
    Ok(format!("{} entries, 200 single-byte corruptions rejected, stale weights rejected", table.len()))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("BAHE_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut learned = None;
    let mut mean_auc = None;
    let mut failures = 0;
    for n in 1..=11 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(|| match n {
            1 => c1_dedup(),
            2 => c2_cache_transparency(),
            3 => c3_feature_parallel(),
            4 => c4_gradients(),
            5 => c5_oracles(),
            6 => c6_complexity(),
            7 => c7_learning(&mut learned),
            8 => c8_ablation(&mut mean_auc),
            9 => c9_downstream(&learned),
            10 => c10_pool_modes(mean_auc),
            _ => c11_persistence(),
        }))
        .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())))));
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("criterion {n:>2}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

use bahe::cost::{measured_cost, CostProbe};
use bahe::data::{extract_atomic_set, generate_synthetic, load_dataset, save_dataset, GenConfig, Generated, Split};
use bahe::nn::Parameterized;
use bahe::pipeline::{
    decode_checkpoint, encode_checkpoint, initial_model, run_ablation, train, Artifacts, Context, ModelConfig,
    PipelineMode, PretrainConfig, TrainConfig,
};

fn small() -> Generated {
    let cfg = GenConfig {
        n_domains: 2,
        behaviors_per_sequence: 4,
        vocab_size: 64,
        pool_size: 40,
        n_users: 30,
        n_items: 12,
        n_records: 120,
        ..GenConfig::default()
    };
    generate_synthetic(&cfg, 21).unwrap()
}

fn model_cfg() -> ModelConfig {
    ModelConfig { d: 16, d_hat: 4, heads: 2, head_hidden: vec![8], ..ModelConfig::default() }
}

fn train_cfg(mode: PipelineMode) -> TrainConfig {
    TrainConfig { mode, pretrain: PretrainConfig { epochs: 1, ..PretrainConfig::default() }, ..TrainConfig::default() }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let g = small();
    let a = run_ablation(&g.dataset, &[PipelineMode::Bahe], &model_cfg(), &train_cfg(PipelineMode::Bahe)).unwrap();
    let b = run_ablation(&g.dataset, &[PipelineMode::Bahe], &model_cfg(), &train_cfg(PipelineMode::Bahe)).unwrap();
    assert_eq!(a[0].report.auc.to_bits(), b[0].report.auc.to_bits());
    assert_eq!(a[0].history, b[0].history);
    assert_eq!(encode_checkpoint(&a[0].model), encode_checkpoint(&b[0].model));
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let g = small();
    let ds = &g.dataset;
    let cfg = TrainConfig { lr: 0.0, ..train_cfg(PipelineMode::Fp) };
    let model = initial_model(ds, &model_cfg(), &cfg, PipelineMode::Fp).unwrap();
    let art = Artifacts::build(&model, ds, None).unwrap();
    let ctx = Context { dataset: ds, artifacts: &art, token_budget: None };
    let out = train(&ctx, model.clone(), &cfg, &CostProbe::new()).unwrap();
    assert_eq!(encode_checkpoint(&out.model), encode_checkpoint(&model));
}

#[test]
fn table_modes_never_move_low_layers() {
    let g = small();
    for mode in [PipelineMode::Bahe, PipelineMode::FpAbe] {
        let runs = run_ablation(&g.dataset, &[mode], &model_cfg(), &train_cfg(mode)).unwrap();
        let start = initial_model(&g.dataset, &model_cfg(), &train_cfg(mode), mode).unwrap();
        let trained = &runs[0].model;
        assert_eq!(trained.stack.low_fingerprint(), start.stack.low_fingerprint());
        for (a, b) in trained.params().iter().zip(start.params()) {
            if a.frozen {
                assert_eq!(a.tensor, b.tensor, "{} moved", a.name);
            }
        }
        assert_ne!(encode_checkpoint(trained), encode_checkpoint(&start));
    }
}

#[test]
fn low_layer_passes_per_mode() {
    let g = small();
    let ds = &g.dataset;
    let runs = run_ablation(ds, &PipelineMode::ALL, &model_cfg(), &TrainConfig { pretrain: PretrainConfig { epochs: 1, ..PretrainConfig::default() }, ..TrainConfig::default() }).unwrap();
    let h = extract_atomic_set(&ds.users, &ds.items).len() as u64;
    let examples = (ds.train.len() + ds.test.len()) as u64;
    let n = ds.n_domains().unwrap() as u64;
    let get = |m| runs.iter().find(|r| r.report.mode == m).unwrap();
    assert_eq!(get(PipelineMode::Baseline).cost.low_invocations, examples);
    assert_eq!(get(PipelineMode::Fp).cost.low_invocations, (n + 1) * examples);
    assert_eq!(get(PipelineMode::Bahe).cost.low_invocations, h);
    assert_eq!(get(PipelineMode::FpAbe).cost.low_invocations, 2 * h);
    assert_eq!(get(PipelineMode::Bahe).train_cost.low_invocations, 0);
    // Behavior-level high inputs are M rows; token-level ones are M·K.
    let bahe_len = get(PipelineMode::Bahe).cost.max_high_length().unwrap();
    let abe_len = get(PipelineMode::FpAbe).cost.max_high_length().unwrap();
    assert_eq!(bahe_len, 4);
    assert!(abe_len > bahe_len);
    for r in &runs {
        let c = measured_cost(&r.cost).unwrap();
        assert!(c.total_macs > 0 && c.peak_activations > 0);
    }
}

#[test]
fn checkpoint_restores_predictions() {
    let g = small();
    let ds = &g.dataset;
    let runs = run_ablation(ds, &[PipelineMode::Bahe], &model_cfg(), &train_cfg(PipelineMode::Bahe)).unwrap();
    let model = decode_checkpoint(&encode_checkpoint(&runs[0].model)).unwrap();
    assert_eq!(model, runs[0].model);
    let art = Artifacts::build(&model, ds, None).unwrap();
    let ctx = Context { dataset: ds, artifacts: &art, token_budget: None };
    let report = bahe::pipeline::evaluate(&ctx, &model, Split::Test, &CostProbe::new(), 0).unwrap();
    assert_eq!(report.auc.to_bits(), runs[0].report.auc.to_bits());
}

#[test]
fn dataset_survives_disk_roundtrip() {
    let g = small();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&g.dataset, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), g.dataset);
}

#[test]
fn token_budget_shortens_baseline_inputs() {
    let g = small();
    let ds = &g.dataset;
    let longest = |budget| {
        let cfg = TrainConfig { token_budget: budget, ..train_cfg(PipelineMode::Baseline) };
        let runs = run_ablation(ds, &[PipelineMode::Baseline], &model_cfg(), &cfg).unwrap();
        *runs[0].cost.low_lengths.keys().next_back().unwrap()
    };
    assert!(longest(Some(6)) < longest(None));
}

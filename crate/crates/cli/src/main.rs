//! `bahe` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use bahe::atomic::{build_table, load_table, save_table, TableError};
use bahe::config::{load_config, to_json, ConfigError, RunConfig};
use bahe::cost::{
    measured_cost, render_csv, render_table, run_sweep, speedup_report, CostProbe, ReportRow, SweepPoint,
};
use bahe::data::{extract_atomic_set, generate_synthetic, load_dataset, save_dataset, Dataset};
use bahe::pipeline::{
    ablation_rows, evaluate, initial_model, load_checkpoint, run_ablation, save_checkpoint, train, workload_params,
    Artifacts, Context, PipelineError, PipelineMode,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bahe", version, about = "Hierarchical behavior encoding for CTR prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory written by `gen-data`; overrides `data.path`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and save the behavior embedding table.
    Encode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        table_out: PathBuf,
    },
    /// Train one pipeline mode and evaluate it on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
    },
    /// Evaluate a saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Ablation over pipeline modes plus the cost sweep.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Comma-separated modes; all four by default.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<PipelineMode>>,
        /// Directory for the reports; defaults to `paths.reports`.
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long)]
        skip_sweep: bool,
    },
}

/// Failures split by exit code: configuration problems exit 2, everything
/// else 1.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e.chain().any(|c| {
            c.is::<ConfigError>()
                || matches!(c.downcast_ref::<bahe::Error>(), Some(bahe::Error::Config(_)))
                || matches!(
                    c.downcast_ref::<PipelineError>(),
                    Some(PipelineError::InvalidConfig(_) | PipelineError::MissingTable { .. })
                )
        });
        if config {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                anyhow::Error::from(e).into()
            }
        }
    )*};
}

failure_from!(PipelineError, TableError, bahe::Error, bahe::cost::CostError);

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

fn load_run_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p).map_err(|e| Failure::Config(e.into()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg.resolved())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

/// `<path>.config.json` next to a file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn dataset(cfg: &RunConfig, data: &DataArg) -> anyhow::Result<Dataset> {
    match data.data.as_ref().or(cfg.data.path.as_ref()) {
        Some(dir) => Ok(load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))?),
        None => {
            log::info!("no dataset path given; generating one in memory");
            Ok(generate_synthetic(&cfg.data.generator, cfg.seed)?.dataset)
        }
    }
}

fn table_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.paths.table.clone())
}

fn load_artifacts(
    table: Option<PathBuf>,
    model: &bahe::pipeline::CtrModel,
    ds: &Dataset,
    probe: &CostProbe,
) -> Result<Artifacts, Failure> {
    if !model.mode.uses_table() {
        return Ok(Artifacts::default());
    }
    let Some(path) = table else {
        return Err(config_error(format!("mode {} needs --table (run `bahe encode` first)", model.mode)));
    };
    let table = load_table(&path).with_context(|| format!("loading table {}", path.display()))?;
    let mut art = Artifacts { table: Some(table), token_cache: None };
    art.check(model).map_err(|e| Failure::Runtime(e.into()))?;
    art.ensure_token_cache(model, ds, Some(probe)).map_err(|e| Failure::Runtime(e.into()))?;
    Ok(art)
}

fn cmd_gen_data(common: Common, out: PathBuf) -> Result<(), Failure> {
    let cfg = load_run_config(&common)?;
    cfg.data.generator.validate().map_err(|e| Failure::Config(e.into()))?;
    let generated = generate_synthetic(&cfg.data.generator, cfg.seed).map_err(|e| Failure::Config(e.into()))?;
    let ds = &generated.dataset;
    save_dataset(ds, &out).with_context(|| format!("writing dataset to {}", out.display()))?;
    write(&out.join("config.resolved.json"), to_json(&cfg) + "\n")?;
    let h = extract_atomic_set(&ds.users, &ds.items).len();
    println!("distinct behaviors |H|: {h}");
    println!("behavior instances: {}", ds.behavior_instances());
    println!("records: train {} valid {} test {}", ds.train.len(), ds.valid.len(), ds.test.len());
    println!("base rate: {:.4}", ds.base_rate());
    Ok(())
}

fn cmd_encode(common: Common, data: DataArg, table_out: PathBuf) -> Result<(), Failure> {
    let cfg = load_run_config(&common)?;
    let ds = dataset(&cfg, &data)?;
    let model = initial_model(&ds, &cfg.model, &cfg.train, PipelineMode::Bahe)?;
    let set = extract_atomic_set(&ds.users, &ds.items);
    let probe = CostProbe::new();
    let table = build_table(&model.stack, &set, cfg.model.atomic_pool(), Some(&probe))?;
    save_table(&table, &table_out)?;
    write(&sidecar(&table_out), to_json(&cfg) + "\n")?;
    println!("distinct behaviors |H|: {}", set.len());
    println!("low-layer passes: {}", probe.snapshot().low_invocations);
    println!("fingerprint: {:016x}", table.fingerprint());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: Common,
    data: DataArg,
    mode: Option<PipelineMode>,
    table: Option<PathBuf>,
    report_out: Option<PathBuf>,
    checkpoint_out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load_run_config(&common)?;
    if let Some(m) = mode {
        cfg.train.mode = m;
    }
    let mode = cfg.train.mode;
    let table = table_path(&cfg, &table);
    if mode.uses_table() && table.is_none() {
        return Err(config_error(format!("mode {mode} needs --table (run `bahe encode` first)")));
    }
    let ds = dataset(&cfg, &data)?;
    let model = initial_model(&ds, &cfg.model, &cfg.train, mode)?;
    let probe = CostProbe::new();
    let art = load_artifacts(table, &model, &ds, &probe)?;
    let ctx = Context { dataset: &ds, artifacts: &art, token_budget: cfg.train.token_budget };
    let out = train(&ctx, model, &cfg.train, &probe)?;
    let report_out = report_out.unwrap_or_else(|| cfg.paths.reports.join(format!("train_{mode}.json")));
    let ckpt = checkpoint_out.unwrap_or_else(|| cfg.paths.checkpoints.join(format!("{mode}.ckpt")));
    write_json(&report_out, &out.report)?;
    write_json(&report_out.with_extension("history.json"), &out.history)?;
    write(&sidecar(&report_out), to_json(&cfg) + "\n")?;
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&out.model, &ckpt)?;
    println!("mode: {mode}");
    println!("test auc: {:?}", out.report.auc);
    println!("test logloss: {:?}", out.report.logloss);
    println!("steps: {}", out.history.len());
    println!("training low-layer passes: {}", out.train_cost.low_invocations);
    Ok(())
}

fn cmd_eval(
    common: Common,
    data: DataArg,
    checkpoint: PathBuf,
    table: Option<PathBuf>,
    report_out: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load_run_config(&common)?;
    let model = load_checkpoint(&checkpoint)?;
    let ds = dataset(&cfg, &data)?;
    let probe = CostProbe::new();
    let art = load_artifacts(table_path(&cfg, &table), &model, &ds, &probe)?;
    let ctx = Context { dataset: &ds, artifacts: &art, token_budget: cfg.train.token_budget };
    let report = evaluate(&ctx, &model, bahe::data::Split::Test, &probe, cfg.seed)?;
    let report_out = report_out.unwrap_or_else(|| cfg.paths.reports.join(format!("eval_{}.json", model.mode)));
    write_json(&report_out, &report)?;
    write(&sidecar(&report_out), to_json(&cfg) + "\n")?;
    println!("mode: {}", model.mode);
    println!("test auc: {:?}", report.auc);
    println!("test logloss: {:?}", report.logloss);
    Ok(())
}

fn sweep_rows(points: &[SweepPoint]) -> Vec<ReportRow> {
    points
        .iter()
        .flat_map(|p| {
            [
                ReportRow::from_measured("baseline", &p.params, &p.baseline, p.baseline_wall_ms, None),
                ReportRow::from_measured("bahe", &p.params, &p.bahe, p.bahe_wall_ms, None),
            ]
        })
        .collect()
}

fn cmd_bench(
    common: Common,
    data: DataArg,
    modes: Option<Vec<PipelineMode>>,
    report_out: Option<PathBuf>,
    skip_sweep: bool,
) -> Result<(), Failure> {
    let cfg = load_run_config(&common)?;
    let modes = modes.unwrap_or_else(|| PipelineMode::ALL.to_vec());
    let dir = report_out.unwrap_or_else(|| cfg.paths.reports.clone());
    let ds = dataset(&cfg, &data)?;
    let runs = run_ablation(&ds, &modes, &cfg.model, &cfg.train)?;
    let passes = ds.train.len() * cfg.train.epochs + ds.test.len();
    let params = workload_params(&ds, &cfg.model, passes)?;
    let rows = ablation_rows(&runs, &params)?;
    let reports: Vec<_> = runs.iter().map(|r| &r.report).collect();
    write_json(&dir.join("ablation.json"), &reports)?;
    write(&dir.join("ablation.txt"), render_table(&rows))?;
    write(&dir.join("ablation.csv"), render_csv(&rows))?;
    print!("{}", render_table(&rows));
    let find = |m: PipelineMode| runs.iter().find(|r| r.report.mode == m);
    if let (Some(base), Some(bahe)) = (find(PipelineMode::Baseline), find(PipelineMode::Bahe)) {
        let report = speedup_report(
            &params,
            &measured_cost(&base.cost)?,
            &measured_cost(&bahe.cost)?,
        )
        ?;
        write_json(&dir.join("speedup.json"), &report)?;
        println!(
            "speedup: theoretical {:.2}x, measured attention {:.2}x, measured total {:.2}x, peak activations {:.2}x",
            report.speedup_theoretical,
            report.speedup_measured,
            report.speedup_measured_total,
            report.peak_activation_ratio
        );
    }
    let pools: Vec<_> = runs.iter().map(|r| (r.report.mode, r.report.pool, r.report.auc)).collect();
    log::debug!("pool modes: {pools:?}");
    if !skip_sweep {
        let points = run_sweep(&cfg.cost)?;
        let rows = sweep_rows(&points);
        write_json(&dir.join("sweep.json"), &points)?;
        write(&dir.join("sweep.txt"), render_table(&rows))?;
        write(&dir.join("sweep.csv"), render_csv(&rows))?;
        for p in &points {
            println!(
                "sweep N={} M={} K={}: theoretical {:.2}x, measured {:.2}x",
                p.params.n,
                p.params.m,
                p.params.k,
                p.speedup_theoretical(),
                p.speedup_measured()
            );
        }
    }
    write(&dir.join("config.resolved.json"), to_json(&cfg) + "\n")?;
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BAHE_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| config_error(format!("BAHE_THREADS={v:?} is not a number")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Runtime(e.into()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::GenData { common, out } => cmd_gen_data(common, out),
        Command::Encode { common, data, table_out } => cmd_encode(common, data, table_out),
        Command::Train { common, data, mode, table, report_out, checkpoint_out } => {
            cmd_train(common, data, mode, table, report_out, checkpoint_out)
        }
        Command::Eval { common, data, checkpoint, table, report_out } => {
            cmd_eval(common, data, checkpoint, table, report_out)
        }
        Command::Bench { common, data, modes, report_out, skip_sweep } => {
            cmd_bench(common, data, modes, report_out, skip_sweep)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| {
                matches!(c.downcast_ref::<TableError>(), Some(TableError::StaleTable { .. }))
                    || matches!(
                        c.downcast_ref::<PipelineError>(),
                        Some(PipelineError::Table(TableError::StaleTable { .. }))
                    )
            }) {
                eprintln!("hint: the table does not match the model's low layers; re-run encode");
            }
            ExitCode::from(1)
        }
    }
}

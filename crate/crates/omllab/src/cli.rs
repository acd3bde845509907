//! Command-line front end: binds config files and presets to the
//! training, evaluation, retention, and analysis drivers, writes every
//! artifact under an output directory named by config hash and seed, and
//! records a manifest per subcommand. Exit codes are a stable contract:
//! 0 success, 2 config or usage problems, 3 numeric failures.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{append_sparsity_csv, dump_representation, sparsity_report, SparsityReport};
use crate::config::{
    build_experiment, preset, Experiment, ExperimentConfig, RunManifest, PRESET_NAMES,
};
use crate::error::{ConfigError, DataError, EvalError, GraphError, TrainError};
use crate::eval::{pretrain_baseline, run_eval, write_eval_outputs, AdaptScope, EvalConfig, EvalReport};
use crate::metatrain::meta_train;
use crate::network::{load_checkpoint, ParameterSet};
use crate::problems::ProblemSource;
use crate::retention::{append_retention_csv, run_retention, RetentionMethod, RetentionRow};
use crate::rngutil;
use crate::tensor::Tensor;

/// Failures surfaced to the shell. Usage problems (bad config, missing
/// checkpoint, unknown method) exit 2; numeric failures (divergence,
/// non-finite values, sweeps with no survivor) exit 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NumericAtStep { .. } | TrainError::Divergence { .. } => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Graph(g) => g.into(),
            TrainError::Data(d) => d.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::SweepAllDiverged => CliError::Numeric(e.to_string()),
            EvalError::Train(t) => t.into(),
            EvalError::Graph(g) => g.into(),
            EvalError::EmptyEvalSet | EvalError::EmptyGrid => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "omllab",
    version,
    about = "Meta-learn representations that resist interference; evaluate, retain, analyze."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: sine-paper, sine-desk, or split-desk.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs", value_name = "DIR")]
    pub out: PathBuf,
}

/// Which representation the trunk carries into evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RepArg {
    /// A meta-trained checkpoint (see --checkpoint).
    Checkpoint,
    /// The IID pretraining baseline, trained on the fly.
    Pretrain,
    /// A freshly initialized, untrained network.
    Scratch,
}

/// Online-training mode: adapt the head under a frozen trunk, or the
/// whole network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Frozen,
    Standard,
}

#[derive(Args, Clone, Debug)]
pub struct RepArgs {
    /// Checkpoint directory; defaults to `<run dir>/checkpoint-final`.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RepArg::Checkpoint)]
    pub rep: RepArg,
    /// Defaults to the config's adaptation scope.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepOp {
    MetaTrain,
    Eval,
    Retention,
    Analyze,
}

impl SweepOp {
    fn name(self) -> &'static str {
        match self {
            SweepOp::MetaTrain => "meta-train",
            SweepOp::Eval => "eval",
            SweepOp::Retention => "retention",
            SweepOp::Analyze => "analyze",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Meta-train a representation; writes checkpoints and a loss log.
    MetaTrain {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Online trajectories over held-out problems with a tuned step size.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        rep: RepArgs,
        /// Pin the online step size instead of sweeping.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Run retention methods over online trajectories; writes a results table.
    Retention {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        rep: RepArgs,
        /// Run only this method: online, approx-iid, er-reservoir, or ewc.
        #[arg(long)]
        method: Option<String>,
    },
    /// Representation sparsity metrics and normalized activation dumps.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        rep: RepArgs,
        /// Activity cutoff; rectified units are active strictly above it.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Rows for the dumped matrices; defaults to a near-square layout.
        #[arg(long)]
        reshape_rows: Option<usize>,
        /// Cap on per-instance dumps; 0 dumps the whole corpus.
        #[arg(long, default_value_t = 0)]
        instances: usize,
    },
    /// Fan one operation across seeds with a worker pool, then merge.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        rep: RepArgs,
        #[arg(long, value_enum, default_value_t = SweepOp::MetaTrain)]
        op: SweepOp,
        /// Seeds to fan out, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Resolves the experiment config from `--config` or `--preset`.
pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    match (&common.config, &common.preset) {
        (Some(path), None) => Ok(ExperimentConfig::from_path(path)?),
        (None, Some(name)) => Ok(preset(name)?),
        (None, None) => Err(CliError::Usage(format!(
            "pass --config PATH or --preset NAME (presets: {})",
            PRESET_NAMES.join(", ")
        ))),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    }
}

/// Dataset root from the environment, if set.
pub fn env_data_root() -> Option<PathBuf> {
    std::env::var_os("OMLLAB_DATA").map(PathBuf::from)
}

fn copy_scope(mode: Option<ModeArg>, from_config: AdaptScope) -> AdaptScope {
    match mode {
        None => from_config,
        Some(ModeArg::Frozen) => AdaptScope::HeadOnly,
        Some(ModeArg::Standard) => AdaptScope::FullNetwork,
    }
}

fn scope_label(scope: AdaptScope) -> &'static str {
    match scope {
        AdaptScope::HeadOnly => "frozen",
        AdaptScope::FullNetwork => "standard",
    }
}

/// Loads or trains the trunk a subcommand operates on, returning the
/// parameters and a short label for file names and table rows.
fn representation_params(
    exp: &Experiment,
    eval_cfg: &EvalConfig,
    rep: RepArg,
    checkpoint: Option<&Path>,
    run_dir: &Path,
) -> Result<(ParameterSet, String), CliError> {
    match rep {
        RepArg::Checkpoint => {
            let path = match checkpoint {
                Some(p) => p.to_path_buf(),
                None => run_dir.join("checkpoint-final"),
            };
            let ckpt = load_checkpoint(&path)?;
            if *ckpt.params.spec() != exp.spec {
                return Err(CliError::Usage(format!(
                    "checkpoint at {} was built for {:?}, config implies {:?}",
                    path.display(),
                    ckpt.params.spec(),
                    exp.spec
                )));
            }
            Ok((ckpt.params, ckpt.source))
        }
        RepArg::Pretrain => {
            let outcome = pretrain_baseline(
                &exp.meta_source,
                &exp.spec,
                &exp.config.pretrain_candidates(),
                exp.config.pretrain.steps,
                exp.config.pretrain.lr,
                eval_cfg,
            )?;
            Ok((outcome.params, "pretrain".into()))
        }
        RepArg::Scratch => {
            let params = ParameterSet::build(exp.spec.clone(), eval_cfg.seed)?;
            Ok((params, "scratch".into()))
        }
    }
}

fn sorted_run_outputs(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| !n.starts_with("manifest-"))
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

/// Meta-trains under `<out>/<hash>-s<seed>` and returns the run
/// directory with the final parameters.
pub fn cmd_meta_train(
    config: &ExperimentConfig,
    seed: u64,
    out_root: &Path,
    data_root: Option<&Path>,
) -> Result<(PathBuf, ParameterSet), CliError> {
    let t0 = Instant::now();
    let exp = build_experiment(config.clone(), data_root)?;
    let dir = out_root.join(config.run_dir_name(seed));
    let mcfg = config.to_meta_config(seed);
    let outcome = meta_train(&mcfg, &exp.spec, &exp.meta_source, &dir)?;
    let mut manifest = RunManifest::new(config, seed, "meta-train");
    manifest.outputs = sorted_run_outputs(&dir);
    manifest.wall_ms = t0.elapsed().as_millis();
    manifest.write(&dir)?;
    Ok((dir, outcome.params))
}

/// Evaluates a representation over online trajectories, writing
/// `eval-<rep>-<mode>/{report.json, curves.csv}` under the run directory.
pub fn cmd_eval(
    config: &ExperimentConfig,
    seed: u64,
    out_root: &Path,
    data_root: Option<&Path>,
    rep: &RepArgs,
    lr: Option<f64>,
) -> Result<(PathBuf, EvalReport), CliError> {
    let t0 = Instant::now();
    let exp = build_experiment(config.clone(), data_root)?;
    let run_dir = out_root.join(config.run_dir_name(seed));
    let mut eval_cfg = config.to_eval_config(seed);
    eval_cfg.scope = copy_scope(rep.mode, eval_cfg.scope);
    eval_cfg.warm_pln = matches!(rep.rep, RepArg::Pretrain);
    let (params, label) =
        representation_params(&exp, &eval_cfg, rep.rep, rep.checkpoint.as_deref(), &run_dir)?;
    let (report, curves) = run_eval(&params, &label, &exp.eval_source, &eval_cfg, lr)?;
    let tag = format!("eval-{}-{}", label, scope_label(eval_cfg.scope));
    let dir = run_dir.join(&tag);
    write_eval_outputs(&dir, &report, &curves)?;
    let mut manifest = RunManifest::new(config, seed, &tag);
    manifest.outputs = vec![format!("{tag}/report.json"), format!("{tag}/curves.csv")];
    manifest.wall_ms = t0.elapsed().as_millis();
    manifest.write(&run_dir)?;
    Ok((dir, report))
}

fn method_matches(method: &RetentionMethod, name: &str) -> bool {
    matches!(
        (method, name),
        (RetentionMethod::Online, "online")
            | (RetentionMethod::ApproxIid, "approx-iid")
            | (RetentionMethod::ErReservoir { .. }, "er-reservoir")
            | (RetentionMethod::Ewc { .. }, "ewc")
    )
}

/// Runs the configured retention methods (optionally one, by name) and
/// writes `retention-<rep>-<mode>.csv` under the run directory.
pub fn cmd_retention(
    config: &ExperimentConfig,
    seed: u64,
    out_root: &Path,
    data_root: Option<&Path>,
    rep: &RepArgs,
    method: Option<&str>,
) -> Result<(PathBuf, Vec<RetentionRow>), CliError> {
    let t0 = Instant::now();
    let exp = build_experiment(config.clone(), data_root)?;
    let run_dir = out_root.join(config.run_dir_name(seed));
    let mut eval_cfg = config.to_eval_config(seed);
    eval_cfg.scope = copy_scope(rep.mode, eval_cfg.scope);
    eval_cfg.warm_pln = matches!(rep.rep, RepArg::Pretrain);
    let (params, label) =
        representation_params(&exp, &eval_cfg, rep.rep, rep.checkpoint.as_deref(), &run_dir)?;
    let methods: Vec<RetentionMethod> = match method {
        None => exp.config.retention.methods.clone(),
        Some(name) => {
            let picked: Vec<RetentionMethod> = exp
                .config
                .retention
                .methods
                .iter()
                .filter(|m| method_matches(m, name))
                .cloned()
                .collect();
            if picked.is_empty() {
                return Err(CliError::Usage(format!(
                    "unknown or unconfigured method `{}` (configured: {})",
                    name,
                    exp.config
                        .retention
                        .methods
                        .iter()
                        .map(|m| m.label())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            picked
        }
    };
    let mut rows = Vec::with_capacity(methods.len());
    for m in &methods {
        rows.push(run_retention(m, &params, &label, &exp.eval_source, &eval_cfg, &config.retention.seeds)?);
    }
    let csv_name = format!("retention-{}-{}.csv", label, scope_label(eval_cfg.scope));
    let csv_path = run_dir.join(&csv_name);
    if csv_path.exists() {
        std::fs::remove_file(&csv_path)
            .map_err(|e| DataError::Io { path: csv_path.display().to_string(), source: e })?;
    }
    append_retention_csv(&csv_path, &rows)?;
    let tag = format!("retention-{}-{}", label, scope_label(eval_cfg.scope));
    let mut manifest = RunManifest::new(config, seed, &tag);
    manifest.outputs = vec![csv_name];
    manifest.wall_ms = t0.elapsed().as_millis();
    manifest.write(&run_dir)?;
    Ok((csv_path, rows))
}

/// Inputs the analysis runs over: every training image of the held-out
/// classes for split problems, or the evaluation grids of one sampled
/// trajectory for regression problems.
pub fn analysis_corpus(exp: &Experiment, eval_cfg: &EvalConfig) -> Result<Tensor, CliError> {
    match &exp.eval_source {
        ProblemSource::Split { dataset, pool, .. } => {
            let rows: Vec<Vec<f64>> = pool
                .iter()
                .flat_map(|&c| dataset.class(c).train.iter().cloned())
                .collect();
            Ok(Tensor::from_rows(&rows).map_err(TrainError::from)?)
        }
        ProblemSource::Sine { .. } => {
            let mut rng = rngutil::stream(eval_cfg.seed, "analysis-corpus");
            let instance = exp
                .eval_source
                .sample_eval_instance(eval_cfg.k, eval_cfg.grid_points, &mut rng)
                .map_err(TrainError::from)?;
            let mut rows = Vec::new();
            for batch in &instance.block_evals {
                for i in 0..batch.inputs.rows() {
                    rows.push(batch.inputs.row(i).to_vec());
                }
            }
            Ok(Tensor::from_rows(&rows).map_err(TrainError::from)?)
        }
    }
}

/// Largest divisor of `d` not exceeding its square root, so dumps are
/// as close to square as the width allows.
pub fn near_square_rows(d: usize) -> usize {
    assert!(d >= 1);
    let mut best = 1;
    let mut r = 1;
    while r * r <= d {
        if d % r == 0 {
            best = r;
        }
        r += 1;
    }
    best
}

/// Computes sparsity metrics and activation dumps for a representation,
/// writing `analyze-<rep>/{sparsity.json, sparsity.csv, dumps/}`.
pub fn cmd_analyze(
    config: &ExperimentConfig,
    seed: u64,
    out_root: &Path,
    data_root: Option<&Path>,
    rep: &RepArgs,
    threshold: f64,
    reshape_rows: Option<usize>,
    instances: usize,
) -> Result<(PathBuf, SparsityReport), CliError> {
    let t0 = Instant::now();
    let exp = build_experiment(config.clone(), data_root)?;
    let run_dir = out_root.join(config.run_dir_name(seed));
    let mut eval_cfg = config.to_eval_config(seed);
    eval_cfg.warm_pln = matches!(rep.rep, RepArg::Pretrain);
    let (params, label) =
        representation_params(&exp, &eval_cfg, rep.rep, rep.checkpoint.as_deref(), &run_dir)?;
    let corpus = analysis_corpus(&exp, &eval_cfg)?;
    let report = sparsity_report(&params, &corpus, threshold).map_err(TrainError::from)?;

    let dir = run_dir.join(format!("analyze-{label}"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| DataError::Io { path: dir.display().to_string(), source: e })?;
    let json_path = dir.join("sparsity.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&json_path, text)
        .map_err(|e| DataError::Io { path: json_path.display().to_string(), source: e })?;
    let csv_path = dir.join("sparsity.csv");
    if csv_path.exists() {
        std::fs::remove_file(&csv_path)
            .map_err(|e| DataError::Io { path: csv_path.display().to_string(), source: e })?;
    }
    append_sparsity_csv(&csv_path, &label, &report)?;

    let dump_inputs = if instances == 0 || instances >= corpus.rows() {
        corpus.clone()
    } else {
        let rows: Vec<Vec<f64>> = (0..instances).map(|i| corpus.row(i).to_vec()).collect();
        Tensor::from_rows(&rows).map_err(TrainError::from)?
    };
    let rows = reshape_rows.unwrap_or_else(|| near_square_rows(report.d));
    dump_representation(&params, &dump_inputs, rows, &dir.join("dumps"))?;

    let tag = format!("analyze-{label}");
    let mut manifest = RunManifest::new(config, seed, &tag);
    manifest.outputs = vec![
        format!("{tag}/sparsity.json"),
        format!("{tag}/sparsity.csv"),
        format!("{tag}/dumps"),
    ];
    manifest.wall_ms = t0.elapsed().as_millis();
    manifest.write(&run_dir)?;
    Ok((dir, report))
}

/// One headline row a sweep collects per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub name: String,
    pub value: f64,
    pub dir: String,
}

fn run_op_for_seed(
    op: SweepOp,
    config: &ExperimentConfig,
    seed: u64,
    out_root: &Path,
    data_root: Option<&Path>,
    rep: &RepArgs,
) -> Result<Vec<SweepRow>, CliError> {
    let row = |name: String, value: f64, dir: &Path| SweepRow {
        seed,
        name,
        value,
        dir: dir.display().to_string(),
    };
    match op {
        SweepOp::MetaTrain => {
            let (dir, _) = cmd_meta_train(config, seed, out_root, data_root)?;
            let log = std::fs::read_to_string(dir.join("metatrain_log.csv"))
                .map_err(|e| DataError::Io { path: dir.display().to_string(), source: e })?;
            let last = log.lines().last().and_then(|l| l.split(',').nth(1)).and_then(|v| v.parse().ok());
            Ok(vec![row("meta_loss_final".into(), last.unwrap_or(f64::NAN), &dir)])
        }
        SweepOp::Eval => {
            let (dir, report) = cmd_eval(config, seed, out_root, data_root, rep, None)?;
            Ok(vec![row(format!("aggregate_{}", report.metric), report.aggregate, &dir)])
        }
        SweepOp::Retention => {
            let (path, rows) = cmd_retention(config, seed, out_root, data_root, rep, None)?;
            Ok(rows
                .iter()
                .map(|r| row(format!("{}_{}", r.method, r.metric), r.metric_mean, &path))
                .collect())
        }
        SweepOp::Analyze => {
            let (dir, report) = cmd_analyze(config, seed, out_root, data_root, rep, 0.0, None, 0)?;
            Ok(vec![
                row("instance_sparsity".into(), report.instance_sparsity, &dir),
                row("dead_fraction".into(), report.dead_fraction, &dir),
            ])
        }
    }
}

/// Fans `op` over `seeds` across `jobs` worker threads. Each seed writes
/// its own run directory; the merged summary lands in
/// `<out>/sweep-<op>-<hash8>/sweep.csv` with rows in seed order
/// regardless of worker scheduling.
pub fn cmd_sweep(
    op: SweepOp,
    config: &ExperimentConfig,
    seeds: &[u64],
    jobs: usize,
    out_root: &Path,
    data_root: Option<&Path>,
    rep: &RepArgs,
) -> Result<(PathBuf, Vec<SweepRow>), CliError> {
    if seeds.is_empty() {
        return Err(CliError::Usage("sweep needs at least one seed".into()));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let t0 = Instant::now();
    config.validate()?;
    let jobs = jobs.min(seeds.len());
    let mut results: Vec<Option<Result<Vec<SweepRow>, CliError>>> =
        (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        // Round-robin assignment: worker w owns seed indices w, w+jobs, ...
        let mut work: Vec<Vec<(usize, &mut Option<Result<Vec<SweepRow>, CliError>>)>> =
            (0..jobs).map(|_| Vec::new()).collect();
        for (i, slot) in results.iter_mut().enumerate() {
            work[i % jobs].push((i, slot));
        }
        for worker in work {
            scope.spawn(move || {
                for (i, slot) in worker {
                    *slot = Some(run_op_for_seed(op, config, seeds[i], out_root, data_root, rep));
                }
            });
        }
    });
    let mut rows = Vec::new();
    for slot in results {
        rows.extend(slot.expect("every seed ran")?);
    }
    let dir = out_root.join(format!("sweep-{}-{}", op.name(), &config.content_hash()[..8]));
    std::fs::create_dir_all(&dir)
        .map_err(|e| DataError::Io { path: dir.display().to_string(), source: e })?;
    let csv_path = dir.join("sweep.csv");
    let mut text = String::from("seed,name,value,dir\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{}\n", r.seed, r.name, r.value, r.dir));
    }
    std::fs::write(&csv_path, text)
        .map_err(|e| DataError::Io { path: csv_path.display().to_string(), source: e })?;
    let mut manifest = RunManifest::new(config, seeds[0], &format!("sweep-{}", op.name()));
    manifest.outputs = vec!["sweep.csv".into()];
    manifest.wall_ms = t0.elapsed().as_millis();
    manifest.write(&dir)?;
    Ok((csv_path, rows))
}

/// Executes a parsed command line. The binary maps the error to its
/// exit code; tests call this directly.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let data_root = env_data_root();
    let data_root = data_root.as_deref();
    match &cli.command {
        Command::MetaTrain { common } => {
            let config = resolve_config(common)?;
            let seed = common.seed.unwrap_or(config.seed);
            let (dir, _) = cmd_meta_train(&config, seed, &common.out, data_root)?;
            println!("meta-train: wrote {}", dir.display());
        }
        Command::Eval { common, rep, lr } => {
            let config = resolve_config(common)?;
            let seed = common.seed.unwrap_or(config.seed);
            let (dir, report) = cmd_eval(&config, seed, &common.out, data_root, rep, *lr)?;
            println!(
                "eval: {} = {:.6} at lr {} ({})",
                report.metric,
                report.aggregate,
                report.lr,
                dir.display()
            );
        }
        Command::Retention { common, rep, method } => {
            let config = resolve_config(common)?;
            let seed = common.seed.unwrap_or(config.seed);
            let (path, rows) =
                cmd_retention(&config, seed, &common.out, data_root, rep, method.as_deref())?;
            for r in &rows {
                println!(
                    "retention: {} on {} ({}): {} = {:.4} ± {:.4}",
                    r.method, r.representation, r.mode, r.metric, r.metric_mean, r.metric_std
                );
            }
            println!("retention: wrote {}", path.display());
        }
        Command::Analyze { common, rep, threshold, reshape_rows, instances } => {
            let config = resolve_config(common)?;
            let seed = common.seed.unwrap_or(config.seed);
            let (dir, report) = cmd_analyze(
                &config,
                seed,
                &common.out,
                data_root,
                rep,
                *threshold,
                *reshape_rows,
                *instances,
            )?;
            println!(
                "analyze: instance sparsity {:.4}, dead fraction {:.4} ({})",
                report.instance_sparsity,
                report.dead_fraction,
                dir.display()
            );
        }
        Command::Sweep { common, rep, op, seeds, jobs } => {
            let config = resolve_config(common)?;
            let (path, rows) = cmd_sweep(*op, &config, seeds, *jobs, &common.out, data_root, rep)?;
            println!("sweep: {} rows in {}", rows.len(), path.display());
        }
    }
    Ok(())
}

/// Binary entry point: parses, runs, prints the failure, returns the
/// exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

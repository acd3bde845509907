//! Declarative experiment configuration: a TOML schema covering the
//! problem source, network shape, meta-training, evaluation, baselines,
//! and retention methods, plus named presets, validation with field
//! paths, a stable content hash, and the run manifest every subcommand
//! writes next to its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::eval::{AdaptScope, EvalConfig, DEFAULT_LR_GRID};
use crate::metatrain::{MetaLossScope, MetaTrainConfig, Objective};
use crate::network::NetworkSpec;
use crate::optim::AdamConfig;
use crate::problems::{
    load_image_dataset, sine_input_dim, synthetic_class_dataset, ProblemSource,
};
use crate::retention::RetentionMethod;
use crate::rngutil;

/// Problem family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Sine,
    Split,
}

fn default_functions() -> usize {
    10
}
fn default_batch() -> usize {
    1
}
fn default_data() -> String {
    "synthetic".into()
}
fn default_classes() -> usize {
    40
}
fn default_dim() -> usize {
    32
}
fn default_resolution() -> u32 {
    28
}
fn default_meta_train_classes() -> usize {
    20
}
fn default_classes_per_problem() -> usize {
    5
}
fn default_images_per_class() -> usize {
    10
}
fn default_eval_classes() -> usize {
    20
}
fn default_eval_images() -> usize {
    15
}

/// Data source description. Regression fields are ignored by split
/// configs and vice versa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Regression tasks per trajectory (also fixes the input encoding).
    #[serde(default = "default_functions")]
    pub functions: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// `synthetic`, an absolute directory, or a subdirectory of the
    /// dataset root given by `OMLLAB_DATA`.
    #[serde(default = "default_data")]
    pub data: String,
    /// Synthetic dataset: number of classes generated.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Synthetic dataset: input dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Stream seed for the synthetic dataset. Kept apart from the run
    /// seed so every run sees the same benchmark.
    #[serde(default)]
    pub data_seed: u64,
    /// Image datasets: images are resized to this square resolution.
    #[serde(default = "default_resolution")]
    pub resolution: u32,
    /// Leading classes reserved for meta-training; the rest evaluate.
    #[serde(default = "default_meta_train_classes")]
    pub meta_train_classes: usize,
    #[serde(default = "default_classes_per_problem")]
    pub classes_per_problem: usize,
    #[serde(default = "default_images_per_class")]
    pub images_per_class: usize,
    /// Classes per evaluation trajectory (one block each).
    #[serde(default = "default_eval_classes")]
    pub eval_classes_per_problem: usize,
    #[serde(default = "default_eval_images")]
    pub eval_images_per_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub rln_depth: usize,
}

fn default_l() -> usize {
    1
}
fn default_m() -> usize {
    1
}
fn default_scope() -> MetaLossScope {
    MetaLossScope::TrainPlusTest
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub objective: Objective,
    /// Inner-loop step size.
    pub alpha: f64,
    /// Meta step size (Adam).
    pub beta: f64,
    /// Inner trajectory length in mini-batches.
    pub k: usize,
    /// Whole-batch inner steps for the `maml-rep` objective.
    #[serde(default = "default_l")]
    pub l: usize,
    /// Truncation window for the `oml-truncated` objective.
    #[serde(default = "default_m")]
    pub m: usize,
    pub meta_steps: usize,
    #[serde(default = "default_scope")]
    pub scope: MetaLossScope,
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_trajectories() -> usize {
    50
}
fn default_grid_points() -> usize {
    50
}
fn default_lr_grid() -> Vec<f64> {
    DEFAULT_LR_GRID.to_vec()
}
fn default_adapt_scope() -> AdaptScope {
    AdaptScope::HeadOnly
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Online steps per trajectory for regression sources; split
    /// sources derive the length from the class list. Defaults to the
    /// meta-training `k`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_lr_grid")]
    pub lr_grid: Vec<f64>,
    #[serde(default = "default_adapt_scope")]
    pub scope: AdaptScope,
}

fn default_pretrain_steps() -> usize {
    2000
}
fn default_pretrain_lr() -> f64 {
    0.01
}

/// IID pretraining baseline: full-network training on the meta-training
/// distribution followed by a validated trunk-depth choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default = "default_pretrain_steps")]
    pub steps: usize,
    #[serde(default = "default_pretrain_lr")]
    pub lr: f64,
    /// Candidate trunk depths searched on validation trajectories;
    /// defaults to the configured `rln_depth` alone.
    #[serde(default)]
    pub candidates: Vec<usize>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection { steps: default_pretrain_steps(), lr: default_pretrain_lr(), candidates: vec![] }
    }
}

fn default_methods() -> Vec<RetentionMethod> {
    vec![
        RetentionMethod::Online,
        RetentionMethod::ApproxIid,
        RetentionMethod::ErReservoir { capacity: 200, replay_batch: 8 },
        RetentionMethod::Ewc { lambda: 10.0 },
    ]
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionSection {
    #[serde(default = "default_methods")]
    pub methods: Vec<RetentionMethod>,
    /// Repetition seeds behind each reported mean ± std.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for RetentionSection {
    fn default() -> Self {
        RetentionSection { methods: default_methods(), seeds: default_seeds() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub meta: MetaConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub retention: RetentionSection,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: None,
            trajectories: default_trajectories(),
            grid_points: default_grid_points(),
            lr_grid: default_lr_grid(),
            scope: default_adapt_scope(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, message: String| Err(ConfigError::Invalid { field, message });
        let p = &self.problem;
        if p.batch_size == 0 {
            return bad("problem.batch_size", "must be at least 1".into());
        }
        match p.kind {
            ProblemKind::Sine => {
                if p.functions == 0 {
                    return bad("problem.functions", "need at least one function".into());
                }
            }
            ProblemKind::Split => {
                if p.classes_per_problem == 0 {
                    return bad("problem.classes_per_problem", "need at least one class".into());
                }
                if p.images_per_class == 0 || p.eval_images_per_class == 0 {
                    return bad("problem.images_per_class", "need at least one image".into());
                }
                if p.meta_train_classes < p.classes_per_problem {
                    return bad(
                        "problem.meta_train_classes",
                        format!(
                            "pool of {} cannot host problems of {} classes",
                            p.meta_train_classes, p.classes_per_problem
                        ),
                    );
                }
                if p.data == "synthetic" {
                    if p.dim == 0 {
                        return bad("problem.dim", "synthetic inputs need at least one dimension".into());
                    }
                    let eval_pool = p.classes.saturating_sub(p.meta_train_classes);
                    if eval_pool < p.eval_classes_per_problem {
                        return bad(
                            "problem.classes",
                            format!(
                                "{} classes leave an evaluation pool of {}, below eval_classes_per_problem = {}",
                                p.classes, eval_pool, p.eval_classes_per_problem
                            ),
                        );
                    }
                }
            }
        }
        if self.network.hidden.is_empty() {
            return bad("network.hidden", "need at least one hidden layer".into());
        }
        if self.network.rln_depth == 0 || self.network.rln_depth > self.network.hidden.len() {
            return bad(
                "network.rln_depth",
                format!("must lie in 1..={}", self.network.hidden.len()),
            );
        }
        if !(self.meta.alpha >= 0.0) {
            return bad("meta.alpha", "inner step size must be nonnegative".into());
        }
        if !(self.meta.beta > 0.0) {
            return bad("meta.beta", "meta step size must be positive".into());
        }
        if self.meta.k == 0 {
            return bad("meta.k", "inner trajectory needs at least one step".into());
        }
        if self.meta.l == 0 {
            return bad("meta.l", "whole-batch variant needs at least one step".into());
        }
        if self.meta.m == 0 {
            return bad("meta.m", "truncation window must be at least 1".into());
        }
        if self.meta.meta_steps == 0 {
            return bad("meta.meta_steps", "need at least one meta step".into());
        }
        if self.eval.trajectories == 0 {
            return bad("eval.trajectories", "need at least one trajectory".into());
        }
        if self.eval.grid_points == 0 {
            return bad("eval.grid_points", "need at least one grid point".into());
        }
        if self.eval.lr_grid.is_empty() {
            return bad("eval.lr_grid", "learning-rate grid is empty".into());
        }
        if self.pretrain.steps == 0 {
            return bad("pretrain.steps", "need at least one step".into());
        }
        if !(self.pretrain.lr > 0.0) {
            return bad("pretrain.lr", "step size must be positive".into());
        }
        for &c in &self.pretrain.candidates {
            if c == 0 || c > self.network.hidden.len() {
                return bad(
                    "pretrain.candidates",
                    format!("candidate depth {} outside 1..={}", c, self.network.hidden.len()),
                );
            }
        }
        if self.retention.methods.is_empty() {
            return bad("retention.methods", "need at least one method".into());
        }
        if self.retention.seeds.len() < 5 {
            return bad(
                "retention.seeds",
                format!("reported std needs at least 5 seeds, got {}", self.retention.seeds.len()),
            );
        }
        Ok(())
    }

    /// Hex SHA-256 of the normalized (re-serialized, defaults filled)
    /// config. Stable across formatting and comment differences.
    pub fn content_hash(&self) -> String {
        let normalized = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(normalized.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output directory name: first 8 hash characters plus the seed.
    pub fn run_dir_name(&self, seed: u64) -> String {
        format!("{}-s{}", &self.content_hash()[..8], seed)
    }

    pub fn to_meta_config(&self, seed: u64) -> MetaTrainConfig {
        MetaTrainConfig {
            objective: self.meta.objective,
            alpha: self.meta.alpha,
            beta: self.meta.beta,
            k: self.meta.k,
            l: self.meta.l,
            m: self.meta.m,
            meta_steps: self.meta.meta_steps,
            scope: self.meta.scope,
            adam: AdamConfig::default(),
            checkpoint_every: self.meta.checkpoint_every,
            seed,
        }
    }

    pub fn to_eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            k: self.eval.k.unwrap_or(self.meta.k),
            trajectories: self.eval.trajectories,
            grid_points: self.eval.grid_points,
            lr_grid: self.eval.lr_grid.clone(),
            scope: self.eval.scope,
            seed,
            warm_pln: false,
        }
    }

    /// Trunk depths the pretraining baseline searches.
    pub fn pretrain_candidates(&self) -> Vec<usize> {
        if self.pretrain.candidates.is_empty() {
            vec![self.network.rln_depth]
        } else {
            self.pretrain.candidates.clone()
        }
    }
}

/// A validated config instantiated against its data: network shape with
/// derived input/output dims, the meta-training source, and the
/// evaluation source (held-out classes for split problems).
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: NetworkSpec,
    pub meta_source: ProblemSource,
    pub eval_source: ProblemSource,
}

/// Builds the runtime experiment. `data_root` resolves relative dataset
/// names (the CLI passes `OMLLAB_DATA`); synthetic split datasets and
/// sine problems never touch the filesystem.
pub fn build_experiment(
    config: ExperimentConfig,
    data_root: Option<&Path>,
) -> Result<Experiment, ConfigError> {
    config.validate()?;
    let p = &config.problem;
    let (input_dim, output_dim, meta_source, eval_source) = match p.kind {
        ProblemKind::Sine => {
            let source = ProblemSource::Sine { n_functions: p.functions, batch_size: p.batch_size };
            (sine_input_dim(p.functions), 1, source.clone(), source)
        }
        ProblemKind::Split => {
            let dataset = if p.data == "synthetic" {
                let mut rng = rngutil::stream(p.data_seed, "dataset");
                synthetic_class_dataset(p.classes, p.dim, &mut rng)
            } else {
                let path = if Path::new(&p.data).is_absolute() {
                    PathBuf::from(&p.data)
                } else {
                    let root = data_root.ok_or(ConfigError::Invalid {
                        field: "problem.data",
                        message: format!(
                            "`{}` is relative and no dataset root is set (OMLLAB_DATA)",
                            p.data
                        ),
                    })?;
                    root.join(&p.data)
                };
                load_image_dataset(&path, p.resolution).map_err(|e| ConfigError::Invalid {
                    field: "problem.data",
                    message: e.to_string(),
                })?
            };
            let eval_pool_size = dataset.n_classes().saturating_sub(p.meta_train_classes);
            if eval_pool_size < p.eval_classes_per_problem {
                return Err(ConfigError::Invalid {
                    field: "problem.meta_train_classes",
                    message: format!(
                        "dataset holds {} classes; reserving {} leaves {}, below eval_classes_per_problem = {}",
                        dataset.n_classes(),
                        p.meta_train_classes,
                        eval_pool_size,
                        p.eval_classes_per_problem
                    ),
                });
            }
            let (meta_pool, eval_pool) =
                dataset.split_pools(p.meta_train_classes).map_err(|e| ConfigError::Invalid {
                    field: "problem.meta_train_classes",
                    message: e.to_string(),
                })?;
            let dim = dataset.dim();
            let n_classes = dataset.n_classes();
            let meta = ProblemSource::Split {
                dataset: dataset.clone(),
                pool: meta_pool,
                classes_per_problem: p.classes_per_problem,
                images_per_class: p.images_per_class,
                batch_size: p.batch_size,
            };
            let eval = ProblemSource::Split {
                dataset,
                pool: eval_pool,
                classes_per_problem: p.eval_classes_per_problem,
                images_per_class: p.eval_images_per_class,
                batch_size: p.batch_size,
            };
            (dim, n_classes, meta, eval)
        }
    };
    let spec = NetworkSpec {
        input_dim,
        hidden: config.network.hidden.clone(),
        output_dim,
        rln_depth: config.network.rln_depth,
    };
    spec.validate()?;
    Ok(Experiment { config, spec, meta_source, eval_source })
}

/// Full-scale regression preset mirroring the published sine setup:
/// meta step 1e-4 under Adam, inner step 3e-3, 400 single-sample inner
/// steps over 10 functions, nine layers of width 300 with a six-layer
/// trunk.
fn sine_paper() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig {
            kind: ProblemKind::Sine,
            functions: 10,
            batch_size: 1,
            ..ProblemConfig::split_defaults()
        },
        network: NetworkConfig { hidden: vec![300; 8], rln_depth: 6 },
        meta: MetaConfig {
            objective: Objective::Oml,
            alpha: 3e-3,
            beta: 1e-4,
            k: 400,
            l: 1,
            m: 1,
            meta_steps: 20000,
            scope: MetaLossScope::TrainPlusTest,
            checkpoint_every: 1000,
        },
        eval: EvalSection { k: Some(400), trajectories: 50, ..EvalSection::default() },
        pretrain: PretrainSection { steps: 20000, lr: 0.01, candidates: vec![2, 4, 6, 8] },
        retention: RetentionSection::default(),
        seed: 0,
    }
}

/// Desk-scale sine preset: five functions, width 64, three-layer trunk,
/// 50-step trajectories. Minutes on one core instead of GPU-days.
fn sine_desk() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig {
            kind: ProblemKind::Sine,
            functions: 5,
            batch_size: 5,
            ..ProblemConfig::split_defaults()
        },
        network: NetworkConfig { hidden: vec![64, 64, 64, 64], rln_depth: 3 },
        meta: MetaConfig {
            objective: Objective::Oml,
            alpha: 0.03,
            beta: 3e-3,
            k: 50,
            l: 1,
            m: 1,
            meta_steps: 22_000,
            scope: MetaLossScope::TrainPlusTest,
            checkpoint_every: 0,
        },
        eval: EvalSection { k: Some(50), trajectories: 10, ..EvalSection::default() },
        pretrain: PretrainSection { steps: 5000, lr: 0.03, candidates: vec![1, 2, 3] },
        retention: RetentionSection::default(),
        seed: 0,
    }
}

/// Desk-scale class-incremental preset on the synthetic dataset:
/// 40 classes, 20 held out for evaluation trajectories of 20 blocks,
/// one class per block.
fn split_desk() -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemConfig {
            kind: ProblemKind::Split,
            batch_size: 5,
            ..ProblemConfig::split_defaults()
        },
        network: NetworkConfig { hidden: vec![64, 64], rln_depth: 2 },
        meta: MetaConfig {
            objective: Objective::Oml,
            alpha: 0.03,
            beta: 1e-3,
            k: 10,
            l: 1,
            m: 1,
            meta_steps: 600,
            scope: MetaLossScope::TrainPlusTest,
            checkpoint_every: 0,
        },
        eval: EvalSection { k: Some(10), trajectories: 10, ..EvalSection::default() },
        pretrain: PretrainSection { steps: 2000, lr: 0.05, candidates: vec![1, 2] },
        retention: RetentionSection::default(),
        seed: 0,
    }
}

impl ProblemConfig {
    fn split_defaults() -> ProblemConfig {
        ProblemConfig {
            kind: ProblemKind::Split,
            functions: default_functions(),
            batch_size: default_batch(),
            data: default_data(),
            classes: default_classes(),
            dim: default_dim(),
            data_seed: 0,
            resolution: default_resolution(),
            meta_train_classes: default_meta_train_classes(),
            classes_per_problem: default_classes_per_problem(),
            images_per_class: default_images_per_class(),
            eval_classes_per_problem: default_eval_classes(),
            eval_images_per_class: default_eval_images(),
        }
    }
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = match name {
        "sine-paper" => sine_paper(),
        "sine-desk" => sine_desk(),
        "split-desk" => split_desk(),
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    debug_assert!(cfg.validate().is_ok(), "presets must validate");
    Ok(cfg)
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 3] = ["sine-paper", "sine-desk", "split-desk"];

/// Provenance record written next to every subcommand's outputs. The
/// resolved config is embedded so a manifest alone pins the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Artifact-format version; bump on any on-disk layout change.
    pub artifact_version: String,
    pub seed: u64,
    pub subcommand: String,
    pub outputs: Vec<String>,
    /// Wall-clock duration. The only field allowed to differ between
    /// reruns of the same (config, seed).
    pub wall_ms: u128,
    pub config: ExperimentConfig,
}

/// Current artifact-format version.
pub const ARTIFACT_VERSION: &str = concat!("omllab-", env!("CARGO_PKG_VERSION"), "-r1");

impl RunManifest {
    pub fn new(config: &ExperimentConfig, seed: u64, subcommand: &str) -> RunManifest {
        RunManifest {
            config_hash: config.content_hash(),
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed,
            subcommand: subcommand.to_string(),
            outputs: Vec::new(),
            wall_ms: 0,
            config: config.clone(),
        }
    }

    /// Writes `manifest-<subcommand>.json` so subcommands sharing one
    /// run directory keep disjoint manifests.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(format!("manifest-{}.json", self.subcommand));
        let io = |e: std::io::Error| ConfigError::Io { path: path.display().to_string(), source: e };
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(io)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_build() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let exp = build_experiment(cfg, None).unwrap();
            exp.spec.validate().unwrap();
        }
        assert!(matches!(preset("sine-mega"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn paper_scale_preset_carries_the_published_numbers() {
        let cfg = preset("sine-paper").unwrap();
        assert_eq!(cfg.meta.beta, 1e-4);
        assert_eq!(cfg.meta.alpha, 3e-3);
        assert_eq!(cfg.meta.k, 400);
        assert_eq!(cfg.problem.functions, 10);
        assert_eq!(cfg.network.hidden, vec![300; 8]);
        assert_eq!(cfg.network.rln_depth, 6);
        let exp = build_experiment(cfg, None).unwrap();
        assert_eq!(exp.spec.input_dim, 11);
        assert_eq!(exp.spec.output_dim, 1);
    }

    #[test]
    fn toml_round_trip_preserves_config_and_hash() {
        let cfg = preset("split-desk").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let cfg = preset("sine-desk").unwrap();
        let mut spaced = toml::to_string(&cfg).unwrap();
        spaced.push_str("\n# trailing comment\n");
        let reparsed = ExperimentConfig::from_toml_str(&spaced).unwrap();
        assert_eq!(reparsed.content_hash(), cfg.content_hash());

        let mut changed = cfg.clone();
        changed.meta.alpha = 0.004;
        assert_ne!(changed.content_hash(), cfg.content_hash());
        assert_ne!(cfg.run_dir_name(3), cfg.run_dir_name(4));
        assert!(cfg.run_dir_name(3).ends_with("-s3"));
    }

    #[test]
    fn terse_toml_fills_defaults() {
        let text = r#"
            seed = 9

            [problem]
            kind = "sine"
            functions = 5

            [network]
            hidden = [32, 32]
            rln_depth = 1

            [meta]
            objective = "maml-rep"
            alpha = 0.01
            beta = 0.001
            k = 20
            l = 3
            meta_steps = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.meta.l, 3);
        assert_eq!(cfg.meta.m, 1);
        assert_eq!(cfg.meta.scope, MetaLossScope::TrainPlusTest);
        assert_eq!(cfg.eval.trajectories, 50);
        assert_eq!(cfg.eval.lr_grid, DEFAULT_LR_GRID.to_vec());
        assert_eq!(cfg.retention.seeds, vec![0, 1, 2, 3, 4]);
        let eval_cfg = cfg.to_eval_config(9);
        assert_eq!(eval_cfg.k, 20, "eval k defaults to the meta k");
        assert_eq!(cfg.pretrain_candidates(), vec![1]);
    }

    #[test]
    fn retention_methods_parse_from_tagged_tables() {
        let text = r#"
            [problem]
            kind = "split"

            [network]
            hidden = [16]
            rln_depth = 1

            [meta]
            objective = "oml"
            alpha = 0.03
            beta = 0.001
            k = 4
            meta_steps = 5

            [[retention.methods]]
            name = "er-reservoir"
            capacity = 50
            replay_batch = 4

            [[retention.methods]]
            name = "ewc"
            lambda = 2.5

            [[retention.methods]]
            name = "online"
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(
            cfg.retention.methods,
            vec![
                RetentionMethod::ErReservoir { capacity: 50, replay_batch: 4 },
                RetentionMethod::Ewc { lambda: 2.5 },
                RetentionMethod::Online,
            ]
        );
    }

    #[test]
    fn invalid_fields_are_named() {
        let base = preset("sine-desk").unwrap();

        let mut cfg = base.clone();
        cfg.meta.alpha = -0.1;
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "meta.alpha", .. }), "{err}");

        let mut cfg = base.clone();
        cfg.network.rln_depth = 9;
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "network.rln_depth", .. }));

        let mut cfg = base.clone();
        cfg.retention.seeds = vec![0, 1];
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "retention.seeds", .. }));

        let mut cfg = base.clone();
        cfg.eval.lr_grid.clear();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "eval.lr_grid", .. }));

        let mut cfg = base;
        cfg.pretrain.candidates = vec![7];
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "pretrain.candidates", .. }));
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let text = r#"
            [problem]
            kind = "sine"
            functions = 5
            wibbles = 3

            [network]
            hidden = [16]
            rln_depth = 1

            [meta]
            objective = "oml"
            alpha = 0.01
            beta = 0.001
            k = 5
            meta_steps = 5
        "#;
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        assert!(err.to_string().contains("wibbles"));
    }

    #[test]
    fn split_pool_exhaustion_is_rejected() {
        let mut cfg = preset("split-desk").unwrap();
        cfg.problem.classes = 30; // eval pool of 10 < 20 per trajectory
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "problem.classes", .. }));
    }

    #[test]
    fn split_experiment_separates_meta_and_eval_pools() {
        let exp = build_experiment(preset("split-desk").unwrap(), None).unwrap();
        let (ProblemSource::Split { pool: meta_pool, .. }, ProblemSource::Split { pool: eval_pool, .. }) =
            (&exp.meta_source, &exp.eval_source)
        else {
            panic!("split preset must build split sources");
        };
        assert_eq!(meta_pool.len(), 20);
        assert_eq!(eval_pool.len(), 20);
        assert!(meta_pool.iter().all(|c| !eval_pool.contains(c)));
        assert_eq!(exp.spec.input_dim, 32);
        assert_eq!(exp.spec.output_dim, 40);
    }

    #[test]
    fn relative_image_dataset_requires_a_root() {
        let mut cfg = preset("split-desk").unwrap();
        cfg.problem.data = "glyphs".into();
        let err = build_experiment(cfg, None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "problem.data", .. }));
    }

    #[test]
    fn manifest_embeds_resolved_config_and_hash() {
        let cfg = preset("sine-paper").unwrap();
        let mut manifest = RunManifest::new(&cfg, 5, "meta-train");
        manifest.outputs.push("checkpoint-final".into());
        let dir = tempfile::tempdir().unwrap();
        let path = manifest.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config_hash, cfg.content_hash());
        assert_eq!(back.config.meta.beta, 1e-4);
        assert_eq!(back.config.meta.alpha, 3e-3);
        assert_eq!(back.config.meta.k, 400);
        assert_eq!(back.seed, 5);
        assert_eq!(back.artifact_version, ARTIFACT_VERSION);
        assert_eq!(back.outputs, vec!["checkpoint-final".to_string()]);
    }
}

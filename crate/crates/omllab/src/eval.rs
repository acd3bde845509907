//! Meta-testing: freeze the trunk, learn the head fully online on one
//! correlated trajectory, and measure per-block error and forgetting.
//!
//! Everything here is plain first-order SGD on a fresh graph per step;
//! no meta-gradients are involved. All entry points are pure functions
//! of (parameters, data, seed), so runs can be fanned out across
//! workers and reduced without coordination.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, EvalError, TrainError};
use crate::graph::Graph;
use crate::metatrain::{batch_loss, flat_meta_gradient};
use crate::network::{predict, NetworkSpec, ParameterSet};
use crate::optim::sgd_step;
use crate::problems::{Batch, EvalInstance, ProblemSource, Target, Trajectory};
use crate::rngutil;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// Learning-rate grid swept at meta-test time, largest first as listed.
pub const DEFAULT_LR_GRID: [f64; 10] =
    [0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 3e-4, 1e-4, 3e-5, 1e-5];

/// Validation trajectories used to pick the learning rate; disjoint from
/// the reporting trajectories by stream name.
pub const VALIDATION_TRAJECTORIES: usize = 5;

/// Which parameters the online learner may touch. The trunk stays
/// bitwise frozen under `HeadOnly`; `FullNetwork` is the "standard"
/// mode where online SGD updates everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptScope {
    HeadOnly,
    FullNetwork,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Online trajectory length in mini-batches (regression sources; a
    /// split source's length is shaped by its class list instead).
    pub k: usize,
    /// Reporting trajectories averaged into the final numbers.
    pub trajectories: usize,
    /// Evaluation grid size per regression block.
    pub grid_points: usize,
    pub lr_grid: Vec<f64>,
    pub scope: AdaptScope,
    pub seed: u64,
    /// Keep the adaptable layers' trained values at the start of each
    /// trajectory instead of re-randomizing them. Meta-learned heads are
    /// always re-randomized; the pretrained baseline fine-tunes its upper
    /// stack from where i.i.d. training left it.
    pub warm_pln: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 400,
            trajectories: 50,
            grid_points: 50,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            scope: AdaptScope::HeadOnly,
            seed: 0,
            warm_pln: false,
        }
    }
}

/// Final parameters plus the pre-update loss observed at every step.
#[derive(Clone, Debug)]
pub struct OnlineOutcome {
    pub params: ParameterSet,
    pub step_losses: Vec<f64>,
    pub step_blocks: Vec<usize>,
}

/// One numeric SGD step: builds a fresh graph, evaluates `build_loss`,
/// backprops to the parameters selected by `scope`, and applies the
/// update. Returns the stepped parameters and the pre-update loss.
pub(crate) fn numeric_sgd_step(
    current: &ParameterSet,
    build_loss: impl FnOnce(&crate::network::MountedNetwork) -> Result<crate::graph::Value, crate::error::GraphError>,
    lr: f64,
    scope: AdaptScope,
    step: usize,
) -> Result<(ParameterSet, f64), EvalError> {
    let g = Graph::new();
    let net = current.mount(&g, scope == AdaptScope::FullNetwork, true);
    let loss = build_loss(&net).map_err(|e| match e {
        crate::error::GraphError::NonFinite { .. } => TrainError::NumericAtStep { step },
        other => TrainError::Graph(other),
    })?;
    let loss_value = loss.item();
    let leaves = match scope {
        AdaptScope::HeadOnly => net.pln_params(),
        AdaptScope::FullNetwork => net.params(),
    };
    let grad = flat_meta_gradient(&loss, &net.params(), &leaves, step)?;
    let mut flat = current.flat();
    sgd_step(&mut flat, &grad, lr);
    let next = ParameterSet::from_flat(current.spec().clone(), &flat)
        .map_err(|_| TrainError::NumericAtStep { step })?;
    Ok((next, loss_value))
}

/// Single-pass online SGD over the trajectory in order, one step per
/// mini-batch, nothing revisited. The starting parameters carry both the
/// frozen trunk and the head initialization.
pub fn online_train(
    start: &ParameterSet,
    trajectory: &Trajectory,
    lr: f64,
    scope: AdaptScope,
) -> Result<OnlineOutcome, EvalError> {
    assert!(!trajectory.is_empty(), "online training needs a nonempty trajectory");
    let mut current = start.clone();
    let mut step_losses = Vec::with_capacity(trajectory.len());
    let mut step_blocks = Vec::with_capacity(trajectory.len());
    for (step, batch) in trajectory.batches.iter().enumerate() {
        let (next, loss) = numeric_sgd_step(&current, |net| batch_loss(net, batch), lr, scope, step)?;
        if !loss.is_finite() {
            return Err(TrainError::NumericAtStep { step }.into());
        }
        current = next;
        step_losses.push(loss);
        step_blocks.push(batch.block);
    }
    Ok(OnlineOutcome { params: current, step_losses, step_blocks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Mse,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Maps the metric onto a minimization scale so sweeps can compare
    /// uniformly (accuracy becomes error rate).
    pub fn loss_like(self, value: f64) -> f64 {
        match self {
            MetricKind::Mse => value,
            MetricKind::Accuracy => 1.0 - value,
        }
    }
}

/// Mean squared target of a batch — the error of the zero predictor,
/// used to put blocks with different target scales on a common footing.
/// Label targets have no magnitude, so they normalize by 1.
fn mean_square_target(batch: &Batch) -> f64 {
    match &batch.targets {
        Target::Values(t) => {
            let n = t.data().len().max(1) as f64;
            t.data().iter().map(|v| v * v).sum::<f64>() / n
        }
        Target::Labels(_) => 1.0,
    }
}

/// Mean squared error (regression) or top-1 accuracy (classification)
/// over the union of the given evaluation batches.
pub fn evaluate(params: &ParameterSet, sets: &[Batch]) -> Result<(f64, MetricKind), EvalError> {
    let total: usize = sets.iter().map(|b| b.targets.len()).sum();
    if total == 0 {
        return Err(EvalError::EmptyEvalSet);
    }
    let mut sq_sum = 0.0;
    let mut sq_count = 0usize;
    let mut hits = 0usize;
    let mut label_count = 0usize;
    let mut kind = MetricKind::Mse;
    for batch in sets {
        if batch.targets.is_empty() {
            continue;
        }
        let preds = predict(params, &batch.inputs)?;
        match &batch.targets {
            Target::Values(t) => {
                kind = MetricKind::Mse;
                for (p, y) in preds.data().iter().zip(t.data()) {
                    sq_sum += (p - y) * (p - y);
                }
                sq_count += t.numel();
            }
            Target::Labels(labels) => {
                kind = MetricKind::Accuracy;
                for (i, &label) in labels.iter().enumerate() {
                    let row = preds.row(i);
                    let argmax = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                        .map(|(j, _)| j)
                        .expect("nonzero output width");
                    if argmax == label {
                        hits += 1;
                    }
                }
                label_count += labels.len();
            }
        }
    }
    Ok(match kind {
        MetricKind::Mse => (sq_sum / sq_count as f64, kind),
        MetricKind::Accuracy => (hits as f64 / label_count as f64, kind),
    })
}

/// Runs one candidate on every prepared (start, instance) pair and
/// averages the post-training loss-like metric. `None` marks divergence.
fn candidate_score(
    pairs: &[(ParameterSet, EvalInstance)],
    lr: f64,
    scope: AdaptScope,
) -> Option<f64> {
    let mut sum = 0.0;
    for (start, instance) in pairs {
        let trained = online_train(start, &instance.trajectory, lr, scope).ok()?;
        let (value, kind) = evaluate(&trained.params, &instance.block_evals).ok()?;
        if !value.is_finite() {
            return None;
        }
        sum += kind.loss_like(value);
    }
    Some(sum / pairs.len() as f64)
}

/// Grid search over prepared validation pairs. Every learning rate sees
/// the same trajectories and head draws, so scores differ only through
/// the rate itself. Returns (best lr, its mean loss-like score); ties
/// resolve to the smaller rate.
pub(crate) fn sweep_over(
    pairs: &[(ParameterSet, EvalInstance)],
    grid: &[f64],
    scope: AdaptScope,
) -> Result<(f64, f64), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut ordered: Vec<f64> = grid.to_vec();
    ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite learning rates"));
    let mut best: Option<(f64, f64)> = None;
    for &lr in &ordered {
        let Some(score) = candidate_score(pairs, lr, scope) else { continue };
        match best {
            Some((_, s)) if score >= s => {}
            _ => best = Some((lr, score)),
        }
    }
    best.ok_or(EvalError::SweepAllDiverged)
}

fn validation_pairs(
    start: &ParameterSet,
    source: &ProblemSource,
    cfg: &EvalConfig,
    stream: &str,
) -> Result<Vec<(ParameterSet, EvalInstance)>, DataError> {
    let head_stream = format!("{stream}-head");
    (0..VALIDATION_TRAJECTORIES)
        .map(|i| {
            let mut rng = rngutil::stream_indexed(cfg.seed, stream, i as u64);
            let instance = source.sample_eval_instance(cfg.k, cfg.grid_points, &mut rng)?;
            let mut head_rng = rngutil::stream_indexed(cfg.seed, &head_stream, i as u64);
            let params =
                if cfg.warm_pln { start.clone() } else { start.with_fresh_pln(&mut head_rng) };
            Ok((params, instance))
        })
        .collect()
}

/// Learning-rate selection on validation trajectories, returning the
/// winning rate and its mean validation score.
pub fn lr_sweep_scored(
    start: &ParameterSet,
    source: &ProblemSource,
    cfg: &EvalConfig,
) -> Result<(f64, f64), EvalError> {
    let pairs = validation_pairs(start, source, cfg, "eval-validation").map_err(TrainError::from)?;
    sweep_over(&pairs, &cfg.lr_grid, cfg.scope)
}

pub fn lr_sweep(
    start: &ParameterSet,
    source: &ProblemSource,
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    lr_sweep_scored(start, source, cfg).map(|(lr, _)| lr)
}

/// Aggregated meta-test result. `per_block` holds the final metric of
/// each block after the whole pass, averaged over trajectories;
/// `mean_step_loss` is the online loss curve averaged the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub metric: String,
    pub lr: f64,
    pub seed: u64,
    pub trajectories: usize,
    pub blocks: usize,
    /// Heads are re-drawn at random per trajectory; recorded so the
    /// alternative (reusing a trained head) stays distinguishable.
    pub fresh_head: bool,
    pub scope: AdaptScope,
    pub per_block: Vec<f64>,
    /// Per-block error pooled over trajectories and divided by the pooled
    /// mean squared target of the same evaluation sets, so blocks with
    /// large target amplitudes compare on the same scale (1.0 matches the
    /// zero predictor). Classification entries are pooled unnormalized.
    pub per_block_relative: Vec<f64>,
    pub aggregate: f64,
    pub mean_step_loss: Vec<f64>,
}

/// One point of a learning curve: online loss at `step` of `trajectory`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub trajectory: usize,
    pub step: usize,
    pub block: usize,
    pub value: f64,
}

/// Full meta-test: sweep the learning rate on validation trajectories
/// (unless `lr` pins one), then train and score `cfg.trajectories`
/// fresh reporting trajectories with per-trajectory random heads.
pub fn run_eval(
    start: &ParameterSet,
    checkpoint_id: &str,
    source: &ProblemSource,
    cfg: &EvalConfig,
    lr: Option<f64>,
) -> Result<(EvalReport, Vec<CurveRow>), EvalError> {
    assert!(cfg.trajectories >= 1);
    let lr = match lr {
        Some(fixed) => fixed,
        None => lr_sweep(start, source, cfg)?,
    };
    let mut per_block: Vec<f64> = Vec::new();
    let mut block_msq: Vec<f64> = Vec::new();
    let mut aggregate = 0.0;
    let mut mean_step_loss: Vec<f64> = Vec::new();
    let mut curves = Vec::new();
    let mut kind = MetricKind::Mse;
    for t in 0..cfg.trajectories {
        let mut rng = rngutil::stream_indexed(cfg.seed, "eval-report", t as u64);
        let instance = source
            .sample_eval_instance(cfg.k, cfg.grid_points, &mut rng)
            .map_err(TrainError::from)?;
        let mut head_rng = rngutil::stream_indexed(cfg.seed, "eval-report-head", t as u64);
        let candidate =
            if cfg.warm_pln { start.clone() } else { start.with_fresh_pln(&mut head_rng) };
        let trained = online_train(&candidate, &instance.trajectory, lr, cfg.scope)?;

        if per_block.is_empty() {
            per_block = vec![0.0; instance.block_evals.len()];
            block_msq = vec![0.0; instance.block_evals.len()];
            mean_step_loss = vec![0.0; trained.step_losses.len()];
        }
        assert_eq!(per_block.len(), instance.block_evals.len(), "block count varies");
        for (b, eval_set) in instance.block_evals.iter().enumerate() {
            let (value, k) = evaluate(&trained.params, std::slice::from_ref(eval_set))?;
            per_block[b] += value;
            block_msq[b] += mean_square_target(eval_set);
            kind = k;
        }
        let (agg, _) = evaluate(&trained.params, &instance.block_evals)?;
        aggregate += agg;
        for (step, (&loss, &block)) in
            trained.step_losses.iter().zip(&trained.step_blocks).enumerate()
        {
            mean_step_loss[step] += loss;
            curves.push(CurveRow { trajectory: t, step, block, value: loss });
        }
    }
    let n = cfg.trajectories as f64;
    let per_block_relative: Vec<f64> =
        per_block.iter().zip(&block_msq).map(|(&e, &m)| e / m).collect();
    for v in per_block.iter_mut().chain(mean_step_loss.iter_mut()) {
        *v /= n;
    }
    let blocks = per_block.len();
    Ok((
        EvalReport {
            checkpoint: checkpoint_id.to_string(),
            metric: kind.name().to_string(),
            lr,
            seed: cfg.seed,
            trajectories: cfg.trajectories,
            blocks,
            fresh_head: !cfg.warm_pln,
            scope: cfg.scope,
            per_block,
            per_block_relative,
            aggregate: aggregate / n,
            mean_step_loss,
        },
        curves,
    ))
}

/// Persists a report as JSON next to its learning curves as CSV.
pub fn write_eval_outputs(
    dir: &Path,
    report: &EvalReport,
    curves: &[CurveRow],
) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io { path: dir.display().to_string(), source: e };
    std::fs::create_dir_all(dir).map_err(io)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json).map_err(io)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("curves.csv")).map_err(io)?);
    writeln!(f, "trajectory,step,block,value").map_err(io)?;
    for row in curves {
        writeln!(f, "{},{},{},{}", row.trajectory, row.step, row.block, row.value).map_err(io)?;
    }
    Ok(())
}

/// I.i.d.-pretrained trunk: the baseline representation learned by
/// ordinary SGD on the meta-train distribution, with the trunk/head
/// boundary picked by validation search.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub params: ParameterSet,
    pub rln_depth: usize,
    pub step_losses: Vec<f64>,
    pub val_lr: f64,
    pub val_metric: f64,
}

/// Trains the full network i.i.d. for `steps` mini-batches, then tries
/// each candidate trunk depth on validation trajectories (each with its
/// own learning-rate sweep) and freezes the best-scoring split.
pub fn pretrain_baseline(
    source: &ProblemSource,
    spec: &NetworkSpec,
    candidates: &[usize],
    steps: usize,
    lr: f64,
    cfg: &EvalConfig,
) -> Result<PretrainOutcome, EvalError> {
    assert!(!candidates.is_empty(), "need at least one candidate trunk depth");
    assert!(steps >= 1);
    let mut current = ParameterSet::build(spec.clone(), cfg.seed).map_err(|e| {
        TrainError::Graph(crate::error::GraphError::ShapeMismatch {
            op: "pretrain",
            detail: e.to_string(),
        })
    })?;
    let mut rng = rngutil::stream(cfg.seed, "pretrain");
    let set = source.pretrain_set(&mut rng);
    let mut step_losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = source.sample_pretrain_batch(&set, source.batch_size(), &mut rng);
        let (next, loss) = numeric_sgd_step(
            &current,
            |net| batch_loss(net, &batch),
            lr,
            AdaptScope::FullNetwork,
            step,
        )?;
        current = next;
        step_losses.push(loss);
    }

    let mut best: Option<(usize, f64, f64)> = None;
    for &depth in candidates {
        let candidate = current.with_rln_depth(depth).map_err(|e| {
            TrainError::Graph(crate::error::GraphError::ShapeMismatch {
                op: "pretrain-split",
                detail: e.to_string(),
            })
        })?;
        let pairs =
            validation_pairs(&candidate, source, cfg, "pretrain-val").map_err(TrainError::from)?;
        let Ok((val_lr, score)) = sweep_over(&pairs, &cfg.lr_grid, cfg.scope) else { continue };
        match best {
            Some((_, _, s)) if score >= s => {}
            _ => best = Some((depth, val_lr, score)),
        }
    }
    let (rln_depth, val_lr, val_metric) = best.ok_or(EvalError::SweepAllDiverged)?;
    let params = current.with_rln_depth(rln_depth).expect("validated above");
    Ok(PretrainOutcome { params, rln_depth, step_losses, val_lr, val_metric })
}

pub(crate) fn trajectory_rows(trajectory: &Trajectory) -> (Vec<Vec<f64>>, Vec<RowTarget>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for batch in &trajectory.batches {
        for i in 0..batch.targets.len() {
            inputs.push(batch.inputs.row(i).to_vec());
            targets.push(match &batch.targets {
                Target::Values(t) => RowTarget::Value(t.row(i).to_vec()),
                Target::Labels(l) => RowTarget::Label(l[i]),
            });
        }
    }
    (inputs, targets)
}

/// One sample's target, detached from any batch so buffers and
/// shuffles can move samples around individually.
#[derive(Clone, Debug)]
pub enum RowTarget {
    Value(Vec<f64>),
    Label(usize),
}

pub(crate) fn rows_to_batch(inputs: &[Vec<f64>], targets: &[RowTarget]) -> Batch {
    let t = match &targets[0] {
        RowTarget::Value(_) => {
            let rows: Vec<Vec<f64>> = targets
                .iter()
                .map(|t| match t {
                    RowTarget::Value(v) => v.clone(),
                    RowTarget::Label(_) => unreachable!("mixed target kinds"),
                })
                .collect();
            Target::Values(crate::tensor::Tensor::from_rows(&rows).expect("finite targets"))
        }
        RowTarget::Label(_) => Target::Labels(
            targets
                .iter()
                .map(|t| match t {
                    RowTarget::Label(l) => *l,
                    RowTarget::Value(_) => unreachable!("mixed target kinds"),
                })
                .collect(),
        ),
    };
    Batch { inputs: crate::tensor::Tensor::from_rows(inputs).expect("finite inputs"), targets: t, block: 0 }
}

/// Shuffled-order control: the same samples as the online pass, but
/// visited i.i.d. for `epochs` passes (reshuffled each epoch). Separates
/// representation quality from robustness to the correlated order.
pub fn iid_sanity_train(
    start: &ParameterSet,
    trajectory: &Trajectory,
    epochs: usize,
    lr: f64,
    scope: AdaptScope,
    rng: &mut ChaCha8Rng,
) -> Result<OnlineOutcome, EvalError> {
    assert!(!trajectory.is_empty(), "need a nonempty trajectory");
    let (inputs, targets) = trajectory_rows(trajectory);
    let batch_size = trajectory.batches[0].targets.len().max(1);
    let mut current = start.clone();
    let mut step_losses = Vec::new();
    let mut step = 0usize;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch_inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let batch_targets: Vec<RowTarget> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let batch = rows_to_batch(&batch_inputs, &batch_targets);
            let (next, loss) =
                numeric_sgd_step(&current, |net| batch_loss(net, &batch), lr, scope, step)?;
            current = next;
            step_losses.push(loss);
            step += 1;
        }
    }
    let step_blocks = vec![0; step_losses.len()];
    Ok(OnlineOutcome { params: current, step_losses, step_blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn sine_source() -> ProblemSource {
        ProblemSource::Sine { n_functions: 3, batch_size: 2 }
    }

    fn desk_cfg() -> EvalConfig {
        EvalConfig {
            k: 6,
            trajectories: 3,
            grid_points: 10,
            lr_grid: vec![0.01, 0.003],
            scope: AdaptScope::HeadOnly,
            seed: 41,
            warm_pln: false,
        }
    }

    fn spec() -> NetworkSpec {
        NetworkSpec { input_dim: 4, hidden: vec![8, 8], output_dim: 1, rln_depth: 2 }
    }

    #[test]
    fn zero_lr_keeps_parameters_and_reports_frozen_losses() {
        let params = ParameterSet::build(spec(), 3).unwrap();
        let mut rng = rngutil::stream(3, "t");
        let instance = sine_source().sample_eval_instance(6, 10, &mut rng).unwrap();
        let out = online_train(&params, &instance.trajectory, 0.0, AdaptScope::HeadOnly).unwrap();
        assert_eq!(out.params.flat(), params.flat());
        for (batch, &observed) in instance.trajectory.batches.iter().zip(&out.step_losses) {
            let g = Graph::new();
            let net = params.mount(&g, false, false);
            let frozen = batch_loss(&net, batch).unwrap().item();
            assert_eq!(frozen, observed);
        }
    }

    #[test]
    fn head_only_training_leaves_the_trunk_bitwise_intact() {
        let params = ParameterSet::build(spec(), 5).unwrap();
        let mut rng = rngutil::stream(5, "t");
        let instance = sine_source().sample_eval_instance(3, 10, &mut rng).unwrap();
        let single = Trajectory { batches: instance.trajectory.batches[..1].to_vec() };
        let out = online_train(&params, &single, 0.05, AdaptScope::HeadOnly).unwrap();
        assert_eq!(out.step_losses.len(), 1);
        let trunk_before: Vec<f64> =
            params.rln_layers().iter().flat_map(|l| l.weight.data().to_vec()).collect();
        let trunk_after: Vec<f64> =
            out.params.rln_layers().iter().flat_map(|l| l.weight.data().to_vec()).collect();
        assert_eq!(trunk_before, trunk_after);
        assert_ne!(out.params.flat(), params.flat());
    }

    #[test]
    fn full_network_scope_moves_the_trunk() {
        let params = ParameterSet::build(spec(), 5).unwrap();
        let mut rng = rngutil::stream(5, "t");
        let instance = sine_source().sample_eval_instance(3, 10, &mut rng).unwrap();
        let single = Trajectory { batches: instance.trajectory.batches[..1].to_vec() };
        let out = online_train(&params, &single, 0.05, AdaptScope::FullNetwork).unwrap();
        let trunk_before: Vec<f64> =
            params.rln_layers().iter().flat_map(|l| l.weight.data().to_vec()).collect();
        let trunk_after: Vec<f64> =
            out.params.rln_layers().iter().flat_map(|l| l.weight.data().to_vec()).collect();
        assert_ne!(trunk_before, trunk_after);
    }

    #[test]
    fn runaway_learning_rate_reports_the_failing_step() {
        let params = ParameterSet::build(spec(), 7).unwrap();
        let mut rng = rngutil::stream(7, "t");
        let instance = sine_source().sample_eval_instance(12, 10, &mut rng).unwrap();
        let err = online_train(&params, &instance.trajectory, 1e200, AdaptScope::HeadOnly);
        assert!(matches!(
            err,
            Err(EvalError::Train(TrainError::NumericAtStep { .. }))
        ));
    }

    #[test]
    fn perfect_regression_predictions_score_zero() {
        let params = ParameterSet::build(spec(), 9).unwrap();
        let inputs = Tensor::from_rows(&[
            vec![0.5, -0.2, 0.8, 0.1],
            vec![-0.4, 0.9, 0.0, -0.7],
        ])
        .unwrap();
        let preds = predict(&params, &inputs).unwrap();
        let batch = Batch { inputs, targets: Target::Values(preds), block: 0 };
        let (value, kind) = evaluate(&params, &[batch]).unwrap();
        assert_eq!(kind, MetricKind::Mse);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn random_labels_score_near_chance() {
        // Labels drawn independently of the logits make every class
        // equally likely to be correct, so accuracy concentrates at 1/10
        // regardless of how skewed the argmax distribution is.
        let spec = NetworkSpec { input_dim: 4, hidden: vec![8], output_dim: 10, rln_depth: 1 };
        let params = ParameterSet::build(spec, 11).unwrap();
        let mut rng = rngutil::stream(11, "labels");
        let n = 2000;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..4).map(|_| rngutil::gaussian(&mut rng)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let batch = Batch {
            inputs: Tensor::from_rows(&rows).unwrap(),
            targets: Target::Labels(labels),
            block: 0,
        };
        let (acc, kind) = evaluate(&params, &[batch]).unwrap();
        assert_eq!(kind, MetricKind::Accuracy);
        // 3 sigma for a binomial at p = 0.1, n = 2000
        assert!((acc - 0.1).abs() < 0.021, "accuracy {} too far from chance", acc);
    }

    #[test]
    fn empty_eval_set_is_a_contract_error() {
        let params = ParameterSet::build(spec(), 3).unwrap();
        assert!(matches!(evaluate(&params, &[]), Err(EvalError::EmptyEvalSet)));
    }

    #[test]
    fn singleton_grid_returns_its_element() {
        let params = ParameterSet::build(spec(), 13).unwrap();
        let mut cfg = desk_cfg();
        cfg.lr_grid = vec![0.003];
        let lr = lr_sweep(&params, &sine_source(), &cfg).unwrap();
        assert_eq!(lr, 0.003);
    }

    #[test]
    fn diverging_candidate_loses_to_the_finite_one() {
        let params = ParameterSet::build(spec(), 13).unwrap();
        let mut cfg = desk_cfg();
        cfg.lr_grid = vec![1e200, 0.01];
        let lr = lr_sweep(&params, &sine_source(), &cfg).unwrap();
        assert_eq!(lr, 0.01);
    }

    #[test]
    fn all_divergent_grid_is_an_error() {
        let params = ParameterSet::build(spec(), 13).unwrap();
        let mut cfg = desk_cfg();
        cfg.lr_grid = vec![1e200, 1e150];
        assert!(matches!(
            lr_sweep(&params, &sine_source(), &cfg),
            Err(EvalError::SweepAllDiverged)
        ));
        cfg.lr_grid = vec![];
        assert!(matches!(lr_sweep(&params, &sine_source(), &cfg), Err(EvalError::EmptyGrid)));
    }

    #[test]
    fn exact_ties_resolve_to_the_smaller_rate() {
        // Targets equal to the frozen model's own predictions zero out
        // every gradient, so all rates produce identical parameters and
        // identical scores.
        let params = ParameterSet::build(spec(), 15).unwrap();
        let mut rng = rngutil::stream(15, "t");
        let mut instance = sine_source().sample_eval_instance(6, 10, &mut rng).unwrap();
        for batch in &mut instance.trajectory.batches {
            batch.targets = Target::Values(predict(&params, &batch.inputs).unwrap());
        }
        for eval_set in &mut instance.block_evals {
            eval_set.targets = Target::Values(predict(&params, &eval_set.inputs).unwrap());
        }
        let pairs = vec![(params, instance)];
        let (lr, score) = sweep_over(&pairs, &[0.3, 0.01, 0.001], AdaptScope::HeadOnly).unwrap();
        assert_eq!(lr, 0.001);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn report_shape_and_bitwise_reproducibility() {
        let params = ParameterSet::build(spec(), 17).unwrap();
        let cfg = desk_cfg();
        let (a, curves_a) = run_eval(&params, "ckpt-a", &sine_source(), &cfg, None).unwrap();
        let (b, curves_b) = run_eval(&params, "ckpt-a", &sine_source(), &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(curves_a, curves_b);
        assert_eq!(a.blocks, 3);
        assert_eq!(a.per_block.len(), 3);
        assert_eq!(a.mean_step_loss.len(), 6);
        assert_eq!(curves_a.len(), 3 * 6);
        assert_eq!(a.metric, "mse");
        assert!(a.aggregate.is_finite());
        assert!(a.fresh_head);
    }

    #[test]
    fn warm_start_keeps_trained_layers_fresh_start_rerolls_them() {
        let params = ParameterSet::build(spec(), 23).unwrap();
        let mut cfg = desk_cfg();
        cfg.warm_pln = true;
        // At lr 0 nothing trains, so a warm start evaluates `params` as-is
        // on every trajectory.
        let (warm, _) = run_eval(&params, "ckpt-w", &sine_source(), &cfg, Some(0.0)).unwrap();
        assert!(!warm.fresh_head);
        let mut expect = 0.0;
        for t in 0..cfg.trajectories {
            let mut rng = rngutil::stream_indexed(cfg.seed, "eval-report", t as u64);
            let instance =
                sine_source().sample_eval_instance(cfg.k, cfg.grid_points, &mut rng).unwrap();
            let (agg, _) = evaluate(&params, &instance.block_evals).unwrap();
            expect += agg;
        }
        assert_eq!(warm.aggregate, expect / cfg.trajectories as f64);

        cfg.warm_pln = false;
        let (fresh, _) = run_eval(&params, "ckpt-w", &sine_source(), &cfg, Some(0.0)).unwrap();
        assert!(fresh.fresh_head);
        assert_ne!(fresh.aggregate, warm.aggregate);
    }

    #[test]
    fn report_json_round_trips() {
        let params = ParameterSet::build(spec(), 19).unwrap();
        let cfg = desk_cfg();
        let (report, curves) = run_eval(&params, "ckpt-rt", &sine_source(), &cfg, Some(0.01)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_eval_outputs(dir.path(), &report, &curves).unwrap();
        let loaded: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(loaded, report);
        let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + curves.len());
        assert!(csv.starts_with("trajectory,step,block,value"));
    }

    #[test]
    fn pretraining_descends_and_picks_a_candidate_split() {
        let mut rng = rngutil::stream(21, "data");
        let dataset = crate::problems::synthetic_class_dataset(10, 8, &mut rng);
        let source = ProblemSource::Split {
            dataset,
            pool: (0..10).collect(),
            classes_per_problem: 3,
            images_per_class: 4,
            batch_size: 2,
        };
        let spec = NetworkSpec { input_dim: 8, hidden: vec![16, 16], output_dim: 10, rln_depth: 2 };
        let cfg = EvalConfig {
            k: 0,
            trajectories: 2,
            grid_points: 10,
            lr_grid: vec![0.1, 0.01],
            scope: AdaptScope::HeadOnly,
            seed: 21,
            warm_pln: false,
        };
        let out = pretrain_baseline(&source, &spec, &[1, 2], 200, 0.05, &cfg).unwrap();
        assert!(out.rln_depth == 1 || out.rln_depth == 2);
        assert_eq!(out.params.spec().rln_depth, out.rln_depth);
        assert_eq!(out.step_losses.len(), 200);
        let first: f64 = out.step_losses[..20].iter().sum::<f64>() / 20.0;
        let last: f64 = out.step_losses[180..].iter().sum::<f64>() / 20.0;
        assert!(last < first, "pretraining did not descend: {} then {}", first, last);
        assert!(cfg.lr_grid.contains(&out.val_lr));
    }

    #[test]
    fn zero_epochs_leave_the_head_untrained() {
        let params = ParameterSet::build(spec(), 23).unwrap();
        let mut rng = rngutil::stream(23, "t");
        let instance = sine_source().sample_eval_instance(6, 10, &mut rng).unwrap();
        let mut train_rng = rngutil::stream(23, "iid");
        let out =
            iid_sanity_train(&params, &instance.trajectory, 0, 0.01, AdaptScope::HeadOnly, &mut train_rng)
                .unwrap();
        assert_eq!(out.params.flat(), params.flat());
        assert!(out.step_losses.is_empty());
    }

    #[test]
    fn epochs_are_reshuffled_under_one_stream() {
        let params = ParameterSet::build(spec(), 25).unwrap();
        let mut rng = rngutil::stream(25, "t");
        let instance = sine_source().sample_eval_instance(6, 10, &mut rng).unwrap();
        let mut train_rng = rngutil::stream(25, "iid");
        // lr = 0 keeps the model fixed, so per-step losses expose the
        // visiting order alone.
        let out =
            iid_sanity_train(&params, &instance.trajectory, 2, 0.0, AdaptScope::HeadOnly, &mut train_rng)
                .unwrap();
        let per_epoch = out.step_losses.len() / 2;
        assert_eq!(out.step_losses.len(), 2 * per_epoch);
        assert_ne!(
            &out.step_losses[..per_epoch],
            &out.step_losses[per_epoch..],
            "epoch shuffles coincided"
        );
    }
}

//! Meta-training of the representation trunk.
//!
//! One meta-iteration samples a problem, adapts the head through a chain
//! of in-graph SGD steps on a block-correlated stream, and differentiates
//! the post-adaptation loss back through the whole chain into the trunk.
//! The trunk is therefore shaped by what adaptation *does* to it, which
//! is where resistance to interference comes from.
//!
//! Three objectives share the machinery: the full unrolled objective, an
//! i.i.d.-style variant that takes whole-batch inner steps, and a
//! truncated approximation that cuts the graph every `m` steps.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GraphError, TrainError};
use crate::graph::{backward, mse, softmax_cross_entropy, Value};
use crate::network::{MountedLayer, MountedNetwork, NetworkSpec, ParameterSet};
use crate::optim::{clip_global_norm, global_norm, sgd_step, Adam, AdamConfig};
use crate::problems::{concat_batches, Batch, Episode, ProblemSource, Target};
use crate::rngutil;

/// Meta-gradients above this norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Meta-gradients are clipped to this global norm before the update.
pub const META_GRAD_CLIP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Oml,
    MamlRep,
    OmlTruncated,
    /// Ablation: the inner loop adapts every parameter and the meta-update
    /// learns the full initialization, removing the trunk/head split.
    OmlNoRln,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Oml => "oml",
            Objective::MamlRep => "maml-rep",
            Objective::OmlTruncated => "oml-truncated",
            Objective::OmlNoRln => "oml-no-rln",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaLossScope {
    TestOnly,
    TrainPlusTest,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub objective: Objective,
    /// Inner-loop step size.
    pub alpha: f64,
    /// Meta step size.
    pub beta: f64,
    /// Inner trajectory length in mini-batches (sine episodes; split
    /// episodes derive it from the class list).
    pub k: usize,
    /// Inner steps for the whole-batch variant.
    pub l: usize,
    /// Truncation window.
    pub m: usize,
    pub meta_steps: usize,
    pub scope: MetaLossScope,
    pub adam: AdamConfig,
    /// Extra checkpoints every this many steps; 0 disables the periodic
    /// ones (initial and final are always written).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, message: String| Err(ConfigError::Invalid { field, message });
        if !(self.alpha > 0.0) {
            return bad("meta.alpha", format!("must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0) {
            return bad("meta.beta", format!("must be positive, got {}", self.beta));
        }
        if self.meta_steps == 0 {
            return bad("meta.meta_steps", "must be at least 1".into());
        }
        if self.l == 0 {
            return bad("meta.l", "must be at least 1".into());
        }
        if self.m == 0 {
            return bad("meta.m", "must be at least 1".into());
        }
        if self.m > self.k && self.k > 0 {
            return bad("meta.m", format!("window {} exceeds trajectory length {}", self.m, self.k));
        }
        Ok(())
    }
}

/// Which parameters an inner step adapts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerTargets {
    HeadOnly,
    All,
}

fn numeric_at(step: usize) -> impl Fn(GraphError) -> TrainError {
    move |e| match e {
        GraphError::NonFinite { .. } => TrainError::NumericAtStep { step },
        other => TrainError::Graph(other),
    }
}

/// Loss of the network on one batch: mean squared error for regression
/// targets, mean softmax cross-entropy for labels.
pub fn batch_loss(net: &MountedNetwork, batch: &Batch) -> Result<Value, GraphError> {
    let g = net.graph().clone();
    let x = g.constant(batch.inputs.clone());
    let pass = net.forward(&x)?;
    match &batch.targets {
        Target::Values(y) => mse(&pass.output, &g.constant(y.clone())),
        Target::Labels(l) => softmax_cross_entropy(&pass.output, l),
    }
}

/// One in-graph SGD step. Only the selected partition moves; the step is
/// recorded on the graph, so a later backward pass differentiates through
/// it. `step` only labels errors.
pub fn inner_update(
    net: &MountedNetwork,
    batch: &Batch,
    alpha: f64,
    targets: InnerTargets,
    step: usize,
) -> Result<MountedNetwork, TrainError> {
    let err = numeric_at(step);
    let loss = batch_loss(net, batch).map_err(&err)?;
    let params = match targets {
        InnerTargets::HeadOnly => net.pln_params(),
        InnerTargets::All => net.params(),
    };
    let grads = backward(&loss, &params, true).map_err(&err)?;
    let mut updated = Vec::with_capacity(params.len());
    for (p, g) in params.iter().zip(grads.values()) {
        updated.push(p.sub(&g.scale(alpha).map_err(&err)?).map_err(&err)?);
    }
    let layers = layers_from(updated);
    Ok(match targets {
        InnerTargets::HeadOnly => net.with_pln(layers),
        InnerTargets::All => replace_all(net, layers),
    })
}

fn layers_from(values: Vec<Value>) -> Vec<MountedLayer> {
    values
        .chunks(2)
        .map(|wb| MountedLayer { weight: wb[0].clone(), bias: wb[1].clone() })
        .collect()
}

fn replace_all(net: &MountedNetwork, layers: Vec<MountedLayer>) -> MountedNetwork {
    let mut out = net.clone();
    out.layers = layers;
    out
}

/// The meta-loss batch for one episode under the configured scope.
fn meta_batch(episode: &Episode, scope: MetaLossScope) -> Batch {
    match scope {
        MetaLossScope::TestOnly => concat_batches(&episode.test.batches),
        MetaLossScope::TrainPlusTest => {
            let mut all = episode.train.batches.clone();
            all.extend(episode.test.batches.clone());
            concat_batches(&all)
        }
    }
}

/// Unrolled objective: sequential single-batch inner steps down the
/// block-correlated stream, then the episode loss at the adapted head.
pub fn unrolled_episode_loss(
    net: &MountedNetwork,
    episode: &Episode,
    alpha: f64,
    scope: MetaLossScope,
    targets: InnerTargets,
) -> Result<(Value, MountedNetwork), TrainError> {
    let mut current = net.clone();
    for (j, batch) in episode.train.batches.iter().enumerate() {
        current = inner_update(&current, batch, alpha, targets, j)?;
    }
    let k = episode.train.batches.len();
    let loss = batch_loss(&current, &meta_batch(episode, scope)).map_err(numeric_at(k))?;
    Ok((loss, current))
}

/// Whole-batch variant: `l` inner steps, each on the complete training
/// set of the episode, ignoring block order.
pub fn maml_episode_loss(
    net: &MountedNetwork,
    episode: &Episode,
    alpha: f64,
    l: usize,
    scope: MetaLossScope,
) -> Result<(Value, MountedNetwork), TrainError> {
    let whole = concat_batches(&episode.train.batches);
    let mut current = net.clone();
    for j in 0..l {
        current = inner_update(&current, &whole, alpha, InnerTargets::HeadOnly, j)?;
    }
    let loss = batch_loss(&current, &meta_batch(episode, scope)).map_err(numeric_at(l))?;
    Ok((loss, current))
}

/// Mutable state threaded through meta-training.
pub struct MetaState {
    pub params: ParameterSet,
    pub adam: Adam,
    pub step: usize,
}

impl MetaState {
    pub fn new(params: ParameterSet, adam_cfg: AdamConfig) -> Self {
        let dim = params.flat().len();
        MetaState { params, adam: Adam::new(adam_cfg, dim), step: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub meta_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct TruncatedStepInfo {
    pub meta_loss: f64,
    pub grad_norm: f64,
    pub windows: usize,
    pub max_graph_len: usize,
}

/// Meta-gradient of `loss` w.r.t. `leaves`, flattened into a full
/// parameter-length vector (zeros at positions outside `leaves`).
pub(crate) fn flat_meta_gradient(
    loss: &Value,
    all_params: &[Value],
    leaves: &[Value],
    step: usize,
) -> Result<Vec<f64>, TrainError> {
    let grads = backward(loss, leaves, false).map_err(numeric_at(step))?;
    let mut flat = Vec::new();
    for p in all_params {
        match grads.get(p) {
            Some(g) => flat.extend_from_slice(g.tensor().data()),
            None => flat.extend(std::iter::repeat(0.0).take(p.numel())),
        }
    }
    Ok(flat)
}

fn check_divergence(flat: &[f64], step: usize) -> Result<f64, TrainError> {
    let norm = global_norm(flat);
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(TrainError::Divergence { step, norm });
    }
    Ok(norm)
}

fn apply_flat(params: &ParameterSet, flat: Vec<f64>, step: usize) -> Result<ParameterSet, TrainError> {
    ParameterSet::from_flat(params.spec().clone(), &flat)
        .map_err(|_| TrainError::NumericAtStep { step })
}

/// One meta-iteration of the unrolled objective (also the no-split
/// ablation, selected by `cfg.objective`). The head is re-randomized per
/// iteration except under the ablation, where its initialization is
/// itself meta-learned.
pub fn oml_meta_step(
    state: &mut MetaState,
    source: &ProblemSource,
    cfg: &MetaTrainConfig,
) -> Result<StepInfo, TrainError> {
    let step = state.step;
    let ablation = cfg.objective == Objective::OmlNoRln;
    let mut rng = rngutil::stream_indexed(cfg.seed, "episode", step as u64);
    let k = source.episode_len(cfg.k);
    let episode = source.sample_episode(k, &mut rng)?;

    if !ablation {
        let mut head_rng = rngutil::stream_indexed(cfg.seed, "head-init", step as u64);
        state.params = state.params.with_fresh_pln(&mut head_rng);
    }
    let g = crate::graph::Graph::new();
    let net = state.params.mount(&g, true, true);
    let inner = if ablation { InnerTargets::All } else { InnerTargets::HeadOnly };
    let (loss, _adapted) = unrolled_episode_loss(&net, &episode, cfg.alpha, cfg.scope, inner)?;

    let meta_leaves = if ablation { net.params() } else { net.rln_params() };
    let all = net.params();
    let mut flat_grads = flat_meta_gradient(&loss, &all, &meta_leaves, step)?;
    let norm = check_divergence(&flat_grads, step)?;
    clip_global_norm(&mut flat_grads, META_GRAD_CLIP);

    let mut flat = state.params.flat();
    state.adam.step(&mut flat, &flat_grads, cfg.beta);
    state.params = apply_flat(&state.params, flat, step)?;
    state.step += 1;
    Ok(StepInfo { meta_loss: loss.item(), grad_norm: norm })
}

/// One meta-iteration of the whole-batch variant.
pub fn maml_rep_meta_step(
    state: &mut MetaState,
    source: &ProblemSource,
    cfg: &MetaTrainConfig,
) -> Result<StepInfo, TrainError> {
    let step = state.step;
    let mut rng = rngutil::stream_indexed(cfg.seed, "episode", step as u64);
    let k = source.episode_len(cfg.k);
    let episode = source.sample_episode(k, &mut rng)?;

    let mut head_rng = rngutil::stream_indexed(cfg.seed, "head-init", step as u64);
    state.params = state.params.with_fresh_pln(&mut head_rng);
    let g = crate::graph::Graph::new();
    let net = state.params.mount(&g, true, true);
    let (loss, _adapted) = maml_episode_loss(&net, &episode, cfg.alpha, cfg.l, cfg.scope)?;

    let meta_leaves = net.rln_params();
    let all = net.params();
    let mut flat_grads = flat_meta_gradient(&loss, &all, &meta_leaves, step)?;
    let norm = check_divergence(&flat_grads, step)?;
    clip_global_norm(&mut flat_grads, META_GRAD_CLIP);

    let mut flat = state.params.flat();
    state.adam.step(&mut flat, &flat_grads, cfg.beta);
    state.params = apply_flat(&state.params, flat, step)?;
    state.step += 1;
    Ok(StepInfo { meta_loss: loss.item(), grad_norm: norm })
}

/// One meta-iteration of the truncated approximation: the stream is
/// processed in windows of `m` inner steps; each window's graph is cut
/// off from the last by carrying the head numerically (stop-gradient),
/// trunk gradients of the seen-so-far held-out prefix accumulate across
/// windows, and one plain SGD meta-update lands at the end. The head
/// persists across windows and across meta-iterations.
pub fn truncated_oml_meta_step(
    state: &mut MetaState,
    source: &ProblemSource,
    cfg: &MetaTrainConfig,
) -> Result<TruncatedStepInfo, TrainError> {
    let step = state.step;
    let mut rng = rngutil::stream_indexed(cfg.seed, "episode", step as u64);
    let k = source.episode_len(cfg.k);
    let episode = source.sample_episode(k, &mut rng)?;

    let mut carry = state.params.clone();
    let mut accum = vec![0.0; carry.flat().len()];
    let mut j = 0;
    let mut windows = 0;
    let mut max_graph_len = 0;
    let mut last_loss = f64::NAN;
    while j < k {
        let j_end = (j + cfg.m).min(k);
        let g = crate::graph::Graph::new();
        let net = carry.mount(&g, true, true);
        let mut current = net.clone();
        for (t, batch) in episode.train.batches[j..j_end].iter().enumerate() {
            current = inner_update(&current, batch, cfg.alpha, InnerTargets::HeadOnly, j + t)?;
        }
        let prefix = concat_batches(&episode.test.batches[..j_end]);
        let loss = batch_loss(&current, &prefix).map_err(numeric_at(j_end))?;
        let window_grads = flat_meta_gradient(&loss, &net.params(), &net.rln_params(), j_end)?;
        for (a, w) in accum.iter_mut().zip(&window_grads) {
            *a += w;
        }
        carry = current.snapshot(carry.spec());
        last_loss = loss.item();
        max_graph_len = max_graph_len.max(g.len());
        windows += 1;
        j = j_end;
    }

    let norm = check_divergence(&accum, step)?;
    clip_global_norm(&mut accum, META_GRAD_CLIP);
    let mut flat = carry.flat();
    sgd_step(&mut flat, &accum, cfg.beta);
    state.params = apply_flat(&carry, flat, step)?;
    state.step += 1;
    Ok(TruncatedStepInfo { meta_loss: last_loss, grad_norm: norm, windows, max_graph_len })
}

#[derive(Clone, Copy, Debug)]
pub struct LogRow {
    pub meta_step: usize,
    pub meta_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

pub struct MetaTrainOutcome {
    pub params: ParameterSet,
    pub log: Vec<LogRow>,
}

fn write_checkpoint(
    dir: &Path,
    name: &str,
    params: &ParameterSet,
    cfg: &MetaTrainConfig,
) -> Result<(), TrainError> {
    crate::network::save_checkpoint(&dir.join(name), params, cfg.seed, cfg.objective.name())
        .map_err(TrainError::Data)
}

/// Run the configured number of meta-steps, logging one CSV row per step
/// and checkpointing into `out_dir` (at step 0, every
/// `checkpoint_every`, and at the end). On divergence the run aborts
/// with an error; the log rows and checkpoints written so far stay on
/// disk, so the last good state survives.
pub fn meta_train(
    cfg: &MetaTrainConfig,
    net_spec: &NetworkSpec,
    source: &ProblemSource,
    out_dir: &Path,
) -> Result<MetaTrainOutcome, TrainError> {
    debug_assert!(cfg.validate().is_ok(), "caller must validate the config");
    debug_assert_eq!(net_spec.input_dim, source.input_dim());
    debug_assert_eq!(net_spec.output_dim, source.output_dim());

    fs::create_dir_all(out_dir)
        .map_err(|e| TrainError::Data(crate::error::DataError::Io {
            path: out_dir.display().to_string(),
            source: e,
        }))?;
    let params = ParameterSet::build(net_spec.clone(), cfg.seed)
        .expect("caller must validate the network spec");
    let mut state = MetaState::new(params, cfg.adam);
    write_checkpoint(out_dir, "checkpoint-000000", &state.params, cfg)?;

    let log_path = out_dir.join("metatrain_log.csv");
    let mut log_file = fs::File::create(&log_path)
        .map_err(|e| TrainError::Data(crate::error::DataError::Io {
            path: log_path.display().to_string(),
            source: e,
        }))?;
    writeln!(log_file, "meta_step,meta_loss,grad_norm,wall_ms").ok();

    let mut log = Vec::with_capacity(cfg.meta_steps);
    for s in 0..cfg.meta_steps {
        let t0 = Instant::now();
        let info = match cfg.objective {
            Objective::Oml | Objective::OmlNoRln => oml_meta_step(&mut state, source, cfg)?,
            Objective::MamlRep => maml_rep_meta_step(&mut state, source, cfg)?,
            Objective::OmlTruncated => {
                let t = truncated_oml_meta_step(&mut state, source, cfg)?;
                StepInfo { meta_loss: t.meta_loss, grad_norm: t.grad_norm }
            }
        };
        let row = LogRow {
            meta_step: s,
            meta_loss: info.meta_loss,
            grad_norm: info.grad_norm,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        writeln!(log_file, "{},{},{},{}", row.meta_step, row.meta_loss, row.grad_norm, row.wall_ms).ok();
        log.push(row);
        if cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.meta_steps {
            write_checkpoint(out_dir, &format!("checkpoint-{:06}", s + 1), &state.params, cfg)?;
        }
    }
    write_checkpoint(out_dir, "checkpoint-final", &state.params, cfg)?;
    Ok(MetaTrainOutcome { params: state.params, log })
}

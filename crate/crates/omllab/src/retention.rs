//! Interference-mitigation strategies layered on a fixed (or free)
//! representation: plain online SGD, an approximately-i.i.d. shuffled
//! pass, experience replay with a reservoir buffer, and elastic weight
//! consolidation with per-block Fisher anchors.
//!
//! Each method consumes one correlated trajectory and returns the same
//! outcome shape as plain online training, so drivers can swap methods
//! freely. The trunk stays bitwise untouched under `AdaptScope::HeadOnly`.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, EvalError, GraphError, TrainError};
use crate::eval::{
    evaluate, iid_sanity_train, numeric_sgd_step, online_train, rows_to_batch, AdaptScope,
    EvalConfig, OnlineOutcome, RowTarget, VALIDATION_TRAJECTORIES,
};
use crate::graph::Value;
use crate::metatrain::batch_loss;
use crate::network::{MountedNetwork, ParameterSet};
use crate::problems::{ProblemSource, Trajectory};
use crate::rngutil;
use crate::tensor::Tensor;

pub const DEFAULT_REPLAY_CAPACITY: usize = 200;
pub const DEFAULT_REPLAY_BATCH: usize = 8;

/// Fixed-size uniform sample of everything offered so far.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<(Vec<f64>, RowTarget)>,
    n_seen: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: Vec::new(), n_seen: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    /// Classic reservoir rule: the first `capacity` offers are kept, and
    /// offer number n > capacity replaces a random slot with probability
    /// capacity / n, leaving every offer equally likely to be resident.
    pub fn offer(&mut self, input: Vec<f64>, target: RowTarget, rng: &mut ChaCha8Rng) {
        if self.items.len() < self.capacity {
            self.items.push((input, target));
        } else if self.capacity > 0 {
            let u = rng.gen_range(0..=self.n_seen);
            if u < self.capacity {
                self.items[u] = (input, target);
            }
        }
        self.n_seen += 1;
    }

    /// `count` uniform draws with replacement; empty when nothing is
    /// buffered yet.
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, RowTarget)> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| self.items[rng.gen_range(0..self.items.len())].clone()).collect()
    }

    /// Current residents in insertion-slot order.
    pub fn contents(&self) -> &[(Vec<f64>, RowTarget)] {
        &self.items
    }
}

/// Experience replay: every online step trains on the incoming batch
/// joined with `replay_batch` buffered samples (mean loss over the
/// union), then offers the new samples to the reservoir.
pub fn er_reservoir_train(
    start: &ParameterSet,
    trajectory: &Trajectory,
    lr: f64,
    scope: AdaptScope,
    capacity: usize,
    replay_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<OnlineOutcome, EvalError> {
    assert!(!trajectory.is_empty(), "need a nonempty trajectory");
    let mut buffer = ReplayBuffer::new(capacity);
    let mut current = start.clone();
    let mut step_losses = Vec::with_capacity(trajectory.len());
    let mut step_blocks = Vec::with_capacity(trajectory.len());
    for (step, batch) in trajectory.batches.iter().enumerate() {
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<RowTarget> = Vec::new();
        for i in 0..batch.targets.len() {
            inputs.push(batch.inputs.row(i).to_vec());
            targets.push(match &batch.targets {
                crate::problems::Target::Values(t) => RowTarget::Value(t.row(i).to_vec()),
                crate::problems::Target::Labels(l) => RowTarget::Label(l[i]),
            });
        }
        let fresh = inputs.len();
        for (x, t) in buffer.sample(replay_batch, rng) {
            inputs.push(x);
            targets.push(t);
        }
        let combined = rows_to_batch(&inputs, &targets);
        let (next, loss) =
            numeric_sgd_step(&current, |net| batch_loss(net, &combined), lr, scope, step)?;
        current = next;
        step_losses.push(loss);
        step_blocks.push(batch.block);
        for (x, t) in inputs.drain(..fresh).zip(targets.drain(..fresh)) {
            buffer.offer(x, t, rng);
        }
    }
    Ok(OnlineOutcome { params: current, step_losses, step_blocks })
}

/// Diagonal importance estimate anchored at one set of parameter values.
/// Tensors align with the adapted leaves in mount order.
#[derive(Clone, Debug)]
pub struct FisherState {
    pub anchors: Vec<Tensor>,
    pub fisher: Vec<Tensor>,
}

fn scope_leaves(net: &MountedNetwork, scope: AdaptScope) -> Vec<Value> {
    match scope {
        AdaptScope::HeadOnly => net.pln_params(),
        AdaptScope::FullNetwork => net.params(),
    }
}

/// Diagonal empirical Fisher: the mean over samples of the squared
/// per-sample loss gradient, evaluated at the given parameters. The
/// anchor is the parameters themselves.
pub fn ewc_fisher(
    params: &ParameterSet,
    sample_set: &crate::problems::Batch,
    scope: AdaptScope,
) -> Result<FisherState, EvalError> {
    assert!(!sample_set.targets.is_empty(), "need a nonempty sample set");
    let n = sample_set.targets.len();
    let mut sums: Option<Vec<Vec<f64>>> = None;
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    let mut anchors: Vec<Tensor> = Vec::new();
    for i in 0..n {
        let row_inputs = vec![sample_set.inputs.row(i).to_vec()];
        let row_target = vec![match &sample_set.targets {
            crate::problems::Target::Values(t) => RowTarget::Value(t.row(i).to_vec()),
            crate::problems::Target::Labels(l) => RowTarget::Label(l[i]),
        }];
        let row = rows_to_batch(&row_inputs, &row_target);
        let g = crate::graph::Graph::new();
        let net = params.mount(&g, scope == AdaptScope::FullNetwork, true);
        let loss = batch_loss(&net, &row).map_err(TrainError::Graph)?;
        let leaves = scope_leaves(&net, scope);
        let grads = crate::graph::backward(&loss, &leaves, false).map_err(TrainError::Graph)?;
        let gvals: Vec<&Value> = grads.values().collect();
        if sums.is_none() {
            sums = Some(gvals.iter().map(|v| vec![0.0; v.numel()]).collect());
            shapes = gvals.iter().map(|v| v.shape().to_vec()).collect();
            anchors = leaves.iter().map(|v| v.tensor().clone()).collect();
        }
        let sums = sums.as_mut().expect("initialized on first row");
        for (acc, v) in sums.iter_mut().zip(&gvals) {
            for (a, g) in acc.iter_mut().zip(v.tensor().data()) {
                *a += g * g;
            }
        }
    }
    let sums = sums.expect("nonempty sample set");
    let fisher = sums
        .into_iter()
        .zip(shapes)
        .map(|(mut s, shape)| {
            for v in &mut s {
                *v /= n as f64;
            }
            Tensor::from_vec(shape, s).expect("finite fisher")
        })
        .collect();
    Ok(FisherState { anchors, fisher })
}

/// Builds the quadratic consolidation term (lambda/2) sum_i F_i (w_i -
/// w*_i)^2 over all recorded states, as a graph node on `net`'s graph.
pub fn ewc_penalty(
    net: &MountedNetwork,
    states: &[FisherState],
    scope: AdaptScope,
    lambda: f64,
) -> Result<Option<Value>, GraphError> {
    if lambda == 0.0 || states.is_empty() {
        return Ok(None);
    }
    let leaves = scope_leaves(net, scope);
    let g = net.graph();
    let mut total: Option<Value> = None;
    for state in states {
        assert_eq!(state.anchors.len(), leaves.len(), "state does not match scope");
        for ((leaf, anchor), fisher) in leaves.iter().zip(&state.anchors).zip(&state.fisher) {
            let anchor = g.constant(anchor.clone());
            let fisher = g.constant(fisher.clone());
            let diff = leaf.sub(&anchor)?;
            let term = diff.mul(&diff)?.mul(&fisher)?.sum_all()?;
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
    }
    Ok(Some(total.expect("at least one state").scale(lambda / 2.0)?))
}

/// Outcome of consolidation training, keeping the anchors recorded at
/// each block boundary (flattened full-length) for inspection.
#[derive(Clone, Debug)]
pub struct EwcOutcome {
    pub outcome: OnlineOutcome,
    pub boundary_anchors: Vec<Vec<f64>>,
}

/// Task-aware consolidation: one pass over the trajectory, refreshing
/// the Fisher estimate and anchor from the finished block's data at
/// every block boundary and accumulating the penalties of all past
/// blocks. `lambda = 0` reproduces plain online training exactly, with
/// anchors still recorded for diagnostics.
pub fn ewc_train(
    start: &ParameterSet,
    trajectory: &Trajectory,
    lr: f64,
    scope: AdaptScope,
    lambda: f64,
) -> Result<EwcOutcome, EvalError> {
    assert!(!trajectory.is_empty(), "need a nonempty trajectory");
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let mut current = start.clone();
    let mut states: Vec<FisherState> = Vec::new();
    let mut boundary_anchors: Vec<Vec<f64>> = Vec::new();
    let mut block_batches: Vec<&crate::problems::Batch> = Vec::new();
    let mut step_losses = Vec::with_capacity(trajectory.len());
    let mut step_blocks = Vec::with_capacity(trajectory.len());
    for (step, batch) in trajectory.batches.iter().enumerate() {
        if let Some(prev) = block_batches.last() {
            if prev.block != batch.block {
                let finished = crate::problems::concat_batches(
                    &block_batches.iter().map(|b| (*b).clone()).collect::<Vec<_>>(),
                );
                let state = ewc_fisher(&current, &finished, scope)?;
                boundary_anchors.push(current.flat());
                states.push(state);
                block_batches.clear();
            }
        }
        let states_ref = &states;
        let (next, loss) = numeric_sgd_step(
            &current,
            |net| {
                let data_loss = batch_loss(net, batch)?;
                match ewc_penalty(net, states_ref, scope, lambda)? {
                    Some(p) => data_loss.add(&p),
                    None => Ok(data_loss),
                }
            },
            lr,
            scope,
            step,
        )?;
        current = next;
        step_losses.push(loss);
        step_blocks.push(batch.block);
        block_batches.push(batch);
    }
    Ok(EwcOutcome {
        outcome: OnlineOutcome { params: current, step_losses, step_blocks },
        boundary_anchors,
    })
}

/// Shuffled single pass over the trajectory's samples: the i.i.d.
/// control with the same sample budget as the online pass.
pub fn approx_iid_train(
    start: &ParameterSet,
    trajectory: &Trajectory,
    lr: f64,
    scope: AdaptScope,
    rng: &mut ChaCha8Rng,
) -> Result<OnlineOutcome, EvalError> {
    iid_sanity_train(start, trajectory, 1, lr, scope, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum RetentionMethod {
    Online,
    ApproxIid,
    ErReservoir { capacity: usize, replay_batch: usize },
    Ewc { lambda: f64 },
}

impl RetentionMethod {
    pub fn label(&self) -> String {
        match self {
            RetentionMethod::Online => "online".into(),
            RetentionMethod::ApproxIid => "approx-iid".into(),
            RetentionMethod::ErReservoir { capacity, replay_batch } => {
                format!("er-reservoir(c={capacity},r={replay_batch})")
            }
            RetentionMethod::Ewc { lambda } => format!("ewc(lambda={lambda})"),
        }
    }
}

/// Runs one method over one trajectory. All methods share this shape so
/// sweeps and tables can treat them uniformly.
pub fn run_method(
    method: &RetentionMethod,
    start: &ParameterSet,
    trajectory: &Trajectory,
    lr: f64,
    scope: AdaptScope,
    rng: &mut ChaCha8Rng,
) -> Result<OnlineOutcome, EvalError> {
    match method {
        RetentionMethod::Online => online_train(start, trajectory, lr, scope),
        RetentionMethod::ApproxIid => approx_iid_train(start, trajectory, lr, scope, rng),
        RetentionMethod::ErReservoir { capacity, replay_batch } => {
            er_reservoir_train(start, trajectory, lr, scope, *capacity, *replay_batch, rng)
        }
        RetentionMethod::Ewc { lambda } => {
            ewc_train(start, trajectory, lr, scope, *lambda).map(|o| o.outcome)
        }
    }
}

/// Learning-rate selection for a retention method, mirroring the online
/// sweep: every candidate rate sees identical validation trajectories,
/// head draws, and method randomness. Ties resolve to the smaller rate.
pub fn retention_lr_sweep(
    method: &RetentionMethod,
    start: &ParameterSet,
    source: &ProblemSource,
    cfg: &EvalConfig,
) -> Result<f64, EvalError> {
    if cfg.lr_grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut pairs = Vec::with_capacity(VALIDATION_TRAJECTORIES);
    for i in 0..VALIDATION_TRAJECTORIES {
        let mut rng = rngutil::stream_indexed(cfg.seed, "retention-val", i as u64);
        let instance =
            source.sample_eval_instance(cfg.k, cfg.grid_points, &mut rng).map_err(TrainError::from)?;
        let mut head_rng = rngutil::stream_indexed(cfg.seed, "retention-val-head", i as u64);
        let params = if cfg.warm_pln { start.clone() } else { start.with_fresh_pln(&mut head_rng) };
        pairs.push((params, instance, i as u64));
    }
    let mut ordered: Vec<f64> = cfg.lr_grid.clone();
    ordered.sort_by(|a, b| a.partial_cmp(b).expect("finite learning rates"));
    let mut best: Option<(f64, f64)> = None;
    'rates: for &lr in &ordered {
        let mut sum = 0.0;
        for (candidate, instance, i) in &pairs {
            let mut method_rng = rngutil::stream_indexed(cfg.seed, "retention-val-method", *i);
            let Ok(trained) =
                run_method(method, candidate, &instance.trajectory, lr, cfg.scope, &mut method_rng)
            else {
                continue 'rates;
            };
            let Ok((value, kind)) = evaluate(&trained.params, &instance.block_evals) else {
                continue 'rates;
            };
            if !value.is_finite() {
                continue 'rates;
            }
            sum += kind.loss_like(value);
        }
        let score = sum / pairs.len() as f64;
        match best {
            Some((_, s)) if score >= s => {}
            _ => best = Some((lr, score)),
        }
    }
    best.map(|(lr, _)| lr).ok_or(EvalError::SweepAllDiverged)
}

/// One row of the method-comparison table: a method run on a fixed
/// representation across several seeds, reported as mean and standard
/// deviation of the aggregate metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub method: String,
    pub representation: String,
    pub mode: String,
    pub lr: f64,
    pub metric: String,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub seeds: usize,
}

/// Sweeps the learning rate once (on `cfg.seed`), then scores the method
/// across seeds, each averaging `cfg.trajectories` fresh trajectories.
pub fn run_retention(
    method: &RetentionMethod,
    start: &ParameterSet,
    representation: &str,
    source: &ProblemSource,
    cfg: &EvalConfig,
    seeds: &[u64],
) -> Result<RetentionRow, EvalError> {
    assert!(!seeds.is_empty(), "need at least one seed");
    let lr = retention_lr_sweep(method, start, source, cfg)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut metric_name = "mse";
    for &seed in seeds {
        let mut sum = 0.0;
        for t in 0..cfg.trajectories {
            let mut rng = rngutil::stream_indexed(seed, "retention-report", t as u64);
            let instance =
                source.sample_eval_instance(cfg.k, cfg.grid_points, &mut rng).map_err(TrainError::from)?;
            let mut head_rng = rngutil::stream_indexed(seed, "retention-report-head", t as u64);
            let candidate =
                if cfg.warm_pln { start.clone() } else { start.with_fresh_pln(&mut head_rng) };
            let mut method_rng = rngutil::stream_indexed(seed, "retention-report-method", t as u64);
            let trained =
                run_method(method, &candidate, &instance.trajectory, lr, cfg.scope, &mut method_rng)?;
            let (value, kind) = evaluate(&trained.params, &instance.block_evals)?;
            metric_name = kind.name();
            sum += value;
        }
        per_seed.push(sum / cfg.trajectories as f64);
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let var = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_seed.len() as f64;
    Ok(RetentionRow {
        method: method.label(),
        representation: representation.to_string(),
        mode: match cfg.scope {
            AdaptScope::HeadOnly => "frozen".into(),
            AdaptScope::FullNetwork => "standard".into(),
        },
        lr,
        metric: metric_name.to_string(),
        metric_mean: mean,
        metric_std: var.sqrt(),
        seeds: seeds.len(),
    })
}

/// Appends rows to a comparison CSV, writing the header only when the
/// file does not exist yet.
pub fn append_retention_csv(path: &Path, rows: &[RetentionRow]) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io { path: path.display().to_string(), source: e };
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut f = std::io::BufWriter::new(file);
    if fresh {
        writeln!(f, "method,representation,mode,lr,metric,metric_mean,metric_std,seeds").map_err(io)?;
    }
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.method, r.representation, r.mode, r.lr, r.metric, r.metric_mean, r.metric_std, r.seeds
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::problems::synthetic_class_dataset;

    fn split_source(seed: u64) -> ProblemSource {
        let mut rng = rngutil::stream(seed, "data");
        ProblemSource::Split {
            dataset: synthetic_class_dataset(8, 6, &mut rng),
            pool: (0..8).collect(),
            classes_per_problem: 2,
            images_per_class: 4,
            batch_size: 2,
        }
    }

    fn split_spec() -> NetworkSpec {
        NetworkSpec { input_dim: 6, hidden: vec![12, 12], output_dim: 8, rln_depth: 2 }
    }

    #[test]
    fn fill_phase_retains_everything_in_order() {
        let mut rng = rngutil::stream(1, "buf");
        let mut buf = ReplayBuffer::new(200);
        for i in 0..200 {
            buf.offer(vec![i as f64], RowTarget::Label(i), &mut rng);
        }
        assert_eq!(buf.len(), 200);
        assert_eq!(buf.n_seen(), 200);
        for (i, (x, _)) in buf.contents().iter().enumerate() {
            assert_eq!(x[0], i as f64);
        }
    }

    #[test]
    fn long_run_inclusion_is_uniform() {
        // Any fixed offer should be resident with probability
        // capacity / n once n offers have gone past.
        let capacity = 50;
        let n = 1000;
        let trials = 4000;
        let tracked = 137usize;
        let mut rng = rngutil::stream(2, "mc");
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut buf = ReplayBuffer::new(capacity);
            for i in 0..n {
                buf.offer(vec![i as f64], RowTarget::Label(i), &mut rng);
            }
            assert_eq!(buf.len(), capacity);
            if buf.contents().iter().any(|(x, _)| x[0] == tracked as f64) {
                hits += 1;
            }
        }
        let p = hits as f64 / trials as f64;
        let expected = capacity as f64 / n as f64;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (p - expected).abs() < 3.0 * sigma,
            "inclusion rate {} vs expected {} (3 sigma {})",
            p,
            expected,
            3.0 * sigma
        );
    }

    #[test]
    fn second_offer_to_unit_buffer_is_kept_half_the_time() {
        let trials = 20000;
        let mut rng = rngutil::stream(3, "mc");
        let mut second_kept = 0usize;
        for _ in 0..trials {
            let mut buf = ReplayBuffer::new(1);
            buf.offer(vec![1.0], RowTarget::Label(0), &mut rng);
            buf.offer(vec![2.0], RowTarget::Label(1), &mut rng);
            if buf.contents()[0].0[0] == 2.0 {
                second_kept += 1;
            }
        }
        let p = second_kept as f64 / trials as f64;
        let sigma = (0.25_f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "second kept with p = {}", p);
    }

    #[test]
    fn inclusion_is_exchangeable_over_offer_order() {
        // Marginal inclusion of a given item value must not depend on
        // where in the stream it was offered.
        let capacity = 50;
        let n = 1000;
        let trials = 4000;
        let expected = capacity as f64 / n as f64;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        let run = |reversed: bool, rng: &mut ChaCha8Rng| -> f64 {
            let mut hits = 0usize;
            for _ in 0..trials {
                let mut buf = ReplayBuffer::new(capacity);
                for i in 0..n {
                    let v = if reversed { n - 1 - i } else { i };
                    buf.offer(vec![v as f64], RowTarget::Label(v), rng);
                }
                if buf.contents().iter().any(|(x, _)| x[0] == 500.0) {
                    hits += 1;
                }
            }
            hits as f64 / trials as f64
        };
        let mut rng = rngutil::stream(4, "mc");
        let forward = run(false, &mut rng);
        let backward = run(true, &mut rng);
        assert!((forward - expected).abs() < 3.0 * sigma, "forward {}", forward);
        assert!((backward - expected).abs() < 3.0 * sigma, "backward {}", backward);
    }

    #[test]
    fn zero_capacity_replay_is_plain_online_training() {
        let source = split_source(5);
        let params = ParameterSet::build(split_spec(), 5).unwrap();
        let mut rng = rngutil::stream(5, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let online = online_train(&params, &instance.trajectory, 0.05, AdaptScope::HeadOnly).unwrap();
        let mut er_rng = rngutil::stream(5, "er");
        let er = er_reservoir_train(
            &params,
            &instance.trajectory,
            0.05,
            AdaptScope::HeadOnly,
            0,
            8,
            &mut er_rng,
        )
        .unwrap();
        assert_eq!(online.params.flat(), er.params.flat());
        assert_eq!(online.step_losses, er.step_losses);
    }

    #[test]
    fn buffer_respects_its_capacity_during_training() {
        let mut rng = rngutil::stream(6, "buf");
        let mut buf = ReplayBuffer::new(5);
        for i in 0..300 {
            buf.offer(vec![i as f64], RowTarget::Label(i), &mut rng);
            assert!(buf.len() <= 5);
        }
        assert_eq!(buf.len(), 5);
    }

    #[test]
    fn replay_changes_the_trace_once_the_buffer_fills() {
        let source = split_source(7);
        let params = ParameterSet::build(split_spec(), 7).unwrap();
        let mut rng = rngutil::stream(7, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let online = online_train(&params, &instance.trajectory, 0.05, AdaptScope::HeadOnly).unwrap();
        let mut er_rng = rngutil::stream(7, "er");
        let er = er_reservoir_train(
            &params,
            &instance.trajectory,
            0.05,
            AdaptScope::HeadOnly,
            200,
            8,
            &mut er_rng,
        )
        .unwrap();
        assert_ne!(online.params.flat(), er.params.flat());
    }

    #[test]
    fn fisher_is_nonnegative_and_duplication_invariant() {
        let source = split_source(8);
        let params = ParameterSet::build(split_spec(), 8).unwrap();
        let mut rng = rngutil::stream(8, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let sample = crate::problems::concat_batches(&instance.trajectory.batches);
        let state = ewc_fisher(&params, &sample, AdaptScope::HeadOnly).unwrap();
        for f in &state.fisher {
            assert!(f.data().iter().all(|&v| v >= 0.0));
        }
        let doubled = crate::problems::concat_batches(&[sample.clone(), sample]);
        let state2 = ewc_fisher(&params, &doubled, AdaptScope::HeadOnly).unwrap();
        for (a, b) in state.fisher.iter().zip(&state2.fisher) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn penalty_vanishes_at_the_anchor() {
        let params = ParameterSet::build(split_spec(), 9).unwrap();
        let source = split_source(9);
        let mut rng = rngutil::stream(9, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let sample = crate::problems::concat_batches(&instance.trajectory.batches);
        let state = ewc_fisher(&params, &sample, AdaptScope::HeadOnly).unwrap();
        let g = crate::graph::Graph::new();
        let net = params.mount(&g, false, true);
        let p = ewc_penalty(&net, &[state], AdaptScope::HeadOnly, 10.0).unwrap().unwrap();
        assert_eq!(p.item(), 0.0);
    }

    #[test]
    fn zero_lambda_is_plain_online_training() {
        let source = split_source(10);
        let params = ParameterSet::build(split_spec(), 10).unwrap();
        let mut rng = rngutil::stream(10, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let online = online_train(&params, &instance.trajectory, 0.05, AdaptScope::HeadOnly).unwrap();
        let ewc = ewc_train(&params, &instance.trajectory, 0.05, AdaptScope::HeadOnly, 0.0).unwrap();
        assert_eq!(online.params.flat(), ewc.outcome.params.flat());
        assert_eq!(online.step_losses, ewc.outcome.step_losses);
        // one boundary between the two blocks, anchors still recorded
        assert_eq!(ewc.boundary_anchors.len(), 1);
    }

    #[test]
    fn stronger_consolidation_stays_closer_to_the_anchor() {
        let source = split_source(11);
        let params = ParameterSet::build(split_spec(), 11).unwrap();
        let mut rng = rngutil::stream(11, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let mut distances = Vec::new();
        for lambda in [0.0, 1.0, 10.0, 100.0] {
            let out =
                ewc_train(&params, &instance.trajectory, 0.01, AdaptScope::HeadOnly, lambda).unwrap();
            let anchor = &out.boundary_anchors[0];
            let final_flat = out.outcome.params.flat();
            let d: f64 = anchor
                .iter()
                .zip(&final_flat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            distances.push(d);
        }
        for pair in distances.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "distance increased with lambda: {:?}",
                distances
            );
        }
    }

    #[test]
    fn shuffled_pass_visits_the_same_samples() {
        // With lr = 0 the model never moves, so mean per-step loss is a
        // pure function of the visited multiset (batches are equal size).
        let source = split_source(12);
        let params = ParameterSet::build(split_spec(), 12).unwrap();
        let mut rng = rngutil::stream(12, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let online = online_train(&params, &instance.trajectory, 0.0, AdaptScope::HeadOnly).unwrap();
        let mut iid_rng = rngutil::stream(12, "shuffle");
        let iid =
            approx_iid_train(&params, &instance.trajectory, 0.0, AdaptScope::HeadOnly, &mut iid_rng)
                .unwrap();
        assert_eq!(online.step_losses.len(), iid.step_losses.len());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let a = mean(&online.step_losses);
        let b = mean(&iid.step_losses);
        assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn single_batch_trajectory_shuffles_to_itself() {
        let source = split_source(13);
        let params = ParameterSet::build(split_spec(), 13).unwrap();
        let mut rng = rngutil::stream(13, "inst");
        let instance = source.sample_eval_instance(0, 10, &mut rng).unwrap();
        let single = Trajectory { batches: vec![crate::problems::concat_batches(&instance.trajectory.batches)] };
        let mut iid_rng = rngutil::stream(13, "shuffle");
        let iid = approx_iid_train(&params, &single, 0.0, AdaptScope::HeadOnly, &mut iid_rng).unwrap();
        assert_eq!(iid.step_losses.len(), 1);
        let online = online_train(&params, &single, 0.0, AdaptScope::HeadOnly).unwrap();
        assert!((iid.step_losses[0] - online.step_losses[0]).abs() < 1e-12);
    }

    #[test]
    fn table_rows_aggregate_across_seeds_and_round_trip_csv() {
        let source = split_source(14);
        let params = ParameterSet::build(split_spec(), 14).unwrap();
        let cfg = EvalConfig {
            k: 0,
            trajectories: 2,
            grid_points: 10,
            lr_grid: vec![0.1, 0.01],
            scope: AdaptScope::HeadOnly,
            seed: 14,
            warm_pln: false,
        };
        let methods = [
            RetentionMethod::Online,
            RetentionMethod::ErReservoir { capacity: 50, replay_batch: 4 },
        ];
        let mut rows = Vec::new();
        for m in &methods {
            let row = run_retention(m, &params, "test-rep", &source, &cfg, &[21, 22]).unwrap();
            assert!(row.metric_mean >= 0.0 && row.metric_mean <= 1.0);
            assert!(row.metric_std >= 0.0);
            assert_eq!(row.seeds, 2);
            assert_eq!(row.metric, "accuracy");
            assert_eq!(row.mode, "frozen");
            rows.push(row);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        append_retention_csv(&path, &rows[..1]).unwrap();
        append_retention_csv(&path, &rows[1..]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("method,representation,mode,lr,metric,metric_mean,metric_std,seeds"));
        assert!(text.contains("er-reservoir(c=50,r=4)"));
    }
}

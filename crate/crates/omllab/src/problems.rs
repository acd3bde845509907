//! Continual-learning problem generators.
//!
//! A problem is a short ordered family of prediction tasks; a trajectory
//! is a block-correlated stream of mini-batches in which every batch of
//! task i precedes every batch of task i+1. That correlation is the whole
//! point: i.i.d. shuffling is what removes the interference these
//! experiments measure.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;
use crate::rngutil;
use crate::tensor::Tensor;

pub const SINE_Z_RANGE: (f64, f64) = (-5.0, 5.0);
pub const SINE_AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const SINE_PHASE_RANGE: (f64, f64) = (0.0, std::f64::consts::PI);

#[derive(Clone, Copy, Debug)]
pub struct SineFunction {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineFunction {
    pub fn target(&self, z: f64) -> f64 {
        self.amplitude * (z + self.phase).sin()
    }
}

/// A regression problem made of several sine functions, one block each.
#[derive(Clone, Debug)]
pub struct SineProblem {
    pub functions: Vec<SineFunction>,
}

/// A classification problem over an ordered list of dataset classes.
#[derive(Clone, Debug)]
pub struct SplitProblem {
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum CLPProblem {
    Sine(SineProblem),
    Split(SplitProblem),
}

impl CLPProblem {
    pub fn blocks(&self) -> usize {
        match self {
            CLPProblem::Sine(p) => p.functions.len(),
            CLPProblem::Split(p) => p.classes.len(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Target {
    /// Regression targets, (batch, 1).
    Values(Tensor),
    /// Class labels, one per batch row.
    Labels(Vec<usize>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Values(t) => t.shape()[0],
            Target::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// (batch, input_dim)
    pub inputs: Tensor,
    pub targets: Target,
    /// Index of the task block this batch was drawn from; evaluation
    /// batches that mix blocks use the first contributing block.
    pub block: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub batches: Vec<Batch>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn blocks(&self) -> usize {
        self.batches.iter().map(|b| b.block + 1).max().unwrap_or(0)
    }
}

pub fn sample_sine_problem(rng: &mut ChaCha8Rng, n_functions: usize) -> SineProblem {
    assert!(n_functions >= 1, "a sine problem needs at least one function");
    let functions = (0..n_functions)
        .map(|_| SineFunction {
            amplitude: rng.gen_range(SINE_AMPLITUDE_RANGE.0..=SINE_AMPLITUDE_RANGE.1),
            phase: rng.gen_range(SINE_PHASE_RANGE.0..=SINE_PHASE_RANGE.1),
        })
        .collect();
    SineProblem { functions }
}

/// Input layout: [z, one-hot(n)] with n counted from 1.
pub fn sine_input_encode(z: f64, n: usize, n_functions: usize) -> Result<Vec<f64>, DataError> {
    if n == 0 || n > n_functions {
        return Err(DataError::FunctionIndexOutOfRange { index: n, count: n_functions });
    }
    let mut v = vec![0.0; 1 + n_functions];
    v[0] = z;
    v[n] = 1.0;
    Ok(v)
}

/// Recover (z, n) from an encoded input row.
pub fn sine_input_decode(input: &[f64]) -> Option<(f64, usize)> {
    let n = input.iter().skip(1).position(|&v| v == 1.0)? + 1;
    Some((input[0], n))
}

pub fn sine_input_dim(n_functions: usize) -> usize {
    1 + n_functions
}

/// Block-ordered sine trajectory of `k` mini-batches, k/blocks per
/// function, inputs z ~ U[-5, 5].
pub fn sample_sine_trajectory(
    problem: &SineProblem,
    k: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, DataError> {
    assert!(batch_size >= 1);
    if k == 0 {
        return Ok(Trajectory::default());
    }
    let blocks = problem.functions.len();
    if k % blocks != 0 {
        return Err(DataError::IndivisibleTrajectory { k, blocks });
    }
    let per_block = k / blocks;
    let n = blocks;
    let mut batches = Vec::with_capacity(k);
    for (block, f) in problem.functions.iter().enumerate() {
        for _ in 0..per_block {
            let mut rows = Vec::with_capacity(batch_size);
            let mut ys = Vec::with_capacity(batch_size);
            for _ in 0..batch_size {
                let z = rng.gen_range(SINE_Z_RANGE.0..=SINE_Z_RANGE.1);
                rows.push(sine_input_encode(z, block + 1, n).expect("block index in range"));
                ys.push(f.target(z));
            }
            batches.push(Batch {
                inputs: Tensor::from_rows(&rows).expect("finite inputs"),
                targets: Target::Values(Tensor::matrix(batch_size, 1, ys).expect("finite targets")),
                block,
            });
        }
    }
    Ok(Trajectory { batches })
}

/// A batch of uniformly random (function, z) pairs from the problem, used
/// as the held-out meta-test set of one adaptation episode.
pub fn sample_sine_eval_batch(problem: &SineProblem, size: usize, rng: &mut ChaCha8Rng) -> Batch {
    let n = problem.functions.len();
    let mut rows = Vec::with_capacity(size);
    let mut ys = Vec::with_capacity(size);
    let mut first_block = 0;
    for i in 0..size {
        let block = rng.gen_range(0..n);
        if i == 0 {
            first_block = block;
        }
        let z = rng.gen_range(SINE_Z_RANGE.0..=SINE_Z_RANGE.1);
        rows.push(sine_input_encode(z, block + 1, n).expect("block index in range"));
        ys.push(problem.functions[block].target(z));
    }
    Batch {
        inputs: Tensor::from_rows(&rows).expect("finite inputs"),
        targets: Target::Values(Tensor::matrix(size, 1, ys).expect("finite targets")),
        block: first_block,
    }
}

/// Evaluation grid for one sine block: `points` evenly spaced z values
/// across the input range, exact targets attached.
pub fn sine_block_eval(problem: &SineProblem, block: usize, points: usize) -> Batch {
    assert!(block < problem.functions.len());
    assert!(points >= 2);
    let n = problem.functions.len();
    let f = problem.functions[block];
    let (lo, hi) = SINE_Z_RANGE;
    let mut rows = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for i in 0..points {
        let z = lo + (hi - lo) * (i as f64) / ((points - 1) as f64);
        rows.push(sine_input_encode(z, block + 1, n).expect("block index in range"));
        ys.push(f.target(z));
    }
    Batch {
        inputs: Tensor::from_rows(&rows).expect("finite inputs"),
        targets: Target::Values(Tensor::matrix(points, 1, ys).expect("finite targets")),
        block,
    }
}

pub const TRAIN_PER_CLASS: usize = 15;
pub const TEST_PER_CLASS: usize = 5;
const CLASS_SIZE: usize = TRAIN_PER_CLASS + TEST_PER_CLASS;

#[derive(Clone, Debug)]
pub struct ClassStore {
    pub name: String,
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

/// Feature vectors grouped by class with a fixed per-class train/test
/// split. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Dataset {
    dim: usize,
    classes: Vec<ClassStore>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, i: usize) -> &ClassStore {
        &self.classes[i]
    }

    /// Disjoint class-index pools: the first `n_meta_train` classes for
    /// meta-training, the rest for meta-testing.
    pub fn split_pools(&self, n_meta_train: usize) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        if n_meta_train == 0 || n_meta_train >= self.classes.len() {
            return Err(DataError::InsufficientClasses {
                available: self.classes.len(),
                requested: n_meta_train + 1,
            });
        }
        Ok(((0..n_meta_train).collect(), (n_meta_train..self.classes.len()).collect()))
    }
}

/// An ordered draw of `n_classes` distinct classes from `pool`.
pub fn sample_split_problem(
    dataset: &Dataset,
    pool: &[usize],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitProblem, DataError> {
    debug_assert!(pool.iter().all(|&c| c < dataset.n_classes()));
    if pool.len() < n_classes {
        return Err(DataError::InsufficientClasses { available: pool.len(), requested: n_classes });
    }
    let mut classes: Vec<usize> = pool.to_vec();
    classes.partial_shuffle(rng, n_classes);
    classes.truncate(n_classes);
    Ok(SplitProblem { classes })
}

/// Block-ordered classification trajectory: for each class in order,
/// `images_per_class` train images drawn without replacement, chunked
/// into mini-batches of `batch_size`.
pub fn sample_split_trajectory(
    problem: &SplitProblem,
    dataset: &Dataset,
    images_per_class: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, DataError> {
    assert!(batch_size >= 1);
    if images_per_class == 0 {
        return Ok(Trajectory::default());
    }
    if images_per_class % batch_size != 0 {
        return Err(DataError::IndivisibleBatch { per_class: images_per_class, batch: batch_size });
    }
    let mut batches = Vec::new();
    for (block, &class) in problem.classes.iter().enumerate() {
        let store = dataset.class(class);
        if store.train.len() < images_per_class {
            return Err(DataError::InsufficientImages {
                class: store.name.clone(),
                available: store.train.len(),
                requested: images_per_class,
            });
        }
        let mut order: Vec<usize> = (0..store.train.len()).collect();
        order.partial_shuffle(rng, images_per_class);
        for chunk in order[..images_per_class].chunks(batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| store.train[i].as_slice()).collect();
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
            batches.push(Batch {
                inputs: Tensor::from_rows(&rows).expect("finite inputs"),
                targets: Target::Labels(vec![class; chunk.len()]),
                block,
            });
        }
    }
    Ok(Trajectory { batches })
}

/// Held-out meta-test batch for a split problem: `size` uniformly random
/// (class, train image) pairs.
pub fn sample_split_eval_batch(
    problem: &SplitProblem,
    dataset: &Dataset,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let mut rows = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    let mut first_block = 0;
    for i in 0..size {
        let block = rng.gen_range(0..problem.classes.len());
        if i == 0 {
            first_block = block;
        }
        let class = problem.classes[block];
        let store = dataset.class(class);
        let img = rng.gen_range(0..store.train.len());
        rows.push(store.train[img].clone());
        labels.push(class);
    }
    Batch {
        inputs: Tensor::from_rows(&rows).expect("finite inputs"),
        targets: Target::Labels(labels),
        block: first_block,
    }
}

/// Test-split evaluation batch for one block of a split problem.
pub fn split_block_eval(problem: &SplitProblem, dataset: &Dataset, block: usize) -> Batch {
    let class = problem.classes[block];
    let store = dataset.class(class);
    let rows: Vec<Vec<f64>> = store.test.clone();
    Batch {
        inputs: Tensor::from_rows(&rows).expect("finite inputs"),
        targets: Target::Labels(vec![class; store.test.len()]),
        block,
    }
}

/// Hermetic classification data: each class is an isotropic Gaussian
/// cluster of total radius 0.3 (per-coordinate sigma 0.3/sqrt(dim))
/// around its own random unit-norm center, 20 samples per class split
/// 15/5. The radius is measured across the whole vector so class
/// separability does not degrade as dim grows.
pub fn synthetic_class_dataset(n_classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Dataset {
    assert!(n_classes >= 1 && dim >= 1);
    let sigma = 0.3 / (dim as f64).sqrt();
    let mut classes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut center: Vec<f64> = (0..dim).map(|_| rngutil::gaussian(rng)).collect();
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        center.iter_mut().for_each(|v| *v /= norm);
        let mut samples = Vec::with_capacity(CLASS_SIZE);
        for _ in 0..CLASS_SIZE {
            samples.push(
                center.iter().map(|&m| m + sigma * rngutil::gaussian(rng)).collect::<Vec<f64>>(),
            );
        }
        let test = samples.split_off(TRAIN_PER_CLASS);
        classes.push(ClassStore { name: format!("class_{:04}", c), train: samples, test });
    }
    Dataset { dim, classes }
}

/// Ingest a two-level directory tree of grayscale PNGs
/// (`root/<class>/<image>.png`), each downsampled to
/// `resolution` x `resolution` and scaled to [0, 1]. Classes and files
/// are ordered by name so the 15/5 split never depends on readdir order;
/// classes with fewer than 20 images are skipped with a warning.
pub fn load_image_dataset(root: &Path, resolution: u32) -> Result<Dataset, DataError> {
    assert!(resolution >= 1);
    let io = |p: &Path, e: std::io::Error| DataError::Io { path: p.display().to_string(), source: e };
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| io(root, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io(root, e))?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();

    let dim = (resolution * resolution) as usize;
    let mut classes = Vec::new();
    for dir in class_dirs {
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| io(&dir, e))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io(&dir, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
            .collect();
        files.sort();
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if files.len() < CLASS_SIZE {
            eprintln!(
                "warning: class `{}` has {} images, {} required; skipping",
                name,
                files.len(),
                CLASS_SIZE
            );
            continue;
        }
        let mut samples = Vec::with_capacity(CLASS_SIZE);
        for path in files.iter().take(CLASS_SIZE) {
            let img = image::open(path).map_err(|e| DataError::Decode {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            let img = img
                .resize_exact(resolution, resolution, image::imageops::FilterType::Triangle)
                .into_luma8();
            samples.push(img.pixels().map(|p| p.0[0] as f64 / 255.0).collect::<Vec<f64>>());
        }
        let test = samples.split_off(TRAIN_PER_CLASS);
        classes.push(ClassStore { name, train: samples, test });
    }
    if classes.is_empty() {
        return Err(DataError::EmptyDataset { path: root.display().to_string() });
    }
    Ok(Dataset { dim, classes })
}

/// One meta-iteration's data: a block-correlated training stream plus
/// fresh draws from the same problem with the same block layout, used as
/// the held-out set of the episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub train: Trajectory,
    pub test: Trajectory,
}

/// Where meta-training episodes come from. Sampling is pure given the
/// rng, so distinct runs can share one source read-only.
#[derive(Clone, Debug)]
pub enum ProblemSource {
    Sine {
        n_functions: usize,
        batch_size: usize,
    },
    Split {
        dataset: Dataset,
        pool: Vec<usize>,
        classes_per_problem: usize,
        images_per_class: usize,
        batch_size: usize,
    },
}

impl ProblemSource {
    pub fn input_dim(&self) -> usize {
        match self {
            ProblemSource::Sine { n_functions, .. } => sine_input_dim(*n_functions),
            ProblemSource::Split { dataset, .. } => dataset.dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ProblemSource::Sine { .. } => 1,
            ProblemSource::Split { dataset, .. } => dataset.n_classes(),
        }
    }

    /// True trajectory length of one episode. Sine episodes take it from
    /// the config; split episodes are shaped by the class list.
    pub fn episode_len(&self, configured_k: usize) -> usize {
        match self {
            ProblemSource::Sine { .. } => configured_k,
            ProblemSource::Split { classes_per_problem, images_per_class, batch_size, .. } => {
                classes_per_problem * images_per_class / batch_size
            }
        }
    }

    pub fn sample_episode(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<Episode, DataError> {
        match self {
            ProblemSource::Sine { n_functions, batch_size } => {
                let problem = sample_sine_problem(rng, *n_functions);
                let train = sample_sine_trajectory(&problem, k, *batch_size, rng)?;
                let test = sample_sine_trajectory(&problem, k, *batch_size, rng)?;
                Ok(Episode { train, test })
            }
            ProblemSource::Split {
                dataset,
                pool,
                classes_per_problem,
                images_per_class,
                batch_size,
            } => {
                let problem = sample_split_problem(dataset, pool, *classes_per_problem, rng)?;
                let train =
                    sample_split_trajectory(&problem, dataset, *images_per_class, *batch_size, rng)?;
                let test =
                    sample_split_trajectory(&problem, dataset, *images_per_class, *batch_size, rng)?;
                Ok(Episode { train, test })
            }
        }
    }
}

/// One meta-test run's worth of data: the correlated online trajectory
/// plus a held-out evaluation batch per block. Regression blocks are
/// evaluated on an even z grid, classification blocks on the test split.
#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub trajectory: Trajectory,
    pub block_evals: Vec<Batch>,
}

impl ProblemSource {
    pub fn sample_eval_instance(
        &self,
        k: usize,
        grid_points: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EvalInstance, DataError> {
        match self {
            ProblemSource::Sine { n_functions, batch_size } => {
                let problem = sample_sine_problem(rng, *n_functions);
                let trajectory = sample_sine_trajectory(&problem, k, *batch_size, rng)?;
                let block_evals =
                    (0..*n_functions).map(|b| sine_block_eval(&problem, b, grid_points)).collect();
                Ok(EvalInstance { trajectory, block_evals })
            }
            ProblemSource::Split {
                dataset,
                pool,
                classes_per_problem,
                images_per_class,
                batch_size,
            } => {
                let problem = sample_split_problem(dataset, pool, *classes_per_problem, rng)?;
                let trajectory =
                    sample_split_trajectory(&problem, dataset, *images_per_class, *batch_size, rng)?;
                let block_evals = (0..*classes_per_problem)
                    .map(|b| split_block_eval(&problem, dataset, b))
                    .collect();
                Ok(EvalInstance { trajectory, block_evals })
            }
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            ProblemSource::Sine { batch_size, .. } => *batch_size,
            ProblemSource::Split { batch_size, .. } => *batch_size,
        }
    }

    /// Fixed data behind i.i.d. pretraining. Regression sources pin one
    /// sampled problem: slot encodings alias across problems, so fresh
    /// problems per batch would average every slot to the zero function
    /// and leave nothing to learn. Split sources need no extra state —
    /// their class pool is already fixed.
    pub fn pretrain_set(&self, rng: &mut ChaCha8Rng) -> PretrainSet {
        match self {
            ProblemSource::Sine { n_functions, .. } => {
                PretrainSet { sine: Some(sample_sine_problem(rng, *n_functions)) }
            }
            ProblemSource::Split { .. } => PretrainSet { sine: None },
        }
    }

    /// One i.i.d. batch for baselines trained without episode structure:
    /// random points of the pinned problem for regression sources, or
    /// random (pool class, train image) pairs labeled with global class
    /// ids for split sources.
    pub fn sample_pretrain_batch(&self, set: &PretrainSet, size: usize, rng: &mut ChaCha8Rng) -> Batch {
        assert!(size >= 1);
        match self {
            ProblemSource::Sine { .. } => {
                let problem = set.sine.as_ref().expect("regression pretrain set pins a problem");
                sample_sine_eval_batch(problem, size, rng)
            }
            ProblemSource::Split { dataset, pool, .. } => {
                assert!(!pool.is_empty());
                let mut rows = Vec::with_capacity(size);
                let mut labels = Vec::with_capacity(size);
                for _ in 0..size {
                    let class = pool[rng.gen_range(0..pool.len())];
                    let store = dataset.class(class);
                    let img = rng.gen_range(0..store.train.len());
                    rows.push(store.train[img].clone());
                    labels.push(class);
                }
                Batch {
                    inputs: Tensor::from_rows(&rows).expect("finite inputs"),
                    targets: Target::Labels(labels),
                    block: 0,
                }
            }
        }
    }
}

/// Data pinned at the start of an i.i.d. pretraining run; see
/// [`ProblemSource::pretrain_set`].
#[derive(Clone, Debug)]
pub struct PretrainSet {
    sine: Option<SineProblem>,
}

/// Merge batches into one (targets must agree in kind). The result keeps
/// the first batch's block index.
pub fn concat_batches(batches: &[Batch]) -> Batch {
    assert!(!batches.is_empty());
    let inputs: Vec<&Tensor> = batches.iter().map(|b| &b.inputs).collect();
    let inputs = Tensor::concat_rows(&inputs).expect("uniform widths");
    let targets = match &batches[0].targets {
        Target::Values(_) => {
            let ts: Vec<&Tensor> = batches
                .iter()
                .map(|b| match &b.targets {
                    Target::Values(t) => t,
                    Target::Labels(_) => panic!("mixed target kinds"),
                })
                .collect();
            Target::Values(Tensor::concat_rows(&ts).expect("uniform widths"))
        }
        Target::Labels(_) => {
            let mut all = Vec::new();
            for b in batches {
                match &b.targets {
                    Target::Labels(l) => all.extend_from_slice(l),
                    Target::Values(_) => panic!("mixed target kinds"),
                }
            }
            Target::Labels(all)
        }
    };
    Batch { inputs, targets, block: batches[0].block }
}

/// Debug dump: one CSV row per sample with its block and step.
pub fn write_trajectory_csv(trajectory: &Trajectory, path: &Path) -> Result<(), DataError> {
    let io = |e: std::io::Error| DataError::Io { path: path.display().to_string(), source: e };
    let mut f = fs::File::create(path).map_err(io)?;
    writeln!(f, "block_index,step,input,target").map_err(io)?;
    for (step, batch) in trajectory.batches.iter().enumerate() {
        let rows = batch.inputs.shape()[0];
        for r in 0..rows {
            let input = batch
                .inputs
                .row(r)
                .iter()
                .map(|v| format!("{}", v))
                .collect::<Vec<_>>()
                .join(";");
            let target = match &batch.targets {
                Target::Values(t) => format!("{}", t.row(r)[0]),
                Target::Labels(l) => format!("{}", l[r]),
            };
            writeln!(f, "{},{},{},{}", batch.block, step, input, target).map_err(io)?;
        }
    }
    Ok(())
}

//! Fully connected model split into a representation trunk and a
//! prediction head.
//!
//! The trunk (the first `rln_depth` layers) owns the meta-learned
//! parameters; the head owns the task parameters that are adapted online.
//! The split is positional: parameters keep their place in one layer list
//! and every consumer slices at the same index, so the two sets can never
//! overlap.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DataError, GraphError};
use crate::graph::{Graph, Value};
use crate::rngutil;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Widths of the hidden layers; the output layer is appended after.
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Number of leading layers owned by the representation trunk,
    /// 1..=hidden.len(). The representation is the rectified activation
    /// of layer `rln_depth`.
    pub rln_depth: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, message: String| Err(ConfigError::Invalid { field, message });
        if self.input_dim == 0 {
            return bad("network.input_dim", "must be positive".into());
        }
        if self.output_dim == 0 {
            return bad("network.output_dim", "must be positive".into());
        }
        if self.hidden.is_empty() {
            return bad("network.hidden", "at least one hidden layer required".into());
        }
        if let Some(w) = self.hidden.iter().find(|&&w| w == 0) {
            return bad("network.hidden", format!("degenerate width {}", w));
        }
        if self.rln_depth == 0 || self.rln_depth > self.hidden.len() {
            return bad(
                "network.rln_depth",
                format!("must lie in 1..={}, got {}", self.hidden.len(), self.rln_depth),
            );
        }
        Ok(())
    }

    pub fn total_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Width of the representation produced by the trunk.
    pub fn representation_dim(&self) -> usize {
        self.hidden[self.rln_depth - 1]
    }

    /// (fan_in, fan_out) of every layer in declaration order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.total_layers());
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// (fan_in, fan_out)
    pub weight: Tensor,
    /// (fan_out,)
    pub bias: Tensor,
}

/// All parameters of one network, an immutable snapshot between updates.
#[derive(Clone, Debug)]
pub struct ParameterSet {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl ParameterSet {
    /// Weights from a zero-mean uniform fan-in scheme, biases zero.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = rngutil::stream(seed, "network-init");
        Self::init_from_rng(spec, &mut rng)
    }

    pub fn init_from_rng(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self, ConfigError> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.total_layers());
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, data).expect("finite init"),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        Ok(ParameterSet { spec, layers })
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Self {
        debug_assert_eq!(layers.len(), spec.total_layers());
        ParameterSet { spec, layers }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Trunk parameters (meta-learned).
    pub fn rln_layers(&self) -> &[Layer] {
        &self.layers[..self.spec.rln_depth]
    }

    /// Head parameters (task-adapted).
    pub fn pln_layers(&self) -> &[Layer] {
        &self.layers[self.spec.rln_depth..]
    }

    /// A copy with the head layers replaced.
    pub fn with_pln(&self, pln: Vec<Layer>) -> Self {
        debug_assert_eq!(pln.len(), self.layers.len() - self.spec.rln_depth);
        let mut layers = self.layers[..self.spec.rln_depth].to_vec();
        layers.extend(pln);
        ParameterSet { spec: self.spec.clone(), layers }
    }

    /// A copy with freshly drawn head parameters (the task head is
    /// re-randomized at the start of every adaptation episode).
    pub fn with_fresh_pln(&self, rng: &mut ChaCha8Rng) -> Self {
        let dims = self.spec.layer_dims();
        let mut layers = self.layers[..self.spec.rln_depth].to_vec();
        for &(fan_in, fan_out) in &dims[self.spec.rln_depth..] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, data).expect("finite init"),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        ParameterSet { spec: self.spec.clone(), layers }
    }

    /// All parameters flattened in declaration order (per layer: weight
    /// row-major, then bias).
    /// Same weights, different trunk/head boundary. Used by the split
    /// search of the pretraining baseline.
    pub fn with_rln_depth(&self, rln_depth: usize) -> Result<Self, ConfigError> {
        let spec = NetworkSpec { rln_depth, ..self.spec.clone() };
        spec.validate()?;
        Ok(ParameterSet { spec, layers: self.layers.clone() })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(layer.bias.data());
        }
        out
    }

    pub fn from_flat(spec: NetworkSpec, flat: &[f64]) -> Result<Self, ConfigError> {
        spec.validate()?;
        if flat.len() != spec.parameter_count() {
            return Err(ConfigError::Invalid {
                field: "parameters",
                message: format!("expected {} values, got {}", spec.parameter_count(), flat.len()),
            });
        }
        let mut layers = Vec::with_capacity(spec.total_layers());
        let mut off = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let w = Tensor::matrix(fan_in, fan_out, flat[off..off + fan_in * fan_out].to_vec())
                .map_err(|_| ConfigError::Invalid { field: "parameters", message: "non-finite value".into() })?;
            off += fan_in * fan_out;
            let b = Tensor::vector(flat[off..off + fan_out].to_vec())
                .map_err(|_| ConfigError::Invalid { field: "parameters", message: "non-finite value".into() })?;
            off += fan_out;
            layers.push(Layer { weight: w, bias: b });
        }
        Ok(ParameterSet { spec, layers })
    }

    /// Mount the parameters onto a graph. Each flag controls whether that
    /// partition's leaves require gradients.
    pub fn mount(&self, g: &Graph, trainable_rln: bool, trainable_pln: bool) -> MountedNetwork {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let trainable = if i < self.spec.rln_depth { trainable_rln } else { trainable_pln };
                let put = |t: Tensor| if trainable { g.param(t) } else { g.constant(t) };
                MountedLayer { weight: put(layer.weight.clone()), bias: put(layer.bias.clone()) }
            })
            .collect();
        MountedNetwork { rln_depth: self.spec.rln_depth, layers }
    }
}

/// One layer's parameters as graph values; after an in-graph update these
/// are intermediate nodes rather than leaves.
#[derive(Clone)]
pub struct MountedLayer {
    pub weight: Value,
    pub bias: Value,
}

impl MountedLayer {
    pub fn apply(&self, x: &Value) -> Result<Value, GraphError> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

/// A network's parameters bound to one graph.
#[derive(Clone)]
pub struct MountedNetwork {
    rln_depth: usize,
    pub layers: Vec<MountedLayer>,
}

pub struct ForwardPass {
    /// Post-relu activation of the trunk's last layer, (batch, d).
    pub representation: Value,
    /// (batch, output_dim)
    pub output: Value,
}

impl MountedNetwork {
    pub fn rln_depth(&self) -> usize {
        self.rln_depth
    }

    pub fn graph(&self) -> &Graph {
        self.layers[0].weight.graph()
    }

    pub fn rln(&self) -> &[MountedLayer] {
        &self.layers[..self.rln_depth]
    }

    pub fn pln(&self) -> &[MountedLayer] {
        &self.layers[self.rln_depth..]
    }

    /// A copy with the head values replaced (used after an in-graph
    /// adaptation step).
    pub fn with_pln(&self, pln: Vec<MountedLayer>) -> Self {
        debug_assert_eq!(pln.len(), self.layers.len() - self.rln_depth);
        let mut layers = self.layers[..self.rln_depth].to_vec();
        layers.extend(pln);
        MountedNetwork { rln_depth: self.rln_depth, layers }
    }

    /// Flat parameter values, declaration order.
    pub fn params(&self) -> Vec<Value> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn rln_params(&self) -> Vec<Value> {
        self.rln().iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn pln_params(&self) -> Vec<Value> {
        self.pln().iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    /// Full forward pass over a (batch, input_dim) matrix. The rectifier
    /// follows every layer except the last.
    pub fn forward(&self, x: &Value) -> Result<ForwardPass, GraphError> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut representation = None;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                h = h.relu()?;
            }
            if i + 1 == self.rln_depth {
                representation = Some(h.clone());
            }
        }
        Ok(ForwardPass { representation: representation.expect("rln_depth >= 1"), output: h })
    }

    /// Numeric snapshot of the current parameter values.
    pub fn snapshot(&self, spec: &NetworkSpec) -> ParameterSet {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { weight: l.weight.tensor(), bias: l.bias.tensor() })
            .collect();
        ParameterSet::from_layers(spec.clone(), layers)
    }
}

/// The trunk's representation of a batch, through a throwaway graph.
pub fn representation_of(params: &ParameterSet, x: &Tensor) -> Result<Tensor, GraphError> {
    let g = Graph::new();
    let net = params.mount(&g, false, false);
    let pass = net.forward(&g.constant(x.clone()))?;
    Ok(pass.representation.tensor())
}

/// Model predictions for a batch, through a throwaway graph.
pub fn predict(params: &ParameterSet, x: &Tensor) -> Result<Tensor, GraphError> {
    let g = Graph::new();
    let net = params.mount(&g, false, false);
    let pass = net.forward(&g.constant(x.clone()))?;
    Ok(pass.output.tensor())
}

const MANIFEST_FILE: &str = "manifest.txt";
const PARAMS_FILE: &str = "params.f64";
const FORMAT_TAG: &str = "checkpoint-v1";

/// Checkpoint as stored on disk: the parameters plus where they came from.
pub struct Checkpoint {
    pub params: ParameterSet,
    pub seed: u64,
    pub source: String,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

fn decode_err(path: &Path, detail: impl Into<String>) -> DataError {
    DataError::Decode { path: path.display().to_string(), detail: detail.into() }
}

/// Write `manifest.txt` and `params.f64` (flat little-endian f64 in
/// declaration order) into `dir`. Round-trips bit-exactly; the manifest
/// carries no volatile fields, so identical runs write identical bytes.
pub fn save_checkpoint(dir: &Path, params: &ParameterSet, seed: u64, source: &str) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let spec = params.spec();
    let manifest = format!(
        "format: {}\ninput_dim: {}\nhidden: {}\noutput_dim: {}\nrln_depth: {}\nseed: {}\nsource: {}\nparameters: {}\n",
        FORMAT_TAG,
        spec.input_dim,
        spec.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" "),
        spec.output_dim,
        spec.rln_depth,
        seed,
        source,
        spec.parameter_count(),
    );
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| io_err(&mpath, e))?;
    let ppath = dir.join(PARAMS_FILE);
    let mut bytes = Vec::with_capacity(8 * spec.parameter_count());
    for v in params.flat() {
        bytes.write_all(&v.to_le_bytes()).expect("vec write");
    }
    fs::write(&ppath, bytes).map_err(|e| io_err(&ppath, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, DataError> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let mut fields = std::collections::BTreeMap::new();
    for line in manifest.lines() {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| decode_err(&mpath, format!("missing field `{}`", k)));
    if get("format")? != FORMAT_TAG {
        return Err(decode_err(&mpath, format!("unsupported format `{}`", get("format")?)));
    }
    let parse_usize = |k: &str| -> Result<usize, DataError> {
        get(k)?.parse().map_err(|_| decode_err(&mpath, format!("field `{}` is not a number", k)))
    };
    let hidden: Vec<usize> = get("hidden")?
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| decode_err(&mpath, "bad width in `hidden`")))
        .collect::<Result<_, _>>()?;
    let spec = NetworkSpec {
        input_dim: parse_usize("input_dim")?,
        hidden,
        output_dim: parse_usize("output_dim")?,
        rln_depth: parse_usize("rln_depth")?,
    };
    let seed: u64 = get("seed")?.parse().map_err(|_| decode_err(&mpath, "field `seed` is not a number"))?;
    let source = get("source")?.clone();
    let declared: usize = parse_usize("parameters")?;
    if declared != spec.parameter_count() {
        return Err(decode_err(&mpath, format!(
            "manifest declares {} parameters, spec implies {}",
            declared,
            spec.parameter_count()
        )));
    }

    let ppath = dir.join(PARAMS_FILE);
    let bytes = fs::read(&ppath).map_err(|e| io_err(&ppath, e))?;
    if bytes.len() != 8 * declared {
        return Err(decode_err(&ppath, format!("expected {} bytes, got {}", 8 * declared, bytes.len())));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let params = ParameterSet::from_flat(spec, &flat)
        .map_err(|e| decode_err(&ppath, e.to_string()))?;
    Ok(Checkpoint { params, seed, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{backward, mse};

    fn small_spec() -> NetworkSpec {
        NetworkSpec { input_dim: 3, hidden: vec![8, 8], output_dim: 2, rln_depth: 1 }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // 9 layers of width 300 with the trunk owning the first 6.
        let spec = NetworkSpec {
            input_dim: 11,
            hidden: vec![300; 8],
            output_dim: 1,
            rln_depth: 6,
        };
        let by_hand = (11 * 300 + 300) + 7 * (300 * 300 + 300) + (300 + 1);
        assert_eq!(spec.parameter_count(), by_hand);
        assert_eq!(spec.total_layers(), 9);
        assert_eq!(spec.representation_dim(), 300);
        let params = ParameterSet::build(spec, 3).unwrap();
        assert_eq!(params.flat().len(), by_hand);
    }

    #[test]
    fn same_seed_reproduces_parameters() {
        let a = ParameterSet::build(small_spec(), 42).unwrap();
        let b = ParameterSet::build(small_spec(), 42).unwrap();
        let c = ParameterSet::build(small_spec(), 43).unwrap();
        assert_eq!(a.flat(), b.flat());
        assert_ne!(a.flat(), c.flat());
    }

    #[test]
    fn biases_start_at_zero_and_weights_in_bound() {
        let params = ParameterSet::build(small_spec(), 1).unwrap();
        for layer in params.layers() {
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
            let bound = 1.0 / (layer.weight.shape()[0] as f64).sqrt();
            assert!(layer.weight.data().iter().all(|&w| w.abs() < bound));
        }
    }

    #[test]
    fn degenerate_widths_are_rejected() {
        let mut spec = small_spec();
        spec.hidden[1] = 0;
        assert!(ParameterSet::build(spec, 1).is_err());
        let mut spec = small_spec();
        spec.rln_depth = 3; // only 2 hidden layers
        assert!(ParameterSet::build(spec, 1).is_err());
    }

    #[test]
    fn zero_input_maps_to_zero_everywhere() {
        let params = ParameterSet::build(small_spec(), 5).unwrap();
        let x = Tensor::matrix(4, 3, vec![0.0; 12]).unwrap();
        let repr = representation_of(&params, &x).unwrap();
        let out = predict(&params, &x).unwrap();
        assert!(repr.data().iter().all(|&v| v == 0.0));
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(repr.shape(), &[4, 8]);
        assert_eq!(out.shape(), &[4, 2]);
    }

    #[test]
    fn representation_is_nonnegative() {
        let params = ParameterSet::build(small_spec(), 9).unwrap();
        let x = Tensor::matrix(5, 3, (0..15).map(|i| (i as f64) * 0.37 - 2.0).collect()).unwrap();
        let repr = representation_of(&params, &x).unwrap();
        assert!(repr.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn prediction_composes_head_over_representation() {
        let params = ParameterSet::build(small_spec(), 11).unwrap();
        let x = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64) * 0.5 - 2.0).collect()).unwrap();
        let direct = predict(&params, &x).unwrap();

        let g = Graph::new();
        let net = params.mount(&g, false, false);
        let pass = net.forward(&g.constant(x)).unwrap();
        let mut h = pass.representation;
        let last = net.pln().len() - 1;
        for (i, layer) in net.pln().iter().enumerate() {
            h = layer.apply(&h).unwrap();
            if i < last {
                h = h.relu().unwrap();
            }
        }
        assert_eq!(direct.data(), h.tensor().data());
    }

    #[test]
    fn zeroed_head_gives_zero_logits() {
        let built = ParameterSet::build(small_spec(), 13).unwrap();
        let zeroed: Vec<Layer> = built
            .pln_layers()
            .iter()
            .map(|l| Layer {
                weight: Tensor::zeros(l.weight.shape().to_vec()),
                bias: Tensor::zeros(l.bias.shape().to_vec()),
            })
            .collect();
        let params = built.with_pln(zeroed);
        let x = Tensor::matrix(2, 3, vec![0.4, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
        let out = predict(&params, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn representation_ignores_head_parameters() {
        let params = ParameterSet::build(small_spec(), 17).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -0.5, 0.25, 0.0, 2.0, -1.0]).unwrap();
        let before = representation_of(&params, &x).unwrap();
        let scrambled: Vec<Layer> = params
            .pln_layers()
            .iter()
            .map(|l| Layer {
                weight: Tensor::from_vec(
                    l.weight.shape().to_vec(),
                    l.weight.data().iter().map(|w| w * -3.0 + 0.1).collect(),
                )
                .unwrap(),
                bias: l.bias.clone(),
            })
            .collect();
        let after = representation_of(&params.with_pln(scrambled), &x).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn gradient_partition_does_not_leak() {
        let params = ParameterSet::build(small_spec(), 19).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.3, -0.7]).unwrap();
        let y = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();

        // Trunk gradients of a loss that reaches only the representation
        // must exist, while head gradients of that loss are zero.
        let g = Graph::new();
        let net = params.mount(&g, true, true);
        let pass = net.forward(&g.constant(x.clone())).unwrap();
        let repr_loss = pass.representation.sum_all().unwrap();
        let grads = backward(&repr_loss, &net.params(), false).unwrap();
        let rln_count = net.rln_params().len();
        for (i, gv) in grads.values().enumerate() {
            let zero = gv.tensor().data().iter().all(|&v| v == 0.0);
            if i < rln_count {
                assert!(!zero, "trunk gradient {} vanished", i);
            } else {
                assert!(zero, "head gradient {} leaked into representation", i);
            }
        }

        // Restricting backward to head leaves still covers the full loss.
        let full_loss = mse(&pass.output, &g.constant(y)).unwrap();
        let head_grads = backward(&full_loss, &net.pln_params(), false).unwrap();
        assert!(head_grads
            .values()
            .any(|gv| gv.tensor().data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let params = ParameterSet::build(small_spec(), 23).unwrap();
        save_checkpoint(dir.path(), &params, 23, "unit-test").unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.params.flat(), params.flat());
        assert_eq!(loaded.params.spec(), params.spec());
        assert_eq!(loaded.seed, 23);
        assert_eq!(loaded.source, "unit-test");

        // Saving the loaded copy writes identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &loaded.params, loaded.seed, &loaded.source).unwrap();
        let a = std::fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        let b = std::fs::read(dir2.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(a, b);
        let am = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let bm = std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(am, bm);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let params = ParameterSet::build(small_spec(), 29).unwrap();
        save_checkpoint(dir.path(), &params, 29, "unit-test").unwrap();

        let ppath = dir.path().join(PARAMS_FILE);
        let mut bytes = std::fs::read(&ppath).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&ppath, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(DataError::Decode { .. })));

        let mpath = dir.path().join(MANIFEST_FILE);
        std::fs::write(&mpath, "format: who-knows\n").unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(DataError::Decode { .. })));

        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/for/sure")),
            Err(DataError::Io { .. })
        ));
    }
}

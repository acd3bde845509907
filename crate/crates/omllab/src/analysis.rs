//! Representation diagnostics: how much of the representation a single
//! input touches (instance sparsity), which units never fire at all
//! (dead neurons), and normalized activation dumps for visual
//! inspection. Everything is exact over the declared corpus; nothing is
//! sampled.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GraphError};
use crate::network::{representation_of, ParameterSet};
use crate::tensor::Tensor;

/// Activation sparsity of a representation over a fixed input corpus.
/// `threshold` is the activity cutoff: relu representations use 0.0
/// since exact zeros are the inactive state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub instance_sparsity: f64,
    pub dead_fraction: f64,
    pub n_inputs: usize,
    pub d: usize,
    pub threshold: f64,
}

fn representations(params: &ParameterSet, inputs: &Tensor) -> Result<Tensor, GraphError> {
    assert!(inputs.rows() >= 1, "need a nonempty corpus");
    representation_of(params, inputs)
}

/// Mean over inputs of the fraction of representation units strictly
/// above `threshold`.
pub fn instance_sparsity(
    params: &ParameterSet,
    inputs: &Tensor,
    threshold: f64,
) -> Result<f64, GraphError> {
    let reps = representations(params, inputs)?;
    let (n, d) = (reps.rows(), reps.cols());
    let mut total = 0.0;
    for i in 0..n {
        let active = reps.row(i).iter().filter(|&&v| v > threshold).count();
        total += active as f64 / d as f64;
    }
    Ok(total / n as f64)
}

/// Fraction of representation units that stay at or below `threshold`
/// for every input in the corpus.
pub fn dead_neurons(
    params: &ParameterSet,
    inputs: &Tensor,
    threshold: f64,
) -> Result<f64, GraphError> {
    let reps = representations(params, inputs)?;
    let (n, d) = (reps.rows(), reps.cols());
    let mut alive = vec![false; d];
    for i in 0..n {
        for (j, &v) in reps.row(i).iter().enumerate() {
            if v > threshold {
                alive[j] = true;
            }
        }
    }
    let dead = alive.iter().filter(|&&a| !a).count();
    Ok(dead as f64 / d as f64)
}

pub fn sparsity_report(
    params: &ParameterSet,
    inputs: &Tensor,
    threshold: f64,
) -> Result<SparsityReport, GraphError> {
    Ok(SparsityReport {
        instance_sparsity: instance_sparsity(params, inputs, threshold)?,
        dead_fraction: dead_neurons(params, inputs, threshold)?,
        n_inputs: inputs.rows(),
        d: params.spec().representation_dim(),
        threshold,
    })
}

/// Appends one comparison-table line (method, instance sparsity, dead
/// fraction), creating the file with a header on first use.
pub fn append_sparsity_csv(
    path: &Path,
    method: &str,
    report: &SparsityReport,
) -> Result<(), ConfigError> {
    let io = |e: std::io::Error| ConfigError::Io { path: path.display().to_string(), source: e };
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut f = std::io::BufWriter::new(file);
    if fresh {
        writeln!(f, "method,instance_sparsity,dead_fraction").map_err(io)?;
    }
    writeln!(f, "{},{},{}", method, report.instance_sparsity, report.dead_fraction).map_err(io)?;
    Ok(())
}

fn normalized_rows(rep: &[f64]) -> Vec<f64> {
    let max = rep.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return vec![0.0; rep.len()];
    }
    rep.iter().map(|v| v / max).collect()
}

fn write_matrix_csv(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<(), ConfigError> {
    let io = |e: std::io::Error| ConfigError::Io { path: path.display().to_string(), source: e };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Reads a matrix written by [`dump_representation`].
pub fn load_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, ConfigError> {
    let io = |e: std::io::Error| ConfigError::Io { path: path.display().to_string(), source: e };
    let text = std::fs::read_to_string(path).map_err(io)?;
    text.lines()
        .map(|line| {
            line.split(',')
                .map(|v| {
                    v.parse::<f64>().map_err(|e| ConfigError::Parse(format!(
                        "{}: bad matrix entry {:?}: {}",
                        path.display(),
                        v,
                        e
                    )))
                })
                .collect()
        })
        .collect()
}

/// Writes one normalized matrix per input (`instance-NNN.csv`) plus the
/// corpus mean (`mean.csv`), each reshaped to `reshape_rows` rows and
/// scaled by its own maximum (an all-zero representation stays zeros).
/// A `manifest.txt` records the layout. Callers with large corpora
/// should pass a small selection of inputs; the mean covers exactly the
/// inputs given.
pub fn dump_representation(
    params: &ParameterSet,
    inputs: &Tensor,
    reshape_rows: usize,
    dir: &Path,
) -> Result<(), ConfigError> {
    let d = params.spec().representation_dim();
    if reshape_rows == 0 || d % reshape_rows != 0 {
        return Err(ConfigError::Invalid {
            field: "reshape_rows".into(),
            message: format!("representation width {d} is not divisible by {reshape_rows}"),
        });
    }
    let cols = d / reshape_rows;
    let reps = representations(params, inputs).map_err(|e| ConfigError::Invalid {
        field: "inputs".into(),
        message: e.to_string(),
    })?;
    let io = |e: std::io::Error| ConfigError::Io { path: dir.display().to_string(), source: e };
    std::fs::create_dir_all(dir).map_err(io)?;
    let n = reps.rows();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        let row = reps.row(i);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
        let normalized = normalized_rows(row);
        write_matrix_csv(&dir.join(format!("instance-{i:03}.csv")), &normalized, reshape_rows, cols)?;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mean = normalized_rows(&mean);
    write_matrix_csv(&dir.join("mean.csv"), &mean, reshape_rows, cols)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.txt")).map_err(io)?);
    writeln!(f, "d = {d}").map_err(io)?;
    writeln!(f, "rows = {reshape_rows}").map_err(io)?;
    writeln!(f, "cols = {cols}").map_err(io)?;
    writeln!(f, "instances = {n}").map_err(io)?;
    writeln!(f, "files = mean.csv instance-000.csv..instance-{:03}.csv", n - 1).map_err(io)?;
    Ok(())
}

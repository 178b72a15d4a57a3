//! Benchmark plants and the plant file format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::dmatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linops::Matrix;
use crate::rng::{self, Domain};
use crate::synth::Plant;

/// Grid-forming converter, 3 states and 2 inputs.
pub fn converter() -> Plant {
    let a = dmatrix![
        0.0, 0.0, 0.1017;
        0.0, 0.0, 0.025;
        0.0, 0.0, 2.0
    ];
    let b = dmatrix![
        1.0, 0.005;
        0.0, 1.5095;
        314.1593, 0.0
    ];
    Plant::new("converter", a, b).expect("converter matrices are well formed")
}

/// Coupling and input conventions for [`power_grid`], which the model
/// description leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// k_ij for j ≠ i. `None` means 1/(nodes − 1).
    pub coupling: Option<f64>,
    /// Input entry on each phase-angle row.
    pub b_theta: f64,
    /// Input entry on each frequency row.
    pub b_omega: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            coupling: None,
            b_theta: 1.0,
            b_omega: 1.0,
        }
    }
}

/// Generated parameters of a power-grid instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridParameters {
    pub nodes: usize,
    pub dk: f64,
    pub seed: u64,
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub coupling: f64,
    pub b_theta: f64,
    pub b_omega: f64,
}

/// Draws m_i ~ U[0.5, 2.0) for every node, then d_i ~ U[0.5, 1.0).
pub fn grid_parameters(nodes: usize, dk: f64, seed: u64, opts: &GridOptions) -> Result<GridParameters> {
    if nodes < 2 {
        return Err(Error::invalid(format!("power grid needs at least 2 nodes, got {nodes}")));
    }
    if !(dk > 0.0 && dk.is_finite()) {
        return Err(Error::invalid(format!("sampling period must be positive, got {dk}")));
    }
    let mut rng = rng::keyed(seed, Domain::ModelParams, 0, 0);
    let inertia: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.5..2.0)).collect();
    let damping: Vec<f64> = (0..nodes).map(|_| rng.random_range(0.5..1.0)).collect();
    Ok(GridParameters {
        nodes,
        dk,
        seed,
        inertia,
        damping,
        coupling: opts.coupling.unwrap_or(1.0 / (nodes - 1) as f64),
        b_theta: opts.b_theta,
        b_omega: opts.b_omega,
    })
}

/// Assembles the 2n×2n network matrix from explicit parameters. Node i
/// contributes the block row
///
/// A_ii = [[1, Δk], [−(k_i/m_i)Δk, α_i]],  A_ij = [[0, 0], [(k_ij/m_i)Δk, α_i]]
///
/// with α_i = 1 − (d_i/m_i)Δk and k_i = Σ_{j≠i} k_ij.
pub fn assemble_grid(params: &GridParameters) -> Result<Plant> {
    let nodes = params.nodes;
    let dk = params.dk;
    let k_ij = params.coupling;
    let k_i = k_ij * (nodes - 1) as f64;
    let mut a = Matrix::zeros(2 * nodes, 2 * nodes);
    for i in 0..nodes {
        let m = params.inertia[i];
        let alpha = 1.0 - params.damping[i] / m * dk;
        let (th, om) = (2 * i, 2 * i + 1);
        for j in 0..nodes {
            if i == j {
                a[(th, 2 * j)] = 1.0;
                a[(th, 2 * j + 1)] = dk;
                a[(om, 2 * j)] = -(k_i / m) * dk;
            } else {
                a[(om, 2 * j)] = (k_ij / m) * dk;
            }
            a[(om, 2 * j + 1)] = alpha;
        }
    }
    let b = Matrix::from_fn(2 * nodes, 1, |r, _| {
        if r % 2 == 0 {
            params.b_theta
        } else {
            params.b_omega
        }
    });
    Plant::new(format!("grid-{nodes}"), a, b)
}

pub fn power_grid(nodes: usize, dk: f64, seed: u64, opts: &GridOptions) -> Result<(Plant, GridParameters)> {
    let params = grid_parameters(nodes, dk, seed, opts)?;
    Ok((assemble_grid(&params)?, params))
}

pub const CHAIN_LOCAL: [[f64; 2]; 2] = [[1.0, 0.890], [0.890, 1.0]];
pub const CHAIN_COUPLING: [[f64; 2]; 2] = [[0.0890, 0.0], [0.0, 0.0890]];
pub const CHAIN_INPUT: [f64; 2] = [3.5600, 1.7800];

/// `count` identical two-state subsystems coupled to their neighbours.
pub fn interconnected_chain(count: usize) -> Result<Plant> {
    if count == 0 {
        return Err(Error::invalid("chain needs at least one subsystem"));
    }
    let n = 2 * count;
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, count);
    for s in 0..count {
        for r in 0..2 {
            for c in 0..2 {
                a[(2 * s + r, 2 * s + c)] = CHAIN_LOCAL[r][c];
                if s + 1 < count {
                    a[(2 * s + r, 2 * (s + 1) + c)] = CHAIN_COUPLING[r][c];
                    a[(2 * (s + 1) + r, 2 * s + c)] = CHAIN_COUPLING[r][c];
                }
            }
            b[(2 * s + r, s)] = CHAIN_INPUT[r];
        }
    }
    Plant::new(format!("chain-{count}"), a, b)
}

/// On-disk plant record. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

pub(crate) fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub(crate) fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

impl PlantFile {
    pub fn from_plant(plant: &Plant) -> Self {
        PlantFile {
            n: plant.n(),
            m: plant.m(),
            a: row_major(plant.a()),
            b: row_major(plant.b()),
            name: Some(plant.name().to_string()),
            weights: plant.weights().map(<[f64]>::to_vec),
        }
    }

    pub fn into_plant(self, fallback_name: &str) -> std::result::Result<Plant, String> {
        let PlantFile { n, m, a, b, name, weights } = self;
        if n == 0 || m == 0 {
            return Err(format!("field `n`/`m` must be positive (n = {n}, m = {m})"));
        }
        if a.len() != n * n {
            return Err(format!(
                "field `A` has {} entries but n = {n} requires {}",
                a.len(),
                n * n
            ));
        }
        if b.len() != n * m {
            return Err(format!(
                "field `B` has {} entries but n = {n}, m = {m} requires {}",
                b.len(),
                n * m
            ));
        }
        for (field, data, cols) in [("A", &a, n), ("B", &b, m)] {
            if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
                return Err(format!(
                    "field `{field}` has non-finite value {} at row {}, column {}",
                    data[idx],
                    idx / cols,
                    idx % cols
                ));
            }
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(format!("field `weights` has {} entries, expected n = {n}", w.len()));
            }
        }
        let name = name.unwrap_or_else(|| fallback_name.to_string());
        Plant::new(name, from_row_major(n, n, &a), from_row_major(n, m, &b))
            .and_then(|p| p.with_weights(weights))
            .map_err(|e| e.to_string())
    }
}

/// Reads a plant file. The parser accepts JSON5, so `NaN` and `Infinity`
/// literals are read and then reported as non-finite entries.
pub fn load_plant(path: &Path) -> Result<Plant> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let file: PlantFile = json5::from_str(&text).map_err(|e| load_err(e.to_string()))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plant");
    file.into_plant(stem).map_err(load_err)
}

pub fn save_plant(plant: &Plant, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&PlantFile::from_plant(plant))
        .map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// A builtin benchmark or a plant file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Converter,
    Grid {
        nodes: usize,
        dk: f64,
        seed: u64,
        opts: GridOptions,
    },
    Chain {
        count: usize,
    },
    File {
        path: PathBuf,
    },
}

pub const DEFAULT_GRID_NODES: usize = 1000;
pub const DEFAULT_GRID_DK: f64 = 0.2;
pub const DEFAULT_GRID_SEED: u64 = 7;
pub const DEFAULT_CHAIN_COUNT: usize = 20;

fn parse_query(query: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for pair in query.split('&').filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("malformed model parameter `{pair}`")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn take<T: FromStr>(params: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    params
        .remove(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::invalid(format!("cannot parse model parameter {key}={v}")))
        })
        .transpose()
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("builtin:") else {
            let path = s.strip_prefix("file:").unwrap_or(s);
            if path.is_empty() {
                return Err(Error::invalid("empty model path"));
            }
            return Ok(ModelSpec::File { path: path.into() });
        };
        let (kind, query) = rest.split_once('?').unwrap_or((rest, ""));
        let mut params = parse_query(query)?;
        let spec = match kind {
            "converter" => ModelSpec::Converter,
            "grid" => ModelSpec::Grid {
                nodes: take(&mut params, "nodes")?.unwrap_or(DEFAULT_GRID_NODES),
                dk: take(&mut params, "dk")?.unwrap_or(DEFAULT_GRID_DK),
                seed: take(&mut params, "seed")?.unwrap_or(DEFAULT_GRID_SEED),
                opts: GridOptions {
                    coupling: take(&mut params, "coupling")?,
                    b_theta: take(&mut params, "b1")?.unwrap_or(1.0),
                    b_omega: take(&mut params, "b2")?.unwrap_or(1.0),
                },
            },
            "chain" => ModelSpec::Chain {
                count: take(&mut params, "N")?.unwrap_or(DEFAULT_CHAIN_COUNT),
            },
            other => return Err(Error::invalid(format!("unknown builtin model `{other}`"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::invalid(format!("unknown parameter `{k}` for builtin:{kind}")));
        }
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Converter => write!(f, "builtin:converter"),
            ModelSpec::Grid { nodes, dk, seed, opts } => {
                write!(f, "builtin:grid?nodes={nodes}&dk={dk}&seed={seed}")?;
                if let Some(c) = opts.coupling {
                    write!(f, "&coupling={c}")?;
                }
                write!(f, "&b1={}&b2={}", opts.b_theta, opts.b_omega)
            }
            ModelSpec::Chain { count } => write!(f, "builtin:chain?N={count}"),
            ModelSpec::File { path } => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub spec: ModelSpec,
    pub plant: Plant,
    /// Every generated or loaded parameter, for run manifests.
    pub metadata: serde_json::Value,
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ResolvedModel> {
        let (plant, metadata) = match self {
            ModelSpec::Converter => (converter(), json!({ "kind": "converter" })),
            ModelSpec::Grid { nodes, dk, seed, opts } => {
                let (plant, params) = power_grid(*nodes, *dk, *seed, opts)?;
                (
                    plant,
                    json!({ "kind": "grid", "coupling_convention": "k_ij uniform, k_ii = 0", "parameters": params }),
                )
            }
            ModelSpec::Chain { count } => (
                interconnected_chain(*count)?,
                json!({ "kind": "chain", "subsystems": count }),
            ),
            ModelSpec::File { path } => (
                load_plant(path)?,
                json!({ "kind": "file", "path": path.display().to_string() }),
            ),
        };
        Ok(ResolvedModel {
            spec: self.clone(),
            plant,
            metadata,
        })
    }

    /// State and input dimensions, when known without touching the disk.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match self {
            ModelSpec::Converter => Some((3, 2)),
            ModelSpec::Grid { nodes, .. } => Some((2 * nodes, 1)),
            ModelSpec::Chain { count } => Some((2 * count, *count)),
            ModelSpec::File { .. } => None,
        }
    }
}

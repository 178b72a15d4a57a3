//! Closed-loop stepping under random masks and Monte Carlo statistics.
//!
//! Trajectory j draws its initial state from stream j of the initial-state
//! key and its masks from stream j of the mask key, so every trajectory is
//! a pure function of (seed, j). Trajectories run in parallel in fixed-size
//! chunks and are folded into the statistics in index order, which makes the
//! output independent of the worker count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{Matrix, Vector};
use crate::rng::{self, Domain};
use crate::sparsify::{self, Mask, MaskSampler};
use crate::synth::{f_value, GainCertificate, Plant, SparsificationPlan};

/// A trajectory whose state norm exceeds this is stopped and frozen.
pub const DIVERGENCE_NORM: f64 = 1e150;
pub const DEFAULT_TOL_REL: f64 = 1e-3;
/// Steps whose mean squared norm is below this are skipped in ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub runs: usize,
    /// Standard deviation of each initial coordinate.
    pub init_sigma: f64,
    pub master_seed: u64,
    /// Coordinates whose ensemble mean is written out per step.
    pub record_components: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps: 200,
            runs: 100,
            init_sigma: 100.0,
            master_seed: 0,
            record_components: Vec::new(),
        }
    }
}

impl SimConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 || self.runs == 0 {
            return Err(Error::invalid("steps and runs must both be at least 1"));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "initial standard deviation must be finite and nonnegative, got {}",
                self.init_sigma
            )));
        }
        if let Some(&i) = self.record_components.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!(
                "recorded component {i} is out of range for a {n}-state plant"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged;

/// x⁺ = A·x + B·(K·(scale ⊙ x)), touching only the active columns of K.
pub fn step(plant: &Plant, gain: &Matrix, mask: &Mask, x: &Vector) -> Result<Vector, Diverged> {
    let mut out = Vector::zeros(plant.n());
    let mut u = Vector::zeros(plant.m());
    step_into(plant.a(), plant.b(), gain, mask, x, &mut out, &mut u);
    check_state(&out).map(|_| out)
}

fn step_into(
    a: &Matrix,
    b: &Matrix,
    gain: &Matrix,
    mask: &Mask,
    x: &Vector,
    out: &mut Vector,
    u: &mut Vector,
) {
    u.fill(0.0);
    for (i, (&on, &s)) in mask.active.iter().zip(&mask.scale).enumerate() {
        if on {
            u.axpy(s * x[i], &gain.column(i), 1.0);
        }
    }
    out.gemv(1.0, a, x, 0.0);
    out.gemv(1.0, b, u, 1.0);
}

/// Returns ‖x‖² when the state is still usable.
fn check_state(x: &Vector) -> Result<f64, Diverged> {
    let sq = x.norm_squared();
    if sq.is_finite() && sq <= DIVERGENCE_NORM * DIVERGENCE_NORM {
        Ok(sq)
    } else {
        Err(Diverged)
    }
}

/// One closed-loop sample path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Row k holds x(k); length (steps + 1)·n.
    pub states: Vec<f64>,
    pub sq_norms: Vec<f64>,
    /// Active coordinates of C(k).
    pub active: Vec<u32>,
    /// Step at which the state left the finite range, if it did. Later
    /// steps repeat the last usable state.
    pub diverged_at: Option<usize>,
}

pub fn trajectory(
    plant: &Plant,
    gain: &Matrix,
    sampler: &MaskSampler,
    x0: Vector,
    steps: usize,
) -> Trajectory {
    let n = plant.n();
    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut sq_norms = Vec::with_capacity(steps + 1);
    let mut active = Vec::with_capacity(steps + 1);
    let mut mask = Mask::all_active(n);
    let mut x = x0;
    let mut next = Vector::zeros(n);
    let mut u = Vector::zeros(plant.m());
    let mut diverged_at = None;
    let mut sq = x.norm_squared();
    for k in 0..=steps {
        states.extend_from_slice(x.as_slice());
        sq_norms.push(sq);
        sampler.fill_mask(k as u64, &mut mask);
        active.push(mask.active_count() as u32);
        if k == steps || diverged_at.is_some() {
            continue;
        }
        step_into(plant.a(), plant.b(), gain, &mask, &x, &mut next, &mut u);
        match check_state(&next) {
            Ok(v) => {
                std::mem::swap(&mut x, &mut next);
                sq = v;
            }
            Err(Diverged) => diverged_at = Some(k + 1),
        }
    }
    Trajectory {
        states,
        sq_norms,
        active,
        diverged_at,
    }
}

/// Per-step ensemble statistics; every vector has `steps + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n: usize,
    pub runs: usize,
    pub steps: usize,
    /// Row-major (steps + 1) × n.
    pub mean_state: Vec<f64>,
    pub mean_sq_norm: Vec<f64>,
    pub std_sq_norm: Vec<f64>,
    pub active_sensors_mean: Vec<f64>,
    pub record_components: Vec<usize>,
    pub diverged_runs: usize,
}

impl EnsembleStats {
    pub fn mean_state_at(&self, k: usize) -> &[f64] {
        &self.mean_state[k * self.n..(k + 1) * self.n]
    }

    pub fn component_mean(&self, k: usize, i: usize) -> f64 {
        self.mean_state[k * self.n + i]
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Sample mean and standard deviation, scaled so huge values do not
/// overflow the squared deviations.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let scale = values.clone().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return (0.0, 0.0);
    }
    let mut count = 0usize;
    let mut acc = Compensated::default();
    for v in values.clone() {
        acc.add(v / scale);
        count += 1;
    }
    let mean = acc.value() / count as f64;
    if count < 2 {
        return (mean * scale, 0.0);
    }
    let mut dev = Compensated::default();
    for v in values {
        let d = v / scale - mean;
        dev.add(d * d);
    }
    let std = (dev.value() / (count - 1) as f64).max(0.0).sqrt();
    (mean * scale, std * scale)
}

fn chunk_len(n: usize, steps: usize) -> usize {
    ((1usize << 21) / ((steps + 1) * n).max(1)).clamp(1, 256)
}

pub fn initial_state(n: usize, sigma: f64, seed: u64, run: u64) -> Vector {
    let mut rng = rng::keyed(seed, Domain::InitialState, 0, run);
    Vector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    })
}

/// Ensemble with an explicit gain and probabilities. `mask_seed` keys the
/// mask streams; initial states are always keyed by `cfg.master_seed`.
pub fn run_ensemble_with(
    plant: &Plant,
    gain: &Matrix,
    probs: &[f64],
    cfg: &SimConfig,
    mask_seed: u64,
) -> Result<EnsembleStats> {
    let n = plant.n();
    if gain.nrows() != plant.m() || gain.ncols() != n {
        return Err(Error::invalid(format!(
            "gain is {}x{}, plant needs {}x{}",
            gain.nrows(),
            gain.ncols(),
            plant.m(),
            n
        )));
    }
    if probs.len() != n {
        return Err(Error::invalid(format!(
            "{} probabilities for a {n}-state plant",
            probs.len()
        )));
    }
    sparsify::validate_probs(probs)?;
    cfg.validate(n)?;

    let steps = cfg.steps;
    let width = steps + 1;
    let mut state_sums = vec![Compensated::default(); width * n];
    let mut sq_norms = vec![0.0; cfg.runs * width];
    let mut active_sums = vec![0u64; width];
    let mut diverged_runs = 0;

    let chunk = chunk_len(n, steps);
    let mut start = 0;
    while start < cfg.runs {
        let end = (start + chunk).min(cfg.runs);
        let batch: Vec<Trajectory> = (start..end)
            .into_par_iter()
            .map(|j| {
                let sampler = MaskSampler::new(probs.to_vec(), mask_seed, j as u64)
                    .expect("probabilities validated above");
                let x0 = initial_state(n, cfg.init_sigma, cfg.master_seed, j as u64);
                trajectory(plant, gain, &sampler, x0, steps)
            })
            .collect();
        for (offset, tr) in batch.into_iter().enumerate() {
            let j = start + offset;
            for (acc, &v) in state_sums.iter_mut().zip(&tr.states) {
                acc.add(v);
            }
            sq_norms[j * width..(j + 1) * width].copy_from_slice(&tr.sq_norms);
            for (acc, &a) in active_sums.iter_mut().zip(&tr.active) {
                *acc += u64::from(a);
            }
            diverged_runs += tr.diverged_at.is_some() as usize;
        }
        start = end;
    }

    let runs = cfg.runs as f64;
    let mut mean_sq_norm = Vec::with_capacity(width);
    let mut std_sq_norm = Vec::with_capacity(width);
    for k in 0..width {
        let (m, s) = mean_std((0..cfg.runs).map(|j| sq_norms[j * width + k]));
        mean_sq_norm.push(m);
        std_sq_norm.push(s);
    }
    Ok(EnsembleStats {
        n,
        runs: cfg.runs,
        steps,
        mean_state: state_sums.iter().map(|c| c.value() / runs).collect(),
        mean_sq_norm,
        std_sq_norm,
        active_sensors_mean: active_sums.iter().map(|&a| a as f64 / runs).collect(),
        record_components: cfg.record_components.clone(),
        diverged_runs,
    })
}

pub fn run_ensemble(plant: &Plant, plan: &SparsificationPlan, cfg: &SimConfig) -> Result<EnsembleStats> {
    run_ensemble_with(plant, &plan.cert.gain, &plan.probs(), cfg, cfg.master_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverged,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRatio {
    pub k: usize,
    /// mean_sq_norm(k+1) / mean_sq_norm(k)
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub ratios: Vec<StepRatio>,
    /// Theoretical one-step contraction, f(p) or g(p₁…pₙ).
    pub bound: f64,
    pub verdict: Verdict,
    pub threshold_step: Option<usize>,
}

pub fn decay_report(stats: &EnsembleStats, contraction: f64, tol_rel: f64) -> Result<DecayReport> {
    if !(contraction >= 0.0) {
        return Err(Error::invalid(format!("contraction must be nonnegative, got {contraction}")));
    }
    let m = &stats.mean_sq_norm;
    let ratios = m
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] >= RATIO_FLOOR)
        .map(|(k, w)| StepRatio { k, ratio: w[1] / w[0] })
        .collect();
    let initial = m[0];
    let threshold_step = m.iter().position(|&v| v < tol_rel * initial);
    let verdict = if threshold_step.is_some() {
        Verdict::Converged
    } else if *m.last().expect("at least one step") > 10.0 * initial {
        Verdict::Diverged
    } else {
        Verdict::Inconclusive
    };
    Ok(DecayReport {
        ratios,
        bound: contraction,
        verdict,
        threshold_step,
    })
}

/// Mask seed for entry `index` of a sweep; entry 0 uses the master seed.
pub fn sweep_mask_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub p: f64,
    pub stats: EnsembleStats,
    pub report: DecayReport,
}

/// One ensemble per uniform probability. All entries share the initial
/// states; mask streams are keyed by the entry index.
pub fn sweep_p(
    plant: &Plant,
    cert: &GainCertificate,
    p_list: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<SweepEntry>> {
    p_list
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let stats = run_ensemble_with(
                plant,
                &cert.gain,
                &vec![p; plant.n()],
                cfg,
                sweep_mask_seed(cfg.master_seed, i),
            )?;
            let report = decay_report(&stats, f_value(cert, p)?, DEFAULT_TOL_REL)?;
            Ok(SweepEntry { p, stats, report })
        })
        .collect()
}

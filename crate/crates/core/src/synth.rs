//! Gain and sensing-probability synthesis.
//!
//! Gains come from the one-parameter family K(t) = −t·(BᵀB)⁻¹BᵀA. Writing
//! Q = I − P for the projector onto range(B), the closed loop is
//! A + BK(t) = PA + (1−t)·QA and, because PQ = 0,
//!
//! ‖A + BK(t)‖² = λ_max(AᵀPA + (1−t)²·AᵀQA).
//!
//! The norm is therefore nonincreasing in t and equals a_n at t = 1.
//! AᵀQA has rank m, so for a target γ > a_n² the Schur complement of
//! γI − AᵀPA − c·AᵀQA reduces feasibility to an m×m eigenproblem, which
//! gives the smallest admissible t directly.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linops::{self, Matrix};
use crate::sparsify;

/// Below this a squared column norm counts as zero feedback influence.
pub const DEGENERATE_S: f64 = 1e-14;
/// Distance kept between ‖A+BK‖² and γ in every certificate.
pub const GAMMA_MARGIN: f64 = 1e-9;
/// The spectral check passes when a_n < 1 − this.
pub const SPECTRAL_SLACK: f64 = 1e-9;

/// Discrete-time plant x(k+1) = A x(k) + B u(k).
#[derive(Debug, Clone)]
pub struct Plant {
    name: String,
    a: Matrix,
    b: Matrix,
    rank_b: usize,
    a_n: Option<f64>,
    weights: Option<Vec<f64>>,
}

impl Plant {
    pub fn new(name: impl Into<String>, a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::invalid(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 || b.ncols() > n {
            return Err(Error::invalid(format!(
                "B must be {n}×m with 1 ≤ m ≤ {n}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        linops::ensure_finite(&a, "A")?;
        linops::ensure_finite(&b, "B")?;
        let rank_b = linops::rank_of(&b, linops::DEFAULT_RANK_TOL)?;
        let a_n = if rank_b == b.ncols() {
            linops::projected_dynamics(&a, &b).ok().map(|pd| pd.a_n)
        } else {
            None
        };
        Ok(Plant {
            name: name.into(),
            a,
            b,
            rank_b,
            a_n,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Option<Vec<f64>>) -> Result<Self> {
        if let Some(w) = &weights {
            validate_weights(w, self.n())?;
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn rank_b(&self) -> usize {
        self.rank_b
    }

    /// ‖(I − B(BᵀB)⁻¹Bᵀ)A‖₂, or `None` when BᵀB is numerically singular.
    pub fn a_n(&self) -> Option<f64> {
        self.a_n
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// SHA-256 over the dimensions and the IEEE bit patterns of A and B
    /// (row-major), hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.m() as u64).to_le_bytes());
        for m in [&self.a, &self.b] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    h.update(m[(i, j)].to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn validate_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::invalid(format!(
            "expected {n} weights, got {}",
            w.len()
        )));
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!("weight {i} is {v}, expected a positive value")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub rank_ok: bool,
    pub rank_b: usize,
    pub m: usize,
    /// NaN when B is rank deficient.
    pub a_n: f64,
    pub spectral_ok: bool,
}

impl AssumptionReport {
    pub fn ok(&self) -> bool {
        self.rank_ok && self.spectral_ok
    }

    pub fn violation(&self) -> Option<String> {
        if !self.rank_ok {
            Some(format!(
                "Assumption 1 violated: rank(B) = {} < m = {}",
                self.rank_b, self.m
            ))
        } else if !self.spectral_ok {
            Some(format!(
                "Assumption 2 violated: a_n = {} is not below 1",
                self.a_n
            ))
        } else {
            None
        }
    }
}

pub fn check_assumptions(plant: &Plant) -> AssumptionReport {
    let rank_ok = plant.rank_b == plant.m();
    let a_n = plant.a_n.unwrap_or(f64::NAN);
    AssumptionReport {
        rank_ok,
        rank_b: plant.rank_b,
        m: plant.m(),
        a_n,
        spectral_ok: rank_ok && a_n < 1.0 - SPECTRAL_SLACK,
    }
}

fn require_assumptions(plant: &Plant) -> Result<AssumptionReport> {
    let report = check_assumptions(plant);
    match report.violation() {
        Some(msg) => Err(Error::Structural(msg)),
        None => Ok(report),
    }
}

/// Positive definiteness of [[γI, Dᵀ], [D, I]] with D = A + BK.
pub fn lmi_feasible(a: &Matrix, b: &Matrix, k: &Matrix, gamma: f64) -> Result<bool> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || k.nrows() != b.ncols() || k.ncols() != n {
        return Err(Error::invalid(format!(
            "inconsistent dimensions: A {}x{}, B {}x{}, K {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let d = a + b * k;
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).fill_with_identity();
    block.view_mut((0, 0), (n, n)).scale_mut(gamma);
    block.view_mut((0, n), (n, n)).copy_from(&d.transpose());
    block.view_mut((n, 0), (n, n)).copy_from(&d);
    block.view_mut((n, n), (n, n)).fill_with_identity();
    linops::is_positive_definite(&block)
}

/// A gain together with the quantities that certify its sensing thresholds.
#[derive(Debug, Clone)]
pub struct GainCertificate {
    pub gain: Matrix,
    pub gamma: f64,
    /// Position in the gain family; NaN for gains supplied from elsewhere.
    pub t: f64,
    /// D = A + BK
    pub closed_loop: Matrix,
    pub d_norm_sq: f64,
    /// Squared column norms of L = BK.
    pub s: Vec<f64>,
    pub s_max: f64,
}

impl GainCertificate {
    /// Recomputes every derived quantity from `gain`. Fails unless
    /// ‖A+BK‖² < γ.
    pub fn from_gain(plant: &Plant, gain: Matrix, gamma: f64, t: f64) -> Result<Self> {
        if gain.nrows() != plant.m() || gain.ncols() != plant.n() {
            return Err(Error::invalid(format!(
                "gain must be {}x{}, got {}x{}",
                plant.m(),
                plant.n(),
                gain.nrows(),
                gain.ncols()
            )));
        }
        linops::ensure_finite(&gain, "K")?;
        let feedback = plant.b() * &gain;
        let closed_loop = plant.a() + &feedback;
        let d_norm_sq = linops::spectral_norm(&closed_loop)?.powi(2);
        if !(d_norm_sq < gamma) {
            return Err(Error::InvalidCertificate(format!(
                "‖A+BK‖² = {d_norm_sq} is not below γ = {gamma}"
            )));
        }
        let s: Vec<f64> = feedback.column_iter().map(|c| c.norm_squared()).collect();
        let s_max = s.iter().copied().fold(0.0, f64::max);
        Ok(GainCertificate {
            gain,
            gamma,
            t,
            closed_loop,
            d_norm_sq,
            s,
            s_max,
        })
    }

    pub fn n(&self) -> usize {
        self.closed_loop.nrows()
    }
}

/// Precomputed spectral data for K(t) = −t·(BᵀB)⁻¹BᵀA.
#[derive(Debug, Clone)]
pub struct GainFamily {
    /// (BᵀB)⁻¹BᵀA, so K(t) = −t·direction.
    direction: Matrix,
    /// Squared column norms of B·direction; s_i(t) = t²·col_norms[i].
    col_norms: Vec<f64>,
    /// Eigenvalues of AᵀPA.
    eigvals: Vec<f64>,
    /// Rows are the eigen-coordinates of a rank-m factor W with WWᵀ = AᵀQA.
    coupling: Matrix,
    lambda_max: f64,
    open_loop_norm_sq: f64,
    /// PA and QA.
    projected: Matrix,
    input_part: Matrix,
}

impl GainFamily {
    pub fn new(plant: &Plant) -> Result<Self> {
        let (a, b) = (plant.a(), plant.b());
        let chol = linops::input_gram_cholesky(b)?;
        let direction = chol.solve(&b.tr_mul(a));
        let input_part = b * &direction;
        let col_norms = input_part.column_iter().map(|c| c.norm_squared()).collect();
        let projected = a - &input_part;
        let eig = SymmetricEigen::new(projected.tr_mul(&projected));
        let lambda_max = linops::spectral_norm(&projected)?.powi(2);
        // AᵀQA = Rᵀ(BᵀB)R = (RᵀL)(RᵀL)ᵀ with BᵀB = LLᵀ.
        let factor = direction.tr_mul(&chol.l());
        let coupling = eig.eigenvectors.tr_mul(&factor);
        let eigvals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let mut family = GainFamily {
            direction,
            col_norms,
            eigvals,
            coupling,
            lambda_max,
            open_loop_norm_sq: 0.0,
            projected,
            input_part,
        };
        family.open_loop_norm_sq = family.norm_sq(0.0);
        Ok(family)
    }

    pub fn gain(&self, t: f64) -> Matrix {
        &self.direction * -t
    }

    /// a_n²
    pub fn floor_norm_sq(&self) -> f64 {
        self.lambda_max
    }

    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    /// λ_max(Wᵀ(μI − AᵀPA)⁻¹W) for μ above a_n².
    fn secular(&self, mu: f64) -> f64 {
        let m = self.coupling.ncols();
        let mut acc = Matrix::zeros(m, m);
        for (i, &l) in self.eigvals.iter().enumerate() {
            let row = self.coupling.row(i);
            let w = 1.0 / (mu - l);
            for c in 0..m {
                let rc = row[c] * w;
                if rc == 0.0 {
                    continue;
                }
                for r in c..m {
                    acc[(r, c)] += rc * row[r];
                }
            }
        }
        if m == 1 {
            return acc[(0, 0)];
        }
        for c in 0..m {
            for r in (c + 1)..m {
                acc[(c, r)] = acc[(r, c)];
            }
        }
        SymmetricEigen::new(acc).eigenvalues.max()
    }

    /// ‖A + BK(t)‖².
    pub fn norm_sq(&self, t: f64) -> f64 {
        let d = &self.projected + &self.input_part * (1.0 - t);
        linops::spectral_norm(&d).map_or(f64::NAN, |v| v * v)
    }

    /// Smallest t with ‖A+BK(t)‖² ≤ `target`, together with that norm.
    /// `target` must exceed a_n².
    pub fn smallest_t(&self, target: f64) -> (f64, f64) {
        if self.open_loop_norm_sq <= target {
            return (0.0, self.open_loop_norm_sq);
        }
        let psi = self.secular(target);
        let t = (1.0 - 1.0 / psi.sqrt()).clamp(0.0, 1.0);
        (t, target)
    }
}

/// Smallest feasible t for γ, kept GAMMA_MARGIN (or half the gap to a_n²)
/// away from the boundary.
fn feasible_t(family: &GainFamily, gamma: f64) -> Result<(f64, f64)> {
    let floor = family.floor_norm_sq();
    if !(gamma > floor + 1e-12) {
        return Err(Error::Infeasible(format!(
            "γ = {gamma} does not exceed a_n² = {floor}; no gain in the family reaches it"
        )));
    }
    let margin = GAMMA_MARGIN.min(0.5 * (gamma - floor));
    Ok(family.smallest_t(gamma - margin))
}

/// Member of the gain family with the smallest t meeting ‖A+BK(t)‖² < γ.
pub fn gain_for_gamma(plant: &Plant, gamma: f64) -> Result<GainCertificate> {
    require_assumptions(plant)?;
    let family = GainFamily::new(plant)?;
    let (t, _) = feasible_t(&family, gamma)?;
    GainCertificate::from_gain(plant, family.gain(t), gamma, t)
}

/// Shared argument check for f and g.
fn contraction_matrix(cert: &GainCertificate, extra: impl Fn(usize) -> f64) -> Result<f64> {
    let mut m = cert.closed_loop.tr_mul(&cert.closed_loop);
    for i in 0..cert.n() {
        m[(i, i)] += extra(i);
    }
    linops::spectral_norm(&m)
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("probability {p} outside (0, 1]")))
    }
}

/// f(p) = ‖DᵀD + ((1−p)/p)·Diag(s)‖.
pub fn f_value(cert: &GainCertificate, p: f64) -> Result<f64> {
    check_prob(p)?;
    let r = (1.0 - p) / p;
    contraction_matrix(cert, |i| r * cert.s[i])
}

/// g(p₁…pₙ) = ‖DᵀD + Diag(sᵢ(1/pᵢ − 1))‖.
pub fn g_value(cert: &GainCertificate, probs: &[f64]) -> Result<f64> {
    if probs.len() != cert.n() {
        return Err(Error::invalid(format!(
            "expected {} probabilities, got {}",
            cert.n(),
            probs.len()
        )));
    }
    for &p in probs {
        check_prob(p)?;
    }
    contraction_matrix(cert, |i| cert.s[i] * (1.0 / probs[i] - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub value: f64,
    /// s = 0: feedback never reads this coordinate, any probability works.
    pub degenerate: bool,
}

fn threshold(d_norm_sq: f64, s: f64, p_floor: f64) -> Threshold {
    if s < DEGENERATE_S {
        Threshold {
            value: p_floor,
            degenerate: true,
        }
    } else {
        Threshold {
            value: 1.0 / (1.0 + (1.0 - d_norm_sq) / s),
            degenerate: false,
        }
    }
}

fn check_contractive(cert: &GainCertificate) -> Result<()> {
    if cert.d_norm_sq < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidCertificate(format!(
            "‖A+BK‖² = {} is not below 1",
            cert.d_norm_sq
        )))
    }
}

/// 1/(1 + (1 − ‖D‖²)/s_max)
pub fn p_threshold_uniform(cert: &GainCertificate, p_floor: f64) -> Result<Threshold> {
    check_contractive(cert)?;
    Ok(threshold(cert.d_norm_sq, cert.s_max, p_floor))
}

/// Per-coordinate 1/(1 + (1 − ‖D‖²)/sᵢ).
pub fn p_threshold_adaptive(cert: &GainCertificate, p_floor: f64) -> Result<Vec<Threshold>> {
    check_contractive(cert)?;
    Ok(cert
        .s
        .iter()
        .map(|&s| threshold(cert.d_norm_sq, s, p_floor))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    /// γ grid step.
    pub delta: f64,
    /// Probability used where the threshold formula degenerates.
    pub p_floor: f64,
    /// Added to every returned threshold.
    pub epsilon_p: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            delta: 0.01,
            p_floor: 1e-4,
            epsilon_p: 1e-4,
        }
    }
}

impl SynthSettings {
    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 1.0) {
            return Err(Error::invalid(format!("p_floor must lie in (0, 1), got {}", self.p_floor)));
        }
        if !(self.epsilon_p >= 0.0 && self.epsilon_p < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon_p must lie in [0, 1), got {}",
                self.epsilon_p
            )));
        }
        Ok(())
    }
}

/// {a_n, a_n+δ, …} ∩ (a_n² + 1e-12, 1], closed with γ = 1.
pub fn gamma_grid(a_n: f64, delta: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut j = 0u64;
    loop {
        let g = a_n + j as f64 * delta;
        if g > 1.0 + 1e-12 {
            break;
        }
        grid.push(g.min(1.0));
        j += 1;
    }
    if grid.last().is_none_or(|&g| g < 1.0 - 1e-12) {
        grid.push(1.0);
    }
    grid.retain(|&g| g > a_n * a_n + 1e-12);
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Sensing {
    Uniform { p_star: f64, degenerate: bool },
    Adaptive { p_vec: Vec<f64>, degenerate: Vec<bool> },
}

#[derive(Debug, Clone)]
pub struct SparsificationPlan {
    pub cert: GainCertificate,
    pub sensing: Sensing,
    pub weights: Vec<f64>,
    pub expected_sparsity: f64,
    /// f(p⋆) or g(p⋆₁…p⋆ₙ)
    pub contraction: f64,
    pub settings: SynthSettings,
}

impl SparsificationPlan {
    /// Per-coordinate activation probabilities.
    pub fn probs(&self) -> Vec<f64> {
        match &self.sensing {
            Sensing::Uniform { p_star, .. } => vec![*p_star; self.cert.n()],
            Sensing::Adaptive { p_vec, .. } => p_vec.clone(),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.sensing, Sensing::Adaptive { .. })
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gamma: f64,
    t: f64,
    d_norm_sq: f64,
}

impl Candidate {
    fn s<'a>(&self, family: &'a GainFamily) -> impl Iterator<Item = f64> + 'a {
        let t2 = self.t * self.t;
        family.col_norms.iter().map(move |c| t2 * c)
    }
}

fn sweep(plant: &Plant, settings: &SynthSettings) -> Result<(GainFamily, Vec<Candidate>)> {
    settings.validate()?;
    let report = require_assumptions(plant)?;
    let family = GainFamily::new(plant)?;
    let grid = gamma_grid(report.a_n, settings.delta);
    let candidates: Vec<Candidate> = grid
        .par_iter()
        .map(|&gamma| {
            feasible_t(&family, gamma).map(|(t, d_norm_sq)| Candidate {
                gamma,
                t,
                d_norm_sq,
            })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|c| c.d_norm_sq < 1.0)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Infeasible(format!(
            "no feasible γ on the grid [a_n = {}, 1] with δ = {} (a_n² = {})",
            report.a_n,
            settings.delta,
            report.a_n * report.a_n
        )));
    }
    Ok((family, candidates))
}

/// Index of the smallest objective; earlier (smaller γ) wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Uniform-probability synthesis: the γ on the grid whose gain admits the
/// smallest Bernoulli parameter.
pub fn algorithm1(plant: &Plant, settings: &SynthSettings) -> Result<SparsificationPlan> {
    let (family, candidates) = sweep(plant, settings)?;
    let objective: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let s_max = c.s(&family).fold(0.0, f64::max);
            threshold(c.d_norm_sq, s_max, settings.p_floor).value
        })
        .collect();
    let best = candidates[argmin(&objective)];
    let cert = GainCertificate::from_gain(plant, family.gain(best.t), best.gamma, best.t)?;
    let th = p_threshold_uniform(&cert, settings.p_floor)?;
    let p_star = if th.degenerate {
        th.value
    } else {
        (th.value + settings.epsilon_p).min(1.0)
    };
    let contraction = f_value(&cert, p_star)?;
    if !(contraction < 1.0) {
        return Err(Error::Infeasible(format!(
            "f(p⋆ = {p_star}) = {contraction} is not below 1"
        )));
    }
    let n = plant.n();
    Ok(SparsificationPlan {
        cert,
        sensing: Sensing::Uniform {
            p_star,
            degenerate: th.degenerate,
        },
        weights: vec![1.0; n],
        expected_sparsity: p_star * n as f64,
        contraction,
        settings: *settings,
    })
}

/// Per-coordinate synthesis minimizing Σ wᵢ pᵢ over the γ grid.
pub fn algorithm2(
    plant: &Plant,
    weights: &[f64],
    settings: &SynthSettings,
) -> Result<SparsificationPlan> {
    validate_weights(weights, plant.n())?;
    let (family, candidates) = sweep(plant, settings)?;
    let objective: Vec<f64> = candidates
        .iter()
        .map(|c| {
            c.s(&family)
                .zip(weights)
                .map(|(s, w)| w * threshold(c.d_norm_sq, s, settings.p_floor).value)
                .sum()
        })
        .collect();
    let best = candidates[argmin(&objective)];
    let cert = GainCertificate::from_gain(plant, family.gain(best.t), best.gamma, best.t)?;
    let thresholds = p_threshold_adaptive(&cert, settings.p_floor)?;
    let p_vec: Vec<f64> = thresholds
        .iter()
        .map(|th| {
            if th.degenerate {
                th.value
            } else {
                (th.value + settings.epsilon_p).min(1.0)
            }
        })
        .collect();
    let contraction = g_value(&cert, &p_vec)?;
    if !(contraction < 1.0) {
        return Err(Error::Infeasible(format!(
            "g(p⋆) = {contraction} is not below 1"
        )));
    }
    let expected_sparsity = sparsify::expected_sparsity(&p_vec, weights)?;
    Ok(SparsificationPlan {
        cert,
        sensing: Sensing::Adaptive {
            p_vec,
            degenerate: thresholds.iter().map(|th| th.degenerate).collect(),
        },
        weights: weights.to_vec(),
        expected_sparsity,
        contraction,
        settings: *settings,
    })
}

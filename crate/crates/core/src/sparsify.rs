//! Randomized measurement masks C(k) with unbiased 1/p rescaling.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::linops::Matrix;
use crate::rng::{self, Domain};

/// Produces the diagonal of C(k) for any step k. Immutable once built, so a
/// single sampler can be shared across threads.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    probs: Vec<f64>,
    seed: u64,
    stream_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub active: Vec<bool>,
    /// `1/p_i` where active, 0 elsewhere.
    pub scale: Vec<f64>,
}

impl Mask {
    pub fn all_active(n: usize) -> Self {
        Mask {
            active: vec![true; n],
            scale: vec![1.0; n],
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

pub fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::invalid("probability vector is empty"));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!(
                "probability {i} is {p}, expected a value in (0, 1]"
            )));
        }
    }
    Ok(())
}

impl MaskSampler {
    pub fn new(probs: Vec<f64>, seed: u64, stream_id: u64) -> Result<Self> {
        validate_probs(&probs)?;
        Ok(MaskSampler {
            probs,
            seed,
            stream_id,
        })
    }

    pub fn uniform(n: usize, p: f64, seed: u64, stream_id: u64) -> Result<Self> {
        Self::new(vec![p; n], seed, stream_id)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn sample_mask(&self, k: u64) -> Mask {
        let mut mask = Mask::all_active(self.dim());
        self.fill_mask(k, &mut mask);
        mask
    }

    /// Coordinate i at step k reads the 64-bit word at position k·n + i of
    /// the (seed, stream_id) stream.
    pub fn fill_mask(&self, k: u64, mask: &mut Mask) {
        let n = self.dim();
        mask.active.resize(n, false);
        mask.scale.resize(n, 0.0);
        let mut rng = rng::keyed(self.seed, Domain::Mask, 0, self.stream_id);
        let base = u128::from(k) * n as u128;
        let mut positioned = false;
        for (i, &p) in self.probs.iter().enumerate() {
            if p >= 1.0 {
                mask.active[i] = true;
                mask.scale[i] = 1.0;
                positioned = false;
                continue;
            }
            if !positioned {
                rng.set_word_pos(2 * (base + i as u128));
                positioned = true;
            }
            let on = rng::unit_f64(rng.next_u64()) < p;
            mask.active[i] = on;
            mask.scale[i] = if on { 1.0 / p } else { 0.0 };
        }
    }
}

/// E[C ᵀ LᵀL C] = LᵀL + Diag(s_i(1/p_i − 1)) with s_i = (LᵀL)_ii.
pub fn second_moment_matrix(l: &Matrix, probs: &[f64]) -> Result<Matrix> {
    if !l.is_square() || l.ncols() != probs.len() {
        return Err(Error::invalid(format!(
            "L is {}x{} but {} probabilities were given",
            l.nrows(),
            l.ncols(),
            probs.len()
        )));
    }
    validate_probs(probs)?;
    let mut out = l.tr_mul(l);
    for (i, &p) in probs.iter().enumerate() {
        let s = out[(i, i)];
        out[(i, i)] += s * (1.0 / p - 1.0);
    }
    Ok(out)
}

/// Σ wᵢ pᵢ, the expected number of (weighted) active sensors per step.
pub fn expected_sparsity(probs: &[f64], weights: &[f64]) -> Result<f64> {
    if probs.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} probabilities but {} weights",
            probs.len(),
            weights.len()
        )));
    }
    Ok(probs.iter().zip(weights).map(|(p, w)| p * w).sum())
}

//! Posterior of a target answer given the history.
//!
//! With a flat prior, `theta = A.y - A.N`, so the posterior of `theta` is the
//! law of the noise combination `A.N` reflected about the point estimate.
//! The law of `A.N` is approximated on the unit grid either by sampling
//! ([`mc_noise_pmv`]) or by convolving exact per-row mass vectors
//! ([`pc_noise_pmv`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorWeights;
use crate::mechanism::NoiseSource;
use crate::model::QueryHistory;
use crate::pmv::{self, ProbabilityMassVector};

/// Smallest Monte Carlo sample size accepted.
pub const MIN_SAMPLE_SIZE: usize = 10_000;

const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum InferenceMethod {
    MonteCarlo { samples: usize },
    ProbabilityCalculation { gamma: f64 },
}

impl Default for InferenceMethod {
    fn default() -> Self {
        InferenceMethod::ProbabilityCalculation { gamma: 0.01 }
    }
}

/// Discretized posterior of `theta`. The bin at offset `o` stands for
/// `theta` in `(center_value + o - 1/2, center_value + o + 1/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mass: ProbabilityMassVector,
    pub center_value: f64,
    pub method: InferenceMethod,
    pub loss: f64,
}

impl Posterior {
    pub fn new(mass: ProbabilityMassVector, center_value: f64, method: InferenceMethod) -> Self {
        let loss = mass.loss();
        Self {
            mass,
            center_value,
            method,
            loss,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.total()
    }

    /// Lower and upper edge of the bin at `offset`.
    pub fn bin_edges(&self, offset: i64) -> (f64, f64) {
        let c = self.center_value + offset as f64;
        (c - 0.5, c + 0.5)
    }

    /// Posterior mean and standard deviation over the retained mass.
    pub fn mean_std(&self) -> (f64, f64) {
        let total = self.total_mass();
        let (m1, m2) = self.mass.moments();
        let mean_off = m1 / total;
        let var = (m2 / total - mean_off * mean_off).max(0.0);
        (self.center_value + mean_off, var.sqrt())
    }
}

fn check_weights(weights: &EstimatorWeights, history: &QueryHistory) -> Result<()> {
    if weights.weights.len() != history.len() {
        return Err(Error::shape(
            "estimator weights",
            history.len(),
            weights.weights.len(),
        ));
    }
    Ok(())
}

/// Histogram of `round(sum_k A_k X_k)` over `sample_size` draws, where row
/// `k` draws `X_k ~ Lap(alpha_k / S_k)` from `source.derive(k)`.
///
/// Samples are generated in chunks in parallel; within a sample the rows are
/// summed in index order, so the output does not depend on scheduling.
pub fn mc_noise_pmv(
    weights: &EstimatorWeights,
    history: &QueryHistory,
    sample_size: usize,
    source: &NoiseSource,
) -> Result<ProbabilityMassVector> {
    check_weights(weights, history)?;
    if sample_size < MIN_SAMPLE_SIZE {
        return Err(Error::Contract(format!(
            "sample size {sample_size} below the minimum {MIN_SAMPLE_SIZE}"
        )));
    }
    let terms: Vec<(u64, f64, f64)> = weights
        .weights
        .iter()
        .zip(history.rows())
        .enumerate()
        .filter(|(_, (a, _))| **a != 0.0)
        .map(|(k, (a, r))| (k as u64, *a, 1.0 / r.noise_rate()))
        .collect();
    if terms.is_empty() {
        return Ok(ProbabilityMassVector::point());
    }
    let starts: Vec<usize> = (0..sample_size).step_by(MC_CHUNK).collect();
    let rounded: Vec<Vec<i64>> = starts
        .par_iter()
        .map(|&start| {
            let len = MC_CHUNK.min(sample_size - start);
            let mut acc = vec![0.0f64; len];
            for &(k, a, scale) in &terms {
                let mut src = source.derive(k);
                src.seek(start as u64);
                for y in acc.iter_mut() {
                    *y += a * src.laplace_scaled(scale);
                }
            }
            acc.into_iter().map(|y| y.round() as i64).collect()
        })
        .collect();
    let half = rounded
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| v.unsigned_abs())
        .max()
        .unwrap_or(0) as usize;
    let mut counts = vec![0u64; 2 * half + 1];
    for v in rounded.iter().flat_map(|c| c.iter()) {
        counts[(*v + half as i64) as usize] += 1;
    }
    let n = sample_size as f64;
    ProbabilityMassVector::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Per-row window lengths so each row loses at most `gamma / m` of its mass:
/// `ceil(2 |A_k| S_k ln(m / gamma) / alpha_k)`, made odd.
pub fn pc_lengths(
    weights: &EstimatorWeights,
    history: &QueryHistory,
    gamma: f64,
) -> Result<Vec<usize>> {
    check_weights(weights, history)?;
    check_gamma(gamma)?;
    let m = history.len() as f64;
    let log_term = (m / gamma).ln();
    Ok(weights
        .weights
        .iter()
        .zip(history.rows())
        .map(|(a, r)| {
            if *a == 0.0 {
                return 1;
            }
            let raw = (2.0 * a.abs() * r.sensitivity * log_term / r.alpha).ceil() as usize;
            let len = raw.max(1);
            if len.is_multiple_of(2) {
                len + 1
            } else {
                len
            }
        })
        .collect())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )))
    }
}

/// Per-row mass vectors of `A_k N_k`, in row order.
pub fn pc_term_vectors(
    weights: &EstimatorWeights,
    history: &QueryHistory,
    gamma: f64,
) -> Result<Vec<ProbabilityMassVector>> {
    let lengths = pc_lengths(weights, history, gamma)?;
    weights
        .weights
        .par_iter()
        .zip(history.rows().par_iter())
        .zip(lengths.par_iter())
        .map(|((a, r), &len)| pmv::laplace_pmv(r.alpha, r.sensitivity, *a, len))
        .collect()
}

/// Law of `A.N` by convolving all per-row vectors, shortest first. Total
/// truncation loss is at most `gamma`.
pub fn pc_noise_pmv(
    weights: &EstimatorWeights,
    history: &QueryHistory,
    gamma: f64,
) -> Result<ProbabilityMassVector> {
    Ok(pmv::convolve_all(pc_term_vectors(weights, history, gamma)?))
}

/// Posterior of the target. The noise vector is reflected (theta-offset is
/// minus the noise offset) and centred on `A.y`.
pub fn posterior_of(
    weights: &EstimatorWeights,
    history: &QueryHistory,
    method: InferenceMethod,
    source: &NoiseSource,
) -> Result<Posterior> {
    let center = weights.point_estimate(history)?;
    let noise = match method {
        InferenceMethod::MonteCarlo { samples } => mc_noise_pmv(weights, history, samples, source)?,
        InferenceMethod::ProbabilityCalculation { gamma } => pc_noise_pmv(weights, history, gamma)?,
    };
    Ok(Posterior::new(noise.reflected(), center, method))
}

/// `max(10^4, ceil(L p (1 - p) / gamma^2 + 1))`.
pub fn default_sample_size(expected_length: usize, peak_mass: f64, gamma: f64) -> usize {
    let bound = expected_length as f64 * peak_mass * (1.0 - peak_mass) / (gamma * gamma) + 1.0;
    let bound = bound.ceil();
    if bound > MIN_SAMPLE_SIZE as f64 {
        bound as usize
    } else {
        MIN_SAMPLE_SIZE
    }
}

/// Expected Monte Carlo error bound `|u| max(u) (1 - max(u)) / (m_s - 1)`.
pub fn mc_expected_error_bound(u: &ProbabilityMassVector, sample_size: usize) -> f64 {
    let p = u.peak();
    u.len() as f64 * p * (1.0 - p) / (sample_size as f64 - 1.0)
}

//! Best linear unbiased estimation of a target query from the noisy history.
//!
//! Rows are weighted by `(alpha_k / S_k)^2`, the inverse noise variance up to
//! a constant. The weighted normal equations are solved through a pivoted
//! Cholesky factorization of `H^T W H`; the inverse is never formed.

use crate::error::{Error, Result};
use crate::linalg::PivotedCholesky;
use crate::model::{LinearQuery, QueryHistory};

/// Row weighting used to build the normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `(alpha_k / S_k)^2`: the minimum-variance unbiased combination.
    #[default]
    Blue,
    /// Unit weights (ordinary least squares). Still unbiased, not optimal.
    Ordinary,
}

/// Linear estimator `theta_hat = A . y` for one target query.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorWeights {
    pub weights: Vec<f64>,
    pub target: LinearQuery,
}

impl EstimatorWeights {
    /// `A . y`.
    pub fn point_estimate(&self, history: &QueryHistory) -> Result<f64> {
        blue_point_estimate(self, history)
    }

    /// Variance of `A . N` for independent Laplace rows,
    /// `sum_k 2 (A_k S_k / alpha_k)^2`.
    pub fn noise_variance(&self, history: &QueryHistory) -> Result<f64> {
        self.check_rows(history)?;
        Ok(self
            .weights
            .iter()
            .zip(history.rows())
            .map(|(a, r)| {
                let b = a / r.noise_rate();
                2.0 * b * b
            })
            .sum())
    }

    fn check_rows(&self, history: &QueryHistory) -> Result<()> {
        if self.weights.len() != history.len() {
            return Err(Error::shape(
                "estimator weights",
                history.len(),
                self.weights.len(),
            ));
        }
        Ok(())
    }
}

/// Factored weighted normal equations of one history, reusable across targets.
#[derive(Debug, Clone)]
pub struct GlsSystem<'h> {
    history: &'h QueryHistory,
    row_weights: Vec<f64>,
    /// `row_weights` were divided by this before factoring.
    scale: f64,
    factor: PivotedCholesky,
}

impl<'h> GlsSystem<'h> {
    pub fn new(history: &'h QueryHistory, weighting: Weighting) -> Result<Self> {
        let n = history.cells();
        let row_weights: Vec<f64> = match weighting {
            Weighting::Blue => history
                .rows()
                .iter()
                .map(|r| r.noise_rate() * r.noise_rate())
                .collect(),
            Weighting::Ordinary => vec![1.0; history.len()],
        };
        if history.len() < n {
            return Err(Error::Estimability {
                rank: history.len(),
                cells: n,
            });
        }
        let scale = row_weights.iter().cloned().fold(0.0_f64, f64::max);
        let mut gram = vec![0.0; n * n];
        let mut support = Vec::with_capacity(n);
        for (row, &w) in history.rows().iter().zip(&row_weights) {
            let w = w / scale;
            let h = row.query.coefficients();
            support.clear();
            support.extend((0..n).filter(|&j| h[j] != 0.0));
            for &i in &support {
                let wi = w * h[i];
                for &j in &support {
                    gram[i * n + j] += wi * h[j];
                }
            }
        }
        let factor = PivotedCholesky::factor(gram, n)
            .map_err(|rank| Error::Estimability { rank, cells: n })?;
        Ok(Self {
            history,
            row_weights,
            scale,
            factor,
        })
    }

    fn check_target(&self, target: &LinearQuery) -> Result<()> {
        if target.cells() != self.history.cells() {
            return Err(Error::shape(
                "target query",
                self.history.cells(),
                target.cells(),
            ));
        }
        Ok(())
    }

    /// `A = Q G^-1 H^T W`.
    pub fn weights(&self, target: &LinearQuery) -> Result<EstimatorWeights> {
        self.check_target(target)?;
        let z = self.factor.solve(target.coefficients());
        let weights = self
            .history
            .rows()
            .iter()
            .zip(&self.row_weights)
            .map(|(row, &w)| {
                let hz: f64 = row
                    .query
                    .coefficients()
                    .iter()
                    .zip(&z)
                    .map(|(h, z)| h * z)
                    .sum();
                (w / self.scale) * hz
            })
            .collect();
        Ok(EstimatorWeights {
            weights,
            target: target.clone(),
        })
    }

    /// `2 Q G^-1 Q^T`. Equals the estimator variance only for BLUE weighting.
    pub fn gls_variance(&self, target: &LinearQuery) -> Result<f64> {
        self.check_target(target)?;
        let q = target.coefficients();
        let z = self.factor.solve(q);
        let qz: f64 = q.iter().zip(&z).map(|(a, b)| a * b).sum();
        Ok(2.0 * qz / self.scale)
    }

    /// Cell estimate `x_hat = G^-1 H^T W y`.
    pub fn cells_estimate(&self) -> Vec<f64> {
        let n = self.history.cells();
        let mut rhs = vec![0.0; n];
        for (row, &w) in self.history.rows().iter().zip(&self.row_weights) {
            let wy = (w / self.scale) * row.noisy_answer;
            for (r, h) in rhs.iter_mut().zip(row.query.coefficients()) {
                *r += h * wy;
            }
        }
        self.factor.solve(&rhs)
    }
}

pub fn estimator_matrix(history: &QueryHistory, target: &LinearQuery) -> Result<EstimatorWeights> {
    GlsSystem::new(history, Weighting::Blue)?.weights(target)
}

pub fn blue_point_estimate(weights: &EstimatorWeights, history: &QueryHistory) -> Result<f64> {
    weights.check_rows(history)?;
    Ok(weights
        .weights
        .iter()
        .zip(history.rows())
        .map(|(a, r)| a * r.noisy_answer)
        .sum())
}

/// BLUE of all cells.
pub fn blue_cells(history: &QueryHistory) -> Result<Vec<f64>> {
    Ok(GlsSystem::new(history, Weighting::Blue)?.cells_estimate())
}

/// Mean squared error of the BLUE, `2 Q (H^T W H)^-1 Q^T`.
pub fn estimate_variance(history: &QueryHistory, target: &LinearQuery) -> Result<f64> {
    GlsSystem::new(history, Weighting::Blue)?.gls_variance(target)
}

/// Chebyshev bound: `Pr(|theta - theta_hat| <= epsilon) >= 1 - returned`.
pub fn chebyshev_delta(variance: f64, epsilon: f64) -> f64 {
    (variance / (epsilon * epsilon)).min(1.0)
}

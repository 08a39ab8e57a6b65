//! Privacy accounting.
//!
//! A row answered with budget `alpha` and sensitivity `S` costs cell `j`
//! `(alpha / S) |H_j|`: for a record in that cell the row is a query of
//! sensitivity `|H_j|` under `Lap(alpha / S)` noise. Costs add up across rows
//! (sequential composition) and the system cost is the worst cell (parallel
//! composition across cells). This holds under the usual assumption that
//! cells are independent or negatively correlated; the ledger does not check
//! it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearQuery, QueryHistory};

/// Budget needed so that a fresh Laplace answer lies within `epsilon` of the
/// truth with probability `1 - delta`: `S ln(1/delta) / epsilon`.
pub fn allocate_budget(sensitivity: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(sensitivity > 0.0 && epsilon > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "allocation needs S > 0, epsilon > 0, 0 < delta < 1; got {sensitivity}, {epsilon}, {delta}"
        )));
    }
    Ok(sensitivity * (1.0 / delta).ln() / epsilon)
}

/// `Pr(|Lap(alpha / S)| <= epsilon) = 1 - exp(-epsilon alpha / S)`.
pub fn laplace_coverage(alpha: f64, sensitivity: f64, epsilon: f64) -> f64 {
    -(-epsilon * alpha / sensitivity).exp_m1()
}

/// Per-cell spent budget and the overall bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    per_cell: Vec<f64>,
    bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    Admit,
    /// The candidate would push the worst cell `excess` above the bound.
    Reject {
        excess: f64,
    },
}

/// `(alpha / S) |Q_j|` for every cell.
fn row_cost(query: &LinearQuery, alpha: f64) -> impl Iterator<Item = f64> + '_ {
    let rate = alpha / query.sensitivity();
    query.coefficients().iter().map(move |q| rate * q.abs())
}

/// Per-cell cost `B` and system cost `max(B)` of a history.
pub fn system_cost(history: &QueryHistory) -> (Vec<f64>, f64) {
    let mut per_cell = vec![0.0; history.cells()];
    for row in history.rows() {
        for (b, c) in per_cell.iter_mut().zip(row_cost(&row.query, row.alpha)) {
            *b += c;
        }
    }
    let alpha_bar = per_cell.iter().copied().fold(0.0, f64::max);
    (per_cell, alpha_bar)
}

impl BudgetLedger {
    /// Empty ledger; `bound` may be `f64::INFINITY`.
    pub fn new(cells: usize, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::Parameter(format!(
                "budget bound must be positive, got {bound}"
            )));
        }
        Ok(Self {
            per_cell: vec![0.0; cells],
            bound,
        })
    }

    pub fn from_history(history: &QueryHistory, bound: f64) -> Result<Self> {
        let mut ledger = Self::new(history.cells(), bound)?;
        ledger.per_cell = system_cost(history).0;
        Ok(ledger)
    }

    pub fn per_cell(&self) -> &[f64] {
        &self.per_cell
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn alpha_bar(&self) -> f64 {
        self.per_cell.iter().copied().fold(0.0, f64::max)
    }

    pub fn admit(&self, candidate: &LinearQuery, candidate_alpha: f64) -> Result<Admission> {
        if !(candidate_alpha > 0.0 && candidate_alpha.is_finite()) {
            return Err(Error::Contract(format!(
                "candidate budget must be positive, got {candidate_alpha}"
            )));
        }
        if candidate.cells() != self.per_cell.len() {
            return Err(Error::shape(
                "admission candidate",
                self.per_cell.len(),
                candidate.cells(),
            ));
        }
        let worst = self
            .per_cell
            .iter()
            .zip(row_cost(candidate, candidate_alpha))
            .map(|(b, c)| b + c)
            .fold(0.0, f64::max);
        Ok(if worst <= self.bound {
            Admission::Admit
        } else {
            Admission::Reject {
                excess: worst - self.bound,
            }
        })
    }

    /// Adds a row's cost. Bitwise equal to recomputing [`system_cost`] over the
    /// extended history, since both add rows in the same order.
    pub fn record(&mut self, query: &LinearQuery, alpha: f64) -> Result<()> {
        if query.cells() != self.per_cell.len() {
            return Err(Error::shape(
                "ledger record",
                self.per_cell.len(),
                query.cells(),
            ));
        }
        for (b, c) in self.per_cell.iter_mut().zip(row_cost(query, alpha)) {
            *b += c;
        }
        Ok(())
    }
}

//! Utility-driven query answering.
//!
//! Each request carries an `(epsilon, delta)` requirement. The engine first
//! tries to serve it from the history: BLUE estimate, posterior, credible
//! interval at `1 - delta`. If that interval is no wider than `2 epsilon` the
//! answer costs nothing. Otherwise it allocates the smallest budget that meets
//! the requirement with a fresh Laplace answer, checks it against the overall
//! bound, and appends the answer to the history.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{GlsSystem, Weighting};
use crate::inference::{self, InferenceMethod, MIN_SAMPLE_SIZE};
use crate::interval::credible_interval;
use crate::ledger::{allocate_budget, Admission, BudgetLedger};
use crate::mechanism::{answer_query, NoiseSource};
use crate::model::{CountCube, HistoryRow, LinearQuery, QueryHistory, UtilityRequirement};

/// Stream of the master seed reserved for Monte Carlo inference draws.
const INFERENCE_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Try the history before spending budget.
    Inference,
    /// Always allocate a fresh answer.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub method: InferenceMethod,
    pub weighting: Weighting,
    pub mode: Mode,
    /// Overall privacy budget; `f64::INFINITY` for an unbounded system.
    pub bound: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            method: InferenceMethod::default(),
            weighting: Weighting::Blue,
            mode: Mode::Inference,
            bound: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedFrom {
    HistoryInference,
    FreshMechanism,
    Rejected,
}

impl ServedFrom {
    pub fn as_str(self) -> &'static str {
        match self {
            ServedFrom::HistoryInference => "history_inference",
            ServedFrom::FreshMechanism => "fresh_mechanism",
            ServedFrom::Rejected => "rejected",
        }
    }
}

/// Rejected responses carry NaN estimate and bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResponse {
    pub served_from: ServedFrom,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha_spent: f64,
}

impl QueryResponse {
    pub fn is_answered(&self) -> bool {
        self.served_from != ServedFrom::Rejected
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// One line of the run log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub qid: usize,
    pub response: QueryResponse,
    pub requirement: UtilityRequirement,
    pub true_theta: Option<f64>,
}

/// Cube, history, ledger and configuration of one answering system.
#[derive(Debug, Clone)]
pub struct Engine {
    cube: CountCube,
    history: QueryHistory,
    ledger: BudgetLedger,
    config: EngineConfig,
    seed: u64,
    queries_seen: u64,
}

impl Engine {
    pub fn new(
        cube: CountCube,
        history: QueryHistory,
        config: EngineConfig,
        seed: u64,
    ) -> Result<Self> {
        if history.cells() != cube.cells() {
            return Err(Error::shape(
                "engine history",
                cube.cells(),
                history.cells(),
            ));
        }
        match config.method {
            InferenceMethod::MonteCarlo { samples } if samples < MIN_SAMPLE_SIZE => {
                return Err(Error::Parameter(format!(
                    "sample size {samples} below the minimum {MIN_SAMPLE_SIZE}"
                )))
            }
            InferenceMethod::ProbabilityCalculation { gamma } if !(gamma > 0.0 && gamma < 1.0) => {
                return Err(Error::Parameter(format!(
                    "gamma must lie in (0, 1), got {gamma}"
                )))
            }
            _ => {}
        }
        let ledger = BudgetLedger::from_history(&history, config.bound)?;
        if ledger.alpha_bar() > config.bound {
            return Err(Error::Contract(format!(
                "initial history already costs {} above the bound {}",
                ledger.alpha_bar(),
                config.bound
            )));
        }
        Ok(Self {
            cube,
            history,
            ledger,
            config,
            seed,
            queries_seen: 0,
        })
    }

    pub fn cube(&self) -> &CountCube {
        &self.cube
    }

    pub fn history(&self) -> &QueryHistory {
        &self.history
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Hash of the history and ledger contents, for change detection.
    pub fn state_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.history.len().hash(&mut h);
        for row in self.history.rows() {
            row.alpha.to_bits().hash(&mut h);
            row.noisy_answer.to_bits().hash(&mut h);
            for q in row.query.coefficients() {
                q.to_bits().hash(&mut h);
            }
        }
        for b in self.ledger.per_cell() {
            b.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Serves one request, spending budget only if the history cannot meet
    /// the requirement.
    pub fn answer(
        &mut self,
        query: &LinearQuery,
        requirement: UtilityRequirement,
    ) -> Result<QueryResponse> {
        if query.cells() != self.cube.cells() {
            return Err(Error::shape("query", self.cube.cells(), query.cells()));
        }
        let qid = self.queries_seen;
        self.queries_seen += 1;
        if self.config.mode == Mode::Inference {
            if let Some(r) = self.serve_from_history(query, requirement, qid)? {
                return Ok(r);
            }
        }
        let alpha = allocate_budget(query.sensitivity(), requirement.epsilon, requirement.delta)?;
        if let Admission::Reject { .. } = self.ledger.admit(query, alpha)? {
            return Ok(QueryResponse {
                served_from: ServedFrom::Rejected,
                estimate: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
                alpha_spent: 0.0,
            });
        }
        let mut source = NoiseSource::new(self.seed, self.history.len() as u64);
        let y = answer_query(&self.cube, query, alpha, &mut source)?;
        self.history
            .push(HistoryRow::new(query.clone(), y, alpha)?)?;
        self.ledger.record(query, alpha)?;
        Ok(QueryResponse {
            served_from: ServedFrom::FreshMechanism,
            estimate: y,
            lower: y - requirement.epsilon,
            upper: y + requirement.epsilon,
            alpha_spent: alpha,
        })
    }

    fn serve_from_history(
        &self,
        query: &LinearQuery,
        requirement: UtilityRequirement,
        qid: u64,
    ) -> Result<Option<QueryResponse>> {
        if self.history.len() < self.cube.cells() {
            return Ok(None);
        }
        let system = match GlsSystem::new(&self.history, self.config.weighting) {
            Ok(s) => s,
            Err(Error::Estimability { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let weights = system.weights(query)?;
        if !interval_can_fit(&weights, &self.history, requirement)? {
            return Ok(None);
        }
        let source = NoiseSource::new(self.seed, INFERENCE_STREAM).derive(qid);
        let posterior =
            inference::posterior_of(&weights, &self.history, self.config.method, &source)?;
        let ci = match credible_interval(&posterior, requirement.delta) {
            Ok(ci) => ci,
            Err(Error::Coverage { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if ci.width() > 2.0 * requirement.epsilon {
            return Ok(None);
        }
        Ok(Some(QueryResponse {
            served_from: ServedFrom::HistoryInference,
            estimate: posterior.center_value,
            lower: ci.lower,
            upper: ci.upper,
            alpha_spent: 0.0,
        }))
    }

    /// Answers requests in order. A rejection does not stop the session.
    /// `record_truth` fills the true answer column of the log.
    pub fn run_session<'q, I>(&mut self, requests: I, record_truth: bool) -> Result<Vec<RunRecord>>
    where
        I: IntoIterator<Item = (&'q LinearQuery, UtilityRequirement)>,
    {
        let mut log = Vec::new();
        for (qid, (query, requirement)) in requests.into_iter().enumerate() {
            let response = self.answer(query, requirement)?;
            let true_theta = if record_truth {
                Some(query.true_answer(&self.cube)?)
            } else {
                None
            };
            log.push(RunRecord {
                qid,
                response,
                requirement,
                true_theta,
            });
        }
        Ok(log)
    }
}

/// Cheap necessary condition for the history branch, checked before building
/// the posterior. `A.N` is a sum of independent Laplace terms, so its density
/// is symmetric and log-concave and never exceeds `1 / (sd sqrt 2)`. Rounding
/// each nonzero term to the grid moves the sum by at most 1/2 per term, so
/// the `2k + 1` bins of a width-`2k` interval hold at most
/// `(2k + 1 + terms) / (sd sqrt 2)`.
fn interval_can_fit(
    weights: &crate::estimator::EstimatorWeights,
    history: &QueryHistory,
    requirement: UtilityRequirement,
) -> Result<bool> {
    let sd = weights.noise_variance(history)?.sqrt();
    let terms = weights.weights.iter().filter(|a| **a != 0.0).count() as f64;
    let k = requirement.epsilon.floor();
    let most = (2.0 * k + 1.0 + terms) / (sd * std::f64::consts::SQRT_2);
    // generous margin for summation error in the posterior masses
    Ok(most * (1.0 + 1e-6) >= 1.0 - requirement.delta)
}

fn optional(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the run log CSV
/// `qid,served_from,alpha_spent,estimate,L,U,epsilon,delta,true_theta`.
pub fn write_run_log<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("<run log>", e.into());
    w.write_record([
        "qid",
        "served_from",
        "alpha_spent",
        "estimate",
        "L",
        "U",
        "epsilon",
        "delta",
        "true_theta",
    ])
    .map_err(io)?;
    for r in records {
        let resp = &r.response;
        w.write_record([
            r.qid.to_string(),
            resp.served_from.as_str().to_string(),
            resp.alpha_spent.to_string(),
            optional(resp.estimate),
            optional(resp.lower),
            optional(resp.upper),
            r.requirement.epsilon.to_string(),
            r.requirement.delta.to_string(),
            r.true_theta.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<run log>", e))
}

//! Cubes, linear queries, utility requirements and the noisy query history.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of nonnegative cell counts, cell `j` at index `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCube {
    counts: Vec<u64>,
}

impl CountCube {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Parameter("a cube needs at least one cell".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cells(&self) -> usize {
        self.counts.len()
    }
}

/// Coefficient row of a linear counting query. Constants in the predicate are
/// not part of the query: they change neither the sensitivity nor the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LinearQuery {
    coefficients: Vec<f64>,
}

impl LinearQuery {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::Parameter(
                "a query needs at least one coefficient".into(),
            ));
        }
        if let Some(bad) = coefficients.iter().find(|c| !c.is_finite()) {
            return Err(Error::Parameter(format!("non-finite coefficient {bad}")));
        }
        if coefficients.iter().all(|&c| c == 0.0) {
            return Err(Error::DegenerateQuery);
        }
        Ok(Self { coefficients })
    }

    /// Unit indicator row for a single cell.
    pub fn unit(cells: usize, cell: usize) -> Self {
        let mut coefficients = vec![0.0; cells];
        coefficients[cell] = 1.0;
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn cells(&self) -> usize {
        self.coefficients.len()
    }

    /// L1 sensitivity of the query: one record moves one cell count by one,
    /// so the answer moves by at most the largest absolute coefficient.
    pub fn sensitivity(&self) -> f64 {
        self.coefficients
            .iter()
            .fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn true_answer(&self, cube: &CountCube) -> Result<f64> {
        true_answer(cube, self)
    }
}

impl TryFrom<Vec<f64>> for LinearQuery {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LinearQuery> for Vec<f64> {
    fn from(q: LinearQuery) -> Self {
        q.coefficients
    }
}

/// Sensitivity of a coefficient row; errors on an all-zero row.
pub fn sensitivity_of(coefficients: &[f64]) -> Result<f64> {
    let s = coefficients.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if s == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    Ok(s)
}

pub fn true_answer(cube: &CountCube, query: &LinearQuery) -> Result<f64> {
    if cube.cells() != query.cells() {
        return Err(Error::shape("true_answer", cube.cells(), query.cells()));
    }
    Ok(query
        .coefficients
        .iter()
        .zip(&cube.counts)
        .map(|(q, &x)| q * x as f64)
        .sum())
}

/// The user asks for a credible interval of half-length at most `epsilon`
/// holding the answer with probability at least `1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityRequirement {
    pub epsilon: f64,
    pub delta: f64,
}

impl UtilityRequirement {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }
}

/// One answered query: coefficients, noisy answer, budget, sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub query: LinearQuery,
    pub noisy_answer: f64,
    pub alpha: f64,
    pub sensitivity: f64,
}

impl HistoryRow {
    pub fn new(query: LinearQuery, noisy_answer: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let sensitivity = query.sensitivity();
        Ok(Self {
            query,
            noisy_answer,
            alpha,
            sensitivity,
        })
    }

    /// Laplace rate of this row's noise, `alpha / sensitivity`.
    pub fn noise_rate(&self) -> f64 {
        self.alpha / self.sensitivity
    }
}

/// Aligned records `(H, y, alpha, S)` over a fixed number of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHistory {
    cells: usize,
    rows: Vec<HistoryRow>,
}

impl QueryHistory {
    pub fn new(cells: usize) -> Self {
        Self {
            cells,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(cells: usize, rows: Vec<HistoryRow>) -> Result<Self> {
        let mut h = Self::new(cells);
        for r in rows {
            h.push(r)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, row: HistoryRow) -> Result<()> {
        if row.query.cells() != self.cells {
            return Err(Error::shape("history row", self.cells, row.query.cells()));
        }
        if row.sensitivity != row.query.sensitivity() {
            return Err(Error::Contract(format!(
                "row sensitivity {} differs from max |coefficient| {}",
                row.sensitivity,
                row.query.sensitivity()
            )));
        }
        if !(row.alpha > 0.0 && row.alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be positive, got {}",
                row.alpha
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[HistoryRow] {
        &self.rows
    }

    pub fn answers(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.noisy_answer).collect()
    }
}

/// Reads a cube file: one nonnegative integer count per line.
pub fn load_cube<R: BufRead>(source: R) -> Result<CountCube> {
    let mut counts = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let field = line.trim();
        if field.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty line".into(),
            });
        }
        if field.starts_with('-') {
            return Err(Error::Parse {
                line: lineno,
                message: format!("negative count {field}"),
            });
        }
        let count = field.parse::<u64>().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("not a nonnegative integer: {field:?}"),
        })?;
        counts.push(count);
    }
    if counts.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty cube file".into(),
        });
    }
    CountCube::new(counts)
}

/// Contents of a query file. `epsilon`/`delta` may be omitted by tools that
/// only read history.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub query: LinearQuery,
    pub requirement: Option<UtilityRequirement>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuerySpec {
    coefficients: Vec<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    constant: Option<serde_json::Value>,
}

pub fn parse_query_spec(text: &str) -> Result<QuerySpec> {
    let raw: RawQuerySpec = serde_json::from_str(text)?;
    if raw.constant.is_some() {
        return Err(Error::Parameter(
            "query constants are not accepted: a constant offset does not depend on the \
             data, so drop it from the query and add it to the answer yourself"
                .into(),
        ));
    }
    let query = LinearQuery::new(raw.coefficients)?;
    let requirement = match (raw.epsilon, raw.delta) {
        (Some(e), Some(d)) => Some(UtilityRequirement::new(e, d)?),
        (None, None) => None,
        _ => {
            return Err(Error::Parameter(
                "epsilon and delta must be given together".into(),
            ))
        }
    };
    Ok(QuerySpec { query, requirement })
}

//! Experiment harness: synthetic workloads, a hierarchical bootstrap history,
//! metrics, and side-by-side runs of the inference engine against the
//! always-fresh baseline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{write_run_log, Engine, EngineConfig, Mode, RunRecord};
use crate::error::{Error, Result};
use crate::estimator::Weighting;
use crate::inference::InferenceMethod;
use crate::mechanism::{answer_query, NoiseSource};
use crate::model::{CountCube, HistoryRow, LinearQuery, QueryHistory, UtilityRequirement};

// Streams of the experiment seed.
const CUBE_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;
const REQUIREMENT_STREAM: u64 = 3;
const BOOTSTRAP_STREAM: u64 = 4;

/// Cell popularity `0.9 * 10^-floor(j / 10)` for zero-based `j`, normalized.
pub fn cell_distribution(n: usize) -> Vec<f64> {
    assert!(n >= 1, "cell_distribution needs at least one cell");
    let raw: Vec<f64> = (0..n)
        .map(|j| 0.9 * 10f64.powi(-((j / 10) as i32)))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Multinomial queries: each draws `n_t` uniform on `1..=10`, then assigns
/// `n_t` trials to cells by [`cell_distribution`].
pub fn generate_queries(n: usize, count: usize, source: &mut NoiseSource) -> Vec<LinearQuery> {
    let dist = WeightedIndex::new(cell_distribution(n)).expect("positive weights");
    let rng = source.rng();
    (0..count)
        .map(|_| {
            let trials = rng.gen_range(1..=10);
            let mut q = vec![0.0; n];
            for _ in 0..trials {
                q[dist.sample(rng)] += 1.0;
            }
            LinearQuery::new(q).expect("at least one trial")
        })
        .collect()
}

/// Number of levels of the binary partition tree over `n` cells.
pub fn tree_depth(n: usize) -> usize {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize + 1
}

/// Binary partition tree over the cells, answered level by level with
/// `total_alpha / depth` per level. Each level's ranges are disjoint and cover
/// every cell (single cells repeat on deeper levels), so the system cost is
/// `total_alpha`. The last level holds every unit row, so the history has
/// full rank.
pub fn build_hier_history(
    cube: &CountCube,
    total_alpha: f64,
    source: &mut NoiseSource,
) -> Result<QueryHistory> {
    if !(total_alpha > 0.0 && total_alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "bootstrap budget must be positive, got {total_alpha}"
        )));
    }
    let n = cube.cells();
    let depth = tree_depth(n);
    let alpha = total_alpha / depth as f64;
    let mut history = QueryHistory::new(n);
    let mut level = vec![(0usize, n)];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(2 * level.len());
        for &(lo, hi) in &level {
            let mut q = vec![0.0; n];
            q[lo..hi].iter_mut().for_each(|c| *c = 1.0);
            let query = LinearQuery::new(q)?;
            let y = answer_query(cube, &query, alpha, source)?;
            history.push(HistoryRow::new(query, y, alpha)?)?;
            if hi - lo > 1 {
                let mid = lo + (hi - lo).div_ceil(2);
                next.push((lo, mid));
                next.push((mid, hi));
            } else {
                next.push((lo, hi));
            }
        }
        level = next;
    }
    Ok(history)
}

/// Answering ratio, reliability ratio and mean relative error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub answering_ratio: f64,
    pub reliability: f64,
    pub relative_error: f64,
    pub answered: usize,
    pub total: usize,
}

/// `R_a` = answered / total, `R_i` = share of answered intervals holding the
/// truth, `E` = mean of `|estimate - theta| / (2 epsilon)` over answered.
/// `R_i` and `E` are NaN when nothing was answered.
pub fn compute_metrics(log: &[RunRecord], truths: &[f64]) -> Result<Metrics> {
    if log.len() != truths.len() {
        return Err(Error::shape("metrics truths", log.len(), truths.len()));
    }
    let mut answered = 0usize;
    let mut covered = 0usize;
    let mut error = 0.0;
    for (r, &theta) in log.iter().zip(truths) {
        if !r.response.is_answered() {
            continue;
        }
        answered += 1;
        if r.response.contains(theta) {
            covered += 1;
        }
        error += (r.response.estimate - theta).abs() / (2.0 * r.requirement.epsilon);
    }
    let total = log.len();
    let ratio = |a: f64, b: usize| if b == 0 { f64::NAN } else { a / b as f64 };
    Ok(Metrics {
        answering_ratio: ratio(answered as f64, total),
        reliability: ratio(covered as f64, answered),
        relative_error: ratio(error, answered),
        answered,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    #[default]
    Pc,
    Mc,
}

/// Experiment configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub queries: usize,
    pub seed: u64,
    /// Overall budget; absent for an unbounded system.
    #[serde(default)]
    pub bound: Option<f64>,
    /// Range of the half-width `epsilon`, drawn uniformly per query.
    pub epsilon_range: [f64; 2],
    pub delta: f64,
    #[serde(default)]
    pub method: MethodName,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub samples: Option<usize>,
    /// Budget of the hierarchical bootstrap history; absent or 0 for none.
    #[serde(default)]
    pub bootstrap_alpha: Option<f64>,
    /// Use unit row weights instead of BLUE weights.
    #[serde(default)]
    pub ols: bool,
}

fn default_gamma() -> f64 {
    0.01
}

impl ExperimentConfig {
    /// Unbounded system with a bootstrap history at 0.3 and `2 epsilon`
    /// uniform on `[50, 1000]`.
    pub fn unbounded() -> Self {
        Self {
            n: 100,
            queries: 1000,
            seed: 2012,
            bound: None,
            epsilon_range: [25.0, 500.0],
            delta: 0.2,
            method: MethodName::Pc,
            gamma: 0.01,
            samples: None,
            bootstrap_alpha: Some(0.3),
            ols: false,
        }
    }

    /// Overall budget 1, empty start, `2 epsilon` uniform on `[1, 1000]`.
    /// Ten cells, so the history can reach full rank before the budget runs
    /// out.
    pub fn bounded() -> Self {
        Self {
            n: 10,
            bound: Some(1.0),
            epsilon_range: [0.5, 500.0],
            bootstrap_alpha: None,
            ..Self::unbounded()
        }
    }

    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.epsilon_range;
        if self.n == 0 || self.queries == 0 {
            return Err(Error::Parameter("n and queries must be positive".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Parameter(format!("bad epsilon_range [{lo}, {hi}]")));
        }
        UtilityRequirement::new(lo, self.delta)?;
        Ok(())
    }

    fn method(&self) -> InferenceMethod {
        match self.method {
            MethodName::Pc => InferenceMethod::ProbabilityCalculation { gamma: self.gamma },
            MethodName::Mc => InferenceMethod::MonteCarlo {
                samples: self.samples.unwrap_or(100_000),
            },
        }
    }
}

/// Outcome of one mode of an experiment.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub log: Vec<RunRecord>,
    pub metrics: Metrics,
    /// System cost after each query.
    pub alpha_bar: Vec<f64>,
    pub final_history: QueryHistory,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub inference: ModeRun,
    pub baseline: ModeRun,
}

/// Workload of an experiment: cube, queries, requirements, bootstrap history.
#[derive(Debug, Clone)]
pub struct Workload {
    pub cube: CountCube,
    pub queries: Vec<LinearQuery>,
    pub requirements: Vec<UtilityRequirement>,
    pub history: QueryHistory,
}

/// Synthetic cube (counts uniform on `0..=1000`), queries, requirements and
/// bootstrap history, all derived from the config seed.
pub fn build_workload(config: &ExperimentConfig) -> Result<Workload> {
    config.validate()?;
    let mut cube_src = NoiseSource::new(config.seed, CUBE_STREAM);
    let counts = (0..config.n)
        .map(|_| cube_src.rng().gen_range(0..=1000u64))
        .collect();
    let cube = CountCube::new(counts)?;
    let queries = generate_queries(
        config.n,
        config.queries,
        &mut NoiseSource::new(config.seed, QUERY_STREAM),
    );
    let mut req_src = NoiseSource::new(config.seed, REQUIREMENT_STREAM);
    let [lo, hi] = config.epsilon_range;
    let requirements = (0..config.queries)
        .map(|_| {
            let eps = if lo == hi {
                lo
            } else {
                req_src.rng().gen_range(lo..=hi)
            };
            UtilityRequirement::new(eps, config.delta)
        })
        .collect::<Result<Vec<_>>>()?;
    let history = match config.bootstrap_alpha {
        Some(a) if a > 0.0 => build_hier_history(
            &cube,
            a,
            &mut NoiseSource::new(config.seed, BOOTSTRAP_STREAM),
        )?,
        _ => QueryHistory::new(config.n),
    };
    Ok(Workload {
        cube,
        queries,
        requirements,
        history,
    })
}

fn run_mode(workload: &Workload, config: &ExperimentConfig, mode: Mode) -> Result<ModeRun> {
    let engine_config = EngineConfig {
        method: config.method(),
        weighting: if config.ols {
            Weighting::Ordinary
        } else {
            Weighting::Blue
        },
        mode,
        bound: config.bound.unwrap_or(f64::INFINITY),
    };
    // Both modes share the mechanism seed, so equal history positions see
    // equal noise.
    let engine_seed = config.seed.wrapping_add(0x5EED);
    let mut engine = Engine::new(
        workload.cube.clone(),
        workload.history.clone(),
        engine_config,
        engine_seed,
    )?;
    let mut log = Vec::with_capacity(workload.queries.len());
    let mut alpha_bar = Vec::with_capacity(workload.queries.len());
    let mut truths = Vec::with_capacity(workload.queries.len());
    for (qid, (q, req)) in workload
        .queries
        .iter()
        .zip(&workload.requirements)
        .enumerate()
    {
        let response = engine.answer(q, *req)?;
        let theta = q.true_answer(&workload.cube)?;
        truths.push(theta);
        alpha_bar.push(engine.ledger().alpha_bar());
        log.push(RunRecord {
            qid,
            response,
            requirement: *req,
            true_theta: Some(theta),
        });
    }
    let metrics = compute_metrics(&log, &truths)?;
    Ok(ModeRun {
        log,
        metrics,
        alpha_bar,
        final_history: engine.history().clone(),
    })
}

/// Runs inference and baseline modes on the same workload. With `out_dir`,
/// writes `run_log_inference.csv`, `run_log_baseline.csv`, `metrics.csv` and
/// `trajectory.csv` there.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    let workload = build_workload(config)?;
    let inference = run_mode(&workload, config, Mode::Inference)?;
    let baseline = run_mode(&workload, config, Mode::Baseline)?;
    let report = ExperimentReport {
        inference,
        baseline,
    };
    if let Some(dir) = out_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, run) in [
        ("inference", &report.inference),
        ("baseline", &report.baseline),
    ] {
        let path = dir.join(format!("run_log_{name}.csv"));
        write_run_log(&run.log, create(&path)?).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(&path, source),
            other => other,
        })?;
    }
    let path = dir.join("metrics.csv");
    let mut out = create(&path)?;
    let mut text =
        String::from("mode,answering_ratio,reliability,relative_error,answered,total,alpha_bar\n");
    for (name, run) in [
        ("inference", &report.inference),
        ("baseline", &report.baseline),
    ] {
        let m = &run.metrics;
        text.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            m.answering_ratio,
            m.reliability,
            m.relative_error,
            m.answered,
            m.total,
            run.alpha_bar.last().copied().unwrap_or(0.0)
        ));
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&path, e))?;
    let path = dir.join("trajectory.csv");
    let mut out = create(&path)?;
    let mut text = String::from(
        "qid,alpha_bar_inference,alpha_bar_baseline,answered_inference,answered_baseline\n",
    );
    let (mut ai, mut ab) = (0usize, 0usize);
    for (qid, (ri, rb)) in report
        .inference
        .log
        .iter()
        .zip(&report.baseline.log)
        .enumerate()
    {
        ai += usize::from(ri.response.is_answered());
        ab += usize::from(rb.response.is_answered());
        text.push_str(&format!(
            "{qid},{},{},{ai},{ab}\n",
            report.inference.alpha_bar[qid], report.baseline.alpha_bar[qid]
        ));
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&path, e))
}

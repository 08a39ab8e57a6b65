//! Command line front end.
//!
//! Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, ExperimentConfig};
use crate::engine::{write_run_log, Engine, EngineConfig, Mode};
use crate::error::Error;
use crate::estimator::{GlsSystem, Weighting};
use crate::inference::{self, InferenceMethod, Posterior};
use crate::interval::{credible_interval, tail_probability};
use crate::io as files;
use crate::ledger::{allocate_budget, system_cost};
use crate::mechanism::{answer_query, NoiseSource};
use crate::model::{self, HistoryRow, QueryHistory, QuerySpec, UtilityRequirement};

#[derive(Parser, Debug)]
#[command(
    name = "dpbayes",
    version,
    about = "Differentially private linear queries with Bayesian inference over the answer history"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Count cube file, one count per line.
    #[arg(long, global = true)]
    cube: Option<PathBuf>,
    /// History CSV `alpha,sensitivity,y,q_0,...`.
    #[arg(long, global = true)]
    history: Option<PathBuf>,
    /// Truncation loss of the convolution posterior.
    #[arg(long, global = true, default_value_t = 0.01)]
    gamma: f64,
    /// Monte Carlo sample size (default: derived from gamma).
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Posterior approximation.
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Pc)]
    method: MethodArg,
    /// Required half-width of the answer interval.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Allowed probability of missing the interval.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Overall privacy budget (unbounded if absent).
    #[arg(long, global = true)]
    bound: Option<f64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Pc,
    Mc,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Answer one query with the Laplace mechanism.
    Answer {
        /// Query JSON file.
        #[arg(long)]
        query: PathBuf,
        /// Budget to spend; derived from --epsilon/--delta if absent.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// BLUE estimate and variance of a query from the history.
    Estimate {
        #[arg(long)]
        query: PathBuf,
    },
    /// Posterior mass vector of a query given the history.
    Infer {
        #[arg(long)]
        query: PathBuf,
    },
    /// Credible interval at 1 - delta.
    Interval {
        /// Query JSON file (with --history).
        #[arg(long, conflicts_with = "posterior")]
        query: Option<PathBuf>,
        /// Posterior PMV CSV written by `infer`.
        #[arg(long)]
        posterior: Option<PathBuf>,
        /// Also report the posterior probability that the answer exceeds this.
        #[arg(long, allow_negative_numbers = true)]
        above: Option<f64>,
    },
    /// Per-cell privacy cost of the history and its maximum.
    Cost,
    /// Budget meeting an (epsilon, delta) requirement with a fresh answer.
    Allocate {
        #[arg(long, conflicts_with = "query")]
        sensitivity: Option<f64>,
        #[arg(long)]
        query: Option<PathBuf>,
    },
    /// Serve a list of requests through the answering engine.
    ServeBatch {
        /// JSON array of query objects with epsilon and delta.
        #[arg(long)]
        requests: PathBuf,
        /// Where to write the final history.
        #[arg(long)]
        history_out: Option<PathBuf>,
        /// Fill the true answer column of the run log.
        #[arg(long)]
        truth: bool,
        /// Never use the history (always allocate fresh budget).
        #[arg(long)]
        baseline: bool,
    },
    /// Run an experiment: inference engine against the baseline.
    Bench {
        /// Experiment config JSON.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Unbounded,
    Bounded,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (program name first), runs the verb and returns the exit
/// status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli, &mut out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(Error::io(path, e))
}

fn stdout_err(e: io::Error) -> Failure {
    Failure::Runtime(Error::io("<stdout>", e))
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    match v {
        Some(p) => Ok(p),
        None => usage(format!("this verb needs --{flag}")),
    }
}

fn requirement(g: &Global) -> CliResult<UtilityRequirement> {
    match (g.epsilon, g.delta) {
        (Some(e), Some(d)) => Ok(UtilityRequirement::new(e, d)?),
        _ => usage("this verb needs --epsilon and --delta"),
    }
}

fn load_query(path: &Path, cells: Option<usize>) -> CliResult<QuerySpec> {
    let spec = files::read_query(path)?;
    if let Some(n) = cells {
        if spec.query.cells() != n {
            return Err(Error::shape("query file", n, spec.query.cells()).into());
        }
    }
    Ok(spec)
}

/// Inference method from the flags; Monte Carlo defaults to 10^5 samples.
fn configured_method(g: &Global) -> InferenceMethod {
    match g.method {
        MethodArg::Pc => InferenceMethod::ProbabilityCalculation { gamma: g.gamma },
        MethodArg::Mc => InferenceMethod::MonteCarlo {
            samples: g.samples.unwrap_or(100_000),
        },
    }
}

fn posterior_from_history(g: &Global, query_path: &Path) -> CliResult<Posterior> {
    let history = files::read_history(need(&g.history, "history")?)?;
    let spec = load_query(query_path, Some(history.cells()))?;
    let system = GlsSystem::new(&history, Weighting::Blue)?;
    let weights = system.weights(&spec.query)?;
    let method = match g.method {
        MethodArg::Pc => InferenceMethod::ProbabilityCalculation { gamma: g.gamma },
        MethodArg::Mc => {
            let samples = match g.samples {
                Some(s) => s,
                None => {
                    // size from the convolution posterior's length and peak
                    let pc = inference::pc_noise_pmv(&weights, &history, g.gamma)?;
                    inference::default_sample_size(pc.len(), pc.peak(), g.gamma)
                }
            };
            InferenceMethod::MonteCarlo { samples }
        }
    };
    let source = NoiseSource::new(g.seed, 0);
    Ok(inference::posterior_of(
        &weights, &history, method, &source,
    )?)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let g = &cli.global;
    match cli.verb {
        Verb::Answer { query, alpha } => {
            let cube = files::read_cube(need(&g.cube, "cube")?)?;
            let spec = load_query(&query, Some(cube.cells()))?;
            let alpha = match alpha {
                Some(a) => a,
                None => {
                    let r = match spec.requirement {
                        Some(r) => r,
                        None => requirement(g)?,
                    };
                    allocate_budget(spec.query.sensitivity(), r.epsilon, r.delta)?
                }
            };
            let mut history = match &g.history {
                Some(p) => Some(files::read_history(p)?),
                None => None,
            };
            let stream = history.as_ref().map_or(0, |h| h.len() as u64);
            let y = answer_query(
                &cube,
                &spec.query,
                alpha,
                &mut NoiseSource::new(g.seed, stream),
            )?;
            writeln!(out, "y,alpha\n{y},{alpha}").map_err(stdout_err)?;
            if let Some(h) = history.as_mut() {
                h.push(HistoryRow::new(spec.query, y, alpha)?)?;
                let target = g
                    .out
                    .as_deref()
                    .or(g.history.as_deref())
                    .expect("history given");
                files::write_history(h, target)?;
            }
        }
        Verb::Estimate { query } => {
            let history = files::read_history(need(&g.history, "history")?)?;
            let spec = load_query(&query, Some(history.cells()))?;
            let system = GlsSystem::new(&history, Weighting::Blue)?;
            let weights = system.weights(&spec.query)?;
            let theta = weights.point_estimate(&history)?;
            let var = weights.noise_variance(&history)?;
            writeln!(out, "estimate,variance\n{theta},{var}").map_err(stdout_err)?;
        }
        Verb::Infer { query } => {
            let p = posterior_from_history(g, &query)?;
            match &g.out {
                Some(path) => {
                    files::write_posterior(&p, path)?;
                    let (mean, std) = p.mean_std();
                    writeln!(
                        out,
                        "center,loss,mean,std\n{},{},{mean},{std}",
                        p.center_value, p.loss
                    )
                    .map_err(stdout_err)?;
                }
                None => files::write_pmv_to(&p.mass, &mut *out)?,
            }
        }
        Verb::Interval {
            query,
            posterior,
            above,
        } => {
            let delta = match g.delta {
                Some(d) => d,
                None => return usage("interval needs --delta"),
            };
            let p = match (query, posterior) {
                (_, Some(path)) => files::read_posterior(&path)?,
                (Some(q), None) => posterior_from_history(g, &q)?,
                (None, None) => {
                    return usage("interval needs --posterior or --query with --history")
                }
            };
            let ci = credible_interval(&p, delta)?;
            write!(out, "lower,upper,mass").map_err(stdout_err)?;
            match above {
                Some(c) => writeln!(
                    out,
                    ",p_above\n{},{},{},{}",
                    ci.lower,
                    ci.upper,
                    ci.mass,
                    tail_probability(&p, c)
                ),
                None => writeln!(out, "\n{},{},{}", ci.lower, ci.upper, ci.mass),
            }
            .map_err(stdout_err)?;
        }
        Verb::Cost => {
            let history = files::read_history(need(&g.history, "history")?)?;
            let (per_cell, alpha_bar) = system_cost(&history);
            let row: Vec<String> = per_cell.iter().map(f64::to_string).collect();
            writeln!(out, "{}\nalpha_bar,{alpha_bar}", row.join(",")).map_err(stdout_err)?;
        }
        Verb::Allocate { sensitivity, query } => {
            let s = match (sensitivity, query) {
                (Some(s), _) => s,
                (None, Some(q)) => load_query(&q, None)?.query.sensitivity(),
                (None, None) => return usage("allocate needs --sensitivity or --query"),
            };
            let r = requirement(g)?;
            let alpha = allocate_budget(s, r.epsilon, r.delta)?;
            writeln!(out, "{alpha}").map_err(stdout_err)?;
        }
        Verb::ServeBatch {
            requests,
            history_out,
            truth,
            baseline,
        } => {
            let cube = files::read_cube(need(&g.cube, "cube")?)?;
            let history = match &g.history {
                Some(p) => files::read_history(p)?,
                None => QueryHistory::new(cube.cells()),
            };
            let text = std::fs::read_to_string(&requests).map_err(io_err(&requests))?;
            let raw: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(Error::from)?;
            let mut reqs = Vec::with_capacity(raw.len());
            for (i, v) in raw.iter().enumerate() {
                let spec = model::parse_query_spec(&v.to_string())?;
                let r = match spec.requirement.or(match (g.epsilon, g.delta) {
                    (Some(e), Some(d)) => Some(UtilityRequirement::new(e, d)?),
                    _ => None,
                }) {
                    Some(r) => r,
                    None => {
                        return usage(format!(
                            "request {i} has no epsilon/delta and none given on the command line"
                        ))
                    }
                };
                reqs.push((spec.query, r));
            }
            let config = EngineConfig {
                method: configured_method(g),
                weighting: Weighting::Blue,
                mode: if baseline {
                    Mode::Baseline
                } else {
                    Mode::Inference
                },
                bound: g.bound.unwrap_or(f64::INFINITY),
            };
            let mut engine = Engine::new(cube, history, config, g.seed)?;
            let log = engine.run_session(reqs.iter().map(|(q, r)| (q, *r)), truth)?;
            match &g.out {
                Some(p) => {
                    let f = File::create(p).map_err(io_err(p))?;
                    write_run_log(&log, BufWriter::new(f))?;
                }
                None => write_run_log(&log, &mut *out)?,
            }
            if let Some(p) = history_out {
                files::write_history(engine.history(), &p)?;
            }
        }
        Verb::Bench { config, preset } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                    serde_json::from_str::<ExperimentConfig>(&text).map_err(Error::from)?
                }
                (None, Some(Preset::Bounded)) => ExperimentConfig::bounded(),
                (None, Some(Preset::Unbounded)) | (None, None) => ExperimentConfig::unbounded(),
            };
            if g.bound.is_some() {
                cfg.bound = g.bound;
            }
            let report = bench::run_experiment(&cfg, g.out.as_deref())?;
            writeln!(
                out,
                "mode,answering_ratio,reliability,relative_error,alpha_bar"
            )
            .map_err(stdout_err)?;
            for (name, run) in [
                ("inference", &report.inference),
                ("baseline", &report.baseline),
            ] {
                let m = &run.metrics;
                writeln!(
                    out,
                    "{name},{},{},{},{}",
                    m.answering_ratio,
                    m.reliability,
                    m.relative_error,
                    run.alpha_bar.last().copied().unwrap_or(0.0)
                )
                .map_err(stdout_err)?;
            }
        }
    }
    out.flush().map_err(stdout_err)
}

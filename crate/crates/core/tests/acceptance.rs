//! Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::time::{Duration, Instant};

use dpbayes::bench::{run_experiment, ExperimentConfig};
use dpbayes::engine::ServedFrom;
use dpbayes::estimator::{
    blue_cells, chebyshev_delta, estimate_variance, estimator_matrix, EstimatorWeights,
};
use dpbayes::inference::{mc_noise_pmv, pc_lengths, pc_noise_pmv, posterior_of, InferenceMethod};
use dpbayes::interval::{credible_interval, tail_probability};
use dpbayes::ledger::{allocate_budget, system_cost};
use dpbayes::mechanism::{sample_laplace, NoiseSource};
use dpbayes::model::sensitivity_of;
use dpbayes::pmv::{
    self, bilateral_gamma_pdf, convolve_in_order, laplace_pmv, pmv_error, ProbabilityMassVector,
};
use dpbayes::quadrature::integrate;
use dpbayes::{HistoryRow, LinearQuery, QueryHistory};
use rand::Rng;

const H: [[f64; 4]; 8] = [
    [1.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 1.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [2.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 2.0, -1.0],
    [0.0, -1.0, 0.0, 1.0],
];
const ALPHA: [f64; 8] = [0.05, 0.1, 0.05, 0.1, 0.1, 0.05, 0.05, 0.1];
const Y: [f64; 8] = [30.8, 30.3, 46.9, 20.2, 30.4, 68.9, 38.9, 9.5];
const S: [f64; 8] = [1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0];
const PUBLISHED_WEIGHTS: [f64; 8] = [0.48, 0.36, -0.03, 0.50, -0.50, 0.26, 0.07, 0.24];
const PUBLISHED_CELLS: [f64; 4] = [24.9, 10.1, 17.0, 19.5];

fn history_with(answers: &[f64]) -> QueryHistory {
    let rows = H
        .iter()
        .zip(ALPHA)
        .zip(answers)
        .map(|((h, a), &y)| HistoryRow::new(LinearQuery::new(h.to_vec()).unwrap(), y, a).unwrap())
        .collect();
    QueryHistory::from_rows(4, rows).unwrap()
}

fn target() -> LinearQuery {
    LinearQuery::new(vec![1.0, 0.0, 1.0, 0.0]).unwrap()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn within(v: &[f64], expect: &[f64], tol: f64) -> bool {
    v.len() == expect.len() && v.iter().zip(expect).all(|(a, b)| (a - b).abs() <= tol)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn worked_example_estimate() -> Outcome {
    let start = Instant::now();
    let h = history_with(&Y);
    let cells = blue_cells(&h).unwrap();
    let w = estimator_matrix(&h, &target()).unwrap();
    let theta = w.point_estimate(&h).unwrap();
    let elapsed = start.elapsed();
    let cells_ok = within(&cells, &PUBLISHED_CELLS, 0.05);
    let theta_ok = (theta - 42.0).abs() <= 0.1;
    let weights_ok = within(&w.weights, &PUBLISHED_WEIGHTS, 0.005);
    let fast = elapsed < Duration::from_secs(1);
    outcome(
        cells_ok && theta_ok && weights_ok && fast,
        format!(
            "cells {} (ok={cells_ok}), theta {theta:.4} (ok={theta_ok}), weights {} (ok={weights_ok}), {elapsed:?}",
            fmt(&cells),
            fmt(&w.weights)
        ),
    )
}

fn sensitivity_vector() -> Outcome {
    let s: Vec<f64> = H.iter().map(|h| sensitivity_of(h).unwrap()).collect();
    outcome(s == S, format!("S = {s:?}"))
}

fn system_cost_example() -> Outcome {
    let (b, abar) = system_cost(&history_with(&Y));
    let ok = within(&b, &[0.1, 0.275, 0.25, 0.375], 1e-12) && (abar - 0.375).abs() <= 1e-12;
    outcome(ok, format!("B = {b:?}, alpha_bar = {abar}"))
}

fn running_weights() -> (QueryHistory, EstimatorWeights) {
    let h = history_with(&Y);
    let w = estimator_matrix(&h, &target()).unwrap();
    (h, w)
}

fn pc_length_example() -> Outcome {
    let (h, w) = running_weights();
    let lens = pc_lengths(&w, &h, 0.01).unwrap();
    let u = pc_noise_pmv(&w, &h, 0.01).unwrap();
    let loss = 1.0 - u.total();
    let ok = lens[0] == 129 && (0.0..=0.01).contains(&loss);
    outcome(ok, format!("row lengths {lens:?}, total loss {loss:.6}"))
}

fn credible_interval_example() -> Outcome {
    let start = Instant::now();
    let (h, w) = running_weights();
    let p = posterior_of(&w, &h, InferenceMethod::default(), &NoiseSource::new(0, 0)).unwrap();
    let ci = credible_interval(&p, 0.05).unwrap();
    let above = tail_probability(&p, 0.0);
    let elapsed = start.elapsed();
    let interval_ok = (ci.lower - -41.0).abs() <= 1.0 && (ci.upper - 125.0).abs() <= 1.0;
    let tail_ok = (above - 0.88).abs() <= 0.02;
    let fast = elapsed < Duration::from_secs(10);
    outcome(
        interval_ok && tail_ok && fast,
        format!(
            "interval [{:.2}, {:.2}] vs [-41, 125], Pr(theta > 0) = {above:.4} vs 0.88, {elapsed:?}",
            ci.lower, ci.upper
        ),
    )
}

fn cross_method_agreement() -> Outcome {
    let (h, w) = running_weights();
    let samples = 1_000_000;
    let pc = pc_noise_pmv(&w, &h, 0.01).unwrap();
    let peak = pc.peak();
    let bound = pc.len() as f64 * peak * (1.0 - peak) / (samples as f64 - 1.0);
    let mut errors: Vec<f64> = (0..5)
        .map(|seed| {
            let mc = mc_noise_pmv(&w, &h, samples, &NoiseSource::new(seed, 0)).unwrap();
            pmv_error(&mc, &pc)
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = errors[2];
    outcome(
        median <= 10.0 * bound,
        format!(
            "median error {median:.3e} vs 10 x bound {:.3e}",
            10.0 * bound
        ),
    )
}

/// Integral of the `count`-fold Laplace density over `(o - 1/2, o + 1/2]`.
fn bin_integral(count: u32, alpha: f64, o: i64) -> f64 {
    let f = |z: f64| bilateral_gamma_pdf(count, alpha, z);
    let (lo, hi) = (o as f64 - 0.5, o as f64 + 0.5);
    if o == 0 {
        // the density has a kink at 0
        integrate(f, lo, 0.0, 1e-10, 1e-14, 200).value
            + integrate(f, 0.0, hi, 1e-10, 1e-14, 200).value
    } else {
        integrate(f, lo, hi, 1e-10, 1e-14, 200).value
    }
}

fn oracle_equivalence() -> Outcome {
    let alpha = 0.25;
    let radius = 100i64;
    let unit = laplace_pmv(alpha, 1.0, 1.0, 301).unwrap();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for count in 1..=5u32 {
        let sum = convolve_in_order(std::iter::repeat_n(unit.clone(), count as usize));
        let mut inside_pmv = 0.0;
        let mut inside_pdf = 0.0;
        let mut gap = 0.0f64;
        for o in -radius..=radius {
            let exact = bin_integral(count, alpha, o);
            let m = sum.mass_at(o);
            inside_pmv += m;
            inside_pdf += exact;
            gap = gap.max((m - exact).abs());
        }
        // outside the window both sides hold at most their remaining mass
        let tail = (sum.total() - inside_pmv).max(1.0 - inside_pdf).max(0.0);
        let gap = gap.max(tail);
        worst = worst.max(gap);
        details.push(format!("{count}:{gap:.2e}"));
    }
    outcome(
        worst <= 1e-3,
        format!("max gap per count {} (alpha {alpha})", details.join(" ")),
    )
}

fn estimator_properties() -> Outcome {
    let truth = [25.0, 10.0, 17.0, 20.0];
    let theta = 42.0;
    let clean: Vec<f64> = H
        .iter()
        .map(|h| h.iter().zip(&truth).map(|(a, b)| a * b).sum())
        .collect();
    let h0 = history_with(&clean);
    let w = estimator_matrix(&h0, &target()).unwrap();
    let q = target();
    let mut unbiased_gap = 0.0f64;
    for j in 0..4 {
        let ah: f64 = w.weights.iter().zip(&H).map(|(a, h)| a * h[j]).sum();
        unbiased_gap = unbiased_gap.max((ah - q.coefficients()[j]).abs());
    }
    let unbiased_ok = unbiased_gap <= 1e-9;
    let var = estimate_variance(&h0, &q).unwrap();
    let draws = |count: usize, stream: u64| -> Vec<f64> {
        let mut src = NoiseSource::new(88, stream);
        (0..count)
            .map(|_| {
                let y: Vec<f64> = clean
                    .iter()
                    .zip(ALPHA.iter().zip(S))
                    .map(|(c, (a, s))| c + sample_laplace(*a, s, &mut src).unwrap())
                    .collect();
                w.weights.iter().zip(&y).map(|(a, y)| a * y).sum()
            })
            .collect()
    };
    let small = draws(10_000, 1);
    let mean = small.iter().sum::<f64>() / small.len() as f64;
    let se = (var / small.len() as f64).sqrt();
    let mean_ok = (mean - theta).abs() <= 4.0 * se;
    // the variance check uses a larger sample: at 10^4 draws the sampling
    // error of a variance estimate is itself about 2%
    let large = draws(100_000, 2);
    let lm = large.iter().sum::<f64>() / large.len() as f64;
    let emp_var = large.iter().map(|t| (t - lm).powi(2)).sum::<f64>() / (large.len() - 1) as f64;
    let var_ok = (emp_var / var - 1.0).abs() <= 0.02;
    let mut cheb_ok = true;
    let mut worst = f64::NEG_INFINITY;
    for eps in [5.0, 10.0, 20.0, 30.0, 50.0, 80.0] {
        let freq =
            large.iter().filter(|t| (*t - theta).abs() >= eps).count() as f64 / large.len() as f64;
        let slack = freq - chebyshev_delta(var, eps);
        worst = worst.max(slack);
        cheb_ok &= slack <= 0.01;
    }
    outcome(
        unbiased_ok && mean_ok && var_ok && cheb_ok,
        format!(
            "|AH - Q| {unbiased_gap:.1e}, mean {mean:.3} (4 SE = {:.3}), var {emp_var:.2} vs {var:.2}, worst Chebyshev excess {worst:.4}",
            4.0 * se
        ),
    )
}

fn allocation_coverage() -> Outcome {
    let mut pick = NoiseSource::new(5150, 0);
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for t in 0..10u64 {
        let (eps, delta, s) = {
            let r = pick.rng();
            (
                r.gen_range(0.5..500.0),
                r.gen_range(0.01..0.5),
                r.gen_range(0.5..10.0),
            )
        };
        let alpha = allocate_budget(s, eps, delta).unwrap();
        let mut src = NoiseSource::new(77, t);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_laplace(alpha, s, &mut src).unwrap().abs() <= eps)
            .count();
        let margin = hits as f64 / n as f64 - (1.0 - delta - 0.01);
        worst = worst.min(margin);
        ok &= margin >= 0.0;
    }
    outcome(
        ok,
        format!("smallest margin over 1 - delta - 0.01: {worst:.4}"),
    )
}

fn engine_invariants() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::bounded();
    let report = run_experiment(&config, None).unwrap();
    let elapsed = start.elapsed();
    let inf = &report.inference;
    let base = &report.baseline;
    let bound = config.bound.unwrap();
    let cost_ok = inf
        .alpha_bar
        .iter()
        .chain(&base.alpha_bar)
        .all(|a| *a <= bound);
    let ratio_ok = inf.metrics.answering_ratio >= base.metrics.answering_ratio;
    let width_ok = inf
        .log
        .iter()
        .filter(|r| r.response.served_from == ServedFrom::HistoryInference)
        .all(|r| r.response.width() <= 2.0 * r.requirement.epsilon);
    let served = inf
        .log
        .iter()
        .filter(|r| r.response.served_from == ServedFrom::HistoryInference)
        .count();
    let reliability_ok = inf.metrics.reliability >= 0.76;
    let fast = elapsed < Duration::from_secs(300);
    outcome(
        cost_ok && ratio_ok && width_ok && reliability_ok && fast,
        format!(
            "n {}, R_a {:.3} vs baseline {:.3}, R_i {:.3}, {served} served from history, final alpha_bar {:.4}, {elapsed:?}",
            config.n,
            inf.metrics.answering_ratio,
            base.metrics.answering_ratio,
            inf.metrics.reliability,
            inf.alpha_bar.last().unwrap()
        ),
    )
}

fn median_time<F: FnMut()>(mut f: F) -> f64 {
    let mut t: Vec<f64> = (0..5)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[2]
}

/// Least squares fit of `t = a x + b`; returns the worst ratio between a
/// measurement and the fit, in either direction.
fn worst_fit_ratio(x: &[f64], t: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxt: f64 = x.iter().zip(t).map(|(a, b)| (a - mx) * (b - mt)).sum();
    let a = sxt / sxx;
    let b = mt - a * mx;
    x.iter()
        .zip(t)
        .map(|(xv, tv)| {
            let fit = a * xv + b;
            if fit <= 0.0 {
                f64::INFINITY
            } else {
                (tv / fit).max(fit / tv)
            }
        })
        .fold(0.0, f64::max)
}

fn single_cell_history(alphas: &[f64]) -> QueryHistory {
    let rows = alphas
        .iter()
        .map(|&a| HistoryRow::new(LinearQuery::unit(1, 0), 0.0, a).unwrap())
        .collect();
    QueryHistory::from_rows(1, rows).unwrap()
}

fn complexity_smoke() -> Outcome {
    // Monte Carlo: linear in rows x samples
    let samples = 20_000;
    let ms = [200usize, 400, 600, 800, 1000];
    let mut x = Vec::new();
    let mut t = Vec::new();
    for &m in &ms {
        let h = single_cell_history(&vec![0.1; m]);
        let w = EstimatorWeights {
            weights: vec![1.0 / m as f64; m],
            target: LinearQuery::unit(1, 0),
        };
        let src = NoiseSource::new(3, 0);
        x.push((m * samples) as f64);
        t.push(median_time(|| {
            mc_noise_pmv(&w, &h, samples, &src).unwrap();
        }));
    }
    let mc_ratio = worst_fit_ratio(&x, &t);

    // convolution: quadratic in sum |A_k| S_k / alpha_k
    let m = 16;
    let mut x = Vec::new();
    let mut t = Vec::new();
    for scale in [1.0, 1.5, 2.0, 2.5, 3.0] {
        let alpha = 0.02 / scale;
        let h = single_cell_history(&vec![alpha; m]);
        let w = EstimatorWeights {
            weights: vec![1.0 / m as f64; m],
            target: LinearQuery::unit(1, 0),
        };
        let spread: f64 = w.weights.iter().map(|a| a.abs() / alpha).sum();
        x.push(spread * spread);
        t.push(median_time(|| {
            pc_noise_pmv(&w, &h, 0.01).unwrap();
        }));
    }
    let pc_ratio = worst_fit_ratio(&x, &t);

    // ordering: one long vector and many short ones, so the order decides
    // how many output bins each step has to fill
    let mut parts: Vec<ProbabilityMassVector> = (0..200)
        .map(|_| laplace_pmv(4.0, 1.0, 1.0, 3).unwrap())
        .collect();
    parts.push(laplace_pmv(0.002, 1.0, 1.0, 20_001).unwrap());
    let mut ascending = parts.clone();
    ascending.sort_by_key(|p| p.len());
    let mut descending = ascending.clone();
    descending.reverse();
    let t_short = median_time(|| {
        convolve_in_order(ascending.iter().cloned());
    });
    let t_long = median_time(|| {
        convolve_in_order(descending.iter().cloned());
    });
    let same =
        pmv::convolve_all(parts).len() == convolve_in_order(descending.iter().cloned()).len();
    let ok = mc_ratio <= 1.5 && pc_ratio <= 1.5 && t_short <= t_long && same;
    outcome(
        ok,
        format!(
            "MC worst/fit {mc_ratio:.3}, PC worst/fit {pc_ratio:.3}, shortest-first {:.1} ms vs longest-first {:.1} ms",
            t_short * 1e3,
            t_long * 1e3
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("worked example estimate", worked_example_estimate),
        ("sensitivity vector", sensitivity_vector),
        ("system cost example", system_cost_example),
        ("convolution window and loss", pc_length_example),
        ("credible interval example", credible_interval_example),
        ("Monte Carlo vs convolution", cross_method_agreement),
        ("convolution vs exact density", oracle_equivalence),
        ("estimator properties", estimator_properties),
        ("allocation coverage", allocation_coverage),
        ("engine invariants", engine_invariants),
        ("complexity smoke tests", complexity_smoke),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {verdict}: {name}: {}", i + 1, o.detail);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

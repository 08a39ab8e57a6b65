//! Credible intervals, interval confidence and tail probabilities.
//!
//! Mass inside a bin is treated as uniform over the bin when an interval
//! boundary cuts through it.

use crate::error::{Error, Result};
use crate::inference::Posterior;

/// A symmetric interval around the posterior centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CredibleInterval {
    pub lower: f64,
    pub upper: f64,
    /// Number of bins added on each side of the centre bin.
    pub steps: usize,
    /// Mass of the `2 * steps + 1` bins the interval spans.
    pub mass: f64,
}

impl CredibleInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// Expands one bin per side from the centre until the spanned mass reaches
/// `1 - delta`. Endpoints are the centres of the outermost bins.
pub fn credible_interval(posterior: &Posterior, delta: f64) -> Result<CredibleInterval> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let target = 1.0 - delta;
    let total = posterior.total_mass();
    if target > total {
        return Err(Error::Coverage {
            requested: target,
            attainable: total,
        });
    }
    let u = &posterior.mass;
    let half = u.half_width();
    let center = posterior.center_value;
    let mut mass = u.mass_at(0);
    let mut comp = 0.0;
    let mut steps = 0usize;
    while mass < target && steps < half {
        steps += 1;
        let s = steps as i64;
        // compensated add of both sides
        for m in [u.mass_at(-s), u.mass_at(s)] {
            let y = m - comp;
            let t = mass + y;
            comp = (t - mass) - y;
            mass = t;
        }
    }
    Ok(CredibleInterval {
        lower: center - steps as f64,
        upper: center + steps as f64,
        steps,
        mass,
    })
}

/// Where `c` cuts bin `(lo, lo + 1]`, as a fraction in `[0, 1]` from the left.
fn cut(c: f64, lo: f64) -> f64 {
    (c - lo).clamp(0.0, 1.0)
}

/// Posterior mass inside `[lower, upper]`.
pub fn confidence_of(posterior: &Posterior, lower: f64, upper: f64) -> f64 {
    assert!(lower <= upper, "interval bounds reversed");
    mass_weighted(posterior, |lo| cut(upper, lo) - cut(lower, lo))
}

/// Posterior mass strictly above `c`.
pub fn tail_probability(posterior: &Posterior, c: f64) -> f64 {
    mass_weighted(posterior, |lo| 1.0 - cut(c, lo))
}

/// Posterior mass strictly below `c`.
pub fn tail_probability_below(posterior: &Posterior, c: f64) -> f64 {
    mass_weighted(posterior, |lo| cut(c, lo))
}

fn mass_weighted<F: Fn(f64) -> f64>(posterior: &Posterior, fraction: F) -> f64 {
    let u = &posterior.mass;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (i, &m) in u.masses().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let (lo, _) = posterior.bin_edges(u.offset_of(i));
        let y = m * fraction(lo) - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::InferenceMethod;
    use crate::pmv::{laplace_pmv, ProbabilityMassVector};
    use proptest::prelude::*;

    fn posterior(masses: &[f64], center: f64) -> Posterior {
        Posterior::new(
            ProbabilityMassVector::new(masses.to_vec()).unwrap(),
            center,
            InferenceMethod::default(),
        )
    }

    #[test]
    fn point_mass_interval() {
        let p = posterior(&[1.0], 7.5);
        let ci = credible_interval(&p, 0.01).unwrap();
        assert_eq!((ci.lower, ci.upper, ci.steps), (7.5, 7.5, 0));
    }

    #[test]
    fn centre_bin_suffices() {
        let p = posterior(&[0.25, 0.5, 0.25], 3.0);
        let ci = credible_interval(&p, 0.5).unwrap();
        assert_eq!((ci.lower, ci.upper), (3.0, 3.0));
        let wider = credible_interval(&p, 0.2).unwrap();
        assert_eq!((wider.lower, wider.upper), (2.0, 4.0));
        assert_eq!(wider.mass, 1.0);
    }

    #[test]
    fn coverage_error_names_attainable_mass() {
        let p = posterior(&[0.2, 0.5, 0.2], 0.0);
        match credible_interval(&p, 0.05) {
            Err(Error::Coverage { attainable, .. }) => assert!((attainable - 0.9).abs() < 1e-12),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn interval_is_minimal() {
        let u = laplace_pmv(0.1, 1.0, 1.0, 301).unwrap();
        let p = Posterior::new(u, 10.0, InferenceMethod::default());
        let ci = credible_interval(&p, 0.1).unwrap();
        assert!(ci.mass >= 0.9);
        let s = ci.steps as i64 - 1;
        let fewer: f64 = (-s..=s).map(|o| p.mass.mass_at(o)).sum();
        assert!(fewer < 0.9);
        // the spanned bins carry the accumulated mass
        let spanned = confidence_of(&p, ci.lower - 0.5, ci.upper + 0.5);
        assert!((spanned - ci.mass).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        let u = laplace_pmv(1.0, 1.0, 1.0, 81).unwrap();
        let p = Posterior::new(u, 5.0, InferenceMethod::default());
        assert!((confidence_of(&p, -1e9, 1e9) - p.total_mass()).abs() < 1e-15);
        let centre = confidence_of(&p, 4.5, 5.5);
        assert!((centre - (1.0 - (-0.5f64).exp())).abs() < 0.005);
    }

    #[test]
    fn tail_examples() {
        let u = laplace_pmv(0.2, 1.0, 1.0, 201).unwrap();
        let p = Posterior::new(u, 0.0, InferenceMethod::default());
        assert!((tail_probability(&p, f64::NEG_INFINITY) - p.total_mass()).abs() < 1e-15);
        let half = tail_probability(&p, p.center_value);
        assert!((half - 0.5 * p.total_mass()).abs() <= p.mass.mass_at(0));
        assert_eq!(tail_probability(&p, 1e9), 0.0);
    }

    fn random_posterior() -> impl Strategy<Value = Posterior> {
        (0usize..6, -50.0..50.0f64)
            .prop_flat_map(|(h, c)| (prop::collection::vec(0.0..1.0f64, 2 * h + 1), Just(c)))
            .prop_map(|(raw, c)| {
                let s: f64 = raw.iter().sum::<f64>() + 0.01;
                posterior(&raw.iter().map(|x| x / s).collect::<Vec<_>>(), c)
            })
    }

    proptest! {
        #[test]
        fn consistency_law(p in random_posterior(), a in -60.0..60.0f64, w in 0.0..20.0f64) {
            let (l, u) = (a, a + w);
            let total = confidence_of(&p, l, u) + tail_probability(&p, u) + tail_probability_below(&p, l);
            prop_assert!((total - p.total_mass()).abs() <= 1e-12);
        }

        #[test]
        fn monotonicity(p in random_posterior(), a in -60.0..60.0f64, w in 0.0..20.0f64, grow in 0.0..5.0f64) {
            prop_assert!(confidence_of(&p, a - grow, a + w + grow) >= confidence_of(&p, a, a + w) - 1e-15);
            prop_assert!(tail_probability(&p, a + grow) <= tail_probability(&p, a) + 1e-15);
        }
    }
}

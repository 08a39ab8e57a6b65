//! Probability mass vectors on the unit integer grid.
//!
//! A vector of odd length `L` holds the mass of offsets `-(L-1)/2 ..= (L-1)/2`.
//! The bin at offset `o` covers `(o - 1/2, o + 1/2]`. Masses may sum to less
//! than one; the deficit is the truncation loss.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature;

/// Convolutions producing more than this many multiply-adds run in parallel.
const PARALLEL_WORK: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMassVector {
    masses: Vec<f64>,
}

impl ProbabilityMassVector {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.len().is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "mass vector length must be odd, got {}",
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Contract(format!("mass {m} outside [0, 1]")));
        }
        let v = Self { masses };
        if v.total() > 1.0 + 1e-9 {
            return Err(Error::Contract(format!("masses sum to {} > 1", v.total())));
        }
        Ok(v)
    }

    /// All mass at offset 0.
    pub fn point() -> Self {
        Self { masses: vec![1.0] }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn into_masses(self) -> Vec<f64> {
        self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Largest offset magnitude, `(len - 1) / 2`.
    pub fn half_width(&self) -> usize {
        (self.masses.len() - 1) / 2
    }

    pub fn offset_of(&self, index: usize) -> i64 {
        index as i64 - self.half_width() as i64
    }

    pub fn mass_at(&self, offset: i64) -> f64 {
        let idx = offset + self.half_width() as i64;
        if idx < 0 || idx as usize >= self.masses.len() {
            0.0
        } else {
            self.masses[idx as usize]
        }
    }

    pub fn total(&self) -> f64 {
        kahan_sum(self.masses.iter().copied())
    }

    pub fn loss(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }

    pub fn peak(&self) -> f64 {
        self.masses.iter().copied().fold(0.0, f64::max)
    }

    /// Mass vector of the negated variable.
    pub fn reflected(&self) -> Self {
        let mut masses = self.masses.clone();
        masses.reverse();
        Self { masses }
    }

    /// `sum_o o * mass(o)` and `sum_o o^2 * mass(o)`.
    pub fn moments(&self) -> (f64, f64) {
        let first = kahan_sum(
            self.masses
                .iter()
                .enumerate()
                .map(|(i, m)| self.offset_of(i) as f64 * m),
        );
        let second = kahan_sum(self.masses.iter().enumerate().map(|(i, m)| {
            let o = self.offset_of(i) as f64;
            o * o * m
        }));
        (first, second)
    }

    /// Zero-pads symmetrically to `len` (odd, at least the current length).
    pub fn padded(&self, len: usize) -> Vec<f64> {
        debug_assert!(len >= self.len() && len % 2 == 1);
        let pad = (len - self.len()) / 2;
        let mut out = vec![0.0; len];
        out[pad..pad + self.len()].copy_from_slice(&self.masses);
        out
    }
}

pub(crate) fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in iter {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mass vector of the sum of two independent discretized variables:
/// `w_k = sum_j u_j v_{k-j}`, `|w| = |u| + |v| - 1`.
///
/// Each output bin is an independently compensated sum in a fixed order, so
/// the result does not depend on how bins are split across threads.
pub fn convolve(u: &ProbabilityMassVector, v: &ProbabilityMassVector) -> ProbabilityMassVector {
    let (long, short) = if u.len() >= v.len() {
        (&u.masses, &v.masses)
    } else {
        (&v.masses, &u.masses)
    };
    let out_len = long.len() + short.len() - 1;
    let bin = |k: usize| -> f64 {
        // j indexes `short`; long index is k - j
        let j_lo = k.saturating_sub(long.len() - 1);
        let j_hi = k.min(short.len() - 1);
        let mut sum = 0.0;
        let mut c = 0.0;
        for j in j_lo..=j_hi {
            let y = short[j] * long[k - j] - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    };
    let masses: Vec<f64> = if long.len() * short.len() >= PARALLEL_WORK {
        (0..out_len)
            .into_par_iter()
            .with_min_len(64)
            .map(bin)
            .collect()
    } else {
        (0..out_len).map(bin).collect()
    };
    ProbabilityMassVector {
        masses: masses.into_iter().map(|m| m.clamp(0.0, 1.0)).collect(),
    }
}

/// Convolves all vectors, shortest first.
pub fn convolve_all(mut parts: Vec<ProbabilityMassVector>) -> ProbabilityMassVector {
    parts.sort_by_key(|p| p.len());
    convolve_in_order(parts)
}

/// Convolves left to right in the given order.
pub fn convolve_in_order<I: IntoIterator<Item = ProbabilityMassVector>>(
    parts: I,
) -> ProbabilityMassVector {
    parts
        .into_iter()
        .fold(ProbabilityMassVector::point(), |acc, p| {
            if acc.len() == 1 && acc.masses[0] == 1.0 {
                p
            } else if p.len() == 1 && p.masses[0] == 1.0 {
                acc
            } else {
                convolve(&acc, &p)
            }
        })
}

/// Discretized `coefficient * Lap(alpha / sensitivity)` on `length` bins.
///
/// Bin masses are exact CDF differences of a Laplace law with scale
/// `|coefficient| * sensitivity / alpha`. The mass outside the window is
/// `exp(-alpha * length / (2 |coefficient| sensitivity))`.
pub fn laplace_pmv(
    alpha: f64,
    sensitivity: f64,
    coefficient: f64,
    length: usize,
) -> Result<ProbabilityMassVector> {
    if length.is_multiple_of(2) {
        return Err(Error::Contract(format!("length must be odd, got {length}")));
    }
    if !(alpha > 0.0 && sensitivity > 0.0) {
        return Err(Error::Parameter(format!(
            "alpha and sensitivity must be positive, got {alpha}, {sensitivity}"
        )));
    }
    if coefficient == 0.0 {
        if length != 1 {
            return Err(Error::Contract(
                "a zero coefficient has no noise; length must be 1".into(),
            ));
        }
        return Ok(ProbabilityMassVector::point());
    }
    let scale = coefficient.abs() * sensitivity / alpha;
    let half = (length - 1) / 2;
    let mut masses = vec![0.0; length];
    masses[half] = -(-0.5 / scale).exp_m1();
    // mass of (o - 1/2, o + 1/2] for o >= 1
    let ring = -(-1.0 / scale).exp_m1();
    for o in 1..=half {
        let m = 0.5 * (-(o as f64 - 0.5) / scale).exp() * ring;
        masses[half + o] = m;
        masses[half - o] = m;
    }
    Ok(ProbabilityMassVector { masses })
}

/// Truncation loss of [`laplace_pmv`] in closed form.
pub fn laplace_pmv_loss(alpha: f64, sensitivity: f64, coefficient: f64, length: usize) -> f64 {
    if coefficient == 0.0 {
        return 0.0;
    }
    (-alpha * length as f64 / (2.0 * coefficient.abs() * sensitivity)).exp()
}

/// `sum_i (u_i - reference_i)^2` after centre-aligned zero padding.
pub fn pmv_error(u: &ProbabilityMassVector, reference: &ProbabilityMassVector) -> f64 {
    let len = u.len().max(reference.len());
    let a = u.padded(len);
    let b = reference.padded(len);
    kahan_sum(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)))
}

/// Density at `z` of the sum of `count` iid Laplace variables with rate
/// `alpha`, evaluated through its one-dimensional integral representation.
pub fn bilateral_gamma_pdf(count: u32, alpha: f64, z: f64) -> f64 {
    assert!(count >= 1, "count must be at least 1");
    assert!(alpha > 0.0, "alpha must be positive");
    let n = count as f64;
    let az = z.abs();
    let ln_gamma_n: f64 = (1..count).map(|k| (k as f64).ln()).sum();
    let ln_prefactor = n * alpha.ln() - n * std::f64::consts::LN_2 - 2.0 * ln_gamma_n - alpha * az;
    let power = n - 1.0;
    let integrand = |v: f64| -> f64 {
        if power == 0.0 {
            return (-v).exp();
        }
        if v <= 0.0 {
            return 0.0;
        }
        (power * (v.ln() + (az + v / (2.0 * alpha)).ln()) - v).exp()
    };
    let upper = 60.0 + 10.0 * n;
    let q = quadrature::integrate(integrand, 0.0, upper, 1e-11, 0.0, 4000);
    (ln_prefactor.exp()) * q.value
}

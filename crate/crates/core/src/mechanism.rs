//! Seeded Laplace noise and the Laplace mechanism.
//!
//! Noise is drawn by inverting the Laplace CDF at an open-interval uniform
//! variate. Every [`NoiseSource`] is a ChaCha8 stream addressed by
//! `(master_seed, stream_id)`, so history row `i` always sees stream `i` and
//! rows can be generated in any order.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CountCube, HistoryRow, LinearQuery, QueryHistory};

/// A reproducible random stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Rewinds to the first variate of the stream.
    pub fn reset(&mut self) {
        *self = Self::new(self.master_seed, self.stream_id);
    }

    /// An independent source keyed by this one and `index`. Used where one
    /// logical source fans out into per-row streams (Monte Carlo inference,
    /// workload generation).
    pub fn derive(&self, index: u64) -> NoiseSource {
        let seed = splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_add(0xA5A5)));
        NoiseSource::new(seed, index)
    }

    /// Jumps to the `n`-th 64-bit draw of the stream. Each uniform variate
    /// consumes exactly one 64-bit draw.
    pub(crate) fn seek(&mut self, n: u64) {
        self.rng.set_word_pos(2 * n as u128);
    }

    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One Laplace(0, scale) variate.
    pub(crate) fn laplace_scaled(&mut self, scale: f64) -> f64 {
        let v = self.uniform_open() - 0.5;
        // 1 - 2|v| lies in (0, 1] because the uniform is open on both ends.
        let magnitude = -scale * (1.0 - 2.0 * v.abs()).ln();
        if v < 0.0 {
            -magnitude
        } else {
            magnitude
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// One variate with density `rate/2 * exp(-rate |x|)`, `rate = alpha / sensitivity`.
pub fn sample_laplace(alpha: f64, sensitivity: f64, source: &mut NoiseSource) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("sensitivity", sensitivity)?;
    Ok(source.laplace_scaled(sensitivity / alpha))
}

/// Laplace mechanism: the true answer plus noise calibrated to the query's
/// sensitivity.
pub fn answer_query(
    cube: &CountCube,
    query: &LinearQuery,
    alpha: f64,
    source: &mut NoiseSource,
) -> Result<f64> {
    let theta = query.true_answer(cube)?;
    let noise = sample_laplace(alpha, query.sensitivity(), source)?;
    Ok(theta + noise)
}

/// Answers every query, row `i` drawing from stream `i` of `master_seed`.
pub fn answer_history(
    cube: &CountCube,
    queries: &[LinearQuery],
    alphas: &[f64],
    master_seed: u64,
) -> Result<QueryHistory> {
    if queries.len() != alphas.len() {
        return Err(Error::shape(
            "answer_history alphas",
            queries.len(),
            alphas.len(),
        ));
    }
    let rows = queries
        .par_iter()
        .zip(alphas.par_iter())
        .enumerate()
        .map(|(i, (q, &alpha))| {
            let mut source = NoiseSource::new(master_seed, i as u64);
            let y = answer_query(cube, q, alpha, &mut source)?;
            HistoryRow::new(q.clone(), y, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    QueryHistory::from_rows(cube.cells(), rows)
}

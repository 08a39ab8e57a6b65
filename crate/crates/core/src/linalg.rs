//! Diagonally pivoted Cholesky factorization of a symmetric positive
//! semidefinite matrix, with rank detection.

/// Relative pivot threshold below which the matrix is treated as singular.
pub(crate) const RANK_TOLERANCE: f64 = 1e-10;

/// `P^T G P = L L^T` for a dense row-major `n x n` matrix `G`.
#[derive(Debug, Clone)]
pub(crate) struct PivotedCholesky {
    n: usize,
    lower: Vec<f64>,
    perm: Vec<usize>,
}

impl PivotedCholesky {
    /// Factors `a`. On rank deficiency returns the detected rank.
    pub(crate) fn factor(mut a: Vec<f64>, n: usize) -> Result<Self, usize> {
        debug_assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0_f64, f64::max);
        let threshold = RANK_TOLERANCE * max_diag;
        if n == 0 {
            return Ok(Self { n, lower: a, perm });
        }
        if !(max_diag > 0.0) {
            return Err(0);
        }
        for k in 0..n {
            // choose largest remaining diagonal
            let (p, &piv) = (k..n)
                .map(|i| (i, &a[i * n + i]))
                .max_by(|x, y| x.1.total_cmp(y.1))
                .unwrap();
            if !(piv > threshold) {
                return Err(k);
            }
            if p != k {
                swap_sym(&mut a, n, k, p);
                perm.swap(k, p);
            }
            let d = a[k * n + k].sqrt();
            a[k * n + k] = d;
            for i in (k + 1)..n {
                a[i * n + k] /= d;
            }
            for j in (k + 1)..n {
                let ljk = a[j * n + k];
                if ljk == 0.0 {
                    continue;
                }
                // keep the trailing block fully symmetric for later pivot swaps
                for i in j..n {
                    let v = a[i * n + j] - a[i * n + k] * ljk;
                    a[i * n + j] = v;
                    a[j * n + i] = v;
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                a[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, lower: a, perm })
    }

    /// Solves `G x = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.lower;
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[i * n + k] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

/// Swaps rows and columns `i` and `j`. Factored columns only see a row swap
/// since both indices are past them.
fn swap_sym(a: &mut [f64], n: usize, i: usize, j: usize) {
    for c in 0..n {
        a.swap(i * n + c, j * n + c);
    }
    for r in 0..n {
        a.swap(r * n + i, r * n + j);
    }
}

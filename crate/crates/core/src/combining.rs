//! Linear MMSE combining of repeated noisy observations `Y_i = X + N_i`.
//!
//! With `K` observations the optimal weights are all equal to
//! `E[X^2] / (K E[X^2] + E[N^2])` and the error variance is
//! `E[X^2] E[N^2] / (K E[X^2] + E[N^2])`, the same as maximal ratio
//! combining. Normalized by signal power, this equals the error of a single
//! observation sent with `K` times the power, which is what justifies the
//! effective-SNR model in [`crate::channel`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `k` for the dense normal-equation oracle.
pub const ORACLE_MAX_K: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMoments {
    /// Signal power `E[X^2]`.
    pub ex2: f64,
    /// Noise power `E[N^2]`.
    pub en2: f64,
}

impl SignalMoments {
    pub fn new(ex2: f64, en2: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(ex2) || !ok(en2) {
            return Err(Error::Domain(format!("moments must be positive and finite: {ex2}, {en2}")));
        }
        Ok(Self { ex2, en2 })
    }

    /// Linear SNR `E[X^2] / E[N^2]`.
    pub fn snr(&self) -> f64 {
        self.ex2 / self.en2
    }
}

fn check_k(k: u32) -> Result<()> {
    if k < 1 {
        return Err(Error::Domain("need at least one observation".into()));
    }
    Ok(())
}

pub fn optimal_weight(k: u32, m: SignalMoments) -> Result<f64> {
    check_k(k)?;
    Ok(m.ex2 / (k as f64 * m.ex2 + m.en2))
}

pub fn error_variance(k: u32, m: SignalMoments) -> Result<f64> {
    check_k(k)?;
    Ok(m.ex2 * m.en2 / (k as f64 * m.ex2 + m.en2))
}

/// Jointly optimal weights from the normal equations, solved numerically.
///
/// Minimizes `E[(sum_i a_i Y_i - X)^2]`: the Gram matrix is
/// `E[Y_i Y_j] = ex2 + en2 [i == j]` and the right-hand side `E[X Y_i] = ex2`.
/// Returns the weights and their mean squared error
/// `ex2 (1 - sum_i a_i)^2 + en2 sum_i a_i^2`.
pub fn lsq_oracle(k: usize, m: SignalMoments) -> Result<(Vec<f64>, f64)> {
    if !(1..=ORACLE_MAX_K).contains(&k) {
        return Err(Error::Domain(format!("oracle supports 1 <= k <= {ORACLE_MAX_K}, got {k}")));
    }
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { m.ex2 + m.en2 } else { m.ex2 })
                .collect()
        })
        .collect();
    let mut b = vec![m.ex2; k];
    let weights = solve(&mut a, &mut b)?;
    let bias = 1.0 - weights.iter().sum::<f64>();
    let variance = m.ex2 * bias * bias + m.en2 * weights.iter().map(|w| w * w).sum::<f64>();
    Ok((weights, variance))
}

/// Gaussian elimination with partial pivoting.
fn solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Error variances normalized by signal power for `k` combined
/// transmissions and for one transmission at `k` times the power.
pub fn effective_snr_equivalence(k: u32, m: SignalMoments) -> Result<(f64, f64)> {
    check_k(k)?;
    let combined = error_variance(k, m)? / m.ex2;
    let boosted = SignalMoments::new(k as f64 * m.ex2, m.en2)?;
    let single = error_variance(1, boosted)? / boosted.ex2;
    Ok((combined, single))
}

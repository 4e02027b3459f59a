//! Non-negative matrix factorization by multiplicative updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DENOM_EPS: f64 = 1e-12;

/// Dense row-major `rows x cols` matrix of non-negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ActivityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "entry {i} is {} (NMF input must be finite and non-negative)",
                data[i]
            )));
        }
        Ok(ActivityMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ActivityMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Upper bound for rank selection.
    pub max_rank: usize,
    /// Rank selection accepts the first rank whose relative error is below this.
    pub rank_error: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            max_iters: 200,
            tol: 1e-4,
            seed: 0,
            max_rank: 3,
            rank_error: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub rank: usize,
    /// `rows x rank`, row-major.
    pub footprints: Vec<f64>,
    /// `rank x cols`, row-major.
    pub activity: Vec<f64>,
    /// Squared Frobenius error after initialization and after each iteration.
    pub objective: Vec<f64>,
}

impl Factorization {
    pub fn footprint(&self, j: usize) -> Vec<f64> {
        self.footprints.iter().skip(j).step_by(self.rank).copied().collect()
    }

    pub fn activity_row(&self, j: usize, cols: usize) -> &[f64] {
        &self.activity[j * cols..(j + 1) * cols]
    }

    /// `||P - FA||_F / ||P||_F`, zero for an all-zero `P`.
    pub fn relative_error(&self, p: &ActivityMatrix) -> f64 {
        let norm = p.frobenius_sq();
        if norm == 0.0 {
            return 0.0;
        }
        (objective(p, &self.footprints, &self.activity, self.rank) / norm).sqrt()
    }
}

fn objective(p: &ActivityMatrix, f: &[f64], a: &[f64], n: usize) -> f64 {
    let (m, k) = (p.rows, p.cols);
    let mut total = 0.0;
    for r in 0..m {
        let frow = &f[r * n..(r + 1) * n];
        for c in 0..k {
            let mut v = 0.0;
            for j in 0..n {
                v += frow[j] * a[j * k + c];
            }
            let d = p.data[r * k + c] - v;
            total += d * d;
        }
    }
    total
}

/// Factor `P ~ F A` with `F, A >= 0` minimizing the squared Frobenius error.
///
/// Initialization is uniform random from `seed`, rescaled so that
/// `mean(FA) = mean(P)`. Iteration stops after `max_iters` or when the
/// relative objective change drops below `tol`.
pub fn nmf(p: &ActivityMatrix, rank: usize, max_iters: usize, tol: f64, seed: u64) -> Result<Factorization> {
    let (m, k, n) = (p.rows, p.cols, rank);
    if n == 0 || n > m.min(k) {
        return Err(Error::InvalidArgument(format!("rank {n} outside [1, min({m}, {k})]")));
    }
    if let Some(i) = p.data.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("negative entry {} at {i}", p.data[i])));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>()).collect();
    let mut a: Vec<f64> = (0..n * k).map(|_| rng.random::<f64>()).collect();
    let mean_p = p.data.iter().sum::<f64>() / (m * k) as f64;
    // mean(FA) = (sum_j colsum(F)_j * rowsum(A)_j) / (m k)
    let mean_fa: f64 = (0..n)
        .map(|j| {
            let fs: f64 = (0..m).map(|r| f[r * n + j]).sum();
            let as_: f64 = a[j * k..(j + 1) * k].iter().sum();
            fs * as_
        })
        .sum::<f64>()
        / (m * k) as f64;
    let scale = if mean_fa > 0.0 { (mean_p / mean_fa).sqrt() } else { 0.0 };
    f.iter_mut().for_each(|v| *v *= scale);
    a.iter_mut().for_each(|v| *v *= scale);

    let mut history = vec![objective(p, &f, &a, n)];
    let mut ftf = vec![0.0; n * n];
    let mut aat = vec![0.0; n * n];
    let mut numer_a = vec![0.0; n * k];
    let mut numer_f = vec![0.0; m * n];
    for _ in 0..max_iters {
        // A <- A * (F^T P) / (F^T F A)
        ftf.fill(0.0);
        numer_a.fill(0.0);
        for r in 0..m {
            let frow = &f[r * n..(r + 1) * n];
            let prow = &p.data[r * k..(r + 1) * k];
            for i in 0..n {
                for j in 0..n {
                    ftf[i * n + j] += frow[i] * frow[j];
                }
                let dst = &mut numer_a[i * k..(i + 1) * k];
                for (d, &pv) in dst.iter_mut().zip(prow) {
                    *d += frow[i] * pv;
                }
            }
        }
        for i in 0..n {
            for c in 0..k {
                let denom: f64 = (0..n).map(|j| ftf[i * n + j] * a[j * k + c]).sum();
                a[i * k + c] *= numer_a[i * k + c] / (denom + DENOM_EPS);
            }
        }

        // F <- F * (P A^T) / (F A A^T)
        aat.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                aat[i * n + j] = (0..k).map(|c| a[i * k + c] * a[j * k + c]).sum();
            }
        }
        for r in 0..m {
            let prow = &p.data[r * k..(r + 1) * k];
            for i in 0..n {
                numer_f[r * n + i] = prow.iter().zip(&a[i * k..(i + 1) * k]).map(|(x, y)| x * y).sum();
            }
        }
        for r in 0..m {
            for i in 0..n {
                let denom: f64 = (0..n).map(|j| f[r * n + j] * aat[j * n + i]).sum();
                f[r * n + i] *= numer_f[r * n + i] / (denom + DENOM_EPS);
            }
        }

        let obj = objective(p, &f, &a, n);
        let prev = *history.last().unwrap();
        history.push(obj);
        if prev <= 0.0 || (prev - obj).abs() / prev < tol {
            break;
        }
    }
    Ok(Factorization {
        rank: n,
        footprints: f,
        activity: a,
        objective: history,
    })
}

/// Smallest rank in `1..=max_rank` (capped by the matrix size) whose relative
/// reconstruction error is below `config.rank_error`, else the cap. Returns
/// the chosen rank together with its factorization.
pub fn select_rank(p: &ActivityMatrix, config: &NmfConfig) -> Result<(usize, Factorization)> {
    let cap = config.max_rank.min(p.rows).min(p.cols).max(1);
    let mut last = None;
    for n in 1..=cap {
        let fac = nmf(p, n, config.max_iters, config.tol, config.seed)?;
        if fac.relative_error(p) < config.rank_error {
            return Ok((n, fac));
        }
        last = Some((n, fac));
    }
    Ok(last.expect("cap >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(ActivityMatrix::new(1, 2, vec![1.0, -1.0]).is_err());
        let p = ActivityMatrix::zeros(3, 2);
        assert!(nmf(&p, 0, 10, 1e-4, 0).is_err());
        assert!(nmf(&p, 3, 10, 1e-4, 0).is_err());
        let bad = ActivityMatrix {
            rows: 1,
            cols: 2,
            data: vec![1.0, -0.5],
        };
        assert!(nmf(&bad, 1, 10, 1e-4, 0).is_err());
    }

    #[test]
    fn zero_matrix_factors_to_zero() {
        let p = ActivityMatrix::zeros(6, 4);
        let fac = nmf(&p, 2, 50, 1e-4, 1).unwrap();
        assert!(fac.footprints.iter().chain(&fac.activity).all(|&v| v == 0.0));
        assert_eq!(fac.relative_error(&p), 0.0);
        assert_eq!(select_rank(&p, &NmfConfig::default()).unwrap().0, 1);
    }

    #[test]
    fn deterministic_for_seed() {
        let data: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let p = ActivityMatrix::new(12, 5, data).unwrap();
        assert_eq!(nmf(&p, 2, 100, 1e-6, 9).unwrap(), nmf(&p, 2, 100, 1e-6, 9).unwrap());
    }
}

//! Multi-user zero-forcing per-user rate versus transmit power.
//!
//! Per draw, a set of user channels is picked from the evaluated split. The
//! precoder is the zero-forcing pseudo-inverse of the *estimated* user
//! matrix (columns normalized, power split equally), while the achieved
//! rates are evaluated with the *true* channels. Receiver noise power is 1,
//! so the power axis is the average transmit power in dB.

use nalgebra::{Complex, DMatrix};
use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample as index_sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

/// Per-user rate over a transmit-power grid for one labeled method.
#[derive(Debug, Clone, Serialize)]
pub struct RateCurve {
    pub method: String,
    pub freq_tag: String,
    pub quantizer_bits: Option<u8>,
    pub n_users: usize,
    pub tx_power_dbs: Vec<f64>,
    pub per_user_rate_bpcu: Vec<f64>,
}

/// Knobs of the rate evaluation.
#[derive(Debug, Clone)]
pub struct RateOptions {
    pub n_users: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            n_users: 8,
            n_draws: 100,
            seed: 0,
        }
    }
}

/// Cross-gain table of one (draw, carrier): `gains[k][j] = |h_k^H w_j|^2`.
struct CrossGains {
    gains: Vec<Vec<f64>>,
}

impl CrossGains {
    /// Per-user rate at linear power `p`, equally split over users.
    fn per_user_rate(&self, p: f64) -> f64 {
        let k = self.gains.len();
        let share = p / k as f64;
        let mut acc = 0.0;
        for user in 0..k {
            let signal = self.gains[user][user] * share;
            let interference: f64 = (0..k)
                .filter(|j| *j != user)
                .map(|j| self.gains[user][j] * share)
                .sum();
            acc += (1.0 + signal / (1.0 + interference)).log2();
        }
        acc / k as f64
    }
}

/// Zero-forcing precoder for the estimated user matrix, columns normalized.
/// Returns `None` when the Gram matrix is numerically singular.
fn zf_precoder(est: &DMatrix<Complex<f64>>) -> Option<DMatrix<Complex<f64>>> {
    let gram = est.adjoint() * est;
    let inv = gram.try_inverse()?;
    let mut w = est * inv;
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if !norm.is_finite() || norm <= 1e-12 {
            return None;
        }
        col /= Complex::new(norm, 0.0);
    }
    Some(w)
}

fn user_matrix(samples: &[&Array2<Complex64>], users: &[usize], carrier: usize) -> DMatrix<Complex<f64>> {
    let n_a = samples[0].nrows();
    DMatrix::from_fn(n_a, users.len(), |a, k| {
        let v = samples[users[k]][(a, carrier)];
        Complex::new(v.re, v.im)
    })
}

/// Gain tables for one user draw across all carriers, or `None` if any
/// carrier's estimated matrix is rank deficient.
fn draw_gain_tables(
    est: &[&Array2<Complex64>],
    truth: &[&Array2<Complex64>],
    users: &[usize],
    n_c: usize,
) -> Option<Vec<CrossGains>> {
    let k = users.len();
    let mut out = Vec::with_capacity(n_c);
    for carrier in 0..n_c {
        let w = zf_precoder(&user_matrix(est, users, carrier))?;
        let response = user_matrix(truth, users, carrier).adjoint() * &w;
        let gains = (0..k)
            .map(|row| (0..k).map(|col| response[(row, col)].norm_sqr()).collect())
            .collect();
        out.push(CrossGains { gains });
    }
    Some(out)
}

/// Average per-user zero-forcing rate over `tx_power_dbs`.
///
/// `h_true` and `h_est` are parallel slices of per-sample channel matrices.
/// The same user draws are reused across the whole power grid, and across
/// methods when the caller fixes the seed, which turns curve comparisons
/// into paired comparisons. Draws whose estimated user matrix is rank
/// deficient are redrawn (the count is reported).
pub fn zf_per_user_rate(
    h_true: &[Array2<Complex64>],
    h_est: &[Array2<Complex64>],
    tx_power_dbs: &[f64],
    opts: &RateOptions,
) -> Result<(Vec<f64>, usize)> {
    if h_true.len() != h_est.len() {
        return Err(Error::Config("true/estimated sample counts differ".into()));
    }
    if h_true.len() < opts.n_users {
        return Err(Error::Config(format!(
            "need at least {} samples for {} users",
            opts.n_users, opts.n_users
        )));
    }
    if opts.n_users == 0 || opts.n_draws == 0 {
        return Err(Error::Config("n_users and n_draws must be positive".into()));
    }
    let n_c = h_true[0].ncols();
    let true_refs: Vec<&Array2<Complex64>> = h_true.iter().collect();
    let est_refs: Vec<&Array2<Complex64>> = h_est.iter().collect();

    let mut redraws = 0usize;
    let mut tables: Vec<CrossGains> = Vec::with_capacity(opts.n_draws * n_c);
    for draw in 0..opts.n_draws {
        // Deterministic per-draw seed schedule; redraws extend the same
        // stream, so results stay reproducible.
        let mut rng = rng_from(opts.seed, stream::RATE_DRAWS, draw as u64);
        loop {
            let users = index_sample(&mut rng, h_true.len(), opts.n_users).into_vec();
            match draw_gain_tables(&est_refs, &true_refs, &users, n_c) {
                Some(draw_tables) => {
                    tables.extend(draw_tables);
                    break;
                }
                None => {
                    redraws += 1;
                    if redraws > 1000 + 10 * opts.n_draws {
                        return Err(Error::Config(
                            "estimated user matrices are persistently rank deficient".into(),
                        ));
                    }
                }
            }
        }
    }

    let rates = tx_power_dbs
        .iter()
        .map(|p_db| {
            let p = 10f64.powf(p_db / 10.0);
            tables.iter().map(|t| t.per_user_rate(p)).sum::<f64>() / tables.len() as f64
        })
        .collect();
    Ok((rates, redraws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, stream};
    use approx::assert_abs_diff_eq;
    use rand::RngExt;

    fn random_channels(n: usize, n_a: usize, n_c: usize, seed: u64) -> Vec<Array2<Complex64>> {
        (0..n)
            .map(|i| {
                let mut rng = rng_from(seed, stream::RATE_DRAWS, 10_000 + i as u64);
                Array2::from_shape_fn((n_a, n_c), |_| {
                    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                })
            })
            .collect()
    }

    #[test]
    fn single_user_unit_channel_matches_closed_form() {
        // One user with a unit-norm channel: rate = log2(1 + P).
        let n_a = 4;
        let mut h = Array2::zeros((n_a, 1));
        h[(0, 0)] = Complex64::new(0.5, 0.0);
        h[(1, 0)] = Complex64::new(0.0, 0.5);
        h[(2, 0)] = Complex64::new(-0.5, 0.0);
        h[(3, 0)] = Complex64::new(0.0, -0.5);
        let norm: f64 = h.iter().map(|v| v.norm_sqr()).sum::<f64>();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        let set = vec![h];
        let opts = RateOptions {
            n_users: 1,
            n_draws: 3,
            seed: 5,
        };
        let (rates, redraws) =
            zf_per_user_rate(&set, &set, &[0.0, 10.0, 20.0], &opts).unwrap();
        assert_eq!(redraws, 0);
        for (rate, p_db) in rates.iter().zip([0.0, 10.0, 20.0]) {
            let p = 10f64.powf(p_db / 10.0);
            assert_abs_diff_eq!(*rate, (1.0 + p).log2(), epsilon = 1e-9);
        }
    }

    #[test]
    fn perfect_csi_nulls_interference() {
        let set = random_channels(12, 6, 3, 1);
        let users: Vec<usize> = vec![0, 3, 5, 9];
        let refs: Vec<&Array2<Complex64>> = set.iter().collect();
        for carrier in 0..3 {
            let m = user_matrix(&refs, &users, carrier);
            let w = zf_precoder(&m).expect("full rank");
            let response = m.adjoint() * &w;
            for k in 0..4 {
                let h_norm = m.column(k).norm();
                for j in 0..4 {
                    if j != k {
                        assert!(
                            response[(k, j)].norm() < 1e-6 * h_norm,
                            "residual interference {}",
                            response[(k, j)].norm()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn perfect_csi_rate_is_monotone_in_power() {
        let set = random_channels(10, 4, 2, 2);
        let grid: Vec<f64> = (-2..=6).map(|v| v as f64 * 5.0).collect();
        let opts = RateOptions {
            n_users: 3,
            n_draws: 20,
            seed: 7,
        };
        let (rates, _) = zf_per_user_rate(&set, &set, &grid, &opts).unwrap();
        for pair in rates.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12);
        }
    }

    #[test]
    fn estimation_error_costs_rate() {
        let truth = random_channels(16, 4, 2, 3);
        let noisy: Vec<Array2<Complex64>> = truth
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let mut rng = rng_from(77, stream::RATE_DRAWS, i as u64);
                h + &Array2::from_shape_fn(h.dim(), |_| {
                    Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.4
                })
            })
            .collect();
        let grid = [10.0, 20.0, 30.0];
        let opts = RateOptions {
            n_users: 4,
            n_draws: 50,
            seed: 11,
        };
        let (perfect, _) = zf_per_user_rate(&truth, &truth, &grid, &opts).unwrap();
        let (degraded, _) = zf_per_user_rate(&truth, &noisy, &grid, &opts).unwrap();
        for (p, d) in perfect.iter().zip(degraded.iter()) {
            assert!(p >= d, "perfect {p} should dominate degraded {d}");
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let set = random_channels(3, 4, 2, 4);
        let opts = RateOptions {
            n_users: 8,
            n_draws: 1,
            seed: 0,
        };
        assert!(zf_per_user_rate(&set, &set, &[0.0], &opts).is_err());
    }
}

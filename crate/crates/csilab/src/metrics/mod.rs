//! Reconstruction quality and system-level evaluation.

pub mod rate;

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

pub use rate::{zf_per_user_rate, RateCurve, RateOptions};

/// Normalized mean square error of one sample:
/// `||h_hat - h||_F^2 / ||h||_F^2`.
pub fn nmse(h_hat: &Array2<Complex64>, h: &Array2<Complex64>) -> Result<f64> {
    assert_eq!(h_hat.dim(), h.dim(), "nmse shapes must match");
    let denom: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = h_hat
        .iter()
        .zip(h.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / denom)
}

/// Per-subcarrier absolute normalized inner product between the estimated
/// and true channel columns, averaged over subcarriers.
///
/// Returns the value together with the number of degenerate (zero-norm)
/// columns that had to be excluded.
pub fn cosine_similarity(h_hat: &Array2<Complex64>, h: &Array2<Complex64>) -> (f64, usize) {
    assert_eq!(h_hat.dim(), h.dim(), "cosine shapes must match");
    let n_c = h.ncols();
    let mut acc = 0.0;
    let mut excluded = 0usize;
    for c in 0..n_c {
        let mut inner = Complex64::new(0.0, 0.0);
        let mut norm_hat = 0.0;
        let mut norm_true = 0.0;
        for a in 0..h.nrows() {
            inner += h_hat[(a, c)].conj() * h[(a, c)];
            norm_hat += h_hat[(a, c)].norm_sqr();
            norm_true += h[(a, c)].norm_sqr();
        }
        if norm_hat <= 0.0 || norm_true <= 0.0 {
            excluded += 1;
            continue;
        }
        acc += inner.norm() / (norm_hat.sqrt() * norm_true.sqrt());
    }
    let used = n_c - excluded;
    if used == 0 {
        (0.0, excluded)
    } else {
        (acc / used as f64, excluded)
    }
}

/// Right-continuous empirical CDF: sorted `(value, fraction <= value)`
/// pairs, one per input value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    assert!(!values.is_empty(), "empirical_cdf needs at least one value");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, (i + 1) as f64 / n))
        .collect()
}

/// Five-number box summary with 1.5 IQR whiskers clipped to the data range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

/// Linear-interpolation quantile on a sorted slice (the convention used by
/// numpy's default and R type 7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    assert!(!values.is_empty(), "box_stats needs at least one value");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = sorted
        .iter()
        .copied()
        .find(|v| *v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_hi = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    BoxStats {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
    }
}

/// Per-sample metric vectors for one evaluated method/carrier combination,
/// plus enough labels to serialize a self-describing CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub method: String,
    pub freq_tag: String,
    pub snr_db: f64,
    pub quantizer_bits: Option<u8>,
    pub nmse: Vec<f64>,
    pub rho: Vec<f64>,
}

impl MetricReport {
    pub fn mean_nmse(&self) -> f64 {
        mean(&self.nmse)
    }

    pub fn mean_rho(&self) -> f64 {
        mean(&self.rho)
    }

    pub fn nmse_box(&self) -> BoxStats {
        box_stats(&self.nmse)
    }

    pub fn rho_box(&self) -> BoxStats {
        box_stats(&self.rho)
    }

    /// Label like `AE`, `AE-8bit` or `IDFT` used in CSV and plot legends.
    pub fn label(&self) -> String {
        match self.quantizer_bits {
            Some(b) => format!("{}-{}bit", self.method, b),
            None => self.method.clone(),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sample_pair() -> (Array2<Complex64>, Array2<Complex64>) {
        let h = array![
            [Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.2)],
            [Complex64::new(0.1, -1.2), Complex64::new(0.7, 0.0)],
        ];
        let h_hat = array![
            [Complex64::new(0.9, 0.6), Complex64::new(-0.1, 0.1)],
            [Complex64::new(0.2, -1.0), Complex64::new(0.8, -0.1)],
        ];
        (h_hat, h)
    }

    #[test]
    fn nmse_identities() {
        let (_, h) = sample_pair();
        assert_abs_diff_eq!(nmse(&h, &h).unwrap(), 0.0, epsilon = 1e-15);
        let zero = Array2::zeros(h.dim());
        assert_abs_diff_eq!(nmse(&zero, &h).unwrap(), 1.0, epsilon = 1e-15);
        let double = &h * Complex64::new(2.0, 0.0);
        assert_abs_diff_eq!(nmse(&double, &h).unwrap(), 1.0, epsilon = 1e-12);
        assert!(nmse(&h, &zero).is_err());
    }

    #[test]
    fn cosine_is_invariant_under_complex_scaling() {
        let (h_hat, h) = sample_pair();
        let (rho, excluded) = cosine_similarity(&h_hat, &h);
        assert_eq!(excluded, 0);
        assert!(rho > 0.0 && rho <= 1.0);
        let scaled = &h_hat * Complex64::new(-0.3, 1.9);
        let (rho_scaled, _) = cosine_similarity(&scaled, &h);
        assert_abs_diff_eq!(rho, rho_scaled, epsilon = 1e-12);
        let (self_rho, _) = cosine_similarity(&h, &h);
        assert_abs_diff_eq!(self_rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_of_orthogonal_columns_is_zero() {
        let h = array![
            [Complex64::new(1.0, 0.0)],
            [Complex64::new(0.0, 0.0)],
        ];
        let h_hat = array![
            [Complex64::new(0.0, 0.0)],
            [Complex64::new(1.0, 0.0)],
        ];
        let (rho, _) = cosine_similarity(&h_hat, &h);
        assert_abs_diff_eq!(rho, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cosine_matches_hand_computed_two_by_two() {
        // Columns: hat = [1, j], true = [1, 1] and hat = [2, 0], true = [0, 1].
        let h_hat = array![
            [Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)],
            [Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)],
        ];
        let h = array![
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)],
        ];
        // Column 0: |1 - j| / (sqrt(2) sqrt(2)) = sqrt(2)/2.
        // Column 1: 0. Average: sqrt(2)/4.
        let expected = 0.5f64.sqrt() / 2.0;
        let (rho, excluded) = cosine_similarity(&h_hat, &h);
        assert_eq!(excluded, 0);
        assert_abs_diff_eq!(rho, expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_columns_are_excluded_with_a_count() {
        let h = array![
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        ];
        let (rho, excluded) = cosine_similarity(&h, &h);
        assert_eq!(excluded, 1);
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let cdf = empirical_cdf(&[3.0, 1.0, 2.0]);
        assert_eq!(cdf.len(), 3);
        assert_eq!(cdf[0], (1.0, 1.0 / 3.0));
        assert_eq!(cdf[1], (2.0, 2.0 / 3.0));
        assert_eq!(cdf[2], (3.0, 1.0));
        let single = empirical_cdf(&[5.0]);
        assert_eq!(single, vec![(5.0, 1.0)]);
    }

    #[test]
    fn cdf_agrees_with_counting_oracle() {
        let mut vals = Vec::new();
        let mut state = 12345u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        let cdf = empirical_cdf(&vals);
        for (v, frac) in &cdf {
            let count = vals.iter().filter(|x| **x <= *v).count();
            assert_abs_diff_eq!(*frac, count as f64 / vals.len() as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn box_stats_identities() {
        let constant = box_stats(&[2.5; 9]);
        assert_eq!(constant.median, 2.5);
        assert_eq!(constant.q1, 2.5);
        assert_eq!(constant.q3, 2.5);
        assert_eq!(constant.whisker_lo, 2.5);
        assert_eq!(constant.whisker_hi, 2.5);

        let range: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let b = box_stats(&range);
        assert_abs_diff_eq!(b.median, 50.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.q1, 25.75, epsilon = 1e-12);
        assert_abs_diff_eq!(b.q3, 75.25, epsilon = 1e-12);
        // No outliers: whiskers sit at the extremes.
        assert_eq!(b.whisker_lo, 1.0);
        assert_eq!(b.whisker_hi, 100.0);
    }

    #[test]
    fn box_whiskers_exclude_outliers() {
        let mut vals: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        vals.push(1000.0);
        let b = box_stats(&vals);
        assert_eq!(b.whisker_hi, 20.0);
        assert_eq!(b.whisker_lo, 1.0);
    }

    #[test]
    fn quartiles_agree_with_sort_based_oracle() {
        let vals = [0.9, 0.1, 0.4, 0.7, 0.2, 0.6, 0.3];
        let b = box_stats(&vals);
        let mut sorted = vals.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        // n=7: q1 at pos 1.5, median at 3, q3 at 4.5.
        assert_abs_diff_eq!(b.q1, (sorted[1] + sorted[2]) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.median, sorted[3], epsilon = 1e-15);
        assert_abs_diff_eq!(b.q3, (sorted[4] + sorted[5]) / 2.0, epsilon = 1e-12);
    }
}

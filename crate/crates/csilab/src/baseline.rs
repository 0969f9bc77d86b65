//! Learning-free feedback baseline: truncate the channel in the delay
//! domain.
//!
//! The noisy CSI is rotated into the space-delay domain with a unitary
//! inverse DFT along the subcarrier axis, only the first `k` delay taps are
//! kept, and reconstruction zero-pads and rotates back. Physical channels
//! concentrate energy in the leading taps, so a handful of columns carries
//! most of the matrix.

use std::sync::{Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();

fn fft_planner() -> &'static Mutex<FftPlanner<f64>> {
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Kept delay-domain columns of one channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDomainCoeffs {
    /// `N_a x k` complex coefficients.
    pub coeffs: Array2<Complex64>,
    /// Subcarrier count of the original matrix.
    pub n_c_original: usize,
}

impl DelayDomainCoeffs {
    pub fn taps_kept(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Real-coefficient budget of this representation (`2 * N_a * k`).
    pub fn real_coefficient_count(&self) -> usize {
        2 * self.coeffs.len()
    }
}

fn transform_rows(y: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let n = y.ncols();
    let fft = {
        let mut planner = fft_planner().lock().unwrap();
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = y.clone();
    for mut row in out.rows_mut() {
        let buf = row.as_slice_mut().expect("row-major layout");
        fft.process(buf);
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// Rotate into the space-delay domain: right-multiplication by the unitary
/// inverse-DFT matrix, so Frobenius norm is preserved.
pub fn to_delay_domain(y: &Array2<Complex64>) -> Array2<Complex64> {
    transform_rows(y, true)
}

/// Inverse of [`to_delay_domain`]: unitary forward DFT along rows.
pub fn from_delay_domain(x: &Array2<Complex64>) -> Array2<Complex64> {
    transform_rows(x, false)
}

/// Keep the first `k` delay-domain columns.
pub fn idft_compress(y: &Array2<Complex64>, k: usize) -> DelayDomainCoeffs {
    let k = k.clamp(1, y.ncols());
    let delay = to_delay_domain(y);
    DelayDomainCoeffs {
        coeffs: delay.slice(ndarray::s![.., 0..k]).to_owned(),
        n_c_original: y.ncols(),
    }
}

/// Zero-pad the kept taps and rotate back to the space-frequency domain.
pub fn idft_reconstruct(c: &DelayDomainCoeffs) -> Array2<Complex64> {
    let n_a = c.coeffs.nrows();
    let k = c.coeffs.ncols();
    let mut padded = Array2::zeros((n_a, c.n_c_original));
    padded.slice_mut(ndarray::s![.., 0..k]).assign(&c.coeffs);
    from_delay_domain(&padded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_channel, PathSet, PropagationPath, ScenarioConfig};
    use crate::rng::{rng_from, stream};
    use rand::RngExt;
    use std::f64::consts::PI;

    fn frob(m: &Array2<Complex64>) -> f64 {
        m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = rng_from(seed, stream::PATH_SET, 0);
        Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    /// O(N^2) direct evaluation of the unitary inverse DFT along rows.
    fn brute_to_delay(y: &Array2<Complex64>) -> Array2<Complex64> {
        let (n_a, n_c) = y.dim();
        let mut out = Array2::zeros((n_a, n_c));
        for a in 0..n_a {
            for m in 0..n_c {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..n_c {
                    let ph = 2.0 * PI * (c as f64) * (m as f64) / n_c as f64;
                    acc += y[(a, c)] * Complex64::from_polar(1.0, ph);
                }
                out[(a, m)] = acc / (n_c as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn matches_direct_summation_oracle() {
        for n_c in [2usize, 3, 8, 13, 16] {
            let y = random_matrix(4, n_c, n_c as u64);
            let fast = to_delay_domain(&y);
            let brute = brute_to_delay(&y);
            for (a, b) in fast.iter().zip(brute.iter()) {
                assert!((a - b).norm() < 1e-6, "n_c={n_c}: {a} vs {b}");
            }
            // Forward transform is the inverse map.
            let back = from_delay_domain(&fast);
            for (a, b) in back.iter().zip(y.iter()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_tone_rows_land_in_one_delay_bin() {
        let n_c = 16;
        let m = 5;
        let y = Array2::from_shape_fn((3, n_c), |(_, c)| {
            Complex64::from_polar(1.0, -2.0 * PI * (c as f64) * (m as f64) / n_c as f64)
        });
        let delay = to_delay_domain(&y);
        for a in 0..3 {
            for bin in 0..n_c {
                let e = delay[(a, bin)].norm_sqr();
                if bin == m {
                    assert!((e - n_c as f64).abs() < 1e-9);
                } else {
                    assert!(e < 1e-18);
                }
            }
        }
    }

    #[test]
    fn transform_preserves_frobenius_norm() {
        let y = random_matrix(6, 32, 3);
        let delay = to_delay_domain(&y);
        assert!((frob(&delay) - frob(&y)).abs() < 1e-6);
    }

    #[test]
    fn full_basis_roundtrip_is_lossless() {
        let y = random_matrix(5, 12, 4);
        let rec = idft_reconstruct(&idft_compress(&y, 12));
        for (a, b) in rec.iter().zip(y.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn truncation_is_an_orthogonal_projection() {
        let y = random_matrix(5, 24, 8);
        let once = idft_reconstruct(&idft_compress(&y, 3));
        let twice = idft_reconstruct(&idft_compress(&once, 3));
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(frob(&once) <= frob(&y) + 1e-12);
    }

    #[test]
    fn zero_coefficients_reconstruct_to_zero() {
        let c = DelayDomainCoeffs {
            coeffs: Array2::zeros((4, 2)),
            n_c_original: 16,
        };
        let rec = idft_reconstruct(&c);
        assert!(frob(&rec) == 0.0);
    }

    #[test]
    fn on_grid_delays_compress_exactly() {
        // Two broadside paths sitting exactly on delay taps 0 and 1: keeping
        // two columns is lossless.
        let scenario = ScenarioConfig {
            n_antennas_h: 2,
            n_antennas_v: 2,
            n_subcarriers: 16,
            bandwidth_hz: 1e6,
            f_ul_hz: 2.5e9,
            dl_gaps_hz: vec![120e6],
            n_paths: 2,
            cell_radius_m: 150.0,
            bs_height_m: 10.0,
            downtilt_deg: 6.0,
            antenna_spacing_wavelengths: 0.5,
            taps_active: 2,
        };
        let paths = PathSet {
            paths: vec![
                PropagationPath {
                    gain: Complex64::new(0.8, 0.1),
                    delay_s: 0.0,
                    azimuth_aod_rad: 0.0,
                    elevation_aod_rad: 0.0,
                },
                PropagationPath {
                    gain: Complex64::new(-0.2, 0.5),
                    delay_s: 1.0 / scenario.bandwidth_hz,
                    azimuth_aod_rad: 0.0,
                    elevation_aod_rad: 0.0,
                },
            ],
        };
        let h = synthesize_channel(&paths, &scenario, scenario.f_ul_hz);
        let compressed = idft_compress(&h, 2);
        assert_eq!(compressed.real_coefficient_count(), 2 * 4 * 2);
        let rec = idft_reconstruct(&compressed);
        let err: f64 = (&rec - &h).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / frob(&h) < 1e-5, "relative error {}", err / frob(&h));
    }
}

//! Geometric multipath channel generation.
//!
//! Channels are synthesized from a per-user set of propagation paths
//! (complex gain, delay, departure angles). The same path set is reused for
//! the uplink carrier and every downlink carrier of one user location, which
//! is what makes the uplink and downlink channel distributions match while
//! the realizations themselves differ.

pub mod dataset;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{generate_dataset, ChannelSample, Dataset, DatasetMeta, SplitSizes, UlNoisySplit};


/// Cell geometry, array layout and frequency plan for one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Horizontal antenna count of the uniform planar array.
    pub n_antennas_h: usize,
    /// Vertical antenna count of the uniform planar array.
    pub n_antennas_v: usize,
    /// Subcarriers per carrier.
    pub n_subcarriers: usize,
    /// Total bandwidth per carrier in Hz.
    pub bandwidth_hz: f64,
    /// Uplink center frequency in Hz.
    pub f_ul_hz: f64,
    /// Duplex gaps in Hz; each defines one downlink carrier at `f_ul + gap`.
    pub dl_gaps_hz: Vec<f64>,
    /// Multipath components per user location.
    pub n_paths: usize,
    /// Cell radius in meters; user positions are uniform over the disc.
    pub cell_radius_m: f64,
    /// Base-station height in meters.
    pub bs_height_m: f64,
    /// Mechanical downtilt of the array in degrees.
    pub downtilt_deg: f64,
    /// Element spacing in wavelengths at the uplink carrier.
    pub antenna_spacing_wavelengths: f64,
    /// Delay support in taps: path delays stay below `taps_active / bandwidth`.
    pub taps_active: usize,
}

impl ScenarioConfig {
    /// Full-size scenario: 8x8 array, 160 subcarriers, 58 paths, gaps at
    /// 120 and 480 MHz.
    pub fn paper() -> Self {
        Self {
            n_antennas_h: 8,
            n_antennas_v: 8,
            n_subcarriers: 160,
            bandwidth_hz: 8e6,
            f_ul_hz: 2.5e9,
            dl_gaps_hz: vec![120e6, 480e6],
            n_paths: 58,
            cell_radius_m: 150.0,
            bs_height_m: 10.0,
            downtilt_deg: 6.0,
            antenna_spacing_wavelengths: 0.5,
            taps_active: 20,
        }
    }

    /// Reduced scenario that trains in minutes on one CPU core: 4x4 array,
    /// 32 subcarriers, same carrier plan.
    pub fn desk() -> Self {
        Self {
            n_antennas_h: 4,
            n_antennas_v: 4,
            n_subcarriers: 32,
            bandwidth_hz: 1.6e6,
            f_ul_hz: 2.5e9,
            dl_gaps_hz: vec![120e6, 480e6],
            n_paths: 58,
            cell_radius_m: 150.0,
            bs_height_m: 10.0,
            downtilt_deg: 6.0,
            antenna_spacing_wavelengths: 0.5,
            taps_active: 4,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas_h * self.n_antennas_v
    }

    /// Subcarrier spacing in Hz.
    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.n_subcarriers as f64
    }

    /// Upper bound on path delays.
    pub fn max_delay_s(&self) -> f64 {
        self.taps_active as f64 / self.bandwidth_hz
    }

    /// All carrier center frequencies, uplink first.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let mut freqs = vec![self.f_ul_hz];
        freqs.extend(self.dl_gaps_hz.iter().map(|gap| self.f_ul_hz + gap));
        freqs
    }

    /// Absolute frequency of subcarrier `c` on the carrier centered at
    /// `f_center`: a centered grid `f_center + (c - N_c/2) * spacing`.
    pub fn subcarrier_frequency(&self, f_center_hz: f64, c: usize) -> f64 {
        let offset = c as f64 - self.n_subcarriers as f64 / 2.0;
        f_center_hz + offset * self.subcarrier_spacing_hz()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas_h == 0 || self.n_antennas_v == 0 {
            return Err(Error::Config("antenna grid must be nonempty".into()));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::Config("n_subcarriers must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.bandwidth_hz <= 0.0 || self.f_ul_hz <= 0.0 {
            return Err(Error::Config("bandwidth and carrier must be positive".into()));
        }
        if self.taps_active == 0 || self.taps_active > self.n_subcarriers {
            return Err(Error::Config(
                "taps_active must be in 1..=n_subcarriers".into(),
            ));
        }
        for gap in &self.dl_gaps_hz {
            if *gap <= 0.0 {
                return Err(Error::Config("every dl gap must be positive".into()));
            }
        }
        if self.cell_radius_m <= 0.0 || self.bs_height_m <= 0.0 {
            return Err(Error::Config("geometry lengths must be positive".into()));
        }
        if self.antenna_spacing_wavelengths <= 0.0 {
            return Err(Error::Config("antenna spacing must be positive".into()));
        }
        Ok(())
    }
}

/// One multipath component.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationPath {
    pub gain: Complex64,
    pub delay_s: f64,
    pub azimuth_aod_rad: f64,
    pub elevation_aod_rad: f64,
}

/// The latent geometry of one user location, shared by the uplink and every
/// downlink carrier of that sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<PropagationPath>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Azimuth scatter (standard deviation, radians) of path departures around
/// the user direction. Wide, as fits rich non-line-of-sight scattering.
const AZIMUTH_SPREAD_RAD: f64 = 0.6;
/// Elevation scatter around the geometric user elevation.
const ELEVATION_SPREAD_RAD: f64 = 0.09;
/// Delays are drawn from an exponential profile truncated at this fraction
/// of `max_delay_s`, keeping tap energy clear of the window edge.
const DELAY_TRUNCATION: f64 = 0.8;
/// Exponential delay scale as a fraction of `max_delay_s`.
const DELAY_SCALE: f64 = 0.18;
/// Floor of the downtilt gain taper, so no path is erased entirely.
const TILT_GAIN_FLOOR: f64 = 0.05;

/// Draw the multipath geometry for one user location.
///
/// The user is placed uniformly over the cell disc; departure angles scatter
/// around the user direction; delays follow a truncated exponential profile
/// and per-path mean power decays with delay, so channel energy concentrates
/// in the first few delay taps.
pub fn sample_path_set<R: Rng>(rng: &mut R, scenario: &ScenarioConfig) -> PathSet {
    let radius = scenario.cell_radius_m * rng.random::<f64>().sqrt();
    let radius = radius.max(scenario.bs_height_m);
    let user_azimuth = (rng.random::<f64>() * 2.0 - 1.0) * PI;
    let user_elevation = -(scenario.bs_height_m / radius).atan();
    let tilt = -scenario.downtilt_deg.to_radians();

    let max_delay = scenario.max_delay_s() * DELAY_TRUNCATION;
    let delay_scale = scenario.max_delay_s() * DELAY_SCALE;

    let mut paths = Vec::with_capacity(scenario.n_paths);
    for _ in 0..scenario.n_paths {
        // Truncated exponential via inverse CDF.
        let u: f64 = rng.random();
        let cap = 1.0 - (-max_delay / delay_scale).exp();
        let delay_s = -delay_scale * (1.0 - u * cap).ln();

        let azimuth = user_azimuth + AZIMUTH_SPREAD_RAD * rng.sample::<f64, _>(StandardNormal);
        let elevation = (user_elevation
            + ELEVATION_SPREAD_RAD * rng.sample::<f64, _>(StandardNormal))
        .clamp(-PI / 2.0, PI / 2.0);

        // Mean power decays with delay; the tilt taper favors paths near the
        // tilted boresight.
        let power = (-delay_s / delay_scale).exp();
        let taper = (elevation - tilt).cos().max(TILT_GAIN_FLOOR);
        let amplitude = (power / scenario.n_paths as f64).sqrt() * taper;
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let gain = Complex64::new(re, im) * amplitude / 2f64.sqrt();

        paths.push(PropagationPath {
            gain,
            delay_s,
            azimuth_aod_rad: azimuth,
            elevation_aod_rad: elevation,
        });
    }
    PathSet { paths }
}

/// Uniform planar array response for a departure direction at frequency
/// `f_hz`.
///
/// Element `(p, q)` of the `n_antennas_h x n_antennas_v` grid has unit
/// magnitude and phase
/// `2*pi * spacing * (f / f_ul) * (p sin(az) cos(el) + q sin(el))`,
/// i.e. the physical element spacing is fixed at
/// `antenna_spacing_wavelengths` of the uplink wavelength. The grid is
/// flattened row-major (`a = p * n_antennas_v + q`).
pub fn upa_steering_vector(
    azimuth_rad: f64,
    elevation_rad: f64,
    scenario: &ScenarioConfig,
    f_hz: f64,
) -> Array1<Complex64> {
    let n_a = scenario.n_antennas();
    let spacing = scenario.antenna_spacing_wavelengths * f_hz / scenario.f_ul_hz;
    let horiz = azimuth_rad.sin() * elevation_rad.cos();
    let vert = elevation_rad.sin();
    let mut v = Array1::zeros(n_a);
    for p in 0..scenario.n_antennas_h {
        for q in 0..scenario.n_antennas_v {
            let phase = 2.0 * PI * spacing * (p as f64 * horiz + q as f64 * vert);
            v[p * scenario.n_antennas_v + q] = Complex64::from_polar(1.0, phase);
        }
    }
    v
}

/// Frequency-domain ray synthesis of one carrier.
///
/// `H[a, c] = sum_l g_l * s_l[a](f_c) * exp(-j 2 pi f_c tau_l)` where `f_c`
/// is the absolute subcarrier frequency. Calling this with the same
/// `PathSet` at the uplink and downlink centers yields distinct matrices
/// drawn from the same propagation scenario.
pub fn synthesize_channel(
    paths: &PathSet,
    scenario: &ScenarioConfig,
    f_center_hz: f64,
) -> Array2<Complex64> {
    let n_a = scenario.n_antennas();
    let n_c = scenario.n_subcarriers;
    let spacing = scenario.antenna_spacing_wavelengths;
    let f_lo = scenario.subcarrier_frequency(f_center_hz, 0);
    let delta = scenario.subcarrier_spacing_hz();

    let mut h = Array2::zeros((n_a, n_c));
    for path in &paths.paths {
        let horiz = path.azimuth_aod_rad.sin() * path.elevation_aod_rad.cos();
        let vert = path.elevation_aod_rad.sin();
        for p in 0..scenario.n_antennas_h {
            for q in 0..scenario.n_antennas_v {
                // Total phase at subcarrier frequency f: f * w, combining
                // the array response (linear in f for a fixed physical
                // array) and the delay rotation.
                let w = 2.0 * PI
                    * (spacing / scenario.f_ul_hz * (p as f64 * horiz + q as f64 * vert)
                        - path.delay_s);
                let step = Complex64::from_polar(1.0, delta * w);
                let mut phasor = path.gain * Complex64::from_polar(1.0, f_lo * w);
                let mut row = h.row_mut(p * scenario.n_antennas_v + q);
                for c in 0..n_c {
                    row[c] += phasor;
                    phasor *= step;
                }
            }
        }
    }
    h
}

/// Rescale so the squared Frobenius norm equals the element count
/// `N_a * N_c`, removing per-link large-scale gain.
pub fn normalize_path_gain(h: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if energy <= 0.0 || !energy.is_finite() {
        return Err(Error::DegenerateChannel);
    }
    let target = (h.nrows() * h.ncols()) as f64;
    Ok(h * Complex64::new((target / energy).sqrt(), 0.0))
}

/// Map a corruption level in dB to per-entry complex noise variance:
/// `sigma2 = 10^(-snr_db / 10)`.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Add circularly-symmetric complex Gaussian noise with per-entry variance
/// `sigma2`.
pub fn add_noise<R: Rng>(h: &Array2<Complex64>, sigma2: f64, rng: &mut R) -> Array2<Complex64> {
    if sigma2 == 0.0 {
        return h.clone();
    }
    let scale = (sigma2 / 2.0).sqrt();
    let mut out = h.clone();
    for v in out.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * scale, im * scale);
    }
    out
}

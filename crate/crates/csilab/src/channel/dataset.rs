//! Channel sample generation and the `CSIDS1` dataset container.
//!
//! A dataset holds, per sample, the true channel and a fixed noisy
//! observation for the uplink carrier and each downlink carrier. Samples are
//! a pure function of the file's seed and scenario, so regeneration is
//! byte-identical.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"CSIDS1"
//! version u16
//! n_a     u32
//! n_c     u32
//! n_freqs u32
//! center frequencies, n_freqs x f64
//! n_samples u64
//! snr_db    f64
//! master_seed u64
//! per sample, per carrier (uplink first): H then Y,
//!   each row-major interleaved (re, im) f32
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array4};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};

use super::{
    add_noise, normalize_path_gain, sample_path_set, sigma2_from_snr_db, synthesize_channel,
    ScenarioConfig,
};

const MAGIC: &[u8; 6] = b"CSIDS1";
const FORMAT_VERSION: u16 = 1;

/// Split sizes for one generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// One user location: true channels and their fixed noisy observations,
/// uplink first, then one entry per configured downlink gap.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub seed: u64,
    pub h: Vec<Array2<Complex32>>,
    pub y: Vec<Array2<Complex32>>,
}

impl ChannelSample {
    pub fn h_ul(&self) -> &Array2<Complex32> {
        &self.h[0]
    }

    pub fn y_ul(&self) -> &Array2<Complex32> {
        &self.y[0]
    }

    /// True downlink channel for gap index `gap` (0-based).
    pub fn h_dl(&self, gap: usize) -> &Array2<Complex32> {
        &self.h[gap + 1]
    }

    pub fn y_dl(&self, gap: usize) -> &Array2<Complex32> {
        &self.y[gap + 1]
    }

    /// Synthesize one sample: a single path set drives every carrier, each
    /// matrix is normalized to `||H||_F^2 = N_a * N_c`, and one noise
    /// realization per carrier is drawn and stored.
    pub fn generate(scenario: &ScenarioConfig, sigma2: f64, seed: u64) -> ChannelSample {
        let freqs = scenario.center_frequencies();
        // A zero-energy draw is astronomically unlikely but the resample
        // path must exist; bump the derivation index until synthesis
        // succeeds.
        for attempt in 0..64 {
            let mut path_rng = rng_from(seed, stream::PATH_SET, attempt);
            let paths = sample_path_set(&mut path_rng, scenario);
            let mut h = Vec::with_capacity(freqs.len());
            let mut y = Vec::with_capacity(freqs.len());
            let mut degenerate = false;
            for (freq_idx, f_center) in freqs.iter().enumerate() {
                let raw = synthesize_channel(&paths, scenario, *f_center);
                let clean = match normalize_path_gain(&raw) {
                    Ok(m) => m,
                    Err(_) => {
                        degenerate = true;
                        break;
                    }
                };
                let mut noise_rng = rng_from(seed, stream::NOISE, freq_idx as u64);
                let noisy = add_noise(&clean, sigma2, &mut noise_rng);
                h.push(to_c32(&clean));
                y.push(to_c32(&noisy));
            }
            if !degenerate {
                return ChannelSample { seed, h, y };
            }
        }
        unreachable!("path sampling produced 64 degenerate channels in a row");
    }
}

fn to_c32(m: &Array2<Complex64>) -> Array2<Complex32> {
    m.mapv(|v| Complex32::new(v.re as f32, v.im as f32))
}

/// Header metadata of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub n_a: u32,
    pub n_c: u32,
    pub center_freqs_hz: Vec<f64>,
    pub n_samples: u64,
    pub snr_db: f64,
    pub master_seed: u64,
}

impl DatasetMeta {
    pub fn n_gaps(&self) -> usize {
        self.center_freqs_hz.len().saturating_sub(1)
    }
}

/// An in-memory dataset split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<ChannelSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The uplink view handed to the trainer. Downlink matrices are not
    /// reachable through this type.
    pub fn ul_noisy_split(&self) -> UlNoisySplit {
        let n = self.samples.len();
        let (n_a, n_c) = (self.meta.n_a as usize, self.meta.n_c as usize);
        let mut noisy = Array4::zeros((n, n_a, n_c, 2));
        let mut clean = Array4::zeros((n, n_a, n_c, 2));
        for (i, s) in self.samples.iter().enumerate() {
            for a in 0..n_a {
                for c in 0..n_c {
                    let yv = s.y_ul()[(a, c)];
                    let hv = s.h_ul()[(a, c)];
                    noisy[(i, a, c, 0)] = yv.re;
                    noisy[(i, a, c, 1)] = yv.im;
                    clean[(i, a, c, 0)] = hv.re;
                    clean[(i, a, c, 1)] = hv.im;
                }
            }
        }
        UlNoisySplit {
            noisy,
            clean,
            sigma2: sigma2_from_snr_db(self.meta.snr_db),
        }
    }
}

/// Uplink-only training view: noisy observations plus the clean uplink used
/// when noise is redrawn per epoch.
#[derive(Debug, Clone)]
pub struct UlNoisySplit {
    pub noisy: Array4<f32>,
    pub clean: Array4<f32>,
    pub sigma2: f64,
}

impl UlNoisySplit {
    pub fn len(&self) -> usize {
        self.noisy.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generate the three split files (`train.csids`, `val.csids`,
/// `test.csids`) plus a `scenario.json` sidecar under `out_dir`.
///
/// Each split file records its own derived seed, so any split regenerates
/// independently of the others.
pub fn generate_dataset(
    scenario: &ScenarioConfig,
    splits: &SplitSizes,
    snr_db: f64,
    master_seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    scenario.validate()?;
    if splits.train == 0 || splits.val == 0 || splits.test == 0 {
        return Err(Error::Config("every split must be nonempty".into()));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;

    let scenario_path = out_dir.join("scenario.json");
    let json = serde_json::to_string_pretty(scenario)?;
    write_atomic(&scenario_path, json.as_bytes())?;

    let sigma2 = sigma2_from_snr_db(snr_db);
    let mut out_paths = vec![scenario_path];
    let names = [
        ("train.csids", splits.train),
        ("val.csids", splits.val),
        ("test.csids", splits.test),
    ];
    for (split_idx, (name, count)) in names.iter().enumerate() {
        let split_seed = derive_seed(master_seed, stream::PATH_SET, 1000 + split_idx as u64);
        let path = out_dir.join(name);
        let meta = DatasetMeta {
            n_a: scenario.n_antennas() as u32,
            n_c: scenario.n_subcarriers as u32,
            center_freqs_hz: scenario.center_frequencies(),
            n_samples: *count as u64,
            snr_db,
            master_seed: split_seed,
        };
        let samples = (0..*count).map(|i| {
            ChannelSample::generate(scenario, sigma2, derive_seed(split_seed, stream::PATH_SET, i as u64))
        });
        write_dataset_stream(&path, &meta, samples)?;
        out_paths.push(path);
    }
    Ok(out_paths)
}

/// Seed of sample `i` within a split file, recomputable from the header.
pub fn sample_seed(meta: &DatasetMeta, index: u64) -> u64 {
    derive_seed(meta.master_seed, stream::PATH_SET, index)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<Complex32>) -> std::io::Result<()> {
    for v in m.iter() {
        w.write_f32::<LittleEndian>(v.re)?;
        w.write_f32::<LittleEndian>(v.im)?;
    }
    Ok(())
}

/// Write a dataset file from a sample iterator (temp file + rename).
pub fn write_dataset_stream<I>(path: &Path, meta: &DatasetMeta, samples: I) -> Result<()>
where
    I: IntoIterator<Item = ChannelSample>,
{
    let tmp = path.with_extension("tmp");
    let err = |e| Error::Io {
        path: tmp.clone(),
        source: e,
    };
    {
        let file = File::create(&tmp).map_err(err)?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
            w.write_u32::<LittleEndian>(meta.n_a)?;
            w.write_u32::<LittleEndian>(meta.n_c)?;
            w.write_u32::<LittleEndian>(meta.center_freqs_hz.len() as u32)?;
            for f in &meta.center_freqs_hz {
                w.write_f64::<LittleEndian>(*f)?;
            }
            w.write_u64::<LittleEndian>(meta.n_samples)?;
            w.write_f64::<LittleEndian>(meta.snr_db)?;
            w.write_u64::<LittleEndian>(meta.master_seed)?;
            Ok(())
        })()
        .map_err(err)?;
        let mut written = 0u64;
        for sample in samples {
            for (h, y) in sample.h.iter().zip(sample.y.iter()) {
                write_matrix(&mut w, h).map_err(err)?;
                write_matrix(&mut w, y).map_err(err)?;
            }
            written += 1;
        }
        if written != meta.n_samples {
            return Err(Error::Format {
                path: tmp,
                reason: format!("expected {} samples, wrote {written}", meta.n_samples),
            });
        }
        w.flush().map_err(err)?;
    }
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

/// Read only the header of a dataset file.
pub fn read_dataset_meta(path: &Path) -> Result<DatasetMeta> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    read_meta_from(&mut r, path)
}

fn read_meta_from<R: Read>(r: &mut R, path: &Path) -> Result<DatasetMeta> {
    let err = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(err)?;
    if &magic != MAGIC {
        return Err(bad("missing CSIDS1 magic".into()));
    }
    let version = r.read_u16::<LittleEndian>().map_err(err)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_a = r.read_u32::<LittleEndian>().map_err(err)?;
    let n_c = r.read_u32::<LittleEndian>().map_err(err)?;
    let n_freqs = r.read_u32::<LittleEndian>().map_err(err)?;
    if n_a == 0 || n_c == 0 || n_freqs == 0 {
        return Err(bad("empty dimensions in header".into()));
    }
    let mut center_freqs_hz = Vec::with_capacity(n_freqs as usize);
    for _ in 0..n_freqs {
        center_freqs_hz.push(r.read_f64::<LittleEndian>().map_err(err)?);
    }
    let n_samples = r.read_u64::<LittleEndian>().map_err(err)?;
    let snr_db = r.read_f64::<LittleEndian>().map_err(err)?;
    let master_seed = r.read_u64::<LittleEndian>().map_err(err)?;
    Ok(DatasetMeta {
        n_a,
        n_c,
        center_freqs_hz,
        n_samples,
        snr_db,
        master_seed,
    })
}

/// Load a whole dataset split into memory.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    let meta = read_meta_from(&mut r, path)?;
    let err = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let (n_a, n_c) = (meta.n_a as usize, meta.n_c as usize);
    let n_freqs = meta.center_freqs_hz.len();
    let mut samples = Vec::with_capacity(meta.n_samples as usize);
    let mut buf = vec![0u8; n_a * n_c * 8];
    for i in 0..meta.n_samples {
        let mut h = Vec::with_capacity(n_freqs);
        let mut y = Vec::with_capacity(n_freqs);
        for _ in 0..n_freqs {
            for dst in [&mut h, &mut y] {
                r.read_exact(&mut buf).map_err(err)?;
                let mut m = Array2::zeros((n_a, n_c));
                for (k, v) in m.iter_mut().enumerate() {
                    let re = f32::from_le_bytes(buf[k * 8..k * 8 + 4].try_into().unwrap());
                    let im = f32::from_le_bytes(buf[k * 8 + 4..k * 8 + 8].try_into().unwrap());
                    *v = Complex32::new(re, im);
                }
                dst.push(m);
            }
        }
        samples.push(ChannelSample {
            seed: sample_seed(&meta, i),
            h,
            y,
        });
    }
    // Trailing bytes mean a corrupt or mislabeled file.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "trailing bytes after last sample".into(),
            })
        }
        Err(e) => return Err(err(e)),
    }
    Ok(Dataset { meta, samples })
}

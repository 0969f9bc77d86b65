//! Experiment orchestration: dataset generation, training, evaluation and
//! rate sweeps driven by one JSON config.
//!
//! Outputs live under `output_dir/snr_<level>/`:
//!
//! ```text
//! scenario.json            generator parameters
//! train|val|test.csids     dataset splits
//! model.ckpt               trained autoencoder (uplink-only provenance)
//! training_log.csv         epoch,train_loss,val_loss,wall_time_s
//! eval/summary.csv         per method/carrier/quantizer aggregate metrics
//! eval/per_sample.csv      per-sample NMSE and cosine similarity
//! eval/cdf_*.csv|svg       empirical CDFs
//! eval/box_stats.csv|svg   five-number summaries
//! rate/rates.csv           combined per-user rate table
//! rate/rate__*.csv         one CSV per curve
//! rate/rates.svg           combined rate plot
//! ```

pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Axis};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::baseline::{idft_compress, idft_reconstruct};
use crate::channel::{generate_dataset, read_dataset, read_dataset_meta, Dataset, ScenarioConfig, SplitSizes};
use crate::codec::{Deployment, FreqTag};
use crate::error::{Error, Result};
use crate::metrics::{
    box_stats, cosine_similarity, empirical_cdf, mean, nmse, zf_per_user_rate, BoxStats,
    MetricReport, RateCurve, RateOptions,
};
use crate::nn::{
    load_checkpoint, save_checkpoint, train_from, AutoencoderSpec, AutoencoderState, Checkpoint,
    CheckpointMeta, TrainConfig, UL_ONLY_PROVENANCE,
};
use crate::rng::derive_seed;

/// Evaluated feedback methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "IDFT")]
    Idft,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Ae => write!(f, "AE"),
            Method::Idft => write!(f, "IDFT"),
        }
    }
}

/// Transmit-power grid and user-draw settings for the rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateSweepConfig {
    pub power_start_db: f64,
    pub power_stop_db: f64,
    pub power_step_db: f64,
    pub n_users: usize,
    pub n_draws: usize,
}

impl Default for RateSweepConfig {
    fn default() -> Self {
        Self {
            power_start_db: -10.0,
            power_stop_db: 30.0,
            power_step_db: 5.0,
            n_users: 8,
            n_draws: 100,
        }
    }
}

impl RateSweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut p = self.power_start_db;
        while p <= self.power_stop_db + 1e-9 {
            out.push(p);
            p += self.power_step_db;
        }
        out
    }
}

/// Everything one experiment needs, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub splits: SplitSizes,
    /// CSI corruption levels; each gets its own dataset, model and reports.
    pub snr_db: Vec<f64>,
    pub train: TrainConfig,
    pub codeword_dim: usize,
    /// Quantizer widths evaluated in addition to the unquantized codeword.
    pub quantizer_bits: Vec<u8>,
    pub methods: Vec<Method>,
    /// Indices into `scenario.dl_gaps_hz` to evaluate.
    pub dl_gaps_evaluated: Vec<usize>,
    #[serde(default)]
    pub rate: RateSweepConfig,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Reduced profile that runs end to end in minutes on one CPU core.
    pub fn desk_profile(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            splits: SplitSizes {
                train: 4000,
                val: 500,
                test: 500,
            },
            snr_db: vec![10.0, 0.0],
            train: TrainConfig {
                n_epochs: 120,
                patience: 20,
                ..TrainConfig::default()
            },
            codeword_dim: 32,
            quantizer_bits: vec![8, 7],
            methods: vec![Method::Ae, Method::Idft],
            dl_gaps_evaluated: vec![0, 1],
            rate: RateSweepConfig::default(),
            output_dir: output_dir.into(),
            master_seed: 1,
        }
    }

    /// Full-size profile (60k samples, 64 antennas, 160 subcarriers,
    /// d_z = 256). Generating and training at this scale takes serious
    /// compute; it exists for completeness.
    pub fn paper_profile(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario: ScenarioConfig::paper(),
            splits: SplitSizes {
                train: 48_000,
                val: 6_000,
                test: 6_000,
            },
            snr_db: vec![10.0, 0.0],
            train: TrainConfig::default(),
            codeword_dim: 256,
            quantizer_bits: vec![8, 7],
            methods: vec![Method::Ae, Method::Idft],
            dl_gaps_evaluated: vec![0, 1],
            rate: RateSweepConfig::default(),
            output_dir: output_dir.into(),
            master_seed: 1,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(Error::io(path))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("snr_db must list at least one level".into()));
        }
        if self.codeword_dim == 0 {
            return Err(Error::Config("codeword_dim must be positive".into()));
        }
        for gap in &self.dl_gaps_evaluated {
            if *gap >= self.scenario.dl_gaps_hz.len() {
                return Err(Error::Config(format!(
                    "dl gap index {gap} out of range ({} gaps configured)",
                    self.scenario.dl_gaps_hz.len()
                )));
            }
        }
        for bits in &self.quantizer_bits {
            if !(1..=16).contains(bits) {
                return Err(Error::Config(format!("quantizer bits {bits} out of 1..=16")));
            }
        }
        Ok(())
    }

    /// Directory of one corruption level.
    pub fn snr_dir(&self, snr_db: f64) -> PathBuf {
        self.output_dir.join(format!("snr_{}", snr_label(snr_db)))
    }

    /// Delay taps the baseline keeps so its real-coefficient count matches
    /// the codeword budget: `k = max(1, d_z / (2 n_a))`.
    pub fn baseline_taps(&self) -> usize {
        (self.codeword_dim / (2 * self.scenario.n_antennas())).max(1)
    }

    fn train_seed(&self, snr_idx: usize) -> u64 {
        if self.train.seed != 0 {
            self.train.seed.wrapping_add(snr_idx as u64)
        } else {
            derive_seed(self.master_seed, crate::rng::stream::INIT, 7_000 + snr_idx as u64)
        }
    }

    fn freq_tag(&self, gap_idx: usize) -> FreqTag {
        FreqTag::Dl {
            gap_hz: self.scenario.dl_gaps_hz[gap_idx] as u64,
        }
    }
}

fn snr_label(snr_db: f64) -> String {
    let s = if snr_db == snr_db.trunc() {
        format!("{}", snr_db as i64)
    } else {
        format!("{snr_db}").replace('.', "p")
    };
    s.replace('-', "m")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

/// Outcome of `generate` for one corruption level.
#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub snr_db: f64,
    pub dir: PathBuf,
    /// True when matching files already existed and nothing was rewritten.
    pub skipped: bool,
}

/// Generate datasets for every configured corruption level. A level whose
/// files already match the config (scenario and headers) is left untouched,
/// so reruns are no-ops.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<GenerateReport>> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for snr_db in &cfg.snr_db {
        let dir = cfg.snr_dir(*snr_db);
        if datasets_match(cfg, &dir, *snr_db)? {
            reports.push(GenerateReport {
                snr_db: *snr_db,
                dir,
                skipped: true,
            });
            continue;
        }
        generate_dataset(&cfg.scenario, &cfg.splits, *snr_db, cfg.master_seed, &dir)?;
        reports.push(GenerateReport {
            snr_db: *snr_db,
            dir,
            skipped: false,
        });
    }
    Ok(reports)
}

fn datasets_match(cfg: &ExperimentConfig, dir: &Path, snr_db: f64) -> Result<bool> {
    let scenario_path = dir.join("scenario.json");
    if !scenario_path.exists() {
        return Ok(false);
    }
    let text = fs::read_to_string(&scenario_path).map_err(Error::io(&scenario_path))?;
    let existing: ScenarioConfig = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(_) => return Ok(false),
    };
    if existing != cfg.scenario {
        return Ok(false);
    }
    for (name, count) in [
        ("train.csids", cfg.splits.train),
        ("val.csids", cfg.splits.val),
        ("test.csids", cfg.splits.test),
    ] {
        let path = dir.join(name);
        if !path.exists() {
            return Ok(false);
        }
        let meta = match read_dataset_meta(&path) {
            Ok(m) => m,
            Err(_) => return Ok(false),
        };
        let expect_seed = {
            let split_idx = match name {
                "train.csids" => 0,
                "val.csids" => 1,
                _ => 2,
            };
            derive_seed(cfg.master_seed, crate::rng::stream::PATH_SET, 1000 + split_idx)
        };
        if meta.n_samples != count as u64
            || meta.snr_db != snr_db
            || meta.master_seed != expect_seed
            || meta.n_a as usize != cfg.scenario.n_antennas()
            || meta.n_c as usize != cfg.scenario.n_subcarriers
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of `train` for one corruption level.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub snr_db: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub diverged: Option<String>,
}

/// Train one autoencoder per corruption level on the noisy uplink split
/// only, and write best-validation checkpoints plus training logs.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<Vec<TrainReport>> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for (snr_idx, snr_db) in cfg.snr_db.iter().enumerate() {
        let dir = cfg.snr_dir(*snr_db);
        let train_ds = read_dataset(&dir.join("train.csids"))?;
        let val_ds = read_dataset(&dir.join("val.csids"))?;
        let spec = AutoencoderSpec::for_dims(
            cfg.scenario.n_antennas(),
            cfg.scenario.n_subcarriers,
            cfg.codeword_dim,
        )?;

        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = cfg.train_seed(snr_idx);
        let initial = match resume {
            Some(path) => {
                let ckpt = load_checkpoint(path)?;
                if ckpt.spec != spec {
                    return Err(Error::CheckpointMismatch(
                        "resume checkpoint was built for a different architecture".into(),
                    ));
                }
                ckpt.state
            }
            None => AutoencoderState::init(&spec, train_cfg.seed),
        };

        let train_view = train_ds.ul_noisy_split();
        let val_view = val_ds.ul_noisy_split();
        let outcome = train_from(&spec, initial, &train_view, &val_view, &train_cfg)?;

        let checkpoint_path = dir.join("model.ckpt");
        let log_path = dir.join("training_log.csv");
        save_checkpoint(
            &checkpoint_path,
            &Checkpoint {
                spec,
                state: outcome.state.clone(),
                meta: CheckpointMeta {
                    trained_on: UL_ONLY_PROVENANCE.to_string(),
                    snr_db: *snr_db,
                    train_seed: train_cfg.seed,
                    best_epoch: outcome.best_epoch,
                },
            },
        )?;
        crate::nn::write_training_log(&log_path, &outcome.log)?;
        if let Some(reason) = &outcome.diverged {
            return Err(Error::Diverged(format!(
                "snr {snr_db} dB: {reason} (last finite checkpoint written to {})",
                checkpoint_path.display()
            )));
        }
        reports.push(TrainReport {
            snr_db: *snr_db,
            checkpoint_path,
            log_path,
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            epochs_run: outcome.log.len(),
            diverged: outcome.diverged,
        });
    }
    Ok(reports)
}

/// Complex view of one stored matrix in f64 for metric computation.
fn to_c64(m: &Array2<Complex32>) -> Array2<Complex64> {
    m.mapv(|v| Complex64::new(v.re as f64, v.im as f64))
}

fn tensor_rows_to_c64(t: &Array4<f32>) -> Vec<Array2<Complex64>> {
    let (n, h, w, _) = t.dim();
    (0..n)
        .map(|i| {
            Array2::from_shape_fn((h, w), |(a, c)| {
                Complex64::new(t[(i, a, c, 0)] as f64, t[(i, a, c, 1)] as f64)
            })
        })
        .collect()
}

/// AE reconstructions of every sample at carrier `freq_idx`, in inference
/// batches.
fn ae_reconstructions(
    dep: &Deployment,
    ds: &Dataset,
    freq_idx: usize,
    bits: Option<u8>,
) -> Result<Vec<Array2<Complex64>>> {
    let mats: Vec<&Array2<Complex32>> = ds.samples.iter().map(|s| &s.y[freq_idx]).collect();
    let stacked = crate::nn::stack_complex_batch(&mats);
    let mut out = Vec::with_capacity(ds.len());
    for chunk_start in (0..ds.len()).step_by(64) {
        let end = (chunk_start + 64).min(ds.len());
        let chunk = stacked
            .slice(ndarray::s![chunk_start..end, .., .., ..])
            .to_owned();
        let recon = dep.reconstruct_batch(&chunk, bits)?;
        out.extend(tensor_rows_to_c64(&recon));
    }
    Ok(out)
}

fn idft_reconstructions(ds: &Dataset, freq_idx: usize, taps: usize) -> Vec<Array2<Complex64>> {
    ds.samples
        .iter()
        .map(|s| idft_reconstruct(&idft_compress(&to_c64(&s.y[freq_idx]), taps)))
        .collect()
}

fn report_for(
    method: &str,
    freq_tag: String,
    snr_db: f64,
    bits: Option<u8>,
    estimates: &[Array2<Complex64>],
    truth: &[Array2<Complex64>],
) -> Result<MetricReport> {
    let mut nmse_v = Vec::with_capacity(truth.len());
    let mut rho_v = Vec::with_capacity(truth.len());
    for (est, h) in estimates.iter().zip(truth.iter()) {
        nmse_v.push(nmse(est, h)?);
        rho_v.push(cosine_similarity(est, h).0);
    }
    Ok(MetricReport {
        method: method.to_string(),
        freq_tag,
        snr_db,
        quantizer_bits: bits,
        nmse: nmse_v,
        rho: rho_v,
    })
}

/// Outcome of `evaluate` for one corruption level.
#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub snr_db: f64,
    pub eval_dir: PathBuf,
    pub reports: Vec<MetricReport>,
    /// Provenance tag of the checkpoint used for the AE rows, if any.
    pub checkpoint_provenance: Option<String>,
}

/// Evaluate every configured method/carrier/quantizer combination on the
/// test split and emit CSVs, CDFs, box statistics and plots.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<Vec<EvaluateReport>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for snr_db in &cfg.snr_db {
        let dir = cfg.snr_dir(*snr_db);
        let test_ds = read_dataset(&dir.join("test.csids"))?;
        let eval_dir = dir.join("eval");
        fs::create_dir_all(&eval_dir).map_err(Error::io(&eval_dir))?;

        let deployment = if cfg.methods.contains(&Method::Ae) {
            let path = checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.join("model.ckpt"));
            let ckpt = load_checkpoint(&path)?;
            Some(Deployment::from_checkpoint(&ckpt)?)
        } else {
            None
        };
        let provenance = deployment
            .as_ref()
            .map(|_| UL_ONLY_PROVENANCE.to_string());

        // Carriers under evaluation: uplink as the reference, then the
        // configured downlink gaps.
        let mut carriers = vec![(0usize, FreqTag::Ul)];
        carriers.extend(
            cfg.dl_gaps_evaluated
                .iter()
                .map(|g| (g + 1, cfg.freq_tag(*g))),
        );

        let mut reports = Vec::new();
        for (freq_idx, tag) in &carriers {
            let truth: Vec<Array2<Complex64>> = test_ds
                .samples
                .iter()
                .map(|s| to_c64(&s.h[*freq_idx]))
                .collect();
            for method in &cfg.methods {
                match method {
                    Method::Ae => {
                        let dep = deployment.as_ref().expect("deployment loaded above");
                        let mut variants: Vec<Option<u8>> = vec![None];
                        variants.extend(cfg.quantizer_bits.iter().map(|b| Some(*b)));
                        for bits in variants {
                            let est = ae_reconstructions(dep, &test_ds, *freq_idx, bits)?;
                            reports.push(report_for(
                                "AE",
                                tag.to_string(),
                                *snr_db,
                                bits,
                                &est,
                                &truth,
                            )?);
                        }
                    }
                    Method::Idft => {
                        let est = idft_reconstructions(&test_ds, *freq_idx, cfg.baseline_taps());
                        reports.push(report_for(
                            "IDFT",
                            tag.to_string(),
                            *snr_db,
                            None,
                            &est,
                            &truth,
                        )?);
                    }
                }
            }
        }

        write_eval_outputs(&eval_dir, &reports, provenance.as_deref())?;
        out.push(EvaluateReport {
            snr_db: *snr_db,
            eval_dir,
            reports,
            checkpoint_provenance: provenance,
        });
    }
    Ok(out)
}

fn csv_bits(bits: Option<u8>) -> String {
    match bits {
        Some(b) => b.to_string(),
        None => String::new(),
    }
}

fn write_eval_outputs(
    eval_dir: &Path,
    reports: &[MetricReport],
    provenance: Option<&str>,
) -> Result<()> {
    // Aggregate summary, one row per report.
    let mut summary = String::from(
        "method,freq,quantizer_bits,snr_db,n_samples,trained_on,mean_nmse,median_nmse,nmse_q1,\
         nmse_q3,nmse_whisker_lo,nmse_whisker_hi,mean_rho,median_rho,rho_q1,rho_q3,\
         rho_whisker_lo,rho_whisker_hi\n",
    );
    for r in reports {
        let nb = r.nmse_box();
        let rb = r.rho_box();
        let trained_on = match r.method.as_str() {
            "AE" => provenance.unwrap_or("unknown"),
            _ => "none",
        };
        summary.push_str(&format!(
            "{},{},{},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.method,
            r.freq_tag,
            csv_bits(r.quantizer_bits),
            r.snr_db,
            r.nmse.len(),
            trained_on,
            r.mean_nmse(),
            nb.median,
            nb.q1,
            nb.q3,
            nb.whisker_lo,
            nb.whisker_hi,
            r.mean_rho(),
            rb.median,
            rb.q1,
            rb.q3,
            rb.whisker_lo,
            rb.whisker_hi,
        ));
    }
    write_atomic(&eval_dir.join("summary.csv"), summary.as_bytes())?;

    // Per-sample values.
    let mut per_sample = String::from("method,freq,quantizer_bits,sample,nmse,rho\n");
    for r in reports {
        for (i, (e, rho)) in r.nmse.iter().zip(r.rho.iter()).enumerate() {
            per_sample.push_str(&format!(
                "{},{},{},{},{:.9e},{:.9e}\n",
                r.method,
                r.freq_tag,
                csv_bits(r.quantizer_bits),
                i,
                e,
                rho
            ));
        }
    }
    write_atomic(&eval_dir.join("per_sample.csv"), per_sample.as_bytes())?;

    // CDFs per report, for both metrics, plus combined plots.
    let mut nmse_series = Vec::new();
    let mut rho_series = Vec::new();
    for r in reports {
        let label = format!("{} {}", r.label(), r.freq_tag);
        let file_stem = label.replace([' ', '/'], "_");
        let nmse_cdf = empirical_cdf(&r.nmse);
        let rho_cdf = empirical_cdf(&r.rho);
        for (name, cdf) in [("cdf_nmse", &nmse_cdf), ("cdf_rho", &rho_cdf)] {
            let mut text = String::from("value,fraction\n");
            for (v, f) in cdf {
                text.push_str(&format!("{v:.9e},{f:.9e}\n"));
            }
            write_atomic(
                &eval_dir.join(format!("{name}__{file_stem}.csv")),
                text.as_bytes(),
            )?;
        }
        nmse_series.push(plot::Series {
            label: label.clone(),
            points: nmse_cdf,
        });
        rho_series.push(plot::Series {
            label,
            points: rho_cdf,
        });
    }
    write_atomic(
        &eval_dir.join("cdf_nmse.svg"),
        plot::line_chart("Empirical CDF of NMSE", "NMSE", "CDF", &nmse_series).as_bytes(),
    )?;
    write_atomic(
        &eval_dir.join("cdf_rho.svg"),
        plot::line_chart(
            "Empirical CDF of cosine similarity",
            "cosine similarity",
            "CDF",
            &rho_series,
        )
        .as_bytes(),
    )?;

    // Box statistics over NMSE and (1 - rho), as in the reference figures.
    let mut box_csv = String::from(
        "label,metric,median,q1,q3,whisker_lo,whisker_hi\n",
    );
    let mut box_groups: Vec<(String, BoxStats)> = Vec::new();
    for r in reports {
        let label = format!("{} {}", r.label(), r.freq_tag);
        let one_minus_rho: Vec<f64> = r.rho.iter().map(|v| 1.0 - v).collect();
        for (metric, stats) in [
            ("nmse", r.nmse_box()),
            ("one_minus_rho", box_stats(&one_minus_rho)),
        ] {
            box_csv.push_str(&format!(
                "{label},{metric},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                stats.median, stats.q1, stats.q3, stats.whisker_lo, stats.whisker_hi
            ));
            box_groups.push((format!("{label} {metric}"), stats));
        }
    }
    write_atomic(&eval_dir.join("box_stats.csv"), box_csv.as_bytes())?;
    write_atomic(
        &eval_dir.join("box_stats.svg"),
        plot::box_chart("NMSE and 1-rho by method", &box_groups).as_bytes(),
    )?;
    Ok(())
}

/// Outcome of `rate` for one corruption level.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub snr_db: f64,
    pub rate_dir: PathBuf,
    pub curves: Vec<RateCurve>,
    pub redraws: usize,
}

/// Zero-forcing per-user rate sweep over the configured power grid for
/// perfect CSI, the autoencoder (plus quantized variants) and the IDFT
/// baseline, per evaluated downlink gap.
pub fn cmd_rate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<RateReport>> {
    cfg.validate()?;
    let grid = cfg.rate.grid();
    let mut out = Vec::new();
    for (snr_idx, snr_db) in cfg.snr_db.iter().enumerate() {
        let dir = cfg.snr_dir(*snr_db);
        let test_ds = read_dataset(&dir.join("test.csids"))?;
        let rate_dir = dir.join("rate");
        fs::create_dir_all(&rate_dir).map_err(Error::io(&rate_dir))?;

        let deployment = if cfg.methods.contains(&Method::Ae) {
            let path = checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.join("model.ckpt"));
            let ckpt = load_checkpoint(&path)?;
            Some(Deployment::from_checkpoint(&ckpt)?)
        } else {
            None
        };

        let opts = RateOptions {
            n_users: cfg.rate.n_users,
            n_draws: cfg.rate.n_draws,
            // One draw schedule per corruption level, shared by every
            // method so the comparison is paired.
            seed: derive_seed(cfg.master_seed, crate::rng::stream::RATE_DRAWS, snr_idx as u64),
        };

        let mut curves = Vec::new();
        let mut total_redraws = 0usize;
        for gap_idx in &cfg.dl_gaps_evaluated {
            let freq_idx = gap_idx + 1;
            let tag = cfg.freq_tag(*gap_idx).to_string();
            let truth: Vec<Array2<Complex64>> = test_ds
                .samples
                .iter()
                .map(|s| to_c64(&s.h[freq_idx]))
                .collect();

            let mut push_curve = |label: &str,
                                  bits: Option<u8>,
                                  estimates: &[Array2<Complex64>],
                                  curves: &mut Vec<RateCurve>|
             -> Result<usize> {
                let (rates, redraws) = zf_per_user_rate(&truth, estimates, &grid, &opts)?;
                curves.push(RateCurve {
                    method: label.to_string(),
                    freq_tag: tag.clone(),
                    quantizer_bits: bits,
                    n_users: opts.n_users,
                    tx_power_dbs: grid.clone(),
                    per_user_rate_bpcu: rates,
                });
                Ok(redraws)
            };

            total_redraws += push_curve("Perfect CSI", None, &truth, &mut curves)?;
            for method in &cfg.methods {
                match method {
                    Method::Ae => {
                        let dep = deployment.as_ref().expect("deployment loaded above");
                        let mut variants: Vec<Option<u8>> = vec![None];
                        variants.extend(cfg.quantizer_bits.iter().map(|b| Some(*b)));
                        for bits in variants {
                            let est = ae_reconstructions(dep, &test_ds, freq_idx, bits)?;
                            let label = match bits {
                                None => "AE".to_string(),
                                Some(b) => format!("AE-{b}bit"),
                            };
                            total_redraws += push_curve(&label, bits, &est, &mut curves)?;
                        }
                    }
                    Method::Idft => {
                        let est = idft_reconstructions(&test_ds, freq_idx, cfg.baseline_taps());
                        total_redraws += push_curve("IDFT", None, &est, &mut curves)?;
                    }
                }
            }
        }

        write_rate_outputs(&rate_dir, &curves)?;
        out.push(RateReport {
            snr_db: *snr_db,
            rate_dir,
            curves,
            redraws: total_redraws,
        });
    }
    Ok(out)
}

fn write_rate_outputs(rate_dir: &Path, curves: &[RateCurve]) -> Result<()> {
    let mut combined = String::from("method,freq,quantizer_bits,n_users,tx_power_db,rate_bpcu\n");
    let mut series = Vec::new();
    for curve in curves {
        let mut single = String::from("tx_power_db,rate_bpcu\n");
        for (p, r) in curve.tx_power_dbs.iter().zip(curve.per_user_rate_bpcu.iter()) {
            combined.push_str(&format!(
                "{},{},{},{},{},{:.9e}\n",
                curve.method,
                curve.freq_tag,
                csv_bits(curve.quantizer_bits),
                curve.n_users,
                p,
                r
            ));
            single.push_str(&format!("{p},{r:.9e}\n"));
        }
        let stem = format!("rate__{}__{}", curve.method.replace(' ', "_"), curve.freq_tag);
        write_atomic(&rate_dir.join(format!("{stem}.csv")), single.as_bytes())?;
        series.push(plot::Series {
            label: format!("{} {}", curve.method, curve.freq_tag),
            points: curve
                .tx_power_dbs
                .iter()
                .copied()
                .zip(curve.per_user_rate_bpcu.iter().copied())
                .collect(),
        });
    }
    write_atomic(&rate_dir.join("rates.csv"), combined.as_bytes())?;
    write_atomic(
        &rate_dir.join("rates.svg"),
        plot::line_chart(
            "Zero-forcing per-user rate",
            "average TX power [dB]",
            "per-user rate [bpcu]",
            &series,
        )
        .as_bytes(),
    )?;
    Ok(())
}

/// Mean NMSE of one labeled report out of an evaluation run; a convenience
/// for tests and examples.
pub fn find_report<'a>(
    reports: &'a [MetricReport],
    method: &str,
    freq_tag: &str,
    bits: Option<u8>,
) -> Option<&'a MetricReport> {
    reports
        .iter()
        .find(|r| r.method == method && r.freq_tag == freq_tag && r.quantizer_bits == bits)
}

/// The uplink NMSE a noisy observation itself achieves, `1 / snr_linear`;
/// the denoising floor the autoencoder must beat.
pub fn noisy_input_nmse(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

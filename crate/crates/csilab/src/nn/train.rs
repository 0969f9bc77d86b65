//! Adam training of the autoencoder on noisy uplink data.
//!
//! The trainer only accepts the uplink view of a dataset
//! ([`UlNoisySplit`]), so downlink matrices cannot leak into training by
//! construction. The target of the least-squares loss is the noisy input
//! itself; denoising comes from the bottleneck.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array4, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::UlNoisySplit;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

use super::model::{
    backward, forward_infer, forward_train, init_net, reconstruction_loss,
    reconstruction_loss_grad, Activations, NetState,
};
use super::layers::Elem;
use super::AutoencoderSpec;

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub n_epochs: usize,
    /// Stop after this many epochs without validation improvement
    /// (0 disables early stopping).
    pub patience: usize,
    pub seed: u64,
    /// Redraw the training noise every epoch instead of reusing the stored
    /// realizations.
    pub fresh_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            n_epochs: 500,
            patience: 20,
            seed: 0,
            fresh_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trained weights of both halves plus the optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderState {
    pub encoder: NetState<f32>,
    pub decoder: NetState<f32>,
    pub step: u64,
}

impl AutoencoderState {
    pub fn init(spec: &AutoencoderSpec, seed: u64) -> Self {
        Self {
            encoder: init_net(&spec.encoder, seed),
            decoder: init_net(&spec.decoder, seed.wrapping_add(1)),
            step: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the best-validation epoch.
    pub state: AutoencoderState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Set when the loss went non-finite; `state` then holds the last
    /// finite weights.
    pub diverged: Option<String>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    epsilon: F,
    t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: F::from_f64(cfg.learning_rate).unwrap(),
            beta1: F::from_f64(cfg.beta1).unwrap(),
            beta2: F::from_f64(cfg.beta2).unwrap(),
            epsilon: F::from_f64(cfg.epsilon).unwrap(),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. `params` and `grads` must stay aligned call to
    /// call; moment buffers are allocated on first use.
    pub fn step(&mut self, params: &mut [ArrayViewMutD<'_, F>], grads: &[ArrayViewD<'_, F>]) {
        assert_eq!(params.len(), grads.len(), "param/grad slot mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, g, m, v| {
                    *m = self.beta1 * *m + (one - self.beta1) * *g;
                    *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                });
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

fn gather_batch(tensors: &Array4<f32>, idxs: &[usize]) -> Array4<f32> {
    let (_, h, w, c) = tensors.dim();
    let mut batch = Array4::zeros((idxs.len(), h, w, c));
    for (row, idx) in idxs.iter().enumerate() {
        batch
            .index_axis_mut(Axis(0), row)
            .assign(&tensors.index_axis(Axis(0), *idx));
    }
    batch
}

fn mean_infer_loss(
    spec: &AutoencoderSpec,
    state: &AutoencoderState,
    split: &UlNoisySplit,
    batch_size: usize,
) -> Result<f64> {
    let n = split.len();
    let mut acc = 0.0;
    for start in (0..n).step_by(batch_size) {
        let idxs: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let batch = gather_batch(&split.noisy, &idxs);
        let z = forward_infer(&spec.encoder, &state.encoder, Activations::Spatial(batch.clone()))?;
        let y = forward_infer(&spec.decoder, &state.decoder, z)?.into_spatial();
        acc += reconstruction_loss(&y, &batch) as f64 * idxs.len() as f64;
    }
    Ok(acc / n as f64)
}

/// Train from a fresh fan-in-uniform initialization.
pub fn train(
    spec: &AutoencoderSpec,
    train_split: &UlNoisySplit,
    val_split: &UlNoisySplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_from(
        spec,
        AutoencoderState::init(spec, cfg.seed),
        train_split,
        val_split,
        cfg,
    )
}

/// Continue training from an existing state (the step counter keeps
/// counting; optimizer moments start fresh).
pub fn train_from(
    spec: &AutoencoderSpec,
    initial: AutoencoderState,
    train_split: &UlNoisySplit,
    val_split: &UlNoisySplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::Config("training and validation splits must be nonempty".into()));
    }
    let started = Instant::now();
    let mut state = initial;
    let mut adam = Adam::<f32>::new(cfg);
    let base_step = state.step;

    let mut best_state = state.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut last_finite = state.clone();
    let mut log = Vec::new();
    let mut diverged = None;

    let n = train_split.len();
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for epoch in 0..cfg.n_epochs {
        let mut shuffle_rng = rng_from(cfg.seed, stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        // Optionally redraw the corruption for this epoch.
        let fresh: Option<Array4<f32>> = cfg.fresh_noise.then(|| {
            let mut rng = rng_from(cfg.seed, stream::FRESH_NOISE, epoch as u64);
            let scale = (train_split.sigma2 / 2.0).sqrt() as f32;
            let mut noisy = train_split.clean.clone();
            noisy.mapv_inplace(|v| v + scale * rng.sample::<f32, _>(StandardNormal));
            noisy
        });
        let inputs = fresh.as_ref().unwrap_or(&train_split.noisy);

        let mut loss_acc = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_batch(inputs, chunk);
            let (z, enc_caches) =
                forward_train(&spec.encoder, &mut state.encoder, Activations::Spatial(batch.clone()))?;
            let (y, dec_caches) = forward_train(&spec.decoder, &mut state.decoder, z)?;
            let y = y.into_spatial();
            let loss = reconstruction_loss(&y, &batch) as f64;
            if !loss.is_finite() {
                diverged = Some(format!(
                    "non-finite loss at epoch {epoch}, step {}",
                    adam.steps_taken()
                ));
                state = last_finite.clone();
                break 'epochs;
            }
            loss_acc += loss * chunk.len() as f64;

            let d_loss = reconstruction_loss_grad(&y, &batch);
            let (dz, dec_grads) =
                backward(&spec.decoder, &state.decoder, &dec_caches, Activations::Spatial(d_loss))?;
            let (_, enc_grads) = backward(&spec.encoder, &state.encoder, &enc_caches, dz)?;

            let mut params = state.encoder.trainable_views_mut();
            params.extend(state.decoder.trainable_views_mut());
            let grads: Vec<ArrayViewD<'_, f32>> = enc_grads
                .iter()
                .chain(dec_grads.iter())
                .flat_map(|g| g.views())
                .collect();
            adam.step(&mut params, &grads);
            drop(params);
            state.step = base_step + adam.steps_taken();
        }
        let train_loss = loss_acc / n as f64;
        let val_loss = mean_infer_loss(spec, &state, val_split, cfg.batch_size)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if val_loss.is_finite() {
            last_finite = state.clone();
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_state = state.clone();
        } else if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let state = if diverged.is_some() {
        state
    } else if best_val.is_finite() {
        best_state
    } else {
        state
    };
    Ok(TrainOutcome {
        state,
        log,
        best_epoch,
        best_val_loss: best_val,
        diverged,
    })
}

/// Write the training log as CSV with columns
/// `epoch,train_loss,val_loss,wall_time_s`.
pub fn write_training_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,wall_time_s\n");
    for rec in log {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.3}\n",
            rec.epoch, rec.train_loss, rec.val_loss, rec.wall_time_s
        ));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::UlNoisySplit;
    use ndarray::Array;

    /// A synthetic low-rank "channel" split: random rank-structured tensors
    /// plus noise, enough for the autoencoder to find structure.
    fn synthetic_split(n: usize, seed: u64) -> UlNoisySplit {
        let mut rng = rng_from(seed, stream::FRESH_NOISE, 99);
        let clean = Array::from_shape_fn((n, 8, 8, 2), |(i, a, c, k)| {
            let t = (i as f32 * 0.37 + k as f32).sin();
            ((a as f32 * 0.7 + t).sin() * (c as f32 * 0.5 - t).cos()) as f32
        });
        let mut noisy = clean.clone();
        noisy.mapv_inplace(|v| v + 0.3 * rng.sample::<f32, _>(StandardNormal));
        UlNoisySplit {
            noisy,
            clean,
            sigma2: 0.09,
        }
    }

    fn quick_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            n_epochs: epochs,
            patience: 0,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Log without wall-clock times, for run-to-run comparisons.
    fn losses(log: &[EpochRecord]) -> Vec<(usize, f64, f64)> {
        log.iter().map(|r| (r.epoch, r.train_loss, r.val_loss)).collect()
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let spec = AutoencoderSpec::for_dims(8, 8, 4).unwrap();
        let split = synthetic_split(32, 1);
        let out = train(&spec, &split, &split, &quick_cfg(0, 7)).unwrap();
        assert_eq!(out.state, AutoencoderState::init(&spec, 7));
        assert!(out.log.is_empty());
        assert!(out.diverged.is_none());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = AutoencoderSpec::for_dims(8, 8, 8).unwrap();
        let train_split = synthetic_split(128, 2);
        let val_split = synthetic_split(32, 3);
        let cfg = quick_cfg(12, 5);
        let a = train(&spec, &train_split, &val_split, &cfg).unwrap();
        let b = train(&spec, &train_split, &val_split, &cfg).unwrap();
        assert!(a.diverged.is_none());
        assert_eq!(losses(&a.log), losses(&b.log), "fixed seed must reproduce the trajectory");
        assert_eq!(a.state, b.state);
        let first = a.log.first().unwrap().val_loss;
        let last = a.log.last().unwrap().val_loss;
        assert!(
            last < first,
            "validation loss should improve: {first} -> {last}"
        );
        // Smoothed training loss is non-increasing front to back.
        let half = a.log.len() / 2;
        let early: f64 =
            a.log[..half].iter().map(|r| r.train_loss).sum::<f64>() / half as f64;
        let late: f64 = a.log[half..].iter().map(|r| r.train_loss).sum::<f64>()
            / (a.log.len() - half) as f64;
        assert!(late < early);
        assert_eq!(a.state.step, 12 * 8);
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let spec = AutoencoderSpec::for_dims(8, 8, 4).unwrap();
        let split = synthetic_split(32, 4);
        let mut cfg = quick_cfg(10, 6);
        cfg.learning_rate = 1e18;
        let out = train(&spec, &split, &split, &cfg).unwrap();
        assert!(out.diverged.is_some(), "1e18 learning rate must blow up");
        // The returned state is still finite.
        for p in out.state.encoder.layers.iter() {
            if let super::super::model::LayerParams::Conv { weight, .. } = p {
                assert!(weight.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn resume_continues_the_step_counter() {
        let spec = AutoencoderSpec::for_dims(8, 8, 4).unwrap();
        let split = synthetic_split(32, 8);
        let cfg = quick_cfg(2, 9);
        let first = train(&spec, &split, &split, &cfg).unwrap();
        let steps_after_first = first.state.step;
        assert!(steps_after_first > 0);
        let second = train_from(&spec, first.state, &split, &split, &cfg).unwrap();
        assert_eq!(second.state.step, steps_after_first + steps_after_first);
    }

    #[test]
    fn fresh_noise_changes_the_trajectory_but_stays_deterministic() {
        let spec = AutoencoderSpec::for_dims(8, 8, 4).unwrap();
        let split = synthetic_split(64, 10);
        let mut cfg = quick_cfg(3, 11);
        let fixed = train(&spec, &split, &split, &cfg).unwrap();
        cfg.fresh_noise = true;
        let fresh_a = train(&spec, &split, &split, &cfg).unwrap();
        let fresh_b = train(&spec, &split, &split, &cfg).unwrap();
        assert_eq!(losses(&fresh_a.log), losses(&fresh_b.log));
        assert_ne!(losses(&fixed.log), losses(&fresh_a.log));
    }

    #[test]
    fn adam_matches_reference_single_step() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = Adam::<f64>::new(&cfg);
        let mut p = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[2]), 1.0f64);
        let g = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[2]), 0.5f64);
        adam.step(&mut [p.view_mut()], &[g.view()]);
        // Bias-corrected first step moves by lr * g / (|g| + eps).
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-7);
        assert!((p[[0]] - expect).abs() < 1e-12, "{} vs {expect}", p[[0]]);
    }
}

//! ADAM training of the unrolled network.
//!
//! Each step draws a mini-batch, runs the straight-through forward/backward
//! pass per sample (data-parallel), and reduces sample gradients in index
//! order so the result is bit-identical for any thread count. Per-sample
//! Gumbel noise seeds are drawn serially from the shuffling stream before
//! the parallel section for the same reason. A fixed seed therefore pins
//! the trained weights exactly.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::unroll::backward::{backward, loss};
use crate::unroll::forward::{forward, SelectionMode};
use crate::unroll::weights::NetworkWeights;
use crate::unroll::{sample_gumbel_noise, NetConfig};

// ===========================================================================
// Data
// ===========================================================================

/// One training pair: a multiscale depth stack and its reference depth.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// `(scales, rows, cols)` stack.
    pub stack: Array3<f64>,
    /// `(rows, cols)` reference depth.
    pub truth: Array2<f64>,
}

impl TrainSample {
    pub fn new(stack: Array3<f64>, truth: Array2<f64>) -> Result<Self> {
        let (_, rows, cols) = stack.dim();
        if truth.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: "training sample",
                expected: format!("{rows}x{cols}"),
                actual: format!("{:?}", truth.dim()),
            });
        }
        Ok(Self { stack, truth })
    }
}

/// Cuts aligned square patches out of a (stack, truth) pair. Patches start
/// at every `stride` step while a full window fits.
pub fn extract_patches(
    stack: &Array3<f64>,
    truth: &Array2<f64>,
    size: usize,
    stride: usize,
) -> Result<Vec<TrainSample>> {
    let (l, rows, cols) = stack.dim();
    if truth.dim() != (rows, cols) {
        return Err(Error::ShapeMismatch {
            context: "patch extraction",
            expected: format!("{rows}x{cols}"),
            actual: format!("{:?}", truth.dim()),
        });
    }
    if size == 0 || stride == 0 || size > rows || size > cols {
        return Err(Error::invalid(
            "patch size/stride",
            format!("size {size} stride {stride} against {rows}x{cols}"),
        ));
    }
    let mut out = Vec::new();
    let mut r0 = 0;
    while r0 + size <= rows {
        let mut c0 = 0;
        while c0 + size <= cols {
            let stack_patch = stack
                .slice(ndarray::s![0..l, r0..r0 + size, c0..c0 + size])
                .to_owned();
            let truth_patch = truth
                .slice(ndarray::s![r0..r0 + size, c0..c0 + size])
                .to_owned();
            out.push(TrainSample {
                stack: stack_patch,
                truth: truth_patch,
            });
            c0 += stride;
        }
        r0 += stride;
    }
    Ok(out)
}

// ===========================================================================
// Configuration
// ===========================================================================

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// 1-based epoch index from which the rate is exactly halved.
    pub lr_halve_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seed for shuffling and per-sample noise.
    pub seed: u64,
    /// Size of a private thread pool; `None` uses the global pool.
    pub threads: Option<usize>,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(
        net: NetConfig,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            net,
            epochs,
            batch_size,
            lr,
            lr_halve_epoch: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed,
            threads: None,
            shuffle: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(
                "lr",
                format!("must be finite and >= 0, got {}", self.lr),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch index: the initial rate, exactly
/// halved from `halve_epoch` onward.
pub fn effective_lr(lr: f64, halve_epoch: usize, epoch: usize) -> f64 {
    if epoch >= halve_epoch {
        lr * 0.5
    } else {
        lr
    }
}

// ===========================================================================
// ADAM
// ===========================================================================

/// One ADAM update with bias correction; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

// ===========================================================================
// Training loop
// ===========================================================================

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub weights: NetworkWeights,
    /// Mean per-sample loss of each epoch, measured before that epoch's
    /// updates are applied to the samples in question.
    pub epoch_losses: Vec<f64>,
    /// Total optimizer steps taken.
    pub steps: usize,
}

/// Trains freshly initialized weights on the given samples.
pub fn train(samples: &[TrainSample], config: &TrainConfig) -> Result<TrainReport> {
    let weights = NetworkWeights::init(&config.net)?;
    train_from(weights, samples, config)
}

/// Continues training from existing weights.
pub fn train_from(
    mut weights: NetworkWeights,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("samples", "training set is empty"));
    }
    for (i, s) in samples.iter().enumerate() {
        let (l, rows, cols) = s.stack.dim();
        if l != config.net.scales || s.truth.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: "training sample",
                expected: format!("{} scales, truth matching stack", config.net.scales),
                actual: format!(
                    "sample {i}: stack {:?}, truth {:?}",
                    s.stack.dim(),
                    s.truth.dim()
                ),
            });
        }
    }

    let pool = match config.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid("threads", e.to_string()))?,
        ),
        None => None,
    };

    let n = weights.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = effective_lr(config.lr, config.lr_halve_epoch, epoch + 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            // Noise seeds come from the serial stream, independent of how
            // the parallel section schedules the samples.
            let jobs: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.random::<u64>())).collect();
            let weights_ref = &weights;
            let net = &config.net;
            let compute = || -> Result<Vec<(f64, Vec<f64>)>> {
                jobs.par_iter()
                    .map(|&(i, noise_seed)| {
                        let sample = &samples[i];
                        let (l, rows, cols) = sample.stack.dim();
                        let noise = sample_gumbel_noise(net.stages, l, rows, cols, noise_seed);
                        let run = forward(
                            &sample.stack,
                            weights_ref,
                            net,
                            SelectionMode::StraightThrough,
                            Some(&noise),
                            true,
                        )?;
                        let sample_loss = loss(&run, &sample.truth)?;
                        let grads = backward(&run, weights_ref, net, &sample.truth, 1.0)?;
                        Ok((sample_loss, grads))
                    })
                    .collect()
            };
            let results = match &pool {
                Some(p) => p.install(compute),
                None => compute(),
            }?;

            // Ordered reduction: accumulate in batch order.
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; n];
            let mut batch_loss = 0.0;
            for (sample_loss, g) in &results {
                batch_loss += sample_loss;
                for (dst, src) in grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
            batch_loss *= scale;
            for g in &mut grad {
                *g *= scale;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch: epoch + 1,
                    batch: batch_idx,
                });
            }
            t += 1;
            adam_step(
                weights.data_mut(),
                &mut m,
                &mut v,
                &grad,
                lr,
                config.beta1,
                config.beta2,
                config.adam_eps,
                t,
            );
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / samples.len() as f64);
    }

    Ok(TrainReport {
        weights,
        epoch_losses,
        steps: t,
    })
}

// ===========================================================================
// Tests
// ===========================================================================

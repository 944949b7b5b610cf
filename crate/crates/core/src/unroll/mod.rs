//! Trainable unrolled attention network for multiscale depth fusion.
//!
//! The network mirrors the coordinate-descent fusion loop: each of `K`
//! stages extracts features from the current multiscale depth stack,
//! *squeezes* it to a single depth map by hard attention over scales
//! (the learned analogue of the weighted median), and — except in the last
//! stage — *expands* it back into a refined stack via per-scale convex
//! combinations (the learned analogue of the soft-thresholding step).
//! All convolutions are 3x3, bias-free, and channel-preserving.
//!
//! Submodules:
//!
//! * [`tensor`] — 3x3 convolution and activation kernels with hand-written
//!   reverse-mode backward passes;
//! * [`weights`] — flat parameter storage, named tensor layout, counting,
//!   initialization, and the `URW1` file format;
//! * [`forward`] — the staged forward pass with selection modes, the
//!   per-stage change diagnostic `delta`, and the uncertainty map `epsilon`;
//! * [`backward`] — the training loss and exact reverse-mode gradients;
//! * [`train`] — ADAM training with deterministic shuffling and reduction.

pub mod backward;
pub mod forward;
pub mod tensor;
pub mod train;
pub mod weights;

pub use backward::{backward, loss};
pub use forward::{forward, ForwardRun, SelectionMode, StageTrace, ALPHA_D, BETA_D};
pub use train::{extract_patches, train, TrainConfig, TrainReport, TrainSample};
pub use weights::{count_parameters, NetworkWeights};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

// ===========================================================================
// Configuration
// ===========================================================================

/// Coefficient multiplying the expansion logits before their two-way
/// softmax; fixed by design to sharpen the convex-combination weights.
pub const RHO: f64 = 2.0;

/// Architecture and nondeterminism knobs for the unrolled network.
#[derive(Debug, Clone)]
pub struct NetConfig {
    /// Number of stages `K` (the last stage has no expansion block).
    pub stages: usize,
    /// Number of scales `L`; equals the channel count of every feature map.
    pub scales: usize,
    /// Negative-branch slope of the leaky rectifier.
    pub leaky_slope: f64,
    /// Gumbel-softmax temperature used by the trainable selection modes.
    pub tau: f64,
    /// Seed for weight initialization and noise streams.
    pub seed: u64,
}

impl NetConfig {
    pub fn new(stages: usize, scales: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            stages,
            scales,
            leaky_slope: 0.2,
            tau: 1.0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return Err(Error::invalid("stages", "need at least 2 stages"));
        }
        if self.scales == 0 {
            return Err(Error::invalid("scales", "need at least 1 scale"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau", "temperature must be > 0"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::invalid("leaky_slope", "must be finite"));
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            scales: 12,
            leaky_slope: 0.2,
            tau: 1.0,
            seed: 0,
        }
    }
}

// ===========================================================================
// Gumbel noise
// ===========================================================================

/// Draws one `(scales, rows, cols)` field of standard Gumbel noise per
/// stage. Sampling order is fixed (stage-major, then channel/row/column),
/// so a seed pins the noise bit-exactly.
pub fn sample_gumbel_noise(
    stages: usize,
    scales: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Vec<Array3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..stages)
        .map(|_| {
            let mut field = Array3::zeros((scales, rows, cols));
            for v in field.iter_mut() {
                // Clamp away from 0 so the double logarithm stays finite.
                let u: f64 = rng.random::<f64>().max(1e-300);
                *v = -(-u.ln()).max(1e-300).ln();
            }
            field
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_rejects_degenerate_nets() {
        assert!(NetConfig::new(1, 12, 0).is_err());
        assert!(NetConfig::new(4, 0, 0).is_err());
        let mut cfg = NetConfig::new(4, 12, 0).unwrap();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_config_matches_reference_architecture() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.stages, 4);
        assert_eq!(cfg.scales, 12);
        assert_eq!(cfg.leaky_slope, 0.2);
        assert_eq!(cfg.tau, 1.0);
    }

    #[test]
    fn gumbel_noise_is_seeded_and_finite() {
        let a = sample_gumbel_noise(2, 3, 4, 5, 9);
        let b = sample_gumbel_noise(2, 3, 4, 5, 9);
        let c = sample_gumbel_noise(2, 3, 4, 5, 10);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].dim(), (3, 4, 5));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        assert_ne!(a[0], c[0]);
        assert!(a.iter().all(|f| f.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn gumbel_noise_matches_distribution_moments() {
        // Mean of a standard Gumbel is the Euler-Mascheroni constant
        // (~0.5772), variance pi^2/6. Check loosely on a large draw.
        let field = &sample_gumbel_noise(1, 1, 200, 200, 3)[0];
        let n = field.len() as f64;
        let mean = field.sum() / n;
        let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((mean - 0.5772).abs() < 0.02, "gumbel mean {mean}");
        assert!(
            (var - std::f64::consts::PI.powi(2) / 6.0).abs() < 0.05,
            "gumbel var {var}"
        );
    }
}

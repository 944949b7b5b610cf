//! Forward model for time-correlated single-photon counting.
//!
//! A pixel with normalized depth `d`, signal intensity `r`, and background
//! rate `b` produces in bin `t` of a `T`-bin histogram a Poisson count with
//! mean
//!
//! ```text
//! s_t = r * g(t - d*T) + b
//! ```
//!
//! where `g` is the instrument response function (IRF). IRF mass is splatted
//! onto integer bins by linear interpolation, so the per-pixel signal mass is
//! exactly `r` whenever the shifted window lies inside the histogram.
//!
//! Sampling is reproducible and order-independent: every pixel draws from its
//! own counter-based stream (ChaCha8, stream id = linear pixel index), seeded
//! by the scene seed. Within a pixel, bins are visited in order and each bin
//! draws its signal count first, then its background count.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{HistogramCube, Irf, Scene};

// ===========================================================================
// Photon budget
// ===========================================================================

/// Photon budget for a simulated acquisition.
///
/// `ppp` is the average number of photons per pixel (signal + background over
/// the full histogram); `sbr` is the ratio of total signal to total
/// background photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub ppp: f64,
    pub sbr: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(ppp: f64, sbr: f64, seed: u64) -> Result<Self> {
        if !(ppp > 0.0) || !ppp.is_finite() {
            return Err(Error::invalid("ppp", format!("must be > 0, got {ppp}")));
        }
        if !(sbr > 0.0) || !sbr.is_finite() {
            return Err(Error::invalid("sbr", format!("must be > 0, got {sbr}")));
        }
        Ok(Self { ppp, sbr, seed })
    }
}

// ===========================================================================
// Instrument response
// ===========================================================================

/// Builds a truncated discrete Gaussian IRF with standard deviation `sigma`
/// (in bins), sampled at integer offsets over `±max(1, ceil(4 sigma))` and
/// normalized to unit mass.
///
/// Fails if the window does not fit into `bins` histogram bins.
pub fn make_gaussian_irf(bins: usize, sigma: f64) -> Result<Irf> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    let half = ((4.0 * sigma).ceil() as usize).max(1);
    let len = 2 * half + 1;
    if len > bins {
        return Err(Error::IrfWindow { window: len, bins });
    }
    let mut taps: Vec<f64> = (0..len)
        .map(|j| {
            let o = j as f64 - half as f64;
            (-o * o / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Irf::new(taps, half)?.with_sigma(sigma)
}

// ===========================================================================
// PPP/SBR scaling
// ===========================================================================

/// Scales a non-negative reflectivity pattern so that a scene built from it
/// hits the requested photon budget exactly:
///
/// * mean of the returned signal intensities = `ppp * sbr / (1 + sbr)`,
/// * returned per-bin background `b` satisfies `b * bins = ppp / (1 + sbr)`.
pub fn rates_from_ppp_sbr(
    pattern: &Array2<f64>,
    bins: usize,
    spec: &NoiseSpec,
) -> Result<(Array2<f64>, f64)> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }
    if pattern.is_empty() {
        return Err(Error::invalid("pattern", "must be non-empty"));
    }
    if let Some(&bad) = pattern.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(
            "pattern",
            format!("must be finite and >= 0, got {bad}"),
        ));
    }
    let mean: f64 = pattern.sum() / pattern.len() as f64;
    if mean <= 0.0 {
        return Err(Error::invalid("pattern", "must have positive mean"));
    }
    let target_mean_r = spec.ppp * spec.sbr / (1.0 + spec.sbr);
    let scale = target_mean_r / mean;
    let reflectivity = pattern.mapv(|v| v * scale);
    let background = spec.ppp / ((1.0 + spec.sbr) * bins as f64);
    Ok((reflectivity, background))
}

// ===========================================================================
// Rates and sampling
// ===========================================================================

/// Per-window signal contributions for one pixel: `(bin, rate)` pairs.
///
/// The IRF is centered at the fractional bin `depth * bins`; each tap's mass
/// is split linearly between the two bracketing integer bins. Mass falling
/// outside `[0, bins)` is dropped.
fn signal_window(depth: f64, reflectivity: f64, irf: &Irf, bins: usize) -> Vec<(usize, f64)> {
    let base = depth * bins as f64;
    let center = irf.center() as f64;
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(irf.len() + 1);
    let mut push = |bin: i64, mass: f64| {
        if mass <= 0.0 || bin < 0 || bin >= bins as i64 {
            return;
        }
        let bin = bin as usize;
        if let Some(last) = out.last_mut() {
            if last.0 == bin {
                last.1 += mass;
                return;
            }
        }
        out.push((bin, mass));
    };
    for (j, &tap) in irf.taps().iter().enumerate() {
        let pos = base + (j as f64 - center);
        let floor = pos.floor();
        let frac = pos - floor;
        let mass = reflectivity * tap;
        push(floor as i64, mass * (1.0 - frac));
        if frac > 0.0 {
            push(floor as i64 + 1, mass * frac);
        }
    }
    out
}

/// The noiseless Poisson mean for every `(row, col, bin)` of a scene.
pub fn rate_cube(scene: &Scene, irf: &Irf, bins: usize) -> Result<Array3<f64>> {
    if irf.len() > bins {
        return Err(Error::IrfWindow {
            window: irf.len(),
            bins,
        });
    }
    let (rows, cols) = (scene.rows(), scene.cols());
    let mut rates = Array3::zeros((rows, cols, bins));
    for r in 0..rows {
        for c in 0..cols {
            let b = scene.background()[[r, c]];
            let mut lane = rates.slice_mut(ndarray::s![r, c, ..]);
            lane.fill(b);
            let window = signal_window(
                scene.depth().values()[[r, c]],
                scene.reflectivity()[[r, c]],
                irf,
                bins,
            );
            for (bin, rate) in window {
                lane[bin] += rate;
            }
        }
    }
    Ok(rates)
}

/// Aggregate photon counts produced by one sampling run, split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleStats {
    pub signal_counts: u64,
    pub background_counts: u64,
    pub pixels: usize,
    pub bins: usize,
}

impl SampleStats {
    /// Observed photons per pixel.
    pub fn empirical_ppp(&self) -> f64 {
        (self.signal_counts + self.background_counts) as f64 / self.pixels as f64
    }

    /// Observed signal-to-background ratio (infinite when no background
    /// photon was recorded).
    pub fn empirical_sbr(&self) -> f64 {
        self.signal_counts as f64 / self.background_counts as f64
    }
}

/// Draws a Poisson histogram cube for `scene` under the IRF.
pub fn sample_cube(scene: &Scene, irf: &Irf, bins: usize, seed: u64) -> Result<HistogramCube> {
    sample_cube_with_stats(scene, irf, bins, seed).map(|(cube, _)| cube)
}

/// [`sample_cube`] plus signal/background photon totals, for empirical
/// PPP/SBR reporting.
pub fn sample_cube_with_stats(
    scene: &Scene,
    irf: &Irf,
    bins: usize,
    seed: u64,
) -> Result<(HistogramCube, SampleStats)> {
    if irf.len() > bins {
        return Err(Error::IrfWindow {
            window: irf.len(),
            bins,
        });
    }
    let (rows, cols) = (scene.rows(), scene.cols());

    let row_results: Vec<(Vec<u32>, u64, u64)> = (0..rows)
        .into_par_iter()
        .map(|r| sample_row(scene, irf, bins, seed, r))
        .collect();

    let mut counts = Vec::with_capacity(rows * cols * bins);
    let mut signal = 0u64;
    let mut background = 0u64;
    for (row_counts, s, b) in row_results {
        counts.extend_from_slice(&row_counts);
        signal += s;
        background += b;
    }
    let counts =
        Array3::from_shape_vec((rows, cols, bins), counts).expect("row payloads have fixed length");
    let cube = HistogramCube::new(counts)?;
    let stats = SampleStats {
        signal_counts: signal,
        background_counts: background,
        pixels: rows * cols,
        bins,
    };
    Ok((cube, stats))
}

/// Samples all pixels of one image row. Each pixel uses its own RNG stream,
/// so the result is independent of scheduling.
fn sample_row(scene: &Scene, irf: &Irf, bins: usize, seed: u64, r: usize) -> (Vec<u32>, u64, u64) {
    let cols = scene.cols();
    let mut counts = vec![0u32; cols * bins];
    let mut signal = 0u64;
    let mut background = 0u64;
    for c in 0..cols {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((r * cols + c) as u64);

        let mut lane = vec![0.0f64; bins];
        for (bin, rate) in signal_window(
            scene.depth().values()[[r, c]],
            scene.reflectivity()[[r, c]],
            irf,
            bins,
        ) {
            lane[bin] += rate;
        }
        let b = scene.background()[[r, c]];
        for (t, &ls) in lane.iter().enumerate() {
            let s_count = draw_poisson(&mut rng, ls);
            let b_count = draw_poisson(&mut rng, b);
            signal += u64::from(s_count);
            background += u64::from(b_count);
            counts[c * bins + t] = s_count + b_count;
        }
    }
    (counts, signal, background)
}

/// One Poisson draw; a non-positive rate yields zero without consuming
/// randomness.
fn draw_poisson(rng: &mut ChaCha8Rng, rate: f64) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("rate checked positive and finite");
    let v: f64 = dist.sample(rng);
    if v >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        v as u32
    }
}

// ===========================================================================
// Tests
// ===========================================================================

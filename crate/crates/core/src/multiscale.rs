//! Multiscale maximum-likelihood depth extraction.
//!
//! The raw cube is matched-filtered against the IRF along the time axis, then
//! aggregated at several scales: optional 3-D box sums (temporal smoothing
//! variants) followed by per-bin 2-D box sums (spatial variants). For each
//! filtered cube a per-pixel scan of the Poisson log-likelihood
//!
//! ```text
//! score(d) = sum_t y_t * ln g(t - d)
//! ```
//!
//! over all integer bin candidates yields one depth plane per scale, ordered
//! temporal-major: all spatial variants of the first temporal kernel, then of
//! the second, and so on.
//!
//! All box filters compute *sums*, not means. Spatial borders are handled by
//! replicate padding; the time axis uses zero padding.

use ndarray::{s, Array2, Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{DepthMap, HistogramCube, Irf, MultiscaleDepthStack};

/// Floor applied to IRF taps inside the log-likelihood so empty taps do not
/// produce infinite scores.
pub const TAP_FLOOR: f64 = 1e-12;

// ===========================================================================
// Scale specification
// ===========================================================================

/// The set of smoothing scales: a list of temporal box kernels (`1` means
/// matched filter only) crossed with a list of per-bin spatial box kernels.
///
/// Planes are ordered temporal-major: for temporal kernels `[1, 7, 13]` and
/// spatial kernels `[1, 3, 7, 13]`, plane 4 (0-based) is the `7^3` temporal
/// variant with no spatial aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleSpec {
    temporal: Vec<usize>,
    spatial: Vec<usize>,
}

impl ScaleSpec {
    pub fn new(temporal: Vec<usize>, spatial: Vec<usize>) -> Result<Self> {
        for (name, list) in [("temporal", &temporal), ("spatial", &spatial)] {
            if list.is_empty() {
                return Err(Error::invalid("scales", format!("{name} kernels empty")));
            }
            if let Some(&bad) = list.iter().find(|k| **k == 0 || **k % 2 == 0) {
                return Err(Error::invalid(
                    "scales",
                    format!("{name} kernel sizes must be odd and positive, got {bad}"),
                ));
            }
        }
        Ok(Self { temporal, spatial })
    }

    /// The default 12-scale layout: temporal `[1, 7, 13]` x spatial
    /// `[1, 3, 7, 13]`.
    pub fn twelve() -> Self {
        Self {
            temporal: vec![1, 7, 13],
            spatial: vec![1, 3, 7, 13],
        }
    }

    /// The reduced 4-scale layout: matched filter only, spatial
    /// `[1, 3, 7, 13]` (the first temporal row of [`ScaleSpec::twelve`]).
    pub fn four() -> Self {
        Self {
            temporal: vec![1],
            spatial: vec![1, 3, 7, 13],
        }
    }

    /// Number of planes `L`.
    pub fn scales(&self) -> usize {
        self.temporal.len() * self.spatial.len()
    }

    pub fn temporal(&self) -> &[usize] {
        &self.temporal
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    /// `(temporal, spatial)` kernel pairs in plane order.
    pub fn kernel_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.scales());
        for &kt in &self.temporal {
            for &ks in &self.spatial {
                pairs.push((kt, ks));
            }
        }
        pairs
    }
}

// ===========================================================================
// Filters
// ===========================================================================

/// Correlates every pixel histogram with the IRF (zero extension in time):
///
/// ```text
/// out[t] = sum_j taps[j] * y[t + j - center]
/// ```
///
/// A single photon at bin `t0` therefore produces the time-reversed IRF with
/// its peak at `t0`.
pub fn matched_filter(cube: &HistogramCube, irf: &Irf) -> Array3<f64> {
    let data = cube.to_f64();
    matched_filter_real(&data, irf)
}

fn matched_filter_real(data: &Array3<f64>, irf: &Irf) -> Array3<f64> {
    let (rows, cols, bins) = data.dim();
    let taps = irf.taps();
    let center = irf.center() as i64;
    let mut out = Array3::zeros((rows, cols, bins));
    for (j, &tap) in taps.iter().enumerate() {
        if tap == 0.0 {
            continue;
        }
        let shift = j as i64 - center; // out[t] += tap * y[t + shift]
        let (o_start, i_start, len) = shifted_ranges(bins, shift);
        if len == 0 {
            continue;
        }
        let mut dst = out.slice_mut(s![.., .., o_start..o_start + len]);
        let src = data.slice(s![.., .., i_start..i_start + len]);
        dst.scaled_add(tap, &src);
    }
    out
}

/// For `out[t] += in[t + shift]`: valid output start, input start, length.
fn shifted_ranges(len: usize, shift: i64) -> (usize, usize, usize) {
    if shift >= 0 {
        let shift = shift as usize;
        if shift >= len {
            (0, 0, 0)
        } else {
            (0, shift, len - shift)
        }
    } else {
        let shift = (-shift) as usize;
        if shift >= len {
            (0, 0, 0)
        } else {
            (shift, 0, len - shift)
        }
    }
}

fn check_odd_kernel(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(
            "kernel",
            format!("box kernel must be odd and positive, got {k}"),
        ));
    }
    Ok(k / 2)
}

/// 3-D box *sum* with kernel `k^3`: replicate padding along rows and columns,
/// zero padding along time. Implemented as three sequential 1-D passes.
pub fn box_filter_3d(data: &Array3<f64>, k: usize) -> Result<Array3<f64>> {
    let half = check_odd_kernel(k)?;
    let tmp = sum_axis_replicate(data, Axis(0), half);
    let tmp = sum_axis_replicate(&tmp, Axis(1), half);
    Ok(sum_time_zero_pad(&tmp, half))
}

/// Per-bin 2-D box *sum* with kernel `k x k` and replicate padding; the time
/// axis is untouched.
pub fn spatial_box_filter(data: &Array3<f64>, k: usize) -> Result<Array3<f64>> {
    let half = check_odd_kernel(k)?;
    let tmp = sum_axis_replicate(data, Axis(0), half);
    Ok(sum_axis_replicate(&tmp, Axis(1), half))
}

/// 2-D box sum over a `(rows, cols)` map with replicate padding.
pub fn box_sum_2d(map: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let half = check_odd_kernel(k)?;
    let (rows, cols) = map.dim();
    let mut tmp = Array2::zeros((rows, cols));
    for out_r in 0..rows {
        let mut acc = tmp.row_mut(out_r);
        for d in -(half as i64)..=half as i64 {
            let src = (out_r as i64 + d).clamp(0, rows as i64 - 1) as usize;
            acc += &map.row(src);
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for out_c in 0..cols {
        let mut acc = out.column_mut(out_c);
        for d in -(half as i64)..=half as i64 {
            let src = (out_c as i64 + d).clamp(0, cols as i64 - 1) as usize;
            acc += &tmp.column(src);
        }
    }
    Ok(out)
}

/// Sliding-window sum along a spatial axis with replicate padding.
fn sum_axis_replicate(data: &Array3<f64>, axis: Axis, half: usize) -> Array3<f64> {
    let n = data.len_of(axis);
    let mut out = Array3::zeros(data.raw_dim());
    for i in 0..n {
        let mut dst = out.index_axis_mut(axis, i);
        for d in -(half as i64)..=half as i64 {
            let src = (i as i64 + d).clamp(0, n as i64 - 1) as usize;
            dst += &data.index_axis(axis, src);
        }
    }
    out
}

/// Sliding-window sum along the time axis with zero padding.
fn sum_time_zero_pad(data: &Array3<f64>, half: usize) -> Array3<f64> {
    let bins = data.len_of(Axis(2));
    let mut out = Array3::zeros(data.raw_dim());
    for d in -(half as i64)..=half as i64 {
        let (o_start, i_start, len) = shifted_ranges(bins, d);
        if len == 0 {
            continue;
        }
        let mut dst = out.slice_mut(s![.., .., o_start..o_start + len]);
        dst += &data.slice(s![.., .., i_start..i_start + len]);
    }
    out
}

// ===========================================================================
// Maximum-likelihood depth
// ===========================================================================

/// Result of a per-pixel likelihood scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlEstimate {
    /// Normalized depth (`argmax bin / bins`); `0.0` for empty histograms.
    pub depth: f64,
    /// Set when the histogram contained no counts at all.
    pub empty: bool,
}

/// Scans all integer bin candidates for the depth maximizing
/// `sum_t y_t * ln g(t - d)`, with taps floored at [`TAP_FLOOR`]. Ties break
/// toward the smallest bin. An all-zero histogram yields depth 0 flagged
/// empty.
pub fn ml_depth(hist: &[f64], irf: &Irf) -> MlEstimate {
    let bins = hist.len();
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        return MlEstimate {
            depth: 0.0,
            empty: true,
        };
    }
    // Dropping the constant sum_t y_t * ln(TAP_FLOOR) leaves a non-negative
    // correlation kernel over the IRF window.
    let ln_floor = TAP_FLOOR.ln();
    let kernel: Vec<f64> = irf
        .taps()
        .iter()
        .map(|&g| g.max(TAP_FLOOR).ln() - ln_floor)
        .collect();
    let center = irf.center() as i64;

    let mut best_bin = 0usize;
    let mut best = f64::NEG_INFINITY;
    for d in 0..bins {
        let mut score = 0.0;
        let base = d as i64 - center;
        let j_lo = (-base).max(0) as usize;
        let j_hi = kernel.len().min((bins as i64 - base).max(0) as usize);
        for j in j_lo..j_hi {
            score += kernel[j] * hist[(base + j as i64) as usize];
        }
        if score > best {
            best = score;
            best_bin = d;
        }
    }
    MlEstimate {
        depth: best_bin as f64 / bins as f64,
        empty: false,
    }
}

// ===========================================================================
// Stack construction
// ===========================================================================

/// A scale stack plus the per-plane side products needed downstream.
#[derive(Debug, Clone)]
pub struct StackBuild {
    /// Depth hypotheses, one plane per scale in [`ScaleSpec`] order.
    pub stack: MultiscaleDepthStack,
    /// Per-pixel total count of each filtered cube (drives the likelihood
    /// variance of each plane).
    pub totals: Vec<Array2<f64>>,
    /// Pixels whose filtered histogram was all-zero, per plane.
    pub empty: Vec<Array2<bool>>,
    /// `(temporal, spatial)` kernel of each plane.
    pub pairs: Vec<(usize, usize)>,
}

/// Builds the multiscale depth stack for a cube.
pub fn build_stack(
    cube: &HistogramCube,
    irf: &Irf,
    spec: &ScaleSpec,
) -> Result<MultiscaleDepthStack> {
    build_stack_full(cube, irf, spec).map(|b| b.stack)
}

/// [`build_stack`] plus per-plane totals and empty-pixel flags.
pub fn build_stack_full(cube: &HistogramCube, irf: &Irf, spec: &ScaleSpec) -> Result<StackBuild> {
    if irf.len() > cube.bins() {
        return Err(Error::IrfWindow {
            window: irf.len(),
            bins: cube.bins(),
        });
    }
    let filtered = matched_filter(cube, irf);

    let mut planes = Vec::with_capacity(spec.scales());
    let mut totals = Vec::with_capacity(spec.scales());
    let mut empties = Vec::with_capacity(spec.scales());

    for &kt in &spec.temporal {
        let temporal_variant = if kt == 1 {
            filtered.clone()
        } else {
            box_filter_3d(&filtered, kt)?
        };
        for &ks in &spec.spatial {
            let scale_cube = if ks == 1 {
                temporal_variant.clone()
            } else {
                spatial_box_filter(&temporal_variant, ks)?
            };
            let (plane, total, empty) = scan_plane(&scale_cube, irf);
            planes.push(DepthMap::new(plane)?);
            totals.push(total);
            empties.push(empty);
        }
    }

    Ok(StackBuild {
        stack: MultiscaleDepthStack::new(planes)?,
        totals,
        empty: empties,
        pairs: spec.kernel_pairs(),
    })
}

/// Runs the likelihood scan on every pixel of one filtered cube.
fn scan_plane(scale_cube: &Array3<f64>, irf: &Irf) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
    let (rows, cols, _) = scale_cube.dim();
    let row_results: Vec<Vec<(f64, f64, bool)>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let hist = scale_cube.slice(s![r, c, ..]);
                    let hist = hist.as_slice().expect("time axis is contiguous");
                    let est = ml_depth(hist, irf);
                    let total: f64 = hist.iter().sum();
                    (est.depth, total, est.empty)
                })
                .collect()
        })
        .collect();

    let mut depth = Array2::zeros((rows, cols));
    let mut total = Array2::zeros((rows, cols));
    let mut empty = Array2::from_elem((rows, cols), false);
    for (r, row) in row_results.into_iter().enumerate() {
        for (c, (d, t, e)) in row.into_iter().enumerate() {
            depth[[r, c]] = d;
            total[[r, c]] = t;
            empty[[r, c]] = e;
        }
    }
    (depth, total, empty)
}

// ===========================================================================
// Tests
// ===========================================================================

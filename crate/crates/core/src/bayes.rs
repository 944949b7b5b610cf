//! Iterative Bayesian fusion of multiscale depth estimates.
//!
//! The model couples a fused depth map `x` with per-scale depth variables
//! `d^(l)` through guidance weights `w` and a per-pixel scale parameter `eps`:
//!
//! * `x_n` minimizes `C_n(x) = sum_{l, n' in nu_n} w_{n',n} |x - d^(l)_{n'}|`
//!   — a weighted median of the neighborhood stack values;
//! * `d^(l)_n` minimizes
//!   `(d - dML^(l)_n)^2 / (2 sigma_bar^2) + sum_{n'} (w_{n,n'}/eps_{n'}) |d - x_{n'}|`
//!   — a generalized soft-thresholding problem solved exactly by a breakpoint
//!   scan;
//! * `eps_n = (C_n(x_n) + beta_d) / (L Nbar + alpha_d + 1)` — the mode of an
//!   inverse-gamma posterior, reported as the uncertainty map.
//!
//! One sweep updates all pixels of `x` in parallel, then all pixels of every
//! `d^(l)`, then `eps` (the two variable blocks are separable, so the
//! parallel update is exact block coordinate descent). Guidance weights are
//! computed once from the initial stack against a per-pixel median reference
//! and stay fixed. Everything operates in normalized depth units.

use ndarray::{Array2, Array4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{DepthMap, MultiscaleDepthStack, UncertaintyMap};

// ===========================================================================
// Parameters
// ===========================================================================

/// Hyper-parameters and stopping rules for [`run_bayes`].
#[derive(Debug, Clone)]
pub struct BayesParams {
    /// Inverse-gamma shape hyper-parameter.
    pub alpha_d: f64,
    /// Inverse-gamma scale hyper-parameter.
    pub beta_d: f64,
    /// Half-width of the square neighborhood `nu` (1 gives 3x3).
    pub radius: usize,
    /// Guidance kernel bandwidth `h` in normalized depth units.
    pub bandwidth: f64,
    /// Stop when `max_n |x_new - x_old| < tol`.
    pub tol: f64,
    /// Hard cap on sweeps.
    pub max_iters: usize,
    /// Record the surrogate objective before/after each sweep.
    pub trace_objective: bool,
}

impl BayesParams {
    /// Defaults with an explicit guidance bandwidth.
    pub fn new(bandwidth: f64) -> Result<Self> {
        let p = Self {
            alpha_d: 0.01,
            beta_d: 0.01,
            radius: 1,
            bandwidth,
            tol: 1e-4,
            max_iters: 50,
            trace_objective: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults with the bandwidth tied to the histogram resolution
    /// (`h = 2 / bins`).
    pub fn for_bins(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bins", "must be positive"));
        }
        Self::new(2.0 / bins as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_d > 0.0) || !(self.beta_d > 0.0) {
            return Err(Error::invalid(
                "alpha_d/beta_d",
                "hyper-parameters must be > 0",
            ));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::invalid(
                "bandwidth",
                format!("must be > 0, got {}", self.bandwidth),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be > 0 (may be infinite)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        Ok(())
    }

    /// Nominal neighborhood size `Nbar = (2 radius + 1)^2`, used in the
    /// `eps` denominator for every pixel (also at borders).
    pub fn window(&self) -> usize {
        (2 * self.radius + 1) * (2 * self.radius + 1)
    }
}

// ===========================================================================
// Guidance weights
// ===========================================================================

/// Precomputed guidance weights `w[l, r, c, k] = exp(-(d^(l)(nbr_k(r,c)) -
/// ref(r,c))^2 / (2 h^2))`, where `nbr_k` enumerates the `(2R+1)^2` window
/// offsets row-major. Out-of-image neighbors carry weight zero.
#[derive(Debug, Clone)]
pub struct GuidanceWeights {
    w: Array4<f64>,
    radius: usize,
}

impl GuidanceWeights {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn scales(&self) -> usize {
        self.w.dim().0
    }

    /// Weight of window slot `k` at pixel `(r, c)` for scale `l`.
    pub fn get(&self, l: usize, r: usize, c: usize, k: usize) -> f64 {
        self.w[[l, r, c, k]]
    }
}

/// Offset of window slot `k` for half-width `radius` (row-major enumeration).
fn slot_offset(k: usize, radius: usize) -> (i64, i64) {
    let side = 2 * radius + 1;
    let dr = (k / side) as i64 - radius as i64;
    let dc = (k % side) as i64 - radius as i64;
    (dr, dc)
}

/// The window slot holding the mirrored offset of slot `k`.
fn mirror_slot(k: usize, radius: usize) -> usize {
    let side = 2 * radius + 1;
    side * side - 1 - k
}

/// Per-pixel median of the stack planes — the reference depth the guidance
/// weights are measured against. Uses the weighted-median rule with unit
/// weights, so the result is always one of the stack values.
pub fn reference_map(stack: &MultiscaleDepthStack) -> Array2<f64> {
    let (rows, cols, l) = (stack.rows(), stack.cols(), stack.scales());
    let ones = vec![1.0; l];
    let mut values = vec![0.0; l];
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        for (i, plane) in stack.planes().iter().enumerate() {
            values[i] = plane.values()[[r, c]];
        }
        weighted_median(&values, &ones).expect("unit weights are not all zero")
    })
}

/// Computes the fixed guidance weights for a stack against a reference map.
pub fn compute_guidance_weights(
    stack: &MultiscaleDepthStack,
    reference: &Array2<f64>,
    bandwidth: f64,
    radius: usize,
) -> Result<GuidanceWeights> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(
            "bandwidth",
            format!("must be > 0, got {bandwidth}"),
        ));
    }
    let (rows, cols) = (stack.rows(), stack.cols());
    if reference.dim() != (rows, cols) {
        return Err(Error::ShapeMismatch {
            context: "guidance reference",
            expected: format!("{rows}x{cols}"),
            actual: format!("{}x{}", reference.dim().0, reference.dim().1),
        });
    }
    let scales = stack.scales();
    let window = (2 * radius + 1) * (2 * radius + 1);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut w = Array4::zeros((scales, rows, cols, window));
    for (l, plane) in stack.planes().iter().enumerate() {
        let d = plane.values();
        for r in 0..rows {
            for c in 0..cols {
                let reference_depth = reference[[r, c]];
                for k in 0..window {
                    let (dr, dc) = slot_offset(k, radius);
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                        continue; // stays zero
                    }
                    let dev = d[[nr as usize, nc as usize]] - reference_depth;
                    w[[l, r, c, k]] = (-dev * dev * inv).exp();
                }
            }
        }
    }
    Ok(GuidanceWeights { w, radius })
}

// ===========================================================================
// Scalar solvers
// ===========================================================================

/// Smallest minimizer of `sum_i weights[i] * |x - values[i]|`.
///
/// Classic rule: sort by value and return the first breakpoint where the
/// cumulative weight reaches half the total. On an interval of minimizers
/// this picks the smallest breakpoint attaining the optimum. All-zero
/// weights are an error.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    assert_eq!(
        values.len(),
        weights.len(),
        "values/weights length mismatch"
    );
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let half = total / 2.0;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= half {
            return Ok(values[i]);
        }
    }
    // Unreachable for positive totals; guard against float drift.
    Ok(values[*order.last().expect("non-empty by total > 0")])
}

/// Exact minimizer of
///
/// ```text
/// f(d) = (d - d_ml)^2 / (2 sigma_bar_sq) + sum_j coeffs[j] * |d - anchors[j]|
/// ```
///
/// via an ascending scan over breakpoint segments. `sigma_bar_sq` may be
/// `f64::INFINITY`, reducing the problem to a weighted median over the
/// anchors; degenerate optima return the smallest minimizer.
pub fn soft_threshold_update(d_ml: f64, sigma_bar_sq: f64, anchors: &[f64], coeffs: &[f64]) -> f64 {
    assert_eq!(
        anchors.len(),
        coeffs.len(),
        "anchors/coeffs length mismatch"
    );
    debug_assert!(sigma_bar_sq > 0.0);

    // Merge duplicate anchors, drop zero coefficients, sort ascending.
    let mut points: Vec<(f64, f64)> = anchors
        .iter()
        .zip(coeffs.iter())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&a, &c)| (a, c))
        .collect();
    if points.is_empty() {
        return d_ml;
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite anchors"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (a, c) in points {
        match merged.last_mut() {
            Some(last) if last.0 == a => last.1 += c,
            _ => merged.push((a, c)),
        }
    }

    let total: f64 = merged.iter().map(|(_, c)| c).sum();
    let quad = |d: f64| {
        if sigma_bar_sq.is_infinite() {
            0.0
        } else {
            (d - d_ml) / sigma_bar_sq
        }
    };

    // The derivative of f is nondecreasing; scan segments in ascending order
    // for its zero crossing. On the segment below anchor k the l1 slope is
    // constant at prefix - (total - prefix).
    let mut prefix = 0.0;
    for k in 0..merged.len() {
        let slope = 2.0 * prefix - total;
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            merged[k - 1].0
        };
        let hi = merged[k].0;
        let end_deriv = quad(hi) + slope;
        if end_deriv >= 0.0 {
            // The crossing lies in (lo, hi].
            if sigma_bar_sq.is_infinite() {
                // Pure l1: slope == 0 means a flat optimum whose smallest
                // point is lo; slope > 0 was caught at an earlier breakpoint.
                return if lo.is_finite() { lo } else { hi };
            }
            return (d_ml - sigma_bar_sq * slope).clamp(lo, hi);
        }
        // f still decreases just below hi; hi itself is the minimizer iff
        // the derivative jumps past zero there.
        if end_deriv + 2.0 * merged[k].1 >= 0.0 {
            return hi;
        }
        prefix += merged[k].1;
    }
    // Above the largest anchor every l1 term increases, so the crossing sits
    // at the stationary point of the smooth part (or at the anchor itself).
    let last = merged.last().expect("non-empty points").0;
    if sigma_bar_sq.is_infinite() {
        return last;
    }
    (d_ml - sigma_bar_sq * total).max(last)
}

/// Inverse-gamma posterior mode for the local scale parameter:
/// `(c + beta_d) / (scales * window + alpha_d + 1)`.
pub fn variance_update(c: f64, scales: usize, window: usize, alpha_d: f64, beta_d: f64) -> f64 {
    (c + beta_d) / ((scales * window) as f64 + alpha_d + 1.0)
}

// ===========================================================================
// Variance maps
// ===========================================================================

/// Per-scale likelihood variances in normalized units:
/// `sigma_bar^2 = (sigma_bins / bins)^2 / max(total, 1)`.
///
/// Totals are clamped at one photon so empty pixels get a finite (maximally
/// loose) variance instead of a division by zero.
pub fn sigma_bar_maps(
    irf_sigma_bins: f64,
    bins: usize,
    totals: &[Array2<f64>],
) -> Result<Vec<Array2<f64>>> {
    if !(irf_sigma_bins > 0.0) || bins == 0 {
        return Err(Error::invalid(
            "sigma",
            "IRF sigma and bin count must be positive",
        ));
    }
    let sigma_norm = irf_sigma_bins / bins as f64;
    Ok(totals
        .iter()
        .map(|t| t.mapv(|s| sigma_norm * sigma_norm / s.max(1.0)))
        .collect())
}

// ===========================================================================
// Main loop
// ===========================================================================

/// Result of a [`run_bayes`] call.
#[derive(Debug, Clone)]
pub struct BayesRun {
    pub depth: DepthMap,
    pub uncertainty: UncertaintyMap,
    /// Number of sweeps executed.
    pub iterations: usize,
    /// `(before, after)` surrogate objective per sweep, when tracing was
    /// requested. The objective is evaluated at the sweep's incoming `eps`.
    pub objective_trace: Vec<(f64, f64)>,
}

/// Runs the coordinate-descent fusion until `x` moves less than `tol` in
/// max-norm or `max_iters` sweeps elapse.
///
/// `stack` provides the initial maximum-likelihood depths; `sigma_bar_sq`
/// gives each plane's per-pixel likelihood variance (see [`sigma_bar_maps`]).
pub fn run_bayes(
    stack: &MultiscaleDepthStack,
    sigma_bar_sq: &[Array2<f64>],
    params: &BayesParams,
) -> Result<BayesRun> {
    params.validate()?;
    let (rows, cols, scales) = (stack.rows(), stack.cols(), stack.scales());
    if sigma_bar_sq.len() != scales {
        return Err(Error::ShapeMismatch {
            context: "sigma_bar_sq planes",
            expected: format!("{scales}"),
            actual: format!("{}", sigma_bar_sq.len()),
        });
    }
    for (l, m) in sigma_bar_sq.iter().enumerate() {
        if m.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: "sigma_bar_sq plane",
                expected: format!("{rows}x{cols}"),
                actual: format!("{}x{} (plane {l})", m.dim().0, m.dim().1),
            });
        }
        if let Some(&bad) = m.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(
                "sigma_bar_sq",
                format!("variances must be > 0, got {bad}"),
            ));
        }
    }

    let radius = params.radius;
    let window = params.window();
    let reference = reference_map(stack);
    let weights = compute_guidance_weights(stack, &reference, params.bandwidth, radius)?;

    let d_ml: Vec<Array2<f64>> = stack.planes().iter().map(|p| p.values().clone()).collect();
    let mut d = d_ml.clone();
    // The reference map is itself the unit-weight median of the stack, which
    // is what the first x-update would produce from uniform weights; starting
    // there makes the constant-stack case converge in a single sweep.
    let mut x = reference;
    // Prior mode of the inverse-gamma distribution, before any data term.
    let mut eps = Array2::from_elem((rows, cols), params.beta_d / (params.alpha_d + 1.0));

    let mut iterations = 0;
    let mut objective_trace = Vec::new();

    for sweep in 0..params.max_iters {
        let objective_before = params
            .trace_objective
            .then(|| surrogate_objective(&x, &d, &d_ml, sigma_bar_sq, &weights, &eps, radius));

        // --- x block: weighted median over the neighborhood stack ---------
        let x_rows: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|r| {
                let mut values = Vec::with_capacity(scales * window);
                let mut wbuf = Vec::with_capacity(scales * window);
                (0..cols)
                    .map(|c| {
                        values.clear();
                        wbuf.clear();
                        for l in 0..scales {
                            for k in 0..window {
                                let (dr, dc) = slot_offset(k, radius);
                                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                                if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                                    continue;
                                }
                                values.push(d[l][[nr as usize, nc as usize]]);
                                wbuf.push(weights.get(l, r, c, k));
                            }
                        }
                        weighted_median(&values, &wbuf)
                            .expect("center weight of the median scale is 1")
                    })
                    .collect()
            })
            .collect();
        let x_new = rows_to_array(x_rows, rows, cols);

        // --- d block: generalized soft-thresholding per scale --------------
        let d_new: Vec<Array2<f64>> = (0..scales)
            .into_par_iter()
            .map(|l| {
                let mut anchors = Vec::with_capacity(window);
                let mut coeffs = Vec::with_capacity(window);
                Array2::from_shape_fn((rows, cols), |(r, c)| {
                    anchors.clear();
                    coeffs.clear();
                    for k in 0..window {
                        let (dr, dc) = slot_offset(k, radius);
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                            continue;
                        }
                        let (nr, nc) = (nr as usize, nc as usize);
                        // Weight of this pixel as seen from the neighbor:
                        // w^(l)_{n,n'} lives in the neighbor's window at the
                        // mirrored slot.
                        let w = weights.get(l, nr, nc, mirror_slot(k, radius));
                        if w == 0.0 {
                            continue;
                        }
                        anchors.push(x_new[[nr, nc]]);
                        coeffs.push(w / eps[[nr, nc]]);
                    }
                    soft_threshold_update(
                        d_ml[l][[r, c]],
                        sigma_bar_sq[l][[r, c]],
                        &anchors,
                        &coeffs,
                    )
                })
            })
            .collect();

        // --- eps block: inverse-gamma mode at the new iterates -------------
        let eps_new = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let mut cost = 0.0;
            for l in 0..scales {
                for k in 0..window {
                    let (dr, dc) = slot_offset(k, radius);
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                        continue;
                    }
                    cost += weights.get(l, r, c, k)
                        * (x_new[[r, c]] - d_new[l][[nr as usize, nc as usize]]).abs();
                }
            }
            variance_update(cost, scales, window, params.alpha_d, params.beta_d)
        });

        let delta = x_new
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);

        if let Some(before) = objective_before {
            let after =
                surrogate_objective(&x_new, &d_new, &d_ml, sigma_bar_sq, &weights, &eps, radius);
            objective_trace.push((before, after));
        }

        x = x_new;
        d = d_new;
        eps = eps_new;
        iterations = sweep + 1;

        for (name, arr) in [("x", &x), ("eps", &eps)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "bayes {name} at sweep {iterations}"
                )));
            }
        }
        if d.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("bayes d at sweep {iterations}")));
        }

        if delta < params.tol {
            break;
        }
    }

    Ok(BayesRun {
        depth: DepthMap::new(x)?,
        uncertainty: UncertaintyMap::new(eps)?,
        iterations,
        objective_trace,
    })
}

fn rows_to_array(rows_data: Vec<Vec<f64>>, rows: usize, cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for (r, row) in rows_data.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    out
}

/// Joint surrogate objective at fixed guidance weights and `eps`:
///
/// ```text
/// J(x, D) = sum_{n,l} (d^(l)_n - dML^(l)_n)^2 / (2 sigma_bar^2_{l,n})
///         + sum_n (1/eps_n) sum_{l, n' in nu_n} w^(l)_{n',n} |x_n - d^(l)_{n'}|
/// ```
///
/// One full sweep (x block, then d block) cannot increase this value.
fn surrogate_objective(
    x: &Array2<f64>,
    d: &[Array2<f64>],
    d_ml: &[Array2<f64>],
    sigma_bar_sq: &[Array2<f64>],
    weights: &GuidanceWeights,
    eps: &Array2<f64>,
    radius: usize,
) -> f64 {
    let (rows, cols) = x.dim();
    let window = (2 * radius + 1) * (2 * radius + 1);
    let mut j = 0.0;
    for l in 0..d.len() {
        for r in 0..rows {
            for c in 0..cols {
                let diff = d[l][[r, c]] - d_ml[l][[r, c]];
                j += diff * diff / (2.0 * sigma_bar_sq[l][[r, c]]);
            }
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let mut coupling = 0.0;
            for l in 0..d.len() {
                for k in 0..window {
                    let (dr, dc) = slot_offset(k, radius);
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                        continue;
                    }
                    coupling += weights.get(l, r, c, k)
                        * (x[[r, c]] - d[l][[nr as usize, nc as usize]]).abs();
                }
            }
            j += coupling / eps[[r, c]];
        }
    }
    j
}

// ===========================================================================
// Tests
// ===========================================================================

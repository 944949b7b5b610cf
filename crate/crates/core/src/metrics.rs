//! Depth-map quality metrics.
//!
//! * [`dae`] — depth absolute error, the mean L1 distance in normalized
//!   depth units.
//! * [`rmse`] — root-mean-square error in the same units.
//! * [`see`] — scaled edge error: for every ground-truth edge pixel (found
//!   with a Canny detector) the smallest absolute depth difference between
//!   prediction and truth over the 3x3 neighborhood, averaged and scaled by
//!   ten.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};

// ===========================================================================
// Pixel-wise errors
// ===========================================================================

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>, context: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("{}x{}", a.dim().0, a.dim().1),
            actual: format!("{}x{}", b.dim().0, b.dim().1),
        });
    }
    Ok(())
}

/// Mean absolute depth error.
pub fn dae(predicted: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    check_shapes(predicted, truth, "dae")?;
    let n = predicted.len() as f64;
    Ok(predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

/// Root-mean-square depth error.
pub fn rmse(predicted: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    check_shapes(predicted, truth, "rmse")?;
    let n = predicted.len() as f64;
    Ok((predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
        .sqrt())
}

// ===========================================================================
// Canny edge detection
// ===========================================================================

/// Binary edge mask plus the list of edge coordinates.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    mask: Array2<bool>,
    coords: Vec<(usize, usize)>,
}

impl EdgeSet {
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Gaussian blur with replicate borders; kernel radius `ceil(3 sigma)`.
fn gaussian_blur(image: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        let x = i as f64;
        kernel.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (rows, cols) = image.dim();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    // Separable: horizontal pass then vertical pass.
    let mut tmp = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let cc = clamp(c as i64 + i as i64 - radius, cols);
                acc += k * image[[r, cc]];
            }
            tmp[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let rr = clamp(r as i64 + i as i64 - radius, rows);
                acc += k * tmp[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Sobel gradients with replicate borders; returns `(gx, gy)` where `gx`
/// differentiates along columns and `gy` along rows.
fn sobel(image: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (rows, cols) = image.dim();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let at = |r: i64, c: i64| image[[clamp(r, rows), clamp(c, cols)]];
    let mut gx = Array2::zeros((rows, cols));
    let mut gy = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let (ri, ci) = (r as i64, c as i64);
            gx[[r, c]] = (at(ri - 1, ci + 1) + 2.0 * at(ri, ci + 1) + at(ri + 1, ci + 1))
                - (at(ri - 1, ci - 1) + 2.0 * at(ri, ci - 1) + at(ri + 1, ci - 1));
            gy[[r, c]] = (at(ri + 1, ci - 1) + 2.0 * at(ri + 1, ci) + at(ri + 1, ci + 1))
                - (at(ri - 1, ci - 1) + 2.0 * at(ri - 1, ci) + at(ri - 1, ci + 1));
        }
    }
    (gx, gy)
}

/// Canny edge detector.
///
/// Pipeline: Gaussian blur (`sigma = 1`), Sobel gradients, non-maximum
/// suppression with the gradient direction quantized to four sectors (a
/// pixel survives only if its magnitude is `>=` both neighbors along the
/// direction), then hysteresis thresholding with 8-connected propagation
/// from strong pixels. `low_frac`/`high_frac` are fractions of the maximum
/// gradient magnitude. An image with no detected edges is an error — the
/// edge metric would be undefined.
pub fn canny_edges(image: &Array2<f64>, low_frac: f64, high_frac: f64) -> Result<EdgeSet> {
    if !(0.0 < low_frac && low_frac <= high_frac && high_frac <= 1.0) {
        return Err(Error::invalid(
            "canny thresholds",
            format!("need 0 < low <= high <= 1, got {low_frac}, {high_frac}"),
        ));
    }
    let (rows, cols) = image.dim();
    let blurred = gaussian_blur(image, 1.0);
    let (gx, gy) = sobel(&blurred);
    let mut magnitude = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            magnitude[[r, c]] = (gx[[r, c]] * gx[[r, c]] + gy[[r, c]] * gy[[r, c]]).sqrt();
        }
    }
    let max_mag = magnitude.iter().cloned().fold(0.0f64, f64::max);
    if max_mag == 0.0 {
        return Err(Error::EmptyEdgeSet);
    }
    let low = low_frac * max_mag;
    let high = high_frac * max_mag;

    // Non-maximum suppression along the quantized gradient direction.
    let mut thin = Array2::from_elem((rows, cols), 0.0f64);
    for r in 0..rows {
        for c in 0..cols {
            let m = magnitude[[r, c]];
            if m == 0.0 {
                continue;
            }
            let angle = gy[[r, c]].atan2(gx[[r, c]]).to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            // Sector -> neighbor offsets along the gradient direction.
            let (dr, dc): (i64, i64) = if !(22.5..157.5).contains(&angle) {
                (0, 1) // horizontal gradient: compare left/right
            } else if angle < 67.5 {
                (1, 1) // diagonal
            } else if angle < 112.5 {
                (1, 0) // vertical gradient: compare up/down
            } else {
                (1, -1) // anti-diagonal
            };
            let get = |rr: i64, cc: i64| {
                if rr < 0 || rr >= rows as i64 || cc < 0 || cc >= cols as i64 {
                    0.0
                } else {
                    magnitude[[rr as usize, cc as usize]]
                }
            };
            let a = get(r as i64 + dr, c as i64 + dc);
            let b = get(r as i64 - dr, c as i64 - dc);
            if m >= a && m >= b {
                thin[[r, c]] = m;
            }
        }
    }

    // Hysteresis: BFS from strong pixels through weak ones (8-connected).
    let mut mask = Array2::from_elem((rows, cols), false);
    let mut queue = VecDeque::new();
    for r in 0..rows {
        for c in 0..cols {
            if thin[[r, c]] >= high && !mask[[r, c]] {
                mask[[r, c]] = true;
                queue.push_back((r, c));
                while let Some((qr, qc)) = queue.pop_front() {
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            if dr == 0 && dc == 0 {
                                continue;
                            }
                            let (nr, nc) = (qr as i64 + dr, qc as i64 + dc);
                            if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                                continue;
                            }
                            let (nr, nc) = (nr as usize, nc as usize);
                            if !mask[[nr, nc]] && thin[[nr, nc]] >= low {
                                mask[[nr, nc]] = true;
                                queue.push_back((nr, nc));
                            }
                        }
                    }
                }
            }
        }
    }

    let coords: Vec<(usize, usize)> = mask
        .indexed_iter()
        .filter_map(|((r, c), &on)| on.then_some((r, c)))
        .collect();
    if coords.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    Ok(EdgeSet { mask, coords })
}

/// Default Canny thresholds for depth maps: 10% / 20% of the maximum
/// gradient magnitude.
pub const CANNY_LOW_FRAC: f64 = 0.1;
pub const CANNY_HIGH_FRAC: f64 = 0.2;

// ===========================================================================
// Scaled edge error
// ===========================================================================

/// Scaled edge error against a precomputed ground-truth edge set:
///
/// ```text
/// SEE = (10 / |E|) * sum_{(r,c) in E} min_{(r',c') in 3x3(r,c)}
///           |predicted(r',c') - truth(r,c)|
/// ```
///
/// The 3x3 window is clipped at image borders.
pub fn see_with_edges(
    predicted: &Array2<f64>,
    truth: &Array2<f64>,
    edges: &EdgeSet,
) -> Result<f64> {
    check_shapes(predicted, truth, "see")?;
    if edges.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    let (rows, cols) = predicted.dim();
    let mut total = 0.0;
    for &(r, c) in edges.coords() {
        let t = truth[[r, c]];
        let mut best = f64::INFINITY;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nr >= rows as i64 || nc < 0 || nc >= cols as i64 {
                    continue;
                }
                best = best.min((predicted[[nr as usize, nc as usize]] - t).abs());
            }
        }
        total += best;
    }
    Ok(10.0 * total / edges.len() as f64)
}

/// Scaled edge error, detecting ground-truth edges with the default Canny
/// thresholds.
pub fn see(predicted: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    let edges = canny_edges(truth, CANNY_LOW_FRAC, CANNY_HIGH_FRAC)?;
    see_with_edges(predicted, truth, &edges)
}

// ===========================================================================
// Tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn step_image(rows: usize, cols: usize, split: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(_, c)| if c < split { lo } else { hi })
    }

    #[test]
    fn dae_and_rmse_hand_computed() {
        let a = array![[0.0, 0.5], [1.0, 0.25]];
        let b = array![[0.1, 0.5], [0.8, 0.25]];
        // |diffs| = {0.1, 0, 0.2, 0}.
        assert_abs_diff_eq!(dae(&a, &b).unwrap(), 0.075, epsilon = 1e-15);
        let expected = ((0.01f64 + 0.04) / 4.0).sqrt();
        assert_abs_diff_eq!(rmse(&a, &b).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn identical_maps_have_zero_error() {
        let a = Array2::from_shape_fn((5, 7), |(r, c)| (r * 7 + c) as f64 / 35.0);
        assert_eq!(dae(&a, &a).unwrap(), 0.0);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_shape_mismatch() {
        let a = Array2::zeros((4, 4));
        let b = Array2::zeros((4, 5));
        assert!(matches!(dae(&a, &b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(rmse(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn constant_shift_matches_in_both_metrics() {
        // For a uniform offset, RMSE == DAE == the offset.
        let a = Array2::from_elem((6, 6), 0.3);
        let b = Array2::from_elem((6, 6), 0.45);
        assert_abs_diff_eq!(dae(&a, &b).unwrap(), 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&a, &b).unwrap(), 0.15, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_blur_preserves_constants_and_mass() {
        let img = Array2::from_elem((8, 8), 0.7);
        let out = gaussian_blur(&img, 1.0);
        for &v in &out {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn sobel_on_linear_ramp_is_exact() {
        // image(r, c) = c: gx should be 8 (Sobel weight sum x step 1) in the
        // interior and gy should vanish.
        let img = Array2::from_shape_fn((6, 6), |(_, c)| c as f64);
        let (gx, gy) = sobel(&img);
        for r in 1..5 {
            for c in 1..5 {
                assert_abs_diff_eq!(gx[[r, c]], 8.0, epsilon = 1e-12);
                assert_abs_diff_eq!(gy[[r, c]], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn canny_finds_a_vertical_step_edge() {
        let img = step_image(16, 16, 8, 0.3, 0.7);
        let edges = canny_edges(&img, CANNY_LOW_FRAC, CANNY_HIGH_FRAC).unwrap();
        assert!(!edges.is_empty());
        // All detected edges hug the step columns (blur radius 3 spreads the
        // transition over a few columns around 7/8).
        for &(_, c) in edges.coords() {
            assert!(
                (5..=10).contains(&c),
                "edge at column {c} is far from the step at 7|8"
            );
        }
        // The edge should be present on most rows.
        let rows_with_edges: std::collections::HashSet<usize> =
            edges.coords().iter().map(|&(r, _)| r).collect();
        assert!(rows_with_edges.len() >= 14);
    }

    #[test]
    fn canny_rejects_flat_images() {
        let img = Array2::from_elem((8, 8), 0.5);
        assert!(matches!(
            canny_edges(&img, 0.1, 0.2),
            Err(Error::EmptyEdgeSet)
        ));
    }

    #[test]
    fn canny_rejects_bad_thresholds() {
        let img = step_image(8, 8, 4, 0.0, 1.0);
        assert!(canny_edges(&img, 0.5, 0.2).is_err());
        assert!(canny_edges(&img, 0.0, 0.2).is_err());
        assert!(canny_edges(&img, 0.1, 1.5).is_err());
    }

    #[test]
    fn nms_thins_the_step_to_sparse_columns() {
        let img = step_image(16, 16, 8, 0.0, 1.0);
        let edges = canny_edges(&img, CANNY_LOW_FRAC, CANNY_HIGH_FRAC).unwrap();
        // Each row crossed by the edge keeps at most a couple of pixels
        // (perfect thinning gives 1-2 with symmetric magnitudes).
        let mut per_row = vec![0usize; 16];
        for &(r, _) in edges.coords() {
            per_row[r] += 1;
        }
        for (r, &n) in per_row.iter().enumerate() {
            assert!(n <= 3, "row {r} kept {n} edge pixels after NMS");
        }
    }

    #[test]
    fn see_is_zero_for_perfect_prediction() {
        let truth = step_image(16, 16, 8, 0.3, 0.7);
        let out = see(&truth, &truth).unwrap();
        assert_abs_diff_eq!(out, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn see_hand_computed_on_small_edge_set() {
        // Build an edge set manually to pin the formula: one edge pixel at
        // (1, 1), truth 0.5 there. Prediction within the 3x3 window has the
        // closest value 0.48 -> SEE = 10 * 0.02.
        let truth = Array2::from_elem((3, 3), 0.5);
        let mut predicted = Array2::from_elem((3, 3), 0.9);
        predicted[[0, 2]] = 0.48;
        let mut mask = Array2::from_elem((3, 3), false);
        mask[[1, 1]] = true;
        let edges = EdgeSet {
            mask,
            coords: vec![(1, 1)],
        };
        let out = see_with_edges(&predicted, &truth, &edges).unwrap();
        assert_abs_diff_eq!(out, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn see_forgives_one_pixel_misalignment_but_not_three() {
        let truth = step_image(16, 16, 8, 0.3, 0.7);
        // Shift the prediction's step by one column: every truth edge pixel
        // still finds its own value within the 3x3 window -> SEE == 0.
        let shifted_1 = step_image(16, 16, 9, 0.3, 0.7);
        let s1 = see(&shifted_1, &truth).unwrap();
        assert_abs_diff_eq!(s1, 0.0, epsilon = 1e-12);
        // A three-column shift moves the step outside the window for the
        // edge pixels on the high side -> positive error.
        let shifted_3 = step_image(16, 16, 11, 0.3, 0.7);
        let s3 = see(&shifted_3, &truth).unwrap();
        assert!(s3 > 0.0);
    }

    #[test]
    fn see_scales_with_depth_contrast() {
        let narrow = step_image(16, 16, 8, 0.3, 0.7);
        let wide = step_image(16, 16, 8, 0.1, 0.9);
        let flat = Array2::from_elem((16, 16), 0.5);
        let e_narrow = see(&flat, &narrow).unwrap();
        let e_wide = see(&flat, &wide).unwrap();
        // A flat mid-plane guess misses every edge pixel by half the step
        // height, so doubling the contrast doubles the score. Both truths
        // share the same edge set because thresholds are relative.
        assert_abs_diff_eq!(e_narrow, 10.0 * 0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(e_wide, 2.0 * e_narrow, epsilon = 1e-9);
    }
}

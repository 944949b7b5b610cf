//! Convolution and activation kernels with hand-written backward passes.
//!
//! Feature maps are `Array3<f64>` in `(channels, rows, cols)` order.
//! Kernels are flat `f64` slices indexed `[out][in][ky][kx]` with 3x3
//! spatial taps. Convolution is spatial cross-correlation with replicate
//! padding and no bias, so output shapes equal input shapes.

use ndarray::{s, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of spatial taps per kernel (3x3).
pub const KERNEL_TAPS: usize = 9;

// ===========================================================================
// Padding
// ===========================================================================

/// Pads every channel by one pixel on each side, replicating the border.
fn replicate_pad(input: &Array3<f64>) -> Array3<f64> {
    let (ch, rows, cols) = input.dim();
    let mut padded = Array3::zeros((ch, rows + 2, cols + 2));
    for c in 0..ch {
        let src = input.index_axis(Axis(0), c);
        let mut dst = padded.index_axis_mut(Axis(0), c);
        dst.slice_mut(s![1..rows + 1, 1..cols + 1]).assign(&src);
        for pr in 0..rows + 2 {
            let sr = (pr as i64 - 1).clamp(0, rows as i64 - 1) as usize;
            for pc in 0..cols + 2 {
                let sc = (pc as i64 - 1).clamp(0, cols as i64 - 1) as usize;
                if (1..=rows).contains(&pr) && (1..=cols).contains(&pc) {
                    continue; // interior already copied
                }
                dst[[pr, pc]] = src[[sr, sc]];
            }
        }
    }
    padded
}

/// Adjoint of [`replicate_pad`]: folds a padded-shape gradient back onto the
/// unpadded shape by accumulating every padded cell into the source pixel it
/// replicated.
fn fold_replicate_pad(grad_padded: &Array3<f64>) -> Array3<f64> {
    let (ch, prows, pcols) = grad_padded.dim();
    let (rows, cols) = (prows - 2, pcols - 2);
    let mut out = Array3::zeros((ch, rows, cols));
    for c in 0..ch {
        for pr in 0..prows {
            let sr = (pr as i64 - 1).clamp(0, rows as i64 - 1) as usize;
            for pc in 0..pcols {
                let sc = (pc as i64 - 1).clamp(0, cols as i64 - 1) as usize;
                out[[c, sr, sc]] += grad_padded[[c, pr, pc]];
            }
        }
    }
    out
}

// ===========================================================================
// Convolution
// ===========================================================================

fn check_kernel(kernel: &[f64], c_out: usize, c_in: usize) -> Result<()> {
    let expected = c_out * c_in * KERNEL_TAPS;
    if kernel.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv3x3 kernel",
            expected: format!("{expected} ({c_out}x{c_in}x3x3)"),
            actual: format!("{}", kernel.len()),
        });
    }
    Ok(())
}

/// 3x3 cross-correlation with replicate padding, no bias.
///
/// `kernel` holds `c_out * c_in * 9` values in `[out][in][ky][kx]` order.
pub fn conv3x3(input: &Array3<f64>, kernel: &[f64], c_out: usize) -> Result<Array3<f64>> {
    let (c_in, rows, cols) = input.dim();
    check_kernel(kernel, c_out, c_in)?;
    let padded = replicate_pad(input);
    let mut out = Array3::zeros((c_out, rows, cols));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(o, mut plane)| {
            for i in 0..c_in {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let tap = kernel[((o * c_in + i) * 3 + ky) * 3 + kx];
                        if tap != 0.0 {
                            plane.scaled_add(
                                tap,
                                &padded.slice(s![i, ky..ky + rows, kx..kx + cols]),
                            );
                        }
                    }
                }
            }
        });
    Ok(out)
}

fn dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

/// Reverse-mode pass for [`conv3x3`].
///
/// Given the forward input and the gradient of the loss with respect to the
/// output, returns `(grad_input, grad_kernel)`.
pub fn conv3x3_backward(
    input: &Array3<f64>,
    kernel: &[f64],
    c_out: usize,
    grad_out: &Array3<f64>,
) -> Result<(Array3<f64>, Vec<f64>)> {
    let (c_in, rows, cols) = input.dim();
    check_kernel(kernel, c_out, c_in)?;
    if grad_out.dim() != (c_out, rows, cols) {
        return Err(Error::ShapeMismatch {
            context: "conv3x3 output gradient",
            expected: format!("{c_out}x{rows}x{cols}"),
            actual: format!("{:?}", grad_out.dim()),
        });
    }
    let padded = replicate_pad(input);

    // d loss / d kernel[o,i,ky,kx] = <grad_out[o], padded_window[i,ky,kx]>.
    let mut grad_kernel = vec![0.0; kernel.len()];
    grad_kernel
        .par_chunks_mut(c_in * KERNEL_TAPS)
        .enumerate()
        .for_each(|(o, chunk)| {
            let g = grad_out.index_axis(Axis(0), o);
            for i in 0..c_in {
                for ky in 0..3 {
                    for kx in 0..3 {
                        chunk[(i * 3 + ky) * 3 + kx] =
                            dot(g, padded.slice(s![i, ky..ky + rows, kx..kx + cols]));
                    }
                }
            }
        });

    // d loss / d input: scatter grad_out through the taps onto the padded
    // shape, then fold the replicate border back.
    let mut grad_padded = Array3::zeros((c_in, rows + 2, cols + 2));
    grad_padded
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut plane)| {
            for o in 0..c_out {
                let g = grad_out.index_axis(Axis(0), o);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let tap = kernel[((o * c_in + i) * 3 + ky) * 3 + kx];
                        if tap != 0.0 {
                            plane
                                .slice_mut(s![ky..ky + rows, kx..kx + cols])
                                .scaled_add(tap, &g);
                        }
                    }
                }
            }
        });
    Ok((fold_replicate_pad(&grad_padded), grad_kernel))
}

// ===========================================================================
// Activations
// ===========================================================================

/// Leaky rectifier: `x` for `x >= 0`, else `slope * x`.
pub fn leaky_relu(input: &Array3<f64>, slope: f64) -> Array3<f64> {
    input.mapv(|x| if x >= 0.0 { x } else { slope * x })
}

/// Backward pass of [`leaky_relu`]; `pre` is the forward input. The
/// derivative at exactly zero uses the positive branch.
pub fn leaky_relu_backward(pre: &Array3<f64>, slope: f64, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    Zip::from(&mut g).and(pre).for_each(|gv, &x| {
        if x < 0.0 {
            *gv *= slope;
        }
    });
    g
}

/// Elementwise logistic function.
pub fn sigmoid(input: &Array3<f64>) -> Array3<f64> {
    input.mapv(|x| 1.0 / (1.0 + (-x).exp()))
}

/// Backward pass of [`sigmoid`]; `out` is the forward output.
pub fn sigmoid_backward(out: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    Zip::from(&mut g).and(out).for_each(|gv, &y| {
        *gv *= y * (1.0 - y);
    });
    g
}

// ===========================================================================
// Tests
// ===========================================================================

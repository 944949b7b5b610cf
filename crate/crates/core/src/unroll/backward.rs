//! Training loss and hand-written reverse-mode gradients.
//!
//! The loss is the stage-wise l1 distance to the reference depth,
//! `sum_k sum_n |x^k_n - x*_n|`, accumulated in 64-bit floats. The backward
//! pass walks the stages in reverse, undoing exactly the forward graph:
//! convex combination -> group attention -> expansion features -> absolute
//! difference -> selection -> attention chain -> feature chain. The hard
//! selection is differentiated with the straight-through convention: the
//! depth gradient routes to the selected plane, while the selection logits
//! receive the Gumbel-softmax surrogate's gradient. `|.|` uses subgradient
//! zero at zero.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::unroll::forward::{ForwardRun, SelectionMode, StageTape};
use crate::unroll::tensor::{conv3x3_backward, leaky_relu, leaky_relu_backward};
use crate::unroll::weights::NetworkWeights;
use crate::unroll::{NetConfig, RHO};

// ===========================================================================
// Loss
// ===========================================================================

/// Stage-summed l1 loss: `sum_k sum_n |x^k_n - truth_n|`.
pub fn loss(run: &ForwardRun, truth: &Array2<f64>) -> Result<f64> {
    if truth.dim() != run.depth.dim() {
        return Err(Error::ShapeMismatch {
            context: "loss reference depth",
            expected: format!("{:?}", run.depth.dim()),
            actual: format!("{:?}", truth.dim()),
        });
    }
    Ok(run
        .stage_depths
        .iter()
        .map(|x| {
            x.iter()
                .zip(truth.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum())
}

fn signum_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ===========================================================================
// Chain helpers
// ===========================================================================

/// Kernel slices with their gradient offsets for one named block.
fn block_with_offsets<'w>(
    weights: &'w NetworkWeights,
    stage: usize,
    block: &str,
    count: usize,
) -> Result<Vec<(&'w [f64], usize, usize)>> {
    (0..count)
        .map(|i| {
            let name = format!("s{stage}.{block}.conv{i}");
            let offset = weights.spec(&name)?.offset;
            let (kernel, c_out, _c_in) = weights.tensor_with_dims(&name)?;
            Ok((kernel, c_out, offset))
        })
        .collect()
}

/// Reverse pass through `conv -> (lrelu -> conv)*`.
///
/// `g_pre` is the loss gradient at the last conv's pre-activation output
/// (the caller has already undone any final activation). Kernel gradients
/// accumulate into `grads`; the return value is the gradient at the chain
/// input.
fn chain_backward(
    input: &Array3<f64>,
    pres: &[Array3<f64>],
    kernels: &[(&[f64], usize, usize)],
    slope: f64,
    mut g_pre: Array3<f64>,
    grads: &mut [f64],
) -> Result<Array3<f64>> {
    debug_assert_eq!(pres.len(), kernels.len());
    for j in (0..kernels.len()).rev() {
        let (kernel, c_out, offset) = kernels[j];
        let owned;
        let layer_input: &Array3<f64> = if j == 0 {
            input
        } else {
            owned = leaky_relu(&pres[j - 1], slope);
            &owned
        };
        let (g_in, g_kernel) = conv3x3_backward(layer_input, kernel, c_out, &g_pre)?;
        for (dst, src) in grads[offset..offset + g_kernel.len()]
            .iter_mut()
            .zip(&g_kernel)
        {
            *dst += src;
        }
        if j == 0 {
            return Ok(g_in);
        }
        g_pre = leaky_relu_backward(&pres[j - 1], slope, &g_in);
    }
    unreachable!("conv chains always hold at least one layer")
}

// ===========================================================================
// Backward
// ===========================================================================

/// Exact reverse-mode gradients of `loss_scale * loss(run, truth)` with
/// respect to every kernel, returned as a flat vector aligned with
/// [`NetworkWeights::data`].
///
/// The run must have been produced with `with_tape = true`. In
/// `StraightThrough` mode the selection uses the straight-through
/// surrogate; in `Soft` mode the graph is differentiated exactly; in
/// `Infer` mode the selection logits receive no gradient (the hard argmax
/// is piecewise constant).
pub fn backward(
    run: &ForwardRun,
    weights: &NetworkWeights,
    config: &NetConfig,
    truth: &Array2<f64>,
    loss_scale: f64,
) -> Result<Vec<f64>> {
    let tapes: &[StageTape] = run.tape.as_deref().ok_or(Error::MissingTape)?;
    if truth.dim() != run.depth.dim() {
        return Err(Error::ShapeMismatch {
            context: "loss reference depth",
            expected: format!("{:?}", run.depth.dim()),
            actual: format!("{:?}", truth.dim()),
        });
    }
    let stages = config.stages;
    let l = config.scales;
    let slope = config.leaky_slope;
    let (rows, cols) = run.depth.dim();
    let mut grads = vec![0.0; weights.len()];

    // Gradient with respect to the input stack of the stage *after* the one
    // being processed (i.e. the refined output of the current stage).
    let mut g_next_input: Array3<f64> = Array3::zeros((l, rows, cols));

    for k in (0..stages).rev() {
        let stage = k + 1;
        let tape = &tapes[k];

        // -- loss contribution at this stage's squeezed depth ---------------
        let mut g_x = Array2::from_shape_fn((rows, cols), |(r, c)| {
            loss_scale * signum_zero(tape.x[[r, c]] - truth[[r, c]])
        });
        let mut g_stack = Array3::zeros((l, rows, cols));
        let mut g_dfeat = Array3::zeros((l, rows, cols));

        // -- expansion block (absent in the last stage) ----------------------
        if let Some(exp) = &tape.exp {
            let g_refined = &g_next_input;

            // Convex combination d_bar = x + wbar (S - x); the safety clamp
            // is inactive except at rounding boundaries, so it
            // backpropagates as the identity.
            let mut g_wbar = Array3::zeros((l, rows, cols));
            for s in 0..l {
                for r in 0..rows {
                    for c in 0..cols {
                        let gr = g_refined[[s, r, c]];
                        if gr == 0.0 {
                            continue;
                        }
                        let sv = tape.stack[[s, r, c]];
                        let xv = tape.x[[r, c]];
                        let wv = exp.wbar[[s, r, c]];
                        g_wbar[[s, r, c]] = gr * (sv - xv);
                        g_stack[[s, r, c]] += gr * wv;
                        g_x[[r, c]] += gr * (1.0 - wv);
                    }
                }
            }

            // wbar = sigmoid(rho (z0 - z1)) per scale.
            let mut g_diff_feat = Array3::zeros((l, rows, cols));
            for s in 0..l {
                let mut g_z = Array3::zeros((2, rows, cols));
                for r in 0..rows {
                    for c in 0..cols {
                        let wv = exp.wbar[[s, r, c]];
                        let g_arg = g_wbar[[s, r, c]] * wv * (1.0 - wv);
                        g_z[[0, r, c]] = RHO * g_arg;
                        g_z[[1, r, c]] = -RHO * g_arg;
                    }
                }
                let gp_kernels = block_with_offsets(weights, stage, &format!("gp{s}"), 4)?;
                let g_sub = chain_backward(
                    &exp.gp_inputs[s],
                    &exp.gp_pres[s],
                    &gp_kernels,
                    slope,
                    g_z,
                    &mut grads,
                )?;
                g_dfeat
                    .index_axis_mut(Axis(0), s)
                    .scaled_add(1.0, &g_sub.index_axis(Axis(0), 0));
                g_diff_feat
                    .index_axis_mut(Axis(0), s)
                    .scaled_add(1.0, &g_sub.index_axis(Axis(0), 1));
            }

            // diff_feat = lrelu(ef_pres[2]); ef chain input is |S - x|.
            let ef_kernels = block_with_offsets(weights, stage, "ef", 3)?;
            let g_ef_pre = leaky_relu_backward(&exp.ef_pres[2], slope, &g_diff_feat);
            let g_diff = chain_backward(
                &exp.diff,
                &exp.ef_pres,
                &ef_kernels,
                slope,
                g_ef_pre,
                &mut grads,
            )?;

            // |S - x| with subgradient 0 at ties.
            for s in 0..l {
                for r in 0..rows {
                    for c in 0..cols {
                        let g = g_diff[[s, r, c]] * exp.sign[[s, r, c]];
                        g_stack[[s, r, c]] += g;
                        g_x[[r, c]] -= g;
                    }
                }
            }
        }

        // -- selection -------------------------------------------------------
        let mut g_logits = Array3::zeros((l, rows, cols));
        match run.mode {
            SelectionMode::Infer => {
                let hard = tape.hard.as_ref().expect("hard index stored at inference");
                for r in 0..rows {
                    for c in 0..cols {
                        g_stack[[hard[[r, c]], r, c]] += g_x[[r, c]];
                    }
                }
            }
            SelectionMode::StraightThrough | SelectionMode::Soft => {
                let soft = tape
                    .soft
                    .as_ref()
                    .expect("soft weights stored when training");
                // x_soft = sum_s y_s S_s drives the logits gradient in both
                // trainable modes.
                let x_soft = (soft * &tape.stack).sum_axis(Axis(0));
                for r in 0..rows {
                    for c in 0..cols {
                        let gx = g_x[[r, c]];
                        if gx != 0.0 {
                            for s in 0..l {
                                g_logits[[s, r, c]] =
                                    gx * soft[[s, r, c]] * (tape.stack[[s, r, c]] - x_soft[[r, c]])
                                        / config.tau;
                            }
                        }
                    }
                }
                match run.mode {
                    SelectionMode::StraightThrough => {
                        let hard = tape.hard.as_ref().expect("hard index stored");
                        for r in 0..rows {
                            for c in 0..cols {
                                g_stack[[hard[[r, c]], r, c]] += g_x[[r, c]];
                            }
                        }
                    }
                    SelectionMode::Soft => {
                        for s in 0..l {
                            for r in 0..rows {
                                for c in 0..cols {
                                    g_stack[[s, r, c]] += g_x[[r, c]] * soft[[s, r, c]];
                                }
                            }
                        }
                    }
                    SelectionMode::Infer => unreachable!(),
                }
            }
        }

        // -- attention chain: logits = att * d_feat --------------------------
        let g_att = &g_logits * &tape.d_feat;
        g_dfeat += &(&g_logits * &tape.att);
        // att = sigmoid(pa_pres[3]).
        let mut g_pa_pre = g_att;
        ndarray::Zip::from(&mut g_pa_pre)
            .and(&tape.att)
            .for_each(|g, &y| {
                *g *= y * (1.0 - y);
            });
        let pa_kernels = block_with_offsets(weights, stage, "pa", 4)?;
        g_dfeat += &chain_backward(
            &tape.d_feat,
            &tape.pa_pres,
            &pa_kernels,
            slope,
            g_pa_pre,
            &mut grads,
        )?;

        // -- feature chain: d_feat = lrelu(fe_pres[2]), input S^k ------------
        let fe_kernels = block_with_offsets(weights, stage, "fe", 3)?;
        let g_fe_pre = leaky_relu_backward(&tape.fe_pres[2], slope, &g_dfeat);
        g_stack += &chain_backward(
            &tape.stack,
            &tape.fe_pres,
            &fe_kernels,
            slope,
            g_fe_pre,
            &mut grads,
        )?;

        g_next_input = g_stack;
    }

    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("network gradients".into()));
    }
    Ok(grads)
}

// ===========================================================================
// Tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unroll::forward::forward;
    use crate::unroll::sample_gumbel_noise;
    use ndarray::Array3;

    fn random_stack(l: usize, rows: usize, cols: usize, seed: u64) -> Array3<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(17);
        Array3::from_shape_fn((l, rows, cols), |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            0.2 + 0.6 * ((state >> 11) as f64 / (1u64 << 53) as f64)
        })
    }

    #[test]
    fn loss_is_zero_for_perfect_prediction_and_additive_in_offsets() {
        let cfg = NetConfig::new(2, 3, 5).unwrap();
        let weights = NetworkWeights::init(&cfg).unwrap();
        let stack = Array3::from_elem((3, 4, 5), 0.4);
        let run = forward(&stack, &weights, &cfg, SelectionMode::Infer, None, false).unwrap();
        // Constant stack: every stage emits exactly 0.4.
        let truth = Array2::from_elem((4, 5), 0.4);
        assert_eq!(loss(&run, &truth).unwrap(), 0.0);
        // Shifting the truth by 0.1 costs K * N * 0.1.
        let shifted = Array2::from_elem((4, 5), 0.5);
        let expected = 2.0 * 20.0 * 0.1;
        assert!((loss(&run, &shifted).unwrap() - expected).abs() < 1e-12);
        // Shape mismatch is an error.
        assert!(loss(&run, &Array2::zeros((4, 4))).is_err());
    }

    #[test]
    fn gradients_vanish_at_a_tie_free_perfect_prediction() {
        // Constant stack + matching truth: loss 0 and sign(0) = 0, so every
        // gradient is exactly zero.
        let cfg = NetConfig::new(3, 4, 7).unwrap();
        let weights = NetworkWeights::init(&cfg).unwrap();
        let stack = Array3::from_elem((4, 6, 6), 0.31);
        let truth = Array2::from_elem((6, 6), 0.31);
        let noise = sample_gumbel_noise(3, 4, 6, 6, 1);
        let run = forward(
            &stack,
            &weights,
            &cfg,
            SelectionMode::StraightThrough,
            Some(&noise),
            true,
        )
        .unwrap();
        let grads = backward(&run, &weights, &cfg, &truth, 1.0).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_requires_the_tape() {
        let cfg = NetConfig::new(2, 3, 3).unwrap();
        let weights = NetworkWeights::init(&cfg).unwrap();
        let stack = random_stack(3, 4, 4, 8);
        let truth = Array2::zeros((4, 4));
        let run = forward(&stack, &weights, &cfg, SelectionMode::Soft, None, false).unwrap();
        assert!(matches!(
            backward(&run, &weights, &cfg, &truth, 1.0),
            Err(Error::MissingTape)
        ));
    }

    #[test]
    fn scaling_the_loss_scales_every_gradient_exactly() {
        let cfg = NetConfig::new(2, 3, 11).unwrap();
        let weights = NetworkWeights::init(&cfg).unwrap();
        let stack = random_stack(3, 5, 5, 21);
        let truth = Array2::from_elem((5, 5), -0.3); // keeps |.| away from 0
        let noise = sample_gumbel_noise(2, 3, 5, 5, 2);
        let run = forward(
            &stack,
            &weights,
            &cfg,
            SelectionMode::StraightThrough,
            Some(&noise),
            true,
        )
        .unwrap();
        let g1 = backward(&run, &weights, &cfg, &truth, 1.0).unwrap();
        let g2 = backward(&run, &weights, &cfg, &truth, 2.0).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b, "doubling the loss must double the gradient");
        }
    }

    /// Full-graph finite-difference check in the everywhere-differentiable
    /// configuration: soft selection and unit leaky slope (the piecewise
    /// pieces coincide, so the finite-difference oracle is valid), frozen
    /// noise, and a truth offset keeping every |.| away from its kink.
    #[test]
    fn soft_mode_gradients_match_central_differences() {
        let mut cfg = NetConfig::new(2, 3, 13).unwrap();
        cfg.leaky_slope = 1.0;
        let mut weights = NetworkWeights::init(&cfg).unwrap();
        let stack = random_stack(3, 5, 4, 33);
        let noise = sample_gumbel_noise(2, 3, 5, 4, 3);
        let truth = Array2::from_elem((5, 4), -0.25);

        let run = forward(
            &stack,
            &weights,
            &cfg,
            SelectionMode::Soft,
            Some(&noise),
            true,
        )
        .unwrap();
        // Margin checks: the loss and the expansion's |S - x| stay away
        // from their kinks over the probe interval.
        for x in &run.stage_depths {
            for (&xv, &tv) in x.iter().zip(truth.iter()) {
                assert!((xv - tv).abs() > 1e-2);
            }
        }
        let analytic = backward(&run, &weights, &cfg, &truth, 1.0).unwrap();

        let h = 1e-5;
        let n = weights.len();
        for idx in (0..n).step_by(7) {
            let orig = weights.data()[idx];
            weights.data_mut()[idx] = orig + h;
            let up = loss(
                &forward(
                    &stack,
                    &weights,
                    &cfg,
                    SelectionMode::Soft,
                    Some(&noise),
                    false,
                )
                .unwrap(),
                &truth,
            )
            .unwrap();
            weights.data_mut()[idx] = orig - h;
            let down = loss(
                &forward(
                    &stack,
                    &weights,
                    &cfg,
                    SelectionMode::Soft,
                    Some(&noise),
                    false,
                )
                .unwrap(),
                &truth,
            )
            .unwrap();
            weights.data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = analytic[idx].abs().max(fd.abs()).max(1.0);
            assert!(
                (analytic[idx] - fd).abs() / denom < 1e-6,
                "param {idx}: analytic {} vs fd {fd}",
                analytic[idx]
            );
        }
    }

    /// Straight-through routing check: with a huge temperature the logits
    /// gradient vanishes, the frozen hard selection makes the forward map
    /// locally smooth, and finite differences must match the routed
    /// gradient.
    #[test]
    fn straight_through_routing_matches_central_differences_at_high_temperature() {
        let mut cfg = NetConfig::new(2, 3, 17).unwrap();
        cfg.leaky_slope = 1.0;
        cfg.tau = 1e9;
        let mut weights = NetworkWeights::init(&cfg).unwrap();
        let stack = random_stack(3, 4, 4, 55);
        let noise = sample_gumbel_noise(2, 3, 4, 4, 4);
        let truth = Array2::from_elem((4, 4), -0.25);

        let run = forward(
            &stack,
            &weights,
            &cfg,
            SelectionMode::StraightThrough,
            Some(&noise),
            true,
        )
        .unwrap();
        let analytic = backward(&run, &weights, &cfg, &truth, 1.0).unwrap();

        let h = 1e-5;
        for idx in (0..weights.len()).step_by(5) {
            let orig = weights.data()[idx];
            weights.data_mut()[idx] = orig + h;
            let up = loss(
                &forward(
                    &stack,
                    &weights,
                    &cfg,
                    SelectionMode::StraightThrough,
                    Some(&noise),
                    false,
                )
                .unwrap(),
                &truth,
            )
            .unwrap();
            weights.data_mut()[idx] = orig - h;
            let down = loss(
                &forward(
                    &stack,
                    &weights,
                    &cfg,
                    SelectionMode::StraightThrough,
                    Some(&noise),
                    false,
                )
                .unwrap(),
                &truth,
            )
            .unwrap();
            weights.data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (analytic[idx] - fd).abs() < 1e-5,
                "param {idx}: routed {} vs fd {fd}",
                analytic[idx]
            );
        }
    }
}

//! Staged forward pass of the unrolled network.
//!
//! Stage `k` (of `K`) receives the current multiscale stack `S^k` of `L`
//! depth planes and computes:
//!
//! 1. features `d_feat = fe(S^k)` — three 3x3 convs with leaky rectifier;
//! 2. squeeze: attention `a = sigmoid(pa(d_feat))` (four convs), selection
//!    logits `w = a * d_feat`, and the squeezed depth `x^k` selected from
//!    `S^k` per pixel (hard attention, or its soft/straight-through
//!    relaxations during training);
//! 3. expansion (all stages but the last): difference features
//!    `ef(|S^k - x^k|)` (three convs), per-scale two-channel group attention
//!    (four convs each) producing weights `wbar` through a two-way softmax
//!    sharpened by [`RHO`](crate::unroll::RHO), and the refined stack
//!    `S^{k+1}_l = x + wbar_l (S^k_l - x)`, clamped to the per-pixel
//!    interval `[min(S_l, x), max(S_l, x)]` so the convex-combination bound
//!    holds exactly in floating point.
//!
//! The run also reports the per-stage change diagnostic
//! `delta^k = (1/(L+2)) sum_l |x^k - S^k_l|` and the uncertainty map
//! `epsilon = mean_k (C^k + beta) / (L + 2 + alpha)` with
//! `C^k = sum_l wdd^k_l |S^k_l - x^K|`, where `wdd^k` is the softmax over
//! scales of `1 - wbar^k`.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::types::DepthMap;
use crate::unroll::tensor::{conv3x3, leaky_relu, sigmoid};
use crate::unroll::weights::NetworkWeights;
use crate::unroll::{NetConfig, RHO};

/// Inverse-gamma shape hyper-parameter of the uncertainty formula; matches
/// the iterative algorithm's default.
pub const ALPHA_D: f64 = 0.01;
/// Inverse-gamma scale hyper-parameter of the uncertainty formula.
pub const BETA_D: f64 = 0.01;

// ===========================================================================
// Selection modes
// ===========================================================================

/// How the squeeze block turns selection logits into a depth choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Deterministic hard argmax (ties break to the smallest scale index).
    Infer,
    /// Hard argmax of Gumbel-perturbed softmax in the forward pass;
    /// gradients flow through the soft weights (straight-through).
    StraightThrough,
    /// Fully soft Gumbel-softmax mixture — differentiable everywhere, used
    /// for gradient verification.
    Soft,
}

// ===========================================================================
// Traces and tape
// ===========================================================================

/// Per-stage public outputs.
#[derive(Debug, Clone)]
pub struct StageTrace {
    /// The squeezed depth `x^k`.
    pub squeezed: Array2<f64>,
    /// Selection weights as emitted by the forward pass: one-hot in
    /// `Infer`/`StraightThrough` modes, the softmax mixture in `Soft` mode.
    pub selection: Array3<f64>,
    /// Expansion weights `wbar` in `[0, 1]`; `None` for the last stage.
    pub expansion: Option<Array3<f64>>,
    /// Refined stack handed to the next stage; `None` for the last stage.
    pub refined: Option<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ExpTape {
    /// `sign(S_l - x)` with the zero-at-zero convention.
    pub sign: Array3<f64>,
    /// `|S_l - x|`, the input of the expansion feature chain.
    pub diff: Array3<f64>,
    /// Pre-activations of the expansion feature chain.
    pub ef_pres: Vec<Array3<f64>>,
    /// Per-scale group-attention chains: two-channel input and
    /// pre-activations.
    pub gp_inputs: Vec<Array3<f64>>,
    pub gp_pres: Vec<Vec<Array3<f64>>>,
    pub wbar: Array3<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageTape {
    /// Stack input `S^k` (also the input of the feature chain).
    pub stack: Array3<f64>,
    /// Pre-activations of the feature-extraction chain.
    pub fe_pres: Vec<Array3<f64>>,
    /// Feature maps (input of the attention chain and the selection
    /// logits' second factor).
    pub d_feat: Array3<f64>,
    /// Pre-activations of the attention chain.
    pub pa_pres: Vec<Array3<f64>>,
    /// Sigmoid output of the attention chain.
    pub att: Array3<f64>,
    /// Soft selection weights (softmax of perturbed logits), kept in the
    /// trainable modes.
    pub soft: Option<Array3<f64>>,
    /// Hard selection index, kept in the hard modes.
    pub hard: Option<Array2<usize>>,
    pub x: Array2<f64>,
    pub exp: Option<ExpTape>,
}

/// Output of [`forward`]: final depth, per-stage traces and diagnostics,
/// and (in training) the retained activations needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub depth: Array2<f64>,
    /// Squeezed depth of every stage (`stage_depths.last()` equals `depth`).
    pub stage_depths: Vec<Array2<f64>>,
    pub traces: Vec<StageTrace>,
    /// Per-stage change diagnostic `delta^k`.
    pub delta: Vec<Array2<f64>>,
    /// Uncertainty map `epsilon`.
    pub epsilon: Array2<f64>,
    pub(crate) mode: SelectionMode,
    pub(crate) tape: Option<Vec<StageTape>>,
}

impl ForwardRun {
    /// Final depth as a validated map (values must lie in `[0, 1]`).
    pub fn depth_map(&self) -> Result<DepthMap> {
        DepthMap::new(self.depth.clone())
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }
}

// ===========================================================================
// Internals
// ===========================================================================

/// Applies `conv -> (lrelu -> conv)*` and retains every pre-activation.
/// The caller owns the final activation.
fn conv_chain(
    input: &Array3<f64>,
    kernels: &[(&[f64], usize)],
    slope: f64,
) -> Result<Vec<Array3<f64>>> {
    let mut pres: Vec<Array3<f64>> = Vec::with_capacity(kernels.len());
    for (idx, (kernel, c_out)) in kernels.iter().enumerate() {
        let out = if idx == 0 {
            conv3x3(input, kernel, *c_out)?
        } else {
            let act = leaky_relu(&pres[idx - 1], slope);
            conv3x3(&act, kernel, *c_out)?
        };
        pres.push(out);
    }
    Ok(pres)
}

pub(crate) fn block_kernels<'w>(
    weights: &'w NetworkWeights,
    stage: usize,
    block: &str,
    count: usize,
) -> Result<Vec<(&'w [f64], usize)>> {
    (0..count)
        .map(|i| {
            let (k, c_out, _c_in) =
                weights.tensor_with_dims(&format!("s{stage}.{block}.conv{i}"))?;
            Ok((k, c_out))
        })
        .collect()
}

/// Per-pixel softmax over the scale axis.
pub(crate) fn softmax_scales(values: &Array3<f64>) -> Array3<f64> {
    let (l, rows, cols) = values.dim();
    let mut out = Array3::zeros((l, rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut peak = f64::NEG_INFINITY;
            for s in 0..l {
                peak = peak.max(values[[s, r, c]]);
            }
            let mut sum = 0.0;
            for s in 0..l {
                let e = (values[[s, r, c]] - peak).exp();
                out[[s, r, c]] = e;
                sum += e;
            }
            for s in 0..l {
                out[[s, r, c]] /= sum;
            }
        }
    }
    out
}

/// Per-pixel argmax over the scale axis; ties break to the smallest index.
fn argmax_scales(values: &Array3<f64>) -> Array2<usize> {
    let (l, rows, cols) = values.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let mut best = 0;
        let mut best_v = values[[0, r, c]];
        for s in 1..l {
            if values[[s, r, c]] > best_v {
                best_v = values[[s, r, c]];
                best = s;
            }
        }
        best
    })
}

fn one_hot(indices: &Array2<usize>, scales: usize) -> Array3<f64> {
    let (rows, cols) = indices.dim();
    let mut out = Array3::zeros((scales, rows, cols));
    for ((r, c), &s) in indices.indexed_iter() {
        out[[s, r, c]] = 1.0;
    }
    out
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
// Forward
// ===========================================================================

/// Runs the network on a `(scales, rows, cols)` depth stack.
///
/// `noise` supplies per-stage Gumbel fields for the trainable modes (see
/// [`sample_gumbel_noise`](crate::unroll::sample_gumbel_noise)); `None`
/// means zero noise. Pass `with_tape = true` to retain the activations
/// needed by [`backward`](crate::unroll::backward).
pub fn forward(
    stack: &Array3<f64>,
    weights: &NetworkWeights,
    config: &NetConfig,
    mode: SelectionMode,
    noise: Option<&[Array3<f64>]>,
    with_tape: bool,
) -> Result<ForwardRun> {
    config.validate()?;
    let (l, rows, cols) = stack.dim();
    if l != config.scales || weights.scales() != l || weights.stages() != config.stages {
        return Err(Error::ShapeMismatch {
            context: "network input",
            expected: format!(
                "{} scales, weights for {}x{}",
                config.scales, config.stages, config.scales
            ),
            actual: format!(
                "{l} scales, weights {}x{}",
                weights.stages(),
                weights.scales()
            ),
        });
    }
    if stack.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input stack".into()));
    }
    if let Some(fields) = noise {
        if fields.len() < config.stages {
            return Err(Error::ShapeMismatch {
                context: "gumbel noise fields",
                expected: format!("{}", config.stages),
                actual: format!("{}", fields.len()),
            });
        }
        for f in &fields[..config.stages] {
            if f.dim() != (l, rows, cols) {
                return Err(Error::ShapeMismatch {
                    context: "gumbel noise field",
                    expected: format!("{l}x{rows}x{cols}"),
                    actual: format!("{:?}", f.dim()),
                });
            }
        }
    }

    let stages = config.stages;
    let slope = config.leaky_slope;
    let mut s_cur = stack.clone();
    let mut traces = Vec::with_capacity(stages);
    let mut tapes: Vec<StageTape> = Vec::new();
    let mut stage_depths = Vec::with_capacity(stages);
    let mut deltas = Vec::with_capacity(stages);
    // Retained for the uncertainty map: (stage stack, wbar) per full stage.
    let mut eps_inputs: Vec<(Array3<f64>, Array3<f64>)> = Vec::new();

    for k in 0..stages {
        let stage = k + 1;
        let last = k + 1 == stages;

        // ---- feature extraction ------------------------------------------
        let fe_kernels = block_kernels(weights, stage, "fe", 3)?;
        let fe_pres = conv_chain(&s_cur, &fe_kernels, slope)?;
        let d_feat = leaky_relu(&fe_pres[2], slope);

        // ---- squeeze -------------------------------------------------------
        let pa_kernels = block_kernels(weights, stage, "pa", 4)?;
        let pa_pres = conv_chain(&d_feat, &pa_kernels, slope)?;
        let att = sigmoid(&pa_pres[3]);
        let logits = &att * &d_feat;

        let (x, selection, soft, hard) = match mode {
            SelectionMode::Infer => {
                let idx = argmax_scales(&logits);
                let x = Array2::from_shape_fn((rows, cols), |(r, c)| s_cur[[idx[[r, c]], r, c]]);
                (x, one_hot(&idx, l), None, Some(idx))
            }
            SelectionMode::StraightThrough | SelectionMode::Soft => {
                let mut pert = logits.clone();
                if let Some(fields) = noise {
                    pert += &fields[k];
                }
                pert.mapv_inplace(|v| v / config.tau);
                let soft = softmax_scales(&pert);
                if mode == SelectionMode::StraightThrough {
                    let idx = argmax_scales(&soft);
                    let x =
                        Array2::from_shape_fn((rows, cols), |(r, c)| s_cur[[idx[[r, c]], r, c]]);
                    (x, one_hot(&idx, l), Some(soft), Some(idx))
                } else {
                    let mut x = (&soft * &s_cur).sum_axis(Axis(0));
                    // The mixture is a convex combination, but the weights only
                    // sum to one up to rounding; clamp to the per-pixel hull so
                    // the stage output never escapes the stack range.
                    for r in 0..rows {
                        for c in 0..cols {
                            let mut lo = f64::INFINITY;
                            let mut hi = f64::NEG_INFINITY;
                            for s in 0..l {
                                lo = lo.min(s_cur[[s, r, c]]);
                                hi = hi.max(s_cur[[s, r, c]]);
                            }
                            x[[r, c]] = x[[r, c]].clamp(lo, hi);
                        }
                    }
                    (x, soft.clone(), Some(soft), None)
                }
            }
        };
        stage_depths.push(x.clone());

        // ---- stage change diagnostic ---------------------------------------
        let mut delta = Array2::zeros((rows, cols));
        for s in 0..l {
            for r in 0..rows {
                for c in 0..cols {
                    delta[[r, c]] += (x[[r, c]] - s_cur[[s, r, c]]).abs();
                }
            }
        }
        delta.mapv_inplace(|v| v / (l as f64 + 2.0));
        deltas.push(delta);

        // ---- expansion -----------------------------------------------------
        let (trace, tape_entry, s_next) = if last {
            let trace = StageTrace {
                squeezed: x.clone(),
                selection,
                expansion: None,
                refined: None,
            };
            let tape_entry = StageTape {
                stack: s_cur.clone(),
                fe_pres,
                d_feat,
                pa_pres,
                att,
                soft,
                hard,
                x,
                exp: None,
            };
            (trace, tape_entry, None)
        } else {
            let mut diff = Array3::zeros((l, rows, cols));
            let mut sign = Array3::zeros((l, rows, cols));
            for s in 0..l {
                for r in 0..rows {
                    for c in 0..cols {
                        let v = s_cur[[s, r, c]] - x[[r, c]];
                        diff[[s, r, c]] = v.abs();
                        sign[[s, r, c]] = signum_zero(v);
                    }
                }
            }
            let ef_kernels = block_kernels(weights, stage, "ef", 3)?;
            let ef_pres = conv_chain(&diff, &ef_kernels, slope)?;
            let diff_feat = leaky_relu(&ef_pres[2], slope);

            let mut wbar = Array3::zeros((l, rows, cols));
            let mut gp_inputs = Vec::with_capacity(l);
            let mut gp_pres_all = Vec::with_capacity(l);
            for s in 0..l {
                let mut sub = Array3::zeros((2, rows, cols));
                sub.index_axis_mut(Axis(0), 0)
                    .assign(&d_feat.index_axis(Axis(0), s));
                sub.index_axis_mut(Axis(0), 1)
                    .assign(&diff_feat.index_axis(Axis(0), s));
                let gp_kernels = block_kernels(weights, stage, &format!("gp{s}"), 4)?;
                let gp_pres = conv_chain(&sub, &gp_kernels, slope)?;
                // Two-way softmax of rho * z keeps channel 0:
                // wbar = 1 / (1 + exp(-rho (z0 - z1))).
                let z = &gp_pres[3];
                for r in 0..rows {
                    for c in 0..cols {
                        let arg = RHO * (z[[0, r, c]] - z[[1, r, c]]);
                        wbar[[s, r, c]] = 1.0 / (1.0 + (-arg).exp());
                    }
                }
                gp_inputs.push(sub);
                gp_pres_all.push(gp_pres);
            }

            let mut refined = Array3::zeros((l, rows, cols));
            for s in 0..l {
                for r in 0..rows {
                    for c in 0..cols {
                        let sv = s_cur[[s, r, c]];
                        let xv = x[[r, c]];
                        let (lo, hi) = if sv <= xv { (sv, xv) } else { (xv, sv) };
                        refined[[s, r, c]] = (xv + wbar[[s, r, c]] * (sv - xv)).clamp(lo, hi);
                    }
                }
            }

            eps_inputs.push((s_cur.clone(), wbar.clone()));
            let trace = StageTrace {
                squeezed: x.clone(),
                selection,
                expansion: Some(wbar.clone()),
                refined: Some(refined.clone()),
            };
            let tape_entry = StageTape {
                stack: s_cur.clone(),
                fe_pres,
                d_feat,
                pa_pres,
                att,
                soft,
                hard,
                x,
                exp: Some(ExpTape {
                    sign,
                    diff,
                    ef_pres,
                    gp_inputs,
                    gp_pres: gp_pres_all,
                    wbar,
                }),
            };
            (trace, tape_entry, Some(refined))
        };

        traces.push(trace);
        if with_tape {
            tapes.push(tape_entry);
        }
        if let Some(next) = s_next {
            s_cur = next;
        }
    }

    // ---- uncertainty map ----------------------------------------------------
    let x_final = stage_depths.last().expect("at least two stages").clone();
    let mut mean_c = Array2::<f64>::zeros((rows, cols));
    for (stage_stack, wbar) in &eps_inputs {
        // wdd = softmax over scales of (1 - wbar).
        let complement = wbar.mapv(|w| 1.0 - w);
        let wdd = softmax_scales(&complement);
        for r in 0..rows {
            for c in 0..cols {
                let mut cost = 0.0;
                for s in 0..l {
                    cost += wdd[[s, r, c]] * (stage_stack[[s, r, c]] - x_final[[r, c]]).abs();
                }
                mean_c[[r, c]] += cost;
            }
        }
    }
    // Averaging the per-stage costs before the shared denominator keeps the
    // zero-cost case bit-exact: epsilon == beta / (L + 2 + alpha).
    let stage_count = (stages - 1) as f64;
    let denom = l as f64 + 2.0 + ALPHA_D;
    let epsilon = mean_c.mapv(|c| (c / stage_count + BETA_D) / denom);

    Ok(ForwardRun {
        depth: x_final,
        stage_depths,
        traces,
        delta: deltas,
        epsilon,
        mode,
        tape: with_tape.then_some(tapes),
    })
}

// ===========================================================================
// Tests
// ===========================================================================

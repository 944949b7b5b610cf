//! Acceptance gate: one test per release criterion, each printing a
//! PASS/FAIL line with the measured value against its stated tolerance.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spad_core::bayes::{
    run_bayes, sigma_bar_maps, soft_threshold_update, weighted_median, BayesParams,
};
use spad_core::metrics::{canny_edges, dae, CANNY_HIGH_FRAC, CANNY_LOW_FRAC};
use spad_core::multiscale::{build_stack_full, ScaleSpec};
use spad_core::scenes::{procedural_scene, scene_from_preset, ScenePreset};
use spad_core::simulate::{make_gaussian_irf, sample_cube, sample_cube_with_stats, NoiseSpec};
use spad_core::types::{MultiscaleDepthStack, Scene};
use spad_core::unroll::{
    backward, count_parameters, extract_patches, forward, loss, sample_gumbel_noise, train,
    NetConfig, NetworkWeights, SelectionMode, TrainConfig, TrainSample, ALPHA_D, BETA_D,
};
use spad_core::DepthMap;

// ===========================================================================
// Reporting helper
// ===========================================================================

fn check(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("[{criterion}] {verdict}: {detail}");
    assert!(pass, "[{criterion}] {detail}");
}

// ===========================================================================
// Shared fixtures
// ===========================================================================

const BINS: usize = 256;
const IRF_SIGMA: f64 = 2.0;
const PPP: f64 = 4.0;
const SBR: f64 = 1.0;

fn eval_scene(index: u64) -> (Scene, MultiscaleDepthStack, Vec<Array2<f64>>) {
    let noise = NoiseSpec::new(PPP, SBR, 900).unwrap();
    let scene = procedural_scene(index, 64, 64, BINS, &noise).unwrap();
    let irf = make_gaussian_irf(BINS, IRF_SIGMA).unwrap();
    let cube = sample_cube(&scene, &irf, BINS, 2000 + index).unwrap();
    let build = build_stack_full(&cube, &irf, &ScaleSpec::twelve()).unwrap();
    let sigma_sq = sigma_bar_maps(IRF_SIGMA, BINS, &build.totals).unwrap();
    (scene, build.stack, sigma_sq)
}

struct TrainedFixture {
    net: NetConfig,
    weights: NetworkWeights,
    train_secs: f64,
}

/// Desk-scale training run shared by the end-to-end and uncertainty
/// criteria: disjoint procedural scenes (indexes 16..24) at the same photon
/// budget, cut into 32x32 patches.
fn trained() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let irf = make_gaussian_irf(BINS, IRF_SIGMA).unwrap();
        let noise = NoiseSpec::new(PPP, SBR, 900).unwrap();
        let mut samples = Vec::new();
        for index in 16..24u64 {
            let scene = procedural_scene(index, 64, 64, BINS, &noise).unwrap();
            let cube = sample_cube(&scene, &irf, BINS, 1000 + index).unwrap();
            let build = build_stack_full(&cube, &irf, &ScaleSpec::twelve()).unwrap();
            samples.extend(
                extract_patches(&build.stack.as_array3(), scene.depth().values(), 32, 16).unwrap(),
            );
        }
        let net = NetConfig::new(2, 12, 7).unwrap();
        let mut config = TrainConfig::new(net.clone(), 30, 8, 1e-3, 7).unwrap();
        config.shuffle = true;
        let started = Instant::now();
        let report = train(&samples, &config).unwrap();
        let train_secs = started.elapsed().as_secs_f64();
        eprintln!(
            "trained fixture: {} samples, {} steps, loss {:.3} -> {:.3}, {:.1}s",
            samples.len(),
            report.steps,
            report.epoch_losses.first().unwrap(),
            report.epoch_losses.last().unwrap(),
            train_secs
        );
        TrainedFixture {
            net,
            weights: report.weights,
            train_secs,
        }
    })
}

// ===========================================================================
// 1. Parameter counts
// ===========================================================================

#[test]
fn criterion_1_parameter_counts() {
    let cases = [
        ((4usize, 12usize), 53_136usize),
        ((2, 12), 23_760),
        ((3, 12), 38_448),
        ((5, 12), 67_824),
        ((4, 8), 24_768),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for ((stages, scales), expected) in cases {
        let got = count_parameters(stages, scales);
        pass &= got == expected;
        detail.push_str(&format!(
            "(K={stages},L={scales})={got} (want {expected}); "
        ));
    }
    // Per-block sizes at L=12: feature extractor, attention, per-scale
    // refinement, and the selection-only last stage.
    let w = NetworkWeights::zeros(4, 12);
    let block = |stage: usize, block: &str, n: usize| -> usize {
        (0..n)
            .map(|i| {
                let spec = w.spec(&format!("s{stage}.{block}.conv{i}")).unwrap();
                spec.dims.iter().product::<usize>()
            })
            .sum()
    };
    let fe = block(1, "fe", 3);
    let pa = block(1, "pa", 4);
    let ef = block(1, "ef", 3);
    let gp: usize = (0..12).map(|l| block(1, &format!("gp{l}"), 4)).sum();
    let last = block(4, "fe", 3) + block(4, "pa", 4);
    pass &= fe == 3888 && pa == 5184 && ef == 3888 && gp == 1728 && last == 9072;
    detail.push_str(&format!(
        "blocks fe={fe} pa={pa} ef={ef} gp={gp} last={last} (want 3888/5184/3888/1728/9072)"
    ));
    check("criterion 1: parameter counts", pass, &detail);
}

// ===========================================================================
// 2. Simulator fidelity
// ===========================================================================

#[test]
fn criterion_2_simulator_fidelity() {
    let noise = NoiseSpec::new(PPP, SBR, 42).unwrap();
    let scene = scene_from_preset(ScenePreset::Steps, 128, 128, BINS, &noise).unwrap();
    let irf = make_gaussian_irf(BINS, IRF_SIGMA).unwrap();
    let started = Instant::now();
    let (_, stats) = sample_cube_with_stats(&scene, &irf, BINS, 42).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let ppp_err = (stats.empirical_ppp() - PPP).abs() / PPP;
    let sbr_err = (stats.empirical_sbr() - SBR).abs() / SBR;
    let pass = ppp_err < 0.02 && sbr_err < 0.05 && secs < 5.0;
    check(
        "criterion 2: simulator fidelity",
        pass,
        &format!(
            "128x128x256: ppp {:.4} (err {:.3}% < 2%), sbr {:.4} (err {:.3}% < 5%), {:.2}s < 5s",
            stats.empirical_ppp(),
            100.0 * ppp_err,
            stats.empirical_sbr(),
            100.0 * sbr_err,
            secs
        ),
    );
}

// ===========================================================================
// 3. Optimizer oracles
// ===========================================================================

#[test]
fn criterion_3_optimizer_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let grid_points = 10_000usize;
    let mut worst_median = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=40);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
        let med = weighted_median(&values, &weights).unwrap();
        let objective = |d: f64| -> f64 {
            values
                .iter()
                .zip(&weights)
                .map(|(v, w)| w * (d - v).abs())
                .sum()
        };
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min) - 0.05;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.05;
        let grid_best = (0..grid_points)
            .map(|i| objective(lo + (hi - lo) * i as f64 / (grid_points - 1) as f64))
            .fold(f64::INFINITY, f64::min);
        worst_median = worst_median.max(objective(med) - grid_best);
    }

    let mut worst_soft = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let d_ml = rng.random::<f64>();
        let sigma_sq = if rng.random::<f64>() < 0.1 {
            f64::INFINITY
        } else {
            10f64.powf(rng.random_range(-6.0..0.0))
        };
        let m = rng.random_range(0..=36);
        let anchors: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let coeffs: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    0.0
                } else {
                    rng.random_range(0.0..5.0)
                }
            })
            .collect();
        let d = soft_threshold_update(d_ml, sigma_sq, &anchors, &coeffs);
        let objective = |x: f64| -> f64 {
            let quad = if sigma_sq.is_infinite() {
                0.0
            } else {
                (x - d_ml) * (x - d_ml) / (2.0 * sigma_sq)
            };
            quad + anchors
                .iter()
                .zip(&coeffs)
                .map(|(a, c)| c * (x - a).abs())
                .sum::<f64>()
        };
        // Hull of all candidate minimizers, padded.
        let total: f64 = coeffs.iter().sum();
        let reach = if sigma_sq.is_infinite() {
            0.0
        } else {
            sigma_sq * total
        };
        let mut lo = d_ml - reach;
        let mut hi = d_ml + reach;
        for &a in &anchors {
            lo = lo.min(a);
            hi = hi.max(a);
        }
        let (lo, hi) = (lo - 0.05, hi + 0.05);
        let grid_best = (0..grid_points)
            .map(|i| objective(lo + (hi - lo) * i as f64 / (grid_points - 1) as f64))
            .fold(f64::INFINITY, f64::min);
        worst_soft = worst_soft.max(objective(d) - grid_best);
    }
    let pass = worst_median <= 1e-9 && worst_soft <= 1e-9;
    check(
        "criterion 3: optimizer oracles",
        pass,
        &format!(
            "1000 medians: worst objective slack {worst_median:.3e} <= 1e-9; \
             1000 soft-thresholds: worst slack {worst_soft:.3e} <= 1e-9"
        ),
    );
}

// ===========================================================================
// 4. Gradient correctness
// ===========================================================================

#[test]
fn criterion_4_gradient_check() {
    let started = Instant::now();
    // Smooth configuration (unit leaky slope, soft selection) so central
    // differences are a valid oracle for the shared reverse-mode machinery;
    // the kinked pieces (slope 0.2, straight-through routing) have their own
    // pointwise derivative tests in the unit suite.
    let mut net = NetConfig::new(2, 4, 11).unwrap();
    net.leaky_slope = 1.0;
    // A flat soft temperature keeps the selection weights near-uniform, so the
    // mixed depth sits close to the plane mean regardless of the logits.
    net.tau = 50.0;
    let weights = NetworkWeights::init(&net).unwrap();
    let (rows, cols) = (8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Planes share a smooth random base but sit at distinct offsets; the
    // near-uniform mixture lands ~0.3 above the base, a guaranteed O(0.1)
    // away from every plane, so no |stack - x| kink can bite at h = 1e-3.
    let base = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.1..0.2));
    let stack = Array3::from_shape_fn((4, rows, cols), |(s, r, c)| base[[r, c]] + 0.2 * s as f64);
    let noise = sample_gumbel_noise(net.stages, net.scales, rows, cols, 99);
    let truth = Array2::from_elem((rows, cols), -0.25);

    let run = forward(
        &stack,
        &weights,
        &net,
        SelectionMode::Soft,
        Some(&noise),
        true,
    )
    .unwrap();
    // Guard: stay away from the |stack - x| kinks so the finite-difference
    // oracle is sound at h = 1e-3 (K = 2, so only stage 1 forms the diff).
    let x1 = &run.stage_depths[0];
    let mut min_diff = f64::INFINITY;
    for s in 0..net.scales {
        for r in 0..rows {
            for c in 0..cols {
                min_diff = min_diff.min((stack[[s, r, c]] - x1[[r, c]]).abs());
            }
        }
    }
    assert!(
        min_diff > 1e-2,
        "stack-vs-depth diff {min_diff} too close to a kink for finite differences"
    );
    // Same soundness guard for the refinement clamp: the refined planes that
    // feed stage 2 must sit clear of the per-pixel stack bounds.
    let refined = run.traces[0]
        .refined
        .as_ref()
        .expect("stage 1 of a two-stage net refines the stack");
    let mut min_clamp_margin = f64::INFINITY;
    for r in 0..rows {
        for c in 0..cols {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in 0..net.scales {
                lo = lo.min(stack[[s, r, c]]);
                hi = hi.max(stack[[s, r, c]]);
            }
            for s in 0..net.scales {
                let v = refined[[s, r, c]];
                min_clamp_margin = min_clamp_margin.min((v - lo).min(hi - v));
            }
        }
    }
    assert!(
        min_clamp_margin > 1e-2,
        "refined plane margin {min_clamp_margin} too close to the clamp bounds"
    );
    let analytic = backward(&run, &weights, &net, &truth, 1.0).unwrap();

    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut worst_idx = 0usize;
    let mut probe = weights.clone();
    for i in 0..probe.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(
            &forward(
                &stack,
                &probe,
                &net,
                SelectionMode::Soft,
                Some(&noise),
                false,
            )
            .unwrap(),
            &truth,
        )
        .unwrap();
        probe.data_mut()[i] = orig - h;
        let down = loss(
            &forward(
                &stack,
                &probe,
                &net,
                SelectionMode::Soft,
                Some(&noise),
                false,
            )
            .unwrap(),
            &truth,
        )
        .unwrap();
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
        if rel > worst {
            worst = rel;
            worst_idx = i;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 120.0;
    check(
        "criterion 4: gradient correctness",
        pass,
        &format!(
            "8x8 K=2 L=4, {} parameters: max relative error {:.3e} < 1e-4 (param {}), {:.1}s < 120s",
            probe.len(),
            worst,
            worst_idx,
            secs
        ),
    );
}

// ===========================================================================
// 5. Bound invariant
// ===========================================================================

#[test]
fn criterion_5_pixelwise_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut violations = 0usize;
    let mut draws = 0usize;
    for case in 0..10_000usize {
        let stages = rng.random_range(2..=3);
        let scales = rng.random_range(2..=5);
        let rows = rng.random_range(2..=5);
        let cols = rng.random_range(2..=5);
        let mut net = NetConfig::new(stages, scales, case as u64).unwrap();
        net.tau = 10f64.powf(rng.random_range(-1.0..1.0));
        let weights = NetworkWeights::init(&net).unwrap();
        let stack = Array3::from_shape_fn((scales, rows, cols), |_| rng.random::<f64>());
        let mode = match case % 3 {
            0 => SelectionMode::Infer,
            1 => SelectionMode::StraightThrough,
            _ => SelectionMode::Soft,
        };
        let noise = if matches!(mode, SelectionMode::Infer) {
            None
        } else {
            Some(sample_gumbel_noise(stages, scales, rows, cols, case as u64))
        };
        let run = forward(&stack, &weights, &net, mode, noise.as_deref(), false).unwrap();
        draws += 1;
        for depth in run.stage_depths.iter().chain(std::iter::once(&run.depth)) {
            for r in 0..rows {
                for c in 0..cols {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for s in 0..scales {
                        lo = lo.min(stack[[s, r, c]]);
                        hi = hi.max(stack[[s, r, c]]);
                    }
                    let v = depth[[r, c]];
                    // Exact comparison: the combination is clamped, the
                    // selection is membership.
                    if !(v >= lo && v <= hi) {
                        violations += 1;
                    }
                }
            }
        }
    }
    check(
        "criterion 5: pixelwise bounds",
        violations == 0,
        &format!("{draws} random (stack, weights) draws, {violations} bound violations (exact)"),
    );
}

// ===========================================================================
// 6. End-to-end denoising
// ===========================================================================

#[test]
fn criterion_6_end_to_end_denoising() {
    let fixture = trained();
    let params = BayesParams::for_bins(BINS).unwrap();
    let mut detail = String::new();
    let mut pass = fixture.train_secs < 1800.0;
    detail.push_str(&format!("training {:.0}s <= 1800s; ", fixture.train_secs));

    for index in 0..5u64 {
        let (scene, stack, sigma_sq) = eval_scene(index);
        let truth = scene.depth().values();
        let baseline = dae(stack.plane(0).values(), truth).unwrap();

        let bayes_run = run_bayes(&stack, &sigma_sq, &params).unwrap();
        let bayes_dae = dae(bayes_run.depth.values(), truth).unwrap();

        let run = forward(
            &stack.as_array3(),
            &fixture.weights,
            &fixture.net,
            SelectionMode::Infer,
            None,
            false,
        )
        .unwrap();
        let unroll_dae = dae(&run.depth, truth).unwrap();

        let ok = bayes_dae < baseline && unroll_dae < baseline && unroll_dae < 0.05;
        pass &= ok;
        detail.push_str(&format!(
            "scene {index}: plane1 {baseline:.4}, bayes {bayes_dae:.4}, unroll {unroll_dae:.4}{}; ",
            if ok { "" } else { " <-- FAIL" }
        ));
    }
    check("criterion 6: end-to-end denoising", pass, &detail);
}

// ===========================================================================
// 7. Uncertainty sanity
// ===========================================================================

/// Mean of `map` inside / outside the 2-pixel Chebyshev band around the
/// truth's Canny edges.
fn edge_band_means(map: &Array2<f64>, truth: &Array2<f64>) -> (f64, f64) {
    let edges = canny_edges(truth, CANNY_LOW_FRAC, CANNY_HIGH_FRAC).unwrap();
    let (rows, cols) = map.dim();
    let mut band = Array2::from_elem((rows, cols), false);
    for &(r, c) in edges.coords() {
        for dr in -2i64..=2 {
            for dc in -2i64..=2 {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nr < rows as i64 && nc >= 0 && nc < cols as i64 {
                    band[[nr as usize, nc as usize]] = true;
                }
            }
        }
    }
    let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
    for r in 0..rows {
        for c in 0..cols {
            if band[[r, c]] {
                inside = (inside.0 + map[[r, c]], inside.1 + 1);
            } else {
                outside = (outside.0 + map[[r, c]], outside.1 + 1);
            }
        }
    }
    (inside.0 / inside.1 as f64, outside.0 / outside.1 as f64)
}

#[test]
fn criterion_7_uncertainty_sanity() {
    let noise = NoiseSpec::new(PPP, SBR, 900).unwrap();
    let scene = scene_from_preset(ScenePreset::StepEdge, 64, 64, BINS, &noise).unwrap();
    let irf = make_gaussian_irf(BINS, IRF_SIGMA).unwrap();
    let cube = sample_cube(&scene, &irf, BINS, 77).unwrap();
    let build = build_stack_full(&cube, &irf, &ScaleSpec::twelve()).unwrap();
    let sigma_sq = sigma_bar_maps(IRF_SIGMA, BINS, &build.totals).unwrap();
    let truth = scene.depth().values();

    let params = BayesParams::for_bins(BINS).unwrap();
    let bayes_run = run_bayes(&build.stack, &sigma_sq, &params).unwrap();
    let bayes_eps = bayes_run.uncertainty.values();
    let bayes_positive = bayes_eps.iter().all(|&v| v > 0.0);
    let (b_in, b_out) = edge_band_means(bayes_eps, truth);

    let fixture = trained();
    let run = forward(
        &build.stack.as_array3(),
        &fixture.weights,
        &fixture.net,
        SelectionMode::Infer,
        None,
        false,
    )
    .unwrap();
    let unroll_positive = run.epsilon.iter().all(|&v| v > 0.0);
    let (u_in, u_out) = edge_band_means(&run.epsilon, truth);

    let pass = bayes_positive && unroll_positive && b_in > b_out && u_in > u_out;
    check(
        "criterion 7: uncertainty sanity",
        pass,
        &format!(
            "eps strictly positive: bayes {bayes_positive}, unroll {unroll_positive}; \
             edge-band mean vs elsewhere: bayes {b_in:.5} > {b_out:.5}, unroll {u_in:.5} > {u_out:.5}"
        ),
    );
}

// ===========================================================================
// 8. Training determinism
// ===========================================================================

#[test]
fn criterion_8_training_determinism() {
    let irf = make_gaussian_irf(64, 1.5).unwrap();
    let noise = NoiseSpec::new(20.0, 10.0, 5).unwrap();
    let scene = scene_from_preset(ScenePreset::Steps, 16, 16, 64, &noise).unwrap();
    let cube = sample_cube(&scene, &irf, 64, 5).unwrap();
    let build = build_stack_full(&cube, &irf, &ScaleSpec::four()).unwrap();
    let samples =
        vec![TrainSample::new(build.stack.as_array3(), scene.depth().values().clone()).unwrap()];

    let net = NetConfig::new(2, 4, 13).unwrap();
    let mut config = TrainConfig::new(net, 3, 1, 1e-3, 29).unwrap();
    config.threads = Some(1);

    let dir = tempfile::tempdir().unwrap();
    let path_a = dir.path().join("a.urw");
    let path_b = dir.path().join("b.urw");
    train(&samples, &config)
        .unwrap()
        .weights
        .save(&path_a)
        .unwrap();
    train(&samples, &config)
        .unwrap()
        .weights
        .save(&path_b)
        .unwrap();
    let bytes_a = std::fs::read(&path_a).unwrap();
    let bytes_b = std::fs::read(&path_b).unwrap();
    check(
        "criterion 8: training determinism",
        bytes_a == bytes_b,
        &format!(
            "two single-threaded runs, same seed: {} == {} bytes, identical {}",
            bytes_a.len(),
            bytes_b.len(),
            bytes_a == bytes_b
        ),
    );
}

// ===========================================================================
// 9. Trivial fixed point
// ===========================================================================

#[test]
fn criterion_9_trivial_fixed_point() {
    let c = 0.37;
    let (scales, rows, cols) = (12usize, 6usize, 7usize);

    // Unrolled network: any weights, constant stack.
    let net = NetConfig::new(3, scales, 21).unwrap();
    let weights = NetworkWeights::init(&net).unwrap();
    let stack = Array3::from_elem((scales, rows, cols), c);
    let run = forward(&stack, &weights, &net, SelectionMode::Infer, None, false).unwrap();
    let unroll_eps_expected = BETA_D / (scales as f64 + 2.0 + ALPHA_D);
    let unroll_ok = run.depth.iter().all(|&v| v == c)
        && run.delta.iter().all(|d| d.iter().all(|&v| v == 0.0))
        && run.epsilon.iter().all(|&v| v == unroll_eps_expected);

    // Bayes: constant stack, any likelihood variance.
    let planes = vec![DepthMap::new(Array2::from_elem((rows, cols), c)).unwrap(); scales];
    let ml_stack = MultiscaleDepthStack::new(planes).unwrap();
    let sigma_sq = vec![Array2::from_elem((rows, cols), 1e-4); scales];
    let params = BayesParams::for_bins(BINS).unwrap();
    let bayes_run = run_bayes(&ml_stack, &sigma_sq, &params).unwrap();
    let nbar = params.window() as f64;
    let bayes_eps_expected = params.beta_d / (scales as f64 * nbar + params.alpha_d + 1.0);
    let bayes_ok = bayes_run.depth.values().iter().all(|&v| v == c)
        && bayes_run
            .uncertainty
            .values()
            .iter()
            .all(|&v| v == bayes_eps_expected);

    check(
        "criterion 9: trivial fixed point",
        unroll_ok && bayes_ok,
        &format!(
            "unroll: depth == {c} exactly, delta == 0, eps == {unroll_eps_expected:.8} exactly ({unroll_ok}); \
             bayes: depth == {c}, eps == {bayes_eps_expected:.8} exactly ({bayes_ok})"
        ),
    );
}

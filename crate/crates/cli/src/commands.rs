//! Subcommand argument sets, config-flag resolution, and execution.
//!
//! Every value can come from a `--config` TOML file; flags take precedence.
//! After resolution each command writes the effective parameter set next to
//! its primary output (`<command>.resolved.toml`), so a run can always be
//! reproduced from that file alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use ndarray::Array2;
use serde::Serialize;

use spad_core::bayes::{run_bayes, sigma_bar_maps, BayesParams};
use spad_core::io::{read_cube, read_pfm, write_csv, write_cube, write_pfm, write_ply};
use spad_core::metrics::{canny_edges, dae, rmse, see_with_edges, CANNY_HIGH_FRAC, CANNY_LOW_FRAC};
use spad_core::multiscale::{build_stack_full, ScaleSpec};
use spad_core::scenes::{scene_from_pfm, scene_from_preset, ScenePreset};
use spad_core::simulate::{make_gaussian_irf, sample_cube_with_stats, NoiseSpec};
use spad_core::types::Scene;
use spad_core::unroll::{
    forward, train, NetConfig, NetworkWeights, SelectionMode, TrainConfig, TrainSample,
};
use spad_core::{DepthMap, Irf};

use crate::config::RunConfig;
use crate::{env_threads, req, with_pool, CliError};

// ===========================================================================
// Shared helpers
// ===========================================================================

fn scale_spec(scales: usize) -> Result<ScaleSpec, CliError> {
    match scales {
        12 => Ok(ScaleSpec::twelve()),
        4 => Ok(ScaleSpec::four()),
        other => Err(CliError::Usage(format!(
            "unsupported --scales {other}: expected 12 or 4"
        ))),
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<usize, CliError> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be >= 1")))
    }
}

/// Writes the effective parameter set as a loadable config file into the
/// directory holding `primary_out`.
fn write_resolved<T: Serialize>(
    command: &str,
    params: &T,
    primary_out: &Path,
) -> Result<(), CliError> {
    let section = command.replace('-', "_");
    let value =
        toml::Value::try_from(params).map_err(|e| CliError::Data(format!("config echo: {e}")))?;
    let mut root = toml::value::Table::new();
    root.insert(section, value);
    let text = toml::to_string_pretty(&toml::Value::Table(root))
        .map_err(|e| CliError::Data(format!("config echo: {e}")))?;
    let dir = match primary_out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let path = dir.join(format!("{command}.resolved.toml"));
    fs::write(&path, text).map_err(|e| {
        CliError::Data(format!(
            "cannot write resolved config {}: {e}",
            path.display()
        ))
    })?;
    eprintln!("resolved config -> {}", path.display());
    Ok(())
}

fn build_irf(bins: usize, sigma: f64) -> Result<Irf, CliError> {
    Ok(make_gaussian_irf(bins, sigma)?)
}

// ===========================================================================
// simulate
// ===========================================================================

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Image rows.
    #[arg(long)]
    rows: Option<usize>,
    /// Image columns.
    #[arg(long)]
    cols: Option<usize>,
    /// Histogram bins per pixel.
    #[arg(long)]
    bins: Option<usize>,
    /// Mean photons per pixel (signal + background).
    #[arg(long)]
    ppp: Option<f64>,
    /// Signal-to-background ratio.
    #[arg(long)]
    sbr: Option<f64>,
    /// Gaussian impulse-response sigma, in bins.
    #[arg(long)]
    irf_sigma: Option<f64>,
    /// Scene preset (plane|steps|sphere|step-edge) or a ground-truth PFM path.
    #[arg(long)]
    scene: Option<String>,
    /// RNG seed (required: no implicit entropy).
    #[arg(long)]
    seed: Option<u64>,
    /// Output cube path (.spc).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional path for the ground-truth depth PFM.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SimulateParams {
    rows: usize,
    cols: usize,
    bins: usize,
    ppp: f64,
    sbr: f64,
    irf_sigma: f64,
    scene: String,
    seed: u64,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn run_simulate(
    args: SimulateArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.simulate;
    let p = SimulateParams {
        rows: at_least_one("--rows", req("--rows", args.rows.or(sec.rows))?)?,
        cols: at_least_one("--cols", req("--cols", args.cols.or(sec.cols))?)?,
        bins: at_least_one("--bins", req("--bins", args.bins.or(sec.bins))?)?,
        ppp: positive("--ppp", req("--ppp", args.ppp.or(sec.ppp))?)?,
        sbr: positive("--sbr", req("--sbr", args.sbr.or(sec.sbr))?)?,
        irf_sigma: positive(
            "--irf-sigma",
            req("--irf-sigma", args.irf_sigma.or(sec.irf_sigma))?,
        )?,
        scene: req("--scene", args.scene.or_else(|| sec.scene.clone()))?,
        seed: req("--seed", args.seed.or(sec.seed))?,
        out: req("--out", args.out.or_else(|| sec.out.clone()))?,
        truth_out: args.truth_out.or_else(|| sec.truth_out.clone()),
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    write_resolved("simulate", &p, &p.out)?;

    let noise = NoiseSpec::new(p.ppp, p.sbr, p.seed)?;
    let scene: Scene = if p.scene.ends_with(".pfm") {
        scene_from_pfm(&p.scene, p.bins, &noise)?
    } else {
        let preset = ScenePreset::from_str(&p.scene)
            .map_err(|e| CliError::Usage(format!("--scene: {e}")))?;
        scene_from_preset(preset, p.rows, p.cols, p.bins, &noise)?
    };
    if scene.depth().rows() != p.rows || scene.depth().cols() != p.cols {
        return Err(CliError::Usage(format!(
            "--rows/--cols {}x{} do not match the scene file {}x{}",
            p.rows,
            p.cols,
            scene.depth().rows(),
            scene.depth().cols()
        )));
    }

    let irf = build_irf(p.bins, p.irf_sigma)?;
    let started = Instant::now();
    let (cube, stats) = with_pool(p.threads, || {
        Ok(sample_cube_with_stats(&scene, &irf, p.bins, p.seed)?)
    })?;
    write_cube(&p.out, &cube)?;
    if let Some(truth) = &p.truth_out {
        write_pfm(truth, scene.depth().values())?;
        eprintln!("truth -> {}", truth.display());
    }
    eprintln!(
        "simulate: {}x{}x{} cube -> {} in {:.2}s; empirical ppp {:.4} sbr {:.4}",
        p.rows,
        p.cols,
        p.bins,
        p.out.display(),
        started.elapsed().as_secs_f64(),
        stats.empirical_ppp(),
        stats.empirical_sbr(),
    );
    Ok(())
}

// ===========================================================================
// extract
// ===========================================================================

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input cube path (.spc).
    #[arg(long)]
    cube: Option<PathBuf>,
    /// Gaussian impulse-response sigma, in bins.
    #[arg(long)]
    irf_sigma: Option<f64>,
    /// Number of scales (12 or 4).
    #[arg(long)]
    scales: Option<usize>,
    /// Output stem: planes are written as <stem>_00.pfm, ... plus
    /// <stem>.manifest.txt listing the plane order.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ExtractParams {
    cube: PathBuf,
    irf_sigma: f64,
    scales: usize,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

/// Plane file path for a given output stem: `stack.pfm` -> `stack_03.pfm`.
fn plane_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("stack");
    out.with_file_name(format!("{stem}_{index:02}.pfm"))
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("stack");
    out.with_file_name(format!("{stem}.manifest.txt"))
}

pub fn run_extract(
    args: ExtractArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.extract;
    let p = ExtractParams {
        cube: req("--cube", args.cube.or_else(|| sec.cube.clone()))?,
        irf_sigma: positive(
            "--irf-sigma",
            req("--irf-sigma", args.irf_sigma.or(sec.irf_sigma))?,
        )?,
        scales: req("--scales", args.scales.or(sec.scales))?,
        out: req("--out", args.out.or_else(|| sec.out.clone()))?,
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    let spec = scale_spec(p.scales)?;
    write_resolved("extract", &p, &p.out)?;

    let cube = read_cube(&p.cube)?;
    let irf = build_irf(cube.bins(), p.irf_sigma)?;
    let build = with_pool(p.threads, || Ok(build_stack_full(&cube, &irf, &spec)?))?;

    let mut manifest = String::from("# plane\ttemporal\tspatial\tfile\n");
    for (i, pair) in build.pairs.iter().enumerate() {
        let path = plane_path(&p.out, i);
        write_pfm(&path, build.stack.plane(i).values())?;
        let file_name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("")
            .to_string();
        manifest.push_str(&format!("{i:02}\t{}\t{}\t{}\n", pair.0, pair.1, file_name));
    }
    let mpath = manifest_path(&p.out);
    fs::write(&mpath, manifest)
        .map_err(|e| CliError::Data(format!("cannot write manifest {}: {e}", mpath.display())))?;
    eprintln!(
        "extract: {} planes -> {} (+ {})",
        p.scales,
        plane_path(&p.out, 0).display(),
        mpath.display()
    );
    Ok(())
}

// ===========================================================================
// bayes
// ===========================================================================

#[derive(Debug, Args)]
pub struct BayesArgs {
    /// Input cube path (.spc).
    #[arg(long)]
    cube: Option<PathBuf>,
    /// Gaussian impulse-response sigma, in bins.
    #[arg(long)]
    irf_sigma: Option<f64>,
    /// Number of scales (12 or 4).
    #[arg(long)]
    scales: Option<usize>,
    /// Inverse-gamma shape hyper-parameter.
    #[arg(long)]
    alpha: Option<f64>,
    /// Inverse-gamma scale hyper-parameter.
    #[arg(long)]
    beta: Option<f64>,
    /// Guidance kernel bandwidth in normalized depth units
    /// (default: 2 / bins).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Neighborhood half-width (1 gives a 3x3 window).
    #[arg(long)]
    radius: Option<usize>,
    /// Convergence tolerance on the depth update.
    #[arg(long)]
    tol: Option<f64>,
    /// Maximum number of sweeps.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output depth PFM.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output uncertainty PFM.
    #[arg(long)]
    uncertainty: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct BayesResolvedParams {
    cube: PathBuf,
    irf_sigma: f64,
    scales: usize,
    alpha: f64,
    beta: f64,
    bandwidth: f64,
    radius: usize,
    tol: f64,
    max_iters: usize,
    out: PathBuf,
    uncertainty: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn run_bayes_cmd(
    args: BayesArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.bayes;
    let cube_path = req("--cube", args.cube.or_else(|| sec.cube.clone()))?;
    let irf_sigma = positive(
        "--irf-sigma",
        req("--irf-sigma", args.irf_sigma.or(sec.irf_sigma))?,
    )?;
    let scales = req("--scales", args.scales.or(sec.scales))?;
    let spec = scale_spec(scales)?;
    let out = req("--out", args.out.or_else(|| sec.out.clone()))?;
    let uncertainty = req(
        "--uncertainty",
        args.uncertainty.or_else(|| sec.uncertainty.clone()),
    )?;
    let threads = threads_flag.or(sec.threads).or(env_threads()?);

    let cube = read_cube(&cube_path)?;
    let mut params = BayesParams::for_bins(cube.bins())?;
    if let Some(v) = args.alpha.or(sec.alpha) {
        params.alpha_d = positive("--alpha", v)?;
    }
    if let Some(v) = args.beta.or(sec.beta) {
        params.beta_d = positive("--beta", v)?;
    }
    if let Some(v) = args.bandwidth.or(sec.bandwidth) {
        params.bandwidth = positive("--bandwidth", v)?;
    }
    if let Some(v) = args.radius.or(sec.radius) {
        params.radius = at_least_one("--radius", v)?;
    }
    if let Some(v) = args.tol.or(sec.tol) {
        params.tol = positive("--tol", v)?;
    }
    if let Some(v) = args.max_iters.or(sec.max_iters) {
        params.max_iters = at_least_one("--max-iters", v)?;
    }
    params.validate()?;

    let resolved = BayesResolvedParams {
        cube: cube_path,
        irf_sigma,
        scales,
        alpha: params.alpha_d,
        beta: params.beta_d,
        bandwidth: params.bandwidth,
        radius: params.radius,
        tol: params.tol,
        max_iters: params.max_iters,
        out: out.clone(),
        uncertainty: uncertainty.clone(),
        threads,
    };
    write_resolved("bayes", &resolved, &out)?;

    let irf = build_irf(cube.bins(), irf_sigma)?;
    let started = Instant::now();
    let run = with_pool(threads, || {
        let build = build_stack_full(&cube, &irf, &spec)?;
        let sigma_sq = sigma_bar_maps(irf_sigma, cube.bins(), &build.totals)?;
        Ok(run_bayes(&build.stack, &sigma_sq, &params)?)
    })?;
    write_pfm(&out, run.depth.values())?;
    write_pfm(&uncertainty, run.uncertainty.values())?;
    eprintln!(
        "bayes: {} sweeps in {:.2}s -> {} + {}",
        run.iterations,
        started.elapsed().as_secs_f64(),
        out.display(),
        uncertainty.display()
    );
    Ok(())
}

// ===========================================================================
// unroll
// ===========================================================================

#[derive(Debug, Args)]
pub struct UnrollArgs {
    /// Input cube path (.spc).
    #[arg(long)]
    cube: Option<PathBuf>,
    /// Gaussian impulse-response sigma, in bins.
    #[arg(long)]
    irf_sigma: Option<f64>,
    /// Trained weights file (.urw).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output depth PFM.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output uncertainty PFM.
    #[arg(long)]
    uncertainty: Option<PathBuf>,
    /// Optional directory for per-stage depth/disagreement maps.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct UnrollParams {
    cube: PathBuf,
    irf_sigma: f64,
    weights: PathBuf,
    out: PathBuf,
    uncertainty: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn run_unroll(
    args: UnrollArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.unroll;
    let p = UnrollParams {
        cube: req("--cube", args.cube.or_else(|| sec.cube.clone()))?,
        irf_sigma: positive(
            "--irf-sigma",
            req("--irf-sigma", args.irf_sigma.or(sec.irf_sigma))?,
        )?,
        weights: req("--weights", args.weights.or_else(|| sec.weights.clone()))?,
        out: req("--out", args.out.or_else(|| sec.out.clone()))?,
        uncertainty: req(
            "--uncertainty",
            args.uncertainty.or_else(|| sec.uncertainty.clone()),
        )?,
        trace: args.trace.or_else(|| sec.trace.clone()),
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    write_resolved("unroll", &p, &p.out)?;

    let weights = NetworkWeights::load(&p.weights)?;
    let spec = scale_spec(weights.scales())?;
    let net = NetConfig::new(weights.stages(), weights.scales(), 0)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let cube = read_cube(&p.cube)?;
    let irf = build_irf(cube.bins(), p.irf_sigma)?;
    let started = Instant::now();
    let run = with_pool(p.threads, || {
        let build = build_stack_full(&cube, &irf, &spec)?;
        Ok(forward(
            &build.stack.as_array3(),
            &weights,
            &net,
            SelectionMode::Infer,
            None,
            false,
        )?)
    })?;
    write_pfm(&p.out, &run.depth)?;
    write_pfm(&p.uncertainty, &run.epsilon)?;
    if let Some(dir) = &p.trace {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        for (k, (depth, delta)) in run.stage_depths.iter().zip(&run.delta).enumerate() {
            write_pfm(dir.join(format!("stage_{:02}_depth.pfm", k + 1)), depth)?;
            write_pfm(dir.join(format!("stage_{:02}_delta.pfm", k + 1)), delta)?;
        }
        eprintln!("trace -> {}", dir.display());
    }
    eprintln!(
        "unroll: {} stages x {} scales in {:.2}s -> {} + {}",
        weights.stages(),
        weights.scales(),
        started.elapsed().as_secs_f64(),
        p.out.display(),
        p.uncertainty.display()
    );
    Ok(())
}

// ===========================================================================
// train
// ===========================================================================

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training pairs: <name>.spc plus <name>.truth.pfm.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Gaussian impulse-response sigma, in bins.
    #[arg(long)]
    irf_sigma: Option<f64>,
    /// Number of refinement stages K (>= 2).
    #[arg(long)]
    stages: Option<usize>,
    /// Number of scales (12 or 4).
    #[arg(long)]
    scales: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (default 16).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate (default 1e-4, halved from --lr-halve-epoch).
    #[arg(long)]
    lr: Option<f64>,
    /// 1-based epoch from which the learning rate is halved (default 100).
    #[arg(long)]
    lr_halve_epoch: Option<usize>,
    /// Cut samples into square patches of this size.
    #[arg(long)]
    patch_size: Option<usize>,
    /// Patch stride (default: the patch size).
    #[arg(long)]
    patch_stride: Option<usize>,
    /// RNG seed for init, shuffling, and selection noise (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Output weights path (.urw).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-epoch mean losses.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TrainParams {
    data: PathBuf,
    irf_sigma: f64,
    stages: usize,
    scales: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    lr_halve_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_stride: Option<usize>,
    seed: u64,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

/// Reads every <name>.spc + <name>.truth.pfm pair under `data`, sorted by
/// name for reproducibility.
fn load_train_pairs(
    data: &Path,
    irf_sigma: f64,
    spec: &ScaleSpec,
) -> Result<Vec<TrainSample>, CliError> {
    let mut cube_paths: Vec<PathBuf> = fs::read_dir(data)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", data.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "spc"))
        .collect();
    cube_paths.sort();
    if cube_paths.is_empty() {
        return Err(CliError::Data(format!(
            "no .spc cubes found in {}",
            data.display()
        )));
    }
    let mut samples = Vec::with_capacity(cube_paths.len());
    for cube_path in cube_paths {
        let stem = cube_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let truth_path = cube_path.with_file_name(format!("{stem}.truth.pfm"));
        if !truth_path.exists() {
            return Err(CliError::Data(format!(
                "{} has no matching {}",
                cube_path.display(),
                truth_path.display()
            )));
        }
        let cube = read_cube(&cube_path)?;
        let irf = build_irf(cube.bins(), irf_sigma)?;
        let build = build_stack_full(&cube, &irf, spec)?;
        let truth = read_pfm(&truth_path)?;
        samples.push(TrainSample::new(build.stack.as_array3(), truth)?);
    }
    Ok(samples)
}

pub fn run_train(
    args: TrainArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.train;
    let p = TrainParams {
        data: req("--data", args.data.or_else(|| sec.data.clone()))?,
        irf_sigma: positive(
            "--irf-sigma",
            req("--irf-sigma", args.irf_sigma.or(sec.irf_sigma))?,
        )?,
        stages: req("--stages", args.stages.or(sec.stages))?,
        scales: req("--scales", args.scales.or(sec.scales))?,
        epochs: at_least_one("--epochs", req("--epochs", args.epochs.or(sec.epochs))?)?,
        batch_size: at_least_one(
            "--batch-size",
            args.batch_size.or(sec.batch_size).unwrap_or(16),
        )?,
        lr: args.lr.or(sec.lr).unwrap_or(1e-4),
        lr_halve_epoch: args.lr_halve_epoch.or(sec.lr_halve_epoch).unwrap_or(100),
        patch_size: args.patch_size.or(sec.patch_size),
        patch_stride: args.patch_stride.or(sec.patch_stride),
        seed: req("--seed", args.seed.or(sec.seed))?,
        out: req("--out", args.out.or_else(|| sec.out.clone()))?,
        loss_out: args.loss_out.or_else(|| sec.loss_out.clone()),
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    let spec = scale_spec(p.scales)?;
    write_resolved("train", &p, &p.out)?;

    let net = NetConfig::new(p.stages, p.scales, p.seed)?;
    let mut config = TrainConfig::new(net, p.epochs, p.batch_size, p.lr, p.seed)?;
    config.lr_halve_epoch = p.lr_halve_epoch;
    config.threads = p.threads;

    let whole = load_train_pairs(&p.data, p.irf_sigma, &spec)?;
    let samples = match p.patch_size {
        Some(size) => {
            let stride = p.patch_stride.unwrap_or(size);
            let mut patches = Vec::new();
            for s in &whole {
                patches.extend(spad_core::unroll::extract_patches(
                    &s.stack, &s.truth, size, stride,
                )?);
            }
            patches
        }
        None => whole,
    };
    eprintln!("train: {} samples, {} parameters", samples.len(), {
        spad_core::unroll::count_parameters(p.stages, p.scales)
    });

    let started = Instant::now();
    let report = train(&samples, &config)?;
    report.weights.save(&p.out)?;
    if let Some(path) = &p.loss_out {
        let table = Array2::from_shape_fn((report.epoch_losses.len(), 2), |(r, c)| {
            if c == 0 {
                (r + 1) as f64
            } else {
                report.epoch_losses[r]
            }
        });
        write_csv(path, &table)?;
        eprintln!("losses -> {}", path.display());
    }
    eprintln!(
        "train: {} steps in {:.2}s, loss {:.6} -> {:.6}, weights -> {}",
        report.steps,
        started.elapsed().as_secs_f64(),
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        p.out.display()
    );
    Ok(())
}

// ===========================================================================
// eval
// ===========================================================================

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth PFM.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth depth PFM.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report output path (JSON-like structured text).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Low hysteresis threshold as a fraction of the max gradient.
    #[arg(long)]
    canny_low: Option<f64>,
    /// High hysteresis threshold as a fraction of the max gradient.
    #[arg(long)]
    canny_high: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvalParams {
    pred: PathBuf,
    truth: PathBuf,
    report: PathBuf,
    canny_low: f64,
    canny_high: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn run_eval(
    args: EvalArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.eval;
    let p = EvalParams {
        pred: req("--pred", args.pred.or_else(|| sec.pred.clone()))?,
        truth: req("--truth", args.truth.or_else(|| sec.truth.clone()))?,
        report: req("--report", args.report.or_else(|| sec.report.clone()))?,
        canny_low: args.canny_low.or(sec.canny_low).unwrap_or(CANNY_LOW_FRAC),
        canny_high: args
            .canny_high
            .or(sec.canny_high)
            .unwrap_or(CANNY_HIGH_FRAC),
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    write_resolved("eval", &p, &p.report)?;

    let pred = read_pfm(&p.pred)?;
    let truth = read_pfm(&p.truth)?;
    let (dae_v, rmse_v, edges) = with_pool(p.threads, || {
        let d = dae(&pred, &truth)?;
        let r = rmse(&pred, &truth)?;
        let e = canny_edges(&truth, p.canny_low, p.canny_high)?;
        Ok((d, r, e))
    })?;
    let see_v = see_with_edges(&pred, &truth, &edges)?;

    let report = format!(
        "{{\n  \"pred\": {:?},\n  \"truth\": {:?},\n  \"rows\": {},\n  \"cols\": {},\n  \
         \"dae\": {},\n  \"rmse\": {},\n  \"see\": {},\n  \"edge_pixels\": {},\n  \
         \"canny_low_frac\": {},\n  \"canny_high_frac\": {}\n}}\n",
        p.pred.display().to_string(),
        p.truth.display().to_string(),
        truth.dim().0,
        truth.dim().1,
        dae_v,
        rmse_v,
        see_v,
        edges.len(),
        p.canny_low,
        p.canny_high,
    );
    fs::write(&p.report, &report)
        .map_err(|e| CliError::Data(format!("cannot write report {}: {e}", p.report.display())))?;
    eprint!("{report}");
    Ok(())
}

// ===========================================================================
// export-ply
// ===========================================================================

#[derive(Debug, Args)]
pub struct ExportPlyArgs {
    /// Depth PFM with values in [0, 1].
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Optional grayscale intensity PFM of the same shape.
    #[arg(long)]
    intensity: Option<PathBuf>,
    /// Time-bin count used to scale z = depth * bins (default 1).
    #[arg(long)]
    bins: Option<usize>,
    /// Output PLY path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ExportPlyParams {
    depth: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    intensity: Option<PathBuf>,
    bins: usize,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn run_export_ply(
    args: ExportPlyArgs,
    cfg: &RunConfig,
    threads_flag: Option<usize>,
) -> Result<(), CliError> {
    let sec = &cfg.export_ply;
    let p = ExportPlyParams {
        depth: req("--depth", args.depth.or_else(|| sec.depth.clone()))?,
        intensity: args.intensity.or_else(|| sec.intensity.clone()),
        bins: at_least_one("--bins", args.bins.or(sec.bins).unwrap_or(1))?,
        out: req("--out", args.out.or_else(|| sec.out.clone()))?,
        threads: threads_flag.or(sec.threads).or(env_threads()?),
    };
    write_resolved("export-ply", &p, &p.out)?;

    let depth = DepthMap::new(read_pfm(&p.depth)?)?;
    let intensity = match &p.intensity {
        Some(path) => Some(read_pfm(path)?),
        None => None,
    };
    write_ply(&p.out, &depth, intensity.as_ref(), p.bins)?;
    eprintln!(
        "export-ply: {} vertices -> {}",
        depth.rows() * depth.cols(),
        p.out.display()
    );
    Ok(())
}

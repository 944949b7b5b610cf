//! Procedural test scenes: slanted planes, staircases, spherical caps, and a
//! half-plane step edge, with smoothly textured reflectivity.
//!
//! Depth values stay inside `[0.2, 0.8]` so the IRF window never clips at the
//! histogram boundaries, and reflectivity textures stay strictly positive.
//! Generation is fully determined by `(preset, rows, cols, seed)`.

use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::read_pfm;
use crate::simulate::{rates_from_ppp_sbr, NoiseSpec};
use crate::types::{DepthMap, Scene};

/// Families of synthetic scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// A tilted plane sweeping the depth range.
    Plane,
    /// A staircase of 3–6 fronto-parallel levels.
    Steps,
    /// Spherical caps in front of a back plane.
    Sphere,
    /// Two half-planes split by a vertical depth discontinuity.
    StepEdge,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 4] = [
        ScenePreset::Plane,
        ScenePreset::Steps,
        ScenePreset::Sphere,
        ScenePreset::StepEdge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenePreset::Plane => "plane",
            ScenePreset::Steps => "steps",
            ScenePreset::Sphere => "sphere",
            ScenePreset::StepEdge => "step-edge",
        }
    }

    /// Generates the ground-truth depth and a reflectivity texture pattern.
    pub fn generate(&self, rows: usize, cols: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ preset_salt(*self));
        let depth = match self {
            ScenePreset::Plane => plane_depth(rows, cols, &mut rng),
            ScenePreset::Steps => steps_depth(rows, cols, &mut rng),
            ScenePreset::Sphere => sphere_depth(rows, cols, &mut rng),
            ScenePreset::StepEdge => step_edge_depth(rows, cols, &mut rng),
        };
        let pattern = texture(rows, cols, &mut rng);
        (depth, pattern)
    }
}

impl FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(ScenePreset::Plane),
            "steps" => Ok(ScenePreset::Steps),
            "sphere" => Ok(ScenePreset::Sphere),
            "step-edge" => Ok(ScenePreset::StepEdge),
            other => Err(Error::invalid(
                "scene",
                format!("unknown preset `{other}` (try plane, steps, sphere, step-edge)"),
            )),
        }
    }
}

fn preset_salt(preset: ScenePreset) -> u64 {
    match preset {
        ScenePreset::Plane => 0x706c616e65,
        ScenePreset::Steps => 0x7374657073,
        ScenePreset::Sphere => 0x736d6f6f74,
        ScenePreset::StepEdge => 0x65646765,
    }
}

const DEPTH_LO: f64 = 0.2;
const DEPTH_HI: f64 = 0.8;

fn plane_depth(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (sy, sx) = (theta.sin(), theta.cos());
    let span = DEPTH_HI - DEPTH_LO;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let u = r as f64 / rows.max(1) as f64;
        let v = c as f64 / cols.max(1) as f64;
        // Project onto the slope direction, normalized to [0, 1].
        let t = (u * sy + v * sx + 1.0) / 2.0;
        DEPTH_LO + span * t.clamp(0.0, 1.0)
    })
}

fn steps_depth(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let levels: usize = rng.random_range(3..=6);
    let vertical = rng.random_range(0..2) == 0;
    let span = DEPTH_HI - DEPTH_LO;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let along = if vertical { c } else { r };
        let extent = if vertical { cols } else { rows };
        let level = (along * levels / extent.max(1)).min(levels - 1);
        DEPTH_LO + span * level as f64 / (levels - 1) as f64
    })
}

fn sphere_depth(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n_spheres: usize = rng.random_range(1..=3);
    let back = DEPTH_HI;
    let mut depth = Array2::from_elem((rows, cols), back);
    for _ in 0..n_spheres {
        let cy: f64 = rng.random_range(0.2..0.8) * rows as f64;
        let cx: f64 = rng.random_range(0.2..0.8) * cols as f64;
        let radius: f64 = rng.random_range(0.15..0.35) * rows.min(cols) as f64;
        let front: f64 = rng.random_range(DEPTH_LO..0.5);
        for ((r, c), d) in depth.indexed_iter_mut() {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let q = (dy * dy + dx * dx) / (radius * radius);
            if q < 1.0 {
                // Spherical cap bulging toward the sensor.
                let cap = front + (back - front) * 0.35 * (1.0 - (1.0 - q).sqrt());
                if cap < *d {
                    *d = cap;
                }
            }
        }
    }
    depth
}

fn step_edge_depth(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    // The edge column stays away from the borders so a 13x13 window fits.
    let lo = cols / 4;
    let hi = (3 * cols / 4).max(lo + 1);
    let edge_col: usize = rng.random_range(lo..hi);
    Array2::from_shape_fn((rows, cols), |(_, c)| if c < edge_col { 0.3 } else { 0.7 })
}

/// Smooth, strictly positive reflectivity texture in `[0.55, 1.45]`.
fn texture(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let fy: f64 = rng.random_range(1.0..3.0);
    let fx: f64 = rng.random_range(1.0..3.0);
    let py: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let px: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let u = r as f64 / rows.max(1) as f64;
        let v = c as f64 / cols.max(1) as f64;
        1.0 + 0.45
            * (std::f64::consts::TAU * fy * u + py).sin()
            * (std::f64::consts::TAU * fx * v + px).cos()
    })
}

/// Builds a fully specified scene from a preset and a photon budget.
pub fn scene_from_preset(
    preset: ScenePreset,
    rows: usize,
    cols: usize,
    bins: usize,
    noise: &NoiseSpec,
) -> Result<Scene> {
    let (depth, pattern) = preset.generate(rows, cols, noise.seed);
    let (reflectivity, b) = rates_from_ppp_sbr(&pattern, bins, noise)?;
    Scene::new(
        DepthMap::new(depth)?,
        reflectivity,
        Array2::from_elem((rows, cols), b),
    )
}

/// Builds a scene from a PFM ground-truth depth image (values in `[0, 1]`)
/// with a uniform reflectivity pattern.
pub fn scene_from_pfm(path: impl AsRef<Path>, bins: usize, noise: &NoiseSpec) -> Result<Scene> {
    let depth = read_pfm(path)?;
    let shape = depth.dim();
    let depth = DepthMap::new(depth)?;
    let (reflectivity, b) = rates_from_ppp_sbr(&Array2::from_elem(shape, 1.0), bins, noise)?;
    Scene::new(depth, reflectivity, Array2::from_elem(shape, b))
}

/// Deterministic scene family for building data sets: cycles through the
/// presets while varying the seed.
pub fn procedural_scene(
    index: u64,
    rows: usize,
    cols: usize,
    bins: usize,
    noise: &NoiseSpec,
) -> Result<Scene> {
    let preset = ScenePreset::ALL[(index % ScenePreset::ALL.len() as u64) as usize];
    let spec = NoiseSpec {
        seed: noise
            .seed
            .wrapping_add(index.wrapping_mul(0x9E3779B97F4A7C15)),
        ..*noise
    };
    scene_from_preset(preset, rows, cols, bins, &spec)
}

// ===========================================================================
// Tests
// ===========================================================================

//! Core data model: photon-count cubes, instrument response functions,
//! normalized depth maps, uncertainty maps, scale stacks, and scenes.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Absolute slack allowed when checking that IRF taps sum to one.
pub const IRF_SUM_TOLERANCE: f64 = 1e-9;

// ===========================================================================
// Histogram cube
// ===========================================================================

/// A 3-D histogram of photon counts indexed `(row, col, bin)`.
///
/// Counts are stored as `u32`; the unsigned representation is what makes the
/// "all counts are non-negative and finite" invariant structural. Data coming
/// from signed sources goes through [`HistogramCube::from_signed`], which
/// reports the first offending entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramCube {
    counts: Array3<u32>,
}

impl HistogramCube {
    /// Wraps a count array, rejecting degenerate (zero-sized) dimensions.
    pub fn new(counts: Array3<u32>) -> Result<Self> {
        let (rows, cols, bins) = counts.dim();
        if rows == 0 || cols == 0 || bins == 0 {
            return Err(Error::invalid(
                "counts",
                format!("cube dimensions must be positive, got {rows}x{cols}x{bins}"),
            ));
        }
        Ok(Self { counts })
    }

    /// Builds a cube from signed values laid out row-major `(row, col, bin)`.
    ///
    /// Any negative entry is rejected with its full coordinates.
    pub fn from_signed(rows: usize, cols: usize, bins: usize, values: &[i64]) -> Result<Self> {
        if values.len() != rows * cols * bins {
            return Err(Error::ShapeMismatch {
                context: "histogram cube payload",
                expected: format!("{} values", rows * cols * bins),
                actual: format!("{} values", values.len()),
            });
        }
        let mut counts = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v < 0 {
                let bin = i % bins;
                let col = (i / bins) % cols;
                let row = i / (bins * cols);
                return Err(Error::NegativeCount {
                    row,
                    col,
                    bin,
                    value: v,
                });
            }
            counts.push(v as u32);
        }
        let counts =
            Array3::from_shape_vec((rows, cols, bins), counts).expect("length checked above");
        Self::new(counts)
    }

    pub fn rows(&self) -> usize {
        self.counts.dim().0
    }

    pub fn cols(&self) -> usize {
        self.counts.dim().1
    }

    pub fn bins(&self) -> usize {
        self.counts.dim().2
    }

    /// Number of pixels (`rows * cols`).
    pub fn pixels(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn counts(&self) -> &Array3<u32> {
        &self.counts
    }

    /// Total photon count over the whole cube.
    pub fn total_counts(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// The cube as floating-point values, for filtering.
    pub fn to_f64(&self) -> Array3<f64> {
        self.counts.mapv(f64::from)
    }
}

// ===========================================================================
// Instrument response function
// ===========================================================================

/// A discrete instrument response: non-negative taps summing to one, with a
/// designated center tap (the nominal photon arrival offset).
#[derive(Debug, Clone, PartialEq)]
pub struct Irf {
    taps: Vec<f64>,
    center: usize,
    sigma: Option<f64>,
}

impl Irf {
    /// Validates and wraps a tap vector.
    pub fn new(taps: Vec<f64>, center: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("taps", "IRF must have at least one tap"));
        }
        if center >= taps.len() {
            return Err(Error::invalid(
                "center",
                format!("center {center} outside {} taps", taps.len()),
            ));
        }
        if let Some(&bad) = taps.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::invalid(
                "taps",
                format!("IRF taps must be finite and non-negative, got {bad}"),
            ));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > IRF_SUM_TOLERANCE {
            return Err(Error::invalid(
                "taps",
                format!("IRF taps must sum to 1 (got {sum})"),
            ));
        }
        Ok(Self {
            taps,
            center,
            sigma: None,
        })
    }

    /// Records the Gaussian width (in bins) this IRF was built from.
    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Gaussian width in bins, when known.
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

// ===========================================================================
// Depth and uncertainty maps
// ===========================================================================

/// A per-pixel depth image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Array2<f64>,
}

impl DepthMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::DepthRange { row, col, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.dim().0
    }

    pub fn cols(&self) -> usize {
        self.values.dim().1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Converts the whole map to time-bin units (`value * bins`).
    pub fn to_bins(&self, bins: usize) -> Array2<f64> {
        self.values.mapv(|v| v * bins as f64)
    }
}

/// Converts a normalized depth to a (fractional) time-bin position.
pub fn bin_position(depth: f64, bins: usize) -> f64 {
    depth * bins as f64
}

/// A per-pixel uncertainty image with every value strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    values: Array2<f64>,
}

impl UncertaintyMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::UncertaintyRange { row, col, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.dim().0
    }

    pub fn cols(&self) -> usize {
        self.values.dim().1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

// ===========================================================================
// Multiscale stack
// ===========================================================================

/// An ordered stack of depth maps, one per smoothing scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleDepthStack {
    planes: Vec<DepthMap>,
}

impl MultiscaleDepthStack {
    /// Wraps an ordered set of planes, all of the same shape.
    pub fn new(planes: Vec<DepthMap>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("planes", "stack needs at least one plane"))?;
        let (rows, cols) = (first.rows(), first.cols());
        for (i, p) in planes.iter().enumerate() {
            if p.rows() != rows || p.cols() != cols {
                return Err(Error::ShapeMismatch {
                    context: "stack plane",
                    expected: format!("{rows}x{cols}"),
                    actual: format!("{}x{} (plane {i})", p.rows(), p.cols()),
                });
            }
        }
        Ok(Self { planes })
    }

    /// Number of scales `L`.
    pub fn scales(&self) -> usize {
        self.planes.len()
    }

    pub fn rows(&self) -> usize {
        self.planes[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.planes[0].cols()
    }

    /// The `index`-th plane (0-based; plane 0 is the finest scale).
    pub fn plane(&self, index: usize) -> &DepthMap {
        &self.planes[index]
    }

    pub fn planes(&self) -> &[DepthMap] {
        &self.planes
    }

    /// The stack as a dense `(scale, row, col)` array.
    pub fn as_array3(&self) -> Array3<f64> {
        let (l, rows, cols) = (self.scales(), self.rows(), self.cols());
        let mut out = Array3::zeros((l, rows, cols));
        for (i, p) in self.planes.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), i).assign(p.values());
        }
        out
    }
}

// ===========================================================================
// Scene
// ===========================================================================

/// Ground-truth description of an imaged scene: normalized depth, per-pixel
/// signal intensity `r`, and per-pixel background rate `b` (photons per bin).
#[derive(Debug, Clone)]
pub struct Scene {
    depth: DepthMap,
    reflectivity: Array2<f64>,
    background: Array2<f64>,
}

impl Scene {
    pub fn new(
        depth: DepthMap,
        reflectivity: Array2<f64>,
        background: Array2<f64>,
    ) -> Result<Self> {
        let shape = (depth.rows(), depth.cols());
        for (name, arr) in [("reflectivity", &reflectivity), ("background", &background)] {
            if arr.dim() != shape {
                return Err(Error::ShapeMismatch {
                    context: "scene field",
                    expected: format!("{}x{}", shape.0, shape.1),
                    actual: format!("{}x{} ({name})", arr.dim().0, arr.dim().1),
                });
            }
            if let Some(&bad) = arr.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::invalid(
                    "scene",
                    format!("{name} must be finite and >= 0, got {bad}"),
                ));
            }
        }
        Ok(Self {
            depth,
            reflectivity,
            background,
        })
    }

    pub fn rows(&self) -> usize {
        self.depth.rows()
    }

    pub fn cols(&self) -> usize {
        self.depth.cols()
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn reflectivity(&self) -> &Array2<f64> {
        &self.reflectivity
    }

    pub fn background(&self) -> &Array2<f64> {
        &self.background
    }
}

// ===========================================================================
// Tests
// ===========================================================================

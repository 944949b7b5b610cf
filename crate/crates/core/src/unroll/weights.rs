//! Network parameter storage, counting, initialization, and serialization.
//!
//! All kernels live in one flat `Vec<f64>` addressed through a named tensor
//! layout. Per stage `k` (1-based) the layout holds, in order:
//!
//! * `s{k}.fe.conv{0..3}` — feature extraction, three `C -> C` convs;
//! * `s{k}.pa.conv{0..4}` — squeeze attention, four `C -> C` convs;
//! * `s{k}.ef.conv{0..3}` — expansion feature extraction (absent in the
//!   last stage), three `C -> C` convs;
//! * `s{k}.gp{l}.conv{0..4}` — expansion group attention (absent in the
//!   last stage), `L` independent sub-modules of four `2 -> 2` convs.
//!
//! The on-disk format (`URW1`, little-endian) stores each tensor as a
//! record: u16 name length, name bytes, u8 rank, u32 dims, then the payload
//! as 32-bit IEEE-754 floats.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::unroll::tensor::KERNEL_TAPS;
use crate::unroll::NetConfig;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"URW1";
pub const WEIGHTS_VERSION: u32 = 1;

// ===========================================================================
// Layout
// ===========================================================================

/// One named kernel in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    /// Offset into the flat data vector.
    pub offset: usize,
    /// `[c_out, c_in, 3, 3]`.
    pub dims: [usize; 4],
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn build_layout(stages: usize, scales: usize) -> Vec<TensorSpec> {
    let mut layout = Vec::new();
    let mut offset = 0;
    let mut push = |layout: &mut Vec<TensorSpec>, name: String, c_out: usize, c_in: usize| {
        let spec = TensorSpec {
            name,
            offset,
            dims: [c_out, c_in, 3, 3],
        };
        offset += spec.len();
        layout.push(spec);
    };
    for k in 1..=stages {
        for i in 0..3 {
            push(&mut layout, format!("s{k}.fe.conv{i}"), scales, scales);
        }
        for i in 0..4 {
            push(&mut layout, format!("s{k}.pa.conv{i}"), scales, scales);
        }
        if k < stages {
            for i in 0..3 {
                push(&mut layout, format!("s{k}.ef.conv{i}"), scales, scales);
            }
            for l in 0..scales {
                for i in 0..4 {
                    push(&mut layout, format!("s{k}.gp{l}.conv{i}"), 2, 2);
                }
            }
        }
    }
    layout
}

/// Total learnable parameter count: `(K-1) * (90 L^2 + 144 L) + 63 L^2`.
///
/// Per full stage: feature extraction `27 L^2`, squeeze attention `36 L^2`,
/// expansion features `27 L^2`, group attention `144 L`; the last stage
/// keeps only the first two blocks (`63 L^2`).
pub fn count_parameters(stages: usize, scales: usize) -> usize {
    let l = scales;
    (stages - 1) * (90 * l * l + 144 * l) + 63 * l * l
}

// ===========================================================================
// NetworkWeights
// ===========================================================================

/// Flat parameter vector plus its named layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    stages: usize,
    scales: usize,
    layout: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl NetworkWeights {
    /// Zero-initialized weights (mostly useful for gradient buffers).
    pub fn zeros(stages: usize, scales: usize) -> Self {
        let layout = build_layout(stages, scales);
        let len = layout.iter().map(TensorSpec::len).sum();
        debug_assert_eq!(len, count_parameters(stages, scales));
        Self {
            stages,
            scales,
            layout,
            data: vec![0.0; len],
        }
    }

    /// Seeded fan-in-scaled uniform initialization. Each tensor is filled
    /// in layout order from one stream, with bound
    /// `gain * sqrt(3 / fan_in)` and `gain = sqrt(2 / (1 + slope^2))`.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut weights = Self::zeros(config.stages, config.scales);
        let gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for spec in weights.layout.clone() {
            let fan_in = (spec.dims[1] * KERNEL_TAPS) as f64;
            let bound = gain * (3.0 / fan_in).sqrt();
            for v in &mut weights.data[spec.offset..spec.offset + spec.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(weights)
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    fn find(&self, name: &str) -> Result<&TensorSpec> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid("tensor", format!("no tensor named {name}")))
    }

    /// Layout record for a named tensor (offset and dims).
    pub fn spec(&self, name: &str) -> Result<&TensorSpec> {
        self.find(name)
    }

    /// Kernel slice for a named tensor.
    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        let spec = self.find(name)?;
        Ok(&self.data[spec.offset..spec.offset + spec.len()])
    }

    /// Kernel slice plus `(c_out, c_in)` for a named tensor.
    pub fn tensor_with_dims(&self, name: &str) -> Result<(&[f64], usize, usize)> {
        let spec = self.find(name)?;
        Ok((
            &self.data[spec.offset..spec.offset + spec.len()],
            spec.dims[0],
            spec.dims[1],
        ))
    }

    // -- file format --------------------------------------------------------

    /// Serializes to the `URW1` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.stages as u32).to_le_bytes());
        buf.extend_from_slice(&(self.scales as u32).to_le_bytes());
        for spec in &self.layout {
            buf.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(spec.name.as_bytes());
            buf.push(4u8); // rank
            for &d in &spec.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &self.data[spec.offset..spec.offset + spec.len()] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Parses the `URW1` byte layout. Tensor records must appear in layout
    /// order with matching names and shapes.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fail = |message: String| Error::Format {
            path: origin.to_string(),
            message,
        };
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(fail(format!(
                    "truncated: wanted {n} bytes at offset {pos}",
                    pos = *pos
                )));
            }
            let out = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(out)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(
                take(pos, 4)?.try_into().expect("4 bytes"),
            ))
        };

        if take(&mut pos, 4)? != WEIGHTS_MAGIC {
            return Err(fail("bad magic, expected URW1".into()));
        }
        let version = read_u32(&mut pos)?;
        if version != WEIGHTS_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let stages = read_u32(&mut pos)? as usize;
        let scales = read_u32(&mut pos)? as usize;
        if stages < 2 || scales == 0 {
            return Err(fail(format!(
                "bad architecture {stages} stages x {scales} scales"
            )));
        }
        let mut weights = Self::zeros(stages, scales);
        for spec in weights.layout.clone() {
            let name_len =
                u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| fail("tensor name is not UTF-8".into()))?
                .to_string();
            if name != spec.name {
                return Err(fail(format!("expected tensor {}, found {name}", spec.name)));
            }
            let rank = take(&mut pos, 1)?[0];
            if rank != 4 {
                return Err(fail(format!(
                    "tensor {name}: expected rank 4, found {rank}"
                )));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = read_u32(&mut pos)? as usize;
            }
            if dims != spec.dims {
                return Err(fail(format!(
                    "tensor {name}: expected dims {:?}, found {dims:?}",
                    spec.dims
                )));
            }
            for v in &mut weights.data[spec.offset..spec.offset + spec.len()] {
                *v = f32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes")) as f64;
            }
        }
        if pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

// ===========================================================================
// Tests
// ===========================================================================

//! File formats: binary photon cubes (`SPC1`), PFM float images, CSV tables,
//! and ASCII PLY point clouds.
//!
//! All binary payloads are little-endian. Cube counts are stored row-major in
//! `(row, col, bin)` order; PFM images follow the common bottom-up row order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::types::{DepthMap, HistogramCube};

/// Magic bytes opening a photon-cube file.
pub const CUBE_MAGIC: &[u8; 4] = b"SPC1";
/// Cube format version written by this crate.
pub const CUBE_VERSION: u32 = 1;
/// Element type tag: unsigned 32-bit counts.
pub const CUBE_DTYPE_U32: u8 = 0;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

// ===========================================================================
// Photon cube (SPC1)
// ===========================================================================

/// Writes a histogram cube.
///
/// Layout: magic `SPC1`, `u32` version, `u32` rows, `u32` cols, `u32` bins,
/// `u8` dtype tag (0 = u32 counts), then `rows*cols*bins` little-endian `u32`
/// values in `(row, col, bin)` row-major order.
pub fn write_cube(path: impl AsRef<Path>, cube: &HistogramCube) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    w.write_all(&(cube.rows() as u32).to_le_bytes())?;
    w.write_all(&(cube.cols() as u32).to_le_bytes())?;
    w.write_all(&(cube.bins() as u32).to_le_bytes())?;
    w.write_all(&[CUBE_DTYPE_U32])?;
    let counts = cube.counts();
    let contiguous = counts.as_slice().expect("cube counts are stored row-major");
    for &c in contiguous {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a histogram cube, validating magic, version, dtype, and payload size.
pub fn read_cube(path: impl AsRef<Path>) -> Result<HistogramCube> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &magic != CUBE_MAGIC {
        return Err(format_err(
            path,
            format!("bad magic {magic:?}, expected {CUBE_MAGIC:?}"),
        ));
    }
    let version = read_u32(&mut r, path)?;
    if version != CUBE_VERSION {
        return Err(format_err(
            path,
            format!("unsupported cube version {version}"),
        ));
    }
    let rows = read_u32(&mut r, path)? as usize;
    let cols = read_u32(&mut r, path)? as usize;
    let bins = read_u32(&mut r, path)? as usize;
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)
        .map_err(|_| format_err(path, "truncated header"))?;
    if dtype[0] != CUBE_DTYPE_U32 {
        return Err(format_err(
            path,
            format!("unsupported element type tag {}", dtype[0]),
        ));
    }
    if rows == 0 || cols == 0 || bins == 0 {
        return Err(format_err(
            path,
            format!("degenerate cube dimensions {rows}x{cols}x{bins}"),
        ));
    }

    let n = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(bins))
        .ok_or_else(|| format_err(path, "cube dimensions overflow"))?;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|_| format_err(path, format!("truncated payload, expected {n} counts")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after payload"));
    }

    let counts: Vec<u32> = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let counts =
        Array3::from_shape_vec((rows, cols, bins), counts).expect("payload length checked above");
    HistogramCube::new(counts)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "truncated header"))?;
    Ok(u32::from_le_bytes(buf))
}

// ===========================================================================
// PFM float images
// ===========================================================================

/// Writes a grayscale PFM image (`Pf`, little-endian, bottom-up rows).
pub fn write_pfm(path: impl AsRef<Path>, image: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = image.dim();
    if rows == 0 || cols == 0 {
        return Err(format_err(path, "refusing to write empty PFM"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{cols} {rows}\n-1.0\n")?;
    for r in (0..rows).rev() {
        for c in 0..cols {
            w.write_all(&(image[[r, c]] as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a grayscale PFM image into row-major top-down order.
///
/// Both little-endian (negative scale) and big-endian files are accepted.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let magic = read_pfm_token(&mut r, path)?;
    if magic != "Pf" {
        return Err(format_err(
            path,
            format!("bad PFM magic `{magic}` (only grayscale `Pf` is supported)"),
        ));
    }
    let cols: usize = read_pfm_token(&mut r, path)?
        .parse()
        .map_err(|_| format_err(path, "bad PFM width"))?;
    let rows: usize = read_pfm_token(&mut r, path)?
        .parse()
        .map_err(|_| format_err(path, "bad PFM height"))?;
    let scale: f32 = read_pfm_token(&mut r, path)?
        .parse()
        .map_err(|_| format_err(path, "bad PFM scale"))?;
    if rows == 0 || cols == 0 {
        return Err(format_err(path, "degenerate PFM dimensions"));
    }
    let little_endian = scale < 0.0;

    let mut payload = vec![0u8; rows * cols * 4];
    r.read_exact(&mut payload)
        .map_err(|_| format_err(path, "truncated PFM payload"))?;

    let mut image = Array2::zeros((rows, cols));
    let mut idx = 0;
    for rr in (0..rows).rev() {
        for cc in 0..cols {
            let b = [
                payload[idx],
                payload[idx + 1],
                payload[idx + 2],
                payload[idx + 3],
            ];
            let v = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            image[[rr, cc]] = f64::from(v);
            idx += 4;
        }
    }
    Ok(image)
}

/// Reads one whitespace-delimited ASCII token from a PFM header.
fn read_pfm_token(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            if token.is_empty() {
                return Err(format_err(path, "truncated PFM header"));
            }
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| format_err(path, "non-ASCII PFM header"))
}

// ===========================================================================
// CSV tables
// ===========================================================================

/// Writes a 2-D array as comma-separated rows, top-down.
///
/// Values use Rust's shortest round-trip float formatting.
pub fn write_csv(path: impl AsRef<Path>, table: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    for row in table.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

// ===========================================================================
// PLY point clouds
// ===========================================================================

/// Renders a depth map as an ASCII PLY cloud with one vertex per pixel.
///
/// Vertices are `(x, y, z) = (col, row, depth * bins)` in row-major pixel
/// order. When an intensity image is supplied, a `gray` property (0..=255,
/// scaled by the intensity maximum) is appended to every vertex.
pub fn ply_string(
    depth: &DepthMap,
    intensity: Option<&Array2<f64>>,
    bins: usize,
) -> Result<String> {
    let (rows, cols) = (depth.rows(), depth.cols());
    if let Some(img) = intensity {
        if img.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: "PLY intensity",
                expected: format!("{rows}x{cols}"),
                actual: format!("{}x{}", img.dim().0, img.dim().1),
            });
        }
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }

    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", rows * cols));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if intensity.is_some() {
        out.push_str("property uchar gray\n");
    }
    out.push_str("end_header\n");

    let max_intensity = intensity
        .map(|img| img.iter().cloned().fold(0.0_f64, f64::max))
        .unwrap_or(0.0);
    for r in 0..rows {
        for c in 0..cols {
            let z = depth.values()[[r, c]] * bins as f64;
            out.push_str(&format!("{} {} {}", c as f32, r as f32, z as f32));
            if let Some(img) = intensity {
                let g = if max_intensity > 0.0 {
                    (img[[r, c]] / max_intensity * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                out.push_str(&format!(" {g}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes [`ply_string`] output to a file.
pub fn write_ply(
    path: impl AsRef<Path>,
    depth: &DepthMap,
    intensity: Option<&Array2<f64>>,
    bins: usize,
) -> Result<()> {
    let text = ply_string(depth, intensity, bins)?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

// ===========================================================================
// Tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn cube_round_trip_preserves_counts_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.spc");
        let counts = Array3::from_shape_fn((3, 4, 5), |(r, c, b)| (r * 100 + c * 10 + b) as u32);
        let cube = HistogramCube::new(counts).unwrap();
        write_cube(&path, &cube).unwrap();
        let back = read_cube(&path).unwrap();
        assert_eq!(cube, back);
    }

    #[test]
    fn cube_header_is_laid_out_as_documented() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cube.spc");
        let cube = HistogramCube::new(Array3::from_elem((1, 2, 3), 9u32)).unwrap();
        write_cube(&path, &cube).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"SPC1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes.len(), 21 + 6 * 4);
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 9);
    }

    #[test]
    fn cube_reader_rejects_corrupted_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.spc");

        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_cube(&path), Err(Error::Format { .. })));

        // Valid header but truncated payload.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SPC1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_cube(&path).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn pfm_round_trip_is_lossless_for_f32_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let image = Array2::from_shape_fn((3, 5), |(r, c)| {
            f64::from((r as f32) * 0.25 - (c as f32) * 1.5)
        });
        write_pfm(&path, &image).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(image, back);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let image = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        write_pfm(&path, &image).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = b"Pf\n2 2\n-1.0\n".len();
        assert_eq!(&bytes[..header_len], b"Pf\n2 2\n-1.0\n");
        // First stored value is the bottom-left pixel (3.0).
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn csv_writes_plain_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &ndarray::array![[1.0, 2.5], [-0.125, 4.0]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1,2.5\n-0.125,4\n");
    }

    /// Minimal PLY reader used to validate the writer: parses the vertex
    /// count and the first three floats of every vertex line.
    fn parse_ply(text: &str) -> (usize, Vec<(f32, f32, f32)>) {
        let mut lines = text.lines();
        let mut count = 0usize;
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("element vertex ") {
                count = rest.parse().unwrap();
            }
            if line == "end_header" {
                break;
            }
        }
        let vertices = lines
            .map(|l| {
                let mut it = l.split_whitespace();
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        (count, vertices)
    }

    #[test]
    fn ply_vertices_round_trip_through_a_naive_reader() {
        let depth = DepthMap::new(ndarray::array![[0.5, 0.25], [0.75, 0.0]]).unwrap();
        let text = ply_string(&depth, None, 256).unwrap();
        let (count, vertices) = parse_ply(&text);
        assert_eq!(count, 4);
        assert_eq!(vertices.len(), 4);
        assert_eq!(vertices[0], (0.0, 0.0, 128.0));
        assert_eq!(vertices[1], (1.0, 0.0, 64.0));
        assert_eq!(vertices[2], (0.0, 1.0, 192.0));
        assert_eq!(vertices[3], (1.0, 1.0, 0.0));
    }

    #[test]
    fn ply_includes_gray_property_only_with_intensity() {
        let depth = DepthMap::new(ndarray::array![[0.5]]).unwrap();
        let plain = ply_string(&depth, None, 4).unwrap();
        assert!(!plain.contains("gray"));
        let img = ndarray::array![[2.0]];
        let with_gray = ply_string(&depth, Some(&img), 4).unwrap();
        assert!(with_gray.contains("property uchar gray"));
        assert!(with_gray.trim_end().ends_with("0 0 2 255"));
    }

    proptest! {
        #[test]
        fn cube_round_trip_property(
            rows in 1usize..4,
            cols in 1usize..4,
            bins in 1usize..6,
            seed in 0u64..1000,
        ) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("cube.spc");
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let counts = Array3::from_shape_fn((rows, cols, bins), |_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 1000) as u32
            });
            let cube = HistogramCube::new(counts).unwrap();
            write_cube(&path, &cube).unwrap();
            prop_assert_eq!(read_cube(&path).unwrap(), cube);
        }

        #[test]
        fn pfm_round_trip_property(rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
            let dir = tempdir().unwrap();
            let path = dir.path().join("img.pfm");
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(17);
            let image = Array2::from_shape_fn((rows, cols), |_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                f64::from((state % 10_000) as f32 / 100.0 - 50.0)
            });
            write_pfm(&path, &image).unwrap();
            prop_assert_eq!(read_pfm(&path).unwrap(), image);
        }
    }
}

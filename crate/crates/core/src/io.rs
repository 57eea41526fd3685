//! File formats: PFM for real grids, interleaved `f32` pairs with a JSON
//! sidecar for complex grids, 16-bit grayscale PNG for display, and raw
//! little-endian `f32` blobs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid, Spacing};

pub const C64_DTYPE: &str = "c64-interleaved-f32";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::file_format(path, e.to_string()))
}

pub fn f32_le_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values
        .into_iter()
        .flat_map(|v| (v as f32).to_le_bytes())
        .collect()
}

pub fn f32_le_values(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    )
}

/// Little-endian grayscale PFM (`Pf`, scale `-1.0`). Scanlines are stored
/// bottom-to-top as the format requires.
pub fn encode_pfm(g: &RealGrid) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", g.cols(), g.rows()).into_bytes();
    for r in (0..g.rows()).rev() {
        out.extend(f32_le_bytes(g.row(r).iter().copied()));
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<RealGrid, String> {
    // Three whitespace-terminated header tokens lines: magic, dims, scale.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "Pf" {
        return Err(format!("unsupported PFM magic {:?} (only grayscale 'Pf')", fields[0]));
    }
    let cols: usize = fields[1].parse().map_err(|_| "bad PFM width")?;
    let rows: usize = fields[2].parse().map_err(|_| "bad PFM height")?;
    let scale: f64 = fields[3].parse().map_err(|_| "bad PFM scale")?;
    let big_endian = scale > 0.0;
    let need = rows * cols * 4;
    let data = bytes.get(pos..).ok_or("truncated PFM raster")?;
    if data.len() < need {
        return Err(format!("PFM raster has {} bytes, expected {need}", data.len()));
    }
    let mut values = vec![0.0; rows * cols];
    for (i, chunk) in data[..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        } as f64;
        let (file_row, c) = (i / cols, i % cols);
        values[(rows - 1 - file_row) * cols + c] = v;
    }
    RealGrid::new(rows, cols, values).map_err(|e| e.to_string())
}

pub fn write_pfm(path: &Path, g: &RealGrid) -> Result<()> {
    write_bytes(path, &encode_pfm(g))
}

pub fn read_pfm(path: &Path) -> Result<RealGrid> {
    decode_pfm(&read_bytes(path)?).map_err(|e| Error::file_format(path, e))
}

/// Sidecar describing an interleaved complex raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub spacing_mm: Option<Spacing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_cycles_per_sample: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_c64(g: &ComplexGrid) -> Vec<u8> {
    f32_le_bytes(g.re().iter().zip(g.im()).flat_map(|(&r, &i)| [r, i]))
}

pub fn decode_c64(bytes: &[u8], rows: usize, cols: usize) -> std::result::Result<ComplexGrid, String> {
    let vals = f32_le_values(bytes).ok_or("complex raster length not a multiple of 4")?;
    if vals.len() != 2 * rows * cols {
        return Err(format!(
            "complex raster holds {} reals, expected {}",
            vals.len(),
            2 * rows * cols
        ));
    }
    let (re, im) = vals.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
    ComplexGrid::new(rows, cols, re, im).map_err(|e| e.to_string())
}

/// Write `path` plus `path.json`.
pub fn write_c64(path: &Path, g: &ComplexGrid, carrier: Option<f64>) -> Result<()> {
    write_bytes(path, &encode_c64(g))?;
    let meta = ComplexSidecar {
        rows: g.rows(),
        cols: g.cols(),
        dtype: C64_DTYPE.into(),
        spacing_mm: g.spacing_mm(),
        carrier_cycles_per_sample: carrier,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_c64(path: &Path) -> Result<(ComplexGrid, ComplexSidecar)> {
    let meta: ComplexSidecar = read_json(&sidecar_path(path))?;
    if meta.dtype != C64_DTYPE {
        return Err(Error::file_format(path, format!("unsupported dtype {}", meta.dtype)));
    }
    let g = decode_c64(&read_bytes(path)?, meta.rows, meta.cols)
        .map_err(|e| Error::file_format(path, e))?
        .with_spacing(meta.spacing_mm);
    Ok((g, meta))
}

/// Linear rescale of `[lo, hi]` to the full 16-bit range.
pub fn to_u16_display(g: &RealGrid, lo: f64, hi: f64) -> Vec<u16> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    g.values()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect()
}

pub fn encode_png16(width: usize, height: usize, pixels: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Config(format!("png: {e}")))?;
        let data: Vec<u8> = pixels.iter().flat_map(|p| p.to_be_bytes()).collect();
        w.write_image_data(&data)
            .map_err(|e| Error::Config(format!("png: {e}")))?;
    }
    Ok(out)
}

/// 16-bit PNG of `g` after min/max rescale.
pub fn write_png16(path: &Path, g: &RealGrid) -> Result<()> {
    let px = to_u16_display(g, g.min(), g.max());
    write_bytes(path, &encode_png16(g.cols(), g.rows(), &px)?)
}

pub fn write_f32_blob(path: &Path, values: &[f64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f32_blob(path: &Path) -> Result<Vec<f64>> {
    f32_le_values(&read_bytes(path)?).ok_or_else(|| Error::file_format(path, "length not a multiple of 4"))
}

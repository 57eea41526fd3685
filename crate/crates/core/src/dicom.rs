//! Minimal reader and writer for uncompressed single-frame CT DICOM files.
//!
//! Only Explicit VR Little Endian and Implicit VR Little Endian are accepted.
//! The reader pulls the handful of attributes needed to turn stored pixels
//! into Hounsfield units and skips everything else by its declared length,
//! including undefined-length sequences. Every read is bounds-checked, so a
//! truncated or corrupt file yields an error rather than a panic.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RealGrid, Spacing};
use crate::io::read_bytes;

pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";

pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 4000.0;

/// Pixel spacing assumed when (0028,0030) is absent.
pub const DEFAULT_SPACING_MM: Spacing = (0.7, 0.7);

const MAX_NESTING: usize = 16;

type Tag = (u16, u16);

const TAG_TRANSFER_SYNTAX: Tag = (0x0002, 0x0010);
const TAG_ROWS: Tag = (0x0028, 0x0010);
const TAG_COLS: Tag = (0x0028, 0x0011);
const TAG_PIXEL_SPACING: Tag = (0x0028, 0x0030);
const TAG_BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const TAG_PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const TAG_RESCALE_INTERCEPT: Tag = (0x0028, 0x1052);
const TAG_RESCALE_SLOPE: Tag = (0x0028, 0x1053);
const TAG_PIXEL_DATA: Tag = (0x7FE0, 0x0010);
const TAG_ITEM: Tag = (0xFFFE, 0xE000);
const TAG_ITEM_DELIM: Tag = (0xFFFE, 0xE00D);
const TAG_SEQ_DELIM: Tag = (0xFFFE, 0xE0DD);

const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelRepresentation {
    Unsigned,
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicomHeader {
    pub rows: usize,
    pub cols: usize,
    pub bits_allocated: u16,
    pub pixel_representation: PixelRepresentation,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub pixel_spacing_mm: Spacing,
    pub transfer_syntax: String,
    /// Attributes that were missing and replaced by defaults.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub defaulted: Vec<String>,
}

impl DicomHeader {
    pub fn bytes_per_pixel(&self) -> usize {
        self.bits_allocated as usize / 8
    }
}

/// CT slice in Hounsfield units, clamped to `[HU_MIN, HU_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HounsfieldSlice {
    pub grid: RealGrid,
    pub pixel_spacing_mm: Spacing,
    pub source_id: String,
}

impl HounsfieldSlice {
    pub fn new(grid: RealGrid, pixel_spacing_mm: Spacing, source_id: impl Into<String>) -> Result<Self> {
        if !(pixel_spacing_mm.0 > 0.0 && pixel_spacing_mm.1 > 0.0) {
            return Err(Error::Parameter(format!(
                "pixel spacing must be positive, got {pixel_spacing_mm:?}"
            )));
        }
        let grid = grid.map(|v| v.clamp(HU_MIN, HU_MAX))?.with_spacing(Some(pixel_spacing_mm));
        Ok(Self {
            grid,
            pixel_spacing_mm,
            source_id: source_id.into(),
        })
    }
}

/// `HU = slope·raw + intercept`, clamped to the valid HU range.
pub fn apply_rescale(raw: &RealGrid, slope: f64, intercept: f64) -> Result<HounsfieldSlice> {
    if slope == 0.0 || !slope.is_finite() {
        return Err(Error::InvalidRescale(slope));
    }
    let hu = raw.map(|v| slope * v + intercept)?;
    let spacing = raw.spacing_mm().unwrap_or(DEFAULT_SPACING_MM);
    HounsfieldSlice::new(hu, spacing, "rescaled")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated at offset {}: need {n} bytes, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self) -> Result<Tag> {
        Ok((self.u16()?, self.u16()?))
    }
}

/// Value representations whose explicit-VR header uses a 4-byte length.
fn has_long_length(vr: &[u8]) -> bool {
    matches!(
        vr,
        b"OB" | b"OW" | b"OF" | b"OD" | b"OL" | b"OV" | b"SQ" | b"UT" | b"UN" | b"UC" | b"UR" | b"SV" | b"UV"
    )
}

fn looks_like_vr(b: &[u8]) -> bool {
    b.len() == 2 && b[0].is_ascii_uppercase() && b[1].is_ascii_uppercase()
}

struct ElementHeader {
    tag: Tag,
    vr: Option<[u8; 2]>,
    len: u32,
}

fn read_element_header(r: &mut Reader<'_>, explicit: bool) -> Result<ElementHeader> {
    let tag = r.tag()?;
    // Item and delimiter tags never carry a VR.
    if tag.0 == 0xFFFE {
        return Ok(ElementHeader {
            tag,
            vr: None,
            len: r.u32()?,
        });
    }
    if explicit {
        let vr = r.take(2)?;
        if !looks_like_vr(vr) {
            return Err(Error::Format(format!(
                "invalid VR bytes {vr:?} for tag ({:04X},{:04X})",
                tag.0, tag.1
            )));
        }
        let vr = [vr[0], vr[1]];
        let len = if has_long_length(&vr) {
            r.take(2)?;
            r.u32()?
        } else {
            r.u16()? as u32
        };
        Ok(ElementHeader { tag, vr: Some(vr), len })
    } else {
        Ok(ElementHeader {
            tag,
            vr: None,
            len: r.u32()?,
        })
    }
}

/// Skip an undefined-length value (a sequence of items) through its
/// sequence delimiter.
fn skip_undefined(r: &mut Reader<'_>, explicit: bool, depth: usize) -> Result<()> {
    if depth > MAX_NESTING {
        return Err(Error::Format("sequence nesting too deep".into()));
    }
    loop {
        let h = read_element_header(r, explicit)?;
        match h.tag {
            TAG_SEQ_DELIM => return Ok(()),
            TAG_ITEM if h.len == UNDEFINED_LENGTH => skip_item_dataset(r, explicit, depth + 1)?,
            TAG_ITEM => {
                r.take(h.len as usize)?;
            }
            other => {
                return Err(Error::Format(format!(
                    "unexpected tag ({:04X},{:04X}) inside sequence",
                    other.0, other.1
                )))
            }
        }
    }
}

fn skip_item_dataset(r: &mut Reader<'_>, explicit: bool, depth: usize) -> Result<()> {
    if depth > MAX_NESTING {
        return Err(Error::Format("sequence nesting too deep".into()));
    }
    loop {
        let h = read_element_header(r, explicit)?;
        if h.tag == TAG_ITEM_DELIM {
            return Ok(());
        }
        if h.len == UNDEFINED_LENGTH {
            skip_undefined(r, explicit, depth + 1)?;
        } else {
            r.take(h.len as usize)?;
        }
    }
}

fn text_value(bytes: &[u8]) -> Result<String> {
    let s = std::str::from_utf8(bytes).map_err(|_| Error::Format("non-ASCII text value".into()))?;
    Ok(s.trim_matches(|c: char| c == '\0' || c.is_whitespace()).to_string())
}

fn parse_ds(bytes: &[u8], what: &str) -> Result<Vec<f64>> {
    let s = text_value(bytes)?;
    s.split('\\')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("bad decimal string {p:?} in {what}")))
        })
        .collect()
}

fn parse_us(bytes: &[u8], what: &str) -> Result<u16> {
    if bytes.len() != 2 {
        return Err(Error::Format(format!("{what}: expected 2-byte US value, got {}", bytes.len())));
    }
    Ok(u16::from_le_bytes([bytes[0], bytes[1]]))
}

#[derive(Default)]
struct Collected<'a> {
    rows: Option<u16>,
    cols: Option<u16>,
    bits: Option<u16>,
    pixel_rep: Option<u16>,
    slope: Option<f64>,
    intercept: Option<f64>,
    spacing: Option<Spacing>,
    pixels: Option<&'a [u8]>,
}

fn read_meta_group(r: &mut Reader<'_>) -> Result<String> {
    let mut syntax = None;
    while r.remaining() >= 2 && u16::from_le_bytes([r.bytes[r.pos], r.bytes[r.pos + 1]]) == 0x0002 {
        let h = read_element_header(r, true)?;
        if h.len == UNDEFINED_LENGTH {
            return Err(Error::Format("undefined length in file meta group".into()));
        }
        let value = r.take(h.len as usize)?;
        if h.tag == TAG_TRANSFER_SYNTAX {
            syntax = Some(text_value(value)?);
        }
    }
    syntax.ok_or_else(|| Error::Format("file meta group lacks a transfer syntax".into()))
}

/// Parse a DICOM byte stream into its header and raw stored pixel values.
pub fn parse_dicom(bytes: &[u8]) -> Result<(DicomHeader, RealGrid)> {
    let mut r = Reader { bytes, pos: 0 };
    let syntax = if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        r.pos = 132;
        read_meta_group(&mut r)?
    } else {
        // Bare element stream: infer the VR style from the first element.
        if bytes.len() < 8 {
            return Err(Error::Format("no DICM magic and too short for an element stream".into()));
        }
        if looks_like_vr(&bytes[4..6]) {
            EXPLICIT_VR_LE.to_string()
        } else {
            IMPLICIT_VR_LE.to_string()
        }
    };
    let explicit = match syntax.as_str() {
        EXPLICIT_VR_LE => true,
        IMPLICIT_VR_LE => false,
        other => return Err(Error::UnsupportedSyntax(other.to_string())),
    };

    let mut c = Collected::default();
    while r.remaining() > 0 {
        let h = read_element_header(&mut r, explicit)?;
        if h.tag == TAG_PIXEL_DATA {
            if h.len == UNDEFINED_LENGTH {
                return Err(Error::UnsupportedSyntax(format!(
                    "{syntax} with encapsulated pixel data"
                )));
            }
            let declared = h.len as usize;
            if declared > r.remaining() {
                return Err(Error::LengthMismatch {
                    expected: declared,
                    found: r.remaining(),
                });
            }
            c.pixels = Some(r.take(declared)?);
            continue;
        }
        if h.len == UNDEFINED_LENGTH {
            let is_sq = h.vr.map_or(true, |vr| &vr == b"SQ" || &vr == b"UN");
            if !is_sq {
                return Err(Error::Format(format!(
                    "undefined length on non-sequence tag ({:04X},{:04X})",
                    h.tag.0, h.tag.1
                )));
            }
            skip_undefined(&mut r, explicit, 0)?;
            continue;
        }
        let value = r.take(h.len as usize)?;
        match h.tag {
            TAG_ROWS => c.rows = Some(parse_us(value, "Rows")?),
            TAG_COLS => c.cols = Some(parse_us(value, "Columns")?),
            TAG_BITS_ALLOCATED => c.bits = Some(parse_us(value, "BitsAllocated")?),
            TAG_PIXEL_REPRESENTATION => c.pixel_rep = Some(parse_us(value, "PixelRepresentation")?),
            TAG_RESCALE_SLOPE => c.slope = Some(single_ds(value, "RescaleSlope")?),
            TAG_RESCALE_INTERCEPT => c.intercept = Some(single_ds(value, "RescaleIntercept")?),
            TAG_PIXEL_SPACING => {
                let v = parse_ds(value, "PixelSpacing")?;
                if v.len() != 2 || v[0] <= 0.0 || v[1] <= 0.0 {
                    return Err(Error::Format(format!("bad PixelSpacing {v:?}")));
                }
                c.spacing = Some((v[0], v[1]));
            }
            _ => {}
        }
    }
    build_header(c, syntax)
}

fn single_ds(value: &[u8], what: &str) -> Result<f64> {
    let v = parse_ds(value, what)?;
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Format(format!("{what}: expected one value, got {}", v.len()))),
    }
}

fn build_header(c: Collected<'_>, syntax: String) -> Result<(DicomHeader, RealGrid)> {
    let rows = c.rows.ok_or_else(|| Error::Format("missing Rows (0028,0010)".into()))? as usize;
    let cols = c.cols.ok_or_else(|| Error::Format("missing Columns (0028,0011)".into()))? as usize;
    let bits = c
        .bits
        .ok_or_else(|| Error::Format("missing BitsAllocated (0028,0100)".into()))?;
    let pixels = c
        .pixels
        .ok_or_else(|| Error::Format("missing PixelData (7FE0,0010)".into()))?;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty image {rows}x{cols}")));
    }
    if bits != 8 && bits != 16 {
        return Err(Error::Format(format!("unsupported BitsAllocated {bits}")));
    }
    let mut defaulted = Vec::new();
    let pixel_representation = match c.pixel_rep {
        Some(0) => PixelRepresentation::Unsigned,
        Some(1) => PixelRepresentation::Signed,
        Some(v) => return Err(Error::Format(format!("bad PixelRepresentation {v}"))),
        None => {
            warn!("PixelRepresentation missing; assuming unsigned");
            defaulted.push("PixelRepresentation".to_string());
            PixelRepresentation::Unsigned
        }
    };
    let rescale_slope = c.slope.unwrap_or_else(|| {
        warn!("RescaleSlope missing; using 1");
        defaulted.push("RescaleSlope".to_string());
        1.0
    });
    let rescale_intercept = c.intercept.unwrap_or_else(|| {
        warn!("RescaleIntercept missing; using 0");
        defaulted.push("RescaleIntercept".to_string());
        0.0
    });
    let pixel_spacing_mm = c.spacing.unwrap_or_else(|| {
        warn!("PixelSpacing missing; using {DEFAULT_SPACING_MM:?} mm");
        defaulted.push("PixelSpacing".to_string());
        DEFAULT_SPACING_MM
    });
    let header = DicomHeader {
        rows,
        cols,
        bits_allocated: bits,
        pixel_representation,
        rescale_slope,
        rescale_intercept,
        pixel_spacing_mm,
        transfer_syntax: syntax,
        defaulted,
    };
    let expected = rows * cols * header.bytes_per_pixel();
    if pixels.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: pixels.len(),
        });
    }
    let values: Vec<f64> = match (bits, pixel_representation) {
        (8, PixelRepresentation::Unsigned) => pixels.iter().map(|&b| b as f64).collect(),
        (8, PixelRepresentation::Signed) => pixels.iter().map(|&b| b as i8 as f64).collect(),
        (_, PixelRepresentation::Unsigned) => pixels
            .chunks_exact(2)
            .map(|p| u16::from_le_bytes([p[0], p[1]]) as f64)
            .collect(),
        (_, PixelRepresentation::Signed) => pixels
            .chunks_exact(2)
            .map(|p| i16::from_le_bytes([p[0], p[1]]) as f64)
            .collect(),
    };
    let raw = RealGrid::new(rows, cols, values)?.with_spacing(Some(pixel_spacing_mm));
    Ok((header, raw))
}

/// Read a DICOM file and convert it to Hounsfield units.
pub fn ingest_file(path: &Path) -> Result<(DicomHeader, HounsfieldSlice)> {
    let bytes = read_bytes(path)?;
    let (header, raw) = parse_dicom(&bytes)?;
    let mut slice = apply_rescale(&raw, header.rescale_slope, header.rescale_intercept)?;
    slice.pixel_spacing_mm = header.pixel_spacing_mm;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    slice.source_id = if header.defaulted.is_empty() {
        format!("dicom:{name}")
    } else {
        format!("dicom:{name};defaulted={}", header.defaulted.join(","))
    };
    Ok((header, slice))
}

// ---------------------------------------------------------------------------
// Writer

struct Writer {
    out: Vec<u8>,
    explicit: bool,
}

impl Writer {
    fn element(&mut self, tag: Tag, vr: &[u8; 2], value: &[u8]) {
        let pad = if matches!(vr, b"UI" | b"OB") { 0u8 } else { b' ' };
        let mut v = value.to_vec();
        if v.len() % 2 == 1 {
            v.push(pad);
        }
        self.out.extend(tag.0.to_le_bytes());
        self.out.extend(tag.1.to_le_bytes());
        if self.explicit {
            self.out.extend(vr);
            if has_long_length(vr) {
                self.out.extend([0, 0]);
                self.out.extend((v.len() as u32).to_le_bytes());
            } else {
                self.out.extend((v.len() as u16).to_le_bytes());
            }
        } else {
            self.out.extend((v.len() as u32).to_le_bytes());
        }
        self.out.extend(v);
    }
}

fn ds(v: f64) -> Vec<u8> {
    format!("{v}").into_bytes()
}

/// Encode a CT image in one of the two supported transfer syntaxes.
/// `raw` holds stored pixel values, which must fit the header's bit depth.
pub fn encode_dicom(header: &DicomHeader, raw: &RealGrid) -> Result<Vec<u8>> {
    let explicit = match header.transfer_syntax.as_str() {
        EXPLICIT_VR_LE => true,
        IMPLICIT_VR_LE => false,
        other => return Err(Error::UnsupportedSyntax(other.to_string())),
    };
    if raw.dims() != (header.rows, header.cols) {
        return Err(Error::Shape(format!(
            "header says {}x{}, pixels are {}x{}",
            header.rows,
            header.cols,
            raw.rows(),
            raw.cols()
        )));
    }
    let (lo, hi) = match (header.bits_allocated, header.pixel_representation) {
        (8, PixelRepresentation::Unsigned) => (0.0, 255.0),
        (8, PixelRepresentation::Signed) => (-128.0, 127.0),
        (16, PixelRepresentation::Unsigned) => (0.0, 65535.0),
        (16, PixelRepresentation::Signed) => (-32768.0, 32767.0),
        (b, _) => return Err(Error::Parameter(format!("unsupported bit depth {b}"))),
    };
    let mut pixels = Vec::with_capacity(raw.len() * header.bytes_per_pixel());
    for &v in raw.values() {
        if v.fract() != 0.0 || v < lo || v > hi {
            return Err(Error::Parameter(format!("stored value {v} does not fit the bit depth")));
        }
        match header.bits_allocated {
            8 => pixels.push(v as i16 as u8),
            _ => pixels.extend((v as i32 as u16).to_le_bytes()),
        }
    }

    let mut meta = Writer {
        out: Vec::new(),
        explicit: true,
    };
    meta.element((0x0002, 0x0001), b"OB", &[0, 1]);
    meta.element((0x0002, 0x0002), b"UI", b"1.2.840.10008.5.1.4.1.1.2");
    meta.element((0x0002, 0x0003), b"UI", b"1.2.826.0.1.3680043.10.1.1");
    meta.element(TAG_TRANSFER_SYNTAX, b"UI", header.transfer_syntax.as_bytes());
    meta.element((0x0002, 0x0012), b"UI", b"1.2.826.0.1.3680043.10.1");

    let mut out = vec![0u8; 128];
    out.extend(b"DICM");
    let mut group_len = Writer {
        out: Vec::new(),
        explicit: true,
    };
    group_len.element((0x0002, 0x0000), b"UL", &(meta.out.len() as u32).to_le_bytes());
    out.extend(group_len.out);
    out.extend(meta.out);

    let spacing = format!("{}\\{}", header.pixel_spacing_mm.0, header.pixel_spacing_mm.1);
    let mut ds_w = Writer { out, explicit };
    ds_w.element((0x0008, 0x0060), b"CS", b"CT");
    ds_w.element((0x0028, 0x0002), b"US", &1u16.to_le_bytes());
    ds_w.element(TAG_ROWS, b"US", &(header.rows as u16).to_le_bytes());
    ds_w.element(TAG_COLS, b"US", &(header.cols as u16).to_le_bytes());
    ds_w.element(TAG_PIXEL_SPACING, b"DS", spacing.as_bytes());
    ds_w.element(TAG_BITS_ALLOCATED, b"US", &header.bits_allocated.to_le_bytes());
    ds_w.element((0x0028, 0x0101), b"US", &header.bits_allocated.to_le_bytes());
    ds_w.element((0x0028, 0x0102), b"US", &(header.bits_allocated - 1).to_le_bytes());
    let rep: u16 = match header.pixel_representation {
        PixelRepresentation::Unsigned => 0,
        PixelRepresentation::Signed => 1,
    };
    ds_w.element(TAG_PIXEL_REPRESENTATION, b"US", &rep.to_le_bytes());
    ds_w.element(TAG_RESCALE_INTERCEPT, b"DS", &ds(header.rescale_intercept));
    ds_w.element(TAG_RESCALE_SLOPE, b"DS", &ds(header.rescale_slope));
    let vr = if header.bits_allocated == 8 { b"OB" } else { b"OW" };
    ds_w.element(TAG_PIXEL_DATA, vr, &pixels);
    Ok(ds_w.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(rows: usize, cols: usize, syntax: &str) -> DicomHeader {
        DicomHeader {
            rows,
            cols,
            bits_allocated: 16,
            pixel_representation: PixelRepresentation::Unsigned,
            rescale_slope: 1.0,
            rescale_intercept: -1024.0,
            pixel_spacing_mm: (0.7, 0.7),
            transfer_syntax: syntax.to_string(),
            defaulted: vec![],
        }
    }

    #[test]
    fn water_fixture_is_zero_hu() {
        let h = header(16, 16, EXPLICIT_VR_LE);
        let raw = RealGrid::filled(16, 16, 1024.0).unwrap();
        let (ph, praw) = parse_dicom(&encode_dicom(&h, &raw).unwrap()).unwrap();
        let s = apply_rescale(&praw, ph.rescale_slope, ph.rescale_intercept).unwrap();
        assert!(s.grid.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_zero_is_minus_1024() {
        let h = header(16, 16, IMPLICIT_VR_LE);
        let raw = RealGrid::zeros(16, 16).unwrap();
        let (ph, praw) = parse_dicom(&encode_dicom(&h, &raw).unwrap()).unwrap();
        let s = apply_rescale(&praw, ph.rescale_slope, ph.rescale_intercept).unwrap();
        assert!(s.grid.values().iter().all(|&v| v == -1024.0));
    }

    #[test]
    fn rescale_examples() {
        let raw = RealGrid::new(1, 3, vec![-5.0, 0.0, 7.5]).unwrap();
        assert_eq!(apply_rescale(&raw, 1.0, 0.0).unwrap().grid.values(), raw.values());
        let v = RealGrid::filled(1, 1, 2000.0).unwrap();
        assert_eq!(apply_rescale(&v, 1.0, -1024.0).unwrap().grid.values(), &[976.0]);
        let v = RealGrid::filled(1, 1, 10000.0).unwrap();
        assert_eq!(apply_rescale(&v, 1.0, 0.0).unwrap().grid.values(), &[4000.0]);
        assert!(matches!(apply_rescale(&v, 0.0, 0.0), Err(Error::InvalidRescale(_))));
    }

    #[test]
    fn compressed_syntax_rejected() {
        let h = header(4, 4, EXPLICIT_VR_LE);
        let raw = RealGrid::zeros(4, 4).unwrap();
        let mut bytes = encode_dicom(&h, &raw).unwrap();
        // Swap the transfer syntax UID for JPEG baseline.
        let jpeg = b"1.2.840.10008.1.2.4.50";
        let at = bytes
            .windows(EXPLICIT_VR_LE.len())
            .position(|w| w == EXPLICIT_VR_LE.as_bytes())
            .unwrap();
        // Rewrite the element: the length field sits 2 bytes before the value.
        bytes.splice(at - 2..at + EXPLICIT_VR_LE.len() + 1, {
            let mut v = (jpeg.len() as u16).to_le_bytes().to_vec();
            v.extend_from_slice(jpeg);
            v
        });
        assert!(matches!(parse_dicom(&bytes), Err(Error::UnsupportedSyntax(_))));
    }

    #[test]
    fn truncated_pixels_are_length_mismatch() {
        let h = header(8, 8, EXPLICIT_VR_LE);
        let raw = RealGrid::filled(8, 8, 3.0).unwrap();
        let bytes = encode_dicom(&h, &raw).unwrap();
        let err = parse_dicom(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }), "{err}");
    }

    #[test]
    fn garbage_is_format_error() {
        assert!(matches!(parse_dicom(b"hello"), Err(Error::Format(_))));
        assert!(matches!(parse_dicom(&[0xAB; 300]), Err(Error::Format(_))));
    }

    #[test]
    fn missing_rescale_defaults_to_identity() {
        // Implicit-VR bare stream with only the required attributes.
        let mut w = Writer {
            out: Vec::new(),
            explicit: false,
        };
        w.element(TAG_ROWS, b"US", &2u16.to_le_bytes());
        w.element(TAG_COLS, b"US", &2u16.to_le_bytes());
        w.element(TAG_BITS_ALLOCATED, b"US", &8u16.to_le_bytes());
        w.element(TAG_PIXEL_DATA, b"OB", &[1, 2, 3, 4]);
        let (h, raw) = parse_dicom(&w.out).unwrap();
        assert_eq!(h.transfer_syntax, IMPLICIT_VR_LE);
        assert_eq!((h.rescale_slope, h.rescale_intercept), (1.0, 0.0));
        assert_eq!(h.pixel_spacing_mm, DEFAULT_SPACING_MM);
        assert!(h.defaulted.contains(&"RescaleSlope".to_string()));
        assert_eq!(raw.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn undefined_length_sequence_is_skipped() {
        let h = header(2, 2, EXPLICIT_VR_LE);
        let raw = RealGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_dicom(&h, &raw).unwrap();
        // Splice an undefined-length SQ with one undefined-length item
        // before the first dataset element (0008,0060).
        let at = bytes
            .windows(4)
            .position(|w| w == [0x08, 0x00, 0x60, 0x00])
            .unwrap();
        let mut sq = Vec::new();
        sq.extend([0x08, 0x00, 0x15, 0x11]); // (0008,1115)
        sq.extend(b"SQ");
        sq.extend([0, 0]);
        sq.extend(UNDEFINED_LENGTH.to_le_bytes());
        sq.extend([0xFE, 0xFF, 0x00, 0xE0]);
        sq.extend(UNDEFINED_LENGTH.to_le_bytes());
        sq.extend([0x08, 0x00, 0x50, 0x11]); // (0008,1150) UI
        sq.extend(b"UI");
        sq.extend(4u16.to_le_bytes());
        sq.extend(b"1.2\0");
        sq.extend([0xFE, 0xFF, 0x0D, 0xE0, 0, 0, 0, 0]);
        sq.extend([0xFE, 0xFF, 0xDD, 0xE0, 0, 0, 0, 0]);
        let mut spliced = bytes[..at].to_vec();
        spliced.extend(sq);
        spliced.extend(&bytes[at..]);
        let (ph, praw) = parse_dicom(&spliced).unwrap();
        assert_eq!(ph, h);
        assert_eq!(praw.values(), raw.values());
    }
}

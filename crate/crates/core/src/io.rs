//! On-disk formats: 16-bit grayscale PNG images, 8-bit PNG renders with text
//! metadata, and the DFLD binary displacement-field format.
//!
//! DFLD layout, all integers little-endian:
//!
//! ```text
//! "DFLD" | u32 version=1 | u32 H | u32 W | u32 channels=2
//! H*W f32 (u plane) | H*W f32 (v plane) | u64 FNV-1a of the two planes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{DisplacementField, Grid};

pub const DFLD_MAGIC: &[u8; 4] = b"DFLD";
pub const DFLD_VERSION: u32 = 1;
const DFLD_HEADER: usize = 20;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("malformed file: {0}")]
    Malformed(String),
}

impl From<png::EncodingError> for IoError {
    fn from(e: png::EncodingError) -> Self {
        match e {
            png::EncodingError::IoError(io) => IoError::Io(io),
            other => IoError::Png(other.to_string()),
        }
    }
}

impl From<png::DecodingError> for IoError {
    fn from(e: png::DecodingError) -> Self {
        match e {
            png::DecodingError::IoError(io) => IoError::Io(io),
            other => IoError::Png(other.to_string()),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn checksum_file(path: &Path) -> Result<u64, IoError> {
    Ok(fnv1a64(&std::fs::read(path)?))
}

fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

/// Encode an intensity image in `[0, 1]` as a 16-bit grayscale PNG.
pub fn encode_png16(img: &Grid) -> Result<Vec<u8>, IoError> {
    let (h, w) = img.dims();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header()?;
        let bytes: Vec<u8> = img.data().iter().flat_map(|&v| quantize16(v).to_be_bytes()).collect();
        writer.write_image_data(&bytes)?;
    }
    Ok(out)
}

pub fn write_png16(path: &Path, img: &Grid) -> Result<(), IoError> {
    std::fs::write(path, encode_png16(img)?)?;
    Ok(())
}

/// A decoded grayscale PNG plus its tEXt chunks.
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub pixels: Grid,
    pub bit_depth: u8,
    pub text: Vec<(String, String)>,
}

pub fn decode_png<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<GrayImage, IoError> {
    let mut reader = png::Decoder::new(r).read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf)?;
    if frame.color_type != png::ColorType::Grayscale {
        return Err(IoError::Png(format!("expected grayscale, got {:?}", frame.color_type)));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let bytes = &buf[..frame.buffer_size()];
    let (data, depth): (Vec<f32>, u8) = match frame.bit_depth {
        png::BitDepth::Sixteen => (
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
                .collect(),
            16,
        ),
        png::BitDepth::Eight => (bytes.iter().map(|&b| b as f32 / 255.0).collect(), 8),
        other => return Err(IoError::Png(format!("unsupported bit depth {other:?}"))),
    };
    if data.len() != h * w {
        return Err(IoError::Malformed(format!("{} pixels for {h}x{w}", data.len())));
    }
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    Ok(GrayImage {
        pixels: Grid::from_vec(h, w, data),
        bit_depth: depth,
        text,
    })
}

pub fn read_png(path: &Path) -> Result<GrayImage, IoError> {
    decode_png(BufReader::new(File::open(path)?))
}

pub fn read_png16(path: &Path) -> Result<Grid, IoError> {
    Ok(read_png(path)?.pixels)
}

pub fn decode_png_bytes(bytes: &[u8]) -> Result<GrayImage, IoError> {
    decode_png(Cursor::new(bytes))
}

/// 8-bit grayscale PNG of values in `[0, 1]` with `(keyword, text)` tEXt chunks.
pub fn write_png8(path: &Path, img: &Grid, text: &[(String, String)]) -> Result<(), IoError> {
    let (h, w) = img.dims();
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        enc.add_text_chunk(k.clone(), v.clone())?;
    }
    let mut writer = enc.write_header()?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Header fields of a DFLD file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DfldHeader {
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

pub fn encode_dfld(field: &DisplacementField) -> Vec<u8> {
    let (h, w) = field.dims();
    let mut out = Vec::with_capacity(DFLD_HEADER + 8 * h * w + 8);
    out.extend_from_slice(DFLD_MAGIC);
    for v in [DFLD_VERSION, h as u32, w as u32, 2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for plane in [&field.u, &field.v] {
        for &x in plane.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let sum = fnv1a64(&out[DFLD_HEADER..]);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

pub fn decode_dfld_header(bytes: &[u8]) -> Result<DfldHeader, IoError> {
    if bytes.len() < 4 || &bytes[..4] != DFLD_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(IoError::BadMagic {
            expected: "DFLD".into(),
            found,
        });
    }
    if bytes.len() < DFLD_HEADER {
        return Err(IoError::Truncated {
            expected: DFLD_HEADER,
            found: bytes.len(),
        });
    }
    let header = DfldHeader {
        version: u32_at(bytes, 4),
        height: u32_at(bytes, 8),
        width: u32_at(bytes, 12),
        channels: u32_at(bytes, 16),
    };
    if header.version != DFLD_VERSION {
        return Err(IoError::Version(header.version));
    }
    if header.channels != 2 {
        return Err(IoError::Malformed(format!("{} channels, expected 2", header.channels)));
    }
    Ok(header)
}

pub fn decode_dfld(bytes: &[u8]) -> Result<DisplacementField, IoError> {
    let header = decode_dfld_header(bytes)?;
    let (h, w) = (header.height as usize, header.width as usize);
    let payload = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| IoError::Malformed(format!("dimensions {h}x{w} overflow")))?;
    let expected = DFLD_HEADER + payload + 8;
    if bytes.len() < expected {
        return Err(IoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::Malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[DFLD_HEADER..DFLD_HEADER + payload];
    let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(IoError::Checksum { stored, computed });
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (u, v) = floats.split_at(h * w);
    Ok(DisplacementField::new(
        Grid::from_vec(h, w, u.to_vec()),
        Grid::from_vec(h, w, v.to_vec()),
    ))
}

pub fn write_dfld(path: &Path, field: &DisplacementField) -> Result<(), IoError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_dfld(field))?;
    f.flush()?;
    Ok(())
}

pub fn read_dfld(path: &Path) -> Result<DisplacementField, IoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_dfld(&bytes)
}

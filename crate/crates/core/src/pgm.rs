//! Binary PGM (P5) frames and frame-sequence directories.
//!
//! Pixel values are held as `f64` in `[0, 1]`; writing clamps and
//! quantizes to the chosen bit depth. A sequence directory holds
//! `frame_0001.pgm ..= frame_NNNN.pgm` and a `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::operators::FrameShape;
use crate::ssm::FrameSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    U8,
    U16,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::U8 => 255,
            BitDepth::U16 => 65535,
        }
    }
}

/// Grayscale image with values normally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    shape: FrameShape,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(shape: FrameShape, pixels: Vec<f64>) -> Result<Self> {
        check_dim("GrayImage::new", shape.len(), pixels.len())?;
        Ok(Self { shape, pixels })
    }

    pub fn from_frame(frame: &DVector<f64>, shape: FrameShape) -> Result<Self> {
        Self::new(shape, frame.as_slice().to_vec())
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.cols
    }

    pub fn height(&self) -> usize {
        self.shape.rows
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_frame(self) -> DVector<f64> {
        DVector::from_vec(self.pixels)
    }
}

pub fn encode_pgm(image: &GrayImage, depth: BitDepth) -> Vec<u8> {
    let max = depth.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), max).into_bytes();
    for &p in &image.pixels {
        let q = (p.clamp(0.0, 1.0) * max as f64).round() as u32;
        match depth {
            BitDepth::U8 => out.push(q as u8),
            BitDepth::U16 => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Pgm(format!(
            "expected P5 magic, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let max = parse_number(next_token(bytes, &mut pos)?)?;
    if max == 0 || max > 65535 {
        return Err(Error::Pgm(format!("maxval {max} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let wide = max > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Pgm(format!("raster truncated: need {need} bytes")))?;
    let pixels = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / max as f64)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / max as f64).collect()
    };
    GrayImage::new(FrameShape::new(height, width), pixels)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Pgm("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Pgm(format!("bad header field {:?}", String::from_utf8_lossy(token))))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, image: &GrayImage, depth: BitDepth) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(image, depth))?;
    Ok(())
}

/// `manifest.json` of a sequence directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "N_x")]
    pub width: usize,
    #[serde(rename = "N_y")]
    pub height: usize,
    pub dtype: BitDepth,
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{:04}.pgm", t + 1)
}

pub fn write_sequence(dir: &Path, seq: &FrameSequence, depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let shape = seq.shape();
    for (t, frame) in seq.iter().enumerate() {
        let image = GrayImage::from_frame(frame, shape)?;
        write_pgm(&dir.join(frame_file_name(t)), &image, depth)?;
    }
    let manifest = SequenceManifest {
        frames: seq.len(),
        width: shape.cols,
        height: shape.rows,
        dtype: depth,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<FrameSequence> {
    let manifest: SequenceManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let shape = FrameShape::new(manifest.height, manifest.width);
    let frames = (0..manifest.frames)
        .map(|t| {
            let image = read_pgm(&dir.join(frame_file_name(t)))?;
            if image.shape() != shape {
                return Err(Error::Pgm(format!(
                    "frame {} is {}x{}, manifest says {}x{}",
                    t + 1,
                    image.height(),
                    image.width(),
                    shape.rows,
                    shape.cols
                )));
            }
            Ok(image.into_frame())
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, shape)
}

//! Plain 2-D rasters (no autodiff): single-channel real maps, planar RGB
//! frames, and boolean validity masks, plus binary PGM/PPM persistence for
//! visual inspection.
//!
//! Values are `f32` in `[0,1]` by convention (depth rasters normalize by the
//! sensor maximum before entropy computation). RGB data is stored planar —
//! all of red, then green, then blue — so frames copy straight into
//! channels-first network input without a shuffle.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Raster {
    /// All-zero raster.
    pub fn new(h: usize, w: usize) -> Self {
        Self::full(h, w, 0.0)
    }

    /// Constant-valued raster.
    pub fn full(h: usize, w: usize, v: f32) -> Self {
        Raster { h, w, data: vec![v; h * w] }
    }

    /// Wrap row-major data; the length must match `h·w`.
    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(
                "raster",
                format!("{h}×{w} needs {} values, got {}", h * w, data.len()),
            ));
        }
        Ok(Raster { h, w, data })
    }

    /// Build from a per-pixel function of (row, col).
    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Raster { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.w + c] = v;
    }

    /// Consume into the underlying row-major vector.
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

/// Planar RGB raster: all red values, then green, then blue, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl RgbRaster {
    /// All-black frame.
    pub fn new(h: usize, w: usize) -> Self {
        RgbRaster { h, w, data: vec![0.0; 3 * h * w] }
    }

    /// Wrap planar data of length `3·h·w`.
    pub fn from_vec(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * h * w {
            return Err(Error::shape(
                "rgb raster",
                format!("3×{h}×{w} needs {} values, got {}", 3 * h * w, data.len()),
            ));
        }
        Ok(RgbRaster { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Planar data: channel `ch` occupies `data()[ch·h·w .. (ch+1)·h·w]`.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, ch: usize, r: usize, c: usize) -> f32 {
        self.data[(ch * self.h + r) * self.w + c]
    }

    pub fn set(&mut self, ch: usize, r: usize, c: usize, v: f32) {
        self.data[(ch * self.h + r) * self.w + c] = v;
    }

    /// Set one pixel across all three channels.
    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        for (ch, v) in rgb.into_iter().enumerate() {
            self.set(ch, r, c, v);
        }
    }

    /// Rec. 601 luma: `0.299·R + 0.587·G + 0.114·B`.
    pub fn luma(&self) -> Raster {
        let plane = self.h * self.w;
        let (r, rest) = self.data.split_at(plane);
        let (g, b) = rest.split_at(plane);
        let data = (0..plane).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect();
        Raster { h: self.h, w: self.w, data }
    }

    /// Quantize every channel to the nearest 8-bit level `k/255`, the exact
    /// values PPM persistence can represent.
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.data {
            *v = quantize(*v) as f32 / 255.0;
        }
    }
}

/// Boolean validity raster (true = pixel holds a real measurement).
#[derive(Debug, Clone, PartialEq)]
pub struct BoolRaster {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BoolRaster {
    /// Uniform mask.
    pub fn full(h: usize, w: usize, v: bool) -> Self {
        BoolRaster { h, w, data: vec![v; h * w] }
    }

    /// Wrap row-major flags; the length must match `h·w`.
    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(
                "mask raster",
                format!("{h}×{w} needs {} values, got {}", h * w, data.len()),
            ));
        }
        Ok(BoolRaster { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.w + c] = v;
    }

    /// Number of valid pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a binary (P5) PGM, quantizing values to 8 bits.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", raster.w, raster.h).into_bytes();
    bytes.extend(raster.data.iter().map(|&v| quantize(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a binary (P5) PGM into values `k/255`.
pub fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = parse_netpbm(&bytes, b"P5", 1, path)?;
    let data = pixels.iter().map(|&k| k as f32 / 255.0).collect();
    Ok(Raster { h, w, data })
}

/// Write a binary (P6) PPM, quantizing values to 8 bits.
pub fn write_ppm(path: &Path, rgb: &RgbRaster) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", rgb.w, rgb.h).into_bytes();
    let plane = rgb.h * rgb.w;
    for i in 0..plane {
        for ch in 0..3 {
            bytes.push(quantize(rgb.data[ch * plane + i]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a binary (P6) PPM into planar values `k/255`.
pub fn read_ppm(path: &Path) -> Result<RgbRaster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = parse_netpbm(&bytes, b"P6", 3, path)?;
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = pixels[3 * i + ch] as f32 / 255.0;
        }
    }
    Ok(RgbRaster { h, w, data })
}

/// Parse a binary netpbm header (`magic`, width, height, maxval 255) and
/// return the pixel payload.
fn parse_netpbm<'a>(
    bytes: &'a [u8],
    magic: &[u8],
    channels: usize,
    path: &Path,
) -> Result<(usize, usize, &'a [u8])> {
    let what: &'static str = if channels == 3 { "PPM" } else { "PGM" };
    let bad = |detail: &str| Error::Malformed { what, path: path.to_path_buf(), detail: detail.into() };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad("wrong magic bytes"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and '#' comment lines between header fields
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("unparseable header field"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != channels * w * h {
        return Err(bad(&format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            channels * w * h
        )));
    }
    Ok((w, h, payload))
}

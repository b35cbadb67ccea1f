//! Raster images and binary PGM/PPM (P5/P6, maxval 255) I/O.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Gray,
    Rgb,
    YCbCr,
}

/// Interleaved (`H×W×C`) pixel storage.
#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    U8(Vec<u8>),
    /// Nominally in `[0, 1]`; clamped when quantized or exported.
    F32(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Pixels,
    color: ColorSpace,
}

/// Rounds half away from zero and clamps to `[0, 255]`.
pub fn quantize_255(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn default_color(channels: usize) -> ColorSpace {
    if channels == 1 {
        ColorSpace::Gray
    } else {
        ColorSpace::Rgb
    }
}

impl ImageBuffer {
    fn check(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions {height}x{width} must be positive"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("{channels} channels (expected 1 or 3)")));
        }
        if len != height * width * channels {
            return Err(Error::invalid(format!(
                "{len} samples for a {height}x{width}x{channels} image"
            )));
        }
        Ok(())
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        Self::check(height, width, channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            pixels: Pixels::U8(data),
            color: default_color(channels),
        })
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::check(height, width, channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            pixels: Pixels::F32(data),
            color: default_color(channels),
        })
    }

    /// From samples on the 0–255 scale, rounded to 8 bits.
    pub fn from_levels(height: usize, width: usize, channels: usize, levels: &[f64]) -> Result<Self> {
        Self::from_u8(
            height,
            width,
            channels,
            levels.iter().map(|&v| quantize_255(v)).collect(),
        )
    }

    pub fn with_color(mut self, color: ColorSpace) -> Self {
        self.color = color;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn is_u8(&self) -> bool {
        matches!(self.pixels, Pixels::U8(_))
    }

    /// 8-bit samples, quantizing float data.
    pub fn as_u8(&self) -> Cow<'_, [u8]> {
        match &self.pixels {
            Pixels::U8(d) => Cow::Borrowed(d),
            Pixels::F32(d) => Cow::Owned(d.iter().map(|&v| quantize_255(v as f64 * 255.0)).collect()),
        }
    }

    pub fn to_u8(&self) -> ImageBuffer {
        Self {
            pixels: Pixels::U8(self.as_u8().into_owned()),
            ..self.clone()
        }
    }

    /// Samples on the 0–255 scale.
    pub fn levels(&self) -> Vec<f64> {
        match &self.pixels {
            Pixels::U8(d) => d.iter().map(|&v| v as f64).collect(),
            Pixels::F32(d) => d.iter().map(|&v| v as f64 * 255.0).collect(),
        }
    }

    /// Samples in `[0, 1]` (floats are passed through unclamped).
    pub fn unit(&self) -> Vec<f32> {
        match &self.pixels {
            Pixels::U8(d) => d.iter().map(|&v| v as f32 / 255.0).collect(),
            Pixels::F32(d) => d.clone(),
        }
    }

    /// Replaces the samples with ones of the same representation, given on
    /// the 0–255 scale.
    pub(crate) fn with_levels(&self, height: usize, width: usize, levels: &[f64]) -> Result<Self> {
        let out = if self.is_u8() {
            Self::from_levels(height, width, self.channels, levels)?
        } else {
            Self::from_f32(
                height,
                width,
                self.channels,
                levels.iter().map(|&v| (v / 255.0) as f32).collect(),
            )?
        };
        Ok(out.with_color(self.color))
    }

    /// `[1, C, H, W]` tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let unit = self.unit();
        let mut data = vec![0.0f32; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = unit[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![1, c, h, w], data).expect("dimensions checked at construction")
    }

    /// Float image from the first item of an `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let [_, c, h, w] = match *t.shape() {
            [n, c, h, w] if n >= 1 => [n, c, h, w],
            ref s => return Err(Error::shape(format!("expected [N,C,H,W], got {s:?}"))),
        };
        let src = t.data();
        let mut data = vec![0.0f32; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = src[(ch * h + y) * w + x];
                }
            }
        }
        Self::from_f32(h, w, c, data)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let pick = |src_w: usize| {
            (top..top + height).flat_map(move |y| ((y * src_w + left) * c)..((y * src_w + left + width) * c))
        };
        let pixels = match &self.pixels {
            Pixels::U8(d) => Pixels::U8(pick(self.width).map(|i| d[i]).collect()),
            Pixels::F32(d) => Pixels::F32(pick(self.width).map(|i| d[i]).collect()),
        };
        Ok(Self {
            height,
            width,
            pixels,
            ..self.clone()
        })
    }

    /// One of the eight dihedral transforms: bit 0 flips horizontally, bit 1
    /// flips vertically, bit 2 transposes (applied last).
    pub fn dihedral(&self, mode: u8) -> Self {
        let (h, w, c) = (self.height, self.width, self.channels);
        let transpose = mode & 4 != 0;
        let (oh, ow) = if transpose { (w, h) } else { (h, w) };
        let source = |oy: usize, ox: usize| {
            let (mut y, mut x) = if transpose { (ox, oy) } else { (oy, ox) };
            if mode & 1 != 0 {
                x = w - 1 - x;
            }
            if mode & 2 != 0 {
                y = h - 1 - y;
            }
            (y * w + x) * c
        };
        let order: Vec<usize> = (0..oh)
            .flat_map(|oy| (0..ow).flat_map(move |ox| (0..c).map(move |ch| source(oy, ox) + ch)))
            .collect();
        let pixels = match &self.pixels {
            Pixels::U8(d) => Pixels::U8(order.iter().map(|&i| d[i]).collect()),
            Pixels::F32(d) => Pixels::F32(order.iter().map(|&i| d[i]).collect()),
        };
        Self {
            height: oh,
            width: ow,
            pixels,
            ..self.clone()
        }
    }
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' && bytes[*pos] != b'\r' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_int(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::ImageFormat(format!("malformed header: expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::ImageFormat(format!("malformed header: {what} out of range")))
}

/// Parses a binary P5 (gray) or P6 (RGB) file with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::ImageFormat("not a binary PGM/PPM (expected P5 or P6)".into())),
    };
    let mut pos = 2;
    let width = header_int(bytes, &mut pos, "width")?;
    let height = header_int(bytes, &mut pos, "height")?;
    let maxval = header_int(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::ImageFormat(format!("invalid dimensions {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::ImageFormat(
                "malformed header: missing separator before payload".into(),
            ))
        }
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::ImageFormat("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::ImageFormat(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    ImageBuffer::from_u8(height, width, channels, payload[..need].to_vec())
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(&img.as_u8());
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::ImageFormat(m) => Error::ImageFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

//! Row-major 2D images and the binary PGM (P5) format.
//!
//! Pixel `(i, j)` covers the continuous square `[i, i+1) × [j, j+1)`, so its
//! centre sits at `(i + 0.5, j + 0.5)`; `u` grows right and `v` grows down.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image<P> {
    width: usize,
    height: usize,
    data: Vec<P>,
}

pub type Gray16 = Image<u16>;
pub type Mask = Image<u8>;

impl<P: Copy> Image<P> {
    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(
                "data",
                format!("{} pixels for a {width}×{height} image", data.len()),
            ));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.width, self.height]
    }

    pub fn pixels(&self) -> &[P] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<P> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> P {
        self.data[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: P) {
        self.data[j * self.width + i] = value;
    }

    /// Pixel at signed coordinates, or `None` outside the image.
    #[inline]
    pub fn checked(&self, i: i64, j: i64) -> Option<P> {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            None
        } else {
            Some(self.get(i as usize, j as usize))
        }
    }

    pub fn map<Q: Copy>(&self, f: impl Fn(P) -> Q) -> Image<Q> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }
}

impl<P: Copy + Into<f64>> Image<P> {
    /// Bilinear sample at continuous pixel coordinates; taps outside the
    /// image read as zero.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let x = u - 0.5;
        let y = v - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (i0, j0) = (x0 as i64, y0 as i64);
        let tap = |i: i64, j: i64| self.checked(i, j).map_or(0.0, Into::into);
        let top = tap(i0, j0) * (1.0 - fx) + tap(i0 + 1, j0) * fx;
        let bottom = tap(i0, j0 + 1) * (1.0 - fx) + tap(i0 + 1, j0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Nearest-neighbour sample: the pixel containing `(u, v)`.
    #[inline]
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<P> {
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
        self.checked(u.floor() as i64, v.floor() as i64)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().map(|&p| p.into()).fold(0.0, f64::max)
    }
}

impl Mask {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&p| p != 0).count()
    }

    /// Mask in the `{0, 255}` form used on disk.
    pub fn to_display(&self) -> Mask {
        self.map(|p| if p != 0 { 255 } else { 0 })
    }
}

/// Encodes a 16-bit P5 PGM, maxval 65535, big-endian samples.
pub fn encode_pgm16(img: &Gray16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 2);
    for &p in &img.data {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

/// Encodes a binary mask as an 8-bit P5 PGM, maxval 255, values `{0, 255}`.
pub fn encode_mask_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&p| if p != 0 { 255u8 } else { 0 }));
    out
}

/// Encodes an 8-bit grayscale P5 PGM without remapping values.
pub fn encode_pgm8(img: &Image<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// A decoded PGM; samples are widened to `u16` regardless of depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub maxval: u16,
    pub image: Gray16,
}

impl Pgm {
    /// Converts to a `{0,1}` mask (nonzero samples become 1).
    pub fn to_mask(&self) -> Mask {
        self.image.map(|p| u8::from(p != 0))
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("header", "truncated PGM header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(field, "expected a decimal integer"))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::format("magic", "only binary P5 PGM is supported"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::format("maxval", format!("{maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let depth = if maxval > 255 { 2 } else { 1 };
    let need = width * height * depth;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != need {
        return Err(Error::format(
            "raster length",
            format!("expected {need} bytes, found {}", raster.len()),
        ));
    }
    let data = if depth == 2 {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    Ok(Pgm {
        maxval: maxval as u16,
        image: Image::from_vec(width, height, data)?,
    })
}

pub fn write_pgm16(img: &Gray16, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm16(img)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_mask_pgm(mask: &Mask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_pgm(mask)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_pgm(&bytes)
}

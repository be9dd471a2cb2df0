//! Interleaved float images and binary PPM/PGM IO.
//!
//! Pixel values are `f32` in `[0, 1]`. Pixel `(x, y)` has its center at the
//! integer coordinate `(x, y)`, the same frame landmarks are expressed in.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidSize(format!(
                "image {width}x{height}x{channels} has a zero dimension"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        })
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        if data.len() != img.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "image {width}x{height}x{channels} needs {} values, got {}",
                img.data.len(),
                data.len()
            )));
        }
        img.data = data;
        Ok(img)
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Sample with black outside the image.
    #[inline]
    fn sample_or_black(&self, x: i64, y: i64, c: usize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.get(x as usize, y as usize, c) as f64
        }
    }

    /// Bilinear sample at a sub-pixel position; taps outside the image read
    /// as black.
    pub fn bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let p00 = self.sample_or_black(xi, yi, c);
        let p10 = self.sample_or_black(xi + 1, yi, c);
        let p01 = self.sample_or_black(xi, yi + 1, c);
        let p11 = self.sample_or_black(xi + 1, yi + 1, c);
        (1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.width * self.height) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Reads a binary PPM (`P6`, RGB) or PGM (`P5`, gray) with maxval ≤ 255.
    pub fn read_pnm(reader: impl Read) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let magic = read_token(&mut r)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::format("PNM header", format!("unsupported magic {other:?}"))),
        };
        let width = parse_header_num(&read_token(&mut r)?)?;
        let height = parse_header_num(&read_token(&mut r)?)?;
        let maxval = parse_header_num(&read_token(&mut r)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::format("PNM header", format!("maxval {maxval} not in 1..=255")));
        }
        let mut raw = vec![0u8; width * height * channels];
        r.read_exact(&mut raw)?;
        let scale = maxval as f32;
        let data = raw.into_iter().map(|b| b as f32 / scale).collect();
        Self::from_data(width, height, channels, data)
    }

    /// Writes 8-bit PPM/PGM, rounding and clamping each sample.
    pub fn write_pnm(&self, mut w: impl Write) -> Result<()> {
        let magic = match self.channels {
            3 => "P6",
            1 => "P5",
            c => {
                return Err(Error::ShapeMismatch(format!(
                    "PNM output needs 1 or 3 channels, image has {c}"
                )))
            }
        };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pnm(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pnm(f)
    }
}

fn parse_header_num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::format("PNM header", format!("expected a number, got {tok:?}")))
}

/// Reads one whitespace-delimited header token, skipping `#` comments, and
/// consumes exactly one trailing whitespace byte.
fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::format("PNM header", "unexpected end of file"));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut line = Vec::new();
                r.read_until(b'\n', &mut line)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            b => tok.push(b as char),
        }
    }
}

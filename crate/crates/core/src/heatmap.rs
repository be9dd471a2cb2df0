//! Gaussian heatmap encoding and sub-pixel decoding.
//!
//! A [`HeatmapStack`] holds one `H × W` channel per landmark. Coordinates in
//! the heatmap frame are image coordinates divided by the stack stride, with
//! grid cell `(m, n)` centered on `(m, n)`.
//!
//! Three decoders are provided:
//! - [`decode_argmax`]: integer peak location.
//! - [`decode_gradient`]: peak shifted by `c` along the sign of the central
//!   difference on each axis.
//! - [`decode_gaussian_fit`]: one Newton step on the log-heatmap over the
//!   3×3 window around the peak, exact for a sampled Gaussian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Landmarks, Point, SimilarityTransform};

/// Values are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitude {
    /// Peak value 1 at the landmark.
    PeakOne,
    /// Isotropic density normalization `1 / (2π σ²)`.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma: f64,
    pub amplitude: Amplitude,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            sigma: 1.5,
            amplitude: Amplitude::PeakOne,
        }
    }
}

impl GaussianParams {
    pub fn new(sigma: f64, amplitude: Amplitude) -> Result<Self> {
        let p = Self { sigma, amplitude };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)))
        }
    }

    pub fn peak(&self) -> f64 {
        match self.amplitude {
            Amplitude::PeakOne => 1.0,
            Amplitude::Normalized => 1.0 / (2.0 * std::f64::consts::PI * self.sigma * self.sigma),
        }
    }
}

/// `K × H × W` heatmaps, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    /// Input-image pixels per heatmap pixel.
    pub stride: f64,
    values: Vec<f64>,
    /// Per channel: the encoded landmark lay outside the grid.
    pub truncated: Vec<bool>,
}

impl HeatmapStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        if height < 3 || width < 3 {
            return Err(Error::InvalidSize(format!("heatmaps must be at least 3x3, got {height}x{width}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            stride: 1.0,
            values: vec![0.0; channels * height * width],
            truncated: vec![false; channels],
        })
    }

    pub fn from_values(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let mut s = Self::zeros(channels, height, width)?;
        if values.len() != s.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} stack needs {} values, got {}",
                s.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("heatmap values must be finite".into()));
        }
        s.values = values;
        Ok(s)
    }

    pub fn with_stride(mut self, stride: f64) -> Self {
        self.stride = stride;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.values[(k * self.height + y) * self.width + x]
    }

    /// Mirrors every channel left-right and reorders channels so that new
    /// channel `i` is old channel `perm[i]`.
    pub fn mirrored(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channels {
            return Err(Error::CountMismatch {
                expected: self.channels,
                found: perm.len(),
            });
        }
        let mut out = self.clone();
        for (i, &src) in perm.iter().enumerate() {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.values[(i * self.height + y) * self.width + x] = self.get(src, self.width - 1 - x, y);
                }
            }
            out.truncated[i] = self.truncated[src];
        }
        Ok(out)
    }

    /// Element-wise mean of two equally shaped stacks.
    pub fn average(&self, other: &Self) -> Result<Self> {
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(Error::ShapeMismatch("averaged stacks differ in shape".into()));
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o = (*o + v) / 2.0;
        }
        Ok(out)
    }

    /// `HMS1` container: magic, little-endian u32 `K, H, W`, then `K·H·W`
    /// little-endian f32 values, row-major per channel.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"HMS1")?;
        for d in [self.channels, self.height, self.width] {
            w.write_all(&u32::try_from(d).map_err(|_| Error::InvalidSize(format!("dimension {d} exceeds u32")))?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"HMS1" {
            return Err(Error::format("HMS1 stack", format!("bad magic {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [k, h, w] = dims;
        let mut raw = vec![0u8; k * h * w * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_values(k, h, w, values)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Renders one Gaussian per landmark on an `h × w` grid. Landmarks are in
/// heatmap coordinates; ones outside the grid produce truncated channels
/// flagged in [`HeatmapStack::truncated`].
pub fn encode(landmarks: &Landmarks, h: usize, w: usize, params: &GaussianParams) -> Result<HeatmapStack> {
    params.validate()?;
    let mut stack = HeatmapStack::zeros(landmarks.len(), h, w)?;
    let peak = params.peak();
    let inv_two_var = 1.0 / (2.0 * params.sigma * params.sigma);
    for (k, p) in landmarks.iter().enumerate() {
        stack.truncated[k] = !(p.x >= 0.0 && p.x <= (w - 1) as f64 && p.y >= 0.0 && p.y <= (h - 1) as f64);
        let gx: Vec<f64> = (0..w).map(|m| (-(m as f64 - p.x).powi(2) * inv_two_var).exp()).collect();
        let chan = stack.channel_mut(k);
        for n in 0..h {
            let gy = (-(n as f64 - p.y).powi(2) * inv_two_var).exp() * peak;
            for (v, g) in chan[n * w..(n + 1) * w].iter_mut().zip(&gx) {
                *v = gy * g;
            }
        }
    }
    Ok(stack)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeFlag {
    Exact,
    /// Peak on the border: fell back to the integer argmax.
    BorderFallback,
    /// Log-Hessian singular or not negative definite: fell back to the
    /// gradient decoder.
    SingularHessian,
}

/// A decoded landmark in the heatmap frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedPoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub flag: DecodeFlag,
}

impl DecodedPoint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Decoder {
    Argmax,
    Gradient { c: f64 },
    GaussianFit { fallback_c: f64 },
}

impl Default for Decoder {
    fn default() -> Self {
        Decoder::GaussianFit { fallback_c: 0.25 }
    }
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "argmax" => Ok(Decoder::Argmax),
            "gradient" => Ok(Decoder::Gradient { c: 0.25 }),
            "gaussian" | "gaussian-fit" => Ok(Decoder::default()),
            other => Err(Error::InvalidConfig(format!("unknown decoder {other:?}"))),
        }
    }
}

pub fn decode(stack: &HeatmapStack, decoder: Decoder) -> Vec<DecodedPoint> {
    match decoder {
        Decoder::Argmax => decode_argmax(stack),
        Decoder::Gradient { c } => decode_gradient(stack, c),
        Decoder::GaussianFit { fallback_c } => decode_gaussian_fit(stack, fallback_c),
    }
}

/// Peak of channel `k` as `(x, y, value)`; ties go to the smallest
/// row-major index.
fn argmax(stack: &HeatmapStack, k: usize) -> (usize, usize, f64) {
    let chan = stack.channel(k);
    let mut best = 0;
    for (i, &v) in chan.iter().enumerate().skip(1) {
        if v > chan[best] {
            best = i;
        }
    }
    (best % stack.width, best / stack.width, chan[best])
}

fn is_interior(stack: &HeatmapStack, x: usize, y: usize) -> bool {
    x >= 1 && y >= 1 && x + 1 < stack.width && y + 1 < stack.height
}

pub fn decode_argmax(stack: &HeatmapStack) -> Vec<DecodedPoint> {
    (0..stack.channels)
        .map(|k| {
            let (x, y, score) = argmax(stack, k);
            DecodedPoint {
                x: x as f64,
                y: y as f64,
                score,
                flag: DecodeFlag::Exact,
            }
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn gradient_point(stack: &HeatmapStack, k: usize, c: f64) -> DecodedPoint {
    let (x, y, score) = argmax(stack, k);
    if !is_interior(stack, x, y) {
        return DecodedPoint {
            x: x as f64,
            y: y as f64,
            score,
            flag: DecodeFlag::BorderFallback,
        };
    }
    let dx = stack.get(k, x + 1, y) - stack.get(k, x - 1, y);
    let dy = stack.get(k, x, y + 1) - stack.get(k, x, y - 1);
    DecodedPoint {
        x: x as f64 + c * sign(dx),
        y: y as f64 + c * sign(dy),
        score,
        flag: DecodeFlag::Exact,
    }
}

/// Argmax shifted by `c` toward the larger neighbor on each axis.
pub fn decode_gradient(stack: &HeatmapStack, c: f64) -> Vec<DecodedPoint> {
    (0..stack.channels).map(|k| gradient_point(stack, k, c)).collect()
}

/// One Newton step `μ = m − (∇² log H)⁻¹ ∇ log H` at the argmax `m`, with
/// central differences over the 3×3 window. The correction is clamped to
/// one pixel per axis. Border peaks and unusable Hessians fall back to
/// [`decode_gradient`] with coefficient `fallback_c`.
pub fn decode_gaussian_fit(stack: &HeatmapStack, fallback_c: f64) -> Vec<DecodedPoint> {
    (0..stack.channels)
        .map(|k| {
            let (x, y, score) = argmax(stack, k);
            if !is_interior(stack, x, y) {
                return gradient_point(stack, k, fallback_c);
            }
            let l = |dx: isize, dy: isize| {
                let v = stack.get(k, (x as isize + dx) as usize, (y as isize + dy) as usize);
                v.max(LOG_FLOOR).ln()
            };
            let center = l(0, 0);
            let gx = (l(1, 0) - l(-1, 0)) / 2.0;
            let gy = (l(0, 1) - l(0, -1)) / 2.0;
            let hxx = l(1, 0) - 2.0 * center + l(-1, 0);
            let hyy = l(0, 1) - 2.0 * center + l(0, -1);
            let hxy = (l(1, 1) - l(1, -1) - l(-1, 1) + l(-1, -1)) / 4.0;
            let det = hxx * hyy - hxy * hxy;
            let scale = hxx.abs().max(hyy.abs());
            if !(hxx < 0.0 && hyy < 0.0 && det > 1e-12 * scale * scale && det.is_finite()) {
                let mut p = gradient_point(stack, k, fallback_c);
                p.flag = DecodeFlag::SingularHessian;
                return p;
            }
            let ox = (-(hyy * gx - hxy * gy) / det).clamp(-1.0, 1.0);
            let oy = (-(hxx * gy - hxy * gx) / det).clamp(-1.0, 1.0);
            DecodedPoint {
                x: (x as f64 + ox).clamp(0.0, (stack.width - 1) as f64),
                y: (y as f64 + oy).clamp(0.0, (stack.height - 1) as f64),
                score,
                flag: DecodeFlag::Exact,
            }
        })
        .collect()
}

/// Heatmap-frame points → original image frame: scale by `stride`, then
/// undo the alignment transform.
pub fn to_image_frame(points: &[DecodedPoint], stride: f64, align: &SimilarityTransform) -> Result<Landmarks> {
    if !(stride > 0.0) {
        return Err(Error::InvalidConfig(format!("stride must be positive, got {stride}")));
    }
    let inv = align.invert()?;
    Landmarks::new(
        points
            .iter()
            .map(|p| inv.apply(Point::new(p.x * stride, p.y * stride)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn one(x: f64, y: f64) -> Landmarks {
        Landmarks::from_xy(&[(x, y)]).unwrap()
    }

    fn sigma(s: f64) -> GaussianParams {
        GaussianParams::new(s, Amplitude::PeakOne).unwrap()
    }

    #[test]
    fn peak_one_value_and_half_maximum() {
        let s = 1.5;
        let st = encode(&one(10.0, 20.0), 40, 40, &sigma(s)).unwrap();
        assert_eq!(st.get(0, 10, 20), 1.0);
        // Half maximum sits σ·√(2 ln 2) from the center; probe the
        // continuous model there since it is off-grid.
        let r = s * (2.0 * 2f64.ln()).sqrt();
        let half = (-(r * r) / (2.0 * s * s)).exp();
        assert!((half - 0.5).abs() < 1e-12);
        let shifted = encode(&one(10.0 - r, 20.0), 40, 40, &sigma(s)).unwrap();
        assert!((shifted.get(0, 10, 20) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalized_amplitude() {
        let p = GaussianParams::new(2.0, Amplitude::Normalized).unwrap();
        let st = encode(&one(10.0, 20.0), 40, 40, &p).unwrap();
        assert!((st.get(0, 10, 20) - 1.0 / (8.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((st.get(0, 10, 20) - 0.03979).abs() < 1e-5);
    }

    #[test]
    fn channel_sum_matches_double_loop() {
        let (x0, y0, s) = (10.3, 20.7, 1.5);
        let st = encode(&one(x0, y0), 32, 48, &sigma(s)).unwrap();
        let mut oracle = 0.0;
        for n in 0..32 {
            for m in 0..48 {
                let d2 = (m as f64 - x0).powi(2) + (n as f64 - y0).powi(2);
                oracle += (-d2 / (2.0 * s * s)).exp();
            }
        }
        let sum: f64 = st.channel(0).iter().sum();
        assert!((sum - oracle).abs() < 1e-12);
    }

    #[test]
    fn out_of_frame_is_flagged_not_an_error() {
        let st = encode(&Landmarks::from_xy(&[(-30.0, 5.0), (5.0, 5.0)]).unwrap(), 16, 16, &sigma(1.5)).unwrap();
        assert_eq!(st.truncated, vec![true, false]);
        assert!(st.channel(0).iter().all(|&v| v < 1e-40));
    }

    #[test]
    fn invalid_encode_inputs() {
        assert!(encode(&one(1.0, 1.0), 2, 9, &sigma(1.0)).is_err());
        assert!(GaussianParams::new(0.0, Amplitude::PeakOne).is_err());
    }

    #[test]
    fn argmax_examples() {
        let st = encode(&one(10.0, 20.0), 40, 40, &sigma(1.5)).unwrap();
        let d = decode_argmax(&st)[0];
        assert_eq!((d.x, d.y, d.score), (10.0, 20.0, 1.0));

        let z = HeatmapStack::zeros(1, 5, 5).unwrap();
        let d = decode_argmax(&z)[0];
        assert_eq!((d.x, d.y, d.score), (0.0, 0.0, 0.0));

        let st = encode(&one(10.3, 20.7), 40, 40, &sigma(1.5)).unwrap();
        let d = decode_argmax(&st)[0];
        // Brute force: the grid point with the largest sampled value.
        let mut best = (0, 0, f64::MIN);
        for n in 0..40 {
            for m in 0..40 {
                let v = -((m as f64 - 10.3).powi(2) + (n as f64 - 20.7).powi(2));
                if v > best.2 {
                    best = (m, n, v);
                }
            }
        }
        assert_eq!((d.x, d.y), (best.0 as f64, best.1 as f64));
        assert_eq!((d.x, d.y), (10.0, 21.0));
    }

    #[test]
    fn gradient_examples() {
        let st = encode(&one(10.0, 20.0), 40, 40, &sigma(1.5)).unwrap();
        let d = decode_gradient(&st, 0.25)[0];
        assert_eq!((d.x, d.y), (10.0, 20.0));

        let st = encode(&one(10.3, 20.7), 40, 40, &sigma(1.5)).unwrap();
        let g = decode_gradient(&st, 0.25)[0];
        let a = decode_argmax(&st)[0];
        assert!((g.x - 10.3).abs() < (a.x - 10.3).abs());
        assert!((g.y - 20.7).abs() < (a.y - 20.7).abs());
        assert_eq!((g.x, g.y), (10.25, 20.75));

        assert_eq!(decode_gradient(&st, 0.0)[0].point(), a.point());
    }

    #[test]
    fn gradient_border_fallback_is_flagged() {
        let st = encode(&one(0.0, 7.0), 12, 12, &sigma(1.5)).unwrap();
        let d = decode_gradient(&st, 0.25)[0];
        assert_eq!((d.x, d.y, d.flag), (0.0, 7.0, DecodeFlag::BorderFallback));
    }

    #[test]
    fn gaussian_fit_is_exact_on_sampled_gaussian() {
        let st = encode(&one(10.3, 20.7), 40, 40, &sigma(1.5)).unwrap();
        let d = decode_gaussian_fit(&st, 0.25)[0];
        assert!((d.x - 10.3).abs() < 1e-6 && (d.y - 20.7).abs() < 1e-6, "{d:?}");
        let st = encode(&one(12.0, 9.0), 40, 40, &sigma(1.5)).unwrap();
        let d = decode_gaussian_fit(&st, 0.25)[0];
        assert_eq!((d.x, d.y), (12.0, 9.0));
    }

    #[test]
    fn gaussian_fit_indefinite_hessian_falls_back() {
        // Diagonal ridge through the peak: strong log cross term, det < 0.
        let mut v = vec![0.0; 25];
        let mut set = |x: usize, y: usize, val: f64| v[y * 5 + x] = val;
        set(2, 2, 1.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            set(x, y, 0.5);
        }
        set(1, 1, 0.99);
        set(3, 3, 0.99);
        set(1, 3, 0.01);
        set(3, 1, 0.01);
        let st = HeatmapStack::from_values(1, 5, 5, v).unwrap();
        let d = decode_gaussian_fit(&st, 0.25)[0];
        assert_eq!(d.flag, DecodeFlag::SingularHessian);
        assert_eq!((d.x, d.y), (2.0, 2.0));
    }

    #[test]
    fn monte_carlo_decoder_errors() {
        let mut rng = crate::seed::rng(11);
        let (mut ea, mut eg, mut ef) = (0.0, 0.0, 0.0);
        let n = 1000;
        for _ in 0..n {
            let x = rng.random_range(5.0..91.0);
            let y = rng.random_range(5.0..91.0);
            let st = encode(&one(x, y), 96, 96, &sigma(1.5)).unwrap();
            let a = decode_argmax(&st)[0];
            let g = decode_gradient(&st, 0.25)[0];
            let f = decode_gaussian_fit(&st, 0.25)[0];
            ea += ((a.x - x).abs() + (a.y - y).abs()) / 2.0;
            eg += ((g.x - x).abs() + (g.y - y).abs()) / 2.0;
            ef += ((f.x - x).abs() + (f.y - y).abs()) / 2.0;
        }
        let (ea, eg, ef) = (ea / n as f64, eg / n as f64, ef / n as f64);
        assert!((0.2..=0.3).contains(&ea), "argmax {ea}");
        assert!(ef < eg && eg < ea, "{ef} {eg} {ea}");
        assert!(ef <= 0.05);
    }

    #[test]
    fn to_image_frame_examples() {
        let p = [DecodedPoint {
            x: 48.0,
            y: 48.0,
            score: 1.0,
            flag: DecodeFlag::Exact,
        }];
        let id = SimilarityTransform::IDENTITY;
        assert_eq!(to_image_frame(&p, 2.0, &id).unwrap().points()[0], Point::new(96.0, 96.0));
        assert_eq!(to_image_frame(&p, 1.0, &id).unwrap().points()[0], Point::new(48.0, 48.0));
        assert!(to_image_frame(&p, 0.0, &id).is_err());
    }

    #[test]
    fn hms_roundtrip_and_bad_magic() {
        let st = encode(&Landmarks::from_xy(&[(3.5, 4.0), (1.0, 6.25)]).unwrap(), 8, 9, &sigma(1.0)).unwrap();
        let mut buf = Vec::new();
        st.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HMS1");
        assert_eq!(buf.len(), 16 + 2 * 8 * 9 * 4);
        let back = HeatmapStack::read_from(&buf[..]).unwrap();
        for (a, b) in back.values().iter().zip(st.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        buf[0] = b'X';
        assert!(HeatmapStack::read_from(&buf[..]).is_err());
    }

    #[test]
    fn mirrored_stack_decodes_to_mirrored_point() {
        let st = encode(&Landmarks::from_xy(&[(3.0, 4.0), (9.0, 2.0)]).unwrap(), 12, 16, &sigma(1.0)).unwrap();
        let m = st.mirrored(&[1, 0]).unwrap();
        let d = decode_argmax(&m);
        assert_eq!((d[0].x, d[0].y), (6.0, 2.0));
        assert_eq!((d[1].x, d[1].y), (12.0, 4.0));
    }

    proptest! {
        #[test]
        fn encode_is_translation_equivariant(x in 8.0f64..20.0, y in 8.0f64..20.0, dx in -4i32..4, dy in -4i32..4) {
            let p = sigma(1.5);
            let a = encode(&one(x, y), 40, 40, &p).unwrap();
            let b = encode(&one(x + dx as f64, y + dy as f64), 40, 40, &p).unwrap();
            for n in 4..36usize {
                for m in 4..36usize {
                    let (ms, ns) = ((m as i32 + dx) as usize, (n as i32 + dy) as usize);
                    let (u, v) = (a.get(0, m, n), b.get(0, ms, ns));
                    prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(v.abs()), "{} vs {}", u, v);
                }
            }
        }

        #[test]
        fn decoders_are_scale_invariant(x in 3.0f64..29.0, y in 3.0f64..29.0, k in 0.01f64..100.0) {
            let a = encode(&one(x, y), 32, 32, &sigma(1.5)).unwrap();
            let vals: Vec<f64> = a.values().iter().map(|v| v * k).collect();
            let b = HeatmapStack::from_values(1, 32, 32, vals).unwrap();
            for dec in [Decoder::Argmax, Decoder::Gradient { c: 0.25 }, Decoder::default()] {
                let (pa, pb) = (decode(&a, dec)[0], decode(&b, dec)[0]);
                prop_assert!((pa.x - pb.x).abs() < 1e-12 && (pa.y - pb.y).abs() < 1e-12);
            }
            let d = decode_argmax(&b)[0];
            let max = b.values().iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(d.score, max);
        }
    }
}

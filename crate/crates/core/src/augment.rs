//! Seeded training augmentations.
//!
//! Every function here is a pure function of its input, parameters and a
//! `u64` seed. Batch helpers derive per-item seeds with
//! [`crate::seed::item_seed`], so worker count never changes the output.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_counts, warp_image, Landmarks, Point, SimilarityTransform};
use crate::image::Image;
use crate::seed;

/// Left/right landmark pairing used when mirroring.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FlipMap(Vec<usize>);

impl FlipMap {
    /// Validates that `map` is an involution over `0..map.len()`.
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        if k == 0 {
            return Err(Error::BadFlipMap("empty map".into()));
        }
        for (i, &j) in map.iter().enumerate() {
            if j >= k {
                return Err(Error::BadFlipMap(format!("entry {i} -> {j} out of range for {k} points")));
            }
            if map[j] != i {
                return Err(Error::BadFlipMap(format!("{i} -> {j} but {j} -> {}", map[j])));
            }
        }
        Ok(Self(map))
    }

    /// Eyes swap, nose stays, mouth corners swap.
    pub fn five_point() -> Self {
        Self(vec![1, 0, 2, 4, 3])
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// One target index per line; blank lines and `#` comments are skipped.
    pub fn read_text(r: impl Read) -> Result<Self> {
        let mut map = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            map.push(
                t.parse()
                    .map_err(|_| Error::BadFlipMap(format!("line {}: {t:?} is not an index", n + 1)))?,
            );
        }
        Self::new(map)
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        for j in &self.0 {
            writeln!(w, "{j}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }
}

impl TryFrom<Vec<usize>> for FlipMap {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FlipMap> for Vec<usize> {
    fn from(m: FlipMap) -> Self {
        m.0
    }
}

/// Mirrors landmarks about `x = (width − 1) / 2` and remaps indices.
pub fn hflip_landmarks(lmk: &Landmarks, width: usize, map: &FlipMap) -> Result<Landmarks> {
    check_counts(map.len(), lmk.len())?;
    let w1 = (width - 1) as f64;
    let pts = lmk.points();
    Landmarks::new(
        map.as_slice()
            .iter()
            .map(|&j| Point::new(w1 - pts[j].x, pts[j].y))
            .collect(),
    )
}

pub fn hflip_image(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.pixel_mut(x, y).copy_from_slice(img.pixel(w - 1 - x, y));
        }
    }
    out
}

pub fn hflip(img: &Image, lmk: &Landmarks, map: &FlipMap) -> Result<(Image, Landmarks)> {
    let l = hflip_landmarks(lmk, img.width(), map)?;
    Ok((hflip_image(img), l))
}

/// Maximum magnitudes for rigid jitter. `None` or `0` disables a component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterRanges {
    /// Degrees, 1 to 15.
    pub rotation_deg: Option<f64>,
    /// Relative scale change, 0.05 to 0.2.
    pub scale: Option<f64>,
    /// Pixels per axis, 5 to 20.
    pub shift_px: Option<f64>,
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            rotation_deg: Some(15.0),
            scale: Some(0.2),
            shift_px: Some(20.0),
        }
    }
}

impl JitterRanges {
    pub const NONE: Self = Self {
        rotation_deg: None,
        scale: None,
        shift_px: None,
    };

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: Option<f64>, lo: f64, hi: f64| match v {
            Some(r) if r != 0.0 && !(lo..=hi).contains(&r) => Err(Error::InvalidConfig(format!(
                "{name} range {r} outside [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        };
        check("rotation", self.rotation_deg, 1.0, 15.0)?;
        check("scale", self.scale, 0.05, 0.2)?;
        check("shift", self.shift_px, 5.0, 20.0)
    }
}

/// One concrete rigid jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub rotation_deg: f64,
    /// Multiplicative scale, 1 ± delta.
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Default for RigidParams {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
        }
    }
}

fn symmetric(rng: &mut impl Rng, r: Option<f64>) -> f64 {
    match r {
        Some(r) if r != 0.0 => rng.random_range(-r..=r),
        _ => 0.0,
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl RigidParams {
    pub fn sample(ranges: &JitterRanges, rng: &mut impl Rng) -> Self {
        Self {
            rotation_deg: symmetric(rng, ranges.rotation_deg),
            scale: 1.0 + symmetric(rng, ranges.scale),
            dx: symmetric(rng, ranges.shift_px),
            dy: symmetric(rng, ranges.shift_px),
        }
    }

    /// Similarity about the image center `((W − 1)/2, (H − 1)/2)`.
    pub fn transform(&self, width: usize, height: usize) -> SimilarityTransform {
        let center = Point::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
        SimilarityTransform::about_center(
            self.scale,
            self.rotation_deg.to_radians(),
            center,
            Point::new(self.dx, self.dy),
        )
    }
}

/// Applies explicit rigid parameters (no range check).
pub fn apply_rigid(
    img: &Image,
    lmk: &Landmarks,
    params: &RigidParams,
) -> Result<(Image, Landmarks, SimilarityTransform)> {
    let t = params.transform(img.width(), img.height());
    if t == SimilarityTransform::IDENTITY {
        return Ok((img.clone(), lmk.clone(), t));
    }
    let out = warp_image(img, &t, img.width(), img.height())?;
    Ok((out, t.apply_points(lmk), t))
}

pub fn random_rigid(
    img: &Image,
    lmk: &Landmarks,
    ranges: &JitterRanges,
    seed: u64,
) -> Result<(Image, Landmarks, SimilarityTransform)> {
    ranges.validate()?;
    let params = RigidParams::sample(ranges, &mut seed::rng(seed));
    apply_rigid(img, lmk, &params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EraseFill {
    /// Independent uniform `[0, 1)` value per sample.
    Noise,
    /// Per-channel image mean.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EraseParams {
    pub probability: f64,
    /// Fraction of the image area, sampled uniformly.
    pub area: (f64, f64),
    /// Width / height, sampled log-uniformly.
    pub aspect: (f64, f64),
    pub fill: EraseFill,
    /// Placement tries before giving up without erasing.
    pub max_attempts: u32,
}

impl Default for EraseParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            area: (0.02, 0.4),
            aspect: (0.3, 1.0 / 0.3),
            fill: EraseFill::Noise,
            max_attempts: 100,
        }
    }
}

impl EraseParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidConfig(format!("erase probability {} not in [0, 1]", self.probability)));
        }
        let (a0, a1) = self.area;
        if !(a0 > 0.0 && a0 <= a1 && a1 < 1.0) {
            return Err(Error::InvalidConfig(format!("erase area range ({a0}, {a1}) not inside (0, 1)")));
        }
        let (r0, r1) = self.aspect;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return Err(Error::InvalidConfig(format!("erase aspect range ({r0}, {r1}) invalid")));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraseRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Draws the coin flip and, if it lands, a rectangle fully inside a
/// `width × height` image.
pub fn sample_erase_rect(width: usize, height: usize, params: &EraseParams, rng: &mut impl Rng) -> Option<EraseRect> {
    if rng.random::<f64>() >= params.probability {
        return None;
    }
    let total = (width * height) as f64;
    let (l0, l1) = (params.aspect.0.ln(), params.aspect.1.ln());
    for _ in 0..params.max_attempts {
        let area = uniform(rng, params.area) * total;
        let aspect = uniform(rng, (l0, l1)).exp();
        let w = (area * aspect).sqrt().round() as usize;
        let h = (area / aspect).sqrt().round() as usize;
        if w >= 1 && h >= 1 && w <= width && h <= height {
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            return Some(EraseRect { x, y, w, h });
        }
    }
    None
}

pub fn erase_rect(img: &Image, rect: &EraseRect, fill: EraseFill, rng: &mut impl Rng) -> Image {
    let mut out = img.clone();
    let means: Vec<f32> = img.channel_means().into_iter().map(|m| m as f32).collect();
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            for (c, v) in out.pixel_mut(x, y).iter_mut().enumerate() {
                *v = match fill {
                    EraseFill::Noise => rng.random::<f32>(),
                    EraseFill::Mean => means[c],
                };
            }
        }
    }
    out
}

pub fn random_erase(img: &Image, params: &EraseParams, seed: u64) -> Result<Image> {
    params.validate()?;
    let mut rng = seed::rng(seed);
    Ok(match sample_erase_rect(img.width(), img.height(), params, &mut rng) {
        Some(rect) => erase_rect(img, &rect, params.fill, &mut rng),
        None => img.clone(),
    })
}

/// RGB principal components of natural-image color, for images in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaEigen {
    pub values: [f64; 3],
    /// `vectors[i]` is the unit eigenvector paired with `values[i]`.
    pub vectors: [[f64; 3]; 3],
}

impl Default for PcaEigen {
    fn default() -> Self {
        Self {
            values: [0.2175, 0.0188, 0.0045],
            vectors: [
                [-0.5675, -0.5808, -0.5836],
                [0.7192, -0.0045, -0.6948],
                [0.4009, -0.8140, 0.4203],
            ],
        }
    }
}

impl PcaEigen {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// `Σ αᵢ λᵢ vᵢ`.
    pub fn shift(&self, alpha: [f64; 3]) -> [f64; 3] {
        let mut s = [0.0; 3];
        for i in 0..3 {
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += alpha[i] * self.values[i] * self.vectors[i][c];
            }
        }
        s
    }
}

fn require_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch(format!("expected an RGB image, got {} channels", img.channels())));
    }
    Ok(())
}

/// Adds the same per-channel offset to every pixel, then clamps.
pub fn pca_color_with_alpha(img: &Image, eigen: &PcaEigen, alpha: [f64; 3]) -> Result<Image> {
    require_rgb(img)?;
    let s = eigen.shift(alpha);
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for (v, d) in px.iter_mut().zip(s) {
            *v = (*v as f64 + d).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// `α ~ N(0, σ²)` per component.
pub fn pca_color(img: &Image, eigen: &PcaEigen, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("PCA sigma {sigma} must be finite and >= 0")));
    }
    require_rgb(img)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("checked sigma");
    let mut rng = seed::rng(seed);
    let alpha = [0; 3].map(|_| normal.sample(&mut rng));
    pca_color_with_alpha(img, eigen, alpha)
}

/// Sampled brightness/contrast/saturation factors and the order they apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Permutation of `[0 = brightness, 1 = contrast, 2 = saturation]`.
    pub order: [usize; 3],
}

impl Default for ColorFactors {
    fn default() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            order: [0, 1, 2],
        }
    }
}

impl ColorFactors {
    pub fn sample(strength: f64, rng: &mut impl Rng) -> Self {
        let range = (1.0 - strength, 1.0 + strength);
        let mut order = [0, 1, 2];
        order.shuffle(rng);
        Self {
            brightness: uniform(rng, range),
            contrast: uniform(rng, range),
            saturation: uniform(rng, range),
            order,
        }
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(px: &[f64]) -> f64 {
    if px.len() == 3 {
        px.iter().zip(LUMA).map(|(v, w)| v * w).sum()
    } else {
        px.iter().sum::<f64>() / px.len() as f64
    }
}

/// Brightness scales values; contrast blends toward the mean luma;
/// saturation blends each pixel toward its own luma. Clamped once at the end.
pub fn apply_color_factors(img: &Image, f: &ColorFactors) -> Image {
    let c = img.channels();
    let mut buf: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    for &op in &f.order {
        match op {
            0 => buf.iter_mut().for_each(|v| *v *= f.brightness),
            1 => {
                let n = buf.len() / c;
                let mean = buf.chunks_exact(c).map(luma).sum::<f64>() / n as f64;
                let k = f.contrast;
                buf.iter_mut().for_each(|v| *v = *v * k + mean * (1.0 - k));
            }
            _ => {
                let k = f.saturation;
                for px in buf.chunks_exact_mut(c) {
                    let g = luma(px);
                    px.iter_mut().for_each(|v| *v = *v * k + g * (1.0 - k));
                }
            }
        }
    }
    let data = buf.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Image::from_data(img.width(), img.height(), c, data).expect("same shape")
}

pub fn color_jitter(img: &Image, strength: f64, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidConfig(format!("color jitter strength {strength} not in [0, 1]")));
    }
    let f = ColorFactors::sample(strength, &mut seed::rng(seed));
    Ok(apply_color_factors(img, &f))
}

/// Full training-time chain: flip, rigid jitter, PCA color, color jitter,
/// random erasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub jitter: JitterRanges,
    pub erase: Option<EraseParams>,
    pub pca_sigma: f64,
    pub pca_eigen: PcaEigen,
    pub color_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            jitter: JitterRanges::default(),
            erase: Some(EraseParams::default()),
            pca_sigma: 0.05,
            pca_eigen: PcaEigen::default(),
            color_jitter: 0.4,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(format!(
                "flip probability {} not in [0, 1]",
                self.flip_probability
            )));
        }
        self.jitter.validate()?;
        if let Some(e) = &self.erase {
            e.validate()?;
        }
        if !(self.pca_sigma >= 0.0 && self.pca_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("PCA sigma {} must be >= 0", self.pca_sigma)));
        }
        if !(0.0..=1.0).contains(&self.color_jitter) {
            return Err(Error::InvalidConfig(format!("color jitter {} not in [0, 1]", self.color_jitter)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub image: Image,
    pub landmarks: Landmarks,
    pub flipped: bool,
    /// Rigid jitter applied after the optional flip.
    pub rigid: SimilarityTransform,
}

pub fn augment_sample(
    img: &Image,
    lmk: &Landmarks,
    flip_map: &FlipMap,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<AugmentedSample> {
    cfg.validate()?;
    check_counts(flip_map.len(), lmk.len())?;
    let mut rng = seed::rng(seed);
    // Sub-seeds are drawn up front so disabling a step leaves the others'
    // randomness unchanged.
    let flipped = rng.random::<f64>() < cfg.flip_probability;
    let [rigid_seed, pca_seed, color_seed, erase_seed] = [0; 4].map(|_| rng.random::<u64>());

    let (mut image, mut landmarks) = if flipped {
        hflip(img, lmk, flip_map)?
    } else {
        (img.clone(), lmk.clone())
    };
    let rigid;
    (image, landmarks, rigid) = random_rigid(&image, &landmarks, &cfg.jitter, rigid_seed)?;
    if image.channels() == 3 {
        image = pca_color(&image, &cfg.pca_eigen, cfg.pca_sigma, pca_seed)?;
    }
    image = color_jitter(&image, cfg.color_jitter, color_seed)?;
    if let Some(e) = &cfg.erase {
        image = random_erase(&image, e, erase_seed)?;
    }
    Ok(AugmentedSample {
        image,
        landmarks,
        flipped,
        rigid,
    })
}

/// Augments `items[i]` with seed `item_seed(global_seed, i)` on a pool of
/// `jobs` workers (0 = one per core).
pub fn augment_batch(
    items: &[(Image, Landmarks)],
    flip_map: &FlipMap,
    cfg: &AugmentConfig,
    global_seed: u64,
    jobs: usize,
) -> Result<Vec<AugmentedSample>> {
    crate::pipeline::worker_pool(jobs)?.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, (img, lmk))| augment_sample(img, lmk, flip_map, cfg, seed::item_seed(global_seed, i as u64)))
            .collect()
    })
}

//! Landmarks, 4-DOF similarity transforms and image warping.
//!
//! Faces are aligned by fitting a similarity transform (rotation, uniform
//! scale and translation) from the detector's five naive points onto a
//! fixed reference template. Predictions made in the aligned frame are
//! mapped back through the exact inverse.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Ordered landmark set; index `i` always names the same anatomical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Landmarks(Vec<Point>);

impl TryFrom<Vec<Point>> for Landmarks {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        Landmarks::new(points)
    }
}

impl From<Landmarks> for Vec<Point> {
    fn from(l: Landmarks) -> Self {
        l.0
    }
}

impl Landmarks {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::DegenerateInput(format!("landmark {i} is not finite")));
        }
        Ok(Self(points))
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.0.iter()
    }

    pub fn centroid(&self) -> Point {
        let n = self.0.len() as f64;
        let (sx, sy) = self.0.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
        Point::new(sx / n, sy / n)
    }

    /// Coordinate-wise mean of two landmark sets of equal length.
    pub fn midpoint(&self, other: &Landmarks) -> Result<Landmarks> {
        check_counts(self.len(), other.len())?;
        let pts = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0))
            .collect();
        Ok(Landmarks(pts))
    }

    /// Largest per-point Euclidean distance to `other`.
    pub fn max_distance(&self, other: &Landmarks) -> Result<f64> {
        check_counts(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max))
    }

    /// Scales every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Landmarks {
        Landmarks(self.0.iter().map(|p| Point::new(p.x * factor, p.y * factor)).collect())
    }

    /// One `x,y` pair per line, row index = landmark index, no header.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for p in &self.0 {
            wtr.serialize((p.x, p.y))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut pts = Vec::new();
        for rec in rdr.deserialize() {
            let (x, y): (f64, f64) = rec?;
            pts.push(Point::new(x, y));
        }
        Self::new(pts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn check_counts(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::CountMismatch { expected, found })
    }
}

/// `p ↦ A·p + t` with `A = [[a, -b], [b, a]] = s·R(θ)`.
///
/// Serialized as the six row-major matrix entries `[a, -b, tx, b, a, ty]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct SimilarityTransform {
    a: f64,
    b: f64,
    tx: f64,
    ty: f64,
}

/// Scales at or below this are treated as singular.
const SCALE_FLOOR: f64 = 1e-12;

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_parts(a: f64, b: f64, tx: f64, ty: f64) -> Self {
        Self { a, b, tx, ty }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { a: 1.0, b: 0.0, tx, ty }
    }

    /// Scale `s`, counter-clockwise angle `theta` (radians, in a y-up sense),
    /// then translation.
    pub fn from_scale_rotation(scale: f64, theta: f64, tx: f64, ty: f64) -> Self {
        Self {
            a: scale * theta.cos(),
            b: scale * theta.sin(),
            tx,
            ty,
        }
    }

    /// Similarity about `center`: `p ↦ s·R(θ)·(p − c) + c + shift`.
    pub fn about_center(scale: f64, theta: f64, center: Point, shift: Point) -> Self {
        let lin = Self::from_scale_rotation(scale, theta, 0.0, 0.0);
        let rc = lin.apply(center);
        Self {
            tx: center.x - rc.x + shift.x,
            ty: center.y - rc.y + shift.y,
            ..lin
        }
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn translation_part(&self) -> Point {
        Point::new(self.tx, self.ty)
    }

    /// Row-major 2×3 matrix.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    pub fn to_row_major(&self) -> [f64; 6] {
        let [r0, r1] = self.matrix();
        [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2]]
    }

    /// Accepts a row-major matrix if its linear part is `s·R` (no shear, no
    /// reflection) up to a relative 1e-9.
    pub fn from_row_major(m: [f64; 6]) -> Result<Self> {
        let [m00, m01, tx, m10, m11, ty] = m;
        let tol = 1e-9 * (m00.abs() + m01.abs() + m10.abs() + m11.abs()).max(1.0);
        if m.iter().any(|v| !v.is_finite()) || (m00 - m11).abs() > tol || (m01 + m10).abs() > tol {
            return Err(Error::format("similarity transform", format!("{m:?} is not rotation+scale+translation")));
        }
        Ok(Self {
            a: (m00 + m11) / 2.0,
            b: (m10 - m01) / 2.0,
            tx,
            ty,
        })
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        Point::new(self.a * p.x - self.b * p.y + self.tx, self.b * p.x + self.a * p.y + self.ty)
    }

    pub fn apply_points(&self, pts: &Landmarks) -> Landmarks {
        Landmarks(pts.iter().map(|&p| self.apply(p)).collect())
    }

    pub fn invert(&self) -> Result<Self> {
        let s2 = self.a * self.a + self.b * self.b;
        if !(s2.sqrt() > SCALE_FLOOR) {
            return Err(Error::NonInvertible(s2.sqrt()));
        }
        let a = self.a / s2;
        let b = -self.b / s2;
        Ok(Self {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            a: self.a * other.a - self.b * other.b,
            b: self.b * other.a + self.a * other.b,
            tx: self.a * other.tx - self.b * other.ty + self.tx,
            ty: self.b * other.tx + self.a * other.ty + self.ty,
        }
    }

    /// Largest absolute difference between matrix entries.
    pub fn max_entry_diff(&self, other: &Self) -> f64 {
        self.to_row_major()
            .iter()
            .zip(other.to_row_major())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<[f64; 6]> for SimilarityTransform {
    type Error = Error;

    fn try_from(m: [f64; 6]) -> Result<Self> {
        Self::from_row_major(m)
    }
}

impl From<SimilarityTransform> for [f64; 6] {
    fn from(t: SimilarityTransform) -> Self {
        t.to_row_major()
    }
}

/// Least-squares similarity transform minimizing `Σ ‖T(src_i) − dst_i‖²`.
///
/// Closed form on centered coordinates; this is the 2D Umeyama solution with
/// reflections excluded. Any equal-length sets of at least two points are
/// accepted.
pub fn estimate_similarity(src: &Landmarks, dst: &Landmarks) -> Result<SimilarityTransform> {
    check_counts(src.len(), dst.len())?;
    if src.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 point pairs, got {}",
            src.len()
        )));
    }
    let cs = src.centroid();
    let cd = dst.centroid();
    let (mut var, mut dot, mut cross, mut dst_var) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst.iter()) {
        let (sx, sy) = (s.x - cs.x, s.y - cs.y);
        let (dx, dy) = (d.x - cd.x, d.y - cd.y);
        var += sx * sx + sy * sy;
        dst_var += dx * dx + dy * dy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    let extent = cs.x.abs().max(cs.y.abs()).max(1.0);
    if var <= 1e-20 * extent * extent {
        return Err(Error::DegenerateInput("source points coincide".into()));
    }
    if dst_var <= 1e-20 * extent * extent {
        return Err(Error::DegenerateInput("destination points coincide".into()));
    }
    let a = dot / var;
    let b = cross / var;
    let lin = SimilarityTransform::from_parts(a, b, 0.0, 0.0);
    let m = lin.apply(cs);
    Ok(SimilarityTransform::from_parts(a, b, cd.x - m.x, cd.y - m.y))
}

/// Canonical five-point layout (left eye, right eye, nose tip, left mouth
/// corner, right mouth corner) for the aligned frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTemplate {
    pub width: usize,
    pub height: usize,
    pub points: [Point; 5],
}

impl Default for ReferenceTemplate {
    /// 192×192 frame, symmetric about x = 96, inter-ocular distance 76.8 px.
    fn default() -> Self {
        Self {
            width: 192,
            height: 192,
            points: [
                Point::new(57.6, 67.2),
                Point::new(134.4, 67.2),
                Point::new(96.0, 117.6),
                Point::new(64.0, 153.6),
                Point::new(128.0, 153.6),
            ],
        }
    }
}

impl ReferenceTemplate {
    pub fn landmarks(&self) -> Landmarks {
        Landmarks(self.points.to_vec())
    }

    /// Template for a `size × size` frame, scaled from the default.
    pub fn for_size(size: usize) -> Self {
        let base = Self::default();
        let f = size as f64 / base.width as f64;
        Self {
            width: size,
            height: size,
            points: base.points.map(|p| Point::new(p.x * f, p.y * f)),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Warps `img` into an `out_w × out_h` frame: output pixel `(u, v)` is
/// sampled bilinearly at `T⁻¹(u, v)`; samples outside the source are black.
pub fn warp_image(img: &Image, t: &SimilarityTransform, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidSize(format!("warp output {out_w}x{out_h}")));
    }
    let inv = t.invert()?;
    let c = img.channels();
    let mut out = Image::new(out_w, out_h, c)?;
    for v in 0..out_h {
        for u in 0..out_w {
            let p = inv.apply(Point::new(u as f64, v as f64));
            for ch in 0..c {
                out.set(u, v, ch, img.bilinear(p.x, p.y, ch) as f32);
            }
        }
    }
    Ok(out)
}

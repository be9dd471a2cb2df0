//! NME, cumulative error distribution, AUC and failure rate.
//!
//! Images whose alignment failed are scored with NME = ∞: they count as
//! failures, never reach any CED threshold, and make the mean infinite.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_counts, Landmarks, Point};

pub const DEFAULT_MAX_THRESHOLD: f64 = 0.08;
pub const DEFAULT_CED_STEPS: usize = 1000;

/// Axis-aligned box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::DegenerateInput(format!("bbox {}x{} must have positive size", self.w, self.h)));
        }
        Ok(())
    }

    /// `√(w·h)`.
    pub fn normalizer(&self) -> f64 {
        (self.w * self.h).sqrt()
    }

    /// Tight box around a point set.
    pub fn enclosing(lmk: &Landmarks) -> Result<Self> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in lmk.iter() {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub landmarks: Landmarks,
    pub bbox: BBox,
}

/// Mean point distance over `√(w·h)` of the ground-truth box.
pub fn nme(pred: &Landmarks, gt: &GroundTruthRecord) -> Result<f64> {
    check_counts(gt.landmarks.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("landmarks"));
    }
    gt.bbox.validate()?;
    let sum: f64 = pred.iter().zip(gt.landmarks.iter()).map(|(p, q)| p.distance(*q)).sum();
    Ok(sum / pred.len() as f64 / gt.bbox.normalizer())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CedPoint {
    pub threshold: f64,
    /// Fraction of images with NME ≤ threshold.
    pub fraction: f64,
}

fn check_nmes(nmes: &[f64]) -> Result<()> {
    if nmes.is_empty() {
        return Err(Error::EmptyInput("NME list"));
    }
    if nmes.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::DegenerateInput("NMEs must be non-negative numbers".into()));
    }
    Ok(())
}

/// Thresholds `t_j = max·j / (steps − 1)` for `j = 0..steps`.
pub fn ced_curve(nmes: &[f64], max_threshold: f64, steps: usize) -> Result<Vec<CedPoint>> {
    check_nmes(nmes)?;
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("CED needs at least 2 steps, got {steps}")));
    }
    if !(max_threshold > 0.0 && max_threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!("CED max threshold {max_threshold} must be positive")));
    }
    let mut sorted = nmes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok((0..steps)
        .map(|j| {
            let t = max_threshold * j as f64 / (steps - 1) as f64;
            let count = sorted.partition_point(|&v| v <= t);
            CedPoint {
                threshold: t,
                fraction: count as f64 / n,
            }
        })
        .collect())
}

/// Trapezoid area under the curve divided by its threshold range.
pub fn auc(ced: &[CedPoint]) -> Result<f64> {
    let last = ced.last().ok_or(Error::EmptyInput("CED curve"))?;
    if ced.len() < 2 || !(last.threshold > 0.0) {
        return Err(Error::InvalidConfig("CED curve needs two points and a positive range".into()));
    }
    // The span is summed alongside the area so a constant-one curve gives
    // exactly 1.
    let (mut area, mut span) = (0.0, 0.0);
    for w in ced.windows(2) {
        let dt = w[1].threshold - w[0].threshold;
        area += dt * (w[0].fraction + w[1].fraction) / 2.0;
        span += dt;
    }
    Ok(area / span)
}

/// Fraction of NMEs strictly above `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    check_nmes(nmes)?;
    Ok(nmes.iter().filter(|&&v| v > threshold).count() as f64 / nmes.len() as f64)
}

pub fn mean_nme(nmes: &[f64]) -> Result<f64> {
    check_nmes(nmes)?;
    Ok(nmes.iter().sum::<f64>() / nmes.len() as f64)
}

/// Infinite NMEs serialize as JSON `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub stem: String,
    #[serde(with = "inf_as_null")]
    pub nme: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Sorted by stem.
    pub per_image: Vec<ImageScore>,
    pub ced: Vec<CedPoint>,
    pub auc: f64,
    pub failure_rate: f64,
    #[serde(with = "inf_as_null")]
    pub mean_nme: f64,
    /// Mean over images with a finite NME.
    #[serde(with = "inf_as_null")]
    pub mean_nme_finite: f64,
    pub max_threshold: f64,
}

impl MetricsReport {
    pub fn from_scores(mut scores: Vec<ImageScore>, max_threshold: f64, steps: usize) -> Result<Self> {
        scores.sort_by(|a, b| a.stem.cmp(&b.stem));
        let nmes: Vec<f64> = scores.iter().map(|s| s.nme).collect();
        let ced = ced_curve(&nmes, max_threshold, steps)?;
        let finite: Vec<f64> = nmes.iter().copied().filter(|v| v.is_finite()).collect();
        Ok(Self {
            auc: auc(&ced)?,
            failure_rate: failure_rate(&nmes, max_threshold)?,
            mean_nme: mean_nme(&nmes)?,
            mean_nme_finite: if finite.is_empty() {
                f64::INFINITY
            } else {
                mean_nme(&finite)?
            },
            per_image: scores,
            ced,
            max_threshold,
        })
    }

    pub fn nmes(&self) -> Vec<f64> {
        self.per_image.iter().map(|s| s.nme).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `threshold,fraction` with a header row.
pub fn write_ced_csv(ced: &[CedPoint], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["threshold", "fraction"])?;
    for p in ced {
        wr.write_record([p.threshold.to_string(), p.fraction.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_ced_csv(r: impl Read) -> Result<Vec<CedPoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format("CED CSV", format!("bad row {:?}", rec)))
        };
        out.push(CedPoint {
            threshold: field(0)?,
            fraction: field(1)?,
        });
    }
    Ok(out)
}

/// Standalone SVG with the curve as one polyline over a unit frame.
pub fn ced_svg(ced: &[CedPoint], width: u32, height: u32) -> Result<String> {
    let max_t = ced.last().ok_or(Error::EmptyInput("CED curve"))?.threshold;
    if !(max_t > 0.0) {
        return Err(Error::InvalidConfig("CED curve needs a positive range".into()));
    }
    let (w, h) = (width as f64, height as f64);
    let pad = 0.08 * w.min(h);
    let (pw, ph) = (w - 2.0 * pad, h - 2.0 * pad);
    let pts: Vec<String> = ced
        .iter()
        .map(|p| {
            let x = pad + p.threshold / max_t * pw;
            let y = pad + (1.0 - p.fraction) * ph;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str(&format!(
        "  <rect x=\"{pad:.2}\" y=\"{pad:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#999\"/>\n"
    ));
    s.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    ));
    s.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">NME {max_t}</text>\n",
        w - pad,
        h - pad / 3.0
    ));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Annotation text: an optional leading point-count line, then one `x y`
/// pair per line (comma or whitespace separated).
pub fn read_jd_annotation(r: impl Read) -> Result<Landmarks> {
    let mut lines = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let mut expected = None;
    if let Some(first) = lines.first() {
        let toks: Vec<&str> = first.split([' ', '\t', ',']).filter(|t| !t.is_empty()).collect();
        if toks.len() == 1 {
            expected = Some(
                toks[0]
                    .parse::<usize>()
                    .map_err(|_| Error::format("annotation", format!("bad count line {first:?}")))?,
            );
        }
    }
    let body = &lines[expected.is_some() as usize..];
    let mut pts = Vec::with_capacity(body.len());
    for line in body {
        let toks: Vec<&str> = line.split([' ', '\t', ',']).filter(|t| !t.is_empty()).collect();
        let parsed: Vec<f64> = toks
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::format("annotation", format!("bad point line {line:?}")))?;
        match parsed[..] {
            [x, y] => pts.push(Point::new(x, y)),
            _ => return Err(Error::format("annotation", format!("expected `x y`, got {line:?}"))),
        }
    }
    if let Some(n) = expected {
        check_counts(n, pts.len())?;
    }
    Landmarks::new(pts)
}

/// JD-style text, or a JSON array of `[x, y]` when the extension is `.json`.
pub fn load_annotation(path: impl AsRef<Path>) -> Result<Landmarks> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Landmarks::from_json(&std::fs::read_to_string(path)?)
    } else {
        read_jd_annotation(std::fs::File::open(path)?)
    }
}

//! Dataset alignment, model runners, flip test-time averaging and
//! end-to-end scoring.
//!
//! An aligned dataset directory holds one `<stem>.ppm` per accepted image,
//! `manifest.json` with the per-image transforms and ground truth, and
//! `skipped.json` listing images that could not be aligned.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{hflip_image, hflip_landmarks, FlipMap};
use crate::config::{PipelineConfig, TtaMode};
use crate::error::{Error, Result};
use crate::eval::{self, BBox, GroundTruthRecord, ImageScore, MetricsReport};
use crate::geometry::{estimate_similarity, warp_image, Landmarks, Point, ReferenceTemplate, SimilarityTransform};
use crate::head::{build_head, CostModelConfig, HeadGraph, HeadWeights, StrategySpec};
use crate::heatmap::{self, DecodedPoint, HeatmapStack};
use crate::image::Image;
use crate::seed;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SKIPPED_FILE: &str = "skipped.json";

pub(crate) fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// One face detection: box, five coarse points and a score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    /// Image file name; matched to dataset images by stem.
    pub image: String,
    pub bbox: BBox,
    pub landmarks: Landmarks,
    pub confidence: f64,
}

impl DetectorOutput {
    pub fn stem(&self) -> String {
        file_stem(&self.image)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        crate::geometry::check_counts(5, self.landmarks.len())
    }
}

/// Reads a JSON array of detections.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectorOutput>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// An input image and its optional ground-truth annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetItem {
    pub stem: String,
    pub image: PathBuf,
    pub annotation: Option<PathBuf>,
}

/// Lists `*.ppm` / `*.pgm` in `dir` by stem, pairing each with `<stem>.pts`
/// or `<stem>.lmk.json` when present.
pub fn scan_images(dir: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    let dir = dir.as_ref();
    let mut items = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("ppm" | "pgm")) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let annotation = [format!("{stem}.pts"), format!("{stem}.lmk.json")]
            .into_iter()
            .map(|n| dir.join(n))
            .find(|p| p.is_file());
        items.push(DatasetItem {
            stem,
            image: path,
            annotation,
        });
    }
    items.sort_by(|a, b| a.stem.cmp(&b.stem));
    Ok(items)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub stem: String,
    /// Aligned image file, relative to the dataset directory.
    pub image: String,
    /// Original frame → aligned frame.
    pub transform: SimilarityTransform,
    pub inverse: SimilarityTransform,
    /// Detector box in the original frame; the NME normalizer.
    pub bbox: BBox,
    /// Ground truth in the original frame.
    pub landmarks: Option<Landmarks>,
    /// Ground truth in the aligned frame.
    pub aligned_landmarks: Option<Landmarks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub stem: String,
    pub reason: String,
    pub landmarks: Option<Landmarks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub input_size: usize,
    pub records: Vec<AlignedRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedDataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub skipped: Vec<SkippedRecord>,
}

impl AlignedDataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format("manifest", format!("unsupported version {}", manifest.version)));
        }
        let skipped_path = dir.join(SKIPPED_FILE);
        let skipped = if skipped_path.is_file() {
            serde_json::from_slice(&std::fs::read(skipped_path)?)?
        } else {
            Vec::new()
        };
        Ok(Self { dir, manifest, skipped })
    }

    pub fn records(&self) -> &[AlignedRecord] {
        &self.manifest.records
    }

    pub fn load_image(&self, rec: &AlignedRecord) -> Result<Image> {
        Image::load(self.dir.join(&rec.image))
    }

    fn save(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        write_json(&self.dir.join(SKIPPED_FILE), &self.skipped)
    }
}

enum AlignOutcome {
    Aligned(AlignedRecord),
    Skipped(SkippedRecord),
}

/// Aligns every item to `template` using its detection, writing aligned
/// images and manifests to `out_dir`. Items without a usable detection are
/// listed in `skipped.json` instead of failing the run.
pub fn align_dataset(
    items: &[DatasetItem],
    detections: &[DetectorOutput],
    template: &ReferenceTemplate,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<AlignedDataset> {
    cfg.validate()?;
    if template.width != cfg.input_size || template.height != cfg.input_size {
        return Err(Error::InvalidConfig(format!(
            "template is {}x{}, input size is {}",
            template.width, template.height, cfg.input_size
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    // Highest-confidence detection per stem.
    let mut by_stem: HashMap<String, &DetectorOutput> = HashMap::new();
    for d in detections {
        let e = by_stem.entry(d.stem()).or_insert(d);
        if d.confidence > e.confidence {
            *e = d;
        }
    }
    let dst = template.landmarks();
    let align_one = |item: &DatasetItem| -> Result<AlignOutcome> {
        let gt = item.annotation.as_ref().map(eval::load_annotation).transpose()?;
        let skip = |reason: String| {
            Ok(AlignOutcome::Skipped(SkippedRecord {
                stem: item.stem.clone(),
                reason,
                landmarks: gt.clone(),
            }))
        };
        let Some(det) = by_stem.get(&item.stem) else {
            return skip(Error::MissingDetection(item.stem.clone()).to_string());
        };
        if let Err(e) = det.validate() {
            return skip(e.to_string());
        }
        let pts = det.landmarks.points();
        let src = Landmarks::new(cfg.detector_order.iter().map(|&i| pts[i]).collect())?;
        let t = match estimate_similarity(&src, &dst).and_then(|t| t.invert().map(|inv| (t, inv))) {
            Ok(pair) => pair,
            Err(e) => return skip(e.to_string()),
        };
        let img = Image::load(&item.image)?;
        let aligned = warp_image(&img, &t.0, cfg.input_size, cfg.input_size)?;
        let name = format!("{}.ppm", item.stem);
        aligned.save(out_dir.join(&name))?;
        Ok(AlignOutcome::Aligned(AlignedRecord {
            stem: item.stem.clone(),
            image: name,
            transform: t.0,
            inverse: t.1,
            bbox: det.bbox,
            aligned_landmarks: gt.as_ref().map(|g| t.0.apply_points(g)),
            landmarks: gt,
        }))
    };
    let outcomes: Vec<AlignOutcome> = worker_pool(cfg.jobs)?.install(|| items.par_iter().map(align_one).collect::<Result<_>>())?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            AlignOutcome::Aligned(r) => records.push(r),
            AlignOutcome::Skipped(s) => skipped.push(s),
        }
    }
    let ds = AlignedDataset {
        dir: out_dir.to_path_buf(),
        manifest: Manifest {
            version: MANIFEST_VERSION,
            input_size: cfg.input_size,
            records,
        },
        skipped,
    };
    ds.save()?;
    Ok(ds)
}

/// What a runner is asked to predict on.
#[derive(Clone, Copy, Debug)]
pub struct Frame<'a> {
    pub stem: &'a str,
    pub image: &'a Image,
    /// `image` is the horizontal mirror of the aligned image.
    pub flipped: bool,
}

/// Maps an aligned image to a `K × heatmap_size²` stack.
pub trait ModelRunner: Sync {
    fn predict(&self, frame: &Frame<'_>) -> Result<HeatmapStack>;
}

/// Reads precomputed `<stem>.hms` / `<stem>.flip.hms` stacks.
#[derive(Clone, Debug)]
pub struct ReplayRunner {
    dir: PathBuf,
}

impl ReplayRunner {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, stem: &str, flipped: bool) -> PathBuf {
        self.dir.join(replay_name(stem, flipped))
    }
}

pub fn replay_name(stem: &str, flipped: bool) -> String {
    if flipped {
        format!("{stem}.flip.hms")
    } else {
        format!("{stem}.hms")
    }
}

impl ModelRunner for ReplayRunner {
    fn predict(&self, frame: &Frame<'_>) -> Result<HeatmapStack> {
        HeatmapStack::load(self.path(frame.stem, frame.flipped))
    }
}

/// Runs only the upsampling head. Without a backbone, its input is the
/// aligned image area-pooled to the backbone grid and tiled across channels.
#[derive(Clone, Debug)]
pub struct HeadRunner {
    graph: HeadGraph,
    weights: HeadWeights,
}

impl HeadRunner {
    pub fn new(graph: HeadGraph, weights: HeadWeights) -> Self {
        Self { graph, weights }
    }

    pub fn seeded(spec: &StrategySpec, num_landmarks: usize, cost: &CostModelConfig, seed: u64) -> Result<Self> {
        let graph = build_head(spec, num_landmarks, cost)?;
        let weights = HeadWeights::seeded(&graph, seed);
        Ok(Self { graph, weights })
    }

    pub fn graph(&self) -> &HeadGraph {
        &self.graph
    }

    pub fn features(&self, img: &Image) -> Tensor<f32> {
        let [c, h, w] = self.graph.input_shape();
        let ic = img.channels();
        let mut pooled = vec![0.0f64; ic * h * w];
        for i in 0..h {
            let (y0, y1) = (i * img.height() / h, ((i + 1) * img.height() / h).max(i * img.height() / h + 1));
            for j in 0..w {
                let (x0, x1) = (j * img.width() / w, ((j + 1) * img.width() / w).max(j * img.width() / w + 1));
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1.min(img.height()) {
                    for x in x0..x1.min(img.width()) {
                        for (ch, &v) in img.pixel(x, y).iter().enumerate() {
                            pooled[(ch * h + i) * w + j] += v as f64 / n;
                        }
                    }
                }
            }
        }
        Tensor::from_fn(&[c, h, w], |idx| {
            let (ch, rest) = (idx / (h * w), idx % (h * w));
            (pooled[(ch % ic) * h * w + rest] - 0.5) as f32
        })
    }
}

impl ModelRunner for HeadRunner {
    fn predict(&self, frame: &Frame<'_>) -> Result<HeatmapStack> {
        let (stack, _) = crate::head::run_head(&self.graph, &self.weights, &self.features(frame.image))?;
        Ok(stack)
    }
}

fn checked(stack: HeatmapStack, cfg: &PipelineConfig) -> Result<HeatmapStack> {
    let want = (cfg.num_landmarks, cfg.heatmap_size, cfg.heatmap_size);
    let got = (stack.channels(), stack.height(), stack.width());
    if got != want {
        return Err(Error::ShapeMismatch(format!("runner produced {got:?}, expected {want:?}")));
    }
    Ok(stack.with_stride(cfg.stride()? as f64))
}

fn scaled(points: &[DecodedPoint], stride: f64) -> Result<Landmarks> {
    Landmarks::new(points.iter().map(|p| Point::new(p.x * stride, p.y * stride)).collect())
}

/// Decoded points from a mirrored-image pass, in the unmirrored aligned
/// frame: `x = W − 1 − stride·hx`, and landmark `i` takes the prediction of
/// flipped-frame landmark `map[i]`.
pub fn unflip_points(points: &[DecodedPoint], map: &FlipMap, width: usize, stride: f64) -> Result<Landmarks> {
    crate::geometry::check_counts(map.len(), points.len())?;
    let w1 = (width - 1) as f64;
    Landmarks::new(
        map.as_slice()
            .iter()
            .map(|&j| Point::new(w1 - stride * points[j].x, stride * points[j].y))
            .collect(),
    )
}

/// Landmarks in the aligned frame, averaged over the image and its mirror
/// when `cfg.tta` is set.
pub fn tta_predict(
    runner: &dyn ModelRunner,
    stem: &str,
    img: &Image,
    flip_map: &FlipMap,
    cfg: &PipelineConfig,
) -> Result<Landmarks> {
    let stride = cfg.stride()? as f64;
    let plain = checked(
        runner.predict(&Frame {
            stem,
            image: img,
            flipped: false,
        })?,
        cfg,
    )?;
    if !cfg.tta {
        return scaled(&heatmap::decode(&plain, cfg.decoder), stride);
    }
    let mirror = hflip_image(img);
    let flip = checked(
        runner.predict(&Frame {
            stem,
            image: &mirror,
            flipped: true,
        })?,
        cfg,
    )?;
    match cfg.tta_mode {
        TtaMode::Average => {
            let a = scaled(&heatmap::decode(&plain, cfg.decoder), stride)?;
            let b = unflip_points(&heatmap::decode(&flip, cfg.decoder), flip_map, img.width(), stride)?;
            a.midpoint(&b)
        }
        TtaMode::StackHeatmaps => {
            let back = flip.mirrored(flip_map.as_slice())?;
            scaled(&heatmap::decode(&plain.average(&back)?, cfg.decoder), stride)
        }
    }
}

/// A prediction in the original image frame; `None` when the runner had no
/// output for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stem: String,
    pub landmarks: Option<Landmarks>,
}

fn is_missing(e: &Error) -> bool {
    matches!(e, Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound)
}

pub fn predict_dataset(
    dataset: &AlignedDataset,
    runner: &dyn ModelRunner,
    flip_map: &FlipMap,
    cfg: &PipelineConfig,
) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    worker_pool(cfg.jobs)?.install(|| {
        dataset
            .records()
            .par_iter()
            .map(|rec| {
                let img = dataset.load_image(rec)?;
                let landmarks = match tta_predict(runner, &rec.stem, &img, flip_map, cfg) {
                    Ok(aligned) => Some(rec.inverse.apply_points(&aligned)),
                    Err(e) if is_missing(&e) => None,
                    Err(e) => return Err(e),
                };
                Ok(Prediction {
                    stem: rec.stem.clone(),
                    landmarks,
                })
            })
            .collect()
    })
}

/// Predicts every aligned image and scores it against its ground truth.
/// Skipped images and missing predictions score NME = ∞.
pub fn end_to_end_eval(
    dataset: &AlignedDataset,
    runner: &dyn ModelRunner,
    flip_map: &FlipMap,
    cfg: &PipelineConfig,
) -> Result<MetricsReport> {
    let preds = predict_dataset(dataset, runner, flip_map, cfg)?;
    let mut scores = Vec::new();
    for (rec, pred) in dataset.records().iter().zip(preds) {
        let Some(gt) = &rec.landmarks else { continue };
        let nme = match pred.landmarks {
            Some(p) => eval::nme(
                &p,
                &GroundTruthRecord {
                    landmarks: gt.clone(),
                    bbox: rec.bbox,
                },
            )?,
            None => f64::INFINITY,
        };
        scores.push(ImageScore {
            stem: rec.stem.clone(),
            nme,
        });
    }
    for s in &dataset.skipped {
        if s.landmarks.is_some() {
            scores.push(ImageScore {
                stem: s.stem.clone(),
                nme: f64::INFINITY,
            });
        }
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    MetricsReport::from_scores(scores, cfg.max_threshold, cfg.ced_steps)
}

/// Writes replay stacks that encode each record's aligned ground truth:
/// `<stem>.hms` directly and `<stem>.flip.hms` as the mirror-consistent
/// stack of the flipped image. Returns the number of records written.
pub fn write_replay_stacks(
    dataset: &AlignedDataset,
    flip_map: &FlipMap,
    cfg: &PipelineConfig,
    out_dir: impl AsRef<Path>,
) -> Result<usize> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let stride = cfg.stride()? as f64;
    let params = cfg.gaussian()?;
    let hs = cfg.heatmap_size;
    let written = worker_pool(cfg.jobs)?.install(|| {
        dataset
            .records()
            .par_iter()
            .filter_map(|rec| rec.aligned_landmarks.as_ref().map(|a| (rec, a)))
            .map(|(rec, aligned)| {
                let mirrored = hflip_landmarks(aligned, dataset.manifest.input_size, flip_map)?;
                for (lmk, flipped) in [(aligned, false), (&mirrored, true)] {
                    let stack = heatmap::encode(&lmk.scaled(1.0 / stride), hs, hs, &params)?;
                    stack.save(out_dir.join(replay_name(&rec.stem, flipped)))?;
                }
                Ok(())
            })
            .collect::<Result<Vec<()>>>()
    })?;
    Ok(written.len())
}

/// A symmetric `k`-point face layout in the template frame and its flip
/// map. Paired points sit on an ellipse around the face center; the rest
/// lie on the midline.
pub fn synthetic_face(k: usize, template: &ReferenceTemplate) -> Result<(Landmarks, FlipMap)> {
    if k == 0 {
        return Err(Error::InvalidConfig("synthetic face needs at least one point".into()));
    }
    let f = template.width as f64 / 192.0;
    let cx = template.points.iter().map(|p| p.x).sum::<f64>() / 5.0;
    let cy = 110.0 * f;
    let midline = k % 2 + if k >= 8 { 4 } else { 0 };
    let pairs = (k - midline) / 2;
    let mut pts = vec![Point::new(0.0, 0.0); k];
    let mut map: Vec<usize> = (0..k).collect();
    for i in 0..pairs {
        let th = std::f64::consts::PI * (i as f64 + 0.5) / pairs as f64;
        let (dx, y) = (58.0 * f * th.sin(), cy - 70.0 * f * th.cos());
        pts[i] = Point::new(cx - dx, y);
        pts[i + pairs] = Point::new(cx + dx, y);
        map[i] = i + pairs;
        map[i + pairs] = i;
    }
    for j in 0..midline {
        let y = cy - 50.0 * f + 100.0 * f * (j as f64 + 0.5) / midline as f64;
        pts[2 * pairs + j] = Point::new(cx, y);
    }
    Ok((Landmarks::new(pts)?, FlipMap::new(map)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub num_landmarks: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 50,
            num_landmarks: 106,
            image_size: 320,
            seed: 0,
        }
    }
}

/// Paths written by [`write_synthetic_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub images_dir: PathBuf,
    pub detections: PathBuf,
    pub flip_map: PathBuf,
}

/// Writes `count` images with annotations, a detection file and a flip map.
/// Each face is the synthetic layout (lightly jittered) placed by a random
/// similarity; its detection is the exact image of the template points.
pub fn write_synthetic_dataset(
    dir: impl AsRef<Path>,
    spec: &SyntheticSpec,
    template: &ReferenceTemplate,
) -> Result<SyntheticDataset> {
    let dir = dir.as_ref();
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let (face, map) = synthetic_face(spec.num_landmarks, template)?;
    let center = face.centroid();
    let mid = (spec.image_size - 1) as f64 / 2.0;
    let mut detections = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = seed::rng(seed::item_seed(spec.seed, i as u64));
        let jittered = Landmarks::new(
            face.iter()
                .map(|p| Point::new(p.x + rng.random_range(-3.0..3.0), p.y + rng.random_range(-3.0..3.0)))
                .collect(),
        )?;
        let s = rng.random_range(0.9..1.4);
        let theta = rng.random_range(-25f64..25.0).to_radians();
        let lin = SimilarityTransform::from_scale_rotation(s, theta, 0.0, 0.0);
        let c = lin.apply(center);
        let g = SimilarityTransform::from_scale_rotation(
            s,
            theta,
            mid + rng.random_range(-20.0..20.0) - c.x,
            mid + rng.random_range(-20.0..20.0) - c.y,
        );
        let gt = g.apply_points(&jittered);
        let stem = format!("img_{i:03}");
        let img = render_face(spec.image_size, &gt, rng.random())?;
        img.save(images_dir.join(format!("{stem}.ppm")))?;
        let mut txt = format!("{}\n", gt.len());
        for p in gt.iter() {
            txt.push_str(&format!("{} {}\n", p.x, p.y));
        }
        std::fs::write(images_dir.join(format!("{stem}.pts")), txt)?;
        detections.push(DetectorOutput {
            image: format!("{stem}.ppm"),
            bbox: BBox::enclosing(&gt)?,
            landmarks: g.apply_points(&template.landmarks()),
            confidence: 0.99,
        });
    }
    let det_path = dir.join("detections.json");
    write_json(&det_path, &detections)?;
    let map_path = dir.join("flip_map.txt");
    map.write_text(std::fs::File::create(&map_path)?)?;
    Ok(SyntheticDataset {
        images_dir,
        detections: det_path,
        flip_map: map_path,
    })
}

/// Gray gradient background with a bright 3×3 dot per landmark.
fn render_face(size: usize, lmk: &Landmarks, tint: f32) -> Result<Image> {
    let mut img = Image::from_fn(size, size, 3, |x, y, c| {
        0.2 + 0.3 * (x + y) as f32 / (2 * size) as f32 + 0.1 * tint * c as f32
    })?;
    for p in lmk.iter() {
        let (px, py) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    img.pixel_mut(x as usize, y as usize).fill(0.95);
                }
            }
        }
    }
    Ok(img)
}

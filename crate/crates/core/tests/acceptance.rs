//! Acceptance suite. Each check prints one PASS/FAIL line; the process
//! fails if any check fails.

use std::time::Instant;

use rand::Rng;

use facemark::augment::{self, AugmentConfig, FlipMap, JitterRanges};
use facemark::config::PipelineConfig;
use facemark::eval::{self, BBox, CedPoint, GroundTruthRecord};
use facemark::geometry::{estimate_similarity, Landmarks, Point, ReferenceTemplate, SimilarityTransform};
use facemark::head::{build_head, estimate_cost, parse_strategy, run_head, BackboneShape, CostModelConfig, FinalShuffle, HeadWeights};
use facemark::heatmap::{self, Amplitude, GaussianParams};
use facemark::pipeline::{self, AlignedDataset, ReplayRunner, SyntheticSpec};
use facemark::seed;
use facemark::tensor::{pixel_shuffle, pixel_unshuffle, Tensor};
use facemark::Image;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn peak_one(sigma: f64) -> GaussianParams {
    GaussianParams::new(sigma, Amplitude::PeakOne).unwrap()
}

fn decoder_accuracy() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(1);
    let p = peak_one(1.5);
    let n = 1000;
    let (mut ea, mut eg, mut ef) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let (x, y) = (rng.random_range(5.0..90.0), rng.random_range(5.0..90.0));
        let st = heatmap::encode(&Landmarks::from_xy(&[(x, y)]).map_err(e2s)?, 96, 96, &p).map_err(e2s)?;
        let err = |d: heatmap::DecodedPoint| ((d.x - x).abs() + (d.y - y).abs()) / 2.0;
        ea += err(heatmap::decode_argmax(&st)[0]);
        eg += err(heatmap::decode_gradient(&st, 0.25)[0]);
        ef += err(heatmap::decode_gaussian_fit(&st, 0.25)[0]);
    }
    let (ea, eg, ef) = (ea / n as f64, eg / n as f64, ef / n as f64);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("argmax {ea:.4} px, gradient {eg:.4} px, gaussian-fit {ef:.2e} px, {secs:.2} s");
    ensure((0.20..=0.30).contains(&ea), || format!("argmax error out of [0.20, 0.30]: {detail}"))?;
    ensure(eg < ea, || format!("gradient not below argmax: {detail}"))?;
    ensure(ef <= 0.05, || format!("gaussian-fit above 0.05: {detail}"))?;
    ensure(secs < 60.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn exact_gaussian_recovery() -> Outcome {
    let mut rng = seed::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, y) = (rng.random_range(3.0..60.0), rng.random_range(3.0..60.0));
        let sigma = rng.random_range(1.0..3.0);
        let st = heatmap::encode(&Landmarks::from_xy(&[(x, y)]).unwrap(), 64, 64, &peak_one(sigma)).map_err(e2s)?;
        let d = heatmap::decode_gaussian_fit(&st, 0.25)[0];
        worst = worst.max((d.x - x).abs()).max((d.y - y).abs());
    }
    ensure(worst < 1e-6, || format!("worst error {worst:.3e} px"))?;
    Ok(format!("100 centers, worst error {worst:.2e} px"))
}

fn random_points(rng: &mut impl Rng, n: usize, span: f64) -> Landmarks {
    Landmarks::new(
        (0..n)
            .map(|_| Point::new(rng.random_range(-span..span), rng.random_range(-span..span)))
            .collect(),
    )
    .unwrap()
}

fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform {
    SimilarityTransform::from_scale_rotation(
        rng.random_range(0.2..5.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
    )
}

fn geometry_roundtrips() -> Outcome {
    let mut rng = seed::rng(3);
    let (mut fit, mut inv): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let t = random_similarity(&mut rng);
        let src = random_points(&mut rng, 5, 100.0);
        let dst = t.apply_points(&src);
        let est = estimate_similarity(&src, &dst).map_err(e2s)?;
        fit = fit.max(est.apply_points(&src).max_distance(&dst).map_err(e2s)?);
        let back = t.invert().map_err(e2s)?.apply_points(&dst);
        inv = inv.max(back.max_distance(&src).map_err(e2s)?);
    }
    ensure(fit < 1e-9, || format!("fit residual {fit:.3e}"))?;
    ensure(inv <= 1e-9, || format!("inverse roundtrip {inv:.3e} px"))?;

    // Original frame → aligned frame → heatmap → decoded → original frame.
    let template = ReferenceTemplate::default();
    let (face, _) = pipeline::synthetic_face(106, &template).map_err(e2s)?;
    let p = peak_one(1.5);
    let mut e2e: f64 = 0.0;
    for _ in 0..100 {
        let g = SimilarityTransform::from_scale_rotation(
            rng.random_range(0.7..2.0),
            rng.random_range(-0.6..0.6),
            rng.random_range(0.0..200.0),
            rng.random_range(0.0..200.0),
        );
        let gt = g.apply_points(&face);
        let det = g.apply_points(&template.landmarks());
        let t = estimate_similarity(&det, &template.landmarks()).map_err(e2s)?;
        let aligned = t.apply_points(&gt);
        let st = heatmap::encode(&aligned.scaled(0.5), 96, 96, &p).map_err(e2s)?;
        let decoded = heatmap::decode_gaussian_fit(&st, 0.25);
        let back = heatmap::to_image_frame(&decoded, 2.0, &t).map_err(e2s)?;
        e2e = e2e.max(back.max_distance(&gt).map_err(e2s)?);
    }
    ensure(e2e <= 0.15, || format!("align-encode-decode-recover error {e2e:.3e} px"))?;
    Ok(format!(
        "fit residual {fit:.1e}, inverse roundtrip {inv:.1e} px, end-to-end {e2e:.1e} px"
    ))
}

fn pixel_shuffle_bijective() -> Outcome {
    let mut rng = seed::rng(4);
    for case in 0..200 {
        let r = [1, 2, 3][case % 3];
        let c = r * r * rng.random_range(1..5);
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = Tensor::<f32>::from_fn(&[c, h, w], |_| rng.random_range(-1.0f32..1.0));
        let y = pixel_shuffle(&x, r).map_err(e2s)?;
        ensure(y.shape() == [c / (r * r), h * r, w * r], || format!("shuffled shape {:?}", y.shape()))?;
        let back = pixel_unshuffle(&y, r).map_err(e2s)?;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&back) == bits(&x), || format!("roundtrip mismatch at {:?}, r={r}", x.shape()))?;
        let (mut a, mut b) = (bits(&x), bits(&y));
        a.sort_unstable();
        b.sort_unstable();
        ensure(a == b, || format!("element multiset changed at {:?}, r={r}", x.shape()))?;
    }
    Ok("200 random shapes, r in {1, 2, 3}, bit-exact".into())
}

const REFERENCE_HEADS: [(&str, f64, f64); 11] = [
    ("SSSS", 0.56, 6.12),
    ("DSSS", 0.64, 9.56),
    ("DDSS", 0.96, 12.00),
    ("DSSD", 1.10, 10.08),
    ("DSDS", 1.73, 11.69),
    ("DDDS", 2.25, 16.44),
    ("SSSD", 1.02, 6.64),
    ("SDSD", 1.29, 8.76),
    ("SSDD", 2.90, 10.08),
    ("SDDD", 3.36, 13.51),
    ("DDDD", 3.50, 18.26),
];

/// Larger-backbone heads: 128 filters on a 1280-channel 6×6 feature map.
const UPSIZED_HEADS: [(&str, f64); 4] = [("SSD", 0.32), ("SDD", 0.43), ("SSSD", 0.55), ("SDSD", 0.61)];

const UPSIZED_BACKBONE: BackboneShape = BackboneShape {
    channels: 1280,
    height: 6,
    width: 6,
};

fn cost_model_soundness() -> Outcome {
    let start = Instant::now();
    let cfg = CostModelConfig::default();
    let mut specs = Vec::new();
    for (code, _, _) in REFERENCE_HEADS {
        specs.push(parse_strategy(code).map_err(e2s)?);
    }
    for (code, _) in UPSIZED_HEADS {
        specs.push(
            parse_strategy(code)
                .and_then(|s| s.with_channels(128))
                .map_err(e2s)?
                .with_backbone(UPSIZED_BACKBONE),
        );
    }
    let mut total = 0u64;
    for (i, spec) in specs.iter().enumerate() {
        let g = build_head(spec, 106, &cfg).map_err(e2s)?;
        let analytic = estimate_cost(&g, &cfg);
        let w = HeadWeights::seeded(&g, i as u64);
        let mut rng = seed::rng(100 + i as u64);
        let input = Tensor::<f32>::from_fn(&g.input_shape(), |_| rng.random_range(-1.0f32..1.0));
        let (stack, counted) = run_head(&g, &w, &input).map_err(e2s)?;
        ensure(counted.macs == analytic.total_macs, || {
            format!("{}: executed {} MACs, analytic {}", spec.code(), counted.macs, analytic.total_macs)
        })?;
        ensure(analytic.total_flops == analytic.total_macs as f64, || {
            format!("{}: FLOPs {} differ from MACs", spec.code(), analytic.total_flops)
        })?;
        let shape = [stack.channels(), stack.height(), stack.width()];
        let hw = 6 << spec.stages.len();
        ensure(shape == [106, hw, hw], || format!("{} output {shape:?}", spec.code()))?;
        if spec.stages.len() == 4 {
            ensure(shape == [106, 96, 96], || format!("{} output {shape:?}", spec.code()))?;
        }
        total += counted.macs;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} heads, {:.2} GMAC executed and matched, four-stage heads 106x96x96, {secs:.1} s",
        specs.len(),
        total as f64 / 1e9
    ))
}

/// Kendall's tau-b.
fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let (da, db) = (a[i] - a[j], b[i] - b[j]);
            if da == 0.0 && db == 0.0 {
                continue;
            } else if da == 0.0 {
                ties_a += 1.0;
            } else if db == 0.0 {
                ties_b += 1.0;
            } else if da.signum() == db.signum() {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    (conc - disc) / ((conc + disc + ties_a) * (conc + disc + ties_b)).sqrt()
}

fn head_gflops(cfg: &CostModelConfig, code: &str) -> (f64, f64) {
    let g = build_head(&parse_strategy(code).unwrap(), 106, cfg).unwrap();
    let r = estimate_cost(&g, cfg);
    (r.gflops(), r.size_mb)
}

fn cost_model_fidelity() -> Outcome {
    let cfg = CostModelConfig::default();
    let reference: Vec<f64> = REFERENCE_HEADS.iter().map(|h| h.1).collect();
    let ours: Vec<(f64, f64)> = REFERENCE_HEADS.iter().map(|h| head_gflops(&cfg, h.0)).collect();
    let gf: Vec<f64> = ours.iter().map(|o| o.0).collect();
    let tau = kendall_tau(&gf, &reference);

    println!("    strategy  planner GFLOPs  reference  diff     planner MB  reference MB");
    for ((code, r, mb), (g, m)) in REFERENCE_HEADS.iter().zip(&ours) {
        println!("    {code:<8}  {g:>14.3}  {r:>9.2}  {:>+7.3}  {m:>10.2}  {mb:>12.2}", g - r);
    }
    let upsized = CostModelConfig::default();
    for (code, r) in UPSIZED_HEADS {
        let spec = parse_strategy(code).unwrap().with_channels(128).unwrap().with_backbone(UPSIZED_BACKBONE);
        let g = estimate_cost(&build_head(&spec, 106, &upsized).unwrap(), &upsized).gflops();
        println!("    {code:<8}  {g:>14.3}  {r:>9.2}  {:>+7.3}  (128 filters, 1280x6x6)", g - r);
    }
    let alt = CostModelConfig {
        deconv_kernel: 2,
        final_shuffle: FinalShuffle::Fused,
        ..CostModelConfig::default()
    };
    let alt_gf: Vec<f64> = REFERENCE_HEADS.iter().map(|h| head_gflops(&alt, h.0).0).collect();
    println!(
        "    alternative convention (2x2 deconv, fused final shuffle): tau {:.3}",
        kendall_tau(&alt_gf, &reference)
    );

    let argmin = |v: &[f64]| (0..v.len()).min_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
    ensure(tau >= 0.8, || format!("Kendall tau {tau:.3} < 0.8"))?;
    ensure(REFERENCE_HEADS[argmin(&gf)].0 == "SSSS", || "SSSS is not the cheapest head".into())?;
    ensure(REFERENCE_HEADS[argmax(&gf)].0 == "DDDD", || "DDDD is not the most expensive head".into())?;
    Ok(format!(
        "Kendall tau {tau:.3}, SSSS {:.3} GFLOPs cheapest, DDDD {:.3} GFLOPs most expensive",
        gf[0], gf[10]
    ))
}

fn oracle_nme(pred: &[Point], gt: &[Point], bbox: &BBox) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        let dx = pred[i].x - gt[i].x;
        let dy = pred[i].y - gt[i].y;
        sum += (dx * dx + dy * dy).sqrt();
    }
    sum / pred.len() as f64 / (bbox.w * bbox.h).sqrt()
}

fn oracle_ced(nmes: &[f64], steps: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in 0..steps {
        let t = 0.08 * j as f64 / (steps - 1) as f64;
        let mut count = 0;
        for &v in nmes {
            if v <= t {
                count += 1;
            }
        }
        out.push((t, count as f64 / nmes.len() as f64));
    }
    out
}

fn oracle_auc(ced: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for i in 1..ced.len() {
        area += (ced[i].0 - ced[i - 1].0) * (ced[i].1 + ced[i - 1].1) / 2.0;
    }
    area / 0.08
}

fn metrics_oracle() -> Outcome {
    let mut rng = seed::rng(7);
    let mut worst: f64 = 0.0;
    for ds in 0..50 {
        let n_img = rng.random_range(1..30);
        let k = rng.random_range(1..20);
        let steps = rng.random_range(2..300);
        let mut nmes = Vec::new();
        let mut oracle = Vec::new();
        for _ in 0..n_img {
            let gt: Vec<Point> = (0..k)
                .map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
                .collect();
            let scale = rng.random_range(0.0..12.0);
            let pred: Vec<Point> = gt
                .iter()
                .map(|p| Point::new(p.x + scale * rng.random_range(-1.0..1.0), p.y + scale * rng.random_range(-1.0..1.0)))
                .collect();
            let bbox = BBox::new(0.0, 0.0, rng.random_range(40.0..250.0), rng.random_range(40.0..250.0)).unwrap();
            let rec = GroundTruthRecord {
                landmarks: Landmarks::new(gt.clone()).unwrap(),
                bbox,
            };
            nmes.push(eval::nme(&Landmarks::new(pred.clone()).unwrap(), &rec).map_err(e2s)?);
            oracle.push(oracle_nme(&pred, &gt, &bbox));
        }
        for (a, b) in nmes.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        let ced = eval::ced_curve(&nmes, 0.08, steps).map_err(e2s)?;
        let oced = oracle_ced(&oracle, steps);
        for (CedPoint { threshold, fraction }, (t, f)) in ced.iter().zip(&oced) {
            worst = worst.max((threshold - t).abs()).max((fraction - f).abs());
        }
        worst = worst.max((eval::auc(&ced).map_err(e2s)? - oracle_auc(&oced)).abs());
        let ofail = oracle.iter().filter(|&&v| v > 0.08).count() as f64 / oracle.len() as f64;
        worst = worst.max((eval::failure_rate(&nmes, 0.08).map_err(e2s)? - ofail).abs());
        let omean = oracle.iter().sum::<f64>() / oracle.len() as f64;
        worst = worst.max((eval::mean_nme(&nmes).map_err(e2s)? - omean).abs());
        ensure(worst <= 1e-12, || format!("dataset {ds}: max deviation {worst:.3e}"))?;
    }

    let gt: Vec<(f64, f64)> = vec![(10.0, 10.0), (60.0, 25.0), (33.0, 80.0)];
    let off: Vec<(f64, f64)> = gt.iter().map(|&(x, y)| (x + 3.0, y + 4.0)).collect();
    let rec = GroundTruthRecord {
        landmarks: Landmarks::from_xy(&gt).unwrap(),
        bbox: BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
    };
    let v = eval::nme(&Landmarks::from_xy(&off).unwrap(), &rec).map_err(e2s)?;
    ensure(v == 0.05, || format!("3-4-5 NME {v}"))?;
    let fr = eval::failure_rate(&[0.04, 0.09], 0.08).map_err(e2s)?;
    ensure(fr == 0.5, || format!("failure rate {fr}"))?;
    Ok(format!("50 datasets, max deviation {worst:.1e}; 3-4-5 NME 0.05; failure rate 0.5"))
}

fn augmentation_laws() -> Outcome {
    let template = ReferenceTemplate::default();
    let (face, map) = pipeline::synthetic_face(106, &template).map_err(e2s)?;
    let mut rng = seed::rng(8);
    let mut items = Vec::new();
    let mut ulp_dev: f64 = 0.0;
    for i in 0..12 {
        let w = 150 + i * 7;
        let img = Image::from_fn(w, 200, 3, |_, _, _| rng.random::<f32>()).map_err(e2s)?;
        let lmk = Landmarks::new(
            face.iter()
                .map(|p| Point::new(p.x + rng.random_range(-20.0..20.0), p.y + rng.random_range(-5.0..5.0)))
                .collect(),
        )
        .map_err(e2s)?;
        // W-1-x is exact on a 1/256 px grid, so the double flip must be too.
        let grid = Landmarks::new(
            lmk.iter()
                .map(|p| Point::new((p.x * 256.0).round() / 256.0, (p.y * 256.0).round() / 256.0))
                .collect(),
        )
        .map_err(e2s)?;
        let (fi, fl) = augment::hflip(&img, &grid, &map).map_err(e2s)?;
        let (bi, bl) = augment::hflip(&fi, &fl, &map).map_err(e2s)?;
        ensure(bi == img && bl == grid, || format!("hflip twice changed item {i}"))?;
        // Arbitrary doubles round once in W-1-x; the error stays within an ulp of W.
        let twice = augment::hflip_landmarks(&augment::hflip_landmarks(&lmk, w, &map).map_err(e2s)?, w, &map)
            .map_err(e2s)?;
        let dev = twice.max_distance(&lmk).map_err(e2s)?;
        ensure(dev <= f64::EPSILON * w as f64, || format!("item {i}: double flip moved a point {dev:.3e} px"))?;
        ulp_dev = ulp_dev.max(dev);
        items.push((img, lmk));
    }
    ensure(FlipMap::new(vec![1, 2, 0]).is_err(), || "non-involution accepted".into())?;

    let cfg = AugmentConfig::default();
    let runs: Vec<_> = [1, 1, 3, 8]
        .iter()
        .map(|&jobs| augment::augment_batch(&items, &map, &cfg, 2024, jobs))
        .collect::<Result<_, _>>()
        .map_err(e2s)?;
    let bits = |v: &[augment::AugmentedSample]| -> Vec<u32> {
        v.iter().flat_map(|s| s.image.data().iter().map(|x| x.to_bits())).collect()
    };
    for (r, jobs) in runs.iter().zip([1, 1, 3, 8]).skip(1) {
        ensure(bits(r) == bits(&runs[0]) && r == &runs[0], || format!("jobs={jobs} differs from jobs=1"))?;
    }

    let mut worst: f64 = 0.0;
    for s in 0..200u64 {
        let (img, lmk) = &items[s as usize % items.len()];
        let (_, out, t) = augment::random_rigid(img, lmk, &JitterRanges::default(), s).map_err(e2s)?;
        worst = worst.max(t.apply_points(lmk).max_distance(&out).map_err(e2s)?);
    }
    ensure(worst <= 1e-9, || format!("rigid transform mismatch {worst:.3e}"))?;
    Ok(format!(
        "hflip involution bit-exact on grid coordinates ({ulp_dev:.1e} px on arbitrary ones), batches identical for jobs 1/3/8, rigid mapping error {worst:.1e}"
    ))
}

fn end_to_end_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let root = tmp.path();
    let template = ReferenceTemplate::default();
    let spec = SyntheticSpec {
        count: 50,
        num_landmarks: 106,
        image_size: 320,
        seed: 9,
    };
    let synth = pipeline::write_synthetic_dataset(root.join("raw"), &spec, &template).map_err(e2s)?;
    let cfg = PipelineConfig {
        flip_map: Some(synth.flip_map.clone()),
        ..PipelineConfig::default()
    };
    let items = pipeline::scan_images(&synth.images_dir).map_err(e2s)?;
    let dets = pipeline::load_detections(&synth.detections).map_err(e2s)?;
    pipeline::align_dataset(&items, &dets, &template, &cfg, root.join("aligned")).map_err(e2s)?;
    let ds = AlignedDataset::load(root.join("aligned")).map_err(e2s)?;
    let map = cfg.load_flip_map().map_err(e2s)?;
    let n = pipeline::write_replay_stacks(&ds, &map, &cfg, root.join("replay")).map_err(e2s)?;
    ensure(n == 50, || format!("{n} replay stacks written"))?;
    let report = pipeline::end_to_end_eval(&ds, &ReplayRunner::new(root.join("replay")), &map, &cfg).map_err(e2s)?;
    ensure(report.per_image.len() == 50, || format!("{} images scored", report.per_image.len()))?;
    let worst_px = ds
        .records()
        .iter()
        .zip(&report.per_image)
        .map(|(r, s)| s.nme * r.bbox.normalizer())
        .fold(0.0f64, f64::max);
    let detail = format!(
        "AUC {:.5}, failure rate {}, mean NME {:.2e}, worst mean error {:.3} px",
        report.auc, report.failure_rate, report.mean_nme, worst_px
    );
    ensure(report.auc >= 0.999, || detail.clone())?;
    ensure(report.failure_rate == 0.0, || detail.clone())?;
    ensure(worst_px <= 0.15, || detail.clone())?;
    Ok(detail)
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("sub-pixel decoder accuracy", decoder_accuracy),
        ("exact Gaussian recovery", exact_gaussian_recovery),
        ("geometry roundtrips", geometry_roundtrips),
        ("pixel-shuffle bijectivity", pixel_shuffle_bijective),
        ("cost-model soundness", cost_model_soundness),
        ("cost-model fidelity", cost_model_fidelity),
        ("metrics oracle", metrics_oracle),
        ("augmentation determinism and laws", augmentation_laws),
        ("end-to-end replay", end_to_end_replay),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{}] PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[{}] FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

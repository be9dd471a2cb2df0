use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use facemark::augment::{augment_sample, AugmentConfig, FlipMap};
use facemark::config::PipelineConfig;
use facemark::eval::{self, ced_svg, read_ced_csv, write_ced_csv, MetricsReport};
use facemark::head::{build_head, estimate_cost, parse_strategy, rank_strategies, run_head, BackboneShape, HeadWeights};
use facemark::heatmap::{self, Decoder, HeatmapStack};
use facemark::pipeline::{self, AlignedDataset, HeadRunner, ModelRunner, ReplayRunner, SyntheticSpec};
use facemark::tensor::Tensor;
use facemark::{seed, Image, Landmarks};

#[derive(Parser)]
#[command(name = "facemark", version, about = "Face landmark alignment, heatmap codecs, head planning and evaluation")]
struct Cli {
    /// Pipeline config JSON; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); overrides the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align images to the reference template using five-point detections.
    Align {
        /// Directory of .ppm/.pgm images with optional <stem>.pts annotations.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode landmarks as an HMS1 heatmap stack.
    Encode {
        /// Landmarks as CSV `x,y`, JSON `[[x, y], ...]` or point text.
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Landmarks are in the aligned image frame; divide by the stride.
        #[arg(long)]
        image_frame: bool,
    },
    /// Decode an HMS1 stack to landmark coordinates (JSON).
    Decode {
        #[arg(long)]
        input: PathBuf,
        /// argmax, gradient or gaussian; defaults to the config decoder.
        #[arg(long)]
        decoder: Option<Decoder>,
        /// Report coordinates in the aligned image frame.
        #[arg(long)]
        image_frame: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write seeded augmentation previews of one image.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Augmentation config JSON.
        #[arg(long)]
        augment_config: Option<PathBuf>,
        #[arg(long)]
        flip_map: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Cost report for upsampling-head strategies, cheapest first.
    Plan {
        /// Comma-separated strategy strings; defaults to the config strategy.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long)]
        landmarks: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        /// Backbone feature map as CxHxW.
        #[arg(long)]
        backbone: Option<BackboneShape>,
        #[arg(long, value_enum, default_value_t = PlanFormat::Table)]
        format: PlanFormat,
        /// Execute each head once and check the counted MACs.
        #[arg(long)]
        verify: bool,
    },
    /// Predict landmarks for an aligned dataset in original image frames.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        runner: RunnerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an aligned dataset end to end; writes metrics.json and ced.csv.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        runner: RunnerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a CED curve as SVG from ced.csv or metrics.json.
    CedPlot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 480)]
        width: u32,
        #[arg(long, default_value_t = 360)]
        height: u32,
    },
    /// Generate a synthetic dataset (images, annotations, detections, flip map).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 320)]
        image_size: usize,
    },
    /// Write replay stacks encoding the ground truth of an aligned dataset.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunnerArgs {
    /// Directory of <stem>.hms / <stem>.flip.hms stacks.
    #[arg(long, conflicts_with = "weights")]
    replay: Option<PathBuf>,
    /// Head weights (TNS1 records) for the configured strategy. Without
    /// this or --replay, seeded random weights are used.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanFormat {
    Table,
    Json,
    Csv,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_landmarks(path: &Path) -> Result<Landmarks> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
    Ok(match ext.as_deref() {
        Some("csv") => Landmarks::read_csv(fs::File::open(path)?)?,
        _ => eval::load_annotation(path)?,
    })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn make_runner(args: &RunnerArgs, cfg: &PipelineConfig) -> Result<Box<dyn ModelRunner>> {
    if let Some(dir) = &args.replay {
        return Ok(Box::new(ReplayRunner::new(dir)));
    }
    let spec = cfg.strategy_spec()?;
    let graph = build_head(&spec, cfg.num_landmarks, &cfg.cost)?;
    let weights = match &args.weights {
        Some(p) => HeadWeights::load(&graph, p).with_context(|| format!("loading weights {}", p.display()))?,
        None => HeadWeights::seeded(&graph, cfg.seed),
    };
    if graph.output_shape() != [cfg.num_landmarks, cfg.heatmap_size, cfg.heatmap_size] {
        bail!(
            "strategy {} outputs {:?}, config expects {}x{}",
            spec.code(),
            graph.output_shape(),
            cfg.heatmap_size,
            cfg.heatmap_size
        );
    }
    Ok(Box::new(HeadRunner::new(graph, weights)))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Command::Align { images, detections, out } => {
            let items = pipeline::scan_images(images)?;
            let dets = pipeline::load_detections(detections)?;
            let ds = pipeline::align_dataset(&items, &dets, &cfg.reference_template()?, &cfg, out)?;
            eprintln!(
                "aligned {} of {} images ({} skipped) into {}",
                ds.records().len(),
                items.len(),
                ds.skipped.len(),
                out.display()
            );
        }
        Command::Encode {
            landmarks,
            out,
            image_frame,
        } => {
            let mut l = load_landmarks(landmarks)?;
            if *image_frame {
                l = l.scaled(1.0 / cfg.stride()? as f64);
            }
            let stack = heatmap::encode(&l, cfg.heatmap_size, cfg.heatmap_size, &cfg.gaussian()?)?;
            let cut = stack.truncated.iter().filter(|&&t| t).count();
            if cut > 0 {
                eprintln!("warning: {cut} landmark(s) outside the heatmap grid");
            }
            stack.save(out)?;
        }
        Command::Decode {
            input,
            decoder,
            image_frame,
            out,
        } => {
            let stack = HeatmapStack::load(input)?;
            let mut pts = heatmap::decode(&stack, decoder.unwrap_or(cfg.decoder));
            if *image_frame {
                let s = cfg.stride()? as f64;
                for p in &mut pts {
                    p.x *= s;
                    p.y *= s;
                }
            }
            write_output(out.as_deref(), &serde_json::to_string_pretty(&pts)?)?;
        }
        Command::Augment {
            image,
            landmarks,
            out,
            augment_config,
            flip_map,
            count,
        } => {
            let img = Image::load(image)?;
            let lmk = load_landmarks(landmarks)?;
            let acfg = match augment_config {
                Some(p) => AugmentConfig::load(p)?,
                None => AugmentConfig::default(),
            };
            let map = match flip_map {
                Some(p) => FlipMap::load(p)?,
                None if lmk.len() == 5 => FlipMap::five_point(),
                None => bail!("--flip-map is required for {} landmarks", lmk.len()),
            };
            fs::create_dir_all(out)?;
            for i in 0..*count {
                let s = augment_sample(&img, &lmk, &map, &acfg, seed::item_seed(cfg.seed, i as u64))?;
                s.image.save(out.join(format!("aug_{i:03}.ppm")))?;
                fs::write(out.join(format!("aug_{i:03}.json")), s.landmarks.to_json()?)?;
            }
            eprintln!("wrote {count} previews to {}", out.display());
        }
        Command::Plan {
            strategies,
            landmarks,
            channels,
            backbone,
            format,
            verify,
        } => {
            let k = landmarks.unwrap_or(cfg.num_landmarks);
            let codes = if strategies.is_empty() {
                vec![cfg.strategy.clone()]
            } else {
                strategies.clone()
            };
            let specs = codes
                .iter()
                .map(|c| {
                    Ok(parse_strategy(c)?
                        .with_channels(channels.unwrap_or(cfg.channels))?
                        .with_backbone(backbone.unwrap_or(cfg.backbone_shape())))
                })
                .collect::<facemark::Result<Vec<_>>>()?;
            let reports = rank_strategies(&specs, k, &cfg.cost)?;
            if *verify {
                for spec in &specs {
                    let g = build_head(spec, k, &cfg.cost)?;
                    let input = Tensor::<f32>::zeros(&g.input_shape());
                    let (_, counted) = run_head(&g, &HeadWeights::zeros(&g), &input)?;
                    let analytic = estimate_cost(&g, &cfg.cost).total_macs;
                    if counted.macs != analytic {
                        bail!("{}: executed {} MACs, analytic {}", spec.code(), counted.macs, analytic);
                    }
                    eprintln!("{}: {} MACs verified", spec.code(), analytic);
                }
            }
            match format {
                PlanFormat::Json => println!("{}", serde_json::to_string_pretty(&reports)?),
                PlanFormat::Csv => {
                    println!("strategy,gflops,params,size_mb,peak_activation,output");
                    for r in &reports {
                        let [c, h, w] = r.output_shape;
                        println!(
                            "{},{},{},{},{},{c}x{h}x{w}",
                            r.strategy,
                            r.gflops(),
                            r.params,
                            r.size_mb,
                            r.peak_activation_elements
                        );
                    }
                }
                PlanFormat::Table => {
                    println!("{:<8} {:>9} {:>10} {:>9}  output", "strategy", "GFLOPs", "params", "MB");
                    for r in &reports {
                        let [c, h, w] = r.output_shape;
                        println!(
                            "{:<8} {:>9.3} {:>10} {:>9.2}  {c}x{h}x{w}",
                            r.strategy,
                            r.gflops(),
                            r.params,
                            r.size_mb
                        );
                    }
                }
            }
        }
        Command::Infer { dataset, runner, out } => {
            let ds = AlignedDataset::load(dataset)?;
            let runner = make_runner(runner, &cfg)?;
            let map = cfg.load_flip_map()?;
            let preds = pipeline::predict_dataset(&ds, runner.as_ref(), &map, &cfg)?;
            fs::write(out, serde_json::to_vec_pretty(&preds)?)?;
        }
        Command::Eval { dataset, runner, out } => {
            let ds = AlignedDataset::load(dataset)?;
            let runner = make_runner(runner, &cfg)?;
            let map = cfg.load_flip_map()?;
            let report = pipeline::end_to_end_eval(&ds, runner.as_ref(), &map, &cfg)?;
            fs::create_dir_all(out)?;
            fs::write(out.join("metrics.json"), report.to_json()?)?;
            write_ced_csv(&report.ced, fs::File::create(out.join("ced.csv"))?)?;
            println!(
                "images {}  AUC@{} {:.4}  failure rate {:.4}  mean NME {:.5}",
                report.per_image.len(),
                report.max_threshold,
                report.auc,
                report.failure_rate,
                report.mean_nme
            );
        }
        Command::CedPlot {
            input,
            out,
            width,
            height,
        } => {
            let ced = if input.extension().is_some_and(|e| e == "json") {
                MetricsReport::from_json(&fs::read_to_string(input)?)?.ced
            } else {
                read_ced_csv(fs::File::open(input)?)?
            };
            fs::write(out, ced_svg(&ced, *width, *height)?)?;
        }
        Command::Synth {
            out,
            count,
            image_size,
        } => {
            let spec = SyntheticSpec {
                count: *count,
                num_landmarks: cfg.num_landmarks,
                image_size: *image_size,
                seed: cfg.seed,
            };
            let s = pipeline::write_synthetic_dataset(out, &spec, &cfg.reference_template()?)?;
            eprintln!(
                "images in {}, detections {}, flip map {}",
                s.images_dir.display(),
                s.detections.display(),
                s.flip_map.display()
            );
        }
        Command::Replay { dataset, out } => {
            let ds = AlignedDataset::load(dataset)?;
            let n = pipeline::write_replay_stacks(&ds, &cfg.load_flip_map()?, &cfg, out)?;
            eprintln!("wrote replay stacks for {n} images");
        }
    }
    Ok(())
}

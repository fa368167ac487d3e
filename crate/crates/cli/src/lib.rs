//! `splicemask` command-line entry points.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation failure, 3 runtime
//! abort.

pub mod overlay;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use splicemask::config::RunConfig;
use splicemask::dataset::{
    build_dataset, dataset_stats, load_manifest, load_samples, make_synthetic_fixture, read_mask_png,
    validate_dataset, write_fixture, AnnotatedSample, Manifest, MANIFEST_FILE,
};
use splicemask::evaluator::{
    evaluate, forged_percentage, read_predictions, write_predictions, ImageRecord, ImageRegions, MetricsReport,
    Region,
};
use splicemask::model::{prepare_sample, Detection, MaskRcnn, TrainSample};
use splicemask::trainer::{kfold, load_model, run_kfold, train_to_dir};
use splicemask::Error;

use overlay::{render_overlay, OverlayRegion};

pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const KFOLD_MEAN_FILE: &str = "kfold_mean.json";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Runtime(m) => write!(f, "aborted: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(m),
            Error::AnnotationParse { .. }
            | Error::DegeneratePolygon(_)
            | Error::Schema { .. }
            | Error::MissingIds { .. }
            | Error::ShapeMismatch(_)
            | Error::Json(_)
            | Error::Image(_)
            | Error::Fixture(_) => Failure::Data(m),
            Error::NonFinite(_) | Error::Checkpoint(_) | Error::Io { .. } => Failure::Runtime(m),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "splicemask", version, about = "Localize spliced regions with a MobileNet V1 Mask R-CNN")]
pub struct Cli {
    /// Base directory for relative input paths.
    #[arg(long, env = "MISD_DATA_ROOT", global = true)]
    pub data_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat KEY = VALUE configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Applied after the config file, in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, check and summarize datasets.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Train on a manifest and write logs and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitSel,
        #[command(flatten)]
        run: RunArgs,
    },
    /// K-fold cross-validation: one directory per fold plus mean metrics.
    Kfold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitSel,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Detect spliced regions; writes overlays and predictions JSON.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the checkpoint's detection confidence threshold.
        #[arg(long)]
        min_score: Option<f64>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score predictions against a manifest's ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitSel,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Parameter counts of the configured model.
    Params {
        #[arg(long)]
        per_layer: bool,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Write a synthetic spliced-image fixture (images/ + annotations.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// HEIGHTxWIDTH.
        #[arg(long, default_value = "256x384")]
        size: String,
        /// MIN-MAX regions per image.
        #[arg(long, default_value = "3-7")]
        regions: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rasterize annotations into masks and a manifest.
    Build {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-rasterize and compare against stored masks.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Image and region counts.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// Parses `args` (including the program name) and runs; returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::Dataset { cmd } => run_dataset(cmd, root),
        Command::Train { data, out, split, run } => cmd_train(&input(root, &data)?, &out, split, &run),
        Command::Kfold { data, out, k, split, run } => cmd_kfold(&input(root, &data)?, &out, k, split, &run),
        Command::Detect {
            checkpoint,
            out,
            min_score,
            images,
        } => {
            let images = images.iter().map(|p| input(root, p)).collect::<Result<Vec<_>, _>>()?;
            cmd_detect(&input(root, &checkpoint)?, &images, &out, min_score)
        }
        Command::Eval {
            predictions,
            data,
            split,
            out,
            run,
        } => cmd_eval(&input(root, &predictions)?, &input(root, &data)?, split, &out, &run),
        Command::Params { per_layer, json, run } => cmd_params(&run, per_layer, json),
    }
}

/// Resolves a relative input against the data root and checks it exists.
fn input(root: Option<&Path>, p: &Path) -> Result<PathBuf, Failure> {
    let path = match root {
        Some(r) if p.is_relative() && !p.exists() => r.join(p),
        _ => p.to_path_buf(),
    };
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("{} does not exist", path.display())))
    }
}

/// Accepts a manifest file or a directory containing one.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn load_run_config(run: &RunArgs) -> Result<RunConfig, Failure> {
    let text = match &run.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = run
        .overrides
        .iter()
        .map(|s| RunConfig::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = run.seed {
        overrides.push(("SEED".into(), s.to_string()));
    }
    Ok(RunConfig::load(&text, &overrides)?)
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("{what}: expected A{sep}B, got '{s}'"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn mkdir(path: &Path) -> Outcome {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Error::from(e).into())
}

fn run_dataset(cmd: DatasetCmd, root: Option<&Path>) -> Outcome {
    match cmd {
        DatasetCmd::Synth {
            out,
            count,
            size,
            regions,
            seed,
        } => {
            let (h, w) = parse_pair(&size, 'x', "--size")?;
            let range = parse_pair(&regions, '-', "--regions")?;
            let samples = make_synthetic_fixture(count, (h, w), range, seed)?;
            let ann = write_fixture(&samples, &out)?;
            println!("wrote {count} images and {}", ann.display());
            Ok(())
        }
        DatasetCmd::Build {
            images,
            annotations,
            out,
            seed,
        } => {
            let (manifest, rejected) = build_dataset(&input(root, &images)?, &input(root, &annotations)?, &out, seed)?;
            for r in &rejected {
                eprintln!("skipped region: {r:?}");
            }
            let masks: usize = manifest.entries.iter().map(|e| e.masks.len()).sum();
            println!(
                "{}: {} images, {masks} region masks",
                out.join(MANIFEST_FILE).display(),
                manifest.entries.len()
            );
            Ok(())
        }
        DatasetCmd::Validate { manifest } => {
            let path = manifest_path(&input(root, &manifest)?);
            let issues = validate_dataset(&path)?;
            if issues.is_empty() {
                println!("ok: every mask matches its annotation");
                Ok(())
            } else {
                for i in &issues {
                    println!("{}\t{}\t{}", i.id, i.file, i.message);
                }
                Err(Failure::Data(format!("{} mismatched files", issues.len())))
            }
        }
        DatasetCmd::Stats { manifest, json: as_json } => {
            let m = load_manifest(&manifest_path(&input(root, &manifest)?))?;
            let stats = dataset_stats(m.entries.iter().map(|e| (e.category, e.masks.len())));
            if as_json {
                println!("{}", json(&stats)?);
            } else {
                print!("{}", stats.render());
            }
            Ok(())
        }
    }
}

fn select(manifest: &Manifest, samples: Vec<AnnotatedSample>, split: SplitSel) -> Vec<AnnotatedSample> {
    let want = match split {
        SplitSel::All => return samples,
        SplitSel::Train => "train",
        SplitSel::Val => "val",
        SplitSel::Test => "test",
    };
    manifest
        .entries
        .iter()
        .zip(samples)
        .filter(|(e, _)| e.split.as_deref() == Some(want))
        .map(|(_, s)| s)
        .collect()
}

fn load_split(data: &Path, split: SplitSel) -> Result<Vec<AnnotatedSample>, Failure> {
    let (manifest, samples) = load_samples(&manifest_path(data))?;
    let samples = select(&manifest, samples, split);
    if samples.is_empty() {
        return Err(Failure::Data(format!("no images in split {split:?}")));
    }
    Ok(samples)
}

fn prepare(samples: &[AnnotatedSample], image_size: usize) -> Result<Vec<TrainSample>, Failure> {
    Ok(samples
        .iter()
        .map(|s| prepare_sample(s, image_size))
        .collect::<Result<Vec<_>, _>>()?)
}

fn train_model(cfg: &RunConfig, samples: &[TrainSample], out: &Path) -> Result<MaskRcnn, Failure> {
    cfg.echo_into(out)?;
    let mut model = MaskRcnn::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train_to_dir(&mut model, samples, &cfg.train, out)?;
    if let Some(last) = outcome.rows.last() {
        println!(
            "{}: {} steps, final loss {:.4}",
            out.display(),
            outcome.rows.len(),
            last.losses.l_total
        );
    }
    Ok(model)
}

pub fn cmd_train(data: &Path, out: &Path, split: SplitSel, run: &RunArgs) -> Outcome {
    let cfg = load_run_config(run)?;
    let samples = load_split(data, split)?;
    let prepared = prepare(&samples, cfg.model.image_size)?;
    train_model(&cfg, &prepared, out).map(|_| ())
}

/// Ground-truth regions of one annotated image.
pub fn ground_truth(sample: &AnnotatedSample) -> ImageRegions {
    ImageRegions {
        image_id: sample.source_id.clone(),
        height: sample.height(),
        width: sample.width(),
        regions: sample.masks.iter().map(|m| Region::from_mask(m.clone(), 1.0)).collect(),
    }
}

pub fn detections_to_regions(image_id: &str, height: usize, width: usize, dets: &[Detection]) -> ImageRegions {
    ImageRegions {
        image_id: image_id.to_string(),
        height,
        width,
        regions: dets
            .iter()
            .map(|d| Region {
                bbox: d.bbox,
                mask: d.image_mask.clone(),
                score: d.score,
            })
            .collect(),
    }
}

/// Detections on one image plus its predictions record.
pub fn detect_image(model: &MaskRcnn, image_id: &str, image: &image::RgbImage) -> Result<(ImageRegions, ImageRecord), Failure> {
    let (h, w) = (image.height() as usize, image.width() as usize);
    let dets = model.detect(image)?;
    let regions = detections_to_regions(image_id, h, w, &dets);
    let masks: Vec<_> = regions.regions.iter().map(|r| r.mask.clone()).collect();
    let fp = forged_percentage(&masks, h, w)?;
    let record = ImageRecord::from_regions(&regions, 1, Some(fp.total));
    Ok((regions, record))
}

fn write_report(out: &Path, report: &MetricsReport) -> Outcome {
    write_text(&out.join(METRICS_JSON), &report.to_json()?)?;
    write_text(&out.join(METRICS_CSV), &report.to_csv())
}

pub fn cmd_kfold(data: &Path, out: &Path, k: usize, split: SplitSel, run: &RunArgs) -> Outcome {
    let cfg = load_run_config(run)?;
    let samples = load_split(data, split)?;
    let plan = kfold(samples.len(), k, cfg.train.seed)?;
    mkdir(out)?;
    cfg.echo_into(out)?;
    let ids: Vec<&str> = samples.iter().map(|s| s.source_id.as_str()).collect();
    let named: Vec<BTreeMap<&str, Vec<&str>>> = plan
        .folds
        .iter()
        .map(|(t, v)| {
            BTreeMap::from([
                ("train", t.iter().map(|&i| ids[i]).collect()),
                ("val", v.iter().map(|&i| ids[i]).collect()),
            ])
        })
        .collect();
    write_text(&out.join("folds.json"), &json(&named)?)?;
    let mut failure = None;
    let report = run_kfold(&plan, |i, train, val| {
        let dir = out.join(format!("fold_{}", i + 1));
        let fold = || -> Result<MetricsReport, Failure> {
            let subset: Vec<AnnotatedSample> = train.iter().map(|&j| samples[j].clone()).collect();
            let model = train_model(&cfg, &prepare(&subset, cfg.model.image_size)?, &dir)?;
            let mut preds = Vec::new();
            let mut records = Vec::new();
            let mut gts = Vec::new();
            for &j in val {
                let s = &samples[j];
                let (regions, record) = detect_image(&model, &s.source_id, &s.image)?;
                preds.push(regions);
                records.push(record);
                gts.push(ground_truth(s));
            }
            write_predictions(&dir.join(PREDICTIONS_FILE), &records)?;
            let report = evaluate(&preds, &gts, &cfg.eval)?;
            write_report(&dir, &report)?;
            Ok(report)
        };
        fold().map_err(|f| {
            let msg = f.to_string();
            failure = Some(f);
            Error::InvalidArgument(msg)
        })
    });
    let report = match (report, failure) {
        (Ok(r), _) => r,
        (Err(_), Some(f)) => return Err(f),
        (Err(e), None) => return Err(e.into()),
    };
    write_text(&out.join(KFOLD_MEAN_FILE), &json(&report)?)?;
    let m = &report.mean;
    let show = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.4}"));
    println!(
        "{k}-fold mean: F1 {} P {} R {} AP {} AP50 {} AP75 {}",
        show(m.f1),
        show(m.precision),
        show(m.recall),
        show(m.ap),
        show(m.ap50),
        show(m.ap75)
    );
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
        .replace(['/', '\\', ' '], "_")
}

pub fn cmd_detect(checkpoint: &Path, images: &[PathBuf], out: &Path, min_score: Option<f64>) -> Outcome {
    let mut model = load_model(checkpoint)?;
    if let Some(s) = min_score {
        if !(0.0..=1.0).contains(&s) {
            return Err(Failure::Usage(format!("--min-score must lie in [0, 1], got {s}")));
        }
        model.config.det_min_score = s;
    }
    mkdir(out)?;
    let mut echo = RunConfig::paper();
    echo.model = model.config.clone();
    echo.echo_into(out)?;
    let mut sorted: Vec<&PathBuf> = images.iter().collect();
    sorted.sort();
    let mut records = Vec::with_capacity(sorted.len());
    for path in sorted {
        let id = stem(path);
        let img = image::open(path).map_err(Error::from)?.into_rgb8();
        let (regions, record) = detect_image(&model, &id, &img)?;
        let (h, w) = (regions.height, regions.width);
        let fp = forged_percentage(&regions.regions.iter().map(|r| r.mask.clone()).collect::<Vec<_>>(), h, w)?;
        let overlay_regions: Vec<OverlayRegion> = regions
            .regions
            .iter()
            .zip(&fp.per_region)
            .map(|(r, &p)| OverlayRegion {
                bbox: r.bbox,
                score: r.score,
                mask: &r.mask,
                percent: p,
            })
            .collect();
        let overlay = render_overlay(&img, &overlay_regions);
        let opath = out.join(format!("{id}_overlay.png"));
        overlay.save(&opath).map_err(Error::from)?;
        println!("{id}\tforged {:.2}%\t{} regions", fp.total, regions.regions.len());
        records.push(record);
    }
    write_predictions(&out.join(PREDICTIONS_FILE), &records)?;
    Ok(())
}

/// Ground truth straight from the manifest's mask files.
pub fn manifest_ground_truth(data: &Path, split: SplitSel) -> Result<Vec<ImageRegions>, Failure> {
    let path = manifest_path(data);
    let manifest = load_manifest(&path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let want = match split {
        SplitSel::All => None,
        SplitSel::Train => Some("train"),
        SplitSel::Val => Some("val"),
        SplitSel::Test => Some("test"),
    };
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| want.is_none() || e.split.as_deref() == want) {
        let regions = e
            .masks
            .iter()
            .map(|rel| read_mask_png(&dir.join(rel)).map(|m| Region::from_mask(m, 1.0)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ImageRegions {
            image_id: e.id.clone(),
            height: e.height,
            width: e.width,
            regions,
        });
    }
    Ok(out)
}

pub fn cmd_eval(predictions: &Path, data: &Path, split: SplitSel, out: &Path, run: &RunArgs) -> Outcome {
    let cfg = load_run_config(run)?;
    let records = read_predictions(predictions)?;
    let preds = records.iter().map(ImageRecord::to_regions).collect::<Result<Vec<_>, _>>()?;
    let gts = manifest_ground_truth(data, split)?;
    let report = evaluate(&preds, &gts, &cfg.eval)?;
    mkdir(out)?;
    cfg.echo_into(out)?;
    write_report(out, &report)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn cmd_params(run: &RunArgs, per_layer: bool, as_json: bool) -> Outcome {
    let cfg = load_run_config(run)?;
    let model = MaskRcnn::new(cfg.model.clone(), cfg.train.seed)?;
    let report = splicemask::backbone::count_parameters(&model);
    if as_json {
        println!("{}", json(&report)?);
        return Ok(());
    }
    println!("total          {}", report.total);
    println!("trainable      {}", report.trainable);
    println!("non-trainable  {}", report.non_trainable);
    if per_layer {
        for l in &report.per_layer {
            println!("{:<40} {:>10} {:>8}", l.name, l.trainable, l.non_trainable);
        }
    }
    Ok(())
}

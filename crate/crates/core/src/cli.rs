//! Command-line front end.
//!
//! Every subcommand starts from the pipeline configuration (`--config`, else
//! `$PRIMING_CONFIG`, else defaults), applies its own flags on top and echoes
//! the resolved configuration to stderr. Exit status is 0 on success, 1 for
//! usage or validation errors and 2 for runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{CategoryId, ExemplarImage};
use crate::config::{load_model_sim, PipelineConfig};
use crate::density::{generate_density, KernelParams};
use crate::error::{Error, Result};
use crate::fixtures::synthetic_catalog;
use crate::io::{
    load_annotations, load_catalog, load_exemplars, load_predictions, read_mask, read_rgb, root_of,
    save_annotations, write_density, write_json, write_mask, write_rgb, write_synthetic_catalog,
    SceneAnnotationFile,
};
use crate::mask::BinaryMask;
use crate::mask_extraction::{extract_mask, IdentityRefiner, MinArea, SobelEdges};
use crate::metrics::{evaluate, tally_from_detections, EvalImage, MetricSet, MetricsReport};
use crate::pose_pruning::{prune_poses, score_poses, PoseRecord, PruneConfig};
use crate::priming::{
    nms, run_priming, select_reliable, simulated_models, CheckoutImage, GroundTruth, NoopHooks,
    PrimingReport, PseudoLabels, Sample,
};
use crate::synthesis::{derive_seed, synthesize_scene, Difficulty, PrunedCatalog, SynthesizedScene};

#[derive(Debug, Parser)]
#[command(name = "checkout-priming", version, about = "Synthetic checkout data and reliability-gated pseudo-labeling")]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults to $PRIMING_CONFIG.
    #[arg(long, global = true, value_name = "TOML")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedurally drawn exemplar catalog with exact masks.
    MakeCatalog(MakeCatalogArgs),
    /// Coarse foreground masks for every exemplar image in a directory.
    ExtractMasks(ExtractMasksArgs),
    /// Score exemplar views by mask area and flag unstable poses.
    Prune(PruneArgs),
    /// Render annotated checkout scenes from a catalog.
    Synthesize(SynthesizeArgs),
    /// Density maps (DMAP files) from point annotations.
    Density(DensityArgs),
    /// Run the reliability gate with simulated models over a dataset.
    Select(SelectArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Synthesize scenes in memory and run the full priming loop on them.
    SimulateE2e(SimulateArgs),
    /// Run every stage from one configuration file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct MakeCatalogArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub categories: Option<u32>,
    #[arg(long)]
    pub views: Option<u32>,
    #[arg(long)]
    pub size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ExtractMasksArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub edge_threshold: Option<f64>,
    #[arg(long)]
    pub dilate: Option<u32>,
    #[arg(long)]
    pub erode: Option<u32>,
    #[arg(long)]
    pub min_area_frac: Option<f64>,
    #[arg(long)]
    pub median: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Directory of `<category>_<view>.png` masks.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub theta_m: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Catalog directory (holding `catalog.json`) or manifest path.
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub level: Difficulty,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub theta_m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Geometry-adaptive kernel widths.
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Directory holding `annotations.json` and the images it names.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Simulated-model TOML: `seed` and a `[noise]` table.
    #[arg(long)]
    pub model_sim: Option<PathBuf>,
    #[arg(long)]
    pub theta_p: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub score_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "medium")]
    pub level: Difficulty,
    #[arg(long, default_value_t = 500)]
    pub scenes: usize,
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::MakeCatalog(a) => make_catalog(&mut cfg, a),
        Command::ExtractMasks(a) => extract_masks(&mut cfg, a),
        Command::Prune(a) => prune(&mut cfg, a),
        Command::Synthesize(a) => synthesize(&mut cfg, a),
        Command::Density(a) => density(&mut cfg, a),
        Command::Select(a) => select(&mut cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&mut cfg, a),
        Command::SimulateE2e(a) => simulate(&mut cfg, a),
        Command::Pipeline(a) => pipeline(&mut cfg, a),
    }
}

fn echo(cfg: &PipelineConfig, extra: &[(&str, String)]) -> Result<()> {
    cfg.validate()?;
    eprintln!("# resolved configuration");
    eprint!("{}", cfg.to_toml());
    for (k, v) in extra {
        eprintln!("# {k} = {v}");
    }
    Ok(())
}

fn make_catalog(cfg: &mut PipelineConfig, a: MakeCatalogArgs) -> Result<()> {
    if let Some(v) = a.categories {
        cfg.catalog.categories = v;
    }
    if let Some(v) = a.views {
        cfg.catalog.views = v;
    }
    if let Some(v) = a.size {
        cfg.catalog.size = v;
    }
    echo(cfg, &[])?;
    let catalog = synthetic_catalog(&cfg.catalog)?;
    let path = write_synthetic_catalog(&catalog, &a.out, cfg.pruning.theta_m)?;
    println!("wrote {} exemplars to {}", catalog.exemplars.len(), path.display());
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn extract_masks(cfg: &mut PipelineConfig, a: ExtractMasksArgs) -> Result<()> {
    let m = &mut cfg.masks;
    if let Some(v) = a.edge_threshold {
        m.edge_threshold = v;
    }
    if let Some(v) = a.dilate {
        m.dilate_radius = v;
    }
    if let Some(v) = a.erode {
        m.erode_radius = v;
    }
    if let Some(v) = a.min_area_frac {
        m.min_component_area = MinArea::Fraction(v);
    }
    if let Some(v) = a.median {
        m.median_radius = v;
    }
    echo(cfg, &[])?;
    let files = sorted_images(&a.input)?;
    for f in &files {
        let ex = ExemplarImage::new(CategoryId(1), 0, read_rgb(f)?)?;
        let mask = extract_mask(&ex, &SobelEdges, &cfg.masks, &IdentityRefiner)?;
        let stem = f.file_stem().unwrap_or_default().to_string_lossy();
        write_mask(&mask, &a.output.join(format!("{stem}.png")))?;
    }
    println!("extracted {} masks into {}", files.len(), a.output.display());
    Ok(())
}

fn parse_mask_name(path: &Path) -> Result<(CategoryId, u32)> {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let parsed = stem
        .split_once('_')
        .and_then(|(c, v)| Some((c.parse::<u32>().ok()?, v.parse::<u32>().ok()?)));
    match parsed {
        Some((c, v)) if c > 0 => Ok((CategoryId(c), v)),
        _ => Err(Error::validation(
            "mask directory",
            format!("{} is not named <category>_<view>.png", path.display()),
        )),
    }
}

fn prune(cfg: &mut PipelineConfig, a: PruneArgs) -> Result<()> {
    if let Some(t) = a.theta_m {
        cfg.pruning = PruneConfig::new(t)?;
    }
    echo(cfg, &[])?;
    let mut records = Vec::new();
    for f in sorted_images(&a.masks)? {
        let (category, view) = parse_mask_name(&f)?;
        records.push(PoseRecord::unscored(category, view, read_mask(&f)?.area() as u64));
    }
    records.sort_by_key(|r| (r.category, r.view));
    score_poses(&mut records, &cfg.pruning)?;
    let (kept, pruned) = prune_poses(&records, &cfg.pruning);
    write_json(&prune_report(&records), &a.report)?;
    println!("kept {} views, pruned {}", kept.len(), pruned.len());
    Ok(())
}

#[derive(Serialize)]
struct PoseRow {
    category: CategoryId,
    view: u32,
    area: u64,
    ratio: f64,
    kept: bool,
}

fn prune_report(records: &[PoseRecord]) -> Vec<PoseRow> {
    records
        .iter()
        .map(|r| PoseRow {
            category: r.category,
            view: r.view,
            area: r.area,
            ratio: r.ratio,
            kept: r.realistic,
        })
        .collect()
}

/// Loads a manifest, rescoring poses from the mask files so pruning always
/// reflects the configured threshold.
fn load_pruned_catalog(path: &Path, theta: &PruneConfig) -> Result<PrunedCatalog> {
    let manifest_path = if path.is_dir() { path.join("catalog.json") } else { path.to_path_buf() };
    let manifest = load_catalog(&manifest_path)?;
    let exemplars = load_exemplars(&manifest, &root_of(&manifest_path), false)?;
    prune_exemplars(exemplars, theta)
}

fn prune_exemplars(exemplars: Vec<ExemplarImage>, theta: &PruneConfig) -> Result<PrunedCatalog> {
    let mut records: Vec<PoseRecord> = exemplars
        .iter()
        .map(|e| PoseRecord::unscored(e.category, e.view, e.mask().map_or(0, |m| m.area()) as u64))
        .collect();
    score_poses(&mut records, theta)?;
    let kept: Vec<ExemplarImage> = exemplars
        .into_iter()
        .zip(&records)
        .filter(|(_, r)| r.realistic)
        .map(|(e, _)| e)
        .collect();
    PrunedCatalog::new(kept)
}

fn synthesize_split(
    catalog: &PrunedCatalog,
    cfg: &PipelineConfig,
    base_seed: u64,
    levels: &[Difficulty],
    count: usize,
) -> Result<Vec<SynthesizedScene>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let level = levels[i % levels.len()];
            synthesize_scene(derive_seed(base_seed, i as u64), level, catalog, &cfg.synthesis, None)
        })
        .collect()
}

/// Writes `images/<id>.png` and `annotations.json` under `dir`.
fn write_split(dir: &Path, scenes: &[SynthesizedScene]) -> Result<SceneAnnotationFile> {
    let files: Vec<PathBuf> = (0..scenes.len())
        .map(|i| PathBuf::from(format!("images/{i:05}.png")))
        .collect();
    scenes
        .par_iter()
        .zip(&files)
        .try_for_each(|(s, f)| write_rgb(&s.image, &dir.join(f)))?;
    let ann = SceneAnnotationFile::from_scenes(
        scenes
            .iter()
            .zip(files)
            .enumerate()
            .map(|(i, (s, f))| (i as u64, f, s)),
    );
    save_annotations(&ann, &dir.join("annotations.json"))?;
    Ok(ann)
}

fn synthesize(cfg: &mut PipelineConfig, a: SynthesizeArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.theta_m {
        cfg.pruning = PruneConfig::new(t)?;
    }
    echo(cfg, &[("level", a.level.to_string()), ("count", a.count.to_string())])?;
    let catalog = load_pruned_catalog(&a.catalog, &cfg.pruning)?;
    let scenes = synthesize_split(&catalog, cfg, cfg.seed, &[a.level], a.count)?;
    write_split(&a.out, &scenes)?;
    println!("wrote {} {} scenes to {}", scenes.len(), a.level, a.out.display());
    Ok(())
}

fn write_densities(file: &SceneAnnotationFile, kernel: &KernelParams, out: &Path) -> Result<()> {
    let grouped = file.by_image();
    file.images.par_iter().try_for_each(|img| {
        let points: Vec<(f64, f64)> = grouped[&img.id].iter().map(|a| (a.point[0], a.point[1])).collect();
        let map = generate_density(&points, (img.width, img.height), kernel)?;
        write_density(&map, &out.join(format!("{:05}.dmap", img.id)))
    })
}

fn density(cfg: &mut PipelineConfig, a: DensityArgs) -> Result<()> {
    if let Some(s) = a.sigma {
        cfg.density = KernelParams {
            adaptive: cfg.density.adaptive,
            ..KernelParams::fixed(s)
        };
    }
    if a.adaptive {
        cfg.density.adaptive = true;
    }
    echo(cfg, &[])?;
    let file = load_annotations(&a.annotations)?;
    write_densities(&file, &cfg.density, &a.out)?;
    println!("wrote {} density maps to {}", file.images.len(), a.out.display());
    Ok(())
}

fn samples_from_file(file: &SceneAnnotationFile, root: &Path) -> Result<Vec<Sample>> {
    let mut truth = file.ground_truth();
    file.images
        .iter()
        .map(|img| {
            let image = read_rgb(&root.join(&img.file))?;
            if image.dimensions() != (img.width, img.height) {
                return Err(Error::DimensionMismatch {
                    expected: (img.width, img.height),
                    actual: image.dimensions(),
                });
            }
            Ok(Sample {
                image: CheckoutImage { id: img.id, image },
                ground_truth: truth.remove(&img.id),
            })
        })
        .collect()
}

fn max_category(samples: &[Sample]) -> u32 {
    samples
        .iter()
        .filter_map(|s| s.ground_truth.as_ref())
        .flat_map(|g| g.objects.iter().map(|o| o.0 .0))
        .max()
        .unwrap_or(1)
}

#[derive(Serialize)]
struct ImageVerdict {
    image_id: u64,
    reliable: bool,
    density_count: f64,
    rounded_count: u64,
    confident_detections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pseudo_labels: Option<PseudoLabels>,
}

#[derive(Serialize)]
struct SelectReport {
    selected: usize,
    rejected: usize,
    selection_precision: Option<f64>,
    images: Vec<ImageVerdict>,
}

fn select(cfg: &mut PipelineConfig, a: SelectArgs) -> Result<()> {
    if let Some(p) = &a.model_sim {
        cfg.models = load_model_sim(p)?;
    }
    if let Some(t) = a.theta_p {
        cfg.priming.gate.theta_p = t;
    }
    if let Some(t) = a.nms_iou {
        cfg.priming.gate.nms_iou = t;
    }
    echo(cfg, &[("model seed", cfg.models.seed.to_string())])?;
    let file = load_annotations(&a.dataset.join("annotations.json"))?;
    let samples = samples_from_file(&file, &a.dataset)?;
    let (det, counter) = simulated_models(
        &samples,
        &cfg.density,
        cfg.models.noise,
        cfg.models.seed,
        max_category(&samples).max(cfg.catalog.categories),
    )?;
    let sel = select_reliable(&samples, &det, &counter, &cfg.priming.gate)?;
    let mut images: Vec<(usize, ImageVerdict)> = sel
        .reliable
        .iter()
        .map(|x| (x, true))
        .chain(sel.rejected.iter().map(|x| (x, false)))
        .map(|(x, reliable)| {
            let d = x.outcome.diagnostics;
            let verdict = ImageVerdict {
                image_id: x.image_id,
                reliable,
                density_count: d.density_count,
                rounded_count: d.rounded_count,
                confident_detections: d.confident_detections,
                pseudo_labels: reliable.then(|| PseudoLabels::from_confident(x.outcome.confident.clone())),
            };
            (x.index, verdict)
        })
        .collect();
    images.sort_by_key(|(i, _)| *i);
    let hits = images
        .iter()
        .filter(|(i, v)| {
            v.reliable
                && samples[*i].ground_truth.as_ref().is_some_and(|g| {
                    v.pseudo_labels
                        .as_ref()
                        .is_some_and(|p| p.shopping_list.same_counts(&g.shopping_list))
                })
        })
        .count();
    let report = SelectReport {
        selected: sel.reliable.len(),
        rejected: sel.rejected.len(),
        selection_precision: (!sel.reliable.is_empty()).then(|| hits as f64 / sel.reliable.len() as f64),
        images: images.into_iter().map(|(_, v)| v).collect(),
    };
    write_json(&report, &a.report)?;
    println!("selected {} of {} images", report.selected, samples.len());
    Ok(())
}

fn evaluate_cmd(cfg: &mut PipelineConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(t) = a.score_threshold {
        cfg.priming.tally_threshold = t;
    }
    echo(cfg, &[])?;
    let gt = load_annotations(&a.gt)?;
    let preds = load_predictions(&a.pred)?.per_image();
    let truth = gt.ground_truth();
    let mut images = Vec::new();
    for img in &gt.images {
        let g: &GroundTruth = &truth[&img.id];
        let dets = nms(preds.get(&img.id).map_or(&[][..], Vec::as_slice), cfg.priming.gate.nms_iou);
        images.push(EvalImage {
            image_id: img.id,
            level: img.difficulty,
            predicted: tally_from_detections(&dets, cfg.priming.tally_threshold),
            ground_truth: g.shopping_list.clone(),
            detections: dets,
            gt_boxes: g.objects.clone(),
        });
    }
    if let Some(id) = preds.keys().find(|id| gt.image(**id).is_none()) {
        return Err(Error::validation(
            a.pred.display().to_string(),
            format!("prediction for image {id} absent from ground truth"),
        ));
    }
    if images.is_empty() {
        return Err(Error::validation(a.gt.display().to_string(), "no images to evaluate"));
    }
    let report = evaluate(&images, None)?;
    write_json(&report, &a.report)?;
    print_metrics(&report);
    Ok(())
}

fn metric_line(name: &str, m: &MetricSet) -> String {
    format!(
        "{name:<8} cAcc {:.4}  ACD {:.4}  mCCD {:.4}  mCIoU {:.4}  mAP50 {:.4}  mmAP {:.4}  ({} images)",
        m.c_acc, m.acd, m.mccd, m.mciou, m.map50, m.mmap, m.images
    )
}

fn print_metrics(r: &MetricsReport) {
    for (level, m) in &r.per_level {
        println!("{}", metric_line(level.as_str(), m));
    }
    println!("{}", metric_line("overall", &r.overall));
}

fn simulate(cfg: &mut PipelineConfig, a: SimulateArgs) -> Result<()> {
    if let Some(p) = &a.noise {
        cfg.models = load_model_sim(p)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    echo(
        cfg,
        &[
            ("level", a.level.to_string()),
            ("scenes", a.scenes.to_string()),
            ("model seed", cfg.models.seed.to_string()),
        ],
    )?;
    let catalog = match &cfg.catalog_manifest {
        Some(p) => load_pruned_catalog(p, &cfg.pruning)?,
        None => synthetic_catalog(&cfg.catalog)?.pruned(cfg.pruning.theta_m)?,
    };
    let scenes = synthesize_split(&catalog, cfg, cfg.seed, &[a.level], a.scenes)?;
    let samples: Vec<Sample> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| Sample::from_scene(i as u64, s))
        .collect();
    let report = prime(cfg, &[], &samples, catalog.max_category())?;
    write_json(&report, &a.report)?;
    print_priming(&report);
    Ok(())
}

fn prime(cfg: &PipelineConfig, train: &[Sample], test: &[Sample], categories: u32) -> Result<PrimingReport> {
    let (mut det, counter) = simulated_models(
        test,
        &cfg.density,
        cfg.models.noise,
        cfg.models.seed,
        categories.max(max_category(test)),
    )?;
    run_priming(train, test, &mut det, Box::new(counter), &mut NoopHooks, &cfg.priming)
}

fn print_priming(r: &PrimingReport) {
    let s = &r.selection;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "selected {} of {} test images; pseudo-list accuracy selected {} rejected {}",
        s.selected,
        s.test_images,
        pct(s.selection_precision),
        pct(s.rejected_precision)
    );
    if let Some(m) = &r.metrics {
        print_metrics(m);
    }
}

#[derive(Serialize)]
struct MaskAudit {
    category: CategoryId,
    view: u32,
    extracted_area: usize,
    reference_area: usize,
    iou: f64,
}

fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn pipeline(cfg: &mut PipelineConfig, a: PipelineArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let train_seed = derive_seed(cfg.seed, 0);
    let test_seed = derive_seed(cfg.seed, 1);
    echo(
        cfg,
        &[
            ("train seed", train_seed.to_string()),
            ("test seed", test_seed.to_string()),
            ("model seed", cfg.models.seed.to_string()),
        ],
    )?;
    let out = &a.out;

    // catalog: reference masks come from the manifest or the procedural drawing
    let (exemplars, reference): (Vec<ExemplarImage>, Vec<BinaryMask>) = match &cfg.catalog_manifest {
        Some(p) => {
            let manifest = load_catalog(p)?;
            let ex = load_exemplars(&manifest, &root_of(p), false)?;
            let masks = ex.iter().map(|e| e.mask().cloned().expect("loaded with masks")).collect();
            (ex, masks)
        }
        None => {
            let cat = synthetic_catalog(&cfg.catalog)?;
            write_synthetic_catalog(&cat, &out.join("catalog"), cfg.pruning.theta_m)?;
            (cat.exemplars, cat.masks)
        }
    };

    let extracted: Vec<BinaryMask> = exemplars
        .par_iter()
        .map(|e| extract_mask(e, &SobelEdges, &cfg.masks, &IdentityRefiner))
        .collect::<Result<_>>()?;
    let mut audit = Vec::new();
    for ((e, m), r) in exemplars.iter().zip(&extracted).zip(&reference) {
        write_mask(m, &out.join(format!("masks/{}_{}.png", e.category, e.view)))?;
        audit.push(MaskAudit {
            category: e.category,
            view: e.view,
            extracted_area: m.area(),
            reference_area: r.area(),
            iou: mask_iou(m, r)?,
        });
    }
    write_json(&audit, &out.join("mask_audit.json"))?;

    let with_masks: Vec<ExemplarImage> = exemplars
        .into_iter()
        .zip(extracted)
        .map(|(e, m)| e.with_mask(m))
        .collect::<Result<_>>()?;
    let mut records: Vec<PoseRecord> = with_masks
        .iter()
        .map(|e| PoseRecord::unscored(e.category, e.view, e.mask().map_or(0, |m| m.area()) as u64))
        .collect();
    score_poses(&mut records, &cfg.pruning)?;
    write_json(&prune_report(&records), &out.join("prune_report.json"))?;
    let catalog = prune_exemplars(with_masks, &cfg.pruning)?;

    let levels = cfg.dataset.levels.clone();
    let train = synthesize_split(&catalog, cfg, train_seed, &levels, cfg.dataset.train_scenes)?;
    let train_file = write_split(&out.join("train"), &train)?;
    write_densities(&train_file, &cfg.density, &out.join("train/density"))?;
    let test = synthesize_split(&catalog, cfg, test_seed, &levels, cfg.dataset.test_scenes)?;
    write_split(&out.join("test"), &test)?;

    let train_samples: Vec<Sample> = train.iter().enumerate().map(|(i, s)| Sample::from_scene(i as u64, s)).collect();
    let test_samples: Vec<Sample> = test.iter().enumerate().map(|(i, s)| Sample::from_scene(i as u64, s)).collect();
    let report = prime(cfg, &train_samples, &test_samples, catalog.max_category())?;
    write_json(&report, &out.join("priming_report.json"))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|source| Error::Io {
        path: out.join("config.toml"),
        source,
    })?;
    let mean_iou = audit.iter().map(|m| m.iou).sum::<f64>() / audit.len().max(1) as f64;
    println!(
        "catalog: {} views, mean mask IoU {:.4}, {} kept after pruning",
        audit.len(),
        mean_iou,
        catalog.exemplars().len()
    );
    println!("train: {} scenes, test: {} scenes", train.len(), test.len());
    print_priming(&report);
    Ok(())
}

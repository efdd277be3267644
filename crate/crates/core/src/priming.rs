//! Reliability-gated selection of unlabeled checkout images.
//!
//! A test image is *reliable* when the rounded mass of the counter's density
//! map equals the number of post-NMS detections scoring strictly above
//! `theta_p`. Reliable images are pseudo-labeled with those confident
//! detections and used to fine-tune the detector once the counter has been
//! dropped.
//!
//! The detector and counter are traits; [`SimulatedDetector`] and
//! [`SimulatedCounter`] perturb ground truth under a configurable noise model
//! so the whole loop can be exercised without a network.

use std::collections::HashMap;
use std::time::Instant;

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::CategoryId;
use crate::density::{count_from_density, generate_density, round_count, DensityMap, KernelParams};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::metrics::{evaluate, tally_from_detections, EvalImage, MetricsReport, ShoppingList};
use crate::synthesis::{derive_seed, stream_rng, Difficulty, SynthesizedScene};

pub const DEFAULT_THETA_P: f64 = 0.95;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: CategoryId,
    /// Confidence in `[0, 1]`.
    pub score: f64,
}

/// A checkout photo handed to the models.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckoutImage {
    pub id: u64,
    pub image: RgbImage,
}

/// Annotations of a checkout image, when known.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub objects: Vec<(CategoryId, BBox)>,
    pub points: Vec<(f64, f64)>,
    pub shopping_list: ShoppingList,
    pub level: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: CheckoutImage,
    pub ground_truth: Option<GroundTruth>,
}

impl Sample {
    /// A labeled sample from a synthesized scene.
    pub fn from_scene(id: u64, scene: &SynthesizedScene) -> Self {
        Sample {
            image: CheckoutImage {
                id,
                image: scene.image.clone(),
            },
            ground_truth: Some(GroundTruth {
                objects: scene.annotations.iter().map(|a| (a.category, a.bbox)).collect(),
                points: scene.annotations.iter().map(|a| a.point).collect(),
                shopping_list: scene.shopping_list.clone(),
                level: Some(scene.spec.difficulty),
            }),
        }
    }
}

pub trait Detector: Send + Sync {
    /// Raw (pre-NMS) detections.
    fn detect(&self, image: &CheckoutImage) -> Result<Vec<Detection>>;

    /// Whether `detect` may be called from several threads at once.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

pub trait Counter: Send + Sync {
    fn count_map(&self, image: &CheckoutImage) -> Result<DensityMap>;

    fn concurrency_safe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub theta_p: f64,
    pub nms_iou: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            theta_p: DEFAULT_THETA_P,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_p) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::invalid("theta_p and nms_iou must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Class-wise greedy suppression. Keeps the highest-scoring detection,
/// discards same-category detections overlapping it by more than
/// `iou_threshold`, and repeats. Output is sorted by descending score; equal
/// scores keep input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = detections[i];
        let suppressed = kept
            .iter()
            .any(|k| k.category == d.category && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDiagnostics {
    /// Unrounded density mass.
    pub density_count: f64,
    pub rounded_count: u64,
    /// Post-NMS detections scoring above `theta_p`.
    pub confident_detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub reliable: bool,
    pub diagnostics: GateDiagnostics,
    /// The post-NMS detections above `theta_p`.
    pub confident: Vec<Detection>,
}

fn confident_detections(image: &CheckoutImage, detector: &dyn Detector, cfg: &GateConfig) -> Result<Vec<Detection>> {
    let raw = detector.detect(image)?;
    Ok(nms(&raw, cfg.nms_iou)
        .into_iter()
        .filter(|d| d.score > cfg.theta_p)
        .collect())
}

/// Runs both heads on one image and compares their counts.
pub fn assess(
    image: &CheckoutImage,
    detector: &dyn Detector,
    counter: &dyn Counter,
    cfg: &GateConfig,
) -> Result<GateOutcome> {
    let confident = confident_detections(image, detector, cfg)?;
    let density = counter.count_map(image)?;
    let density_count = count_from_density(&density);
    let rounded_count = round_count(density_count)?;
    let diagnostics = GateDiagnostics {
        density_count,
        rounded_count,
        confident_detections: confident.len(),
    };
    Ok(GateOutcome {
        reliable: rounded_count == confident.len() as u64,
        diagnostics,
        confident,
    })
}

pub fn is_reliable(
    image: &CheckoutImage,
    detector: &dyn Detector,
    counter: &dyn Counter,
    cfg: &GateConfig,
) -> Result<(bool, GateDiagnostics)> {
    let o = assess(image, detector, counter, cfg)?;
    Ok((o.reliable, o.diagnostics))
}

/// Gate verdict for one test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessed {
    /// Position in the test set.
    pub index: usize,
    pub image_id: u64,
    pub outcome: GateOutcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub reliable: Vec<Assessed>,
    pub rejected: Vec<Assessed>,
}

/// Partitions the test set by the gate, preserving order. Evaluates images
/// in parallel when both models allow it.
pub fn select_reliable(
    testset: &[Sample],
    detector: &dyn Detector,
    counter: &dyn Counter,
    cfg: &GateConfig,
) -> Result<Selection> {
    cfg.validate()?;
    let run = |(index, s): (usize, &Sample)| {
        assess(&s.image, detector, counter, cfg).map(|outcome| Assessed {
            index,
            image_id: s.image.id,
            outcome,
        })
    };
    let assessed: Vec<Assessed> = if detector.concurrency_safe() && counter.concurrency_safe() {
        testset.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        testset.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let (reliable, rejected) = assessed.into_iter().partition(|a| a.outcome.reliable);
    Ok(Selection { reliable, rejected })
}

/// Fine-tuning supervision derived from the detector's own confident output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub objects: Vec<Detection>,
    pub shopping_list: ShoppingList,
}

impl PseudoLabels {
    pub fn from_confident(confident: Vec<Detection>) -> Self {
        let shopping_list = ShoppingList::from_categories(confident.iter().map(|d| d.category));
        Self {
            objects: confident,
            shopping_list,
        }
    }
}

pub fn pseudo_label(image: &CheckoutImage, detector: &dyn Detector, cfg: &GateConfig) -> Result<PseudoLabels> {
    Ok(PseudoLabels::from_confident(confident_detections(image, detector, cfg)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSample {
    pub image: CheckoutImage,
    pub labels: PseudoLabels,
}

/// Training callbacks invoked by [`run_priming`]. Implementations own the
/// optimization; the simulated models need none.
pub trait PrimingHooks {
    fn train(
        &mut self,
        iteration: usize,
        detector: &mut dyn Detector,
        counter: &mut dyn Counter,
        train_set: &[Sample],
    ) -> Result<()>;

    fn remove_counter(&mut self, counter: Box<dyn Counter>) -> Result<()> {
        drop(counter);
        Ok(())
    }

    fn fine_tune(
        &mut self,
        iteration: usize,
        detector: &mut dyn Detector,
        data: &[PseudoLabeledSample],
    ) -> Result<()>;
}

/// Hooks that leave the models untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopHooks;

impl PrimingHooks for NoopHooks {
    fn train(&mut self, _: usize, _: &mut dyn Detector, _: &mut dyn Counter, _: &[Sample]) -> Result<()> {
        Ok(())
    }

    fn fine_tune(&mut self, _: usize, _: &mut dyn Detector, _: &[PseudoLabeledSample]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimingConfig {
    pub gate: GateConfig,
    pub iterations: usize,
    /// With no reliable image, skip fine-tuning instead of failing.
    pub skip_fine_tune_on_empty: bool,
    /// Score above which evaluation counts a detection in the tally.
    pub tally_threshold: f64,
    pub record_timings: bool,
}

impl Default for PrimingConfig {
    fn default() -> Self {
        Self {
            gate: GateConfig::default(),
            iterations: 1,
            skip_fine_tune_on_empty: true,
            tally_threshold: 0.5,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Select,
    RemoveCounter,
    FineTune,
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub test_images: usize,
    pub selected: usize,
    pub rejected: usize,
    pub selected_ids: Vec<u64>,
    /// Share of selected images whose pseudo shopping list equals ground truth.
    pub selection_precision: Option<f64>,
    /// Same measure over the rejected images, had they been pseudo-labeled.
    pub rejected_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimingReport {
    pub phases: Vec<PhaseRecord>,
    pub selection: SelectionStats,
    pub fine_tune_skipped: bool,
    pub metrics: Option<MetricsReport>,
}

fn list_accuracy(group: &[Assessed], testset: &[Sample]) -> Option<f64> {
    if group.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    for a in group {
        let gt = testset[a.index].ground_truth.as_ref()?;
        let pseudo = ShoppingList::from_categories(a.outcome.confident.iter().map(|d| d.category));
        hits += pseudo.same_counts(&gt.shopping_list) as usize;
    }
    Some(hits as f64 / group.len() as f64)
}

struct PhaseClock {
    record: bool,
    phases: Vec<PhaseRecord>,
}

impl PhaseClock {
    fn run<T>(&mut self, phase: Phase, iteration: Option<usize>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.phases.push(PhaseRecord {
            phase,
            iteration,
            elapsed_ms: self.record.then(|| start.elapsed().as_secs_f64() * 1e3),
        });
        Ok(out)
    }
}

/// Detection-and-counting collaborative learning: train on `train_set`,
/// select reliable test images, drop the counter, fine-tune on the
/// pseudo-labeled selection, then evaluate on the full test set.
pub fn run_priming(
    train_set: &[Sample],
    test_set: &[Sample],
    detector: &mut dyn Detector,
    counter: Box<dyn Counter>,
    hooks: &mut dyn PrimingHooks,
    cfg: &PrimingConfig,
) -> Result<PrimingReport> {
    cfg.gate.validate()?;
    let mut counter = counter;
    let mut clock = PhaseClock {
        record: cfg.record_timings,
        phases: Vec::new(),
    };
    for it in 0..cfg.iterations {
        clock.run(Phase::Train, Some(it), || {
            hooks.train(it, &mut *detector, counter.as_mut(), train_set)
        })?;
    }
    let selection = clock.run(Phase::Select, None, || {
        select_reliable(test_set, &*detector, counter.as_ref(), &cfg.gate)
    })?;
    clock.run(Phase::RemoveCounter, None, || hooks.remove_counter(counter))?;

    let pseudo: Vec<PseudoLabeledSample> = selection
        .reliable
        .iter()
        .map(|a| PseudoLabeledSample {
            image: test_set[a.index].image.clone(),
            labels: PseudoLabels::from_confident(a.outcome.confident.clone()),
        })
        .collect();
    let fine_tune_skipped = pseudo.is_empty() && cfg.iterations > 0;
    if fine_tune_skipped && !cfg.skip_fine_tune_on_empty {
        return Err(Error::validation(
            "data priming",
            "no reliable test image selected and fine-tuning is mandatory",
        ));
    }
    if !fine_tune_skipped {
        for it in 0..cfg.iterations {
            clock.run(Phase::FineTune, Some(it), || hooks.fine_tune(it, &mut *detector, &pseudo))?;
        }
    }

    let metrics = clock.run(Phase::Evaluate, None, || {
        evaluate_detector(test_set, &*detector, cfg.gate.nms_iou, cfg.tally_threshold)
    })?;

    let stats = SelectionStats {
        test_images: test_set.len(),
        selected: selection.reliable.len(),
        rejected: selection.rejected.len(),
        selected_ids: selection.reliable.iter().map(|a| a.image_id).collect(),
        selection_precision: list_accuracy(&selection.reliable, test_set),
        rejected_precision: list_accuracy(&selection.rejected, test_set),
    };
    Ok(PrimingReport {
        phases: clock.phases,
        selection: stats,
        fine_tune_skipped,
        metrics,
    })
}

/// Runs the detector over a labeled test set and scores it. Returns `None`
/// when any image lacks ground truth or the set is empty.
pub fn evaluate_detector(
    test_set: &[Sample],
    detector: &dyn Detector,
    nms_iou: f64,
    tally_threshold: f64,
) -> Result<Option<MetricsReport>> {
    if test_set.is_empty() || test_set.iter().any(|s| s.ground_truth.is_none()) {
        return Ok(None);
    }
    let one = |s: &Sample| -> Result<EvalImage> {
        let gt = s.ground_truth.as_ref().expect("checked above");
        let dets = nms(&detector.detect(&s.image)?, nms_iou);
        Ok(EvalImage {
            image_id: s.image.id,
            level: gt.level,
            predicted: tally_from_detections(&dets, tally_threshold),
            ground_truth: gt.shopping_list.clone(),
            detections: dets,
            gt_boxes: gt.objects.clone(),
        })
    };
    let images: Vec<EvalImage> = if detector.concurrency_safe() {
        test_set.par_iter().map(one).collect::<Result<_>>()?
    } else {
        test_set.iter().map(one).collect::<Result<_>>()?
    };
    evaluate(&images, None).map(Some)
}

/// Noise model of the simulated heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedModelNoise {
    /// Probability that a true object is not detected.
    pub miss_prob: f64,
    /// Mean number of spurious detections per image (Poisson).
    pub false_pos_rate: f64,
    /// Probability that a detected object gets a wrong category.
    pub label_flip_prob: f64,
    /// Standard deviation of box-corner jitter, pixels.
    pub box_jitter: f64,
    /// Correct detections score `U^(1/c)`; larger `c` pushes scores to 1.
    /// Infinity gives exactly 1.
    pub score_concentration: f64,
    /// Same law for flipped and spurious detections (1 = uniform).
    pub confusion_score_concentration: f64,
    /// Standard deviation of additive noise on the counter's total.
    pub count_noise_std: f64,
}

impl Default for SimulatedModelNoise {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl SimulatedModelNoise {
    /// Reproduces ground truth exactly, every score 1.
    pub fn noiseless() -> Self {
        Self {
            miss_prob: 0.0,
            false_pos_rate: 0.0,
            label_flip_prob: 0.0,
            box_jitter: 0.0,
            score_concentration: f64::INFINITY,
            confusion_score_concentration: 1.0,
            count_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.miss_prob, self.label_flip_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("miss_prob and label_flip_prob must lie in [0, 1]"));
        }
        if !(self.false_pos_rate >= 0.0 && self.false_pos_rate.is_finite()) {
            return Err(Error::invalid("false_pos_rate must be a finite non-negative rate"));
        }
        if !(self.box_jitter >= 0.0 && self.count_noise_std >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be non-negative"));
        }
        if !(self.score_concentration > 0.0 && self.confusion_score_concentration > 0.0) {
            return Err(Error::invalid("score concentrations must be positive"));
        }
        Ok(())
    }
}

fn power_score(rng: &mut impl Rng, concentration: f64) -> f64 {
    if concentration.is_infinite() {
        return 1.0;
    }
    let u: f64 = rng.random();
    u.powf(1.0 / concentration).clamp(0.0, 1.0)
}

/// Ground truth the simulated detector perturbs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimImageTruth {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<(CategoryId, BBox)>,
}

/// Detector that replays perturbed ground truth; output is a pure function
/// of `(seed, image id)`.
#[derive(Debug, Clone)]
pub struct SimulatedDetector {
    truth: HashMap<u64, SimImageTruth>,
    noise: SimulatedModelNoise,
    seed: u64,
    num_categories: u32,
}

pub fn simulated_detector(
    truth: HashMap<u64, SimImageTruth>,
    noise: SimulatedModelNoise,
    seed: u64,
) -> Result<SimulatedDetector> {
    noise.validate()?;
    let num_categories = truth
        .values()
        .flat_map(|t| t.objects.iter().map(|o| o.0 .0))
        .max()
        .unwrap_or(1)
        .max(2);
    Ok(SimulatedDetector {
        truth,
        noise,
        seed,
        num_categories,
    })
}

impl SimulatedDetector {
    /// Label space for flips and spurious detections (`1..=k`).
    pub fn with_category_count(mut self, k: u32) -> Self {
        self.num_categories = k.max(2);
        self
    }

    pub fn noise(&self) -> &SimulatedModelNoise {
        &self.noise
    }
}

impl Detector for SimulatedDetector {
    fn detect(&self, image: &CheckoutImage) -> Result<Vec<Detection>> {
        let truth = self
            .truth
            .get(&image.id)
            .ok_or_else(|| Error::Model(format!("simulated detector has no truth for image {}", image.id)))?;
        let n = &self.noise;
        let mut rng = stream_rng(derive_seed(self.seed, image.id), 0);
        let jitter = Normal::new(0.0, n.box_jitter.max(0.0)).expect("finite std");
        let mut out = Vec::with_capacity(truth.objects.len());
        for &(category, bbox) in &truth.objects {
            // fixed draw order keeps streams aligned across noise settings
            let missed = rng.random::<f64>() < n.miss_prob;
            let flipped = rng.random::<f64>() < n.label_flip_prob;
            let shift: u32 = rng.random_range(1..self.num_categories);
            let j: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
            let correct_score = power_score(&mut rng, n.score_concentration);
            let confused_score = power_score(&mut rng, n.confusion_score_concentration);
            if missed {
                continue;
            }
            let category = if flipped {
                CategoryId((category.0 - 1 + shift) % self.num_categories + 1)
            } else {
                category
            };
            let (x0, x1) = (bbox.x_min + j[0], bbox.x_max + j[2]);
            let (y0, y1) = (bbox.y_min + j[1], bbox.y_max + j[3]);
            out.push(Detection {
                bbox: BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)),
                category,
                score: if flipped { confused_score } else { correct_score },
            });
        }
        let spurious = if n.false_pos_rate > 0.0 {
            Poisson::new(n.false_pos_rate)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        let (w, h) = (truth.width.max(1) as f64, truth.height.max(1) as f64);
        for _ in 0..spurious {
            let bw = rng.random_range(0.1..0.3) * w;
            let bh = rng.random_range(0.1..0.3) * h;
            let x = rng.random_range(0.0..(w - bw).max(f64::MIN_POSITIVE));
            let y = rng.random_range(0.0..(h - bh).max(f64::MIN_POSITIVE));
            out.push(Detection {
                bbox: BBox::new(x, y, x + bw, y + bh),
                category: CategoryId(rng.random_range(1..=self.num_categories)),
                score: power_score(&mut rng, n.confusion_score_concentration),
            });
        }
        Ok(out)
    }
}

/// Counter returning ground-truth density rescaled so its total carries
/// additive Gaussian noise.
#[derive(Debug, Clone)]
pub struct SimulatedCounter {
    truth: HashMap<u64, DensityMap>,
    count_noise_std: f64,
    seed: u64,
}

pub fn simulated_counter(
    truth: HashMap<u64, DensityMap>,
    noise: SimulatedModelNoise,
    seed: u64,
) -> Result<SimulatedCounter> {
    noise.validate()?;
    Ok(SimulatedCounter {
        truth,
        count_noise_std: noise.count_noise_std,
        seed,
    })
}

impl Counter for SimulatedCounter {
    fn count_map(&self, image: &CheckoutImage) -> Result<DensityMap> {
        let gt = self
            .truth
            .get(&image.id)
            .ok_or_else(|| Error::Model(format!("simulated counter has no density for image {}", image.id)))?;
        if self.count_noise_std == 0.0 {
            return Ok(gt.clone());
        }
        let mut rng = stream_rng(derive_seed(self.seed, image.id), 1);
        let e = Normal::new(0.0, self.count_noise_std)
            .expect("finite std")
            .sample(&mut rng);
        let total = count_from_density(gt);
        let target = (total + e).max(0.0);
        if total > 0.0 {
            gt.scaled(target / total)
        } else {
            let cells = (gt.width() * gt.height()).max(1) as f64;
            DensityMap::from_values(gt.width(), gt.height(), vec![target / cells; gt.values().len()])
        }
    }
}

/// Simulated detector and counter replaying the ground truth of `samples`.
/// The counter's truth is the density map generated from annotated points.
pub fn simulated_models(
    samples: &[Sample],
    kernel: &KernelParams,
    noise: SimulatedModelNoise,
    seed: u64,
    num_categories: u32,
) -> Result<(SimulatedDetector, SimulatedCounter)> {
    let mut boxes = HashMap::new();
    let mut maps = HashMap::new();
    for s in samples {
        let gt = s.ground_truth.as_ref().ok_or_else(|| {
            Error::validation("simulated models", format!("image {} has no ground truth", s.image.id))
        })?;
        let (width, height) = s.image.image.dimensions();
        boxes.insert(
            s.image.id,
            SimImageTruth {
                width,
                height,
                objects: gt.objects.clone(),
            },
        );
        maps.insert(s.image.id, generate_density(&gt.points, (width, height), kernel)?);
    }
    let detector = simulated_detector(boxes, noise, seed)?.with_category_count(num_categories);
    let counter = simulated_counter(maps, noise, seed)?;
    Ok((detector, counter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(x: f64, category: u32, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
            category: CategoryId(category),
            score,
        }
    }

    #[test]
    fn nms_fixtures() {
        assert!(nms(&[], 0.5).is_empty());
        let out = nms(&[d(0.0, 1, 0.8), d(0.0, 1, 0.9)], 0.5);
        assert_eq!(out, vec![d(0.0, 1, 0.9)]);
        let out = nms(&[d(0.0, 1, 0.8), d(0.0, 2, 0.9)], 0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_threshold_is_strict() {
        // IoU of these two boxes is exactly 1/3
        let a = d(0.0, 1, 0.9);
        let b = d(5.0, 1, 0.8);
        assert_eq!(nms(&[a, b], 1.0 / 3.0).len(), 2);
        assert_eq!(nms(&[a, b], 0.3).len(), 1);
    }

    fn truth_one(objects: Vec<(CategoryId, BBox)>) -> HashMap<u64, SimImageTruth> {
        HashMap::from([(
            7,
            SimImageTruth {
                width: 100,
                height: 100,
                objects,
            },
        )])
    }

    fn img() -> CheckoutImage {
        CheckoutImage {
            id: 7,
            image: RgbImage::new(1, 1),
        }
    }

    #[test]
    fn noiseless_detector_replays_truth() {
        let objs = vec![
            (CategoryId(1), BBox::new(1.0, 2.0, 30.0, 40.0)),
            (CategoryId(3), BBox::new(50.0, 50.0, 70.0, 90.0)),
        ];
        let det = simulated_detector(truth_one(objs.clone()), SimulatedModelNoise::noiseless(), 1).unwrap();
        let out = det.detect(&img()).unwrap();
        assert_eq!(out.len(), 2);
        for (o, (c, b)) in out.iter().zip(&objs) {
            assert_eq!((o.category, o.bbox, o.score), (*c, *b, 1.0));
        }
        assert!(det.detect(&CheckoutImage { id: 8, image: RgbImage::new(1, 1) }).is_err());
    }

    #[test]
    fn full_miss_gives_nothing() {
        let noise = SimulatedModelNoise {
            miss_prob: 1.0,
            ..SimulatedModelNoise::noiseless()
        };
        let objs = vec![(CategoryId(1), BBox::new(1.0, 2.0, 30.0, 40.0)); 20];
        let det = simulated_detector(truth_one(objs), noise, 5).unwrap();
        assert!(det.detect(&img()).unwrap().is_empty());
    }

    #[test]
    fn flipped_labels_never_keep_category() {
        let noise = SimulatedModelNoise {
            label_flip_prob: 1.0,
            ..SimulatedModelNoise::noiseless()
        };
        let objs = vec![(CategoryId(2), BBox::new(1.0, 2.0, 30.0, 40.0)); 50];
        let det = simulated_detector(truth_one(objs), noise, 5).unwrap().with_category_count(4);
        for o in det.detect(&img()).unwrap() {
            assert_ne!(o.category, CategoryId(2));
            assert!((1..=4).contains(&o.category.0));
        }
    }

    #[test]
    fn counter_noise_changes_total_only() {
        let gt = DensityMap::from_values(2, 1, vec![0.75, 0.25]).unwrap();
        let noise = SimulatedModelNoise {
            count_noise_std: 0.5,
            ..SimulatedModelNoise::noiseless()
        };
        let c = simulated_counter(HashMap::from([(7, gt.clone())]), noise, 3).unwrap();
        let m = c.count_map(&img()).unwrap();
        assert!((m.get(0, 0) / m.get(1, 0) - 3.0).abs() < 1e-12 || count_from_density(&m) == 0.0);
        assert_eq!(m, c.count_map(&img()).unwrap());
        let exact = simulated_counter(HashMap::from([(7, gt.clone())]), SimulatedModelNoise::noiseless(), 3).unwrap();
        assert_eq!(exact.count_map(&img()).unwrap(), gt);
    }

    #[test]
    fn invalid_noise_rejected() {
        let bad = SimulatedModelNoise {
            miss_prob: 1.5,
            ..SimulatedModelNoise::noiseless()
        };
        assert!(simulated_detector(HashMap::new(), bad, 0).is_err());
        assert!(GateConfig { theta_p: 1.2, nms_iou: 0.5 }.validate().is_err());
    }
}

//! Joint counting and detection loss with analytic gradients.
//!
//! For a batch of `N` images the objective is
//!
//! ```text
//! L = 1/(2N) · Σ_i [ Σ_ℓ (Θ̂_i(ℓ) − Θ_i(ℓ))² + λ · Σ_d ( CE(ŝ_d, p_d) + 1[p_d > 0] · SmoothL1(t̂_d − t_d) ) ]
//! ```
//!
//! The per-term functions below return `½ Σ (Θ̂ − Θ)²` for the density term
//! (so its gradient is the plain residual), and the raw cross-entropy and
//! smooth-L1 sums for the detection terms; [`total_loss`] applies the
//! batch factor.

use serde::{Deserialize, Serialize};

use crate::catalog::CategoryId;
use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionTarget {
    pub label: CategoryId,
    /// Ignored for background targets.
    pub deltas: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPrediction {
    /// Unnormalized class scores over `0..=K`, index 0 being background.
    pub class_scores: Vec<f64>,
    pub deltas: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub density_term: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `½ Σ_ℓ (Θ̂ − Θ)²` and its gradient with respect to `predicted`.
pub fn density_loss(predicted: &DensityMap, target: &DensityMap) -> Result<(f64, Vec<f64>)> {
    if predicted.dimensions() != target.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: target.dimensions(),
            actual: predicted.dimensions(),
        });
    }
    Ok(density_loss_values(predicted.values(), target.values()))
}

/// Slice form of [`density_loss`]; no non-negativity requirement.
pub fn density_loss_values(predicted: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let grad: Vec<f64> = predicted.iter().zip(target).map(|(p, t)| p - t).collect();
    let value = 0.5 * grad.iter().map(|r| r * r).sum::<f64>();
    (value, grad)
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Softmax cross-entropy `−log softmax(scores)[label]` and its gradient
/// `softmax(scores) − onehot(label)`.
pub fn classification_loss(scores: &[f64], label: CategoryId) -> Result<(f64, Vec<f64>)> {
    let k = label.0 as usize;
    if k >= scores.len() {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            label.0,
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("class scores must be finite"));
    }
    let logp = log_softmax(scores);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[k] -= 1.0;
    Ok((-logp[k], grad))
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Smooth-L1 (transition at 1) summed over the four box deltas, with the
/// gradient with respect to `predicted`.
pub fn regression_loss(predicted: &[f64; 4], target: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    for j in 0..4 {
        let d = predicted[j] - target[j];
        value += smooth_l1(d);
        grad[j] = smooth_l1_grad(d);
    }
    (value, grad)
}

fn check_box(b: &BBox, what: &str) -> Result<()> {
    if !(b.is_valid() && b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::invalid(format!("{what} must have positive width and height")));
    }
    Ok(())
}

/// Anchor-relative deltas `((cx−cxₐ)/wₐ, (cy−cyₐ)/hₐ, ln(w/wₐ), ln(h/hₐ))`.
pub fn encode_box(bbox: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    check_box(anchor, "anchor")?;
    check_box(bbox, "box")?;
    let (cx, cy) = bbox.center();
    let (ax, ay) = anchor.center();
    Ok([
        (cx - ax) / anchor.width(),
        (cy - ay) / anchor.height(),
        (bbox.width() / anchor.width()).ln(),
        (bbox.height() / anchor.height()).ln(),
    ])
}

pub fn decode_box(deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    check_box(anchor, "anchor")?;
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("box deltas must be finite"));
    }
    let (ax, ay) = anchor.center();
    let cx = ax + deltas[0] * anchor.width();
    let cy = ay + deltas[1] * anchor.height();
    let w = anchor.width() * deltas[2].exp();
    let h = anchor.height() * deltas[3].exp();
    Ok(BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h))
}

/// One image of a training batch: predicted and target density plus matched
/// detection pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLossInput {
    pub predicted_density: DensityMap,
    pub target_density: DensityMap,
    pub detections: Vec<(DetectionPrediction, DetectionTarget)>,
}

/// Full batch objective. Background targets contribute classification only.
pub fn total_loss(batch: &[ImageLossInput], lambda: f64) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("loss batch is empty"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda {lambda} must be non-negative")));
    }
    let (mut density_sq, mut cls, mut reg) = (0.0, 0.0, 0.0);
    for image in batch {
        let (half_sq, _) = density_loss(&image.predicted_density, &image.target_density)?;
        density_sq += 2.0 * half_sq;
        for (pred, target) in &image.detections {
            cls += classification_loss(&pred.class_scores, target.label)?.0;
            if !target.label.is_background() {
                reg += regression_loss(&pred.deltas, &target.deltas).0;
            }
        }
    }
    let factor = 1.0 / (2.0 * batch.len() as f64);
    let density_term = factor * density_sq;
    let cls_term = factor * cls;
    let reg_term = factor * reg;
    Ok(LossBreakdown {
        density_term,
        cls_term,
        reg_term,
        total: density_term + lambda * (cls_term + reg_term),
        lambda,
    })
}

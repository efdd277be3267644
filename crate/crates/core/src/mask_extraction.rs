//! Coarse foreground masks for isolated-item photos.
//!
//! The pipeline is edge confidence → threshold → closing → hole filling →
//! small-component removal → median smoothing. A [`MaskRefiner`] may then
//! sharpen the coarse result; the default refiner returns it unchanged.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::catalog::ExemplarImage;
use crate::error::{Error, Result};
use crate::mask::{label_components, BinaryMask, Connectivity};

/// Per-pixel edge confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    confidence: Vec<f64>,
}

impl EdgeMap {
    pub fn from_values(width: u32, height: u32, confidence: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || confidence.len() != width as usize * height as usize {
            return Err(Error::invalid("edge map size does not match its dimensions"));
        }
        if confidence.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("edge confidence outside [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            confidence,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::from_values(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.confidence[(y * self.width + x) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.confidence
    }

    /// Pixels with confidence at or above `theta`.
    pub fn threshold(&self, theta: f64) -> BinaryMask {
        BinaryMask::from_bits(
            self.width,
            self.height,
            self.confidence.iter().map(|&c| c >= theta).collect(),
        )
        .expect("edge map dimensions are positive")
    }
}

/// Produces an edge map from an exemplar photo.
pub trait EdgeDetector {
    fn detect_edges(&self, image: &RgbImage) -> Result<EdgeMap>;
}

/// 3×3 Sobel gradient magnitude on luminance, normalized so the strongest
/// response is 1. Borders replicate the nearest pixel.
#[derive(Debug, Clone, Copy, Default)]
pub struct SobelEdges;

pub(crate) fn luminance(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

impl EdgeDetector for SobelEdges {
    fn detect_edges(&self, image: &RgbImage) -> Result<EdgeMap> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::invalid("image is empty"));
        }
        let gray = luminance(image);
        let at = |x: i64, y: i64| {
            let cx = x.clamp(0, w as i64 - 1) as usize;
            let cy = y.clamp(0, h as i64 - 1) as usize;
            gray[cy * w as usize + cx]
        };
        let mut mag = Vec::with_capacity(gray.len());
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
                mag.push(gx.hypot(gy));
            }
        }
        let max = mag.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            for v in &mut mag {
                *v = (*v / max).clamp(0.0, 1.0);
            }
        }
        EdgeMap::from_values(w, h, mag)
    }
}

pub fn extract_edges(image: &ExemplarImage) -> Result<EdgeMap> {
    SobelEdges.detect_edges(&image.pixels)
}

/// Minimum surviving component size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinArea {
    Pixels(usize),
    /// Fraction of the image area.
    Fraction(f64),
}

impl MinArea {
    pub fn resolve(&self, width: u32, height: u32) -> usize {
        match *self {
            MinArea::Pixels(p) => p,
            MinArea::Fraction(f) => (f * width as f64 * height as f64).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphParams {
    pub edge_threshold: f64,
    pub dilate_radius: u32,
    pub erode_radius: u32,
    pub min_component_area: MinArea,
    pub median_radius: u32,
}

impl Default for MorphParams {
    fn default() -> Self {
        Self {
            edge_threshold: 0.1,
            dilate_radius: 3,
            erode_radius: 3,
            min_component_area: MinArea::Fraction(0.001),
            median_radius: 2,
        }
    }
}

impl MorphParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return Err(Error::invalid(format!(
                "edge threshold {} outside [0, 1]",
                self.edge_threshold
            )));
        }
        if let MinArea::Fraction(f) = self.min_component_area {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("min area fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilation by a discrete disk. Out-of-grid pixels count as background.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for (x, y) in mask.iter_set() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < mask.width() as i64 && ny < mask.height() as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
    }
    out
}

/// Erosion by a discrete disk. Out-of-grid pixels count as foreground, so
/// erosion never eats in from the image border.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    // erosion is the complement of dilating the complement
    let inverted = mask.invert();
    dilate(&inverted, radius).invert()
}

/// Dilation followed by erosion.
pub fn close(mask: &BinaryMask, dilate_radius: u32, erode_radius: u32) -> BinaryMask {
    erode(&dilate(mask, dilate_radius), erode_radius)
}

/// Turns every background region that does not touch the image border into
/// foreground. Background connectivity is 4 (dual of 8-connected foreground).
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut outside = vec![false; (w * h) as usize];
    let mut stack = Vec::new();
    let seed = |x: i64, y: i64, outside: &mut Vec<bool>, stack: &mut Vec<(i64, i64)>| {
        let i = (y * w + x) as usize;
        if !mask.bits()[i] && !outside[i] {
            outside[i] = true;
            stack.push((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut stack);
        seed(x, h - 1, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut stack);
        seed(w - 1, y, &mut outside, &mut stack);
    }
    while let Some((x, y)) = stack.pop() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                seed(nx, ny, &mut outside, &mut stack);
            }
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), outside.iter().map(|&o| !o).collect())
        .expect("same dimensions")
}

/// Drops 8-connected foreground components smaller than `min_area`.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let (labels, areas) = label_components(mask, Connectivity::Eight);
    let bits = labels
        .iter()
        .map(|&l| l > 0 && areas[l as usize - 1] >= min_area)
        .collect();
    BinaryMask::from_bits(mask.width(), mask.height(), bits).expect("same dimensions")
}

/// Binary median (majority vote) over a disk window clipped to the grid.
/// Ties keep the center pixel.
pub fn median_filter(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (mut on, mut total) = (0usize, 0usize);
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                total += 1;
                on += mask.get(nx as u32, ny as u32) as usize;
            }
        }
        match (2 * on).cmp(&total) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => mask.get(x, y),
        }
    })
}

/// Every intermediate of [`coarse_mask`], in pipeline order.
#[derive(Debug, Clone)]
pub struct CoarseStages {
    pub thresholded: BinaryMask,
    pub closed: BinaryMask,
    pub filled: BinaryMask,
    pub pruned: BinaryMask,
    pub smoothed: BinaryMask,
}

pub fn coarse_mask_stages(edges: &EdgeMap, params: &MorphParams) -> Result<CoarseStages> {
    params.validate()?;
    let thresholded = edges.threshold(params.edge_threshold);
    let closed = close(&thresholded, params.dilate_radius, params.erode_radius);
    let filled = fill_holes(&closed);
    let min_area = params
        .min_component_area
        .resolve(edges.width(), edges.height());
    let pruned = remove_small_components(&filled, min_area);
    let smoothed = median_filter(&pruned, params.median_radius);
    Ok(CoarseStages {
        thresholded,
        closed,
        filled,
        pruned,
        smoothed,
    })
}

pub fn coarse_mask(edges: &EdgeMap, params: &MorphParams) -> Result<BinaryMask> {
    Ok(coarse_mask_stages(edges, params)?.smoothed)
}

/// Fine refinement of a coarse mask (e.g. a saliency model).
pub trait MaskRefiner {
    fn refine(&self, image: &ExemplarImage, coarse: &BinaryMask) -> Result<BinaryMask>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl MaskRefiner for IdentityRefiner {
    fn refine(&self, _image: &ExemplarImage, coarse: &BinaryMask) -> Result<BinaryMask> {
        Ok(coarse.clone())
    }
}

pub fn refine_mask(
    image: &ExemplarImage,
    coarse: &BinaryMask,
    refiner: &dyn MaskRefiner,
) -> Result<BinaryMask> {
    if image.dimensions() != coarse.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: image.dimensions(),
            actual: coarse.dimensions(),
        });
    }
    let refined = refiner.refine(image, coarse)?;
    if refined.dimensions() != coarse.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: coarse.dimensions(),
            actual: refined.dimensions(),
        });
    }
    Ok(refined)
}

/// Attaches `mask`; pixels outside it become transparent for compositing.
pub fn cut_exemplar(image: &ExemplarImage, mask: &BinaryMask) -> Result<ExemplarImage> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    image.clone().with_mask(mask.clone())
}

/// Edges, coarse mask and refinement in one call.
pub fn extract_mask(
    image: &ExemplarImage,
    detector: &dyn EdgeDetector,
    params: &MorphParams,
    refiner: &dyn MaskRefiner,
) -> Result<BinaryMask> {
    let edges = detector.detect_edges(&image.pixels)?;
    let coarse = coarse_mask(&edges, params)?;
    refine_mask(image, &coarse, refiner)
}

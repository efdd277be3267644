//! Checkout evaluation: shopping-list counting metrics and detection mAP.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::CategoryId;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::priming::Detection;
use crate::synthesis::Difficulty;

/// Per-image category → count tally. Absent categories count as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    from = "BTreeMap<CategoryId, u32>",
    into = "BTreeMap<CategoryId, u32>"
)]
pub struct ShoppingList {
    counts: BTreeMap<CategoryId, u32>,
}

impl From<BTreeMap<CategoryId, u32>> for ShoppingList {
    fn from(counts: BTreeMap<CategoryId, u32>) -> Self {
        Self::from_counts(counts)
    }
}

impl From<ShoppingList> for BTreeMap<CategoryId, u32> {
    fn from(list: ShoppingList) -> Self {
        list.counts
    }
}

impl ShoppingList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_categories(items: impl IntoIterator<Item = CategoryId>) -> Self {
        let mut list = Self::new();
        for c in items {
            list.add(c, 1);
        }
        list
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (CategoryId, u32)>) -> Self {
        let mut list = Self::new();
        for (c, n) in counts {
            list.add(c, n);
        }
        list
    }

    /// Zero counts are not stored.
    pub fn add(&mut self, category: CategoryId, n: u32) {
        if n > 0 {
            *self.counts.entry(category).or_insert(0) += n;
        }
    }

    pub fn get(&self, category: CategoryId) -> u32 {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Categories with a positive count.
    pub fn categories(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.counts.iter().filter(|(_, &n)| n > 0).map(|(&c, _)| c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, u32)> + '_ {
        self.counts.iter().filter(|(_, &n)| n > 0).map(|(&c, &n)| (c, n))
    }

    /// Equality ignoring explicit zero entries.
    pub fn same_counts(&self, other: &ShoppingList) -> bool {
        self.iter().eq(other.iter())
    }
}

/// `CD_{i,k} = |P_{i,k} − GT_{i,k}|` per category present in either list,
/// and their sum `CD_i`.
pub fn counting_distance(pred: &ShoppingList, gt: &ShoppingList) -> (BTreeMap<CategoryId, u32>, u32) {
    let cats: BTreeSet<CategoryId> = pred.categories().chain(gt.categories()).collect();
    let per: BTreeMap<CategoryId, u32> = cats
        .into_iter()
        .map(|c| (c, pred.get(c).abs_diff(gt.get(c))))
        .collect();
    let total = per.values().sum();
    (per, total)
}

fn check_pair(preds: &[ShoppingList], gts: &[ShoppingList]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth lists",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    Ok(())
}

/// Fraction of images whose whole list is predicted exactly.
pub fn checkout_accuracy(preds: &[ShoppingList], gts: &[ShoppingList]) -> Result<f64> {
    check_pair(preds, gts)?;
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| counting_distance(p, g).1 == 0)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean per-image counting distance.
pub fn acd(preds: &[ShoppingList], gts: &[ShoppingList]) -> Result<f64> {
    check_pair(preds, gts)?;
    let sum: u64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| counting_distance(p, g).1 as u64)
        .sum();
    Ok(sum as f64 / preds.len() as f64)
}

fn default_universe(preds: &[ShoppingList], gts: &[ShoppingList]) -> BTreeSet<CategoryId> {
    preds
        .iter()
        .chain(gts)
        .flat_map(|l| l.categories().collect::<Vec<_>>())
        .collect()
}

fn resolve_universe(
    preds: &[ShoppingList],
    gts: &[ShoppingList],
    universe: Option<&[CategoryId]>,
) -> BTreeSet<CategoryId> {
    match universe {
        Some(u) => u.iter().copied().collect(),
        None => default_universe(preds, gts),
    }
}

/// Mean over categories of `Σ_i CD_{i,k} / Σ_i GT_{i,k}`. Categories with no
/// ground-truth instances are left out of the mean; with none left the
/// result is 0.
pub fn mccd(
    preds: &[ShoppingList],
    gts: &[ShoppingList],
    universe: Option<&[CategoryId]>,
) -> Result<f64> {
    check_pair(preds, gts)?;
    let mut ratios = Vec::new();
    for k in resolve_universe(preds, gts, universe) {
        let gt_sum: u64 = gts.iter().map(|g| g.get(k) as u64).sum();
        if gt_sum == 0 {
            continue;
        }
        let cd_sum: u64 = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| p.get(k).abs_diff(g.get(k)) as u64)
            .sum();
        ratios.push(cd_sum as f64 / gt_sum as f64);
    }
    Ok(if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    })
}

/// Mean over categories of `Σ_i min(GT, P) / Σ_i max(GT, P)`. Categories
/// absent from every list are skipped; when nothing remains both sides
/// agree trivially and the result is 1.
pub fn mciou(
    preds: &[ShoppingList],
    gts: &[ShoppingList],
    universe: Option<&[CategoryId]>,
) -> Result<f64> {
    check_pair(preds, gts)?;
    let mut ratios = Vec::new();
    for k in resolve_universe(preds, gts, universe) {
        let (mut mins, mut maxs) = (0u64, 0u64);
        for (p, g) in preds.iter().zip(gts) {
            mins += p.get(k).min(g.get(k)) as u64;
            maxs += p.get(k).max(g.get(k)) as u64;
        }
        if maxs > 0 {
            ratios.push(mins as f64 / maxs as f64);
        }
    }
    Ok(if ratios.is_empty() {
        1.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    })
}

/// Counts detections scoring strictly above `score_threshold`.
pub fn tally_from_detections(detections: &[Detection], score_threshold: f64) -> ShoppingList {
    ShoppingList::from_categories(
        detections
            .iter()
            .filter(|d| d.score > score_threshold)
            .map(|d| d.category),
    )
}

/// A scored detection tagged with its image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: BBox,
}

/// Area under the monotone precision envelope of a TP/FP sequence sorted by
/// descending score.
pub fn all_point_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tp_flags.iter().enumerate() {
        tp += is_tp as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Greedy matching of one category's detections. Returns TP flags in
/// descending-score order (ties keep input order).
fn match_category(dets: &[&EvalDetection], gts: &[&GtBox], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|di| {
            let d = dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if used[gi] || g.image_id != d.image_id {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    used[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP per category with at least one ground-truth box.
pub fn average_precision(
    detections: &[EvalDetection],
    ground_truth: &[GtBox],
    iou_threshold: f64,
) -> BTreeMap<CategoryId, f64> {
    let cats: BTreeSet<CategoryId> = ground_truth.iter().map(|g| g.category).collect();
    cats.into_iter()
        .map(|c| {
            let dets: Vec<&EvalDetection> = detections.iter().filter(|d| d.category == c).collect();
            let gts: Vec<&GtBox> = ground_truth.iter().filter(|g| g.category == c).collect();
            let flags = match_category(&dets, &gts, iou_threshold);
            (c, all_point_ap(&flags, gts.len()))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean AP at IoU 0.5 over categories with ground truth.
pub fn map50(detections: &[EvalDetection], ground_truth: &[GtBox]) -> f64 {
    mean(average_precision(detections, ground_truth, 0.5).into_values())
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// AP averaged over the ten thresholds per category, then over categories.
pub fn mmap(detections: &[EvalDetection], ground_truth: &[GtBox]) -> f64 {
    let mut per_cat: BTreeMap<CategoryId, f64> = BTreeMap::new();
    for t in coco_thresholds() {
        for (c, ap) in average_precision(detections, ground_truth, t) {
            *per_cat.entry(c).or_insert(0.0) += ap;
        }
    }
    mean(per_cat.into_values().map(|s| s / 10.0))
}

/// The six checkout metrics for one group of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(rename = "cAcc")]
    pub c_acc: f64,
    #[serde(rename = "ACD")]
    pub acd: f64,
    #[serde(rename = "mCCD")]
    pub mccd: f64,
    #[serde(rename = "mCIoU")]
    pub mciou: f64,
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mmAP")]
    pub mmap: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricSet,
    /// Keyed by difficulty level; images without a level only count overall.
    pub per_level: BTreeMap<Difficulty, MetricSet>,
}

/// Everything the evaluator needs about one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub image_id: u64,
    pub level: Option<Difficulty>,
    pub predicted: ShoppingList,
    pub ground_truth: ShoppingList,
    pub detections: Vec<Detection>,
    pub gt_boxes: Vec<(CategoryId, BBox)>,
}

fn metric_set(images: &[&EvalImage], universe: Option<&[CategoryId]>) -> Result<MetricSet> {
    let preds: Vec<ShoppingList> = images.iter().map(|i| i.predicted.clone()).collect();
    let gts: Vec<ShoppingList> = images.iter().map(|i| i.ground_truth.clone()).collect();
    let dets: Vec<EvalDetection> = images
        .iter()
        .flat_map(|i| {
            i.detections.iter().map(|d| EvalDetection {
                image_id: i.image_id,
                category: d.category,
                bbox: d.bbox,
                score: d.score,
            })
        })
        .collect();
    let boxes: Vec<GtBox> = images
        .iter()
        .flat_map(|i| {
            i.gt_boxes.iter().map(|&(category, bbox)| GtBox {
                image_id: i.image_id,
                category,
                bbox,
            })
        })
        .collect();
    Ok(MetricSet {
        c_acc: checkout_accuracy(&preds, &gts)?,
        acd: acd(&preds, &gts)?,
        mccd: mccd(&preds, &gts, universe)?,
        mciou: mciou(&preds, &gts, universe)?,
        map50: map50(&dets, &boxes),
        mmap: mmap(&dets, &boxes),
        images: images.len(),
    })
}

/// Overall metrics plus a breakdown per difficulty level.
pub fn evaluate(images: &[EvalImage], universe: Option<&[CategoryId]>) -> Result<MetricsReport> {
    let all: Vec<&EvalImage> = images.iter().collect();
    let overall = metric_set(&all, universe)?;
    let mut per_level = BTreeMap::new();
    for level in Difficulty::ALL {
        let subset: Vec<&EvalImage> = images.iter().filter(|i| i.level == Some(level)).collect();
        if !subset.is_empty() {
            per_level.insert(level, metric_set(&subset, universe)?);
        }
    }
    Ok(MetricsReport { overall, per_level })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: CategoryId = CategoryId(1);
    const B: CategoryId = CategoryId(2);
    const C: CategoryId = CategoryId(3);

    fn list(items: &[(CategoryId, u32)]) -> ShoppingList {
        ShoppingList::from_counts(items.iter().copied())
    }

    #[test]
    fn counting_distance_fixtures() {
        let p = list(&[(A, 2), (B, 1)]);
        assert_eq!(counting_distance(&p, &p).1, 0);
        let (per, total) = counting_distance(&list(&[(A, 3)]), &list(&[(A, 1)]));
        assert_eq!((per[&A], total), (2, 2));
        let (per, total) = counting_distance(&list(&[(A, 1), (B, 2)]), &list(&[(A, 2), (C, 1)]));
        assert_eq!((per[&A], per[&B], per[&C], total), (1, 2, 1, 4));
    }

    #[test]
    fn list_metrics_fixtures() {
        let g = vec![list(&[(A, 2)]), list(&[(B, 1)])];
        assert_eq!(checkout_accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(acd(&g, &g).unwrap(), 0.0);
        assert_eq!(mccd(&g, &g, None).unwrap(), 0.0);
        let p = vec![list(&[(A, 4)]), list(&[(B, 1)])];
        assert_eq!(checkout_accuracy(&p, &g).unwrap(), 0.5);
        assert_eq!(acd(&p, &g).unwrap(), 1.0);
        assert!(checkout_accuracy(&[], &[]).is_err());
        assert!(acd(&p, &g[..1]).is_err());
    }

    #[test]
    fn mccd_single_category() {
        let g = vec![list(&[(A, 6)]), list(&[(A, 4)])];
        let p = vec![list(&[(A, 5)]), list(&[(A, 4)])];
        assert!((mccd(&p, &g, None).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mccd_three_categories() {
        // A: CD 1+0 over GT 2+2; B: CD 2 over GT 1; C: CD 0 over GT 3
        let g = vec![list(&[(A, 2), (B, 1)]), list(&[(A, 2), (C, 3)])];
        let p = vec![list(&[(A, 1), (B, 3)]), list(&[(A, 2), (C, 3)])];
        let expected = (0.25 + 2.0 + 0.0) / 3.0;
        assert!((mccd(&p, &g, None).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn mciou_fixtures() {
        let g = vec![list(&[(A, 2), (B, 1)])];
        assert_eq!(mciou(&g, &g, None).unwrap(), 1.0);
        let p = vec![list(&[(A, 1), (B, 1), (C, 1)])];
        assert!((mciou(&p, &g, None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mciou(&[list(&[])], &g, None).unwrap(), 0.0);
    }

    #[test]
    fn explicit_universe_skips_unseen_categories() {
        let g = vec![list(&[(A, 2)])];
        let p = vec![list(&[(A, 1)])];
        let u = [A, B, C];
        assert_eq!(mciou(&p, &g, Some(&u)).unwrap(), 0.5);
        assert_eq!(mccd(&p, &g, Some(&u)).unwrap(), 0.5);
    }

    fn det(score: f64, category: CategoryId) -> Detection {
        Detection {
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            category,
            score,
        }
    }

    #[test]
    fn tally_thresholds() {
        assert!(tally_from_detections(&[], 0.5).is_empty());
        let d = [det(0.9, A), det(0.7, A), det(0.51, A), det(0.5, A), det(0.99, B)];
        assert_eq!(tally_from_detections(&d, 0.5), list(&[(A, 3), (B, 1)]));
    }

    #[test]
    fn ap_pr_fixture() {
        let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g2 = BBox::new(20.0, 20.0, 30.0, 30.0);
        let gts = [
            GtBox { image_id: 0, category: A, bbox: g1 },
            GtBox { image_id: 0, category: A, bbox: g2 },
        ];
        let dets = [
            EvalDetection { image_id: 0, category: A, bbox: g1, score: 0.9 },
            EvalDetection { image_id: 0, category: A, bbox: BBox::new(50.0, 50.0, 60.0, 60.0), score: 0.8 },
            EvalDetection { image_id: 0, category: A, bbox: g2, score: 0.7 },
        ];
        let ap = average_precision(&dets, &gts, 0.5)[&A];
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[], &gts, 0.5)[&A], 0.0);
        let perfect = [dets[0], dets[2]];
        assert_eq!(map50(&perfect, &gts), 1.0);
        assert_eq!(mmap(&perfect, &gts), 1.0);
    }

    #[test]
    fn detections_do_not_match_across_images() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let gts = [GtBox { image_id: 1, category: A, bbox: b }];
        let dets = [EvalDetection { image_id: 2, category: A, bbox: b, score: 1.0 }];
        assert_eq!(map50(&dets, &gts), 0.0);
    }

    #[test]
    fn shopping_list_json_uses_category_keys() {
        let l = list(&[(A, 2), (C, 1)]);
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(s, r#"{"1":2,"3":1}"#);
        assert_eq!(serde_json::from_str::<ShoppingList>(&s).unwrap(), l);
    }
}

//! Area-ratio pose scoring and pruning of unstable exemplar views.
//!
//! Each view's mask area is divided by the largest view area of the same
//! category. Views whose ratio falls below `theta_m` cannot rest stably on a
//! counter and are dropped from synthesis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{CategoryId, ViewId};
use crate::error::{Error, Result};

pub const DEFAULT_THETA_M: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub category: CategoryId,
    pub view: ViewId,
    pub area: u64,
    pub ratio: f64,
    pub realistic: bool,
}

impl PoseRecord {
    /// A record whose ratio has not been computed yet.
    pub fn unscored(category: CategoryId, view: ViewId, area: u64) -> Self {
        Self {
            category,
            view,
            area,
            ratio: 0.0,
            realistic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub theta_m: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            theta_m: DEFAULT_THETA_M,
        }
    }
}

impl PruneConfig {
    pub fn new(theta_m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta_m) {
            return Err(Error::invalid(format!("theta_m {theta_m} outside [0, 1]")));
        }
        Ok(Self { theta_m })
    }
}

/// Ratios of each area to the largest one. The maximal view gets exactly 1.
pub fn pose_ratios(areas: &[u64]) -> Result<Vec<f64>> {
    let max = areas.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::invalid(
            "pose ratios need at least one view with positive area",
        ));
    }
    Ok(areas
        .iter()
        .map(|&a| if a == max { 1.0 } else { a as f64 / max as f64 })
        .collect())
}

/// Fills `ratio` for every record, pooling all views of a category, and sets
/// `realistic` against `cfg`.
pub fn score_poses(records: &mut [PoseRecord], cfg: &PruneConfig) -> Result<()> {
    let mut by_category: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_category.entry(r.category).or_default().push(i);
    }
    for (category, idx) in by_category {
        let areas: Vec<u64> = idx.iter().map(|&i| records[i].area).collect();
        let ratios = pose_ratios(&areas).map_err(|_| {
            Error::validation(format!("category {category}"), "every view has zero mask area")
        })?;
        for (&i, ratio) in idx.iter().zip(ratios) {
            records[i].ratio = ratio;
            records[i].realistic = ratio >= cfg.theta_m;
        }
    }
    Ok(())
}

/// Splits scored records into `(kept, pruned)`, preserving input order.
/// A ratio equal to `theta_m` is kept.
pub fn prune_poses(records: &[PoseRecord], cfg: &PruneConfig) -> (Vec<PoseRecord>, Vec<PoseRecord>) {
    let (mut kept, mut pruned) = (Vec::new(), Vec::new());
    for r in records {
        let mut r = *r;
        r.realistic = r.ratio >= cfg.theta_m;
        if r.realistic {
            kept.push(r);
        } else {
            pruned.push(r);
        }
    }
    (kept, pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(areas: &[u64], theta: f64) -> Vec<PoseRecord> {
        let mut recs: Vec<_> = areas
            .iter()
            .enumerate()
            .map(|(v, &a)| PoseRecord::unscored(CategoryId(1), v as u32, a))
            .collect();
        score_poses(&mut recs, &PruneConfig::new(theta).unwrap()).unwrap();
        recs
    }

    #[test]
    fn ratio_fixtures() {
        assert_eq!(pose_ratios(&[500]).unwrap(), vec![1.0]);
        assert_eq!(pose_ratios(&[100, 40]).unwrap(), vec![1.0, 0.4]);
        assert_eq!(pose_ratios(&[300, 300, 150]).unwrap(), vec![1.0, 1.0, 0.5]);
        assert!(pose_ratios(&[0, 0]).is_err());
        assert!(pose_ratios(&[]).is_err());
    }

    #[test]
    fn default_threshold_prunes_forty_percent_view() {
        let recs = scored(&[100, 40], DEFAULT_THETA_M);
        let (kept, pruned) = prune_poses(&recs, &PruneConfig::default());
        assert_eq!(kept.iter().map(|r| r.view).collect::<Vec<_>>(), vec![0]);
        assert_eq!(pruned.iter().map(|r| r.view).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn threshold_extremes() {
        let recs = scored(&[100, 40, 1, 100], 0.0);
        let (kept, _) = prune_poses(&recs, &PruneConfig::new(0.0).unwrap());
        assert_eq!(kept.len(), 4);
        let (kept, pruned) = prune_poses(&recs, &PruneConfig::new(1.0).unwrap());
        assert_eq!(kept.iter().map(|r| r.view).collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(pruned.len(), 2);
    }

    #[test]
    fn ratio_at_threshold_is_kept() {
        let recs = scored(&[100, 45], 0.45);
        assert!(recs[1].realistic);
    }

    #[test]
    fn categories_are_scored_independently() {
        let mut recs = vec![
            PoseRecord::unscored(CategoryId(1), 0, 10),
            PoseRecord::unscored(CategoryId(2), 0, 1000),
            PoseRecord::unscored(CategoryId(1), 1, 5),
        ];
        score_poses(&mut recs, &PruneConfig::default()).unwrap();
        assert_eq!(recs.iter().map(|r| r.ratio).collect::<Vec<_>>(), vec![1.0, 1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn partition_is_exact(areas in prop::collection::vec(1u64..10_000, 1..12), theta in 0.0..=1.0f64) {
            let recs = scored(&areas, theta);
            let (kept, pruned) = prune_poses(&recs, &PruneConfig::new(theta).unwrap());
            prop_assert_eq!(kept.len() + pruned.len(), recs.len());
            prop_assert!(!kept.is_empty());
            prop_assert!(kept.iter().all(|r| r.ratio >= theta));
            prop_assert!(pruned.iter().all(|r| r.ratio < theta));
        }
    }
}

//! Copy-paste synthesis of checkout scenes from pruned exemplar cutouts.
//!
//! A scene is fully determined by its seed, the catalog and the
//! [`SynthesisConfig`]: counts and categories come from stream 0 of a
//! ChaCha8 generator seeded with the scene seed, placement attempt `a` uses
//! stream `1 + a`.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{CategoryId, ExemplarImage, ViewId};
use crate::error::{Error, Result};
use crate::geometry::{AffinePose, BBox, InverseWarp, PlacedMask};
use crate::mask::{mask_bbox, mask_centroid, BinaryMask};
use crate::metrics::ShoppingList;

/// Checkout clutter level and its allowed `(categories, instances)` ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Inclusive category-count range.
    pub fn category_range(self) -> (usize, usize) {
        match self {
            Difficulty::Easy => (3, 5),
            Difficulty::Medium => (5, 8),
            Difficulty::Hard => (8, 10),
        }
    }

    /// Inclusive instance-count range before lifting the lower bound to the
    /// category count.
    pub fn instance_range(self) -> (usize, usize) {
        match self {
            Difficulty::Easy => (3, 10),
            Difficulty::Medium => (10, 15),
            Difficulty::Hard => (5, 20),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::invalid(format!("unknown difficulty level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Every instance must stay strictly below this occlusion rate.
    pub max_occlusion: f64,
    pub instance_retries: u32,
    pub scene_resamples: u32,
    pub background_color: [u8; 3],
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            canvas_width: 1800,
            canvas_height: 1800,
            scale_min: 0.4,
            scale_max: 0.7,
            max_occlusion: 0.5,
            instance_retries: 100,
            scene_resamples: 20,
            background_color: [235, 235, 235],
        }
    }
}

impl SynthesisConfig {
    /// Small canvas used by the test suite.
    pub fn test_profile() -> Self {
        Self {
            canvas_width: 256,
            canvas_height: 256,
            ..Self::default()
        }
    }

    pub fn canvas(&self) -> (u32, u32) {
        (self.canvas_width, self.canvas_height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::invalid("canvas dimensions must be positive"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0) {
            return Err(Error::invalid(format!(
                "scale range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.scale_min, self.scale_max
            )));
        }
        if !(self.max_occlusion > 0.0 && self.max_occlusion <= 1.0) {
            return Err(Error::invalid("max_occlusion must lie in (0, 1]"));
        }
        if self.instance_retries == 0 || self.scene_resamples == 0 {
            return Err(Error::invalid("retry caps must be positive"));
        }
        Ok(())
    }

    pub fn flat_background(&self) -> RgbImage {
        RgbImage::from_pixel(
            self.canvas_width,
            self.canvas_height,
            Rgb(self.background_color),
        )
    }
}

/// Realistic-pose exemplars with masks, cropped to their mask extent.
#[derive(Debug, Clone)]
pub struct PrunedCatalog {
    exemplars: Vec<ExemplarImage>,
    by_category: BTreeMap<CategoryId, Vec<usize>>,
}

impl PrunedCatalog {
    /// Every exemplar must carry a non-empty mask.
    pub fn new(exemplars: Vec<ExemplarImage>) -> Result<Self> {
        let mut cropped = Vec::with_capacity(exemplars.len());
        let mut by_category: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
        for ex in exemplars {
            let mask = ex.mask().ok_or_else(|| {
                Error::invalid(format!(
                    "exemplar (category {}, view {}) has no mask",
                    ex.category, ex.view
                ))
            })?;
            if ex.category.is_background() {
                return Err(Error::invalid("exemplar labelled as background"));
            }
            let b = mask_bbox(mask)?;
            let (x0, y0) = (b.x_min as u32, b.y_min as u32);
            let (w, h) = (b.width() as u32, b.height() as u32);
            let pixels = image::imageops::crop_imm(&ex.pixels, x0, y0, w, h).to_image();
            let sub = BinaryMask::from_fn(w, h, |x, y| mask.get(x0 + x, y0 + y));
            let ex = ExemplarImage::new(ex.category, ex.view, pixels)?.with_mask(sub)?;
            by_category.entry(ex.category).or_default().push(cropped.len());
            cropped.push(ex);
        }
        Ok(Self {
            exemplars: cropped,
            by_category,
        })
    }

    pub fn exemplars(&self) -> &[ExemplarImage] {
        &self.exemplars
    }

    pub fn categories(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.by_category.keys().copied()
    }

    pub fn category_count(&self) -> usize {
        self.by_category.len()
    }

    /// Largest category id present.
    pub fn max_category(&self) -> u32 {
        self.by_category.keys().last().map_or(0, |c| c.0)
    }

    pub fn views_of(&self, category: CategoryId) -> &[usize] {
        self.by_category.get(&category).map_or(&[], |v| v.as_slice())
    }

    pub fn find(&self, category: CategoryId, view: ViewId) -> Option<&ExemplarImage> {
        self.views_of(category)
            .iter()
            .map(|&i| &self.exemplars[i])
            .find(|e| e.view == view)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub difficulty: Difficulty,
    pub category_count: usize,
    pub instance_count: usize,
    pub canvas: (u32, u32),
    pub seed: u64,
    /// Category of each instance in placement (z) order.
    pub assignments: Vec<CategoryId>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (clo, chi) = self.difficulty.category_range();
        let (ilo, ihi) = self.difficulty.instance_range();
        let distinct: std::collections::BTreeSet<_> = self.assignments.iter().collect();
        let ok = (clo..=chi).contains(&self.category_count)
            && (ilo.max(self.category_count)..=ihi).contains(&self.instance_count)
            && self.assignments.len() == self.instance_count
            && distinct.len() == self.category_count;
        if !ok {
            return Err(Error::validation(
                format!("{} scene spec (seed {})", self.difficulty, self.seed),
                format!(
                    "{} categories / {} instances outside the level's ranges or inconsistent with assignments",
                    self.category_count, self.instance_count
                ),
            ));
        }
        Ok(())
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws counts uniformly from the level's ranges, picks distinct
/// categories without replacement and spreads instances so every chosen
/// category appears at least once.
pub fn sample_scene_spec(
    seed: u64,
    difficulty: Difficulty,
    catalog: &PrunedCatalog,
    canvas: (u32, u32),
) -> Result<SceneSpec> {
    let (clo, chi) = difficulty.category_range();
    let (ilo, ihi) = difficulty.instance_range();
    if catalog.category_count() < chi {
        return Err(Error::CatalogTooSmall {
            needed: chi,
            available: catalog.category_count(),
        });
    }
    let mut rng = stream_rng(seed, 0);
    let category_count = rng.random_range(clo..=chi);
    let instance_count = rng.random_range(ilo.max(category_count)..=ihi);
    let pool: Vec<CategoryId> = catalog.categories().collect();
    let chosen: Vec<CategoryId> = pool.choose_multiple(&mut rng, category_count).copied().collect();
    let mut assignments = chosen.clone();
    for _ in category_count..instance_count {
        assignments.push(*chosen.choose(&mut rng).expect("non-empty"));
    }
    assignments.shuffle(&mut rng);
    Ok(SceneSpec {
        difficulty,
        category_count,
        instance_count,
        canvas,
        seed,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub category: CategoryId,
    pub view: ViewId,
    pub pose: AffinePose,
    /// Placement order; higher values are painted on top.
    pub z: u32,
    pub mask_on_canvas: BinaryMask,
    pub occlusion: f64,
}

/// Fraction of `instance`'s pixels covered by the union of `later` masks.
pub fn occlusion_rate(instance: &BinaryMask, later: &[&BinaryMask]) -> Result<f64> {
    let area = instance.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    let mut covered = BinaryMask::new(instance.width(), instance.height());
    for m in later {
        covered.union_with(m)?;
    }
    Ok(instance.intersection_area(&covered)? as f64 / area as f64)
}

const NO_OWNER: u32 = u32::MAX;

/// Incremental top-owner map used by rejection sampling.
struct Occupancy {
    width: u32,
    height: u32,
    owner: Vec<u32>,
    areas: Vec<usize>,
    visible: Vec<usize>,
    lost: Vec<usize>,
}

impl Occupancy {
    fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            owner: vec![NO_OWNER; width as usize * height as usize],
            areas: Vec::new(),
            visible: Vec::new(),
            lost: Vec::new(),
        }
    }

    /// Whether adding `pixels` on top keeps every instance's covered
    /// fraction strictly below `max_occlusion`.
    fn admits(&mut self, pixels: &[usize], max_occlusion: f64) -> bool {
        self.lost.iter_mut().for_each(|l| *l = 0);
        for &p in pixels {
            let o = self.owner[p];
            if o != NO_OWNER {
                self.lost[o as usize] += 1;
            }
        }
        (0..self.areas.len()).all(|j| {
            let covered = self.areas[j] - self.visible[j] + self.lost[j];
            (covered as f64) < max_occlusion * self.areas[j] as f64
        })
    }

    fn commit(&mut self, pixels: &[usize]) {
        let id = self.areas.len() as u32;
        for j in 0..self.areas.len() {
            self.visible[j] -= self.lost[j];
        }
        for &p in pixels {
            self.owner[p] = id;
        }
        self.areas.push(pixels.len());
        self.visible.push(pixels.len());
        self.lost.push(0);
    }
}

struct Candidate {
    exemplar: usize,
    pose: AffinePose,
    placed: PlacedMask,
}

fn try_place_scene(
    spec: &SceneSpec,
    catalog: &PrunedCatalog,
    cfg: &SynthesisConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<Candidate>>> {
    let (cw, ch) = spec.canvas;
    let mut occ = Occupancy::new(cw, ch);
    let mut placed = Vec::with_capacity(spec.instance_count);
    for &category in &spec.assignments {
        let views = catalog.views_of(category);
        if views.is_empty() {
            return Err(Error::invalid(format!(
                "category {category} has no realistic exemplar"
            )));
        }
        let mut accepted = None;
        for _ in 0..cfg.instance_retries {
            let exemplar = *views.choose(rng).expect("non-empty");
            let rotation = rng.random_range(0.0..360.0);
            let scale = rng.random_range(cfg.scale_min..=cfg.scale_max);
            let base_pose = AffinePose::new(rotation, scale, (0.0, 0.0))?;
            let mask = catalog.exemplars[exemplar].mask().expect("catalog masks");
            let base = PlacedMask::warp(mask, &base_pose)?;
            let Some(window) = &base.mask else { continue };
            let (lo_x, hi_x) = (-base.x0, cw as i64 - (base.x0 + window.width() as i64));
            let (lo_y, hi_y) = (-base.y0, ch as i64 - (base.y0 + window.height() as i64));
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            let dx = rng.random_range(lo_x..=hi_x);
            let dy = rng.random_range(lo_y..=hi_y);
            let shifted = base.shifted(dx, dy);
            debug_assert!(shifted.fits(cw, ch));
            let pixels: Vec<usize> = shifted
                .canvas_pixels(cw, ch)
                .map(|(x, y)| (y * cw + x) as usize)
                .collect();
            if occ.admits(&pixels, cfg.max_occlusion) {
                occ.commit(&pixels);
                let pose = AffinePose::new(rotation, scale, (dx as f64, dy as f64))?;
                accepted = Some(Candidate {
                    exemplar,
                    pose,
                    placed: shifted,
                });
                break;
            }
        }
        match accepted {
            Some(c) => placed.push(c),
            None => return Ok(None),
        }
    }
    debug_assert_eq!(occ.width * occ.height, cw * ch);
    Ok(Some(placed))
}

/// Places every instance of `spec` by rejection sampling so that, after
/// each placement, all instances placed so far stay below the occlusion cap
/// and lie entirely on the canvas. A scene whose instance exhausts its retry
/// budget is resampled from the next placement stream.
pub fn place_instances(
    spec: &SceneSpec,
    catalog: &PrunedCatalog,
    cfg: &SynthesisConfig,
) -> Result<Vec<SceneInstance>> {
    cfg.validate()?;
    spec.validate()?;
    let (cw, ch) = spec.canvas;
    for attempt in 0..cfg.scene_resamples {
        let mut rng = stream_rng(spec.seed, 1 + attempt as u64);
        let Some(placed) = try_place_scene(spec, catalog, cfg, &mut rng)? else {
            continue;
        };
        let masks: Vec<BinaryMask> = placed.iter().map(|c| c.placed.to_canvas(cw, ch)).collect();
        let mut covered = BinaryMask::new(cw, ch);
        let mut occlusions = vec![0.0; masks.len()];
        for i in (0..masks.len()).rev() {
            occlusions[i] =
                masks[i].intersection_area(&covered)? as f64 / masks[i].area() as f64;
            covered.union_with(&masks[i])?;
        }
        return Ok(placed
            .into_iter()
            .zip(masks)
            .zip(occlusions)
            .enumerate()
            .map(|(z, ((c, mask_on_canvas), occlusion))| {
                let ex = &catalog.exemplars[c.exemplar];
                SceneInstance {
                    category: ex.category,
                    view: ex.view,
                    pose: c.pose,
                    z: z as u32,
                    mask_on_canvas,
                    occlusion,
                }
            })
            .collect());
    }
    Err(Error::PlacementFailed {
        attempts: cfg.scene_resamples,
    })
}

/// Per-instance annotation: amodal box and visible-region center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub category: CategoryId,
    pub bbox: BBox,
    pub point: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedScene {
    pub spec: SceneSpec,
    pub image: RgbImage,
    pub instances: Vec<SceneInstance>,
    pub annotations: Vec<InstanceAnnotation>,
    pub shopping_list: ShoppingList,
}

/// Paints instances over `background` in z-order and derives boxes, points
/// and the shopping list.
pub fn compose_scene(
    spec: &SceneSpec,
    instances: Vec<SceneInstance>,
    background: &RgbImage,
    catalog: &PrunedCatalog,
) -> Result<SynthesizedScene> {
    let (cw, ch) = spec.canvas;
    if background.dimensions() != spec.canvas {
        return Err(Error::DimensionMismatch {
            expected: spec.canvas,
            actual: background.dimensions(),
        });
    }
    let mut image = background.clone();
    let mut owner = vec![NO_OWNER; cw as usize * ch as usize];
    let mut ordered: Vec<&SceneInstance> = instances.iter().collect();
    ordered.sort_by_key(|i| i.z);
    for inst in &ordered {
        let ex = catalog.find(inst.category, inst.view).ok_or_else(|| {
            Error::invalid(format!(
                "instance references unknown exemplar (category {}, view {})",
                inst.category, inst.view
            ))
        })?;
        let (sw, sh) = ex.dimensions();
        let warp = InverseWarp::new(sw, sh, &inst.pose)?;
        for (x, y) in inst.mask_on_canvas.iter_set() {
            if let Some((sx, sy)) = warp.source_pixel(x as i64, y as i64) {
                image.put_pixel(x, y, *ex.pixels.get_pixel(sx, sy));
            }
            owner[(y * cw + x) as usize] = inst.z;
        }
    }
    let mut annotations = Vec::with_capacity(instances.len());
    for inst in &instances {
        let bbox = mask_bbox(&inst.mask_on_canvas)?;
        let visible = BinaryMask::from_bits(
            cw,
            ch,
            owner.iter().map(|&o| o == inst.z).collect(),
        )?;
        let point = if visible.is_empty() {
            mask_centroid(&inst.mask_on_canvas)?
        } else {
            mask_centroid(&visible)?
        };
        annotations.push(InstanceAnnotation {
            category: inst.category,
            bbox,
            point,
        });
    }
    let shopping_list = ShoppingList::from_categories(instances.iter().map(|i| i.category));
    Ok(SynthesizedScene {
        spec: spec.clone(),
        image,
        instances,
        annotations,
        shopping_list,
    })
}

/// Appearance-only post-processing of a composed scene.
pub trait SceneRenderer {
    fn render(&self, image: &RgbImage) -> Result<RgbImage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRenderer;

impl SceneRenderer for IdentityRenderer {
    fn render(&self, image: &RgbImage) -> Result<RgbImage> {
        Ok(image.clone())
    }
}

/// Replaces the image with the renderer's output; annotations are untouched.
pub fn render_hook(mut scene: SynthesizedScene, renderer: &dyn SceneRenderer) -> Result<SynthesizedScene> {
    let rendered = renderer.render(&scene.image)?;
    if rendered.dimensions() != scene.image.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: scene.image.dimensions(),
            actual: rendered.dimensions(),
        });
    }
    scene.image = rendered;
    Ok(scene)
}

/// Sample, place and compose one scene.
pub fn synthesize_scene(
    seed: u64,
    difficulty: Difficulty,
    catalog: &PrunedCatalog,
    cfg: &SynthesisConfig,
    background: Option<&RgbImage>,
) -> Result<SynthesizedScene> {
    let spec = sample_scene_spec(seed, difficulty, catalog, cfg.canvas())?;
    let instances = place_instances(&spec, catalog, cfg)?;
    match background {
        Some(bg) => compose_scene(&spec, instances, bg, catalog),
        None => compose_scene(&spec, instances, &cfg.flat_background(), catalog),
    }
}

/// `count` scenes with seeds derived from `base_seed`, generated in parallel.
/// The output is identical to generating them one after another.
pub fn synthesize_batch(
    base_seed: u64,
    count: usize,
    difficulty: Difficulty,
    catalog: &PrunedCatalog,
    cfg: &SynthesisConfig,
    background: Option<&RgbImage>,
) -> Result<Vec<SynthesizedScene>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            synthesize_scene(
                derive_seed(base_seed, i as u64),
                difficulty,
                catalog,
                cfg,
                background,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{synthetic_catalog, CatalogSpec};

    fn catalog() -> PrunedCatalog {
        synthetic_catalog(&CatalogSpec::default()).unwrap().pruned(0.45).unwrap()
    }

    #[test]
    fn occlusion_rate_fixtures() {
        let sq = BinaryMask::from_fn(20, 20, |x, y| x < 10 && y < 10);
        assert_eq!(occlusion_rate(&sq, &[]).unwrap(), 0.0);
        let cover = BinaryMask::full(20, 20);
        assert_eq!(occlusion_rate(&sq, &[&cover]).unwrap(), 1.0);
        let half = BinaryMask::from_fn(20, 20, |x, y| x < 10 && y < 5);
        assert_eq!(occlusion_rate(&sq, &[&half]).unwrap(), 0.5);
        assert!(occlusion_rate(&BinaryMask::new(3, 3), &[]).is_err());
    }

    #[test]
    fn spec_ranges_and_determinism() {
        let cat = catalog();
        for seed in 0..200 {
            for level in Difficulty::ALL {
                let s = sample_scene_spec(seed, level, &cat, (256, 256)).unwrap();
                s.validate().unwrap();
                assert_eq!(s, sample_scene_spec(seed, level, &cat, (256, 256)).unwrap());
            }
        }
    }

    #[test]
    fn too_small_catalog() {
        let spec = CatalogSpec {
            categories: 6,
            ..CatalogSpec::default()
        };
        let cat = synthetic_catalog(&spec).unwrap().pruned(0.45).unwrap();
        assert!(matches!(
            sample_scene_spec(1, Difficulty::Hard, &cat, (256, 256)),
            Err(Error::CatalogTooSmall { needed: 10, .. })
        ));
        assert!(sample_scene_spec(1, Difficulty::Easy, &cat, (256, 256)).is_ok());
    }

    #[test]
    fn single_instance_is_unoccluded() {
        let cat = catalog();
        let cid = cat.categories().next().unwrap();
        let spec = SceneSpec {
            difficulty: Difficulty::Easy,
            category_count: 3,
            instance_count: 3,
            canvas: (256, 256),
            seed: 9,
            assignments: vec![cid],
        };
        // bypass the level check: a one-instance scene is not a valid level spec
        let mut rng = stream_rng(spec.seed, 1);
        let placed = try_place_scene(&spec, &cat, &SynthesisConfig::test_profile(), &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(placed.len(), 1);
        let m = placed[0].placed.to_canvas(256, 256);
        assert_eq!(occlusion_rate(&m, &[]).unwrap(), 0.0);
    }

    #[test]
    fn compose_counts_and_shopping_list() {
        let cat = catalog();
        let cfg = SynthesisConfig::test_profile();
        let scene = synthesize_scene(42, Difficulty::Medium, &cat, &cfg, None).unwrap();
        assert_eq!(scene.annotations.len(), scene.spec.instance_count);
        assert_eq!(scene.shopping_list.total() as usize, scene.spec.instance_count);
        for (a, i) in scene.annotations.iter().zip(&scene.instances) {
            assert!(a.bbox.contains_point(a.point.0, a.point.1));
            assert!(i.occlusion < 0.5);
        }
    }

    #[test]
    fn empty_scene_keeps_background() {
        let cat = catalog();
        let spec = SceneSpec {
            difficulty: Difficulty::Easy,
            category_count: 0,
            instance_count: 0,
            canvas: (32, 16),
            seed: 0,
            assignments: vec![],
        };
        let bg = RgbImage::from_fn(32, 16, |x, y| Rgb([x as u8, y as u8, 7]));
        let scene = compose_scene(&spec, vec![], &bg, &cat).unwrap();
        assert_eq!(scene.image, bg);
        assert!(scene.annotations.is_empty());
        assert!(scene.shopping_list.is_empty());
    }

    struct Brighten;
    impl SceneRenderer for Brighten {
        fn render(&self, image: &RgbImage) -> Result<RgbImage> {
            let mut out = image.clone();
            out.pixels_mut().for_each(|p| p.0 = p.0.map(|c| c.saturating_add(10)));
            Ok(out)
        }
    }

    struct Shrink;
    impl SceneRenderer for Shrink {
        fn render(&self, _: &RgbImage) -> Result<RgbImage> {
            Ok(RgbImage::new(4, 4))
        }
    }

    #[test]
    fn renderer_hook_contract() {
        let cat = catalog();
        let scene = synthesize_scene(3, Difficulty::Easy, &cat, &SynthesisConfig::test_profile(), None).unwrap();
        let same = render_hook(scene.clone(), &IdentityRenderer).unwrap();
        assert_eq!(same.image.as_raw(), scene.image.as_raw());
        let bright = render_hook(scene.clone(), &Brighten).unwrap();
        assert_ne!(bright.image, scene.image);
        assert_eq!(bright.annotations, scene.annotations);
        assert_eq!(bright.shopping_list, scene.shopping_list);
        assert!(render_hook(scene, &Shrink).is_err());
    }

    #[test]
    fn batch_matches_sequential() {
        let cat = catalog();
        let cfg = SynthesisConfig::test_profile();
        let batch = synthesize_batch(11, 4, Difficulty::Hard, &cat, &cfg, None).unwrap();
        for (i, s) in batch.iter().enumerate() {
            let one = synthesize_scene(derive_seed(11, i as u64), Difficulty::Hard, &cat, &cfg, None).unwrap();
            assert_eq!(&one, s);
        }
    }
}

//! On-disk formats: catalog manifests, scene annotations, predictions,
//! reports, DMAP density maps and PNG images/masks.
//!
//! Paths inside manifests are stored as written and resolved against the
//! manifest's directory. Boxes on disk are `[x, y, width, height]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::catalog::{CategoryId, ExemplarImage, ViewId};
use crate::density::DensityMap;
use crate::error::{Error, Result};
use crate::fixtures::SyntheticCatalog;
use crate::geometry::BBox;
use crate::mask::BinaryMask;
use crate::metrics::ShoppingList;
use crate::pose_pruning::{pose_ratios, PruneConfig, DEFAULT_THETA_M};
use crate::priming::{Detection, GroundTruth};
use crate::synthesis::{Difficulty, SynthesizedScene};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryEntry {
    pub id: CategoryId,
    pub name: String,
    #[serde(default)]
    pub sub_category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarEntry {
    pub category: CategoryId,
    pub view: ViewId,
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realistic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogManifest {
    pub categories: Vec<CategoryEntry>,
    pub exemplars: Vec<ExemplarEntry>,
    /// Threshold the `realistic` flags were computed with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_m: Option<f64>,
}

impl CatalogManifest {
    /// Structural checks plus existence of every referenced file under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        const CTX: &str = "catalog manifest";
        let mut ids = BTreeSet::new();
        for c in &self.categories {
            if c.id.is_background() {
                return Err(Error::validation(CTX, "category id 0 is reserved for background"));
            }
            if !ids.insert(c.id) {
                return Err(Error::validation(CTX, format!("duplicate category id {}", c.id)));
            }
        }
        let mut keys = BTreeSet::new();
        for (i, e) in self.exemplars.iter().enumerate() {
            if !ids.contains(&e.category) {
                return Err(Error::validation(
                    CTX,
                    format!("exemplars[{i}] references unknown category {}", e.category),
                ));
            }
            if !keys.insert((e.category, e.view)) {
                return Err(Error::validation(
                    CTX,
                    format!("duplicate exemplar (category {}, view {})", e.category, e.view),
                ));
            }
            for p in [&e.image, &e.mask] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::MissingFile {
                        context: format!("{CTX} exemplars[{i}]"),
                        path: full,
                    });
                }
            }
        }
        self.check_pose_scores()
    }

    /// Recorded ratios and flags must agree with a fresh scoring of the
    /// recorded areas.
    fn check_pose_scores(&self) -> Result<()> {
        const CTX: &str = "catalog manifest";
        let theta = PruneConfig::new(self.theta_m.unwrap_or(DEFAULT_THETA_M))?.theta_m;
        let mut by_cat: BTreeMap<CategoryId, Vec<&ExemplarEntry>> = BTreeMap::new();
        for e in &self.exemplars {
            by_cat.entry(e.category).or_default().push(e);
        }
        for (cat, entries) in by_cat {
            let areas: Option<Vec<u64>> = entries.iter().map(|e| e.area).collect();
            let Some(areas) = areas else {
                if entries.iter().any(|e| e.ratio.is_some() || e.realistic.is_some()) {
                    return Err(Error::validation(
                        CTX,
                        format!("category {cat} records ratios without areas for every view"),
                    ));
                }
                continue;
            };
            let ratios = pose_ratios(&areas)
                .map_err(|e| Error::validation(CTX, format!("category {cat}: {e}")))?;
            for (e, r) in entries.iter().zip(ratios) {
                if let Some(recorded) = e.ratio {
                    if (recorded - r).abs() > 1e-9 {
                        return Err(Error::validation(
                            CTX,
                            format!(
                                "category {cat} view {}: ratio {recorded} disagrees with areas ({r})",
                                e.view
                            ),
                        ));
                    }
                }
                if let Some(flag) = e.realistic {
                    if flag != (r >= theta) {
                        return Err(Error::validation(
                            CTX,
                            format!(
                                "category {cat} view {}: realistic={flag} but ratio {r} vs theta_m {theta}",
                                e.view
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_catalog(path: &Path) -> Result<CatalogManifest> {
    let manifest: CatalogManifest = read_json(path)?;
    manifest.validate(&root_of(path))?;
    Ok(manifest)
}

pub fn save_catalog(manifest: &CatalogManifest, path: &Path) -> Result<()> {
    write_json(manifest, path)
}

/// Directory that relative paths in a manifest are resolved against.
pub fn root_of(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads every exemplar image of a manifest with its mask attached.
/// With `realistic_only`, views flagged unrealistic are skipped.
pub fn load_exemplars(manifest: &CatalogManifest, root: &Path, realistic_only: bool) -> Result<Vec<ExemplarImage>> {
    manifest
        .exemplars
        .iter()
        .filter(|e| !realistic_only || e.realistic != Some(false))
        .map(|e| {
            let pixels = read_rgb(&root.join(&e.image))?;
            let mask = read_mask(&root.join(&e.mask))?;
            ExemplarImage::new(e.category, e.view, pixels)?.with_mask(mask)
        })
        .collect()
}

/// Writes a procedurally drawn catalog as PNGs plus `catalog.json` under
/// `dir`, with pose scores filled in. Returns the manifest path.
pub fn write_synthetic_catalog(catalog: &SyntheticCatalog, dir: &Path, theta_m: f64) -> Result<PathBuf> {
    let records = catalog.pose_records(theta_m)?;
    let mut exemplars = Vec::new();
    for ((ex, mask), rec) in catalog.exemplars.iter().zip(&catalog.masks).zip(&records) {
        let image = PathBuf::from(format!("images/{}_{}.png", ex.category, ex.view));
        let mask_path = PathBuf::from(format!("masks/{}_{}.png", ex.category, ex.view));
        write_rgb(&ex.pixels, &dir.join(&image))?;
        write_mask(mask, &dir.join(&mask_path))?;
        exemplars.push(ExemplarEntry {
            category: ex.category,
            view: ex.view,
            image,
            mask: mask_path,
            area: Some(rec.area),
            ratio: Some(rec.ratio),
            realistic: Some(rec.realistic),
        });
    }
    let manifest = CatalogManifest {
        categories: catalog
            .names
            .iter()
            .map(|(id, name, sub)| CategoryEntry {
                id: *id,
                name: name.clone(),
                sub_category: sub.clone(),
            })
            .collect(),
        exemplars,
        theta_m: Some(theta_m),
    };
    let path = dir.join("catalog.json");
    save_catalog(&manifest, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: u64,
    pub file: PathBuf,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub image_id: u64,
    pub category: CategoryId,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    /// Instance center `[cx, cy]`.
    pub point: [f64; 2],
}

impl AnnotationEntry {
    pub fn corner_box(&self) -> BBox {
        BBox::from_xywh(self.bbox)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneAnnotationFile {
    #[serde(default)]
    pub images: Vec<ImageEntry>,
    #[serde(default)]
    pub annotations: Vec<AnnotationEntry>,
    #[serde(default)]
    pub shopping_lists: BTreeMap<u64, ShoppingList>,
}

impl SceneAnnotationFile {
    pub fn validate(&self) -> Result<()> {
        const CTX: &str = "annotation file";
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::validation(CTX, format!("duplicate image id {}", img.id)));
            }
        }
        let mut tallies: BTreeMap<u64, ShoppingList> = BTreeMap::new();
        for (i, a) in self.annotations.iter().enumerate() {
            if !ids.contains(&a.image_id) {
                return Err(Error::validation(
                    CTX,
                    format!("annotations[{i}] references unknown image {}", a.image_id),
                ));
            }
            if a.category.is_background() {
                return Err(Error::validation(CTX, format!("annotations[{i}] has category 0")));
            }
            let [_, _, w, h] = a.bbox;
            if a.bbox.iter().chain(&a.point).any(|v| !v.is_finite()) || w < 0.0 || h < 0.0 {
                return Err(Error::validation(
                    CTX,
                    format!("annotations[{i}] (image {}) has a malformed box or point", a.image_id),
                ));
            }
            tallies.entry(a.image_id).or_default().add(a.category, 1);
        }
        for id in self.shopping_lists.keys() {
            if !ids.contains(id) {
                return Err(Error::validation(CTX, format!("shopping list for unknown image {id}")));
            }
        }
        let empty = ShoppingList::new();
        for id in &ids {
            let listed = self.shopping_lists.get(id).unwrap_or(&empty);
            let counted = tallies.get(id).unwrap_or(&empty);
            if !listed.same_counts(counted) {
                return Err(Error::validation(
                    CTX,
                    format!("shopping list of image {id} disagrees with its annotations"),
                ));
            }
        }
        Ok(())
    }

    /// Builds the file for a set of scenes; `entries` pairs each scene with
    /// its image id and file name.
    pub fn from_scenes<'a>(entries: impl IntoIterator<Item = (u64, PathBuf, &'a SynthesizedScene)>) -> Self {
        let mut out = SceneAnnotationFile::default();
        for (id, file, scene) in entries {
            let (width, height) = scene.image.dimensions();
            out.images.push(ImageEntry {
                id,
                file,
                width,
                height,
                difficulty: Some(scene.spec.difficulty),
                seed: Some(scene.spec.seed),
            });
            for a in &scene.annotations {
                out.annotations.push(AnnotationEntry {
                    image_id: id,
                    category: a.category,
                    bbox: a.bbox.to_xywh(),
                    point: [a.point.0, a.point.1],
                });
            }
            out.shopping_lists.insert(id, scene.shopping_list.clone());
        }
        out
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Annotations grouped by image id; images without any map to empty.
    pub fn by_image(&self) -> BTreeMap<u64, Vec<&AnnotationEntry>> {
        let mut out: BTreeMap<u64, Vec<&AnnotationEntry>> =
            self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a);
        }
        out
    }

    /// Ground truth of every image keyed by id.
    pub fn ground_truth(&self) -> HashMap<u64, GroundTruth> {
        let grouped = self.by_image();
        self.images
            .iter()
            .map(|img| {
                let anns = &grouped[&img.id];
                let gt = GroundTruth {
                    objects: anns.iter().map(|a| (a.category, a.corner_box())).collect(),
                    points: anns.iter().map(|a| (a.point[0], a.point[1])).collect(),
                    shopping_list: self.shopping_lists.get(&img.id).cloned().unwrap_or_default(),
                    level: img.difficulty,
                };
                (img.id, gt)
            })
            .collect()
    }
}

pub fn load_annotations(path: &Path) -> Result<SceneAnnotationFile> {
    let file: SceneAnnotationFile = read_json(path)?;
    file.validate().map_err(|e| match e {
        Error::Validation { context, message } => Error::Validation {
            context: format!("{} ({context})", path.display()),
            message,
        },
        other => other,
    })?;
    Ok(file)
}

pub fn save_annotations(file: &SceneAnnotationFile, path: &Path) -> Result<()> {
    write_json(file, path)
}

/// One scored detection on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedDetection {
    pub image_id: u64,
    pub category: CategoryId,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl PredictedDetection {
    pub fn detection(&self) -> Detection {
        Detection {
            bbox: BBox::from_xywh(self.bbox),
            category: self.category,
            score: self.score,
        }
    }
}

/// Either a plain list of scored detections or an annotation file (its
/// boxes then count as detections with score 1).
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Detections(Vec<PredictedDetection>),
    Annotations(SceneAnnotationFile),
}

impl Predictions {
    /// Detections grouped per image id.
    pub fn per_image(&self) -> BTreeMap<u64, Vec<Detection>> {
        let mut out: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        match self {
            Predictions::Detections(list) => {
                for d in list {
                    out.entry(d.image_id).or_default().push(d.detection());
                }
            }
            Predictions::Annotations(file) => {
                for img in &file.images {
                    out.entry(img.id).or_default();
                }
                for a in &file.annotations {
                    out.entry(a.image_id).or_default().push(Detection {
                        bbox: a.corner_box(),
                        category: a.category,
                        score: 1.0,
                    });
                }
            }
        }
        out
    }
}

pub fn load_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    if text.trim_start().starts_with('[') {
        let list: Vec<PredictedDetection> = serde_json::from_str(&text).map_err(json_err)?;
        if let Some(d) = list.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
            return Err(Error::validation(
                path.display().to_string(),
                format!("score {} of image {} outside [0, 1]", d.score, d.image_id),
            ));
        }
        Ok(Predictions::Detections(list))
    } else {
        let file: SceneAnnotationFile = serde_json::from_str(&text).map_err(json_err)?;
        file.validate()?;
        Ok(Predictions::Annotations(file))
    }
}

pub fn write_density(map: &DensityMap, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, map.to_dmap_bytes()).map_err(io_err(path))
}

pub fn read_density(path: &Path) -> Result<DensityMap> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    DensityMap::from_dmap_bytes(&bytes)
        .map_err(|e| Error::DensityFormat(format!("{}: {e}", path.display())))
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// PNG or JPEG, by extension/content.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            context: "image".into(),
            path: path.to_path_buf(),
        });
    }
    Ok(image::open(path).map_err(image_err(path))?.to_rgb8())
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

/// Single-channel PNG, 255 for foreground.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    mask.to_gray_image()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

/// Any grayscale image; values >= 128 are foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            context: "mask".into(),
            path: path.to_path_buf(),
        });
    }
    let gray: GrayImage = image::open(path).map_err(image_err(path))?.to_luma8();
    BinaryMask::from_gray_image(&gray)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{synthetic_catalog, CatalogSpec};

    fn small_catalog(dir: &Path) -> PathBuf {
        let spec = CatalogSpec {
            categories: 3,
            views: 3,
            size: 16,
        };
        write_synthetic_catalog(&synthetic_catalog(&spec).unwrap(), dir, 0.45).unwrap()
    }

    #[test]
    fn catalog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = small_catalog(dir.path());
        let m = load_catalog(&path).unwrap();
        assert_eq!(m.categories.len(), 3);
        let copy = dir.path().join("copy.json");
        save_catalog(&m, &copy).unwrap();
        assert_eq!(load_catalog(&copy).unwrap(), m);
        let ex = load_exemplars(&m, dir.path(), false).unwrap();
        assert_eq!(ex.len(), 9);
        assert!(ex.iter().all(|e| e.mask().is_some()));
    }

    #[test]
    fn catalog_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = small_catalog(dir.path());
        let good = load_catalog(&path).unwrap();

        let mut dup = good.clone();
        dup.categories[1].id = dup.categories[0].id;
        save_catalog(&dup, &path).unwrap();
        assert!(matches!(load_catalog(&path), Err(Error::Validation { .. })));

        let mut missing = good.clone();
        missing.exemplars[0].mask = PathBuf::from("masks/nope.png");
        save_catalog(&missing, &path).unwrap();
        match load_catalog(&path) {
            Err(Error::MissingFile { path, .. }) => assert!(path.ends_with("masks/nope.png")),
            other => panic!("{other:?}"),
        }

        let mut wrong_ratio = good.clone();
        wrong_ratio.exemplars[0].ratio = Some(0.01);
        save_catalog(&wrong_ratio, &path).unwrap();
        assert!(load_catalog(&path).is_err());
    }

    fn sample_annotations() -> SceneAnnotationFile {
        let cat = CategoryId(2);
        SceneAnnotationFile {
            images: vec![
                ImageEntry {
                    id: 4,
                    file: "a.png".into(),
                    width: 32,
                    height: 32,
                    difficulty: Some(Difficulty::Easy),
                    seed: Some(9),
                },
                ImageEntry {
                    id: 5,
                    file: "b.png".into(),
                    width: 32,
                    height: 32,
                    difficulty: None,
                    seed: None,
                },
            ],
            annotations: vec![AnnotationEntry {
                image_id: 4,
                category: cat,
                bbox: [1.0, 2.0, 3.5, 4.25],
                point: [2.75, 4.125],
            }],
            shopping_lists: BTreeMap::from([(4, ShoppingList::from_counts([(cat, 1)]))]),
        }
    }

    #[test]
    fn annotation_round_trip_and_consistency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.json");
        let file = sample_annotations();
        save_annotations(&file, &path).unwrap();
        assert_eq!(load_annotations(&path).unwrap(), file);

        let mut bad = file.clone();
        bad.shopping_lists.insert(4, ShoppingList::from_counts([(CategoryId(2), 3)]));
        save_annotations(&bad, &path).unwrap();
        let msg = load_annotations(&path).unwrap_err().to_string();
        assert!(msg.contains("image 4"), "{msg}");

        std::fs::write(&path, "{}").unwrap();
        assert_eq!(load_annotations(&path).unwrap(), SceneAnnotationFile::default());
    }

    #[test]
    fn predictions_accept_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let list = vec![PredictedDetection {
            image_id: 4,
            category: CategoryId(1),
            bbox: [0.0, 0.0, 2.0, 2.0],
            score: 0.7,
        }];
        write_json(&list, &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), Predictions::Detections(list));
        save_annotations(&sample_annotations(), &path).unwrap();
        let p = load_predictions(&path).unwrap();
        assert_eq!(p.per_image()[&4].len(), 1);
        assert!(p.per_image()[&5].is_empty());
    }

    #[test]
    fn dmap_and_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = DensityMap::from_values(3, 2, vec![0.0, 0.5, 0.25, 1.0, 0.125, 2.0]).unwrap();
        let p = dir.path().join("d/x.dmap");
        write_density(&map, &p).unwrap();
        assert_eq!(read_density(&p).unwrap(), map);
        std::fs::write(&p, b"DMAQ").unwrap();
        assert!(matches!(read_density(&p), Err(Error::DensityFormat(_))));

        let mask = BinaryMask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let mp = dir.path().join("m.png");
        write_mask(&mask, &mp).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), mask);
        assert!(matches!(read_mask(&dir.path().join("none.png")), Err(Error::MissingFile { .. })));
    }
}

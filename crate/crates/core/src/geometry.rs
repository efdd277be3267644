//! Boxes, poses and the mask warp used to place exemplars on a canvas.
//!
//! Coordinates are continuous with the origin at the top-left corner, `x`
//! growing rightward and `y` downward. Pixel `(x, y)` covers the unit square
//! `[x, x+1) × [y, y+1)` and is sampled at its center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Corner-form axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Builds a box from COCO-style `[x, y, width, height]`.
    pub fn from_xywh(xywh: [f64; 4]) -> Self {
        Self::new(xywh[0], xywh[1], xywh[0] + xywh[2], xywh[1] + xywh[3])
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    /// Zero for inverted or degenerate boxes.
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Intersection over union. Degenerate pairs (zero union) give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Rotation about the mask center, uniform scale, then translation of the
/// center. The identity pose maps a mask onto an equally sized canvas
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePose {
    /// Degrees in `[0, 360)`.
    pub rotation: f64,
    pub scale: f64,
    /// Displacement of the mask center, in canvas pixels.
    pub translation: (f64, f64),
}

impl AffinePose {
    pub const IDENTITY: AffinePose = AffinePose {
        rotation: 0.0,
        scale: 1.0,
        translation: (0.0, 0.0),
    };

    /// Normalizes the rotation into `[0, 360)`; rejects scales outside `(0, 1]`.
    pub fn new(rotation_deg: f64, scale: f64, translation: (f64, f64)) -> Result<Self> {
        if !rotation_deg.is_finite() || !translation.0.is_finite() || !translation.1.is_finite() {
            return Err(Error::invalid("pose components must be finite"));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::invalid(format!("pose scale {scale} outside (0, 1]")));
        }
        Ok(Self {
            rotation: normalize_degrees(rotation_deg),
            scale,
            translation,
        })
    }
}

pub(crate) fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Inverse mapping from destination pixel centers to source coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct InverseWarp {
    cos: f64,
    sin: f64,
    inv_scale: f64,
    src_cx: f64,
    src_cy: f64,
    dst_cx: f64,
    dst_cy: f64,
    src_w: u32,
    src_h: u32,
}

impl InverseWarp {
    pub(crate) fn new(src_w: u32, src_h: u32, pose: &AffinePose) -> Result<Self> {
        if pose.scale <= 0.0 || !pose.scale.is_finite() {
            return Err(Error::invalid(format!(
                "pose scale must be positive, got {}",
                pose.scale
            )));
        }
        let theta = normalize_degrees(pose.rotation).to_radians();
        let src_cx = src_w as f64 / 2.0;
        let src_cy = src_h as f64 / 2.0;
        Ok(Self {
            cos: theta.cos(),
            sin: theta.sin(),
            inv_scale: 1.0 / pose.scale,
            src_cx,
            src_cy,
            dst_cx: src_cx + pose.translation.0,
            dst_cy: src_cy + pose.translation.1,
            src_w,
            src_h,
        })
    }

    /// Source pixel sampled by destination pixel `(x, y)`, if inside the source.
    #[inline]
    pub(crate) fn source_pixel(&self, x: i64, y: i64) -> Option<(u32, u32)> {
        let dx = x as f64 + 0.5 - self.dst_cx;
        let dy = y as f64 + 0.5 - self.dst_cy;
        // rotate by -theta
        let sx = (self.cos * dx + self.sin * dy) * self.inv_scale + self.src_cx;
        let sy = (-self.sin * dx + self.cos * dy) * self.inv_scale + self.src_cy;
        let (fx, fy) = (sx.floor(), sy.floor());
        if fx >= 0.0 && fy >= 0.0 && fx < self.src_w as f64 && fy < self.src_h as f64 {
            Some((fx as u32, fy as u32))
        } else {
            None
        }
    }

    /// Integer destination window `[x0, x1) × [y0, y1)` guaranteed to cover
    /// every destination pixel that maps inside the source.
    pub(crate) fn destination_window(&self) -> (i64, i64, i64, i64) {
        let scale = 1.0 / self.inv_scale;
        let corners = [
            (0.0, 0.0),
            (self.src_w as f64, 0.0),
            (0.0, self.src_h as f64),
            (self.src_w as f64, self.src_h as f64),
        ];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (qx, qy) in corners {
            let ux = (qx - self.src_cx) * scale;
            let uy = (qy - self.src_cy) * scale;
            let px = self.cos * ux - self.sin * uy + self.dst_cx;
            let py = self.sin * ux + self.cos * uy + self.dst_cy;
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px);
            y1 = y1.max(py);
        }
        (
            x0.floor() as i64 - 1,
            y0.floor() as i64 - 1,
            x1.ceil() as i64 + 1,
            y1.ceil() as i64 + 1,
        )
    }
}

/// A warped mask stored as a tight window at an integer offset on an
/// unbounded plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct PlacedMask {
    pub x0: i64,
    pub y0: i64,
    pub mask: Option<BinaryMask>,
}

impl PlacedMask {
    /// Warps without clipping. Returns `mask: None` when nothing lands.
    pub(crate) fn warp(mask: &BinaryMask, pose: &AffinePose) -> Result<Self> {
        let warp = InverseWarp::new(mask.width(), mask.height(), pose)?;
        let (wx0, wy0, wx1, wy1) = warp.destination_window();
        let mut hits = Vec::new();
        for y in wy0..wy1 {
            for x in wx0..wx1 {
                if let Some((sx, sy)) = warp.source_pixel(x, y) {
                    if mask.get(sx, sy) {
                        hits.push((x, y));
                    }
                }
            }
        }
        if hits.is_empty() {
            return Ok(Self {
                x0: 0,
                y0: 0,
                mask: None,
            });
        }
        let bx0 = hits.iter().map(|p| p.0).min().unwrap();
        let by0 = hits.iter().map(|p| p.1).min().unwrap();
        let bx1 = hits.iter().map(|p| p.0).max().unwrap();
        let by1 = hits.iter().map(|p| p.1).max().unwrap();
        let mut window = BinaryMask::new((bx1 - bx0 + 1) as u32, (by1 - by0 + 1) as u32);
        for (x, y) in hits {
            window.set((x - bx0) as u32, (y - by0) as u32, true);
        }
        Ok(Self {
            x0: bx0,
            y0: by0,
            mask: Some(window),
        })
    }

    pub(crate) fn shifted(&self, dx: i64, dy: i64) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            mask: self.mask.clone(),
        }
    }

    /// Whether every set pixel lies within a `width × height` canvas.
    pub(crate) fn fits(&self, width: u32, height: u32) -> bool {
        match &self.mask {
            None => false,
            Some(m) => {
                self.x0 >= 0
                    && self.y0 >= 0
                    && self.x0 + m.width() as i64 <= width as i64
                    && self.y0 + m.height() as i64 <= height as i64
            }
        }
    }

    /// Canvas coordinates of set pixels that fall inside the canvas.
    pub(crate) fn canvas_pixels(
        &self,
        width: u32,
        height: u32,
    ) -> impl Iterator<Item = (u32, u32)> + '_ {
        let (x0, y0) = (self.x0, self.y0);
        self.mask
            .iter()
            .flat_map(|m| m.iter_set())
            .filter_map(move |(x, y)| {
                let (cx, cy) = (x0 + x as i64, y0 + y as i64);
                (cx >= 0 && cy >= 0 && cx < width as i64 && cy < height as i64)
                    .then_some((cx as u32, cy as u32))
            })
    }

    pub(crate) fn to_canvas(&self, width: u32, height: u32) -> BinaryMask {
        let mut out = BinaryMask::new(width, height);
        for (x, y) in self.canvas_pixels(width, height) {
            out.set(x, y, true);
        }
        out
    }
}

/// Rotates, scales and translates `mask` onto a `canvas` of the given size
/// using nearest-neighbor inverse mapping. Pixels landing outside the canvas
/// are clipped.
pub fn transform_mask(mask: &BinaryMask, pose: &AffinePose, canvas: (u32, u32)) -> Result<BinaryMask> {
    if canvas.0 == 0 || canvas.1 == 0 {
        return Err(Error::invalid("canvas dimensions must be positive"));
    }
    let warp = InverseWarp::new(mask.width(), mask.height(), pose)?;
    let (wx0, wy0, wx1, wy1) = warp.destination_window();
    let mut out = BinaryMask::new(canvas.0, canvas.1);
    for y in wy0.max(0)..wy1.min(canvas.1 as i64) {
        for x in wx0.max(0)..wx1.min(canvas.0 as i64) {
            if let Some((sx, sy)) = warp.source_pixel(x, y) {
                if mask.get(sx, sy) {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_fixtures() {
        let unit = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let v = iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&BBox::new(1.0, 1.0, 1.0, 1.0), &BBox::new(1.0, 1.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn identity_pose_is_identity() {
        let m = BinaryMask::from_fn(17, 11, |x, y| (x + 2 * y) % 5 < 2);
        assert_eq!(transform_mask(&m, &AffinePose::IDENTITY, (17, 11)).unwrap(), m);
    }

    #[test]
    fn full_turn_matches_zero_rotation() {
        let m = BinaryMask::from_fn(20, 14, |x, y| x > y / 2 && x < 15);
        let p0 = AffinePose::new(0.0, 0.8, (3.0, -2.0)).unwrap();
        let p360 = AffinePose::new(360.0, 0.8, (3.0, -2.0)).unwrap();
        assert_eq!(p360.rotation, 0.0);
        assert_eq!(
            transform_mask(&m, &p0, (30, 30)).unwrap(),
            transform_mask(&m, &p360, (30, 30)).unwrap()
        );
    }

    #[test]
    fn half_scale_area() {
        let m = BinaryMask::full(100, 100);
        let pose = AffinePose::new(0.0, 0.5, (0.0, 0.0)).unwrap();
        let area = transform_mask(&m, &pose, (100, 100)).unwrap().area() as f64;
        assert!((area - 2500.0).abs() <= 0.02 * 2500.0, "area {area}");
    }

    #[test]
    fn rejects_bad_scale() {
        let m = BinaryMask::full(4, 4);
        let bad = AffinePose {
            rotation: 0.0,
            scale: 0.0,
            translation: (0.0, 0.0),
        };
        assert!(transform_mask(&m, &bad, (4, 4)).is_err());
        assert!(AffinePose::new(10.0, 1.5, (0.0, 0.0)).is_err());
        assert!(transform_mask(&m, &AffinePose::IDENTITY, (0, 4)).is_err());
    }

    #[test]
    fn translation_clips_at_canvas_edge() {
        let m = BinaryMask::full(10, 10);
        let pose = AffinePose::new(0.0, 1.0, (5.0, 0.0)).unwrap();
        assert_eq!(transform_mask(&m, &pose, (10, 10)).unwrap().area(), 50);
    }

    #[test]
    fn placed_mask_agrees_with_transform() {
        let m = BinaryMask::from_fn(23, 15, |x, y| (x as i32 - 11).pow(2) + (y as i32 - 7).pow(2) < 40);
        let pose = AffinePose::new(37.0, 0.6, (12.0, 9.0)).unwrap();
        let placed = PlacedMask::warp(&m, &pose).unwrap();
        assert_eq!(placed.to_canvas(50, 40), transform_mask(&m, &pose, (50, 40)).unwrap());
        // integer shifts move the raster without changing it
        let moved = AffinePose::new(37.0, 0.6, (15.0, 7.0)).unwrap();
        assert_eq!(
            placed.shifted(3, -2).to_canvas(50, 40),
            transform_mask(&m, &moved, (50, 40)).unwrap()
        );
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_self_is_one(a in arb_box()) {
            prop_assume!(a.area() > 1e-9);
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }
}

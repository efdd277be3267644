//! Binary masks and the primitive region operations on them.

use image::GrayImage;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// A row-major boolean grid. `true` marks foreground.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

/// Pixel adjacency used for region growing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i32, i32)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

impl BinaryMask {
    /// An all-background mask. Panics if either dimension is zero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        let mut m = Self::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "bit vector of length {} does not match {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    /// Like [`get`](Self::get) but returns `false` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterates `(x, y)` of foreground pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dimensions() != other.dimensions() {
            return Err(Error::DimensionMismatch {
                expected: self.dimensions(),
                actual: other.dimensions(),
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Clears every pixel that is set in `other`.
    pub fn subtract(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn invert(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// 0 = background, 255 = foreground.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    /// Pixels at or above 128 are foreground.
    pub fn from_gray_image(img: &GrayImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::invalid("mask image has zero size"));
        }
        Ok(Self::from_fn(w, h, |x, y| img.get_pixel(x, y)[0] >= 128))
    }
}

/// Labels foreground regions. Returns per-pixel labels (0 = background,
/// regions numbered from 1 in raster-scan discovery order) and the area of
/// each region (index `label - 1`).
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut labels = vec![0u32; mask.bits.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut area = 0usize;
        while let Some(idx) = stack.pop() {
            area += 1;
            let (x, y) = ((idx as i64) % w, (idx as i64) / w);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx as i64, y + dy as i64);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let n = (ny * w + nx) as usize;
                if mask.bits[n] && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub mask: BinaryMask,
    pub area: usize,
}

/// Splits a mask into its connected foreground regions, in raster-scan
/// order of each region's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let (labels, areas) = label_components(mask, connectivity);
    let mut out: Vec<Component> = areas
        .iter()
        .map(|&area| Component {
            mask: BinaryMask::new(mask.width, mask.height),
            area,
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            out[l as usize - 1].mask.bits[i] = true;
        }
    }
    out
}

/// Tight axis-aligned box around the foreground, in continuous pixel
/// coordinates (a single pixel at `(x, y)` spans `(x, y, x+1, y+1)`).
pub fn mask_bbox(mask: &BinaryMask) -> Result<BBox> {
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for (x, y) in mask.iter_set() {
        bounds = Some(match bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    let (x0, y0, x1, y1) = bounds.ok_or(Error::EmptyMask)?;
    Ok(BBox::new(
        x0 as f64,
        y0 as f64,
        x1 as f64 + 1.0,
        y1 as f64 + 1.0,
    ))
}

/// Mean of the foreground pixel indices.
pub fn mask_centroid(mask: &BinaryMask) -> Result<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (x, y) in mask.iter_set() {
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sx / n as f64, sy / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(mask: &mut BinaryMask, x0: u32, y0: u32, w: u32, h: u32) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(x, y, true);
            }
        }
    }

    #[test]
    fn components_of_empty_and_full() {
        assert!(connected_components(&BinaryMask::new(7, 5), Connectivity::Eight).is_empty());
        let comps = connected_components(&BinaryMask::full(7, 5), Connectivity::Eight);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area, 35);
    }

    #[test]
    fn two_separated_blocks() {
        let mut m = BinaryMask::new(12, 8);
        block(&mut m, 0, 0, 3, 3);
        block(&mut m, 6, 4, 3, 3);
        let comps = connected_components(&m, Connectivity::Four);
        assert_eq!(comps.iter().map(|c| c.area).collect::<Vec<_>>(), vec![9, 9]);
        assert_eq!(comps[0].mask.intersection_area(&comps[1].mask).unwrap(), 0);
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let mut m = BinaryMask::new(4, 4);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn bbox_cases() {
        assert_eq!(
            mask_bbox(&BinaryMask::full(9, 4)).unwrap(),
            BBox::new(0.0, 0.0, 9.0, 4.0)
        );
        let mut p = BinaryMask::new(10, 10);
        p.set(3, 5, true);
        assert_eq!(mask_bbox(&p).unwrap(), BBox::new(3.0, 5.0, 4.0, 6.0));

        let mut l = BinaryMask::new(8, 8);
        block(&mut l, 0, 0, 2, 2);
        block(&mut l, 0, 0, 5, 1);
        assert_eq!(mask_bbox(&l).unwrap(), BBox::new(0.0, 0.0, 5.0, 2.0));
        assert!(matches!(mask_bbox(&BinaryMask::new(3, 3)), Err(Error::EmptyMask)));
    }

    #[test]
    fn centroid_cases() {
        let mut sq = BinaryMask::new(20, 20);
        block(&mut sq, 5, 5, 10, 10);
        assert_eq!(mask_centroid(&sq).unwrap(), (9.5, 9.5));
        let mut p = BinaryMask::new(12, 12);
        p.set(7, 2, true);
        assert_eq!(mask_centroid(&p).unwrap(), (7.0, 2.0));
        let mut two = BinaryMask::new(11, 1);
        two.set(0, 0, true);
        two.set(10, 0, true);
        assert_eq!(mask_centroid(&two).unwrap(), (5.0, 0.0));
        assert!(mask_centroid(&BinaryMask::new(2, 2)).is_err());
    }

    #[test]
    fn gray_image_round_trip() {
        let m = BinaryMask::from_fn(9, 7, |x, y| (x * y) % 3 == 0);
        assert_eq!(BinaryMask::from_gray_image(&m.to_gray_image()).unwrap(), m);
    }
}

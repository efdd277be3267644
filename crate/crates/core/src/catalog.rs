//! Product categories and single-item exemplar photos.

use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Product category label. `0` is reserved for background.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl CategoryId {
    pub const BACKGROUND: CategoryId = CategoryId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }

    /// Checks `id <= catalog_size` (ids run `1..=catalog_size`).
    pub fn check_in_catalog(self, catalog_size: usize) -> Result<()> {
        if self.0 as usize > catalog_size {
            return Err(Error::invalid(format!(
                "category {} outside catalog of size {}",
                self.0, catalog_size
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for CategoryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of one camera view of an exemplar.
pub type ViewId = u32;

/// A photo of one isolated item, optionally with its foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarImage {
    pub category: CategoryId,
    pub view: ViewId,
    pub pixels: RgbImage,
    mask: Option<BinaryMask>,
}

impl ExemplarImage {
    pub fn new(category: CategoryId, view: ViewId, pixels: RgbImage) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::invalid("exemplar image is empty"));
        }
        Ok(Self {
            category,
            view,
            pixels,
            mask: None,
        })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    /// Attaches a mask of matching dimensions.
    pub fn with_mask(mut self, mask: BinaryMask) -> Result<Self> {
        if mask.dimensions() != self.dimensions() {
            return Err(Error::DimensionMismatch {
                expected: self.dimensions(),
                actual: mask.dimensions(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// Pixels inside the mask; every pixel when no mask is attached.
    pub fn opaque_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.area(),
            None => (self.pixels.width() * self.pixels.height()) as usize,
        }
    }

    pub fn is_opaque(&self, x: u32, y: u32) -> bool {
        self.mask.as_ref().is_none_or(|m| m.get(x, y))
    }

    /// RGBA rendering with alpha 0 outside the mask.
    pub fn to_rgba(&self) -> RgbaImage {
        RgbaImage::from_fn(self.pixels.width(), self.pixels.height(), |x, y| {
            let [r, g, b] = self.pixels.get_pixel(x, y).0;
            image::Rgba([r, g, b, if self.is_opaque(x, y) { 255 } else { 0 }])
        })
    }
}

//! Ground-truth density maps at 1/8 of the input resolution.
//!
//! Every instance center contributes one Gaussian bump whose mass is exactly
//! one: the kernel is truncated to a disk and renormalized over the cells that
//! fall inside the map, so the total mass equals the instance count even for
//! centers on the image border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image pixels per density cell along each axis.
pub const STRIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    /// Map sized for an image of the given pixel dimensions.
    pub fn for_image(image_width: u32, image_height: u32) -> Self {
        Self::zeros(image_width.div_ceil(STRIDE), image_height.div_ceil(STRIDE))
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} density values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("density value {v} is negative or not finite")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    /// Multiplies every cell by `factor` (must be non-negative).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!("scale factor {factor} must be non-negative")));
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * factor).collect(),
        })
    }

    /// Index of the largest cell, first in raster order on ties.
    pub fn argmax(&self) -> Option<(u32, u32)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i as u32 % self.width, i as u32 / self.width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    /// Standard deviation in cells.
    pub sigma: f64,
    /// Kernel support radius in cells.
    pub truncation_radius: f64,
    /// Geometry-adaptive sigma from nearest-neighbor spacing.
    pub adaptive: bool,
    pub beta: f64,
    pub neighbors: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            truncation_radius: 8.0,
            adaptive: false,
            beta: 0.3,
            neighbors: 3,
            sigma_min: 1.0,
            sigma_max: 4.0,
        }
    }
}

impl KernelParams {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            sigma,
            truncation_radius: (3.0 * sigma).max(Self::default().truncation_radius),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma {} must be positive", self.sigma)));
        }
        if self.truncation_radius.is_nan() || self.truncation_radius < 3.0 * self.sigma {
            return Err(Error::invalid(format!(
                "truncation radius {} below 3 sigma ({})",
                self.truncation_radius,
                3.0 * self.sigma
            )));
        }
        if self.adaptive
            && !(self.beta > 0.0
                && self.neighbors > 0
                && self.sigma_min > 0.0
                && self.sigma_min <= self.sigma_max)
        {
            return Err(Error::invalid("adaptive kernel needs beta > 0, neighbors > 0, 0 < sigma_min <= sigma_max"));
        }
        Ok(())
    }
}

fn bump_sigmas(centers: &[(f64, f64)], params: &KernelParams) -> Vec<f64> {
    if !params.adaptive || centers.len() < 2 {
        return vec![params.sigma; centers.len()];
    }
    centers
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let mut d: Vec<f64> = centers
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(ox, oy))| (ox - x).hypot(oy - y))
                .collect();
            d.sort_by(f64::total_cmp);
            let m = params.neighbors.min(d.len());
            let mean = d[..m].iter().sum::<f64>() / m as f64;
            (params.beta * mean / STRIDE as f64).clamp(params.sigma_min, params.sigma_max)
        })
        .collect()
}

fn add_bump(map: &mut DensityMap, cx: f64, cy: f64, sigma: f64, radius: f64) {
    let (w, h) = (map.width as i64, map.height as i64);
    let x_lo = ((cx - radius - 0.5).floor() as i64).max(0);
    let x_hi = ((cx + radius - 0.5).ceil() as i64).min(w - 1);
    let y_lo = ((cy - radius - 0.5).floor() as i64).max(0);
    let y_hi = ((cy + radius - 0.5).ceil() as i64).min(h - 1);
    let two_var = 2.0 * sigma * sigma;
    let mut cells = Vec::new();
    let mut total = 0.0;
    for j in y_lo..=y_hi {
        for i in x_lo..=x_hi {
            let dx = i as f64 + 0.5 - cx;
            let dy = j as f64 + 0.5 - cy;
            let d2 = dx * dx + dy * dy;
            if d2 <= radius * radius {
                let wgt = (-d2 / two_var).exp();
                total += wgt;
                cells.push(((j * w + i) as usize, wgt));
            }
        }
    }
    if total > 0.0 {
        for (idx, wgt) in cells {
            map.values[idx] += wgt / total;
        }
    } else {
        // support too small to reach any cell center: all mass on the home cell
        let i = (cx.floor() as i64).clamp(0, w - 1);
        let j = (cy.floor() as i64).clamp(0, h - 1);
        map.values[(j * w + i) as usize] += 1.0;
    }
}

/// Density map for instance centers given in image pixels.
pub fn generate_density(
    centers: &[(f64, f64)],
    image_dims: (u32, u32),
    params: &KernelParams,
) -> Result<DensityMap> {
    params.validate()?;
    let (iw, ih) = image_dims;
    if iw == 0 || ih == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    for &(x, y) in centers {
        if !(x >= 0.0 && y >= 0.0 && x <= iw as f64 && y <= ih as f64) {
            return Err(Error::invalid(format!(
                "center ({x}, {y}) outside {iw}x{ih} image"
            )));
        }
    }
    let mut map = DensityMap::for_image(iw, ih);
    for (&(x, y), sigma) in centers.iter().zip(bump_sigmas(centers, params)) {
        let radius = params.truncation_radius.max(3.0 * sigma);
        add_bump(&mut map, x / STRIDE as f64, y / STRIDE as f64, sigma, radius);
    }
    Ok(map)
}

/// Total mass of the map.
pub fn count_from_density(map: &DensityMap) -> f64 {
    map.values.iter().sum()
}

/// Rounds half-up to the nearest integer count.
pub fn round_count(count: f64) -> Result<u64> {
    if count.is_nan() || count < 0.0 {
        return Err(Error::invalid(format!("count {count} must be non-negative")));
    }
    Ok((count + 0.5).floor() as u64)
}

const DMAP_MAGIC: &[u8; 4] = b"DMAP";
const DMAP_VERSION: u32 = 1;

impl DensityMap {
    /// `DMAP` little-endian encoding: magic, version, width, height, then
    /// row-major `f32` values. Values are narrowed to `f32`.
    pub fn to_dmap_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(DMAP_MAGIC);
        out.extend_from_slice(&DMAP_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_dmap_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::DensityFormat(format!(
                "{} bytes is shorter than the 16-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != DMAP_MAGIC {
            return Err(Error::DensityFormat("bad magic, expected \"DMAP\"".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != DMAP_VERSION {
            return Err(Error::DensityFormat(format!("unsupported version {version}")));
        }
        let (width, height) = (word(8), word(12));
        let expected = 16 + 4 * width as usize * height as usize;
        if bytes.len() != expected {
            return Err(Error::DensityFormat(format!(
                "{width}x{height} map needs {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let values = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        DensityMap::from_values(width, height, values)
            .map_err(|e| Error::DensityFormat(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single() {
        let m = generate_density(&[], (64, 40), &KernelParams::default()).unwrap();
        assert_eq!(m.dimensions(), (8, 5));
        assert_eq!(count_from_density(&m), 0.0);
        for c in [(0.0, 0.0), (31.0, 17.5), (64.0, 40.0), (63.9, 0.2)] {
            let m = generate_density(&[c], (64, 40), &KernelParams::default()).unwrap();
            assert!((count_from_density(&m) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_multiple_of_stride_dims() {
        assert_eq!(DensityMap::for_image(65, 17).dimensions(), (9, 3));
    }

    #[test]
    fn out_of_bounds_center_rejected() {
        let p = KernelParams::default();
        assert!(generate_density(&[(-0.5, 3.0)], (32, 32), &p).is_err());
        assert!(generate_density(&[(3.0, 32.5)], (32, 32), &p).is_err());
        assert!(generate_density(&[(f64::NAN, 3.0)], (32, 32), &p).is_err());
    }

    #[test]
    fn kernel_validation() {
        let bad = KernelParams {
            sigma: 3.0,
            truncation_radius: 8.0,
            ..KernelParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(KernelParams::fixed(3.0).validate().is_ok());
    }

    #[test]
    fn tiny_sigma_keeps_unit_mass() {
        let p = KernelParams {
            sigma: 0.01,
            truncation_radius: 0.03,
            ..KernelParams::default()
        };
        let m = generate_density(&[(3.0, 3.0)], (32, 32), &p).unwrap();
        assert_eq!(count_from_density(&m), 1.0);
    }

    #[test]
    fn adaptive_mass_and_sigma_clamp() {
        let p = KernelParams {
            adaptive: true,
            ..KernelParams::default()
        };
        let centers = [(10.0, 10.0), (12.0, 10.0), (200.0, 150.0), (40.0, 90.0)];
        let m = generate_density(&centers, (256, 192), &p).unwrap();
        assert!((count_from_density(&m) - 4.0).abs() < 1e-9);
        let s = bump_sigmas(&centers, &p);
        assert!(s.iter().all(|&v| (p.sigma_min..=p.sigma_max).contains(&v)));
        let tight = [(10.0, 10.0), (11.0, 10.0), (10.0, 11.0), (11.0, 11.0)];
        assert!(bump_sigmas(&tight, &p).iter().all(|&v| v == p.sigma_min));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_count(4.49).unwrap(), 4);
        assert_eq!(round_count(4.5).unwrap(), 5);
        assert_eq!(round_count(0.0).unwrap(), 0);
        assert!(round_count(-0.1).is_err());
    }

    #[test]
    fn linearity_of_count() {
        let m = generate_density(&[(5.0, 5.0), (50.0, 20.0)], (64, 64), &KernelParams::default()).unwrap();
        let c = count_from_density(&m);
        assert!((count_from_density(&m.scaled(2.0).unwrap()) - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn dmap_rejects_corruption() {
        let m = DensityMap::from_values(2, 1, vec![0.5, 0.25]).unwrap();
        let bytes = m.to_dmap_bytes();
        assert_eq!(&bytes[..4], b"DMAP");
        assert_eq!(bytes.len(), 16 + 8);
        assert_eq!(DensityMap::from_dmap_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DensityMap::from_dmap_bytes(&bad).is_err());
        assert!(DensityMap::from_dmap_bytes(&bytes[..20]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(DensityMap::from_dmap_bytes(&v2).is_err());
        let mut neg = bytes;
        neg[16..20].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(DensityMap::from_dmap_bytes(&neg).is_err());
    }
}

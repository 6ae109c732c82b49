//! Rubber-sheet unwrapping of the iris annulus into a fixed polar rectangle.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::{BinaryImage, GrayImage};
use crate::segmentation::SegmentationResult;

/// Angular samples (columns).
pub const POLAR_WIDTH: usize = 448;
/// Radial samples (rows).
pub const POLAR_HEIGHT: usize = 96;

/// Unwrapped iris: columns are angles `2 pi j / 448`, rows are normalized
/// radii `i / 95` from the pupil boundary (row 0) to the limbus (row 95).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarIris {
    intensities: GrayImage,
    mask: BinaryImage,
}

impl PolarIris {
    pub fn new(intensities: GrayImage, mask: BinaryImage) -> Result<Self> {
        let ok = |w: usize, h: usize| w == POLAR_WIDTH && h == POLAR_HEIGHT;
        if !ok(intensities.width(), intensities.height()) || !ok(mask.width(), mask.height()) {
            return Err(Error::DimensionMismatch(format!(
                "polar iris must be {POLAR_WIDTH}x{POLAR_HEIGHT}, got {}x{} with a {}x{} mask",
                intensities.width(),
                intensities.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Self { intensities, mask })
    }

    pub fn intensities(&self) -> &GrayImage {
        &self.intensities
    }

    /// `true` marks an invalid sample.
    pub fn mask(&self) -> &BinaryImage {
        &self.mask
    }

    pub fn into_parts(self) -> (GrayImage, BinaryImage) {
        (self.intensities, self.mask)
    }

    /// Circular shift by `k` columns: output column `j` holds input column `j - k`.
    pub fn rotate_columns(&self, k: isize) -> Self {
        let w = POLAR_WIDTH as isize;
        let src = |j: usize| ((j as isize - k).rem_euclid(w)) as usize;
        Self {
            intensities: GrayImage::from_fn(POLAR_WIDTH, POLAR_HEIGHT, |j, i| self.intensities.get(src(j), i)),
            mask: BinaryImage::from_fn(POLAR_WIDTH, POLAR_HEIGHT, |j, i| self.mask.get(src(j), i)),
        }
    }
}

/// Maps the annulus onto the polar grid by blending, along each angle, the
/// pupil-boundary point and the iris-boundary point (each from its own circle).
pub fn rubber_sheet(img: &GrayImage, seg: &SegmentationResult) -> Result<PolarIris> {
    seg.validate(img.width(), img.height())?;
    let mut data = vec![0u8; POLAR_WIDTH * POLAR_HEIGHT];
    let mut mask = vec![false; POLAR_WIDTH * POLAR_HEIGHT];
    for j in 0..POLAR_WIDTH {
        let theta = 2.0 * PI * j as f64 / POLAR_WIDTH as f64;
        let (xp, yp) = seg.pupil.point_at(theta);
        let (xi, yi) = seg.iris.point_at(theta);
        for i in 0..POLAR_HEIGHT {
            let r = i as f64 / (POLAR_HEIGHT - 1) as f64;
            let x = (1.0 - r) * xp + r * xi;
            let y = (1.0 - r) * yp + r * yi;
            let idx = i * POLAR_WIDTH + j;
            match img.sample_bilinear(x, y) {
                Some(v) => {
                    data[idx] = v.round().clamp(0.0, 255.0) as u8;
                    mask[idx] = seg.noise_mask.get(x.round() as usize, y.round() as usize);
                }
                None => mask[idx] = true,
            }
        }
    }
    PolarIris::new(
        GrayImage::new(POLAR_WIDTH, POLAR_HEIGHT, data)?,
        BinaryImage::new(POLAR_WIDTH, POLAR_HEIGHT, mask)?,
    )
}

/// Histogram equalization over unmasked samples, `v -> round(255 cdf(v) / n)`.
/// Masked samples and the mask are left untouched; a fully masked input comes
/// back unchanged.
pub fn enhance(polar: &PolarIris) -> PolarIris {
    let data = polar.intensities.data();
    let mask = polar.mask.bits();
    let mut hist = [0usize; 256];
    let mut n = 0usize;
    for (&v, &m) in data.iter().zip(mask) {
        if !m {
            hist[v as usize] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return polar.clone();
    }
    let mut lut = [0u8; 256];
    let mut cdf = 0usize;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        lut[v] = (255.0 * cdf as f64 / n as f64).round() as u8;
    }
    let out: Vec<u8> = data
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { lut[v as usize] })
        .collect();
    PolarIris {
        intensities: GrayImage::new(POLAR_WIDTH, POLAR_HEIGHT, out).expect("same shape"),
        mask: polar.mask.clone(),
    }
}

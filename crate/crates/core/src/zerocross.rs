//! Zero-crossing template: the second derivative of a B-spline-smoothed
//! angular signal at dyadic scales, sign-encoded, matched by masked and
//! rotation-tolerant Hamming distance.

use crate::error::{Error, Result};
use crate::imaging::BinaryImage;
use crate::normalization::{PolarIris, POLAR_HEIGHT, POLAR_WIDTH};

/// 64-bit words per polar row (448 = 7 * 64).
pub const WORDS_PER_ROW: usize = POLAR_WIDTH / 64;

pub const DEFAULT_SCALES: [u32; 2] = [2, 4];
pub const DEFAULT_MAX_SHIFT: usize = 8;

/// A 448x96 bit grid, row-major; column `c` sits at bit `c % 64` of word `c / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPlane {
    rows: Vec<[u64; WORDS_PER_ROW]>,
}

impl BitPlane {
    pub fn zeros() -> Self {
        Self {
            rows: vec![[0; WORDS_PER_ROW]; POLAR_HEIGHT],
        }
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut plane = Self::zeros();
        for (row, words) in plane.rows.iter_mut().enumerate() {
            for col in 0..POLAR_WIDTH {
                if f(col, row) {
                    words[col / 64] |= 1 << (col % 64);
                }
            }
        }
        plane
    }

    pub fn from_image(img: &BinaryImage) -> Result<Self> {
        if img.width() != POLAR_WIDTH || img.height() != POLAR_HEIGHT {
            return Err(Error::DimensionMismatch(format!(
                "bit plane must be {POLAR_WIDTH}x{POLAR_HEIGHT}, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(Self::from_fn(|c, r| img.get(c, r)))
    }

    pub fn to_image(&self) -> BinaryImage {
        BinaryImage::from_fn(POLAR_WIDTH, POLAR_HEIGHT, |c, r| self.get(c, r))
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.rows[row][col / 64] >> (col % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.rows.iter().flatten().map(|w| w.count_ones()).sum()
    }

    pub fn not(&self) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.map(|w| !w)).collect(),
        }
    }

    /// Circular column shift: output column `c` holds input column `c + k`.
    pub fn shifted(&self, k: isize) -> Self {
        let k = k.rem_euclid(POLAR_WIDTH as isize) as usize;
        Self {
            rows: self.rows.iter().map(|r| rotate_row(r, k)).collect(),
        }
    }

    /// LSB-first packed bytes, row-major (5376 bytes).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.rows.iter().flatten().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::BYTE_LEN {
            return Err(Error::DimensionMismatch(format!(
                "packed plane needs {} bytes, got {}",
                Self::BYTE_LEN,
                bytes.len()
            )));
        }
        let mut words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let rows = (0..POLAR_HEIGHT)
            .map(|_| std::array::from_fn(|_| words.next().expect("length checked")))
            .collect();
        Ok(Self { rows })
    }

    pub const BYTE_LEN: usize = POLAR_WIDTH * POLAR_HEIGHT / 8;
}

/// `out[c] = row[(c + k) mod 448]` for `0 <= k < 448`.
fn rotate_row(row: &[u64; WORDS_PER_ROW], k: usize) -> [u64; WORDS_PER_ROW] {
    let q = k / 64;
    let r = k % 64;
    std::array::from_fn(|i| {
        let lo = row[(i + q) % WORDS_PER_ROW];
        if r == 0 {
            lo
        } else {
            let hi = row[(i + q + 1) % WORDS_PER_ROW];
            (lo >> r) | (hi << (64 - r))
        }
    })
}

/// One sign plane per scale plus the polar validity mask (`true` = invalid).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ZeroCrossTemplate {
    planes: Vec<BitPlane>,
    mask: BitPlane,
}

impl ZeroCrossTemplate {
    pub fn new(planes: Vec<BitPlane>, mask: BitPlane) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidArgument("template needs at least one scale".into()));
        }
        Ok(Self { planes, mask })
    }

    pub fn planes(&self) -> &[BitPlane] {
        &self.planes
    }

    pub fn mask(&self) -> &BitPlane {
        &self.mask
    }

    pub fn scale_count(&self) -> usize {
        self.planes.len()
    }

    /// Circularly shifts bits and mask together (see [`BitPlane::shifted`]).
    pub fn shifted(&self, k: isize) -> Self {
        Self {
            planes: self.planes.iter().map(|p| p.shifted(k)).collect(),
            mask: self.mask.shifted(k),
        }
    }

    /// Inverts every sign bit; the mask is kept.
    pub fn complement(&self) -> Self {
        Self {
            planes: self.planes.iter().map(BitPlane::not).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Encoder output plus the response variance used to flag flat inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCrossEncoding {
    pub template: ZeroCrossTemplate,
    /// Variance of the wavelet response over every scale and sample,
    /// ignoring the mask.
    pub response_variance: f64,
}

impl ZeroCrossEncoding {
    pub fn is_low_information(&self) -> bool {
        self.response_variance < 1e-6
    }
}

fn check_scale(s: u32) -> Result<()> {
    match s {
        1 | 2 | 4 | 8 => Ok(()),
        _ => Err(Error::InvalidArgument(format!("scale {s} is not one of 1, 2, 4, 8"))),
    }
}

fn cubic_bspline(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        2.0 / 3.0 - t * t + t * t * t / 2.0
    } else if t < 2.0 {
        (2.0 - t).powi(3) / 6.0
    } else {
        0.0
    }
}

/// Taps of `(1/s) B3(x/s)` at integer `x` in `[-2s+1, 2s-1]`. They sum to one.
pub fn smoothing_kernel(s: u32) -> Vec<f64> {
    let s = s as i64;
    (-2 * s + 1..2 * s)
        .map(|x| cubic_bspline(x as f64 / s as f64) / s as f64)
        .collect()
}

/// `s^2 d^2/dx^2 (f * theta_s)` on a circular signal, with a cubic B-spline
/// smoothing function and a central second difference.
pub fn dyadic_wavelet_1d(signal: &[f64], s: u32) -> Result<Vec<f64>> {
    check_scale(s)?;
    let n = signal.len();
    if n < 4 * s as usize {
        return Err(Error::InvalidArgument(format!(
            "signal of length {n} too short for scale {s}"
        )));
    }
    let taps = smoothing_kernel(s);
    let half = taps.len() / 2;
    let smoothed: Vec<f64> = (0..n)
        .map(|x| {
            taps.iter()
                .enumerate()
                .map(|(t, w)| w * signal[(x + n * 2 + half - t) % n])
                .sum()
        })
        .collect();
    let s2 = (s * s) as f64;
    Ok((0..n)
        .map(|x| s2 * (smoothed[(x + 1) % n] - 2.0 * smoothed[x] + smoothed[(x + n - 1) % n]))
        .collect())
}

/// 3x3 detector operator (every row `[1, 2, 1]`, divided by 12); columns wrap
/// around the angle, rows replicate at the pupil and limbus edges.
fn detector_smooth(polar: &PolarIris) -> Vec<Vec<f64>> {
    const ROW_WEIGHTS: [f64; 3] = [1.0, 2.0, 1.0];
    let img = polar.intensities();
    (0..POLAR_HEIGHT)
        .map(|row| {
            (0..POLAR_WIDTH)
                .map(|col| {
                    let mut acc = 0.0;
                    for dr in [-1isize, 0, 1] {
                        let r = (row as isize + dr).clamp(0, POLAR_HEIGHT as isize - 1) as usize;
                        for (i, w) in ROW_WEIGHTS.iter().enumerate() {
                            let c = (col + POLAR_WIDTH + i - 1) % POLAR_WIDTH;
                            acc += w * img.get(c, r) as f64;
                        }
                    }
                    acc / 12.0
                })
                .collect()
        })
        .collect()
}

pub fn encode(polar: &PolarIris, scales: &[u32]) -> Result<ZeroCrossTemplate> {
    encode_detailed(polar, scales).map(|e| e.template)
}

/// Smooths with the detector operator, runs the 1-D transform along every
/// row at each scale and stores `response >= 0` as the bit.
pub fn encode_detailed(polar: &PolarIris, scales: &[u32]) -> Result<ZeroCrossEncoding> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one scale is required".into()));
    }
    for &s in scales {
        check_scale(s)?;
    }
    let smoothed = detector_smooth(polar);
    let mut planes = Vec::with_capacity(scales.len());
    let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
    for &s in scales {
        let mut plane = BitPlane::zeros();
        for (row, signal) in smoothed.iter().enumerate() {
            let response = dyadic_wavelet_1d(signal, s)?;
            for (col, &v) in response.iter().enumerate() {
                if v >= 0.0 {
                    plane.rows[row][col / 64] |= 1 << (col % 64);
                }
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        planes.push(plane);
    }
    let mean = sum / count as f64;
    Ok(ZeroCrossEncoding {
        template: ZeroCrossTemplate {
            planes,
            mask: BitPlane::from_image(polar.mask())?,
        },
        response_variance: (sum_sq / count as f64 - mean * mean).max(0.0),
    })
}

/// Masked Hamming distance at a single shift: `b` is read at column `c + k`.
/// `None` when no bit is jointly valid.
pub fn hamming_at_shift(a: &ZeroCrossTemplate, b: &ZeroCrossTemplate, k: isize) -> Option<f64> {
    let k = k.rem_euclid(POLAR_WIDTH as isize) as usize;
    let mut valid_words = Vec::with_capacity(POLAR_HEIGHT);
    let mut valid = 0u32;
    for (ma, mb) in a.mask.rows.iter().zip(&b.mask.rows) {
        let mb = rotate_row(mb, k);
        let row: [u64; WORDS_PER_ROW] = std::array::from_fn(|i| !(ma[i] | mb[i]));
        valid += row.iter().map(|w| w.count_ones()).sum::<u32>();
        valid_words.push(row);
    }
    if valid == 0 {
        return None;
    }
    let mut total = 0.0;
    for (pa, pb) in a.planes.iter().zip(&b.planes) {
        let mut differing = 0u32;
        for ((ra, rb), v) in pa.rows.iter().zip(&pb.rows).zip(&valid_words) {
            let rb = rotate_row(rb, k);
            for i in 0..WORDS_PER_ROW {
                differing += ((ra[i] ^ rb[i]) & v[i]).count_ones();
            }
        }
        total += differing as f64 / valid as f64;
    }
    Some(total / a.planes.len() as f64)
}

/// Minimum over circular shifts `-max_shift..=max_shift` of the masked
/// Hamming distance averaged over scales.
pub fn match_templates(a: &ZeroCrossTemplate, b: &ZeroCrossTemplate, max_shift: usize) -> Result<f64> {
    if a.planes.len() != b.planes.len() {
        return Err(Error::DimensionMismatch(format!(
            "templates have {} and {} scales",
            a.planes.len(),
            b.planes.len()
        )));
    }
    let max_shift = max_shift.min(POLAR_WIDTH / 2) as isize;
    (-max_shift..=max_shift)
        .filter_map(|k| hamming_at_shift(a, b, k))
        .min_by(f64::total_cmp)
        .ok_or(Error::Incomparable)
}

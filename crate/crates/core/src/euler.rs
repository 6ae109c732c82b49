//! Euler-number codes over the four most significant bit planes of the
//! masked polar iris, compared by Mahalanobis distance.

use crate::error::{Error, Result};
use crate::imaging::{bit_planes, BinaryImage, GrayImage};
use crate::normalization::PolarIris;

/// Euler numbers of planes b7, b6, b5, b4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EulerCode(pub [i32; 4]);

impl EulerCode {
    pub fn as_f64(&self) -> [f64; 4] {
        self.0.map(f64::from)
    }
}

/// Components (8-connected foreground) minus holes (4-connected background
/// not touching the border), counted with 2x2 bit quads over the zero-padded
/// image.
pub fn euler_number(b: &BinaryImage) -> i32 {
    let (w, h) = (b.width() as isize, b.height() as isize);
    let px = |x: isize, y: isize| -> u8 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            b.get(x as usize, y as usize) as u8
        }
    };
    let (mut q1, mut q3, mut qd) = (0i64, 0i64, 0i64);
    for y in -1..h {
        for x in -1..w {
            let (a, c) = (px(x, y), px(x + 1, y));
            let (d, e) = (px(x, y + 1), px(x + 1, y + 1));
            match a + c + d + e {
                1 => q1 += 1,
                3 => q3 += 1,
                2 if a == e => qd += 1,
                _ => {}
            }
        }
    }
    ((q1 - q3 - 2 * qd) / 4) as i32
}

/// Union of invalid regions (`true` = invalid).
pub fn common_mask(ma: &BinaryImage, mb: &BinaryImage) -> Result<BinaryImage> {
    if !ma.same_shape(mb) {
        return Err(Error::DimensionMismatch(format!(
            "masks are {}x{} and {}x{}",
            ma.width(),
            ma.height(),
            mb.width(),
            mb.height()
        )));
    }
    let bits = ma.bits().iter().zip(mb.bits()).map(|(a, b)| a | b).collect();
    BinaryImage::new(ma.width(), ma.height(), bits)
}

/// Zeroes pixels under `cm`, splits into bit planes and takes the Euler
/// number of b7..b4.
pub fn euler_code(polar: &PolarIris, cm: &BinaryImage) -> Result<EulerCode> {
    let img = polar.intensities();
    if img.width() != cm.width() || img.height() != cm.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, polar image is {}x{}",
            cm.width(),
            cm.height(),
            img.width(),
            img.height()
        )));
    }
    let masked: Vec<u8> = img
        .data()
        .iter()
        .zip(cm.bits())
        .map(|(&v, &m)| if m { 0 } else { v })
        .collect();
    let planes = bit_planes(&GrayImage::new(img.width(), img.height(), masked)?);
    Ok(EulerCode(std::array::from_fn(|i| euler_number(&planes[i]))))
}

pub type Matrix4 = [[f64; 4]; 4];

/// Regularized covariance `S`; `epsilon` is the ridge already added to the
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel {
    s: Matrix4,
    epsilon: f64,
}

impl CovarianceModel {
    /// Wraps an existing matrix after checking symmetry and positive definiteness.
    pub fn new(s: Matrix4, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be finite and >= 0")));
        }
        for i in 0..4 {
            for j in 0..4 {
                if !s[i][j].is_finite() || s[i][j] != s[j][i] {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        cholesky(&s)?;
        Ok(Self { s, epsilon })
    }

    pub fn identity() -> Self {
        let mut s = [[0.0; 4]; 4];
        for (i, row) in s.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { s, epsilon: 1.0 }
    }

    /// Sample covariance (n - 1 denominator) plus `epsilon * I`.
    pub fn from_samples(samples: &[[f64; 4]], epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
        }
        let mut s = sample_covariance(samples)?;
        for (i, row) in s.iter_mut().enumerate() {
            row[i] += epsilon;
        }
        Self::new(s, epsilon)
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.s
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Lower-triangular `L` with `S = L L^T`.
    pub fn cholesky_factor(&self) -> Result<Matrix4> {
        cholesky(&self.s)
    }
}

/// Covariance of a code population. With `epsilon = None` the ridge is
/// `max(1e-3 * mean sample variance, 1.0)`.
pub fn estimate_covariance(codes: &[EulerCode], epsilon: Option<f64>) -> Result<CovarianceModel> {
    let samples: Vec<[f64; 4]> = codes.iter().map(EulerCode::as_f64).collect();
    let eps = match epsilon {
        Some(e) => e,
        None => {
            let raw = sample_covariance(&samples)?;
            let mean_diag = (0..4).map(|i| raw[i][i]).sum::<f64>() / 4.0;
            (1e-3 * mean_diag).max(1.0)
        }
    };
    CovarianceModel::from_samples(&samples, eps)
}

fn sample_covariance(samples: &[[f64; 4]]) -> Result<Matrix4> {
    if samples.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "covariance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 4];
    for x in samples {
        for i in 0..4 {
            mean[i] += x[i] / n;
        }
    }
    let mut s = [[0.0; 4]; 4];
    for x in samples {
        for i in 0..4 {
            for j in i..4 {
                s[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..4 {
        for j in i..4 {
            s[i][j] /= n - 1.0;
            s[j][i] = s[i][j];
        }
    }
    Ok(s)
}

fn cholesky(s: &Matrix4) -> Result<Matrix4> {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = s[i][i] - dot;
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (s[i][j] - dot) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// `sqrt(d^T S^-1 d)` for real vectors, via a Cholesky solve.
pub fn mahalanobis_f64(x: &[f64; 4], y: &[f64; 4], model: &CovarianceModel) -> Result<f64> {
    let l = model.cholesky_factor()?;
    // forward solve L z = d; then d^T S^-1 d = |z|^2
    let mut z = [0.0; 4];
    for i in 0..4 {
        let dot: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (x[i] - y[i] - dot) / l[i][i];
    }
    Ok(z.iter().map(|v| v * v).sum::<f64>().sqrt())
}

pub fn mahalanobis(x: &EulerCode, y: &EulerCode, model: &CovarianceModel) -> Result<f64> {
    mahalanobis_f64(&x.as_f64(), &y.as_f64(), model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalization::{POLAR_HEIGHT, POLAR_WIDTH};

    fn img(w: usize, h: usize, rows: &[&str]) -> BinaryImage {
        BinaryImage::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'1')
    }

    #[test]
    fn euler_small_cases() {
        assert_eq!(euler_number(&BinaryImage::filled(5, 5, false)), 0);
        assert_eq!(euler_number(&BinaryImage::filled(3, 3, true)), 1);
        assert_eq!(euler_number(&img(3, 3, &["111", "101", "111"])), 0);
        // diagonal neighbours are one component under 8-connectivity
        assert_eq!(euler_number(&img(2, 2, &["10", "01"])), 1);
        // two rings
        assert_eq!(euler_number(&img(7, 3, &["1110111", "1010101", "1110111"])), -2 + 2);
        assert_eq!(euler_number(&img(5, 1, &["10101"])), 3);
    }

    #[test]
    fn common_mask_rules() {
        let a = img(3, 2, &["101", "010"]);
        let zeros = BinaryImage::filled(3, 2, false);
        let ones = BinaryImage::filled(3, 2, true);
        assert_eq!(common_mask(&a, &zeros).unwrap(), a);
        assert_eq!(common_mask(&a, &ones).unwrap(), ones);
        assert!(common_mask(&a, &BinaryImage::filled(2, 3, false)).is_err());
    }

    fn polar(v: u8) -> PolarIris {
        PolarIris::new(
            GrayImage::filled(POLAR_WIDTH, POLAR_HEIGHT, v),
            BinaryImage::filled(POLAR_WIDTH, POLAR_HEIGHT, false),
        )
        .unwrap()
    }

    #[test]
    fn euler_code_examples() {
        let none = BinaryImage::filled(POLAR_WIDTH, POLAR_HEIGHT, false);
        let all = BinaryImage::filled(POLAR_WIDTH, POLAR_HEIGHT, true);
        assert_eq!(euler_code(&polar(240), &none).unwrap(), EulerCode([1, 1, 1, 1]));
        assert_eq!(euler_code(&polar(240), &all).unwrap(), EulerCode([0, 0, 0, 0]));
        // 0b1010_0000
        assert_eq!(euler_code(&polar(160), &none).unwrap(), EulerCode([1, 0, 1, 0]));
        assert!(euler_code(&polar(1), &BinaryImage::filled(3, 3, false)).is_err());
    }

    #[test]
    fn identical_codes_give_pure_ridge() {
        let codes = vec![EulerCode([3, -1, 4, 1]); 5];
        let m = estimate_covariance(&codes, None).unwrap();
        assert_eq!(m.epsilon(), 1.0);
        assert_eq!(*m.matrix(), *CovarianceModel::identity().matrix());
        let m = estimate_covariance(&codes, Some(0.25)).unwrap();
        assert_eq!(m.matrix()[2][2], 0.25);
        assert_eq!(m.matrix()[0][1], 0.0);
    }

    #[test]
    fn two_codes_are_enough() {
        let m = estimate_covariance(&[EulerCode([1, 2, 3, 4]), EulerCode([3, 2, 1, 0])], None).unwrap();
        assert_eq!(m.matrix()[0][0], 2.0 + 1.0);
        assert_eq!(m.matrix()[0][3], -4.0);
    }

    #[test]
    fn covariance_needs_two_codes() {
        assert!(matches!(
            estimate_covariance(&[EulerCode::default()], None),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let id = CovarianceModel::identity();
        let x = EulerCode([3, 4, 0, 0]);
        let zero = EulerCode::default();
        assert_eq!(mahalanobis(&x, &x, &id).unwrap(), 0.0);
        assert!((mahalanobis(&x, &zero, &id).unwrap() - 5.0).abs() < 1e-12);
        let mut s = *id.matrix();
        s[0][0] = 4.0;
        let m = CovarianceModel::new(s, 0.0).unwrap();
        assert!((mahalanobis(&EulerCode([2, 0, 0, 0]), &zero, &m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let mut s = *CovarianceModel::identity().matrix();
        s[3][3] = -1.0;
        assert!(matches!(CovarianceModel::new(s, 0.0), Err(Error::NotPositiveDefinite)));
        s[3][3] = 1.0;
        s[0][1] = 0.5;
        assert!(matches!(CovarianceModel::new(s, 0.0), Err(Error::NotPositiveDefinite)));
    }
}

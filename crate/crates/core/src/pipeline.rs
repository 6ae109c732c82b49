//! One image through segmentation, unwrapping, enhancement and all three
//! encoders, and matching of a probe against enrolled templates.

use crate::error::{Error, Result};
use crate::euler::{common_mask, euler_code, mahalanobis, CovarianceModel, EulerCode};
use crate::fusion::{fuse, normalize, Algorithm, FusionRule, MatchScore, NormalizedScore, ScoreRange};
use crate::gasel::{extract_raw, GaSelection, RawFeatureVector};
use crate::imaging::GrayImage;
use crate::normalization::{enhance, rubber_sheet, PolarIris};
use crate::segmentation::{segment, SegmentationConfig, SegmentationResult};
use crate::zerocross::{encode, match_templates, ZeroCrossTemplate, DEFAULT_MAX_SHIFT, DEFAULT_SCALES};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub scales: Vec<u32>,
    pub max_shift: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationConfig::default(),
            scales: DEFAULT_SCALES.to_vec(),
            max_shift: DEFAULT_MAX_SHIFT,
        }
    }
}

/// The three per-image templates.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub zerocross: ZeroCrossTemplate,
    /// Computed with the image's own mask.
    pub euler: EulerCode,
    pub features: RawFeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSample {
    pub segmentation: SegmentationResult,
    /// Enhanced polar image.
    pub polar: PolarIris,
    pub templates: Templates,
}

pub fn process(img: &GrayImage, cfg: &PipelineConfig) -> Result<ProcessedSample> {
    let seg = segment(img, &cfg.segmentation)?;
    process_segmented(img, seg, cfg)
}

/// Skips segmentation, e.g. when ground truth is known.
pub fn process_segmented(img: &GrayImage, seg: SegmentationResult, cfg: &PipelineConfig) -> Result<ProcessedSample> {
    let polar = enhance(&rubber_sheet(img, &seg)?);
    let zerocross = encode(&polar, &cfg.scales)?;
    let euler = euler_code(&polar, polar.mask())?;
    let features = extract_raw(&polar)?;
    Ok(ProcessedSample {
        segmentation: seg,
        polar,
        templates: Templates { zerocross, euler, features },
    })
}

/// Raw distances, in [`Algorithm::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScores(pub [f64; 3]);

impl RawScores {
    pub fn get(&self, alg: Algorithm) -> f64 {
        self.0[alg.id() as usize]
    }

    pub fn match_scores(&self) -> [MatchScore; 3] {
        Algorithm::ALL.map(|a| MatchScore::distance(a, self.get(a)))
    }
}

/// Models shared by every comparison against a gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    pub covariance: CovarianceModel,
    pub selection: GaSelection,
    pub max_shift: usize,
}

impl Matcher {
    /// Compares a probe with enrolled templates. The probe's Euler code is
    /// recomputed under the union of both masks; a pair with no jointly valid
    /// bits or features scores the maximal distance 1.
    pub fn compare(&self, enrolled: &Templates, probe: &ProcessedSample) -> Result<RawScores> {
        let zc = or_max(match_templates(&enrolled.zerocross, &probe.templates.zerocross, self.max_shift))?;
        let cm = common_mask(probe.polar.mask(), &enrolled.zerocross.mask().to_image())?;
        let probe_code = euler_code(&probe.polar, &cm)?;
        let eu = mahalanobis(&enrolled.euler, &probe_code, &self.covariance)?;
        let ga = or_max(self.selection.distance(&enrolled.features, &probe.templates.features))?;
        Ok(RawScores([zc, eu, ga]))
    }

    /// Compares two stored template sets; Euler codes are used as stored.
    pub fn compare_templates(&self, a: &Templates, b: &Templates) -> Result<RawScores> {
        let zc = or_max(match_templates(&a.zerocross, &b.zerocross, self.max_shift))?;
        let eu = mahalanobis(&a.euler, &b.euler, &self.covariance)?;
        let ga = or_max(self.selection.distance(&a.features, &b.features))?;
        Ok(RawScores([zc, eu, ga]))
    }
}

fn or_max(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Incomparable) => Ok(1.0),
        other => other,
    }
}

/// Per-algorithm ranges in [`Algorithm::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRanges(pub [ScoreRange; 3]);

impl ScoreRanges {
    /// Zero-crossing and GA distances live in [0, 1]; the Euler distance is
    /// unbounded and defaults to [0, 10].
    pub fn default_ranges() -> Self {
        Self([
            ScoreRange { algorithm: Algorithm::ZeroCross, min: 0.0, max: 1.0 },
            ScoreRange { algorithm: Algorithm::Euler, min: 0.0, max: 10.0 },
            ScoreRange { algorithm: Algorithm::GaSel, min: 0.0, max: 1.0 },
        ])
    }

    /// Observed `[min, max]` of each algorithm over `scores`; a degenerate
    /// spread keeps the default range.
    pub fn observed(scores: &[RawScores]) -> Self {
        let defaults = Self::default_ranges();
        Self(Algorithm::ALL.map(|a| {
            let (lo, hi) = scores
                .iter()
                .map(|s| s.get(a))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ScoreRange::new(a, lo, hi).unwrap_or(defaults.0[a.id() as usize])
        }))
    }

    pub fn get(&self, alg: Algorithm) -> &ScoreRange {
        &self.0[alg.id() as usize]
    }

    pub fn normalize(&self, raw: &RawScores) -> Result<[NormalizedScore; 3]> {
        let scores = raw.match_scores();
        let mut out = [NormalizedScore { algorithm: Algorithm::ZeroCross, value: 0.0 }; 3];
        for (slot, (score, range)) in out.iter_mut().zip(scores.iter().zip(&self.0)) {
            *slot = normalize(score, range)?;
        }
        Ok(out)
    }

    pub fn fuse(&self, raw: &RawScores, rule: &FusionRule) -> Result<f64> {
        fuse(&self.normalize(raw)?, rule)
    }
}

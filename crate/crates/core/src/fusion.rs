//! Score normalization onto a common similarity scale, fusion rules and the
//! threshold decision.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    ZeroCross,
    Euler,
    GaSel,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::ZeroCross, Algorithm::Euler, Algorithm::GaSel];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ZeroCross => "zerocross",
            Algorithm::Euler => "euler",
            Algorithm::GaSel => "gasel",
        }
    }

    /// Every matcher in this crate reports a distance.
    pub fn polarity(self) -> Polarity {
        Polarity::Distance
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Distance,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub algorithm: Algorithm,
    pub raw: f64,
    pub polarity: Polarity,
}

impl MatchScore {
    pub fn distance(algorithm: Algorithm, raw: f64) -> Self {
        Self { algorithm, raw, polarity: Polarity::Distance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRange {
    pub algorithm: Algorithm,
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn new(algorithm: Algorithm, min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidArgument(format!(
                "score range for {algorithm} needs min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { algorithm, min, max })
    }
}

/// Normalized score, oriented so that higher means more genuine.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormalizedScore {
    pub algorithm: Algorithm,
    pub value: f64,
}

/// Min-max scaling clamped to `[0, 1]`; distances are flipped to `1 - s`.
pub fn normalize(score: &MatchScore, range: &ScoreRange) -> Result<NormalizedScore> {
    if score.algorithm != range.algorithm {
        return Err(Error::InvalidArgument(format!(
            "{} score with a {} range",
            score.algorithm, range.algorithm
        )));
    }
    if !(range.min < range.max) {
        return Err(Error::InvalidArgument("score range needs min < max".into()));
    }
    if !score.raw.is_finite() {
        return Err(Error::InvalidArgument("raw score must be finite".into()));
    }
    let s = ((score.raw - range.min) / (range.max - range.min)).clamp(0.0, 1.0);
    let value = match score.polarity {
        Polarity::Similarity => s,
        Polarity::Distance => 1.0 - s,
    };
    Ok(NormalizedScore { algorithm: score.algorithm, value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionRule {
    SumAverage,
    Min,
    Max,
    /// Weights in [`Algorithm::ALL`] order.
    Weighted([f64; 3]),
}

impl FusionRule {
    pub fn name(&self) -> &'static str {
        match self {
            FusionRule::SumAverage => "sum",
            FusionRule::Min => "min",
            FusionRule::Max => "max",
            FusionRule::Weighted(_) => "weighted",
        }
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    /// Parses `sum`, `min`, `max`; weighted rules are built from config weights.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" | "sum-average" | "average" => Ok(FusionRule::SumAverage),
            "min" => Ok(FusionRule::Min),
            "max" => Ok(FusionRule::Max),
            other => Err(Error::InvalidArgument(format!("unknown fusion rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionPolicy {
    pub rule: FusionRule,
    pub threshold: f64,
}

impl FusionPolicy {
    pub fn new(rule: FusionRule, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
        }
        if let FusionRule::Weighted(w) = rule {
            check_weights(&w)?;
        }
        Ok(Self { rule, threshold })
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.45;

impl Default for FusionPolicy {
    fn default() -> Self {
        Self { rule: FusionRule::SumAverage, threshold: DEFAULT_THRESHOLD }
    }
}

fn check_weights(w: &[f64; 3]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fusion weights {w:?} must be nonnegative and sum to 1"
        )));
    }
    Ok(())
}

/// Combines one normalized score per algorithm.
pub fn fuse(scores: &[NormalizedScore], rule: &FusionRule) -> Result<f64> {
    let mut by_alg = [None; 3];
    for s in scores {
        let slot = &mut by_alg[s.algorithm.id() as usize];
        if slot.is_some() {
            return Err(Error::InvalidArgument(format!("duplicate {} score", s.algorithm)));
        }
        *slot = Some(s.value);
    }
    let mut v = [0.0; 3];
    for (alg, slot) in Algorithm::ALL.iter().zip(by_alg) {
        v[alg.id() as usize] = slot.ok_or_else(|| Error::InvalidArgument(format!("missing {alg} score")))?;
    }
    Ok(match rule {
        FusionRule::SumAverage => v.iter().sum::<f64>() / 3.0,
        FusionRule::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
        FusionRule::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        FusionRule::Weighted(w) => {
            check_weights(w)?;
            w.iter().zip(&v).map(|(w, s)| w * s).sum()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    /// 0 for an intra-class (accepted) comparison, 1 otherwise.
    pub fn bit(self) -> u8 {
        match self {
            Decision::Accept => 0,
            Decision::Reject => 1,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "ACCEPT",
            Decision::Reject => "REJECT",
        })
    }
}

/// Accept iff `fused >= threshold`.
pub fn decide(fused: f64, threshold: f64) -> Decision {
    if fused >= threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

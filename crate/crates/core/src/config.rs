//! Run settings as line-oriented `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::fusion::{FusionPolicy, FusionRule};
use crate::gasel::GaConfig;
use crate::pipeline::PipelineConfig;

pub const CONFIG_ENV: &str = "IRISFUSE_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every other seed is drawn from it.
    pub seed: u64,
    pub identities: usize,
    pub samples: usize,
    pub pipeline: PipelineConfig,
    /// `rng_seed` is ignored in favour of [`RunConfig::seeds`].
    pub ga: GaConfig,
    pub ga_top_k: usize,
    pub training_identities: usize,
    pub training_samples: usize,
    pub fusion: FusionPolicy,
    /// Used when the rule is `weighted`.
    pub fusion_weights: [f64; 3],
    pub threshold_count: usize,
    pub max_failure_rate: f64,
    pub gallery: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvaluationConfig::default();
        Self {
            seed: 7,
            identities: 50,
            samples: 4,
            pipeline: eval.pipeline,
            ga: eval.ga,
            ga_top_k: eval.ga_top_k,
            training_identities: eval.training_identities,
            training_samples: eval.training_samples,
            fusion: FusionPolicy::default(),
            fusion_weights: [1.0 / 3.0; 3],
            threshold_count: eval.threshold_count,
            max_failure_rate: eval.max_failure_rate,
            gallery: None,
            out: None,
        }
    }
}

/// Seeds derived from the master seed, in draw order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub corpus: u64,
    pub training: u64,
    pub ga: u64,
    pub trials: u64,
}

impl RunConfig {
    pub fn seeds(&self) -> Seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Seeds {
            corpus: rng.random(),
            training: rng.random(),
            ga: rng.random(),
            trials: rng.random(),
        }
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig { rng_seed: self.seeds().ga, ..self.ga.clone() }
    }

    pub fn evaluation_config(&self) -> EvaluationConfig {
        let seeds = self.seeds();
        EvaluationConfig {
            pipeline: self.pipeline.clone(),
            ga: self.ga_config(),
            ga_top_k: self.ga_top_k,
            training_identities: self.training_identities,
            training_samples: self.training_samples,
            training_seed: seeds.training,
            fusion_rule: self.fusion.rule,
            threshold_count: self.threshold_count,
            trial_seed: seeds.trials,
            max_failure_rate: self.max_failure_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let seg = &self.pipeline.segmentation;
        for (name, r) in [("pupil", seg.pupil_radius), ("iris", seg.iris_radius)] {
            if r.min == 0 || r.min > r.max {
                return bad(format!("{name} radius range {}..{} is empty", r.min, r.max));
            }
        }
        if !(seg.grad_threshold.is_finite() && seg.grad_threshold >= 0.0) {
            return bad("seg.grad_threshold must be >= 0".into());
        }
        if !(seg.max_center_offset.is_finite() && seg.max_center_offset >= 0.0) {
            return bad("seg.max_center_offset must be >= 0".into());
        }
        if let Some((lo, hi)) = seg.eyelid_a_factor {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("eyelid curvature range {lo}..{hi} is invalid"));
            }
        }
        if !(seg.eyelid_margin.is_finite() && seg.eyelid_margin >= 0.0) {
            return bad("seg.eyelid_margin must be >= 0".into());
        }
        if self.pipeline.scales.is_empty() || self.pipeline.scales.iter().any(|&s| s == 0) {
            return bad("zc.scales needs at least one positive scale".into());
        }
        self.ga.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.ga_top_k == 0 {
            return bad("ga.top_k must be >= 1".into());
        }
        if self.identities == 0 || self.samples == 0 {
            return bad("identities and samples must be >= 1".into());
        }
        if self.training_identities < 2 || self.training_samples < 2 {
            return bad("GA training needs >= 2 identities with >= 2 samples".into());
        }
        FusionPolicy::new(self.fusion.rule, self.fusion.threshold).map_err(|e| Error::Config(e.to_string()))?;
        if self.threshold_count < 2 {
            return bad("eval.threshold_count must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("eval.max_failure_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let seg = &self.pipeline.segmentation;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let path = |p: &Option<PathBuf>| opt(p.as_ref().map(|p| p.display().to_string()));
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let (a_min, a_max) = seg.eyelid_a_factor.unwrap_or((0.0, 0.0));
        let (rule, weights) = match self.fusion.rule {
            FusionRule::Weighted(w) => ("weighted", w),
            other => (other.name(), self.fusion_weights),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("identities", self.identities.to_string()),
            ("samples", self.samples.to_string()),
            ("seg.pupil_r_min", seg.pupil_radius.min.to_string()),
            ("seg.pupil_r_max", seg.pupil_radius.max.to_string()),
            ("seg.iris_r_min", seg.iris_radius.min.to_string()),
            ("seg.iris_r_max", seg.iris_radius.max.to_string()),
            ("seg.grad_threshold", seg.grad_threshold.to_string()),
            ("seg.max_center_offset", seg.max_center_offset.to_string()),
            ("seg.specular_threshold", seg.specular_threshold.to_string()),
            ("seg.eyelids", seg.eyelid_a_factor.is_some().to_string()),
            ("seg.eyelid_a_min", a_min.to_string()),
            ("seg.eyelid_a_max", a_max.to_string()),
            ("seg.eyelid_margin", seg.eyelid_margin.to_string()),
            (
                "zc.scales",
                self.pipeline.scales.iter().map(u32::to_string).collect::<Vec<_>>().join(", "),
            ),
            ("zc.max_shift", self.pipeline.max_shift.to_string()),
            ("ga.population", self.ga.population_size.to_string()),
            ("ga.weights", list(&self.ga.weights)),
            ("ga.mutation_prob", self.ga.mutation_prob.to_string()),
            ("ga.n_flip", self.ga.n_flip.to_string()),
            ("ga.generations", self.ga.max_generations.to_string()),
            ("ga.fitness_goal", opt(self.ga.fitness_goal.map(|v| v.to_string()))),
            ("ga.stall", opt(self.ga.stall_generations.map(|v| v.to_string()))),
            ("ga.eval_budget", opt(self.ga.eval_budget.map(|v| v.to_string()))),
            ("ga.top_k", self.ga_top_k.to_string()),
            ("ga.training_identities", self.training_identities.to_string()),
            ("ga.training_samples", self.training_samples.to_string()),
            ("fusion.rule", rule.to_string()),
            ("fusion.weights", list(&weights)),
            ("fusion.threshold", self.fusion.threshold.to_string()),
            ("eval.threshold_count", self.threshold_count.to_string()),
            ("eval.max_failure_rate", self.max_failure_rate.to_string()),
            ("gallery", path(&self.gallery)),
            ("out", path(&self.out)),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}").expect("writing to a String");
        }
        s
    }

    /// Starts from the defaults and applies every line; unknown or repeated
    /// keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut rule = None;
        let mut a_range = cfg.pipeline.segmentation.eyelid_a_factor.unwrap_or((1.5, 15.0));
        let mut eyelids = cfg.pipeline.segmentation.eyelid_a_factor.is_some();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            if !seen.insert(key.to_owned()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            let at = |e: Error| Error::Config(format!("line {}: {key}: {e}", n + 1));
            let seg = &mut cfg.pipeline.segmentation;
            match key {
                "seed" => cfg.seed = num(value).map_err(at)?,
                "identities" => cfg.identities = num(value).map_err(at)?,
                "samples" => cfg.samples = num(value).map_err(at)?,
                "seg.pupil_r_min" => seg.pupil_radius.min = num(value).map_err(at)?,
                "seg.pupil_r_max" => seg.pupil_radius.max = num(value).map_err(at)?,
                "seg.iris_r_min" => seg.iris_radius.min = num(value).map_err(at)?,
                "seg.iris_r_max" => seg.iris_radius.max = num(value).map_err(at)?,
                "seg.grad_threshold" => seg.grad_threshold = num(value).map_err(at)?,
                "seg.max_center_offset" => seg.max_center_offset = num(value).map_err(at)?,
                "seg.specular_threshold" => seg.specular_threshold = num(value).map_err(at)?,
                "seg.eyelids" => eyelids = num(value).map_err(at)?,
                "seg.eyelid_a_min" => a_range.0 = num(value).map_err(at)?,
                "seg.eyelid_a_max" => a_range.1 = num(value).map_err(at)?,
                "seg.eyelid_margin" => seg.eyelid_margin = num(value).map_err(at)?,
                "zc.scales" => cfg.pipeline.scales = list(value).map_err(at)?,
                "zc.max_shift" => cfg.pipeline.max_shift = num(value).map_err(at)?,
                "ga.population" => cfg.ga.population_size = num(value).map_err(at)?,
                "ga.weights" => cfg.ga.weights = array(value).map_err(at)?,
                "ga.mutation_prob" => cfg.ga.mutation_prob = num(value).map_err(at)?,
                "ga.n_flip" => cfg.ga.n_flip = num(value).map_err(at)?,
                "ga.generations" => cfg.ga.max_generations = num(value).map_err(at)?,
                "ga.fitness_goal" => cfg.ga.fitness_goal = optional(value).map_err(at)?,
                "ga.stall" => cfg.ga.stall_generations = optional(value).map_err(at)?,
                "ga.eval_budget" => cfg.ga.eval_budget = optional(value).map_err(at)?,
                "ga.top_k" => cfg.ga_top_k = num(value).map_err(at)?,
                "ga.training_identities" => cfg.training_identities = num(value).map_err(at)?,
                "ga.training_samples" => cfg.training_samples = num(value).map_err(at)?,
                "fusion.rule" => rule = Some(value.to_owned()),
                "fusion.weights" => cfg.fusion_weights = array(value).map_err(at)?,
                "fusion.threshold" => cfg.fusion.threshold = num(value).map_err(at)?,
                "eval.threshold_count" => cfg.threshold_count = num(value).map_err(at)?,
                "eval.max_failure_rate" => cfg.max_failure_rate = num(value).map_err(at)?,
                "gallery" => cfg.gallery = optional::<String>(value).map_err(at)?.map(PathBuf::from),
                "out" => cfg.out = optional::<String>(value).map_err(at)?.map(PathBuf::from),
                other => return Err(Error::Config(format!("line {}: unknown key {other}", n + 1))),
            }
        }
        cfg.pipeline.segmentation.eyelid_a_factor = eyelids.then_some(a_range);
        cfg.fusion.rule = match rule.as_deref() {
            None => cfg.fusion.rule,
            Some("weighted") => FusionRule::Weighted(cfg.fusion_weights),
            Some(name) => name.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse '{v}'")))
}

fn optional<T: FromStr>(v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn array<const N: usize>(v: &str) -> Result<[f64; N]> {
    let items: Vec<f64> = list(v)?;
    items
        .try_into()
        .map_err(|items: Vec<f64>| Error::InvalidArgument(format!("expected {N} values, got {}", items.len())))
}

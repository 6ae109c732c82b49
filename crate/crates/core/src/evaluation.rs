//! Synthetic eye images with ground truth, corpora of them, verification
//! trials and FAR/FRR/EER reporting.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::euler::estimate_covariance;
use crate::fusion::{Algorithm, FusionRule};
use crate::gasel::{train_selection, GaConfig, GaOutcome, GaSelection, RAW_FEATURES};
use crate::imaging::GrayImage;
use crate::pipeline::{process, Matcher, PipelineConfig, ProcessedSample, RawScores, ScoreRanges};
use crate::segmentation::{build_noise_mask, Circle, Parabola, SegmentationResult};

pub const PUPIL_LEVEL: f64 = 30.0;
pub const IRIS_LEVEL: f64 = 120.0;
pub const SCLERA_LEVEL: f64 = 220.0;
pub const EYELID_LEVEL: f64 = 200.0;
const TEXTURE_COMPONENTS: usize = 6;
const TEXTURE_AMPLITUDE: f64 = 8.0;
/// Fraction of the normalized radius over which texture fades in at each edge.
const TEXTURE_FADE: f64 = 0.15;
const SPECULAR_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEyeSpec {
    pub width: usize,
    pub height: usize,
    pub pupil: Circle,
    pub iris: Circle,
    pub texture_seed: u64,
    /// Texture rotation about the pupil center, radians, counter-clockwise.
    pub rotation: f64,
    /// How far the upper lid reaches into the iris, as a fraction of its
    /// diameter; the lower lid reaches half as far.
    pub eyelid_coverage: f64,
    pub specular_spots: usize,
    pub noise_sigma: f64,
    /// Drives noise and specular placement.
    pub noise_seed: u64,
}

impl SynthEyeSpec {
    /// Centered 240x240 eye with the given radii and nothing else.
    pub fn plain(pupil_r: f64, iris_r: f64, texture_seed: u64) -> Self {
        Self {
            width: 240,
            height: 240,
            pupil: Circle::new(120.0, 120.0, pupil_r),
            iris: Circle::new(120.0, 120.0, iris_r),
            texture_seed,
            rotation: 0.0,
            eyelid_coverage: 0.0,
            specular_spots: 0,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.iris.contains_circle(&self.pupil) {
            return bad(format!("pupil {:?} not inside iris {:?}", self.pupil, self.iris));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let i = &self.iris;
        if i.cx - i.r < 0.0 || i.cy - i.r < 0.0 || i.cx + i.r > w - 1.0 || i.cy + i.r > h - 1.0 {
            return bad(format!("iris {:?} leaves the {}x{} image", self.iris, self.width, self.height));
        }
        let ratio = self.pupil.r / self.iris.r;
        if !(0.10..=0.80).contains(&ratio) {
            return bad(format!("pupil/iris ratio {ratio:.3} outside [0.10, 0.80]"));
        }
        if !(0.0..=0.4).contains(&self.eyelid_coverage) {
            return bad(format!("eyelid coverage {} outside [0, 0.4]", self.eyelid_coverage));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) || !self.rotation.is_finite() {
            return bad("noise sigma and rotation must be finite, sigma >= 0".into());
        }
        Ok(())
    }

    /// Upper and lower lid curves, if any.
    pub fn eyelids(&self) -> Vec<Parabola> {
        if self.eyelid_coverage <= 0.0 {
            return Vec::new();
        }
        let i = &self.iris;
        let a = 3.0 * i.r;
        let upper = Parabola::new(i.cx, i.cy - i.r + 2.0 * self.eyelid_coverage * i.r, a, PI / 2.0);
        let lower = Parabola::new(i.cx, i.cy + i.r - self.eyelid_coverage * i.r, -a, PI / 2.0);
        [upper, lower].into_iter().map(|p| p.expect("finite parameters")).collect()
    }
}

/// Identity texture: integer angular frequencies keep it continuous across
/// the 0 / 2pi seam.
#[derive(Debug, Clone, PartialEq)]
struct Texture {
    angular: [f64; TEXTURE_COMPONENTS],
    radial: [f64; TEXTURE_COMPONENTS],
    phase: [f64; TEXTURE_COMPONENTS],
}

impl Texture {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Texture {
            angular: [0.0; TEXTURE_COMPONENTS],
            radial: [0.0; TEXTURE_COMPONENTS],
            phase: [0.0; TEXTURE_COMPONENTS],
        };
        for k in 0..TEXTURE_COMPONENTS {
            let n = rng.random_range(6..=24) as f64;
            t.angular[k] = if rng.random_bool(0.5) { n } else { -n };
            t.radial[k] = rng.random_range(0.5..3.0);
            t.phase[k] = rng.random_range(0.0..2.0 * PI);
        }
        t
    }

    fn value(&self, rho: f64, theta: f64) -> f64 {
        // smooth ramp to zero at both boundaries
        let fade = |t: f64| {
            let t = (t / TEXTURE_FADE).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        let sum: f64 = (0..TEXTURE_COMPONENTS)
            .map(|k| (self.angular[k] * theta + self.radial[k] * PI * rho + self.phase[k]).sin())
            .sum();
        TEXTURE_AMPLITUDE * fade(rho) * fade(1.0 - rho) * sum
    }
}

/// Inverts the rubber-sheet blend: the `(rho, theta)` whose blended boundary
/// point is `(x, y)`, for a point inside the annulus.
fn sheet_coordinates(pupil: &Circle, iris: &Circle, x: f64, y: f64) -> (f64, f64) {
    let (wx, wy) = (x - pupil.cx, y - pupil.cy);
    let (dx, dy) = (iris.cx - pupil.cx, iris.cy - pupil.cy);
    let dr = iris.r - pupil.r;
    // |w - rho d| = r_p + rho dr, a quadratic in rho with negative leading term
    let a = dx * dx + dy * dy - dr * dr;
    let b = -2.0 * (wx * dx + wy * dy + pupil.r * dr);
    let c = wx * wx + wy * wy - pupil.r * pupil.r;
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    let rho = ((-b - disc) / (2.0 * a)).clamp(0.0, 1.0);
    let (ux, uy) = (wx - rho * dx, wy - rho * dy);
    // screen y points down, angles run counter-clockwise
    (rho, (-uy).atan2(ux).rem_euclid(2.0 * PI))
}

/// Renders the eye and its ground-truth segmentation. Pure in `spec`.
pub fn synth_eye(spec: &SynthEyeSpec) -> Result<(GrayImage, SegmentationResult)> {
    spec.validate()?;
    let texture = Texture::from_seed(spec.texture_seed);
    let lids = spec.eyelids();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let spots: Vec<(f64, f64)> = (0..spec.specular_spots)
        .map(|_| {
            let t = rng.random_range(0.0..2.0 * PI);
            let r = spec.pupil.r + rng.random_range(0.2..0.5) * (spec.iris.r - spec.pupil.r);
            (spec.pupil.cx + r * t.cos(), spec.pupil.cy - r * t.sin())
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma checked");
    let (p, i) = (&spec.pupil, &spec.iris);
    let img = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = if p.distance_to(fx, fy) < p.r {
            PUPIL_LEVEL
        } else if i.distance_to(fx, fy) < i.r {
            let (rho, theta) = sheet_coordinates(p, i, fx, fy);
            IRIS_LEVEL + texture.value(rho, theta - spec.rotation)
        } else {
            SCLERA_LEVEL
        };
        if lids.iter().any(|l| l.implicit(fx, fy) > 0.0) {
            v = EYELID_LEVEL;
        }
        if spots.iter().any(|&(sx, sy)| (fx - sx).hypot(fy - sy) <= SPECULAR_RADIUS) {
            v = 255.0;
        } else if spec.noise_sigma > 0.0 {
            v += noise.sample(&mut rng);
        }
        v.round().clamp(0.0, 255.0) as u8
    });
    let noise_mask = build_noise_mask(&img, p, i, &lids, 240, 0.0)?;
    let truth = SegmentationResult {
        pupil: *p,
        iris: *i,
        upper_eyelid: lids.first().copied(),
        lower_eyelid: lids.get(1).copied(),
        noise_mask,
    };
    Ok((img, truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub identity: usize,
    pub sample: usize,
    pub spec: SynthEyeSpec,
}

impl CorpusEntry {
    pub fn file_name(&self) -> String {
        format!("id{:03}_s{}.pgm", self.identity, self.sample)
    }

    pub fn render(&self) -> Result<(GrayImage, SegmentationResult)> {
        synth_eye(&self.spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn identities(&self) -> usize {
        self.entries.iter().map(|e| e.identity + 1).max().unwrap_or(0)
    }

    /// One line per image: file, identity, texture seed, pupil and iris circles.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# path identity texture_seed pupil_cx pupil_cy pupil_r iris_cx iris_cy iris_r\n");
        for e in &self.entries {
            let (p, i) = (e.spec.pupil, e.spec.iris);
            writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                e.file_name(),
                e.identity,
                e.spec.texture_seed,
                p.cx,
                p.cy,
                p.r,
                i.cx,
                i.cy,
                i.r
            )
            .expect("write to String");
        }
        out
    }
}

/// Parses a corpus manifest into `(file name, identity, pupil, iris)` rows.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, usize, Circle, Circle)>> {
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(Error::InvalidArgument(format!("manifest line needs 9 fields: {line:?}")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad manifest number {s:?}")))
        };
        let identity = f[1]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad identity {:?}", f[1])))?;
        rows.push((
            f[0].to_string(),
            identity,
            Circle::new(num(f[3])?, num(f[4])?, num(f[5])?),
            Circle::new(num(f[6])?, num(f[7])?, num(f[8])?),
        ));
    }
    Ok(rows)
}

pub const DEFAULT_NOISE_SIGMA: f64 = 2.0;

/// Identities with a fixed texture and eye geometry each; every sample adds
/// rotation up to 5 degrees, up to 2 px of circle jitter, eyelids, specular
/// spots and noise.
pub fn build_corpus(identities: usize, samples_per_identity: usize, master_seed: u64) -> Result<Corpus> {
    if identities == 0 || samples_per_identity == 0 {
        return Err(Error::InvalidArgument("corpus counts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut entries = Vec::with_capacity(identities * samples_per_identity);
    for identity in 0..identities {
        let texture_seed: u64 = rng.random();
        let iris_r = rng.random_range(74.0..86.0);
        let ratio = rng.random_range(0.25..0.55);
        let iris_c = (120.0 + rng.random_range(-6.0..6.0), 120.0 + rng.random_range(-6.0..6.0));
        let offset = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        for sample in 0..samples_per_identity {
            let mut jitter = || rng.random_range(-1.0..1.0);
            let iris = Circle::new(iris_c.0 + jitter(), iris_c.1 + jitter(), iris_r + 2.0 * jitter());
            let pupil = Circle::new(
                iris.cx + offset.0 + jitter(),
                iris.cy + offset.1 + jitter(),
                ratio * iris_r + 2.0 * jitter(),
            );
            let spec = SynthEyeSpec {
                width: 240,
                height: 240,
                pupil,
                iris,
                texture_seed,
                rotation: rng.random_range(-5.0..5.0f64).to_radians(),
                eyelid_coverage: rng.random_range(0.0..0.3),
                specular_spots: rng.random_range(0..=2),
                noise_sigma: DEFAULT_NOISE_SIGMA,
                noise_seed: rng.random(),
            };
            entries.push(CorpusEntry { identity, sample, spec });
        }
    }
    Ok(Corpus { entries })
}

/// Eyes whose pupil/iris ratio sweeps evenly from 0.10 to 0.80.
pub fn ratio_sweep(count: usize, seed: u64) -> Result<Vec<SynthEyeSpec>> {
    if count < 2 {
        return Err(Error::InvalidArgument("ratio sweep needs at least 2 eyes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|k| {
            let ratio = 0.10 + 0.70 * k as f64 / (count - 1) as f64;
            let iris_r: f64 = rng.random_range(74.0..86.0);
            let iris = Circle::new(120.0 + rng.random_range(-6.0..6.0), 120.0 + rng.random_range(-6.0..6.0), iris_r);
            let slack = (iris_r * (1.0 - ratio) - 1.0).min(3.0);
            let pupil = Circle::new(
                iris.cx + rng.random_range(-slack..=slack) * 0.7,
                iris.cy + rng.random_range(-slack..=slack) * 0.7,
                ratio * iris_r,
            );
            SynthEyeSpec {
                width: 240,
                height: 240,
                pupil,
                iris,
                texture_seed: rng.random(),
                rotation: 0.0,
                eyelid_coverage: rng.random_range(0.0..0.2),
                specular_spots: rng.random_range(0..=2),
                noise_sigma: DEFAULT_NOISE_SIGMA,
                noise_seed: rng.random(),
            }
        })
        .collect())
}

/// Similarity-oriented scores of same-identity and cross-identity pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

impl TrialSet {
    pub fn genuine_mean(&self) -> f64 {
        mean(&self.genuine)
    }

    pub fn imposter_mean(&self) -> f64 {
        mean(&self.imposter)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub eer: f64,
    pub eer_threshold: f64,
    /// `(FAR, 1 - FRR)` at each threshold.
    pub roc: Vec<(f64, f64)>,
}

fn rates(trials: &TrialSet, t: f64) -> (f64, f64) {
    let far = trials.imposter.iter().filter(|&&s| s >= t).count() as f64 / trials.imposter.len() as f64;
    let frr = trials.genuine.iter().filter(|&&s| s < t).count() as f64 / trials.genuine.len() as f64;
    (far, frr)
}

/// FAR/FRR curves on `threshold_count` evenly spaced thresholds over [0, 1].
/// The EER is the mean of FAR and FRR at the threshold minimizing
/// `|FAR - FRR|`, searched over every distinct score (and one above them all);
/// the lowest such threshold wins ties.
pub fn compute_metrics(trials: &TrialSet, threshold_count: usize) -> Result<EvalReport> {
    if trials.genuine.is_empty() || trials.imposter.is_empty() {
        return Err(Error::InvalidArgument("metrics need genuine and imposter scores".into()));
    }
    if threshold_count < 2 {
        return Err(Error::InvalidArgument("need at least 2 thresholds".into()));
    }
    if trials.genuine.iter().chain(&trials.imposter).any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let thresholds: Vec<f64> = (0..threshold_count)
        .map(|i| i as f64 / (threshold_count - 1) as f64)
        .collect();
    let (far, frr): (Vec<f64>, Vec<f64>) = thresholds.iter().map(|&t| rates(trials, t)).unzip();
    let roc = far.iter().zip(&frr).map(|(&a, &r)| (a, 1.0 - r)).collect();

    let mut candidates: Vec<f64> = trials.genuine.iter().chain(&trials.imposter).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let above = candidates.last().expect("nonempty") + 1.0;
    candidates.push(above);
    let (mut eer, mut eer_threshold, mut gap) = (0.0, 0.0, f64::INFINITY);
    for t in candidates {
        let (a, r) = rates(trials, t);
        if (a - r).abs() < gap {
            gap = (a - r).abs();
            eer = (a + r) / 2.0;
            eer_threshold = t;
        }
    }
    Ok(EvalReport { thresholds, far, frr, eer, eer_threshold, roc })
}

impl EvalReport {
    /// `threshold,far,frr` rows, then the EER as a comment line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for ((t, a), r) in self.thresholds.iter().zip(&self.far).zip(&self.frr) {
            writeln!(out, "{t:.6},{a:.6},{r:.6}").expect("write to String");
        }
        writeln!(out, "# eer={:.6} threshold={:.6}", self.eer, self.eer_threshold).expect("write to String");
        out
    }

    /// ROC scatter: FAR along x, 1 - FRR up the y axis, dark dots on white.
    pub fn roc_image(&self, size: usize) -> GrayImage {
        let size = size.max(8);
        let mut img = GrayImage::filled(size, size, 255);
        let last = (size - 1) as f64;
        for i in 0..size {
            img.set(i, size - 1, 160);
            img.set(0, i, 160);
            img.set(i, size - 1 - i, 220);
        }
        for &(far, tar) in &self.roc {
            let x = (far * last).round() as usize;
            let y = ((1.0 - tar) * last).round() as usize;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                img.set((x + dx).min(size - 1), (y + dy).min(size - 1), 0);
            }
        }
        img
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub pipeline: PipelineConfig,
    pub ga: GaConfig,
    pub ga_top_k: usize,
    pub training_identities: usize,
    pub training_samples: usize,
    pub training_seed: u64,
    pub fusion_rule: FusionRule,
    pub threshold_count: usize,
    /// Seeds the imposter subsample.
    pub trial_seed: u64,
    pub max_failure_rate: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            ga: GaConfig { max_generations: 100, ..GaConfig::default() },
            ga_top_k: 30,
            training_identities: 20,
            training_samples: 4,
            training_seed: 1001,
            fusion_rule: FusionRule::SumAverage,
            threshold_count: 101,
            trial_seed: 17,
            max_failure_rate: 0.2,
        }
    }
}

/// Renders every entry, then processes it as [`process_images`] does.
pub fn process_corpus(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    max_failure_rate: f64,
) -> Result<Vec<(usize, ProcessedSample)>> {
    process_images(&render_corpus(corpus)?, cfg, max_failure_rate)
}

/// `(identity, image)` for every entry.
pub fn render_corpus(corpus: &Corpus) -> Result<Vec<(usize, GrayImage)>> {
    corpus.entries.iter().map(|e| Ok((e.identity, e.render()?.0))).collect()
}

/// Processes labelled images, tolerating segmentation failures up to
/// `max_failure_rate`. Returns `(identity, sample)` per success.
pub fn process_images(
    images: &[(usize, GrayImage)],
    cfg: &PipelineConfig,
    max_failure_rate: f64,
) -> Result<Vec<(usize, ProcessedSample)>> {
    let mut out = Vec::with_capacity(images.len());
    for (identity, img) in images {
        match process(img, cfg) {
            Ok(p) => out.push((*identity, p)),
            Err(Error::Io(e)) => return Err(Error::Io(e)),
            Err(_) => {}
        }
    }
    let failed = images.len() - out.len();
    if failed as f64 > max_failure_rate * images.len() as f64 {
        return Err(Error::SegmentationFailureRate { failed, total: images.len() });
    }
    Ok(out)
}

/// Ranks, pools and runs the GA over the samples' raw feature vectors.
pub fn train_on_samples(
    samples: &[(usize, ProcessedSample)],
    top_k: usize,
    ga: &GaConfig,
) -> Result<(GaSelection, GaOutcome)> {
    let vectors: Vec<_> = samples.iter().map(|(_, p)| p.templates.features.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|(id, _)| *id).collect();
    train_selection(&vectors, &labels, top_k, ga)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResults {
    /// In [`Algorithm::ALL`] order.
    pub per_algorithm: [TrialSet; 3],
    pub fused: TrialSet,
    pub ranges: ScoreRanges,
    pub selection: GaSelection,
    pub ga: Option<GaOutcome>,
    pub processed: usize,
    pub failures: usize,
}

impl TrialResults {
    pub fn algorithm(&self, alg: Algorithm) -> &TrialSet {
        &self.per_algorithm[alg.id() as usize]
    }
}

/// Trains the GA selection on its own synthetic corpus, then scores all
/// genuine pairs and a seeded imposter subsample (at most 10x the genuine
/// count) of `corpus`. Score ranges come from the observed raw scores.
pub fn run_trials(corpus: &Corpus, cfg: &EvaluationConfig) -> Result<TrialResults> {
    if corpus.identities() < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least 2 identities".into()));
    }
    run_trials_on_images(&render_corpus(corpus)?, cfg)
}

/// [`run_trials`] over labelled images.
pub fn run_trials_on_images(images: &[(usize, GrayImage)], cfg: &EvaluationConfig) -> Result<TrialResults> {
    let identities: std::collections::BTreeSet<usize> = images.iter().map(|(id, _)| *id).collect();
    if identities.len() < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least 2 identities".into()));
    }
    let (selection, ga) = if cfg.training_identities >= 2 && cfg.training_samples >= 2 {
        let training = build_corpus(cfg.training_identities, cfg.training_samples, cfg.training_seed)?;
        let samples = process_corpus(&training, &cfg.pipeline, cfg.max_failure_rate)?;
        let (selection, outcome) = train_on_samples(&samples, cfg.ga_top_k, &cfg.ga)?;
        (selection, Some(outcome))
    } else {
        (GaSelection::all(RAW_FEATURES), None)
    };

    let samples = process_images(images, &cfg.pipeline, cfg.max_failure_rate)?;
    let codes: Vec<_> = samples.iter().map(|(_, p)| p.templates.euler).collect();
    let matcher = Matcher {
        covariance: estimate_covariance(&codes, None)?,
        selection: selection.clone(),
        max_shift: cfg.pipeline.max_shift,
    };

    let n = samples.len();
    let mut genuine_pairs = Vec::new();
    let mut imposter_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if samples[i].0 == samples[j].0 {
                genuine_pairs.push((i, j));
            } else {
                imposter_pairs.push((i, j));
            }
        }
    }
    let cap = 10 * genuine_pairs.len();
    if imposter_pairs.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.trial_seed);
        let mut keep = sample(&mut rng, imposter_pairs.len(), cap).into_vec();
        keep.sort_unstable();
        imposter_pairs = keep.into_iter().map(|k| imposter_pairs[k]).collect();
    }
    if genuine_pairs.is_empty() || imposter_pairs.is_empty() {
        return Err(Error::DegenerateData("corpus yields no genuine or no imposter pairs".into()));
    }

    let score = |pairs: &[(usize, usize)]| -> Result<Vec<RawScores>> {
        pairs
            .iter()
            .map(|&(i, j)| matcher.compare(&samples[i].1.templates, &samples[j].1))
            .collect()
    };
    let genuine_raw = score(&genuine_pairs)?;
    let imposter_raw = score(&imposter_pairs)?;
    let all: Vec<RawScores> = genuine_raw.iter().chain(&imposter_raw).copied().collect();
    let ranges = ScoreRanges::observed(&all);

    let mut per_algorithm: [TrialSet; 3] = Default::default();
    let mut fused = TrialSet::default();
    for (raws, genuine) in [(&genuine_raw, true), (&imposter_raw, false)] {
        for raw in raws.iter() {
            let norm = ranges.normalize(raw)?;
            for (set, s) in per_algorithm.iter_mut().zip(norm) {
                if genuine { set.genuine.push(s.value) } else { set.imposter.push(s.value) }
            }
            let f = ranges.fuse(raw, &cfg.fusion_rule)?;
            if genuine { fused.genuine.push(f) } else { fused.imposter.push(f) }
        }
    }
    Ok(TrialResults {
        per_algorithm,
        fused,
        ranges,
        selection,
        ga,
        processed: n,
        failures: images.len() - n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic() {
        let mut spec = SynthEyeSpec::plain(30.0, 80.0, 5);
        spec.noise_sigma = 3.0;
        spec.specular_spots = 2;
        spec.eyelid_coverage = 0.2;
        assert_eq!(synth_eye(&spec).unwrap().0, synth_eye(&spec).unwrap().0);
    }

    #[test]
    fn clean_pupil_darker_than_sclera() {
        let spec = SynthEyeSpec::plain(30.0, 80.0, 5);
        let (img, truth) = synth_eye(&spec).unwrap();
        let mut pupil_max = 0;
        let mut sclera_min = 255;
        for y in 0..240 {
            for x in 0..240 {
                let (fx, fy) = (x as f64, y as f64);
                if truth.pupil.distance_to(fx, fy) < truth.pupil.r {
                    pupil_max = pupil_max.max(img.get(x, y));
                } else if truth.iris.distance_to(fx, fy) >= truth.iris.r {
                    sclera_min = sclera_min.min(img.get(x, y));
                }
            }
        }
        assert!(pupil_max < sclera_min);
    }

    #[test]
    fn spec_validation() {
        assert!(synth_eye(&SynthEyeSpec::plain(5.0, 80.0, 1)).is_err());
        assert!(synth_eye(&SynthEyeSpec::plain(70.0, 80.0, 1)).is_err());
        assert!(synth_eye(&SynthEyeSpec::plain(30.0, 125.0, 1)).is_err());
        let mut spec = SynthEyeSpec::plain(30.0, 80.0, 1);
        spec.eyelid_coverage = 0.5;
        assert!(synth_eye(&spec).is_err());
    }

    #[test]
    fn sheet_coordinates_invert_blend() {
        let pupil = Circle::new(100.0, 90.0, 20.0);
        let iris = Circle::new(104.0, 88.0, 70.0);
        for &(rho, theta) in &[(0.0, 0.3), (0.5, 2.0), (0.9, 4.0), (1.0, 6.0)] {
            let (xp, yp) = pupil.point_at(theta);
            let (xi, yi) = iris.point_at(theta);
            let (x, y) = ((1.0 - rho) * xp + rho * xi, (1.0 - rho) * yp + rho * yi);
            let (r2, t2) = sheet_coordinates(&pupil, &iris, x, y);
            assert!((r2 - rho).abs() < 1e-9 && (t2 - theta).abs() < 1e-9, "{rho} {theta} -> {r2} {t2}");
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let c = build_corpus(5, 3, 11).unwrap();
        assert_eq!(c.entries.len(), 15);
        let seeds: std::collections::BTreeSet<u64> = c.entries.iter().map(|e| e.spec.texture_seed).collect();
        assert_eq!(seeds.len(), 5);
        assert_eq!(c.manifest(), build_corpus(5, 3, 11).unwrap().manifest());
        assert!(build_corpus(0, 3, 11).is_err());
        let rows = parse_manifest(&c.manifest()).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows[4].1, 1);
        assert_eq!(rows[4].2, c.entries[4].spec.pupil);
    }

    #[test]
    fn metrics_examples() {
        let sep = TrialSet { genuine: vec![0.9; 5], imposter: vec![0.1; 5] };
        assert_eq!(compute_metrics(&sep, 101).unwrap().eer, 0.0);
        let same = TrialSet { genuine: vec![0.2, 0.5, 0.7], imposter: vec![0.7, 0.2, 0.5] };
        assert_eq!(compute_metrics(&same, 101).unwrap().eer, 0.5);
        let small = TrialSet { genuine: vec![0.8, 0.6], imposter: vec![0.7, 0.3] };
        let r = compute_metrics(&small, 11).unwrap();
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.eer_threshold, 0.7);
        assert!(compute_metrics(&TrialSet { genuine: vec![], imposter: vec![0.1] }, 11).is_err());
    }

    #[test]
    fn csv_layout() {
        let t = TrialSet { genuine: vec![0.9], imposter: vec![0.1] };
        let csv = compute_metrics(&t, 3).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "threshold,far,frr");
        assert_eq!(lines[1], "0.000000,1.000000,0.000000");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("# eer=0.000000"));
    }
}

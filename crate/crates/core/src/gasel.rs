//! Block-mean features, four feature rankers, the ranked feature pool and a
//! genetic algorithm that picks the subset used for matching.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::normalization::{PolarIris, POLAR_HEIGHT, POLAR_WIDTH};

pub const BLOCK_SIZE: usize = 8;
pub const BLOCK_COLS: usize = POLAR_WIDTH / BLOCK_SIZE;
pub const BLOCK_ROWS: usize = POLAR_HEIGHT / BLOCK_SIZE;
/// 56 x 12 block means.
pub const RAW_FEATURES: usize = BLOCK_COLS * BLOCK_ROWS;

/// Real features with a validity flag each. Iris vectors have
/// [`RAW_FEATURES`] entries; other lengths are accepted for synthetic
/// selection problems.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureVector {
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl RawFeatureVector {
    pub fn new(values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.is_empty() || values.len() != valid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values with {} validity flags",
                values.len(),
                valid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self { values, valid })
    }

    pub fn all_valid(values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(values, valid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element-wise mean over vectors; an entry is valid if any input has it
    /// valid and the mean only uses those inputs.
    pub fn mean(vectors: &[RawFeatureVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero vectors".into()))?;
        let d = first.len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch("feature vectors differ in length".into()));
        }
        let mut values = vec![0.0; d];
        let mut valid = vec![false; d];
        for f in 0..d {
            let (mut sum, mut n) = (0.0, 0usize);
            for v in vectors.iter().filter(|v| v.valid[f]) {
                sum += v.values[f];
                n += 1;
            }
            if n > 0 {
                values[f] = sum / n as f64;
                valid[f] = true;
            }
        }
        Self::new(values, valid)
    }
}

/// Mean of every unmasked pixel in each 8x8 block, blocks in row-major order.
/// A fully masked block reads 0 and is flagged invalid.
pub fn extract_raw(polar: &PolarIris) -> Result<RawFeatureVector> {
    let img = polar.intensities();
    let mask = polar.mask();
    if img.width() != POLAR_WIDTH || img.height() != POLAR_HEIGHT {
        return Err(Error::DimensionMismatch("polar iris has a nonstandard shape".into()));
    }
    let mut values = Vec::with_capacity(RAW_FEATURES);
    let mut valid = Vec::with_capacity(RAW_FEATURES);
    for by in 0..BLOCK_ROWS {
        for bx in 0..BLOCK_COLS {
            let (mut sum, mut n) = (0u32, 0u32);
            for y in by * BLOCK_SIZE..(by + 1) * BLOCK_SIZE {
                for x in bx * BLOCK_SIZE..(bx + 1) * BLOCK_SIZE {
                    if !mask.get(x, y) {
                        sum += img.get(x, y) as u32;
                        n += 1;
                    }
                }
            }
            values.push(if n == 0 { 0.0 } else { sum as f64 / n as f64 });
            valid.push(n > 0);
        }
    }
    RawFeatureVector::new(values, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ranker {
    Entropy,
    TStatistic,
    NearestNeighbor,
    Rfe,
}

impl Ranker {
    pub const ALL: [Ranker; 4] = [Ranker::Entropy, Ranker::TStatistic, Ranker::NearestNeighbor, Ranker::Rfe];

    pub fn name(self) -> &'static str {
        match self {
            Ranker::Entropy => "entropy",
            Ranker::TStatistic => "tstat",
            Ranker::NearestNeighbor => "knn",
            Ranker::Rfe => "rfe",
        }
    }
}

/// Features best first, with the per-feature score that produced the order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Ranking {
    /// Sorts by decreasing score, lower index first on ties.
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self { order, scores }
    }
}

/// Returns the class index of every sample and the class count.
fn class_indices(x: &[Vec<f64>], y: &[usize], min_per_class: usize) -> Result<(Vec<usize>, usize)> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} samples, {} labels", x.len(), y.len())));
    }
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("feature rows must be nonempty and equal length".into()));
    }
    let mut ids = BTreeMap::new();
    for &label in y {
        let next = ids.len();
        ids.entry(label).or_insert(next);
    }
    if ids.len() < 2 {
        return Err(Error::DegenerateData("need at least two classes".into()));
    }
    let classes: Vec<usize> = y.iter().map(|l| ids[l]).collect();
    let mut counts = vec![0usize; ids.len()];
    for &c in &classes {
        counts[c] += 1;
    }
    if counts.iter().any(|&c| c < min_per_class) {
        return Err(Error::DegenerateData(format!("every class needs at least {min_per_class} samples")));
    }
    Ok((classes, ids.len()))
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of each feature after a 10-bin equal-width discretization.
pub fn rank_entropy(x: &[Vec<f64>], y: &[usize]) -> Result<Ranking> {
    const BINS: usize = 10;
    let (classes, k) = class_indices(x, y, 2)?;
    let n = x.len();
    let mut class_counts = vec![0usize; k];
    for &c in &classes {
        class_counts[c] += 1;
    }
    let h_y = entropy(&class_counts, n);
    let d = x[0].len();
    let scores = (0..d)
        .map(|f| {
            let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[f]), hi.max(r[f]))
            });
            let mut table = vec![vec![0usize; k]; BINS];
            for (r, &c) in x.iter().zip(&classes) {
                let bin = if hi > lo {
                    (((r[f] - lo) / (hi - lo) * BINS as f64) as usize).min(BINS - 1)
                } else {
                    0
                };
                table[bin][c] += 1;
            }
            let h_cond: f64 = table
                .iter()
                .map(|row| {
                    let m: usize = row.iter().sum();
                    if m == 0 {
                        0.0
                    } else {
                        m as f64 / n as f64 * entropy(row, m)
                    }
                })
                .sum();
            (h_y - h_cond).max(0.0)
        })
        .collect();
    Ok(Ranking::from_scores(scores))
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var, n)
}

/// Welch t statistic of one feature between two sample groups.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va, na) = mean_var(a.iter().copied());
    let (mb, vb, nb) = mean_var(b.iter().copied());
    let diff = (ma - mb).abs();
    let se = (va / na as f64 + vb / nb as f64).sqrt();
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Absolute Welch t; with more than two classes, the largest one-vs-rest value.
pub fn rank_tstat(x: &[Vec<f64>], y: &[usize]) -> Result<Ranking> {
    let (classes, k) = class_indices(x, y, 2)?;
    let one_vs_rest: Vec<usize> = if k == 2 { vec![0] } else { (0..k).collect() };
    let d = x[0].len();
    let scores = (0..d)
        .map(|f| {
            one_vs_rest
                .iter()
                .map(|&c| {
                    let (inside, outside): (Vec<f64>, Vec<f64>) = {
                        let mut i = Vec::new();
                        let mut o = Vec::new();
                        for (r, &cl) in x.iter().zip(&classes) {
                            if cl == c { i.push(r[f]) } else { o.push(r[f]) }
                        }
                        (i, o)
                    };
                    welch_t(&inside, &outside)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(Ranking::from_scores(scores))
}

/// Leave-one-out 1-nearest-neighbour accuracy on each feature alone; equal
/// distances resolve to the lower sample index.
pub fn rank_knn(x: &[Vec<f64>], y: &[usize]) -> Result<Ranking> {
    let (classes, _) = class_indices(x, y, 2)?;
    let n = x.len();
    let d = x[0].len();
    let scores = (0..d)
        .map(|f| {
            let correct = (0..n)
                .filter(|&i| {
                    let nearest = (0..n)
                        .filter(|&j| j != i)
                        .min_by(|&a, &b| {
                            (x[a][f] - x[i][f]).abs().total_cmp(&(x[b][f] - x[i][f]).abs()).then(a.cmp(&b))
                        })
                        .expect("at least four samples");
                    classes[nearest] == classes[i]
                })
                .count();
            correct as f64 / n as f64
        })
        .collect();
    Ok(Ranking::from_scores(scores))
}

/// Cholesky solve of a symmetric positive-definite `n x n` system with
/// several right-hand sides (columns of `b`, stored row-major).
fn spd_solve(a: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let v = a[i * n + i] - dot;
                if !(v > 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - dot) / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for c in 0..m {
        for i in 0..n {
            let dot: f64 = (0..i).map(|k| l[i * n + k] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - dot) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let dot: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k * m + c]).sum();
            x[i * m + c] = (x[i * m + c] - dot) / l[i * n + i];
        }
    }
    Ok(x)
}

/// Recursive feature elimination with a ridge-regularized linear
/// discriminant on standardized features, one feature per round. The ranking
/// is the reverse elimination order; equal weights eliminate the higher index
/// first.
pub fn rank_rfe(x: &[Vec<f64>], y: &[usize]) -> Result<Ranking> {
    const LAMBDA: f64 = 1.0;
    let (classes, k) = class_indices(x, y, 1)?;
    let n = x.len();
    let d = x[0].len();
    // column-major standardized data
    let z: Vec<Vec<f64>> = (0..d)
        .map(|f| {
            let (mean, _, _) = mean_var(x.iter().map(|r| r[f]));
            let sd = (x.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 0.0 {
                x.iter().map(|r| (r[f] - mean) / sd).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();
    let targets: Vec<usize> = if k == 2 { vec![0] } else { (0..k).collect() };
    let m = targets.len();
    let mut yt = vec![0.0; n * m];
    for i in 0..n {
        for (c, &t) in targets.iter().enumerate() {
            yt[i * m + c] = if classes[i] == t { 1.0 } else { -1.0 };
        }
    }
    let mut kernel = vec![0.0; n * n];
    for col in &z {
        for i in 0..n {
            for j in 0..n {
                kernel[i * n + j] += col[i] * col[j];
            }
        }
    }
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut eliminated = Vec::with_capacity(d);
    while !remaining.is_empty() {
        let mut a = kernel.clone();
        for i in 0..n {
            a[i * n + i] += LAMBDA;
        }
        let alpha = spd_solve(&a, n, &yt, m)?;
        let mut worst = (f64::INFINITY, 0usize);
        for (pos, &f) in remaining.iter().enumerate() {
            let score: f64 = (0..m)
                .map(|c| (0..n).map(|i| alpha[i * m + c] * z[f][i]).sum::<f64>().powi(2))
                .sum();
            // `remaining` ascends, so `<=` picks the highest index among ties
            if score <= worst.0 {
                worst = (score, pos);
            }
        }
        let f = remaining.remove(worst.1);
        for i in 0..n {
            for j in 0..n {
                kernel[i * n + j] -= z[f][i] * z[f][j];
            }
        }
        eliminated.push(f);
    }
    let mut scores = vec![0.0; d];
    for (step, &f) in eliminated.iter().enumerate() {
        scores[f] = step as f64;
    }
    let order = eliminated.into_iter().rev().collect();
    Ok(Ranking { order, scores })
}

/// Runs all four rankers in [`Ranker::ALL`] order.
pub fn rank_all(x: &[Vec<f64>], y: &[usize]) -> Result<[Ranking; 4]> {
    Ok([rank_entropy(x, y)?, rank_tstat(x, y)?, rank_knn(x, y)?, rank_rfe(x, y)?])
}

/// Union of the rankers' top features, ascending by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePool {
    indices: Vec<usize>,
    provenance: Vec<Vec<Ranker>>,
}

impl FeaturePool {
    /// A pool without provenance, e.g. read back from a gallery.
    pub fn from_indices(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("pool indices must be distinct".into()));
        }
        let provenance = vec![Vec::new(); indices.len()];
        Ok(Self { indices, provenance })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Rankers that nominated each pool entry.
    pub fn provenance(&self) -> &[Vec<Ranker>] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn build_pool(rankings: &[Ranking; 4], top_k: usize) -> Result<FeaturePool> {
    let d = rankings[0].order.len();
    if rankings.iter().any(|r| r.order.len() != d) {
        return Err(Error::DimensionMismatch("rankings cover different feature counts".into()));
    }
    if top_k == 0 || top_k > d {
        return Err(Error::InvalidArgument(format!("top_k {top_k} outside 1..={d}")));
    }
    let mut nominated: BTreeMap<usize, Vec<Ranker>> = BTreeMap::new();
    for (ranking, ranker) in rankings.iter().zip(Ranker::ALL) {
        for &f in &ranking.order[..top_k] {
            nominated.entry(f).or_default().push(ranker);
        }
    }
    let (indices, provenance) = nominated.into_iter().unzip();
    Ok(FeaturePool { indices, provenance })
}

/// Selection bitmask over a feature pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    genes: Vec<bool>,
}

impl Chromosome {
    pub fn new(genes: Vec<bool>) -> Self {
        Self { genes }
    }

    pub fn all(len: usize) -> Self {
        Self { genes: vec![true; len] }
    }

    pub fn genes(&self) -> &[bool] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.genes.iter().filter(|&&g| g).count()
    }

    /// LSB-first packed bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.genes.len().div_ceil(8)];
        for (i, &g) in self.genes.iter().enumerate() {
            if g {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::DimensionMismatch(format!(
                "{len} genes need {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        Ok(Self {
            genes: (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect(),
        })
    }
}

/// Mean absolute difference over selected, jointly valid features, over 255.
pub fn match_subset(a: &RawFeatureVector, b: &RawFeatureVector, c: &Chromosome, pool: &FeaturePool) -> Result<f64> {
    if c.len() != pool.len() {
        return Err(Error::DimensionMismatch(format!(
            "chromosome has {} genes for a pool of {}",
            c.len(),
            pool.len()
        )));
    }
    if a.len() != b.len() || pool.indices.last().is_some_and(|&f| f >= a.len()) {
        return Err(Error::DimensionMismatch("feature vectors do not fit the pool".into()));
    }
    if c.selected_count() == 0 {
        return Err(Error::InvalidArgument("empty feature selection".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (&f, _) in pool.indices.iter().zip(&c.genes).filter(|(_, &g)| g) {
        if a.valid[f] && b.valid[f] {
            sum += (a.values[f] - b.values[f]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Incomparable);
    }
    Ok(sum / n as f64 / 255.0)
}

/// Pool plus chosen chromosome, as persisted with a gallery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaSelection {
    pub pool: FeaturePool,
    pub chromosome: Chromosome,
}

impl GaSelection {
    /// Every feature selected.
    pub fn all(total: usize) -> Self {
        Self {
            pool: FeaturePool::from_indices((0..total).collect()).expect("distinct"),
            chromosome: Chromosome::all(total),
        }
    }

    pub fn selected_features(&self) -> Vec<usize> {
        self.pool
            .indices
            .iter()
            .zip(&self.chromosome.genes)
            .filter(|(_, &g)| g)
            .map(|(&f, _)| f)
            .collect()
    }

    pub fn distance(&self, a: &RawFeatureVector, b: &RawFeatureVector) -> Result<f64> {
        match_subset(a, b, &self.chromosome, &self.pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub rr: f64,
    pub far: f64,
    pub frr: f64,
    pub subset_size: usize,
    pub total_features: usize,
}

/// `W1 (1 - RR) + W2 FAR + W3 FRR + W4 size / total`; lower is better.
pub fn fitness_cost(m: &TrialMetrics, w: &[f64; 4]) -> f64 {
    let size = if m.total_features == 0 {
        0.0
    } else {
        m.subset_size as f64 / m.total_features as f64
    };
    w[0] * (1.0 - m.rr) + w[1] * m.far + w[2] * m.frr + w[3] * size
}

/// Samples index `i` with probability `F_i / sum F`; all-zero fitness falls
/// back to a uniform draw.
pub fn roulette_select<R: Rng + ?Sized>(fitness: &[f64], rng: &mut R) -> Result<usize> {
    if fitness.is_empty() {
        return Err(Error::InvalidArgument("roulette over an empty population".into()));
    }
    if fitness.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument("fitness values must be finite and >= 0".into()));
    }
    let total: f64 = fitness.iter().sum();
    if total == 0.0 {
        return Ok(rng.random_range(0..fitness.len()));
    }
    let mut target = rng.random::<f64>() * total;
    for (i, &f) in fitness.iter().enumerate() {
        if target < f {
            return Ok(i);
        }
        target -= f;
    }
    // rounding left a sliver past the end
    Ok(fitness.iter().rposition(|&f| f > 0.0).expect("positive total"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub weights: [f64; 4],
    pub mutation_prob: f64,
    pub n_flip: usize,
    pub max_generations: usize,
    pub fitness_goal: Option<f64>,
    pub stall_generations: Option<usize>,
    /// Cap on distinct chromosome evaluations.
    pub eval_budget: Option<usize>,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 40,
            weights: [1.0, 1.0, 1.0, 0.2],
            mutation_prob: 0.5,
            n_flip: 1,
            max_generations: 200,
            fitness_goal: None,
            stall_generations: None,
            eval_budget: None,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad("mutation probability must lie in [0, 1]");
        }
        if self.n_flip == 0 {
            return bad("n_flip must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxGenerations,
    FitnessGoal,
    Stalled,
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Chromosome,
    pub best_cost: f64,
    pub best_metrics: TrialMetrics,
    /// Best cost after each generation, starting with the initial population.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// All-pairs verification trial on a training set restricted to pool features.
/// Per-pair absolute differences are computed once and summed per chromosome.
struct TrialTable {
    /// `diffs[p][q]`: |a - b| of pool entry `p` for pair `q`, 0 if not jointly valid.
    diffs: Vec<Vec<f64>>,
    /// Joint validity per pair, only for pool entries with an invalid pair.
    valid: Vec<Option<Vec<bool>>>,
    pairs: Vec<(usize, usize)>,
    genuine: Vec<bool>,
    n: usize,
}

impl TrialTable {
    fn new(pool: &FeaturePool, vectors: &[RawFeatureVector], classes: &[usize]) -> Self {
        let n = vectors.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let genuine = pairs.iter().map(|&(i, j)| classes[i] == classes[j]).collect();
        let mut diffs = Vec::with_capacity(pool.len());
        let mut valid = Vec::with_capacity(pool.len());
        for &f in &pool.indices {
            let ok: Vec<bool> = pairs.iter().map(|&(i, j)| vectors[i].valid[f] && vectors[j].valid[f]).collect();
            diffs.push(
                pairs
                    .iter()
                    .zip(&ok)
                    .map(|(&(i, j), &ok)| if ok { (vectors[i].values[f] - vectors[j].values[f]).abs() } else { 0.0 })
                    .collect(),
            );
            valid.push(if ok.iter().all(|&v| v) { None } else { Some(ok) });
        }
        Self { diffs, valid, pairs, genuine, n }
    }

    fn evaluate(&self, c: &Chromosome, classes: &[usize]) -> TrialMetrics {
        let subset_size = c.selected_count();
        let total_features = c.len();
        if subset_size == 0 {
            return TrialMetrics { rr: 0.0, far: 1.0, frr: 1.0, subset_size, total_features };
        }
        let q = self.pairs.len();
        let mut sum = vec![0.0; q];
        let mut count = vec![subset_size as u32; q];
        for (p, _) in c.genes.iter().enumerate().filter(|(_, &g)| g) {
            for (s, &d) in sum.iter_mut().zip(&self.diffs[p]) {
                *s += d;
            }
            if let Some(ok) = &self.valid[p] {
                for (n, &ok) in count.iter_mut().zip(ok) {
                    *n -= !ok as u32;
                }
            }
        }
        // pairs without a jointly valid feature count as maximally distant
        let dist: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 1.0 } else { s / c as f64 / 255.0 })
            .collect();

        let mut nearest = vec![(f64::INFINITY, usize::MAX); self.n];
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if dist[k] < nearest[i].0 || (dist[k] == nearest[i].0 && j < nearest[i].1) {
                nearest[i] = (dist[k], j);
            }
            if dist[k] < nearest[j].0 || (dist[k] == nearest[j].0 && i < nearest[j].1) {
                nearest[j] = (dist[k], i);
            }
        }
        let hits = (0..self.n).filter(|&i| classes[nearest[i].1] == classes[i]).count();
        let rr = hits as f64 / self.n as f64;

        let (far, frr) = eer_operating_point(&dist, &self.genuine);
        TrialMetrics { rr, far, frr, subset_size, total_features }
    }
}

/// FAR and FRR for distance scores (accept when `d <= t`) at the threshold
/// minimizing `|FAR - FRR|` among "accept nothing" and every distinct score.
fn eer_operating_point(dist: &[f64], genuine: &[bool]) -> (f64, f64) {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    let n_gen = genuine.iter().filter(|&&g| g).count();
    let n_imp = genuine.len() - n_gen;
    let rates = |acc_gen: usize, acc_imp: usize| {
        let far = if n_imp == 0 { 0.0 } else { acc_imp as f64 / n_imp as f64 };
        let frr = if n_gen == 0 { 0.0 } else { 1.0 - acc_gen as f64 / n_gen as f64 };
        (far, frr)
    };
    let mut best = rates(0, 0);
    let (mut acc_gen, mut acc_imp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let t = dist[order[k]];
        while k < order.len() && dist[order[k]] == t {
            if genuine[order[k]] { acc_gen += 1 } else { acc_imp += 1 }
            k += 1;
        }
        let (far, frr) = rates(acc_gen, acc_imp);
        if (far - frr).abs() < (best.0 - best.1).abs() {
            best = (far, frr);
        }
    }
    best
}

fn mutate<R: Rng>(c: &mut Chromosome, cfg: &GaConfig, rng: &mut R) {
    if c.genes.is_empty() || !rng.random_bool(cfg.mutation_prob) {
        return;
    }
    let n = cfg.n_flip.min(c.genes.len());
    for i in sample(rng, c.genes.len(), n) {
        c.genes[i] = !c.genes[i];
    }
}

/// Evolves feature subsets of `pool` against a labelled training set and
/// returns the lowest-cost chromosome ever seen.
pub fn ga_select(
    pool: &FeaturePool,
    vectors: &[RawFeatureVector],
    labels: &[usize],
    cfg: &GaConfig,
) -> Result<GaOutcome> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidArgument("feature pool is empty".into()));
    }
    let d = vectors.first().map_or(0, RawFeatureVector::len);
    if vectors.iter().any(|v| v.len() != d) || pool.indices.last().is_some_and(|&f| f >= d) {
        return Err(Error::DimensionMismatch("training vectors do not fit the pool".into()));
    }
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let (classes, _) = class_indices(&rows, labels, 2)?;

    let table = TrialTable::new(pool, vectors, &classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut cache: HashMap<Chromosome, (f64, TrialMetrics)> = HashMap::new();
    let mut evaluations = 0usize;
    let mut score = |c: &Chromosome, evaluations: &mut usize| {
        *cache.entry(c.clone()).or_insert_with(|| {
            *evaluations += 1;
            let m = table.evaluate(c, &classes);
            (fitness_cost(&m, &cfg.weights), m)
        })
    };

    let len = pool.len();
    let mut population: Vec<Chromosome> = (0..cfg.population_size)
        .map(|_| Chromosome::new((0..len).map(|_| rng.random_bool(0.5)).collect()))
        .collect();
    let mut best: Option<(Chromosome, f64, TrialMetrics)> = None;
    let mut history = Vec::new();
    let mut since_improvement = 0usize;
    let mut generation = 0usize;
    loop {
        let scored: Vec<(f64, TrialMetrics)> = population.iter().map(|c| score(c, &mut evaluations)).collect();
        let (gen_best, &(gen_cost, gen_metrics)) = scored
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .expect("population >= 2");
        match &best {
            Some((_, cost, _)) if gen_cost >= *cost => since_improvement += 1,
            _ => {
                best = Some((population[gen_best].clone(), gen_cost, gen_metrics));
                since_improvement = 0;
            }
        }
        let (best_c, best_cost, best_metrics) = best.clone().expect("set above");
        history.push(best_cost);

        let stop = if cfg.fitness_goal.is_some_and(|g| best_cost <= g) {
            Some(StopReason::FitnessGoal)
        } else if generation >= cfg.max_generations {
            Some(StopReason::MaxGenerations)
        } else if cfg.stall_generations.is_some_and(|s| since_improvement >= s) {
            Some(StopReason::Stalled)
        } else if cfg.eval_budget.is_some_and(|b| evaluations >= b) {
            Some(StopReason::Budget)
        } else {
            None
        };
        if let Some(stop) = stop {
            return Ok(GaOutcome { best: best_c, best_cost, best_metrics, history, evaluations, stop });
        }

        let fitness: Vec<f64> = scored.iter().map(|(c, _)| 1.0 / (1.0 + c)).collect();
        let mut next = vec![best_c];
        while next.len() < cfg.population_size {
            let p1 = &population[roulette_select(&fitness, &mut rng)?];
            let p2 = &population[roulette_select(&fitness, &mut rng)?];
            let cut = if len > 1 { rng.random_range(1..len) } else { 0 };
            let mut c1 = Chromosome::new([&p1.genes[..cut], &p2.genes[cut..]].concat());
            let mut c2 = Chromosome::new([&p2.genes[..cut], &p1.genes[cut..]].concat());
            mutate(&mut c1, cfg, &mut rng);
            mutate(&mut c2, cfg, &mut rng);
            next.push(c1);
            if next.len() < cfg.population_size {
                next.push(c2);
            }
        }
        population = next;
        generation += 1;
    }
}

/// Ranks features on a labelled set, pools each ranker's `top_k` and runs the
/// genetic search over the pool.
pub fn train_selection(
    vectors: &[RawFeatureVector],
    labels: &[usize],
    top_k: usize,
    cfg: &GaConfig,
) -> Result<(GaSelection, GaOutcome)> {
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let rankings = rank_all(&rows, labels)?;
    let pool = build_pool(&rankings, top_k.min(rows.first().map_or(0, Vec::len)))?;
    let outcome = ga_select(&pool, vectors, labels, cfg)?;
    let selection = GaSelection { pool, chromosome: outcome.best.clone() };
    Ok((selection, outcome))
}

/// Synthetic selection problem: a few features carry an identity-specific
/// offset, the rest are noise with the same marginal spread.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub features: usize,
    pub informative: usize,
    /// Spread of the per-identity offsets.
    pub between_sigma: f64,
    /// Spread of the per-sample noise.
    pub within_sigma: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            identities: 10,
            samples_per_identity: 4,
            features: 100,
            informative: 10,
            between_sigma: 20.0,
            within_sigma: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedProblem {
    pub vectors: Vec<RawFeatureVector>,
    pub labels: Vec<usize>,
    /// Ascending indices of the informative features.
    pub informative: Vec<usize>,
}

impl PlantedProblem {
    pub fn generate(spec: &PlantedSpec, seed: u64) -> Result<Self> {
        if spec.informative > spec.features || spec.identities < 2 || spec.samples_per_identity < 2 {
            return Err(Error::InvalidArgument("planted problem needs >= 2x2 samples and informative <= features".into()));
        }
        let bad_sigma = |s: f64| !(s.is_finite() && s >= 0.0);
        if bad_sigma(spec.between_sigma) || bad_sigma(spec.within_sigma) {
            return Err(Error::InvalidArgument("sigmas must be finite and >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut informative = sample(&mut rng, spec.features, spec.informative).into_vec();
        informative.sort_unstable();
        let between = Normal::new(0.0, spec.between_sigma).expect("checked");
        let within = Normal::new(0.0, spec.within_sigma).expect("checked");
        let total = Normal::new(0.0, spec.between_sigma.hypot(spec.within_sigma)).expect("checked");
        let offsets: Vec<Vec<f64>> = (0..spec.identities)
            .map(|_| (0..spec.informative).map(|_| between.sample(&mut rng)).collect())
            .collect();
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (id, offset) in offsets.iter().enumerate() {
            for _ in 0..spec.samples_per_identity {
                let mut values: Vec<f64> = (0..spec.features).map(|_| 128.0 + total.sample(&mut rng)).collect();
                for (slot, &f) in informative.iter().enumerate() {
                    values[f] = 128.0 + offset[slot] + within.sample(&mut rng);
                }
                vectors.push(RawFeatureVector::all_valid(values.iter().map(|v| v.clamp(0.0, 255.0)).collect())?);
                labels.push(id);
            }
        }
        Ok(Self { vectors, labels, informative })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.values.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BinaryImage, GrayImage};

    #[test]
    fn constant_polar_features() {
        let polar = PolarIris::new(
            GrayImage::filled(POLAR_WIDTH, POLAR_HEIGHT, 100),
            BinaryImage::filled(POLAR_WIDTH, POLAR_HEIGHT, false),
        )
        .unwrap();
        let v = extract_raw(&polar).unwrap();
        assert_eq!(v.len(), 672);
        assert!(v.values().iter().all(|&x| x == 100.0));
        assert!(v.valid().iter().all(|&x| x));
    }

    #[test]
    fn masked_block_is_invalid() {
        let mask = BinaryImage::from_fn(POLAR_WIDTH, POLAR_HEIGHT, |x, y| x >= 8 && x < 16 && y < 8);
        let polar = PolarIris::new(GrayImage::filled(POLAR_WIDTH, POLAR_HEIGHT, 100), mask).unwrap();
        let v = extract_raw(&polar).unwrap();
        assert_eq!(v.values()[1], 0.0);
        assert!(!v.valid()[1]);
        assert!(v.valid()[0] && v.valid()[2] && v.valid()[BLOCK_COLS + 1]);
    }

    #[test]
    fn t_statistic_formula() {
        // means 0 and 1 with unit sample variance, 100 each
        let a: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 } * (99.0f64 / 100.0).sqrt()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!((welch_t(&a, &b) - 1.0 / 0.02f64.sqrt()).abs() < 1e-9);
        assert_eq!(welch_t(&a, &a), 0.0);
    }

    #[test]
    fn rankers_put_perfect_predictor_first() {
        let y: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![5.0, ((i * 7) % 5) as f64, (i % 2) as f64, ((i * 3) % 4) as f64])
            .collect();
        for ranking in rank_all(&x, &y).unwrap() {
            assert_eq!(ranking.order[0], 2, "{ranking:?}");
        }
        let entropy = rank_entropy(&x, &y).unwrap();
        assert_eq!(entropy.scores[0], 0.0);
        assert_eq!(*entropy.order.last().unwrap(), 0);
        assert!((entropy.scores[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rankers_reject_single_class() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![4, 4, 4];
        assert!(rank_entropy(&x, &y).is_err());
        assert!(rank_tstat(&x, &y).is_err());
        assert!(rank_knn(&x, &y).is_err());
        assert!(rank_rfe(&x, &y).is_err());
    }

    #[test]
    fn rfe_constant_features_rank_by_index() {
        let x = vec![vec![1.0; 5]; 6];
        let y = vec![0, 0, 0, 1, 1, 1];
        assert_eq!(rank_rfe(&x, &y).unwrap().order, vec![0, 1, 2, 3, 4]);
    }

    fn ranking(order: Vec<usize>) -> Ranking {
        Ranking { scores: vec![0.0; order.len()], order }
    }

    #[test]
    fn pool_union_and_provenance() {
        let same = ranking((0..50).collect());
        let pool = build_pool(&[same.clone(), same.clone(), same.clone(), same.clone()], 10).unwrap();
        assert_eq!(pool.indices(), (0..10).collect::<Vec<_>>());

        let shifted = |s: usize| ranking((0..50).map(|i| (i + s) % 50).collect());
        let pool = build_pool(&[shifted(0), shifted(10), shifted(20), shifted(30)], 10).unwrap();
        assert_eq!(pool.len(), 40);

        let pool = build_pool(&[shifted(0), shifted(0), shifted(20), shifted(0)], 10).unwrap();
        let at = pool.indices().iter().position(|&f| f == 3).unwrap();
        assert_eq!(pool.provenance()[at], vec![Ranker::Entropy, Ranker::TStatistic, Ranker::Rfe]);
        assert!(build_pool(&[same.clone(), same.clone(), same.clone(), same], 51).is_err());
    }

    #[test]
    fn cost_examples() {
        let m = TrialMetrics { rr: 0.9, far: 0.02, frr: 0.05, subset_size: 50, total_features: 672 };
        let cost = fitness_cost(&m, &[1.0, 0.5, 0.5, 0.1]);
        assert!((cost - (0.1 + 0.01 + 0.025 + 5.0 / 672.0)).abs() < 1e-12);
        assert!((cost - 0.14244).abs() < 1e-5);
        assert_eq!(fitness_cost(&TrialMetrics { rr: 1.0, ..m }, &[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert_eq!(fitness_cost(&m, &[0.0; 4]), 0.0);
    }

    #[test]
    fn roulette_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(roulette_select(&[2.5], &mut rng).unwrap(), 0);
        assert!(roulette_select(&[], &mut rng).is_err());
        assert!(roulette_select(&[1.0, -1.0], &mut rng).is_err());
        assert_eq!(roulette_select(&[0.0, 0.0, 4.0], &mut rng).unwrap(), 2);
        let seen: std::collections::BTreeSet<usize> =
            (0..200).map(|_| roulette_select(&[0.0; 3], &mut rng).unwrap()).collect();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn chromosome_bytes_round_trip() {
        let c = Chromosome::new((0..13).map(|i| i % 3 == 0).collect());
        let bytes = c.to_bytes();
        assert_eq!(bytes, vec![0b0100_1001, 0b0001_0010]);
        assert_eq!(Chromosome::from_bytes(&bytes, 13).unwrap(), c);
        assert!(Chromosome::from_bytes(&bytes, 17).is_err());
    }

    #[test]
    fn match_subset_examples() {
        let pool = FeaturePool::from_indices(vec![0, 2, 3]).unwrap();
        let a = RawFeatureVector::all_valid(vec![0.0, 9.0, 0.0, 255.0]).unwrap();
        let b = RawFeatureVector::all_valid(vec![255.0, 1.0, 255.0, 0.0]).unwrap();
        let all = Chromosome::all(3);
        assert_eq!(match_subset(&a, &a, &all, &pool).unwrap(), 0.0);
        assert_eq!(match_subset(&a, &b, &all, &pool).unwrap(), 1.0);
        assert!(match_subset(&a, &b, &Chromosome::new(vec![false; 3]), &pool).is_err());
        let c = RawFeatureVector::new(vec![0.0; 4], vec![false, true, false, false]).unwrap();
        assert!(matches!(match_subset(&a, &c, &all, &pool), Err(Error::Incomparable)));
    }

    #[test]
    fn eer_point_on_separable_scores() {
        assert_eq!(eer_operating_point(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]), (0.0, 0.0));
        let (far, frr) = eer_operating_point(&[0.5, 0.5], &[true, false]);
        assert_eq!((far, frr), (0.0, 1.0));
    }

    fn small_problem() -> PlantedProblem {
        let spec = PlantedSpec { identities: 4, samples_per_identity: 3, features: 20, informative: 4, ..Default::default() };
        PlantedProblem::generate(&spec, 9).unwrap()
    }

    #[test]
    fn zero_generations_returns_initial_best() {
        let p = small_problem();
        let pool = FeaturePool::from_indices((0..20).collect()).unwrap();
        let cfg = GaConfig { max_generations: 0, rng_seed: 3, ..Default::default() };
        let out = ga_select(&pool, &p.vectors, &p.labels, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.stop, StopReason::MaxGenerations);
        assert_eq!(out.evaluations, 40.min(out.evaluations));
    }

    #[test]
    fn size_only_cost_drives_to_empty() {
        let p = small_problem();
        let pool = FeaturePool::from_indices((0..20).collect()).unwrap();
        let cfg = GaConfig { weights: [0.0, 0.0, 0.0, 1.0], max_generations: 150, rng_seed: 5, ..Default::default() };
        let out = ga_select(&pool, &p.vectors, &p.labels, &cfg).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.best.selected_count() <= 2, "{}", out.best.selected_count());
    }

    #[test]
    fn termination_conditions() {
        let p = small_problem();
        let pool = FeaturePool::from_indices((0..20).collect()).unwrap();
        let goal = GaConfig { fitness_goal: Some(10.0), ..Default::default() };
        assert_eq!(ga_select(&pool, &p.vectors, &p.labels, &goal).unwrap().stop, StopReason::FitnessGoal);
        let stall = GaConfig { stall_generations: Some(3), max_generations: 10_000, ..Default::default() };
        assert_eq!(ga_select(&pool, &p.vectors, &p.labels, &stall).unwrap().stop, StopReason::Stalled);
        let budget = GaConfig { eval_budget: Some(60), ..Default::default() };
        let out = ga_select(&pool, &p.vectors, &p.labels, &budget).unwrap();
        assert_eq!(out.stop, StopReason::Budget);
        assert!(out.evaluations >= 60);
    }

    #[test]
    fn ga_rejects_bad_input() {
        let p = small_problem();
        let pool = FeaturePool::from_indices(vec![]).unwrap();
        assert!(ga_select(&pool, &p.vectors, &p.labels, &GaConfig::default()).is_err());
        let pool = FeaturePool::from_indices(vec![0, 1]).unwrap();
        let cfg = GaConfig { population_size: 1, ..Default::default() };
        assert!(ga_select(&pool, &p.vectors, &p.labels, &cfg).is_err());
        assert!(ga_select(&pool, &p.vectors[..3], &p.labels[..3], &GaConfig::default()).is_err());
    }
}

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use irisfuse::euler::{euler_code, euler_number, mahalanobis_f64, CovarianceModel};
use irisfuse::evaluation::{compute_metrics, TrialSet};
use irisfuse::fusion::{decide, fuse, normalize, Algorithm, FusionRule, MatchScore, NormalizedScore, Polarity, ScoreRange};
use irisfuse::gasel::{
    fitness_cost, ga_select, rank_entropy, rank_knn, rank_rfe, rank_tstat, FeaturePool, GaConfig, PlantedProblem,
    PlantedSpec, TrialMetrics,
};
use irisfuse::imaging::{bit_planes, convolve2d, from_bit_planes, gradients, load_pgm, write_pgm, BinaryImage, GrayImage, Kernel};
use irisfuse::normalization::{enhance, PolarIris, POLAR_HEIGHT, POLAR_WIDTH};
use irisfuse::segmentation::{build_noise_mask, circular_hough, Circle, EdgeMap};
use irisfuse::zerocross::{dyadic_wavelet_1d, match_templates, BitPlane, ZeroCrossTemplate};

fn gray(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(any::<u8>(), w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
}

fn binary(w: usize, h: usize) -> impl Strategy<Value = BinaryImage> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| BinaryImage::new(w, h, d).unwrap())
}

fn plane() -> impl Strategy<Value = BitPlane> {
    prop::collection::vec(any::<u8>(), BitPlane::BYTE_LEN).prop_map(|b| BitPlane::from_bytes(&b).unwrap())
}

/// Template with a sparse random mask.
fn template() -> impl Strategy<Value = ZeroCrossTemplate> {
    (plane(), plane(), any::<u64>()).prop_map(|(a, b, seed)| {
        let mask = BitPlane::from_fn(|c, r| (c * 31 + r * 17 + seed as usize) % 23 == 0);
        ZeroCrossTemplate::new(vec![a, b], mask).unwrap()
    })
}

fn polar() -> impl Strategy<Value = PolarIris> {
    (gray(POLAR_WIDTH, POLAR_HEIGHT), any::<u64>()).prop_map(|(img, seed)| {
        let mask = BinaryImage::from_fn(POLAR_WIDTH, POLAR_HEIGHT, |x, y| (x / 16 + y / 8 + seed as usize) % 5 == 0);
        PolarIris::new(img, mask).unwrap()
    })
}

fn spd() -> impl Strategy<Value = CovarianceModel> {
    prop::array::uniform4(prop::array::uniform4(-2.0f64..2.0)).prop_map(|a| {
        // A A^T + I is symmetric positive-definite
        let mut s = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = (0..4).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..4 {
            for j in 0..i {
                s[i][j] = s[j][i];
            }
        }
        CovarianceModel::new(s, 1.0).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // imaging

    #[test]
    fn bit_planes_reconstruct(img in gray(9, 7)) {
        prop_assert_eq!(from_bit_planes(&bit_planes(&img)).unwrap(), img);
    }

    #[test]
    fn convolution_is_linear(
        a in gray(8, 8), b in gray(8, 8),
        ka in -3.0f64..3.0, kb in -3.0f64..3.0,
        w in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let k = Kernel::new(3, 3, w.clone()).unwrap();
        let (ca, cb) = (convolve2d(&a, &k).unwrap(), convolve2d(&b, &k).unwrap());
        // conv(ka*A + kb*B) computed through the weights, since images are u8
        let ka_k = k.scaled(ka).unwrap();
        let kb_k = k.scaled(kb).unwrap();
        let combined: Vec<f64> = convolve2d(&a, &ka_k).unwrap().values().iter()
            .zip(convolve2d(&b, &kb_k).unwrap().values()).map(|(x, y)| x + y).collect();
        for ((x, y), c) in ca.values().iter().zip(cb.values()).zip(&combined) {
            prop_assert!((ka * x + kb * y - c).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_image_has_zero_gradient(v in any::<u8>(), w in 3usize..20, h in 3usize..20) {
        let (gx, gy) = gradients(&GrayImage::filled(w, h, v)).unwrap();
        prop_assert!(gx.values().iter().chain(gy.values()).all(|&g| g == 0.0));
    }

    #[test]
    fn pgm_round_trip(img in gray(13, 5)) {
        let bytes = write_pgm(&img);
        prop_assert_eq!(write_pgm(&load_pgm(&bytes).unwrap()), bytes);
    }

    // segmentation

    #[test]
    fn hough_translation_equivariant(cx in 30u32..40, cy in 30u32..40, r in 12u32..20, dx in -8i32..8, dy in -8i32..8) {
        let ring = |ox: i32, oy: i32| {
            let pts: Vec<(u32, u32)> = (0..64).map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 64.0;
                (
                    ((cx as f64 + r as f64 * t.cos()).round() as i32 + ox) as u32,
                    ((cy as f64 + r as f64 * t.sin()).round() as i32 + oy) as u32,
                )
            }).collect();
            EdgeMap::from_points(80, 80, pts).unwrap()
        };
        let a = circular_hough(&ring(0, 0), 8, 24).unwrap();
        let b = circular_hough(&ring(dx, dy), 8, 24).unwrap();
        prop_assert_eq!(b.cx - a.cx, dx as f64);
        prop_assert_eq!(b.cy - a.cy, dy as f64);
        prop_assert_eq!(b.r, a.r);
    }

    #[test]
    fn noise_mask_grows_as_threshold_drops(img in gray(40, 40), t1 in any::<u8>(), t2 in any::<u8>()) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let pupil = Circle::new(20.0, 20.0, 5.0);
        let iris = Circle::new(20.0, 20.0, 15.0);
        let at_hi = build_noise_mask(&img, &pupil, &iris, &[], hi, 0.0).unwrap();
        let at_lo = build_noise_mask(&img, &pupil, &iris, &[], lo, 0.0).unwrap();
        prop_assert_eq!(&at_hi, &build_noise_mask(&img, &pupil, &iris, &[], hi, 0.0).unwrap());
        prop_assert!(at_hi.bits().iter().zip(at_lo.bits()).all(|(&h, &l)| !h || l));
    }

    // normalization

    #[test]
    fn enhance_keeps_order(p in polar()) {
        let e = enhance(&p);
        let (src, dst, m) = (p.intensities().data(), e.intensities().data(), p.mask().bits());
        let mut pairs: Vec<(u8, u8)> = (0..src.len()).filter(|&i| !m[i]).map(|i| (src[i], dst[i])).collect();
        pairs.sort_unstable();
        prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    // zero-crossing

    #[test]
    fn hamming_identity_and_symmetry(a in template(), b in template(), k in -8isize..=8) {
        prop_assert_eq!(match_templates(&a, &a, 8).unwrap(), 0.0);
        prop_assert_eq!(match_templates(&a, &b, 8).unwrap(), match_templates(&b, &a, 8).unwrap());
        prop_assert_eq!(match_templates(&a, &a.shifted(k), 8).unwrap(), 0.0);
    }

    #[test]
    fn wavelet_is_linear(
        x in prop::collection::vec(-100.0f64..100.0, 64),
        y in prop::collection::vec(-100.0f64..100.0, 64),
        a in -3.0f64..3.0, b in -3.0f64..3.0, s in prop::sample::select(vec![1u32, 2, 4, 8]),
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (wx, wy, wm) = (
            dyadic_wavelet_1d(&x, s).unwrap(),
            dyadic_wavelet_1d(&y, s).unwrap(),
            dyadic_wavelet_1d(&mix, s).unwrap(),
        );
        for i in 0..64 {
            prop_assert!((a * wx[i] + b * wy[i] - wm[i]).abs() < 1e-9);
        }
    }

    // euler

    #[test]
    fn euler_additive_across_gutter(a in binary(6, 5), b in binary(7, 5)) {
        let joined = BinaryImage::from_fn(6 + 2 + 7, 5, |x, y| match x {
            0..=5 => a.get(x, y),
            6 | 7 => false,
            _ => b.get(x - 8, y),
        });
        prop_assert_eq!(euler_number(&joined), euler_number(&a) + euler_number(&b));
    }

    #[test]
    fn mahalanobis_metric_properties(s in spd(), x in prop::array::uniform4(-50.0f64..50.0), y in prop::array::uniform4(-50.0f64..50.0)) {
        let dxy = mahalanobis_f64(&x, &y, &s).unwrap();
        prop_assert!((dxy - mahalanobis_f64(&y, &x, &s).unwrap()).abs() < 1e-9);
        prop_assert_eq!(mahalanobis_f64(&x, &x, &s).unwrap(), 0.0);
        if x != y {
            prop_assert!(dxy > 0.0);
        }
        // whitened Euclidean: solve L z = v independently for each point
        let l = s.cholesky_factor().unwrap();
        let whiten = |v: &[f64; 4]| {
            let mut z = [0.0; 4];
            for i in 0..4 {
                z[i] = (v[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
            }
            z
        };
        let (zx, zy) = (whiten(&x), whiten(&y));
        let euclid = zx.iter().zip(&zy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!((dxy - euclid).abs() < 1e-9 * (1.0 + euclid));
    }

    #[test]
    fn variance_damps_its_component(d in prop::array::uniform4(-10.0f64..10.0), v in 0.1f64..10.0, extra in 0.0f64..10.0, i in 0usize..4) {
        let diag = |bump: f64| {
            let mut s = [[0.0; 4]; 4];
            for k in 0..4 {
                s[k][k] = if k == i { v + bump } else { 1.0 };
            }
            CovarianceModel::new(s, 0.0).unwrap()
        };
        let zero = [0.0; 4];
        prop_assert!(mahalanobis_f64(&d, &zero, &diag(extra)).unwrap() <= mahalanobis_f64(&d, &zero, &diag(0.0)).unwrap() + 1e-12);
    }

    #[test]
    fn euler_code_ignores_masked_pixels(p in polar(), noise in gray(POLAR_WIDTH, POLAR_HEIGHT)) {
        let m = p.mask().clone();
        let mixed: Vec<u8> = p.intensities().data().iter().zip(noise.data()).zip(m.bits())
            .map(|((&v, &n), &masked)| if masked { n } else { v }).collect();
        let q = PolarIris::new(GrayImage::new(POLAR_WIDTH, POLAR_HEIGHT, mixed).unwrap(), m.clone()).unwrap();
        prop_assert_eq!(euler_code(&p, &m).unwrap(), euler_code(&q, &m).unwrap());
    }

    // feature selection

    #[test]
    fn rankings_are_permutations(seed in any::<u64>()) {
        let spec = PlantedSpec { identities: 3, samples_per_identity: 3, features: 12, informative: 3, ..PlantedSpec::default() };
        let p = PlantedProblem::generate(&spec, seed).unwrap();
        let rows = p.rows();
        for r in [rank_entropy, rank_tstat, rank_knn, rank_rfe] {
            let mut order = r(&rows, &p.labels).unwrap().order;
            order.sort_unstable();
            prop_assert_eq!(order, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fitness_cost_monotone(
        rr in 0.0f64..1.0, far in 0.0f64..1.0, frr in 0.0f64..1.0, size in 0usize..50,
        w in prop::array::uniform4(0.0f64..2.0), bump in 0.0f64..0.5,
    ) {
        let m = TrialMetrics { rr, far, frr, subset_size: size, total_features: 50 };
        let c = fitness_cost(&m, &w);
        let worse_far = TrialMetrics { far: far + bump, ..m };
        let worse_frr = TrialMetrics { frr: frr + bump, ..m };
        let bigger = TrialMetrics { subset_size: size + 1, ..m };
        let better_rr = TrialMetrics { rr: rr + bump, ..m };
        prop_assert!(fitness_cost(&worse_far, &w) >= c);
        prop_assert!(fitness_cost(&worse_frr, &w) >= c);
        prop_assert!(fitness_cost(&bigger, &w) >= c);
        prop_assert!(fitness_cost(&better_rr, &w) <= c);
    }

    // fusion

    #[test]
    fn normalize_is_monotone(lo in -10.0f64..10.0, span in 0.1f64..10.0, a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let range = ScoreRange::new(Algorithm::Euler, lo, lo + span).unwrap();
        let (a, b) = (a.min(b), a.max(b));
        let sim = |raw| normalize(&MatchScore { algorithm: Algorithm::Euler, raw, polarity: Polarity::Similarity }, &range).unwrap().value;
        let dist = |raw| normalize(&MatchScore::distance(Algorithm::Euler, raw), &range).unwrap().value;
        prop_assert!(sim(a) <= sim(b));
        prop_assert!(dist(a) >= dist(b));
    }

    #[test]
    fn fusion_order_and_one_hot(v in prop::array::uniform3(0.0f64..1.0), pick in 0usize..3) {
        let s: Vec<NormalizedScore> = Algorithm::ALL.iter().zip(v).map(|(&algorithm, value)| NormalizedScore { algorithm, value }).collect();
        let (mn, avg, mx) = (
            fuse(&s, &FusionRule::Min).unwrap(),
            fuse(&s, &FusionRule::SumAverage).unwrap(),
            fuse(&s, &FusionRule::Max).unwrap(),
        );
        prop_assert!(mn <= avg + 1e-15 && avg <= mx + 1e-15);
        let mut w = [0.0; 3];
        w[pick] = 1.0;
        prop_assert_eq!(fuse(&s, &FusionRule::Weighted(w)).unwrap(), v[pick]);
    }

    #[test]
    fn decide_is_monotone(s in 0.0f64..1.0, up in 0.0f64..1.0, x in 0.0f64..1.0) {
        if decide(s, x).bit() == 0 {
            prop_assert_eq!(decide(s + up, x).bit(), 0);
        }
    }

    // evaluation

    #[test]
    fn metric_curves_are_monotone(
        g in prop::collection::vec(0.0f64..1.0, 1..40),
        i in prop::collection::vec(0.0f64..1.0, 1..40),
        n in 2usize..60,
    ) {
        let r = compute_metrics(&TrialSet { genuine: g.clone(), imposter: i.clone() }, n).unwrap();
        prop_assert!(r.far.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.frr.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(r.far.iter().chain(&r.frr).all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.roc.windows(2).all(|w| w[1].0 <= w[0].0));
        let cubed = |v: &[f64]| v.iter().map(|s| s.powi(3)).collect::<Vec<_>>();
        let rc = compute_metrics(&TrialSet { genuine: cubed(&g), imposter: cubed(&i) }, n).unwrap();
        prop_assert_eq!(rc.eer, r.eer);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ga_elitism_and_determinism(seed in any::<u64>()) {
        let spec = PlantedSpec { identities: 5, samples_per_identity: 3, features: 30, informative: 4, ..PlantedSpec::default() };
        let p = PlantedProblem::generate(&spec, seed).unwrap();
        let pool = FeaturePool::from_indices((0..30).collect()).unwrap();
        let cfg = GaConfig { population_size: 12, max_generations: 15, rng_seed: seed, ..GaConfig::default() };
        let a = ga_select(&pool, &p.vectors, &p.labels, &cfg).unwrap();
        prop_assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(a, ga_select(&pool, &p.vectors, &p.labels, &cfg).unwrap());
    }
}

#[test]
fn roulette_any_short_vector() {
    use irisfuse::gasel::roulette_select;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fitness in [vec![0.5, 0.1, 2.0, 0.0, 1.4], vec![1.0; 10], vec![0.2, 0.3, 0.5]] {
        let total: f64 = fitness.iter().sum();
        let mut counts = vec![0usize; fitness.len()];
        let draws = 100_000;
        for _ in 0..draws {
            counts[roulette_select(&fitness, &mut rng).unwrap()] += 1;
        }
        for (c, f) in counts.iter().zip(&fitness) {
            assert!((*c as f64 / draws as f64 - f / total).abs() <= 0.02);
        }
    }
}

use irisfuse::euler::CovarianceModel;
use irisfuse::evaluation::build_corpus;
use irisfuse::fusion::{Decision, FusionPolicy};
use irisfuse::imaging::GrayImage;
use irisfuse::pipeline::{process, PipelineConfig, ProcessedSample};
use irisfuse::store::Gallery;
use irisfuse::Error;

/// Enrolls the first two samples of each identity, returning the gallery and
/// the remaining samples as processed probes.
fn enrolled(identities: usize, seed: u64) -> (Gallery, Vec<(usize, ProcessedSample)>) {
    let corpus = build_corpus(identities, 3, seed).unwrap();
    let cfg = PipelineConfig::default();
    let mut g = Gallery::new();
    let mut probes = Vec::new();
    for id in 0..identities {
        let imgs: Vec<GrayImage> = corpus
            .entries
            .iter()
            .filter(|e| e.identity == id)
            .map(|e| e.render().unwrap().0)
            .collect();
        let before = g.len();
        g.enroll(&format!("person-{id:02}"), &imgs[..2], &cfg).unwrap();
        assert_eq!(g.len(), before + 1);
        // positive-definite covariance after every enrollment
        assert!(CovarianceModel::new(*g.covariance().matrix(), g.covariance().epsilon()).is_ok());
        probes.push((id, process(&imgs[2], &cfg).unwrap()));
    }
    (g, probes)
}

#[test]
fn genuine_accepted_imposters_rejected() {
    let (g, probes) = enrolled(20, 7);
    let policy = FusionPolicy::default();
    let (mut accepted, mut rejected, mut imposters) = (0, 0, 0);
    for (pid, probe) in &probes {
        for id in 0..20 {
            let v = g.verify_sample(&format!("person-{id:02}"), probe, &policy, 8).unwrap();
            if id == *pid {
                accepted += (v.decision == Decision::Accept) as usize;
            } else {
                imposters += 1;
                rejected += (v.decision == Decision::Reject) as usize;
            }
        }
    }
    assert!(accepted >= 17, "accepted {accepted} of 20 genuine probes");
    assert!(rejected as f64 >= 0.95 * imposters as f64, "rejected {rejected} of {imposters}");
}

#[test]
fn ten_identity_gallery_round_trip() {
    let (g, probes) = enrolled(10, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.irf");
    g.save(&path).unwrap();
    let loaded = Gallery::load(&path).unwrap();
    assert_eq!(loaded, g);
    let first = std::fs::read(&path).unwrap();
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    // verification against the loaded gallery is unchanged
    let policy = FusionPolicy::default();
    let a = g.verify_sample("person-04", &probes[4].1, &policy, 8).unwrap();
    let b = loaded.verify_sample("person-04", &probes[4].1, &policy, 8).unwrap();
    assert_eq!(a, b);
}

#[test]
fn enrollment_errors() {
    let cfg = PipelineConfig::default();
    let mut g = Gallery::new();
    let blank = GrayImage::filled(240, 240, 128);
    assert!(matches!(
        g.enroll("x", &[blank.clone(), blank], &cfg),
        Err(Error::SegmentationFailureRate { failed: 2, total: 2 })
    ));
    assert!(g.is_empty());
    let corpus = build_corpus(1, 1, 2).unwrap();
    let img = corpus.entries[0].render().unwrap().0;
    g.enroll("x", std::slice::from_ref(&img), &cfg).unwrap();
    assert!(matches!(g.enroll("x", &[img], &cfg), Err(Error::DuplicateIdentity(_))));
    assert_eq!(g.len(), 1);
}

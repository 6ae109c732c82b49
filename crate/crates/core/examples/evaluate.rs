//! Small end-to-end evaluation: equal error rate per matcher and fused.
//!
//! cargo run --release --example evaluate

use irisfuse::evaluation::{build_corpus, compute_metrics, run_trials, EvaluationConfig};
use irisfuse::fusion::Algorithm;

fn main() -> irisfuse::Result<()> {
    let corpus = build_corpus(8, 3, 7)?;
    let mut cfg = EvaluationConfig::default();
    cfg.training_identities = 6;
    cfg.training_samples = 3;
    cfg.ga.max_generations = 30;
    let results = run_trials(&corpus, &cfg)?;
    println!("processed {} images, {} failed segmentation", results.processed, results.failures);
    for alg in Algorithm::ALL {
        let set = results.algorithm(alg);
        let r = compute_metrics(set, cfg.threshold_count)?;
        println!("{:<10} eer {:.3}  genuine {:.3}  imposter {:.3}", alg.name(), r.eer, set.genuine_mean(), set.imposter_mean());
    }
    let r = compute_metrics(&results.fused, cfg.threshold_count)?;
    println!("{:<10} eer {:.3} at threshold {:.3}", "fused", r.eer, r.eer_threshold);
    Ok(())
}

//! Normalizing raw distances and fusing them under each rule.
//!
//! cargo run --example fuse_scores

use irisfuse::fusion::{decide, fuse, normalize, Algorithm, FusionRule, MatchScore, ScoreRange, DEFAULT_THRESHOLD};

fn main() -> irisfuse::Result<()> {
    let raw = [0.31, 4.2, 18.0];
    let ranges = [(0.0, 0.5), (0.0, 12.0), (0.0, 60.0)];
    let mut normalized = Vec::new();
    for ((alg, r), (lo, hi)) in Algorithm::ALL.iter().zip(raw).zip(ranges) {
        let n = normalize(&MatchScore::distance(*alg, r), &ScoreRange::new(*alg, lo, hi)?)?;
        println!("{:<10} raw {r:>6.2} -> similarity {:.3}", alg.name(), n.value);
        normalized.push(n);
    }
    let rules = [FusionRule::SumAverage, FusionRule::Min, FusionRule::Max, FusionRule::Weighted([0.6, 0.1, 0.3])];
    for rule in rules {
        let f = fuse(&normalized, &rule)?;
        println!("{:<8} {f:.3}  {:?}", rule.name(), decide(f, DEFAULT_THRESHOLD));
    }
    Ok(())
}

//! Genetic feature selection on a problem with ten planted informative
//! features among a hundred.
//!
//! cargo run --example ga_planted

use irisfuse::gasel::{ga_select, FeaturePool, GaConfig, PlantedProblem, PlantedSpec};

fn main() -> irisfuse::Result<()> {
    let spec = PlantedSpec::default();
    let problem = PlantedProblem::generate(&spec, 3)?;
    let pool = FeaturePool::from_indices((0..spec.features).collect())?;
    let cfg = GaConfig { rng_seed: 3, ..GaConfig::default() };
    let out = ga_select(&pool, &problem.vectors, &problem.labels, &cfg)?;

    let chosen: Vec<usize> = (0..pool.len()).filter(|&i| out.best.genes()[i]).collect();
    let hits = problem.informative.iter().filter(|f| chosen.contains(f)).count();
    println!("planted   {:?}", problem.informative);
    println!("selected  {chosen:?}");
    println!("recovered {hits} of {}", problem.informative.len());
    println!(
        "cost {:.4} after {} generations ({:?}), far {:.3} frr {:.3}",
        out.best_cost,
        out.history.len() - 1,
        out.stop,
        out.best_metrics.far,
        out.best_metrics.frr
    );
    Ok(())
}

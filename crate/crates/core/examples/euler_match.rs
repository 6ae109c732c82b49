//! Euler codes over the bit planes and the Mahalanobis distance between them.
//!
//! cargo run --example euler_match

use irisfuse::euler::{common_mask, estimate_covariance, euler_code, mahalanobis};
use irisfuse::evaluation::build_corpus;
use irisfuse::normalization::{enhance, rubber_sheet};

fn main() -> irisfuse::Result<()> {
    let corpus = build_corpus(4, 2, 17)?;
    let mut polars = Vec::new();
    for e in &corpus.entries {
        let (img, truth) = e.render()?;
        polars.push(enhance(&rubber_sheet(&img, &truth)?));
    }
    let own: Vec<_> = polars.iter().map(|p| euler_code(p, p.mask())).collect::<Result<_, _>>()?;
    for (e, c) in corpus.entries.iter().zip(&own) {
        println!("{}  {:?}", e.file_name(), c.0);
    }
    let model = estimate_covariance(&own, None)?;
    println!("epsilon {:.3}", model.epsilon());

    // pairs are compared over the union of their masks
    let pair = |i: usize, j: usize| -> irisfuse::Result<f64> {
        let cm = common_mask(polars[i].mask(), polars[j].mask())?;
        mahalanobis(&euler_code(&polars[i], &cm)?, &euler_code(&polars[j], &cm)?, &model)
    };
    println!("genuine  id0: {:.3}", pair(0, 1)?);
    println!("imposter id0/id1: {:.3}", pair(0, 3)?);
    Ok(())
}

//! Zero-crossing templates: genuine versus imposter Hamming distance.
//!
//! cargo run --example zerocross_match

use irisfuse::evaluation::build_corpus;
use irisfuse::normalization::{enhance, rubber_sheet};
use irisfuse::zerocross::{encode, match_templates, DEFAULT_MAX_SHIFT, DEFAULT_SCALES};

fn main() -> irisfuse::Result<()> {
    let corpus = build_corpus(2, 2, 21)?;
    let mut templates = Vec::new();
    for e in &corpus.entries {
        let (img, truth) = e.render()?;
        let polar = enhance(&rubber_sheet(&img, &truth)?);
        templates.push((e.file_name(), encode(&polar, &DEFAULT_SCALES)?));
    }
    for i in 0..templates.len() {
        for j in i + 1..templates.len() {
            let d = match_templates(&templates[i].1, &templates[j].1, DEFAULT_MAX_SHIFT)?;
            println!("{} vs {}: {d:.4}", templates[i].0, templates[j].0);
        }
    }
    Ok(())
}

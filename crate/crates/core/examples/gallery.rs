//! Enrolls a few identities, saves the gallery, reloads it and verifies probes.
//!
//! cargo run --example gallery

use irisfuse::evaluation::build_corpus;
use irisfuse::fusion::FusionPolicy;
use irisfuse::pipeline::PipelineConfig;
use irisfuse::store::Gallery;

fn main() -> irisfuse::Result<()> {
    let corpus = build_corpus(4, 3, 9)?;
    let cfg = PipelineConfig::default();
    let image = |id: usize, s: usize| corpus.entries[id * 3 + s].render().map(|(img, _)| img);

    let mut gallery = Gallery::new();
    for id in 0..4 {
        gallery.enroll(&format!("person{id}"), &[image(id, 0)?, image(id, 1)?], &cfg)?;
    }
    let path = std::env::temp_dir().join("irisfuse_example.irf");
    gallery.save(&path)?;
    let gallery = Gallery::load(&path)?;
    println!("{} records, {} bytes on disk", gallery.len(), std::fs::metadata(&path)?.len());

    let policy = FusionPolicy::default();
    for (claim, probe) in [(0, 0), (0, 2), (3, 3), (3, 1)] {
        let v = gallery.verify(&format!("person{claim}"), &image(probe, 2)?, &policy, &cfg)?;
        println!("claim person{claim}, probe of person{probe}: fused {:.3} {:?}", v.fused, v.decision);
    }
    Ok(())
}

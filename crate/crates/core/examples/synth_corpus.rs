//! Renders a small synthetic corpus and writes the images plus manifest to a
//! temp directory.
//!
//! cargo run --example synth_corpus

use irisfuse::evaluation::build_corpus;
use irisfuse::imaging::write_pgm;

fn main() -> irisfuse::Result<()> {
    let corpus = build_corpus(3, 2, 7)?;
    let dir = std::env::temp_dir().join("irisfuse_synth_example");
    std::fs::create_dir_all(&dir)?;
    for e in &corpus.entries {
        let (img, truth) = e.render()?;
        std::fs::write(dir.join(e.file_name()), write_pgm(&img))?;
        println!(
            "{}  pupil r={:.1}  iris r={:.1}  rotation={:.1} deg",
            e.file_name(),
            truth.pupil.r,
            truth.iris.r,
            e.spec.rotation.to_degrees()
        );
    }
    std::fs::write(dir.join("manifest.txt"), corpus.manifest())?;
    println!("wrote {} images to {}", corpus.entries.len(), dir.display());
    Ok(())
}

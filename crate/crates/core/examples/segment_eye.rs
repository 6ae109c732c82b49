//! Segments one synthetic eye and compares the circles with ground truth.
//!
//! cargo run --example segment_eye

use irisfuse::evaluation::{synth_eye, SynthEyeSpec};
use irisfuse::segmentation::{segment, sidecar_text, SegmentationConfig};

fn main() -> irisfuse::Result<()> {
    let mut spec = SynthEyeSpec::plain(30.0, 85.0, 3);
    spec.noise_sigma = 2.0;
    spec.eyelid_coverage = 0.2;
    let (img, truth) = synth_eye(&spec)?;
    let seg = segment(&img, &SegmentationConfig::default())?;
    println!("found:\n{}", sidecar_text(&seg));
    println!("truth: pupil ({:.1}, {:.1}, {:.1})  iris ({:.1}, {:.1}, {:.1})",
        truth.pupil.cx, truth.pupil.cy, truth.pupil.r, truth.iris.cx, truth.iris.cy, truth.iris.r);
    println!(
        "eyelids: upper {}, lower {}; masked pixels {}",
        seg.upper_eyelid.is_some(),
        seg.lower_eyelid.is_some(),
        seg.noise_mask.count_ones()
    );
    Ok(())
}

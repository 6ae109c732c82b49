//! Unwraps an eye into the fixed polar rectangle and shows that rotating the
//! eye turns into a column shift.
//!
//! cargo run --example rubber_sheet

use irisfuse::evaluation::{synth_eye, SynthEyeSpec};
use irisfuse::normalization::{rubber_sheet, POLAR_WIDTH};

fn main() -> irisfuse::Result<()> {
    let base = SynthEyeSpec::plain(28.0, 80.0, 5);
    let turned = SynthEyeSpec { rotation: 8f64.to_radians(), ..base.clone() };
    let (a, ta) = synth_eye(&base)?;
    let (b, tb) = synth_eye(&turned)?;
    let (pa, pb) = (rubber_sheet(&a, &ta)?, rubber_sheet(&b, &tb)?);
    println!("polar size {}x{}", pa.intensities().width(), pa.intensities().height());

    let diff = |k: isize| {
        let s = pa.rotate_columns(k);
        let (x, y) = (s.intensities().data(), pb.intensities().data());
        x.iter().zip(y).map(|(p, q)| (*p as f64 - *q as f64).abs()).sum::<f64>() / x.len() as f64
    };
    let expected = (POLAR_WIDTH as f64 * 8.0 / 360.0).round() as isize;
    for k in [0, expected / 2, expected, expected + 3] {
        println!("shift {k:>2}: mean abs diff {:.2}", diff(k));
    }
    Ok(())
}

//! Runs guidewire detection, lumen segmentation, pixel shifting and filtering on a
//! noisy phantom, and compares the detected geometry against truth.

use fibcap::phantom::{generate, standard_suite};
use fibcap::preprocess::{preprocess_pullback, PreprocessParams};
use fibcap::pullback::{write_pgm, Pgm};

fn main() -> fibcap::Result<()> {
    let spec = standard_suite("fc-test-16")?.remove(0);
    let (pullback, truth) = generate(&spec)?;
    let frames = preprocess_pullback(&pullback, &PreprocessParams::default())?;
    for (p, t) in frames.iter().zip(&truth.frames) {
        let err = p
            .lumen
            .r_index
            .iter()
            .zip(&t.lumen.r_index)
            .zip(&p.lumen.valid)
            .filter(|(_, &v)| v)
            .map(|((a, b), _)| a.abs_diff(*b))
            .max()
            .unwrap_or(0);
        let shadow = t.shadow.map(|s| (s.theta_start, s.theta_end));
        println!(
            "frame {}: shadow detected {}..={} (truth {:?}), max lumen error {err} px, output {:?}",
            p.source_frame_index, p.shadow.theta_start, p.shadow.theta_end, shadow, p.data.dim()
        );
    }
    write_pgm("preprocessed_frame0.pgm", &Pgm::from_unit_image(&frames[0].data))?;
    println!("wrote preprocessed_frame0.pgm");
    Ok(())
}

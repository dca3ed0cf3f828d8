//! Generates a named phantom suite and writes it in the standard on-disk layout.
//!
//! `cargo run --release --example generate_phantom -- edge-cases /tmp/phantoms`

use std::path::PathBuf;

use fibcap::phantom::{generate, standard_suite, write_phantom, SUITE_NAMES};

fn main() -> fibcap::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite = args.next().unwrap_or_else(|| "edge-cases".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantoms".into()));
    println!("suites: {SUITE_NAMES:?}");
    for spec in standard_suite(&suite)? {
        let (pullback, truth) = generate(&spec)?;
        let files = write_phantom(&out, &spec, &pullback, &truth)?;
        let fc_pixels: usize = truth.frames.iter().map(|f| f.fc.count()).sum();
        let min_cap = truth
            .frames
            .iter()
            .flat_map(|f| f.thickness_um.iter().flatten())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        println!(
            "{:<20} {} frames {}x{}  FC pixels {fc_pixels:>7}  min cap {min_cap:>6.1} um  -> {}",
            spec.id,
            pullback.n_frames(),
            pullback.n_r(),
            pullback.n_theta(),
            files.pullback.display()
        );
    }
    Ok(())
}

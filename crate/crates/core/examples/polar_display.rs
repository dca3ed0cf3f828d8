//! Renders a polar phantom frame to a Cartesian cross-section with log display
//! compression.

use fibcap::phantom::{generate, standard_suite};
use fibcap::pullback::{log_display, polar_to_cartesian, write_pgm, PolarFrame, Pgm};

fn main() -> fibcap::Result<()> {
    let spec = standard_suite("fc-train-64")?.remove(0);
    let (pullback, _) = generate(&spec)?;
    let frame = pullback.frame(0);
    let shown = PolarFrame::new(log_display(frame), 0)?;
    let cart = polar_to_cartesian(&shown, pullback.geometry(), 512)?;
    write_pgm("polar.pgm", &Pgm::from_unit_image(shown.data()))?;
    write_pgm("cartesian.pgm", &Pgm::from_unit_image(&cart))?;
    println!("wrote polar.pgm ({}x{}) and cartesian.pgm (512x512)", frame.n_r(), frame.n_theta());
    Ok(())
}

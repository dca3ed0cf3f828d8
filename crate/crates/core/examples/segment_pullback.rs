//! End-to-end inference on one phantom pullback: preprocess, segment every frame,
//! postprocess, then quantify the cap and print the phantom's lesion for comparison.
//!
//! Uses `fc_reduced.fcw` from the `train_fc` example when it exists, otherwise an
//! untrained reduced model (timings are still meaningful, masks are not).
//!
//! The network sees the first `rows` rows below the lumen (default 96, the
//! `train_fc` crop height).
//!
//! `cargo run --release --example segment_pullback -- [weights.fcw] [rows]`

use std::path::PathBuf;

use fibcap::cli::{segment_pullback, SegmentConfig};
use fibcap::phantom::{generate, standard_suite};
use fibcap::preprocess::PreprocessParams;
use fibcap::quantify::{quantify_pullback, QuantConfig};
use fibcap::tensornet::{build_segresnet, load_weights, SegModelConfig};

fn main() -> fibcap::Result<()> {
    let weights = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fc_reduced.fcw".into()));
    let rows = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(96);
    let mut model = build_segresnet::<f32>(SegModelConfig::reduced(), 0)?;
    if weights.exists() {
        let rep = load_weights(&mut model, &weights)?;
        println!("loaded {} layers from {}", rep.matched.len(), weights.display());
    } else {
        println!("{} not found, using an untrained model", weights.display());
    }

    let spec = standard_suite("fc-test-16")?.remove(0);
    let (pb, _) = generate(&spec)?;
    let seg = segment_pullback(&model, &pb, 0..pb.n_frames(), &PreprocessParams::default(), &SegmentConfig { rows })?;
    println!(
        "{} frames: mean {:.3} s/frame, p95 {:.3} s",
        seg.masks.len(),
        seg.timing.mean_s,
        seg.timing.p95_s
    );

    let lumens: Vec<_> = seg.geometry.iter().map(|g| g.lumen.clone()).collect();
    let q = quantify_pullback(&seg.aligned_masks()?, &lumens, pb.geometry(), &QuantConfig::default())?;
    for f in &q.frames {
        println!(
            "frame {:>2}: arc {:>5.1} deg, mean thickness {}",
            f.frame_index,
            f.arc_deg,
            f.mean_thickness_um.map_or("-".into(), |t| format!("{t:.0} um"))
        );
    }
    println!(
        "pullback: mean thickness {:?} um, mean arc {:?} deg, TCFA {}",
        q.mean_thickness_um.map(|v| v.round()),
        q.mean_arc_deg.map(|v| v.round()),
        q.tcfa
    );
    for l in &spec.fc {
        println!(
            "phantom lesion: frames {}..{}, cap {} um (+{} um at the centre)",
            l.frames.0, l.frames.1, l.cap_um, l.cap_bulge_um
        );
    }
    Ok(())
}

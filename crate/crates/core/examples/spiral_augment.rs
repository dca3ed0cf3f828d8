//! Spiral reframing plus stochastic flip/scale/shift on a phantom pullback.

use fibcap::augment::{spiral_offsets, stochastic_augment, AugmentConfig};
use fibcap::phantom::{generate, standard_suite};
use fibcap::preprocess::{preprocess_pullback, PreprocessParams};
use fibcap::pullback::ClassTag;
use rand::SeedableRng;

fn main() -> fibcap::Result<()> {
    let spec = standard_suite("fc-train-64")?.remove(0);
    let (pullback, truth) = generate(&spec)?;
    let masks = truth.masks(ClassTag::Fc);
    let cfg = AugmentConfig::default();
    let mut total = 0;
    for &offset in &cfg.offsets {
        let (pb, m) = spiral_offsets(&pullback, &masks, offset)?;
        let fc: usize = m.iter().map(|x| x.count()).sum();
        println!("offset {offset:>3}: {} frames, {fc} FC pixels", pb.n_frames());
        total += pb.n_frames();
    }
    println!("{} original frames -> {total} reframed frames", pullback.n_frames());

    let pre = preprocess_pullback(&pullback, &PreprocessParams::default())?;
    let mask = pre[0].align_mask(&masks[0])?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..5 {
        let (img, m) = stochastic_augment(&pre[0].data, &mask, &cfg, &mut rng)?;
        let mean = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        let flipped = m != mask;
        println!("draw {i}: mean intensity {mean:.4}, flipped {flipped}");
    }
    Ok(())
}

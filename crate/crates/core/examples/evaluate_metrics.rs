//! Pixel metrics, fold aggregation and Bland-Altman agreement on synthetic data.

use fibcap::pullback::{ClassTag, Mask};
use fibcap::stats::{agreement, coefficient_of_variation, confusion, fold_aggregate, metrics, METRIC_NAMES};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> fibcap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = Mask::new(Array2::from_shape_fn((64, 64), |(r, _)| u8::from(r < 12)), ClassTag::Fc)?;
    let mut folds = Vec::new();
    for _ in 0..5 {
        // flip about 3% of pixels
        let pred = Mask::new(truth.data().mapv(|v| if rng.gen_bool(0.03) { 1 - v } else { v }), ClassTag::Fc)?;
        folds.push(metrics(&confusion(&pred, &truth)?)?);
    }
    let summary = fold_aggregate(&folds)?;
    for (name, v) in METRIC_NAMES.iter().zip(summary.values()) {
        println!("{name:<12} {}", v.map_or("undefined".into(), |m| m.to_string()));
    }

    let noise = Normal::new(3.0, 20.0).expect("valid normal");
    let x: Vec<f64> = (0..500).map(|_| rng.gen_range(50.0..250.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let a = agreement(&y, &x)?;
    println!(
        "agreement: R2 {:.3}, bias {:.2} um, sd {:.2} um, {:.1}% within [{:.1}, {:.1}]",
        a.r_squared.unwrap_or(f64::NAN),
        a.ba_bias,
        a.ba_sd,
        a.pct_within_loa,
        a.ba_loa_low,
        a.ba_loa_high
    );
    let cov = coefficient_of_variation(&[49.0, 126.2, 87.6])?;
    println!("coefficient of variation of [49.0, 126.2, 87.6]: {cov:.2}");
    Ok(())
}

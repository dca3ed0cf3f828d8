//! Trains the reduced SegResNet on windowed crops of the fc-train-64 phantom
//! suite and reports held-out Dice on fc-test-16 after postprocessing.
//!
//! `cargo run --release --example train_fc -- [max_epochs]`

use fibcap::augment::AugmentConfig;
use fibcap::phantom::lesion_crops;
use fibcap::postprocess::postprocess;
use fibcap::pullback::ClassTag;
use fibcap::stats::{confusion, metrics, ConfusionCounts};
use fibcap::tensornet::{build_segresnet, save_weights, SegModelConfig};
use fibcap::train::{fit_with_progress, predict_probabilities, TrainConfig};

fn main() -> fibcap::Result<()> {
    let max_epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let mut train = lesion_crops("fc-train-64", ClassTag::Fc, 96, 112, &[-40, 0, 40, 224])?;
    let val = train.split_off(6).concat();
    let train = train.concat();
    let test = lesion_crops("fc-test-16", ClassTag::Fc, 96, 112, &[0])?.concat();

    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        max_epochs,
        patience: 10,
        min_delta: 2e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut model = build_segresnet::<f32>(SegModelConfig::reduced(), 1)?;
    let log = fit_with_progress(&mut model, &train, &val, &cfg, Some(&AugmentConfig::default()), |e| {
        println!("epoch {:>3}  train {:.4}  val {:.4}  ({:.1}s)", e.epoch, e.train_loss, e.val_loss, e.wall_s)
    })?;

    let images: Vec<_> = test.iter().map(|s| s.image.clone()).collect();
    let probs = predict_probabilities(&model, &images, 8)?;
    let mut counts = ConfusionCounts::default();
    for (p, s) in probs.iter().zip(&test) {
        counts = counts + confusion(&postprocess(p, ClassTag::Fc)?, &s.mask)?;
    }
    let m = metrics(&counts)?;
    println!(
        "best epoch {} ({:?}); held-out Dice {:.4}, sensitivity {:.4}, PPV {:.4}",
        log.best_epoch,
        log.stop_reason,
        m.dice.unwrap_or(f64::NAN),
        m.sensitivity.unwrap_or(f64::NAN),
        m.ppv.unwrap_or(f64::NAN)
    );
    save_weights(&model, std::path::Path::new("fc_reduced.fcw"))?;
    println!("weights written to fc_reduced.fcw");
    Ok(())
}

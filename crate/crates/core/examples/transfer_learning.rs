//! Pretrains on calcification phantoms, then compares random and transferred
//! initialization on the fibrous-cap task by epochs to the best validation loss.
//!
//! `cargo run --release --example transfer_learning -- [pretrain_epochs]`

use fibcap::augment::AugmentConfig;
use fibcap::phantom::lesion_crops;
use fibcap::pullback::ClassTag;
use fibcap::tensornet::{build_segresnet, save_weights, SegModelConfig};
use fibcap::train::{fit, transfer_init, Sample, TrainConfig};

fn split(mut per_pullback: Vec<Vec<Sample>>) -> (Vec<Sample>, Vec<Sample>) {
    let val = per_pullback.split_off(6).concat();
    (per_pullback.concat(), val)
}

fn main() -> fibcap::Result<()> {
    let pre_epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30usize).max(2);
    let (cal_train, cal_val) = split(lesion_crops("cal-pretrain-64", ClassTag::Calcification, 96, 112, &[-40, 0, 40, 224])?);
    let (fc_train, fc_val) = split(lesion_crops("fc-train-64", ClassTag::Fc, 96, 112, &[-40, 0, 40, 224])?);
    let aug = AugmentConfig::default();
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        max_epochs: 100,
        patience: 10,
        min_delta: 2e-3,
        seed: 1,
        ..TrainConfig::default()
    };

    let mut pre = build_segresnet::<f32>(SegModelConfig::reduced(), 2)?;
    let pcfg = TrainConfig {
        max_epochs: pre_epochs,
        patience: cfg.patience.min(pre_epochs.saturating_sub(1)).max(1),
        min_delta: 0.0,
        ..cfg.clone()
    };
    let plog = fit(&mut pre, &cal_train, &cal_val, &pcfg, Some(&aug))?;
    println!("pretrained: best val loss {:.4} at epoch {}", plog.best_val_loss, plog.best_epoch);
    let dir = std::env::temp_dir().join("fibcap_transfer_example");
    std::fs::create_dir_all(&dir).map_err(|e| fibcap::Error::InvalidData(e.to_string()))?;
    let weights = dir.join("cal.fcw");
    save_weights(&pre, &weights)?;

    let mut random = build_segresnet::<f32>(SegModelConfig::reduced(), 1)?;
    let rlog = fit(&mut random, &fc_train, &fc_val, &cfg, Some(&aug))?;
    let mut transfer = build_segresnet::<f32>(SegModelConfig::reduced(), 1)?;
    let report = transfer_init(&mut transfer, &weights)?;
    println!("transferred {} layers", report.matched.len());
    let tlog = fit(&mut transfer, &fc_train, &fc_val, &cfg, Some(&aug))?;
    println!(
        "random init: best epoch {} (val {:.4}); transfer: best epoch {} (val {:.4})",
        rlog.epochs_to_best(),
        rlog.best_val_loss,
        tlog.epochs_to_best(),
        tlog.best_val_loss
    );
    Ok(())
}

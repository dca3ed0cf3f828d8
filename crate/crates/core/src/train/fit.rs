use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamState, AdamWConfig};
use super::loss::{dice_loss, DiceSums, DICE_SMOOTH};
use crate::augment::{stochastic_augment, AugmentConfig};
use crate::pullback::Mask;
use crate::tensornet::{Mode, ParamStore, SegModel, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub l2_reg: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            adam_eps: 1e-9,
            weight_decay: 1e-6,
            l2_reg: 1e-6,
            max_epochs: 600,
            batch_size: 64,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.adam_eps, self.beta1, self.beta2];
        if positive.iter().any(|&v| !(v > 0.0)) || self.weight_decay < 0.0 || self.l2_reg < 0.0 || self.min_delta < 0.0 {
            return Err(Error::InvalidArgument("learning rate, eps and betas must be > 0; decays >= 0".into()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidArgument("betas must be < 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One preprocessed frame with its aligned mask.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Array2<f32>,
    pub mask: Mask,
}

impl Sample {
    pub fn new(image: Array2<f32>, mask: Mask) -> Result<Self> {
        if image.dim() != mask.dim() {
            return Err(Error::Shape(format!("image {:?} vs mask {:?}", image.dim(), mask.dim())));
        }
        Ok(Self { image, mask })
    }
}

/// `(n, 1, h, w)` tensor from equally sized images.
pub fn image_batch<'a>(images: impl IntoIterator<Item = &'a Array2<f32>>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        if *dims.get_or_insert(img.dim()) != img.dim() {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", dims, img.dim())));
        }
        data.extend(img.iter().copied());
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    Tensor::from_vec([n, 1, h, w], data)
}

pub fn mask_batch<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for m in masks {
        if *dims.get_or_insert(m.dim()) != m.dim() {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", dims, m.dim())));
        }
        data.extend(m.data().iter().map(|&v| v as f32));
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    Tensor::from_vec([n, 1, h, w], data)
}

/// Probability maps for `images`, `batch` at a time, in eval mode.
pub fn predict_probabilities(model: &SegModel<f32>, images: &[Array2<f32>], batch: usize) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let y = model.predict(&image_batch(chunk)?)?;
        let (h, w) = y.spatial();
        for i in 0..y.batch() {
            out.push(Array2::from_shape_vec((h, w), y.sample(i).to_vec()).expect("sized"));
        }
    }
    Ok(out)
}

/// Pooled Dice loss of the model over a whole sample set.
pub fn validation_loss(model: &SegModel<f32>, samples: &[Sample], batch: usize) -> Result<f64> {
    let mut sums = DiceSums::default();
    for chunk in samples.chunks(batch.max(1)) {
        let y = model.predict(&image_batch(chunk.iter().map(|s| &s.image))?)?;
        let t = mask_batch(chunk.iter().map(|s| &s.mask))?;
        sums.merge(DiceSums::of(y.data(), t.data()));
    }
    Ok(sums.loss(DICE_SMOOTH))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Patience-based stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records `loss` for `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainLog {
    /// Epoch (1-based) whose snapshot was kept.
    pub fn epochs_to_best(&self) -> usize {
        self.best_epoch
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_s\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.3}", e.epoch, e.train_loss, e.val_loss, e.wall_s);
        }
        let _ = writeln!(
            s,
            "# stop_reason={:?} best_epoch={} best_val_loss={:.6}",
            self.stop_reason, self.best_epoch, self.best_val_loss
        );
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn l2_penalty(params: &ParamStore<f32>, kernels: &[String], weight: f64, grads: &mut ParamStore<f32>) -> Result<f64> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for name in kernels {
        let w = params.require(name)?;
        total += w.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        let g = grads.get_mut(name).expect("same names");
        for (gv, &wv) in g.data_mut().iter_mut().zip(w.data()) {
            *gv += (2.0 * weight * wv as f64) as f32;
        }
    }
    Ok(weight * total)
}

/// Early-stopped training with mini-batch AdamW. On return `model` holds the
/// parameters of the best validation epoch.
pub fn fit(
    model: &mut SegModel<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
) -> Result<TrainLog> {
    fit_with_progress(model, train, val, cfg, augment, |_| {})
}

pub fn fit_with_progress(
    model: &mut SegModel<f32>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if let Some(a) = augment {
        a.validate(None)?;
    }
    let adam = cfg.adamw();
    let kernels = model.conv_kernel_names();
    let mut state = AdamState::new(model.params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(augment.map_or(cfg.seed, |a| a.seed));
    aug_rng.set_stream(2);

    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.params().clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop_reason = StopReason::MaxEpochs;
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train[i];
                match augment {
                    Some(a) => {
                        let (img, m) = stochastic_augment(&s.image, &s.mask, a, &mut aug_rng)?;
                        images.push(img);
                        masks.push(m);
                    }
                    None => {
                        images.push(s.image.clone());
                        masks.push(s.mask.clone());
                    }
                }
            }
            let x = image_batch(&images)?;
            let t = mask_batch(&masks)?;
            let trace = model.forward(x, Mode::Train, &mut dropout_rng)?;
            let (loss, dy) = dice_loss(trace.output(), &t, DICE_SMOOTH)?;
            let mut grads = model.backward(&trace, &dy)?;
            drop(trace);
            let penalty = l2_penalty(model.params(), &kernels, cfg.l2_reg, &mut grads)?;
            adamw_step(model.params_mut(), &grads, &mut state, &adam)?;
            loss_sum += loss + penalty;
            batches += 1;
        }
        let val_loss = validation_loss(model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        if stopper.observe(epoch, val_loss) {
            best = model.params().clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            wall_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    model.set_params(best)?;
    Ok(TrainLog {
        epochs,
        stop_reason,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
    })
}

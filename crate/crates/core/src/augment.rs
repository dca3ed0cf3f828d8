//! Training-time augmentation.
//!
//! Two stages: spiral reframing of raw pullbacks (re-cutting the concatenated
//! A-line stream at a new starting column) and stochastic flip / intensity
//! scale / intensity shift on preprocessed frames.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pullback::{Mask, PolarFrame, Pullback};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Starting A-line offsets used for spiral reframing.
    pub offsets: Vec<usize>,
    pub flip_prob: f64,
    pub scale_prob: f64,
    pub shift_prob: f64,
    /// Half-width of the uniform scale (around 1) and shift (around 0) draws.
    pub factor: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            offsets: spiral_offset_set(448, 80, 6),
            flip_prob: 0.1,
            scale_prob: 0.2,
            shift_prob: 0.2,
            factor: 0.1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, n_theta: Option<usize>) -> Result<()> {
        for p in [self.flip_prob, self.scale_prob, self.shift_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
            }
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::InvalidArgument(format!("augmentation factor {} outside (0, 1)", self.factor)));
        }
        if let Some(n) = n_theta {
            if let Some(o) = self.offsets.iter().find(|&&o| o >= n) {
                return Err(Error::InvalidArgument(format!("offset {o} >= n_theta {n}")));
            }
        }
        Ok(())
    }
}

/// `count` offsets spaced by `step`, wrapped into `[0, n_theta)`.
pub fn spiral_offset_set(n_theta: usize, step: usize, count: usize) -> Vec<usize> {
    (0..count).map(|i| (i * step) % n_theta).collect()
}

/// Re-cuts a pullback as if acquisition had started `offset` A-lines later.
///
/// The A-lines of all frames form one stream; new frame `k` holds stream columns
/// `k·n_theta + offset ..`. The trailing partial frame is dropped, so any positive
/// offset yields `N - 1` frames. Masks are re-cut identically.
pub fn spiral_offsets(pullback: &Pullback, masks: &[Mask], offset: usize) -> Result<(Pullback, Vec<Mask>)> {
    let n = pullback.n_theta();
    if offset >= n {
        return Err(Error::InvalidArgument(format!("offset {offset} outside [0, {n})")));
    }
    if masks.len() != pullback.n_frames() {
        return Err(Error::Shape(format!(
            "{} masks for {} frames",
            masks.len(),
            pullback.n_frames()
        )));
    }
    for (m, f) in masks.iter().zip(pullback.frames()) {
        if m.dim() != f.data().dim() {
            return Err(Error::Shape(format!("mask {:?} vs frame {:?}", m.dim(), f.data().dim())));
        }
    }
    if offset == 0 {
        return Ok((pullback.clone(), masks.to_vec()));
    }
    let out_frames = pullback.n_frames() - 1;
    if out_frames == 0 {
        return Err(Error::InvalidArgument("spiral reframing needs at least two frames".into()));
    }

    let mut frames = Vec::with_capacity(out_frames);
    let mut new_masks = Vec::with_capacity(out_frames);
    for k in 0..out_frames {
        let a = pullback.frame(k).data().view();
        let b = pullback.frame(k + 1).data().view();
        frames.push(PolarFrame::new(recut(a, b, offset), k)?);
        let ma = masks[k].data().view();
        let mb = masks[k + 1].data().view();
        new_masks.push(Mask::new(recut(ma, mb, offset), masks[k].class_tag())?);
    }
    let id = format!("{}@{offset}", pullback.pullback_id());
    Ok((Pullback::new(frames, pullback.geometry().clone(), id)?, new_masks))
}

fn recut<T: Clone>(left: ArrayView2<'_, T>, right: ArrayView2<'_, T>, offset: usize) -> Array2<T> {
    ndarray::concatenate(Axis(1), &[left.slice(s![.., offset..]), right.slice(s![.., ..offset])])
        .expect("frames share n_r")
}

/// Reverses the θ axis.
pub fn flip_theta<T: Clone>(data: &Array2<T>) -> Array2<T> {
    data.slice(s![.., ..;-1]).to_owned()
}

/// Multiplies intensities by `u` and clamps to `[0, 1]`.
pub fn scale_intensity(data: &Array2<f32>, u: f32) -> Array2<f32> {
    data.mapv(|v| (v * u).clamp(0.0, 1.0))
}

/// Adds `v` to every intensity and clamps to `[0, 1]`.
pub fn shift_intensity(data: &Array2<f32>, v: f32) -> Array2<f32> {
    data.mapv(|x| (x + v).clamp(0.0, 1.0))
}

/// Flip / scale / shift, each applied with its configured probability, in that order.
///
/// The RNG is consumed in a fixed pattern (one Bernoulli draw per stage plus one
/// uniform draw for each applied intensity stage), so a seeded stream replays exactly.
pub fn stochastic_augment<R: Rng + ?Sized>(
    frame: &Array2<f32>,
    mask: &Mask,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Array2<f32>, Mask)> {
    if frame.dim() != mask.dim() {
        return Err(Error::Shape(format!("frame {:?} vs mask {:?}", frame.dim(), mask.dim())));
    }
    if let Some(v) = frame.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidData(format!("input not normalized to [0, 1]: {v}")));
    }
    let mut img = frame.clone();
    let mut m = mask.clone();
    if rng.gen_bool(cfg.flip_prob) {
        img = flip_theta(&img);
        m = Mask::new(flip_theta(m.data()), m.class_tag())?;
    }
    if rng.gen_bool(cfg.scale_prob) {
        let u = rng.gen_range(1.0 - cfg.factor..=1.0 + cfg.factor) as f32;
        img = scale_intensity(&img, u);
    }
    if rng.gen_bool(cfg.shift_prob) {
        let v = rng.gen_range(-cfg.factor..=cfg.factor) as f32;
        img = shift_intensity(&img, v);
    }
    Ok((img, m))
}

//! Raw polar frame → aligned, denoised network input.
//!
//! Steps per frame: guidewire shadow detection, lumen segmentation, pixel shifting
//! of every A-line so the lumen sits on row 0, cropping to [`CROP_ROWS`] rows, and a
//! 7×7 Gaussian (σ = 1 px).

mod guidewire;
mod lumen;
mod shift;

pub use guidewire::{detect_guidewire, detect_guidewire_pullback, GuidewireParams, GuidewireShadow};
pub use lumen::{otsu_threshold, segment_lumen, LumenBoundary, LumenParams};
pub use shift::{
    crop_and_filter, gaussian_filter, gaussian_kernel_1d, pixel_shift, shift_mask, unshift_mask, CROP_ROWS,
    GAUSSIAN_SIGMA, GAUSSIAN_SIZE,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::pullback::{Mask, PolarFrame, Pullback};
use crate::Result;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub guidewire: GuidewireParams,
    pub lumen: LumenParams,
}

/// A `CROP_ROWS × n_theta` network input with the geometry that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocFrame {
    pub data: Array2<f32>,
    pub lumen: LumenBoundary,
    pub shadow: GuidewireShadow,
    pub source_frame_index: usize,
}

impl PreprocFrame {
    /// Maps a raw-coordinate mask into this frame's shifted, cropped coordinates.
    pub fn align_mask(&self, raw: &Mask) -> Result<Mask> {
        shift_mask(raw, &self.lumen, &self.shadow, self.data.nrows())
    }
}

/// Per-frame geometry record written next to preprocessed outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub frame_index: usize,
    pub shadow: GuidewireShadow,
    pub lumen: LumenBoundary,
}

impl From<&PreprocFrame> for FrameGeometry {
    fn from(p: &PreprocFrame) -> Self {
        Self {
            frame_index: p.source_frame_index,
            shadow: p.shadow,
            lumen: p.lumen.clone(),
        }
    }
}

/// Runs the lumen/shift/crop/filter steps for a frame whose shadow is already known.
pub fn preprocess_frame_with_shadow(
    frame: &PolarFrame,
    shadow: GuidewireShadow,
    params: &PreprocessParams,
) -> Result<PreprocFrame> {
    let lumen = segment_lumen(frame, &shadow, &params.lumen)?;
    let shifted = pixel_shift(frame, &lumen, &shadow)?;
    let data = crop_and_filter(&shifted, &shadow)?;
    Ok(PreprocFrame {
        data,
        lumen,
        shadow,
        source_frame_index: frame.frame_index(),
    })
}

/// Preprocesses a single frame in isolation (no cross-frame shadow smoothing).
pub fn preprocess_frame(frame: &PolarFrame, params: &PreprocessParams) -> Result<PreprocFrame> {
    let shadow = detect_guidewire(frame, &params.guidewire)?;
    preprocess_frame_with_shadow(frame, shadow, params)
}

/// Preprocesses every frame, smoothing guidewire centres across the pullback.
pub fn preprocess_pullback(pullback: &Pullback, params: &PreprocessParams) -> Result<Vec<PreprocFrame>> {
    use rayon::prelude::*;
    let shadows = detect_guidewire_pullback(pullback, &params.guidewire)?;
    pullback
        .frames()
        .par_iter()
        .zip(shadows)
        .map(|(f, s)| preprocess_frame_with_shadow(f, s, params))
        .collect()
}

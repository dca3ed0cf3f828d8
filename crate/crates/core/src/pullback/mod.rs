//! Pullback data model, file formats and polar rendering.

mod io;
mod render;

pub use io::{load_pullback, read_mask_pgm, read_pgm, save_pullback, write_mask_pgm, write_pgm, Pgm, RawEncoding, RawDtype, Sidecar};
pub use render::{log_display, polar_to_cartesian, LOG_DISPLAY_GAIN};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical sampling of a pullback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// μm per r sample.
    pub radial_spacing_um: f64,
    /// mm between consecutive frames.
    pub frame_spacing_mm: f64,
    /// A-lines per revolution.
    pub theta_count: usize,
    /// Physical radius of the first r sample, μm.
    pub catheter_offset_um: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            radial_spacing_um: 5.0,
            frame_spacing_mm: 0.2,
            theta_count: 448,
            catheter_offset_um: 400.0,
        }
    }
}

impl Geometry {
    pub fn with_theta_count(theta_count: usize) -> Self {
        Self {
            theta_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radial_spacing_um > 0.0
            && self.frame_spacing_mm > 0.0
            && self.theta_count > 0
            && self.catheter_offset_um > 0.0
            && self.radial_spacing_um.is_finite()
            && self.frame_spacing_mm.is_finite()
            && self.catheter_offset_um.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "geometry values must be finite and strictly positive: {self:?}"
            )))
        }
    }

    /// Angular width of one A-line in radians.
    pub fn delta_theta(&self) -> f64 {
        std::f64::consts::TAU / self.theta_count as f64
    }
}

/// One polar frame; rows are depth samples, columns are A-lines.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarFrame {
    data: Array2<f32>,
    frame_index: usize,
}

impl PolarFrame {
    pub fn new(data: Array2<f32>, frame_index: usize) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!("empty frame {:?}", data.dim())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame {frame_index} contains {v}")));
        }
        if let Some(v) = data.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidData(format!(
                "frame {frame_index} contains negative intensity {v}"
            )));
        }
        Ok(Self { data, frame_index })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn n_r(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_theta(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }
}

/// An ordered stack of frames from one catheter withdrawal.
#[derive(Clone, Debug, PartialEq)]
pub struct Pullback {
    frames: Vec<PolarFrame>,
    geometry: Geometry,
    pullback_id: String,
}

impl Pullback {
    pub fn new(frames: Vec<PolarFrame>, geometry: Geometry, pullback_id: impl Into<String>) -> Result<Self> {
        geometry.validate()?;
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("pullback needs at least one frame".into()))?;
        let dims = first.data.dim();
        for (i, f) in frames.iter().enumerate() {
            if f.data.dim() != dims {
                return Err(Error::Shape(format!(
                    "frame {i} has dims {:?}, expected {dims:?}",
                    f.data.dim()
                )));
            }
            if f.frame_index != i {
                return Err(Error::InvalidData(format!(
                    "frame_index {} at position {i}; indices must run 0..N",
                    f.frame_index
                )));
            }
        }
        if geometry.theta_count != dims.1 {
            return Err(Error::Shape(format!(
                "geometry theta_count {} != frame n_theta {}",
                geometry.theta_count, dims.1
            )));
        }
        Ok(Self {
            frames,
            geometry,
            pullback_id: pullback_id.into(),
        })
    }

    /// Builds a pullback from raw arrays, numbering frames from zero.
    pub fn from_arrays(arrays: Vec<Array2<f32>>, geometry: Geometry, pullback_id: impl Into<String>) -> Result<Self> {
        let frames = arrays
            .into_iter()
            .enumerate()
            .map(|(i, a)| PolarFrame::new(a, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, geometry, pullback_id)
    }

    pub fn frames(&self) -> &[PolarFrame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &PolarFrame {
        &self.frames[i]
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn pullback_id(&self) -> &str {
        &self.pullback_id
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_r(&self) -> usize {
        self.frames[0].n_r()
    }

    pub fn n_theta(&self) -> usize {
        self.frames[0].n_theta()
    }
}

/// What a mask labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassTag {
    Fc,
    Calcification,
}

/// Binary per-pixel label (values 0 or 1), rows = r, columns = θ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    data: Array2<u8>,
    class_tag: ClassTag,
}

impl Mask {
    pub fn new(data: Array2<u8>, class_tag: ClassTag) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(Error::InvalidData(format!("mask value {v} is not binary")));
        }
        Ok(Self { data, class_tag })
    }

    /// Constructs a mask that must match `frame` pixel for pixel.
    pub fn aligned(frame: &PolarFrame, data: Array2<u8>, class_tag: ClassTag) -> Result<Self> {
        if frame.data.dim() != data.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} not aligned to frame {:?}",
                data.dim(),
                frame.data.dim()
            )));
        }
        Self::new(data, class_tag)
    }

    pub fn zeros(shape: (usize, usize), class_tag: ClassTag) -> Self {
        Self {
            data: Array2::zeros(shape),
            class_tag,
        }
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn into_data(self) -> Array2<u8> {
        self.data
    }

    pub fn class_tag(&self) -> ClassTag {
        self.class_tag
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    pub fn get(&self, r: usize, theta: usize) -> bool {
        self.data[[r, theta]] == 1
    }
}

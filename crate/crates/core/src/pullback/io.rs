use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClassTag, Geometry, Mask, PolarFrame, Pullback};
use crate::{Error, Result};

/// Sample type of an `.ivp` payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U16,
    F32,
}

impl RawDtype {
    pub fn size(self) -> usize {
        match self {
            RawDtype::U16 => 2,
            RawDtype::F32 => 4,
        }
    }
}

/// How unit-range intensities map to stored samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEncoding {
    pub dtype: RawDtype,
    pub max_raw: f64,
}

impl Default for RawEncoding {
    fn default() -> Self {
        Self {
            dtype: RawDtype::U16,
            max_raw: 65535.0,
        }
    }
}

/// The `<name>.json` file that accompanies every `<name>.ivp` payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub n_frames: usize,
    pub n_r: usize,
    pub n_theta: usize,
    pub dtype: RawDtype,
    pub max_raw: f64,
    pub radial_spacing_um: f64,
    pub frame_spacing_mm: f64,
    pub catheter_offset_um: f64,
    pub pullback_id: String,
}

impl Sidecar {
    pub fn path_for(ivp: &Path) -> PathBuf {
        ivp.with_extension("json")
    }

    pub fn read(ivp: &Path) -> Result<Self> {
        let path = Self::path_for(ivp);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Sidecar {
            path,
            msg: e.to_string(),
        })
    }

    pub fn encoding(&self) -> RawEncoding {
        RawEncoding {
            dtype: self.dtype,
            max_raw: self.max_raw,
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            radial_spacing_um: self.radial_spacing_um,
            frame_spacing_mm: self.frame_spacing_mm,
            theta_count: self.n_theta,
            catheter_offset_um: self.catheter_offset_um,
        }
    }
}

/// Reads `<name>.ivp` and its `<name>.json` sidecar. Samples are divided by `max_raw`.
pub fn load_pullback(path: impl AsRef<Path>) -> Result<Pullback> {
    let path = path.as_ref();
    let side = Sidecar::read(path)?;
    let sidecar_path = Sidecar::path_for(path);
    if side.n_frames == 0 || side.n_r == 0 || side.n_theta == 0 {
        return Err(Error::Sidecar {
            path: sidecar_path,
            msg: "n_frames, n_r and n_theta must be positive".into(),
        });
    }
    if !(side.max_raw > 0.0 && side.max_raw.is_finite()) {
        return Err(Error::Sidecar {
            path: sidecar_path,
            msg: format!("max_raw must be positive, got {}", side.max_raw),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let per_frame = side.n_r * side.n_theta;
    let expected = side.n_frames * per_frame * side.dtype.size();
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: bytes.len(),
        });
    }

    let scale = side.max_raw;
    let samples: Vec<f32> = match side.dtype {
        RawDtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| (u16::from_le_bytes([c[0], c[1]]) as f64 / scale) as f32)
            .collect(),
        RawDtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| (f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 / scale) as f32)
            .collect(),
    };

    let frames = samples
        .chunks_exact(per_frame)
        .enumerate()
        .map(|(i, chunk)| {
            let data = Array2::from_shape_vec((side.n_r, side.n_theta), chunk.to_vec())
                .expect("chunk length equals n_r * n_theta");
            PolarFrame::new(data, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Pullback::new(frames, side.geometry(), side.pullback_id.clone())
}

/// Writes the payload and sidecar. Loading the result and saving it again with the
/// same encoding reproduces the payload byte for byte (u16 always; f32 when
/// `max_raw` is a power of two).
pub fn save_pullback(pullback: &Pullback, path: impl AsRef<Path>, encoding: RawEncoding) -> Result<()> {
    let path = path.as_ref();
    if !(encoding.max_raw > 0.0 && encoding.max_raw.is_finite()) {
        return Err(Error::InvalidArgument(format!("max_raw {}", encoding.max_raw)));
    }
    let n = pullback.n_frames() * pullback.n_r() * pullback.n_theta();
    let mut bytes = Vec::with_capacity(n * encoding.dtype.size());
    for frame in pullback.frames() {
        for &v in frame.data().iter() {
            let raw = v as f64 * encoding.max_raw;
            match encoding.dtype {
                RawDtype::U16 => {
                    let q = raw.round().clamp(0.0, u16::MAX as f64) as u16;
                    bytes.extend_from_slice(&q.to_le_bytes());
                }
                RawDtype::F32 => bytes.extend_from_slice(&(raw as f32).to_le_bytes()),
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;

    let g = pullback.geometry();
    let side = Sidecar {
        n_frames: pullback.n_frames(),
        n_r: pullback.n_r(),
        n_theta: pullback.n_theta(),
        dtype: encoding.dtype,
        max_raw: encoding.max_raw,
        radial_spacing_um: g.radial_spacing_um,
        frame_spacing_mm: g.frame_spacing_mm,
        catheter_offset_um: g.catheter_offset_um,
        pullback_id: pullback.pullback_id().to_string(),
    };
    let sp = Sidecar::path_for(path);
    fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

/// A binary (P5) greymap; 8-bit when `maxval < 256`, otherwise 16-bit big-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub data: Vec<u16>,
}

impl Pgm {
    /// 8-bit greymap of a unit-range image; values are clamped to `[0, 1]`.
    pub fn from_unit_image(data: &Array2<f32>) -> Self {
        let (height, width) = data.dim();
        Self {
            width,
            height,
            maxval: 255,
            data: data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            for &v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut header = [0usize; 3];
        let magic = bytes.get(..2).ok_or_else(|| Error::InvalidData("truncated PGM".into()))?;
        if magic != b"P5" {
            return Err(Error::InvalidData("not a binary PGM (P5)".into()));
        }
        pos += 2;
        for slot in header.iter_mut() {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(Error::InvalidData("truncated PGM header".into())),
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            *slot = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidData("bad PGM header field".into()))?;
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let [width, height, maxval] = header;
        if maxval == 0 || maxval > u16::MAX as usize {
            return Err(Error::InvalidData(format!("PGM maxval {maxval}")));
        }
        let n = width * height;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        let data: Vec<u16> = if maxval < 256 {
            if raster.len() < n {
                return Err(Error::PayloadSize {
                    expected: n,
                    found: raster.len(),
                });
            }
            raster[..n].iter().map(|&b| b as u16).collect()
        } else {
            if raster.len() < 2 * n {
                return Err(Error::PayloadSize {
                    expected: 2 * n,
                    found: raster.len(),
                });
            }
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            data,
        })
    }
}

pub fn write_pgm(path: impl AsRef<Path>, pgm: &Pgm) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, pgm.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Pgm::parse(&bytes)
}

/// Writes a mask as 8-bit PGM: 0 = background, 255 = label.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let (h, w) = mask.dim();
    let pgm = Pgm {
        width: w,
        height: h,
        maxval: 255,
        data: mask.data().iter().map(|&v| if v == 1 { 255 } else { 0 }).collect(),
    };
    write_pgm(path, &pgm)
}

/// Reads an 8-bit mask PGM; any nonzero sample is a label pixel.
pub fn read_mask_pgm(path: impl AsRef<Path>, class_tag: ClassTag) -> Result<Mask> {
    let pgm = read_pgm(path)?;
    let data = Array2::from_shape_vec(
        (pgm.height, pgm.width),
        pgm.data.iter().map(|&v| u8::from(v > 0)).collect(),
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    Mask::new(data, class_tag)
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PhantomSpec, PhantomTruth};
use crate::preprocess::{GuidewireShadow, LumenBoundary};
use crate::pullback::{save_pullback, write_mask_pgm, Pullback, RawEncoding};
use crate::{Error, Result};

/// Truth that is not a mask, as stored in `<id>_truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: PhantomSpec,
    pub frames: Vec<TruthFrameRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFrameRecord {
    pub lumen: LumenBoundary,
    pub shadow: Option<GuidewireShadow>,
    pub thickness_um: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomFiles {
    pub pullback: PathBuf,
    pub truth: PathBuf,
    pub fc_masks: PathBuf,
    pub calcification_masks: PathBuf,
}

/// Mask file name for frame `i`.
pub fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.pgm")
}

/// Writes `<id>.ivp` (+ sidecar), `<id>_truth.json` and the per-frame masks under
/// `<id>_masks_fc/` and `<id>_masks_cal/`.
pub fn write_phantom(dir: &Path, spec: &PhantomSpec, pullback: &Pullback, truth: &PhantomTruth) -> Result<PhantomFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = &spec.id;
    let files = PhantomFiles {
        pullback: dir.join(format!("{id}.ivp")),
        truth: dir.join(format!("{id}_truth.json")),
        fc_masks: dir.join(format!("{id}_masks_fc")),
        calcification_masks: dir.join(format!("{id}_masks_cal")),
    };
    save_pullback(pullback, &files.pullback, RawEncoding::default())?;
    let record = TruthRecord {
        spec: spec.clone(),
        frames: truth
            .frames
            .iter()
            .map(|f| TruthFrameRecord {
                lumen: f.lumen.clone(),
                shadow: f.shadow,
                thickness_um: f.thickness_um.clone(),
            })
            .collect(),
    };
    fs::write(&files.truth, serde_json::to_string(&record)?).map_err(|e| Error::io(&files.truth, e))?;
    for d in [&files.fc_masks, &files.calcification_masks] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (i, f) in truth.frames.iter().enumerate() {
        write_mask_pgm(files.fc_masks.join(frame_file(i)), &f.fc)?;
        write_mask_pgm(files.calcification_masks.join(frame_file(i)), &f.calcification)?;
    }
    Ok(files)
}

pub fn read_truth(path: &Path) -> Result<TruthRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

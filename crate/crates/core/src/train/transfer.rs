use std::path::Path;

use crate::tensornet::{load_weights, LoadReport, Real, SegModel};
use crate::{Error, Result};

/// Initializes `model` from a pretrained weights file. Layers matching by name and
/// shape are copied; the rest keep their random initialization.
pub fn transfer_init<F: Real>(model: &mut SegModel<F>, pretrained: &Path) -> Result<LoadReport> {
    let report = load_weights(model, pretrained)?;
    if report.matched.is_empty() {
        return Err(Error::Weights(format!(
            "{}: no layer matches this architecture",
            pretrained.display()
        )));
    }
    Ok(report)
}

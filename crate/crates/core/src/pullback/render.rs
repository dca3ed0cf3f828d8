use std::f64::consts::TAU;

use ndarray::Array2;

use super::{Geometry, PolarFrame};
use crate::{Error, Result};

/// Gain `k` in `log(1 + k·I)` for display images.
pub const LOG_DISPLAY_GAIN: f64 = 100.0;

/// Resamples a polar frame onto a square Cartesian grid centred on the catheter.
///
/// The field of view spans the outermost r sample. A pixel at radius ρ and angle φ
/// (counter-clockwise from +x, y up) reads `r = (ρ - offset) / Δr`, `θ = φ·n_theta/2π`
/// with bilinear weights; θ wraps and r outside `[0, n_r - 1]` is black.
pub fn polar_to_cartesian(frame: &PolarFrame, geometry: &Geometry, out_size: usize) -> Result<Array2<f32>> {
    if out_size < 2 {
        return Err(Error::InvalidArgument(format!("out_size must be >= 2, got {out_size}")));
    }
    geometry.validate()?;
    let data = frame.data();
    let (n_r, n_theta) = data.dim();
    let rho_max = geometry.catheter_offset_um + (n_r - 1) as f64 * geometry.radial_spacing_um;
    let half = out_size as f64 / 2.0;
    let um_per_px = rho_max / half;

    let mut out = Array2::<f32>::zeros((out_size, out_size));
    for ((i, j), px) in out.indexed_iter_mut() {
        let x = (j as f64 + 0.5 - half) * um_per_px;
        let y = (half - (i as f64 + 0.5)) * um_per_px;
        let rho = x.hypot(y);
        let r = (rho - geometry.catheter_offset_um) / geometry.radial_spacing_um;
        if r < 0.0 || r > (n_r - 1) as f64 {
            continue;
        }
        let phi = y.atan2(x).rem_euclid(TAU);
        let t = phi * n_theta as f64 / TAU;

        let r0 = (r.floor() as usize).min(n_r - 1);
        let r1 = (r0 + 1).min(n_r - 1);
        let fr = r - r0 as f64;
        let t0f = t.floor();
        let ft = t - t0f;
        let t0 = (t0f as usize) % n_theta;
        let t1 = (t0 + 1) % n_theta;

        let v = (1.0 - fr) * ((1.0 - ft) * data[[r0, t0]] as f64 + ft * data[[r0, t1]] as f64)
            + fr * ((1.0 - ft) * data[[r1, t0]] as f64 + ft * data[[r1, t1]] as f64);
        *px = v as f32;
    }
    Ok(out)
}

/// `log(1 + k·I)` rescaled so the brightest pixel maps to 1.
pub fn log_display(frame: &PolarFrame) -> Array2<f32> {
    let data = frame.data();
    let max = data.iter().fold(0.0f32, |m, &v| m.max(v)) as f64;
    if max <= 0.0 {
        return Array2::zeros(data.dim());
    }
    let denom = (LOG_DISPLAY_GAIN * max).ln_1p();
    data.mapv(|v| ((LOG_DISPLAY_GAIN * v as f64).ln_1p() / denom) as f32)
}

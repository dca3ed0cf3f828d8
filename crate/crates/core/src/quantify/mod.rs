//! Fibrous-cap measurements on lumen-aligned masks (row 0 = lumen surface).
//!
//! Definitions used here:
//! - thickness: length of the FC run that starts at the most luminal FC pixel of an
//!   A-line, times the radial spacing;
//! - arc: number of A-lines holding any FC pixel, times `360 / n_theta`;
//! - area: `Σ ρ·Δr·Δθ` over FC pixels with `ρ` the physical radius of the pixel;
//! - surface area: luminal arc length of FC-bearing A-lines times the frame spacing.

mod export;

pub use export::{export_heatmap, heatmap_pgm, lumen_obj, ExportSummary, HEATMAP_MAX_UM};

use serde::{Deserialize, Serialize};

use crate::preprocess::LumenBoundary;
use crate::pullback::{Geometry, Mask};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub tcfa_threshold_um: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { tcfa_threshold_um: 65.0 }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tcfa_threshold_um > 0.0 && self.tcfa_threshold_um.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("tcfa threshold {} must be > 0", self.tcfa_threshold_um)))
        }
    }
}

fn check_mask(mask: &Mask, geometry: &Geometry) -> Result<()> {
    if mask.dim().1 != geometry.theta_count {
        return Err(Error::Shape(format!(
            "mask has {} A-lines, geometry {}",
            mask.dim().1,
            geometry.theta_count
        )));
    }
    Ok(())
}

fn check_lumen(mask: &Mask, lumen: &LumenBoundary) -> Result<()> {
    if lumen.n_theta() != mask.dim().1 {
        return Err(Error::Shape(format!("lumen has {} A-lines, mask {}", lumen.n_theta(), mask.dim().1)));
    }
    Ok(())
}

/// Cap thickness in μm per A-line; `None` where the A-line holds no FC.
pub fn thickness_per_aline(mask: &Mask, geometry: &Geometry) -> Result<Vec<Option<f64>>> {
    check_mask(mask, geometry)?;
    Ok(mask
        .data()
        .columns()
        .into_iter()
        .map(|col| {
            let first = col.iter().position(|&v| v == 1)?;
            let run = col.iter().skip(first).take_while(|&&v| v == 1).count();
            Some(run as f64 * geometry.radial_spacing_um)
        })
        .collect())
}

/// Angular extent in degrees of the A-lines holding FC.
pub fn arc_angle(mask: &Mask, geometry: &Geometry) -> Result<f64> {
    check_mask(mask, geometry)?;
    let occupied = mask.data().columns().into_iter().filter(|c| c.iter().any(|&v| v == 1)).count();
    Ok(occupied as f64 * 360.0 / geometry.theta_count as f64)
}

/// Physical radius in μm of row `r` of A-line `t` in lumen-aligned coordinates.
fn radius_um(lumen: &LumenBoundary, t: usize, r: usize, geometry: &Geometry) -> f64 {
    geometry.catheter_offset_um + (lumen.r_index[t] + r) as f64 * geometry.radial_spacing_um
}

/// FC cross-sectional area in mm².
pub fn fc_area(mask: &Mask, lumen: &LumenBoundary, geometry: &Geometry) -> Result<f64> {
    check_mask(mask, geometry)?;
    check_lumen(mask, lumen)?;
    let dtheta = geometry.delta_theta();
    let mut um2 = 0.0;
    for ((r, t), &v) in mask.data().indexed_iter() {
        if v == 1 {
            um2 += radius_um(lumen, t, r, geometry) * geometry.radial_spacing_um * dtheta;
        }
    }
    Ok(um2 * 1e-6)
}

/// Luminal FC arc length (mm) of one frame; multiply by frame spacing for area.
fn luminal_arc_mm(mask: &Mask, lumen: &LumenBoundary, geometry: &Geometry) -> f64 {
    let dtheta = geometry.delta_theta();
    mask.data()
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&v| v == 1))
        .map(|(t, _)| radius_um(lumen, t, 0, geometry) * 1e-3 * dtheta)
        .sum()
}

/// FC luminal surface area in mm² over a run of frames.
pub fn surface_area(masks: &[Mask], lumens: &[LumenBoundary], geometry: &Geometry) -> Result<f64> {
    if masks.is_empty() || masks.len() != lumens.len() {
        return Err(Error::InvalidArgument(format!(
            "{} masks with {} lumen boundaries",
            masks.len(),
            lumens.len()
        )));
    }
    let mut total = 0.0;
    for (m, l) in masks.iter().zip(lumens) {
        check_mask(m, geometry)?;
        check_lumen(m, l)?;
        total += luminal_arc_mm(m, l, geometry) * geometry.frame_spacing_mm;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameQuant {
    pub frame_index: usize,
    pub thickness_um: Vec<Option<f64>>,
    pub arc_deg: f64,
    pub area_mm2: f64,
    pub min_thickness_um: Option<f64>,
    pub mean_thickness_um: Option<f64>,
}

impl FrameQuant {
    pub fn has_fc(&self) -> bool {
        self.min_thickness_um.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcQuantification {
    pub frames: Vec<FrameQuant>,
    pub frame_spacing_mm: f64,
    /// Mean over every measured A-line of the pullback.
    pub mean_thickness_um: Option<f64>,
    /// Means over frames that contain FC.
    pub mean_arc_deg: Option<f64>,
    pub mean_area_mm2: Option<f64>,
    pub max_arc_deg: f64,
    pub surface_area_mm2: f64,
    pub min_cap_thickness_um: Option<f64>,
    pub tcfa: bool,
}

impl FcQuantification {
    pub fn frames_with_fc(&self) -> usize {
        self.frames.iter().filter(|f| f.has_fc()).count()
    }

    /// Longitudinal FC extent: FC-bearing frames times the frame spacing.
    pub fn length_mm(&self) -> f64 {
        self.frames_with_fc() as f64 * self.frame_spacing_mm
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

pub fn quantify_frame(mask: &Mask, lumen: &LumenBoundary, geometry: &Geometry, frame_index: usize) -> Result<FrameQuant> {
    let thickness_um = thickness_per_aline(mask, geometry)?;
    let measured = || thickness_um.iter().flatten().copied();
    Ok(FrameQuant {
        frame_index,
        arc_deg: arc_angle(mask, geometry)?,
        area_mm2: fc_area(mask, lumen, geometry)?,
        min_thickness_um: measured().reduce(f64::min),
        mean_thickness_um: mean(measured()),
        thickness_um,
    })
}

/// Per-frame and per-pullback FC measurements. `masks[i]` must be aligned to
/// `lumens[i]`.
pub fn quantify_pullback(
    masks: &[Mask],
    lumens: &[LumenBoundary],
    geometry: &Geometry,
    cfg: &QuantConfig,
) -> Result<FcQuantification> {
    cfg.validate()?;
    geometry.validate()?;
    let surface_area_mm2 = surface_area(masks, lumens, geometry)?;
    let frames = masks
        .iter()
        .zip(lumens)
        .enumerate()
        .map(|(i, (m, l))| quantify_frame(m, l, geometry, i))
        .collect::<Result<Vec<_>>>()?;
    let with_fc = || frames.iter().filter(|f| f.has_fc());
    let min_cap = frames.iter().filter_map(|f| f.min_thickness_um).reduce(f64::min);
    Ok(FcQuantification {
        mean_thickness_um: mean(frames.iter().flat_map(|f| f.thickness_um.iter().flatten().copied())),
        mean_arc_deg: mean(with_fc().map(|f| f.arc_deg)),
        mean_area_mm2: mean(with_fc().map(|f| f.area_mm2)),
        max_arc_deg: frames.iter().map(|f| f.arc_deg).fold(0.0, f64::max),
        surface_area_mm2,
        min_cap_thickness_um: min_cap,
        tcfa: min_cap.is_some_and(|t| t < cfg.tcfa_threshold_um),
        frame_spacing_mm: geometry.frame_spacing_mm,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::ClassTag;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn geom(n_theta: usize) -> Geometry {
        Geometry::with_theta_count(n_theta)
    }

    fn cap(rows: usize, n_r: usize, n_theta: usize, cols: std::ops::Range<usize>) -> Mask {
        let d = Array2::from_shape_fn((n_r, n_theta), |(r, t)| u8::from(r < rows && cols.contains(&t)));
        Mask::new(d, ClassTag::Fc).unwrap()
    }

    #[test]
    fn thickness_13_rows_is_65() {
        let m = cap(13, 40, 8, 0..4);
        let t = thickness_per_aline(&m, &geom(8)).unwrap();
        assert_eq!(t[..4], [Some(65.0); 4]);
        assert_eq!(t[4..], [None; 4]);
    }

    #[test]
    fn thickness_uses_luminal_run_only() {
        let mut d = Array2::zeros((30, 1));
        for r in 2..6 {
            d[[r, 0]] = 1;
        }
        for r in 10..20 {
            d[[r, 0]] = 1;
        }
        let m = Mask::new(d, ClassTag::Fc).unwrap();
        assert_eq!(thickness_per_aline(&m, &geom(1)).unwrap(), vec![Some(20.0)]);
    }

    #[test]
    fn arcs() {
        let g = geom(448);
        assert_eq!(arc_angle(&cap(3, 10, 448, 0..224), &g).unwrap(), 180.0);
        assert_eq!(arc_angle(&cap(0, 10, 448, 0..448), &g).unwrap(), 0.0);
        assert_eq!(arc_angle(&cap(10, 10, 448, 0..448), &g).unwrap(), 360.0);
        assert!(arc_angle(&cap(3, 10, 10, 0..5), &g).is_err());
    }

    #[test]
    fn annulus_area() {
        let g = geom(448);
        let lumen = LumenBoundary::constant(120, 448);
        let m = cap(40, 60, 448, 0..448);
        let rho1 = g.catheter_offset_um + 120.0 * g.radial_spacing_um;
        let rho2 = rho1 + 40.0 * g.radial_spacing_um;
        let exact = PI * (rho2 * rho2 - rho1 * rho1) * 1e-6;
        let got = fc_area(&m, &lumen, &g).unwrap();
        assert!((got - exact).abs() / exact < 0.005, "{got} vs {exact}");
        assert_eq!(fc_area(&cap(0, 60, 448, 0..448), &lumen, &g).unwrap(), 0.0);
    }

    #[test]
    fn cylinder_strip() {
        let g = geom(448);
        let lumen = LumenBoundary::constant(220, 448); // 400 + 220·5 = 1500 μm
        let m = cap(5, 10, 448, 0..448);
        let one = surface_area(std::slice::from_ref(&m), std::slice::from_ref(&lumen), &g).unwrap();
        assert!((one - 2.0 * PI * 1.5 * 0.2).abs() < 1e-9);
        let two = surface_area(&[m.clone(), m], &[lumen.clone(), lumen], &g).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn tcfa_boundary() {
        let g = geom(16);
        let l = vec![LumenBoundary::constant(50, 16)];
        let q = quantify_pullback(&[cap(13, 30, 16, 2..9)], &l, &g, &QuantConfig::default()).unwrap();
        assert_eq!(q.min_cap_thickness_um, Some(65.0));
        assert!(!q.tcfa);
        let q = quantify_pullback(&[cap(12, 30, 16, 2..9)], &l, &g, &QuantConfig::default()).unwrap();
        assert!(q.tcfa);
        let q = quantify_pullback(&[cap(0, 30, 16, 2..9)], &l, &g, &QuantConfig::default()).unwrap();
        assert!(!q.tcfa && q.mean_thickness_um.is_none());
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FcQuantification;
use crate::preprocess::LumenBoundary;
use crate::pullback::{write_pgm, Geometry, Pgm};
use crate::{Error, Result};

/// Heatmap values are integer μm, clipped here so they stay exact in 16 bits.
pub const HEATMAP_MAX_UM: u16 = 655;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub length_mm: f64,
    pub max_angle_deg: f64,
    pub surface_area_mm2: f64,
    pub min_cap_um: f64,
    pub tcfa: bool,
    pub definitions: Vec<String>,
}

fn definitions() -> Vec<String> {
    [
        "length_mm: frames containing FC x frame spacing",
        "max_angle_deg: largest per-frame count of FC A-lines x 360/n_theta",
        "surface_area_mm2: sum over frames of luminal FC arc length x frame spacing",
        "min_cap_um: smallest luminal FC run length x radial spacing",
        "tcfa: min_cap_um below the configured threshold",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// θ × frame thickness map (one row per frame); A-lines without FC are 0.
pub fn heatmap_pgm(quant: &FcQuantification) -> Result<Pgm> {
    let width = quant.frames.first().map_or(0, |f| f.thickness_um.len());
    let mut data = Vec::with_capacity(width * quant.frames.len());
    for f in &quant.frames {
        if f.thickness_um.len() != width {
            return Err(Error::Shape("frames differ in A-line count".into()));
        }
        data.extend(
            f.thickness_um
                .iter()
                .map(|t| t.map_or(0, |v| v.round().clamp(0.0, HEATMAP_MAX_UM as f64) as u16)),
        );
    }
    Ok(Pgm {
        width,
        height: quant.frames.len(),
        maxval: HEATMAP_MAX_UM,
        data,
    })
}

/// Blue → red ramp over `[0, HEATMAP_MAX_UM]`, grey where no FC.
fn color(t: Option<f64>) -> (f64, f64, f64) {
    match t {
        None => (0.6, 0.6, 0.6),
        Some(v) => {
            let s = (v / HEATMAP_MAX_UM as f64).clamp(0.0, 1.0);
            (1.0 - s, 0.2, s)
        }
    }
}

/// Lumen surface mesh in mm: one vertex per (frame, A-line), quads between frames.
/// Each vertex is preceded by a `# thickness_um` comment (`nan` where no FC) and
/// carries the thickness as an RGB colour.
pub fn lumen_obj(quant: &FcQuantification, lumens: &[LumenBoundary], geometry: &Geometry) -> Result<String> {
    if lumens.len() != quant.frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} lumen boundaries for {} frames",
            lumens.len(),
            quant.frames.len()
        )));
    }
    let n_t = geometry.theta_count;
    let mut s = String::from("# FC thickness on the lumen surface (x, y, z in mm)\n");
    for (fi, (f, l)) in quant.frames.iter().zip(lumens).enumerate() {
        if l.n_theta() != n_t || f.thickness_um.len() != n_t {
            return Err(Error::Shape(format!("frame {fi} does not have {n_t} A-lines")));
        }
        let z = fi as f64 * geometry.frame_spacing_mm;
        for t in 0..n_t {
            let rho = (geometry.catheter_offset_um + l.r_index[t] as f64 * geometry.radial_spacing_um) * 1e-3;
            let ang = t as f64 * geometry.delta_theta();
            let th = f.thickness_um[t];
            let (r, g, b) = color(th);
            match th {
                Some(v) => writeln!(s, "# thickness_um {v}"),
                None => writeln!(s, "# thickness_um nan"),
            }
            .expect("string write");
            writeln!(s, "v {:.5} {:.5} {:.5} {r:.4} {g:.4} {b:.4}", rho * ang.cos(), rho * ang.sin(), z)
                .expect("string write");
        }
    }
    for fi in 1..quant.frames.len() {
        for t in 0..n_t {
            let a = (fi - 1) * n_t + t + 1;
            let b = (fi - 1) * n_t + (t + 1) % n_t + 1;
            writeln!(s, "f {a} {b} {} {}", b + n_t, a + n_t).expect("string write");
        }
    }
    Ok(s)
}

/// Writes `thickness_map.pgm`, `lumen_surface.obj` and `summary.json` into `out_dir`.
pub fn export_heatmap(
    quant: &FcQuantification,
    lumens: &[LumenBoundary],
    geometry: &Geometry,
    out_dir: &Path,
) -> Result<ExportSummary> {
    let min_cap_um = quant.min_cap_thickness_um.ok_or(Error::NothingToExport)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_pgm(out_dir.join("thickness_map.pgm"), &heatmap_pgm(quant)?)?;
    let obj_path = out_dir.join("lumen_surface.obj");
    fs::write(&obj_path, lumen_obj(quant, lumens, geometry)?).map_err(|e| Error::io(&obj_path, e))?;
    let summary = ExportSummary {
        length_mm: quant.length_mm(),
        max_angle_deg: quant.max_arc_deg,
        surface_area_mm2: quant.surface_area_mm2,
        min_cap_um,
        tcfa: quant.tcfa,
        definitions: definitions(),
    };
    let json_path = out_dir.join("summary.json");
    fs::write(&json_path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(summary)
}

//! Quantifies the fibrous cap of a noiseless phantom from its truth masks and
//! exports the thickness heatmap, lumen mesh and summary.

use fibcap::phantom::{edge_case_specs, generate};
use fibcap::preprocess::{shift_mask, GuidewireShadow, CROP_ROWS};
use fibcap::pullback::ClassTag;
use fibcap::quantify::{export_heatmap, quantify_pullback, QuantConfig};

fn main() -> fibcap::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "quantify_out".into()));
    for spec in edge_case_specs() {
        let (pullback, truth) = generate(&spec)?;
        let lumens = truth.lumens();
        let masks = truth
            .masks(ClassTag::Fc)
            .iter()
            .zip(&truth.frames)
            .zip(&lumens)
            .map(|((m, f), l)| {
                let shadow = f.shadow.unwrap_or(GuidewireShadow::new(0, 1, spec.n_theta));
                shift_mask(m, l, &shadow, CROP_ROWS)
            })
            .collect::<fibcap::Result<Vec<_>>>()?;
        let q = quantify_pullback(&masks, &lumens, pullback.geometry(), &QuantConfig::default())?;
        let summary = export_heatmap(&q, &lumens, pullback.geometry(), &out.join(&spec.id))?;
        println!(
            "{:<11} mean thickness {:>6.1} um, mean arc {:>5.1} deg, surface {:.3} mm2, min cap {:.0} um, TCFA {}",
            spec.id,
            q.mean_thickness_um.unwrap_or(f64::NAN),
            q.mean_arc_deg.unwrap_or(f64::NAN),
            summary.surface_area_mm2,
            summary.min_cap_um,
            summary.tcfa
        );
    }
    Ok(())
}

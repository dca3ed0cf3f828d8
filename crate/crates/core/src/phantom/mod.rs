//! Synthetic IVOCT pullbacks with exact ground truth.
//!
//! Each A-line is piecewise constant in depth below the lumen, times an exponential
//! attenuation: a bright cap over a dark lipid pool on FC lesions, a dark core with
//! bright rims on calcifications, medium-intensity tissue elsewhere. Guidewire
//! A-lines are black apart from a short bright reflection inside the lumen.
//! Multiplicative Rayleigh speckle is applied last.

mod io;
mod suites;

pub use io::{frame_file, read_truth, write_phantom, PhantomFiles, TruthFrameRecord, TruthRecord};
pub use suites::{crop_wrapped, edge_case_specs, lesion_center_column, lesion_crops, standard_suite, SUITE_NAMES};

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::preprocess::{GuidewireShadow, LumenBoundary};
use crate::pullback::{ClassTag, Geometry, Mask, Pullback};
use crate::{Error, Result};

/// Band means before attenuation.
pub const CAP_LEVEL: f64 = 0.85;
pub const LIPID_LEVEL: f64 = 0.08;
pub const TISSUE_LEVEL: f64 = 0.45;
pub const CALC_LEVEL: f64 = 0.06;
pub const CALC_RIM_LEVEL: f64 = 0.9;
pub const CALC_RIM_PX: usize = 2;
pub const REFLECTION_LEVEL: f64 = 1.0;
/// Attenuation length of the tissue signal.
pub const ATTENUATION_UM: f64 = 500.0;
/// Standard deviation of `R / E[R]` for a Rayleigh variable: `sqrt((4 − π) / π)`.
pub const RAYLEIGH_REL_SD: f64 = 0.522_723_200_877_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: usize,
    pub amplitude_px: f64,
    pub phase: f64,
}

/// Lumen depth `mean + Σ a·cos(kθ + φ) + frame_amplitude·sin(2π f / frame_period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumenProfile {
    pub mean_px: f64,
    pub harmonics: Vec<Harmonic>,
    pub frame_amplitude_px: f64,
    pub frame_period: f64,
}

impl LumenProfile {
    pub fn constant(px: f64) -> Self {
        Self {
            mean_px: px,
            harmonics: Vec::new(),
            frame_amplitude_px: 0.0,
            frame_period: 1.0,
        }
    }

    pub fn depth_px(&self, theta: f64, frame: usize) -> f64 {
        let mut r = self.mean_px;
        for h in &self.harmonics {
            r += h.amplitude_px * (h.order as f64 * theta + h.phase).cos();
        }
        r + self.frame_amplitude_px * (TAU * frame as f64 / self.frame_period).sin()
    }
}

/// Wrapping angular interval whose centre can drift linearly with frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center_deg: f64,
    pub width_deg: f64,
    #[serde(default)]
    pub drift_deg_per_frame: f64,
}

impl Arc {
    /// Position of `theta_deg` across the arc at `frame` in `[0, 1)`, or `None` outside.
    fn position(&self, theta_deg: f64, frame: usize) -> Option<f64> {
        let center = self.center_deg + self.drift_deg_per_frame * frame as f64;
        let start = center - self.width_deg / 2.0;
        let u = (theta_deg - start).rem_euclid(360.0) / self.width_deg;
        (u < 1.0).then_some(u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcLesion {
    /// First frame and one past the last frame holding the lesion.
    pub frames: (usize, usize),
    pub arc: Arc,
    /// Cap thickness at the arc edges.
    pub cap_um: f64,
    /// Extra thickness at the arc centre (half-sine profile across the arc).
    #[serde(default)]
    pub cap_bulge_um: f64,
    pub lipid_um: f64,
}

impl FcLesion {
    pub fn cap_at(&self, u: f64) -> f64 {
        self.cap_um + self.cap_bulge_um * (PI * u).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalcLesion {
    pub frames: (usize, usize),
    pub arc: Arc,
    /// Depth below the lumen of the top and bottom of the plate.
    pub depth_um: (f64, f64),
    #[serde(default = "yes")]
    pub sharp_border: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidewireSpec {
    /// First shadowed A-line in frame 0.
    pub theta_start: usize,
    pub width: usize,
    /// A-lines the shadow moves per frame.
    #[serde(default)]
    pub drift_per_frame: f64,
}

impl GuidewireSpec {
    pub fn shadow(&self, frame: usize, n_theta: usize) -> GuidewireShadow {
        let start = (self.theta_start as f64 + self.drift_per_frame * frame as f64).round() as i64;
        GuidewireShadow::new(start.rem_euclid(n_theta as i64) as usize, self.width, n_theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub id: String,
    pub n_frames: usize,
    pub n_r: usize,
    pub n_theta: usize,
    pub geometry: Geometry,
    pub lumen: LumenProfile,
    #[serde(default)]
    pub fc: Vec<FcLesion>,
    #[serde(default)]
    pub calcifications: Vec<CalcLesion>,
    pub guidewire: Option<GuidewireSpec>,
    /// Band mean over speckle standard deviation; `None` renders without noise.
    pub snr: Option<f64>,
    pub seed: u64,
}

impl PhantomSpec {
    /// A noiseless single-frame-count spec with standard geometry and no lesions.
    pub fn plain(id: impl Into<String>, n_frames: usize) -> Self {
        Self {
            id: id.into(),
            n_frames,
            n_r: 384,
            n_theta: 448,
            geometry: Geometry::default(),
            lumen: LumenProfile::constant(110.0),
            fc: Vec::new(),
            calcifications: Vec::new(),
            guidewire: None,
            snr: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("phantom {}: {m}", self.id)));
        if self.n_frames == 0 || self.n_r == 0 || self.n_theta == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.geometry.theta_count != self.n_theta {
            return bad(format!("geometry has {} A-lines, spec {}", self.geometry.theta_count, self.n_theta));
        }
        self.geometry.validate()?;
        for f in 0..self.n_frames {
            for t in 0..self.n_theta {
                let r = self.lumen.depth_px(self.theta_rad(t), f);
                if !(r >= 1.0 && r.round() < self.n_r as f64) {
                    return bad(format!("lumen depth {r:.1} px outside the frame"));
                }
            }
        }
        let arc_ok = |a: &Arc| a.width_deg > 0.0 && a.width_deg < 360.0 && a.center_deg.is_finite();
        for l in &self.fc {
            if !arc_ok(&l.arc) || l.cap_um <= 0.0 || l.cap_bulge_um < 0.0 || l.lipid_um <= 0.0 || l.frames.0 >= l.frames.1 {
                return bad(format!("invalid FC lesion {l:?}"));
            }
        }
        for c in &self.calcifications {
            if !arc_ok(&c.arc) || c.depth_um.0 < 0.0 || c.depth_um.1 <= c.depth_um.0 || c.frames.0 >= c.frames.1 {
                return bad(format!("invalid calcification {c:?}"));
            }
        }
        if let Some(g) = &self.guidewire {
            if g.width == 0 || g.width >= self.n_theta {
                return bad(format!("guidewire width {} not in [1, {})", g.width, self.n_theta));
            }
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return bad(format!("snr {s} must be positive"));
            }
        }
        Ok(())
    }

    fn theta_rad(&self, t: usize) -> f64 {
        TAU * t as f64 / self.n_theta as f64
    }

    fn theta_deg(&self, t: usize) -> f64 {
        360.0 * t as f64 / self.n_theta as f64
    }

    fn px(&self, um: f64) -> usize {
        (um / self.geometry.radial_spacing_um).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomFrameTruth {
    pub fc: Mask,
    pub calcification: Mask,
    pub lumen: LumenBoundary,
    pub shadow: Option<GuidewireShadow>,
    /// Rendered cap thickness per A-line (whole pixels × Δr); `None` off-lesion.
    pub thickness_um: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomTruth {
    pub frames: Vec<PhantomFrameTruth>,
}

impl PhantomTruth {
    pub fn masks(&self, tag: ClassTag) -> Vec<Mask> {
        self.frames
            .iter()
            .map(|f| match tag {
                ClassTag::Fc => f.fc.clone(),
                ClassTag::Calcification => f.calcification.clone(),
            })
            .collect()
    }

    pub fn lumens(&self) -> Vec<LumenBoundary> {
        self.frames.iter().map(|f| f.lumen.clone()).collect()
    }
}

/// Rayleigh draw by inverse CDF: `σ·sqrt(−2 ln U)`.
pub fn rayleigh<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    sigma * (-2.0 * u.ln()).sqrt()
}

/// Renders the pullback and its truth. Frames are generated in parallel from
/// independent per-frame streams of `spec.seed`.
pub fn generate(spec: &PhantomSpec) -> Result<(Pullback, PhantomTruth)> {
    spec.validate()?;
    let frames: Vec<(Array2<f32>, PhantomFrameTruth)> =
        (0..spec.n_frames).into_par_iter().map(|f| render_frame(spec, f)).collect();
    let (arrays, truth): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    let pullback = Pullback::from_arrays(arrays, spec.geometry.clone(), spec.id.clone())?;
    Ok((pullback, PhantomTruth { frames: truth }))
}

fn render_frame(spec: &PhantomSpec, f: usize) -> (Array2<f32>, PhantomFrameTruth) {
    let (n_r, n_t) = (spec.n_r, spec.n_theta);
    let dr = spec.geometry.radial_spacing_um;
    let mut img = Array2::<f64>::zeros((n_r, n_t));
    let mut fc = Array2::<u8>::zeros((n_r, n_t));
    let mut cal = Array2::<u8>::zeros((n_r, n_t));
    let mut lumen = vec![0usize; n_t];
    let mut thickness = vec![None; n_t];
    let shadow = spec.guidewire.as_ref().map(|g| g.shadow(f, n_t));

    for t in 0..n_t {
        let lb = spec.lumen.depth_px(spec.theta_rad(t), f).round() as usize;
        lumen[t] = lb;
        if shadow.is_some_and(|s| s.contains(t, n_t)) {
            for r in lb.saturating_sub(8)..lb.saturating_sub(3) {
                img[[r, t]] = REFLECTION_LEVEL;
            }
            continue;
        }
        let deg = spec.theta_deg(t);
        // depth profile below the lumen, in pixels
        let mut level = vec![TISSUE_LEVEL; n_r - lb];
        for c in &spec.calcifications {
            if !(c.frames.0..c.frames.1).contains(&f) || c.arc.position(deg, f).is_none() {
                continue;
            }
            let (top, bottom) = (spec.px(c.depth_um.0), spec.px(c.depth_um.1));
            for d in top..bottom.min(level.len()) {
                let rim = c.sharp_border && (d < top + CALC_RIM_PX || d + CALC_RIM_PX >= bottom);
                level[d] = if rim { CALC_RIM_LEVEL } else { CALC_LEVEL };
                cal[[lb + d, t]] = 1;
            }
        }
        for l in &spec.fc {
            if !(l.frames.0..l.frames.1).contains(&f) {
                continue;
            }
            let Some(u) = l.arc.position(deg, f) else { continue };
            let cap = spec.px(l.cap_at(u)).max(1);
            let lipid = spec.px(l.lipid_um).max(1);
            for d in 0..(cap + lipid).min(level.len()) {
                level[d] = if d < cap { CAP_LEVEL } else { LIPID_LEVEL };
            }
            for d in 0..cap.min(level.len()) {
                fc[[lb + d, t]] = 1;
                cal[[lb + d, t]] = 0;
            }
            thickness[t] = Some(cap.min(level.len()) as f64 * dr);
        }
        for (d, &v) in level.iter().enumerate() {
            img[[lb + d, t]] = v * (-(d as f64) * dr / ATTENUATION_UM).exp();
        }
    }

    if let Some(snr) = spec.snr {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(f as u64);
        let k = 1.0 / (snr * RAYLEIGH_REL_SD);
        let mean = (PI / 2.0).sqrt();
        for v in img.iter_mut() {
            let factor = 1.0 + k * (rayleigh(1.0, &mut rng) / mean - 1.0);
            *v *= factor.max(0.0);
        }
    }

    let lumen = LumenBoundary {
        valid: (0..n_t).map(|t| !shadow.is_some_and(|s| s.contains(t, n_t))).collect(),
        r_index: lumen,
    };
    let truth = PhantomFrameTruth {
        fc: Mask::new(fc, ClassTag::Fc).expect("binary"),
        calcification: Mask::new(cal, ClassTag::Calcification).expect("binary"),
        lumen,
        shadow,
        thickness_um: thickness,
    };
    (img.mapv(|v| v.clamp(0.0, 1.0) as f32), truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_lesion(cap_um: f64, snr: Option<f64>) -> PhantomSpec {
        PhantomSpec {
            fc: vec![FcLesion {
                frames: (0, 2),
                arc: Arc {
                    center_deg: 90.0,
                    width_deg: 60.0,
                    drift_deg_per_frame: 0.0,
                },
                cap_um,
                cap_bulge_um: 0.0,
                lipid_um: 200.0,
            }],
            snr,
            ..PhantomSpec::plain("t", 2)
        }
    }

    #[test]
    fn analytic_thickness() {
        let (_, truth) = generate(&one_lesion(100.0, None)).unwrap();
        let th = &truth.frames[0].thickness_um;
        let on: Vec<_> = th.iter().flatten().collect();
        assert!(!on.is_empty() && on.iter().all(|&&v| v == 100.0));
        assert_eq!(truth.frames[0].fc.count(), on.len() * 20);
    }

    #[test]
    fn seeded_and_ordered() {
        let spec = one_lesion(100.0, Some(8.0));
        assert_eq!(generate(&spec).unwrap().0, generate(&spec).unwrap().0);
        let (pb, truth) = generate(&one_lesion(100.0, None)).unwrap();
        let d = pb.frame(0).data();
        let t = truth.frames[0].thickness_um.iter().position(Option::is_some).unwrap();
        let lb = truth.frames[0].lumen.r_index[t];
        let cap: f32 = (0..20).map(|r| d[[lb + r, t]]).sum::<f32>() / 20.0;
        let lipid: f32 = (20..60).map(|r| d[[lb + r, t]]).sum::<f32>() / 40.0;
        assert!(cap > lipid);
    }

    #[test]
    fn guidewire_and_masks() {
        let mut spec = one_lesion(100.0, None);
        spec.guidewire = Some(GuidewireSpec {
            theta_start: 100,
            width: 40,
            drift_per_frame: 0.0,
        });
        let (pb, truth) = generate(&spec).unwrap();
        let d = pb.frame(0).data();
        let lb = truth.frames[0].lumen.r_index[120];
        assert!((lb..spec.n_r).all(|r| d[[r, 120]] == 0.0));
        assert_eq!(d[[lb - 6, 120]], 1.0);
        assert!(truth.frames[0].fc.data().column(120).iter().all(|&v| v == 0));
        assert!(!truth.frames[0].lumen.valid[120]);
    }

    #[test]
    fn rayleigh_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rayleigh(2.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean / (2.0 * (PI / 2.0).sqrt()) - 1.0).abs() < 0.01);
        assert!((var / (4.0 * (4.0 - PI) / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = one_lesion(100.0, None);
        s.lumen = LumenProfile::constant(500.0);
        assert!(generate(&s).is_err());
        let mut s = one_lesion(-1.0, None);
        s.snr = Some(5.0);
        assert!(generate(&s).is_err());
    }
}

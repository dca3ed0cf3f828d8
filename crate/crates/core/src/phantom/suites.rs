use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{generate, Arc, CalcLesion, FcLesion, GuidewireSpec, Harmonic, LumenProfile, PhantomSpec};
use crate::preprocess::{preprocess_pullback, PreprocessParams};
use crate::pullback::ClassTag;
use crate::train::Sample;
use crate::{Error, Result};

pub const SUITE_NAMES: [&str; 4] = ["fc-train-64", "fc-test-16", "cal-pretrain-64", "edge-cases"];

const FRAMES: usize = 8;

#[derive(Clone, Copy)]
enum Kind {
    Fc,
    Calcification,
}

fn circular_gap_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn random_spec(id: String, kind: Kind, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let mut spec = PhantomSpec::plain(id, FRAMES);
    spec.lumen = LumenProfile {
        mean_px: rng.gen_range(95.0..125.0),
        harmonics: (1..=3)
            .map(|order| Harmonic {
                order,
                amplitude_px: rng.gen_range(0.0..6.0 / order as f64),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect(),
        frame_amplitude_px: rng.gen_range(0.0..3.0),
        frame_period: 16.0,
    };
    let gw = GuidewireSpec {
        theta_start: rng.gen_range(0..spec.n_theta),
        width: rng.gen_range(24..=36),
        drift_per_frame: rng.gen_range(-1.0..1.0),
    };
    let gw_center = (gw.theta_start as f64 + gw.width as f64 / 2.0) * 360.0 / spec.n_theta as f64;
    let width_deg = rng.gen_range(40.0..90.0);
    let center_deg = loop {
        let c = rng.gen_range(0.0..360.0);
        if circular_gap_deg(c, gw_center) > width_deg / 2.0 + 40.0 {
            break c;
        }
    };
    let arc = Arc {
        center_deg,
        width_deg,
        drift_deg_per_frame: rng.gen_range(-2.0..2.0),
    };
    match kind {
        Kind::Fc => spec.fc.push(FcLesion {
            frames: (0, FRAMES),
            arc,
            cap_um: rng.gen_range(50.0..200.0),
            cap_bulge_um: rng.gen_range(0.0..60.0),
            lipid_um: rng.gen_range(150.0..300.0),
        }),
        Kind::Calcification => {
            let top = rng.gen_range(20.0..100.0);
            spec.calcifications.push(CalcLesion {
                frames: (0, FRAMES),
                arc,
                depth_um: (top, top + rng.gen_range(150.0..400.0)),
                sharp_border: true,
            })
        }
    }
    spec.guidewire = Some(gw);
    spec.snr = Some(rng.gen_range(6.0..10.0));
    spec.seed = rng.gen();
    spec
}

fn random_suite(name: &str, pullbacks: usize, kind: Kind, seed: u64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pullbacks)
        .map(|i| random_spec(format!("{name}-p{i}"), kind, &mut rng))
        .collect()
}

fn fc_only(id: &str, n_frames: usize, lesions: Vec<FcLesion>) -> PhantomSpec {
    PhantomSpec {
        fc: lesions,
        guidewire: Some(GuidewireSpec {
            theta_start: 200,
            width: 30,
            drift_per_frame: 0.0,
        }),
        ..PhantomSpec::plain(id, n_frames)
    }
}

fn flat_lesion(center_deg: f64, width_deg: f64, cap_um: f64) -> FcLesion {
    FcLesion {
        frames: (0, 4),
        arc: Arc {
            center_deg,
            width_deg,
            drift_deg_per_frame: 0.0,
        },
        cap_um,
        cap_bulge_um: 0.0,
        lipid_um: 200.0,
    }
}

/// Noiseless corner cases: a guidewire shadow wrapping through θ = 0, caps at the
/// 65 μm boundary and below it, and two lesions in the same frames.
pub fn edge_case_specs() -> Vec<PhantomSpec> {
    let mut wrap = fc_only("edge-wrap", 4, vec![flat_lesion(120.0, 60.0, 100.0)]);
    wrap.guidewire = Some(GuidewireSpec {
        theta_start: 430,
        width: 29,
        drift_per_frame: 0.0,
    });
    vec![
        wrap,
        fc_only("edge-cap65", 4, vec![flat_lesion(90.0, 50.0, 65.0)]),
        fc_only("edge-cap50", 4, vec![flat_lesion(90.0, 50.0, 50.0)]),
        fc_only(
            "edge-multi",
            4,
            vec![flat_lesion(60.0, 40.0, 80.0), flat_lesion(300.0, 50.0, 150.0)],
        ),
    ]
}

/// Phantom specs of a named suite.
pub fn standard_suite(name: &str) -> Result<Vec<PhantomSpec>> {
    Ok(match name {
        "fc-train-64" => random_suite(name, 8, Kind::Fc, 0x5eed_0001),
        "fc-test-16" => random_suite(name, 2, Kind::Fc, 0x5eed_0002),
        "cal-pretrain-64" => random_suite(name, 8, Kind::Calcification, 0x5eed_0003),
        "edge-cases" => edge_case_specs(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite {name:?}; expected one of {SUITE_NAMES:?}"
            )))
        }
    })
}

/// Preprocessed samples of a suite, one inner vector per pullback. Each frame and
/// its aligned truth mask are cropped to `rows × width` (θ wraps).
///
/// Frame `i` is centred `offsets[i % offsets.len()]` A-lines from the lesion centre,
/// so a cycle like `[-40, 0, 40, n_theta / 2]` puts lesion borders and lesion-free
/// wall mid-crop as well. `&[0]` gives lesion-centred crops.
pub fn lesion_crops(name: &str, tag: ClassTag, rows: usize, width: usize, offsets: &[isize]) -> Result<Vec<Vec<Sample>>> {
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("no crop offsets".into()));
    }
    standard_suite(name)?
        .iter()
        .map(|spec| {
            let (pb, truth) = generate(spec)?;
            let pre = preprocess_pullback(&pb, &PreprocessParams::default())?;
            pre.iter()
                .zip(truth.masks(tag))
                .enumerate()
                .map(|(i, (p, m))| {
                    let center = lesion_center_column(spec, i)
                        .ok_or_else(|| Error::InvalidData(format!("{} frame {i} has no lesion", spec.id)))?;
                    let center = (center as isize + offsets[i % offsets.len()]).rem_euclid(spec.n_theta as isize) as usize;
                    let mask = p.align_mask(&m)?;
                    Sample::new(
                        crop_wrapped(&p.data, rows, center, width)?,
                        crate::pullback::Mask::new(crop_wrapped(mask.data(), rows, center, width)?, tag)?,
                    )
                })
                .collect()
        })
        .collect()
}

/// A-line index at the centre of the first lesion (FC, else calcification) in `frame`.
pub fn lesion_center_column(spec: &PhantomSpec, frame: usize) -> Option<usize> {
    let arc = spec
        .fc
        .first()
        .map(|l| &l.arc)
        .or_else(|| spec.calcifications.first().map(|c| &c.arc))?;
    let deg = (arc.center_deg + arc.drift_deg_per_frame * frame as f64).rem_euclid(360.0);
    Some((deg / 360.0 * spec.n_theta as f64).round() as usize % spec.n_theta)
}

/// The first `rows` rows of a `width`-column window centred on `center`, wrapping in θ.
pub fn crop_wrapped<T: Clone>(data: &Array2<T>, rows: usize, center: usize, width: usize) -> Result<Array2<T>> {
    let (n_r, n_t) = data.dim();
    if rows > n_r || width > n_t || width == 0 || rows == 0 {
        return Err(Error::Shape(format!("cannot crop {rows}×{width} from {n_r}×{n_t}")));
    }
    let start = center + n_t - width / 2;
    Ok(Array2::from_shape_fn((rows, width), |(r, c)| data[[r, (start + c) % n_t]].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate;
    use crate::pullback::ClassTag;
    use crate::quantify::{quantify_pullback, QuantConfig};

    #[test]
    fn suite_sizes_and_tags() {
        let train = standard_suite("fc-train-64").unwrap();
        assert_eq!(train.iter().map(|s| s.n_frames).sum::<usize>(), 64);
        assert_eq!(standard_suite("fc-test-16").unwrap().iter().map(|s| s.n_frames).sum::<usize>(), 16);
        for spec in &train[..2] {
            let (_, truth) = generate(spec).unwrap();
            assert!(truth.frames.iter().all(|f| f.fc.count() > 0));
        }
        let cal = standard_suite("cal-pretrain-64").unwrap();
        let (_, truth) = generate(&cal[0]).unwrap();
        let masks = truth.masks(ClassTag::Calcification);
        assert!(masks.iter().all(|m| m.class_tag() == ClassTag::Calcification && m.count() > 0));
        assert!(standard_suite("nope").is_err());
    }

    #[test]
    fn cap65_edge_case_is_not_tcfa() {
        let spec = edge_case_specs().into_iter().find(|s| s.id == "edge-cap65").unwrap();
        let (_, truth) = generate(&spec).unwrap();
        let g = spec.geometry.clone();
        let shifted: Vec<_> = truth
            .frames
            .iter()
            .map(|f| {
                let shadow = f.shadow.unwrap();
                crate::preprocess::shift_mask(&f.fc, &f.lumen, &shadow, 200).unwrap()
            })
            .collect();
        let q = quantify_pullback(&shifted, &truth.lumens(), &g, &QuantConfig::default()).unwrap();
        assert_eq!(q.min_cap_thickness_um, Some(65.0));
        assert!(!q.tcfa);
    }

    #[test]
    fn wrapped_crop() {
        let a = Array2::from_shape_fn((4, 10), |(r, c)| r * 10 + c);
        let c = crop_wrapped(&a, 2, 0, 4).unwrap();
        assert_eq!(c.row(0).to_vec(), vec![8, 9, 0, 1]);
        assert!(crop_wrapped(&a, 5, 0, 4).is_err());
    }
}

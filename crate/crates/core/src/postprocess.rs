//! Cleanup of network probability maps: threshold, disk opening, hole filling.
//!
//! Masks are polar `(r, θ)`: the θ axis (columns) wraps, and everything beyond
//! the r range (rows) counts as background.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::pullback::{ClassTag, Mask};
use crate::Result;

pub const THRESHOLD: f32 = 0.5;
pub const DISK_RADIUS: usize = 3;

/// Offsets `(dr, dθ)` of the disk `dr² + dθ² ≤ radius²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn disk(radius: usize) -> Self {
        let r = radius as isize;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
            .collect();
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

/// Pixel is 1 iff `prob >= threshold`.
pub fn binarize(prob: &Array2<f32>, threshold: f32, class_tag: ClassTag) -> Mask {
    Mask::new(prob.mapv(|p| u8::from(p >= threshold)), class_tag).expect("binary by construction")
}

fn sample(data: &Array2<u8>, r: isize, t: isize) -> u8 {
    let (n_r, n_t) = data.dim();
    if r < 0 || r >= n_r as isize {
        0
    } else {
        data[[r as usize, t.rem_euclid(n_t as isize) as usize]]
    }
}

fn erode(data: &Array2<u8>, se: &StructuringElement) -> Array2<u8> {
    Array2::from_shape_fn(data.dim(), |(r, t)| {
        let all = se
            .offsets()
            .iter()
            .all(|&(dr, dt)| sample(data, r as isize + dr, t as isize + dt) == 1);
        u8::from(all)
    })
}

fn dilate(data: &Array2<u8>, se: &StructuringElement) -> Array2<u8> {
    Array2::from_shape_fn(data.dim(), |(r, t)| {
        let any = se
            .offsets()
            .iter()
            .any(|&(dr, dt)| sample(data, r as isize - dr, t as isize - dt) == 1);
        u8::from(any)
    })
}

/// Morphological opening (erosion then dilation) with a disk of `radius`.
pub fn open_disk(mask: &Mask, radius: usize) -> Mask {
    if mask.data().is_empty() {
        return mask.clone();
    }
    let se = StructuringElement::disk(radius);
    let opened = dilate(&erode(mask.data(), &se), &se);
    Mask::new(opened, mask.class_tag()).expect("binary by construction")
}

/// Sets background regions that are not 4-connected to the first or last row.
pub fn fill_holes(mask: &Mask) -> Mask {
    let data = mask.data();
    let (n_r, n_t) = data.dim();
    let mut reached = Array2::<bool>::from_elem((n_r, n_t), false);
    let mut queue = VecDeque::new();
    for t in 0..n_t {
        for r in [0, n_r.saturating_sub(1)] {
            if n_r > 0 && data[[r, t]] == 0 && !reached[[r, t]] {
                reached[[r, t]] = true;
                queue.push_back((r, t));
            }
        }
    }
    while let Some((r, t)) = queue.pop_front() {
        let left = (t + n_t - 1) % n_t;
        let right = (t + 1) % n_t;
        let mut next = vec![(r, left), (r, right)];
        if r > 0 {
            next.push((r - 1, t));
        }
        if r + 1 < n_r {
            next.push((r + 1, t));
        }
        for (nr, nt) in next {
            if data[[nr, nt]] == 0 && !reached[[nr, nt]] {
                reached[[nr, nt]] = true;
                queue.push_back((nr, nt));
            }
        }
    }
    let filled = Array2::from_shape_fn((n_r, n_t), |p| u8::from(data[p] == 1 || !reached[p]));
    Mask::new(filled, mask.class_tag()).expect("binary by construction")
}

/// Threshold, open with the radius-3 disk, then fill holes.
pub fn postprocess(prob: &Array2<f32>, class_tag: ClassTag) -> Result<Mask> {
    let m = binarize(prob, THRESHOLD, class_tag);
    Ok(fill_holes(&open_disk(&m, DISK_RADIUS)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> Mask {
        let n_t = rows[0].len();
        let data = Array2::from_shape_fn((rows.len(), n_t), |(r, t)| u8::from(rows[r].as_bytes()[t] == b'#'));
        Mask::new(data, ClassTag::Fc).unwrap()
    }

    #[test]
    fn disk_radius_three_has_29_offsets() {
        let d = StructuringElement::disk(3);
        assert_eq!(d.offsets().len(), 29);
        assert!(d.offsets().contains(&(0, 0)));
        assert!(d.offsets().contains(&(3, 0)) && !d.offsets().contains(&(3, 1)));
    }

    #[test]
    fn binarize_rule() {
        let p = Array2::from_elem((2, 2), 0.5f32);
        assert_eq!(binarize(&p, 0.5, ClassTag::Fc).count(), 4);
        assert_eq!(binarize(&p.mapv(|_| 0.49), 0.5, ClassTag::Fc).count(), 0);
        assert_eq!(binarize(&p.mapv(|_| 0.0), 0.0, ClassTag::Fc).count(), 4);
    }

    #[test]
    fn opening_removes_specks_and_keeps_empty() {
        let mut m = Array2::zeros((16, 16));
        m[[8, 8]] = 1;
        let m = Mask::new(m, ClassTag::Fc).unwrap();
        assert_eq!(open_disk(&m, 3).count(), 0);
        let e = Mask::zeros((16, 16), ClassTag::Fc);
        assert_eq!(open_disk(&e, 3), e);
    }

    #[test]
    fn opening_wraps_theta() {
        // a 10-row band straddling θ = 0 survives intact
        let data = Array2::from_shape_fn((20, 30), |(r, t)| u8::from((5..15).contains(&r) && (t < 6 || t >= 24)));
        let m = Mask::new(data, ClassTag::Fc).unwrap();
        let o = open_disk(&m, 3);
        assert_eq!(o.data()[[10, 0]], 1);
        assert_eq!(o.data()[[10, 29]], 1);
    }

    #[test]
    fn holes() {
        let ring = mask(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        assert_eq!(fill_holes(&ring).data()[[2, 2]], 1);
        let channel = mask(&["#.###", "#.#.#", "#...#", "#####"]);
        assert_eq!(fill_holes(&channel), channel);
        let full = mask(&["###", "###"]);
        assert_eq!(fill_holes(&full), full);
        // a θ band closed only through the wrap still encloses the middle rows
        let band = mask(&["...", "###", "...", "###", "..."]);
        assert_eq!(fill_holes(&band).data().row(2).sum(), 3);
    }
}

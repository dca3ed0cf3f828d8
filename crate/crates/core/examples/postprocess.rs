//! Thresholding, disk opening and hole filling on a synthetic probability map.

use fibcap::postprocess::{binarize, fill_holes, open_disk, postprocess, DISK_RADIUS, THRESHOLD};
use fibcap::pullback::ClassTag;
use ndarray::Array2;

fn main() -> fibcap::Result<()> {
    // a cap band with a hole, a speck and a one-pixel spur
    let prob = Array2::from_shape_fn((40, 64), |(r, t)| {
        let band = (4..16).contains(&r) && (10..50).contains(&t);
        let hole = (8..11).contains(&r) && (28..31).contains(&t);
        let speck = r == 30 && t == 5;
        let spur = r == 16 && t == 20;
        if (band && !hole) || speck || spur { 0.9f32 } else { 0.1 }
    });
    let raw = binarize(&prob, THRESHOLD, ClassTag::Fc);
    let opened = open_disk(&raw, DISK_RADIUS);
    let filled = fill_holes(&opened);
    println!("binarized {} px, opened {} px, filled {} px", raw.count(), opened.count(), filled.count());
    assert_eq!(postprocess(&prob, ClassTag::Fc)?, filled);
    Ok(())
}

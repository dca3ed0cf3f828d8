use ndarray::Array2;

use crate::pullback::Mask;
use crate::{Error, Result};

/// Per-pixel strict majority over `k` binary masks; ties (even `k`) go to background.
pub fn plurality_vote(masks: &[Mask]) -> Result<Mask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("plurality vote needs at least one mask".into()))?;
    let mut votes = Array2::<u32>::zeros(first.dim());
    for m in masks {
        if m.dim() != first.dim() {
            return Err(Error::Shape(format!("vote mixes {:?} and {:?}", first.dim(), m.dim())));
        }
        votes.zip_mut_with(m.data(), |v, &b| *v += b as u32);
    }
    let k = masks.len() as u32;
    Mask::new(votes.mapv(|v| u8::from(2 * v > k)), first.class_tag())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::ClassTag;

    fn px(v: u8) -> Mask {
        Mask::new(Array2::from_elem((1, 1), v), ClassTag::Fc).unwrap()
    }

    #[test]
    fn majority_and_ties() {
        let five: Vec<_> = [1, 1, 1, 0, 0].into_iter().map(px).collect();
        assert_eq!(plurality_vote(&five).unwrap().data()[[0, 0]], 1);
        let four: Vec<_> = [1, 1, 0, 0].into_iter().map(px).collect();
        assert_eq!(plurality_vote(&four).unwrap().data()[[0, 0]], 0);
        assert!(plurality_vote(&[]).is_err());
    }
}

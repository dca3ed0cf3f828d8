use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Pullback-level cross-validation plan. The ids are shuffled into `k` groups;
/// fold `i` tests on group `i`, validates on group `(i + 1) % k` and trains on the
/// rest, which gives 60/20/20 at `k = 5`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub groups: Vec<Vec<String>>,
    pub folds: Vec<Fold>,
}

pub fn make_folds(pullback_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("need k >= 3 folds for train/val/test, got {k}")));
    }
    let mut ids = pullback_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != pullback_ids.len() {
        return Err(Error::InvalidArgument("duplicate pullback ids".into()));
    }
    if ids.len() < k {
        return Err(Error::InvalidArgument(format!("{} pullbacks cannot fill {k} folds", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        groups[i % k].push(id);
    }
    for g in &mut groups {
        g.sort();
    }
    let folds = (0..k)
        .map(|i| {
            let v = (i + 1) % k;
            let mut train: Vec<String> = groups
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && j != v)
                .flat_map(|(_, g)| g.iter().cloned())
                .collect();
            train.sort();
            Fold {
                train,
                val: groups[v].clone(),
                test: groups[i].clone(),
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, groups, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("pb{i:02}")).collect()
    }

    #[test]
    fn exact_cover() {
        let plan = make_folds(&ids(10), 5, 3).unwrap();
        let mut tests: Vec<String> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        assert!(plan.folds.iter().all(|f| f.test.len() == 2 && f.val.len() == 2 && f.train.len() == 6));
        tests.sort();
        assert_eq!(tests, ids(10));
        for f in &plan.folds {
            assert!(f.test.iter().all(|t| !f.train.contains(t) && !f.val.contains(t)));
            assert!(f.val.iter().all(|t| !f.train.contains(t)));
        }
    }

    #[test]
    fn seeded_and_checked() {
        assert_eq!(make_folds(&ids(10), 5, 1).unwrap(), make_folds(&ids(10), 5, 1).unwrap());
        assert!(make_folds(&ids(4), 5, 1).is_err());
        let mut dup = ids(6);
        dup.push("pb00".into());
        assert!(make_folds(&dup, 5, 1).is_err());
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// Source id to fold index. Every segment of a source shares its fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, source_id: &str) -> Option<usize> {
        self.folds.get(source_id).copied()
    }

    pub fn test_sources(&self, fold: usize) -> BTreeSet<String> {
        self.folds
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn train_sources(&self, fold: usize) -> BTreeSet<String> {
        self.folds
            .iter()
            .filter(|(_, f)| **f != fold)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Fail if any recording appears on both sides of a split.
pub fn check_disjoint<'a>(
    train: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let train: BTreeSet<&str> = train.into_iter().collect();
    let leaked: Vec<&str> = test
        .into_iter()
        .filter(|s| train.contains(s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !leaked.is_empty() {
        return Err(Error::Protocol(format!(
            "{} source recording(s) appear in both training and test data: {}",
            leaked.len(),
            leaked.join(", ")
        )));
    }
    Ok(())
}

/// Assign `(source_id, vessel_type)` pairs to `k` folds. Sources of each
/// vessel type are shuffled and dealt round-robin, the dealing position
/// carrying over from one type to the next, so fold sizes differ by at
/// most one and each type is spread as evenly as possible.
pub fn assign_folds(sources: &[(String, String)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let unique: BTreeSet<&str> = sources.iter().map(|(s, _)| s.as_str()).collect();
    if unique.len() < k {
        return Err(Error::Protocol(format!(
            "{} source recording(s) cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (s, t) in sources {
        if seen.insert(s.as_str()) {
            by_type.entry(t.as_str()).or_default().push(s.as_str());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for (_, mut group) in by_type {
        group.sort_unstable();
        group.shuffle(&mut rng);
        for s in group {
            folds.insert(s.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, folds })
}

pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    assign_folds(&manifest.sources(), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sources(n: usize, types: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| (format!("s{i}"), format!("t{}", i % types)))
            .collect()
    }

    #[test]
    fn eight_sources_fill_four_folds() {
        let f = assign_folds(&sources(8, 3), 4, 1).unwrap();
        for fold in 0..4 {
            assert!(!f.test_sources(fold).is_empty());
        }
    }

    #[test]
    fn too_few_sources_is_a_protocol_error() {
        assert!(matches!(
            assign_folds(&sources(3, 1), 4, 0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn leakage_is_detected() {
        assert!(check_disjoint(["a", "b"], ["c"]).is_ok());
        let e = check_disjoint(["a", "b"], ["b", "c"]).unwrap_err();
        assert!(matches!(e, Error::Protocol(m) if m.contains('b')));
    }

    proptest! {
        #[test]
        fn folds_partition_the_sources(n in 4usize..60, types in 1usize..6, k in 2usize..5, seed in 0u64..1000) {
            prop_assume!(n >= k);
            let src = sources(n, types);
            let f = assign_folds(&src, k, seed).unwrap();
            prop_assert_eq!(f.folds.len(), n);
            let mut union = BTreeSet::new();
            for fold in 0..k {
                let test = f.test_sources(fold);
                let train = f.train_sources(fold);
                prop_assert!(!test.is_empty());
                prop_assert!(test.is_disjoint(&train));
                prop_assert_eq!(test.len() + train.len(), n);
                union.extend(test);
            }
            prop_assert_eq!(union.len(), n);
            prop_assert_eq!(&f, &assign_folds(&src, k, seed).unwrap());
        }
    }
}

//! Compositional train/test splits and labeled subsets.
//!
//! A split is a uniformly random partition of the factor grid, followed by a
//! repair pass guaranteeing that every value of every factor occurs in at
//! least one train tuple. Test tuples are therefore unseen combinations of
//! seen values.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::spec::FactorSpec;
use crate::error::{Error, Result};
use crate::seed::{rng_for, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub spec: FactorSpec,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSubset {
    /// Fingerprint of the split the ids were drawn from.
    pub split: String,
    pub ids: Vec<usize>,
    pub seed: u64,
}

/// Per-(factor, value) occurrence counts over a set of ids.
struct Coverage {
    counts: Vec<Vec<usize>>,
}

impl Coverage {
    fn new(spec: &FactorSpec, ids: &[usize]) -> Self {
        let mut counts: Vec<Vec<usize>> = spec.cardinalities().iter().map(|&c| vec![0; c]).collect();
        for &id in ids {
            for (k, c) in counts.iter_mut().enumerate() {
                c[spec.index_of(id, k)] += 1;
            }
        }
        Self { counts }
    }

    fn apply(&mut self, spec: &FactorSpec, id: usize, add: bool) {
        for (k, c) in self.counts.iter_mut().enumerate() {
            let v = &mut c[spec.index_of(id, k)];
            if add {
                *v += 1;
            } else {
                *v -= 1;
            }
        }
    }

    fn covered(&self) -> usize {
        self.counts.iter().flatten().filter(|&&c| c > 0).count()
    }

    fn first_gap(&self) -> Option<(usize, usize)> {
        self.counts
            .iter()
            .enumerate()
            .find_map(|(k, c)| c.iter().position(|&n| n == 0).map(|v| (k, v)))
    }
}

pub fn make_compositional_split(spec: &FactorSpec, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if spec.n_factors() < 2 {
        return Err(Error::NoNovelCombinations);
    }
    spec.validate()?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = spec.grid_size();
    let target = (ratio * n as f64).round() as usize;
    let max_card = spec.cardinalities().into_iter().max().unwrap_or(0);
    if target < max_card || target >= n {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} gives {target} train tuples; need between {max_card} and {} for value coverage",
            n - 1
        )));
    }

    let mut rng = rng_for(seed, "split");
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut test = ids.split_off(target);
    let mut train = ids;

    let mut cov = Coverage::new(spec, &train);
    let mut covered = cov.covered();
    while let Some((k, v)) = cov.first_gap() {
        let candidates: Vec<usize> = (0..test.len()).filter(|&i| spec.index_of(test[i], k) == v).collect();
        let &pick = candidates.choose(&mut rng).expect("every value occurs in the grid");
        let moved = test.swap_remove(pick);
        train.push(moved);
        cov.apply(spec, moved, true);

        // Give back a train tuple whose removal uncovers nothing.
        let removable: Vec<usize> = (0..train.len())
            .filter(|&i| (0..spec.n_factors()).all(|kk| cov.counts[kk][spec.index_of(train[i], kk)] >= 2))
            .collect();
        if let Some(&r) = removable.choose(&mut rng) {
            let back = train.swap_remove(r);
            cov.apply(spec, back, false);
            test.push(back);
        }
        let now = cov.covered();
        debug_assert!(now > covered, "repair must strictly extend coverage");
        covered = now;
    }

    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment { spec: spec.clone(), train_ids: train, test_ids: test, ratio, seed })
}

impl SplitAssignment {
    pub fn fingerprint(&self) -> String {
        let payload = serde_json::to_vec(&(&self.train_ids, &self.test_ids, self.ratio, self.seed)).expect("serializable");
        sha256_hex(&payload)
    }

    /// Checks disjointness, union and per-value train coverage.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.spec.grid_size();
        let mut seen = vec![0u8; n];
        for &id in self.train_ids.iter().chain(&self.test_ids) {
            if id >= n {
                return Err(Error::InvalidArgument(format!("id {id} outside grid")));
            }
            seen[id] += 1;
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::InvalidArgument("train/test do not partition the grid".into()));
        }
        if Coverage::new(&self.spec, &self.train_ids).first_gap().is_some() {
            return Err(Error::InvalidArgument("a factor value is missing from train".into()));
        }
        Ok(())
    }
}

pub fn sample_labeled_subset(split: &SplitAssignment, n_label: usize, seed: u64) -> Result<LabeledSubset> {
    if n_label > split.train_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "N_label {n_label} exceeds the {} train ids",
            split.train_ids.len()
        )));
    }
    let mut rng = rng_for(seed, "labeled-subset");
    let mut ids: Vec<usize> = split.train_ids.choose_multiple(&mut rng, n_label).copied().collect();
    ids.sort_unstable();
    Ok(LabeledSubset { split: split.fingerprint(), ids, seed })
}

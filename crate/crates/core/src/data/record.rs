use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng;

/// One labeled multivariate time series.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    /// `T x F` values; unobserved cells hold 0.
    pub x: Tensor,
    /// Row-major `T x F`, `true` where the cell was observed.
    pub mask: Vec<bool>,
    pub label: u8,
    /// Row-major `T x F` ground-truth relevance, when known.
    pub relevance: Option<Vec<bool>>,
}

impl Record {
    pub fn timesteps(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn n_features(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn observed(&self, t: usize, f: usize) -> bool {
        self.mask[t * self.n_features() + f]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub feature_names: Option<Vec<String>>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn total_cells(&self) -> usize {
        self.records.iter().map(|r| r.mask.len()).sum()
    }

    pub fn missing_cells(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.mask.iter().filter(|&&m| !m).count())
            .sum()
    }

    pub fn missing_rate(&self) -> f64 {
        let total = self.total_cells();
        if total == 0 {
            0.0
        } else {
            self.missing_cells() as f64 / total as f64
        }
    }

    /// Records with the given ids, in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Record>> {
        let index: HashMap<&str, &Record> =
            self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| Error::UnknownRecord(id.clone()))
            })
            .collect()
    }

    pub fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset {
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
            records,
        }
    }
}

/// Disjoint train/validation/test partition of record ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Conventional split seeds for repeated experiments.
pub const STANDARD_SPLIT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Seeded 80/10/10 split: validation and test get `floor(n / 10)` records
/// each, train gets the remainder.
pub fn split(dataset: &Dataset, seed: u64) -> Result<SplitSet> {
    let n = dataset.len();
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 records to split, got {n}")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = dataset.records.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::invalid(format!("duplicate record id `{}`", dup.id)));
    }
    let mut ids: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    ids.shuffle(&mut rng::derived_stream(seed, &[0x5911]));
    let tenth = n / 10;
    let test = ids.split_off(n - tenth);
    let validation = ids.split_off(n - 2 * tenth);
    Ok(SplitSet {
        train: ids,
        validation,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> Dataset {
        Dataset {
            n_features: 1,
            feature_names: None,
            records: (0..n)
                .map(|i| Record {
                    id: format!("r{i}"),
                    x: Tensor::zeros(&[1, 1]),
                    mask: vec![true],
                    label: (i % 2) as u8,
                    relevance: None,
                })
                .collect(),
        }
    }

    #[test]
    fn hundred_records_split_80_10_10() {
        let s = split(&dataset(100), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn remainder_goes_to_train() {
        let s = split(&dataset(19), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (17, 1, 1));
    }

    #[test]
    fn same_seed_same_split() {
        let d = dataset(57);
        assert_eq!(split(&d, 4).unwrap(), split(&d, 4).unwrap());
        assert_ne!(split(&d, 4).unwrap(), split(&d, 5).unwrap());
    }

    #[test]
    fn parts_are_disjoint_and_exhaustive() {
        for n in [10, 11, 23, 100, 301] {
            let d = dataset(n);
            for seed in STANDARD_SPLIT_SEEDS {
                let s = split(&d, seed).unwrap();
                let mut all: Vec<&String> =
                    s.train.iter().chain(&s.validation).chain(&s.test).collect();
                assert_eq!(all.len(), n);
                all.sort();
                all.dedup();
                assert_eq!(all.len(), n);
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(split(&dataset(9), 1).is_err());
    }

    #[test]
    fn select_unknown_id() {
        let d = dataset(3);
        assert!(matches!(
            d.select(&["nope".to_string()]),
            Err(Error::UnknownRecord(_))
        ));
    }
}

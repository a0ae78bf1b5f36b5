use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;

use super::record::{Dataset, Record};

/// Per-feature z-score statistics fitted on observed training cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; `0` means the feature is only centered.
    pub sd: Vec<f64>,
    /// Append the observation mask as `F` extra 0/1 features.
    #[serde(default)]
    pub append_mask: bool,
}

impl Standardizer {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a Record>, n_features: usize) -> Self {
        let mut sum = vec![0.0; n_features];
        let mut count = vec![0usize; n_features];
        let records: Vec<&Record> = records.into_iter().collect();
        for r in &records {
            for (c, (&v, &m)) in r.x.values().iter().zip(&r.mask).enumerate() {
                if m {
                    sum[c % n_features] += v;
                    count[c % n_features] += 1;
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; n_features];
        for r in &records {
            for (c, (&v, &m)) in r.x.values().iter().zip(&r.mask).enumerate() {
                if m {
                    let d = v - mean[c % n_features];
                    sq[c % n_features] += d * d;
                }
            }
        }
        let sd = sq
            .iter()
            .zip(&count)
            .map(|(&s, &n)| if n > 0 { (s / n as f64).sqrt() } else { 0.0 })
            .collect();
        Standardizer {
            mean,
            sd,
            append_mask: false,
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes observed cells and imputes unobserved ones with 0 (the
    /// training mean after standardization).
    pub fn apply_record(&self, record: &Record) -> Result<Record> {
        let f_len = self.n_features();
        if record.n_features() != f_len {
            return Err(Error::Shape {
                op: "standardize",
                lhs: vec![f_len],
                rhs: record.x.shape().to_vec(),
            });
        }
        let t_len = record.timesteps();
        let out_f = if self.append_mask { 2 * f_len } else { f_len };
        let mut x = vec![0.0; t_len * out_f];
        let mut mask = vec![true; t_len * out_f];
        let mut relevance = record.relevance.as_ref().map(|_| vec![false; t_len * out_f]);
        for t in 0..t_len {
            for f in 0..f_len {
                let c = t * f_len + f;
                let o = t * out_f + f;
                let observed = record.mask[c];
                mask[o] = observed;
                if observed {
                    let centered = record.x.values()[c] - self.mean[f];
                    x[o] = if self.sd[f] > 0.0 { centered / self.sd[f] } else { centered };
                }
                if self.append_mask {
                    x[t * out_f + f_len + f] = if observed { 1.0 } else { 0.0 };
                }
                if let (Some(dst), Some(src)) = (relevance.as_mut(), record.relevance.as_ref()) {
                    dst[o] = src[c];
                }
            }
        }
        Ok(Record {
            id: record.id.clone(),
            x: Tensor::matrix(t_len, out_f, x)?,
            mask,
            label: record.label,
            relevance,
        })
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let records = dataset
            .records
            .iter()
            .map(|r| self.apply_record(r))
            .collect::<Result<Vec<_>>>()?;
        let feature_names = dataset.feature_names.as_ref().map(|names| {
            let mut out = names.clone();
            if self.append_mask {
                out.extend(names.iter().map(|n| format!("{n}_observed")));
            }
            out
        });
        Ok(Dataset {
            n_features: if self.append_mask { 2 * self.n_features() } else { self.n_features() },
            feature_names,
            records,
        })
    }
}

/// Fits statistics on the records whose ids are in `train_ids` and applies
/// them to the whole dataset.
pub fn preprocess(
    dataset: &Dataset,
    train_ids: &[String],
    append_mask: bool,
) -> Result<(Dataset, Standardizer)> {
    let train = dataset.select(train_ids)?;
    let mut std = Standardizer::fit(&train, dataset.n_features);
    std.append_mask = append_mask;
    Ok((std.apply(dataset)?, std))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, x: Vec<f64>, mask: Vec<bool>, f: usize) -> Record {
        let t = x.len() / f;
        Record {
            id: id.into(),
            x: Tensor::matrix(t, f, x).unwrap(),
            mask,
            label: 0,
            relevance: None,
        }
    }

    fn ds(records: Vec<Record>, f: usize) -> Dataset {
        Dataset {
            n_features: f,
            feature_names: None,
            records,
        }
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let d = ds(vec![rec("a", vec![5.0, 5.0, 5.0], vec![true; 3], 1)], 1);
        let (out, s) = preprocess(&d, &["a".into()], false).unwrap();
        assert_eq!(s.sd, vec![0.0]);
        assert_eq!(out.records[0].x.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_observed_values_map_to_minus_one_one() {
        let d = ds(
            vec![rec("a", vec![1.0, 0.0, 3.0], vec![true, false, true], 1)],
            1,
        );
        let (out, _) = preprocess(&d, &["a".into()], false).unwrap();
        assert_eq!(out.records[0].x.values(), &[-1.0, 0.0, 1.0]);
        assert_eq!(out.records[0].mask, vec![true, false, true]);
    }

    #[test]
    fn statistics_come_from_training_records_only() {
        let d = ds(
            vec![
                rec("train", vec![1.0, 3.0], vec![true, true], 1),
                rec("test", vec![100.0, 5.0], vec![true, true], 1),
            ],
            1,
        );
        let (out, s) = preprocess(&d, &["train".into()], false).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(out.records[1].x.values(), &[98.0, 3.0]);
    }

    #[test]
    fn refit_on_output_is_identity() {
        let d = ds(
            vec![
                rec("a", vec![1.0, 2.0, 7.0, -1.0], vec![true, true, false, true], 2),
                rec("b", vec![0.5, 9.0, 3.0, 4.0], vec![true, true, true, true], 2),
            ],
            2,
        );
        let ids = vec!["a".to_string(), "b".to_string()];
        let (out, _) = preprocess(&d, &ids, false).unwrap();
        let (again, s2) = preprocess(&out, &ids, false).unwrap();
        for (m, s) in s2.mean.iter().zip(&s2.sd) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
        for (r1, r2) in out.records.iter().zip(&again.records) {
            for (a, b) in r1.x.values().iter().zip(r2.x.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_features_appended() {
        let d = ds(vec![rec("a", vec![1.0, 3.0], vec![true, false], 2)], 2);
        let (out, _) = preprocess(&d, &["a".into()], true).unwrap();
        assert_eq!(out.n_features, 4);
        assert_eq!(out.records[0].x.values(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(out.records[0].mask, vec![true, false, true, true]);
    }
}

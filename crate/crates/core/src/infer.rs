//! Monte-Carlo predictive inference and "I don't know" deferral.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::net::{forward, mean_std, Draws, ModelParams};
use crate::rng;

pub const DEFAULT_SAMPLES: usize = 30;

/// `S` sampled probabilities for one record with their mean and population
/// standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl PredictiveDistribution {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("predictive distribution needs at least one sample"));
        }
        if samples.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("sample probabilities must lie in [0, 1]"));
        }
        let (mean, std) = if samples.iter().all(|&p| p == samples[0]) {
            (samples[0], 0.0)
        } else {
            mean_std(&samples)
        };
        Ok(PredictiveDistribution {
            samples,
            mean: mean.clamp(0.0, 1.0),
            std,
        })
    }

    /// Hard label from the predictive mean.
    pub fn label(&self) -> u8 {
        u8::from(self.mean >= 0.5)
    }
}

/// Seed of a record's inference stream, keyed by its id.
pub fn record_seed(seed: u64, id: &str) -> u64 {
    rng::derive(seed, &[0x1afe, rng::hash_str(id)])
}

/// `S` forward passes, each with fresh dropout masks and Gaussian draws from
/// an independent stream derived from `seed`.
pub fn mc_predict(
    x: &Tensor,
    params: &ModelParams,
    samples: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<PredictiveDistribution> {
    if samples == 0 {
        return Err(Error::config("number of MC samples must be at least 1"));
    }
    let t = x.shape()[0];
    if !params.variant().is_stochastic() && dropout_rate == 0.0 {
        let draws = Draws::zeros(t, params.dims().embed);
        let p = forward(params, x, &draws)?.prob();
        return PredictiveDistribution::from_samples(vec![p; samples]);
    }
    let probs = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::derived_stream(seed, &[s as u64]);
            let draws = Draws::sample(params, t, dropout_rate, &mut g)?;
            Ok(forward(params, x, &draws)?.prob())
        })
        .collect::<Result<Vec<_>>>()?;
    PredictiveDistribution::from_samples(probs)
}

/// [`mc_predict`] over many records in parallel; each record's stream is
/// keyed by its id so results do not depend on record order.
pub fn predict_records(
    records: &[Record],
    params: &ModelParams,
    samples: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<PredictiveDistribution>> {
    records
        .par_iter()
        .map(|r| mc_predict(&r.x, params, samples, dropout_rate, record_seed(seed, &r.id)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdkOutcome {
    Predict(u8),
    Idk,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdkDecision {
    pub outcome: IdkOutcome,
    pub threshold: f64,
}

/// Predicts when `std <= threshold`, otherwise defers.
pub fn idk_decide(dist: &PredictiveDistribution, threshold: f64) -> Result<IdkDecision> {
    if !(threshold >= 0.0) {
        return Err(Error::config(format!("IDK threshold must be >= 0, got {threshold}")));
    }
    let outcome = if dist.std <= threshold {
        IdkOutcome::Predict(dist.label())
    } else {
        IdkOutcome::Idk
    };
    Ok(IdkDecision { outcome, threshold })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdkPoint {
    pub threshold: f64,
    pub correct_ratio: f64,
    pub incorrect_ratio: f64,
    pub idk_ratio: f64,
}

fn check_aligned(dists: &[PredictiveDistribution], labels: &[u8]) -> Result<()> {
    if dists.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} distributions but {} labels",
            dists.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// The exact attainable sweep: `+inf`, every distinct observed std in
/// descending order, then `0`.
pub fn default_thresholds(dists: &[PredictiveDistribution]) -> Vec<f64> {
    let mut stds: Vec<f64> = dists.iter().map(|d| d.std).collect();
    stds.push(0.0);
    stds.sort_by(|a, b| b.total_cmp(a));
    stds.dedup();
    let mut out = vec![f64::INFINITY];
    out.extend(stds);
    out
}

/// Correct / incorrect / deferred fractions of all records at each
/// threshold of a descending sweep.
pub fn idk_curve(
    dists: &[PredictiveDistribution],
    labels: &[u8],
    thresholds: &[f64],
) -> Result<Vec<IdkPoint>> {
    check_aligned(dists, labels)?;
    if thresholds.is_empty() {
        return Err(Error::config("threshold sweep is empty"));
    }
    if thresholds.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::config("thresholds must be in descending order"));
    }
    if dists.is_empty() {
        return Err(Error::invalid("IDK curve of an empty set"));
    }
    let n = dists.len() as f64;
    thresholds
        .iter()
        .map(|&t| {
            let (mut correct, mut incorrect, mut idk) = (0usize, 0usize, 0usize);
            for (d, &y) in dists.iter().zip(labels) {
                match idk_decide(d, t)?.outcome {
                    IdkOutcome::Predict(l) if l == y => correct += 1,
                    IdkOutcome::Predict(_) => incorrect += 1,
                    IdkOutcome::Idk => idk += 1,
                }
            }
            Ok(IdkPoint {
                threshold: t,
                correct_ratio: correct as f64 / n,
                incorrect_ratio: incorrect as f64 / n,
                idk_ratio: idk as f64 / n,
            })
        })
        .collect()
}

/// What the deferred records would have been had they been predicted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdkBreakdown {
    pub deferred: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_pos: usize,
    pub true_neg: usize,
}

pub fn idk_breakdown(
    dists: &[PredictiveDistribution],
    labels: &[u8],
    threshold: f64,
) -> Result<IdkBreakdown> {
    check_aligned(dists, labels)?;
    let mut b = IdkBreakdown::default();
    for (d, &y) in dists.iter().zip(labels) {
        if idk_decide(d, threshold)?.outcome != IdkOutcome::Idk {
            continue;
        }
        b.deferred += 1;
        match (d.label(), y) {
            (1, 0) => b.false_pos += 1,
            (0, 1) => b.false_neg += 1,
            (1, 1) => b.true_pos += 1,
            _ => b.true_neg += 1,
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn dist(mean: f64, std: f64) -> PredictiveDistribution {
        PredictiveDistribution {
            samples: vec![mean],
            mean,
            std,
        }
    }

    #[test]
    fn mean_and_population_std() {
        let d = PredictiveDistribution::from_samples(vec![0.4, 0.6]).unwrap();
        assert!((d.mean - 0.5).abs() < 1e-15);
        assert!((d.std - 0.1).abs() < 1e-15);
        let same = PredictiveDistribution::from_samples(vec![0.1; 3]).unwrap();
        assert_eq!((same.mean, same.std), (0.1, 0.0));
        assert!(PredictiveDistribution::from_samples(vec![]).is_err());
    }

    #[test]
    fn decide_rules() {
        assert_eq!(idk_decide(&dist(0.7, 0.0), 0.1).unwrap().outcome, IdkOutcome::Predict(1));
        assert_eq!(idk_decide(&dist(0.7, 0.3), 0.2).unwrap().outcome, IdkOutcome::Idk);
        assert_eq!(
            idk_decide(&dist(0.2, 5.0), f64::INFINITY).unwrap().outcome,
            IdkOutcome::Predict(0)
        );
        // ties predict
        assert_eq!(idk_decide(&dist(0.5, 0.2), 0.2).unwrap().outcome, IdkOutcome::Predict(1));
        assert!(idk_decide(&dist(0.5, 0.2), -1.0).is_err());
    }

    #[test]
    fn curve_edge_cases() {
        let ds = vec![dist(0.9, 0.0), dist(0.2, 0.0), dist(0.6, 0.0)];
        let labels = [1, 0, 0];
        let c = idk_curve(&ds, &labels, &[0.5, 0.1, 1e-9]).unwrap();
        assert!(c.iter().all(|p| p.idk_ratio == 0.0));

        let ds = vec![dist(0.9, 0.2), dist(0.2, 0.3)];
        let c = idk_curve(&ds, &[1, 0], &[0.1]).unwrap();
        assert_eq!((c[0].idk_ratio, c[0].correct_ratio, c[0].incorrect_ratio), (1.0, 0.0, 0.0));

        assert!(idk_curve(&ds, &[1], &[0.1]).is_err());
        assert!(idk_curve(&ds, &[1, 0], &[]).is_err());
        assert!(idk_curve(&ds, &[1, 0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn curve_matches_brute_force_recount() {
        let mut g = rng::stream(50);
        let ds: Vec<PredictiveDistribution> = (0..50)
            .map(|_| dist(g.random::<f64>(), (g.random::<f64>() * 10.0).floor() / 40.0))
            .collect();
        let labels: Vec<u8> = (0..50).map(|_| u8::from(g.random::<bool>())).collect();
        let ts = default_thresholds(&ds);
        let curve = idk_curve(&ds, &labels, &ts).unwrap();
        assert_eq!(curve.len(), ts.len());
        for p in &curve {
            let (mut c, mut w, mut k) = (0, 0, 0);
            for i in 0..50 {
                if ds[i].std > p.threshold {
                    k += 1;
                } else if (ds[i].mean >= 0.5) == (labels[i] == 1) {
                    c += 1;
                } else {
                    w += 1;
                }
            }
            assert_eq!(p.correct_ratio, c as f64 / 50.0);
            assert_eq!(p.incorrect_ratio, w as f64 / 50.0);
            assert_eq!(p.idk_ratio, k as f64 / 50.0);
            assert!((p.correct_ratio + p.incorrect_ratio + p.idk_ratio - 1.0).abs() < 1e-12);
        }
        for w in curve.windows(2) {
            assert!(w[1].correct_ratio <= w[0].correct_ratio);
            assert!(w[1].incorrect_ratio <= w[0].incorrect_ratio);
        }
        assert_eq!(curve[0].idk_ratio, 0.0);
    }

    #[test]
    fn breakdown_cases() {
        let ds = vec![dist(0.9, 0.0), dist(0.2, 0.0)];
        assert_eq!(idk_breakdown(&ds, &[1, 0], 0.1).unwrap(), IdkBreakdown::default());

        let ds = vec![dist(0.6, 0.3)];
        let b = idk_breakdown(&ds, &[0], 0.1).unwrap();
        assert_eq!((b.false_pos, b.false_neg, b.true_pos, b.true_neg), (1, 0, 0, 0));
    }

    #[test]
    fn breakdown_matches_brute_force() {
        let mut g = rng::stream(9);
        let ds: Vec<PredictiveDistribution> =
            (0..80).map(|_| dist(g.random::<f64>(), g.random::<f64>() * 0.3)).collect();
        let labels: Vec<u8> = (0..80).map(|_| u8::from(g.random::<bool>())).collect();
        let b = idk_breakdown(&ds, &labels, 0.12).unwrap();
        let mut expect = [0usize; 4];
        for (d, &y) in ds.iter().zip(&labels) {
            if d.std > 0.12 {
                let pred = d.mean >= 0.5;
                let idx = match (pred, y == 1) {
                    (true, false) => 0,
                    (false, true) => 1,
                    (true, true) => 2,
                    (false, false) => 3,
                };
                expect[idx] += 1;
            }
        }
        assert_eq!([b.false_pos, b.false_neg, b.true_pos, b.true_neg], expect);
        assert_eq!(b.deferred, expect.iter().sum::<usize>());
    }

    #[test]
    fn deferred_sets_are_nested() {
        let mut g = rng::stream(4);
        let ds: Vec<PredictiveDistribution> =
            (0..40).map(|_| dist(0.5, g.random::<f64>() * 0.2)).collect();
        let defer = |t: f64| -> Vec<bool> {
            ds.iter()
                .map(|d| idk_decide(d, t).unwrap().outcome == IdkOutcome::Idk)
                .collect()
        };
        for (hi, lo) in [(0.15, 0.1), (0.1, 0.02), (0.02, 0.0)] {
            let (a, b) = (defer(hi), defer(lo));
            assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
        }
    }
}

//! Calibration (reliability bins, ECE), discrimination (AUROC) and
//! attention-recovery scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_ATTENTION_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the bin's members; 0 for an empty bin.
    pub mean_confidence: f64,
    /// Fraction of correct members; 0 for an empty bin.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<Bin>,
    pub total: usize,
}

impl ReliabilityBins {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }
}

/// Binary confidence `max(p, 1 - p)` and whether the hard label
/// `p >= 0.5` is correct.
pub fn confidence_and_correctness(probs: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<bool>) {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p.max(1.0 - p), u8::from(p >= 0.5) == y))
        .unzip()
}

/// Equal-width bins over `[0, 1]`.
pub fn reliability_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<ReliabilityBins> {
    reliability_bins_in(confidences, correct, n_bins, 0.0, 1.0)
}

/// Equal-width bins over `[lo, hi]`; each bin is left-closed, the last one
/// also right-closed.
pub fn reliability_bins_in(
    confidences: &[f64],
    correct: &[bool],
    n_bins: usize,
    lo: f64,
    hi: f64,
) -> Result<ReliabilityBins> {
    if n_bins < 1 {
        return Err(Error::config("n_bins must be at least 1"));
    }
    if !(lo < hi) {
        return Err(Error::config(format!("empty binning range [{lo}, {hi}]")));
    }
    if confidences.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut sum_conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(lo..=hi).contains(&c) {
            return Err(Error::invalid(format!("confidence {c} outside [{lo}, {hi}]")));
        }
        let idx = (((c - lo) / (hi - lo) * n_bins as f64).floor() as usize).min(n_bins - 1);
        sum_conf[idx] += c;
        hits[idx] += usize::from(ok);
        count[idx] += 1;
    }
    let bins = (0..n_bins)
        .map(|i| {
            let n = count[i];
            Bin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == n_bins { hi } else { lo + (i + 1) as f64 * width },
                count: n,
                mean_confidence: if n > 0 { sum_conf[i] / n as f64 } else { 0.0 },
                accuracy: if n > 0 { hits[i] as f64 / n as f64 } else { 0.0 },
            }
        })
        .collect();
    Ok(ReliabilityBins {
        bins,
        total: confidences.len(),
    })
}

/// Expected calibration error: `sum_b (n_b / N) |acc_b - conf_b|` over
/// occupied bins.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    if bins.total == 0 {
        return Err(Error::invalid("ECE of an empty set"));
    }
    let n = bins.total as f64;
    Ok(bins
        .bins
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum())
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks for
/// ties: the probability a random positive outscores a random negative,
/// ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: ReliabilityBins,
    pub ece: f64,
    pub auroc: f64,
}

/// ECE and AUROC of predictive-mean probabilities.
pub fn calibration_report(probs: &[f64], labels: &[u8], n_bins: usize) -> Result<CalibrationReport> {
    let (conf, correct) = confidence_and_correctness(probs, labels);
    let bins = reliability_bins(&conf, &correct, n_bins)?;
    Ok(CalibrationReport {
        ece: ece(&bins)?,
        auroc: auroc(probs, labels)?,
        bins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct MatchCounts {
    true_pos: usize,
    relevant: usize,
    true_neg: usize,
    irrelevant: usize,
}

fn match_counts(contribution: &[Vec<f64>], relevance: &[bool], threshold: f64) -> Result<MatchCounts> {
    let cells: Vec<f64> = contribution.iter().flatten().copied().collect();
    if cells.len() != relevance.len() {
        return Err(Error::invalid(format!(
            "{} contribution cells but {} relevance flags",
            cells.len(),
            relevance.len()
        )));
    }
    let mut c = MatchCounts::default();
    for (v, &rel) in cells.iter().zip(relevance) {
        let selected = v.abs() >= threshold;
        if rel {
            c.relevant += 1;
            c.true_pos += usize::from(selected);
        } else {
            c.irrelevant += 1;
            c.true_neg += usize::from(!selected);
        }
    }
    Ok(c)
}

/// Sensitivity and specificity of the cells selected by
/// `|contribution| >= threshold` against a ground-truth relevance mask.
pub fn attention_match(contribution: &[Vec<f64>], relevance: &[bool], threshold: f64) -> Result<MatchScore> {
    let c = match_counts(contribution, relevance, threshold)?;
    if c.relevant == 0 || c.irrelevant == 0 {
        return Err(Error::invalid("attention match needs both relevant and irrelevant cells"));
    }
    Ok(MatchScore {
        sensitivity: c.true_pos as f64 / c.relevant as f64,
        specificity: c.true_neg as f64 / c.irrelevant as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    /// Mean of per-record scores.
    pub macro_avg: MatchScore,
    /// Scores of the pooled cell counts.
    pub micro_avg: MatchScore,
    pub n_records: usize,
}

/// Macro- and micro-averaged attention match over many records.
pub fn attention_match_summary(
    items: &[(&[Vec<f64>], &[bool])],
    threshold: f64,
) -> Result<MatchSummary> {
    let mut pooled = MatchCounts::default();
    let (mut sens, mut spec, mut n) = (0.0, 0.0, 0usize);
    for (contribution, relevance) in items {
        let c = match_counts(contribution, relevance, threshold)?;
        pooled.true_pos += c.true_pos;
        pooled.relevant += c.relevant;
        pooled.true_neg += c.true_neg;
        pooled.irrelevant += c.irrelevant;
        if c.relevant > 0 && c.irrelevant > 0 {
            sens += c.true_pos as f64 / c.relevant as f64;
            spec += c.true_neg as f64 / c.irrelevant as f64;
            n += 1;
        }
    }
    if n == 0 || pooled.relevant == 0 || pooled.irrelevant == 0 {
        return Err(Error::invalid("attention match needs both relevant and irrelevant cells"));
    }
    Ok(MatchSummary {
        macro_avg: MatchScore {
            sensitivity: sens / n as f64,
            specificity: spec / n as f64,
        },
        micro_avg: MatchScore {
            sensitivity: pooled.true_pos as f64 / pooled.relevant as f64,
            specificity: pooled.true_neg as f64 / pooled.irrelevant as f64,
        },
        n_records: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_bin() {
        let b = reliability_bins(&[1.0, 1.0, 1.0], &[true; 3], 10).unwrap();
        let occupied: Vec<&Bin> = b.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].accuracy, 1.0);
        assert_eq!(occupied[0].hi, 1.0);
        assert_eq!(ece(&b).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_all_bins_empty() {
        let b = reliability_bins(&[], &[], 10).unwrap();
        assert_eq!(b.total, 0);
        assert!(b.bins.iter().all(|b| b.count == 0));
        assert!(ece(&b).is_err());
        assert!(reliability_bins(&[], &[], 0).is_err());
    }

    #[test]
    fn hand_two_bin_case() {
        let conf = [0.6, 0.6, 0.9, 0.9];
        let correct = [true, true, true, false];
        let b = reliability_bins_in(&conf, &correct, 2, 0.5, 1.0).unwrap();
        assert_eq!(b.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(b.bins[0].hi, 0.75);
        assert!((ece(&b).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_bin_ece_is_gap() {
        let conf = [0.7, 0.8, 0.75];
        let correct = [true, false, false];
        let b = reliability_bins(&conf, &correct, 1).unwrap();
        let gap = (1.0 / 3.0 - (0.7 + 0.8 + 0.75) / 3.0f64).abs();
        assert_eq!(ece(&b).unwrap(), gap);
    }

    #[test]
    fn mean_confidence_inside_bin() {
        let mut g = crate::rng::stream(2);
        let conf: Vec<f64> = (0..500).map(|_| g.random::<f64>()).collect();
        let correct: Vec<bool> = (0..500).map(|_| g.random()).collect();
        let b = reliability_bins(&conf, &correct, 7).unwrap();
        assert_eq!(b.bins.iter().map(|b| b.count).sum::<usize>(), 500);
        for bin in b.bins.iter().filter(|b| b.count > 0) {
            assert!(bin.mean_confidence >= bin.lo && bin.mean_confidence <= bin.hi);
            assert!((0.0..=1.0).contains(&bin.accuracy));
        }
    }

    #[test]
    fn calibrated_predictor_has_small_ece() {
        let mut g = crate::rng::stream(77);
        let n = 100_000;
        let probs: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
        let labels: Vec<u8> = probs.iter().map(|&p| u8::from(g.random::<f64>() < p)).collect();
        let r = calibration_report(&probs, &labels, 10).unwrap();
        assert!(r.ece < 0.01, "ece = {}", r.ece);
    }

    #[test]
    fn auroc_simple_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auroc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn auroc_matches_pair_counting() {
        let mut g = crate::rng::stream(5);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..200).map(|_| (g.random::<f64>() * 20.0).floor() / 20.0).collect();
            let mut labels: Vec<u8> = (0..200).map(|_| u8::from(g.random::<bool>())).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = auroc(&scores, &labels).unwrap();
            assert!((a - brute_auroc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_match_cases() {
        let rel = [true, false, false];
        // cells a, b, c
        let s = attention_match(&[vec![0.5, 0.02, 0.0]], &rel, 0.01).unwrap();
        assert_eq!((s.sensitivity, s.specificity), (1.0, 0.5));
        let s = attention_match(&[vec![0.5, 0.0, 0.0]], &rel, 0.01).unwrap();
        assert_eq!((s.sensitivity, s.specificity), (1.0, 1.0));
        let s = attention_match(&[vec![0.0, -0.3, 0.2]], &rel, 0.01).unwrap();
        assert_eq!((s.sensitivity, s.specificity), (0.0, 0.0));
        assert!(attention_match(&[vec![1.0, 1.0]], &[true, true], 0.01).is_err());
    }

    #[test]
    fn match_summary_averages() {
        let c1 = vec![vec![1.0, 0.0]];
        let c2 = vec![vec![0.0, 0.0, 1.0, 1.0]];
        let r1 = [true, false];
        let r2 = [true, true, false, true];
        let s = attention_match_summary(&[(&c1, &r1), (&c2, &r2)], 0.01).unwrap();
        assert!((s.macro_avg.sensitivity - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((s.micro_avg.sensitivity - 2.0 / 4.0).abs() < 1e-15);
        assert!((s.macro_avg.specificity - 0.5).abs() < 1e-15);
        assert!((s.micro_avg.specificity - 1.0 / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn ece_permutation_invariant(
            pts in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 1..200),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let probs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let labels: Vec<u8> = pts.iter().map(|p| p.1).collect();
            let (c, k) = confidence_and_correctness(&probs, &labels);
            let e1 = ece(&reliability_bins(&c, &k, 10).unwrap()).unwrap();
            let mut idx: Vec<usize> = (0..c.len()).collect();
            idx.shuffle(&mut crate::rng::stream(seed));
            let c2: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            let k2: Vec<bool> = idx.iter().map(|&i| k[i]).collect();
            let e2 = ece(&reliability_bins(&c2, &k2, 10).unwrap()).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&e1));
        }

        #[test]
        fn auroc_monotone_invariant_and_complement(
            pts in prop::collection::vec((-5.0f64..5.0, 0u8..=1), 2..150),
        ) {
            let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let mut labels: Vec<u8> = pts.iter().map(|p| p.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = auroc(&scores, &labels).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((a - auroc(&transformed, &labels).unwrap()).abs() < 1e-12);
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == scores.len() {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((a + auroc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}

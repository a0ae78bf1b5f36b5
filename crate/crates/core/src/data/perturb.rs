//! Dataset corruptions for robustness experiments.
//!
//! Randomness is keyed by record id (and cell position), never by record
//! order, so both perturbations commute with reordering the dataset.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

use super::record::Dataset;

/// A `(record id, timestep, feature)` cell.
pub type Cell = (String, usize, usize);

/// Adds `N(0, sd^2)` noise to every observed cell. Returns the perturbed
/// cells alongside the new dataset.
pub fn corrupt_gaussian(dataset: &Dataset, sd: f64, seed: u64) -> Result<(Dataset, Vec<Cell>)> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::config(format!("noise sd must be finite and >= 0, got {sd}")));
    }
    let mut out = dataset.clone();
    let mut touched = Vec::new();
    if sd == 0.0 {
        return Ok((out, touched));
    }
    for r in &mut out.records {
        let mut g = rng::derived_stream(seed, &[0xc0a2, rng::hash_str(&r.id)]);
        let f_len = r.n_features();
        let (values, mask) = (r.x.values_mut(), &r.mask);
        for (c, v) in values.iter_mut().enumerate() {
            if mask[c] {
                let z: f64 = g.sample(StandardNormal);
                *v += sd * z;
                touched.push((r.id.clone(), c / f_len, c % f_len));
            }
        }
    }
    Ok((out, touched))
}

/// Masks additional observed cells, chosen uniformly at random, until the
/// global missing rate is within `1 / total_cells` of `target_rate`.
pub fn inflate_missing(dataset: &Dataset, target_rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&target_rate) {
        return Err(Error::config(format!("target missing rate must be in [0, 1], got {target_rate}")));
    }
    let total = dataset.total_cells();
    let current = dataset.missing_cells();
    let want = (target_rate * total as f64).round() as usize;
    if total > 0 && target_rate + 1.0 / (total as f64) < (current as f64) / (total as f64) {
        return Err(Error::config(format!(
            "target missing rate {target_rate} is below the current rate {}",
            current as f64 / total as f64
        )));
    }
    let mut out = dataset.clone();
    if want <= current {
        return Ok(out);
    }

    let mut candidates: Vec<(u64, &str, usize)> = Vec::new();
    for r in &dataset.records {
        let id_hash = rng::hash_str(&r.id);
        for (c, _) in r.mask.iter().enumerate().filter(|(_, &m)| m) {
            candidates.push((rng::derive(seed, &[0x1f1a7e, id_hash, c as u64]), &r.id, c));
        }
    }
    candidates.sort_unstable();
    let chosen: std::collections::HashSet<(&str, usize)> = candidates
        .into_iter()
        .take(want - current)
        .map(|(_, id, c)| (id, c))
        .collect();

    for r in &mut out.records {
        for c in 0..r.mask.len() {
            if chosen.contains(&(r.id.as_str(), c)) {
                r.mask[c] = false;
                r.x.values_mut()[c] = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{gen_synthetic, SynthConfig};

    fn data(n: usize, missing: f64) -> Dataset {
        gen_synthetic(&SynthConfig {
            n_records: n,
            base_missing_rate: missing,
            seed: 21,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_sd_is_identity() {
        let d = data(20, 0.2);
        let (out, cells) = corrupt_gaussian(&d, 0.0, 1).unwrap();
        assert_eq!(out, d);
        assert!(cells.is_empty());
    }

    #[test]
    fn corruption_keeps_masks_and_labels() {
        let d = data(20, 0.3);
        let (out, cells) = corrupt_gaussian(&d, 0.5, 1).unwrap();
        let observed = d.total_cells() - d.missing_cells();
        assert_eq!(cells.len(), observed);
        for (a, b) in d.records.iter().zip(&out.records) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.label, b.label);
            for (c, m) in a.mask.iter().enumerate() {
                if !m {
                    assert_eq!(b.x.values()[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn corruption_noise_has_requested_sd() {
        let d = data(1300, 0.0); // 104k cells
        let sd = 0.7;
        let (out, _) = corrupt_gaussian(&d, sd, 9).unwrap();
        let diffs: Vec<f64> = d
            .records
            .iter()
            .zip(&out.records)
            .flat_map(|(a, b)| a.x.values().iter().zip(b.x.values()).map(|(x, y)| y - x).collect::<Vec<_>>())
            .collect();
        let n = diffs.len() as f64;
        assert!(n >= 1e5);
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // se of the sample sd is about sd / sqrt(2n)
        let se = sd / (2.0 * n).sqrt();
        assert!((var.sqrt() - sd).abs() < 4.0 * se, "sd = {}", var.sqrt());
    }

    #[test]
    fn inflate_to_current_rate_is_identity() {
        let d = data(30, 0.25);
        let out = inflate_missing(&d, d.missing_rate(), 3).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn inflate_from_092_to_097() {
        let d = data(200, 0.92);
        let total = d.total_cells() as f64;
        let out = inflate_missing(&d, 0.97, 5).unwrap();
        assert!((out.missing_rate() - 0.97).abs() <= 1.0 / total);
        for (a, b) in d.records.iter().zip(&out.records) {
            for (ma, mb) in a.mask.iter().zip(&b.mask) {
                assert!(*ma || !*mb, "missing cell was unmasked");
            }
        }
    }

    #[test]
    fn inflate_below_current_rejected() {
        let d = data(30, 0.5);
        assert!(inflate_missing(&d, 0.1, 3).is_err());
    }

    #[test]
    fn perturbations_commute_with_reordering() {
        let d = data(25, 0.3);
        let mut rev = d.clone();
        rev.records.reverse();

        let (a, _) = corrupt_gaussian(&d, 0.4, 17).unwrap();
        let (mut b, _) = corrupt_gaussian(&rev, 0.4, 17).unwrap();
        b.records.reverse();
        assert_eq!(a, b);

        let a = inflate_missing(&d, 0.6, 17).unwrap();
        let mut b = inflate_missing(&rev, 0.6, 17).unwrap();
        b.records.reverse();
        assert_eq!(a, b);
    }
}

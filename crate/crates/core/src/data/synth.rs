//! Synthetic multivariate time series with planted relevant cells.
//!
//! Every feature follows a stationary unit-variance AR(1) process. The label
//! is Bernoulli with probability `sgm(s + b)` where `s` is a fixed weighted
//! sum of the latent values of a few relevant features inside a fixed window
//! of timesteps, and `b` is solved so the expected positive rate hits the
//! configured target. The cells entering `s` form the relevance mask.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{sigmoid, Tensor};
use crate::rng;

use super::record::{Dataset, Record};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_records: usize,
    pub timesteps: usize,
    pub n_features: usize,
    pub n_relevant_features: usize,
    /// Magnitude of each relevant feature's label weight.
    pub signal_strength: f64,
    pub feature_noise_sd: f64,
    pub base_missing_rate: f64,
    pub positive_rate_target: f64,
    /// Length of the designated label window; `0` picks `max(1, T / 5)`.
    pub window: usize,
    /// Lag-one autocorrelation of the latent trajectories.
    pub ar_coefficient: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_records: 2000,
            timesteps: 10,
            n_features: 8,
            n_relevant_features: 2,
            signal_strength: 2.0,
            feature_noise_sd: 0.1,
            base_missing_rate: 0.0,
            positive_rate_target: 0.4,
            window: 0,
            ar_coefficient: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.timesteps == 0 || self.n_features == 0 {
            return bad("timesteps and n_features must be positive".into());
        }
        if self.n_relevant_features == 0 || self.n_relevant_features > self.n_features {
            return bad(format!(
                "n_relevant_features must be in 1..={}, got {}",
                self.n_features, self.n_relevant_features
            ));
        }
        if self.window_len() > self.timesteps {
            return bad(format!("window {} exceeds timesteps {}", self.window, self.timesteps));
        }
        if !(0.0..1.0).contains(&self.base_missing_rate) {
            return bad(format!("base_missing_rate must be in [0, 1), got {}", self.base_missing_rate));
        }
        if !(self.positive_rate_target > 0.0 && self.positive_rate_target < 1.0) {
            return bad(format!(
                "positive_rate_target must be strictly between 0 and 1, got {}",
                self.positive_rate_target
            ));
        }
        if !(self.feature_noise_sd >= 0.0) || !self.signal_strength.is_finite() {
            return bad("feature_noise_sd must be >= 0 and signal_strength finite".into());
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            return bad(format!("ar_coefficient must be in (-1, 1), got {}", self.ar_coefficient));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        if self.window == 0 {
            (self.timesteps / 5).max(1)
        } else {
            self.window
        }
    }
}

/// Dataset-level structure shared by all records of one generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Planted {
    pub relevant_features: Vec<usize>,
    pub weights: Vec<f64>,
    pub window_start: usize,
    pub window_len: usize,
    pub intercept: f64,
}

impl Planted {
    pub fn derive(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derived_stream(config.seed, &[0x9_1a17]);
        let mut relevant_features =
            sample(&mut rng, config.n_features, config.n_relevant_features).into_vec();
        relevant_features.sort_unstable();
        let weights = relevant_features
            .iter()
            .map(|_| {
                if rng.random::<bool>() {
                    config.signal_strength
                } else {
                    -config.signal_strength
                }
            })
            .collect::<Vec<_>>();
        let window_len = config.window_len();
        let window_start = rng.random_range(0..=config.timesteps - window_len);
        let sd = score_sd(&weights, window_len, config.ar_coefficient);
        let intercept = solve_intercept(sd, config.positive_rate_target)?;
        Ok(Planted {
            relevant_features,
            weights,
            window_start,
            window_len,
            intercept,
        })
    }

    pub fn in_window(&self, t: usize) -> bool {
        t >= self.window_start && t < self.window_start + self.window_len
    }
}

/// Standard deviation of the planted score under the stationary AR(1) law:
/// `Var(s) = sum_f w_f^2 * sum_{t,t'} phi^|t - t'|`.
pub fn score_sd(weights: &[f64], window_len: usize, phi: f64) -> f64 {
    let mut cov = 0.0;
    for a in 0..window_len {
        for b in 0..window_len {
            cov += phi.powi((a as i32 - b as i32).abs());
        }
    }
    (weights.iter().map(|w| w * w).sum::<f64>() * cov).sqrt()
}

/// `E[sgm(sd * Z + b)]` for standard normal `Z`, by the trapezoid rule on
/// `[-10, 10]`.
pub fn expected_positive_rate(sd: f64, intercept: f64) -> f64 {
    const N: usize = 4000;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / N as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=N {
        let z = lo + i as f64 * h;
        let w = if i == 0 || i == N { 0.5 } else { 1.0 };
        acc += w * sigmoid(sd * z + intercept) * (-0.5 * z * z).exp() / norm;
    }
    acc * h
}

/// Intercept giving the target expected positive rate, by bisection.
pub fn solve_intercept(sd: f64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::config(format!(
            "positive rate target {target} is infeasible"
        )));
    }
    let (mut lo, mut hi) = (-60.0 - 12.0 * sd, 60.0 + 12.0 * sd);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_positive_rate(sd, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<Dataset> {
    let planted = Planted::derive(config)?;
    let (t_len, f_len) = (config.timesteps, config.n_features);
    let phi = config.ar_coefficient;
    let innovation = (1.0 - phi * phi).sqrt();

    let records = (0..config.n_records)
        .map(|i| {
            let mut rng = rng::derived_stream(config.seed, &[0x7ec0, i as u64]);
            let mut latent = vec![0.0; t_len * f_len];
            for f in 0..f_len {
                let mut prev: f64 = rng.sample(StandardNormal);
                latent[f] = prev;
                for t in 1..t_len {
                    let eta: f64 = rng.sample(StandardNormal);
                    prev = phi * prev + innovation * eta;
                    latent[t * f_len + f] = prev;
                }
            }

            let mut relevance = vec![false; t_len * f_len];
            let mut score = planted.intercept;
            for t in (0..t_len).filter(|&t| planted.in_window(t)) {
                for (&f, &w) in planted.relevant_features.iter().zip(&planted.weights) {
                    score += w * latent[t * f_len + f];
                    relevance[t * f_len + f] = true;
                }
            }
            let label = u8::from(rng.random::<f64>() < sigmoid(score));

            let mut x = vec![0.0; t_len * f_len];
            let mut mask = vec![true; t_len * f_len];
            for c in 0..t_len * f_len {
                let noise: f64 = rng.sample(StandardNormal);
                let missing = rng.random::<f64>() < config.base_missing_rate;
                if missing {
                    mask[c] = false;
                } else {
                    x[c] = latent[c] + config.feature_noise_sd * noise;
                }
            }
            Ok(Record {
                id: format!("r{i:05}"),
                x: Tensor::matrix(t_len, f_len, x)?,
                mask,
                label,
                relevance: Some(relevance),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        n_features: f_len,
        feature_names: None,
        records,
    })
}

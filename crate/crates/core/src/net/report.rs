use serde::{Deserialize, Serialize};

use crate::grad::Tensor;

use super::params::ModelParams;

/// Attention statistics and per-cell contributions for one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub mu_e: Vec<f64>,
    pub sd_e: Vec<f64>,
    pub mu_d: Vec<Vec<f64>>,
    pub sd_d: Vec<Vec<f64>>,
    /// Sampled timestep attention (softmax output).
    pub alpha: Vec<f64>,
    /// Sampled feature attention (tanh output), one r-vector per timestep.
    pub beta: Vec<Vec<f64>>,
    /// `T x F` contribution of each input cell to the logit.
    pub contribution: Vec<Vec<f64>>,
    pub logit: f64,
    pub base_logit: f64,
    pub b_out: f64,
    pub prob: f64,
}

/// Contribution of input cell `(j, k)` to the logit:
/// `alpha_j * w_out . (beta_j * W_emb[:, k]) * x[j, k]`.
pub fn contribution(
    alpha: &[f64],
    beta: &[Vec<f64>],
    params: &ModelParams,
    x: &Tensor,
) -> Vec<Vec<f64>> {
    let w_emb = params.get("w_emb");
    let w_out = params.get("w_out").values();
    let (r, f) = (w_emb.shape()[0], w_emb.shape()[1]);
    let emb = w_emb.values();
    alpha
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(j, (&a, bj))| {
            let xj = x.row(j);
            (0..f)
                .map(|k| {
                    let proj: f64 = (0..r).map(|i| w_out[i] * bj[i] * emb[i * f + k]).sum();
                    a * proj * xj[k]
                })
                .collect()
        })
        .collect()
}

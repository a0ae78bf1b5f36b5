//! RETAIN two-level attention network with deterministic and Gaussian
//! attention heads.
//!
//! Two GRUs read the embedded sequence backwards in time. One produces the
//! timestep logits `e` (squashed by softmax into `alpha`), the other the
//! feature logits `d` (squashed by tanh into `beta`). In the stochastic
//! variants the logits are Gaussian with a learned log-variance and are
//! sampled with the reparameterization trick before squashing.

mod forward;
mod params;
mod report;

pub use forward::{
    attention_params, context_vector, embed, forward, gru_cell, predict, rnn_forward,
    sample_logits, squash, AttentionParams, BoundParams, ContributionSpread, Draws, ForwardPass,
    GruVars, Prediction,
};
pub(crate) use forward::{forward_on_tape, mean_std};
pub use params::{
    gru_key, is_decayed, is_dropped_out, Dims, ModelParams, Variant, GRU_ALPHA, GRU_BETA,
    GRU_BIASES, GRU_WEIGHTS, LOGVAR_INIT, LOGVAR_MAX, LOGVAR_MIN,
};
pub use report::{contribution, AttentionReport};

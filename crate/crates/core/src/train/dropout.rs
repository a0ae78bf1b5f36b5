use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::net::{is_dropped_out, ModelParams};
use crate::rng::Rng;

/// Inverted-dropout masks for every recurrent weight matrix: each entry is
/// `0` with probability `rate`, otherwise `1 / (1 - rate)`. Returns an empty
/// map for `rate == 0`.
pub fn dropout_masks(
    params: &ModelParams,
    rate: f64,
    rng: &mut Rng,
) -> Result<BTreeMap<String, Vec<f64>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(BTreeMap::new());
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(params
        .iter()
        .filter(|(name, _)| is_dropped_out(name))
        .map(|(name, t)| {
            let mask = (0..t.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            (name.to_string(), mask)
        })
        .collect())
}

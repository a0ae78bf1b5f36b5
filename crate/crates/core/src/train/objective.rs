use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::Record;
use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::net::{forward_on_tape, is_decayed, BoundParams, Draws, ModelParams};
use crate::rng;

/// Parameter gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// A batch objective recorded on a single tape.
pub struct BatchLoss {
    pub tape: Tape,
    pub bound: BoundParams,
    pub loss: Var,
}

impl BatchLoss {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }
}

/// One draw set per record, each from a stream keyed by the record id.
pub fn sample_batch_draws(
    batch: &[&Record],
    params: &ModelParams,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<Draws>> {
    batch
        .iter()
        .map(|r| {
            let mut g = rng::derived_stream(seed, &[rng::hash_str(&r.id)]);
            Draws::sample(params, r.timesteps(), dropout_rate, &mut g)
        })
        .collect()
}

/// `lambda * sum ||W||^2` over the decayed weight matrices.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    lambda
        * params
            .iter()
            .filter(|(n, _)| is_decayed(n))
            .map(|(_, t)| t.values().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
}

pub(super) fn record_nll(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &ModelParams,
    record: &Record,
    draws: &Draws,
) -> Result<Var> {
    let (pred, ..) = forward_on_tape(tape, bound, params, &record.x, draws)?;
    let p = tape.clamp(pred.prob, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let target = if record.label == 1 {
        p
    } else {
        let neg = tape.scale(p, -1.0)?;
        let one = tape.constant(Tensor::scalar(1.0));
        tape.add(one, neg)?
    };
    let ll = tape.log(target)?;
    tape.scale(ll, -1.0)
}

fn check_batch(batch: &[&Record], draws: &[Draws]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.len() != draws.len() {
        return Err(Error::invalid(format!(
            "{} records but {} draw sets",
            batch.len(),
            draws.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over the batch plus l2 decay, recorded on one
/// tape so it can be differentiated (or gradient-checked) as a whole.
pub fn loss(batch: &[&Record], params: &ModelParams, draws: &[Draws], l2_lambda: f64) -> Result<BatchLoss> {
    check_batch(batch, draws)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let terms = batch
        .iter()
        .zip(draws)
        .map(|(r, d)| record_nll(&mut tape, &bound, params, r, d))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&terms)?;
    let nll = tape.mean(stacked)?;

    let norms = bound
        .iter()
        .filter(|(n, _)| is_decayed(n))
        .map(|(_, v)| v)
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| tape.squared_norm(v))
        .collect::<Result<Vec<_>>>()?;
    let loss = if norms.is_empty() || l2_lambda == 0.0 {
        nll
    } else {
        let all = tape.concat(&norms)?;
        let total = tape.sum(all)?;
        let decay = tape.scale(total, l2_lambda)?;
        tape.add(nll, decay)?
    };
    Ok(BatchLoss { tape, bound, loss })
}

/// Value and gradient of [`loss`], computed with one tape per record in
/// parallel and reduced in batch order. The l2 term is added analytically.
pub fn loss_and_grads(
    batch: &[&Record],
    params: &ModelParams,
    draws: &[Draws],
    l2_lambda: f64,
) -> Result<(f64, Gradients)> {
    check_batch(batch, draws)?;
    let scale = 1.0 / batch.len() as f64;
    let per_record = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(r, d)| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, params);
            let nll = record_nll(&mut tape, &bound, params, r, d)?;
            let value = tape.scalar(nll);
            tape.backward(nll)?;
            Ok((value, bound.grads(&tape)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grads: Gradients = params
        .iter()
        .map(|(n, t)| (n.to_string(), vec![0.0; t.len()]))
        .collect();
    let mut nll_sum = 0.0;
    for (value, g) in per_record {
        nll_sum += value;
        for (name, acc) in grads.iter_mut() {
            for (a, b) in acc.iter_mut().zip(&g[name]) {
                *a += b;
            }
        }
    }
    for acc in grads.values_mut() {
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    if l2_lambda != 0.0 {
        for (name, t) in params.iter().filter(|(n, _)| is_decayed(n)) {
            let acc = grads.get_mut(name).expect("gradient slot");
            for (a, w) in acc.iter_mut().zip(t.values()) {
                *a += 2.0 * l2_lambda * w;
            }
        }
    }
    Ok((nll_sum * scale + l2_penalty(params, l2_lambda), grads))
}

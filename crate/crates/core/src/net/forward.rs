use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::rng::Rng;
use crate::train::dropout_masks;

use super::params::{
    gru_key, ModelParams, Variant, GRU_ALPHA, GRU_BETA, LOGVAR_MAX, LOGVAR_MIN,
};
use super::report::{contribution, AttentionReport};

/// Random inputs of one forward pass. They enter the tape as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Draws {
    /// Inverted-dropout masks keyed by parameter name; absent means no dropout.
    pub masks: BTreeMap<String, Vec<f64>>,
    /// One standard-normal draw per timestep for the timestep logits.
    pub eps_e: Vec<f64>,
    /// `T x r` standard-normal draws for the feature logits, row-major.
    pub eps_d: Vec<f64>,
    /// Draw for the output noise (UA+ only).
    pub eps_out: f64,
}

impl Draws {
    /// No dropout and zero noise: the mean-path forward pass.
    pub fn zeros(timesteps: usize, embed: usize) -> Self {
        Draws {
            masks: BTreeMap::new(),
            eps_e: vec![0.0; timesteps],
            eps_d: vec![0.0; timesteps * embed],
            eps_out: 0.0,
        }
    }

    /// Fresh dropout masks and Gaussian draws for one pass over `timesteps`.
    pub fn sample(
        params: &ModelParams,
        timesteps: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let masks = dropout_masks(params, dropout_rate, rng)?;
        let r = params.dims().embed;
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let eps_e = (0..timesteps).map(|_| normal()).collect();
        let eps_d = (0..timesteps * r).map(|_| normal()).collect();
        let eps_out = normal();
        Ok(Draws {
            masks,
            eps_e,
            eps_d,
            eps_out,
        })
    }
}

/// Parameters recorded on a tape as leaves.
#[derive(Clone, Debug)]
pub struct BoundParams {
    leaves: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let leaves = params
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone())))
            .collect();
        BoundParams { leaves }
    }

    /// Wraps existing tape variables, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            leaves: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        self.leaves[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.leaves.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients of every parameter after `tape.backward`, keyed by name.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.leaves
            .iter()
            .map(|(k, &v)| (k.clone(), tape.grad(v).expect("backward was run").to_vec()))
            .collect()
    }
}

/// Tape handles of one GRU's (possibly dropout-masked) weights.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    /// Looks up a GRU's weights, multiplying each masked matrix by its
    /// dropout mask once so the mask is shared by every timestep.
    pub fn masked(
        tape: &mut Tape,
        bound: &BoundParams,
        gru: &str,
        masks: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let mut get = |part: &str| -> Result<Var> {
            let key = gru_key(gru, part);
            let w = bound.get(&key);
            match masks.get(&key) {
                Some(mask) => {
                    let shape = tape.value(w).shape().to_vec();
                    let m = tape.constant(Tensor::new(shape, mask.clone())?);
                    tape.mul(w, m)
                }
                None => Ok(w),
            }
        };
        Ok(GruVars {
            w_z: get("w_z")?,
            u_z: get("u_z")?,
            b_z: get("b_z")?,
            w_r: get("w_r")?,
            u_r: get("u_r")?,
            b_r: get("b_r")?,
            w_h: get("w_h")?,
            u_h: get("u_h")?,
            b_h: get("b_h")?,
        })
    }
}

/// One GRU cell update: `h' = h + z * (n - h)` with
/// `z = sgm(W_z v + U_z h + b_z)`, `r = sgm(W_r v + U_r h + b_r)`,
/// `n = tanh(W_h v + U_h (r * h) + b_h)`.
pub fn gru_cell(tape: &mut Tape, gru: &GruVars, v: Var, h: Var) -> Result<Var> {
    let affine = |tape: &mut Tape, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let a = tape.matvec(w, v)?;
        let c = tape.matvec(u, hin)?;
        let s = tape.add(a, c)?;
        tape.add(s, b)
    };
    let z_pre = affine(tape, gru.w_z, gru.u_z, gru.b_z, h)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = affine(tape, gru.w_r, gru.u_r, gru.b_r, h)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let n_pre = affine(tape, gru.w_h, gru.u_h, gru.b_h, rh)?;
    let n = tape.tanh(n_pre)?;
    let diff = tape.sub(n, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

/// `v_j = W_emb x_j` for every timestep of a `T x F` input.
pub fn embed(tape: &mut Tape, w_emb: Var, x: &Tensor) -> Result<Vec<Var>> {
    let f = tape.value(w_emb).shape()[1];
    if x.shape().len() != 2 || x.shape()[1] != f {
        return Err(Error::Shape {
            op: "embed",
            lhs: tape.value(w_emb).shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    (0..x.shape()[0])
        .map(|j| {
            let xj = tape.constant(Tensor::vector(x.row(j).to_vec()));
            tape.matvec(w_emb, xj)
        })
        .collect()
}

/// Runs the GRU over `v_T, ..., v_1` from a zero state. Position `j` of the
/// result is the state after consuming `v_j`.
pub fn rnn_forward(tape: &mut Tape, gru: &GruVars, v: &[Var]) -> Result<Vec<Var>> {
    if v.is_empty() {
        return Err(Error::invalid("sequence must have at least one timestep"));
    }
    let hidden = tape.value(gru.b_z).len();
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut states = vec![h; v.len()];
    for j in (0..v.len()).rev() {
        h = gru_cell(tape, gru, v[j], h)?;
        states[j] = h;
    }
    Ok(states)
}

/// Means and log-variances of the attention logits. `None` log-variance is
/// the deterministic sentinel (sd exactly zero).
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub mu_e: Vec<Var>,
    pub logvar_e: Option<Vec<Var>>,
    pub mu_d: Vec<Var>,
    pub logvar_d: Option<Vec<Var>>,
}

pub fn attention_params(
    tape: &mut Tape,
    g: &[Var],
    h: &[Var],
    bound: &BoundParams,
    variant: Variant,
) -> Result<AttentionParams> {
    let (w_alpha, b_alpha) = (bound.get("w_alpha"), bound.get("b_alpha"));
    let (w_beta, b_beta) = (bound.get("w_beta"), bound.get("b_beta"));

    let mut mu_e = Vec::with_capacity(g.len());
    let mut mu_d = Vec::with_capacity(h.len());
    for (&gj, &hj) in g.iter().zip(h) {
        let e = tape.dot(w_alpha, gj)?;
        mu_e.push(tape.add(e, b_alpha)?);
        let d = tape.matvec(w_beta, hj)?;
        mu_d.push(tape.add(d, b_beta)?);
    }

    let (logvar_e, logvar_d) = match variant {
        Variant::Da => (None, None),
        Variant::UaIndep => {
            let le = tape.clamp(bound.get("sigma_indep_e"), LOGVAR_MIN, LOGVAR_MAX)?;
            let ld = tape.clamp(bound.get("sigma_indep_d"), LOGVAR_MIN, LOGVAR_MAX)?;
            (Some(vec![le; g.len()]), Some(vec![ld; h.len()]))
        }
        Variant::Ua | Variant::UaPlus => {
            let (wv, bv) = (bound.get("w_alpha_var"), bound.get("b_alpha_var"));
            let (wdv, bdv) = (bound.get("w_beta_var"), bound.get("b_beta_var"));
            let mut le = Vec::with_capacity(g.len());
            let mut ld = Vec::with_capacity(h.len());
            for (&gj, &hj) in g.iter().zip(h) {
                let e = tape.dot(wv, gj)?;
                let e = tape.add(e, bv)?;
                le.push(tape.clamp(e, LOGVAR_MIN, LOGVAR_MAX)?);
                let d = tape.matvec(wdv, hj)?;
                let d = tape.add(d, bdv)?;
                ld.push(tape.clamp(d, LOGVAR_MIN, LOGVAR_MAX)?);
            }
            (Some(le), Some(ld))
        }
    };
    Ok(AttentionParams {
        mu_e,
        logvar_e,
        mu_d,
        logvar_d,
    })
}

/// Reparameterized sample `mu + exp(logvar / 2) * eps`.
pub fn sample_logits(tape: &mut Tape, mu: Var, logvar: Option<Var>, eps: &[f64]) -> Result<Var> {
    let Some(logvar) = logvar else {
        return Ok(mu);
    };
    let half = tape.scale(logvar, 0.5)?;
    let sd = tape.exp(half)?;
    let shape = tape.value(mu).shape().to_vec();
    let eps = tape.constant(Tensor::new(shape, eps.to_vec())?);
    let noise = tape.mul(sd, eps)?;
    tape.add(mu, noise)
}

/// Softmax across timesteps and elementwise tanh on the feature logits.
pub fn squash(tape: &mut Tape, z_e: &[Var], z_d: &[Var]) -> Result<(Var, Vec<Var>)> {
    let e = tape.concat(z_e)?;
    let alpha = tape.softmax(e)?;
    let beta = z_d.iter().map(|&d| tape.tanh(d)).collect::<Result<_>>()?;
    Ok((alpha, beta))
}

/// `c = sum_j alpha_j (beta_j * v_j)`.
pub fn context_vector(tape: &mut Tape, alpha: Var, beta: &[Var], v: &[Var]) -> Result<Var> {
    if beta.len() != v.len() || tape.value(alpha).len() != v.len() {
        return Err(Error::Shape {
            op: "context_vector",
            lhs: vec![tape.value(alpha).len(), beta.len()],
            rhs: vec![v.len()],
        });
    }
    let mut c: Option<Var> = None;
    for (j, (&bj, &vj)) in beta.iter().zip(v).enumerate() {
        let aj = tape.slice(alpha, j, 1)?;
        let bv = tape.mul(bj, vj)?;
        let term = tape.scale_by(aj, bv)?;
        c = Some(match c {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(c.expect("non-empty sequence"))
}

#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub prob: Var,
    pub logit: Var,
    /// `w_out . c + b_out` before any output noise.
    pub base_logit: Var,
}

/// Linear predictor on the context vector, with input-dependent output noise
/// for UA+.
pub fn predict(
    tape: &mut Tape,
    c: Var,
    bound: &BoundParams,
    variant: Variant,
    eps_out: f64,
) -> Result<Prediction> {
    let wc = tape.dot(bound.get("w_out"), c)?;
    let base_logit = tape.add(wc, bound.get("b_out"))?;
    let logit = if variant.has_output_noise() {
        let lv = tape.dot(bound.get("w_outvar"), c)?;
        let lv = tape.add(lv, bound.get("b_outvar"))?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)?;
        let noise = sample_logits(tape, base_logit, Some(lv), &[eps_out])?;
        noise
    } else {
        base_logit
    };
    let prob = tape.sigmoid(logit)?;
    Ok(Prediction {
        prob,
        logit,
        base_logit,
    })
}

/// A completed forward pass: the tape, the bound parameter leaves, and the
/// explanation of the prediction.
pub struct ForwardPass {
    pub tape: Tape,
    pub bound: BoundParams,
    pub prediction: Prediction,
    pub report: AttentionReport,
}

impl ForwardPass {
    pub fn prob(&self) -> f64 {
        self.tape.scalar(self.prediction.prob)
    }

    pub fn logit(&self) -> f64 {
        self.tape.scalar(self.prediction.logit)
    }
}

/// Records the whole network on `tape` for parameters already bound to it.
/// Returns the prediction plus the intermediate handles needed for a report.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &ModelParams,
    x: &Tensor,
    draws: &Draws,
) -> Result<(Prediction, AttentionParams, Var, Vec<Var>)> {
    let variant = params.variant();
    let t = x.shape().first().copied().unwrap_or(0);
    let r = params.dims().embed;
    if t == 0 {
        return Err(Error::invalid("record has no timesteps"));
    }
    if draws.eps_e.len() < t || draws.eps_d.len() < t * r {
        return Err(Error::invalid(format!(
            "draws cover {} timesteps, record has {t}",
            draws.eps_e.len()
        )));
    }

    let v = embed(tape, bound.get("w_emb"), x)?;
    let gru_a = GruVars::masked(tape, bound, GRU_ALPHA, &draws.masks)?;
    let gru_b = GruVars::masked(tape, bound, GRU_BETA, &draws.masks)?;
    let g = rnn_forward(tape, &gru_a, &v)?;
    let h = rnn_forward(tape, &gru_b, &v)?;
    let ap = attention_params(tape, &g, &h, bound, variant)?;

    let mut z_e = Vec::with_capacity(t);
    let mut z_d = Vec::with_capacity(t);
    for j in 0..t {
        let lv_e = ap.logvar_e.as_ref().map(|l| l[j]);
        z_e.push(sample_logits(tape, ap.mu_e[j], lv_e, &draws.eps_e[j..j + 1])?);
        let lv_d = ap.logvar_d.as_ref().map(|l| l[j]);
        z_d.push(sample_logits(tape, ap.mu_d[j], lv_d, &draws.eps_d[j * r..(j + 1) * r])?);
    }
    let (alpha, beta) = squash(tape, &z_e, &z_d)?;
    let c = context_vector(tape, alpha, &beta, &v)?;
    let prediction = predict(tape, c, bound, variant, draws.eps_out)?;
    Ok((prediction, ap, alpha, beta))
}

/// Full forward pass of one `T x F` input under fixed draws.
pub fn forward(params: &ModelParams, x: &Tensor, draws: &Draws) -> Result<ForwardPass> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let (prediction, ap, alpha, beta) = forward_on_tape(&mut tape, &bound, params, x, draws)?;
    let report = build_report(&tape, params, x, &prediction, &ap, alpha, &beta);
    Ok(ForwardPass {
        tape,
        bound,
        prediction,
        report,
    })
}

fn build_report(
    tape: &Tape,
    params: &ModelParams,
    x: &Tensor,
    prediction: &Prediction,
    ap: &AttentionParams,
    alpha: Var,
    beta: &[Var],
) -> AttentionReport {
    let sd_of = |lv: &Option<Vec<Var>>, j: usize, n: usize| -> Vec<f64> {
        match lv {
            Some(l) => tape.value(l[j]).values().iter().map(|v| (0.5 * v).exp()).collect(),
            None => vec![0.0; n],
        }
    };
    let t = ap.mu_e.len();
    let r = params.dims().embed;
    let alpha_v = tape.value(alpha).values().to_vec();
    let beta_v: Vec<Vec<f64>> = beta.iter().map(|&b| tape.value(b).values().to_vec()).collect();
    let contribution = contribution(&alpha_v, &beta_v, params, x);
    AttentionReport {
        mu_e: ap.mu_e.iter().map(|&m| tape.scalar(m)).collect(),
        sd_e: (0..t).map(|j| sd_of(&ap.logvar_e, j, 1)[0]).collect(),
        mu_d: ap.mu_d.iter().map(|&m| tape.value(m).values().to_vec()).collect(),
        sd_d: (0..t).map(|j| sd_of(&ap.logvar_d, j, r)).collect(),
        alpha: alpha_v,
        beta: beta_v,
        contribution,
        logit: tape.scalar(prediction.logit),
        base_logit: tape.scalar(prediction.base_logit),
        b_out: params.get("b_out").item(),
        prob: tape.scalar(prediction.prob),
    }
}

/// Mean and standard deviation (population) of a slice.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary of a contribution map across MC samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContributionSpread {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl ContributionSpread {
    pub fn from_samples(samples: &[Vec<Vec<f64>>]) -> Self {
        let t = samples[0].len();
        let f = samples[0].first().map_or(0, Vec::len);
        let mut mean = vec![vec![0.0; f]; t];
        let mut std = vec![vec![0.0; f]; t];
        let mut buf = Vec::with_capacity(samples.len());
        for j in 0..t {
            for k in 0..f {
                buf.clear();
                buf.extend(samples.iter().map(|s| s[j][k]));
                let (m, s) = mean_std(&buf);
                mean[j][k] = m;
                std[j][k] = s;
            }
        }
        ContributionSpread { mean, std }
    }
}

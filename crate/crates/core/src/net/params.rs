use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng;

/// Attention variant of a model. Fixed for the model's lifetime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Deterministic attention (plain RETAIN).
    Da,
    /// Gaussian attention logits with input-independent variance.
    UaIndep,
    /// Gaussian attention logits with input-dependent variance.
    Ua,
    /// `Ua` plus input-dependent noise on the output logit.
    UaPlus,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Da, Variant::UaIndep, Variant::Ua, Variant::UaPlus];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Da => "da",
            Variant::UaIndep => "ua-indep",
            Variant::Ua => "ua",
            Variant::UaPlus => "ua-plus",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != Variant::Da
    }

    pub fn has_variance_heads(self) -> bool {
        matches!(self, Variant::Ua | Variant::UaPlus)
    }

    pub fn has_output_noise(self) -> bool {
        self == Variant::UaPlus
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "da" => Ok(Variant::Da),
            "ua-indep" | "ua-independent" => Ok(Variant::UaIndep),
            "ua" => Ok(Variant::Ua),
            "ua-plus" | "ua+" => Ok(Variant::UaPlus),
            other => Err(Error::config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_features: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Dims {
    pub fn new(n_features: usize, embed: usize, hidden: usize) -> Self {
        Dims {
            n_features,
            embed,
            hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.embed == 0 || self.hidden == 0 {
            return Err(Error::config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Initial log-variance bias for the stochastic heads (sd = e^-2 ~ 0.135).
pub const LOGVAR_INIT: f64 = -4.0;
/// Log-variance heads are clamped to this interval.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

pub const GRU_ALPHA: &str = "rnn_alpha";
pub const GRU_BETA: &str = "rnn_beta";
/// Input-side and recurrent weight matrices of one GRU, per gate.
pub const GRU_WEIGHTS: [&str; 6] = ["w_z", "u_z", "w_r", "u_r", "w_h", "u_h"];
pub const GRU_BIASES: [&str; 3] = ["b_z", "b_r", "b_h"];

pub fn gru_key(gru: &str, part: &str) -> String {
    format!("{gru}.{part}")
}

enum Init {
    Xavier,
    Zeros,
    Const(f64),
}

/// All learnable weights of one model, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    variant: Variant,
    dims: Dims,
    tensors: BTreeMap<String, Tensor>,
}

fn layout(variant: Variant, dims: Dims) -> Vec<(String, Vec<usize>, Init)> {
    let Dims {
        n_features: f,
        embed: r,
        hidden: h,
    } = dims;
    let mut out = vec![("w_emb".to_string(), vec![r, f], Init::Xavier)];
    for gru in [GRU_ALPHA, GRU_BETA] {
        for gate in ["z", "r", "h"] {
            out.push((gru_key(gru, &format!("w_{gate}")), vec![h, r], Init::Xavier));
            out.push((gru_key(gru, &format!("u_{gate}")), vec![h, h], Init::Xavier));
            out.push((gru_key(gru, &format!("b_{gate}")), vec![h], Init::Zeros));
        }
    }
    out.push(("w_alpha".into(), vec![h], Init::Xavier));
    out.push(("b_alpha".into(), vec![1], Init::Zeros));
    out.push(("w_beta".into(), vec![r, h], Init::Xavier));
    out.push(("b_beta".into(), vec![r], Init::Zeros));
    out.push(("w_out".into(), vec![r], Init::Xavier));
    out.push(("b_out".into(), vec![1], Init::Zeros));
    match variant {
        Variant::Da => {}
        Variant::UaIndep => {
            out.push(("sigma_indep_e".into(), vec![1], Init::Const(LOGVAR_INIT)));
            out.push(("sigma_indep_d".into(), vec![r], Init::Const(LOGVAR_INIT)));
        }
        Variant::Ua | Variant::UaPlus => {
            out.push(("w_alpha_var".into(), vec![h], Init::Zeros));
            out.push(("b_alpha_var".into(), vec![1], Init::Const(LOGVAR_INIT)));
            out.push(("w_beta_var".into(), vec![r, h], Init::Zeros));
            out.push(("b_beta_var".into(), vec![r], Init::Const(LOGVAR_INIT)));
        }
    }
    if variant.has_output_noise() {
        out.push(("w_outvar".into(), vec![r], Init::Zeros));
        out.push(("b_outvar".into(), vec![1], Init::Const(LOGVAR_INIT)));
    }
    out
}

impl ModelParams {
    /// Glorot-uniform matrices, zero biases, near-deterministic variance heads.
    pub fn init(variant: Variant, dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::derived_stream(seed, &[0x1417]);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(variant, dims) {
            let n: usize = shape.iter().product();
            let values = match init {
                Init::Zeros => vec![0.0; n],
                Init::Const(c) => vec![c; n],
                Init::Xavier => {
                    let (fan_out, fan_in) = if shape.len() == 2 {
                        (shape[0], shape[1])
                    } else {
                        (1, shape[0])
                    };
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
            };
            tensors.insert(name, Tensor::new(shape, values)?);
        }
        Ok(ModelParams {
            variant,
            dims,
            tensors,
        })
    }

    /// Rebuilds a parameter set from named tensors, checking names and shapes
    /// against the variant's layout.
    pub fn from_tensors(
        variant: Variant,
        dims: Dims,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        dims.validate()?;
        let expected = layout(variant, dims);
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "variant {variant} expects {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing tensor `{name}`")))?;
            t.validate()?;
            if t.shape() != &shape[..] {
                return Err(Error::Shape {
                    op: "params",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(ModelParams {
            variant,
            dims,
            tensors,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}` for variant {}", self.variant))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
}

/// Weight matrices subject to l2 decay: embedding, recurrent weights, and
/// the mean attention and output projections. Biases and every
/// log-variance parameter are excluded.
pub fn is_decayed(name: &str) -> bool {
    if let Some((_, part)) = name.split_once('.') {
        return GRU_WEIGHTS.contains(&part);
    }
    matches!(name, "w_emb" | "w_alpha" | "w_beta" | "w_out")
}

/// Recurrent weight matrices that receive dropout masks.
pub fn is_dropped_out(name: &str) -> bool {
    name.split_once('.')
        .is_some_and(|(gru, part)| (gru == GRU_ALPHA || gru == GRU_BETA) && GRU_WEIGHTS.contains(&part))
}

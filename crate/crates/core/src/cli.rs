//! Command-line driver: data generation, training, sweeps, evaluation, IDK
//! analysis and attention reports.
//!
//! Every command is a pure function of its inputs, config and seed; outputs
//! are plain text (CSV, key/value, JSON) written under the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calib::{
    attention_match, attention_match_summary, calibration_report, MatchScore, MatchSummary,
    DEFAULT_ATTENTION_THRESHOLD, DEFAULT_BINS,
};
use crate::data::{
    gen_synthetic, load_csv, preprocess, split, write_csv, Dataset, Record, SplitSet, Standardizer,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::infer::{
    default_thresholds, idk_breakdown, idk_curve, predict_records, record_seed,
    PredictiveDistribution, DEFAULT_SAMPLES,
};
use crate::net::{forward, AttentionReport, ContributionSpread, Dims, Draws, ModelParams, Variant};
use crate::rng;
use crate::train::{train, EpochStats, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "UA_RETAIN_OUT";

pub const CHECKPOINT_VERSION: &str = "1";

pub const DATA_FILE: &str = "data.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const METRICS_JSON: &str = "metrics.json";
pub const RELIABILITY_FILE: &str = "reliability.csv";
pub const IDK_CURVE_FILE: &str = "idk_curve.csv";
pub const IDK_BREAKDOWN_FILE: &str = "idk_breakdown.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_BEST_FILE: &str = "sweep_best.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

impl SplitName {
    fn ids<'a>(self, s: &'a SplitSet, all: &'a [String]) -> &'a [String] {
        match self {
            SplitName::Train => &s.train,
            SplitName::Validation => &s.validation,
            SplitName::Test => &s.test,
            SplitName::All => all,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    /// Append the observation mask as extra input features.
    pub append_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed: 16,
            hidden: 16,
            append_mask: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Which split `eval` scores.
    pub split: SplitName,
    /// Descending IDK thresholds; absent means the attainable sweep.
    pub thresholds: Option<Vec<f64>>,
    pub attention_threshold: f64,
    /// Base seed of the inference streams.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: SplitName::Test,
            thresholds: None,
            attention_threshold: DEFAULT_ATTENTION_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub l2_lambda: Vec<f64>,
    pub dropout_rate: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            batch_size: vec![32, 64, 128, 256],
            learning_rate: vec![1e-2, 1e-3, 1e-4],
            l2_lambda: vec![0.02, 0.002, 0.0002, 0.0004],
            dropout_rate: vec![0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5],
        }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(usize, f64, f64, f64)> {
        let mut out = Vec::new();
        for &b in &self.batch_size {
            for &lr in &self.learning_rate {
                for &l2 in &self.l2_lambda {
                    for &q in &self.dropout_rate {
                        out.push((b, lr, l2, q));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

/// Everything a command needs, read from a TOML file and then overridden by
/// command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the synth, train and eval seeds.
    pub seed: Option<u64>,
    pub split_seed: u64,
    pub variant: Variant,
    pub samples: usize,
    pub n_bins: usize,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub sweep: SweepGrid,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            split_seed: 1,
            variant: Variant::Ua,
            samples: DEFAULT_SAMPLES,
            n_bins: DEFAULT_BINS,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepGrid::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::config("threshold list is empty"));
    }
    if t.iter().any(|x| x.is_nan() || *x < 0.0) {
        return Err(Error::config("thresholds must be non-negative numbers"));
    }
    if t.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::config("thresholds must be in descending order"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Pushes the shared seed into every section that owns one.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        Dims::new(1, self.model.embed, self.model.hidden).validate()?;
        if self.samples == 0 {
            return Err(Error::config("samples must be at least 1"));
        }
        if self.n_bins == 0 {
            return Err(Error::config("n_bins must be at least 1"));
        }
        if let Some(t) = &self.eval.thresholds {
            check_thresholds(t)?;
        }
        if !(self.eval.attention_threshold >= 0.0) {
            return Err(Error::config("attention_threshold must be >= 0"));
        }
        let g = &self.sweep;
        if g.batch_size.is_empty() || g.learning_rate.is_empty() || g.l2_lambda.is_empty() || g.dropout_rate.is_empty() {
            return Err(Error::config("every sweep axis needs at least one value"));
        }
        for (b, lr, l2, q) in g.cells() {
            TrainConfig {
                batch_size: b,
                learning_rate: lr,
                l2_lambda: l2,
                dropout_rate: q,
                ..self.train.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// file helpers

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub variant: Variant,
    pub dims: Dims,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub split_seed: u64,
    pub best_epoch: Option<usize>,
    pub standardizer: Standardizer,
    pub split: SplitSet,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::from_tensors(self.variant, self.dims, self.tensors.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version `{}`", ck.version)));
        }
        ck.params()?;
        Ok(ck)
    }
}

// ---------------------------------------------------------------------------
// commands

/// Generates the synthetic dataset and writes it with its sidecars.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let ds = gen_synthetic(&cfg.synth)?;
    let path = out.join(DATA_FILE);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(&ds, &path)?;
    Ok(path)
}

fn data_path(cfg: &RunConfig, flag: Option<&Path>, out: &Path) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.data.clone())
        .unwrap_or_else(|| out.join(DATA_FILE))
}

fn checkpoint_path(cfg: &RunConfig, flag: Option<&Path>, out: &Path) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

/// Splits, standardizes on the training split, and returns the processed
/// dataset alongside the split and fitted statistics.
pub fn prepare(ds: &Dataset, split_seed: u64, append_mask: bool) -> Result<(Dataset, SplitSet, Standardizer)> {
    let s = split(ds, split_seed)?;
    let (processed, st) = preprocess(ds, &s.train, append_mask)?;
    Ok((processed, s, st))
}

fn dims_for(st: &Standardizer, cfg: &RunConfig) -> Dims {
    Dims::new(st.n_features(), cfg.model.embed, cfg.model.hidden)
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,steps,train_loss,val_auroc\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{}", h.epoch, h.steps, h.train_loss, opt(h.val_auroc));
    }
    s
}

/// Trains on the training split and writes the checkpoint and history.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Checkpoint> {
    let ds = load_csv(data)?;
    let (processed, s, st) = prepare(&ds, cfg.split_seed, cfg.model.append_mask)?;
    let dims = dims_for(&st, cfg);
    let tr = processed.select(&s.train)?;
    let va = processed.select(&s.validation)?;
    let outcome = train(&tr, &va, cfg.variant, dims, &cfg.train)?;
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION.into(),
        variant: cfg.variant,
        dims,
        train: cfg.train.clone(),
        model: cfg.model.clone(),
        split_seed: cfg.split_seed,
        best_epoch: outcome.best_epoch,
        standardizer: st,
        split: s,
        tensors: outcome.params.tensors().clone(),
    };
    write_file(&out.join(CHECKPOINT_FILE), to_json(&ck)?)?;
    write_file(&out.join(HISTORY_FILE), history_csv(&outcome.history))?;
    Ok(ck)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub best_epoch: Option<usize>,
    pub val_auroc: Option<f64>,
}

/// Trains one model per grid cell and ranks cells by best validation AUROC.
/// Ties keep the earlier cell.
pub fn cmd_sweep(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(Vec<SweepRow>, Option<SweepRow>)> {
    let ds = load_csv(data)?;
    let (processed, s, st) = prepare(&ds, cfg.split_seed, cfg.model.append_mask)?;
    let dims = dims_for(&st, cfg);
    let tr = processed.select(&s.train)?;
    let va = processed.select(&s.validation)?;
    let mut rows = Vec::new();
    for (batch_size, learning_rate, l2_lambda, dropout_rate) in cfg.sweep.cells() {
        let tc = TrainConfig {
            batch_size,
            learning_rate,
            l2_lambda,
            dropout_rate,
            ..cfg.train.clone()
        };
        let o = train(&tr, &va, cfg.variant, dims, &tc)?;
        let val_auroc = o
            .best_epoch
            .and_then(|e| o.history.iter().find(|h| h.epoch == e))
            .and_then(|h| h.val_auroc);
        rows.push(SweepRow {
            batch_size,
            learning_rate,
            l2_lambda,
            dropout_rate,
            best_epoch: o.best_epoch,
            val_auroc,
        });
    }
    let best = rows
        .iter()
        .filter(|r| r.val_auroc.is_some())
        .fold(None::<&SweepRow>, |b, r| match b {
            Some(b) if b.val_auroc >= r.val_auroc => Some(b),
            _ => Some(r),
        })
        .cloned();

    let mut csv = String::from("batch_size,learning_rate,l2_lambda,dropout_rate,best_epoch,val_auroc\n");
    for r in &rows {
        let epoch = r.best_epoch.map_or_else(String::new, |e| e.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.batch_size, r.learning_rate, r.l2_lambda, r.dropout_rate, epoch, opt(r.val_auroc)
        );
    }
    write_file(&out.join(SWEEP_FILE), csv)?;
    write_file(&out.join(SWEEP_BEST_FILE), to_json(&best)?)?;
    Ok((rows, best))
}

/// One row of the prediction dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpRow {
    pub record_id: String,
    pub label: u8,
    pub dist: PredictiveDistribution,
}

pub fn predictions_csv(rows: &[DumpRow]) -> String {
    let s_count = rows.first().map_or(0, |r| r.dist.samples.len());
    let mut s = String::from("record_id,label");
    for i in 0..s_count {
        let _ = write!(s, ",p_{i}");
    }
    s.push_str(",mean,std\n");
    for r in rows {
        let _ = write!(s, "{},{}", r.record_id, r.label);
        for p in &r.dist.samples {
            let _ = write!(s, ",{p}");
        }
        let _ = writeln!(s, ",{},{}", r.dist.mean, r.dist.std);
    }
    s
}

/// Reads a prediction dump written by `eval`.
pub fn read_predictions(path: &Path) -> Result<Vec<DumpRow>> {
    let perr = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| perr(0, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let h: Vec<&str> = headers.iter().collect();
    let n = h.len();
    let samples_ok = n >= 5
        && h[0] == "record_id"
        && h[1] == "label"
        && h[n - 2] == "mean"
        && h[n - 1] == "std"
        && h[2..n - 2].iter().enumerate().all(|(i, c)| *c == format!("p_{i}"));
    if !samples_ok {
        return Err(perr(1, "expected columns record_id,label,p_0..p_{S-1},mean,std".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| perr(line, format!("column `{}`: not a number: `{}`", h[j], &rec[j])))
        };
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(line, format!("label must be 0 or 1, got `{other}`"))),
        };
        let samples = (2..n - 2).map(num).collect::<Result<Vec<_>>>()?;
        if samples.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(perr(line, "probabilities must lie in [0, 1]".into()));
        }
        out.push(DumpRow {
            record_id: rec[0].to_string(),
            label,
            dist: PredictiveDistribution {
                samples,
                mean: num(n - 2)?,
                std: num(n - 1)?,
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variant: Variant,
    #[serde(rename = "S")]
    pub samples: usize,
    pub n: usize,
    pub n_bins: usize,
    pub auroc: f64,
    pub ece: f64,
    pub split: SplitName,
}

impl Metrics {
    pub fn to_text(&self) -> String {
        format!(
            "variant: {}\nS: {}\nn: {}\nn_bins: {}\nauroc: {}\nece: {}\nsplit: {}\n",
            self.variant,
            self.samples,
            self.n,
            self.n_bins,
            self.auroc,
            self.ece,
            serde_json::to_value(self.split).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        )
    }
}

/// Applies the checkpoint's standardizer and returns the records of `which`.
fn checkpoint_records(ck: &Checkpoint, ds: &Dataset, which: SplitName) -> Result<Vec<Record>> {
    let processed = ck.standardizer.apply(ds)?;
    let all: Vec<String> = processed.records.iter().map(|r| r.id.clone()).collect();
    processed.select(which.ids(&ck.split, &all))
}

/// MC predictions on one split, written as a dump plus metrics and a
/// reliability table.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<Metrics> {
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    let ds = load_csv(data)?;
    let records = checkpoint_records(&ck, &ds, cfg.eval.split)?;
    if records.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let dists = predict_records(&records, &params, cfg.samples, ck.train.dropout_rate, cfg.eval.seed)?;
    let rows: Vec<DumpRow> = records
        .iter()
        .zip(dists)
        .map(|(r, d)| DumpRow {
            record_id: r.id.clone(),
            label: r.label,
            dist: d,
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.dist.mean).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let report = calibration_report(&means, &labels, cfg.n_bins)?;
    let metrics = Metrics {
        variant: ck.variant,
        samples: cfg.samples,
        n: rows.len(),
        n_bins: cfg.n_bins,
        auroc: report.auroc,
        ece: report.ece,
        split: cfg.eval.split,
    };

    let mut rel = String::from("bin_lo,bin_hi,count,mean_confidence,accuracy\n");
    for b in &report.bins.bins {
        let _ = writeln!(rel, "{},{},{},{},{}", b.lo, b.hi, b.count, b.mean_confidence, b.accuracy);
    }
    write_file(&out.join(PREDICTIONS_FILE), predictions_csv(&rows))?;
    write_file(&out.join(METRICS_TXT), metrics.to_text())?;
    write_file(&out.join(METRICS_JSON), to_json(&metrics)?)?;
    write_file(&out.join(RELIABILITY_FILE), rel)?;
    Ok(metrics)
}

/// IDK curve and deferred-record breakdown for every threshold of a sweep.
pub fn cmd_idk(dump: &Path, thresholds: Option<&[f64]>, out: &Path) -> Result<Vec<crate::infer::IdkPoint>> {
    let rows = read_predictions(dump)?;
    let dists: Vec<PredictiveDistribution> = rows.iter().map(|r| r.dist.clone()).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let sweep = match thresholds {
        Some(t) => {
            check_thresholds(t)?;
            t.to_vec()
        }
        None => default_thresholds(&dists),
    };
    let curve = idk_curve(&dists, &labels, &sweep)?;
    let mut csv = String::from("threshold,correct_ratio,incorrect_ratio,idk_ratio\n");
    let mut bd = String::from("threshold,deferred,false_pos,false_neg,true_pos,true_neg\n");
    for p in &curve {
        let _ = writeln!(csv, "{},{},{},{}", p.threshold, p.correct_ratio, p.incorrect_ratio, p.idk_ratio);
        let b = idk_breakdown(&dists, &labels, p.threshold)?;
        let _ = writeln!(
            bd,
            "{},{},{},{},{},{}",
            p.threshold, b.deferred, b.false_pos, b.false_neg, b.true_pos, b.true_neg
        );
    }
    write_file(&out.join(IDK_CURVE_FILE), csv)?;
    write_file(&out.join(IDK_BREAKDOWN_FILE), bd)?;
    Ok(curve)
}

/// Attention explanation of one record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnFile {
    pub record_id: String,
    pub label: u8,
    pub variant: Variant,
    pub samples: usize,
    pub prob_mean: f64,
    pub prob_std: f64,
    /// Mean-path pass: no dropout, all Gaussian draws zero.
    pub report: AttentionReport,
    pub contribution: ContributionSpread,
    /// Per-sample contribution maps (`S x T x F`).
    pub contribution_samples: Vec<Vec<Vec<f64>>>,
    pub attention_threshold: f64,
    pub attention_match: Option<MatchScore>,
}

fn attn_one(rec: &Record, params: &ModelParams, cfg: &RunConfig, dropout: f64, n_raw: usize) -> Result<AttnFile> {
    let t = rec.timesteps();
    let r = params.dims().embed;
    let report = forward(params, &rec.x, &Draws::zeros(t, r))?.report;
    let base = record_seed(cfg.eval.seed, &rec.id);
    let mut probs = Vec::with_capacity(cfg.samples);
    let mut maps = Vec::with_capacity(cfg.samples);
    for s in 0..cfg.samples {
        let mut g = rng::derived_stream(base, &[s as u64]);
        let draws = Draws::sample(params, t, dropout, &mut g)?;
        let rep = forward(params, &rec.x, &draws)?.report;
        probs.push(rep.prob);
        maps.push(rep.contribution);
    }
    let dist = PredictiveDistribution::from_samples(probs)?;
    let spread = ContributionSpread::from_samples(&maps);
    let attention_match = match &rec.relevance {
        Some(rel) => {
            let raw: Vec<Vec<f64>> = spread.mean.iter().map(|row| row[..n_raw].to_vec()).collect();
            let has_both = rel.iter().any(|&b| b) && rel.iter().any(|&b| !b);
            if has_both {
                Some(attention_match(&raw, rel, cfg.eval.attention_threshold)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok(AttnFile {
        record_id: rec.id.clone(),
        label: rec.label,
        variant: params.variant(),
        samples: cfg.samples,
        prob_mean: dist.mean,
        prob_std: dist.std,
        report,
        contribution: spread,
        contribution_samples: maps,
        attention_threshold: cfg.eval.attention_threshold,
        attention_match,
    })
}

/// File name of a record's attention report. Ids are sanitized so they are
/// always a single path component.
pub fn attn_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("attn_{safe}.json")
}

/// Writes one attention report per requested record, plus a summary of
/// attention-match scores when relevance is available.
pub fn cmd_attn(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    ids: &[String],
    out: &Path,
) -> Result<(Vec<AttnFile>, Option<MatchSummary>)> {
    if ids.is_empty() {
        return Err(Error::config("no record ids given"));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    let ds = load_csv(data)?;
    let processed = ck.standardizer.apply(&ds)?;
    let records = processed.select(ids)?;
    let mut files = Vec::new();
    for rec in &records {
        let f = attn_one(rec, &params, cfg, ck.train.dropout_rate, ds.n_features)?;
        write_file(&out.join(attn_file_name(&rec.id)), to_json(&f)?)?;
        files.push(f);
    }
    let raw: Vec<(Vec<Vec<f64>>, &[bool])> = files
        .iter()
        .zip(&records)
        .filter_map(|(f, r)| {
            let rel = r.relevance.as_deref()?;
            Some((f.contribution.mean.iter().map(|row| row[..ds.n_features].to_vec()).collect(), rel))
        })
        .collect();
    let items: Vec<(&[Vec<f64>], &[bool])> = raw.iter().map(|(c, r)| (c.as_slice(), *r)).collect();
    let summary = if items.is_empty() {
        None
    } else {
        attention_match_summary(&items, cfg.eval.attention_threshold).ok()
    };
    if let Some(s) = &summary {
        write_file(&out.join("attn_summary.json"), to_json(s)?)?;
    }
    Ok((files, summary))
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(name = "ua-retain", version, about = "Uncertainty-aware attention for clinical time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, training and inference.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Monte Carlo samples per record.
    #[arg(long, global = true, value_name = "S")]
    pub samples: Option<usize>,
    /// Reliability bins.
    #[arg(long, global = true, value_name = "N")]
    pub bins: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen,
    /// Train one model.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Grid search over batch size, learning rate, l2 and dropout.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<SplitName>,
    },
    /// IDK curve from a prediction dump.
    Idk {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Comma-separated descending thresholds (`inf` allowed).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        thresholds: Option<Vec<f64>>,
    },
    /// Per-record attention reports.
    Attn {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated record ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
    },
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            "all" => Ok(SplitName::All),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// Builds the effective config: file, then flag overrides, then validation.
pub fn effective_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(v) = g.variant {
        cfg.variant = v;
    }
    if let Some(s) = g.samples {
        cfg.samples = s;
    }
    if let Some(b) = g.bins {
        cfg.n_bins = b;
    }
    cfg.resolve()
}

/// Runs a parsed command line and returns a one-line summary.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = effective_config(&cli.global)?;
    let out = cli.global.out.as_path();
    match cli.command {
        Command::Gen => {
            let p = cmd_gen(&cfg, out)?;
            Ok(format!("wrote {}", p.display()))
        }
        Command::Train { data } => {
            let d = data_path(&cfg, data.as_deref(), out);
            let ck = cmd_train(&cfg, &d, out)?;
            Ok(format!(
                "trained {} (best epoch {}); wrote {}",
                ck.variant,
                ck.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
                out.join(CHECKPOINT_FILE).display()
            ))
        }
        Command::Sweep { data } => {
            let d = data_path(&cfg, data.as_deref(), out);
            let (rows, best) = cmd_sweep(&cfg, &d, out)?;
            Ok(match best {
                Some(b) => format!(
                    "{} cells; best val_auroc {} at batch_size={} learning_rate={} l2_lambda={} dropout_rate={}",
                    rows.len(),
                    opt(b.val_auroc),
                    b.batch_size,
                    b.learning_rate,
                    b.l2_lambda,
                    b.dropout_rate
                ),
                None => format!("{} cells; no cell produced a validation AUROC", rows.len()),
            })
        }
        Command::Eval { checkpoint, data, split } => {
            if let Some(s) = split {
                cfg.eval.split = s;
            }
            let c = checkpoint_path(&cfg, checkpoint.as_deref(), out);
            let d = data_path(&cfg, data.as_deref(), out);
            let m = cmd_eval(&cfg, &c, &d, out)?;
            Ok(format!("auroc {} ece {} n {}", m.auroc, m.ece, m.n))
        }
        Command::Idk { predictions, thresholds } => {
            let p = predictions
                .or_else(|| cfg.paths.predictions.clone())
                .unwrap_or_else(|| out.join(PREDICTIONS_FILE));
            let t = thresholds.or_else(|| cfg.eval.thresholds.clone());
            let curve = cmd_idk(&p, t.as_deref(), out)?;
            Ok(format!("{} thresholds; wrote {}", curve.len(), out.join(IDK_CURVE_FILE).display()))
        }
        Command::Attn { checkpoint, data, ids } => {
            let c = checkpoint_path(&cfg, checkpoint.as_deref(), out);
            let d = data_path(&cfg, data.as_deref(), out);
            let (files, summary) = cmd_attn(&cfg, &c, &d, &ids, out)?;
            Ok(match summary {
                Some(s) => format!(
                    "{} reports; sensitivity {} specificity {}",
                    files.len(),
                    s.macro_avg.sensitivity,
                    s.macro_avg.specificity
                ),
                None => format!("{} reports", files.len()),
            })
        }
    }
}

/// Single-line JSON error report.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message.replace('\n', " ") }).to_string()
}

//! End-to-end tests of the command-line binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ua_retain::cli::{read_predictions, SweepGrid, CHECKPOINT_FILE, PREDICTIONS_FILE};
use ua_retain::data::{gen_synthetic, load_csv, SynthConfig};

const BIN: &str = env!("CARGO_BIN_EXE_ua-retain");

const SMALL: &str = r#"
samples = 5
n_bins = 5
[synth]
n_records = 120
timesteps = 5
n_features = 4
n_relevant_features = 1
seed = 4
[train]
max_epochs = 2
batch_size = 32
val_samples = 2
[model]
embed = 4
hidden = 4
"#;

fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("{SMALL}{extra}")).unwrap();
    (dir, cfg)
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn assert_error_line(o: &Output, kind: &str) {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], kind, "stderr: {err}");
}

#[test]
fn gen_round_trips_and_is_byte_stable() {
    let (dir, cfg) = setup("");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run(&cfg, &a, &["gen"]));
    ok(run(&cfg, &b, &["gen"]));
    for f in ["data.csv", "data.relevance.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loaded = load_csv(&a.join("data.csv")).unwrap();
    let synth: SynthConfig = toml::from_str::<toml::Table>(SMALL).unwrap()["synth"].clone().try_into().unwrap();
    assert_eq!(loaded, gen_synthetic(&synth).unwrap());
}

#[test]
fn gen_with_no_records_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[synth]\nn_records = 0\n").unwrap();
    ok(run(&cfg, dir.path(), &["gen"]));
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text, "record_id,timestep,feature,value,label\n");
}

#[test]
fn out_dir_defaults_from_environment() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("from_env");
    let o = Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("gen")
        .env("UA_RETAIN_OUT", &out)
        .output()
        .unwrap();
    ok(o);
    assert!(out.join("data.csv").exists());
}

fn ratio_oracle(rows: &[(u8, f64, f64)], t: f64) -> (f64, f64, f64) {
    let (mut c, mut w, mut k) = (0usize, 0usize, 0usize);
    for &(y, mean, std) in rows {
        if std > t {
            k += 1;
        } else if (mean >= 0.5) == (y == 1) {
            c += 1;
        } else {
            w += 1;
        }
    }
    let n = rows.len() as f64;
    (c as f64 / n, w as f64 / n, k as f64 / n)
}

fn auroc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn ece_oracle(probs: &[f64], labels: &[u8], bins: usize) -> f64 {
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let c = if p >= 0.5 { p } else { 1.0 - p };
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf[b] += c;
        acc[b] += if (p >= 0.5) == (y == 1) { 1.0 } else { 0.0 };
        cnt[b] += 1;
    }
    let n = probs.len() as f64;
    (0..bins)
        .filter(|&b| cnt[b] > 0)
        .map(|b| (acc[b] - conf[b]).abs() / n)
        .sum()
}

#[test]
fn train_eval_idk_attn_pipeline() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("o");
    ok(run(&cfg, &out, &["gen"]));
    ok(run(&cfg, &out, &["--variant", "da", "train"]));
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(CHECKPOINT_FILE)).unwrap()).unwrap();
    assert_eq!(ck["version"], "1");
    assert_eq!(ck["variant"], "da");
    assert!(ck["tensors"]["w_emb"]["shape"].is_array());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    // eval
    ok(run(&cfg, &out, &["eval"]));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for k in ["auroc", "ece", "n", "n_bins", "variant", "S"] {
        assert!(metrics.get(k).is_some(), "missing {k}");
    }
    let txt = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(txt.lines().all(|l| l.contains(": ")));
    let rows = read_predictions(&out.join(PREDICTIONS_FILE)).unwrap();
    let test_size = ck["split"]["test"].as_array().unwrap().len();
    assert_eq!(rows.len(), test_size);
    assert_eq!(metrics["n"], test_size);

    // recompute from the dump alone
    let means: Vec<f64> = rows
        .iter()
        .map(|r| r.dist.samples.iter().sum::<f64>() / r.dist.samples.len() as f64)
        .collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let auroc = auroc_oracle(&means, &labels);
    let ece = ece_oracle(&means, &labels, 5);
    assert!((auroc - metrics["auroc"].as_f64().unwrap()).abs() < 1e-12);
    assert!((ece - metrics["ece"].as_f64().unwrap()).abs() < 1e-12);
    let rel = fs::read_to_string(out.join("reliability.csv")).unwrap();
    assert_eq!(rel.lines().next().unwrap(), "bin_lo,bin_hi,count,mean_confidence,accuracy");
    assert_eq!(rel.lines().count(), 6);

    // idk with the default sweep, then an explicit one
    ok(run(&cfg, &out, &["idk"]));
    let curve = fs::read_to_string(out.join("idk_curve.csv")).unwrap();
    let triples: Vec<(u8, f64, f64)> = rows.iter().map(|r| (r.label, r.dist.mean, r.dist.std)).collect();
    for line in curve.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (c, w, k) = ratio_oracle(&triples, v[0]);
        assert_eq!((v[1], v[2], v[3]), (c, w, k));
    }
    ok(run(&cfg, &out, &["idk", "--thresholds", "inf,0.1,0.05,0"]));
    let curve = fs::read_to_string(out.join("idk_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("idk_breakdown.csv")).unwrap().lines().count(), 5);
    assert_error_line(&run(&cfg, &out, &["idk", "--thresholds"]), "config");
    assert_error_line(&run(&cfg, &out, &["idk", "--thresholds", "0.1,0.2"]), "config");

    // attention reports
    let id = ck["split"]["test"][0].as_str().unwrap().to_string();
    ok(run(&cfg, &out, &["attn", "--ids", &id]));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(format!("attn_{id}.json"))).unwrap()).unwrap();
    let r = &rep["report"];
    let all_zero = |v: &serde_json::Value| {
        v.as_array().unwrap().iter().flat_map(|x| match x.as_array() {
            Some(a) => a.clone(),
            None => vec![x.clone()],
        }).all(|x| x.as_f64() == Some(0.0))
    };
    assert!(all_zero(&r["sd_e"]) && all_zero(&r["sd_d"]));
    let total: f64 = r["contribution"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|row| row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()))
        .sum();
    let gap = total + r["b_out"].as_f64().unwrap() - r["logit"].as_f64().unwrap();
    assert!(gap.abs() < 1e-9, "gap {gap}");
    assert!(rep["attention_match"]["sensitivity"].is_number());
    assert_error_line(&run(&cfg, &out, &["attn", "--ids", "no-such-id"]), "unknown_record");
}

#[test]
fn train_and_eval_are_byte_identical_on_rerun() {
    let (dir, cfg) = setup("");
    let data_dir = dir.path().join("d");
    ok(run(&cfg, &data_dir, &["gen"]));
    let data = data_dir.join("data.csv");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(run(&cfg, &out, &["--variant", "ua-plus", "train", "--data", data.to_str().unwrap()]));
        ok(run(&cfg, &out, &["eval", "--data", data.to_str().unwrap()]));
        let files: Vec<Vec<u8>> = ["checkpoint.json", "history.csv", "predictions.csv", "metrics.txt", "metrics.json", "reliability.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let ck = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert!(ck.contains("\"variant\": \"ua-plus\""));
}

#[test]
fn sweep_enumerates_the_grid() {
    assert_eq!(SweepGrid::default().cells().len(), 4 * 3 * 4 * 7);
    let (dir, cfg) = setup("[sweep]\nbatch_size = [32, 64]\nlearning_rate = [1e-2]\nl2_lambda = [2e-4]\ndropout_rate = [0.1, 0.3, 0.5]\n");
    let out = dir.path().join("o");
    ok(run(&cfg, &out, &["gen"]));
    let o = ok(run(&cfg, &out, &["--variant", "da", "sweep"]));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let best_auroc = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next().unwrap().parse::<f64>().ok())
        .fold(f64::NEG_INFINITY, f64::max);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep_best.json")).unwrap()).unwrap();
    assert_eq!(best["val_auroc"].as_f64().unwrap(), best_auroc);
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 cells"));
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let (dir, cfg) = setup("");
    let out = dir.path().join("o");
    assert_error_line(&run(&cfg, &out, &["train"]), "io");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = -1.0\n").unwrap();
    assert_error_line(&run(&bad, &out, &["gen"]), "config");
    fs::write(&bad, "[train]\nno_such_field = 1\n").unwrap();
    assert_error_line(&run(&bad, &out, &["gen"]), "config");
    assert_error_line(&run(&cfg, &out, &["--variant", "nope", "gen"]), "usage");
    assert_error_line(&run(&cfg, &out, &["eval"]), "io");
}

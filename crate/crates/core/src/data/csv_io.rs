//! Long-format CSV datasets.
//!
//! `record_id,timestep,feature,value,label`, one row per cell. `timestep` is
//! a 0-based integer; `feature` is a 0-based integer or a name listed in the
//! sidecar `<stem>.features` file (one name per line). An empty `value`
//! declares the cell but leaves it unobserved; cells without a row are
//! unobserved too. Ground-truth relevance, when present, lives in
//! `<stem>.relevance.csv` with columns `record_id,timestep,feature`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grad::Tensor;

use super::record::{Dataset, Record};

const COLUMNS: [&str; 5] = ["record_id", "timestep", "feature", "value", "label"];

pub fn features_sidecar(path: &Path) -> PathBuf {
    path.with_extension("features")
}

pub fn relevance_sidecar(path: &Path) -> PathBuf {
    path.with_extension("relevance.csv")
}

struct Pending {
    id: String,
    label: u8,
    label_line: u64,
    cells: Vec<(usize, usize, Option<f64>)>,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

fn read_feature_names(path: &Path) -> Result<Option<Vec<String>>> {
    let side = features_sidecar(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let names: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let mut seen = HashSet::new();
    for (i, n) in names.iter().enumerate() {
        if !seen.insert(n) {
            return Err(parse_err(&side, i as u64 + 1, format!("duplicate feature name `{n}`")));
        }
    }
    Ok(Some(names))
}

fn resolve_feature(
    raw: &str,
    names: Option<&HashMap<&str, usize>>,
) -> std::result::Result<usize, String> {
    if let Ok(i) = raw.parse::<usize>() {
        return match names {
            Some(map) if i >= map.len() => Err(format!("feature index {i} out of range")),
            _ => Ok(i),
        };
    }
    match names.and_then(|m| m.get(raw)) {
        Some(&i) => Ok(i),
        None => Err(format!("unknown feature `{raw}`")),
    }
}

fn header_index(path: &Path, headers: &csv::StringRecord) -> Result<[usize; 5]> {
    let mut idx = [usize::MAX; 5];
    for (pos, h) in headers.iter().enumerate() {
        let h = h.trim().trim_start_matches('\u{feff}');
        match COLUMNS.iter().position(|c| *c == h) {
            Some(c) if idx[c] == usize::MAX => idx[c] = pos,
            Some(_) => return Err(parse_err(path, 1, format!("duplicate column `{h}`"))),
            None => return Err(parse_err(path, 1, format!("unknown column `{h}`"))),
        }
    }
    if let Some(c) = idx.iter().position(|&i| i == usize::MAX) {
        return Err(parse_err(path, 1, format!("missing column `{}`", COLUMNS[c])));
    }
    Ok(idx)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let names = read_feature_names(path)?;
    let name_map: Option<HashMap<&str, usize>> = names
        .as_ref()
        .map(|n| n.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => csv_err(path, e),
        })?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = header_index(path, &headers)?;

    let mut order: Vec<Pending> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut n_features = names.as_ref().map_or(0, Vec::len);

    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |c: usize| row.get(col[c]).unwrap_or("").trim();

        let id = field(0);
        if id.is_empty() {
            return Err(parse_err(path, line, "empty record_id"));
        }
        let t: usize = field(1)
            .parse()
            .map_err(|_| parse_err(path, line, format!("invalid timestep `{}`", field(1))))?;
        let f = resolve_feature(field(2), name_map.as_ref()).map_err(|m| parse_err(path, line, m))?;
        let value = match field(3) {
            "" => None,
            raw => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("non-numeric value `{raw}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, format!("non-finite value `{raw}`")));
                }
                Some(v)
            }
        };
        let label = match field(4) {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(parse_err(path, line, format!("label must be 0 or 1, got `{other}`"))),
        };

        let slot = *by_id.entry(id.to_string()).or_insert_with(|| {
            order.push(Pending {
                id: id.to_string(),
                label,
                label_line: line,
                cells: Vec::new(),
            });
            order.len() - 1
        });
        let rec = &mut order[slot];
        if rec.label != label {
            return Err(parse_err(
                path,
                line,
                format!(
                    "label {label} for `{id}` conflicts with label {} on line {}",
                    rec.label, rec.label_line
                ),
            ));
        }
        if !seen.insert((slot, t, f)) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate cell (record `{id}`, timestep {t}, feature {f})"),
            ));
        }
        n_features = n_features.max(f + 1);
        rec.cells.push((t, f, value));
    }

    let mut records = order
        .into_iter()
        .map(|p| {
            let t_len = p.cells.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
            let mut x = vec![0.0; t_len * n_features];
            let mut mask = vec![false; t_len * n_features];
            for (t, f, v) in p.cells {
                if let Some(v) = v {
                    x[t * n_features + f] = v;
                    mask[t * n_features + f] = true;
                }
            }
            Ok(Record {
                id: p.id,
                x: Tensor::matrix(t_len, n_features, x)?,
                mask,
                label: p.label,
                relevance: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let side = relevance_sidecar(path);
    if side.exists() {
        load_relevance(&side, &mut records, name_map.as_ref())?;
    }

    Ok(Dataset {
        n_features,
        feature_names: names,
        records,
    })
}

fn load_relevance(
    path: &Path,
    records: &mut [Record],
    names: Option<&HashMap<&str, usize>>,
) -> Result<()> {
    let index: HashMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.clone(), i))
        .collect();
    for r in records.iter_mut() {
        r.relevance = Some(vec![false; r.mask.len()]);
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["record_id", "timestep", "feature"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(parse_err(path, 1, "expected header record_id,timestep,feature"));
    }
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[0].trim();
        let &ri = index
            .get(id)
            .ok_or_else(|| parse_err(path, line, format!("unknown record `{id}`")))?;
        let rec = &mut records[ri];
        let t: usize = row[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, "invalid timestep"))?;
        let f = resolve_feature(row[2].trim(), names).map_err(|m| parse_err(path, line, m))?;
        if t >= rec.timesteps() || f >= rec.n_features() {
            return Err(parse_err(path, line, format!("cell ({t}, {f}) outside record `{id}`")));
        }
        let nf = rec.n_features();
        rec.relevance.as_mut().unwrap()[t * nf + f] = true;
    }
    Ok(())
}

/// Writes every cell of every record (unobserved cells with an empty value)
/// so that [`load_csv`] reproduces the dataset exactly. Sidecars are written
/// for feature names and relevance when present.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut out = Vec::new();
    writeln!(out, "{}", COLUMNS.join(",")).map_err(io)?;
    for r in &dataset.records {
        let f_len = r.n_features();
        for t in 0..r.timesteps() {
            for f in 0..f_len {
                let c = t * f_len + f;
                if r.mask[c] {
                    writeln!(out, "{},{t},{f},{},{}", r.id, r.x.values()[c], r.label).map_err(io)?;
                } else {
                    writeln!(out, "{},{t},{f},,{}", r.id, r.label).map_err(io)?;
                }
            }
        }
    }
    fs::write(path, out).map_err(io)?;

    if let Some(names) = &dataset.feature_names {
        let side = features_sidecar(path);
        let mut text = names.join("\n");
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    if dataset.records.iter().any(|r| r.relevance.is_some()) {
        let side = relevance_sidecar(path);
        let mut text = String::from("record_id,timestep,feature\n");
        for r in &dataset.records {
            let Some(rel) = &r.relevance else { continue };
            let f_len = r.n_features();
            for (c, _) in rel.iter().enumerate().filter(|(_, &b)| b) {
                text.push_str(&format!("{},{},{}\n", r.id, c / f_len, c % f_len));
            }
        }
        fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    }
    Ok(())
}

//! The performance dataset: one record per (instance, configuration) pair,
//! with seed-replicated raw measurements, the normalized label, and optional
//! primal/dual gaps.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty input")]
    EmptyInput,
    #[error("no value is at or below the threshold {0}")]
    AllAboveThreshold(f64),
    #[error("optimum is zero; enable the gap epsilon fallback to divide by 1e-10 instead")]
    ZeroOptimum,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("need at least 2 instances, have {0}")]
    TooFewInstances(usize),
    #[error("invalid fraction {0}")]
    BadFraction(f64),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("record {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "IS")]
    InSample,
    #[serde(rename = "OS")]
    OutOfSample,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::InSample => "IS",
            Split::OutOfSample => "OS",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "IS" => Some(Split::InSample),
            "OS" => Some(Split::OutOfSample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRecord {
    pub instance_id: String,
    pub config: Vec<u8>,
    pub seed_values: Vec<f64>,
    pub p_raw: f64,
    pub p_norm: Option<f64>,
    pub primal_gap: Option<f64>,
    pub dual_gap: Option<f64>,
}

/// Training set rows plus the per-instance feature vectors they refer to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub config_names: Vec<String>,
    pub features: BTreeMap<String, Vec<f64>>,
    pub records: Vec<PerformanceRecord>,
    pub split: BTreeMap<String, Split>,
}

/// Constants of the clip-and-rescale map, reusable on new values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub threshold: f64,
    /// Largest value at or below the threshold, plus 100.
    pub clip_value: f64,
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn apply(&self, v: f64) -> f64 {
        let v = if v > self.threshold || v.is_nan() { self.clip_value } else { v };
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Median of the seed replicates; even counts average the central pair.
pub fn aggregate_seeds(values: &[f64]) -> Result<f64, DatasetError> {
    if values.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Index of the replicate whose value is the (lower) median.
pub fn median_index(values: &[f64]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Some(idx[(values.len() - 1) / 2])
}

/// Replaces values above `threshold` by `M + 100`, where `M` is the largest
/// value at or below it, then maps the result affinely onto `[0, 1]`.
pub fn normalize_performance(
    raw: &[f64],
    threshold: f64,
) -> Result<(Vec<f64>, NormalizationParams), DatasetError> {
    if raw.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let anchor = raw
        .iter()
        .copied()
        .filter(|v| *v <= threshold)
        .fold(f64::NEG_INFINITY, f64::max);
    if anchor == f64::NEG_INFINITY {
        return Err(DatasetError::AllAboveThreshold(threshold));
    }
    let clip_value = anchor + 100.0;
    let clipped: Vec<f64> = raw
        .iter()
        .map(|&v| if v > threshold || v.is_nan() { clip_value } else { v })
        .collect();
    let min = clipped.iter().copied().fold(f64::INFINITY, f64::min);
    let max = clipped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = NormalizationParams { threshold, clip_value, min, max };
    Ok((clipped.iter().map(|&v| params.apply(v)).collect(), params))
}

/// Relative primal and dual gaps with respect to a known optimum.
pub fn compute_gaps(
    optimum: f64,
    incumbent: Option<f64>,
    bound: Option<f64>,
    gap_eps: bool,
) -> Result<(Option<f64>, Option<f64>), DatasetError> {
    let denom = if optimum == 0.0 {
        if !gap_eps {
            return Err(DatasetError::ZeroOptimum);
        }
        1e-10
    } else {
        optimum.abs().max(if gap_eps { 1e-10 } else { 0.0 })
    };
    Ok((
        incumbent.map(|v| (optimum - v).abs() / denom),
        bound.map(|v| (v - optimum).abs() / denom),
    ))
}

impl Dataset {
    pub fn instance_ids(&self) -> Vec<String> {
        self.features.keys().cloned().collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (row, r) in self.records.iter().enumerate() {
            if !self.features.contains_key(&r.instance_id) {
                return Err(DatasetError::Row {
                    row,
                    msg: format!("instance `{}` has no features", r.instance_id),
                });
            }
            if r.config.len() != self.config_names.len() {
                return Err(DatasetError::Row { row, msg: "encoding width mismatch".into() });
            }
        }
        for (id, f) in &self.features {
            if f.len() != self.feature_names.len() {
                return Err(DatasetError::Schema(format!("instance `{id}` has wrong feature count")));
            }
        }
        Ok(())
    }

    /// Fills `p_norm` for every record from `p_raw`.
    pub fn normalize(&mut self, threshold: f64) -> Result<NormalizationParams, DatasetError> {
        let raw: Vec<f64> = self.records.iter().map(|r| r.p_raw).collect();
        let (norm, params) = normalize_performance(&raw, threshold)?;
        for (r, v) in self.records.iter_mut().zip(norm) {
            r.p_norm = Some(v);
        }
        Ok(params)
    }

    pub fn labels(&self) -> Result<Vec<f64>, DatasetError> {
        self.records
            .iter()
            .enumerate()
            .map(|(row, r)| r.p_norm.ok_or(DatasetError::Row { row, msg: "missing p_norm".into() }))
            .collect()
    }

    /// Feature vector of the record's instance followed by its encoding bits.
    pub fn input_row(&self, record: &PerformanceRecord) -> Vec<f64> {
        let mut x = self.features[&record.instance_id].clone();
        x.extend(record.config.iter().map(|&b| b as f64));
        x
    }

    pub fn input_columns(&self) -> Vec<String> {
        self.feature_names.iter().chain(&self.config_names).cloned().collect()
    }

    /// Keeps only records (and instances) tagged with `split`.
    pub fn filter_split(&self, split: Split) -> Dataset {
        let keep: BTreeSet<&String> =
            self.split.iter().filter(|(_, s)| **s == split).map(|(id, _)| id).collect();
        self.filter_instances(|id| keep.contains(&id.to_string()))
    }

    pub fn filter_instances<F: Fn(&str) -> bool>(&self, keep: F) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            config_names: self.config_names.clone(),
            features: self
                .features
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            records: self.records.iter().filter(|r| keep(&r.instance_id)).cloned().collect(),
            split: self
                .split
                .iter()
                .filter(|(id, _)| keep(id))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Uniform random subsample of `size` records, kept in original order.
    pub fn subsample(&self, size: usize, seed: u64) -> Dataset {
        if size >= self.records.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(size);
        idx.sort_unstable();
        let records: Vec<_> = idx.iter().map(|&i| self.records[i].clone()).collect();
        let used: BTreeSet<&str> = records.iter().map(|r| r.instance_id.as_str()).collect();
        let mut out = self.filter_instances(|id| used.contains(id));
        out.records = records;
        out
    }

    fn column_index(names: &[String], col: &str) -> Result<usize, DatasetError> {
        names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| DatasetError::UnknownColumn(col.to_string()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let seeds = self.records.iter().map(|r| r.seed_values.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["instance_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(self.config_names.iter().cloned());
        header.extend((0..seeds).map(|i| format!("seed_{i}")));
        header.extend(["p_raw", "p_norm", "primal_gap", "dual_gap", "split"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.instance_id.clone()];
            row.extend(self.features[&r.instance_id].iter().map(|v| fmt_f64(*v)));
            row.extend(r.config.iter().map(|b| b.to_string()));
            row.extend((0..seeds).map(|i| r.seed_values.get(i).map_or(String::new(), |v| fmt_f64(*v))));
            row.push(fmt_f64(r.p_raw));
            row.push(fmt_opt(r.p_norm));
            row.push(fmt_opt(r.primal_gap));
            row.push(fmt_opt(r.dual_gap));
            row.push(self.split.get(&r.instance_id).map_or("", |s| s.as_str()).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset, DatasetError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("instance_id") {
            return Err(DatasetError::Schema("first column must be instance_id".into()));
        }
        let tail = ["p_raw", "p_norm", "primal_gap", "dual_gap", "split"];
        for t in tail {
            if !header.iter().any(|h| h == t) {
                return Err(DatasetError::Schema(format!("missing column `{t}`")));
            }
        }
        let pos = |name: &str| header.iter().position(|h| h == name).unwrap();
        let (i_raw, i_norm, i_pg, i_dg, i_split) =
            (pos("p_raw"), pos("p_norm"), pos("primal_gap"), pos("dual_gap"), pos("split"));
        let mut feat_cols = Vec::new();
        let mut conf_cols = Vec::new();
        let mut seed_cols = Vec::new();
        for (i, h) in header.iter().enumerate().skip(1) {
            if tail.contains(&h.as_str()) {
                continue;
            }
            if h.starts_with("c:") {
                conf_cols.push(i);
            } else if h.starts_with("seed_") {
                seed_cols.push(i);
            } else {
                feat_cols.push(i);
            }
        }
        let mut ds = Dataset {
            feature_names: feat_cols.iter().map(|&i| header[i].clone()).collect(),
            config_names: conf_cols.iter().map(|&i| header[i].clone()).collect(),
            ..Default::default()
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let err = |msg: String| DatasetError::Row { row, msg };
            let num = |i: usize| -> Result<f64, DatasetError> {
                rec[i].trim().parse::<f64>().map_err(|_| err(format!("bad number in `{}`", header[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, DatasetError> {
                if rec[i].trim().is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let id = rec[0].to_string();
            let feats = feat_cols.iter().map(|&i| num(i)).collect::<Result<Vec<_>, _>>()?;
            match ds.features.get(&id) {
                Some(prev) if prev != &feats => {
                    return Err(err(format!("instance `{id}` has inconsistent features")))
                }
                None => {
                    ds.features.insert(id.clone(), feats);
                }
                _ => {}
            }
            let config = conf_cols
                .iter()
                .map(|&i| match rec[i].trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    _ => Err(err(format!("bad bit in `{}`", header[i]))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut seed_values = Vec::new();
            for &i in &seed_cols {
                if let Some(v) = opt(i)? {
                    seed_values.push(v);
                }
            }
            if let Some(s) = Split::parse(rec[i_split].trim()) {
                ds.split.insert(id.clone(), s);
            }
            ds.records.push(PerformanceRecord {
                instance_id: id,
                config,
                seed_values,
                p_raw: num(i_raw)?,
                p_norm: opt(i_norm)?,
                primal_gap: opt(i_pg)?,
                dual_gap: opt(i_dg)?,
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let f = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
        let f = File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Projects onto the kept columns and collapses rows of one instance that
/// became identical into one row labelled with the group's mean `p_norm`.
pub fn dedup_group_average(
    ds: &Dataset,
    kept_feature_columns: &[String],
    kept_config_columns: &[String],
) -> Result<Dataset, DatasetError> {
    let fidx = kept_feature_columns
        .iter()
        .map(|c| Dataset::column_index(&ds.feature_names, c))
        .collect::<Result<Vec<_>, _>>()?;
    let cidx = kept_config_columns
        .iter()
        .map(|c| Dataset::column_index(&ds.config_names, c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut groups: Vec<Vec<&PerformanceRecord>> = Vec::new();
    let mut key_to_group: HashMap<(&str, Vec<u8>), usize> = HashMap::new();
    for (row, r) in ds.records.iter().enumerate() {
        if r.p_norm.is_none() {
            return Err(DatasetError::Row { row, msg: "missing p_norm; normalize first".into() });
        }
        let key = (r.instance_id.as_str(), cidx.iter().map(|&i| r.config[i]).collect::<Vec<_>>());
        let g = *key_to_group.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }

    let records = groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let p_raw = mean(g.iter().map(|r| r.p_raw)).unwrap();
            PerformanceRecord {
                instance_id: first.instance_id.clone(),
                config: cidx.iter().map(|&i| first.config[i]).collect(),
                seed_values: if g.len() == 1 { first.seed_values.clone() } else { vec![p_raw] },
                p_raw,
                p_norm: mean(g.iter().filter_map(|r| r.p_norm)),
                primal_gap: mean(g.iter().filter_map(|r| r.primal_gap)),
                dual_gap: mean(g.iter().filter_map(|r| r.dual_gap)),
            }
        })
        .collect();

    Ok(Dataset {
        feature_names: kept_feature_columns.to_vec(),
        config_names: kept_config_columns.to_vec(),
        features: ds
            .features
            .iter()
            .map(|(id, f)| (id.clone(), fidx.iter().map(|&i| f[i]).collect()))
            .collect(),
        records,
        split: ds.split.clone(),
    })
}

/// Tags instances IS/OS uniformly at random; `round(os_fraction · n)`
/// instances go out of sample.
pub fn split_instances(ds: &Dataset, os_fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if !(os_fraction > 0.0 && os_fraction < 1.0) {
        return Err(DatasetError::BadFraction(os_fraction));
    }
    let mut ids: Vec<String> = ds.features.keys().cloned().collect();
    if ids.len() < 2 {
        return Err(DatasetError::TooFewInstances(ids.len()));
    }
    let n_os = (os_fraction * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut out = ds.clone();
    out.split = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, if i < n_os { Split::OutOfSample } else { Split::InSample }))
        .collect();
    Ok(out)
}

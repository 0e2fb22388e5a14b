//! Feature engineering and correlation-based feature selection.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{dedup_group_average, Dataset, DatasetError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid date `{0}`")]
    InvalidDate(String),
    #[error("statistics group `{0}` is empty")]
    EmptyGroup(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("every feature column is constant")]
    NoVariance,
    #[error("need at least 2 labelled rows")]
    TooFewRows,
    #[error("expected {expected} input values, got {got}")]
    Width { expected: usize, got: usize },
    #[error("file: {0}")]
    Io(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Z-score constants for the leading `len()` columns of an input vector;
/// later columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation; constant columns get scale 1.
    pub fn fit(rows: &[Vec<f64>], n_columns: usize) -> Standardizer {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; n_columns];
        for r in rows {
            for j in 0..n_columns {
                mean[j] += r[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; n_columns];
        for r in rows {
            for j in 0..n_columns {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| if j < self.mean.len() { (v - self.mean[j]) / self.scale[j] } else { v })
            .collect()
    }
}

/// Parses `YYYY-MM-DD`, or the numeric form `YYYYMMDD` used in dataset files.
pub fn parse_date(text: &str) -> Result<NaiveDate, FeatureError> {
    let t = text.trim();
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(d);
    }
    let num: f64 = t.parse().map_err(|_| FeatureError::InvalidDate(t.to_string()))?;
    date_from_number(num)
}

pub fn date_from_number(v: f64) -> Result<NaiveDate, FeatureError> {
    if v.fract() != 0.0 || !(0.0..1e8).contains(&v) {
        return Err(FeatureError::InvalidDate(v.to_string()));
    }
    let n = v as u32;
    NaiveDate::from_ymd_opt((n / 10000) as i32, (n / 100) % 100, n % 100)
        .ok_or_else(|| FeatureError::InvalidDate(v.to_string()))
}

pub fn date_to_number(d: NaiveDate) -> f64 {
    (d.year() as u32 * 10000 + d.month() * 100 + d.day()) as f64
}

/// Meteorological seasons: 0 = Dec–Feb, 1 = Mar–May, 2 = Jun–Aug, 3 = Sep–Nov.
fn season(month: u32) -> f64 {
    ((month % 12) / 3) as f64
}

pub const DATE_FEATURES: [&str; 9] = [
    "season",
    "weekday",
    "yearday",
    "is_weekend",
    "is_holiday",
    "weekday_sin",
    "weekday_cos",
    "yearday_sin",
    "yearday_cos",
];

/// Calendar decomposition of a date, in [`DATE_FEATURES`] order. Weekday 0
/// is Monday.
pub fn expand_date(date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> Vec<f64> {
    let weekday = date.weekday().num_days_from_monday() as f64;
    let yearday = date.ordinal() as f64;
    let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
    let (ws, wc) = cyclical(weekday, 7.0);
    let (ys, yc) = cyclical(yearday, 365.25);
    vec![
        season(date.month()),
        weekday,
        yearday,
        weekend as u8 as f64,
        holidays.contains(&date) as u8 as f64,
        ws,
        wc,
        ys,
        yc,
    ]
}

/// `(sin 2πv/period, cos 2πv/period)`.
pub fn cyclical(value: f64, period: f64) -> (f64, f64) {
    (2.0 * PI * value / period).sin_cos()
}

pub const STATS: [&str; 5] = ["min", "max", "mean", "sd", "sum"];

/// min, max, mean, population standard deviation and sum of one group.
pub fn group_stats(name: &str, values: &[f64]) -> Result<[f64; 5], FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyGroup(name.to_string()));
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok([min, max, mean, var.sqrt(), sum])
}

/// Statistics for every named group, flattened as `<group>_<stat>`.
pub fn augment_stats(groups: &[(String, Vec<f64>)]) -> Result<Vec<(String, f64)>, FeatureError> {
    let mut out = Vec::with_capacity(groups.len() * STATS.len());
    for (name, values) in groups {
        let s = group_stats(name, values)?;
        out.extend(STATS.iter().zip(s).map(|(stat, v)| (format!("{name}_{stat}"), v)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatGroup {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Replaces a `YYYYMMDD` column by its calendar decomposition.
    DateExpand {
        column: String,
        #[serde(default)]
        holidays: Vec<String>,
    },
    /// Appends `<column>_sin` and `<column>_cos`.
    Cyclical { column: String, period: f64 },
    /// Appends per-group summary statistics.
    Stats { groups: Vec<StatGroup> },
}

/// An ordered list of transforms over named instance features. The output
/// schema is fixed once the input schema is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeaturePipeline {
    pub input_names: Vec<String>,
    pub steps: Vec<Transform>,
    /// Columns kept after selection, in output order; empty keeps all.
    #[serde(default)]
    pub kept_columns: Vec<String>,
    #[serde(default)]
    pub standardize: bool,
}

impl FeaturePipeline {
    pub fn new(input_names: Vec<String>, steps: Vec<Transform>) -> Self {
        FeaturePipeline { input_names, steps, kept_columns: Vec::new(), standardize: true }
    }

    fn find(names: &[String], col: &str) -> Result<usize, FeatureError> {
        names.iter().position(|n| n == col).ok_or_else(|| FeatureError::UnknownColumn(col.into()))
    }

    /// Applies every step to one feature vector; returns the engineered
    /// names and values before column selection.
    pub fn engineer(&self, values: &[f64]) -> Result<(Vec<String>, Vec<f64>), FeatureError> {
        if values.len() != self.input_names.len() {
            return Err(FeatureError::Width { expected: self.input_names.len(), got: values.len() });
        }
        let mut names = self.input_names.clone();
        let mut vals = values.to_vec();
        for step in &self.steps {
            match step {
                Transform::DateExpand { column, holidays } => {
                    let i = Self::find(&names, column)?;
                    let date = date_from_number(vals[i])?;
                    let hol = holidays.iter().map(|h| parse_date(h)).collect::<Result<_, _>>()?;
                    let expanded = expand_date(date, &hol);
                    names.remove(i);
                    vals.remove(i);
                    for (k, v) in DATE_FEATURES.iter().zip(expanded) {
                        names.push(format!("{column}_{k}"));
                        vals.push(v);
                    }
                }
                Transform::Cyclical { column, period } => {
                    let i = Self::find(&names, column)?;
                    let (s, c) = cyclical(vals[i], *period);
                    names.push(format!("{column}_sin"));
                    names.push(format!("{column}_cos"));
                    vals.push(s);
                    vals.push(c);
                }
                Transform::Stats { groups } => {
                    let mut gv = Vec::with_capacity(groups.len());
                    for g in groups {
                        let cols = g
                            .columns
                            .iter()
                            .map(|c| Self::find(&names, c).map(|i| vals[i]))
                            .collect::<Result<Vec<_>, _>>()?;
                        gv.push((g.name.clone(), cols));
                    }
                    for (n, v) in augment_stats(&gv)? {
                        names.push(n);
                        vals.push(v);
                    }
                }
            }
        }
        Ok((names, vals))
    }

    pub fn engineered_names(&self) -> Result<Vec<String>, FeatureError> {
        // Schema only depends on names; probe with a valid date placeholder.
        let probe: Vec<f64> = self
            .input_names
            .iter()
            .map(|n| {
                let is_date = self.steps.iter().any(
                    |s| matches!(s, Transform::DateExpand { column, .. } if column == n),
                );
                if is_date {
                    20000101.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(self.engineer(&probe)?.0)
    }

    pub fn output_names(&self) -> Result<Vec<String>, FeatureError> {
        if self.kept_columns.is_empty() {
            self.engineered_names()
        } else {
            Ok(self.kept_columns.clone())
        }
    }

    /// Engineered and selected feature vector.
    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        let (names, vals) = self.engineer(values)?;
        if self.kept_columns.is_empty() {
            return Ok(vals);
        }
        self.kept_columns
            .iter()
            .map(|c| Self::find(&names, c).map(|i| vals[i]))
            .collect()
    }

    /// Replaces every instance's features by their engineered form.
    pub fn apply_to_dataset(&self, ds: &Dataset) -> Result<Dataset, FeatureError> {
        if ds.feature_names != self.input_names {
            return Err(FeatureError::Width {
                expected: self.input_names.len(),
                got: ds.feature_names.len(),
            });
        }
        let mut out = ds.clone();
        out.feature_names = self.engineered_names()?;
        for f in out.features.values_mut() {
            *f = self.engineer(f)?.1;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let text = serde_json::to_string_pretty(self).expect("pipeline serializes");
        fs::write(path, text).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = fs::read_to_string(path)
            .map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FeatureError::Io(e.to_string()))
    }
}

/// Reads one ISO date per line; blank lines and `#` comments are skipped.
pub fn read_holidays(text: &str) -> Result<Vec<String>, FeatureError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_date(l).map(|d| d.format("%Y-%m-%d").to_string()))
        .collect()
}

/// A named choice of retained feature and configuration columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionScenario {
    pub name: String,
    pub kept_feature_columns: Vec<String>,
    pub kept_config_columns: Vec<String>,
}

impl SelectionScenario {
    /// Keeps every column.
    pub fn identity(ds: &Dataset) -> Self {
        SelectionScenario {
            name: "noFS".into(),
            kept_feature_columns: ds.feature_names.clone(),
            kept_config_columns: ds.config_names.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = fs::read_to_string(path)
            .map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FeatureError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let text = serde_json::to_string_pretty(self).expect("scenario serializes");
        fs::write(path, text).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 1e-300 || syy <= 1e-300 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks feature columns by `|corr(column, p_norm)|` and keeps them greedily,
/// skipping any column whose `|corr|` with an already kept column exceeds
/// `redundancy_cutoff`. Configuration columns are all retained.
pub fn select_by_correlation(
    ds: &Dataset,
    max_features: usize,
    redundancy_cutoff: f64,
) -> Result<SelectionScenario, FeatureError> {
    if ds.records.len() < 2 {
        return Err(FeatureError::TooFewRows);
    }
    // Canonical row order makes the sums independent of input order.
    let mut rows: Vec<_> = ds.records.iter().collect();
    rows.sort_by(|a, b| {
        (&a.instance_id, &a.config)
            .cmp(&(&b.instance_id, &b.config))
            .then(a.p_norm.unwrap_or(0.0).total_cmp(&b.p_norm.unwrap_or(0.0)))
    });
    let labels: Vec<f64> = rows
        .iter()
        .map(|r| r.p_norm.ok_or(FeatureError::TooFewRows))
        .collect::<Result<_, _>>()?;
    let columns: Vec<Vec<f64>> = (0..ds.feature_names.len())
        .map(|j| rows.iter().map(|r| ds.features[&r.instance_id][j]).collect())
        .collect();

    let varying: Vec<usize> = (0..columns.len())
        .filter(|&j| {
            let c = &columns[j];
            c.iter().any(|v| *v != c[0])
        })
        .collect();
    if varying.is_empty() {
        return Err(FeatureError::NoVariance);
    }
    let mut ranked: Vec<(usize, f64)> = varying
        .iter()
        .map(|&j| (j, pearson(&columns[j], &labels).map_or(0.0, f64::abs)))
        .collect();
    // Rounding keeps exactly tied columns (up to float noise) in index order.
    for r in &mut ranked {
        r.1 = (r.1 * 1e12).round() / 1e12;
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut kept: Vec<usize> = Vec::new();
    for (j, _) in ranked {
        if kept.len() >= max_features {
            break;
        }
        let redundant = kept.iter().any(|&k| {
            pearson(&columns[j], &columns[k]).is_some_and(|r| r.abs() > redundancy_cutoff)
        });
        if !redundant {
            kept.push(j);
        }
    }
    Ok(SelectionScenario {
        name: format!("corr{max_features}"),
        kept_feature_columns: kept.iter().map(|&j| ds.feature_names[j].clone()).collect(),
        kept_config_columns: ds.config_names.clone(),
    })
}

/// Projects the dataset onto the scenario's columns and merges duplicate rows.
pub fn apply_scenario(ds: &Dataset, scenario: &SelectionScenario) -> Result<Dataset, FeatureError> {
    for c in &scenario.kept_feature_columns {
        if !ds.feature_names.contains(c) {
            return Err(FeatureError::UnknownColumn(c.clone()));
        }
    }
    for c in &scenario.kept_config_columns {
        if !ds.config_names.contains(c) {
            return Err(FeatureError::UnknownColumn(c.clone()));
        }
    }
    Ok(dedup_group_average(ds, &scenario.kept_feature_columns, &scenario.kept_config_columns)?)
}

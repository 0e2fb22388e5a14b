//! Hyperparameter selection: randomized search scored by instance-grouped
//! k-fold cross-validation, nested inside an outer k-fold for an unbiased
//! error estimate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Split};
use crate::svr::{self, SvrError, SvrHyper, SvrModel, TrainOptions, TrainStats};

#[derive(Debug, Error)]
pub enum ModelSelError {
    #[error("need at least {needed} distinct instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no training rows")]
    EmptyInput,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Svr(#[from] SvrError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scoring metric. `Cmae(δ)` is the asymmetric loss with band width `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Mae,
    Cmae(f64),
}

impl Metric {
    pub fn score(&self, preds: &[f64], labels: &[f64]) -> Result<f64, SvrError> {
        match self {
            Metric::Mae => svr::mae(preds, labels),
            Metric::Cmae(d) => svr::cmae(preds, labels, *d),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mae => write!(f, "mae"),
            Metric::Cmae(d) => write!(f, "cmae{:02}", (d * 10.0).round() as i64),
        }
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Metric::Mae),
            "cmae02" => Ok(Metric::Cmae(0.2)),
            "cmae03" => Ok(Metric::Cmae(0.3)),
            "cmae04" => Ok(Metric::Cmae(0.4)),
            other => Err(format!("unknown metric `{other}` (expected mae, cmae02, cmae03 or cmae04)")),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampling ranges: `C` and `gamma` log-uniform, `epsilon` uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    #[serde(rename = "C")]
    pub c: (f64, f64),
    pub gamma: (f64, f64),
    pub epsilon: (f64, f64),
}

impl SearchSpace {
    /// Default ranges for inputs of dimension `dim`.
    pub fn for_dim(dim: usize) -> Self {
        let d = dim.max(1) as f64;
        SearchSpace { c: (1e-2, 1e3), gamma: (1e-4 / d, 1e2 / d), epsilon: (1e-4, 1e-1) }
    }

    pub fn validate(&self) -> Result<(), ModelSelError> {
        for (name, (lo, hi)) in [("C", self.c), ("gamma", self.gamma), ("epsilon", self.epsilon)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ModelSelError::InvalidSpace(format!("{name}: need lo < hi, got [{lo}, {hi}]")));
            }
            if name != "epsilon" && lo <= 0.0 || lo < 0.0 {
                return Err(ModelSelError::InvalidSpace(format!("{name}: lower end must be positive")));
            }
        }
        Ok(())
    }

    /// Draw `k` of a run seeded with `seed`; independent of how many draws
    /// the run makes in total.
    pub fn sample(&self, seed: u64, k: usize) -> SvrHyper {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            let (a, b) = (lo.ln(), hi.ln());
            (a + (b - a) * rng.gen::<f64>()).exp()
        };
        let c = log_uniform(&mut rng, self.c);
        let gamma = log_uniform(&mut rng, self.gamma);
        let epsilon = self.epsilon.0 + (self.epsilon.1 - self.epsilon.0) * rng.gen::<f64>();
        SvrHyper::new(c, epsilon, gamma)
    }
}

fn default_true() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub draws: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Standardize instance features inside every fit.
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// SMO stopping tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan { outer_folds: 5, inner_folds: 3, draws: 20, metric: Metric::Mae, seed: 0, standardize: true, tol: 1e-3 }
    }
}

impl CvPlan {
    pub fn validate(&self) -> Result<(), ModelSelError> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(ModelSelError::InvalidPlan("fold counts must be at least 2".into()));
        }
        if self.draws < 1 {
            return Err(ModelSelError::InvalidPlan("draws must be at least 1".into()));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { tol: self.tol, ..TrainOptions::default() }
    }
}

/// Model inputs and labels of a dataset, row-aligned, with the instance each
/// row belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRows {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub instances: Vec<String>,
    pub n_features: usize,
    pub columns: Vec<String>,
}

impl TrainingRows {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, ModelSelError> {
        let labels = ds.labels()?;
        Ok(TrainingRows {
            points: ds.records.iter().map(|r| ds.input_row(r)).collect(),
            labels,
            instances: ds.records.iter().map(|r| r.instance_id.clone()).collect(),
            n_features: ds.feature_names.len(),
            columns: ds.input_columns(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(self.columns.len(), Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingRows {
        TrainingRows {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
            n_features: self.n_features,
            columns: self.columns.clone(),
        }
    }

    pub fn distinct_instances(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.instances.clone();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Assigns every instance of `rows` to one of `k` folds: instances are sorted,
/// shuffled with `seed`, then dealt round-robin. Returns the row indices of
/// each fold.
pub fn instance_folds(rows: &TrainingRows, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ModelSelError> {
    let mut ids = rows.distinct_instances();
    if ids.len() < k {
        return Err(ModelSelError::TooFewInstances { needed: k, got: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let fold_of: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (row, id) in rows.instances.iter().enumerate() {
        folds[fold_of[id.as_str()]].push(row);
    }
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn fit_rows(rows: &TrainingRows, hyper: &SvrHyper, plan: &CvPlan) -> Result<(SvrModel, TrainStats), ModelSelError> {
    let (mut model, stats) =
        svr::fit(&rows.points, &rows.labels, rows.n_features, plan.standardize, hyper, &plan.train_options())?;
    model.input_columns = rows.columns.clone();
    Ok((model, stats))
}

fn score_rows(model: &SvrModel, rows: &TrainingRows, metric: Metric) -> Result<f64, ModelSelError> {
    let preds = rows.points.iter().map(|x| model.predict(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(metric.score(&preds, &rows.labels)?)
}

/// Mean over folds of the metric on the held-out fold.
pub fn cv_score(
    rows: &TrainingRows,
    folds: &[Vec<usize>],
    hyper: &SvrHyper,
    plan: &CvPlan,
) -> Result<f64, ModelSelError> {
    let mut total = 0.0;
    for fold in folds {
        let train = rows.subset(&complement(rows.len(), fold));
        let test = rows.subset(fold);
        let (model, _) = fit_rows(&train, hyper, plan)?;
        total += score_rows(&model, &test, plan.metric)?;
    }
    Ok(total / folds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: SvrHyper,
    pub best_draw: usize,
    /// Every draw with its inner CV score, in draw order.
    pub draws: Vec<(SvrHyper, f64)>,
}

/// Samples `draws` triples and returns the one with the lowest inner CV score;
/// the earliest draw wins ties.
pub fn random_search(
    rows: &TrainingRows,
    space: &SearchSpace,
    inner_folds: usize,
    draws: usize,
    plan: &CvPlan,
    fold_seed: u64,
) -> Result<SearchResult, ModelSelError> {
    space.validate()?;
    if draws < 1 {
        return Err(ModelSelError::InvalidPlan("draws must be at least 1".into()));
    }
    if rows.is_empty() {
        return Err(ModelSelError::EmptyInput);
    }
    let folds = instance_folds(rows, inner_folds, fold_seed)?;
    let scored = crate::par_map(draws, |k| {
        let h = space.sample(plan.seed, k);
        cv_score(rows, &folds, &h, plan).map(|s| (h, s))
    });
    let draws: Vec<(SvrHyper, f64)> = scored.into_iter().collect::<Result<_, _>>()?;
    let mut best_draw = 0;
    for (k, (_, s)) in draws.iter().enumerate() {
        if s.total_cmp(&draws[best_draw].1).is_lt() {
            best_draw = k;
        }
    }
    Ok(SearchResult { best: draws[best_draw].0, best_draw, draws })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub test_instances: Vec<String>,
    pub search: SearchResult,
    /// Metric of the refit winner on the outer test part.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcvResult {
    pub error_estimate: f64,
    pub metric: Metric,
    pub folds: Vec<FoldReport>,
}

/// Writes a CV report with columns `fold,draw,C,gamma,epsilon,score,metric,stage`.
/// Nested folds give `inner` rows (each draw's inner CV score) and one
/// `outer` row (the refit winner's test score); a final search over all
/// training rows gives `final` rows with fold `all`.
pub fn write_cv_report<W: Write>(
    out: W,
    metric: Metric,
    ncv: Option<&NcvResult>,
    final_search: Option<&SearchResult>,
) -> Result<(), ModelSelError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| ModelSelError::Io(std::io::Error::other(e));
    w.write_record(["fold", "draw", "C", "gamma", "epsilon", "score", "metric", "stage"]).map_err(io)?;
    let metric = metric.to_string();
    let mut row = |fold: &str, draw: usize, h: &SvrHyper, score: f64, stage: &str| {
        w.write_record([
            fold.to_string(),
            draw.to_string(),
            format!("{:e}", h.c),
            format!("{:e}", h.kernel.gamma),
            format!("{:e}", h.epsilon),
            format!("{:e}", score),
            metric.clone(),
            stage.to_string(),
        ])
        .map_err(io)
    };
    for f in ncv.map(|n| n.folds.as_slice()).unwrap_or_default() {
        let fold = f.fold.to_string();
        for (k, (h, s)) in f.search.draws.iter().enumerate() {
            row(&fold, k, h, *s, "inner")?;
        }
        row(&fold, f.search.best_draw, &f.search.best, f.score, "outer")?;
    }
    if let Some(fs) = final_search {
        for (k, (h, s)) in fs.draws.iter().enumerate() {
            row("all", k, h, *s, "final")?;
        }
    }
    w.flush()?;
    Ok(())
}

impl NcvResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ModelSelError> {
        write_cv_report(out, self.metric, Some(self), None)
    }
}

/// Outer k-fold over instances; each outer-train part runs a randomized
/// search, refits the winner and scores it on the outer-test part.
pub fn nested_cv(ds: &Dataset, space: &SearchSpace, plan: &CvPlan) -> Result<NcvResult, ModelSelError> {
    plan.validate()?;
    let rows = TrainingRows::from_dataset(ds)?;
    nested_cv_rows(&rows, space, plan)
}

pub fn nested_cv_rows(rows: &TrainingRows, space: &SearchSpace, plan: &CvPlan) -> Result<NcvResult, ModelSelError> {
    plan.validate()?;
    let outer = instance_folds(rows, plan.outer_folds, plan.seed)?;
    let mut folds = Vec::with_capacity(outer.len());
    for (f, test_idx) in outer.iter().enumerate() {
        let train = rows.subset(&complement(rows.len(), test_idx));
        let test = rows.subset(test_idx);
        let search = random_search(&train, space, plan.inner_folds, plan.draws, plan, inner_seed(plan.seed, f))?;
        let (model, _) = fit_rows(&train, &search.best, plan)?;
        let score = score_rows(&model, &test, plan.metric)?;
        folds.push(FoldReport { fold: f, test_instances: test.distinct_instances(), search, score });
    }
    let error_estimate = folds.iter().map(|f| f.score).sum::<f64>() / folds.len() as f64;
    Ok(NcvResult { error_estimate, metric: plan.metric, folds })
}

/// Seed for the inner folds of outer fold `f`.
pub fn inner_seed(seed: u64, f: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(f as u64 + 1)
}

/// Trains on every in-sample row of `ds`.
pub fn fit_final(ds: &Dataset, hyper: &SvrHyper, plan: &CvPlan) -> Result<(SvrModel, TrainStats), ModelSelError> {
    let is = if ds.split.is_empty() { ds.clone() } else { ds.filter_split(Split::InSample) };
    if is.records.is_empty() {
        return Err(ModelSelError::EmptyInput);
    }
    fit_rows(&TrainingRows::from_dataset(&is)?, hyper, plan)
}

/// Randomized search over all in-sample rows, then a final fit with the winner.
pub fn select_and_fit(
    ds: &Dataset,
    space: &SearchSpace,
    plan: &CvPlan,
) -> Result<(SvrModel, TrainStats, SearchResult), ModelSelError> {
    plan.validate()?;
    let is = if ds.split.is_empty() { ds.clone() } else { ds.filter_split(Split::InSample) };
    let rows = TrainingRows::from_dataset(&is)?;
    let search = random_search(&rows, space, plan.inner_folds, plan.draws, plan, plan.seed)?;
    let (model, stats) = fit_rows(&rows, &search.best, plan)?;
    Ok((model, stats, search))
}

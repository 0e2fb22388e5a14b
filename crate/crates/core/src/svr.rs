//! ε-insensitive support vector regression with a Gaussian kernel.
//!
//! Training solves the dual QP over `2s` box-constrained variables
//! `(α, α*)` with sequential minimal optimization: at every step the pair
//! of variables with the largest KKT violation is optimized analytically.
//! The resulting model is the kernel expansion
//! `p̄(x) = Σ βᵢ exp(−γ‖xᵢ − x‖²) + b` with `βᵢ = αᵢ − αᵢ*`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Standardizer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} training points")]
    TooFewPoints(usize),
    #[error("non-finite training label at row {0}")]
    NonFinite(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("delta must lie in (0, 0.5], got {0}")]
    BadDelta(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("model file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec { kind: KernelKind::Gaussian, gamma }
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        (-self.gamma * sq_dist(x, y)).exp()
    }
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−γ‖x − y‖²)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, SvrError> {
    if x.len() != y.len() {
        return Err(SvrError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    Ok(spec.eval_unchecked(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrHyper {
    #[serde(rename = "C")]
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
}

impl SvrHyper {
    pub fn new(c: f64, epsilon: f64, gamma: f64) -> Self {
        SvrHyper { c, epsilon, kernel: KernelSpec::gaussian(gamma) }
    }

    pub fn validate(&self) -> Result<(), SvrError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvrError::InvalidHyper(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SvrError::InvalidHyper(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.kernel.gamma > 0.0 && self.kernel.gamma.is_finite()) {
            return Err(SvrError::InvalidHyper(format!(
                "gamma must be > 0, got {}",
                self.kernel.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget in units of `s` pair updates; `None` means `10·s`.
    pub max_passes: Option<usize>,
    /// Kernel-row cache bound in megabytes.
    pub cache_mb: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { tol: 1e-3, max_passes: None, cache_mb: 512 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub iterations: usize,
    pub converged: bool,
    /// Final value of `½ aᵀQa + pᵀa` (the minimized dual).
    pub dual_objective: f64,
    /// Final maximal violation `m(a) − M(a)`.
    pub max_violation: f64,
    /// `βᵢ` for every training point, including zeros.
    pub weights: Vec<f64>,
}

/// A trained performance map. Support points are stored in the scaled input
/// space the kernel sees; `scaler` maps raw inputs there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub hyper: SvrHyper,
    pub bias: f64,
    pub support_points: Vec<Vec<f64>>,
    pub dual_weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Standardizer>,
    /// Names of the input columns, instance features first.
    #[serde(default)]
    pub input_columns: Vec<String>,
    /// Number of leading input dimensions that are instance features.
    #[serde(default)]
    pub n_features: usize,
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.support_points.first().map_or(
            self.input_columns.len().max(self.scaler.as_ref().map_or(0, |s| s.len())),
            |p| p.len(),
        )
    }

    pub fn gamma(&self) -> f64 {
        self.hyper.kernel.gamma
    }

    /// Maps a raw input vector into the kernel's input space.
    pub fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        match &self.scaler {
            Some(s) => s.transform(x),
            None => x.to_vec(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SvrError> {
        if !self.support_points.is_empty() && x.len() != self.dim() {
            return Err(SvrError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.predict_scaled(&self.scale_input(x)))
    }

    /// Prediction for an input already in the scaled space.
    pub fn predict_scaled(&self, z: &[f64]) -> f64 {
        let k = &self.hyper.kernel;
        self.support_points
            .iter()
            .zip(&self.dual_weights)
            .map(|(sv, b)| b * k.eval_unchecked(sv, z))
            .sum::<f64>()
            + self.bias
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SvrError> {
        serde_json::from_str(text).map_err(|e| SvrError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SvrError> {
        fs::write(path, self.to_json()).map_err(|e| SvrError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SvrError> {
        let text =
            fs::read_to_string(path).map_err(|e| SvrError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// LRU cache of Gram-matrix rows.
struct KernelCache<'a> {
    points: &'a [Vec<f64>],
    kernel: KernelSpec,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
    order: BTreeMap<u64, usize>,
    clock: u64,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(points: &'a [Vec<f64>], kernel: KernelSpec, cache_mb: usize) -> Self {
        let row_bytes = (points.len() * 8).max(1);
        let capacity = ((cache_mb << 20) / row_bytes).max(2);
        KernelCache {
            points,
            kernel,
            rows: HashMap::new(),
            order: BTreeMap::new(),
            clock: 0,
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        let now = self.clock;
        if let Some((row, stamp)) = self.rows.get_mut(&i) {
            self.order.remove(stamp);
            *stamp = now;
            self.order.insert(now, i);
            return Rc::clone(row);
        }
        if self.rows.len() >= self.capacity {
            if let Some((&oldest, &victim)) = self.order.iter().next() {
                self.order.remove(&oldest);
                self.rows.remove(&victim);
            }
        }
        let xi = &self.points[i];
        let row: Rc<[f64]> = self
            .points
            .iter()
            .map(|xj| self.kernel.eval_unchecked(xi, xj))
            .collect();
        self.rows.insert(i, (Rc::clone(&row), now));
        self.order.insert(now, i);
        row
    }
}

/// Trains an ε-SVR on points already in the kernel's input space.
pub fn train(
    points: &[Vec<f64>],
    labels: &[f64],
    hyper: &SvrHyper,
    opts: &TrainOptions,
) -> Result<(SvrModel, TrainStats), SvrError> {
    hyper.validate()?;
    if points.len() != labels.len() {
        return Err(SvrError::LengthMismatch(points.len(), labels.len()));
    }
    if points.len() < 2 {
        return Err(SvrError::TooFewPoints(2));
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(SvrError::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    if let Some(i) = labels.iter().position(|y| !y.is_finite()) {
        return Err(SvrError::NonFinite(i));
    }

    let s = points.len();
    let n = 2 * s;
    let c = hyper.c;
    let eps = hyper.epsilon;
    let sign = |t: usize| if t < s { 1.0 } else { -1.0 };
    let mut a = vec![0.0f64; n];
    // Gradient of ½aᵀQa + pᵀa, starting from a = 0.
    let mut grad: Vec<f64> = (0..n)
        .map(|t| if t < s { eps - labels[t] } else { eps + labels[t - s] })
        .collect();
    let mut cache = KernelCache::new(points, hyper.kernel, opts.cache_mb);

    let max_passes = opts.max_passes.unwrap_or(10 * s);
    let max_iter = max_passes.saturating_mul(s).max(1);
    let mut iterations = 0;
    let mut converged = false;
    let mut violation;

    loop {
        // i ∈ I_up maximizing −y G, j ∈ I_low minimizing −y G; first index wins ties.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut i_sel = usize::MAX;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            let y = sign(t);
            let v = -y * grad[t];
            let up = if y > 0.0 { a[t] < c } else { a[t] > 0.0 };
            let low = if y > 0.0 { a[t] > 0.0 } else { a[t] < c };
            if up && v > gmax {
                gmax = v;
                i_sel = t;
            }
            if low && v < gmin {
                gmin = v;
                j_sel = t;
            }
        }
        violation = gmax - gmin;
        if i_sel == usize::MAX || j_sel == usize::MAX || violation < opts.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (yi, yj) = (sign(i), sign(j));
        let row_i = cache.row(i % s);
        let row_j = cache.row(j % s);
        let kij = row_i[j % s];
        let qij = yi * yj * kij;
        let (old_ai, old_aj) = (a[i], a[j]);

        if yi != yj {
            let mut quad = 2.0 + 2.0 * qij;
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let mut quad = 2.0 - 2.0 * qij;
            if quad <= 0.0 {
                quad = 1e-12;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }

        let di = (a[i] - old_ai) * yi;
        let dj = (a[j] - old_aj) * yj;
        if di == 0.0 && dj == 0.0 {
            continue;
        }
        for t in 0..n {
            let k = t % s;
            grad[t] += sign(t) * (row_i[k] * di + row_j[k] * dj);
        }
    }

    if !converged {
        log::warn!(
            "SMO stopped after {iterations} iterations with violation {violation:.3e} (tol {:.1e})",
            opts.tol
        );
    }

    // Bias: average over free variables, else midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    for t in 0..n {
        let y = sign(t);
        let yg = y * grad[t];
        if a[t] >= c {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };

    let dual_objective: f64 = (0..n)
        .map(|t| {
            let p = if t < s { eps - labels[t] } else { eps + labels[t - s] };
            0.5 * a[t] * (grad[t] + p)
        })
        .sum();

    let weights: Vec<f64> = (0..s).map(|i| a[i] - a[i + s]).collect();
    let mut support_points = Vec::new();
    let mut dual_weights = Vec::new();
    for (i, &beta) in weights.iter().enumerate() {
        if beta != 0.0 {
            support_points.push(points[i].clone());
            dual_weights.push(beta);
        }
    }

    let model = SvrModel {
        hyper: *hyper,
        bias: -rho,
        support_points,
        dual_weights,
        scaler: None,
        input_columns: Vec::new(),
        n_features: 0,
    };
    Ok((
        model,
        TrainStats { iterations, converged, dual_objective, max_violation: violation.max(0.0), weights },
    ))
}

/// Fits a standardizer on the first `n_features` columns (when `standardize`
/// is set), then trains on the scaled points. The returned model accepts raw
/// inputs.
pub fn fit(
    points: &[Vec<f64>],
    labels: &[f64],
    n_features: usize,
    standardize: bool,
    hyper: &SvrHyper,
    opts: &TrainOptions,
) -> Result<(SvrModel, TrainStats), SvrError> {
    if points.is_empty() {
        return Err(SvrError::TooFewPoints(2));
    }
    let scaler = if standardize && n_features > 0 {
        Some(Standardizer::fit(points, n_features))
    } else {
        None
    };
    let scaled: Vec<Vec<f64>> = match &scaler {
        Some(s) => points.iter().map(|p| s.transform(p)).collect(),
        None => points.to_vec(),
    };
    let (mut model, stats) = train(&scaled, labels, hyper, opts)?;
    model.scaler = scaler;
    model.n_features = n_features;
    Ok((model, stats))
}

/// Dual objective `½ βᵀKβ − yᵀβ + ε Σ|βᵢ|` of signed weights over the full
/// training set (zero weights allowed).
pub fn dual_objective(points: &[Vec<f64>], labels: &[f64], beta: &[f64], hyper: &SvrHyper) -> f64 {
    let k = &hyper.kernel;
    let mut quad = 0.0;
    for i in 0..points.len() {
        if beta[i] == 0.0 {
            continue;
        }
        for j in 0..points.len() {
            quad += beta[i] * beta[j] * k.eval_unchecked(&points[i], &points[j]);
        }
    }
    let lin: f64 = beta.iter().zip(labels).map(|(b, y)| b * y).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    0.5 * quad - lin + hyper.epsilon * l1
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KktReport {
    pub worst_free: f64,
    pub worst_zero: f64,
    pub worst_bound: f64,
    pub weight_sum: f64,
    pub max_abs_weight: f64,
}

impl KktReport {
    pub fn holds(&self, tol: f64, c: f64) -> bool {
        self.worst_free <= tol
            && self.worst_zero <= tol
            && self.worst_bound <= tol
            && self.weight_sum.abs() <= 1e-8
            && self.max_abs_weight <= c + 1e-12
    }
}

/// Measures how far a model trained on `points` is from the ε-SVR KKT
/// conditions. `beta` holds one weight per training point.
pub fn kkt_report(model: &SvrModel, points: &[Vec<f64>], labels: &[f64], beta: &[f64]) -> KktReport {
    let c = model.hyper.c;
    let eps = model.hyper.epsilon;
    let edge = 1e-12 * c.max(1.0);
    let mut r = KktReport::default();
    for ((x, y), b) in points.iter().zip(labels).zip(beta) {
        let resid = (model.predict_scaled(x) - y).abs();
        let ab = b.abs();
        if ab <= edge {
            r.worst_zero = r.worst_zero.max(resid - eps);
        } else if ab >= c - edge {
            r.worst_bound = r.worst_bound.max(eps - resid);
        } else {
            r.worst_free = r.worst_free.max((resid - eps).abs());
        }
        r.max_abs_weight = r.max_abs_weight.max(ab);
    }
    r.weight_sum = beta.iter().sum();
    r
}

fn check_lengths(preds: &[f64], labels: &[f64]) -> Result<(), SvrError> {
    if preds.len() != labels.len() {
        return Err(SvrError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(SvrError::EmptyInput);
    }
    Ok(())
}

/// `Σ |pᵢ − p̄ᵢ|`: a sum over the sample, not a mean.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64, SvrError> {
    check_lengths(preds, labels)?;
    Ok(preds.iter().zip(labels).map(|(p, y)| (y - p).abs()).sum())
}

/// The asymmetric loss `L_δ(p, p̄)` for label `p` and prediction `p̄`.
/// Cases are tried in order and the first match wins; the middle-band case
/// is signed.
pub fn cmae_term(label: f64, pred: f64, delta: f64) -> f64 {
    let (p, q) = (label, pred);
    if p <= delta && q > p {
        (q - p) * (1.0 + 1.0 / (1.0 + (p - q).exp()))
    } else if p >= 1.0 - delta && q < p {
        (p - q) * (1.0 + 1.0 / (1.0 + (q - p).exp()))
    } else if delta <= p && p <= 1.0 - delta {
        p - q
    } else {
        0.0
    }
}

fn check_delta(delta: f64) -> Result<(), SvrError> {
    if delta > 0.0 && delta <= 0.5 {
        Ok(())
    } else {
        Err(SvrError::BadDelta(delta))
    }
}

/// `Σ L_δ(pᵢ, p̄ᵢ)`.
pub fn cmae(preds: &[f64], labels: &[f64], delta: f64) -> Result<f64, SvrError> {
    check_lengths(preds, labels)?;
    check_delta(delta)?;
    Ok(preds.iter().zip(labels).map(|(q, p)| cmae_term(*p, *q, delta)).sum())
}

/// Variant of [`cmae`] taking the absolute value of the middle-band case so
/// over-predictions there cannot cancel other terms. Not the original metric.
pub fn cmae_abs(preds: &[f64], labels: &[f64], delta: f64) -> Result<f64, SvrError> {
    check_lengths(preds, labels)?;
    check_delta(delta)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(q, p)| {
            let v = cmae_term(*p, *q, delta);
            let middle = !(*p <= delta && q > p) && !(*p >= 1.0 - delta && q < p);
            if middle {
                v.abs()
            } else {
                v
            }
        })
        .sum())
}

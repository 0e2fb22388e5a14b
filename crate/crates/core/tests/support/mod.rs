//! Shared test helpers: random problem generators and an independent dual QP
//! solver used as an oracle for the SMO trainer.

#![allow(dead_code)]

use perfmap_core::configspace::{ConfigurationSpace, LinearConstraint, Parameter, Relation, Term};
use perfmap_core::features::Standardizer;
use perfmap_core::svr::{SvrHyper, SvrModel};
use rand::Rng;

pub fn rbf(gamma: f64, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

pub fn gram(points: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    points.iter().map(|x| points.iter().map(|y| rbf(gamma, x, y)).collect()).collect()
}

/// `½ βᵀKβ − yᵀβ + ε Σ|βᵢ|`, evaluated directly.
pub fn dual_value(k: &[Vec<f64>], y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * k[i][j] * beta[j];
        }
    }
    0.5 * quad - y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + eps * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Euclidean projection onto `{z ∈ [0, c]^{2n} : Σ z[..n] − Σ z[n..] = 0}` by
/// bisection on the multiplier of the equality.
fn project(v: &[f64], n: usize, c: f64) -> Vec<f64> {
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    let at = |lam: f64| -> (Vec<f64>, f64) {
        let z: Vec<f64> = v.iter().enumerate().map(|(i, x)| (x - lam * sign(i)).clamp(0.0, c)).collect();
        let s = z.iter().enumerate().map(|(i, x)| sign(i) * x).sum();
        (z, s)
    };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // The signed sum is non-increasing in the multiplier.
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Minimizes the split-variable ε-SVR dual over `(α, α*)` with accelerated
/// projected gradient and gradient-based restarts. Returns `β = α − α*`.
pub fn qp_oracle(k: &[Vec<f64>], y: &[f64], eps: f64, c: f64, max_iter: usize) -> Vec<f64> {
    let n = y.len();
    // Upper bound on the largest eigenvalue of K by the row-sum norm.
    let lk = k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / (2.0 * lk);
    let grad = |z: &[f64]| -> Vec<f64> {
        let beta: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
        let kb: Vec<f64> = k.iter().map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = kb[i] + eps - y[i];
            g[n + i] = -kb[i] + eps + y[i];
        }
        g
    };
    let value = |z: &[f64]| {
        let beta: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
        dual_value(k, y, 0.0, &beta) + eps * z.iter().sum::<f64>()
    };
    let mut x = vec![0.0; 2 * n];
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut best = value(&x);
    let mut still = 0;
    for _ in 0..max_iter {
        let g = grad(&yk);
        let cand: Vec<f64> = yk.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let xn = project(&cand, n, c);
        // Restart momentum when it points uphill.
        let uphill: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        let tn = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        yk = if uphill > 0.0 {
            xn.clone()
        } else {
            xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect()
        };
        t = tn;
        x = xn;
        let v = value(&x);
        if v < best - 1e-15 * best.abs().max(1.0) {
            best = v;
            still = 0;
        } else {
            still += 1;
            if still > 2000 {
                break;
            }
        }
    }
    (0..n).map(|i| x[i] - x[n + i]).collect()
}

pub struct KktCheck {
    pub max_violation: f64,
    pub sum_beta: f64,
}

/// Largest violation of the ε-SVR optimality conditions given signed weights
/// and the intercept, computed from scratch.
pub fn kkt_check(k: &[Vec<f64>], y: &[f64], beta: &[f64], bias: f64, eps: f64, c: f64) -> KktCheck {
    let n = y.len();
    let inner = 1e-9 * c;
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| beta[j] * k[i][j]).sum::<f64>() + bias;
        let r = y[i] - f;
        let b = beta[i];
        let v = if b.abs() <= inner {
            (r.abs() - eps).max(0.0)
        } else if b.abs() >= c - inner {
            (eps - b.signum() * r).max(0.0)
        } else {
            (b.signum() * r - eps).abs()
        };
        worst = worst.max(v).max((b.abs() - c).max(0.0));
    }
    KktCheck { max_violation: worst, sum_beta: beta.iter().sum() }
}

/// A space with between `lo` and `hi` configurations before constraints,
/// plus `n_constraints` random linear constraints that all hold at one
/// reference configuration, so the space is never empty.
pub fn random_space<R: Rng>(rng: &mut R, lo: u128, hi: u128, n_constraints: usize) -> ConfigurationSpace {
    let sizes = loop {
        let mut sizes = Vec::new();
        let mut card: u128 = 1;
        loop {
            let s = rng.gen_range(2..=5usize);
            if card * s as u128 > hi {
                break;
            }
            sizes.push(s);
            card *= s as u128;
            if card >= lo && rng.gen_bool(0.35) {
                break;
            }
        }
        if card >= lo {
            break sizes;
        }
    };
    let params: Vec<Parameter> = sizes
        .iter()
        .enumerate()
        .map(|(p, &s)| {
            let vals: Vec<String> = (0..s).map(|v| format!("v{v}")).collect();
            let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
            Parameter::new(format!("p{p}"), &refs)
        })
        .collect();
    let reference: Vec<usize> = sizes.iter().map(|&s| rng.gen_range(0..s)).collect();
    let mut constraints = Vec::new();
    for _ in 0..n_constraints {
        let n_terms = rng.gen_range(1..=sizes.len().min(4));
        let mut used = std::collections::BTreeSet::new();
        let mut terms = Vec::new();
        let mut lhs = 0.0;
        while terms.len() < n_terms {
            let p = rng.gen_range(0..sizes.len());
            let v = rng.gen_range(0..sizes[p]);
            if !used.insert((p, v)) {
                continue;
            }
            let coef = [-2.0, -1.0, 1.0, 2.0, 3.0][rng.gen_range(0..5)];
            if reference[p] == v {
                lhs += coef;
            }
            terms.push(Term { param: format!("p{p}"), value: format!("v{v}"), coef });
        }
        let (relation, rhs) = match rng.gen_range(0..3) {
            0 => (Relation::Le, lhs + rng.gen_range(0..=1) as f64),
            1 => (Relation::Ge, lhs - rng.gen_range(0..=1) as f64),
            _ => (Relation::Eq, lhs),
        };
        constraints.push(LinearConstraint { terms, relation, rhs });
    }
    ConfigurationSpace::new(params, constraints).expect("generated space is valid")
}

/// A model over `n_features` instance features and the encoding of `space`,
/// as if trained: random support points (mostly one-hot, some fractional in
/// the configuration part), signed weights and intercept, optional scaler.
pub fn random_model<R: Rng>(rng: &mut R, space: &ConfigurationSpace, n_features: usize, s: usize) -> SvrModel {
    let params = space.parameters();
    let bits = space.encoding_len();
    let support_points: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let mut x: Vec<f64> = (0..n_features).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if rng.gen_bool(0.2) {
                x.extend((0..bits).map(|_| rng.gen::<f64>()));
            } else {
                let choices: Vec<usize> = params.iter().map(|p| rng.gen_range(0..p.values.len())).collect();
                x.extend(space.from_choices(choices).encoding().iter().map(|&b| b as f64));
            }
            x
        })
        .collect();
    let scaler = (n_features > 0 && rng.gen_bool(0.5)).then(|| Standardizer {
        mean: (0..n_features).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        scale: (0..n_features).map(|_| rng.gen_range(0.5..3.0)).collect(),
    });
    let mut input_columns: Vec<String> = (0..n_features).map(|j| format!("f{j}")).collect();
    input_columns.extend(space.bit_names());
    SvrModel {
        hyper: SvrHyper::new(1.0, 0.1, 10f64.powf(rng.gen_range(-1.7..0.3))),
        bias: rng.gen_range(-1.0..1.0),
        support_points,
        dual_weights: (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        scaler,
        input_columns,
        n_features,
    }
}

//! Configuration search: minimize a trained Gaussian-kernel map over the
//! feasible configurations of a space, for fixed instance features.
//!
//! For a binary configuration `c` the squared distance to a support point
//! splits as `‖fᵢ − f̄‖² + ‖cᵢ − c‖²`, and the second part is a sum over the
//! one-hot blocks. With `ãᵢ = βᵢ exp(−γ‖fᵢ − f̄‖²)` precomputed, the objective is
//!
//! ```text
//! Σᵢ ãᵢ exp(−γ Σₚ dᵢₚ(cₚ)) + b
//! ```
//!
//! where `dᵢₚ(v)` is the distance contributed by block `p` taking value `v`
//! (the Hamming distance over that block when `cᵢ` is binary).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::configspace::{Configuration, ConfigurationSpace, Relation, FEASIBILITY_TOL};
use crate::svr::{sq_dist, SvrModel};

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 1_000_000;
pub const DEFAULT_TIME_LIMIT_S: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsspError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("configuration is infeasible for this space")]
    InfeasibleConfig,
    #[error("space has {0} configurations, above the enumeration budget {1}")]
    BudgetExceeded(u128, u128),
    #[error("no feasible configuration exists")]
    EmptySpace,
    #[error("no feasible start found in {0} restarts")]
    NoFeasibleStart(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    GlobalOptimal,
    Local,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::GlobalOptimal => "global_optimal",
            SolveStatus::Local => "local",
            SolveStatus::TimeLimit => "time_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsspSolution {
    pub config: Configuration,
    pub objective: f64,
    pub status: SolveStatus,
    pub nodes_or_moves: u64,
    pub elapsed_s: f64,
}

impl CsspSolution {
    /// Upgrades a heuristic solution to `global_optimal` when it matches a
    /// certified optimum.
    pub fn certify(&mut self, global: &CsspSolution) {
        if global.status == SolveStatus::GlobalOptimal && (self.objective - global.objective).abs() <= 1e-9 {
            self.status = SolveStatus::GlobalOptimal;
        }
    }

    /// `name=value` lines followed by objective, status and statistics.
    pub fn render(&self, space: &ConfigurationSpace) -> String {
        let mut out = String::new();
        for (k, v) in space.assignment(&self.config) {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "objective={:.17e}", self.objective);
        let _ = writeln!(out, "status={}", self.status.as_str());
        let _ = writeln!(out, "nodes_or_moves={}", self.nodes_or_moves);
        let _ = writeln!(out, "elapsed_s={:.6}", self.elapsed_s);
        let _ = writeln!(out, "encoding={}", self.config.encoding_string());
        out
    }
}

/// The search problem for one query instance. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CsspProblem {
    space: ConfigurationSpace,
    gamma: f64,
    bias: f64,
    /// Encoding bit index of each configuration input of the model.
    config_columns: Vec<usize>,
    /// Merged coefficients `ãᵢ`, one per distinct support configuration.
    coefs: Vec<f64>,
    support_configs: Vec<Vec<f64>>,
    /// `d[i * n_values + offset(p) + v]`.
    dist: Vec<f64>,
    n_values: usize,
}

impl CsspProblem {
    pub fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefs
    }

    pub fn support_configs(&self) -> &[Vec<f64>] {
        &self.support_configs
    }

    pub fn config_columns(&self) -> &[usize] {
        &self.config_columns
    }

    pub fn n_terms(&self) -> usize {
        self.coefs.len()
    }

    #[inline]
    fn d(&self, term: usize, param: usize, value: usize) -> f64 {
        self.dist[term * self.n_values + self.space.offsets()[param] + value]
    }

    fn term_distance(&self, term: usize, choices: &[usize]) -> f64 {
        choices.iter().enumerate().map(|(p, &v)| self.d(term, p, v)).sum()
    }

    fn eval_choices(&self, choices: &[usize]) -> f64 {
        (0..self.coefs.len())
            .map(|i| self.coefs[i] * (-self.gamma * self.term_distance(i, choices)).exp())
            .sum::<f64>()
            + self.bias
    }

    /// Model input for the query features and a configuration, as `predict`
    /// expects it.
    pub fn model_input(&self, raw_features: &[f64], config: &Configuration) -> Vec<f64> {
        let mut x = raw_features.to_vec();
        x.extend(self.config_columns.iter().map(|&b| config.encoding()[b] as f64));
        x
    }
}

/// Builds the problem when the model's configuration inputs are the full
/// encoding of `space`, in order.
pub fn build_problem(
    model: &SvrModel,
    space: &ConfigurationSpace,
    query_features: &[f64],
) -> Result<CsspProblem, CsspError> {
    let cols: Vec<usize> = (0..space.encoding_len()).collect();
    build_problem_with_columns(model, space, query_features, &cols)
}

/// Resolves configuration inputs from the model's column names against the
/// space's bit names.
pub fn config_columns_by_name(model: &SvrModel, space: &ConfigurationSpace) -> Result<Vec<usize>, CsspError> {
    let bits = space.bit_names();
    let index: HashMap<&str, usize> = bits.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    model.input_columns[model.n_features..]
        .iter()
        .map(|name| {
            index
                .get(name.as_str())
                .copied()
                .ok_or_else(|| CsspError::DimensionMismatch(format!("model column `{name}` is not in the space")))
        })
        .collect()
}

/// `query_features` are raw (unscaled) instance features; `config_columns`
/// maps each trailing model input to an encoding bit of `space`.
pub fn build_problem_with_columns(
    model: &SvrModel,
    space: &ConfigurationSpace,
    query_features: &[f64],
    config_columns: &[usize],
) -> Result<CsspProblem, CsspError> {
    let nf = query_features.len();
    let dim = nf + config_columns.len();
    if !model.support_points.is_empty() && model.dim() != dim {
        return Err(CsspError::DimensionMismatch(format!(
            "model expects {} inputs, query gives {nf} features + {} configuration bits",
            model.dim(),
            config_columns.len()
        )));
    }
    if let Some(&b) = config_columns.iter().find(|&&b| b >= space.encoding_len()) {
        return Err(CsspError::DimensionMismatch(format!("bit {b} outside the encoding")));
    }
    if let Some(s) = &model.scaler {
        if s.len() > nf {
            return Err(CsspError::DimensionMismatch("scaler covers configuration inputs".into()));
        }
    }
    let mut padded = query_features.to_vec();
    padded.resize(dim, 0.0);
    let fbar = model.scale_input(&padded);
    let gamma = model.gamma();

    // Merge support points with identical configuration parts.
    let mut coefs: Vec<f64> = Vec::new();
    let mut configs: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for (sv, beta) in model.support_points.iter().zip(&model.dual_weights) {
        let a = beta * (-gamma * sq_dist(&sv[..nf], &fbar[..nf])).exp();
        let c: Vec<f64> = sv[nf..].to_vec();
        let key: Vec<u64> = c.iter().map(|v| v.to_bits()).collect();
        match seen.get(&key) {
            Some(&k) => coefs[k] += a,
            None => {
                seen.insert(key, coefs.len());
                coefs.push(a);
                configs.push(c);
            }
        }
    }

    // Column position within the model for every encoding bit, if kept.
    let mut kept: Vec<Option<usize>> = vec![None; space.encoding_len()];
    for (k, &b) in config_columns.iter().enumerate() {
        kept[b] = Some(k);
    }
    let n_values = space.encoding_len();
    let mut dist = vec![0.0; coefs.len() * n_values];
    for (i, c) in configs.iter().enumerate() {
        for (p, param) in space.parameters().iter().enumerate() {
            let off = space.offsets()[p];
            for v in 0..param.values.len() {
                let mut d = 0.0;
                for bit in off..off + param.values.len() {
                    if let Some(k) = kept[bit] {
                        let x = if bit == off + v { 1.0 } else { 0.0 };
                        d += (c[k] - x) * (c[k] - x);
                    }
                }
                dist[i * n_values + off + v] = d;
            }
        }
    }

    Ok(CsspProblem {
        space: space.clone(),
        gamma,
        bias: model.bias,
        config_columns: config_columns.to_vec(),
        coefs,
        support_configs: configs,
        dist,
        n_values,
    })
}

/// Value of the learned map at a feasible configuration.
pub fn objective(problem: &CsspProblem, config: &Configuration) -> Result<f64, CsspError> {
    if config.encoding().len() != problem.space.encoding_len() {
        return Err(CsspError::DimensionMismatch("configuration from another space".into()));
    }
    if !problem.space.is_feasible(config) {
        return Err(CsspError::InfeasibleConfig);
    }
    Ok(problem.eval_choices(config.choices()))
}

fn better(obj: f64, enc: &[u8], best: Option<&(f64, Configuration)>) -> bool {
    match best {
        None => true,
        Some((b, cfg)) => match obj.partial_cmp(b) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => enc < cfg.encoding(),
            _ => false,
        },
    }
}

/// Exact argmin by enumeration; ties go to the lexicographically smallest
/// encoding.
pub fn solve_enumerate(problem: &CsspProblem) -> Result<CsspSolution, CsspError> {
    solve_enumerate_with_budget(problem, DEFAULT_ENUMERATION_BUDGET)
}

pub fn solve_enumerate_with_budget(problem: &CsspProblem, budget: u128) -> Result<CsspSolution, CsspError> {
    let watch = Stopwatch::start(f64::INFINITY);
    let card = problem.space.cardinality();
    if card > budget {
        return Err(CsspError::BudgetExceeded(card, budget));
    }
    let mut best: Option<(f64, Configuration)> = None;
    let mut count = 0u64;
    for cfg in problem.space.enumerate() {
        count += 1;
        let obj = problem.eval_choices(cfg.choices());
        if better(obj, cfg.encoding(), best.as_ref()) {
            best = Some((obj, cfg));
        }
    }
    let (objective, config) = best.ok_or(CsspError::EmptySpace)?;
    Ok(CsspSolution {
        config,
        objective,
        status: SolveStatus::GlobalOptimal,
        nodes_or_moves: count,
        elapsed_s: watch.elapsed_s(),
    })
}

/// A node visited by branch-and-bound: the value fixed for each parameter
/// (`None` when free) and its lower bound.
pub struct NodeVisit<'a> {
    pub fixed: &'a [Option<usize>],
    pub bound: f64,
}

struct Bnb<'a, 'o> {
    p: &'a CsspProblem,
    order: Vec<usize>,
    /// `lo[k * s + i]`, `hi[k * s + i]`: sum over blocks `order[k..]` of the
    /// smallest / largest per-block distance of term `i`.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Per constraint, suffix sums of the min / max block contributions.
    con_lo: Vec<Vec<f64>>,
    con_hi: Vec<Vec<f64>>,
    con_fixed: Vec<f64>,
    fixed: Vec<Option<usize>>,
    choices: Vec<usize>,
    best: Option<(f64, Configuration)>,
    nodes: u64,
    watch: Stopwatch,
    stopped: bool,
    observer: Option<&'o mut dyn FnMut(&NodeVisit)>,
}

impl<'a, 'o> Bnb<'a, 'o> {
    fn new(p: &'a CsspProblem, time_limit_s: f64, observer: Option<&'o mut dyn FnMut(&NodeVisit)>) -> Self {
        let space = &p.space;
        let np = space.parameters().len();
        let s = p.coefs.len();
        let sizes: Vec<usize> = space.parameters().iter().map(|q| q.values.len()).collect();

        let range = |i: usize, q: usize| {
            let ds = (0..sizes[q]).map(|v| p.d(i, q, v));
            let mn = ds.clone().fold(f64::INFINITY, f64::min);
            let mx = ds.fold(f64::NEG_INFINITY, f64::max);
            (mn, mx)
        };
        let mut influence: Vec<(usize, f64)> = (0..np)
            .map(|q| {
                let inf = (0..s)
                    .map(|i| {
                        let (mn, mx) = range(i, q);
                        p.coefs[i].abs() * (mx - mn)
                    })
                    .sum();
                (q, inf)
            })
            .collect();
        influence.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let order: Vec<usize> = influence.into_iter().map(|(q, _)| q).collect();

        let mut lo = vec![0.0; (np + 1) * s];
        let mut hi = vec![0.0; (np + 1) * s];
        for k in (0..np).rev() {
            for i in 0..s {
                let (mn, mx) = range(i, order[k]);
                lo[k * s + i] = lo[(k + 1) * s + i] + mn;
                hi[k * s + i] = hi[(k + 1) * s + i] + mx;
            }
        }

        let cons = space.constraints();
        let mut con_lo = Vec::with_capacity(cons.len());
        let mut con_hi = Vec::with_capacity(cons.len());
        for c in cons {
            let mut l = vec![0.0; np + 1];
            let mut h = vec![0.0; np + 1];
            for k in (0..np).rev() {
                let q = order[k];
                let vals = (0..sizes[q]).map(|v| c.contribution(q, v));
                l[k] = l[k + 1] + vals.clone().fold(f64::INFINITY, f64::min);
                h[k] = h[k + 1] + vals.fold(f64::NEG_INFINITY, f64::max);
            }
            con_lo.push(l);
            con_hi.push(h);
        }

        Bnb {
            p,
            order,
            lo,
            hi,
            con_fixed: vec![0.0; cons.len()],
            con_lo,
            con_hi,
            fixed: vec![None; np],
            choices: vec![0; np],
            best: None,
            nodes: 0,
            watch: Stopwatch::start(time_limit_s),
            stopped: false,
            observer,
        }
    }

    fn bound(&self, depth: usize, h: &[f64]) -> f64 {
        let s = self.p.coefs.len();
        let g = self.p.gamma;
        let mut b = self.p.bias;
        for i in 0..s {
            let a = self.p.coefs[i];
            let free = if a > 0.0 { self.hi[depth * s + i] } else { self.lo[depth * s + i] };
            b += a * (-g * (h[i] + free)).exp();
        }
        b
    }

    fn constraints_possible(&self, depth: usize) -> bool {
        self.p.space.constraints().iter().enumerate().all(|(j, c)| {
            let lo = self.con_fixed[j] + self.con_lo[j][depth];
            let hi = self.con_fixed[j] + self.con_hi[j][depth];
            match c.relation {
                Relation::Le => lo <= c.rhs + FEASIBILITY_TOL,
                Relation::Ge => hi >= c.rhs - FEASIBILITY_TOL,
                Relation::Eq => lo <= c.rhs + FEASIBILITY_TOL && hi >= c.rhs - FEASIBILITY_TOL,
            }
        })
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.best {
            Some((b, _)) => bound > b + 1e-12 * b.abs().max(1.0),
            None => false,
        }
    }

    fn search(&mut self, depth: usize, h: &[f64], bound: f64) {
        self.nodes += 1;
        if let Some(obs) = self.observer.as_mut() {
            obs(&NodeVisit { fixed: &self.fixed, bound });
        }
        let np = self.order.len();
        if depth == np {
            let cfg = self.p.space.from_choices(self.choices.clone());
            let obj = self.p.eval_choices(&self.choices);
            if better(obj, cfg.encoding(), self.best.as_ref()) {
                self.best = Some((obj, cfg));
            }
            return;
        }
        let q = self.order[depth];
        let nv = self.p.space.parameters()[q].values.len();
        let s = self.p.coefs.len();
        let mut children: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(nv);
        for v in 0..nv {
            for (j, c) in self.p.space.constraints().iter().enumerate() {
                self.con_fixed[j] += c.contribution(q, v);
            }
            let ok = self.constraints_possible(depth + 1);
            for (j, c) in self.p.space.constraints().iter().enumerate() {
                self.con_fixed[j] -= c.contribution(q, v);
            }
            if !ok {
                continue;
            }
            let child_h: Vec<f64> = (0..s).map(|i| h[i] + self.p.d(i, q, v)).collect();
            let b = self.bound(depth + 1, &child_h);
            children.push((b, v, child_h));
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (b, v, child_h) in children {
            if self.stopped || (self.best.is_some() && self.watch.expired()) {
                self.stopped = true;
                return;
            }
            if self.prunable(b) {
                continue;
            }
            for (j, c) in self.p.space.constraints().iter().enumerate() {
                self.con_fixed[j] += c.contribution(q, v);
            }
            self.fixed[q] = Some(v);
            self.choices[q] = v;
            self.search(depth + 1, &child_h, b);
            self.fixed[q] = None;
            for (j, c) in self.p.space.constraints().iter().enumerate() {
                self.con_fixed[j] -= c.contribution(q, v);
            }
        }
    }
}

/// Depth-first branch-and-bound over the one-hot blocks. Each term of the
/// objective is bounded separately: terms with positive coefficient by the
/// largest reachable distance, negative ones by the smallest.
pub fn solve_bnb(problem: &CsspProblem, time_limit_s: f64) -> Result<CsspSolution, CsspError> {
    solve_bnb_observed(problem, time_limit_s, None)
}

/// [`solve_bnb`] that reports every visited node to `observer`.
pub fn solve_bnb_observed(
    problem: &CsspProblem,
    time_limit_s: f64,
    observer: Option<&mut dyn FnMut(&NodeVisit)>,
) -> Result<CsspSolution, CsspError> {
    let mut bnb = Bnb::new(problem, time_limit_s, observer);
    let s = problem.coefs.len();
    let h = vec![0.0; s];
    if bnb.constraints_possible(0) {
        let root = bnb.bound(0, &h);
        bnb.search(0, &h, root);
    }
    let stopped = bnb.stopped;
    let (objective, config) = bnb.best.ok_or(CsspError::EmptySpace)?;
    Ok(CsspSolution {
        config,
        objective,
        status: if stopped { SolveStatus::TimeLimit } else { SolveStatus::GlobalOptimal },
        nodes_or_moves: bnb.nodes,
        elapsed_s: bnb.watch.elapsed_s(),
    })
}

const START_TRIES: usize = 1000;

fn random_feasible_start(space: &ConfigurationSpace, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    for _ in 0..START_TRIES {
        let choices: Vec<usize> = space.parameters().iter().map(|p| rng.gen_range(0..p.values.len())).collect();
        if space.choices_feasible(&choices) {
            return Some(choices);
        }
    }
    None
}

/// Multi-restart best-improvement descent. A move changes the value of one
/// parameter and must stay feasible.
pub fn solve_local(
    problem: &CsspProblem,
    restarts: usize,
    seed: u64,
    time_limit_s: f64,
) -> Result<CsspSolution, CsspError> {
    let space = &problem.space;
    let watch = Stopwatch::start(time_limit_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = problem.coefs.len();
    let g = problem.gamma;
    let mut best: Option<(f64, Configuration)> = None;
    let mut moves = 0u64;
    let mut timed_out = false;

    for _ in 0..restarts.max(1) {
        if best.is_some() && watch.expired() {
            timed_out = true;
            break;
        }
        let Some(mut cur) = random_feasible_start(space, &mut rng) else { continue };
        let mut h: Vec<f64> = (0..s).map(|i| problem.term_distance(i, &cur)).collect();
        let mut cur_obj = problem.eval_choices(&cur);
        loop {
            if watch.expired() && best.is_some() {
                timed_out = true;
                break;
            }
            let mut step: Option<(f64, usize, usize, Vec<u8>)> = None;
            for (q, param) in space.parameters().iter().enumerate() {
                let old = cur[q];
                for v in 0..param.values.len() {
                    if v == old {
                        continue;
                    }
                    cur[q] = v;
                    let feasible = space.choices_feasible(&cur);
                    cur[q] = old;
                    if !feasible {
                        continue;
                    }
                    let obj: f64 = (0..s)
                        .map(|i| {
                            let hi = h[i] - problem.d(i, q, old) + problem.d(i, q, v);
                            problem.coefs[i] * (-g * hi).exp()
                        })
                        .sum::<f64>()
                        + problem.bias;
                    if obj >= cur_obj {
                        continue;
                    }
                    let take = match &step {
                        None => true,
                        Some((o, ..)) if obj < *o => true,
                        Some((o, _, _, enc)) if obj == *o => {
                            let mut c = cur.clone();
                            c[q] = v;
                            space.from_choices(c).encoding() < enc.as_slice()
                        }
                        _ => false,
                    };
                    if take {
                        let mut c = cur.clone();
                        c[q] = v;
                        step = Some((obj, q, v, space.from_choices(c).encoding().to_vec()));
                    }
                }
            }
            let Some((_, q, v, _)) = step else { break };
            let old = cur[q];
            for i in 0..s {
                h[i] += problem.d(i, q, v) - problem.d(i, q, old);
            }
            cur[q] = v;
            cur_obj = problem.eval_choices(&cur);
            moves += 1;
        }
        let cfg = space.from_choices(cur.clone());
        let obj = problem.eval_choices(&cur);
        if better(obj, cfg.encoding(), best.as_ref()) {
            best = Some((obj, cfg));
        }
        if timed_out {
            break;
        }
    }
    let (objective, config) = best.ok_or(CsspError::NoFeasibleStart(restarts))?;
    Ok(CsspSolution {
        config,
        objective,
        status: if timed_out { SolveStatus::TimeLimit } else { SolveStatus::Local },
        nodes_or_moves: moves,
        elapsed_s: watch.elapsed_s(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Enumerate,
    Bnb,
    Local,
}

impl std::str::FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "enumerate" => Ok(SolverKind::Enumerate),
            "bnb" => Ok(SolverKind::Bnb),
            "local" => Ok(SolverKind::Local),
            other => Err(format!("unknown solver `{other}` (expected enumerate, bnb or local)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub kind: SolverKind,
    pub time_limit_s: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { kind: SolverKind::Bnb, time_limit_s: DEFAULT_TIME_LIMIT_S, restarts: 5, seed: 0 }
    }
}

pub fn solve(problem: &CsspProblem, settings: &SolverSettings) -> Result<CsspSolution, CsspError> {
    match settings.kind {
        SolverKind::Enumerate => solve_enumerate(problem),
        SolverKind::Bnb => solve_bnb(problem, settings.time_limit_s),
        SolverKind::Local => solve_local(problem, settings.restarts, settings.seed, settings.time_limit_s),
    }
}

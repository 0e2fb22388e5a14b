//! Evaluation statistics: heuristic search quality against the enumerated
//! optimum, win/draw/loss of recommended against default configurations, and
//! feasibility with primal/dual gap summaries.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cssp::CsspSolution;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no instances to evaluate")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("digits must be at least 1")]
    BadDigits,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One heuristic search paired with the exact optimum of the same problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityPair {
    pub heuristic_objective: f64,
    pub global_objective: f64,
    pub heuristic_time_s: f64,
}

impl QualityPair {
    pub fn from_solutions(heuristic: &CsspSolution, global: &CsspSolution) -> Self {
        QualityPair {
            heuristic_objective: heuristic.objective,
            global_objective: global.objective,
            heuristic_time_s: heuristic.elapsed_s,
        }
    }

    pub fn gap(&self) -> f64 {
        (self.heuristic_objective - self.global_objective).abs()
    }

    pub fn is_hit(&self) -> bool {
        self.gap() <= 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsspQuality {
    pub pct_glob_mins: f64,
    pub avg_loc_mins: f64,
    pub avg_time_s: f64,
}

/// Percentage of hits and the mean objective gap. With `nonhit_only` unset the
/// gap is averaged over all pairs (hits count as 0); set, over non-hits only.
pub fn cssp_quality(pairs: &[QualityPair], nonhit_only: bool) -> Result<CsspQuality, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = pairs.len() as f64;
    let hits = pairs.iter().filter(|p| p.is_hit()).count();
    let gap_sum: f64 = pairs.iter().filter(|p| !p.is_hit()).map(QualityPair::gap).sum();
    let denom = if nonhit_only { (pairs.len() - hits) as f64 } else { n };
    Ok(CsspQuality {
        pct_glob_mins: 100.0 * hits as f64 / n,
        avg_loc_mins: if denom > 0.0 { gap_sum / denom + 0.0 } else { 0.0 },
        avg_time_s: pairs.iter().map(|p| p.heuristic_time_s).sum::<f64>() / n,
    })
}

/// Rounds to `digits` significant digits through scientific notation.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinStats {
    pub pct_w: f64,
    pub pct_wd: f64,
    pub pct_w_nond: f64,
    pub pct_draws: f64,
    pub pct_losses: f64,
    /// Mean `|p_sol − p_best|` over draws.
    pub avg_d: Option<f64>,
    /// Mean `|p_default − p_sol|` over wins.
    pub avg_w: Option<f64>,
    /// Mean `|p_default − p_sol|` over losses.
    pub avg_l: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64 + 0.0)
}

/// Compares recommended (`p_sol`) against default performance per instance,
/// lower being better, after rounding both to `digits` significant digits.
pub fn win_stats(p_sol: &[f64], p_default: &[f64], p_best: &[f64], digits: usize) -> Result<WinStats, EvalError> {
    if p_sol.len() != p_default.len() {
        return Err(EvalError::LengthMismatch(p_sol.len(), p_default.len()));
    }
    if p_sol.len() != p_best.len() {
        return Err(EvalError::LengthMismatch(p_sol.len(), p_best.len()));
    }
    if digits < 1 {
        return Err(EvalError::BadDigits);
    }
    if p_sol.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut w, mut d, mut l) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..p_sol.len() {
        let (s, t) = (round_sig(p_sol[i], digits), round_sig(p_default[i], digits));
        if s < t {
            w.push((p_default[i] - p_sol[i]).abs());
        } else if s == t {
            d.push((p_sol[i] - p_best[i]).abs());
        } else {
            l.push((p_default[i] - p_sol[i]).abs());
        }
    }
    let n = p_sol.len() as f64;
    let nond = w.len() + l.len();
    Ok(WinStats {
        pct_w: 100.0 * w.len() as f64 / n,
        pct_wd: 100.0 * (w.len() + d.len()) as f64 / n,
        pct_w_nond: if nond > 0 { 100.0 * w.len() as f64 / nond as f64 } else { 0.0 },
        pct_draws: 100.0 * d.len() as f64 / n,
        pct_losses: 100.0 * l.len() as f64 / n,
        avg_d: mean(&d),
        avg_w: mean(&w),
        avg_l: mean(&l),
    })
}

/// Gaps of one run; `primal_gap` is absent when no feasible solution was found.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GapRecord {
    pub primal_gap: Option<f64>,
    pub dual_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityStats {
    pub pct_feas_sol: f64,
    pub pct_feas_default: f64,
    pub avg_primal_sol: Option<f64>,
    pub avg_primal_default: Option<f64>,
    pub avg_dual_sol: Option<f64>,
    pub avg_dual_default: Option<f64>,
}

/// Gap means are taken over instances where both runs have the gap.
pub fn feasibility_stats(sol: &[GapRecord], default: &[GapRecord]) -> Result<FeasibilityStats, EvalError> {
    if sol.len() != default.len() {
        return Err(EvalError::LengthMismatch(sol.len(), default.len()));
    }
    if sol.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = sol.len() as f64;
    let pct = |rs: &[GapRecord]| 100.0 * rs.iter().filter(|r| r.primal_gap.is_some()).count() as f64 / n;
    let both = |get: fn(&GapRecord) -> Option<f64>| {
        let pairs: Vec<(f64, f64)> = sol.iter().zip(default).filter_map(|(a, b)| Some((get(a)?, get(b)?))).collect();
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        (mean(&a), mean(&b))
    };
    let (avg_primal_sol, avg_primal_default) = both(|r| r.primal_gap);
    let (avg_dual_sol, avg_dual_default) = both(|r| if r.primal_gap.is_some() { r.dual_gap } else { None });
    Ok(FeasibilityStats {
        pct_feas_sol: pct(sol),
        pct_feas_default: pct(default),
        avg_primal_sol,
        avg_primal_default,
        avg_dual_sol,
        avg_dual_default,
    })
}

/// One report row for a (split, scenario, metric) combination.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: String,
    pub scenario: String,
    pub metric: String,
    pub quality: Option<CsspQuality>,
    pub wins: Option<WinStats>,
    pub feasibility: Option<FeasibilityStats>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

const CSV_HEADER: [&str; 18] = [
    "split",
    "scenario",
    "metric",
    "pct_glob_mins",
    "avg_loc_mins",
    "avg_cssp_time_s",
    "pct_w",
    "pct_wd",
    "pct_w_nond",
    "avg_d",
    "avg_w",
    "avg_l",
    "pct_feas_sol",
    "pct_feas_default",
    "avg_primal_sol",
    "avg_primal_default",
    "avg_dual_sol",
    "avg_dual_default",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn sci(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into())
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let total = width.iter().sum::<usize>() + 2 * width.len().saturating_sub(1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let q = r.quality.as_ref();
            let s = r.wins.as_ref();
            let f = r.feasibility.as_ref();
            w.write_record([
                r.split.clone(),
                r.scenario.clone(),
                r.metric.clone(),
                cell(q.map(|q| q.pct_glob_mins)),
                cell(q.map(|q| q.avg_loc_mins)),
                cell(q.map(|q| q.avg_time_s)),
                cell(s.map(|s| s.pct_w)),
                cell(s.map(|s| s.pct_wd)),
                cell(s.map(|s| s.pct_w_nond)),
                cell(s.and_then(|s| s.avg_d)),
                cell(s.and_then(|s| s.avg_w)),
                cell(s.and_then(|s| s.avg_l)),
                cell(f.map(|f| f.pct_feas_sol)),
                cell(f.map(|f| f.pct_feas_default)),
                cell(f.and_then(|f| f.avg_primal_sol)),
                cell(f.and_then(|f| f.avg_primal_default)),
                cell(f.and_then(|f| f.avg_dual_sol)),
                cell(f.and_then(|f| f.avg_dual_default)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Three aligned plain-text tables: search quality, wins, feasibility.
    pub fn render_text(&self) -> String {
        let key = |r: &EvalRow| vec![r.split.clone(), r.scenario.clone(), r.metric.clone()];
        let quality: Vec<Vec<String>> = self
            .rows
            .iter()
            .filter_map(|r| {
                let q = r.quality?;
                let mut v = key(r);
                v.extend([pct(Some(q.pct_glob_mins)), sci(Some(q.avg_loc_mins)), format!("{:.2}", q.avg_time_s)]);
                Some(v)
            })
            .collect();
        let wins: Vec<Vec<String>> = self
            .rows
            .iter()
            .filter_map(|r| {
                let s = r.wins?;
                let mut v = key(r);
                v.extend([
                    pct(Some(s.pct_w)),
                    pct(Some(s.pct_wd)),
                    pct(Some(s.pct_w_nond)),
                    sci(s.avg_d),
                    sci(s.avg_w),
                    sci(s.avg_l),
                ]);
                Some(v)
            })
            .collect();
        let feas: Vec<Vec<String>> = self
            .rows
            .iter()
            .filter_map(|r| {
                let f = r.feasibility?;
                let mut v = key(r);
                v.extend([
                    pct(Some(f.pct_feas_sol)),
                    pct(Some(f.pct_feas_default)),
                    sci(f.avg_primal_sol),
                    sci(f.avg_primal_default),
                    sci(f.avg_dual_sol),
                    sci(f.avg_dual_default),
                ]);
                Some(v)
            })
            .collect();
        let mut out = String::new();
        if !quality.is_empty() {
            out.push_str("Search quality against the enumerated optimum\n");
            out.push_str(&aligned(&["set", "FS", "metric", "%glob.mins", "avg loc.mins", "time(s)"], &quality));
            out.push('\n');
        }
        if !wins.is_empty() {
            out.push_str("Recommended vs default configuration\n");
            out.push_str(&aligned(&["set", "FS", "metric", "%w", "%wd", "%w/nond", "avg d", "avg w", "avg l"], &wins));
            out.push('\n');
        }
        if !feas.is_empty() {
            out.push_str("Feasibility and gaps\n");
            out.push_str(&aligned(
                &["set", "FS", "metric", "%feas sol", "%feas def", "prim sol", "prim def", "dual sol", "dual def"],
                &feas,
            ));
        }
        out
    }
}

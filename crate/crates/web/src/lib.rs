//! Browser bindings for three small perfmap operations. Every export takes
//! plain numbers or a JSON string and returns a JSON string; failures come
//! back as `{"error": "..."}` so the page never has to catch exceptions.

use perfmap_core::configspace::example_solver_space;
use perfmap_core::cssp::{self, SolverKind, SolverSettings};
use perfmap_core::svr::{self, SvrHyper, SvrModel, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use wasm_bindgen::prelude::*;

const CURVE_SAMPLES: usize = 201;

fn finish(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn parse_points(points_json: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>), String> {
    let pts: Vec<[f64; 2]> = serde_json::from_str(points_json).map_err(|e| format!("bad points: {e}"))?;
    Ok(pts.iter().map(|p| (vec![p[0]], p[1])).unzip())
}

pub fn svr_curve(points_json: &str, c: f64, epsilon: f64, gamma: f64) -> Result<Value, String> {
    let (xs, ys) = parse_points(points_json)?;
    let hyper = SvrHyper::new(c, epsilon, gamma);
    let (model, stats) = svr::fit(&xs, &ys, 0, false, &hyper, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let curve: Vec<[f64; 2]> = (0..CURVE_SAMPLES)
        .map(|i| {
            let x = i as f64 / (CURVE_SAMPLES - 1) as f64;
            [x, model.predict_scaled(&[x])]
        })
        .collect();
    let preds: Vec<f64> = xs.iter().map(|x| model.predict_scaled(x)).collect();
    let support: Vec<usize> = (0..xs.len()).filter(|&i| stats.weights[i] != 0.0).collect();
    Ok(json!({
        "curve": curve,
        "support": support,
        "bias": model.bias,
        "epsilon": epsilon,
        "iterations": stats.iterations,
        "converged": stats.converged,
        "mae": svr::mae(&preds, &ys).map_err(|e| e.to_string())?,
    }))
}

/// Fits an RBF ε-SVR to `[[x, y], ...]` with `x` in [0, 1] and samples the
/// fitted curve on a uniform grid.
#[wasm_bindgen]
pub fn fit_svr_curve(points_json: &str, c: f64, epsilon: f64, gamma: f64) -> String {
    finish(svr_curve(points_json, c, epsilon, gamma))
}

pub fn loss_curve(label: f64, delta: f64) -> Result<Value, String> {
    if !(0.0..=1.0).contains(&label) {
        return Err(format!("label {label} outside [0, 1]"));
    }
    let preds: Vec<f64> = (0..CURVE_SAMPLES).map(|i| i as f64 / (CURVE_SAMPLES - 1) as f64).collect();
    let mut mae = Vec::with_capacity(preds.len());
    let mut cmae = Vec::with_capacity(preds.len());
    let mut cmae_abs = Vec::with_capacity(preds.len());
    for &q in &preds {
        mae.push(svr::mae(&[q], &[label]).map_err(|e| e.to_string())?);
        cmae.push(svr::cmae(&[q], &[label], delta).map_err(|e| e.to_string())?);
        cmae_abs.push(svr::cmae_abs(&[q], &[label], delta).map_err(|e| e.to_string())?);
    }
    Ok(json!({ "pred": preds, "mae": mae, "cmae": cmae, "cmae_abs": cmae_abs }))
}

/// Per-prediction loss for one normalized label: absolute error next to the
/// asymmetric loss and its absolute-value variant.
#[wasm_bindgen]
pub fn cmae_loss_curve(label: f64, delta: f64) -> String {
    finish(loss_curve(label, delta))
}

/// A random performance map over two instance features and the example
/// solver space, as if trained.
pub fn demo_model(seed: u64, n_support: usize, gamma: f64) -> SvrModel {
    let space = example_solver_space();
    let configs: Vec<_> = space.enumerate().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support_points = Vec::with_capacity(n_support);
    let mut dual_weights = Vec::with_capacity(n_support);
    for _ in 0..n_support {
        let mut x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
        x.extend(configs[rng.gen_range(0..configs.len())].encoding().iter().map(|&b| b as f64));
        support_points.push(x);
        dual_weights.push(rng.gen_range(-1.0..1.0));
    }
    let mut input_columns = vec!["f0".to_string(), "f1".to_string()];
    input_columns.extend(space.bit_names());
    SvrModel {
        hyper: SvrHyper::new(1.0, 0.0, gamma),
        bias: 0.0,
        support_points,
        dual_weights,
        scaler: None,
        input_columns,
        n_features: 2,
    }
}

pub fn cssp_demo(seed: u64, n_support: usize, gamma: f64, f0: f64, f1: f64, solver: &str) -> Result<Value, String> {
    let kind: SolverKind = solver.parse()?;
    if n_support == 0 {
        return Err("need at least one support point".into());
    }
    let space = example_solver_space();
    let model = demo_model(seed, n_support, gamma);
    let problem = cssp::build_problem(&model, &space, &[f0, f1]).map_err(|e| e.to_string())?;
    let settings = SolverSettings { kind, time_limit_s: 10.0, restarts: 5, seed };
    let mut sol = cssp::solve(&problem, &settings).map_err(|e| e.to_string())?;
    let exact = cssp::solve_enumerate(&problem).map_err(|e| e.to_string())?;
    sol.certify(&exact);
    let assignment: Map<String, Value> =
        space.assignment(&sol.config).into_iter().map(|(k, v)| (k, Value::String(v))).collect();
    Ok(json!({
        "solver": solver,
        "assignment": assignment,
        "encoding": sol.config.encoding_string(),
        "objective": sol.objective,
        "status": sol.status.as_str(),
        "nodes_or_moves": sol.nodes_or_moves,
        "enumerated_objective": exact.objective,
        "n_configs": exact.nodes_or_moves,
        "n_terms": problem.n_terms(),
    }))
}

/// Builds a random problem on the 2304-configuration example space for the
/// query `(f0, f1)` and solves it with `solver`, reporting the enumerated
/// optimum next to it.
#[wasm_bindgen]
pub fn solve_cssp_demo(seed: u32, n_support: u32, gamma: f64, f0: f64, f1: f64, solver: &str) -> String {
    finish(cssp_demo(seed as u64, n_support as usize, gamma, f0, f1, solver))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn svr_curve_covers_grid_and_fits_a_line() {
        let pts: Vec<[f64; 2]> = (0..11).map(|i| [i as f64 / 10.0, 0.5 * i as f64 / 10.0]).collect();
        let v = parse(&fit_svr_curve(&serde_json::to_string(&pts).unwrap(), 100.0, 0.01, 2.0));
        assert!(v.get("error").is_none(), "{v}");
        let curve = v["curve"].as_array().unwrap();
        assert_eq!(curve.len(), CURVE_SAMPLES);
        let mid = curve[100].as_array().unwrap();
        assert!((mid[1].as_f64().unwrap() - 0.25).abs() < 0.03);
        assert!(v["converged"].as_bool().unwrap());
    }

    #[test]
    fn bad_points_report_error() {
        let v = parse(&fit_svr_curve("[[0.1]]", 1.0, 0.1, 1.0));
        assert!(v["error"].as_str().unwrap().contains("bad points"));
        let v = parse(&fit_svr_curve("[[0.1, 0.2]]", 1.0, 0.1, 1.0));
        assert!(v.get("error").is_some());
    }

    #[test]
    fn loss_curve_is_zero_at_label_and_asymmetric_near_bounds() {
        let v = parse(&cmae_loss_curve(0.1, 0.3));
        let pred = v["pred"].as_array().unwrap();
        let cmae = v["cmae"].as_array().unwrap();
        let mae = v["mae"].as_array().unwrap();
        let at = |a: &Vec<Value>, i: usize| a[i].as_f64().unwrap();
        assert_eq!(at(cmae, 20), 0.0);
        // Over-predicting a low label costs more than the absolute error.
        assert!(at(cmae, 120) > at(mae, 120));
        // Under-predicting a low label is free.
        assert_eq!(at(cmae, 0), 0.0);
        assert_eq!(pred.len(), CURVE_SAMPLES);
    }

    #[test]
    fn loss_curve_rejects_bad_delta() {
        assert!(parse(&cmae_loss_curve(0.5, 0.9)).get("error").is_some());
        assert!(parse(&cmae_loss_curve(1.5, 0.3)).get("error").is_some());
    }

    #[test]
    fn cssp_demo_solvers_agree_with_enumeration() {
        for seed in 0..3 {
            let e = parse(&solve_cssp_demo(seed, 40, 0.3, 0.2, 0.7, "bnb"));
            assert_eq!(e["n_configs"].as_u64(), Some(2304));
            let (a, b) = (e["objective"].as_f64().unwrap(), e["enumerated_objective"].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9);
            assert_eq!(e["status"], "global_optimal");
            let l = parse(&solve_cssp_demo(seed, 40, 0.3, 0.2, 0.7, "local"));
            assert!(l["objective"].as_f64().unwrap() >= b - 1e-12);
            assert_eq!(l["assignment"].as_object().unwrap().len(), 9);
        }
    }

    #[test]
    fn cssp_demo_rejects_unknown_solver() {
        let v = parse(&solve_cssp_demo(0, 10, 0.3, 0.0, 0.0, "magic"));
        assert!(v["error"].as_str().unwrap().contains("unknown solver"));
    }
}

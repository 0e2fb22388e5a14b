//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! summary is always printed; exits non-zero if any criterion fails.

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use perfmap_core::collect::{self, CollectOptions, InstanceSet};
use perfmap_core::configspace::{example_solver_space, ConfigurationSpace, Parameter};
use perfmap_core::cssp::{self, CsspProblem, CsspSolution, SolveStatus};
use perfmap_core::dataset::{self, Split};
use perfmap_core::evaluate::{self, QualityPair};
use perfmap_core::modelsel::{self, CvPlan, SearchSpace, TrainingRows};
use perfmap_core::pipeline::{self, RunConfig};
use perfmap_core::svr::{self, SvrHyper, SvrModel, TrainOptions};
use perfmap_core::synth::{self, SynthSpec, SyntheticTarget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

struct Problem {
    problem: CsspProblem,
    n_configs: usize,
}

/// The 50 random problems shared by criteria 1 and 7.
fn benchmark_problems() -> Vec<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::with_capacity(50);
    while out.len() < 50 {
        let n_constraints = rng.gen_range(0..=3);
        let space = support::random_space(&mut rng, 24, 4096, n_constraints);
        let n_configs = space.enumerate().count();
        if !(24..=4096).contains(&n_configs) {
            continue;
        }
        let nf = rng.gen_range(0..=3);
        let s = rng.gen_range(20..=500);
        let model = support::random_model(&mut rng, &space, nf, s);
        let query: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let problem = cssp::build_problem(&model, &space, &query).expect("problem builds");
        out.push(Problem { problem, n_configs });
    }
    out
}

fn c1_cssp_exactness(problems: &[Problem], exact: &[CsspSolution]) -> Outcome {
    let mut agree = 0;
    let mut worst = 0.0f64;
    for (p, e) in problems.iter().zip(exact) {
        let b = cssp::solve_bnb(&p.problem, 60.0).map_err(|e| e.to_string())?;
        ensure!(b.status == SolveStatus::GlobalOptimal, "bnb stopped with status {}", b.status.as_str());
        let gap = (b.objective - e.objective).abs();
        worst = worst.max(gap);
        if gap <= 1e-9 {
            agree += 1;
        }
    }
    let (lo, hi) = problems.iter().fold((usize::MAX, 0), |(lo, hi), p| (lo.min(p.n_configs), hi.max(p.n_configs)));
    ensure!(agree == problems.len(), "{agree}/{} agree, worst gap {worst:e}", problems.len());
    Ok(format!("{agree}/{} bnb = enumerate, worst gap {worst:.1e}, {lo}..{hi} configs", problems.len()))
}

fn c2_objective_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let nc = rng.gen_range(0..=2);
        let space = support::random_space(&mut rng, 24, 4096, nc);
        let nf = rng.gen_range(0..=3);
        let s = rng.gen_range(20..=200);
        let model = support::random_model(&mut rng, &space, nf, s);
        let query: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let problem = cssp::build_problem(&model, &space, &query).map_err(|e| e.to_string())?;
        let c = loop {
            let choices: Vec<usize> = space.parameters().iter().map(|p| rng.gen_range(0..p.values.len())).collect();
            if space.choices_feasible(&choices) {
                break space.from_choices(choices);
            }
        };
        let mut x = query.clone();
        x.extend(c.encoding().iter().map(|&b| b as f64));
        let direct = model.predict(&x).map_err(|e| e.to_string())?;
        // Independent evaluation of the kernel expansion on the scaled input.
        let z = model.scale_input(&x);
        let by_hand: f64 = model
            .support_points
            .iter()
            .zip(&model.dual_weights)
            .map(|(sv, w)| w * support::rbf(model.hyper.kernel.gamma, sv, &z))
            .sum::<f64>()
            + model.bias;
        let factored = cssp::objective(&problem, &c).map_err(|e| e.to_string())?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(rel(factored, direct)).max(rel(direct, by_hand));
    }
    ensure!(worst <= 1e-9, "worst relative deviation {worst:e}");
    Ok(format!("100/100 pairs, worst relative deviation {worst:.1e}"))
}

fn c3_svr_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst_obj = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for set in 0..20 {
        let n = rng.gen_range(5..=50);
        let dim = rng.gen_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
        let labels: Vec<f64> = points
            .iter()
            .map(|x| (6.0 * x[0]).sin() + 0.3 * x.iter().skip(1).sum::<f64>() + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let c = 10f64.powf(rng.gen_range(-1.0..1.0));
        let eps = rng.gen_range(0.01..0.3);
        let gamma = 10f64.powf(rng.gen_range(-0.7..0.7));
        let hyper = SvrHyper::new(c, eps, gamma);
        let opts = TrainOptions { tol: 1e-9, max_passes: Some(100_000), ..TrainOptions::default() };
        let (model, stats) = svr::train(&points, &labels, &hyper, &opts).map_err(|e| e.to_string())?;
        ensure!(stats.converged, "set {set}: SMO did not converge");
        let k = support::gram(&points, gamma);
        let smo = support::dual_value(&k, &labels, eps, &stats.weights);
        let oracle_beta = support::qp_oracle(&k, &labels, eps, c, 400_000);
        let oracle = support::dual_value(&k, &labels, eps, &oracle_beta);
        worst_obj = worst_obj.max((smo - oracle).abs());
        ensure!((smo - oracle).abs() <= 1e-6, "set {set} (n={n}, C={c:.3}): SMO {smo:.12} vs oracle {oracle:.12}");
        let kkt = support::kkt_check(&k, &labels, &stats.weights, model.bias, eps, c);
        worst_kkt = worst_kkt.max(kkt.max_violation).max(kkt.sum_beta.abs());
        ensure!(kkt.max_violation <= 1e-3, "set {set}: KKT violation {:e}", kkt.max_violation);
        ensure!(kkt.sum_beta.abs() <= 1e-3, "set {set}: sum of weights {:e}", kkt.sum_beta);
        // The default stopping rule alone must also meet the KKT bound.
        let (m, st) = svr::train(&points, &labels, &hyper, &TrainOptions::default()).map_err(|e| e.to_string())?;
        let kkt = support::kkt_check(&k, &labels, &st.weights, m.bias, eps, c);
        worst_kkt = worst_kkt.max(kkt.max_violation);
        ensure!(st.converged && kkt.max_violation <= 1e-3, "set {set}: default-tol KKT violation {:e}", kkt.max_violation);
    }
    Ok(format!("20/20 sets, worst dual gap {worst_obj:.1e}, worst KKT violation {worst_kkt:.1e} (incl. default tol)"))
}

fn c4_metric_fidelity() -> Outcome {
    let case1 = svr::cmae(&[0.3], &[0.1], 0.2).map_err(|e| e.to_string())?;
    let case2 = svr::cmae(&[0.7], &[0.9], 0.2).map_err(|e| e.to_string())?;
    let middle = svr::cmae(&[0.6], &[0.5], 0.2).map_err(|e| e.to_string())?;
    let expected = 0.2 * (1.0 + 1.0 / (1.0 + (-0.2f64).exp()));
    ensure!((case1 - 0.3099672).abs() <= 1e-6, "case 1 gave {case1}");
    ensure!((case1 - expected).abs() <= 1e-12, "case 1 gave {case1}, direct {expected}");
    ensure!((case2 - 0.3099672).abs() <= 1e-6, "case 2 gave {case2}");
    ensure!((middle + 0.1).abs() <= 1e-12, "middle band gave {middle}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let labels: Vec<f64> = (0..rng.gen_range(1..20)).map(|_| rng.gen::<f64>()).collect();
        for delta in [0.2, 0.3, 0.4] {
            let v = svr::cmae(&labels, &labels, delta).map_err(|e| e.to_string())?;
            ensure!(v == 0.0, "cmae(p, p) = {v}");
        }
    }
    Ok(format!("case 1 {case1:.7}, case 2 {case2:.7}, middle {middle:.7}, zero on 600 identical pairs"))
}

fn c5_preprocessing() -> Outcome {
    let (n, params) = dataset::normalize_performance(&[0.5, 3.0, 2e5, 1e9], 1e5).map_err(|e| e.to_string())?;
    let expected = [0.0, 2.5 / 102.5, 1.0, 1.0];
    for (a, b) in n.iter().zip(expected) {
        ensure!((a - b).abs() <= 1e-9, "got {n:?}, expected {expected:?}");
    }
    ensure!(params.clip_value == 103.0, "clip value {}", params.clip_value);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let len = rng.gen_range(2..30);
        let raw: Vec<f64> = (0..len)
            .map(|_| if rng.gen_bool(0.2) { 10f64.powf(rng.gen_range(5.1..12.0)) } else { rng.gen_range(0.0..1e5) })
            .collect();
        if raw.iter().all(|v| *v > 1e5) {
            continue;
        }
        let (out, _) = dataset::normalize_performance(&raw, 1e5).map_err(|e| e.to_string())?;
        for i in 0..len {
            ensure!((0.0..=1.0).contains(&out[i]), "value {} outside [0, 1]", out[i]);
            for j in 0..len {
                if raw[i] <= 1e5 && raw[j] <= 1e5 && raw[i] < raw[j] {
                    ensure!(out[i] < out[j], "order lost: {} < {} but {} >= {}", raw[i], raw[j], out[i], out[j]);
                }
                if raw[i] <= 1e5 && raw[j] > 1e5 {
                    ensure!(out[i] < out[j], "clipped value not above retained value");
                }
            }
        }
    }
    Ok(format!("{n:?}, order kept on 1000 random vectors"))
}

fn write_closed_loop_config(dir: &Path) -> RunConfig {
    let space = ConfigurationSpace::new(
        vec![
            Parameter::new("a", &["0", "1", "2", "3"]),
            Parameter::new("b", &["x", "y", "z", "w"]),
            Parameter::new("c", &["0", "1", "2"]),
            Parameter::new("d", &["off", "on"]),
        ],
        vec![],
    )
    .unwrap();
    fs::write(dir.join("space.json"), space.to_json()).unwrap();
    let toml = r#"
seeds = [1, 2, 3]
os_fraction = 0.5
solver = "enumerate"
[paths]
instances = "synth/instances.csv"
[adapter]
synthetic = "synth/target.json"
[plan]
outer_folds = 3
inner_folds = 3
draws = 8
metric = "mae"
seed = 1
[synth]
n_instances = 40
n_features = 3
n_support = 30
gamma = 0.5
noise = 0.0
seed = 7
"#;
    RunConfig::from_toml(toml, dir).unwrap()
}

fn c6_closed_loop() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_closed_loop_config(dir.path());
    let err = |e: pipeline::PipelineError| e.to_string();
    let bundle = pipeline::cmd_synth(&cfg).map_err(err)?;
    let (raw, _) = pipeline::cmd_collect(&cfg).map_err(err)?;
    ensure!(raw.records.len() == 40 * 96, "collected {} records", raw.records.len());
    pipeline::cmd_prepare(&cfg).map_err(err)?;
    pipeline::cmd_train(&cfg).map_err(err)?;

    let prepared = dataset::Dataset::load(&cfg.path(&cfg.paths.prepared)).map_err(|e| e.to_string())?;
    let held_out: Vec<&String> =
        prepared.split.iter().filter(|(_, s)| **s == Split::OutOfSample).map(|(id, _)| id).collect();
    ensure!(held_out.len() == 20, "{} held-out instances", held_out.len());
    let queries = InstanceSet {
        feature_names: bundle.instances.feature_names.clone(),
        instances: bundle.instances.instances.iter().filter(|i| held_out.contains(&&i.id)).cloned().collect(),
    };
    let qpath = dir.path().join("held_out.csv");
    queries.save(&qpath).map_err(|e| e.to_string())?;
    let recs = pipeline::cmd_configure(&cfg, &qpath).map_err(err)?;

    // Rank each recommendation under the planted target itself.
    let space = cfg.load_space().map_err(err)?;
    let configs: Vec<_> = space.enumerate().collect();
    let features: BTreeMap<&str, &[f64]> =
        bundle.instances.instances.iter().map(|i| (i.id.as_str(), i.features.as_slice())).collect();
    let mut in_top = 0;
    let mut ranks = Vec::new();
    for (id, sol) in &recs {
        let f = features[id.as_str()];
        let mine = bundle.target.value(f, sol.config.encoding());
        let better = configs.iter().filter(|c| bundle.target.value(f, c.encoding()) < mine).count();
        ranks.push(better);
        if (better + 1) as f64 <= 0.1 * configs.len() as f64 {
            in_top += 1;
        }
    }
    ensure!(recs.len() == 20, "{} recommendations", recs.len());
    ensure!(in_top >= 18, "{in_top}/20 in the best 10%, ranks {ranks:?}");
    let exact = ranks.iter().filter(|r| **r == 0).count();
    Ok(format!("{in_top}/20 held-out recommendations in the best 10% of 96 ({exact} exactly optimal)"))
}

fn c7_local_search(problems: &[Problem], exact: &[CsspSolution]) -> Outcome {
    let mut pairs = Vec::with_capacity(problems.len());
    for (p, e) in problems.iter().zip(exact) {
        let l = cssp::solve_local(&p.problem, 5, 11, 60.0).map_err(|e| e.to_string())?;
        let signed = l.objective - e.objective;
        ensure!(signed >= -1e-9 * e.objective.abs().max(1.0), "local beat enumeration by {signed:e}");
        let pair = QualityPair::from_solutions(&l, e);
        ensure!(pair.is_hit() == (pair.gap() <= 1e-9), "hit flag disagrees with gap");
        pairs.push(pair);
    }
    let q = evaluate::cssp_quality(&pairs, false).map_err(|e| e.to_string())?;
    ensure!(q.avg_loc_mins >= 0.0, "negative mean gap");
    Ok(format!(
        "hit-rate {:.2}%, mean gap {:.3e} (reference range for the MINLP heuristic: 83.69-93.25%)",
        q.pct_glob_mins, q.avg_loc_mins
    ))
}

fn c8_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Model file round-trip.
    let points: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let labels: Vec<f64> = points.iter().map(|x| x[0].sin() + x[1] * x[2]).collect();
    let (mut model, _) =
        svr::fit(&points, &labels, 2, true, &SvrHyper::new(3.0, 0.05, 0.4), &TrainOptions::default())
            .map_err(|e| e.to_string())?;
    model.input_columns = (0..5).map(|j| format!("x{j}")).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = SvrModel::load(&path).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (a, b) = (model.predict(&x).unwrap(), loaded.predict(&x).unwrap());
        ensure!(a.to_bits() == b.to_bits(), "prediction changed after reload: {a} vs {b}");
    }

    // Encoding round-trips.
    let space = example_solver_space();
    let mut checked = 0;
    while checked < 1000 {
        let choices: Vec<usize> = space.parameters().iter().map(|p| rng.gen_range(0..p.values.len())).collect();
        if !space.choices_feasible(&choices) {
            continue;
        }
        let a = space.assignment(&space.from_choices(choices));
        let c = space.encode(&a).map_err(|e| e.to_string())?;
        ensure!(space.decode(c.encoding()).map_err(|e| e.to_string())? == a, "decode(encode(a)) != a");
        checked += 1;
    }

    // Split and fold reproducibility.
    let small = ConfigurationSpace::new(
        vec![Parameter::new("a", &["0", "1"]), Parameter::new("b", &["0", "1", "2"])],
        vec![],
    )
    .unwrap();
    let spec = SynthSpec { n_instances: 18, n_features: 2, n_support: 10, noise: 0.01, seed: 3, ..SynthSpec::default() };
    let bundle = synth::generate(&spec, &small).map_err(|e| e.to_string())?;
    let target: &SyntheticTarget = &bundle.target;
    let opts = CollectOptions { seeds: vec![1, 2], time_limit_s: 1.0, threshold: 1e5, gap_eps: false };
    let (mut ds, _) = collect::collect(target, &bundle.instances, &small, &opts, None).map_err(|e| e.to_string())?;
    ds.normalize(1e5).map_err(|e| e.to_string())?;
    let s1 = dataset::split_instances(&ds, 0.3, 42).map_err(|e| e.to_string())?;
    let s2 = dataset::split_instances(&ds, 0.3, 42).map_err(|e| e.to_string())?;
    ensure!(s1 == s2, "split_instances differs across runs");
    let rows = TrainingRows::from_dataset(&s1.filter_split(Split::InSample)).map_err(|e| e.to_string())?;
    for k in [2, 3, 5] {
        let f1 = modelsel::instance_folds(&rows, k, 9).map_err(|e| e.to_string())?;
        let f2 = modelsel::instance_folds(&rows, k, 9).map_err(|e| e.to_string())?;
        ensure!(f1 == f2, "{k}-fold split differs across runs");
    }
    let plan = CvPlan { outer_folds: 3, inner_folds: 2, draws: 3, seed: 5, ..CvPlan::default() };
    let sp = SearchSpace::for_dim(rows.dim());
    let n1 = modelsel::nested_cv_rows(&rows, &sp, &plan).map_err(|e| e.to_string())?;
    let n2 = modelsel::nested_cv_rows(&rows, &sp, &plan).map_err(|e| e.to_string())?;
    ensure!(n1 == n2, "nested CV differs across runs");
    Ok("model reload bit-identical on 100 inputs, 1000 encode/decode round-trips, splits and folds repeat".into())
}

fn c9_evaluation_arithmetic() -> Outcome {
    let p_sol = [0.1, 0.5, 0.5];
    let p_def = [0.2, 0.5, 0.4];
    let w = evaluate::win_stats(&p_sol, &p_def, &p_sol, 16).map_err(|e| e.to_string())?;
    ensure!((w.pct_w - 33.33).abs() <= 1e-2, "pct_w {}", w.pct_w);
    ensure!((w.pct_wd - 66.67).abs() <= 1e-2, "pct_wd {}", w.pct_wd);
    ensure!((w.pct_w_nond - 50.0).abs() <= 1e-2, "pct_w_nond {}", w.pct_w_nond);
    let pairs = [
        QualityPair { heuristic_objective: 1.0, global_objective: 1.0, heuristic_time_s: 0.5 },
        QualityPair { heuristic_objective: 0.04, global_objective: 0.0, heuristic_time_s: 1.5 },
    ];
    let q = evaluate::cssp_quality(&pairs, false).map_err(|e| e.to_string())?;
    ensure!(q.pct_glob_mins == 50.0, "pct_glob_mins {}", q.pct_glob_mins);
    ensure!(q.avg_loc_mins == 0.02, "avg_loc_mins {}", q.avg_loc_mins);
    Ok(format!(
        "win stats ({:.2}, {:.2}, {:.2}), quality ({}, {})",
        w.pct_w, w.pct_wd, w.pct_w_nond, q.pct_glob_mins, q.avg_loc_mins
    ))
}

fn main() -> ExitCode {
    // Keep panic messages inside the summary lines.
    panic::set_hook(Box::new(|_| {}));
    let t = Instant::now();
    let problems = benchmark_problems();
    let exact: Vec<CsspSolution> =
        problems.iter().map(|p| cssp::solve_enumerate(&p.problem).expect("enumeration succeeds")).collect();
    println!("benchmark problems ready in {:.1} s", t.elapsed().as_secs_f64());

    let checks: Vec<Check> = vec![
        ("CSSP exactness", Box::new(|| c1_cssp_exactness(&problems, &exact))),
        ("objective consistency", Box::new(c2_objective_consistency)),
        ("SVR optimality", Box::new(c3_svr_optimality)),
        ("metric fidelity", Box::new(c4_metric_fidelity)),
        ("preprocessing fidelity", Box::new(c5_preprocessing)),
        ("closed-loop recovery", Box::new(c6_closed_loop)),
        ("local-search quality report", Box::new(|| c7_local_search(&problems, &exact))),
        ("determinism and round-trips", Box::new(c8_determinism)),
        ("evaluation arithmetic", Box::new(c9_evaluation_arithmetic)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .map(|m| format!("panicked: {m}"))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

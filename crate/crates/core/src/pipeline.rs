//! File-based pipeline driven by one run configuration: collect, prepare,
//! train, configure, evaluate and synthetic bundle generation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::{self, CollectError, CollectOptions, CollectSummary, CommandAdapter, InstanceSet, TargetAdapter};
use crate::configspace::{ConfigurationSpace, SpaceError};
use crate::cssp::{self, CsspError, CsspSolution, SolverKind, SolverSettings};
use crate::dataset::{self, Dataset, DatasetError, NormalizationParams, Split};
use crate::evaluate::{
    cssp_quality, feasibility_stats, win_stats, EvalError, EvalReport, EvalRow, GapRecord, QualityPair,
};
use crate::features::{apply_scenario, FeatureError, FeaturePipeline, SelectionScenario, Transform};
use crate::modelsel::{self, CvPlan, ModelSelError, SearchSpace};
use crate::svr::{SvrError, SvrHyper, SvrModel};
use crate::synth::{self, SynthBundle, SynthSpec, SyntheticTarget};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Space { context: String, source: SpaceError },
    #[error("{context}: {source}")]
    Dataset { context: String, source: DatasetError },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svr(#[from] SvrError),
    #[error(transparent)]
    ModelSel(#[from] ModelSelError),
    #[error("instance {instance}: {source}")]
    Cssp { instance: String, source: CsspError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl PipelineError {
    fn io(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> PipelineError {
        let context = context.to_string();
        move |source| PipelineError::Io { context, source }
    }

    fn data(context: impl std::fmt::Display) -> impl FnOnce(DatasetError) -> PipelineError {
        let context = context.to_string();
        move |source| PipelineError::Dataset { context, source }
    }
}

fn p(s: &str) -> PathBuf {
    PathBuf::from(s)
}

/// Artifact locations; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub space: PathBuf,
    pub instances: PathBuf,
    pub raw: PathBuf,
    pub prepared: PathBuf,
    pub pipeline: PathBuf,
    pub normalization: PathBuf,
    pub model: PathBuf,
    pub cv_report: PathBuf,
    pub journal: PathBuf,
    pub recommendations: PathBuf,
    pub report_dir: PathBuf,
    pub synth_dir: PathBuf,
    /// Named selection scenarios, each a JSON file.
    pub scenarios: BTreeMap<String, PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            space: p("space.json"),
            instances: p("instances.csv"),
            raw: p("raw.csv"),
            prepared: p("prepared.csv"),
            pipeline: p("pipeline.json"),
            normalization: p("normalization.json"),
            model: p("model.json"),
            cv_report: p("cv_report.csv"),
            journal: p("collect.journal"),
            recommendations: p("recommendations.csv"),
            report_dir: p("report"),
            synth_dir: p("synth"),
            scenarios: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Shell command template; see [`collect::PLACEHOLDERS`].
    pub command: Option<String>,
    /// Synthetic target file used instead of a command.
    pub synthetic: Option<PathBuf>,
    pub grace_s: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig { command: None, synthetic: None, grace_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub steps: Vec<Transform>,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { steps: Vec::new(), standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Significant digits used when comparing performances.
    pub digits: usize,
    /// Average objective gaps over non-hits only.
    pub nonhit_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { digits: 16, nonhit_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub time_limit_s: f64,
    pub os_fraction: f64,
    pub split_seed: u64,
    pub subsample: Option<usize>,
    /// `noFS`, a key of `paths.scenarios`, or a scenario file path.
    pub scenario: String,
    pub solver: String,
    pub restarts: usize,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub gap_eps: bool,
    pub adapter: AdapterConfig,
    pub features: FeatureConfig,
    /// Hyperparameter ranges; defaults depend on the input dimension.
    pub search: Option<SearchSpace>,
    pub plan: CvPlan,
    pub synth: SynthSpec,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            threshold: 1e5,
            seeds: vec![1, 2, 3],
            time_limit_s: cssp::DEFAULT_TIME_LIMIT_S,
            os_fraction: 63.0 / 250.0,
            split_seed: 0,
            subsample: None,
            scenario: "noFS".into(),
            solver: "bnb".into(),
            restarts: 5,
            jobs: 0,
            gap_eps: false,
            adapter: AdapterConfig::default(),
            features: FeatureConfig::default(),
            search: None,
            plan: CvPlan::default(),
            synth: SynthSpec::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(PipelineError::io(path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return bad("threshold must be positive");
        }
        if self.time_limit_s.is_nan() || self.time_limit_s < 0.0 {
            return bad("time_limit_s must be non-negative");
        }
        if !(self.os_fraction > 0.0 && self.os_fraction < 1.0) {
            return bad("os_fraction must lie in (0, 1)");
        }
        if self.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        self.solver_kind()?;
        self.plan.validate()?;
        if let Some(s) = &self.search {
            s.validate()?;
        }
        Ok(())
    }

    /// Resolves a configured path against the config file's directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn solver_kind(&self) -> Result<SolverKind, PipelineError> {
        self.solver.parse().map_err(PipelineError::Config)
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, PipelineError> {
        Ok(SolverSettings {
            kind: self.solver_kind()?,
            time_limit_s: self.time_limit_s,
            restarts: self.restarts,
            seed: self.plan.seed,
        })
    }

    pub fn load_space(&self) -> Result<ConfigurationSpace, PipelineError> {
        let path = self.path(&self.paths.space);
        ConfigurationSpace::load(&path).map_err(|source| PipelineError::Space { context: path.display().to_string(), source })
    }

    fn load_dataset(&self, p: &Path) -> Result<Dataset, PipelineError> {
        let path = self.path(p);
        Dataset::load(&path).map_err(PipelineError::data(path.display()))
    }
}

/// Writes the synthetic bundle into `paths.synth_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthBundle, PipelineError> {
    let space = cfg.load_space()?;
    let bundle = synth::generate(&cfg.synth, &space)?;
    bundle.write(&cfg.path(&cfg.paths.synth_dir), &space)?;
    Ok(bundle)
}

/// Runs every missing (instance, configuration, seed) triple and writes the
/// raw dataset.
pub fn cmd_collect(cfg: &RunConfig) -> Result<(Dataset, CollectSummary), PipelineError> {
    let space = cfg.load_space()?;
    let instances = InstanceSet::load(&cfg.path(&cfg.paths.instances))?;
    let synthetic;
    let command;
    let adapter: &dyn TargetAdapter = if let Some(t) = &cfg.adapter.synthetic {
        let path = cfg.path(t);
        synthetic = SyntheticTarget::load(&path).map_err(PipelineError::io(path.display()))?;
        &synthetic
    } else {
        let mut c = CommandAdapter::from_env_or(cfg.adapter.command.clone()).ok_or_else(|| {
            PipelineError::Config(format!(
                "no adapter: set adapter.command, adapter.synthetic or {}",
                collect::ADAPTER_ENV
            ))
        })?;
        c.grace_s = cfg.adapter.grace_s;
        command = c;
        &command
    };
    let opts = CollectOptions {
        seeds: cfg.seeds.clone(),
        time_limit_s: cfg.time_limit_s,
        threshold: cfg.threshold,
        gap_eps: cfg.gap_eps,
    };
    let journal = cfg.path(&cfg.paths.journal);
    let (ds, summary) = collect::collect(adapter, &instances, &space, &opts, Some(&journal))?;
    let raw = cfg.path(&cfg.paths.raw);
    ds.save(&raw).map_err(PipelineError::data(raw.display()))?;
    Ok((ds, summary))
}

fn resolve_scenario(cfg: &RunConfig, ds: &Dataset) -> Result<SelectionScenario, PipelineError> {
    if cfg.scenario == "noFS" {
        return Ok(SelectionScenario::identity(ds));
    }
    let path = match cfg.paths.scenarios.get(&cfg.scenario) {
        Some(p) => cfg.path(p),
        None => cfg.path(Path::new(&cfg.scenario)),
    };
    if !path.exists() {
        return Err(PipelineError::Config(format!("unknown scenario `{}`", cfg.scenario)));
    }
    Ok(SelectionScenario::load(&path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub normalization: NormalizationParams,
    pub scenario: String,
    pub rows: usize,
    pub in_sample: usize,
    pub out_of_sample: usize,
}

/// Normalizes, engineers features, projects onto the scenario, merges
/// duplicates, splits instances and writes the prepared dataset and the
/// fitted feature pipeline.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary, PipelineError> {
    let raw_path = cfg.path(&cfg.paths.raw);
    let mut ds = cfg.load_dataset(&cfg.paths.raw)?;
    let normalization = ds
        .normalize(cfg.threshold)
        .map_err(PipelineError::data(format!("normalizing {} ({} rows)", raw_path.display(), ds.records.len())))?;

    let mut pipeline = FeaturePipeline::new(ds.feature_names.clone(), cfg.features.steps.clone());
    pipeline.standardize = cfg.features.standardize;
    let engineered = pipeline.apply_to_dataset(&ds)?;
    let scenario = resolve_scenario(cfg, &engineered)?;
    pipeline.kept_columns = scenario.kept_feature_columns.clone();
    let projected = apply_scenario(&engineered, &scenario)?;
    let mut prepared =
        dataset::split_instances(&projected, cfg.os_fraction, cfg.split_seed).map_err(PipelineError::data("split"))?;
    if let Some(n) = cfg.subsample {
        prepared = prepared.subsample(n, cfg.split_seed);
    }

    let pipe_path = cfg.path(&cfg.paths.pipeline);
    pipeline.save(&pipe_path)?;
    let norm_path = cfg.path(&cfg.paths.normalization);
    fs::write(&norm_path, serde_json::to_string_pretty(&normalization).expect("params serialize"))
        .map_err(PipelineError::io(norm_path.display()))?;
    let out = cfg.path(&cfg.paths.prepared);
    prepared.save(&out).map_err(PipelineError::data(out.display()))?;

    let count = |s: Split| prepared.split.values().filter(|v| **v == s).count();
    Ok(PrepareSummary {
        normalization,
        scenario: scenario.name,
        rows: prepared.records.len(),
        in_sample: count(Split::InSample),
        out_of_sample: count(Split::OutOfSample),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub error_estimate: Option<f64>,
    pub hyper: SvrHyper,
    pub converged: bool,
    pub support_vectors: usize,
    pub rows: usize,
}

/// Nested CV for the error estimate, then search and fit on all in-sample
/// rows. Writes the model and the CV report.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let ds = cfg.load_dataset(&cfg.paths.prepared)?;
    let is = ds.filter_split(Split::InSample);
    if is.records.is_empty() {
        return Err(PipelineError::Dataset {
            context: cfg.path(&cfg.paths.prepared).display().to_string(),
            source: DatasetError::EmptyInput,
        });
    }
    let dim = is.feature_names.len() + is.config_names.len();
    let space = cfg.search.unwrap_or_else(|| SearchSpace::for_dim(dim));
    let mut plan = cfg.plan;
    plan.standardize = cfg.features.standardize;

    let ncv = modelsel::nested_cv(&is, &space, &plan)?;
    let (model, stats, search) = modelsel::select_and_fit(&is, &space, &plan)?;

    let model_path = cfg.path(&cfg.paths.model);
    model.save(&model_path)?;
    let report_path = cfg.path(&cfg.paths.cv_report);
    let f = File::create(&report_path).map_err(PipelineError::io(report_path.display()))?;
    modelsel::write_cv_report(BufWriter::new(f), plan.metric, Some(&ncv), Some(&search))?;
    Ok(TrainSummary {
        error_estimate: Some(ncv.error_estimate),
        hyper: model.hyper,
        converged: stats.converged,
        support_vectors: model.support_points.len(),
        rows: is.records.len(),
    })
}

/// Everything needed to answer configuration queries.
pub struct Recommender {
    pub model: SvrModel,
    pub pipeline: FeaturePipeline,
    pub space: ConfigurationSpace,
    pub config_columns: Vec<usize>,
}

impl Recommender {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let model = SvrModel::load(&cfg.path(&cfg.paths.model))?;
        let pipeline = FeaturePipeline::load(&cfg.path(&cfg.paths.pipeline))?;
        let space = cfg.load_space()?;
        let config_columns =
            cssp::config_columns_by_name(&model, &space).map_err(|source| PipelineError::Cssp { instance: "-".into(), source })?;
        Ok(Recommender { model, pipeline, space, config_columns })
    }

    pub fn problem(&self, id: &str, raw_features: &[f64]) -> Result<cssp::CsspProblem, PipelineError> {
        let f = self.pipeline.transform(raw_features)?;
        cssp::build_problem_with_columns(&self.model, &self.space, &f, &self.config_columns)
            .map_err(|source| PipelineError::Cssp { instance: id.into(), source })
    }

    pub fn recommend(
        &self,
        id: &str,
        raw_features: &[f64],
        settings: &SolverSettings,
    ) -> Result<CsspSolution, PipelineError> {
        let problem = self.problem(id, raw_features)?;
        cssp::solve(&problem, settings).map_err(|source| PipelineError::Cssp { instance: id.into(), source })
    }
}

/// Recommends a configuration for every instance in `features_file` (same
/// layout as the instances file) and writes the recommendations CSV.
pub fn cmd_configure(cfg: &RunConfig, features_file: &Path) -> Result<Vec<(String, CsspSolution)>, PipelineError> {
    let rec = Recommender::load(cfg)?;
    let queries = InstanceSet::load(features_file)?;
    if queries.feature_names != rec.pipeline.input_names {
        return Err(PipelineError::Feature(FeatureError::Width {
            expected: rec.pipeline.input_names.len(),
            got: queries.feature_names.len(),
        }));
    }
    let settings = cfg.solver_settings()?;
    let results = crate::par_map(queries.instances.len(), |i| {
        let q = &queries.instances[i];
        rec.recommend(&q.id, &q.features, &settings).map(|s| (q.id.clone(), s))
    });
    let solutions: Vec<(String, CsspSolution)> = results.into_iter().collect::<Result<_, _>>()?;

    let out = cfg.path(&cfg.paths.recommendations);
    write_recommendations(&out, &rec.space, &solutions)?;
    Ok(solutions)
}

fn write_recommendations(
    path: &Path,
    space: &ConfigurationSpace,
    sols: &[(String, CsspSolution)],
) -> Result<(), PipelineError> {
    let ctx = path.display().to_string();
    let csv_err = |e: csv::Error| PipelineError::Io { context: ctx.clone(), source: std::io::Error::other(e) };
    let f = File::create(path).map_err(PipelineError::io(&ctx))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let mut header: Vec<String> =
        ["instance_id", "encoding", "objective", "status", "nodes_or_moves", "elapsed_s"].map(String::from).to_vec();
    header.extend(space.parameters().iter().map(|p| p.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (id, s) in sols {
        let mut row = vec![
            id.clone(),
            s.config.encoding_string(),
            format!("{:e}", s.objective),
            s.status.as_str().to_string(),
            s.nodes_or_moves.to_string(),
            format!("{:.6}", s.elapsed_s),
        ];
        row.extend(space.assignment(&s.config).into_values());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(PipelineError::io(&ctx))?;
    Ok(())
}

/// Per-instance evaluation detail.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEval {
    pub instance_id: String,
    pub split: Split,
    pub heuristic: CsspSolution,
    pub global: CsspSolution,
    /// Measured raw performance of the recommended, default and best configurations.
    pub p_sol: f64,
    pub p_default: Option<f64>,
    pub p_best: f64,
    /// 0-based rank of the recommended configuration by measured performance.
    pub rank: usize,
    pub n_configs: usize,
    pub gaps_sol: GapRecord,
    pub gaps_default: Option<GapRecord>,
}

/// Scores the configured solver against enumeration and against the default
/// configuration, using the measured performance of every configuration in
/// the raw dataset. Writes `eval.csv`, `eval.txt` and `instances.csv` into
/// `paths.report_dir`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(EvalReport, Vec<InstanceEval>), PipelineError> {
    let rec = Recommender::load(cfg)?;
    let raw = cfg.load_dataset(&cfg.paths.raw)?;
    let prepared = cfg.load_dataset(&cfg.paths.prepared)?;
    let settings = cfg.solver_settings()?;
    let default_cfg = match rec.space.default_assignment() {
        Some(a) => Some(rec.space.encode(a).map_err(|source| PipelineError::Space { context: "default".into(), source })?),
        None => None,
    };

    let mut by_instance: BTreeMap<&str, Vec<&dataset::PerformanceRecord>> = BTreeMap::new();
    for r in &raw.records {
        by_instance.entry(r.instance_id.as_str()).or_default().push(r);
    }
    let ids: Vec<(&String, Split)> = prepared.split.iter().map(|(k, v)| (k, *v)).collect();
    let evals = crate::par_map(ids.len(), |i| -> Result<InstanceEval, PipelineError> {
        let (id, split) = ids[i];
        let features = raw.features.get(id).ok_or_else(|| PipelineError::Dataset {
            context: format!("instance {id}"),
            source: DatasetError::UnknownColumn(id.clone()),
        })?;
        let problem = rec.problem(id, features)?;
        let cssp_err = |source| PipelineError::Cssp { instance: id.clone(), source };
        let global = cssp::solve_enumerate(&problem).map_err(cssp_err)?;
        let mut heuristic = cssp::solve(&problem, &settings).map_err(cssp_err)?;
        heuristic.certify(&global);
        let records = by_instance.get(id.as_str()).map(Vec::as_slice).unwrap_or_default();
        let find = |enc: &[u8]| records.iter().find(|r| r.config == enc).copied();
        let missing = |what: &str| PipelineError::Dataset {
            context: format!("instance {id}: no measurement for the {what} configuration"),
            source: DatasetError::EmptyInput,
        };
        let sol = find(heuristic.config.encoding()).ok_or_else(|| missing("recommended"))?;
        let def = default_cfg.as_ref().and_then(|d| find(d.encoding()));
        let p_best = records.iter().map(|r| r.p_raw).fold(f64::INFINITY, f64::min);
        let rank = records.iter().filter(|r| r.p_raw < sol.p_raw).count();
        let gaps = |r: &dataset::PerformanceRecord| GapRecord { primal_gap: r.primal_gap, dual_gap: r.dual_gap };
        Ok(InstanceEval {
            instance_id: id.clone(),
            split,
            p_sol: sol.p_raw,
            p_default: def.map(|r| r.p_raw),
            p_best,
            rank,
            n_configs: records.len(),
            gaps_sol: gaps(sol),
            gaps_default: def.map(gaps),
            heuristic,
            global,
        })
    });
    let evals: Vec<InstanceEval> = evals.into_iter().collect::<Result<_, _>>()?;

    let mut report = EvalReport::default();
    for split in [Split::InSample, Split::OutOfSample] {
        let part: Vec<&InstanceEval> = evals.iter().filter(|e| e.split == split).collect();
        if part.is_empty() {
            continue;
        }
        let pairs: Vec<QualityPair> =
            part.iter().map(|e| QualityPair::from_solutions(&e.heuristic, &e.global)).collect();
        let with_default: Vec<&&InstanceEval> = part.iter().filter(|e| e.p_default.is_some()).collect();
        let (wins, feasibility) = if with_default.is_empty() {
            (None, None)
        } else {
            let sol: Vec<f64> = with_default.iter().map(|e| e.p_sol).collect();
            let def: Vec<f64> = with_default.iter().map(|e| e.p_default.unwrap_or_default()).collect();
            let best: Vec<f64> = with_default.iter().map(|e| e.p_best).collect();
            let gs: Vec<GapRecord> = with_default.iter().map(|e| e.gaps_sol).collect();
            let gd: Vec<GapRecord> = with_default.iter().map(|e| e.gaps_default.unwrap_or_default()).collect();
            (Some(win_stats(&sol, &def, &best, cfg.eval.digits)?), Some(feasibility_stats(&gs, &gd)?))
        };
        report.rows.push(EvalRow {
            split: split.as_str().into(),
            scenario: cfg.scenario.clone(),
            metric: cfg.plan.metric.to_string(),
            quality: Some(cssp_quality(&pairs, cfg.eval.nonhit_only)?),
            wins,
            feasibility,
        });
    }

    let dir = cfg.path(&cfg.paths.report_dir);
    fs::create_dir_all(&dir).map_err(PipelineError::io(dir.display()))?;
    let csv_path = dir.join("eval.csv");
    report.write_csv(File::create(&csv_path).map_err(PipelineError::io(csv_path.display()))?)?;
    let txt_path = dir.join("eval.txt");
    fs::write(&txt_path, report.render_text()).map_err(PipelineError::io(txt_path.display()))?;
    write_instance_evals(&dir.join("instances.csv"), &evals)?;
    Ok((report, evals))
}

fn write_instance_evals(path: &Path, evals: &[InstanceEval]) -> Result<(), PipelineError> {
    let ctx = path.display().to_string();
    let csv_err = |e: csv::Error| PipelineError::Io { context: ctx.clone(), source: std::io::Error::other(e) };
    let f = File::create(path).map_err(PipelineError::io(&ctx))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record([
        "instance_id",
        "split",
        "heuristic_encoding",
        "heuristic_objective",
        "heuristic_status",
        "global_encoding",
        "global_objective",
        "p_sol",
        "p_default",
        "p_best",
        "rank",
        "n_configs",
    ])
    .map_err(csv_err)?;
    for e in evals {
        w.write_record([
            e.instance_id.clone(),
            e.split.as_str().to_string(),
            e.heuristic.config.encoding_string(),
            format!("{:e}", e.heuristic.objective),
            e.heuristic.status.as_str().to_string(),
            e.global.config.encoding_string(),
            format!("{:e}", e.global.objective),
            format!("{:e}", e.p_sol),
            e.p_default.map(|v| format!("{v:e}")).unwrap_or_default(),
            format!("{:e}", e.p_best),
            e.rank.to_string(),
            e.n_configs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(PipelineError::io(&ctx))?;
    Ok(())
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perfmap_core::modelsel::Metric;
use perfmap_core::pipeline::{self, PipelineError, RunConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_ADAPTER: u8 = 5;

#[derive(Parser)]
#[command(name = "perfmap", version, about = "Learn a solver performance map and configure new instances")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Selection scenario: noFS, a configured scenario name, or a scenario file.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Selection metric: mae, cmae02, cmae03 or cmae04.
    #[arg(long, global = true, value_parser = parse_metric)]
    metric: Option<Metric>,
    /// Configuration search method.
    #[arg(long, global = true, value_parser = ["enumerate", "bnb", "local"])]
    solver: Option<String>,
    /// Raw performance above this value counts as a failure and is clipped.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Per-run limit for the target and for configuration search.
    #[arg(long = "time-limit", global = true, value_name = "SECONDS")]
    time_limit: Option<f64>,
    /// Seed for splits, folds, hyperparameter draws and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 or unset: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Compute gaps against a zero optimum with a tiny denominator instead of failing.
    #[arg(long = "gap-eps", global = true)]
    gap_eps: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the target for every instance, configuration and seed.
    Collect,
    /// Normalize, engineer features, select columns, merge duplicates and split.
    Prepare,
    /// Nested cross-validation, hyperparameter search and final fit.
    Train,
    /// Recommend configurations for the instances in a features file.
    Configure {
        /// CSV with instance_id and the raw feature columns.
        features: PathBuf,
    },
    /// Compare recommendations with enumeration and with the default configuration.
    Evaluate,
    /// Generate a synthetic target, instances and ground truth.
    Synth,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { base_dir: PathBuf::from("."), ..RunConfig::default() },
    };
    if let Some(s) = &common.scenario {
        cfg.scenario = s.clone();
    }
    if let Some(m) = common.metric {
        cfg.plan.metric = m;
    }
    if let Some(s) = &common.solver {
        cfg.solver = s.clone();
    }
    if let Some(t) = common.threshold {
        cfg.threshold = t;
    }
    if let Some(t) = common.time_limit {
        cfg.time_limit_s = t;
    }
    if let Some(s) = common.seed {
        cfg.plan.seed = s;
        cfg.split_seed = s;
        cfg.synth.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if common.gap_eps {
        cfg.gap_eps = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn emitln(text: &str) {
    emit(&format!("{text}\n"));
}

fn run(cmd: &Cmd, cfg: &RunConfig) -> Result<u8, PipelineError> {
    match cmd {
        Cmd::Synth => {
            let b = pipeline::cmd_synth(cfg)?;
            emitln(&format!(
                "wrote {} instances, {} ground-truth rows to {}",
                b.instances.instances.len(),
                b.truth.len(),
                cfg.path(&cfg.paths.synth_dir).display()
            ));
            Ok(0)
        }
        Cmd::Collect => {
            let (ds, s) = pipeline::cmd_collect(cfg)?;
            emitln(&format!(
                "{} records; runs: {} total, {} executed, {} resumed, {} failed",
                ds.records.len(),
                s.total_runs,
                s.executed,
                s.resumed,
                s.failures
            ));
            Ok(if s.failures > 0 { EXIT_ADAPTER } else { 0 })
        }
        Cmd::Prepare => {
            let s = pipeline::cmd_prepare(cfg)?;
            emitln(&format!(
                "scenario {}: {} rows, {} IS / {} OS instances; clip value {:e}",
                s.scenario, s.rows, s.in_sample, s.out_of_sample, s.normalization.clip_value
            ));
            Ok(0)
        }
        Cmd::Train => {
            let s = pipeline::cmd_train(cfg)?;
            if let Some(e) = s.error_estimate {
                emitln(&format!("nested CV {} estimate: {e:.6e}", cfg.plan.metric));
            }
            emitln(&format!(
                "model: C={:e} gamma={:e} epsilon={:e}, {} support vectors from {} rows",
                s.hyper.c, s.hyper.kernel.gamma, s.hyper.epsilon, s.support_vectors, s.rows
            ));
            if !s.converged {
                eprintln!("warning: final SVR fit stopped at its iteration budget");
                return Ok(EXIT_NOT_CONVERGED);
            }
            Ok(0)
        }
        Cmd::Configure { features } => {
            let sols = pipeline::cmd_configure(cfg, features)?;
            let space = cfg.load_space()?;
            for (id, s) in &sols {
                emitln(&format!("# instance {id}"));
                emit(&s.render(&space));
            }
            let n = sols.len().max(1) as f64;
            let mean = sols.iter().map(|(_, s)| s.elapsed_s).sum::<f64>() / n;
            emitln(&format!("# {} instances, mean solve time {mean:.3} s", sols.len()));
            Ok(0)
        }
        Cmd::Evaluate => {
            let (report, _) = pipeline::cmd_evaluate(cfg)?;
            emit(&report.render_text());
            emitln(&format!("reports written to {}", cfg.path(&cfg.paths.report_dir).display()));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(p) = &cli.common.config {
        if !p.exists() {
            eprintln!("error: config file {} not found", p.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let cfg = match load_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    match perfmap_core::with_threads(cfg.jobs, || run(&cli.command, &cfg)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

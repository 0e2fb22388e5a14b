//! Performance collection: runs a target algorithm for every (instance,
//! feasible configuration, seed) triple, journaling each completed run so an
//! interrupted collection resumes where it stopped.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::configspace::{Assignment, Configuration, ConfigurationSpace};
use crate::dataset::{aggregate_seeds, compute_gaps, median_index, Dataset, DatasetError, PerformanceRecord, Split};

pub const PLACEHOLDERS: [&str; 4] = ["{instance}", "{config_file}", "{seed}", "{time_limit}"];
/// Environment variable overriding the configured adapter command template.
pub const ADAPTER_ENV: &str = "PERFMAP_ADAPTER_CMD";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("run exceeded the wall-clock limit of {0:.1} s")]
    Timeout(f64),
    #[error("command exited with {0}")]
    ExitStatus(String),
    #[error("no PERF=<float> line in output")]
    NoPerf,
    #[error("adapter i/o: {0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("no seeds given")]
    NoSeeds,
    #[error("no instances given")]
    NoInstances,
    #[error("space has no feasible configuration")]
    EmptySpace,
    #[error("instances file: {0}")]
    Instances(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One instance as the collector sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceInfo {
    pub id: String,
    /// Passed to the adapter as `{instance}`; defaults to the id.
    pub path: Option<String>,
    /// Known optimal objective value, used for gaps.
    pub optimum: Option<f64>,
    pub features: Vec<f64>,
}

/// Instance list with a shared feature schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceSet {
    pub feature_names: Vec<String>,
    pub instances: Vec<InstanceInfo>,
}

impl InstanceSet {
    /// CSV with `instance_id`, optional `path` and `optimum` columns, and one
    /// numeric column per feature.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, CollectError> {
        let err = |e: csv::Error| CollectError::Instances(e.to_string());
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers().map_err(err)?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("instance_id") {
            return Err(CollectError::Instances("first column must be instance_id".into()));
        }
        let path_col = header.iter().position(|h| h == "path");
        let opt_col = header.iter().position(|h| h == "optimum");
        let feat_cols: Vec<usize> = (1..header.len()).filter(|&i| Some(i) != path_col && Some(i) != opt_col).collect();
        let mut set = InstanceSet {
            feature_names: feat_cols.iter().map(|&i| header[i].clone()).collect(),
            instances: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(err)?;
            let num = |i: usize| {
                rec[i].trim().parse::<f64>().map_err(|_| {
                    CollectError::Instances(format!("row {}: column {}: bad number `{}`", row + 1, header[i], &rec[i]))
                })
            };
            let id = rec[0].to_string();
            if !seen.insert(id.clone()) {
                return Err(CollectError::Instances(format!("duplicate instance `{id}`")));
            }
            let optimum = match opt_col {
                Some(i) if !rec[i].trim().is_empty() => Some(num(i)?),
                _ => None,
            };
            set.instances.push(InstanceInfo {
                id,
                path: path_col.map(|i| rec[i].to_string()).filter(|p| !p.is_empty()),
                optimum,
                features: feat_cols.iter().map(|&i| num(i)).collect::<Result<_, _>>()?,
            });
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CollectError> {
        let f = File::open(path).map_err(|e| CollectError::Instances(format!("{}: {e}", path.display())))?;
        Self::read_csv(f)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CollectError> {
        let err = |e: csv::Error| CollectError::Instances(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["instance_id".to_string(), "optimum".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for inst in &self.instances {
            let mut row = vec![inst.id.clone(), inst.optimum.map(|v| format!("{v:e}")).unwrap_or_default()];
            row.extend(inst.features.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CollectError> {
        self.write_csv(File::create(path)?)
    }
}

/// Result of one target run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub perf: f64,
    pub incumbent: Option<f64>,
    pub bound: Option<f64>,
}

/// Something that can run the target algorithm on an instance.
pub trait TargetAdapter: Sync {
    fn run(
        &self,
        instance: &InstanceInfo,
        config: &Configuration,
        assignment: &Assignment,
        seed: u64,
        time_limit_s: f64,
    ) -> Result<RunOutcome, AdapterError>;
}

/// Parses `KEY=value` tokens; the last `PERF`, `INCUMBENT` and `BOUND` seen
/// win. Lines without `PERF` still contribute incumbent and bound.
pub fn parse_output(stdout: &str) -> Result<RunOutcome, AdapterError> {
    let (mut perf, mut inc, mut bound) = (None, None, None);
    for line in stdout.lines() {
        for tok in line.split_whitespace() {
            let Some((k, v)) = tok.split_once('=') else { continue };
            let Ok(x) = v.parse::<f64>() else { continue };
            match k {
                "PERF" => perf = Some(x),
                "INCUMBENT" => inc = Some(x),
                "BOUND" => bound = Some(x),
                _ => {}
            }
        }
    }
    Ok(RunOutcome { perf: perf.ok_or(AdapterError::NoPerf)?, incumbent: inc, bound })
}

/// Runs a shell command built from a template.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandAdapter {
    pub template: String,
    /// Extra wall-clock seconds granted beyond the run's time limit.
    pub grace_s: f64,
}

impl CommandAdapter {
    pub fn new(template: impl Into<String>) -> Self {
        CommandAdapter { template: template.into(), grace_s: 10.0 }
    }

    /// Uses the environment override when set.
    pub fn from_env_or(template: Option<String>) -> Option<Self> {
        std::env::var(ADAPTER_ENV).ok().filter(|s| !s.trim().is_empty()).or(template).map(Self::new)
    }

    pub fn expand(&self, instance: &str, config_file: &str, seed: u64, time_limit_s: f64) -> String {
        self.template
            .replace("{instance}", instance)
            .replace("{config_file}", config_file)
            .replace("{seed}", &seed.to_string())
            .replace("{time_limit}", &format!("{time_limit_s}"))
    }
}

impl TargetAdapter for CommandAdapter {
    fn run(
        &self,
        instance: &InstanceInfo,
        _config: &Configuration,
        assignment: &Assignment,
        seed: u64,
        time_limit_s: f64,
    ) -> Result<RunOutcome, AdapterError> {
        let io = |e: std::io::Error| AdapterError::Io(e.to_string());
        let mut cfg_file = tempfile::Builder::new().prefix("perfmap-cfg-").suffix(".txt").tempfile().map_err(io)?;
        for (k, v) in assignment {
            writeln!(cfg_file, "{k}={v}").map_err(io)?;
        }
        cfg_file.flush().map_err(io)?;
        let target = instance.path.as_deref().unwrap_or(&instance.id);
        let cmd = self.expand(target, &cfg_file.path().to_string_lossy(), seed, time_limit_s);

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(io)?;
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let limit = time_limit_s.max(0.0) + self.grace_s;
        let start = Instant::now();
        let status = loop {
            if let Some(st) = child.try_wait().map_err(io)? {
                break st;
            }
            if start.elapsed().as_secs_f64() > limit {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AdapterError::Timeout(limit));
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        let out = reader.join().unwrap_or_default();
        if !status.success() {
            return Err(AdapterError::ExitStatus(status.to_string()));
        }
        parse_output(&out)
    }
}

/// Key of one run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunKey {
    pub instance_id: String,
    pub encoding: String,
    pub seed: u64,
}

/// A journaled run; `outcome` is `None` for a failed run.
#[derive(Debug, Clone, PartialEq)]
pub struct JournalEntry {
    pub key: RunKey,
    pub outcome: Option<RunOutcome>,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_else(|| "-".into())
}

fn checksum(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl JournalEntry {
    /// Tab-separated fields followed by a checksum of the preceding text.
    pub fn to_line(&self) -> String {
        let (status, perf, inc, bound) = match &self.outcome {
            Some(o) => ("ok", format!("{:e}", o.perf), opt_field(o.incumbent), opt_field(o.bound)),
            None => ("fail", "-".into(), "-".into(), "-".into()),
        };
        let body = format!(
            "{}\t{}\t{}\t{status}\t{perf}\t{inc}\t{bound}",
            self.key.instance_id, self.key.encoding, self.key.seed
        );
        format!("{body}\t{}", checksum(&body))
    }

    /// `None` for truncated or corrupted lines.
    pub fn parse_line(line: &str) -> Option<JournalEntry> {
        let (body, sum) = line.rsplit_once('\t')?;
        if checksum(body) != sum {
            return None;
        }
        let f: Vec<&str> = body.split('\t').collect();
        if f.len() != 7 {
            return None;
        }
        let opt = |s: &str| if s == "-" { Some(None) } else { s.parse::<f64>().ok().map(Some) };
        let key = RunKey { instance_id: f[0].into(), encoding: f[1].into(), seed: f[2].parse().ok()? };
        let outcome = match f[3] {
            "ok" => Some(RunOutcome { perf: f[4].parse().ok()?, incumbent: opt(f[5])?, bound: opt(f[6])? }),
            "fail" => None,
            _ => return None,
        };
        Some(JournalEntry { key, outcome })
    }
}

/// Reads every valid entry; later entries for the same key win.
pub fn read_journal(path: &Path) -> Result<BTreeMap<RunKey, Option<RunOutcome>>, CollectError> {
    let mut map = BTreeMap::new();
    if !path.exists() {
        return Ok(map);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if let Some(e) = JournalEntry::parse_line(&line) {
            map.insert(e.key, e.outcome);
        } else if !line.trim().is_empty() {
            log::warn!("skipping damaged journal line");
        }
    }
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub seeds: Vec<u64>,
    pub time_limit_s: f64,
    /// Clip threshold; failed runs are recorded as `10 × threshold`.
    pub threshold: f64,
    pub gap_eps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CollectSummary {
    pub total_runs: usize,
    pub executed: usize,
    pub resumed: usize,
    pub failures: usize,
}

/// Runs every missing triple (appending to `journal` if given) and builds the
/// unnormalized dataset from the complete journal.
pub fn collect(
    adapter: &dyn TargetAdapter,
    instances: &InstanceSet,
    space: &ConfigurationSpace,
    opts: &CollectOptions,
    journal: Option<&Path>,
) -> Result<(Dataset, CollectSummary), CollectError> {
    if opts.seeds.is_empty() {
        return Err(CollectError::NoSeeds);
    }
    if instances.instances.is_empty() {
        return Err(CollectError::NoInstances);
    }
    let configs: Vec<Configuration> = space.enumerate().collect();
    if configs.is_empty() {
        return Err(CollectError::EmptySpace);
    }
    let mut done = match journal {
        Some(p) => read_journal(p)?,
        None => BTreeMap::new(),
    };

    let mut todo: Vec<(usize, usize, u64)> = Vec::new();
    for (i, inst) in instances.instances.iter().enumerate() {
        for (c, cfg) in configs.iter().enumerate() {
            for &seed in &opts.seeds {
                let key = RunKey { instance_id: inst.id.clone(), encoding: cfg.encoding_string(), seed };
                if !done.contains_key(&key) {
                    todo.push((i, c, seed));
                }
            }
        }
    }
    let total_runs = instances.instances.len() * configs.len() * opts.seeds.len();
    let resumed = total_runs - todo.len();

    let writer = match journal {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))
        }
        None => None,
    };
    let results = crate::par_map(todo.len(), |t| {
        let (i, c, seed) = todo[t];
        let inst = &instances.instances[i];
        let cfg = &configs[c];
        let outcome = match adapter.run(inst, cfg, &space.assignment(cfg), seed, opts.time_limit_s) {
            Ok(o) if o.perf.is_finite() => Some(o),
            Ok(_) => None,
            Err(e) => {
                log::warn!("run {} / {} / seed {seed} failed: {e}", inst.id, cfg.encoding_string());
                None
            }
        };
        let entry = JournalEntry {
            key: RunKey { instance_id: inst.id.clone(), encoding: cfg.encoding_string(), seed },
            outcome,
        };
        if let Some(w) = &writer {
            let mut f = w.lock().unwrap_or_else(|p| p.into_inner());
            writeln!(f, "{}", entry.to_line()).and_then(|_| f.flush())?;
        }
        Ok::<_, std::io::Error>(entry)
    });
    for r in results {
        let e = r?;
        done.insert(e.key, e.outcome);
    }

    let sentinel = 10.0 * opts.threshold;
    let mut failures = 0;
    let mut ds = Dataset {
        feature_names: instances.feature_names.clone(),
        config_names: space.bit_names(),
        ..Dataset::default()
    };
    for inst in &instances.instances {
        ds.features.insert(inst.id.clone(), inst.features.clone());
        ds.split.insert(inst.id.clone(), Split::InSample);
        for cfg in &configs {
            let enc = cfg.encoding_string();
            let outcomes: Vec<Option<RunOutcome>> = opts
                .seeds
                .iter()
                .map(|&seed| done[&RunKey { instance_id: inst.id.clone(), encoding: enc.clone(), seed }])
                .collect();
            failures += outcomes.iter().filter(|o| o.is_none()).count();
            let values: Vec<f64> = outcomes.iter().map(|o| o.map_or(sentinel, |o| o.perf)).collect();
            let p_raw = aggregate_seeds(&values)?;
            let mid = outcomes[median_index(&values).expect("seeds nonempty")];
            let (primal_gap, dual_gap) = match inst.optimum {
                Some(opt) => compute_gaps(opt, mid.and_then(|o| o.incumbent), mid.and_then(|o| o.bound), opts.gap_eps)?,
                None => (None, None),
            };
            ds.records.push(PerformanceRecord {
                instance_id: inst.id.clone(),
                config: cfg.encoding().to_vec(),
                seed_values: values,
                p_raw,
                p_norm: None,
                primal_gap,
                dual_gap,
            });
        }
    }
    Ok((ds, CollectSummary { total_runs, executed: todo.len(), resumed, failures }))
}

//! Synthetic targets: a planted Gaussian-kernel expansion over (instance
//! features, configuration bits) standing in for a real solver, so the whole
//! pipeline can be checked against a known ground truth.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collect::{AdapterError, CollectError, InstanceInfo, InstanceSet, RunOutcome, TargetAdapter};
use crate::configspace::{Assignment, Configuration, ConfigurationSpace};
use crate::svr::{SvrHyper, SvrModel};

/// Optimum reported for every synthetic instance, so gaps are defined.
pub const SYNTH_OPTIMUM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTarget {
    /// Planted map over raw inputs (features, then encoding bits).
    pub planted: SvrModel,
    /// Half-width of the uniform observation noise.
    pub noise: f64,
    pub seed: u64,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl SyntheticTarget {
    /// Noise-free performance.
    pub fn value(&self, features: &[f64], encoding: &[u8]) -> f64 {
        let mut x = features.to_vec();
        x.extend(encoding.iter().map(|&b| b as f64));
        self.planted.predict_scaled(&x)
    }

    /// Performance observed for one run; deterministic in all arguments.
    pub fn observe(&self, instance_id: &str, features: &[f64], encoding: &[u8], run_seed: u64) -> f64 {
        let v = self.value(features, encoding);
        if self.noise == 0.0 {
            return v;
        }
        let h = fnv1a(&[&self.seed.to_le_bytes(), instance_id.as_bytes(), encoding, &run_seed.to_le_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        v + self.noise * rng.gen_range(-1.0..=1.0)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("target serializes"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

impl TargetAdapter for SyntheticTarget {
    fn run(
        &self,
        instance: &InstanceInfo,
        config: &Configuration,
        _assignment: &Assignment,
        seed: u64,
        _time_limit_s: f64,
    ) -> Result<RunOutcome, AdapterError> {
        let perf = self.observe(&instance.id, &instance.features, config.encoding(), seed);
        let opt = instance.optimum.unwrap_or(SYNTH_OPTIMUM);
        Ok(RunOutcome { perf, incumbent: Some(opt * (1.0 + 0.1 * perf)), bound: Some(opt * (1.0 - 0.05 * perf)) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_instances: usize,
    pub n_features: usize,
    pub n_support: usize,
    pub gamma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { n_instances: 40, n_features: 3, n_support: 30, gamma: 0.5, noise: 0.0, seed: 0 }
    }
}

/// Ground-truth performance of one (instance, configuration) pair and its
/// 0-based rank among the instance's configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub instance_id: String,
    pub encoding: String,
    pub perf: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub target: SyntheticTarget,
    pub instances: InstanceSet,
    pub truth: Vec<TruthRow>,
}

impl SynthBundle {
    /// The best configuration of each instance (rank 0), in instance order.
    pub fn optima(&self) -> Vec<&TruthRow> {
        self.truth.iter().filter(|r| r.rank == 0).collect()
    }

    /// Writes `target.json`, `instances.csv`, `space.json`, `truth.csv` and
    /// `optima.csv` into `dir`.
    pub fn write(&self, dir: &Path, space: &ConfigurationSpace) -> Result<(), CollectError> {
        fs::create_dir_all(dir)?;
        self.target.save(&dir.join("target.json"))?;
        self.instances.save(&dir.join("instances.csv"))?;
        fs::write(dir.join("space.json"), space.to_json())?;
        let mut t = File::create(dir.join("truth.csv"))?;
        writeln!(t, "instance_id,encoding,perf,rank")?;
        for r in &self.truth {
            writeln!(t, "{},{},{:e},{}", r.instance_id, r.encoding, r.perf, r.rank)?;
        }
        let mut o = File::create(dir.join("optima.csv"))?;
        writeln!(o, "instance_id,encoding,perf")?;
        for r in self.optima() {
            writeln!(o, "{},{},{:e}", r.instance_id, r.encoding, r.perf)?;
        }
        Ok(())
    }
}

/// Plants a random target over `space` and samples instances for it.
/// Performance is shifted so every value is positive.
pub fn generate(spec: &SynthSpec, space: &ConfigurationSpace) -> Result<SynthBundle, CollectError> {
    let configs: Vec<Configuration> = space.enumerate().collect();
    if configs.is_empty() {
        return Err(CollectError::EmptySpace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nf = spec.n_features;
    let mut support_points = Vec::with_capacity(spec.n_support);
    let mut dual_weights = Vec::with_capacity(spec.n_support);
    for _ in 0..spec.n_support {
        let mut x: Vec<f64> = (0..nf).map(|_| rng.gen::<f64>()).collect();
        let c = &configs[rng.gen_range(0..configs.len())];
        x.extend(c.encoding().iter().map(|&b| b as f64));
        support_points.push(x);
        dual_weights.push(rng.gen_range(-1.0..1.0));
    }
    let bias = dual_weights.iter().map(|w: &f64| w.abs()).sum::<f64>() + 0.1;
    let mut columns: Vec<String> = (0..nf).map(|j| format!("f{j}")).collect();
    columns.extend(space.bit_names());
    let planted = SvrModel {
        hyper: SvrHyper::new(1.0, 0.0, spec.gamma),
        bias,
        support_points,
        dual_weights,
        scaler: None,
        input_columns: columns,
        n_features: nf,
    };
    let target = SyntheticTarget { planted, noise: spec.noise, seed: spec.seed };

    let width = spec.n_instances.max(1).to_string().len();
    let instances = InstanceSet {
        feature_names: (0..nf).map(|j| format!("f{j}")).collect(),
        instances: (0..spec.n_instances)
            .map(|i| InstanceInfo {
                id: format!("inst{i:0width$}"),
                path: None,
                optimum: Some(SYNTH_OPTIMUM),
                features: (0..nf).map(|_| rng.gen::<f64>()).collect(),
            })
            .collect(),
    };

    let mut truth = Vec::with_capacity(spec.n_instances * configs.len());
    for inst in &instances.instances {
        let mut vals: Vec<(f64, usize)> =
            configs.iter().enumerate().map(|(k, c)| (target.value(&inst.features, c.encoding()), k)).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0).then(configs[a.1].encoding().cmp(configs[b.1].encoding())));
        let mut rank = vec![0; configs.len()];
        for (r, (_, k)) in vals.iter().enumerate() {
            rank[*k] = r;
        }
        for (k, c) in configs.iter().enumerate() {
            truth.push(TruthRow {
                instance_id: inst.id.clone(),
                encoding: c.encoding_string(),
                perf: target.value(&inst.features, c.encoding()),
                rank: rank[k],
            });
        }
    }
    Ok(SynthBundle { target, instances, truth })
}

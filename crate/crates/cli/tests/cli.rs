use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use perfmap_core::configspace::{example_solver_space, ConfigurationSpace, Parameter};

const BIN: &str = env!("CARGO_BIN_EXE_perfmap");

/// 2·3·4 = 24 configurations.
fn space24() -> ConfigurationSpace {
    let s = ConfigurationSpace::new(
        vec![
            Parameter::new("a", &["0", "1"]),
            Parameter::new("b", &["x", "y", "z"]),
            Parameter::new("c", &["0", "1", "2", "3"]),
        ],
        vec![],
    )
    .unwrap();
    let d = [("a", "0"), ("b", "y"), ("c", "1")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    s.with_default(d).unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new(space: &ConfigurationSpace, n_instances: usize, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("space.json"), space.to_json()).unwrap();
        let toml = format!(
            r#"seeds = [1, 2, 3]
os_fraction = 0.3
solver = "enumerate"
{extra}
[paths]
instances = "synth/instances.csv"
[adapter]
synthetic = "synth/target.json"
[plan]
outer_folds = 2
inner_folds = 2
draws = 3
metric = "mae"
seed = 1
[synth]
n_instances = {n_instances}
n_features = 2
n_support = 12
gamma = 0.5
noise = 0.0
seed = 3
"#
        );
        fs::write(dir.path().join("run.toml"), toml).unwrap();
        Work { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN).arg("--config").arg(self.path("run.toml")).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "perfmap {args:?} failed ({:?}): {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }
}

fn data_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

fn field(out: &str, key: &str) -> Vec<String> {
    out.lines().filter_map(|l| l.strip_prefix(&format!("{key}="))).map(str::to_string).collect()
}

#[test]
fn collect_counts_rows_and_resumes_without_duplicates() {
    let w = Work::new(&space24(), 10, "");
    w.ok(&["synth"]);
    let out = w.ok(&["collect"]);
    assert!(out.contains("720 total, 720 executed, 0 resumed"), "{out}");
    assert_eq!(data_rows(&w.path("raw.csv")), 240);
    let first = fs::read(w.path("raw.csv")).unwrap();

    // Drop the tail of the journal as if interrupted mid-run.
    let journal = fs::read_to_string(w.path("collect.journal")).unwrap();
    let keep: Vec<&str> = journal.lines().take(300).collect();
    fs::write(w.path("collect.journal"), keep.join("\n") + "\n").unwrap();
    let out = w.ok(&["collect"]);
    assert!(out.contains("420 executed, 300 resumed"), "{out}");
    assert_eq!(data_rows(&w.path("raw.csv")), 240);
    assert_eq!(fs::read(w.path("raw.csv")).unwrap(), first);

    let out = w.ok(&["collect"]);
    assert!(out.contains("0 executed, 720 resumed"), "{out}");
}

#[test]
fn missing_space_file_fails_before_any_run() {
    let w = Work::new(&space24(), 4, "");
    w.ok(&["synth"]);
    fs::remove_file(w.path("space.json")).unwrap();
    let o = w.run(&["collect"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("space.json"));
    assert!(!w.path("collect.journal").exists());
    assert!(!w.path("raw.csv").exists());
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let o = Command::new(BIN).args(["--config", "/nonexistent/run.toml", "train"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let w = Work::new(&space24(), 4, "bogus_key = 1");
    let o = w.run(&["synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let w = Work::new(&space24(), 10, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    let out = w.ok(&["prepare"]);
    assert!(out.contains("scenario noFS"), "{out}");
    let files = ["prepared.csv", "pipeline.json", "normalization.json"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(w.path(f)).unwrap()).collect();
    w.ok(&["prepare"]);
    for (f, a) in files.iter().zip(&first) {
        assert_eq!(&fs::read(w.path(f)).unwrap(), a, "{f} changed");
    }
    // noFS keeps every engineered column: 2 features + 9 encoding bits.
    let header = fs::read_to_string(w.path("prepared.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').filter(|c| c.starts_with("c:")).count(), 9);
    assert!(header.contains("f0") && header.contains("f1"));
}

#[test]
fn all_values_clipped_is_reported_with_context() {
    let w = Work::new(&space24(), 4, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    let o = w.run(&["--threshold", "1e-9", "prepare"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("threshold") && err.contains("raw.csv") && err.contains("96 rows"), "{err}");
}

#[test]
fn train_records_the_selected_metric() {
    let w = Work::new(&space24(), 10, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    let out = w.ok(&["--metric", "cmae03", "train"]);
    assert!(out.contains("nested CV cmae03 estimate"), "{out}");
    let report = fs::read_to_string(w.path("cv_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "fold,draw,C,gamma,epsilon,score,metric,stage");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().all(|r| r.split(',').nth(6) == Some("cmae03")));
    for stage in ["inner", "outer", "final"] {
        assert!(rows.iter().any(|r| r.ends_with(stage)), "no {stage} rows");
    }
    assert!(w.path("model.json").exists());
}

#[test]
fn train_rejects_prepared_data_without_labels() {
    let w = Work::new(&space24(), 6, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    let text = fs::read_to_string(w.path("prepared.csv")).unwrap();
    let header = text.lines().next().unwrap();
    let drop = header.split(',').position(|c| c == "p_norm").unwrap();
    let stripped: String = text
        .lines()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').enumerate().filter(|(i, _)| *i != drop).map(|(_, c)| c).collect();
            cells.join(",") + "\n"
        })
        .collect();
    fs::write(w.path("prepared.csv"), stripped).unwrap();
    let o = w.run(&["train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p_norm"));
}

#[test]
fn full_loop_configures_and_evaluates() {
    let w = Work::new(&space24(), 10, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    w.ok(&["train"]);
    let out = w.ok(&["configure", w.path("synth/instances.csv").to_str().unwrap()]);
    assert_eq!(field(&out, "objective").len(), 10);
    assert!(field(&out, "status").iter().all(|s| s == "global_optimal"));
    assert!(out.contains("# 10 instances, mean solve time"));
    assert_eq!(data_rows(&w.path("recommendations.csv")), 10);

    let out = w.ok(&["evaluate"]);
    assert!(out.contains("Search quality"), "{out}");
    for f in ["eval.csv", "eval.txt", "instances.csv"] {
        assert!(w.path("report").join(f).exists(), "missing report/{f}");
    }
    let eval = fs::read_to_string(w.path("report/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 3, "{eval}");
    assert!(!eval.contains("-0e0"));
}

#[test]
fn local_search_is_reproducible_with_fixed_seed() {
    let w = Work::new(&space24(), 6, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    w.ok(&["train"]);
    let feats = w.path("synth/instances.csv");
    let args = ["--solver", "local", "--seed", "9", "configure", feats.to_str().unwrap()];
    let a = w.ok(&args);
    let b = w.ok(&args);
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("elapsed_s=") && !l.starts_with("# ")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));
    assert!(field(&a, "status").iter().all(|s| s == "local"));
}

#[test]
fn enumerate_and_bnb_agree_on_2304_config_space() {
    let space = example_solver_space();
    assert_eq!(space.enumerate().count(), 2304);
    let w = Work::new(&space, 8, "subsample = 200");
    // Single seed keeps collection to 8 · 2304 runs.
    let toml = fs::read_to_string(w.path("run.toml")).unwrap().replace("seeds = [1, 2, 3]", "seeds = [1]");
    fs::write(w.path("run.toml"), toml).unwrap();
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    w.ok(&["train"]);
    let feats = w.path("synth/instances.csv");
    let e = w.ok(&["--solver", "enumerate", "configure", feats.to_str().unwrap()]);
    let b = w.ok(&["--solver", "bnb", "configure", feats.to_str().unwrap()]);
    let oe = field(&e, "objective");
    let ob = field(&b, "objective");
    assert_eq!(oe.len(), 8);
    for (x, y) in oe.iter().zip(&ob) {
        let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        assert!((x - y).abs() <= 1e-9, "enumerate {x} vs bnb {y}");
    }
    assert!(field(&b, "status").iter().all(|s| s == "global_optimal"));
}

#[test]
fn configure_output_survives_closed_pipe() {
    let w = Work::new(&space24(), 6, "");
    w.ok(&["synth"]);
    w.ok(&["collect"]);
    w.ok(&["prepare"]);
    w.ok(&["train"]);
    let cmd = format!(
        "'{BIN}' --config '{}' configure '{}' | head -n 1",
        w.path("run.toml").display(),
        w.path("synth/instances.csv").display()
    );
    let o = Command::new("sh").args(["-c", &format!("set -o pipefail 2>/dev/null; {cmd}")]).output().unwrap();
    assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
}

//! End-to-end runs of the `dpfl` binary in a scratch directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpfl_lab::formats;
use dpfl_lab::manifest::RunManifest;
use dpfl_lab::LabConfig;
use tempfile::TempDir;

const SMALL: &str = r#"
[data]
dim = 12
n_train = 40

[model]
width = 4

[dp]
batch = 20
iters = 6

[eval]
n_mc = 20

[attack]
steps = 4

[disparate]
sigma_ns = [0.0, 0.1]
replicates = 2

[phase_sweep]
feature_sizes = [0.0, 6.0]
sigma_ns = [0.0, 2.0]
replicates = 2
dim = 10
width = 4
n_per_class = 10
n_test_per_class = 10
batch = 10
iters = 5

[finetune]
thetas_deg = [0.0, 45.0]
replicates = 2
dim = 10
width = 4
pretrain_n = 20
pretrain_batch = 10
pretrain_iters = 5
n_train = 20
batch = 10
iters = 4
n_test_per_class = 10

[freeze]
epochs = 3
replicates = 2
"#;

struct Sandbox {
    tmp: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("small.toml"), SMALL).unwrap();
        Sandbox { tmp }
    }

    fn path(&self) -> &Path {
        self.tmp.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, None)
    }

    fn run_env(&self, args: &[&str], seed_env: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpfl"));
        cmd.current_dir(self.path()).args(["--out", "out", "--quiet"]).args(args).env_remove("DPFL_SEED");
        if let Some(s) = seed_env {
            cmd.env("DPFL_SEED", s);
        }
        cmd.output().unwrap()
    }

    /// Runs a subcommand that must succeed and returns its run directory.
    fn ok(&self, args: &[&str]) -> PathBuf {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        self.path().join(String::from_utf8(out.stdout).unwrap().trim())
    }
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn bounds_json_is_nested_by_class_and_group() {
    let sb = Sandbox::new();
    let dir = sb.ok(&["bounds"]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("bounds.json")).unwrap()).unwrap();
    let grid = v["grid"].as_array().unwrap();
    assert_eq!(grid.len(), LabConfig::default().disparate.sigma_ns.len());
    for g in grid {
        for class in ["1", "2"] {
            for group in ["maj", "min"] {
                let c = &g["classes"][class][group];
                for key in ["vanishing", "generalization", "privacy", "total"] {
                    assert!(c["upper"][key].is_number(), "{class}/{group}/{key}");
                }
                assert!(c["adv_bound"].as_f64().unwrap() > c["upper"]["total"].as_f64().unwrap());
            }
        }
    }
    // Every cell's upper bound grows with the noise level.
    let total = |g: &serde_json::Value| g["classes"]["2"]["min"]["upper"]["total"].as_f64().unwrap();
    assert!(grid.windows(2).all(|w| total(&w[1]) > total(&w[0])));
    let csv = fs::read_to_string(dir.join("bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * grid.len());
    assert!(csv.lines().skip(1).all(|l| l.starts_with(&manifest(&dir).run_id)));
}

#[test]
fn zero_learning_rate_leaves_the_checkpoint_unchanged() {
    let sb = Sandbox::new();
    let cfg = SMALL.replace("[dp]\n", "[dp]\neta = 0.0\nsigma_n = 0.5\n");
    fs::write(sb.path().join("eta0.toml"), cfg).unwrap();
    let dir = sb.ok(&["--config", "eta0.toml", "train"]);
    let init = fs::read(dir.join("init.ckpt")).unwrap();
    let last = fs::read(dir.join("final.ckpt")).unwrap();
    assert_eq!(init, last);
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 7);
    assert!(trace.starts_with("run_id,iter,mean_loss,grad_norm_mean,clip_fraction,noise_norm"));
    let inc = fs::read_to_string(dir.join("increments.csv")).unwrap();
    assert_eq!(inc.lines().count(), 1 + 4 * 6);
}

#[test]
fn training_moves_the_weights_and_attack_reads_the_checkpoint() {
    let sb = Sandbox::new();
    let dir = sb.ok(&["--config", "small.toml", "train"]);
    let init = formats::read_checkpoint(&mut fs::read(dir.join("init.ckpt")).unwrap().as_slice()).unwrap();
    let last = formats::read_checkpoint(&mut fs::read(dir.join("final.ckpt")).unwrap().as_slice()).unwrap();
    assert_ne!(init.weights(), last.weights());
    let ckpt = dir.join("final.ckpt");
    let adir = sb.ok(&["--config", "small.toml", "attack", "--checkpoint", ckpt.to_str().unwrap()]);
    let csv = fs::read_to_string(adir.join("attack.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let clean: f64 = r[3].parse().unwrap();
        let adv: f64 = r[5].parse().unwrap();
        assert!(adv >= clean);
    }

    // A checkpoint of the wrong shape is a configuration mismatch.
    let out = sb.run(&["attack", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_data_dump_matches_the_config() {
    let sb = Sandbox::new();
    let dir = sb.ok(&["--config", "small.toml", "gen-data"]);
    let data = formats::read_dataset(&mut fs::read(dir.join("dataset.bin")).unwrap().as_slice()).unwrap();
    let cfg = LabConfig::from_toml(SMALL).unwrap();
    let spec = cfg.data.spec().unwrap();
    assert_eq!(data, cfg.data.train_set(&spec));
    let cells = fs::read_to_string(dir.join("cells.csv")).unwrap();
    let total: usize = cells.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 40);
}

#[test]
fn report_on_an_empty_directory_fails_with_exit_1() {
    let sb = Sandbox::new();
    fs::create_dir(sb.path().join("empty")).unwrap();
    let out = sb.run(&["report", "empty"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no CSV files"));
    assert!(!sb.path().join("out").exists());
}

#[test]
fn report_summarizes_earlier_runs() {
    let sb = Sandbox::new();
    sb.ok(&["--config", "small.toml", "train"]);
    let dir = sb.ok(&["report", "out"]);
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("file,column,count,mean,min,max\n"));
    assert!(summary.lines().any(|l| l.contains("trace.csv,mean_loss,6,")));
}

#[test]
fn config_errors_name_the_key_and_exit_1() {
    let sb = Sandbox::new();
    fs::write(sb.path().join("bad.toml"), "[dp]\nclip = \"big\"\n").unwrap();
    let out = sb.run(&["--config", "bad.toml", "bounds"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dp.clip"));

    fs::write(sb.path().join("bad.toml"), "[attack]\nradius = -1.0\n").unwrap();
    let out = sb.run(&["--config", "bad.toml", "bounds"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attack.radius"));

    assert_eq!(sb.run(&["--config", "missing.toml", "bounds"]).status.code(), Some(2));
    assert_eq!(sb.run(&["launch"]).status.code(), Some(1));
    assert_eq!(sb.run(&["bounds", "--jobs", "0"]).status.code(), Some(1));
    assert_eq!(sb.run_env(&["bounds"], Some("seven")).status.code(), Some(1));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let sb = Sandbox::new();
    for cmd in ["bounds", "train", "gen-data"] {
        let first = sb.ok(&["--config", "small.toml", cmd]);
        let echoed = first.join("config.toml");
        let second = sb.ok(&["--config", echoed.to_str().unwrap(), cmd]);
        let m1 = manifest(&first);
        assert_eq!(m1.config, manifest(&second).config);
        assert_eq!(m1.run_id, manifest(&second).run_id);
        for f in &m1.outputs {
            assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{cmd}: {f}");
        }
    }
}

#[test]
fn experiments_rerun_bitwise_from_their_manifest() {
    let sb = Sandbox::new();
    for cmd in ["phase-sweep", "disparate", "finetune", "freeze"] {
        let first = sb.ok(&["--config", "small.toml", "--jobs", "3", cmd]);
        let m = first.join("manifest.json");
        let second = sb.ok(&["--config", m.to_str().unwrap(), "--jobs", "1", cmd]);
        let outputs = manifest(&first).outputs;
        assert!(outputs.iter().filter(|f| f.ends_with(".csv")).count() >= 2, "{cmd}");
        for f in &outputs {
            assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{cmd}: {f}");
        }
    }
}

#[test]
fn seed_override_order() {
    let sb = Sandbox::new();
    let file = manifest(&sb.ok(&["--config", "small.toml", "bounds"])).config;
    let env = manifest(&{
        let out = sb.run_env(&["--config", "small.toml", "bounds"], Some("11"));
        assert!(out.status.success());
        sb.path().join(String::from_utf8(out.stdout).unwrap().trim())
    })
    .config;
    let both = manifest(&{
        let out = sb.run_env(&["--config", "small.toml", "--seed", "12", "bounds"], Some("11"));
        assert!(out.status.success());
        sb.path().join(String::from_utf8(out.stdout).unwrap().trim())
    })
    .config;
    let flag = manifest(&sb.ok(&["--config", "small.toml", "--seed", "12", "bounds"])).config;
    assert_ne!(file, env);
    assert_ne!(env, both);
    assert_eq!(both, flag);
    let mut want = file.clone();
    want.override_seed(11);
    assert_eq!(env, want);
}

#[test]
fn nothing_is_written_outside_the_output_directory() {
    let sb = Sandbox::new();
    sb.ok(&["--config", "small.toml", "bounds"]);
    sb.ok(&["--config", "small.toml", "train"]);
    let mut names: Vec<String> =
        fs::read_dir(sb.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["out", "small.toml"]);
    let mut runs: Vec<String> = fs::read_dir(sb.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    runs.sort();
    assert_eq!(runs, ["bounds", "train"]);
}

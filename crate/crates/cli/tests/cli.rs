use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vrnet_core::checkpoint;
use vrnet_core::io::{parse_f64, read_dataset};
use vrnet_core::network::NetworkState;
use vrnet_core::prune::count_params;
use vrnet_core::train::{initial_threshold, TrainData};

const TINY: &str = r#"
seed = 3

[array]
n = 16
s = 4
n_rf = 2
fc = 100e9

[pilots]
p = 8
snr_db = 10.0
combiner_seed = 1

[data]
train = 48
val = 16
test = 16

[arch]
layers = 2
width = 4
kernel = 3
gate_width = 2
gate_kernel = 3

[train]
epochs = 2
batch_size = 16

[eval]
snr_list = [0.0, 20.0]
pilot_list = [4, 8]
"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Env { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_vrnet"))
            .args(args)
            .current_dir(self.dir.path())
            .env("VRNET_OUT", self.path("runs"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn with_data(self) -> Self {
        self.ok(&["gen", "--config", "tiny.toml"]);
        self
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn params_of(dir: &Path) -> Vec<f64> {
    let m = checkpoint::read_manifest(dir).unwrap();
    parse_f64(&fs::read(dir.join(m.params_file)).unwrap()).unwrap()
}

#[test]
fn gen_is_reproducible_and_checksummed() {
    let e = Env::new().with_data();
    e.ok(&["gen", "--config", "tiny.toml", "--out", "again"]);
    for split in ["train", "val", "test"] {
        let a = fs::read_to_string(e.path("runs/data").join(format!("{split}.toml"))).unwrap();
        let b = fs::read_to_string(e.path("again").join(format!("{split}.toml"))).unwrap();
        assert_eq!(a, b);
        let (m, samples) = read_dataset(&e.path("runs/data"), split).unwrap();
        assert_eq!(m.count, samples.len());
    }
    let obs = fs::read_to_string(e.path("runs/data/test_obs.toml")).unwrap();
    assert!(obs.contains("snr_db = 10.0") && obs.contains("combiner_policy = \"per_sample\""));
}

#[test]
fn desk_preset_has_desk_split_sizes() {
    let e = Env::new();
    e.ok(&["gen", "--config", "desk"]);
    let counts: Vec<usize> = ["train", "val", "test"].iter().map(|s| read_dataset(&e.path("runs/data"), s).unwrap().0.count).collect();
    assert_eq!(counts, vec![4000, 500, 500]);
}

#[test]
fn config_errors_exit_with_one() {
    let e = Env::new();
    fs::write(e.path("typo.toml"), TINY.replace("[train]", "[train]\nlearnig_rate = 0.1")).unwrap();
    let o = e.run(&["gen", "--config", "typo.toml"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("learnig_rate"));
    assert_eq!(code(&e.run(&["gen", "--config", "missing.toml"])), 1);
    assert_eq!(code(&e.run(&["frobnicate"])), 1);
    assert_eq!(code(&e.run(&["--help"])), 0);
}

#[test]
fn zero_epochs_store_the_initialization() {
    let e = Env::new().with_data();
    e.ok(&["train", "--epochs", "0"]);
    let cfg = vrnet_core::config::ExperimentConfig::from_toml(TINY).unwrap();
    let (_, train) = read_dataset(&e.path("runs/data"), "train").unwrap();
    let pilots = cfg.pilots_for(vrnet_core::config::Split::Train);
    let mut init = NetworkState::init(&cfg.arch, cfg.array.n, cfg.seed).unwrap();
    let z0 = initial_threshold(&TrainData { array: &cfg.array, pilots: &pilots, samples: &train }, cfg.train.val_snr_db, cfg.train.seed)
        .unwrap();
    init.calibrate(z0).unwrap();
    assert_eq!(params_of(&e.path("runs/ckpt")), init.flatten());
    let log = fs::read_to_string(e.path("runs/ckpt/train_log.csv")).unwrap();
    assert!(log.starts_with("# config_hash="));
    assert!(log.lines().any(|l| l == "epoch,loss,nmse_db,sdr,lr,nonzero_params"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let e = Env::new().with_data();
    e.ok(&["train", "--out", "straight"]);
    e.ok(&["train", "--out", "split", "--stop-after", "1"]);
    assert_eq!(checkpoint::read_manifest(&e.path("split")).unwrap().rng.next_epoch, 1);
    assert_eq!(code(&e.run(&["train", "--out", "split"])), 1);
    e.ok(&["train", "--out", "split", "--resume"]);
    assert_eq!(params_of(&e.path("split")), params_of(&e.path("straight")));
    let strip = |p: &str| fs::read_to_string(e.path(p)).unwrap();
    assert_eq!(strip("split/train_log.csv"), strip("straight/train_log.csv"));
}

#[test]
fn sequential_flag_gives_identical_checkpoints() {
    let e = Env::new().with_data();
    e.ok(&["train", "--out", "par"]);
    e.ok(&["--sequential", "train", "--out", "seq"]);
    assert_eq!(params_of(&e.path("par")), params_of(&e.path("seq")));
}

#[test]
fn training_refuses_data_from_another_config() {
    let e = Env::new().with_data();
    fs::write(e.path("other.toml"), TINY.replace("seed = 3", "seed = 4")).unwrap();
    let o = e.run(&["train", "--config", "other.toml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("data hash"));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_failure() {
    let e = Env::new().with_data();
    e.ok(&["train", "--epochs", "0"]);
    let dir = e.path("runs/ckpt");
    let m = checkpoint::read_manifest(&dir).unwrap();
    let p = dir.join(m.params_file);
    let mut b = fs::read(&p).unwrap();
    b[3] ^= 0x40;
    fs::write(&p, b).unwrap();
    let o = e.run(&["params"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checksum"));
}

#[test]
fn eval_sweeps_skip_missing_models_and_plot() {
    let e = Env::new().with_data();
    e.ok(&["train"]);
    let o = e.ok(&["eval", "--model", "runs/ckpt", "--model", "runs/absent"]);
    assert!(stderr(&o).contains("skipping"));
    let csv = fs::read_to_string(e.path("runs/results-snr.csv")).unwrap();
    assert!(csv.contains("# config_hash="));
    assert!(csv.lines().any(|l| l == "sweep_var,method,nmse_db,nmse_ci,sdr,sdr_ci,n_samples,failures"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("0,") || l.starts_with("20,")).count(), 4);
    assert_eq!(csv.matches("# inputs ").count(), 2);

    e.ok(&["eval", "--sweep", "pilots", "--model", "runs/ckpt"]);
    let pil = fs::read_to_string(e.path("runs/results-pilots.csv")).unwrap();
    assert!(pil.contains("# axis=pilots"));

    e.ok(&["plot"]);
    e.ok(&["plot", "--out", "again.svg"]);
    let svg = fs::read_to_string(e.path("runs/results-snr.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(e.path("again.svg")).unwrap());
    assert_eq!(svg.matches(r#"class="series""#).count(), 2);
    assert!(svg.contains("SNR (dB)"));
}

#[test]
fn eval_rejects_empty_sweeps_and_no_methods() {
    let e = Env::new().with_data();
    fs::write(e.path("empty.toml"), TINY.replace("snr_list = [0.0, 20.0]", "snr_list = []")).unwrap();
    assert_eq!(code(&e.run(&["eval", "--config", "empty.toml"])), 1);
    assert_eq!(code(&e.run(&["eval", "--no-genie", "--model", "nowhere"])), 1);
}

#[test]
fn eval_refuses_models_trained_on_other_data() {
    let e = Env::new().with_data();
    fs::write(e.path("other.toml"), TINY.replace("seed = 3", "seed = 4")).unwrap();
    e.ok(&["gen", "--config", "other.toml", "--out", "other"]);
    e.ok(&["train", "--data", "other", "--epochs", "0", "--out", "foreign"]);
    let o = e.run(&["eval", "--model", "foreign"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn prune_then_params_reports_the_census() {
    let e = Env::new().with_data();
    e.ok(&["train", "--epochs", "1"]);
    e.ok(&["prune", "--rho", "0.8", "--epochs", "1"]);
    let dir = e.path("runs/ckpt-pruned");
    let (t, _) = checkpoint::load(&dir).unwrap();
    let census = count_params(&t.state);
    let out = e.ok(&["params", "--ckpt", dir.to_str().unwrap(), "--csv"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), census.to_csv());
    let mask = t.mask.unwrap();
    let pruned = mask.keep.iter().filter(|k| !**k).count() as f64 / mask.keep.len() as f64;
    assert!((pruned - 0.8).abs() < 0.02, "{pruned}");
    let mut prunable_nonzero = 0;
    t.state.visit(&mut |_, role, _, v| {
        if role.prunable() {
            prunable_nonzero += v.iter().filter(|w| **w != 0.0).count();
        }
    });
    assert!(prunable_nonzero as f64 <= 0.21 * census.total.prunable as f64);
    assert_eq!(code(&e.run(&["prune", "--rho", "1.5"])), 1);
}

#[test]
fn trace_dumps_every_layer() {
    let e = Env::new().with_data();
    e.ok(&["train", "--epochs", "0"]);
    e.ok(&["trace", "--index", "2"]);
    let text = fs::read_to_string(e.path("runs/trace-2.csv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("layer")).count();
    assert_eq!(rows, 2 * 16);
    assert_eq!(code(&e.run(&["trace", "--index", "99"])), 1);
}

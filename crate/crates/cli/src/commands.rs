use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use vrnet_core::channel::{generate_dataset, ChannelSample};
use vrnet_core::checkpoint::{self, CheckpointManifest, Provenance, MANIFEST};
use vrnet_core::config::{ExperimentConfig, Split};
use vrnet_core::eval::{sweep_pilots, sweep_snr, EvalResult, GenieLs, Method, NetworkMethod};
use vrnet_core::io::{read_dataset, write_atomic, write_dataset, write_observations, DatasetManifest, ObservationManifest};
use vrnet_core::network::{Mode, NetworkState, Variant};
use vrnet_core::prune::count_params;
use vrnet_core::train::{eval_draw, observe_sample, prepare, EpochLog, TrainData, Trainer, LOG_HEADER};
use vrnet_core::Exec;

use crate::{plot, CliResult, EvalArgs, Failure, GenArgs, ParamsArgs, PlotArgs, PruneArgs, SweepArg, TraceArgs, TrainArgs};

const CONFIG_FILE: &str = "config.toml";
const LOG_FILE: &str = "train_log.csv";

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// A preset name or a path to a config file.
fn resolve_config(spec: &str) -> CliResult<ExperimentConfig> {
    if let Some(c) = ExperimentConfig::preset(spec) {
        return Ok(c);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!("no preset or config file named {spec:?}")));
    }
    Ok(ExperimentConfig::load(path)?)
}

/// `--config` if given, else the config stored next to the data.
fn load_config(spec: Option<&str>, data_dir: &Path) -> CliResult<ExperimentConfig> {
    match spec {
        Some(s) => resolve_config(s),
        None => {
            let p = data_dir.join(CONFIG_FILE);
            if !p.exists() {
                return Err(usage(format!("{} not found; run `vrnet gen` or pass --config", p.display())));
            }
            Ok(ExperimentConfig::load(&p)?)
        }
    }
}

/// Reads a split and refuses it unless it was generated for `data_hash`.
fn load_split(dir: &Path, split: Split, data_hash: &str) -> CliResult<(DatasetManifest, Vec<ChannelSample>)> {
    let (m, samples) = read_dataset(dir, split.name())?;
    if m.data_hash != data_hash {
        return Err(usage(format!(
            "{} split in {} was generated with data hash {}, expected {data_hash}",
            split.name(),
            dir.display(),
            m.data_hash
        )));
    }
    Ok((m, samples))
}

fn provenance_line(config_hash: &str, data_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} data_hash={data_hash} master_seed={seed}\n")
}

pub fn gen(root: &Path, a: &GenArgs, exec: Exec) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let out = a.out.clone().unwrap_or_else(|| root.join("data"));
    let hash = cfg.hash();
    for split in Split::ALL {
        let seed = cfg.split_seed(split);
        let samples = generate_dataset(&cfg.array, cfg.split_count(split), seed, cfg.data.paths, exec)?;
        let template = DatasetManifest {
            format_version: 0,
            kind: String::new(),
            split: split.name().into(),
            count: 0,
            array: cfg.array,
            paths: cfg.data.paths,
            seed,
            record_floats: 0,
            data_file: String::new(),
            sha256: String::new(),
            config_hash: hash.clone(),
            data_hash: cfg.data_hash(),
        };
        let dm = write_dataset(&out, &template, &samples)?;
        let pilots = cfg.pilots_for(split);
        let snr = cfg.pilots.snr_db;
        let ys = exec
            .map(&samples, |i, s| observe_sample(&cfg.array, &pilots, s, i, Some(eval_draw(cfg.seed, snr, i))).map(|b| b.y))
            .into_iter()
            .collect::<vrnet_core::Result<Vec<_>>>()?;
        let om = ObservationManifest {
            format_version: 0,
            kind: String::new(),
            split: split.name().into(),
            count: 0,
            snr_db: snr,
            pilots: pilots.p,
            n_rf: cfg.array.n_rf,
            combiner_policy: pilots.combiner_policy,
            combiner_seed: pilots.combiner_seed,
            noise_seed: cfg.seed,
            dataset_sha256: dm.sha256.clone(),
            data_file: String::new(),
            sha256: String::new(),
            config_hash: hash.clone(),
        };
        write_observations(&out, &om, &ys)?;
        println!("{:<5} {:>6} records  sha256 {}", split.name(), dm.count, dm.sha256);
    }
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    println!("wrote {} (config {hash})", out.display());
    Ok(())
}

fn write_log(dir: &Path, t: &Trainer, prov: &Provenance, variant: Variant) -> CliResult<()> {
    let mut s = provenance_line(&prov.config_hash, &prov.data_hash, prov.master_seed);
    let _ = writeln!(s, "# variant={variant:?}");
    s.push_str(LOG_HEADER);
    s.push('\n');
    for e in &t.log {
        s.push_str(&e.csv_row());
        s.push('\n');
    }
    Ok(write_atomic(&dir.join(LOG_FILE), s.as_bytes())?)
}

fn report(e: &EpochLog) {
    eprintln!(
        "epoch {:>3}  loss {:.5}  val nmse {:>7.2} dB  sdr {:.4}  lr {:.2e}  nonzero {}",
        e.epoch, e.loss, e.nmse_db, e.sdr, e.lr, e.nonzero_params
    );
}

pub fn train(root: &Path, a: &TrainArgs, exec: Exec) -> CliResult<()> {
    let data_dir = a.data.clone().unwrap_or_else(|| root.join("data"));
    let variant: Variant = a.variant.into();
    let mut cfg = load_config(a.config.as_deref(), &data_dir)?.with_variant(variant);
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let (_, train) = load_split(&data_dir, Split::Train, &cfg.data_hash())?;
    let (_, val) = load_split(&data_dir, Split::Val, &cfg.data_hash())?;
    let (tp, vp) = (cfg.pilots_for(Split::Train), cfg.pilots_for(Split::Val));
    let td = TrainData { array: &cfg.array, pilots: &tp, samples: &train };
    let vd = TrainData { array: &cfg.array, pilots: &vp, samples: &val };
    let out = a.out.clone().unwrap_or_else(|| {
        root.join(match variant {
            Variant::Full => "ckpt",
            Variant::Ablation => "ckpt-ablation",
        })
    });
    let prov = Provenance { config_hash: cfg.hash(), data_hash: cfg.data_hash(), master_seed: cfg.seed };
    let mut trainer = if out.join(MANIFEST).exists() {
        if !a.resume {
            return Err(usage(format!("{} already holds a checkpoint; pass --resume to continue it", out.display())));
        }
        let (t, m) = checkpoint::load(&out)?;
        if m.config_hash != prov.config_hash {
            return Err(usage(format!("checkpoint config {} does not match current config {}", m.config_hash, prov.config_hash)));
        }
        eprintln!("resuming {} at epoch {}", out.display(), t.epoch);
        t
    } else {
        if a.resume {
            return Err(usage(format!("nothing to resume in {}", out.display())));
        }
        let state = NetworkState::init(&cfg.arch, cfg.array.n, cfg.seed)?;
        let mut t = Trainer::new(state, cfg.train.clone())?;
        t.ensure_calibrated(&td)?;
        checkpoint::save(&out, &t, &prov)?;
        write_log(&out, &t, &prov, variant)?;
        t
    };
    eprintln!("training {variant:?} ({} parameters, config {})", trainer.state.num_params(), prov.config_hash);
    let stop = a.stop_after.map_or(usize::MAX, |k| trainer.epoch + k).min(trainer.cfg.epochs);
    while trainer.epoch < stop {
        let e = trainer.run_epoch(&td, Some(&vd), exec)?;
        checkpoint::save(&out, &trainer, &prov)?;
        write_log(&out, &trainer, &prov, variant)?;
        report(&e);
    }
    println!("wrote {} ({} of {} epochs)", out.display(), trainer.epoch, trainer.cfg.epochs);
    Ok(())
}

/// Loads a checkpoint and the config stored with its data, and checks they
/// belong together.
fn load_model(dir: &Path, cfg: &ExperimentConfig) -> CliResult<(Trainer, CheckpointManifest)> {
    let (t, m) = checkpoint::load(dir)?;
    if m.data_hash != cfg.data_hash() || m.antennas != cfg.array.n {
        return Err(usage(format!(
            "checkpoint {} was trained on data {} ({} antennas), not {} ({} antennas)",
            dir.display(),
            m.data_hash,
            m.antennas,
            cfg.data_hash(),
            cfg.array.n
        )));
    }
    Ok((t, m))
}

pub fn prune(root: &Path, a: &PruneArgs, exec: Exec) -> CliResult<()> {
    let data_dir = a.data.clone().unwrap_or_else(|| root.join("data"));
    let cfg = load_config(None, &data_dir)?;
    let ckpt = a.ckpt.clone().unwrap_or_else(|| root.join("ckpt"));
    let (trained, m) = load_model(&ckpt, &cfg)?;
    if !(a.rho > 0.0 && a.rho < 1.0) {
        return Err(usage(format!("--rho must lie in (0, 1), got {}", a.rho)));
    }
    let (_, train) = load_split(&data_dir, Split::Train, &m.data_hash)?;
    let (_, val) = load_split(&data_dir, Split::Val, &m.data_hash)?;
    let (tp, vp) = (cfg.pilots_for(Split::Train), cfg.pilots_for(Split::Val));
    let td = TrainData { array: &cfg.array, pilots: &tp, samples: &train };
    let vd = TrainData { array: &cfg.array, pilots: &vp, samples: &val };
    let lr = a.lr.unwrap_or(trained.cfg.lr * 0.25);
    let mut ft = trained.pruned(a.rho, a.epochs, lr)?;
    let out = a.out.clone().unwrap_or_else(|| root.join("ckpt-pruned"));
    let prov = Provenance { config_hash: m.config_hash.clone(), data_hash: m.data_hash.clone(), master_seed: m.rng.master_seed };
    let variant = m.arch.variant;
    if let Some(k) = &ft.mask {
        eprintln!(
            "pruned {} of {} prunable weights at rho = {} (threshold {:.3e})",
            k.keep.iter().filter(|x| !**x).count(),
            k.keep.len(),
            a.rho,
            k.threshold
        );
    }
    checkpoint::save(&out, &ft, &prov)?;
    write_log(&out, &ft, &prov, variant)?;
    ft.fit(&td, Some(&vd), exec, |t, e| {
        checkpoint::save(&out, t, &prov)?;
        write_log(&out, t, &prov, variant).map_err(|f| vrnet_core::Error::Format(f.to_string()))?;
        report(e);
        Ok(())
    })?;
    println!("wrote {}", out.display());
    Ok(())
}

fn method_name(m: &CheckpointManifest, pruned: bool) -> String {
    let base = match m.arch.variant {
        Variant::Full => "dugc_vrnet",
        Variant::Ablation => "mdisr_net",
    };
    if pruned {
        format!("{base}_pruned")
    } else {
        base.to_string()
    }
}

pub fn eval(root: &Path, a: &EvalArgs, exec: Exec) -> CliResult<()> {
    let data_dir = a.data.clone().unwrap_or_else(|| root.join("data"));
    let cfg = load_config(a.config.as_deref(), &data_dir)?;
    let (_, test) = load_split(&data_dir, Split::Test, &cfg.data_hash())?;
    let dirs = if a.models.is_empty() { vec![root.join("ckpt"), root.join("ckpt-ablation")] } else { a.models.clone() };
    let mut models: Vec<(String, NetworkState)> = Vec::new();
    let mut names = BTreeSet::new();
    for dir in &dirs {
        if !dir.join(MANIFEST).exists() {
            eprintln!("warning: no checkpoint in {}, skipping", dir.display());
            continue;
        }
        let (t, m) = load_model(dir, &cfg)?;
        let mut name = method_name(&m, t.mask.is_some());
        if !names.insert(name.clone()) {
            let tag = dir.file_name().map_or_else(|| "model".into(), |f| f.to_string_lossy().into_owned());
            name = format!("{name}@{tag}");
            names.insert(name.clone());
        }
        models.push((name, t.state));
    }
    let nets: Vec<NetworkMethod> = models.iter().map(|(n, s)| NetworkMethod { name: n.clone(), state: s }).collect();
    let mut methods: Vec<&dyn Method> = nets.iter().map(|m| m as &dyn Method).collect();
    if !a.no_genie {
        methods.push(&GenieLs);
    }
    if methods.is_empty() {
        return Err(usage("no methods to evaluate"));
    }
    let mut pilots = cfg.pilots_for(Split::Test);
    if a.sweep == SweepArg::Snr {
        pilots.p = a.pilots.or(cfg.eval.snr_sweep_pilots).unwrap_or(cfg.pilots.p);
    }
    let data = TrainData { array: &cfg.array, pilots: &pilots, samples: &test };
    let (res, detail) = match a.sweep {
        SweepArg::Snr => {
            let list = a.snr_list.clone().unwrap_or_else(|| cfg.eval.snr_list.clone());
            (sweep_snr(&methods, &data, &list, cfg.seed, exec)?, format!("pilots={}", pilots.p))
        }
        SweepArg::Pilots => {
            let snr = a.snr.unwrap_or(cfg.eval.pilot_sweep_snr_db);
            let list = a.pilot_list.clone().unwrap_or_else(|| cfg.eval.pilot_list.clone());
            (sweep_pilots(&methods, &data, &list, snr, cfg.seed, exec)?, format!("snr_db={snr}"))
        }
    };
    let out = a.out.clone().unwrap_or_else(|| {
        root.join(match a.sweep {
            SweepArg::Snr => "results-snr.csv",
            SweepArg::Pilots => "results-pilots.csv",
        })
    });
    let text = results_csv(&cfg, &res, &detail);
    write_atomic(&out, text.as_bytes())?;
    print_results(&res);
    println!("wrote {}", out.display());
    Ok(())
}

fn results_csv(cfg: &ExperimentConfig, res: &EvalResult, detail: &str) -> String {
    let mut s = provenance_line(&cfg.hash(), &cfg.data_hash(), cfg.seed);
    let _ = writeln!(s, "# axis={} {detail}", res.axis.name());
    for (v, sum) in &res.checksums {
        let _ = writeln!(s, "# inputs {v} sha256={sum}");
    }
    s.push_str(&res.to_csv_body());
    s
}

fn print_results(res: &EvalResult) {
    println!("{:>8}  {:<20} {:>10} {:>8} {:>8} {:>6}", res.axis.name(), "method", "nmse_db", "±", "sdr", "fail");
    for r in &res.rows {
        println!("{:>8}  {:<20} {:>10.3} {:>8.3} {:>8.4} {:>6}", r.sweep_var, r.method, r.nmse_db, r.nmse_ci, r.sdr, r.failures);
    }
}

pub fn plot(root: &Path, a: &PlotArgs) -> CliResult<()> {
    let results = a.results.clone().unwrap_or_else(|| root.join("results-snr.csv"));
    let text = std::fs::read_to_string(&results).map_err(|e| Failure::Runtime(format!("{}: {e}", results.display())))?;
    let table = plot::parse_results(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", results.display())))?;
    let svg = plot::render(&table);
    let out = a.out.clone().unwrap_or_else(|| results.with_extension("svg"));
    write_atomic(&out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn params(root: &Path, a: &ParamsArgs) -> CliResult<()> {
    let dir = a.ckpt.clone().unwrap_or_else(|| root.join("ckpt"));
    let (t, m) = checkpoint::load(&dir)?;
    let census = count_params(&t.state);
    if a.csv {
        print!("{}", census.to_csv());
    } else {
        println!("checkpoint {}  config {}  variant {:?}", dir.display(), m.config_hash, m.arch.variant);
        if let Some(k) = &t.mask {
            println!("pruned at rho = {} ({:.1}% of prunable weights removed)", k.rho, 100.0 * k.pruned_fraction());
        }
        print!("{}", census.to_table());
    }
    Ok(())
}

pub fn trace(root: &Path, a: &TraceArgs) -> CliResult<()> {
    let data_dir = a.data.clone().unwrap_or_else(|| root.join("data"));
    let cfg = load_config(a.config.as_deref(), &data_dir)?;
    let dir = a.ckpt.clone().unwrap_or_else(|| root.join("ckpt"));
    let (t, m) = load_model(&dir, &cfg)?;
    let (_, test) = load_split(&data_dir, Split::Test, &m.data_hash)?;
    let sample = test.get(a.index).ok_or_else(|| usage(format!("index {} out of range (test split has {})", a.index, test.len())))?;
    let snr = a.snr.unwrap_or(cfg.pilots.snr_db);
    let pilots = cfg.pilots_for(Split::Test);
    let p = prepare(&cfg.array, &pilots, sample, a.index, Some(eval_draw(cfg.seed, snr, a.index)))?;
    let layers = t.state.trace(&p.y, &p.a, Mode::Eval)?;
    let mut s = provenance_line(&m.config_hash, &m.data_hash, m.rng.master_seed);
    let _ = writeln!(s, "# sample={} snr_db={snr} scale={:e}", a.index, p.scale);
    s.push_str("layer,antenna,h_dun_re,h_dun_im,h_gcn_re,h_gcn_im,u,z_re,z_im,h_re,h_im,u_true\n");
    for (l, it) in layers.iter().enumerate() {
        for n in 0..p.h.len() {
            let _ = writeln!(
                s,
                "{},{n},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                l + 1,
                it.h_dun[n].re,
                it.h_dun[n].im,
                it.h_gcn[n].re,
                it.h_gcn[n].im,
                it.u[n],
                it.z[n].re,
                it.z[n].im,
                p.h[n].re,
                p.h[n].im,
                p.u[n]
            );
        }
    }
    let out = a.out.clone().unwrap_or_else(|| root.join(format!("trace-{}.csv", a.index)));
    write_atomic(&out, s.as_bytes())?;
    println!("wrote {} ({} layers)", out.display(), layers.len());
    Ok(())
}

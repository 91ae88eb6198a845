//! End-to-end training: observation synthesis, batched gradients, Adam with
//! a cosine schedule, optional in-loop pruning, and a per-epoch log.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ArrayConfig, ChannelSample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{norm, CMatrix, C64};
use crate::measurement::{make_combiner_seeded, observe, sigma2_for_snr, PilotBlock, PilotConfig};
use crate::metrics::{harden, joint_loss, mean_ci, sdr, to_db};
use crate::network::{Mode, NetworkState, Role};
use crate::prune::{apply_prune, prune_threshold, PruneMask};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak rate of the cosine schedule.
    pub lr: f64,
    pub lr_min: f64,
    /// Rate for the edge thresholds.
    pub lr_zeta: f64,
    pub alpha: f64,
    /// Training SNR is drawn uniformly from this range for every sample
    /// and epoch.
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// SNR of the per-epoch validation pass.
    pub val_snr_db: f64,
    /// 0 disables pruning.
    pub prune_rho: f64,
    pub prune_start_epoch: usize,
    #[serde(with = "crate::seed::toml_u64")]
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 2e-3,
            lr_min: 0.0,
            lr_zeta: 2e-3,
            alpha: 0.5,
            snr_min_db: 0.0,
            snr_max_db: 20.0,
            val_snr_db: 10.0,
            prune_rho: 0.0,
            prune_start_epoch: 20,
            seed: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.prune_rho) {
            return bad(format!("prune_rho must lie in [0, 1), got {}", self.prune_rho));
        }
        if self.prune_rho > 0.0 && self.prune_start_epoch > self.epochs {
            return bad("prune_start_epoch exceeds epochs".into());
        }
        if !(self.lr >= 0.0 && self.lr_min >= 0.0 && self.lr_zeta >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(self.snr_min_db <= self.snr_max_db) || !self.snr_max_db.is_finite() || !self.snr_min_db.is_finite() {
            return bad("snr range must be finite with min <= max".into());
        }
        Ok(())
    }

    /// Cosine decay from `lr` at epoch 0 to `lr_min` at the last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let x = epoch.min(self.epochs) as f64 / self.epochs as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (PI * x).cos())
    }

    fn zeta_ratio(&self) -> f64 {
        if self.lr > 0.0 {
            self.lr_zeta / self.lr
        } else {
            0.0
        }
    }
}

/// One observation ready for the estimator. `h` is divided by
/// `scale = ‖y‖·√(N/M)`, which the receiver can compute. `A` is multiplied by
/// `√(N/M)` so its columns have unit expected norm whatever the pilot count,
/// and `y` is rescaled to match.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub y: Vec<C64>,
    pub a: CMatrix,
    pub h: Vec<C64>,
    pub u: Vec<u8>,
    pub scale: f64,
}

/// How the noise of one observation is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub snr_db: f64,
    pub noise_seed: u64,
}

/// Raw observation of sample `index`; `None` means noiseless.
pub fn observe_sample(
    array: &ArrayConfig,
    pilots: &PilotConfig,
    sample: &ChannelSample,
    index: usize,
    noise: Option<NoiseDraw>,
) -> Result<PilotBlock> {
    let a = make_combiner_seeded(array, pilots.p, pilots.combiner_seed_for(index as u64));
    let (sigma2, noise_seed) = match noise {
        Some(d) => (sigma2_for_snr(&sample.h, &a, d.snr_db)?, d.noise_seed),
        None => (0.0, 0),
    };
    observe(&sample.h, &a, array.n_rf, sigma2, noise_seed)
}

/// Combiner, noisy observation and normalization for one sample.
pub fn prepare(
    array: &ArrayConfig,
    pilots: &PilotConfig,
    sample: &ChannelSample,
    index: usize,
    noise: Option<NoiseDraw>,
) -> Result<Prepared> {
    let block = observe_sample(array, pilots, sample, index, noise)?;
    normalize(block.y, block.a, &sample.h, &sample.u)
}

pub fn normalize(y: Vec<C64>, mut a: CMatrix, h: &[C64], u: &[u8]) -> Result<Prepared> {
    let c = (a.cols as f64 / a.rows as f64).sqrt();
    let scale = norm(&y) * c;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("observation has zero energy".into()));
    }
    let inv = 1.0 / scale;
    a.data.iter_mut().for_each(|v| *v *= c);
    Ok(Prepared { y: y.iter().map(|v| v * (c * inv)).collect(), h: h.iter().map(|v| v * inv).collect(), a, u: u.to_vec(), scale })
}

/// Noise draw of sample `index` in training epoch `epoch`.
pub fn training_draw(cfg: &TrainConfig, epoch: usize, index: usize, count: usize) -> NoiseDraw {
    let key = (epoch * count + index) as u64;
    let mut rng = seed::rng(seed::derive(cfg.seed, seed::stream::SNR_DRAW, key));
    let snr_db = if cfg.snr_max_db > cfg.snr_min_db { rng.gen_range(cfg.snr_min_db..cfg.snr_max_db) } else { cfg.snr_min_db };
    NoiseDraw { snr_db, noise_seed: seed::derive(cfg.seed, seed::stream::NOISE, key) }
}

/// Fixed draw for evaluation: same noise for a given `(master, index)`.
pub fn eval_draw(master: u64, snr_db: f64, index: usize) -> NoiseDraw {
    NoiseDraw { snr_db, noise_seed: seed::derive(master, seed::stream::NOISE, u64::MAX / 2 + index as u64) }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub nmse: f64,
    pub sdr: Option<f64>,
    pub count: usize,
}

/// Mean loss and gradient over `batch`, reduced in input order.
pub fn batch_gradient(state: &NetworkState, batch: &[Prepared], alpha: f64, exec: Exec) -> Result<(BatchStats, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let per = exec.map(batch, |_, p| -> Result<(f64, f64, Option<f64>, Vec<f64>)> {
        let (est, tape) = state.forward(&p.y, &p.a, Mode::Train)?;
        let out = joint_loss(&est.h, &p.h, est.u.as_deref(), &p.u, if state.is_full() { alpha } else { 0.0 })?;
        let mut g = state.zeros_like();
        state.backward(&tape.expect("train mode records a tape"), &p.a, &out.d_h, out.d_u.as_deref(), &mut g);
        Ok((out.loss, out.nmse, out.sdr, g.flatten()))
    });
    let inv = 1.0 / batch.len() as f64;
    let mut stats = BatchStats { count: batch.len(), ..Default::default() };
    let mut grad = vec![0.0; state.num_params()];
    let mut sdr_acc = 0.0;
    let mut has_sdr = false;
    for r in per {
        let (l, e, s, g) = r?;
        stats.loss += l * inv;
        stats.nmse += e * inv;
        if let Some(s) = s {
            sdr_acc += s * inv;
            has_sdr = true;
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b * inv;
        }
    }
    stats.sdr = has_sdr.then_some(sdr_acc);
    Ok((stats, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps }
    }

    /// One step; `rates[i]` is the step size of parameter `i`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], rates: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= rates[i] * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Per-parameter step multipliers: thresholds get `ratio`, the rest 1.
fn rate_multipliers(state: &NetworkState, zeta_ratio: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.num_params());
    state.visit(&mut |_, role, _, v| {
        let r = if role == Role::Threshold { zeta_ratio } else { 1.0 };
        out.extend(std::iter::repeat_n(r, v.len()));
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub nmse_db: f64,
    pub sdr: f64,
    pub lr: f64,
    pub nonzero_params: usize,
}

pub const LOG_HEADER: &str = "epoch,loss,nmse_db,sdr,lr,nonzero_params";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{:.8e},{:.4},{:.6},{:.6e},{}", self.epoch, self.loss, self.nmse_db, self.sdr, self.lr, self.nonzero_params)
    }
}

/// Training data: channels plus everything needed to synthesize their
/// observations.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub array: &'a ArrayConfig,
    pub pilots: &'a PilotConfig,
    pub samples: &'a [ChannelSample],
}

/// Mean edge threshold start value: the average antenna magnitude of the
/// matched-filter estimate over (at most) the first 200 samples.
pub fn initial_threshold(data: &TrainData, snr_db: f64, master: u64) -> Result<f64> {
    let k = data.samples.len().min(200);
    if k == 0 {
        return Err(Error::Degenerate("no samples to calibrate on".into()));
    }
    let mut acc = 0.0;
    for i in 0..k {
        let p = prepare(data.array, data.pilots, &data.samples[i], i, Some(eval_draw(master, snr_db, i)))?;
        let h0 = p.a.mul_vec_h(&p.y);
        acc += h0.iter().map(|v| v.norm()).sum::<f64>() / h0.len() as f64;
    }
    Ok(acc / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub nmse: Vec<f64>,
    pub sdr: Vec<f64>,
}

impl Evaluation {
    pub fn nmse_db(&self) -> f64 {
        to_db(mean_ci(&self.nmse).0)
    }

    pub fn mean_sdr(&self) -> f64 {
        if self.sdr.is_empty() {
            f64::NAN
        } else {
            mean_ci(&self.sdr).0
        }
    }
}

/// Evaluation-mode metrics on fixed noise draws.
pub fn evaluate(state: &NetworkState, data: &TrainData, snr_db: f64, master: u64, exec: Exec) -> Result<Evaluation> {
    let res = exec.map(data.samples, |i, s| -> Result<(f64, Option<f64>)> {
        let p = prepare(data.array, data.pilots, s, i, Some(eval_draw(master, snr_db, i)))?;
        let est = state.predict(&p.y, &p.a)?;
        let e = crate::metrics::nmse(&est.h, &p.h)?;
        let d = match &est.u {
            Some(u) => Some(sdr(&harden(u), &p.u)?),
            None => None,
        };
        Ok((e, d))
    });
    let mut out = Evaluation { nmse: Vec::new(), sdr: Vec::new() };
    for r in res {
        let (e, d) = r?;
        out.nmse.push(e);
        out.sdr.extend(d);
    }
    Ok(out)
}

/// Training state that can be checkpointed and resumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: NetworkState,
    pub adam: Adam,
    pub mask: Option<PruneMask>,
    /// Epochs completed so far.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(state: NetworkState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(state.num_params(), &cfg);
        Ok(Self { cfg, state, adam, mask: None, epoch: 0, log: Vec::new() })
    }

    /// Calibrates thresholds on `data` if they were never set.
    pub fn ensure_calibrated(&mut self, data: &TrainData) -> Result<()> {
        if self.state.is_full() && self.state.zeta.iter().all(|z| *z == 0.0) {
            let z0 = initial_threshold(data, self.cfg.val_snr_db, self.cfg.seed)?;
            self.state.calibrate(z0)?;
        }
        Ok(())
    }

    pub fn nonzero_params(&self) -> usize {
        self.state.flatten().iter().filter(|v| **v != 0.0).count()
    }

    /// One masked optimizer step on a prepared batch at rate `lr`.
    pub fn step(&mut self, batch: &[Prepared], lr: f64, exec: Exec) -> Result<BatchStats> {
        let (stats, grad) = batch_gradient(&self.state, batch, self.cfg.alpha, exec)?;
        if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch: self.epoch, step: self.adam.t as usize, loss: stats.loss });
        }
        let mut params = self.state.flatten();
        let rates: Vec<f64> = rate_multipliers(&self.state, self.cfg.zeta_ratio()).iter().map(|r| r * lr).collect();
        self.adam.step(&mut params, &grad, &rates);
        self.state.load_flat(&params)?;
        if let Some(mask) = &self.mask {
            mask.apply(&mut self.state)?;
        }
        if !self.state.all_finite() {
            return Err(Error::Diverged { epoch: self.epoch, step: self.adam.t as usize, loss: stats.loss });
        }
        Ok(stats)
    }

    /// Runs one epoch; prunes first when the schedule says so.
    pub fn run_epoch(&mut self, train: &TrainData, val: Option<&TrainData>, exec: Exec) -> Result<EpochLog> {
        self.ensure_calibrated(train)?;
        let n = train.samples.len();
        if n == 0 {
            return Err(Error::Degenerate("empty training set".into()));
        }
        if self.cfg.prune_rho > 0.0 && self.mask.is_none() && self.epoch >= self.cfg.prune_start_epoch {
            self.prune(self.cfg.prune_rho)?;
        }
        let lr = self.cfg.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(seed::derive(self.cfg.seed, seed::stream::SHUFFLE, self.epoch as u64));
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss = 0.0;
        let mut nmse = 0.0;
        let mut sdr_acc = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let prepared: Vec<Result<Prepared>> = exec.map(chunk, |_, &i| {
                prepare(train.array, train.pilots, &train.samples[i], i, Some(training_draw(&self.cfg, self.epoch, i, n)))
            });
            let batch = prepared.into_iter().collect::<Result<Vec<_>>>()?;
            let s = self.step(&batch, lr, exec)?;
            let w = s.count as f64;
            loss += s.loss * w;
            nmse += s.nmse * w;
            sdr_acc += s.sdr.unwrap_or(f64::NAN) * w;
            seen += s.count;
        }
        let (nmse_db, sdr_v) = match val {
            Some(v) => {
                let ev = evaluate(&self.state, v, self.cfg.val_snr_db, self.cfg.seed, exec)?;
                (ev.nmse_db(), ev.mean_sdr())
            }
            None => (to_db(nmse / seen as f64), sdr_acc / seen as f64),
        };
        let entry =
            EpochLog { epoch: self.epoch + 1, loss: loss / seen as f64, nmse_db, sdr: sdr_v, lr, nonzero_params: self.nonzero_params() };
        self.epoch += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Global magnitude pruning at rate `rho`; later steps keep the mask.
    pub fn prune(&mut self, rho: f64) -> Result<f64> {
        let q = prune_threshold(&self.state, rho)?;
        let mut mask = apply_prune(&mut self.state, q);
        mask.rho = rho;
        self.mask = Some(mask);
        // Stale moments of removed weights would otherwise be irrelevant but
        // keep them clean for checkpoints.
        let keep = self.mask.as_ref().expect("just set").flat_keep(&self.state)?;
        for (i, k) in keep.iter().enumerate() {
            if !k {
                self.adam.m[i] = 0.0;
                self.adam.v[i] = 0.0;
            }
        }
        Ok(q)
    }

    /// A pruned copy set up for masked fine-tuning: `epochs` more epochs on a
    /// fresh cosine schedule from `lr`, with new noise and shuffle streams.
    pub fn pruned(&self, rho: f64, epochs: usize, lr: f64) -> Result<Trainer> {
        let ratio = self.cfg.zeta_ratio();
        let cfg = TrainConfig {
            epochs,
            lr,
            lr_min: 0.0,
            lr_zeta: lr * ratio,
            prune_rho: 0.0,
            prune_start_epoch: 0,
            seed: seed::derive(self.cfg.seed, seed::stream::FINETUNE, 0),
            ..self.cfg.clone()
        };
        let mut t = Trainer::new(self.state.clone(), cfg)?;
        t.prune(rho)?;
        Ok(t)
    }

    /// Trains until `cfg.epochs`, calling `on_epoch` after each one.
    pub fn fit(
        &mut self,
        train: &TrainData,
        val: Option<&TrainData>,
        exec: Exec,
        mut on_epoch: impl FnMut(&Trainer, &EpochLog) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            let entry = self.run_epoch(train, val, exec)?;
            on_epoch(self, &entry)?;
        }
        Ok(())
    }
}

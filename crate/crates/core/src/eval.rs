//! Paired sweeps over SNR or pilot count, and the reference estimators.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{cholesky_solve, gram, norm_sqr, CMatrix, C64};
use crate::measurement::PilotConfig;
use crate::metrics::{self, harden, mean_ci, to_db};
use crate::network::NetworkState;
use crate::train::{eval_draw, prepare, Prepared, TrainData};

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub h: Vec<C64>,
    pub u: Option<Vec<u8>>,
    /// Set when the method had to fall back (e.g. a regularized solve).
    pub flagged: bool,
}

/// An estimator that maps one observation to a channel (and maybe a mask).
pub trait Method: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, p: &Prepared) -> Result<MethodOutput>;
}

pub struct NetworkMethod<'a> {
    pub name: String,
    pub state: &'a NetworkState,
}

impl Method for NetworkMethod<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, p: &Prepared) -> Result<MethodOutput> {
        let est = self.state.predict(&p.y, &p.a)?;
        let h = est.h;
        if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Degenerate("non-finite estimate".into()));
        }
        Ok(MethodOutput { h, u: est.u.as_deref().map(harden), flagged: false })
    }
}

/// Least squares on the true visibility region, zero elsewhere.
pub struct GenieLs;

/// Ridge added to the restricted Gram matrix when it is singular, relative
/// to its mean diagonal.
const GENIE_RIDGE: f64 = 1e-6;

pub fn baseline_ls_oracle(y: &[C64], a: &CMatrix, u_true: &[u8]) -> Result<MethodOutput> {
    let support: Vec<usize> = (0..a.cols).filter(|&i| u_true.get(i).copied().unwrap_or(0) != 0).collect();
    if u_true.len() != a.cols {
        return Err(Error::Shape(format!("mask length {} vs {} antennas", u_true.len(), a.cols)));
    }
    if support.is_empty() {
        return Ok(MethodOutput { h: vec![C64::new(0.0, 0.0); a.cols], u: Some(u_true.to_vec()), flagged: true });
    }
    let sub = a.select_cols(&support);
    let k = support.len();
    let mut g = gram(&sub);
    let rhs = sub.mul_vec_h(y);
    let mut flagged = k > a.rows;
    let mut sol = if flagged { None } else { cholesky_solve(&g, k, &rhs) };
    if sol.is_none() {
        flagged = true;
        let mean_diag = (0..k).map(|i| g[i * k + i].re).sum::<f64>() / k as f64;
        for i in 0..k {
            g[i * k + i] += GENIE_RIDGE * mean_diag.max(f64::MIN_POSITIVE);
        }
        sol = cholesky_solve(&g, k, &rhs);
    }
    let x = sol.ok_or_else(|| Error::Degenerate("restricted system could not be solved".into()))?;
    let mut h = vec![C64::new(0.0, 0.0); a.cols];
    for (i, v) in support.iter().zip(x) {
        h[*i] = v;
    }
    Ok(MethodOutput { h, u: Some(u_true.to_vec()), flagged })
}

impl Method for GenieLs {
    fn name(&self) -> &str {
        "genie_ls"
    }

    fn estimate(&self, p: &Prepared) -> Result<MethodOutput> {
        baseline_ls_oracle(&p.y, &p.a, &p.u)
    }
}

/// Channel-only estimate of the plain unfolded network.
pub fn baseline_mdisr(state_ablation: &NetworkState, y: &[C64], a: &CMatrix) -> Result<Vec<C64>> {
    if state_ablation.is_full() {
        return Err(Error::Config("baseline_mdisr expects an ablation checkpoint".into()));
    }
    Ok(state_ablation.predict(y, a)?.h)
}

/// Returns the truth; for testing the harness.
pub struct Oracle;

impl Method for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn estimate(&self, p: &Prepared) -> Result<MethodOutput> {
        Ok(MethodOutput { h: p.h.clone(), u: Some(p.u.clone()), flagged: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    SnrDb,
    Pilots,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::Pilots => "pilots",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr_db" => Some(Axis::SnrDb),
            "pilots" => Some(Axis::Pilots),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_var: f64,
    pub method: String,
    /// Mean-of-ratios NMSE in dB.
    pub nmse_db: f64,
    /// Half-width in dB of the 95% interval of the mean ratio.
    pub nmse_ci: f64,
    /// Ratio of means in dB, logged alongside.
    pub nmse_rom_db: f64,
    pub sdr: f64,
    pub sdr_ci: f64,
    pub n_samples: usize,
    pub failures: usize,
    pub flagged: usize,
    /// Per-sample NMSE ratios, kept for paired comparisons.
    pub per_sample: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub axis: Axis,
    pub rows: Vec<ResultRow>,
    /// SHA-256 of the inputs seen at each sweep point.
    pub checksums: Vec<(f64, String)>,
}

pub const RESULTS_HEADER: &str = "sweep_var,method,nmse_db,nmse_ci,sdr,sdr_ci,n_samples,failures";

impl EvalResult {
    pub fn row(&self, var: f64, method: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.sweep_var == var && r.method == method)
    }

    /// Data rows only; callers prepend their own `#` provenance lines.
    pub fn to_csv_body(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.4},{:.4},{:.6},{:.6},{},{}\n",
                r.sweep_var, r.method, r.nmse_db, r.nmse_ci, r.sdr, r.sdr_ci, r.n_samples, r.failures
            ));
        }
        s
    }
}

fn digest_inputs(batch: &[Prepared]) -> String {
    let mut h = Sha256::new();
    for p in batch {
        for v in p.y.iter().chain(p.h.iter()).chain(p.a.data.iter()) {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    ratio: f64,
    sdr: Option<f64>,
    flagged: bool,
    err: f64,
    energy: f64,
}

fn score(m: &dyn Method, p: &Prepared) -> Option<Outcome> {
    let o = m.estimate(p).ok()?;
    let ratio = metrics::nmse(&o.h, &p.h).ok()?;
    if !ratio.is_finite() {
        return None;
    }
    let energy = norm_sqr(&p.h);
    let sdr = o.u.as_ref().and_then(|u| metrics::sdr(u, &p.u).ok());
    Some(Outcome { ratio, sdr, flagged: o.flagged, err: ratio * energy, energy })
}

fn summarize(var: f64, name: &str, outs: &[Option<Outcome>]) -> ResultRow {
    let ok: Vec<&Outcome> = outs.iter().flatten().collect();
    let ratios: Vec<f64> = ok.iter().map(|o| o.ratio).collect();
    let sdrs: Vec<f64> = ok.iter().filter_map(|o| o.sdr).collect();
    let (m, hw) = mean_ci(&ratios);
    let nmse_ci = if m > 0.0 { 10.0 * (1.0 + hw / m).log10() } else { 0.0 };
    let (s, shw) = if sdrs.is_empty() { (f64::NAN, f64::NAN) } else { mean_ci(&sdrs) };
    let (num, den) = ok.iter().fold((0.0, 0.0), |acc, o| (acc.0 + o.err, acc.1 + o.energy));
    ResultRow {
        sweep_var: var,
        method: name.to_string(),
        nmse_db: to_db(m),
        nmse_ci,
        nmse_rom_db: if den > 0.0 { to_db(num / den) } else { f64::NAN },
        sdr: s,
        sdr_ci: shw,
        n_samples: ok.len(),
        failures: outs.len() - ok.len(),
        flagged: ok.iter().filter(|o| o.flagged).count(),
        per_sample: outs.iter().map(|o| o.map(|v| v.ratio)).collect(),
    }
}

/// Runs every method on the same prepared batch.
fn eval_point(methods: &[&dyn Method], batch: &[Prepared], var: f64, exec: Exec) -> Vec<ResultRow> {
    methods.iter().map(|m| summarize(var, m.name(), &exec.map(batch, |_, p| score(*m, p)))).collect()
}

fn prepare_all(data: &TrainData, pilots: &PilotConfig, snr_db: f64, master: u64, exec: Exec) -> Result<Vec<Prepared>> {
    exec.map(data.samples, |i, s| prepare(data.array, pilots, s, i, Some(eval_draw(master, snr_db, i)))).into_iter().collect()
}

fn check_methods(methods: &[&dyn Method]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    Ok(())
}

/// NMSE/SDR per SNR point; `f64::INFINITY` means noiseless.
pub fn sweep_snr(methods: &[&dyn Method], data: &TrainData, snr_list: &[f64], master: u64, exec: Exec) -> Result<EvalResult> {
    check_methods(methods)?;
    if snr_list.is_empty() {
        return Err(Error::Config("empty SNR list".into()));
    }
    let mut rows = Vec::new();
    let mut checksums = Vec::new();
    for &snr in snr_list {
        let batch = prepare_all(data, data.pilots, snr, master, exec)?;
        checksums.push((snr, digest_inputs(&batch)));
        rows.extend(eval_point(methods, &batch, snr, exec));
    }
    Ok(EvalResult { axis: Axis::SnrDb, rows, checksums })
}

/// NMSE/SDR per pilot count at a fixed SNR. Observations for a smaller `P`
/// are a prefix of those for a larger one.
pub fn sweep_pilots(
    methods: &[&dyn Method],
    data: &TrainData,
    pilot_list: &[usize],
    snr_db: f64,
    master: u64,
    exec: Exec,
) -> Result<EvalResult> {
    check_methods(methods)?;
    if pilot_list.is_empty() {
        return Err(Error::Config("empty pilot list".into()));
    }
    let mut rows = Vec::new();
    let mut checksums = Vec::new();
    for &p in pilot_list {
        let pc = PilotConfig { p, ..*data.pilots };
        pc.validate()?;
        let batch = prepare_all(data, &pc, snr_db, master, exec)?;
        checksums.push((p as f64, digest_inputs(&batch)));
        rows.extend(eval_point(methods, &batch, p as f64, exec));
    }
    Ok(EvalResult { axis: Axis::Pilots, rows, checksums })
}

/// Paired per-sample dB gap `b − a` (positive when `a` is better), with a
/// 95% half-width, over samples where both succeeded.
pub fn paired_gap_db(a: &ResultRow, b: &ResultRow) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .per_sample
        .iter()
        .zip(&b.per_sample)
        .filter_map(|(x, y)| Some(10.0 * (y.as_ref()? / x.as_ref()?).log10()))
        .filter(|d| d.is_finite())
        .collect();
    mean_ci(&diffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ArrayConfig};

    fn setup(n: usize, count: usize) -> (ArrayConfig, PilotConfig, Vec<crate::channel::ChannelSample>) {
        let array = ArrayConfig::new(n, 4, 4, 100e9).unwrap();
        let pilots = PilotConfig { p: 8, snr_db: 10.0, combiner_seed: 5, combiner_policy: Default::default() };
        (array, pilots, generate_dataset(&array, count, 3, 1, Exec::Sequential).unwrap())
    }

    #[test]
    fn genie_recovers_noiseless_channels() {
        let (array, pilots, samples) = setup(16, 20);
        for (i, s) in samples.iter().enumerate() {
            let p = prepare(&array, &pilots, s, i, None).unwrap();
            let o = baseline_ls_oracle(&p.y, &p.a, &p.u).unwrap();
            assert!(!o.flagged);
            assert!(metrics::nmse(&o.h, &p.h).unwrap().sqrt() < 1e-6);
        }
    }

    #[test]
    fn genie_flags_underdetermined_systems() {
        let (array, _, samples) = setup(16, 1);
        let pilots = PilotConfig { p: 2, snr_db: 10.0, combiner_seed: 5, combiner_policy: Default::default() };
        let p = prepare(&array, &pilots, &samples[0], 0, None).unwrap();
        let o = baseline_ls_oracle(&p.y, &p.a, &[1; 16]).unwrap();
        assert!(o.flagged);
        assert!(o.h.iter().all(|v| v.re.is_finite()));
    }

    #[test]
    fn oracle_hits_the_floor_and_noiseless_ls_is_exact() {
        let (array, pilots, samples) = setup(16, 10);
        let data = TrainData { array: &array, pilots: &pilots, samples: &samples };
        let r = sweep_snr(&[&Oracle, &GenieLs], &data, &[0.0, f64::INFINITY], 1, Exec::Sequential).unwrap();
        for snr in [0.0, f64::INFINITY] {
            assert_eq!(r.row(snr, "oracle").unwrap().nmse_db, metrics::NMSE_FLOOR_DB);
            assert_eq!(r.row(snr, "oracle").unwrap().sdr, 1.0);
        }
        assert!(r.row(f64::INFINITY, "genie_ls").unwrap().nmse_db < -100.0);
        assert_eq!(r.checksums.len(), 2);
    }

    #[test]
    fn paired_inputs_are_reproducible() {
        let (array, pilots, samples) = setup(16, 6);
        let data = TrainData { array: &array, pilots: &pilots, samples: &samples };
        let a = sweep_snr(&[&Oracle], &data, &[5.0], 1, Exec::Sequential).unwrap();
        let b = sweep_snr(&[&GenieLs], &data, &[5.0], 1, Exec::Parallel).unwrap();
        assert_eq!(a.checksums, b.checksums);
    }

    #[test]
    fn genie_improves_with_pilots() {
        let (array, pilots, samples) = setup(16, 40);
        let data = TrainData { array: &array, pilots: &pilots, samples: &samples };
        let grid = [4, 6, 8, 12];
        let r = sweep_pilots(&[&GenieLs], &data, &grid, 10.0, 2, Exec::Sequential).unwrap();
        let v: Vec<f64> = grid.iter().map(|p| r.row(*p as f64, "genie_ls").unwrap().nmse_db).collect();
        for w in v.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{v:?}");
        }
    }

    #[test]
    fn empty_lists_are_rejected() {
        let (array, pilots, samples) = setup(16, 2);
        let data = TrainData { array: &array, pilots: &pilots, samples: &samples };
        assert!(sweep_snr(&[&Oracle], &data, &[], 1, Exec::Sequential).is_err());
        assert!(sweep_pilots(&[&Oracle], &data, &[], 10.0, 1, Exec::Sequential).is_err());
        assert!(sweep_snr(&[], &data, &[1.0], 1, Exec::Sequential).is_err());
    }

    #[test]
    fn csv_has_the_contract_header() {
        let (array, pilots, samples) = setup(16, 2);
        let data = TrainData { array: &array, pilots: &pilots, samples: &samples };
        let r = sweep_snr(&[&Oracle], &data, &[10.0], 1, Exec::Sequential).unwrap();
        let csv = r.to_csv_body();
        assert!(csv.starts_with(RESULTS_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}

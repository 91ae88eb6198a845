//! Global magnitude pruning, masked fine-tuning and the parameter census.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::network::{Module, NetworkState};
use crate::train::{batch_gradient, Prepared};

/// Keep flags for every prunable weight, in parameter-visit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep: Vec<bool>,
    pub threshold: f64,
    pub rho: f64,
}

/// `ρ`-quantile of `values` (midpoint between order statistics when `ρ·n`
/// is an integer), so that about `ρ·n` values lie strictly below it.
pub fn quantile_midpoint(values: &[f64], rho: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("no prunable weights".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("pruning rate must lie in [0, 1), got {rho}")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = rho * v.len() as f64;
    let k = pos.floor() as usize;
    if k == 0 {
        return Ok(v[0]);
    }
    if pos == k as f64 {
        return Ok(0.5 * (v[k - 1] + v[k]));
    }
    Ok(v[k])
}

pub fn prunable_magnitudes(state: &NetworkState) -> Vec<f64> {
    let mut out = Vec::new();
    state.visit(&mut |_, role, _, v| {
        if role.prunable() {
            out.extend(v.iter().map(|w| w.abs()));
        }
    });
    out
}

/// Global threshold over all prunable tensors.
pub fn prune_threshold(state: &NetworkState, rho: f64) -> Result<f64> {
    quantile_midpoint(&prunable_magnitudes(state), rho)
}

/// Zeroes every prunable weight with `|w| < q`.
pub fn apply_prune(state: &mut NetworkState, q: f64) -> PruneMask {
    let mut keep = Vec::new();
    state.visit_mut(&mut |_, role, _, v| {
        if role.prunable() {
            for w in v.iter_mut() {
                let k = !(w.abs() < q);
                if !k {
                    *w = 0.0;
                }
                keep.push(k);
            }
        }
    });
    PruneMask { keep, threshold: q, rho: f64::NAN }
}

impl PruneMask {
    /// Re-zeroes masked weights.
    pub fn apply(&self, state: &mut NetworkState) -> Result<()> {
        self.check(state)?;
        let mut i = 0;
        state.visit_mut(&mut |_, role, _, v| {
            if role.prunable() {
                for w in v.iter_mut() {
                    if !self.keep[i] {
                        *w = 0.0;
                    }
                    i += 1;
                }
            }
        });
        Ok(())
    }

    fn check(&self, state: &NetworkState) -> Result<()> {
        let mut n = 0;
        state.visit(&mut |_, role, _, v| {
            if role.prunable() {
                n += v.len();
            }
        });
        ensure_len("prune mask", self.keep.len(), n)
    }

    /// Keep flags over the flattened parameter vector (non-prunable entries
    /// are always kept).
    pub fn flat_keep(&self, state: &NetworkState) -> Result<Vec<bool>> {
        self.check(state)?;
        let mut out = Vec::with_capacity(state.num_params());
        let mut i = 0;
        state.visit(&mut |_, role, _, v| {
            if role.prunable() {
                out.extend_from_slice(&self.keep[i..i + v.len()]);
                i += v.len();
            } else {
                out.extend(std::iter::repeat_n(true, v.len()));
            }
        });
        Ok(out)
    }

    pub fn pruned_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len() as f64
    }

    pub fn all_ones(state: &NetworkState) -> Self {
        Self { keep: vec![true; prunable_magnitudes(state).len()], threshold: 0.0, rho: 0.0 }
    }
}

/// One masked SGD step `W ← W − lr·∇L`, masked entries re-zeroed.
pub fn finetune_step(state: &mut NetworkState, mask: &PruneMask, batch: &[Prepared], alpha: f64, lr: f64, exec: Exec) -> Result<f64> {
    let keep = mask.flat_keep(state)?;
    let (stats, grad) = batch_gradient(state, batch, alpha, exec)?;
    let mut p = state.flatten();
    for i in 0..p.len() {
        p[i] -= lr * grad[i];
        if !keep[i] {
            p[i] = 0.0;
        }
    }
    state.load_flat(&p)?;
    Ok(stats.loss)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub total: usize,
    pub nonzero: usize,
    pub prunable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub modules: BTreeMap<String, CensusRow>,
    pub total: CensusRow,
}

pub fn count_params(state: &NetworkState) -> Census {
    let mut rows: BTreeMap<Module, CensusRow> = Module::ALL.iter().map(|m| (*m, CensusRow::default())).collect();
    state.visit(&mut |_, role, module, v| {
        let r = rows.get_mut(&module).expect("all modules seeded");
        r.total += v.len();
        r.nonzero += v.iter().filter(|w| **w != 0.0).count();
        if role.prunable() {
            r.prunable += v.len();
        }
    });
    let mut total = CensusRow::default();
    for r in rows.values() {
        total.total += r.total;
        total.nonzero += r.nonzero;
        total.prunable += r.prunable;
    }
    Census { modules: rows.into_iter().map(|(m, r)| (m.name().to_string(), r)).collect(), total }
}

impl Census {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,total,nonzero,prunable\n");
        for (m, r) in self.modules.iter() {
            s.push_str(&format!("{m},{},{},{}\n", r.total, r.nonzero, r.prunable));
        }
        s.push_str(&format!("total,{},{},{}\n", self.total.total, self.total.nonzero, self.total.prunable));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>10} {:>10} {:>10}\n", "module", "total", "nonzero", "prunable");
        let line = |name: &str, r: &CensusRow| format!("{name:<8} {:>10} {:>10} {:>10}\n", r.total, r.nonzero, r.prunable);
        for (m, r) in self.modules.iter() {
            s.push_str(&line(m, r));
        }
        s.push_str(&line("total", &self.total));
        s
    }
}

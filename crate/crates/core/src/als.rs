//! Alternating least squares over chain-structured networks.
//!
//! Each factor update is exact block minimization: every fiber (outer cores)
//! or slice (inner cores) touched by observed entries gets its own small
//! regularized normal system, independent of all other groups of that core.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{chain_objective, chain_residuals, ChainPlan, ChainWalker};
use crate::dense::{C64, ZERO};
use crate::entries::{EvalSplit, ObservedEntries};
use crate::error::{Error, Result};
use crate::init::LowRankPair;
use crate::linalg::gram_upper;
use crate::network::{ButterflyNetwork, Core, QttNetwork};
use crate::report::{ConvergenceReport, IterationRecord, OpCounters, Termination};

/// ALS settings. `reg: None` selects the scale-aware default ridge
/// `1e-10 · ‖P_Ω T‖² / |Ω|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlsConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub reg: Option<f64>,
    pub record_test: bool,
    /// Record the regularized objective after every factor solve. Costs one
    /// extra pass over the observed entries per factor.
    pub track_objective: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-3,
            reg: None,
            record_test: true,
            track_objective: false,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let Some(reg) = self.reg {
            if !(reg >= 0.0) || !reg.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "reg must be finite and >= 0, got {reg}"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn resolve_reg(&self, train: &ObservedEntries) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::InvalidParameter("no observed entries".into()));
        }
        Ok(self
            .reg
            .unwrap_or_else(|| 1e-10 * train.squared_norm() / train.len() as f64))
    }
}

/// `K s = y` assembled from design rows. Only the upper triangle is
/// accumulated; [`NormalSystem::finish`] mirrors it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub dim: usize,
    pub k: Vec<C64>,
    pub y: Vec<C64>,
}

impl NormalSystem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            k: vec![ZERO; dim * dim],
            y: vec![ZERO; dim],
        }
    }

    /// `K += conj(row) rowᵀ` (upper triangle), `y += conj(row) t`.
    pub fn accumulate(&mut self, row: &[C64], t: C64) {
        let dim = self.dim;
        for a in 0..dim {
            let ca = row[a].conj();
            self.y[a] += ca * t;
            let krow = &mut self.k[a * dim + a..(a + 1) * dim];
            for (kk, rb) in krow.iter_mut().zip(&row[a..]) {
                *kk += ca * rb;
            }
        }
    }

    /// Fills the lower triangle so `K` is exactly Hermitian.
    pub fn finish(&mut self) {
        let dim = self.dim;
        for a in 0..dim {
            self.k[a * dim + a].im = 0.0;
            for b in 0..a {
                self.k[a * dim + b] = self.k[b * dim + a].conj();
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.k
            .iter()
            .chain(&self.y)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|a| self.k[a * self.dim + a].re).sum()
    }
}

/// How a normal system was resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveOutcome {
    Exact,
    /// Singular system solved with this extra ridge.
    Fallback(f64),
    /// No usable solution; the caller keeps its current values.
    Skipped,
}

/// Solves `(K + λI) s = y` by Hermitian Cholesky. A singular system is
/// retried once with `λ + 1e-12 · trace(K)/dim`.
pub fn normal_solve(sys: &NormalSystem, reg: f64) -> (Vec<C64>, SolveOutcome) {
    let dim = sys.dim;
    let attempt = |ridge: f64| {
        let mut k = sys.k.clone();
        for a in 0..dim {
            k[a * dim + a] += ridge;
        }
        let mut s = sys.y.clone();
        crate::linalg::cholesky_solve_in_place(&mut k, dim, &mut s).then_some(s)
    };
    if let Some(s) = attempt(reg) {
        return (s, SolveOutcome::Exact);
    }
    let trace = sys.trace();
    if dim > 0 && trace > 0.0 && trace.is_finite() {
        let extra = 1e-12 * trace / dim as f64;
        if let Some(s) = attempt(reg + extra) {
            return (s, SolveOutcome::Fallback(extra));
        }
    }
    (sys.y.clone(), SolveOutcome::Skipped)
}

/// Re-solves every observed group of core `k` (0-based) in place.
pub(crate) fn solve_chain_factor(
    cores: &mut [Core],
    rank: usize,
    plan: &ChainPlan,
    values: &[C64],
    k: usize,
    reg: f64,
) -> Result<OpCounters> {
    let last = cores.len() - 1;
    let outer = k == 0 || k == last;
    let dim = if outer { rank } else { rank * rank };
    let groups = plan.group(k);
    let snapshot: &[Core] = cores;

    let solved: Vec<Result<(usize, Option<Vec<C64>>, OpCounters)>> = (0..groups.len())
        .into_par_iter()
        .map(|g| {
            let key = groups.keys()[g];
            let members = groups.members(g);
            let m = members.len();
            let mut walker = ChainWalker::new(rank);
            let mut row = vec![ZERO; dim];
            let (mut u, mut v) = (vec![ZERO; rank], vec![ZERO; rank]);
            // Design matrix stored transposed, one contiguous run per element.
            let mut re = vec![0.0; dim * m];
            let mut im = vec![0.0; dim * m];
            let mut t = Vec::with_capacity(m);
            for (col, &e) in members.iter().enumerate() {
                let e = e as usize;
                walker.design_row(snapshot, plan.path(e), k, &mut row, &mut u, &mut v);
                for (a, z) in row.iter().enumerate() {
                    re[a * m + col] = z.re;
                    im[a * m + col] = z.im;
                }
                t.push(values[e]);
            }
            let mut sys = NormalSystem::new(dim);
            gram_upper(&re, &im, dim, m, &t, &mut sys.k, &mut sys.y);
            if !sys.is_finite() {
                return Err(Error::NonFinite {
                    factor: k + 1,
                    group: key,
                });
            }
            sys.finish();
            let (s, outcome) = normal_solve(&sys, reg);
            let mut c = OpCounters {
                chain_matvecs: walker.matvecs,
                gram_madds: m as u64 * (dim * (dim + 1) / 2) as u64,
                solves: 1,
                ..OpCounters::default()
            };
            let update = match outcome {
                SolveOutcome::Exact => Some(s),
                SolveOutcome::Fallback(_) => {
                    c.fallbacks = 1;
                    Some(s)
                }
                SolveOutcome::Skipped => {
                    c.skipped = 1;
                    None
                }
            };
            if let Some(s) = &update {
                if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::NonFinite {
                        factor: k + 1,
                        group: key,
                    });
                }
            }
            Ok((key, update, c))
        })
        .collect();

    let mut counters = OpCounters::default();
    let core = &mut cores[k];
    for item in solved {
        let (key, update, c) = item?;
        counters += c;
        if let Some(s) = update {
            core.data[key * dim..(key + 1) * dim].copy_from_slice(&s);
        }
    }
    Ok(counters)
}

/// Test-set bookkeeping for a run.
pub(crate) struct Held<'a> {
    pub plan: ChainPlan,
    pub entries: &'a ObservedEntries,
}

pub(crate) fn chain_relative_error(
    cores: &[Core],
    rank: usize,
    plan: &ChainPlan,
    entries: &ObservedEntries,
) -> Result<f64> {
    let den = entries.squared_norm();
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let num: f64 = chain_residuals(cores, plan, entries, rank)
        .iter()
        .map(|z| z.norm_sqr())
        .sum();
    Ok((num / den).sqrt())
}

/// The shared sweep loop used by all ALS variants.
pub(crate) fn run_chain_als(
    cores: &mut [Core],
    rank: usize,
    plan: &ChainPlan,
    train: &ObservedEntries,
    test: Option<&Held<'_>>,
    cfg: &AlsConfig,
    report: &mut ConvergenceReport,
) -> Result<()> {
    cfg.validate()?;
    let reg = cfg.resolve_reg(train)?;
    let start = Instant::now();
    let test = test.filter(|_| cfg.record_test);
    let test_err = |cores: &[Core]| -> Result<Option<f64>> {
        test.map(|h| chain_relative_error(cores, rank, &h.plan, h.entries))
            .transpose()
    };
    report.initial_train_err = chain_relative_error(cores, rank, plan, train)?;
    report.initial_test_err = test_err(cores)?;
    report.notes.push(format!("ridge {reg:e}"));
    if cfg.track_objective {
        report
            .objective_trace
            .push(chain_objective(cores, plan, train, rank, reg));
    }
    report.termination = Termination::MaxIterations;

    for iter in 1..=cfg.max_iters {
        let t0 = Instant::now();
        let mut flags = Vec::new();
        for k in 0..cores.len() {
            let c = solve_chain_factor(cores, rank, plan, train.values(), k, reg)?;
            if c.fallbacks > 0 {
                flags.push(format!("fallback_ridge:factor{}:{}", k + 1, c.fallbacks));
            }
            if c.skipped > 0 {
                flags.push(format!("skipped:factor{}:{}", k + 1, c.skipped));
            }
            report.counters += c;
            if cfg.track_objective {
                report
                    .objective_trace
                    .push(chain_objective(cores, plan, train, rank, reg));
            }
        }
        let train_err = chain_relative_error(cores, rank, plan, train)?;
        let rec = IterationRecord {
            iter,
            train_err,
            test_err: test_err(cores)?,
            seconds: t0.elapsed().as_secs_f64(),
            flags,
        };
        report.iterations.push(rec);
        if !train_err.is_finite() {
            report.termination = Termination::NonFinite;
            break;
        }
        if train_err < cfg.tol {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok(())
}

fn check_split(n: usize, split: &EvalSplit) -> Result<()> {
    let mismatch = |what: &str, m: usize| {
        Error::ShapeMismatch(format!(
            "{what} entries have size {m}, network has size {n}"
        ))
    };
    if split.train.n() != n {
        return Err(mismatch("training", split.train.n()));
    }
    if let Some(t) = &split.test {
        if t.n() != n {
            return Err(mismatch("test", t.n()));
        }
    }
    Ok(())
}

fn config_echo(cfg: &AlsConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

/// Butterfly completion by ALS, sweeping factors `1..=L+2` in order.
pub fn als_butterfly(
    mut net: ButterflyNetwork,
    split: &EvalSplit,
    cfg: &AlsConfig,
) -> Result<(ButterflyNetwork, ConvergenceReport)> {
    check_split(net.n(), split)?;
    let map = net.index_map();
    let plan = ChainPlan::butterfly(&split.train, map);
    let held = split.test.as_ref().map(|t| Held {
        plan: ChainPlan::butterfly(t, map),
        entries: t,
    });
    let echo = serde_json::json!({"levels": net.levels, "leaf": net.leaf, "rank": net.rank});
    let mut report = ConvergenceReport::new("als", "butterfly", config_echo(cfg, echo));
    let rank = net.rank;
    run_chain_als(
        &mut net.cores,
        rank,
        &plan,
        &split.train,
        held.as_ref(),
        cfg,
        &mut report,
    )?;
    Ok((net, report))
}

/// QTT completion by ALS.
pub fn als_qtt(
    mut net: QttNetwork,
    split: &EvalSplit,
    cfg: &AlsConfig,
) -> Result<(QttNetwork, ConvergenceReport)> {
    check_split(net.n(), split)?;
    let map = net.index_map();
    let plan = ChainPlan::qtt(&split.train, map);
    let held = split.test.as_ref().map(|t| Held {
        plan: ChainPlan::qtt(t, map),
        entries: t,
    });
    let echo = serde_json::json!({"levels": net.levels, "leaf": net.leaf, "rank": net.rank});
    let mut report = ConvergenceReport::new("als", "qtt", config_echo(cfg, echo));
    let rank = net.rank;
    run_chain_als(
        &mut net.cores,
        rank,
        &plan,
        &split.train,
        held.as_ref(),
        cfg,
        &mut report,
    )?;
    Ok((net, report))
}

/// Low-rank completion `X = A Bᵀ`: the zero-level butterfly with one leaf of
/// size `n`.
pub fn als_lowrank(
    pair: LowRankPair,
    split: &EvalSplit,
    cfg: &AlsConfig,
) -> Result<(LowRankPair, ConvergenceReport)> {
    let rank = pair.rank();
    if rank == 0 {
        return Err(Error::InvalidParameter(
            "low rank R must be at least 1".into(),
        ));
    }
    let n = pair.n();
    check_split(n, split)?;
    let net = pair.into_network()?;
    let map = net.index_map();
    let plan = ChainPlan::butterfly(&split.train, map);
    let held = split.test.as_ref().map(|t| Held {
        plan: ChainPlan::butterfly(t, map),
        entries: t,
    });
    let mut report = ConvergenceReport::new(
        "als",
        "lowrank",
        config_echo(cfg, serde_json::json!({"rank": rank})),
    );
    let mut cores = net.cores;
    run_chain_als(
        &mut cores,
        rank,
        &plan,
        &split.train,
        held.as_ref(),
        cfg,
        &mut report,
    )?;
    let b = cores.pop().expect("two cores");
    let a = cores.pop().expect("two cores");
    Ok((
        LowRankPair::from_row_major(n, rank, a.data, b.data)?,
        report,
    ))
}

/// One factor update of a butterfly network, exposed for inspection.
/// `factor` is 1-based.
pub fn solve_factor(
    net: &mut ButterflyNetwork,
    entries: &ObservedEntries,
    factor: usize,
    reg: f64,
) -> Result<OpCounters> {
    let max = net.levels + 2;
    if factor == 0 || factor > max {
        return Err(Error::InvalidFactor { factor, max });
    }
    if entries.n() != net.n() {
        return Err(Error::ShapeMismatch(format!(
            "entries of size {} against network of size {}",
            entries.n(),
            net.n()
        )));
    }
    let plan = ChainPlan::butterfly(entries, net.index_map());
    let rank = net.rank;
    solve_chain_factor(
        &mut net.cores,
        rank,
        &plan,
        entries.values(),
        factor - 1,
        reg,
    )
}

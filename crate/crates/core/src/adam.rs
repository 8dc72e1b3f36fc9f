//! Gradients of the completion objective and first-order ADAM training.
//!
//! For `φ = ½ Σ_Ω |x_e − t_e|²` the gradient of a fiber or slice `s` is
//! `g = Σ_e conj(row_e) z_e` with `z_e = x_e − t_e` and `row_e` the design row
//! of `s` at entry `e`. It is the direction of steepest ascent when every
//! complex parameter is viewed as a real pair: `dφ = Re⟨g, ds⟩`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{chain_relative_error, Held};
use crate::chain::{chain_entry, ChainPlan, ChainWalker};
use crate::dense::{C64, ZERO};
use crate::entries::{EvalSplit, ObservedEntries};
use crate::error::{Error, Result};
use crate::network::{ButterflyNetwork, Core};
use crate::report::{ConvergenceReport, IterationRecord, Termination};

/// Gradients for every core plus the residual they were built from.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub cores: Vec<Core>,
    /// `x_e − t_e`, in entry order.
    pub residual: Vec<C64>,
}

fn check_sizes(net: &ButterflyNetwork, entries: &ObservedEntries) -> Result<()> {
    if net.n() != entries.n() {
        return Err(Error::ShapeMismatch(format!(
            "entries of size {} against network of size {}",
            entries.n(),
            net.n()
        )));
    }
    Ok(())
}

/// `z_e = x_e − t_e` for every observed entry.
pub fn residual_on_omega(net: &ButterflyNetwork, entries: &ObservedEntries) -> Result<Vec<C64>> {
    check_sizes(net, entries)?;
    let plan = ChainPlan::butterfly(entries, net.index_map());
    Ok(crate::chain::chain_residuals(
        &net.cores, &plan, entries, net.rank,
    ))
}

/// Gradient of core `k` (0-based). Groups with no observations get zeros.
pub(crate) fn chain_gradient(
    cores: &[Core],
    rank: usize,
    plan: &ChainPlan,
    values: &[C64],
    k: usize,
) -> Result<Core> {
    let last = cores.len() - 1;
    let dim = if k == 0 || k == last {
        rank
    } else {
        rank * rank
    };
    let groups = plan.group(k);
    let parts: Vec<Result<(usize, Vec<C64>)>> = (0..groups.len())
        .into_par_iter()
        .map(|g| {
            let key = groups.keys()[g];
            let params = &cores[k].data[key * dim..(key + 1) * dim];
            let mut walker = ChainWalker::new(rank);
            let mut row = vec![ZERO; dim];
            let (mut u, mut v) = (vec![ZERO; rank], vec![ZERO; rank]);
            let mut grad = vec![ZERO; dim];
            for &e in groups.members(g) {
                let e = e as usize;
                walker.design_row(cores, plan.path(e), k, &mut row, &mut u, &mut v);
                let x: C64 = row.iter().zip(params).map(|(a, b)| a * b).sum();
                let z = x - values[e];
                for (gi, ri) in grad.iter_mut().zip(&row) {
                    *gi += ri.conj() * z;
                }
            }
            if grad.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite {
                    factor: k + 1,
                    group: key,
                });
            }
            Ok((key, grad))
        })
        .collect();
    let (slices, rows, cols) = cores[k].shape();
    let mut out = Core::zeros(slices, rows, cols);
    for part in parts {
        let (key, grad) = part?;
        out.data[key * dim..(key + 1) * dim].copy_from_slice(&grad);
    }
    Ok(out)
}

/// Gradients of `½‖P_Ω(X − T)‖²` with respect to every core.
pub fn butterfly_gradients(
    net: &ButterflyNetwork,
    entries: &ObservedEntries,
) -> Result<GradientSet> {
    check_sizes(net, entries)?;
    let plan = ChainPlan::butterfly(entries, net.index_map());
    let cores = (0..net.cores.len())
        .map(|k| chain_gradient(&net.cores, net.rank, &plan, entries.values(), k))
        .collect::<Result<Vec<_>>>()?;
    let mut w = ChainWalker::new(net.rank);
    let residual = (0..entries.len())
        .map(|e| chain_entry(&net.cores, plan.path(e), &mut w) - entries.value(e))
        .collect();
    Ok(GradientSet { cores, residual })
}

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            sigma: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.sigma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid ADAM hyperparameters {self:?}"
            )))
        }
    }
}

/// Moment estimates mirroring a network's cores.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<C64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(cores: &[Core], hyper: AdamHyper) -> Self {
        Self {
            m: cores.iter().map(|c| vec![ZERO; c.data.len()]).collect(),
            v: cores.iter().map(|c| vec![0.0; c.data.len()]).collect(),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected ADAM step on `params` at step `t ≥ 1`. Real and
/// imaginary parts share the second moment `|g|²`.
pub fn adam_update(
    params: &mut [C64],
    grad: &[C64],
    m: &mut [C64],
    v: &mut [f64],
    t: u64,
    hyper: &AdamHyper,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidParameter(
            "ADAM step counter must be at least 1".into(),
        ));
    }
    let n = params.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::ShapeMismatch(
            "ADAM state does not match parameters".into(),
        ));
    }
    let AdamHyper {
        alpha,
        beta1,
        beta2,
        sigma,
    } = *hyper;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    params
        .par_iter_mut()
        .zip(grad.par_iter())
        .zip(m.par_iter_mut().zip(v.par_iter_mut()))
        .for_each(|((s, g), (mi, vi))| {
            *mi = *mi * beta1 + g * (1.0 - beta1);
            *vi = beta2 * *vi + (1.0 - beta2) * g.norm_sqr();
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *s -= m_hat * (alpha / (v_hat.sqrt() + sigma));
        });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub hyper: AdamHyper,
    pub record_test: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-3,
            hyper: AdamHyper::default(),
            record_test: true,
        }
    }
}

/// Train error above this multiple of the initial error aborts the run.
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Butterfly completion by ADAM. Within an iteration each factor's gradient
/// is computed right before that factor is stepped.
pub fn adam_butterfly(
    mut net: ButterflyNetwork,
    split: &EvalSplit,
    cfg: &AdamConfig,
) -> Result<(ButterflyNetwork, ConvergenceReport)> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be positive, got {}",
            cfg.tol
        )));
    }
    cfg.hyper.validate()?;
    check_sizes(&net, &split.train)?;
    if let Some(t) = &split.test {
        check_sizes(&net, t)?;
    }
    let map = net.index_map();
    let train = &split.train;
    let plan = ChainPlan::butterfly(train, map);
    let held = split
        .test
        .as_ref()
        .filter(|_| cfg.record_test)
        .map(|t| Held {
            plan: ChainPlan::butterfly(t, map),
            entries: t,
        });
    let mut echo = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = echo.as_object_mut() {
        obj.insert("levels".into(), net.levels.into());
        obj.insert("leaf".into(), net.leaf.into());
        obj.insert("rank".into(), net.rank.into());
    }
    let mut report = ConvergenceReport::new("adam", "butterfly", echo);
    report
        .notes
        .push("each factor is updated with its own fresh gradient".into());
    let rank = net.rank;
    let start = Instant::now();
    let test_err = |cores: &[Core]| -> Result<Option<f64>> {
        held.as_ref()
            .map(|h| chain_relative_error(cores, rank, &h.plan, h.entries))
            .transpose()
    };
    report.initial_train_err = chain_relative_error(&net.cores, rank, &plan, train)?;
    report.initial_test_err = test_err(&net.cores)?;
    let mut state = AdamState::new(&net.cores, cfg.hyper);

    for iter in 1..=cfg.max_iters {
        let t0 = Instant::now();
        state.t += 1;
        for k in 0..net.cores.len() {
            let g = chain_gradient(&net.cores, rank, &plan, train.values(), k)?;
            adam_update(
                &mut net.cores[k].data,
                &g.data,
                &mut state.m[k],
                &mut state.v[k],
                state.t,
                &state.hyper,
            )?;
        }
        let train_err = chain_relative_error(&net.cores, rank, &plan, train)?;
        report.iterations.push(IterationRecord {
            iter,
            train_err,
            test_err: test_err(&net.cores)?,
            seconds: t0.elapsed().as_secs_f64(),
            flags: Vec::new(),
        });
        if !train_err.is_finite() {
            report.termination = Termination::NonFinite;
            break;
        }
        if train_err > DIVERGENCE_FACTOR * report.initial_train_err {
            report.termination = Termination::Diverged;
            report.notes.push(format!(
                "train error {train_err:e} exceeded {DIVERGENCE_FACTOR}x the initial {:e}",
                report.initial_train_err
            ));
            break;
        }
        if train_err < cfg.tol {
            report.termination = Termination::Converged;
            break;
        }
    }
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::network::random_network;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn hand_example_gradient() {
        // T = [[1,0],[0,0]], S¹ = S² = [[1],[1]]: Z = [[0,1],[1,1]].
        let s = Core::from_data(1, 2, 1, vec![c(1.0), c(1.0)]).unwrap();
        let net = ButterflyNetwork::from_cores(0, 2, 1, vec![s.clone(), s]).unwrap();
        let t = DenseMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let entries = ObservedEntries::from_dense(&t, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let g = butterfly_gradients(&net, &entries).unwrap();
        assert_eq!(g.residual, vec![c(0.0), c(1.0), c(1.0), c(1.0)]);
        assert_eq!(g.cores[0].data, vec![c(1.0), c(2.0)]);
        assert_eq!(g.cores[1].data, vec![c(1.0), c(2.0)]);
    }

    #[test]
    fn zero_network_residual_is_minus_data() {
        let net = ButterflyNetwork::zeros(1, 2, 2).unwrap();
        let entries =
            ObservedEntries::new(4, vec![(0, 1, C64::new(1.0, 2.0)), (3, 3, c(-4.0))]).unwrap();
        let z = residual_on_omega(&net, &entries).unwrap();
        assert_eq!(z, vec![C64::new(-1.0, -2.0), c(4.0)]);
    }

    #[test]
    fn gradients_vanish_at_interpolation() {
        let net = random_network(2, 2, 2, 1, 1.0).unwrap();
        let x = net.reconstruct_dense().unwrap();
        let pairs = crate::entries::sample_omega(8, 20, 2, None).unwrap();
        let entries = ObservedEntries::from_dense(&x, &pairs).unwrap();
        let g = butterfly_gradients(&net, &entries).unwrap();
        for core in &g.cores {
            assert!(core.data.iter().all(|z| z.norm() <= 1e-12));
        }
    }

    #[test]
    fn unobserved_slices_have_zero_gradient() {
        let net = random_network(2, 2, 2, 1, 1.0).unwrap();
        let entries = ObservedEntries::new(8, vec![(0, 0, c(1.0))]).unwrap();
        let g = butterfly_gradients(&net, &entries).unwrap();
        for (k, core) in g.cores.iter().enumerate() {
            let nonzero_slices = (0..core.slices)
                .filter(|&s| core.slice(s).iter().any(|z| *z != ZERO))
                .count();
            assert!(nonzero_slices <= 1, "core {k}");
        }
    }

    #[test]
    fn update_rules() {
        let hyper = AdamHyper::default();
        let mut s = vec![c(1.0), C64::new(0.0, 2.0)];
        let mut m = vec![ZERO; 2];
        let mut v = vec![0.0; 2];
        adam_update(&mut s, &[ZERO, ZERO], &mut m, &mut v, 1, &hyper).unwrap();
        assert_eq!(s, vec![c(1.0), C64::new(0.0, 2.0)]);
        assert!(adam_update(&mut s, &[ZERO, ZERO], &mut m, &mut v, 0, &hyper).is_err());

        // First step: -α g / (|g| + σ).
        let g = [c(3.0), c(-0.5)];
        adam_update(&mut s, &g, &mut m, &mut v, 1, &hyper).unwrap();
        assert!((s[0] - c(1.0 - 1e-3 * 3.0 / (3.0 + 1e-8))).norm() < 1e-15);
        assert!((s[1] - C64::new(1e-3 * 0.5 / (0.5 + 1e-8), 2.0)).norm() < 1e-15);

        let plain = AdamHyper {
            beta1: 0.0,
            beta2: 0.0,
            ..hyper
        };
        let mut s = vec![c(0.0)];
        let (mut m, mut v) = (vec![c(5.0)], vec![7.0]);
        adam_update(&mut s, &[C64::new(0.0, 2.0)], &mut m, &mut v, 4, &plain).unwrap();
        assert!((s[0] - C64::new(0.0, -1e-3 * 2.0 / (2.0 + 1e-8))).norm() < 1e-15);
    }
}

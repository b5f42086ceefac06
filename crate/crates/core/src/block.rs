//! Shared SCA driver for the two alternating subproblems.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::robust;
use crate::sca::{dinkelbach_loop, DinkelbachStep, InnerSolution};
use crate::scenario::{check_solution, evaluate_with, PowerSchedule, ScenarioConfig, Trajectory};
use crate::solver::LogEncoding;

#[derive(Debug, Clone)]
pub struct BlockOptions {
    pub max_sca: usize,
    pub max_dinkelbach: usize,
    pub dinkelbach_tol: f64,
    pub sca_tol: f64,
    pub solver_tol: f64,
    pub encoding: LogEncoding,
}

impl BlockOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            max_sca: 15,
            max_dinkelbach: 30,
            dinkelbach_tol: cfg.tolerances.dinkelbach_tol,
            sca_tol: cfg.tolerances.sca_tol,
            solver_tol: 1e-9,
            encoding: LogEncoding::ExpCone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaPass {
    pub steps: Vec<DinkelbachStep>,
    pub dinkelbach_converged: bool,
    /// Ratio of the convexified model at the accepted candidate.
    pub surrogate_ratio: f64,
    /// Exact ratio of the post-processed candidate.
    pub exact_ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub passes: Vec<ScaPass>,
    pub start_ratio: f64,
    pub final_ratio: f64,
    /// Set when a solve failed and the incumbent was kept.
    pub diagnostic: Option<String>,
}

impl BlockTrace {
    pub fn inner_iterations(&self) -> usize {
        self.passes.iter().map(|p| p.steps.len()).sum()
    }
}

/// Exact `Σ r / Σ e_p` with closed-form worst-case adversaries, or `None`
/// if the pair violates any invariant.
pub(crate) fn exact_ratio(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
) -> Option<f64> {
    if !check_solution(traj, pow, cfg).is_empty() {
        return None;
    }
    let rep = evaluate_with(traj, pow, cfg, |adv, p| {
        robust::worstcase_adv_gain(p, adv, cfg)
    });
    (rep.sum_power > 0.0).then(|| rep.ratio())
}

/// EE in kbits/J for a ratio in bits/s/Hz per W.
pub(crate) fn ratio_to_kbits(ratio: f64, cfg: &ScenarioConfig) -> f64 {
    ratio * cfg.bandwidth / 1e3
}

pub(crate) type Candidate = (Trajectory, PowerSchedule);

/// Run SCA passes from `(traj, pow)`. `inner(expansion, λ)` solves the
/// convexified model expanded at `expansion` for parameter `λ`.
pub(crate) fn run_sca(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    opts: &BlockOptions,
    mut inner: impl FnMut(&Candidate, f64) -> Result<InnerSolution<Candidate>>,
) -> (Trajectory, PowerSchedule, BlockTrace) {
    let mut best: Candidate = (traj.clone(), pow.clone());
    let start = exact_ratio(traj, pow, cfg).unwrap_or(f64::NEG_INFINITY);
    let mut best_ratio = start;
    let mut trace = BlockTrace {
        start_ratio: start,
        ..Default::default()
    };
    for pass in 0..opts.max_sca {
        let lambda0 = if best_ratio.is_finite() {
            best_ratio
        } else {
            0.0
        };
        let expansion = best.clone();
        let out = match dinkelbach_loop(
            // energy terms are epigraphs, so the model is only exact for λ ≥ 0
            |l| inner(&expansion, l),
            lambda0,
            opts.dinkelbach_tol,
            opts.max_dinkelbach,
        ) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("SCA pass {pass} failed: {e}");
                trace.diagnostic = Some(e.to_string());
                break;
            }
        };
        let (ct, cp) = out.candidate;
        let ratio = exact_ratio(&ct, &cp, cfg);
        let accepted = matches!(ratio, Some(r) if r >= best_ratio);
        trace.passes.push(ScaPass {
            steps: out.steps,
            dinkelbach_converged: out.converged,
            surrogate_ratio: out.lambda,
            exact_ratio: ratio.unwrap_or(f64::NAN),
            accepted,
        });
        if !accepted {
            log::debug!("SCA pass {pass} rejected: {ratio:?} vs {best_ratio}");
            break;
        }
        let r = ratio.unwrap();
        let gain = ratio_to_kbits(r - best_ratio, cfg);
        let old = ratio_to_kbits(best_ratio, cfg);
        best = (ct, cp);
        best_ratio = r;
        if !(gain >= opts.sca_tol * (1.0 + old.abs())) {
            break;
        }
    }
    trace.final_ratio = best_ratio;
    (best.0, best.1, trace)
}

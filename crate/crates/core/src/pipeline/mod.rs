//! Alternating outer loop, its initial point, and the comparison baselines.

pub mod baseline;
pub mod oracle;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use baseline::{circular_baseline, circular_baseline_with, BaselineObjective, BaselineResult};
pub use oracle::{
    block1_grid_oracle, snap_to_grids, tiny_oracle, Block1Oracle, OracleGrids, OracleResult,
    DEFAULT_ORACLE_BUDGET,
};

use crate::block::{BlockOptions, BlockTrace};
use crate::error::{Error, Result};
use crate::power_speed::solve_power_speed;
use crate::robust;
use crate::scenario::{
    check_solution, evaluate_solution, evaluate_with, icc_check, legit_rates, repair_icc, Point,
    PowerSchedule, ScenarioConfig, SolutionReport, Trajectory,
};
use crate::traj_accel::solve_traj_accel;

/// Speed along the straight initial path, and the time the path would need at
/// `v_max` when it is too long.
pub fn init_solution(cfg: &ScenarioConfig) -> Result<(Trajectory, PowerSchedule)> {
    cfg.validate()?;
    let n = cfg.slots;
    let rho = cfg.slot_len();
    let seg = cfg.user_pos - cfg.bs_pos;
    let length = seg.norm();
    if length / cfg.horizon > cfg.v_max {
        return Err(Error::InfeasibleGeometry {
            length,
            min_horizon: length / cfg.v_max,
        });
    }
    let speed = cfg.v_min.max(length / cfg.horizon);
    let pos: Vec<Point> = if length > 1e-9 {
        // at v_min the path may run past the user; it continues on the same line
        let dir = seg / length;
        (0..n)
            .map(|i| cfg.bs_pos + dir * (rho * speed * i as f64))
            .collect()
    } else {
        hover_circle(cfg.bs_pos, speed, n, rho)
    };
    let traj = Trajectory {
        pos,
        speed: vec![speed; n],
        accel: vec![0.0; n],
    };
    let mut p_b = vec![cfg.p_b_avg; n];
    let mut p_u = vec![cfg.p_u_avg; n];
    p_b[n - 1] = 0.0;
    p_u[0] = 0.0;
    let mut pow = PowerSchedule { p_b, p_u };
    pow.p_u = repair_icc(&traj, &pow, cfg, None);
    let bad = check_solution(&traj, &pow, cfg);
    if !bad.is_empty() {
        return Err(Error::Infeasible(bad));
    }
    Ok((traj, pow))
}

/// Constant-speed loop around `centre` whose chord per slot is `ρ·v`, so the
/// mobility equation holds with zero acceleration.
fn hover_circle(centre: Point, speed: f64, n: usize, rho: f64) -> Vec<Point> {
    let chord = rho * speed;
    // one revolution over the horizon
    let turns = (n - 1).max(3) as f64;
    let step = std::f64::consts::TAU / turns;
    let radius = chord / (2.0 * (step / 2.0).sin());
    (0..n)
        .map(|i| {
            let th = step * i as f64;
            centre + Point::new(radius * th.cos(), radius * th.sin())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AlgorithmOptions {
    pub max_outer: usize,
    /// Stop once the relative EE gain of an outer iteration drops below this.
    pub outer_tol: f64,
    pub block: BlockOptions,
}

impl AlgorithmOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            max_outer: 25,
            outer_tol: 1e-3,
            block: BlockOptions::from_config(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 is the initial point.
    pub iter: usize,
    pub ee_kbits_per_j: f64,
    /// Secrecy rate per watt, the ratio the blocks optimize.
    pub lambda: f64,
    pub secrecy_bits: f64,
    pub energy_j: f64,
    pub block1_inner: usize,
    pub block2_inner: usize,
    /// Largest exact constraint residual of the iterate.
    pub max_residual: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block1: Option<BlockTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block2: Option<BlockTrace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Why the run stopped early, if a block failed.
    pub failure: Option<String>,
}

impl AlgorithmTrace {
    pub fn ee_sequence(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ee_kbits_per_j).collect()
    }

    /// EE never drops by more than `tol·max(1, |EE|)`.
    pub fn ee_nondecreasing(&self, tol: f64) -> bool {
        self.records.windows(2).all(|w| {
            w[1].ee_kbits_per_j >= w[0].ee_kbits_per_j - tol * w[0].ee_kbits_per_j.abs().max(1.0)
        })
    }

    pub fn final_ee(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.ee_kbits_per_j)
    }

    pub fn block_traces(&self) -> impl Iterator<Item = &BlockTrace> {
        self.records
            .iter()
            .flat_map(|r| r.block1.iter().chain(r.block2.iter()))
    }
}

/// Largest residual over mobility, information causality and the power and
/// speed bounds.
pub fn max_residual(traj: &Trajectory, pow: &PowerSchedule, cfg: &ScenarioConfig) -> f64 {
    let mob = traj
        .mobility_residuals(cfg.slot_len())
        .into_iter()
        .fold(0.0, f64::max);
    let (r_b, r_u) = legit_rates(traj, pow, cfg);
    let icc = icc_check(&r_b, &r_u, 0.0).map_or(f64::INFINITY, |v| v.max_violation);
    let bounds = check_solution(traj, pow, cfg)
        .iter()
        .map(|v| v.amount)
        .fold(0.0, f64::max);
    mob.max(icc).max(bounds)
}

fn record(
    iter: usize,
    rep: &SolutionReport,
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    started: Instant,
) -> IterationRecord {
    IterationRecord {
        iter,
        ee_kbits_per_j: rep.ee_kbits_per_j,
        lambda: rep.ratio(),
        secrecy_bits: rep.total_bits,
        energy_j: rep.total_energy_j,
        block1_inner: 0,
        block2_inner: 0,
        max_residual: max_residual(traj, pow, cfg),
        wall_time_s: started.elapsed().as_secs_f64(),
        block1: None,
        block2: None,
    }
}

pub fn run_algorithm1(cfg: &ScenarioConfig) -> Result<(Trajectory, PowerSchedule, AlgorithmTrace)> {
    run_algorithm1_with(cfg, &AlgorithmOptions::from_config(cfg))
}

/// Alternate the power/speed block and the trajectory block from
/// [`init_solution`] until the EE gain stalls. A failing block ends the run
/// with the best iterate so far and a non-converged trace.
pub fn run_algorithm1_with(
    cfg: &ScenarioConfig,
    opts: &AlgorithmOptions,
) -> Result<(Trajectory, PowerSchedule, AlgorithmTrace)> {
    let (mut traj, mut pow) = init_solution(cfg)?;
    let mut trace = AlgorithmTrace::default();
    let rep = evaluate_solution(&traj, &pow, cfg)?;
    trace
        .records
        .push(record(0, &rep, &traj, &pow, cfg, Instant::now()));
    let mut ee = rep.ee_kbits_per_j;
    for iter in 1..=opts.max_outer {
        let started = Instant::now();
        let b1 = match solve_power_speed(&traj, &pow, cfg, &opts.block) {
            Ok(o) => o,
            Err(e) => {
                trace.failure = Some(format!("outer iteration {iter}, power/speed block: {e}"));
                break;
            }
        };
        let b2 = match solve_traj_accel(&b1.pow, &b1.traj, cfg, &opts.block) {
            Ok(o) => o,
            Err(e) => {
                trace.failure = Some(format!("outer iteration {iter}, trajectory block: {e}"));
                (traj, pow) = (b1.traj, b1.pow);
                let rep = evaluate_solution(&traj, &pow, cfg)?;
                let mut rec = record(iter, &rep, &traj, &pow, cfg, started);
                rec.block1_inner = b1.trace.inner_iterations();
                rec.block1 = Some(b1.trace);
                trace.records.push(rec);
                break;
            }
        };
        traj = b2.traj;
        pow = b2.pow;
        let rep = evaluate_solution(&traj, &pow, cfg)?;
        let mut rec = record(iter, &rep, &traj, &pow, cfg, started);
        rec.block1_inner = b1.trace.inner_iterations();
        rec.block2_inner = b2.trace.inner_iterations();
        let diag = b1
            .trace
            .diagnostic
            .as_ref()
            .map(|d| format!("power/speed block: {d}"))
            .or_else(|| {
                b2.trace
                    .diagnostic
                    .as_ref()
                    .map(|d| format!("trajectory block: {d}"))
            });
        rec.block1 = Some(b1.trace);
        rec.block2 = Some(b2.trace);
        trace.records.push(rec);
        log::info!(
            "outer iteration {iter}: EE {:.6} kbits/J ({:.2} s)",
            rep.ee_kbits_per_j,
            started.elapsed().as_secs_f64()
        );
        if let Some(d) = diag {
            trace.failure = Some(format!("outer iteration {iter}, {d}"));
            break;
        }
        let gain = rep.ee_kbits_per_j - ee;
        ee = rep.ee_kbits_per_j;
        if gain < opts.outer_tol * ee.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }
    let bad = check_solution(&traj, &pow, cfg);
    if !bad.is_empty() {
        return Err(Error::Infeasible(bad));
    }
    Ok((traj, pow, trace))
}

/// Evaluate against eavesdroppers placed at the worst of `n_samples` sampled
/// points of each disk, rather than the closed-form worst case.
pub fn evaluate_sampled(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> Result<SolutionReport> {
    // validates shapes and bounds
    evaluate_solution(traj, pow, cfg)?;
    let samples: Vec<Vec<Point>> = cfg
        .adversaries
        .iter()
        .enumerate()
        .map(|(a, adv)| robust::disk_samples(adv, n_samples, seed.wrapping_add(a as u64)))
        .collect();
    Ok(evaluate_with(traj, pow, cfg, |adv, pos| {
        // evaluate_with hands out references into cfg.adversaries
        let idx = cfg
            .adversaries
            .iter()
            .position(|a| std::ptr::eq(a, adv))
            .expect("adversary belongs to cfg");
        samples[idx]
            .iter()
            .map(|p| crate::scenario::channel_gain(pos, p, cfg))
            .fold(0.0, f64::max)
    }))
}

/// Smallest horizontal distance from any transmitting slot's position to
/// any adversary's estimated centre.
pub fn disk_clearance(traj: &Trajectory, cfg: &ScenarioConfig) -> f64 {
    cfg.adversaries
        .iter()
        .flat_map(|adv| {
            cfg.uav_slots()
                .map(move |i| (traj.pos[i] - adv.est_pos).norm())
        })
        .fold(f64::INFINITY, f64::min)
}

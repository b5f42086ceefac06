//! Block 2 of the alternating scheme: with powers and speeds fixed, move
//! the UAV path.
//!
//! Distances enter through slack variables. Legitimate rates are bounded
//! below by tangents of `log₂(1 + p/w)` in the squared-distance slack. The
//! forwarded rate in the causality constraint and the eavesdropping rates
//! are bounded above by exact convex epigraphs. The worst-case eavesdropper
//! distance comes from one S-procedure matrix per adversary and slot, with
//! its squared-distance entry linearized at the incumbent.

use serde::{Deserialize, Serialize};

use crate::block::{run_sca, BlockOptions, BlockTrace, Candidate};
use crate::error::{Error, Result};
use crate::robust::{self, worstcase_dist_sq};
use crate::sca::{taylor_log_lower, taylor_square_lower, InnerSolution};
use crate::scenario::{
    propulsion_power, repair_icc, Point, PowerSchedule, ScenarioConfig, Trajectory,
};
use crate::solver::{add_log_ratio_epigraph, solve, AffineExpr, ConicProgram, Sense, SolveResult};

/// Length unit of the program's coordinates, in metres.
const LENGTH_SCALE: f64 = 100.0;
const ACCEL_MARGIN: f64 = 1e-9;
const TYPICAL_POWER: f64 = 100.0;
/// Weight of the push that keeps every eavesdropper slack at its bound, so
/// that slack values are meaningful for diagnostics.
const SLACK_PUSH: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct TrajAccelModel {
    pub program: ConicProgram,
    pub lambda: f64,
    pub objective_scale: f64,
    /// `(x, y)` variables per slot, in units of [`LENGTH_SCALE`].
    pub pos: Vec<(usize, usize)>,
    /// Bound on `|a|` per segment.
    pub accel_bound: Vec<usize>,
    /// Squared distance to the user (upper slack) per slot.
    pub user_dist: Vec<Option<usize>>,
    /// Squared worst-case eavesdropper distance (lower slack), `[adv][slot]`.
    pub adv_dist: Vec<Vec<Option<usize>>>,
    pub sproc_mult: Vec<Vec<Option<usize>>>,
    pub sproc_rows: Vec<Vec<Option<usize>>>,
    pub speeds: Vec<f64>,
    /// Unit direction of each incumbent segment.
    pub dirs: Vec<Point>,
    /// Speed-dependent energy, fixed in this block.
    pub propulsion_const: f64,
    pub secrecy: AffineExpr,
    pub energy: AffineExpr,
}

fn sq(l: f64) -> f64 {
    l * l
}

pub fn build_traj_program(
    pow: &PowerSchedule,
    incumbent: &Trajectory,
    cfg: &ScenarioConfig,
    lambda: f64,
) -> Result<TrajAccelModel> {
    let n = cfg.slots;
    if incumbent.len() != n || pow.p_b.len() != n || pow.p_u.len() != n {
        return Err(Error::LengthMismatch {
            what: "trajectory/powers",
            expected: n,
            got: incumbent.len().min(pow.p_b.len()).min(pow.p_u.len()),
        });
    }
    let bad = crate::scenario::check_trajectory(incumbent, cfg);
    if let Some(v) = bad.first() {
        return Err(Error::Infeasible(vec![v.clone()]));
    }
    let l = LENGTH_SCALE;
    let rho = cfg.slot_len();
    let h2 = sq(cfg.altitude / l);
    let gamma = cfg.gamma() / sq(l);
    let speeds = incumbent.speed.clone();
    let star: Vec<Point> = incumbent.pos.iter().map(|p| p / l).collect();
    let bs = cfg.bs_pos / l;
    let user = cfg.user_pos / l;

    // Positions are only coupled to each other, so without a box the whole
    // path could drift and leave slack directions unbounded. The box holds
    // the scene plus the full path reach and does not bind in practice.
    let reach_total: f64 = speeds[..n - 1]
        .iter()
        .map(|v| (rho * v + 0.5 * rho * rho * cfg.a_max) / l)
        .sum();
    let scene = star
        .iter()
        .copied()
        .chain([bs, user])
        .chain(cfg.adversaries.iter().map(|a| a.est_pos / l));
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for q in scene {
        lo = Point::new(lo.x.min(q.x), lo.y.min(q.y));
        hi = Point::new(hi.x.max(q.x), hi.y.max(q.y));
    }
    lo -= Point::new(reach_total, reach_total);
    hi += Point::new(reach_total, reach_total);
    let dist_cap = (hi - lo).norm_squared() + h2;
    // the optimal multiplier is about (distance / radius) - 1
    let min_radius = cfg
        .adversaries
        .iter()
        .map(|a| a.radius / l)
        .fold(f64::INFINITY, f64::min)
        .max(1e-6);
    let eps_cap = 2.0 * ((hi - lo).norm() / min_radius + 1.0);

    let mut prog = ConicProgram::new();
    let pos: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            (
                prog.add_var(format!("x[{}]", i + 1), Some(lo.x), Some(hi.x)),
                prog.add_var(format!("y[{}]", i + 1), Some(lo.y), Some(hi.y)),
            )
        })
        .collect();
    let px = |i: usize| AffineExpr::var(pos[i].0);
    let py = |i: usize| AffineExpr::var(pos[i].1);
    // squared distance to `c`, linearized (from below) at the incumbent
    let lin_dist_sq = |i: usize, c: &Point| {
        let d = star[i] - c;
        let tx = taylor_square_lower(d.x, 0.0);
        let ty = taylor_square_lower(d.y, 0.0);
        (px(i).plus(-c.x) * tx.slope + py(i).plus(-c.y) * ty.slope)
            .plus(tx.intercept + ty.intercept)
    };

    // mobility: | ‖Δ‖ − ρv | ≤ ½ρ²·c, c ≤ a_max
    let a_cap = cfg.a_max * (1.0 - ACCEL_MARGIN);
    let mut energy = AffineExpr::zero();
    let mut accel_bound = Vec::with_capacity(n - 1);
    let mut dirs = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let c = prog.add_var(format!("acc[{}]", i + 1), Some(0.0), Some(a_cap));
        accel_bound.push(c);
        let dx = px(i + 1) - px(i);
        let dy = py(i + 1) - py(i);
        let reach = AffineExpr::var(c) * (0.5 * rho * rho / l);
        let base = rho * speeds[i] / l;
        prog.add_soc(
            format!("reach[{}]", i + 1),
            reach.clone().plus(base),
            vec![dx.clone(), dy.clone()],
        );
        let d_star = star[i + 1] - star[i];
        let dir = if d_star.norm() > 1e-12 {
            d_star / d_star.norm()
        } else {
            Point::new(1.0, 0.0)
        };
        prog.add_linear(
            format!("progress[{}]", i + 1),
            dx.clone() * dir.x + dy.clone() * dir.y + reach.plus(-base),
            Sense::Ge,
        );
        dirs.push(dir);
        if i == 0 {
            continue;
        }
        let k = cfg.beta_u / (speeds[i] * sq(cfg.gravity));
        if lambda < 0.0 {
            // a negative ratio rewards energy: bound k·a² from below by its
            // tangent at the incumbent, with `a` itself bounded on the safe side
            let a0 = 2.0 * (d_star.norm() * l - rho * speeds[i]) / (rho * rho);
            let len = if a0 > 0.0 {
                Some(dx * dir.x + dy * dir.y)
            } else if a0 < 0.0 {
                let s = prog.add_var(format!("len[{}]", i + 1), Some(0.0), None);
                prog.add_soc(format!("len[{}]", i + 1), AffineExpr::var(s), vec![dx, dy]);
                Some(AffineExpr::var(s))
            } else {
                None
            };
            if let Some(len) = len {
                let a = (len * l).plus(-rho * speeds[i]) * (2.0 / (rho * rho));
                energy.add_scaled(&a, 2.0 * k * a0);
                energy.constant -= k * a0 * a0;
            }
        } else {
            let tq = prog.add_var(format!("acc2[{}]", i + 1), Some(0.0), Some(a_cap * a_cap));
            prog.add_rsoc(
                format!("acc2[{}]", i + 1),
                AffineExpr::var(tq),
                AffineExpr::constant(1.0),
                vec![AffineExpr::var(c)],
            );
            energy.add_term(tq, k);
        }
    }
    // speed-dependent terms are constants here
    let mut propulsion_const = 0.0;
    for i in cfg.uav_slots() {
        let dk = if i == 1 {
            0.0
        } else {
            crate::scenario::kinetic_delta(speeds[i - 1], speeds[i], cfg)
        };
        propulsion_const += propulsion_power(speeds[i], 0.0, dk, cfg)?;
    }
    energy.constant += propulsion_const;

    // reception at the UAV: r_b ≥ tangent in the squared BS distance
    let mut recv = vec![AffineExpr::zero(); n];
    for i in cfg.bs_slots() {
        if pow.p_b[i] <= 0.0 {
            continue;
        }
        let h = prog.add_var(format!("h[{}]", i + 1), Some(h2), Some(dist_cap));
        prog.add_rsoc(
            format!("h[{}]", i + 1),
            AffineExpr::var(h).plus(-h2),
            AffineExpr::constant(1.0),
            vec![px(i).plus(-bs.x), py(i).plus(-bs.y)],
        );
        let h_star = (star[i] - bs).norm_squared() + h2;
        let t = taylor_log_lower(gamma * pow.p_b[i], h_star, h_star)?;
        recv[i] = AffineExpr::var(h) * t.slope + AffineExpr::constant(t.intercept);
    }

    let mut secrecy = AffineExpr::zero();
    let mut user_dist = vec![None; n];
    let mut fwd = vec![AffineExpr::zero(); n];
    let na = cfg.adversaries.len();
    let mut adv_dist = vec![vec![None; n]; na];
    let mut sproc_mult = vec![vec![None; n]; na];
    let mut sproc_rows = vec![vec![None; n]; na];
    let mut push = AffineExpr::zero();
    for i in cfg.uav_slots() {
        let p = pow.p_u[i];
        if p <= 0.0 {
            continue;
        }
        let k = gamma * p;
        let to_user = vec![px(i).plus(-user.x), py(i).plus(-user.y)];
        // delivered rate, bounded below through w ≥ ‖·‖² + H²
        let w = prog.add_var(format!("w[{}]", i + 1), Some(h2), Some(dist_cap));
        prog.add_rsoc(
            format!("w[{}]", i + 1),
            AffineExpr::var(w).plus(-h2),
            AffineExpr::constant(1.0),
            to_user,
        );
        user_dist[i] = Some(w);
        let w_star = (star[i] - user).norm_squared() + h2;
        let tw = taylor_log_lower(k, w_star, w_star)?;
        let zeta = prog.add_free_var(format!("zeta[{}]", i + 1));
        prog.add_linear(
            format!("zeta[{}]", i + 1),
            (AffineExpr::var(w) * tw.slope)
                .plus(tw.intercept)
                .term(zeta, -1.0),
            Sense::Ge,
        );
        secrecy.add_term(zeta, 1.0);

        // forwarded rate, bounded above through u ≤ linearized ‖·‖² + H²
        let u = prog.add_var(format!("u[{}]", i + 1), Some(h2), Some(dist_cap));
        prog.add_linear(
            format!("u[{}]", i + 1),
            lin_dist_sq(i, &user).plus(h2).term(u, -1.0),
            Sense::Ge,
        );
        let ru = prog.add_free_var(format!("ru[{}]", i + 1));
        add_log_ratio_epigraph(
            &mut prog,
            &format!("ru[{}]", i + 1),
            ru,
            k,
            AffineExpr::var(u),
        )?;
        fwd[i] = AffineExpr::var(ru);

        // eavesdropping: worst case over each disk via the S-procedure
        if na > 0 {
            let o = prog.add_free_var(format!("leak[{}]", i + 1));
            secrecy.add_term(o, -1.0);
            for (a, adv) in cfg.adversaries.iter().enumerate() {
                let ae = adv.est_pos / l;
                let r2 = sq(adv.radius / l);
                let z = prog.add_var(format!("z[{a}][{}]", i + 1), Some(h2), Some(dist_cap));
                let eps = prog.add_var(format!("eps[{a}][{}]", i + 1), Some(0.0), Some(eps_cap));
                let corner = lin_dist_sq(i, &ae).plus(h2).term(z, -1.0).term(eps, -r2);
                let diag = AffineExpr::var(eps).plus(1.0);
                let row = prog.add_psd(
                    format!("sproc[{a}][{}]", i + 1),
                    3,
                    vec![
                        diag.clone(),
                        AffineExpr::zero(),
                        diag,
                        AffineExpr::constant(ae.x) - px(i),
                        AffineExpr::constant(ae.y) - py(i),
                        corner,
                    ],
                );
                add_log_ratio_epigraph(
                    &mut prog,
                    &format!("leak[{a}][{}]", i + 1),
                    o,
                    k,
                    AffineExpr::var(z),
                )?;
                push.add_term(z, 1.0);
                adv_dist[a][i] = Some(z);
                sproc_mult[a][i] = Some(eps);
                sproc_rows[a][i] = Some(row);
            }
        }
    }

    // information causality on the bounds
    for m in 1..n {
        let mut e = AffineExpr::zero();
        for j in 0..m {
            e.add_scaled(&recv[j], 1.0);
        }
        for j in 1..=m {
            e.add_scaled(&fwd[j], -1.0);
        }
        prog.add_linear(format!("icc[{}]", m + 1), e, Sense::Ge);
    }

    let objective_scale = 1.0 / ((n - 1) as f64 * (1.0 + lambda.abs() * TYPICAL_POWER));
    let objective = secrecy.clone() - energy.clone() * lambda + push * SLACK_PUSH;
    prog.set_objective(objective * objective_scale);
    Ok(TrajAccelModel {
        program: prog,
        lambda,
        objective_scale,
        pos,
        accel_bound,
        user_dist,
        adv_dist,
        sproc_mult,
        sproc_rows,
        speeds,
        dirs,
        propulsion_const,
        secrecy,
        energy,
    })
}

/// Energy of the `λ ≥ 0` model at the positions in `x`, with each
/// acceleration slack at the smallest value its rows allow.
pub fn model_energy(model: &TrajAccelModel, x: &[f64], cfg: &ScenarioConfig) -> f64 {
    let rho = cfg.slot_len();
    let p = |i: usize| Point::new(x[model.pos[i].0], x[model.pos[i].1]) * LENGTH_SCALE;
    let mut e = model.propulsion_const;
    for i in 1..cfg.slots - 1 {
        let d = p(i + 1) - p(i);
        let v = model.speeds[i];
        let reach = 2.0 * (d.norm() - rho * v) / (rho * rho);
        let progress = 2.0 * (rho * v - d.dot(&model.dirs[i])) / (rho * rho);
        let c = reach.max(progress).max(0.0);
        e += cfg.beta_u / (v * sq(cfg.gravity)) * c * c;
    }
    e
}

/// Positions from a solved model, with accelerations recomputed so that the
/// mobility equation holds exactly.
pub fn extract_trajectory(model: &TrajAccelModel, x: &[f64], cfg: &ScenarioConfig) -> Trajectory {
    let n = cfg.slots;
    let rho = cfg.slot_len();
    let pos: Vec<Point> = model
        .pos
        .iter()
        .map(|&(ix, iy)| Point::new(x[ix], x[iy]) * LENGTH_SCALE)
        .collect();
    let speed = model.speeds.clone();
    let mut accel = vec![0.0; n];
    for i in 0..n - 1 {
        let d = (pos[i + 1] - pos[i]).norm();
        accel[i] = 2.0 * (d - rho * speed[i]) / (rho * rho);
    }
    Trajectory { pos, speed, accel }
}

pub fn solve_traj_at(
    pow: &PowerSchedule,
    incumbent: &Trajectory,
    cfg: &ScenarioConfig,
    lambda: f64,
    opts: &BlockOptions,
) -> Result<(TrajAccelModel, SolveResult)> {
    let model = build_traj_program(pow, incumbent, cfg, lambda)?;
    let res = solve(&model.program, opts.solver_tol)?;
    if !res.is_optimal() {
        return Err(Error::Solver(format!(
            "trajectory block: {:?} ({})",
            res.status, res.detail
        )));
    }
    Ok((model, res))
}

#[derive(Debug, Clone)]
pub struct TrajAccelOutcome {
    pub traj: Trajectory,
    pub pow: PowerSchedule,
    pub trace: BlockTrace,
}

/// SCA passes over the trajectory block, each solved by Dinkelbach.
pub fn solve_traj_accel(
    pow: &PowerSchedule,
    incumbent: &Trajectory,
    cfg: &ScenarioConfig,
    opts: &BlockOptions,
) -> Result<TrajAccelOutcome> {
    let bad = crate::scenario::check_trajectory(incumbent, cfg);
    if !bad.is_empty() {
        return Err(Error::Infeasible(bad));
    }
    let (traj, pow, trace) = run_sca(incumbent, pow, cfg, opts, |exp: &Candidate, lambda| {
        let (model, res) = solve_traj_at(&exp.1, &exp.0, cfg, lambda, opts)?;
        let x = res.primal()?;
        let numerator = model.secrecy.eval(x);
        let surrogate = model.energy.eval(x);
        let denominator = if lambda < 0.0 && numerator < 0.0 {
            surrogate
        } else {
            model_energy(&model, x, cfg)
        };
        let traj = extract_trajectory(&model, x, cfg);
        let mut pow = exp.1.clone();
        pow.p_u = repair_icc(&traj, &pow, cfg, None);
        Ok(InnerSolution {
            value: numerator - lambda * surrogate,
            numerator,
            denominator,
            candidate: (traj, pow),
        })
    });
    Ok(TrajAccelOutcome { traj, pow, trace })
}

/// How far each distance slack sits from the geometric value it bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    /// `|w − (‖pos − user‖² + H²)| / w` per slot (0 where unused).
    pub user_gaps: Vec<f64>,
    /// `|z − worst-case distance²| / z`, `[adv][slot]`.
    pub adv_gaps: Vec<Vec<f64>>,
    pub max_user_gap: f64,
    pub max_adv_gap: f64,
    pub tight: bool,
}

/// Check that the distance slacks are active at a solved model's optimum.
pub fn tightness_diagnostics(
    result: &SolveResult,
    model: &TrajAccelModel,
    cfg: &ScenarioConfig,
    rel_tol: f64,
) -> Result<TightnessReport> {
    let x = result.primal()?;
    let traj = extract_trajectory(model, x, cfg);
    Ok(tightness_of(model, x, &traj, cfg, rel_tol))
}

pub(crate) fn tightness_of(
    model: &TrajAccelModel,
    x: &[f64],
    traj: &Trajectory,
    cfg: &ScenarioConfig,
    rel_tol: f64,
) -> TightnessReport {
    let l2 = LENGTH_SCALE * LENGTH_SCALE;
    let n = cfg.slots;
    let h2 = cfg.altitude * cfg.altitude;
    let mut user_gaps = vec![0.0; n];
    for i in 0..n {
        if let Some(w) = model.user_dist[i] {
            let w = x[w] * l2;
            let geo = (traj.pos[i] - cfg.user_pos).norm_squared() + h2;
            user_gaps[i] = (w - geo).abs() / w;
        }
    }
    let adv_gaps: Vec<Vec<f64>> = cfg
        .adversaries
        .iter()
        .enumerate()
        .map(|(a, adv)| {
            (0..n)
                .map(|i| match model.adv_dist[a][i] {
                    Some(z) => {
                        let z = x[z] * l2;
                        let geo = worstcase_dist_sq(&traj.pos[i], adv, cfg);
                        (z - geo).abs() / z
                    }
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    let max_user_gap = user_gaps.iter().copied().fold(0.0, f64::max);
    let max_adv_gap = adv_gaps.iter().flatten().copied().fold(0.0, f64::max);
    TightnessReport {
        tight: max_user_gap <= rel_tol && max_adv_gap <= rel_tol,
        user_gaps,
        adv_gaps,
        max_user_gap,
        max_adv_gap,
    }
}

/// Check each solver-PSD S-procedure block against disk sampling.
/// Returns the number of (adversary, slot) pairs whose sampled distance
/// bound was violated.
pub fn certify_sproc_blocks(
    result: &SolveResult,
    model: &TrajAccelModel,
    cfg: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> Result<usize> {
    let x = result.primal()?;
    let traj = extract_trajectory(model, x, cfg);
    let l2 = LENGTH_SCALE * LENGTH_SCALE;
    let mut failures = 0;
    for (a, adv) in cfg.adversaries.iter().enumerate() {
        for i in 0..cfg.slots {
            if let Some(z) = model.adv_dist[a][i] {
                let cert =
                    robust::certify_sproc(&traj.pos[i], adv, x[z] * l2, cfg, n_samples, seed);
                if !cert.certified {
                    failures += 1;
                }
            }
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::exact_ratio;
    use crate::scenario::{check_solution, AdversaryRegion};

    fn setup(n: usize) -> (ScenarioConfig, Trajectory, PowerSchedule) {
        let mut c = ScenarioConfig::default();
        c.slots = n;
        c.horizon = 2.0 * n as f64;
        let rho = c.slot_len();
        let v = 10.0;
        let start = Point::new(300.0, 60.0);
        let dir = (c.user_pos - start).normalize();
        let t = Trajectory {
            pos: (0..n).map(|i| start + dir * (rho * v * i as f64)).collect(),
            speed: vec![v; n],
            accel: vec![0.0; n],
        };
        let mut p_b = vec![c.p_b_avg; n];
        let mut p_u = vec![c.p_u_avg; n];
        p_b[n - 1] = 0.0;
        p_u[0] = 0.0;
        let mut p = PowerSchedule { p_b, p_u };
        p.p_u = repair_icc(&t, &p, &c, None);
        (c, t, p)
    }

    #[test]
    fn incumbent_is_feasible_in_its_own_model() {
        let (c, t, p) = setup(6);
        let opts = BlockOptions::from_config(&c);
        let lam = exact_ratio(&t, &p, &c).unwrap();
        let (model, res) = solve_traj_at(&p, &t, &c, lam, &opts).unwrap();
        let x = res.primal().unwrap();
        let f = model.secrecy.eval(x) - lam * model.energy.eval(x);
        assert!(f >= -1e-6, "F(λ₀) = {f}");
    }

    #[test]
    fn block_improves_and_keeps_invariants() {
        let (c, t, p) = setup(8);
        let opts = BlockOptions::from_config(&c);
        let start = exact_ratio(&t, &p, &c).unwrap();
        let out = solve_traj_accel(&p, &t, &c, &opts).unwrap();
        assert!(out.trace.diagnostic.is_none(), "{:?}", out.trace.diagnostic);
        assert!(check_solution(&out.traj, &out.pow, &c).is_empty());
        let end = exact_ratio(&out.traj, &out.pow, &c).unwrap();
        assert!(end > start, "{end} <= {start}");
        for r in out.traj.mobility_residuals(c.slot_len()) {
            assert!(r <= 1e-9);
        }
    }

    #[test]
    fn negative_lambda_model_is_tight_lower_bound() {
        let (mut c, t, mut p) = setup(6);
        c.adversaries = vec![AdversaryRegion::new(t.pos[3], 30.0)];
        p.p_u = repair_icc(&t, &p, &c, None);
        let lam = exact_ratio(&t, &p, &c).unwrap();
        assert!(lam < 0.0, "setup should start below zero, got {lam}");
        let opts = BlockOptions::from_config(&c);
        let (model, res) = solve_traj_at(&p, &t, &c, lam, &opts).unwrap();
        let x = res.primal().unwrap();
        let f = model.secrecy.eval(x) - lam * model.energy.eval(x);
        assert!(f >= -1e-6, "F(λ₀) = {f}");
        let tangent = model.energy.eval(x);
        let exact = model_energy(&model, x, &c);
        assert!(tangent <= exact + 1e-9 * exact.abs(), "{tangent} > {exact}");

        let out = solve_traj_accel(&p, &t, &c, &opts).unwrap();
        assert!(out.trace.diagnostic.is_none(), "{:?}", out.trace.diagnostic);
        assert!(check_solution(&out.traj, &out.pow, &c).is_empty());
        assert!(exact_ratio(&out.traj, &out.pow, &c).unwrap() > lam);
        for pass in &out.trace.passes {
            assert!(
                crate::sca::lambda_nondecreasing(&pass.steps, 1e-8),
                "{:?}",
                pass.steps
            );
        }
    }

    #[test]
    fn slacks_are_tight_and_blocks_certified() {
        let (c, t, p) = setup(6);
        let opts = BlockOptions::from_config(&c);
        let lam = exact_ratio(&t, &p, &c).unwrap();
        let (model, res) = solve_traj_at(&p, &t, &c, lam, &opts).unwrap();
        let rep = tightness_diagnostics(&res, &model, &c, 1e-3).unwrap();
        assert!(rep.max_user_gap <= 1e-3, "{rep:?}");
        assert_eq!(certify_sproc_blocks(&res, &model, &c, 1000, 5).unwrap(), 0);
    }

    #[test]
    fn inflated_slack_is_reported() {
        let (c, t, p) = setup(5);
        let opts = BlockOptions::from_config(&c);
        let (model, res) = solve_traj_at(&p, &t, &c, 0.0, &opts).unwrap();
        let mut x = res.primal().unwrap().to_vec();
        let w = model.user_dist[2].unwrap();
        x[w] *= 1.5;
        let traj = extract_trajectory(&model, &x, &c);
        let rep = tightness_of(&model, &x, &traj, &c, 1e-3);
        assert!(!rep.tight);
        assert!(rep.user_gaps[2] > 0.3);
    }

    #[test]
    fn rate_maximizing_path_moves_toward_user() {
        let (mut c, t, p) = setup(6);
        c.adversaries.clear();
        let opts = BlockOptions::from_config(&c);
        let before: f64 = t.pos.iter().skip(1).map(|q| (q - c.user_pos).norm()).sum();
        let (model, res) = solve_traj_at(&p, &t, &c, 0.0, &opts).unwrap();
        let after_traj = extract_trajectory(&model, res.primal().unwrap(), &c);
        let after: f64 = after_traj
            .pos
            .iter()
            .skip(1)
            .map(|q| (q - c.user_pos).norm())
            .sum();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn adversary_pushes_path_away() {
        let (mut c, t, p) = setup(8);
        let adv = AdversaryRegion::new(Point::new(150.0, 60.0), 20.0);
        let clearance = |tr: &Trajectory| {
            tr.pos
                .iter()
                .skip(1)
                .map(|q| (q - adv.est_pos).norm())
                .fold(f64::INFINITY, f64::min)
        };
        let opts = BlockOptions::from_config(&c);
        c.adversaries.clear();
        let lam = exact_ratio(&t, &p, &c).unwrap();
        let (m, r) = solve_traj_at(&p, &t, &c, lam, &opts).unwrap();
        let free = extract_trajectory(&m, r.primal().unwrap(), &c);
        c.adversaries = vec![adv.clone()];
        let (m, r) = solve_traj_at(&p, &t, &c, lam, &opts).unwrap();
        let robust = extract_trajectory(&m, r.primal().unwrap(), &c);
        assert!(
            clearance(&robust) > clearance(&free),
            "{} vs {}",
            clearance(&robust),
            clearance(&free)
        );
    }
}

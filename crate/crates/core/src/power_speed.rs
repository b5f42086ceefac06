//! Block 1 of the alternating scheme: with the UAV path fixed, choose BS and
//! UAV transmit powers and the speed profile.
//!
//! Segment lengths are fixed, so each speed determines its acceleration
//! through the mobility equation and is confined to the band that keeps
//! `|a| ≤ a_max`. The eavesdropping rate is replaced by its tangent in the
//! UAV power around the incumbent; the legitimate rates stay exact.

use serde::{Deserialize, Serialize};

use crate::block::{run_sca, BlockOptions, BlockTrace, Candidate};
use crate::error::{Error, Result};
use crate::robust::worstcase_adv_gain;
use crate::sca::{taylor_square_lower, InnerSolution};
use crate::scenario::{channel_gain, repair_icc, PowerSchedule, ScenarioConfig, Trajectory};
use crate::solver::{
    log_term, solve, AffineExpr, ConicProgram, LogEncoding, Orientation, Sense, SolveResult,
};

const LN2: f64 = std::f64::consts::LN_2;
/// Speeds enter the cubic term divided by this, to keep cone entries O(1).
const SPEED_SCALE: f64 = 10.0;
/// Relative shrink of the speed bands so that solver round-off cannot push
/// the recomputed acceleration past its bound.
const BAND_MARGIN: f64 = 1e-9;
/// Order of magnitude of per-slot propulsion power, in watts.
const TYPICAL_POWER: f64 = 100.0;

/// The block-1 program together with the index maps needed to read it back.
#[derive(Debug, Clone)]
pub struct PowerSpeedModel {
    pub program: ConicProgram,
    pub lambda: f64,
    /// Speed the `−v_first²` tangent is taken at.
    pub kinetic_ref: f64,
    /// Fixed segment lengths `‖pos[i+1] − pos[i]‖`.
    pub seg_len: Vec<f64>,
    /// Per-slot SNR per watt of the BS→UAV and UAV→user links.
    pub snr_b: Vec<f64>,
    pub snr_u: Vec<f64>,
    /// Worst-case eavesdropper SNR per watt, `[adversary][slot]`.
    pub snr_a: Vec<Vec<f64>>,
    /// Incumbent UAV powers the eavesdropping tangents are taken at.
    pub p_u_ref: Vec<f64>,
    pub p_b: Vec<Option<usize>>,
    pub p_u: Vec<Option<usize>>,
    pub rate_b: Vec<Option<usize>>,
    pub rate_u: Vec<Option<usize>>,
    pub adv_rate: Vec<Option<usize>>,
    /// Speed variable per slot; slot 0 shares slot 1's.
    pub speed: Vec<usize>,
    pub speed_band: Vec<(f64, f64)>,
    /// `icc_rows[n]` bounds forwarding up to slot `n` (`n ≥ 1`).
    pub icc_rows: Vec<Option<usize>>,
    pub bs_avg_row: usize,
    pub uav_avg_row: usize,
    /// Tangent rows `[slot][adversary]`.
    pub adv_rows: Vec<Vec<usize>>,
    pub secrecy: AffineExpr,
    pub energy: AffineExpr,
    /// Positive factor the objective was multiplied by for conditioning;
    /// duals are divided by it before use.
    pub objective_scale: f64,
}

/// Admissible speed for each slot given fixed segment lengths.
pub fn speed_bands(seg_len: &[f64], cfg: &ScenarioConfig) -> Result<Vec<(f64, f64)>> {
    let n = cfg.slots;
    let rho = cfg.slot_len();
    let reach = 0.5 * rho * rho * cfg.a_max;
    let seg_band = |i: usize| ((seg_len[i] - reach) / rho, (seg_len[i] + reach) / rho);
    let mut bands = vec![(cfg.v_min, cfg.v_max); n];
    for i in 1..n {
        let (mut lo, mut hi) = (cfg.v_min, cfg.v_max);
        let mut segs = Vec::new();
        if i == 1 {
            segs.push(0);
        }
        if i < n - 1 {
            segs.push(i);
        }
        for s in segs {
            let (a, b) = seg_band(s);
            lo = lo.max(a);
            hi = hi.min(b);
        }
        if lo > hi {
            return Err(Error::InfeasibleFixing { slot: i + 1 });
        }
        let shrink = BAND_MARGIN * hi.abs().max(1.0);
        if hi - lo > 2.0 * shrink {
            lo += shrink;
            hi -= shrink;
        }
        bands[i] = (lo, hi);
    }
    bands[0] = bands[1];
    Ok(bands)
}

pub fn build_power_speed_program(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    lambda: f64,
    encoding: &LogEncoding,
) -> Result<PowerSpeedModel> {
    let n = cfg.slots;
    if traj.len() != n {
        return Err(Error::LengthMismatch {
            what: "trajectory",
            expected: n,
            got: traj.len(),
        });
    }
    let rho = cfg.slot_len();
    let seg_len: Vec<f64> = (0..n - 1).map(|i| traj.segment_len(i)).collect();
    let bands = speed_bands(&seg_len, cfg)?;
    let sigma2 = cfg.noise_power;
    let snr_b: Vec<f64> = traj
        .pos
        .iter()
        .map(|p| channel_gain(p, &cfg.bs_pos, cfg) / sigma2)
        .collect();
    let snr_u: Vec<f64> = traj
        .pos
        .iter()
        .map(|p| channel_gain(p, &cfg.user_pos, cfg) / sigma2)
        .collect();
    let snr_a: Vec<Vec<f64>> = cfg
        .adversaries
        .iter()
        .map(|adv| {
            traj.pos
                .iter()
                .map(|p| worstcase_adv_gain(p, adv, cfg) / sigma2)
                .collect()
        })
        .collect();

    let mut prog = ConicProgram::new();
    let mut p_b = vec![None; n];
    let mut p_u = vec![None; n];
    let mut rate_b = vec![None; n];
    let mut rate_u = vec![None; n];
    let mut adv_rate = vec![None; n];
    for i in cfg.bs_slots() {
        let v = prog.add_var(format!("p_b[{}]", i + 1), Some(0.0), Some(cfg.p_b_max));
        p_b[i] = Some(v);
        rate_b[i] = Some(log_term(
            &mut prog,
            &format!("r_b[{}]", i + 1),
            &AffineExpr::var(v),
            snr_b[i],
            1.0,
            Orientation::Hypograph,
            encoding,
        )?);
    }
    for i in cfg.uav_slots() {
        let v = prog.add_var(format!("p_u[{}]", i + 1), Some(0.0), Some(cfg.p_u_max));
        p_u[i] = Some(v);
        rate_u[i] = Some(log_term(
            &mut prog,
            &format!("r_u[{}]", i + 1),
            &AffineExpr::var(v),
            snr_u[i],
            1.0,
            Orientation::Hypograph,
            encoding,
        )?);
    }

    // information causality on the auxiliary rates
    let mut icc_rows = vec![None; n];
    for m in 1..n {
        let mut e = AffineExpr::zero();
        for j in 0..m {
            e.add_term(rate_b[j].unwrap(), 1.0);
        }
        for j in 1..=m {
            e.add_term(rate_u[j].unwrap(), -1.0);
        }
        icc_rows[m] = Some(prog.add_linear(format!("icc[{}]", m + 1), e, Sense::Ge));
    }
    let transmit = (n - 1) as f64;
    let mut sum_b = AffineExpr::constant(-transmit * cfg.p_b_avg);
    for v in p_b.iter().flatten() {
        sum_b.add_term(*v, 1.0);
    }
    let bs_avg_row = prog.add_linear("avg_p_b", sum_b, Sense::Le);
    let mut sum_u = AffineExpr::constant(-transmit * cfg.p_u_avg);
    for v in p_u.iter().flatten() {
        sum_u.add_term(*v, 1.0);
    }
    let uav_avg_row = prog.add_linear("avg_p_u", sum_u, Sense::Le);

    // eavesdropping rate: tangent in p_u at the incumbent (an upper bound)
    let p_u_ref: Vec<f64> = pow.p_u.iter().map(|p| p.max(0.0)).collect();
    let mut adv_rows = vec![Vec::new(); n];
    if !cfg.adversaries.is_empty() {
        for i in cfg.uav_slots() {
            let e = prog.add_free_var(format!("r_a[{}]", i + 1));
            adv_rate[i] = Some(e);
            for (a, snr) in snr_a.iter().enumerate() {
                let k = snr[i];
                let p0 = p_u_ref[i];
                let base = (k * p0).ln_1p() / LN2;
                let slope = k / ((1.0 + k * p0) * LN2);
                let row = AffineExpr::var(e)
                    .term(p_u[i].unwrap(), -slope)
                    .plus(-(base - slope * p0));
                adv_rows[i].push(prog.add_linear(format!("r_a[{}][{}]", a, i + 1), row, Sense::Ge));
            }
        }
    }

    // speeds; slot 0 shares slot 1's variable
    let mut speed = vec![0; n];
    for i in 1..n {
        speed[i] = prog.add_var(format!("v[{}]", i + 1), Some(bands[i].0), Some(bands[i].1));
    }
    speed[0] = speed[1];
    let mut energy = AffineExpr::zero();
    let accel_expr = |seg: usize, v: usize| {
        AffineExpr::var(v) * (-2.0 / rho) + AffineExpr::constant(2.0 * seg_len[seg] / (rho * rho))
    };
    let kc = cfg.mass / (2.0 * rho);
    let last = speed[n - 1];
    let first = speed[1];
    if lambda >= 0.0 {
        for i in cfg.uav_slots() {
            let v = speed[i];
            let vs = AffineExpr::var(v) * (1.0 / SPEED_SCALE);
            // α v³ via s ≥ (v/S)², s² ≤ c·(v/S)
            let s = prog.add_var(format!("sq[{}]", i + 1), Some(0.0), None);
            let c = prog.add_var(format!("cube[{}]", i + 1), Some(0.0), None);
            prog.add_rsoc(
                format!("sq[{}]", i + 1),
                AffineExpr::var(s),
                AffineExpr::constant(1.0),
                vec![vs.clone()],
            );
            prog.add_rsoc(
                format!("cube[{}]", i + 1),
                AffineExpr::var(c),
                vs,
                vec![AffineExpr::var(s)],
            );
            energy.add_term(c, cfg.alpha_u * SPEED_SCALE.powi(3));
            // β / v
            let inv = prog.add_var(format!("inv[{}]", i + 1), Some(0.0), None);
            prog.add_rsoc(
                format!("inv[{}]", i + 1),
                AffineExpr::var(inv),
                AffineExpr::var(v),
                vec![AffineExpr::constant(1.0)],
            );
            energy.add_term(inv, cfg.beta_u);
            // β a² / (v g²), with a fixed by the segment length
            if i < n - 1 {
                let ta = prog.add_var(format!("acc[{}]", i + 1), Some(0.0), None);
                prog.add_rsoc(
                    format!("acc[{}]", i + 1),
                    AffineExpr::var(ta),
                    AffineExpr::var(v),
                    vec![accel_expr(i, v)],
                );
                energy.add_term(ta, cfg.beta_u / (cfg.gravity * cfg.gravity));
            }
        }
        // kinetic terms telescope to m/(2ρ)·(v_last² − v_first²)
        let kin = prog.add_var("kin_last", Some(0.0), None);
        prog.add_rsoc(
            "kin_last",
            AffineExpr::var(kin),
            AffineExpr::constant(1.0),
            vec![AffineExpr::var(last) * (1.0 / SPEED_SCALE)],
        );
        energy.add_term(kin, kc * SPEED_SCALE * SPEED_SCALE);
        let t = taylor_square_lower(traj.speed[1], 0.0);
        energy.add_term(first, -kc * t.slope);
        energy.constant -= kc * t.intercept;
    } else {
        // a negative ratio rewards energy, so bound it from below instead:
        // convex parts by their tangents, the concave −v_first² kept exact
        for i in cfg.uav_slots() {
            let v0 = traj.speed[i];
            let (val, d) = convex_power(cfg, &seg_len, i, v0);
            energy.add_term(speed[i], d);
            energy.constant += val - d * v0;
        }
        let vl = traj.speed[n - 1];
        energy.add_term(last, 2.0 * kc * vl);
        energy.constant -= kc * vl * vl;
        let q = prog.add_var("kin_first", Some(0.0), None);
        prog.add_rsoc(
            "kin_first",
            AffineExpr::var(q),
            AffineExpr::constant(1.0),
            vec![AffineExpr::var(first) * (1.0 / SPEED_SCALE)],
        );
        energy.add_term(q, -kc * SPEED_SCALE * SPEED_SCALE);
    }
    // no net kinetic energy may be harvested over the horizon
    prog.add_linear(
        "terminal_speed",
        AffineExpr::var(last).term(first, -1.0),
        Sense::Ge,
    );

    let mut secrecy = AffineExpr::zero();
    for i in cfg.uav_slots() {
        secrecy.add_term(rate_u[i].unwrap(), 1.0);
        if let Some(e) = adv_rate[i] {
            secrecy.add_term(e, -1.0);
        }
    }
    // keep the objective O(1) whether rates or energy dominate
    let objective_scale = 1.0 / ((n - 1) as f64 * (1.0 + lambda.abs() * TYPICAL_POWER));
    prog.set_objective((secrecy.clone() - energy.clone() * lambda) * objective_scale);

    Ok(PowerSpeedModel {
        program: prog,
        lambda,
        kinetic_ref: traj.speed[1],
        seg_len,
        snr_b,
        snr_u,
        snr_a,
        p_u_ref,
        p_b,
        p_u,
        rate_b,
        rate_u,
        adv_rate,
        speed,
        speed_band: bands,
        icc_rows,
        bs_avg_row,
        uav_avg_row,
        adv_rows,
        secrecy,
        energy,
        objective_scale,
    })
}

/// Convex part of slot `i`'s propulsion power at speed `v`, and its
/// derivative in `v`.
fn convex_power(cfg: &ScenarioConfig, seg_len: &[f64], i: usize, v: f64) -> (f64, f64) {
    let rho = cfg.slot_len();
    let mut val = cfg.alpha_u * v.powi(3) + cfg.beta_u / v;
    let mut d = 3.0 * cfg.alpha_u * v * v - cfg.beta_u / (v * v);
    if i < cfg.slots - 1 {
        let a = 2.0 * (seg_len[i] - rho * v) / (rho * rho);
        let k = cfg.beta_u / (cfg.gravity * cfg.gravity);
        val += k * a * a / v;
        d += k * (-4.0 * a / (rho * v) - a * a / (v * v));
    }
    (val, d)
}

/// Energy of the `λ ≥ 0` model at the speeds in `x`, with every epigraph
/// tight.
pub fn model_energy(model: &PowerSpeedModel, x: &[f64], cfg: &ScenarioConfig) -> f64 {
    let n = cfg.slots;
    let kc = cfg.mass / (2.0 * cfg.slot_len());
    let v = |i: usize| x[model.speed[i]];
    let convex: f64 = cfg
        .uav_slots()
        .map(|i| convex_power(cfg, &model.seg_len, i, v(i)).0)
        .sum();
    let t = taylor_square_lower(model.kinetic_ref, 0.0);
    convex + kc * v(n - 1).powi(2) - kc * (t.slope * v(1) + t.intercept)
}

/// Turn a solved model into a feasible `(trajectory, powers)` pair.
pub fn extract_solution(
    model: &PowerSpeedModel,
    x: &[f64],
    traj: &Trajectory,
    cfg: &ScenarioConfig,
) -> (Trajectory, PowerSchedule) {
    let n = cfg.slots;
    let rho = cfg.slot_len();
    let mut p_b = vec![0.0; n];
    let mut p_u = vec![0.0; n];
    for i in 0..n {
        if let Some(v) = model.p_b[i] {
            p_b[i] = x[v].clamp(0.0, cfg.p_b_max);
        }
        if let Some(v) = model.p_u[i] {
            p_u[i] = x[v].clamp(0.0, cfg.p_u_max);
        }
    }
    scale_to_average(&mut p_b, cfg.p_b_avg * (n - 1) as f64);
    scale_to_average(&mut p_u, cfg.p_u_avg * (n - 1) as f64);

    let mut speed: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = model.speed_band[i];
            x[model.speed[i]].clamp(lo, hi)
        })
        .collect();
    if speed[n - 1] < speed[1] {
        speed[n - 1] = speed[1];
    }
    let mut accel = vec![0.0; n];
    for i in 0..n - 1 {
        accel[i] = 2.0 * (model.seg_len[i] - rho * speed[i]) / (rho * rho);
    }
    let new_traj = Trajectory {
        pos: traj.pos.clone(),
        speed,
        accel,
    };
    let mut pow = PowerSchedule { p_b, p_u };
    let target: Vec<f64> = (0..n)
        .map(|i| model.rate_u[i].map_or(0.0, |v| x[v]))
        .collect();
    pow.p_u = repair_icc(&new_traj, &pow, cfg, Some(&target));
    (new_traj, pow)
}

fn scale_to_average(p: &mut [f64], cap: f64) {
    let total: f64 = p.iter().sum();
    if total > cap && total > 0.0 {
        let s = cap / total;
        for v in p.iter_mut() {
            *v *= s;
        }
    }
}

/// One parametric solve of block 1.
pub fn solve_power_speed_at(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    lambda: f64,
    opts: &BlockOptions,
) -> Result<(PowerSpeedModel, SolveResult)> {
    let model = build_power_speed_program(traj, pow, cfg, lambda, &opts.encoding)?;
    let res = solve(&model.program, opts.solver_tol)?;
    if !res.is_optimal() {
        return Err(Error::Solver(format!(
            "power/speed block: {:?} ({})",
            res.status, res.detail
        )));
    }
    Ok((model, res))
}

#[derive(Debug, Clone)]
pub struct PowerSpeedOutcome {
    pub traj: Trajectory,
    pub pow: PowerSchedule,
    pub trace: BlockTrace,
}

/// SCA passes over the power/speed block, each solved by Dinkelbach.
/// Never returns a worse solution than the incumbent; on solver failure the
/// incumbent comes back with `trace.diagnostic` set.
pub fn solve_power_speed(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    opts: &BlockOptions,
) -> Result<PowerSpeedOutcome> {
    // surfaces an infeasible fixing before any solve
    let seg: Vec<f64> = (0..cfg.slots - 1).map(|i| traj.segment_len(i)).collect();
    speed_bands(&seg, cfg)?;
    let (traj, pow, trace) = run_sca(traj, pow, cfg, opts, |exp: &Candidate, lambda| {
        let (model, res) = solve_power_speed_at(&exp.0, &exp.1, cfg, lambda, opts)?;
        let x = res.primal()?;
        let numerator = model.secrecy.eval(x);
        let surrogate = model.energy.eval(x);
        let denominator = if lambda < 0.0 && numerator < 0.0 {
            surrogate
        } else {
            model_energy(&model, x, cfg)
        };
        Ok(InnerSolution {
            value: numerator - lambda * surrogate,
            numerator,
            denominator,
            candidate: extract_solution(&model, x, &exp.0, cfg),
        })
    });
    Ok(PowerSpeedOutcome { traj, pow, trace })
}

/// Optimality-condition residuals of a solved block-1 model, written in the
/// original (non-conic) variables: ICC multipliers, stationarity with
/// respect to each power, and complementary slackness on the power
/// constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// ICC multiplier per slot (index 0 unused, always 0).
    pub icc_duals: Vec<f64>,
    pub min_icc_dual: f64,
    /// Largest suffix sum `Σ_{m ≥ n} λ_m`.
    pub max_icc_dual_sum: f64,
    pub stationarity_p_b: Vec<f64>,
    pub stationarity_p_u: Vec<f64>,
    pub max_stationarity: f64,
    pub max_complementarity: f64,
}

impl KktReport {
    pub fn satisfied(&self, residual_tol: f64, dual_tol: f64) -> bool {
        self.min_icc_dual >= -dual_tol
            && self.max_icc_dual_sum <= 1.0 + dual_tol
            && self.max_stationarity <= residual_tol
            && self.max_complementarity <= residual_tol
    }
}

pub fn kkt_diagnostics(result: &SolveResult, model: &PowerSpeedModel) -> Result<KktReport> {
    let x = result.primal()?;
    if result.duals.len() != model.program.constraints.len()
        || result.bound_duals.len() != model.program.num_vars()
    {
        return Err(Error::Malformed {
            what: "solve result".into(),
            reason: "duals missing or sized for another program".into(),
        });
    }
    let n = model.p_b.len();
    let unscale = 1.0 / model.objective_scale;
    let dual = |row: usize| result.dual(row) * unscale;
    let mut lam = vec![0.0; n];
    for m in 1..n {
        lam[m] = dual(model.icc_rows[m].unwrap());
    }
    let min_icc_dual = lam[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let mut suffix = vec![0.0; n + 1];
    for m in (0..n).rev() {
        suffix[m] = suffix[m + 1] + lam[m];
    }
    let max_icc_dual_sum = suffix[1..n].iter().copied().fold(0.0, f64::max);
    let mu_avg_b = dual(model.bs_avg_row);
    let mu_avg_u = dual(model.uav_avg_row);

    let mut comp: f64 = 0.0;
    let mut stat_b = vec![0.0; n];
    let mut stat_u = vec![0.0; n];
    for j in 0..n {
        if let Some(v) = model.p_b[j] {
            let p = x[v];
            let (lo, hi) = result.bound_duals[v];
            let ub = model.program.variables[v].upper.unwrap();
            let k = model.snr_b[j];
            let d_rate = k / ((1.0 + k * p) * LN2);
            // rows m ≥ j+1 count this slot's reception
            stat_b[j] = suffix[j + 1] * d_rate - hi + lo - mu_avg_b;
            comp = comp.max((hi * (ub - p)).abs()).max((lo * p).abs());
        }
        if let Some(v) = model.p_u[j] {
            let p = x[v];
            let (lo, hi) = result.bound_duals[v];
            let ub = model.program.variables[v].upper.unwrap();
            let k = model.snr_u[j];
            let nu = 1.0 - suffix[j];
            let mut g = nu * k / ((1.0 + k * p) * LN2) - hi + lo - mu_avg_u;
            for (a, &row) in model.adv_rows[j].iter().enumerate() {
                let ka = model.snr_a[a][j];
                let slope = ka / ((1.0 + ka * model.p_u_ref[j]) * LN2);
                g -= dual(row) * slope;
            }
            stat_u[j] = g;
            comp = comp.max((hi * (ub - p)).abs()).max((lo * p).abs());
        }
    }
    let prog = &model.program;
    let cap = |row: usize| match &prog.constraints[row].cone {
        crate::solver::Cone::Linear { expr, .. } => -expr.eval(x),
        _ => unreachable!("average rows are linear"),
    };
    comp = comp
        .max((mu_avg_b * cap(model.bs_avg_row)).abs())
        .max((mu_avg_u * cap(model.uav_avg_row)).abs());
    for m in 1..n {
        let row = model.icc_rows[m].unwrap();
        if let crate::solver::Cone::Linear { expr, .. } = &prog.constraints[row].cone {
            comp = comp.max((lam[m] * expr.eval(x)).abs());
        }
    }
    let max_stationarity = stat_b
        .iter()
        .chain(stat_u.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    Ok(KktReport {
        icc_duals: lam,
        min_icc_dual,
        max_icc_dual_sum,
        stationarity_p_b: stat_b,
        stationarity_p_u: stat_u,
        max_stationarity,
        max_complementarity: comp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::exact_ratio;
    use crate::scenario::{check_solution, evaluate_solution, Point};
    use approx::assert_relative_eq;

    /// Straight path at constant speed along the x axis.
    fn straight(cfg: &ScenarioConfig, start: Point, speed: f64) -> Trajectory {
        let rho = cfg.slot_len();
        let n = cfg.slots;
        Trajectory {
            pos: (0..n)
                .map(|i| start + Point::new(rho * speed * i as f64, 0.0))
                .collect(),
            speed: vec![speed; n],
            accel: vec![0.0; n],
        }
    }

    fn flat_powers(cfg: &ScenarioConfig) -> PowerSchedule {
        let n = cfg.slots;
        let mut p_b = vec![cfg.p_b_avg; n];
        let mut p_u = vec![cfg.p_u_avg; n];
        p_b[n - 1] = 0.0;
        p_u[0] = 0.0;
        PowerSchedule { p_b, p_u }
    }

    fn small_cfg(n: usize) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.slots = n;
        c.horizon = 2.0 * n as f64;
        c
    }

    /// Three slots, no eavesdropper, BS link is the bottleneck. Unit SNR
    /// per watt above the BS, half that one slot later.
    fn water_filling_cfg() -> (ScenarioConfig, Trajectory) {
        let mut c = small_cfg(3);
        c.adversaries.clear();
        c.noise_power = 1e-7;
        c.bs_pos = Point::new(0.0, 0.0);
        c.user_pos = Point::new(200.0, 0.0);
        c.p_b_max = 100.0;
        c.p_b_avg = 1.0;
        c.p_u_max = 10.0;
        c.p_u_avg = 10.0;
        let t = straight(&c, Point::new(0.0, 0.0), 50.0);
        (c, t)
    }

    #[test]
    fn water_filling_matches_closed_form() {
        let (c, t) = water_filling_cfg();
        let opts = BlockOptions {
            solver_tol: 1e-12,
            ..BlockOptions::from_config(&c)
        };
        let (model, res) = solve_power_speed_at(&t, &flat_powers(&c), &c, 0.0, &opts).unwrap();
        let x = res.primal().unwrap();
        let k0 = model.snr_b[0];
        let k1 = model.snr_b[1];
        assert_relative_eq!(k0, 1.0, max_relative = 1e-12);
        assert_relative_eq!(k1, 0.5, max_relative = 1e-12);
        let total = 2.0 * c.p_b_avg;
        let level = (total + 1.0 / k0 + 1.0 / k1) / 2.0;
        let expect = [(level - 1.0 / k0).max(0.0), (level - 1.0 / k1).max(0.0)];
        assert_relative_eq!(x[model.p_b[0].unwrap()], expect[0], max_relative = 1e-6);
        assert_relative_eq!(x[model.p_b[1].unwrap()], expect[1], max_relative = 1e-6);
        let rep = kkt_diagnostics(&res, &model).unwrap();
        assert!(rep.max_stationarity <= 1e-6, "{rep:?}");
        assert!(rep.max_complementarity <= 1e-6, "{rep:?}");
        assert!(
            rep.min_icc_dual >= -1e-8 && rep.max_icc_dual_sum <= 1.0 + 1e-8,
            "{rep:?}"
        );
    }

    #[test]
    fn perturbed_primal_grows_stationarity_residual() {
        let (c, t) = water_filling_cfg();
        let opts = BlockOptions {
            solver_tol: 1e-10,
            ..BlockOptions::from_config(&c)
        };
        let (model, res) = solve_power_speed_at(&t, &flat_powers(&c), &c, 0.0, &opts).unwrap();
        let base = kkt_diagnostics(&res, &model).unwrap().max_stationarity;
        let mut last = base;
        for eps in [1e-3, 1e-2, 1e-1] {
            let mut r = res.clone();
            let v = model.p_b[0].unwrap();
            r.primal.as_mut().unwrap()[v] += eps;
            let s = kkt_diagnostics(&r, &model).unwrap().max_stationarity;
            assert!(s > last, "eps={eps}: {s} <= {last}");
            last = s;
        }
    }

    #[test]
    fn higher_bs_peak_never_lowers_throughput() {
        let mut c = small_cfg(6);
        c.adversaries.clear();
        c.p_b_avg = 0.2;
        let t = straight(&c, Point::new(100.0, 50.0), 10.0);
        let mut last = f64::NEG_INFINITY;
        for p_max in [0.2, 0.4, 0.8, 1.6, 3.2] {
            c.p_b_max = p_max;
            let opts = BlockOptions::from_config(&c);
            let (model, res) = solve_power_speed_at(&t, &flat_powers(&c), &c, 0.0, &opts).unwrap();
            let v = model.secrecy.eval(res.primal().unwrap());
            assert!(v >= last - 1e-7, "p_b_max={p_max}: {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn large_lambda_drives_speed_to_energy_minimum() {
        // long segments let the speed band cover the propulsion minimum
        let mut c = small_cfg(5);
        c.a_max = 100.0;
        let t = straight(&c, Point::new(0.0, 300.0), 30.0);
        let opts = BlockOptions::from_config(&c);
        let (model, res) = solve_power_speed_at(&t, &flat_powers(&c), &c, 1e6, &opts).unwrap();
        let x = res.primal().unwrap();
        let v_star = (c.beta_u / (3.0 * c.alpha_u)).powf(0.25);
        // interior slots carry no kinetic term
        for i in 2..c.slots - 1 {
            assert!(
                (x[model.speed[i]] - v_star).abs() < 0.5,
                "slot {i}: {}",
                x[model.speed[i]]
            );
        }
    }

    #[test]
    fn infeasible_fixing_reported() {
        let c = small_cfg(4);
        let mut t = straight(&c, Point::new(0.0, 0.0), 10.0);
        t.pos[2] = t.pos[1] + Point::new(1000.0, 0.0);
        let err = build_power_speed_program(&t, &flat_powers(&c), &c, 0.0, &LogEncoding::ExpCone)
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleFixing { slot: 2 }), "{err}");
    }

    #[test]
    fn block_improves_and_stays_feasible() {
        let c = small_cfg(8);
        let t = straight(&c, Point::new(200.0, 80.0), 10.0);
        let p = flat_powers(&c);
        let start = exact_ratio(&t, &p, &c).unwrap();
        let opts = BlockOptions::from_config(&c);
        let out = solve_power_speed(&t, &p, &c, &opts).unwrap();
        assert!(out.trace.diagnostic.is_none(), "{:?}", out.trace.diagnostic);
        assert!(check_solution(&out.traj, &out.pow, &c).is_empty());
        let end = evaluate_solution(&out.traj, &out.pow, &c).unwrap().ratio();
        assert!(end > start, "{end} <= {start}");
        for pass in &out.trace.passes {
            assert!(
                crate::sca::lambda_nondecreasing(&pass.steps, 1e-8),
                "{:?}",
                pass.steps
            );
        }
        for r in out.traj.mobility_residuals(c.slot_len()) {
            assert!(r <= 1e-9);
        }
    }

    /// An eavesdropper sitting on the path makes the starting ratio negative.
    fn negative_start() -> (ScenarioConfig, Trajectory, PowerSchedule) {
        let mut c = small_cfg(6);
        let t = straight(&c, Point::new(200.0, 80.0), 10.0);
        c.adversaries = vec![crate::scenario::AdversaryRegion::new(t.pos[3], 30.0)];
        let mut p = flat_powers(&c);
        p.p_u = repair_icc(&t, &p, &c, None);
        (c, t, p)
    }

    #[test]
    fn negative_lambda_model_is_tight_lower_bound() {
        let (c, t, p) = negative_start();
        let lam = exact_ratio(&t, &p, &c).unwrap();
        assert!(lam < 0.0, "setup should start below zero, got {lam}");
        let opts = BlockOptions::from_config(&c);
        let (model, res) = solve_power_speed_at(&t, &p, &c, lam, &opts).unwrap();
        let x = res.primal().unwrap();
        let f = model.secrecy.eval(x) - lam * model.energy.eval(x);
        assert!(f >= -1e-6, "F(λ₀) = {f}");
        let tangent = model.energy.eval(x);
        let exact = model_energy(&model, x, &c);
        assert!(tangent <= exact + 1e-9 * exact.abs(), "{tangent} > {exact}");
    }

    #[test]
    fn negative_start_climbs_monotonically() {
        let (c, t, p) = negative_start();
        let start = exact_ratio(&t, &p, &c).unwrap();
        let out = solve_power_speed(&t, &p, &c, &BlockOptions::from_config(&c)).unwrap();
        assert!(out.trace.diagnostic.is_none(), "{:?}", out.trace.diagnostic);
        assert!(check_solution(&out.traj, &out.pow, &c).is_empty());
        let end = exact_ratio(&out.traj, &out.pow, &c).unwrap();
        assert!(end > start, "{end} <= {start}");
        for pass in &out.trace.passes {
            assert!(
                crate::sca::lambda_nondecreasing(&pass.steps, 1e-8),
                "{:?}",
                pass.steps
            );
        }
    }

    #[test]
    fn fixed_point_is_returned_unchanged() {
        let c = small_cfg(6);
        let t = straight(&c, Point::new(200.0, 80.0), 10.0);
        let opts = BlockOptions::from_config(&c);
        let first = solve_power_speed(&t, &flat_powers(&c), &c, &opts).unwrap();
        let again = solve_power_speed(&first.traj, &first.pow, &c, &opts).unwrap();
        let r1 = exact_ratio(&first.traj, &first.pow, &c).unwrap();
        let r2 = exact_ratio(&again.traj, &again.pow, &c).unwrap();
        assert!(r2 >= r1);
        assert!((r2 - r1) / r1 < 1e-3, "{r1} -> {r2}");
    }
}

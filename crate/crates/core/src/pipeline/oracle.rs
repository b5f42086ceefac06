//! Exhaustive grid oracles for tiny instances (N ≤ 4), used to bound what the
//! alternating scheme reaches.
//!
//! With positions fixed, the secrecy sum depends only on the powers and the
//! propulsion energy only on the speeds, so the best ratio for a position
//! combination is the best numerator over the power grid divided by the
//! best denominator over the speed grid. Both oracles rely on that split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power_speed::speed_bands;
use crate::robust::worstcase_adv_gain;
use crate::scenario::{
    channel_gain, check_powers, check_solution, check_trajectory, evaluate_solution, icc_check,
    kinetic_delta, propulsion_power, propulsion_profile, rate_unchecked, Point, PowerSchedule,
    ScenarioConfig, Trajectory,
};

pub const DEFAULT_ORACLE_BUDGET: u128 = 50_000_000;
const MAX_SLOTS: usize = 4;

/// Candidate values per slot for every decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrids {
    pub positions: Vec<Vec<Point>>,
    pub speeds: Vec<Vec<f64>>,
    pub p_b: Vec<Vec<f64>>,
    pub p_u: Vec<Vec<f64>>,
}

fn dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl OracleGrids {
    /// Grids that contain `(traj, pow)` exactly: a `per_axis × per_axis`
    /// square of positions centred on each slot, speeds at `speed_step`
    /// spacing around each slot's speed, and `power_levels` evenly spaced
    /// powers plus the given one.
    pub fn around(
        traj: &Trajectory,
        pow: &PowerSchedule,
        cfg: &ScenarioConfig,
        spacing: f64,
        per_axis: usize,
        speed_step: f64,
        speed_levels: usize,
        power_levels: usize,
    ) -> Self {
        let n = cfg.slots;
        let half = (per_axis as f64 - 1.0) / 2.0;
        let positions = traj
            .pos
            .iter()
            .map(|c| {
                let mut g = Vec::with_capacity(per_axis * per_axis);
                for i in 0..per_axis {
                    for j in 0..per_axis {
                        g.push(c + Point::new(i as f64 - half, j as f64 - half) * spacing);
                    }
                }
                g
            })
            .collect();
        let shalf = (speed_levels as f64 - 1.0) / 2.0;
        let speeds = traj
            .speed
            .iter()
            .map(|&v| {
                dedup(
                    (0..speed_levels)
                        .map(|k| (v + (k as f64 - shalf) * speed_step).clamp(cfg.v_min, cfg.v_max))
                        .chain([v])
                        .collect(),
                )
            })
            .collect();
        let levels = |max: f64, own: f64| -> Vec<f64> {
            let steps = power_levels.saturating_sub(1).max(1);
            dedup(
                (0..steps)
                    .map(|k| max * k as f64 / steps as f64)
                    .chain([own])
                    .collect(),
            )
        };
        let p_b = (0..n)
            .map(|i| {
                if i == n - 1 {
                    vec![0.0]
                } else {
                    levels(cfg.p_b_max, pow.p_b[i])
                }
            })
            .collect();
        let p_u = (0..n)
            .map(|i| {
                if i == 0 {
                    vec![0.0]
                } else {
                    levels(cfg.p_u_max, pow.p_u[i])
                }
            })
            .collect();
        Self {
            positions,
            speeds,
            p_b,
            p_u,
        }
    }

    /// One candidate per variable: the given solution itself.
    pub fn single(traj: &Trajectory, pow: &PowerSchedule) -> Self {
        Self {
            positions: traj.pos.iter().map(|p| vec![*p]).collect(),
            speeds: traj.speed.iter().map(|v| vec![*v]).collect(),
            p_b: pow.p_b.iter().map(|v| vec![*v]).collect(),
            p_u: pow.p_u.iter().map(|v| vec![*v]).collect(),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for (what, len) in [
            ("position grid", self.positions.len()),
            ("speed grid", self.speeds.len()),
            ("p_b grid", self.p_b.len()),
            ("p_u grid", self.p_u.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        let empty = self
            .positions
            .iter()
            .map(Vec::len)
            .chain(self.speeds.iter().map(Vec::len))
            .chain(self.p_b.iter().map(Vec::len))
            .chain(self.p_u.iter().map(Vec::len))
            .any(|l| l == 0);
        if empty {
            return Err(Error::InvalidArgument(
                "oracle grid with no candidates".into(),
            ));
        }
        Ok(())
    }

    /// Number of evaluations an exhaustive search performs.
    pub fn combinations(&self) -> u128 {
        let prod = |g: &[Vec<f64>]| g.iter().map(|v| v.len() as u128).product::<u128>();
        let pos: u128 = self.positions.iter().map(|v| v.len() as u128).product();
        pos * (prod(&self.speeds) + prod(&self.p_b) * prod(&self.p_u))
    }
}

fn nearest(grid: &[f64], x: f64) -> f64 {
    grid.iter()
        .copied()
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .expect("grids are non-empty")
}

/// Move every variable to its nearest grid value and recompute
/// accelerations from the snapped positions and speeds.
pub fn snap_to_grids(
    traj: &Trajectory,
    pow: &PowerSchedule,
    grids: &OracleGrids,
    cfg: &ScenarioConfig,
) -> (Trajectory, PowerSchedule) {
    let n = cfg.slots;
    let pos: Vec<Point> = (0..n)
        .map(|i| {
            *grids.positions[i]
                .iter()
                .min_by(|a, b| {
                    (*a - traj.pos[i])
                        .norm()
                        .total_cmp(&(*b - traj.pos[i]).norm())
                })
                .expect("grids are non-empty")
        })
        .collect();
    let speed: Vec<f64> = (0..n)
        .map(|i| nearest(&grids.speeds[i], traj.speed[i]))
        .collect();
    let accel = accel_for(&pos, &speed, cfg);
    let pow = PowerSchedule {
        p_b: (0..n).map(|i| nearest(&grids.p_b[i], pow.p_b[i])).collect(),
        p_u: (0..n).map(|i| nearest(&grids.p_u[i], pow.p_u[i])).collect(),
    };
    (Trajectory { pos, speed, accel }, pow)
}

/// Accelerations that make the mobility equation exact; the last slot has
/// no segment and gets zero.
fn accel_for(pos: &[Point], speed: &[f64], cfg: &ScenarioConfig) -> Vec<f64> {
    let rho = cfg.slot_len();
    let n = pos.len();
    let mut a = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        a[i] = 2.0 * ((pos[i + 1] - pos[i]).norm() - rho * speed[i]) / (rho * rho);
    }
    a
}

/// Mixed-radix counter over per-slot candidate lists.
fn for_each_combo(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    if sizes.contains(&0) {
        return;
    }
    let mut idx = vec![0; sizes.len()];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            if k == sizes.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Per-slot gains for a fixed set of positions.
struct Gains {
    b: Vec<f64>,
    u: Vec<f64>,
    /// Largest worst-case eavesdropper gain over all adversaries.
    a: Vec<f64>,
}

impl Gains {
    fn new(pos: &[Point], cfg: &ScenarioConfig) -> Self {
        Self {
            b: pos
                .iter()
                .map(|p| channel_gain(p, &cfg.bs_pos, cfg))
                .collect(),
            u: pos
                .iter()
                .map(|p| channel_gain(p, &cfg.user_pos, cfg))
                .collect(),
            a: pos
                .iter()
                .map(|p| {
                    cfg.adversaries
                        .iter()
                        .map(|adv| worstcase_adv_gain(p, adv, cfg))
                        .fold(0.0, f64::max)
                })
                .collect(),
        }
    }

    /// Secrecy sum of a power pair, or `None` if information causality fails.
    fn secrecy(&self, p_b: &[f64], p_u: &[f64], cfg: &ScenarioConfig) -> Option<f64> {
        let n = p_b.len();
        let noise = cfg.noise_power;
        let r_b: Vec<f64> = (0..n)
            .map(|i| rate_unchecked(p_b[i], self.b[i], noise))
            .collect();
        let r_u: Vec<f64> = (0..n)
            .map(|i| rate_unchecked(p_u[i], self.u[i], noise))
            .collect();
        if !icc_check(&r_b, &r_u, cfg.tolerances.feasibility_tol)
            .ok()?
            .feasible
        {
            return None;
        }
        Some(
            (1..n)
                .map(|i| r_u[i] - rate_unchecked(p_u[i], self.a[i], noise))
                .sum(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub ee_kbits_per_j: f64,
    pub traj: Trajectory,
    pub pow: PowerSchedule,
    pub combinations: u128,
    /// Position combinations for which some speed and power choice was feasible.
    pub feasible_position_combos: usize,
}

/// Best EE over every grid combination that passes all exact constraints.
/// `Ok(None)` when nothing on the grid is feasible.
pub fn tiny_oracle(
    cfg: &ScenarioConfig,
    grids: &OracleGrids,
    budget: u128,
) -> Result<Option<OracleResult>> {
    cfg.validate()?;
    let n = cfg.slots;
    if n > MAX_SLOTS {
        return Err(Error::InvalidArgument(format!(
            "the exhaustive oracle handles at most {MAX_SLOTS} slots, got {n}"
        )));
    }
    grids.check(n)?;
    let combinations = grids.combinations();
    if combinations > budget {
        return Err(Error::BudgetExceeded {
            combinations,
            budget,
        });
    }

    // power pairs that meet peak, endpoint and average limits
    let mut sizes: Vec<usize> = grids.p_b.iter().map(Vec::len).collect();
    sizes.extend(grids.p_u.iter().map(Vec::len));
    let mut power_pairs = Vec::new();
    for_each_combo(&sizes, |idx| {
        let pow = PowerSchedule {
            p_b: (0..n).map(|i| grids.p_b[i][idx[i]]).collect(),
            p_u: (0..n).map(|i| grids.p_u[i][idx[n + i]]).collect(),
        };
        if check_powers(&pow, cfg).is_empty() {
            power_pairs.push(pow);
        }
    });

    let pos_sizes: Vec<usize> = grids.positions.iter().map(Vec::len).collect();
    let speed_sizes: Vec<usize> = grids.speeds.iter().map(Vec::len).collect();
    let mut best: Option<(f64, Trajectory, PowerSchedule)> = None;
    let mut feasible_combos = 0;
    for_each_combo(&pos_sizes, |pidx| {
        let pos: Vec<Point> = (0..n).map(|i| grids.positions[i][pidx[i]]).collect();
        // extreme denominators over the speed grid
        let mut lo: Option<(f64, Trajectory)> = None;
        let mut hi: Option<(f64, Trajectory)> = None;
        for_each_combo(&speed_sizes, |sidx| {
            let speed: Vec<f64> = (0..n).map(|i| grids.speeds[i][sidx[i]]).collect();
            // same rule the optimizer obeys: no braking the initial kinetic
            // energy away
            if speed[n - 1] < speed[1] {
                return;
            }
            let traj = Trajectory {
                accel: accel_for(&pos, &speed, cfg),
                pos: pos.clone(),
                speed,
            };
            if !check_trajectory(&traj, cfg).is_empty() {
                return;
            }
            let Ok(e) = propulsion_profile(&traj, cfg) else {
                return;
            };
            let den: f64 = e[cfg.uav_slots()].iter().sum();
            if !(den > 0.0) {
                return;
            }
            if lo.as_ref().is_none_or(|(d, _)| den < *d) {
                lo = Some((den, traj.clone()));
            }
            if hi.as_ref().is_none_or(|(d, _)| den > *d) {
                hi = Some((den, traj));
            }
        });
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return;
        };
        let gains = Gains::new(&pos, cfg);
        let mut top: Option<(f64, &PowerSchedule)> = None;
        for pow in &power_pairs {
            if let Some(s) = gains.secrecy(&pow.p_b, &pow.p_u, cfg) {
                if top.is_none_or(|(t, _)| s > t) {
                    top = Some((s, pow));
                }
            }
        }
        let Some((num, pow)) = top else {
            return;
        };
        feasible_combos += 1;
        let (den, traj) = if num >= 0.0 { lo } else { hi };
        let ratio = num / den;
        if best.as_ref().is_none_or(|(r, _, _)| ratio > *r) {
            best = Some((ratio, traj, pow.clone()));
        }
    });
    let Some((_, traj, pow)) = best else {
        return Ok(None);
    };
    debug_assert!(check_solution(&traj, &pow, cfg).is_empty());
    let rep = evaluate_solution(&traj, &pow, cfg)?;
    Ok(Some(OracleResult {
        ee_kbits_per_j: rep.ee_kbits_per_j,
        traj,
        pow,
        combinations,
        feasible_position_combos: feasible_combos,
    }))
}

/// Maximize `f` over a box by repeatedly gridding a window with `k` points
/// per axis. The window is recentred on the best point each round and only
/// shrinks when the best point stays put, so it can follow a ridge.
fn refine_grid(
    lo: &[f64],
    hi: &[f64],
    k: usize,
    rounds: usize,
    mut f: impl FnMut(&[f64]) -> Option<f64>,
) -> Option<(Vec<f64>, f64)> {
    let d = lo.len();
    let shrink = (4.0 / (k - 1) as f64).min(0.5);
    let mut centre: Vec<f64> = (0..d).map(|j| 0.5 * (lo[j] + hi[j])).collect();
    let mut half: Vec<f64> = (0..d).map(|j| 0.5 * (hi[j] - lo[j])).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut x = vec![0.0; d];
    for _ in 0..rounds {
        let wlo: Vec<f64> = (0..d).map(|j| (centre[j] - half[j]).max(lo[j])).collect();
        let whi: Vec<f64> = (0..d).map(|j| (centre[j] + half[j]).min(hi[j])).collect();
        let step: Vec<f64> = (0..d).map(|j| (whi[j] - wlo[j]) / (k - 1) as f64).collect();
        let sizes: Vec<usize> = (0..d).map(|j| if step[j] > 0.0 { k } else { 1 }).collect();
        let before = best.as_ref().map(|b| b.1);
        for_each_combo(&sizes, |idx| {
            for j in 0..d {
                x[j] = wlo[j] + step[j] * idx[j] as f64;
            }
            if let Some(v) = f(&x) {
                if best.as_ref().is_none_or(|(_, b)| v > *b) {
                    best = Some((x.clone(), v));
                }
            }
        });
        let (c, v) = best.as_ref()?;
        let moved = before.is_some_and(|b| *v > b);
        if !moved {
            for h in &mut half {
                *h *= shrink;
            }
        }
        centre.clone_from(c);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block1Oracle {
    /// Secrecy rate per watt of propulsion power.
    pub ratio: f64,
    pub ee_kbits_per_j: f64,
    pub pow: PowerSchedule,
    pub speed: Vec<f64>,
}

/// Grid search over the power/speed subproblem with the path fixed, under
/// the same rules the block uses: the first slot shares the second slot's
/// speed, the last slot has zero acceleration and does not end slower than
/// the second.
pub fn block1_grid_oracle(
    traj: &Trajectory,
    cfg: &ScenarioConfig,
    points_per_axis: usize,
    rounds: usize,
) -> Result<Block1Oracle> {
    cfg.validate()?;
    let n = cfg.slots;
    if n > MAX_SLOTS {
        return Err(Error::InvalidArgument(format!(
            "the grid oracle handles at most {MAX_SLOTS} slots, got {n}"
        )));
    }
    let k = points_per_axis.max(2);
    let rho = cfg.slot_len();
    let seg: Vec<f64> = (0..n - 1).map(|i| traj.segment_len(i)).collect();
    let bands = speed_bands(&seg, cfg)?;
    let gains = Gains::new(&traj.pos, cfg);
    let m = n - 1;

    // x = [p_b[0..m], p_u[1..n]]
    let lo = vec![0.0; 2 * m];
    let mut hi = vec![cfg.p_b_max; m];
    hi.extend(vec![cfg.p_u_max; m]);
    let b_cap = cfg.p_b_avg * m as f64 * (1.0 + 1e-12);
    let u_cap = cfg.p_u_avg * m as f64 * (1.0 + 1e-12);
    let mut p_b = vec![0.0; n];
    let mut p_u = vec![0.0; n];
    let (xp, num) = refine_grid(&lo, &hi, k, rounds, |x| {
        if x[..m].iter().sum::<f64>() > b_cap || x[m..].iter().sum::<f64>() > u_cap {
            return None;
        }
        p_b[..m].copy_from_slice(&x[..m]);
        p_u[1..].copy_from_slice(&x[m..]);
        gains.secrecy(&p_b, &p_u, cfg)
    })
    .ok_or_else(|| Error::InvalidArgument("no feasible power on the grid".into()))?;

    // y = v[1..n]; v[0] = v[1]
    let energy = |v: &[f64]| -> f64 {
        let mut total = 0.0;
        for j in 0..m {
            let i = j + 1;
            let a = if i < n - 1 {
                2.0 * (seg[i] - rho * v[j]) / (rho * rho)
            } else {
                0.0
            };
            let dk = if i == 1 {
                0.0
            } else {
                kinetic_delta(v[j - 1], v[j], cfg)
            };
            total += propulsion_power(v[j], a, dk, cfg).unwrap_or(f64::INFINITY);
        }
        total
    };
    let slo: Vec<f64> = bands[1..].iter().map(|b| b.0).collect();
    let shi: Vec<f64> = bands[1..].iter().map(|b| b.1).collect();
    let sign = if num >= 0.0 { -1.0 } else { 1.0 };
    let (ys, _) = refine_grid(&slo, &shi, k.max(41), rounds, |v| {
        if v[m - 1] < v[0] {
            return None;
        }
        Some(sign * energy(v))
    })
    .ok_or_else(|| Error::InvalidArgument("no feasible speed on the grid".into()))?;
    let den = energy(&ys);
    let mut pb = vec![0.0; n];
    let mut pu = vec![0.0; n];
    pb[..m].copy_from_slice(&xp[..m]);
    pu[1..].copy_from_slice(&xp[m..]);
    let mut speed = vec![ys[0]];
    speed.extend_from_slice(&ys);
    let ratio = num / den;
    Ok(Block1Oracle {
        ratio,
        ee_kbits_per_j: ratio * cfg.bandwidth / 1e3,
        pow: PowerSchedule { p_b: pb, p_u: pu },
        speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::init_solution;
    use crate::scenario::evaluate_solution;

    fn tiny_cfg() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.slots = 3;
        c.horizon = 6.0;
        c.bs_pos = Point::new(60.0, 0.0);
        c.user_pos = Point::new(0.0, 0.0);
        c.adversaries = vec![crate::scenario::AdversaryRegion::new(
            Point::new(-150.0, 0.0),
            30.0,
        )];
        c
    }

    #[test]
    fn single_point_grid_equals_evaluation() {
        let c = tiny_cfg();
        let (t, p) = init_solution(&c).unwrap();
        let grids = OracleGrids::single(&t, &p);
        assert_eq!(grids.combinations(), 2);
        let r = tiny_oracle(&c, &grids, 10).unwrap().unwrap();
        let e = evaluate_solution(&t, &p, &c).unwrap();
        assert_eq!(r.ee_kbits_per_j, e.ee_kbits_per_j);
    }

    #[test]
    fn superset_grid_dominates_its_centre() {
        let c = tiny_cfg();
        let (t, p) = init_solution(&c).unwrap();
        let grids = OracleGrids::around(&t, &p, &c, 10.0, 3, 2.0, 3, 4);
        let (st, sp) = snap_to_grids(&t, &p, &grids, &c);
        assert_eq!(st, t);
        let r = tiny_oracle(&c, &grids, DEFAULT_ORACLE_BUDGET)
            .unwrap()
            .unwrap();
        let e = evaluate_solution(&st, &sp, &c).unwrap();
        assert!(r.ee_kbits_per_j >= e.ee_kbits_per_j);
        assert!(check_solution(&r.traj, &r.pow, &c).is_empty());
    }

    #[test]
    fn budget_is_enforced() {
        let c = tiny_cfg();
        let (t, p) = init_solution(&c).unwrap();
        let grids = OracleGrids::around(&t, &p, &c, 10.0, 3, 2.0, 3, 4);
        assert!(matches!(
            tiny_oracle(&c, &grids, 100),
            Err(Error::BudgetExceeded { .. })
        ));
        let mut big = c.clone();
        big.slots = 5;
        assert!(matches!(
            tiny_oracle(&big, &grids, DEFAULT_ORACLE_BUDGET),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn refine_grid_finds_smooth_maximum() {
        let (x, v) = refine_grid(&[0.0, -1.0], &[2.0, 1.0], 11, 25, |x| {
            Some(-(x[0] - 1.234_567).powi(2) - (x[1] + 0.3).powi(2))
        })
        .unwrap();
        assert!((x[0] - 1.234_567).abs() < 1e-6);
        assert!((x[1] + 0.3).abs() < 1e-6);
        assert!(v <= 0.0);
    }
}

//! Physical model: geometry, slotting, line-of-sight channels, link rates,
//! information-causality accounting and fixed-wing propulsion power.
//!
//! Slots are numbered `1..=N` in reports and diagnostics. Internally every
//! per-slot vector is 0-based, so slot `n` lives at index `n - 1`. Slot 1
//! carries BS→UAV traffic only and slot N carries UAV→user traffic only,
//! hence `p_u[0] == 0` and `p_b[N-1] == 0`.

use std::fmt;
use std::ops::Range;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust;

/// Horizontal position in metres.
pub type Point = Vector2<f64>;

/// Default parameter set, shipped as a JSON document.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../../../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryRegion {
    /// Estimated centre of the uncertainty disk.
    pub est_pos: Point,
    /// Disk radius in metres.
    #[serde(rename = "radius_R")]
    pub radius: f64,
}

impl AdversaryRegion {
    pub fn new(est_pos: Point, radius: f64) -> Self {
        Self { est_pos, radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSet {
    pub feasibility_tol: f64,
    pub dinkelbach_tol: f64,
    pub sca_tol: f64,
    pub psd_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub bs_pos: Point,
    pub user_pos: Point,
    pub adversaries: Vec<AdversaryRegion>,
    #[serde(rename = "altitude_H")]
    pub altitude: f64,
    #[serde(rename = "horizon_T")]
    pub horizon: f64,
    #[serde(rename = "slots_N")]
    pub slots: usize,
    /// Channel power gain at the 1 m reference distance (linear).
    pub beta0: f64,
    pub noise_power: f64,
    pub p_b_max: f64,
    pub p_b_avg: f64,
    pub p_u_max: f64,
    pub p_u_avg: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Parasitic drag coefficient of the propulsion model.
    pub alpha_u: f64,
    /// Induced-power coefficient of the propulsion model.
    pub beta_u: f64,
    #[serde(rename = "mass_m")]
    pub mass: f64,
    #[serde(rename = "gravity_g")]
    pub gravity: f64,
    /// Only scales reported bits; never affects an optimization decision.
    #[serde(rename = "bandwidth_B")]
    pub bandwidth: f64,
    pub tolerances: ToleranceSet,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_CONFIG_JSON).expect("bundled default config is valid")
    }
}

impl ScenarioConfig {
    /// Slot length `T / N` in seconds.
    pub fn slot_len(&self) -> f64 {
        self.horizon / self.slots as f64
    }

    /// `β₀ / σ²`.
    pub fn gamma(&self) -> f64 {
        self.beta0 / self.noise_power
    }

    /// Indices of slots in which the BS transmits (slots `1..N-1`).
    pub fn bs_slots(&self) -> Range<usize> {
        0..self.slots - 1
    }

    /// Indices of slots in which the UAV transmits (slots `2..N`).
    pub fn uav_slots(&self) -> Range<usize> {
        1..self.slots
    }

    pub fn with_radius(&self, radius: f64) -> Self {
        let mut cfg = self.clone();
        for adv in &mut cfg.adversaries {
            adv.radius = radius;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid_config(field, "must be finite"))
            }
        }
        fn positive(field: &str, v: f64) -> Result<()> {
            finite(field, v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid_config(
                    field,
                    format!("must be > 0, got {v}"),
                ))
            }
        }
        fn nonneg(field: &str, v: f64) -> Result<()> {
            finite(field, v)?;
            if v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid_config(
                    field,
                    format!("must be >= 0, got {v}"),
                ))
            }
        }

        for (field, p) in [("bs_pos", &self.bs_pos), ("user_pos", &self.user_pos)] {
            finite(field, p.x)?;
            finite(field, p.y)?;
        }
        for (i, adv) in self.adversaries.iter().enumerate() {
            finite(&format!("adversaries[{i}].est_pos"), adv.est_pos.x)?;
            finite(&format!("adversaries[{i}].est_pos"), adv.est_pos.y)?;
            nonneg(&format!("adversaries[{i}].radius_R"), adv.radius)?;
        }
        if self.slots < 3 {
            return Err(Error::invalid_config(
                "slots_N",
                format!("must be >= 3, got {}", self.slots),
            ));
        }
        positive("altitude_H", self.altitude)?;
        positive("horizon_T", self.horizon)?;
        positive("beta0", self.beta0)?;
        positive("noise_power", self.noise_power)?;
        nonneg("p_b_max", self.p_b_max)?;
        nonneg("p_b_avg", self.p_b_avg)?;
        nonneg("p_u_max", self.p_u_max)?;
        nonneg("p_u_avg", self.p_u_avg)?;
        if self.p_b_avg > self.p_b_max {
            return Err(Error::invalid_config("p_b_avg", "must not exceed p_b_max"));
        }
        if self.p_u_avg > self.p_u_max {
            return Err(Error::invalid_config("p_u_avg", "must not exceed p_u_max"));
        }
        positive("v_min", self.v_min)?;
        finite("v_max", self.v_max)?;
        if self.v_min > self.v_max {
            return Err(Error::invalid_config("v_max", "must be >= v_min"));
        }
        nonneg("a_max", self.a_max)?;
        nonneg("alpha_u", self.alpha_u)?;
        nonneg("beta_u", self.beta_u)?;
        nonneg("mass_m", self.mass)?;
        positive("gravity_g", self.gravity)?;
        positive("bandwidth_B", self.bandwidth)?;
        let tol = &self.tolerances;
        positive("tolerances.feasibility_tol", tol.feasibility_tol)?;
        positive("tolerances.dinkelbach_tol", tol.dinkelbach_tol)?;
        positive("tolerances.sca_tol", tol.sca_tol)?;
        positive("tolerances.psd_tol", tol.psd_tol)?;
        Ok(())
    }
}

/// Per-slot UAV state. `speed[n]` and `accel[n]` drive the displacement from
/// `pos[n]` to `pos[n+1]`; the last slot has no outgoing segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pos: Vec<Point>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Displacement length of segment `i` (from slot `i+1` to slot `i+2`).
    pub fn segment_len(&self, i: usize) -> f64 {
        (self.pos[i + 1] - self.pos[i]).norm()
    }

    /// `| ‖Δpos‖ − (ρ·v + ½ρ²·a) |` for each segment.
    pub fn mobility_residuals(&self, slot_len: f64) -> Vec<f64> {
        (0..self.pos.len().saturating_sub(1))
            .map(|i| {
                let travelled =
                    slot_len * self.speed[i] + 0.5 * slot_len * slot_len * self.accel[i];
                (self.segment_len(i) - travelled).abs()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    pub p_b: Vec<f64>,
    pub p_u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    Length,
    SpeedBelowMin,
    SpeedAboveMax,
    NonPositiveSpeed,
    AccelBound,
    Mobility,
    NegativePower,
    BsPeakPower,
    UavPeakPower,
    BsAveragePower,
    UavAveragePower,
    UavFirstSlotPower,
    BsLastSlotPower,
    InformationCausality,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::Length => "array length",
            ViolationKind::SpeedBelowMin => "speed below v_min",
            ViolationKind::SpeedAboveMax => "speed above v_max",
            ViolationKind::NonPositiveSpeed => "nonpositive speed",
            ViolationKind::AccelBound => "acceleration beyond a_max",
            ViolationKind::Mobility => "mobility residual",
            ViolationKind::NegativePower => "negative power",
            ViolationKind::BsPeakPower => "BS power above p_b_max",
            ViolationKind::UavPeakPower => "UAV power above p_u_max",
            ViolationKind::BsAveragePower => "BS average power above p_b_avg",
            ViolationKind::UavAveragePower => "UAV average power above p_u_avg",
            ViolationKind::UavFirstSlotPower => "UAV transmits in slot 1",
            ViolationKind::BsLastSlotPower => "BS transmits in slot N",
            ViolationKind::InformationCausality => "information causality",
        };
        f.write_str(s)
    }
}

/// One broken invariant. `slot` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub slot: Option<usize>,
    pub amount: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(slot) => write!(f, "{} at slot {} (by {:.3e})", self.kind, slot, self.amount),
            None => write!(f, "{} (by {:.3e})", self.kind, self.amount),
        }
    }
}

impl Violation {
    fn at(kind: ViolationKind, idx: usize, amount: f64) -> Self {
        Self {
            kind,
            slot: Some(idx + 1),
            amount,
        }
    }
}

pub fn check_trajectory(traj: &Trajectory, cfg: &ScenarioConfig) -> Vec<Violation> {
    let n = cfg.slots;
    let tol = cfg.tolerances.feasibility_tol;
    let mut out = Vec::new();
    for (what, len) in [
        ("pos", traj.pos.len()),
        ("speed", traj.speed.len()),
        ("accel", traj.accel.len()),
    ] {
        if len != n {
            log::debug!("trajectory {what} has length {len}, expected {n}");
            out.push(Violation {
                kind: ViolationKind::Length,
                slot: None,
                amount: (len as f64 - n as f64).abs(),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }
    for (i, &v) in traj.speed.iter().enumerate() {
        if v <= 0.0 || !v.is_finite() {
            out.push(Violation::at(ViolationKind::NonPositiveSpeed, i, -v));
            continue;
        }
        // speed limits apply from slot 2 on
        if i >= 1 {
            if v < cfg.v_min - tol {
                out.push(Violation::at(
                    ViolationKind::SpeedBelowMin,
                    i,
                    cfg.v_min - v,
                ));
            }
            if v > cfg.v_max + tol {
                out.push(Violation::at(
                    ViolationKind::SpeedAboveMax,
                    i,
                    v - cfg.v_max,
                ));
            }
        }
    }
    for (i, &a) in traj.accel.iter().enumerate() {
        if a.abs() > cfg.a_max + tol || !a.is_finite() {
            out.push(Violation::at(
                ViolationKind::AccelBound,
                i,
                a.abs() - cfg.a_max,
            ));
        }
    }
    for (i, r) in traj
        .mobility_residuals(cfg.slot_len())
        .into_iter()
        .enumerate()
    {
        if !(r <= tol) {
            out.push(Violation::at(ViolationKind::Mobility, i, r));
        }
    }
    out
}

pub fn check_powers(pow: &PowerSchedule, cfg: &ScenarioConfig) -> Vec<Violation> {
    let n = cfg.slots;
    let tol = cfg.tolerances.feasibility_tol;
    let mut out = Vec::new();
    if pow.p_b.len() != n || pow.p_u.len() != n {
        out.push(Violation {
            kind: ViolationKind::Length,
            slot: None,
            amount: (pow.p_b.len().max(pow.p_u.len()) as f64 - n as f64).abs(),
        });
        return out;
    }
    for i in 0..n {
        for (p, kind_max, max) in [
            (pow.p_b[i], ViolationKind::BsPeakPower, cfg.p_b_max),
            (pow.p_u[i], ViolationKind::UavPeakPower, cfg.p_u_max),
        ] {
            if p < -tol || !p.is_finite() {
                out.push(Violation::at(ViolationKind::NegativePower, i, -p));
            }
            if p > max + tol {
                out.push(Violation::at(kind_max, i, p - max));
            }
        }
    }
    if pow.p_u[0].abs() > tol {
        out.push(Violation::at(
            ViolationKind::UavFirstSlotPower,
            0,
            pow.p_u[0],
        ));
    }
    if pow.p_b[n - 1].abs() > tol {
        out.push(Violation::at(
            ViolationKind::BsLastSlotPower,
            n - 1,
            pow.p_b[n - 1],
        ));
    }
    let transmit_slots = (n - 1) as f64;
    let mean_b = pow.p_b[cfg.bs_slots()].iter().sum::<f64>() / transmit_slots;
    let mean_u = pow.p_u[cfg.uav_slots()].iter().sum::<f64>() / transmit_slots;
    if mean_b > cfg.p_b_avg + tol {
        out.push(Violation {
            kind: ViolationKind::BsAveragePower,
            slot: None,
            amount: mean_b - cfg.p_b_avg,
        });
    }
    if mean_u > cfg.p_u_avg + tol {
        out.push(Violation {
            kind: ViolationKind::UavAveragePower,
            slot: None,
            amount: mean_u - cfg.p_u_avg,
        });
    }
    out
}

/// Every invariant of the pair, including information causality on the
/// exact (non-linearized) rates.
pub fn check_solution(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
) -> Vec<Violation> {
    let mut out = check_trajectory(traj, cfg);
    out.extend(check_powers(pow, cfg));
    if !out.is_empty() {
        return out;
    }
    let (r_b, r_u) = legit_rates(traj, pow, cfg);
    let icc = icc_check(&r_b, &r_u, cfg.tolerances.feasibility_tol).expect("lengths checked above");
    if !icc.feasible {
        out.push(Violation {
            kind: ViolationKind::InformationCausality,
            slot: icc.worst_slot,
            amount: icc.max_violation,
        });
    }
    out
}

/// Line-of-sight gain `β₀ / (‖uav − target‖² + H²)`.
pub fn channel_gain(uav_pos: &Point, target_pos: &Point, cfg: &ScenarioConfig) -> f64 {
    let h2 = cfg.altitude * cfg.altitude;
    cfg.beta0 / ((uav_pos - target_pos).norm_squared() + h2)
}

/// Shannon rate `log₂(1 + p·g/σ²)` in bits/s/Hz.
pub fn link_rate(power: f64, gain: f64, noise: f64) -> Result<f64> {
    if power < 0.0 || power.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "transmit power must be >= 0, got {power}"
        )));
    }
    Ok((power * gain / noise).ln_1p() / std::f64::consts::LN_2)
}

/// Fixed-wing propulsion power
/// `α v³ + β/v + β a²/(v g²) + Δk/ρ` in watts.
pub fn propulsion_power(
    speed: f64,
    accel: f64,
    kinetic_delta: f64,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    if !(speed > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "propulsion power is singular at speed {speed}"
        )));
    }
    let g2 = cfg.gravity * cfg.gravity;
    Ok(cfg.alpha_u * speed.powi(3)
        + cfg.beta_u / speed
        + cfg.beta_u * accel * accel / (speed * g2)
        + kinetic_delta / cfg.slot_len())
}

/// `½ m (v_to² − v_from²)`.
pub fn kinetic_delta(v_from: f64, v_to: f64, cfg: &ScenarioConfig) -> f64 {
    0.5 * cfg.mass * (v_to * v_to - v_from * v_from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccVerdict {
    pub feasible: bool,
    /// Largest `Σ r_u − Σ r_b` excess over all prefixes (0 when none).
    pub max_violation: f64,
    /// 1-based slot of the largest violation.
    pub worst_slot: Option<usize>,
}

/// Information causality: nothing is forwarded in slot 1, and for every
/// `n ≥ 2` the data forwarded in slots `2..=n` never exceeds the data
/// received in slots `1..=n-1`.
pub fn icc_check(rates_b: &[f64], rates_u: &[f64], tol: f64) -> Result<IccVerdict> {
    if rates_b.len() != rates_u.len() {
        return Err(Error::LengthMismatch {
            what: "icc rate vectors",
            expected: rates_b.len(),
            got: rates_u.len(),
        });
    }
    let mut max_violation = 0.0_f64;
    let mut worst_slot = None;
    if let Some(&first) = rates_u.first() {
        if first.abs() > 0.0 {
            max_violation = first.abs();
            worst_slot = Some(1);
        }
    }
    let mut received = 0.0;
    let mut forwarded = 0.0;
    for n in 1..rates_u.len() {
        received += rates_b[n - 1];
        forwarded += rates_u[n];
        let excess = forwarded - received;
        if excess > max_violation {
            max_violation = excess;
            worst_slot = Some(n + 1);
        }
    }
    Ok(IccVerdict {
        feasible: max_violation <= tol,
        max_violation,
        worst_slot,
    })
}

/// Exact BS→UAV and UAV→user rates for every slot.
pub fn legit_rates(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.slots;
    let mut r_b = vec![0.0; n];
    let mut r_u = vec![0.0; n];
    for i in cfg.bs_slots() {
        let g = channel_gain(&traj.pos[i], &cfg.bs_pos, cfg);
        r_b[i] = rate_unchecked(pow.p_b[i], g, cfg.noise_power);
    }
    for i in cfg.uav_slots() {
        let g = channel_gain(&traj.pos[i], &cfg.user_pos, cfg);
        r_u[i] = rate_unchecked(pow.p_u[i], g, cfg.noise_power);
    }
    (r_b, r_u)
}

pub(crate) fn rate_unchecked(power: f64, gain: f64, noise: f64) -> f64 {
    (power.max(0.0) * gain / noise).ln_1p() / std::f64::consts::LN_2
}

/// Per-slot propulsion power for slots `2..=N`; index 0 is left at zero.
///
/// Slot 1's speed is treated as equal to slot 2's, so the kinetic term of
/// slot 2 is zero.
pub fn propulsion_profile(traj: &Trajectory, cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    let n = cfg.slots;
    let mut e_p = vec![0.0; n];
    for i in cfg.uav_slots() {
        let dk = if i == 1 {
            0.0
        } else {
            kinetic_delta(traj.speed[i - 1], traj.speed[i], cfg)
        };
        e_p[i] = propulsion_power(traj.speed[i], traj.accel[i], dk, cfg)?;
    }
    Ok(e_p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub r_b: Vec<f64>,
    pub r_u: Vec<f64>,
    /// Worst-case eavesdropping rate, `r_a[adversary][slot]`.
    pub r_a: Vec<Vec<f64>>,
    /// `max_a r_a[a][n]` per slot.
    pub r_a_worst: Vec<f64>,
    /// Unclamped secrecy rate `r_u − max_a r_a` (zero in slot 1).
    pub secrecy: Vec<f64>,
    /// Propulsion power per slot in watts (zero in slot 1).
    pub e_p: Vec<f64>,
    /// `Σ r[n]` over slots 2..N in bits/s/Hz.
    pub sum_secrecy: f64,
    pub sum_secrecy_clamped: f64,
    /// `Σ e_p[n]` over slots 2..N in watts.
    pub sum_power: f64,
    /// `ρ·B·Σ r[n]` in bits.
    pub total_bits: f64,
    /// `ρ·Σ e_p[n]` in joules.
    pub total_energy_j: f64,
    /// Energy efficiency in kbits/J.
    pub ee_kbits_per_j: f64,
    /// Same with per-slot secrecy clamped at zero.
    pub ee_clamped_kbits_per_j: f64,
}

impl SolutionReport {
    /// `Σ r / Σ e_p`, the ratio the optimizer works with (bits/s/Hz per W).
    pub fn ratio(&self) -> f64 {
        self.sum_secrecy / self.sum_power
    }
}

/// Rates, worst-case secrecy and propulsion energy of a candidate solution.
pub fn evaluate_solution(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
) -> Result<SolutionReport> {
    let mut violations = check_trajectory(traj, cfg);
    violations.extend(check_powers(pow, cfg));
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    Ok(evaluate_with(traj, pow, cfg, |adv, pos| {
        robust::worstcase_adv_gain(pos, adv, cfg)
    }))
}

/// Shared evaluation with a pluggable eavesdropper gain model.
pub(crate) fn evaluate_with(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    mut adv_gain: impl FnMut(&AdversaryRegion, &Point) -> f64,
) -> SolutionReport {
    let n = cfg.slots;
    let (r_b, r_u) = legit_rates(traj, pow, cfg);
    let mut r_a = vec![vec![0.0; n]; cfg.adversaries.len()];
    for (a, adv) in cfg.adversaries.iter().enumerate() {
        for i in cfg.uav_slots() {
            let g = adv_gain(adv, &traj.pos[i]);
            r_a[a][i] = rate_unchecked(pow.p_u[i], g, cfg.noise_power);
        }
    }
    let r_a_worst: Vec<f64> = (0..n)
        .map(|i| r_a.iter().map(|row| row[i]).fold(0.0, f64::max))
        .collect();
    let mut secrecy = vec![0.0; n];
    for i in cfg.uav_slots() {
        secrecy[i] = r_u[i] - r_a_worst[i];
    }
    let e_p = propulsion_profile(traj, cfg).expect("speeds checked positive");
    let sum_secrecy: f64 = secrecy[cfg.uav_slots()].iter().sum();
    let sum_secrecy_clamped: f64 = secrecy[cfg.uav_slots()].iter().map(|r| r.max(0.0)).sum();
    let sum_power: f64 = e_p[cfg.uav_slots()].iter().sum();
    let rho = cfg.slot_len();
    let total_bits = rho * cfg.bandwidth * sum_secrecy;
    let total_energy_j = rho * sum_power;
    SolutionReport {
        ee_kbits_per_j: total_bits / total_energy_j / 1e3,
        ee_clamped_kbits_per_j: rho * cfg.bandwidth * sum_secrecy_clamped / total_energy_j / 1e3,
        r_b,
        r_u,
        r_a,
        r_a_worst,
        secrecy,
        e_p,
        sum_secrecy,
        sum_secrecy_clamped,
        sum_power,
        total_bits,
        total_energy_j,
    }
}

/// Lower the UAV powers just enough that the exact rates satisfy information
/// causality, never raising any rate above `target_u` (when given).
///
/// Returns the repaired UAV power vector.
pub(crate) fn repair_icc(
    traj: &Trajectory,
    pow: &PowerSchedule,
    cfg: &ScenarioConfig,
    target_u: Option<&[f64]>,
) -> Vec<f64> {
    let (r_b, r_u) = legit_rates(traj, pow, cfg);
    let mut p_u = pow.p_u.clone();
    p_u[0] = 0.0;
    let mut received = 0.0;
    let mut forwarded = 0.0;
    for i in cfg.uav_slots() {
        received += r_b[i - 1];
        let mut want = r_u[i];
        if let Some(t) = target_u {
            want = want.min(t[i].max(0.0));
        }
        // keep a hair of headroom so the exact check never trips on rounding
        let room = (received - forwarded) * (1.0 - 1e-12);
        let rate = want.min(room).max(0.0);
        if rate < r_u[i] {
            let g = channel_gain(&traj.pos[i], &cfg.user_pos, cfg);
            p_u[i] = (rate * std::f64::consts::LN_2).exp_m1() * cfg.noise_power / g;
            p_u[i] = p_u[i].clamp(0.0, pow.p_u[i]);
        }
        forwarded += rate_unchecked(
            p_u[i],
            channel_gain(&traj.pos[i], &cfg.user_pos, cfg),
            cfg.noise_power,
        );
    }
    p_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn default_config_is_valid() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.slots, 50);
        assert_relative_eq!(c.slot_len(), 2.0);
        assert_eq!(c.adversaries.len(), 2);
    }

    #[test]
    fn gain_examples() {
        let c = cfg();
        let o = Point::new(0.0, 0.0);
        assert_relative_eq!(channel_gain(&o, &o, &c), 1e-7, max_relative = 1e-15);
        assert_relative_eq!(
            channel_gain(&Point::new(100.0, 0.0), &o, &c),
            5e-8,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            channel_gain(&Point::new(200.0, 0.0), &o, &c),
            2e-8,
            max_relative = 1e-15
        );
    }

    #[test]
    fn rate_examples() {
        assert_eq!(link_rate(0.0, 1e-7, 1e-13).unwrap(), 0.0);
        assert_relative_eq!(
            link_rate(1.0, 1e-7, 1e-13).unwrap(),
            (1.0f64 + 1e6).log2(),
            max_relative = 1e-14
        );
        assert!((link_rate(1.0, 1e-7, 1e-13).unwrap() - 19.9316).abs() < 1e-4);
        assert_relative_eq!(
            link_rate(1.0, 1e-13, 1e-13).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert!(link_rate(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn propulsion_examples() {
        let c = cfg();
        let p = propulsion_power(30.0, 0.0, 0.0, &c).unwrap();
        // 9.26e-4 * 27000 + 2250 / 30
        assert_relative_eq!(p, 25.002 + 75.0, max_relative = 1e-12);
        let p = propulsion_power(30.0, 9.8, 0.0, &c).unwrap();
        assert_relative_eq!(p, 175.002, max_relative = 1e-12);
        assert!(propulsion_power(0.0, 0.0, 0.0, &c).is_err());
        assert!(propulsion_power(-3.0, 0.0, 0.0, &c).is_err());
        // kinetic term enters divided by the slot length
        let p = propulsion_power(30.0, 0.0, 10.0, &c).unwrap();
        assert_relative_eq!(p, 100.002 + 5.0, max_relative = 1e-12);
    }

    #[test]
    fn icc_examples() {
        let ok = icc_check(&[2.0, 2.0, 0.0], &[0.0, 1.0, 3.0], 0.0).unwrap();
        assert!(ok.feasible);
        let bad = icc_check(&[2.0, 2.0, 0.0], &[0.0, 3.0, 0.0], 1e-9).unwrap();
        assert!(!bad.feasible);
        assert_eq!(bad.worst_slot, Some(2));
        assert_relative_eq!(bad.max_violation, 1.0);
        let none = icc_check(&[0.5, 3.0, 0.0], &[0.0, 0.0, 0.0], 0.0).unwrap();
        assert!(none.feasible);
        let first = icc_check(&[5.0, 5.0, 0.0], &[0.1, 0.0, 0.0], 1e-9).unwrap();
        assert!(!first.feasible);
        assert_eq!(first.worst_slot, Some(1));
        assert!(icc_check(&[1.0], &[0.0, 0.0], 0.0).is_err());
    }

    fn hover_solution(c: &ScenarioConfig, p_u: f64) -> (Trajectory, PowerSchedule) {
        // straight line at 30 m/s, zero acceleration
        let n = c.slots;
        let step = 30.0 * c.slot_len();
        let pos = (0..n)
            .map(|i| Point::new(i as f64 * step - 700.0, 0.0))
            .collect();
        let traj = Trajectory {
            pos,
            speed: vec![30.0; n],
            accel: vec![0.0; n],
        };
        let mut p_b = vec![c.p_b_avg; n];
        p_b[n - 1] = 0.0;
        let mut pu = vec![p_u; n];
        pu[0] = 0.0;
        (traj, PowerSchedule { p_b, p_u: pu })
    }

    #[test]
    fn zero_uav_power_gives_zero_ee() {
        let c = cfg();
        let (traj, pow) = hover_solution(&c, 0.0);
        let rep = evaluate_solution(&traj, &pow, &c).unwrap();
        assert!(rep.r_u.iter().all(|&r| r == 0.0));
        assert!(rep.r_a.iter().flatten().all(|&r| r == 0.0));
        assert_eq!(rep.sum_secrecy, 0.0);
        assert_eq!(rep.ee_kbits_per_j, 0.0);
        assert_relative_eq!(rep.sum_power, 49.0 * 100.002, max_relative = 1e-12);
    }

    #[test]
    fn report_totals_match_per_slot_sums() {
        let c = cfg();
        let (traj, pow) = hover_solution(&c, 0.3);
        let rep = evaluate_solution(&traj, &pow, &c).unwrap();
        let s: f64 = (1..c.slots).map(|i| rep.r_u[i] - rep.r_a_worst[i]).sum();
        assert_relative_eq!(rep.sum_secrecy, s, max_relative = 1e-12);
        let e: f64 = rep.e_p.iter().sum();
        assert_relative_eq!(rep.sum_power, e, max_relative = 1e-12);
        assert_relative_eq!(
            rep.ee_kbits_per_j,
            rep.total_bits / rep.total_energy_j / 1e3,
            max_relative = 1e-12
        );
        // secrecy may go negative; clamped figure never below unclamped
        assert!(rep.ee_clamped_kbits_per_j >= rep.ee_kbits_per_j);
    }

    #[test]
    fn evaluate_rejects_invariant_violations() {
        let c = cfg();
        let (mut traj, pow) = hover_solution(&c, 0.3);
        traj.speed[7] = 0.1;
        match evaluate_solution(&traj, &pow, &c) {
            Err(Error::Infeasible(v)) => {
                assert!(v
                    .iter()
                    .any(|v| v.kind == ViolationKind::SpeedBelowMin && v.slot == Some(8)));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn power_checks_flag_endpoint_slots_and_averages() {
        let c = cfg();
        let (_, mut pow) = hover_solution(&c, 0.3);
        pow.p_u[0] = 0.2;
        pow.p_b[c.slots - 1] = 1.0;
        let kinds: Vec<_> = check_powers(&pow, &c).into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::UavFirstSlotPower));
        assert!(kinds.contains(&ViolationKind::BsLastSlotPower));
        let (_, mut pow) = hover_solution(&c, 0.9);
        pow.p_b[3] = 11.0;
        let kinds: Vec<_> = check_powers(&pow, &c).into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::UavAveragePower));
        assert!(kinds.contains(&ViolationKind::BsPeakPower));
    }

    #[test]
    fn repair_icc_makes_exact_rates_causal() {
        let c = cfg();
        let (traj, mut pow) = hover_solution(&c, 0.5);
        // starve the BS so forwarding outruns reception
        for p in pow.p_b.iter_mut() {
            *p *= 1e-6;
        }
        assert!(!check_solution(&traj, &pow, &c).is_empty());
        pow.p_u = repair_icc(&traj, &pow, &c, None);
        assert!(check_solution(&traj, &pow, &c).is_empty());
    }

    #[test]
    fn validation_names_fields() {
        let mut c = cfg();
        c.altitude = -5.0;
        match c.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "altitude_H"),
            other => panic!("{other:?}"),
        }
        let mut c = cfg();
        c.slots = 2;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.p_u_avg = 2.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.v_min = 0.0;
        assert!(c.validate().is_err());
    }
}

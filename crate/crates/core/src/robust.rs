//! Worst-case eavesdropper modelling over circular location-uncertainty
//! disks, the S-procedure matrix that certifies a distance bound over a whole
//! disk, and sampling oracles for both.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scenario::{channel_gain, AdversaryRegion, Point, ScenarioConfig};

/// Smallest squared 3-D distance from the UAV to any point of the disk:
/// `((d − R)⁺)² + H²`.
pub fn worstcase_dist_sq(uav_pos: &Point, adv: &AdversaryRegion, cfg: &ScenarioConfig) -> f64 {
    let d = (uav_pos - adv.est_pos).norm();
    let gap = (d - adv.radius).max(0.0);
    gap * gap + cfg.altitude * cfg.altitude
}

/// Largest channel gain an eavesdropper anywhere in the disk can see.
///
/// Inside the disk's ground projection the eavesdropper may sit right under
/// the UAV, giving `β₀/H²`; outside, it sits on the rim point nearest the UAV.
pub fn worstcase_adv_gain(uav_pos: &Point, adv: &AdversaryRegion, cfg: &ScenarioConfig) -> f64 {
    cfg.beta0 / worstcase_dist_sq(uav_pos, adv, cfg)
}

/// Deterministic point set covering the disk: its centre, an evenly spaced
/// ring on the boundary and uniformly drawn interior points.
pub fn disk_samples(adv: &AdversaryRegion, n_samples: usize, seed: u64) -> Vec<Point> {
    let n_samples = n_samples.max(1);
    let mut pts = Vec::with_capacity(n_samples);
    pts.push(adv.est_pos);
    if adv.radius == 0.0 || n_samples == 1 {
        return pts;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = ((n_samples - 1) / 4).max(1);
    let phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    for k in 0..ring {
        let th = phase + std::f64::consts::TAU * k as f64 / ring as f64;
        pts.push(adv.est_pos + adv.radius * Point::new(th.cos(), th.sin()));
    }
    while pts.len() < n_samples {
        let r = adv.radius * rng.gen::<f64>().sqrt();
        let th = rng.gen::<f64>() * std::f64::consts::TAU;
        pts.push(adv.est_pos + r * Point::new(th.cos(), th.sin()));
    }
    pts
}

/// Brute-force counterpart of [`worstcase_adv_gain`]: the best gain over a
/// finite sample of the disk. Never exceeds the closed form.
pub fn sample_adv_gain_max(
    uav_pos: &Point,
    adv: &AdversaryRegion,
    cfg: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> f64 {
    disk_samples(adv, n_samples, seed)
        .iter()
        .map(|p| channel_gain(uav_pos, p, cfg))
        .fold(0.0, f64::max)
}

/// S-procedure matrix
///
/// ```text
/// ┌ 1+ε    0    xₐ−x ┐
/// │  0    1+ε   yₐ−y │
/// └ xₐ−x  yₐ−y   m   ┘   m = (x−xₐ)² + (y−yₐ)² + H² − z − R²ε
/// ```
///
/// It is PSD iff every point of the disk is at squared 3-D distance at least
/// `z` from the UAV (for `R > 0`; with `ε = 0` the bound must hold on the
/// whole plane).
pub fn build_sproc_lmi(
    uav_pos: &Point,
    adv: &AdversaryRegion,
    z: f64,
    eps: f64,
    cfg: &ScenarioConfig,
) -> Result<Matrix3<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "S-procedure multiplier must be >= 0, got {eps}"
        )));
    }
    let dx = adv.est_pos.x - uav_pos.x;
    let dy = adv.est_pos.y - uav_pos.y;
    let m = dx * dx + dy * dy + cfg.altitude * cfg.altitude - z - adv.radius * adv.radius * eps;
    Ok(Matrix3::new(
        1.0 + eps,
        0.0,
        dx,
        0.0,
        1.0 + eps,
        dy,
        dx,
        dy,
        m,
    ))
}

pub fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// PSD test on the Jacobi-scaled matrix `D^{-1/2} M D^{-1/2}` (with `D` the
/// positive diagonal entries, 1 elsewhere): `λ_min ≥ −psd_tol`. The scaling
/// is a congruence, so it preserves PSD-ness while making the tolerance
/// independent of the units of each row.
pub fn is_psd(m: &Matrix3<f64>, psd_tol: f64) -> bool {
    let d = m
        .diagonal()
        .map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
    let scaled = Matrix3::from_fn(|i, j| m[(i, j)] * d[i] * d[j]);
    min_eigenvalue(&scaled) >= -psd_tol
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprocCertificate {
    pub certified: bool,
    pub violations: usize,
    /// Smallest sampled `dist² − z`, normalised by `max(1, z)`.
    pub worst_margin: f64,
}

/// Sampling check of the distance bound the S-procedure matrix claims:
/// every sampled disk point must satisfy `dist² ≥ z − psd_tol·max(1, z)`.
pub fn certify_sproc(
    uav_pos: &Point,
    adv: &AdversaryRegion,
    z: f64,
    cfg: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
) -> SprocCertificate {
    let h2 = cfg.altitude * cfg.altitude;
    let scale = z.abs().max(1.0);
    let slack = cfg.tolerances.psd_tol * scale;
    let mut violations = 0;
    let mut worst_margin = f64::INFINITY;
    for p in disk_samples(adv, n_samples, seed) {
        let d2 = (uav_pos - p).norm_squared() + h2;
        worst_margin = worst_margin.min((d2 - z) / scale);
        if d2 < z - slack {
            violations += 1;
        }
    }
    SprocCertificate {
        certified: violations == 0,
        violations,
        worst_margin,
    }
}

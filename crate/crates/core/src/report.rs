//! Config ingestion and result export.
//!
//! Every number written to CSV or JSON is rounded to 9 significant digits
//! so that re-exporting the same solution yields byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{disk_clearance, evaluate_sampled, max_residual, AlgorithmTrace};
use crate::scenario::{
    evaluate_solution, AdversaryRegion, Point, PowerSchedule, ScenarioConfig, SolutionReport,
    ToleranceSet, Trajectory,
};

/// Seed used for sampled evaluation unless overridden.
pub const DEFAULT_SEED: u64 = 20_240_601;
/// Disk samples per adversary in the sampled worst-case summary.
pub const SUMMARY_SAMPLES: usize = 10_000;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialTolerances {
    feasibility_tol: Option<f64>,
    dinkelbach_tol: Option<f64>,
    sca_tol: Option<f64>,
    psd_tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct PartialConfig {
    bs_pos: Option<Point>,
    user_pos: Option<Point>,
    adversaries: Option<Vec<AdversaryRegion>>,
    altitude_H: Option<f64>,
    horizon_T: Option<f64>,
    slots_N: Option<usize>,
    beta0: Option<f64>,
    noise_power: Option<f64>,
    p_b_max: Option<f64>,
    p_b_avg: Option<f64>,
    p_u_max: Option<f64>,
    p_u_avg: Option<f64>,
    v_min: Option<f64>,
    v_max: Option<f64>,
    a_max: Option<f64>,
    alpha_u: Option<f64>,
    beta_u: Option<f64>,
    mass_m: Option<f64>,
    gravity_g: Option<f64>,
    bandwidth_B: Option<f64>,
    tolerances: Option<PartialTolerances>,
}

macro_rules! merge {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

fn merge_tolerances(dst: &mut ToleranceSet, src: PartialTolerances) {
    merge!(dst.feasibility_tol, src.feasibility_tol);
    merge!(dst.dinkelbach_tol, src.dinkelbach_tol);
    merge!(dst.sca_tol, src.sca_tol);
    merge!(dst.psd_tol, src.psd_tol);
}

/// Parse a JSON config. Missing keys take the bundled defaults, unknown keys
/// are rejected, and the result is validated.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let p: PartialConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut c = ScenarioConfig::default();
    merge!(c.bs_pos, p.bs_pos);
    merge!(c.user_pos, p.user_pos);
    merge!(c.adversaries, p.adversaries);
    merge!(c.altitude, p.altitude_H);
    merge!(c.horizon, p.horizon_T);
    merge!(c.slots, p.slots_N);
    merge!(c.beta0, p.beta0);
    merge!(c.noise_power, p.noise_power);
    merge!(c.p_b_max, p.p_b_max);
    merge!(c.p_b_avg, p.p_b_avg);
    merge!(c.p_u_max, p.p_u_max);
    merge!(c.p_u_avg, p.p_u_avg);
    merge!(c.v_min, p.v_min);
    merge!(c.v_max, p.v_max);
    merge!(c.a_max, p.a_max);
    merge!(c.alpha_u, p.alpha_u);
    merge!(c.beta_u, p.beta_u);
    merge!(c.mass, p.mass_m);
    merge!(c.gravity, p.gravity_g);
    merge!(c.bandwidth, p.bandwidth_B);
    if let Some(t) = p.tolerances {
        merge_tolerances(&mut c.tolerances, t);
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Canonical JSON form of a config (every field present, trailing newline).
pub fn dump_config(cfg: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// SHA-256 of the canonical dump, hex encoded.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(dump_config(cfg).as_bytes()))
}

/// Round to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        fmt9(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            what: path.display().to_string(),
            reason: format!("{other:?}"),
        },
    }
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Positions and speeds at stored precision, with accelerations recomputed
/// so that the rounded values satisfy the mobility relation.
pub fn stored_trajectory(traj: &Trajectory, cfg: &ScenarioConfig) -> Trajectory {
    let rho = cfg.slot_len();
    let pos: Vec<Point> = traj
        .pos
        .iter()
        .map(|p| Point::new(round9(p.x), round9(p.y)))
        .collect();
    let speed: Vec<f64> = traj.speed.iter().map(|&v| round9(v)).collect();
    let mut accel: Vec<f64> = traj.accel.iter().map(|&a| round9(a)).collect();
    for i in 0..pos.len().saturating_sub(1) {
        let seg = (pos[i + 1] - pos[i]).norm();
        accel[i] = round9(2.0 * (seg - rho * speed[i]) / (rho * rho));
    }
    Trajectory { pos, speed, accel }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSummary {
    pub seed: u64,
    pub samples_per_adversary: usize,
    pub sum_secrecy: f64,
    pub total_bits: f64,
    pub ee_kbits_per_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub slots: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub iterations: usize,
    pub ee_kbits_per_j: f64,
    pub ee_clamped_kbits_per_j: f64,
    /// Σ r over the UAV's transmit slots, bits/s/Hz.
    pub sum_secrecy: f64,
    pub sum_secrecy_clamped: f64,
    /// Σ propulsion power over the UAV's transmit slots, watts.
    pub sum_power: f64,
    pub total_bits: f64,
    pub total_energy_j: f64,
    pub max_residual: f64,
    /// Smallest distance from a transmitting position to an adversary centre.
    pub clearance_m: f64,
    pub sampled: SampledSummary,
}

impl Summary {
    fn new(
        cfg: &ScenarioConfig,
        rep: &SolutionReport,
        traj: &Trajectory,
        pow: &PowerSchedule,
        trace: Option<&AlgorithmTrace>,
        seed: u64,
    ) -> Result<Self> {
        let sampled = evaluate_sampled(traj, pow, cfg, SUMMARY_SAMPLES, seed)?;
        Ok(Self {
            config_hash: config_hash(cfg),
            slots: cfg.slots,
            converged: trace.is_none_or(|t| t.converged),
            failure: trace.and_then(|t| t.failure.clone()),
            iterations: trace.map_or(0, |t| t.records.len().saturating_sub(1)),
            ee_kbits_per_j: round9(rep.ee_kbits_per_j),
            ee_clamped_kbits_per_j: round9(rep.ee_clamped_kbits_per_j),
            sum_secrecy: round9(rep.sum_secrecy),
            sum_secrecy_clamped: round9(rep.sum_secrecy_clamped),
            sum_power: round9(rep.sum_power),
            total_bits: round9(rep.total_bits),
            total_energy_j: round9(rep.total_energy_j),
            max_residual: round9(max_residual(traj, pow, cfg)),
            clearance_m: round9(disk_clearance(traj, cfg)),
            sampled: SampledSummary {
                seed,
                samples_per_adversary: SUMMARY_SAMPLES,
                sum_secrecy: round9(sampled.sum_secrecy),
                total_bits: round9(sampled.total_bits),
                ee_kbits_per_j: round9(sampled.ee_kbits_per_j),
            },
        })
    }
}

/// Write trajectory.csv, powers.csv, rates.csv, trace.csv, timing.csv,
/// summary.json and config.json into `dir` (created if missing).
///
/// Timing is kept out of trace.csv so that every other file is a pure
/// function of the solution and config.
pub fn export_results(
    dir: impl AsRef<Path>,
    cfg: &ScenarioConfig,
    traj: &Trajectory,
    pow: &PowerSchedule,
    trace: Option<&AlgorithmTrace>,
    seed: u64,
) -> Result<Summary> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rep = evaluate_solution(traj, pow, cfg)?;
    let n = cfg.slots;
    let s = |x: f64| fmt9(x);

    let stored = stored_trajectory(traj, cfg);
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                s(stored.pos[i].x),
                s(stored.pos[i].y),
                s(stored.speed[i]),
                s(stored.accel[i]),
            ]
        })
        .collect();
    write_rows(
        &dir.join("trajectory.csv"),
        &strs(&["n", "x", "y", "v", "a"]),
        &rows,
    )?;

    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| vec![(i + 1).to_string(), s(pow.p_b[i]), s(pow.p_u[i])])
        .collect();
    write_rows(&dir.join("powers.csv"), &strs(&["n", "p_b", "p_u"]), &rows)?;

    let mut header = strs(&["n", "r_b", "r_u"]);
    header.extend((1..=cfg.adversaries.len()).map(|a| format!("r_a{a}")));
    header.push("r".into());
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut r = vec![(i + 1).to_string(), s(rep.r_b[i]), s(rep.r_u[i])];
            r.extend(rep.r_a.iter().map(|row| s(row[i])));
            r.push(s(rep.secrecy[i]));
            r
        })
        .collect();
    write_rows(&dir.join("rates.csv"), &header, &rows)?;

    let records = trace.map(|t| t.records.as_slice()).unwrap_or(&[]);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                s(r.ee_kbits_per_j),
                s(r.lambda),
                s(r.energy_j),
                s(r.secrecy_bits),
                r.block1_inner.to_string(),
                r.block2_inner.to_string(),
                s(r.max_residual),
            ]
        })
        .collect();
    write_rows(
        &dir.join("trace.csv"),
        &strs(&[
            "iter",
            "ee_kbits_per_j",
            "lambda",
            "energy_j",
            "secrecy_bits",
            "block1_inner",
            "block2_inner",
            "max_residual",
        ]),
        &rows,
    )?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.iter.to_string(), format!("{:.3}", r.wall_time_s)])
        .collect();
    write_rows(
        &dir.join("timing.csv"),
        &strs(&["iter", "wall_time_s"]),
        &rows,
    )?;

    let summary = Summary::new(cfg, &rep, traj, pow, trace, seed)?;
    let mut js = serde_json::to_string_pretty(&summary).expect("summary serializes");
    js.push('\n');
    write_file(&dir.join("summary.json"), &js)?;
    write_file(&dir.join("config.json"), &dump_config(cfg))?;
    Ok(summary)
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let malformed = |reason: String| Error::Malformed {
        what: path.display().to_string(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let got: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(malformed(format!(
            "expected header {header:?}, got {got:?}"
        )));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("row {}: {e}", k + 1)))?;
        if row[0] != (k + 1) as f64 {
            return Err(malformed(format!("row {} has slot {}", k + 1, row[0])));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Read trajectory.csv and powers.csv back from an export directory.
pub fn load_solution(dir: impl AsRef<Path>) -> Result<(Trajectory, PowerSchedule)> {
    let dir = dir.as_ref();
    let t = read_table(&dir.join("trajectory.csv"), &["n", "x", "y", "v", "a"])?;
    let p = read_table(&dir.join("powers.csv"), &["n", "p_b", "p_u"])?;
    let traj = Trajectory {
        pos: t.iter().map(|r| Point::new(r[1], r[2])).collect(),
        speed: t.iter().map(|r| r[3]).collect(),
        accel: t.iter().map(|r| r[4]).collect(),
    };
    let pow = PowerSchedule {
        p_b: p.iter().map(|r| r[1]).collect(),
        p_u: p.iter().map(|r| r[2]).collect(),
    };
    Ok((traj, pow))
}

/// Directory holding a stored solution, given either the directory or any
/// file inside it.
pub fn solution_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::init_solution;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_config("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn partial_tolerances_merge_fieldwise() {
        let c = parse_config(r#"{"tolerances": {"sca_tol": 0.01}}"#).unwrap();
        assert_eq!(c.tolerances.sca_tol, 0.01);
        assert_eq!(
            c.tolerances.psd_tol,
            ScenarioConfig::default().tolerances.psd_tol
        );
    }

    #[test]
    fn negative_altitude_names_field() {
        let e = parse_config(r#"{"altitude_H": -5}"#).unwrap_err();
        assert!(e.to_string().contains("altitude_H"), "{e}");
    }

    #[test]
    fn unknown_key_reports_position() {
        match parse_config("{\n  \"slots_N\": 10,\n  \"bogus\": 1\n}") {
            Err(Error::ConfigParse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_round_trips() {
        let c = ScenarioConfig::default();
        let again = parse_config(&dump_config(&c)).unwrap();
        assert_eq!(again, c);
        assert_eq!(dump_config(&again), dump_config(&c));
        assert_eq!(config_hash(&c).len(), 64);
    }

    #[test]
    fn round9_keeps_nine_digits() {
        assert_eq!(round9(1.234_567_891_23), 1.234_567_89);
        assert_eq!(round9(0.0), 0.0);
        assert_eq!(fmt9(650.0), "6.50000000e2");
    }

    #[test]
    fn stored_trajectory_keeps_mobility() {
        let cfg = ScenarioConfig::default();
        let (t, _) = init_solution(&cfg).unwrap();
        let s = stored_trajectory(&t, &cfg);
        let worst = s
            .mobility_residuals(cfg.slot_len())
            .into_iter()
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }
}

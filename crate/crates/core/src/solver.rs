//! Solver-agnostic conic programs.
//!
//! A [`ConicProgram`] maximizes an affine objective over variables subject to
//! affine expressions lying in linear, second-order, exponential or PSD
//! cones. [`solve`] hands it to the Clarabel interior-point solver and maps
//! the result back, including per-constraint dual multipliers.
//!
//! Dual sign convention: for `maximize cᵀx` subject to `gᵢ(x) ∈ Kᵢ`, the
//! returned multipliers `zᵢ ∈ Kᵢ*` satisfy `c + Σ ∇gᵢᵀ zᵢ = 0`. For a `≥ 0`
//! row the multiplier is nonnegative; `≤ 0` rows are stored as `−expr ≥ 0`.

use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Neg, Sub};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Σ coef·x[idx] + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize) -> Self {
        Self {
            terms: vec![(idx, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(mut self, idx: usize, coef: f64) -> Self {
        self.terms.push((idx, coef));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        self.terms.push((idx, coef));
    }

    pub fn add_scaled(&mut self, other: &AffineExpr, s: f64) {
        self.terms
            .extend(other.terms.iter().map(|&(i, c)| (i, c * s)));
        self.constant += other.constant * s;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    /// `1 + |constant| + Σ |coef·x|`, used to normalise residuals.
    fn magnitude(&self, x: &[f64]) -> f64 {
        1.0 + self.constant.abs()
            + self
                .terms
                .iter()
                .map(|&(i, c)| (c * x[i]).abs())
                .sum::<f64>()
    }

    /// Same expression with duplicate indices merged and zeros dropped.
    pub fn compact(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match out.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        Self {
            terms: out,
            constant: self.constant,
        }
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(mut self, rhs: AffineExpr) -> AffineExpr {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(mut self, s: f64) -> AffineExpr {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1.0
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &(i, c) in &self.terms {
            if !first {
                f.write_char(' ')?;
            }
            write!(f, "{c:+e}*x{i}")?;
            first = false;
        }
        if first || self.constant != 0.0 {
            if !first {
                f.write_char(' ')?;
            }
            write!(f, "{:+e}", self.constant)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `expr ≤ 0`
    Le,
    /// `expr ≥ 0`
    Ge,
    /// `expr = 0`
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cone {
    Linear {
        expr: AffineExpr,
        sense: Sense,
    },
    /// `‖x‖₂ ≤ t`
    SecondOrder {
        t: AffineExpr,
        x: Vec<AffineExpr>,
    },
    /// `y·exp(x/y) ≤ z`, `y > 0` (closure)
    Exponential {
        x: AffineExpr,
        y: AffineExpr,
        z: AffineExpr,
    },
    /// Symmetric matrix with the given upper-triangle entries (column-major:
    /// `(0,0), (0,1), (1,1), (0,2), …`) is positive semidefinite.
    Psd {
        dim: usize,
        entries: Vec<AffineExpr>,
    },
}

impl Cone {
    fn rows(&self) -> usize {
        match self {
            Cone::Linear { .. } => 1,
            Cone::SecondOrder { x, .. } => 1 + x.len(),
            Cone::Exponential { .. } => 3,
            Cone::Psd { dim, .. } => dim * (dim + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub cone: Cone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Maximize `objective` subject to `constraints` and variable bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub variables: Vec<Variable>,
    pub objective: AffineExpr,
    pub constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        self.variables.len() - 1
    }

    pub fn add_free_var(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, None, None)
    }

    pub fn add(&mut self, name: impl Into<String>, cone: Cone) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            cone,
        });
        self.constraints.len() - 1
    }

    pub fn add_linear(&mut self, name: impl Into<String>, expr: AffineExpr, sense: Sense) -> usize {
        self.add(name, Cone::Linear { expr, sense })
    }

    pub fn add_soc(&mut self, name: impl Into<String>, t: AffineExpr, x: Vec<AffineExpr>) -> usize {
        self.add(name, Cone::SecondOrder { t, x })
    }

    /// Rotated cone `‖v‖² ≤ a·b` with `a, b ≥ 0`, written as the standard
    /// cone `‖(2v, a − b)‖ ≤ a + b`.
    pub fn add_rsoc(
        &mut self,
        name: impl Into<String>,
        a: AffineExpr,
        b: AffineExpr,
        v: Vec<AffineExpr>,
    ) -> usize {
        let mut x: Vec<AffineExpr> = v.into_iter().map(|e| e * 2.0).collect();
        x.push(a.clone() - b.clone());
        self.add_soc(name, a + b, x)
    }

    pub fn add_exp(
        &mut self,
        name: impl Into<String>,
        x: AffineExpr,
        y: AffineExpr,
        z: AffineExpr,
    ) -> usize {
        self.add(name, Cone::Exponential { x, y, z })
    }

    pub fn add_psd(
        &mut self,
        name: impl Into<String>,
        dim: usize,
        entries: Vec<AffineExpr>,
    ) -> usize {
        self.add(name, Cone::Psd { dim, entries })
    }

    pub fn set_objective(&mut self, objective: AffineExpr) {
        self.objective = objective;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let check = |e: &AffineExpr, what: &str| -> Result<()> {
            if let Some(&(i, _)) = e.terms.iter().find(|&&(i, _)| i >= n) {
                return Err(Error::Malformed {
                    what: "conic program".into(),
                    reason: format!("{what} references variable {i} of {n}"),
                });
            }
            if e.terms.iter().any(|&(_, c)| !c.is_finite()) || !e.constant.is_finite() {
                return Err(Error::Malformed {
                    what: "conic program".into(),
                    reason: format!("{what} has a non-finite coefficient"),
                });
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for c in &self.constraints {
            match &c.cone {
                Cone::Linear { expr, .. } => check(expr, &c.name)?,
                Cone::SecondOrder { t, x } => {
                    check(t, &c.name)?;
                    for e in x {
                        check(e, &c.name)?;
                    }
                }
                Cone::Exponential { x, y, z } => {
                    check(x, &c.name)?;
                    check(y, &c.name)?;
                    check(z, &c.name)?;
                }
                Cone::Psd { dim, entries } => {
                    if entries.len() != dim * (dim + 1) / 2 {
                        return Err(Error::Malformed {
                            what: "conic program".into(),
                            reason: format!(
                                "{}: PSD cone of dim {dim} needs {} entries, got {}",
                                c.name,
                                dim * (dim + 1) / 2,
                                entries.len()
                            ),
                        });
                    }
                    for e in entries {
                        check(e, &c.name)?;
                    }
                }
            }
        }
        for (i, v) in self.variables.iter().enumerate() {
            if let (Some(l), Some(u)) = (v.lower, v.upper) {
                if l > u {
                    return Err(Error::Malformed {
                        what: "conic program".into(),
                        reason: format!("variable {i} ({}) has lower {l} > upper {u}", v.name),
                    });
                }
            }
        }
        Ok(())
    }

    /// Human-readable listing, one item per line:
    ///
    /// ```text
    /// var <idx> <name> <lower|-inf> <upper|+inf>
    /// max <expr>
    /// lin <name> <expr> (<=|>=|==) 0
    /// soc <name> <t> | <x1> ; <x2> ; …
    /// exp <name> <x> ; <y> ; <z>
    /// psd <name> <dim> <e00> ; <e01> ; <e11> ; …
    /// ```
    ///
    /// Expressions print as `+c*xI … +const` with coefficients in `{:e}`.
    pub fn dump_text(&self) -> String {
        let mut out = String::from("# conic program v1\n");
        for (i, v) in self.variables.iter().enumerate() {
            let lo = v.lower.map_or("-inf".to_string(), |l| format!("{l:e}"));
            let hi = v.upper.map_or("+inf".to_string(), |u| format!("{u:e}"));
            let _ = writeln!(out, "var {i} {} {lo} {hi}", v.name);
        }
        let _ = writeln!(out, "max {}", self.objective);
        let join = |es: &[AffineExpr]| {
            es.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(" ; ")
        };
        for c in &self.constraints {
            let _ = match &c.cone {
                Cone::Linear { expr, sense } => {
                    let op = match sense {
                        Sense::Le => "<=",
                        Sense::Ge => ">=",
                        Sense::Eq => "==",
                    };
                    writeln!(out, "lin {} {expr} {op} 0", c.name)
                }
                Cone::SecondOrder { t, x } => writeln!(out, "soc {} {t} | {}", c.name, join(x)),
                Cone::Exponential { x, y, z } => {
                    writeln!(out, "exp {} {x} ; {y} ; {z}", c.name)
                }
                Cone::Psd { dim, entries } => {
                    writeln!(out, "psd {} {dim} {}", c.name, join(entries))
                }
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff `status == Optimal`.
    pub primal: Option<Vec<f64>>,
    /// One multiplier vector per constraint (in the constraint's row order);
    /// empty unless optimal.
    pub duals: Vec<Vec<f64>>,
    /// `(lower, upper)` bound multipliers per variable, both `≥ 0`.
    pub bound_duals: Vec<(f64, f64)>,
    pub objective_value: Option<f64>,
    /// Largest normalised primal residual over all constraints and bounds.
    pub max_residual: f64,
    pub iterations: u32,
    pub detail: String,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn primal(&self) -> Result<&[f64]> {
        self.primal.as_deref().ok_or_else(|| {
            Error::Solver(format!(
                "no primal solution ({:?}: {})",
                self.status, self.detail
            ))
        })
    }

    /// Scalar multiplier of a linear constraint.
    pub fn dual(&self, constraint: usize) -> f64 {
        self.duals[constraint][0]
    }
}

/// Pieces of a Clarabel problem under construction.
struct Assembly {
    rows: usize,
    ai: Vec<usize>,
    aj: Vec<usize>,
    av: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Assembly {
    /// Append a row with slack `s = expr(x)` (i.e. `A = −coef`, `b = const`).
    fn push_row(&mut self, expr: &AffineExpr, scale: f64) {
        for &(j, c) in &expr.terms {
            if c != 0.0 {
                self.ai.push(self.rows);
                self.aj.push(j);
                self.av.push(-c * scale);
            }
        }
        self.b.push(expr.constant * scale);
        self.rows += 1;
    }

    fn push_cone(&mut self, cone: SupportedConeT<f64>) {
        use SupportedConeT::*;
        match (self.cones.last_mut(), &cone) {
            (Some(ZeroConeT(n)), ZeroConeT(m)) => *n += m,
            (Some(NonnegativeConeT(n)), NonnegativeConeT(m)) => *n += m,
            _ => self.cones.push(cone),
        }
    }
}

fn svec_scale(k: usize) -> f64 {
    // entry k of a column-major upper triangle is diagonal iff k+1 is triangular
    let mut col = 0;
    let mut start = 0;
    while start + col < k {
        col += 1;
        start += col;
    }
    if k == start + col {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Solve with Clarabel. `tol` is used both as the solver's gap/feasibility
/// tolerance and (relative, ×100) as the acceptance threshold on the
/// independently recomputed primal residuals.
pub fn solve(prog: &ConicProgram, tol: f64) -> Result<SolveResult> {
    prog.validate()?;
    let n = prog.num_vars();
    let mut asm = Assembly {
        rows: 0,
        ai: Vec::new(),
        aj: Vec::new(),
        av: Vec::new(),
        b: Vec::new(),
        cones: Vec::new(),
    };
    let mut row_of_constraint = Vec::with_capacity(prog.constraints.len());
    for c in &prog.constraints {
        row_of_constraint.push(asm.rows);
        match &c.cone {
            Cone::Linear { expr, sense } => match sense {
                Sense::Ge => {
                    asm.push_row(expr, 1.0);
                    asm.push_cone(SupportedConeT::NonnegativeConeT(1));
                }
                Sense::Le => {
                    asm.push_row(expr, -1.0);
                    asm.push_cone(SupportedConeT::NonnegativeConeT(1));
                }
                Sense::Eq => {
                    asm.push_row(expr, 1.0);
                    asm.push_cone(SupportedConeT::ZeroConeT(1));
                }
            },
            Cone::SecondOrder { t, x } => {
                asm.push_row(t, 1.0);
                for e in x {
                    asm.push_row(e, 1.0);
                }
                asm.push_cone(SupportedConeT::SecondOrderConeT(1 + x.len()));
            }
            Cone::Exponential { x, y, z } => {
                asm.push_row(x, 1.0);
                asm.push_row(y, 1.0);
                asm.push_row(z, 1.0);
                asm.push_cone(SupportedConeT::ExponentialConeT());
            }
            Cone::Psd { dim, entries } => {
                for (k, e) in entries.iter().enumerate() {
                    asm.push_row(e, svec_scale(k));
                }
                asm.push_cone(SupportedConeT::PSDTriangleConeT(*dim));
            }
        }
    }
    let mut bound_rows = Vec::with_capacity(n);
    for (j, v) in prog.variables.iter().enumerate() {
        let lo = v.lower.map(|l| {
            asm.push_row(&AffineExpr::var(j).plus(-l), 1.0);
            asm.push_cone(SupportedConeT::NonnegativeConeT(1));
            asm.rows - 1
        });
        let hi = v.upper.map(|u| {
            asm.push_row(&AffineExpr::var(j).plus(-u), -1.0);
            asm.push_cone(SupportedConeT::NonnegativeConeT(1));
            asm.rows - 1
        });
        bound_rows.push((lo, hi));
    }

    let m = asm.rows;
    let a = CscMatrix::new_from_triplets(m, n, asm.ai, asm.aj, asm.av);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(j, c) in &prog.objective.terms {
        q[j] -= c;
    }
    let settings = DefaultSettings {
        verbose: std::env::var_os("SECREL_SOLVER_VERBOSE").is_some(),
        tol_gap_abs: tol,
        tol_gap_rel: tol,
        tol_feas: tol,
        tol_ktratio: tol.max(1e-10),
        max_iter: 300,
        ..Default::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &asm.b, &asm.cones, settings.clone())
        .map_err(|e| Error::Solver(format!("problem setup rejected: {e:?}")))?;
    solver.solve();
    // AlmostSolved only meets Clarabel's reduced tolerances (around 1e-4),
    // which is too loose for Dinkelbach values, and stalls are common on
    // badly scaled instances. Retry with shorter steps and more refinement,
    // then at a looser but still full tolerance.
    let retries = [
        DefaultSettings {
            max_step_fraction: 0.9,
            iterative_refinement_reltol: 1e-14,
            iterative_refinement_max_iter: 20,
            max_iter: 600,
            ..settings.clone()
        },
        DefaultSettings {
            tol_gap_abs: 100.0 * tol,
            tol_gap_rel: 100.0 * tol,
            tol_feas: 100.0 * tol,
            tol_ktratio: (100.0 * tol).max(1e-10),
            max_iter: 600,
            ..settings
        },
    ];
    let inexact = |s: &SolverStatus| {
        matches!(
            s,
            SolverStatus::AlmostSolved
                | SolverStatus::MaxIterations
                | SolverStatus::MaxTime
                | SolverStatus::InsufficientProgress
                | SolverStatus::NumericalError
        )
    };
    for careful in retries {
        if !inexact(&solver.solution.status) {
            break;
        }
        let mut retry = DefaultSolver::new(&p, &q, &a, &asm.b, &asm.cones, careful)
            .map_err(|e| Error::Solver(format!("problem setup rejected: {e:?}")))?;
        retry.solve();
        let (before, after) = (solver.solution.status, retry.solution.status);
        log::debug!("{before:?} retried: {after:?}");
        if after == SolverStatus::Solved
            || (after == SolverStatus::AlmostSolved && before != SolverStatus::AlmostSolved)
        {
            solver = retry;
        }
    }
    let sol = &solver.solution;
    let detail = format!("{:?}", sol.status);
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    if status != SolveStatus::Optimal {
        return Ok(SolveResult {
            status,
            primal: None,
            duals: Vec::new(),
            bound_duals: Vec::new(),
            objective_value: None,
            max_residual: f64::NAN,
            iterations: sol.iterations,
            detail,
        });
    }
    let x = sol.x.clone();
    let max_residual = primal_residual(prog, &x);
    if !(max_residual <= 100.0 * tol) {
        return Ok(SolveResult {
            status: SolveStatus::NumericalFailure,
            primal: None,
            duals: Vec::new(),
            bound_duals: Vec::new(),
            objective_value: None,
            max_residual,
            iterations: sol.iterations,
            detail: format!("{detail}; primal residual {max_residual:.3e} above tolerance"),
        });
    }
    let z = &sol.z;
    let duals = prog
        .constraints
        .iter()
        .zip(&row_of_constraint)
        .map(|(c, &r0)| {
            let rows = c.cone.rows();
            match &c.cone {
                Cone::Psd { .. } => (0..rows).map(|k| z[r0 + k] * svec_scale(k)).collect(),
                _ => z[r0..r0 + rows].to_vec(),
            }
        })
        .collect();
    let bound_duals = bound_rows
        .iter()
        .map(|&(lo, hi)| (lo.map_or(0.0, |r| z[r]), hi.map_or(0.0, |r| z[r])))
        .collect();
    Ok(SolveResult {
        status,
        objective_value: Some(prog.objective.eval(&x)),
        primal: Some(x),
        duals,
        bound_duals,
        max_residual,
        iterations: sol.iterations,
        detail,
    })
}

/// Largest normalised violation of any constraint or bound at `x`.
pub fn primal_residual(prog: &ConicProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for c in &prog.constraints {
        let r = match &c.cone {
            Cone::Linear { expr, sense } => {
                let v = expr.eval(x);
                let viol = match sense {
                    Sense::Ge => (-v).max(0.0),
                    Sense::Le => v.max(0.0),
                    Sense::Eq => v.abs(),
                };
                viol / expr.magnitude(x)
            }
            Cone::SecondOrder { t, x: xs } => {
                let tv = t.eval(x);
                let norm = xs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                (norm - tv).max(0.0) / (1.0 + tv.abs() + norm)
            }
            Cone::Exponential {
                x: ex,
                y: ey,
                z: ez,
            } => {
                let (xv, yv, zv) = (ex.eval(x), ey.eval(x), ez.eval(x));
                let viol = if yv > 1e-12 && zv > 0.0 {
                    (xv - yv * (zv / yv).ln()).max(0.0)
                } else {
                    xv.max(0.0) + (-zv).max(0.0) + (-yv).max(0.0)
                };
                viol / (1.0 + xv.abs() + yv.abs())
            }
            Cone::Psd { dim, entries } => {
                let mut m = DMatrix::zeros(*dim, *dim);
                let mut k = 0;
                for j in 0..*dim {
                    for i in 0..=j {
                        let v = entries[k].eval(x);
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                        k += 1;
                    }
                }
                let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
                (-min_eig).max(0.0) / (1.0 + m.norm())
            }
        };
        worst = worst.max(r);
    }
    for (j, v) in prog.variables.iter().enumerate() {
        if let Some(l) = v.lower {
            worst = worst.max((l - x[j]).max(0.0) / (1.0 + l.abs()));
        }
        if let Some(u) = v.upper {
            worst = worst.max((x[j] - u).max(0.0) / (1.0 + u.abs()));
        }
    }
    worst
}

/// Which side of `log₂(1 + s)` a variable may sit on. Only the hypograph
/// (`t ≤ log₂(1 + s)`) is convex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Hypograph,
    Epigraph,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogEncoding {
    /// Exact, via `(t·ln2 − ln K, 1, (1 + s)/K) ∈ K_exp` for a fixed scale
    /// `K`.
    ExpCone,
    /// Piecewise-linear chord envelope on `[0, max_snr]`; also adds
    /// `s ≤ max_snr`.
    Chords(LogEnvelope),
}

/// Add a variable `t` with `t ≤ log₂(1 + power·gain/noise)` and return its
/// index. `power` must be affine in the program's variables.
pub fn log_term(
    prog: &mut ConicProgram,
    name: &str,
    power: &AffineExpr,
    gain: f64,
    noise: f64,
    orientation: Orientation,
    encoding: &LogEncoding,
) -> Result<usize> {
    if orientation == Orientation::Epigraph {
        return Err(Error::ConvexOrientation);
    }
    let snr = power.clone() * (gain / noise);
    let t = prog.add_free_var(name.to_string());
    match encoding {
        LogEncoding::ExpCone => {
            // (t·ln2 − ln K, 1, (1 + s)/K) with K the SNR at unit power keeps
            // the cone entries O(1)
            let k = 1.0 + gain / noise;
            prog.add_exp(
                format!("{name}:exp"),
                (AffineExpr::var(t) * std::f64::consts::LN_2).plus(-k.ln()),
                AffineExpr::constant(1.0),
                snr.plus(1.0) * (1.0 / k),
            );
        }
        LogEncoding::Chords(env) => {
            for (k, (slope, icpt)) in env.lines().enumerate() {
                // t ≤ slope·s + icpt
                let mut e = snr.clone() * slope;
                e.constant += icpt;
                e.add_term(t, -1.0);
                prog.add_linear(format!("{name}:chord{k}"), e, Sense::Ge);
            }
            prog.add_linear(format!("{name}:range"), snr.plus(-env.max_snr()), Sense::Le);
        }
    }
    Ok(t)
}

/// Constrain `t ≥ log₂(1 + k/z)` for `k > 0`, which is jointly convex in
/// `(z, t)` on `z > 0`. Written as `e^{−T} + k·e^{−T}/z ≤ 1` with
/// `T = t·ln2`, using three exponential cones and `r ≤ ln z`.
pub fn add_log_ratio_epigraph(
    prog: &mut ConicProgram,
    name: &str,
    t: usize,
    k: f64,
    z: AffineExpr,
) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "log-ratio epigraph needs a positive numerator, got {k}"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let r = prog.add_free_var(format!("{name}:lnz"));
    let s1 = prog.add_var(format!("{name}:s1"), Some(0.0), None);
    let s2 = prog.add_var(format!("{name}:s2"), Some(0.0), None);
    let one = AffineExpr::constant(1.0);
    prog.add_exp(format!("{name}:log"), AffineExpr::var(r), one.clone(), z);
    prog.add_exp(
        format!("{name}:e1"),
        AffineExpr::var(t) * -ln2,
        one.clone(),
        AffineExpr::var(s1),
    );
    prog.add_exp(
        format!("{name}:e2"),
        (AffineExpr::var(t) * -ln2).term(r, -1.0).plus(k.ln()),
        one,
        AffineExpr::var(s2),
    );
    prog.add_linear(
        format!("{name}:sum"),
        AffineExpr::var(s1).term(s2, 1.0).plus(-1.0),
        Sense::Le,
    );
    Ok(())
}

/// Piecewise-linear interpolant of `log₂(1 + s)` on geometric breakpoints
/// in `1 + s`. Every chord of a concave function lies below it, so the
/// interpolant is a global lower bound on `[0, max_snr]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEnvelope {
    breaks: Vec<f64>,
    gap: f64,
}

impl LogEnvelope {
    /// Envelope whose worst-case gap below `log₂(1 + s)` is at most `max_gap`
    /// bits on `[0, max_snr]`.
    pub fn new(max_snr: f64, max_gap: f64) -> Result<Self> {
        if !(max_snr > 0.0) || !(max_gap > 0.0) {
            return Err(Error::InvalidArgument(
                "log envelope needs positive range and gap".into(),
            ));
        }
        // gap depends only on the breakpoint ratio r = (1+b)/(1+a)
        let (mut lo, mut hi) = (1.0 + 1e-12, 1e6_f64);
        if Self::chord_gap(hi) <= max_gap {
            lo = hi;
        } else {
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if Self::chord_gap(mid) <= max_gap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let span = (1.0 + max_snr).ln();
        let pieces = (span / lo.ln()).ceil().max(1.0) as usize;
        let ratio = (span / pieces as f64).exp();
        let mut breaks = Vec::with_capacity(pieces + 1);
        for k in 0..=pieces {
            breaks.push(ratio.powi(k as i32) - 1.0);
        }
        *breaks.last_mut().unwrap() = max_snr;
        Ok(Self {
            breaks,
            gap: Self::chord_gap(ratio),
        })
    }

    /// Max of `log₂(u) − chord` over `[u₀, r·u₀]`.
    fn chord_gap(r: f64) -> f64 {
        if r <= 1.0 {
            return 0.0;
        }
        let lr = r.ln();
        let u_star = (r - 1.0) / lr;
        (u_star.ln() - lr * (u_star - 1.0) / (r - 1.0)) / std::f64::consts::LN_2
    }

    pub fn max_snr(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn pieces(&self) -> usize {
        self.breaks.len() - 1
    }

    /// Certified worst-case gap in bits.
    pub fn max_gap(&self) -> f64 {
        self.gap
    }

    /// `(slope, intercept)` of each chord, in `s`.
    pub fn lines(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breaks.windows(2).map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = ((1.0 + a).log2(), (1.0 + b).log2());
            let slope = (fb - fa) / (b - a);
            (slope, fa - slope * a)
        })
    }

    pub fn value(&self, s: f64) -> f64 {
        self.lines()
            .map(|(k, c)| k * s + c)
            .fold(f64::INFINITY, f64::min)
    }
}

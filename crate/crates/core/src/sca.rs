//! First-order bounds used to convexify the subproblems, and the Dinkelbach
//! controller for ratio objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An affine function `intercept + slope·w` together with its value at the
/// point it was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBound {
    pub value: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl AffineBound {
    pub fn at(&self, w: f64) -> f64 {
        self.intercept + self.slope * w
    }
}

/// Tangent of the convex map `w ↦ log₂(1 + p/w)` at `w_star`, which lies
/// below it everywhere on `w > 0`.
pub fn taylor_log_lower(p: f64, w_star: f64, w: f64) -> Result<AffineBound> {
    if !(w_star > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "expansion point must be positive, got {w_star}"
        )));
    }
    if !(p >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log numerator must be nonnegative, got {p}"
        )));
    }
    let base = (p / w_star).ln_1p() / std::f64::consts::LN_2;
    let slope = -p / (w_star * (w_star + p) * std::f64::consts::LN_2);
    let intercept = base - slope * w_star;
    Ok(AffineBound {
        value: intercept + slope * w,
        slope,
        intercept,
    })
}

/// Tangent `2x*·x − x*²` of `x²`.
pub fn taylor_square_lower(x_star: f64, x: f64) -> AffineBound {
    let slope = 2.0 * x_star;
    let intercept = -x_star * x_star;
    AffineBound {
        value: intercept + slope * x,
        slope,
        intercept,
    }
}

pub fn dinkelbach_update(numerator: f64, denominator: f64) -> Result<f64> {
    if !(denominator > 0.0) {
        return Err(Error::NonPositiveDenominator(denominator));
    }
    Ok(numerator / denominator)
}

/// What the parametric inner problem returns for a given `λ`.
#[derive(Debug, Clone)]
pub struct InnerSolution<C> {
    /// `F(λ) = max numerator − λ·denominator`.
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub candidate: C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachStep {
    pub lambda: f64,
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
}

#[derive(Debug, Clone)]
pub struct DinkelbachOutcome<C> {
    pub candidate: C,
    /// Ratio achieved by `candidate`.
    pub lambda: f64,
    pub steps: Vec<DinkelbachStep>,
    pub converged: bool,
}

/// `true` if `λ` never drops by more than `slack·max(1, |λ|)` between steps.
pub fn lambda_nondecreasing(steps: &[DinkelbachStep], slack: f64) -> bool {
    steps
        .windows(2)
        .all(|w| w[1].lambda >= w[0].lambda - slack * w[0].lambda.abs().max(1.0))
}

/// Iterate `λ ← num/den` of the inner maximizer until `|F(λ)| ≤ tol`.
///
/// The previous maximizer attains `F(λ) = 0`, so a value below `−tol` can
/// only come from an inexact inner solve. The loop then stops unconverged
/// and returns the previous candidate rather than letting `λ` fall.
pub fn dinkelbach_loop<C>(
    mut inner: impl FnMut(f64) -> Result<InnerSolution<C>>,
    lambda0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DinkelbachOutcome<C>> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument(
            "Dinkelbach needs max_iter >= 1".into(),
        ));
    }
    let mut lambda = lambda0;
    let mut steps = Vec::new();
    let mut previous: Option<C> = None;
    for iteration in 0..max_iter {
        let sol = inner(lambda).map_err(|e| Error::Dinkelbach {
            iteration,
            source: Box::new(e),
        })?;
        steps.push(DinkelbachStep {
            lambda,
            value: sol.value,
            numerator: sol.numerator,
            denominator: sol.denominator,
        });
        if sol.value < -tol {
            if let Some(candidate) = previous {
                return Ok(DinkelbachOutcome {
                    candidate,
                    lambda,
                    steps,
                    converged: false,
                });
            }
        }
        let next =
            dinkelbach_update(sol.numerator, sol.denominator).map_err(|e| Error::Dinkelbach {
                iteration,
                source: Box::new(e),
            })?;
        let converged = sol.value.abs() <= tol;
        if converged || iteration + 1 == max_iter {
            return Ok(DinkelbachOutcome {
                candidate: sol.candidate,
                lambda: next,
                steps,
                converged,
            });
        }
        lambda = next;
        previous = Some(sol.candidate);
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn log_bound_examples() {
        let b = taylor_log_lower(1.0, 2.0, 2.0).unwrap();
        assert_relative_eq!(b.value, 1.5f64.log2(), epsilon = 1e-15);
        let b = taylor_log_lower(1.0, 2.0, 4.0).unwrap();
        let expected = 1.5f64.log2() - 2.0 / (6.0 * std::f64::consts::LN_2);
        assert_relative_eq!(b.value, expected, epsilon = 1e-14);
        assert!((b.value - 0.10406).abs() < 1e-5);
        assert!(b.value <= 1.25f64.log2());
        let b = taylor_log_lower(0.0, 3.0, 7.0).unwrap();
        assert_eq!((b.value, b.slope, b.intercept), (0.0, 0.0, 0.0));
        assert!(taylor_log_lower(1.0, 0.0, 1.0).is_err());
        assert!(taylor_log_lower(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn square_bound_examples() {
        assert_eq!(taylor_square_lower(3.0, 3.0).value, 9.0);
        assert_eq!(taylor_square_lower(3.0, 5.0).value, 21.0);
        let b = taylor_square_lower(0.0, -4.0);
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn update_examples() {
        assert_relative_eq!(dinkelbach_update(10.0, 100.0).unwrap(), 0.1);
        assert_eq!(dinkelbach_update(0.0, 100.0).unwrap(), 0.0);
        assert!(matches!(
            dinkelbach_update(1.0, 0.0),
            Err(Error::NonPositiveDenominator(_))
        ));
    }

    // maximize (2x − x²)/x on [0.5, 1.5]; the ratio is 2 − x
    fn toy_inner(lambda: f64) -> Result<InnerSolution<f64>> {
        let x = ((2.0 - lambda) / 2.0).clamp(0.5, 1.5);
        let num = 2.0 * x - x * x;
        Ok(InnerSolution {
            value: num - lambda * x,
            numerator: num,
            denominator: x,
            candidate: x,
        })
    }

    #[test]
    fn toy_ratio_matches_grid() {
        let out = dinkelbach_loop(toy_inner, 0.0, 1e-12, 30).unwrap();
        let grid_best = (0..=100_000)
            .map(|k| 0.5 + k as f64 * 1e-5)
            .map(|x| (2.0 * x - x * x) / x)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(out.converged);
        assert_relative_eq!(out.lambda, grid_best, epsilon = 1e-9);
        assert_relative_eq!(out.candidate, 0.5, epsilon = 1e-9);
        assert!(lambda_nondecreasing(&out.steps, 0.0));
    }

    #[test]
    fn inexact_negative_value_keeps_previous_candidate() {
        // the second solve overshoots, the third comes back below zero
        let values = [(0.5, 2.0, 10.0), (0.1, 2.6, 10.0), (-1e-3, 2.5, 10.0)];
        let mut k = 0;
        let out = dinkelbach_loop(
            |_| {
                let (value, numerator, denominator) = values[k];
                k += 1;
                Ok(InnerSolution {
                    value,
                    numerator,
                    denominator,
                    candidate: k,
                })
            },
            0.1,
            1e-6,
            30,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.candidate, 2);
        assert_eq!(out.steps.len(), 3);
        assert_relative_eq!(out.lambda, 0.26);
        assert!(lambda_nondecreasing(&out.steps, 0.0));
    }

    #[test]
    fn zero_numerator_converges_at_once() {
        let out = dinkelbach_loop(
            |_| {
                Ok(InnerSolution {
                    value: 0.0,
                    numerator: 0.0,
                    denominator: 5.0,
                    candidate: (),
                })
            },
            0.0,
            1e-9,
            30,
        )
        .unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.lambda, 0.0);
        assert!(out.converged);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_solve() {
        let out = dinkelbach_loop(toy_inner, 0.0, f64::INFINITY, 30).unwrap();
        assert_eq!(out.steps.len(), 1);
    }

    #[test]
    fn inner_failure_carries_iteration() {
        let mut calls = 0;
        let err = dinkelbach_loop(
            |l| {
                calls += 1;
                if calls == 3 {
                    Err(Error::Solver("boom".into()))
                } else {
                    toy_inner(l)
                }
            },
            0.0,
            0.0,
            30,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dinkelbach { iteration: 2, .. }));
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn log_bound_is_global_and_tight(
            p in 0.0..1e3f64, w_star in 1e-3..1e3f64, w in 1e-3..1e3f64,
        ) {
            let b = taylor_log_lower(p, w_star, w).unwrap();
            let exact = (1.0 + p / w).log2();
            prop_assert!(b.value <= exact + 1e-12 * exact.abs().max(1.0));
            let at = taylor_log_lower(p, w_star, w_star).unwrap().value;
            prop_assert!((at - (1.0 + p / w_star).log2()).abs() <= 1e-12);
            let fd = central_diff(|x| (1.0 + p / x).log2(), w_star);
            prop_assert!((b.slope - fd).abs() <= 1e-6 * fd.abs().max(1e-9));
        }

        #[test]
        fn square_bound_is_global_and_tight(x_star in -1e3..1e3f64, x in -1e3..1e3f64) {
            let b = taylor_square_lower(x_star, x);
            prop_assert!(b.value <= x * x);
            prop_assert_eq!(taylor_square_lower(x_star, x_star).value, x_star * x_star);
        }

        #[test]
        fn dinkelbach_on_concave_toys(
            a in 0.5..5.0f64, b in 0.1..3.0f64, c in -1.0..3.0f64,
            d in 0.5..5.0f64, e in 0.0..2.0f64,
        ) {
            // maximize (a − b(x−c)²)/(d + e x) over [0, 2]
            let (lo, hi) = (0.0, 2.0);
            let num = |x: f64| a - b * (x - c).powi(2);
            let den = |x: f64| d + e * x;
            let inner = |l: f64| -> Result<InnerSolution<f64>> {
                let x = (c - l * e / (2.0 * b)).clamp(lo, hi);
                Ok(InnerSolution {
                    value: num(x) - l * den(x),
                    numerator: num(x),
                    denominator: den(x),
                    candidate: x,
                })
            };
            let x0 = 1.0;
            let out = dinkelbach_loop(inner, num(x0) / den(x0), 1e-10, 50).unwrap();
            prop_assert!(lambda_nondecreasing(&out.steps, 1e-12));
            for w in out.steps.windows(2) {
                prop_assert!(w[1].value <= w[0].value + 1e-12);
                prop_assert!(w[1].value >= -1e-12);
            }
            let grid = (0..=200_000)
                .map(|k| lo + (hi - lo) * k as f64 / 200_000.0)
                .map(|x| num(x) / den(x))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.lambda >= grid - 1e-8, "{} vs grid {}", out.lambda, grid);
        }
    }
}

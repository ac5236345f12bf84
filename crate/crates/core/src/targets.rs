//! Target selection: bargaining solutions, the egalitarian profile and
//! quantized target grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{payoff, GameSpec, StrategyProfile};
use crate::search::{golden_section_max, nelder_mead_max};

/// Products below this are reported as zero.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargainingProblem {
    pub spec: GameSpec,
    pub disagreement: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

fn check_weights(n: usize, w: &[f64]) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::param(format!("weight {i} is {v}, expected a positive value")));
    }
    Ok(())
}

impl BargainingProblem {
    /// Problem with the zero disagreement point and no weights.
    pub fn new(spec: GameSpec) -> Self {
        let n = spec.n();
        BargainingProblem {
            spec,
            disagreement: vec![0.0; n],
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_weights(self.spec.n(), &weights)?;
        self.weights = Some(weights);
        Ok(self)
    }

    /// Sets the disagreement payoffs; some feasible payoff must lie strictly
    /// above them.
    pub fn with_disagreement(mut self, v: Vec<f64>) -> Result<Self> {
        let n = self.spec.n();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("disagreement payoffs must be finite"));
        }
        self.disagreement = v;
        if !self.has_strict_surplus() {
            return Err(Error::param(
                "no feasible payoff lies strictly above the disagreement point",
            ));
        }
        Ok(self)
    }

    fn has_strict_surplus(&self) -> bool {
        let spec = &self.spec;
        let v = &self.disagreement;
        if v.iter().all(|x| *x < 0.0) {
            return true;
        }
        let n = spec.n();
        let mut f = |p: &[f64]| {
            let u = payoff(spec, p).expect("in range");
            u.iter().zip(v).map(|(u, v)| u - v).fold(f64::INFINITY, f64::min)
        };
        let (_, best) = nelder_mead_max(&mut f, &vec![1.0 / n as f64; n], 0.1, 2000, 1e-15);
        best > 0.0
    }

    fn is_zero_disagreement(&self) -> bool {
        self.disagreement.iter().all(|v| *v == 0.0)
    }
}

/// `sum_i w_i ln u_i`; `-inf` when some payoff is zero.
pub fn log_nash_product(spec: &GameSpec, p: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if let Some(w) = weights {
        check_weights(spec.n(), w)?;
    }
    let u = payoff(spec, p)?;
    Ok(u.iter()
        .enumerate()
        .map(|(i, u)| weights.map_or(1.0, |w| w[i]) * u.ln())
        .sum())
}

/// `prod_i u_i^{w_i}`, evaluated in log space.
pub fn nash_product(spec: &GameSpec, p: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    Ok(log_nash_product(spec, p, weights)?.exp())
}

/// Renders underflowed products as exactly zero.
pub fn floor_underflow(x: f64) -> f64 {
    if x < UNDERFLOW_FLOOR {
        0.0
    } else {
        x
    }
}

/// The symmetric Nash bargaining target.
///
/// With a zero disagreement point this is `1/n` for every user (and `(1)`
/// for a single user). Otherwise the product of surpluses is maximized
/// numerically.
pub fn nash_bargaining_target(problem: &BargainingProblem) -> Result<StrategyProfile> {
    if problem.weights.is_some() {
        return Err(Error::param("weights given; use the nonsymmetric target"));
    }
    let n = problem.spec.n();
    if problem.is_zero_disagreement() {
        return StrategyProfile::uniform(n, 1.0 / n as f64);
    }
    maximize_surplus_product(problem, &vec![1.0; n])
}

/// The weighted Nash bargaining target, `w_i / sum w` for a zero
/// disagreement point.
pub fn nonsymmetric_nash_target(problem: &BargainingProblem) -> Result<StrategyProfile> {
    let w = problem
        .weights
        .as_ref()
        .ok_or_else(|| Error::param("nonsymmetric target needs weights"))?;
    check_weights(problem.spec.n(), w)?;
    if problem.is_zero_disagreement() {
        let total: f64 = w.iter().sum();
        return StrategyProfile::new(w.iter().map(|w| w / total).collect());
    }
    maximize_surplus_product(problem, w)
}

fn maximize_surplus_product(problem: &BargainingProblem, w: &[f64]) -> Result<StrategyProfile> {
    let spec = &problem.spec;
    let v = &problem.disagreement;
    let f = |p: &[f64]| {
        let u = payoff(spec, p).expect("in range");
        u.iter()
            .zip(v)
            .zip(w)
            .map(|((u, v), w)| if u > v { w * (u - v).ln() } else { f64::NEG_INFINITY })
            .sum::<f64>()
    };
    let (p, value) = multi_start_max(spec.n(), &f);
    if !value.is_finite() {
        return Err(Error::NonConvergence {
            iterations: NM_ITERS,
            residual: f64::INFINITY,
        });
    }
    StrategyProfile::new(p)
}

const NM_ITERS: usize = 4000;

/// Start points for multi-start searches: the centre plus a coarse lattice.
fn starts(n: usize) -> Vec<Vec<f64>> {
    let levels = [0.15, 0.5, 0.85];
    let mut out = vec![vec![1.0 / n as f64; n], vec![0.5; n]];
    let combos = 3usize.pow(n.min(4) as u32);
    for c in 0..combos {
        let mut idx = c;
        out.push(
            (0..n)
                .map(|_| {
                    let l = levels[idx % 3];
                    idx /= 3;
                    l
                })
                .collect(),
        );
    }
    out
}

/// Multi-start clamped Nelder-Mead followed by coordinate-wise golden
/// polishing.
fn multi_start_max<F>(n: usize, f: &F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    starts(n)
        .into_par_iter()
        .map(|x0| {
            let mut g = |x: &[f64]| f(x);
            let (mut x, mut fx) = nelder_mead_max(&mut g, &x0, 0.1, NM_ITERS, 1e-16);
            for _ in 0..4 {
                for d in 0..n {
                    let line = |t: f64| {
                        let mut y = x.clone();
                        y[d] = t;
                        f(&y)
                    };
                    let lo = (x[d] - 0.05).max(0.0);
                    let hi = (x[d] + 0.05).min(1.0);
                    let (t, ft) = golden_section_max(&line, lo, hi, 1e-13);
                    if ft >= fx {
                        x[d] = t;
                        fx = ft;
                    }
                }
            }
            (x, fx)
        })
        .reduce_with(|a, b| if b.1 > a.1 { b } else { a })
        .expect("at least one start")
}

/// Numeric maximizer of the (optionally weighted) Nash product over
/// `[0,1]^n`.
pub fn maximize_nash_product(spec: &GameSpec, weights: Option<&[f64]>) -> Result<StrategyProfile> {
    if let Some(w) = weights {
        check_weights(spec.n(), w)?;
    }
    let f = |p: &[f64]| log_nash_product(spec, p, weights).unwrap_or(f64::NEG_INFINITY);
    let (p, _) = multi_start_max(spec.n(), &f);
    StrategyProfile::new(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-13,
            max_iter: 500,
        }
    }
}

/// The equal-payoff target with the largest common payoff.
///
/// Equal payoffs force `p_i = c / (k_i + c)` for a scalar `c`, and the common
/// payoff peaks where `sum_i p_i = 1`; `c` is found by bisection.
pub fn egalitarian_target(spec: &GameSpec, solver: SolverConfig) -> Result<StrategyProfile> {
    let n = spec.n();
    if n == 1 {
        return StrategyProfile::new(vec![1.0]);
    }
    let k = spec.k();
    let excess = |c: f64| k.iter().map(|k| c / (k + c)).sum::<f64>() - 1.0;
    let k_max = k.iter().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, k_max / (n as f64 - 1.0));
    let mut iterations = 0;
    while hi - lo > solver.tol * hi.max(1.0) {
        if iterations == solver.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: excess(0.5 * (lo + hi)).abs(),
            });
        }
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    let c = 0.5 * (lo + hi);
    StrategyProfile::new(k.iter().map(|k| c / (k + c)).collect())
}

/// Lazily enumerates `{1/m, ..., (m-1)/m}^n` in row-major order.
#[derive(Debug, Clone)]
pub struct QuantizedGrid {
    m: u32,
    idx: Vec<u32>,
    remaining: u128,
}

impl Iterator for QuantizedGrid {
    type Item = StrategyProfile;

    fn next(&mut self) -> Option<StrategyProfile> {
        if self.remaining == 0 {
            return None;
        }
        let m = self.m as f64;
        let p = self.idx.iter().map(|&r| r as f64 / m).collect();
        self.remaining -= 1;
        for d in (0..self.idx.len()).rev() {
            if self.idx[d] + 1 < self.m {
                self.idx[d] += 1;
                break;
            }
            self.idx[d] = 1;
        }
        Some(StrategyProfile::new(p).expect("grid points lie in (0,1)"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        match usize::try_from(self.remaining) {
            Ok(r) => (r, Some(r)),
            Err(_) => (usize::MAX, None),
        }
    }
}

pub fn quantized_target_grid(n: usize, m: u32) -> Result<QuantizedGrid> {
    if m < 2 {
        return Err(Error::param(format!("need at least 2 intervals, got {m}")));
    }
    if n == 0 {
        return Err(Error::param("need at least one user"));
    }
    let remaining = (m as u128 - 1)
        .checked_pow(n as u32)
        .ok_or_else(|| Error::param("grid too large to enumerate"))?;
    Ok(QuantizedGrid {
        m,
        idx: vec![1; n],
        remaining,
    })
}

//! Adaptive intervention that walks users from a second-class equilibrium
//! back to the target.
//!
//! Users are ranked by `p_i / t_i` at the start. Call the user with the
//! largest ratio the leader `L`. At step `t` the manager uses the offset
//! `c^t = sum_{j != L} p_j^{t-1} / t_j + 1` and every user best-responds to
//! the previous profile.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{best_response_trd, is_nash_intervened, TieBreak, VerdictClass};
use crate::error::{Error, Result};
use crate::game::{GameSpec, StrategyProfile};
use crate::intervention::{check_target, offset_trd, trim};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsStep {
    pub t: usize,
    pub c_t: f64,
    /// Intervention level `g^t(p^t)`.
    pub g_level: f64,
    pub profile: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub steps: Vec<DynamicsStep>,
    pub converged: bool,
    pub iterations: usize,
    /// User indices sorted by starting ratio, ascending.
    pub order: Vec<usize>,
    pub hypotheses_hold: bool,
    pub violations: Vec<String>,
}

impl DynamicsTrace {
    pub fn last(&self) -> &DynamicsStep {
        self.steps.last().expect("trace always holds step 0")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.order.len();
        write!(out, "t,c_t,g_level")?;
        for i in 1..=n {
            write!(out, ",p_{i}")?;
        }
        writeln!(out)?;
        for s in &self.steps {
            write!(out, "{},{},{}", s.t, s.c_t, s.g_level)?;
            for p in &s.profile {
                write!(out, ",{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn ratios(target: &[f64], p: &[f64]) -> Vec<f64> {
    p.iter().zip(target).map(|(p, t)| p / t).collect()
}

/// Indices sorted by ratio ascending; ties keep index order.
fn ratio_order(r: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[a].total_cmp(&r[b]));
    order
}

fn check_inputs(target: &[f64], p_hat0: &[f64]) -> Result<()> {
    check_target(target)?;
    if p_hat0.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: p_hat0.len(),
        });
    }
    StrategyProfile::new(p_hat0.to_vec())?;
    Ok(())
}

/// Reasons the convergence hypotheses fail at `p_hat0`; empty when they hold.
pub fn hypothesis_violations(spec: &GameSpec, target: &[f64], p_hat0: &[f64]) -> Result<Vec<String>> {
    check_inputs(target, p_hat0)?;
    let mut out = Vec::new();
    let class = is_nash_intervened(spec, target, p_hat0)?.class;
    if !matches!(class, VerdictClass::SecondClass | VerdictClass::Target) {
        out.push(format!(
            "starting profile is not a second-class equilibrium ({class:?})"
        ));
    }
    let r = ratios(target, p_hat0);
    let order = ratio_order(&r);
    let lead = r[*order.last().expect("n >= 1")];
    for (i, &ri) in r.iter().enumerate() {
        if !(lead - ri < 2.0 || ri <= 1.0) {
            out.push(format!(
                "user {i}: ratio gap {:.6} to the leader is at least 2 and own ratio {ri:.6} exceeds 1",
                lead - ri
            ));
        }
    }
    Ok(out)
}

/// Runs the adjustment process for at most `max_t` steps, stopping once
/// `max_i |p_i^t - t_i| < tol`.
///
/// Hypothesis violations do not stop the run; they are recorded in the
/// trace and `hypotheses_hold` is cleared.
pub fn run_dynamics(spec: &GameSpec, target: &[f64], p_hat0: &[f64], max_t: usize, tol: f64) -> Result<DynamicsTrace> {
    check_inputs(target, p_hat0)?;
    spec.check(p_hat0)?;
    if !(tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {tol}")));
    }
    let n = target.len();
    let violations = hypothesis_violations(spec, target, p_hat0)?;
    let order = ratio_order(&ratios(target, p_hat0));
    let leader = *order.last().expect("n >= 1");
    let dist = |p: &[f64]| p.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let c0 = n as f64;
    let mut steps = vec![DynamicsStep {
        t: 0,
        c_t: c0,
        g_level: trim(offset_trd(target, c0, p_hat0)?),
        profile: p_hat0.to_vec(),
    }];
    let mut prev = p_hat0.to_vec();
    let mut converged = dist(&prev) < tol;
    let mut t = 0;
    while !converged && t < max_t {
        t += 1;
        let c_t = prev
            .iter()
            .zip(target)
            .enumerate()
            .filter(|(j, _)| *j != leader)
            .map(|(_, (p, tj))| p / tj)
            .sum::<f64>()
            + 1.0;
        let next = (0..n)
            .map(|i| {
                let others: Vec<f64> = prev
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| *v)
                    .collect();
                best_response_trd(spec, target, c_t, i, &others, TieBreak::Previous(prev[i])).map(|br| br.value())
            })
            .collect::<Result<Vec<f64>>>()?;
        steps.push(DynamicsStep {
            t,
            c_t,
            g_level: trim(offset_trd(target, c_t, &next)?),
            profile: next.clone(),
        });
        converged = dist(&next) < tol;
        prev = next;
    }
    Ok(DynamicsTrace {
        steps,
        converged,
        iterations: t,
        order,
        hypotheses_hold: violations.is_empty(),
        violations,
    })
}

/// The profile after `t` steps, from the explicit solution of the process.
pub fn closed_form_trajectory(target: &[f64], p_hat0: &[f64], t: usize) -> Result<StrategyProfile> {
    check_inputs(target, p_hat0)?;
    if t == 0 {
        return StrategyProfile::new(p_hat0.to_vec());
    }
    let r = ratios(target, p_hat0);
    let lead = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = 0.5f64.powi(t as i32);
    let p = r
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&ri, &ti))| {
            let d0 = lead - ri;
            if d0 < 2.0 {
                Ok(ti * (1.0 - d0 * scale))
            } else if ri <= 1.0 {
                Ok(ti * (1.0 - (1.0 - ri) * 2.0 * scale))
            } else {
                Err(Error::HypothesisViolation(format!(
                    "user {i}: ratio gap {d0} to the leader is at least 2 and own ratio {ri} exceeds 1"
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    StrategyProfile::new(p)
}

//! Manager intervention rules.
//!
//! A rule maps the users' profile (or what the manager can see of it) to the
//! manager's own transmission probability. Every rule output is trimmed to
//! `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{idle_probability, payoff, GameSpec, PayoffProfile, StrategyProfile};

/// Validates a target: one entry per user, each strictly inside `(0, 1)`.
pub fn check_target(target: &[f64]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::param("target must have at least one entry"));
    }
    for (index, &value) in target.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidTarget { index, value });
        }
    }
    Ok(())
}

fn check_len(target: &[f64], p: &[f64]) -> Result<()> {
    if p.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: p.len(),
        });
    }
    Ok(())
}

/// Sum of relative deviations `sum_i (p_i - t_i) / t_i`.
pub fn trd(target: &[f64], p: &[f64]) -> Result<f64> {
    check_target(target)?;
    check_len(target, p)?;
    Ok(target.iter().zip(p).map(|(t, pi)| (pi - t) / t).sum())
}

/// `sum_i p_i / t_i - offset`; equals [`trd`] when `offset == n`.
pub fn offset_trd(target: &[f64], offset: f64, p: &[f64]) -> Result<f64> {
    check_target(target)?;
    check_len(target, p)?;
    Ok(ratio_sum(target, p) - offset)
}

pub(crate) fn ratio_sum(target: &[f64], p: &[f64]) -> f64 {
    target.iter().zip(p).map(|(t, pi)| pi / t).sum()
}

/// `sum_i 1 / t_i`.
pub fn inverse_sum(target: &[f64]) -> f64 {
    target.iter().map(|t| 1.0 / t).sum()
}

#[inline]
pub(crate) fn trim(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Rule for a manager who sees only the idle probability `prod (1 - p_i)`
/// and targets the symmetric profile `(t, ..., t)`.
pub fn evaluate_aggregate(target: f64, n: usize, idle_prob: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidTarget {
            index: 0,
            value: target,
        });
    }
    if !(0.0..=1.0).contains(&idle_prob) {
        return Err(Error::InvalidProbability {
            index: 0,
            value: idle_prob,
        });
    }
    let ni = n as i32;
    let scale = target * (1.0 - target).powi(ni - 1);
    Ok(trim(((1.0 - target).powi(ni) - idle_prob) / scale))
}

/// Index of the interval holding `p` when `[0, 1]` is cut into `m` pieces
/// that each contain their right end point, with `{0}` as interval zero.
pub fn quantize_index(p: f64, m: u32) -> u32 {
    if p <= 0.0 {
        return 0;
    }
    let scaled = p * m as f64;
    // absorb round-off from profiles built as r / m
    let r = (scaled - 1e-9).ceil();
    (r.max(1.0) as u32).min(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum RuleRepr {
    Trd {
        target: Vec<f64>,
        #[serde(default)]
        offset: Option<f64>,
    },
    NoiseRobust {
        target: Vec<f64>,
        epsilon: f64,
    },
    Aggregate {
        target: f64,
        n: usize,
    },
    QuantizedTrd {
        target: Vec<f64>,
        m: u32,
    },
}

/// A manager policy.
///
/// JSON form: `{"variant":"trd","target":[..],"offset":2.0}`,
/// `{"variant":"noise_robust","target":[..],"epsilon":0.1}`,
/// `{"variant":"aggregate","target":0.5,"n":2}`,
/// `{"variant":"quantized_trd","target":[..],"m":5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr", into = "RuleRepr")]
pub enum InterventionRule {
    /// Trimmed `sum_i p_i / t_i - offset`. With `offset = n` this is the
    /// plain TRD rule that leaves the target untouched.
    Trd { target: Vec<f64>, offset: f64 },
    /// Linear rule whose expectation under uniform observation noise of
    /// half-width `epsilon` equals its noiseless value near the target.
    NoiseRobust { target: Vec<f64>, epsilon: f64 },
    /// Idle-probability rule for a symmetric target.
    Aggregate { target: f64, n: usize },
    /// TRD on the right end points of the observed intervals.
    QuantizedTrd { target: Vec<f64>, m: u32 },
}

impl TryFrom<RuleRepr> for InterventionRule {
    type Error = Error;

    fn try_from(value: RuleRepr) -> Result<Self> {
        match value {
            RuleRepr::Trd { target, offset } => match offset {
                Some(c) => InterventionRule::trd_with_offset(target, c),
                None => InterventionRule::trd(target),
            },
            RuleRepr::NoiseRobust { target, epsilon } => InterventionRule::noise_robust(target, epsilon),
            RuleRepr::Aggregate { target, n } => InterventionRule::aggregate(target, n),
            RuleRepr::QuantizedTrd { target, m } => InterventionRule::quantized(target, m),
        }
    }
}

impl From<InterventionRule> for RuleRepr {
    fn from(value: InterventionRule) -> Self {
        match value {
            InterventionRule::Trd { target, offset } => RuleRepr::Trd {
                target,
                offset: Some(offset),
            },
            InterventionRule::NoiseRobust { target, epsilon } => RuleRepr::NoiseRobust { target, epsilon },
            InterventionRule::Aggregate { target, n } => RuleRepr::Aggregate { target, n },
            InterventionRule::QuantizedTrd { target, m } => RuleRepr::QuantizedTrd { target, m },
        }
    }
}

impl InterventionRule {
    pub fn trd(target: Vec<f64>) -> Result<Self> {
        let n = target.len() as f64;
        Self::trd_with_offset(target, n)
    }

    pub fn trd_with_offset(target: Vec<f64>, offset: f64) -> Result<Self> {
        check_target(&target)?;
        if !offset.is_finite() {
            return Err(Error::param("offset must be finite"));
        }
        Ok(InterventionRule::Trd { target, offset })
    }

    pub fn noise_robust(target: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_target(&target)?;
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::param(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
        }
        let eq = epsilon * inverse_sum(&target);
        if 2.0 * eq / (1.0 + eq) > 1.0 + 1e-12 {
            return Err(Error::param(format!(
                "epsilon * sum(1/target) = {eq} exceeds 1; the rule would saturate near the target"
            )));
        }
        Ok(InterventionRule::NoiseRobust { target, epsilon })
    }

    pub fn aggregate(target: f64, n: usize) -> Result<Self> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::InvalidTarget {
                index: 0,
                value: target,
            });
        }
        if n == 0 {
            return Err(Error::param("aggregate rule needs at least one user"));
        }
        Ok(InterventionRule::Aggregate { target, n })
    }

    pub fn quantized(target: Vec<f64>, m: u32) -> Result<Self> {
        check_target(&target)?;
        if m < 2 {
            return Err(Error::param(format!("need at least 2 intervals, got {m}")));
        }
        Ok(InterventionRule::QuantizedTrd { target, m })
    }

    pub fn n(&self) -> usize {
        match self {
            InterventionRule::Trd { target, .. }
            | InterventionRule::NoiseRobust { target, .. }
            | InterventionRule::QuantizedTrd { target, .. } => target.len(),
            InterventionRule::Aggregate { n, .. } => *n,
        }
    }

    /// The profile the manager wants implemented.
    pub fn target_profile(&self) -> Vec<f64> {
        match self {
            InterventionRule::Trd { target, .. }
            | InterventionRule::NoiseRobust { target, .. }
            | InterventionRule::QuantizedTrd { target, .. } => target.clone(),
            InterventionRule::Aggregate { target, n } => vec![*target; *n],
        }
    }

    /// `epsilon * q / (1 + epsilon * q)` with `q = sum 1/t_i`: the level of
    /// the noise-robust rule at its target.
    pub fn noise_floor(target: &[f64], epsilon: f64) -> f64 {
        let eq = epsilon * inverse_sum(target);
        eq / (1.0 + eq)
    }

    /// Intervention level at `p`, always in `[0, 1]`.
    pub fn evaluate(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: p.len(),
            });
        }
        Ok(match self {
            InterventionRule::Trd { target, offset } => trim(ratio_sum(target, p) - offset),
            InterventionRule::NoiseRobust { target, epsilon } => {
                let n = target.len() as f64;
                let eq = epsilon * inverse_sum(target);
                let raw = ratio_sum(target, p) / (1.0 + eq) - n + (n + 1.0) * eq / (1.0 + eq);
                trim(raw)
            }
            InterventionRule::Aggregate { target, n } => evaluate_aggregate(*target, *n, idle_probability(p))?,
            InterventionRule::QuantizedTrd { target, m } => {
                let snapped: Vec<f64> = p.iter().map(|&pi| quantize_index(pi, *m) as f64 / *m as f64).collect();
                trim(ratio_sum(target, &snapped) - target.len() as f64)
            }
        })
    }

    /// Manager objective: `1 - g(p)` when `p` is exactly the target, else 0.
    pub fn manager_payoff(&self, p: &[f64]) -> Result<ManagerPayoff> {
        let g = self.evaluate(p)?;
        let on_target = self.target_profile().as_slice() == p;
        Ok(ManagerPayoff(if on_target { 1.0 - g } else { 0.0 }))
    }
}

/// The manager's payoff, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ManagerPayoff(pub f64);

/// `(1 - g(p)) * u_i(p)` for every user.
pub fn intervened_payoff(spec: &GameSpec, rule: &InterventionRule, p: &[f64]) -> Result<PayoffProfile> {
    StrategyProfile::new(p.to_vec())?;
    let g = rule.evaluate(p)?;
    Ok(payoff(spec, p)?.scaled(1.0 - g))
}

//! Best responses and equilibrium verification for the game with an
//! intervening manager.
//!
//! Closed forms are used wherever the rule is a (possibly offset) TRD rule;
//! everything else falls back to bounded numeric search, and verdicts that
//! rest on search carry their budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{others_idle, GameSpec};
use crate::intervention::{check_target, intervened_payoff, ratio_sum, trim, InterventionRule};
use crate::search::{maximize_unit_interval, search_improvement, SearchBudget, STRICT_TOL};

pub use crate::game::ParetoVerdict;

/// Equality tolerance when matching a profile against the target.
pub const TARGET_TOL: f64 = 1e-12;

/// What to report when every choice of the responder yields zero payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TieBreak {
    /// Keep the responder's previous probability.
    Previous(f64),
    /// Use the vertex of the linear band, `t_i (1 - s) / 2`, trimmed to `[0, 1]`.
    Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BestResponseKind {
    Unique {
        p: f64,
    },
    /// Every probability is a best response; `canonical` is the one chosen.
    Indifferent {
        canonical: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub kind: BestResponseKind,
    pub payoff_at: f64,
}

impl BestResponse {
    pub fn value(&self) -> f64 {
        match self.kind {
            BestResponseKind::Unique { p } => p,
            BestResponseKind::Indifferent { canonical } => canonical,
        }
    }

    pub fn is_indifferent(&self) -> bool {
        matches!(self.kind, BestResponseKind::Indifferent { .. })
    }
}

/// Best response of user `i` to the other users' probabilities under the
/// trimmed rule `[sum_j p_j / t_j - offset]_0^1`.
///
/// `others` lists every user except `i`, in index order.
pub fn best_response_trd(
    spec: &GameSpec,
    target: &[f64],
    offset: f64,
    i: usize,
    others: &[f64],
    tie: TieBreak,
) -> Result<BestResponse> {
    check_target(target)?;
    let n = spec.n();
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: target.len(),
        });
    }
    if i >= n {
        return Err(Error::param(format!("user index {i} out of range for {n} users")));
    }
    if others.len() + 1 != n {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: others.len(),
        });
    }
    let ti = target[i];
    let rest: f64 = others.iter().map(|p| 1.0 - p).product();
    let s: f64 = others
        .iter()
        .zip(target.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t))
        .map(|(p, t)| p / t)
        .sum::<f64>()
        - offset;

    let value_at = |p: f64| spec.k()[i] * p * (1.0 - trim(p / ti + s)) * rest;

    if rest == 0.0 || s >= 1.0 {
        let canonical = match tie {
            TieBreak::Previous(prev) => prev,
            TieBreak::Vertex => (ti * (1.0 - s) / 2.0).clamp(0.0, 1.0),
        };
        return Ok(BestResponse {
            kind: BestResponseKind::Indifferent { canonical },
            payoff_at: 0.0,
        });
    }
    let p = if s >= -1.0 {
        (ti * (1.0 - s) / 2.0).clamp(0.0, 1.0)
    } else {
        (-s * ti).min(1.0)
    };
    Ok(BestResponse {
        kind: BestResponseKind::Unique { p },
        payoff_at: value_at(p),
    })
}

/// A user together with a deviation that strictly raises its payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub user: usize,
    pub deviation: f64,
    pub payoff_before: f64,
    pub payoff_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    Target,
    SecondClass,
    BoundaryPiEqualsOne,
    NotEquilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumVerdict {
    pub class: VerdictClass,
    pub witness: Option<Witness>,
}

impl EquilibriumVerdict {
    pub fn is_equilibrium(&self) -> bool {
        self.class != VerdictClass::NotEquilibrium
    }
}

fn trd_deviation_witness(spec: &GameSpec, target: &[f64], offset: f64, p: &[f64]) -> Result<Option<Witness>> {
    let rule = InterventionRule::trd_with_offset(target.to_vec(), offset)?;
    let current = intervened_payoff(spec, &rule, p)?;
    let mut best: Option<Witness> = None;
    for i in 0..p.len() {
        let others: Vec<f64> = p.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
        let br = best_response_trd(spec, target, offset, i, &others, TieBreak::Previous(p[i]))?;
        let gain = br.payoff_at - current[i];
        if gain
            > best
                .as_ref()
                .map_or(f64::NEG_INFINITY, |w| w.payoff_after - w.payoff_before)
        {
            best = Some(Witness {
                user: i,
                deviation: br.value(),
                payoff_before: current[i],
                payoff_after: br.payoff_at,
            });
        }
    }
    Ok(best)
}

fn profile_matches(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= TARGET_TOL)
}

/// Classifies `p_hat` as an equilibrium of the game under the plain TRD rule
/// for `target`.
///
/// With every entry below one, the profile is an equilibrium exactly when it
/// is the target or when, for every user, the other users' relative
/// deviations already sum to at least 2. Profiles with some entry equal to
/// one are checked user by user against the closed-form best response.
pub fn is_nash_intervened(spec: &GameSpec, target: &[f64], p_hat: &[f64]) -> Result<EquilibriumVerdict> {
    check_target(target)?;
    spec.check(target)?;
    spec.check(p_hat)?;
    crate::game::StrategyProfile::new(p_hat.to_vec())?;
    let n = spec.n() as f64;

    if p_hat.iter().any(|&p| p >= 1.0) {
        let witness = trd_deviation_witness(spec, target, n, p_hat)?;
        return Ok(match witness {
            Some(w) if w.payoff_after - w.payoff_before > STRICT_TOL => EquilibriumVerdict {
                class: VerdictClass::NotEquilibrium,
                witness: Some(w),
            },
            _ => EquilibriumVerdict {
                class: VerdictClass::BoundaryPiEqualsOne,
                witness: None,
            },
        });
    }
    if profile_matches(p_hat, target) {
        return Ok(EquilibriumVerdict {
            class: VerdictClass::Target,
            witness: None,
        });
    }
    let second_class = others_deviation_sums(target, p_hat).iter().all(|&s| s >= 2.0);
    if second_class {
        return Ok(EquilibriumVerdict {
            class: VerdictClass::SecondClass,
            witness: None,
        });
    }
    let witness = trd_deviation_witness(spec, target, n, p_hat)?;
    Ok(EquilibriumVerdict {
        class: VerdictClass::NotEquilibrium,
        witness,
    })
}

/// The relative-deviation sums `sum_{j != i} (p_j - t_j) / t_j` for every `i`.
pub fn others_deviation_sums(target: &[f64], p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            p.iter()
                .zip(target)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (p, t))| (p - t) / t)
                .sum()
        })
        .collect()
}

/// Grid resolution of the one-dimensional deviation scan used for rules
/// without a closed-form best response.
pub const DEVIATION_GRID: usize = 4000;

fn rule_breakpoints(rule: &InterventionRule, p: &[f64], i: usize) -> Vec<f64> {
    let mut pts = vec![p[i]];
    match rule {
        InterventionRule::QuantizedTrd { m, .. } => {
            pts.extend((0..=*m).map(|r| r as f64 / *m as f64));
        }
        InterventionRule::Trd { target, offset } => {
            let s = ratio_sum(target, p) - p[i] / target[i] - offset;
            let t = target[i];
            pts.extend([-s * t, (1.0 - s) * t, t * (1.0 - s) / 2.0]);
        }
        _ => pts.extend(rule.target_profile().get(i).copied()),
    }
    pts
}

/// Numeric unilateral-deviation check under an arbitrary rule. Returns the
/// most profitable deviation found, if it beats the current payoff by more
/// than [`STRICT_TOL`].
pub fn find_unilateral_deviation(spec: &GameSpec, rule: &InterventionRule, p: &[f64]) -> Result<Option<Witness>> {
    spec.check(p)?;
    let current = intervened_payoff(spec, rule, p)?;
    let mut best: Option<Witness> = None;
    for i in 0..p.len() {
        let f = |q: f64| {
            let mut alt = p.to_vec();
            alt[i] = q;
            intervened_payoff(spec, rule, &alt)
                .map(|u| u[i])
                .unwrap_or(f64::NEG_INFINITY)
        };
        let (q, v) = maximize_unit_interval(&f, DEVIATION_GRID, &rule_breakpoints(rule, p, i));
        let gain = v - current[i];
        if gain > STRICT_TOL && best.as_ref().is_none_or(|w| gain > w.payoff_after - w.payoff_before) {
            best = Some(Witness {
                user: i,
                deviation: q,
                payoff_before: current[i],
                payoff_after: v,
            });
        }
    }
    Ok(best)
}

/// Whether `(rule, p_hat)` is a leader-follower equilibrium: `p_hat` is the
/// rule's target, the rule does not intervene there, and no user gains by
/// deviating alone.
pub fn is_stackelberg(spec: &GameSpec, rule: &InterventionRule, p_hat: &[f64]) -> Result<bool> {
    spec.check(p_hat)?;
    if rule.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            got: rule.n(),
        });
    }
    if rule.target_profile().as_slice() != p_hat {
        return Ok(false);
    }
    if rule.evaluate(p_hat)? != 0.0 {
        return Ok(false);
    }
    match rule {
        InterventionRule::Trd { target, offset } => {
            let w = trd_deviation_witness(spec, target, *offset, p_hat)?;
            Ok(w.is_none_or(|w| w.payoff_after - w.payoff_before <= STRICT_TOL))
        }
        _ => Ok(find_unilateral_deviation(spec, rule, p_hat)?.is_none()),
    }
}

/// Two users can jointly improve on the target under plain TRD exactly when
/// their target probabilities sum above one.
pub fn pair_coalition_proof(target: &[f64], i: usize, j: usize) -> Result<bool> {
    check_target(target)?;
    if i == j {
        return Err(Error::param("a pair coalition needs two distinct users"));
    }
    if i >= target.len() || j >= target.len() {
        return Err(Error::param("coalition member out of range"));
    }
    Ok(target[i] + target[j] <= 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CoalitionVerdict {
    /// No joint deviation found within the budget.
    Proof { budget: SearchBudget },
    Deviation {
        members: Vec<usize>,
        /// Probabilities of the members, in `members` order.
        profile: Vec<f64>,
        /// Payoff change of each member, in `members` order.
        gains: Vec<f64>,
        budget: SearchBudget,
    },
}

impl CoalitionVerdict {
    pub fn is_proof(&self) -> bool {
        matches!(self, CoalitionVerdict::Proof { .. })
    }
}

fn check_members(n: usize, members: &[usize]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::param("coalition must be nonempty"));
    }
    for (a, &m) in members.iter().enumerate() {
        if m >= n {
            return Err(Error::param(format!("coalition member {m} out of range")));
        }
        if members[..a].contains(&m) {
            return Err(Error::param(format!("coalition member {m} listed twice")));
        }
    }
    Ok(())
}

/// Searches for a joint deviation of `members` from the target under plain
/// TRD that weakly helps every member and strictly helps one.
pub fn find_coalition_deviation(
    spec: &GameSpec,
    target: &[f64],
    members: &[usize],
    budget: &SearchBudget,
) -> Result<CoalitionVerdict> {
    check_target(target)?;
    spec.check(target)?;
    check_members(spec.n(), members)?;
    let rule = InterventionRule::trd(target.to_vec())?;
    let base = intervened_payoff(spec, &rule, target)?;
    let k = spec.k();
    let origin: Vec<f64> = members.iter().map(|&m| target[m]).collect();
    let found = search_improvement(&origin, budget, |x| {
        let mut p = target.to_vec();
        for (&m, &v) in members.iter().zip(x) {
            p[m] = v;
        }
        let u = intervened_payoff(spec, &rule, &p).expect("validated");
        members.iter().map(|&m| (u[m] - base[m]) / k[m]).collect()
    });
    Ok(match found {
        None => CoalitionVerdict::Proof { budget: *budget },
        Some(imp) => CoalitionVerdict::Deviation {
            members: members.to_vec(),
            gains: imp.gains.iter().zip(members).map(|(g, &m)| g * k[m]).collect(),
            profile: imp.point,
            budget: *budget,
        },
    })
}

/// Pareto check on the payoffs of the game under `rule`.
pub fn is_pareto_efficient_under(
    spec: &GameSpec,
    rule: &InterventionRule,
    p: &[f64],
    budget: &SearchBudget,
) -> Result<ParetoVerdict> {
    let base = intervened_payoff(spec, rule, p)?;
    let k = spec.k();
    let found = search_improvement(p, budget, |q| {
        let u = intervened_payoff(spec, rule, q).expect("validated");
        u.iter()
            .zip(base.iter())
            .zip(k)
            .map(|((a, b), k)| (a - b) / k)
            .collect()
    });
    Ok(match found {
        None => ParetoVerdict::Efficient { budget: *budget },
        Some(imp) => ParetoVerdict::DominatedBy {
            payoff: intervened_payoff(spec, rule, &imp.point)?.0,
            profile: imp.point,
            budget: *budget,
        },
    })
}

/// Condition under which the corner profile `e_i` is Pareto dominated by the
/// target under plain TRD, `1 + n - 1/t_i < t_i prod_{j != i} (1 - t_j)`,
/// taken as stated.
pub fn ei_dominance_condition(target: &[f64], i: usize) -> Result<bool> {
    check_target(target)?;
    if i >= target.len() {
        return Err(Error::param(format!("user index {i} out of range")));
    }
    let n = target.len() as f64;
    let rest: f64 = target
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, t)| 1.0 - t)
        .product();
    Ok(1.0 + n - 1.0 / target[i] < target[i] * rest)
}

/// A user's belief about how `(1 - p_0) prod_{j != i} (1 - p_j)` responds
/// to its own probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conjecture {
    /// `[a - b p]_0^1`.
    TrimmedLinear { a: f64, b: f64 },
    /// `value` at `at`, zero everywhere else.
    Point { at: f64, value: f64 },
}

/// Central-difference step for slope checks.
const FD_STEP: f64 = 1e-6;

impl Conjecture {
    pub fn trimmed_linear(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(Error::param(format!(
                "conjecture needs a >= 0 and b > 0, got a={a}, b={b}"
            )));
        }
        Ok(Conjecture::TrimmedLinear { a, b })
    }

    pub fn value(&self, p: f64) -> f64 {
        match *self {
            Conjecture::TrimmedLinear { a, b } => trim(a - b * p),
            Conjecture::Point { at, value } => {
                if p == at {
                    value
                } else {
                    0.0
                }
            }
        }
    }

    fn candidates(&self) -> Vec<f64> {
        match *self {
            Conjecture::TrimmedLinear { a, b } => vec![a / (2.0 * b), a / b, (a - 1.0) / b],
            Conjecture::Point { at, .. } => vec![at],
        }
    }

    /// The conjecture obtained by extending the TRD band through the target:
    /// `prod_{j != i} (1 - t_j) (2 - p / t_i)`.
    pub fn trd_tangent(target: &[f64], i: usize) -> Result<Self> {
        check_target(target)?;
        let c = others_idle(target)[i];
        Self::trimmed_linear(2.0 * c, c / target[i])
    }

    /// Trimmed-linear conjecture matching value and slope of the observed
    /// quantity at `p_hat`.
    pub fn linearly_consistent_with(rule: &InterventionRule, p_hat: &[f64], i: usize) -> Result<Self> {
        let slope = rule_slope(rule, p_hat, i)?;
        let c = others_idle(p_hat)[i];
        let value = (1.0 - rule.evaluate(p_hat)?) * c;
        let b = slope * c;
        if b <= 0.0 {
            return Err(Error::param(
                "observed quantity is not decreasing here; no trimmed-linear fit",
            ));
        }
        Self::trimmed_linear(value + b * p_hat[i], b)
    }
}

fn one_sided(f: impl Fn(f64) -> Result<f64>, x: f64) -> Result<(f64, f64, f64)> {
    let fx = f(x)?;
    let right = (f(x + FD_STEP)? - fx) / FD_STEP;
    let left = (fx - f(x - FD_STEP)?) / FD_STEP;
    if (right - left).abs() > 1e-3 {
        return Err(Error::NonEvaluable(format!(
            "one-sided slopes {left:.6} and {right:.6} differ at {x}"
        )));
    }
    let central = (f(x + FD_STEP)? - f(x - FD_STEP)?) / (2.0 * FD_STEP);
    Ok((left, right, central))
}

/// `d g / d p_i` at `p`, or [`Error::NonEvaluable`] at a kink.
pub fn rule_slope(rule: &InterventionRule, p: &[f64], i: usize) -> Result<f64> {
    if i >= p.len() {
        return Err(Error::param(format!("user index {i} out of range")));
    }
    let g = |x: f64| {
        let mut q = p.to_vec();
        q[i] = x;
        rule.evaluate(&q)
    };
    Ok(one_sided(g, p[i])?.2)
}

/// Value and first-derivative agreement of a conjecture with the observed
/// quantity at `p_hat`.
pub fn is_linearly_consistent(rule: &InterventionRule, p_hat: &[f64], i: usize, conj: &Conjecture) -> Result<bool> {
    if p_hat.len() != rule.n() {
        return Err(Error::DimensionMismatch {
            expected: rule.n(),
            got: p_hat.len(),
        });
    }
    let c = others_idle(p_hat)[i];
    let observed = (1.0 - rule.evaluate(p_hat)?) * c;
    let g_slope = rule_slope(rule, p_hat, i)?;
    let f_slope = one_sided(|x| Ok(conj.value(x)), p_hat[i])?.2;
    let value_ok = (conj.value(p_hat[i]) - observed).abs() <= 1e-9;
    let slope_ok = (f_slope + g_slope * c).abs() <= 1e-4;
    Ok(value_ok && slope_ok)
}

/// Grid used for the optimality clause of the conjectural check.
pub const CONJECTURE_GRID: usize = 20_000;

/// Whether `p_hat` with the given conjectures is a conjectural equilibrium:
/// each `p_hat_i` is optimal against its conjecture (to 1e-8) and each
/// conjecture reproduces the observed quantity at `p_hat` (to 1e-9).
pub fn is_conjectural_equilibrium(
    spec: &GameSpec,
    rule: &InterventionRule,
    p_hat: &[f64],
    conjectures: &[Conjecture],
) -> Result<bool> {
    spec.check(p_hat)?;
    if conjectures.len() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            got: conjectures.len(),
        });
    }
    let g = rule.evaluate(p_hat)?;
    let rest = others_idle(p_hat);
    for (i, conj) in conjectures.iter().enumerate() {
        let k = spec.k()[i];
        let objective = |p: f64| k * p * conj.value(p);
        let mut extra = conj.candidates();
        extra.push(p_hat[i]);
        let (_, best) = maximize_unit_interval(&objective, CONJECTURE_GRID, &extra);
        if objective(p_hat[i]) < best - 1e-8 {
            return Ok(false);
        }
        if (conj.value(p_hat[i]) - (1.0 - g) * rest[i]).abs() > 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

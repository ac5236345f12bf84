//! Summary tables for homogeneous and heterogeneous populations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{payoff, utilization, GameSpec, StrategyProfile};
use crate::targets::{
    egalitarian_target, floor_underflow, nash_bargaining_target, nash_product, nonsymmetric_nash_target,
    BargainingProblem, SolverConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub n: usize,
    pub individual_payoff: f64,
    pub utilization: f64,
}

fn check_list(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::param("need at least one population size"));
    }
    if n_list.contains(&0) {
        return Err(Error::param("population size must be at least 1"));
    }
    Ok(())
}

/// Homogeneous users (`k = 1`) at the symmetric target `1/n`.
pub fn table1(n_list: &[usize]) -> Result<Vec<Table1Row>> {
    check_list(n_list)?;
    n_list
        .iter()
        .map(|&n| {
            let spec = GameSpec::homogeneous(n)?;
            let p = nash_bargaining_target(&BargainingProblem::new(spec.clone()))?;
            Ok(Table1Row {
                n,
                individual_payoff: payoff(&spec, &p)?[0],
                utilization: utilization(&p),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Proportional to valuation.
    Proportional,
    /// Uniform.
    Uniform,
    /// Equal payoffs.
    Egalitarian,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::Proportional, TargetKind::Uniform, TargetKind::Egalitarian];

    pub fn label(self) -> &'static str {
        match self {
            TargetKind::Proportional => "p1",
            TargetKind::Uniform => "p2",
            TargetKind::Egalitarian => "p3",
        }
    }

    pub fn profile(self, spec: &GameSpec, solver: SolverConfig) -> Result<StrategyProfile> {
        match self {
            TargetKind::Proportional => {
                nonsymmetric_nash_target(&BargainingProblem::new(spec.clone()).with_weights(spec.k().to_vec())?)
            }
            TargetKind::Uniform => nash_bargaining_target(&BargainingProblem::new(spec.clone())),
            TargetKind::Egalitarian => egalitarian_target(spec, solver),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Values {
    pub average_payoff: f64,
    pub aggregate_payoff: f64,
    pub payoff_std_dev: f64,
    pub utilization: f64,
    pub nash_product: f64,
    /// Weighted by valuation.
    pub generalized_nash_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub target: TargetKind,
    pub n: usize,
    pub values: Option<Table2Values>,
    pub error: Option<String>,
}

/// Statistics of a target under valuations `k`. Products below the
/// underflow floor are reported as zero.
pub fn target_statistics(spec: &GameSpec, p: &[f64]) -> Result<Table2Values> {
    let u = payoff(spec, p)?;
    Ok(Table2Values {
        average_payoff: u.mean(),
        aggregate_payoff: u.sum(),
        payoff_std_dev: u.std_dev(),
        utilization: utilization(p),
        nash_product: floor_underflow(nash_product(spec, p, None)?),
        generalized_nash_product: floor_underflow(nash_product(spec, p, Some(spec.k()))?),
    })
}

/// Heterogeneous users with `k_i = i` under the three targets. A failed
/// target is reported on its row rather than aborting the table.
pub fn table2(n_list: &[usize], solver: SolverConfig) -> Result<Vec<Table2Row>> {
    check_list(n_list)?;
    let mut rows = Vec::new();
    for target in TargetKind::ALL {
        for &n in n_list {
            let spec = GameSpec::ramp(n)?;
            let result = target.profile(&spec, solver).and_then(|p| target_statistics(&spec, &p));
            rows.push(match result {
                Ok(v) => Table2Row {
                    target,
                    n,
                    values: Some(v),
                    error: None,
                },
                Err(e) => Table2Row {
                    target,
                    n,
                    values: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(rows)
}

fn sci(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.5e}")
    }
}

/// CSV with five decimals.
pub fn render_table1(rows: &[Table1Row]) -> String {
    let mut s = String::from("n,individual_payoff,utilization\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.5},{:.5}", r.n, r.individual_payoff, r.utilization);
    }
    s
}

/// CSV with five decimals; products in scientific notation.
pub fn render_table2(rows: &[Table2Row]) -> String {
    let mut s = String::from(
        "target,n,average_payoff,aggregate_payoff,payoff_std_dev,utilization,nash_product,generalized_nash_product\n",
    );
    for r in rows {
        let _ = match (&r.values, &r.error) {
            (Some(v), _) => writeln!(
                s,
                "{},{},{:.5},{:.5},{:.5},{:.5},{},{}",
                r.target.label(),
                r.n,
                v.average_payoff,
                v.aggregate_payoff,
                v.payoff_std_dev,
                v.utilization,
                sci(v.nash_product),
                sci(v.generalized_nash_product)
            ),
            (None, e) => writeln!(
                s,
                "{},{},\"error: {}\"",
                r.target.label(),
                r.n,
                e.as_deref().unwrap_or("unknown").replace('"', "\"\"")
            ),
        };
    }
    s
}

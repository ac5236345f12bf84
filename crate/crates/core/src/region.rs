//! Achievable payoff regions under different observation constraints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{grid_profiles, payoff, sample_feasible_region, GameSpec, RegionSample, SamplingPlan};
use crate::intervention::inverse_sum;
use crate::targets::quantized_target_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegionMode {
    /// Every profile; the manager can implement any interior target.
    Base,
    /// Targets restricted to `{1/m, ..., (m-1)/m}^n`.
    Quantized { m: u32 },
    /// Targets in `[2 eps, 1 - 2 eps]^n`, payoffs reduced by the residual
    /// intervention `eps q / (1 + eps q)`.
    Noisy { epsilon: f64 },
    /// Symmetric targets only.
    Aggregate,
}

/// Payoff points for `mode`. `points_per_axis` sets the grid density for
/// every mode except `Quantized`, whose grid is fixed by `m`.
pub fn region(spec: &GameSpec, mode: RegionMode, points_per_axis: usize) -> Result<Vec<RegionSample>> {
    let n = spec.n();
    let sample = |p: Vec<f64>, scale: f64| -> Result<RegionSample> {
        let u = payoff(spec, &p)?.scaled(scale);
        Ok(RegionSample { p, u: u.0 })
    };
    match mode {
        RegionMode::Base => sample_feasible_region(spec, SamplingPlan::Grid { points_per_axis }),
        RegionMode::Quantized { m } => quantized_target_grid(n, m)?
            .map(|p| sample(p.into_vec(), 1.0))
            .collect(),
        RegionMode::Noisy { epsilon } => {
            if !(epsilon > 0.0 && epsilon < 0.25) {
                return Err(Error::param(format!("epsilon must lie in (0, 0.25), got {epsilon}")));
            }
            let lo = 2.0 * epsilon;
            let width = 1.0 - 4.0 * epsilon;
            grid_profiles(n, points_per_axis)?
                .into_par_iter()
                .map(|unit| unit.iter().map(|x| lo + width * x).collect::<Vec<f64>>())
                .filter(|t| epsilon * inverse_sum(t) <= 1.0)
                .map(|t| {
                    let eq = epsilon * inverse_sum(&t);
                    sample(t, 1.0 - eq / (1.0 + eq))
                })
                .collect()
        }
        RegionMode::Aggregate => {
            if points_per_axis < 2 {
                return Err(Error::EmptyPlan);
            }
            (1..points_per_axis)
                .map(|j| sample(vec![j as f64 / points_per_axis as f64; n], 1.0))
                .collect()
        }
    }
}

/// How far `other` falls short of covering `reference`: the largest, over
/// reference points, of the smallest shortfall `max_i (b_i - q_i)^+` to any
/// point `q` of `other`.
pub fn dominance_gap(reference: &[RegionSample], other: &[RegionSample]) -> f64 {
    reference
        .par_iter()
        .map(|b| {
            other
                .iter()
                .map(|q| b.u.iter().zip(&q.u).map(|(b, q)| (b - q).max(0.0)).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
}

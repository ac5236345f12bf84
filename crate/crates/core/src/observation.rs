//! Slot-level channel simulation, the manager's estimator and the models of
//! what the manager observes.
//!
//! Randomness comes from ChaCha8 with an explicit 64-bit seed. User `i`
//! (zero-based) draws from stream `i` and the manager from stream `n`; draw
//! `s` of a stream is always the same number, however slots are batched.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{idle_probability, GameSpec, StrategyProfile};
use crate::intervention::{quantize_index, InterventionRule};

const BATCH: usize = 1 << 16;

/// `len` uniforms from `stream`, starting at draw `start`.
fn uniforms(seed: u64, stream: u64, start: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // one f64 consumes two 32-bit words
    rng.set_word_pos(2 * start as u128);
    (0..len).map(|_| rng.random::<f64>()).collect()
}

/// Slot outcome. Transmitter `0` is the manager; users are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Idle,
    Success(u32),
    Collision,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Idle => write!(f, "I"),
            Outcome::Success(i) => write!(f, "S{i}"),
            Outcome::Collision => write!(f, "C"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub n: usize,
    pub manager_p0: f64,
    pub rng_seed: u64,
    pub outcomes: Vec<Outcome>,
    /// Slots in which the manager transmitted.
    pub manager_active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub idle: u64,
    /// Successes of users `1..=n`, zero-based here.
    pub success: Vec<u64>,
    pub manager_success: u64,
    pub collision: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.idle + self.success.iter().sum::<u64>() + self.manager_success + self.collision
    }
}

impl SlotTrace {
    pub fn slot_count(&self) -> usize {
        self.outcomes.len()
    }

    fn tally<'a>(n: usize, it: impl Iterator<Item = &'a Outcome>) -> OutcomeCounts {
        let mut c = OutcomeCounts {
            idle: 0,
            success: vec![0; n],
            manager_success: 0,
            collision: 0,
        };
        for o in it {
            match *o {
                Outcome::Idle => c.idle += 1,
                Outcome::Success(0) => c.manager_success += 1,
                Outcome::Success(i) => c.success[i as usize - 1] += 1,
                Outcome::Collision => c.collision += 1,
            }
        }
        c
    }

    pub fn counts(&self) -> OutcomeCounts {
        Self::tally(self.n, self.outcomes.iter())
    }

    /// Counts over the slots in which the manager stayed silent.
    pub fn manager_idle_counts(&self) -> OutcomeCounts {
        Self::tally(
            self.n,
            self.outcomes
                .iter()
                .zip(&self.manager_active)
                .filter(|(_, m)| !**m)
                .map(|(o, _)| o),
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "slot,outcome")?;
        for (s, o) in self.outcomes.iter().enumerate() {
            writeln!(out, "{s},{o}")?;
        }
        Ok(())
    }
}

/// Simulates `slots` slots in which each user transmits independently with
/// probability `p_i` and the manager with probability `manager_p0`.
pub fn simulate(spec: &GameSpec, p: &[f64], manager_p0: f64, slots: usize, seed: u64) -> Result<SlotTrace> {
    spec.check(p)?;
    StrategyProfile::new(p.to_vec())?;
    if !(0.0..=1.0).contains(&manager_p0) {
        return Err(Error::param(format!("manager probability {manager_p0} outside [0, 1]")));
    }
    if slots == 0 {
        return Err(Error::param("need at least one slot"));
    }
    let n = p.len();
    let batches: Vec<(Vec<Outcome>, Vec<bool>)> = (0..slots.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let len = BATCH.min(slots - start);
            let draws: Vec<Vec<f64>> = (0..=n).map(|s| uniforms(seed, s as u64, start, len)).collect();
            let mut outcomes = Vec::with_capacity(len);
            let mut manager = Vec::with_capacity(len);
            for s in 0..len {
                let m = draws[n][s] < manager_p0;
                let mut count = m as usize;
                let mut who = 0u32;
                for i in 0..n {
                    if draws[i][s] < p[i] {
                        count += 1;
                        who = i as u32 + 1;
                    }
                }
                outcomes.push(match count {
                    0 => Outcome::Idle,
                    1 => Outcome::Success(who),
                    _ => Outcome::Collision,
                });
                manager.push(m);
            }
            (outcomes, manager)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(slots);
    let mut manager_active = Vec::with_capacity(slots);
    for (o, m) in batches {
        outcomes.extend(o);
        manager_active.extend(m);
    }
    Ok(SlotTrace {
        n,
        manager_p0,
        rng_seed: seed,
        outcomes,
        manager_active,
    })
}

/// 97.5% standard normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub slots_used: u64,
    pub q_idle: f64,
    pub q_i: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Half-widths of approximate 95% intervals (normal approximation).
    pub confidence: Vec<f64>,
}

/// Estimates each `p_i` as `q_i / (q_i + q_idle)` from the slots in which
/// the manager was silent.
pub fn estimate_probabilities(trace: &SlotTrace, n: usize) -> Result<EstimateReport> {
    if n != trace.n {
        return Err(Error::DimensionMismatch {
            expected: trace.n,
            got: n,
        });
    }
    let c = trace.manager_idle_counts();
    let total = c.total();
    if c.idle == 0 {
        return Err(Error::EstimationUndefined {
            users: (0..n).collect(),
        });
    }
    let nf = total as f64;
    let q_idle = c.idle as f64 / nf;
    let q_i: Vec<f64> = c.success.iter().map(|s| *s as f64 / nf).collect();
    let p_hat = q_i.iter().map(|a| a / (a + q_idle)).collect();
    // delta method on the ratio a / (a + b)
    let confidence = q_i
        .iter()
        .map(|a| Z95 * (a * q_idle / (nf * (a + q_idle).powi(3))).sqrt())
        .collect();
    Ok(EstimateReport {
        slots_used: total,
        q_idle,
        q_i,
        p_hat,
        confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ObservationModel {
    Exact,
    Quantized {
        m: u32,
    },
    /// Uniform noise of half-width `epsilon`, drawn independently per user.
    Noisy {
        epsilon: f64,
    },
    AggregateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Observation {
    Profile(Vec<f64>),
    Indices(Vec<u32>),
    Aggregate(f64),
}

fn check_noisy_domain(p: &[f64], epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::param(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| **v < epsilon || **v > 1.0 - epsilon) {
        return Err(Error::param(format!(
            "p_{i} = {v} outside the noisy domain [{epsilon}, {}]",
            1.0 - epsilon
        )));
    }
    Ok(())
}

/// What the manager sees of `p`. Noisy draws use `seed`, or 0 when absent.
pub fn observe(model: ObservationModel, p: &[f64], seed: Option<u64>) -> Result<Observation> {
    StrategyProfile::new(p.to_vec())?;
    Ok(match model {
        ObservationModel::Exact => Observation::Profile(p.to_vec()),
        ObservationModel::Quantized { m } => {
            if m < 2 {
                return Err(Error::param(format!("need at least 2 intervals, got {m}")));
            }
            Observation::Indices(p.iter().map(|&x| quantize_index(x, m)).collect())
        }
        ObservationModel::Noisy { epsilon } => {
            check_noisy_domain(p, epsilon)?;
            let seed = seed.unwrap_or(0);
            Observation::Profile(
                p.iter()
                    .enumerate()
                    .map(|(i, x)| x + epsilon * (2.0 * uniforms(seed, i as u64, 0, 1)[0] - 1.0))
                    .collect(),
            )
        }
        ObservationModel::AggregateOnly => Observation::Aggregate(idle_probability(p)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `E[g(p^o) | p]` when each observed entry is
/// uniform on `[p_i - epsilon, p_i + epsilon]`.
pub fn expected_intervention(
    rule: &InterventionRule,
    p: &[f64],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if p.len() != rule.n() {
        return Err(Error::DimensionMismatch {
            expected: rule.n(),
            got: p.len(),
        });
    }
    check_noisy_domain(p, epsilon)?;
    if samples < 2 {
        return Err(Error::param("need at least two samples"));
    }
    let n = p.len();
    let sums = (0..samples.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH;
            let len = BATCH.min(samples - start);
            let draws: Vec<Vec<f64>> = (0..n).map(|i| uniforms(seed, i as u64, start, len)).collect();
            let mut obs = vec![0.0; n];
            let (mut s1, mut s2) = (0.0, 0.0);
            for s in 0..len {
                for i in 0..n {
                    obs[i] = p[i] + epsilon * (2.0 * draws[i][s] - 1.0);
                }
                let g = rule.evaluate(&obs)?;
                s1 += g;
                s2 += g * g;
            }
            Ok((s1, s2))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = samples as f64;
    let mean = s1 / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / nf).sqrt(),
        samples,
    })
}

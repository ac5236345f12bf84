//! The base contention game: users pick fixed per-slot transmission
//! probabilities and a slot succeeds for user `i` only when `i` is the sole
//! transmitter.

use std::io::{self, Write};
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{search_improvement, SearchBudget};

/// Number of users and their per-success valuations `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameSpecRepr")]
pub struct GameSpec {
    k: Vec<f64>,
}

#[derive(Deserialize)]
struct GameSpecRepr {
    k: Vec<f64>,
}

impl TryFrom<GameSpecRepr> for GameSpec {
    type Error = Error;

    fn try_from(value: GameSpecRepr) -> Result<Self> {
        GameSpec::new(value.k)
    }
}

impl GameSpec {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::param("a game needs at least one user"));
        }
        for (index, &value) in k.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidValuation { index, value });
            }
        }
        Ok(Self { k })
    }

    /// `n` users with unit valuation.
    pub fn homogeneous(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    /// `n` users with `k_i = i` (1-based).
    pub fn ramp(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| i as f64).collect())
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Checks that `p` has one entry per user.
    pub fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: p.len(),
            });
        }
        Ok(())
    }
}

/// Per-user transmission probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StrategyProfile(Vec<f64>);

impl StrategyProfile {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    /// The profile where only user `i` transmits, always.
    pub fn corner(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Returns a copy with user `i` replaced by `value`.
    pub fn with(&self, i: usize, value: f64) -> Result<Self> {
        let mut p = self.0.clone();
        p[i] = value;
        Self::new(p)
    }

    /// All entries except user `i`, in order.
    pub fn without(&self, i: usize) -> Vec<f64> {
        self.0
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .collect()
    }
}

impl Deref for StrategyProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StrategyProfile {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<StrategyProfile> for Vec<f64> {
    fn from(value: StrategyProfile) -> Self {
        value.0
    }
}

/// Expected per-slot payoff of every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PayoffProfile(pub Vec<f64>);

impl Deref for PayoffProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl PayoffProfile {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.0.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var = self.0.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / self.0.len() as f64;
        var.sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|u| u * factor).collect())
    }
}

/// `prod_{j != i} (1 - p_j)` for every `i`, without dividing by `1 - p_i`.
pub fn others_idle(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut prefix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * (1.0 - p[i]);
    }
    let mut out = vec![0.0; n];
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] = prefix[i] * suffix;
        suffix *= 1.0 - p[i];
    }
    out
}

/// Probability that user `i` is the only transmitter, for every `i`.
pub fn success_probabilities(p: &[f64]) -> Vec<f64> {
    others_idle(p).into_iter().zip(p).map(|(rest, pi)| pi * rest).collect()
}

/// Probability that nobody transmits.
pub fn idle_probability(p: &[f64]) -> f64 {
    p.iter().map(|pi| 1.0 - pi).product()
}

/// `u_i = k_i p_i prod_{j != i} (1 - p_j)`.
pub fn payoff(spec: &GameSpec, p: &[f64]) -> Result<PayoffProfile> {
    spec.check(p)?;
    Ok(PayoffProfile(
        success_probabilities(p)
            .into_iter()
            .zip(spec.k())
            .map(|(s, k)| k * s)
            .collect(),
    ))
}

/// Probability that some user succeeds in a slot.
pub fn utilization(p: &[f64]) -> f64 {
    success_probabilities(p).iter().sum()
}

/// Without a manager, a profile is an equilibrium exactly when some user
/// always transmits.
pub fn is_nash_base(p: &[f64]) -> bool {
    p.contains(&1.0)
}

/// How to cover the strategy space when sampling the payoff region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingPlan {
    /// Regular grid including both endpoints of every axis.
    Grid { points_per_axis: usize },
    /// Seeded uniform draws; the corner profiles are appended.
    Random { count: usize, seed: u64 },
}

impl SamplingPlan {
    /// Grid with the given spacing; `1 / step` is rounded to the nearest
    /// integer number of intervals.
    pub fn grid_step(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::param(format!("grid step must lie in (0, 1], got {step}")));
        }
        Ok(SamplingPlan::Grid {
            points_per_axis: (1.0 / step).round() as usize + 1,
        })
    }
}

const MAX_REGION_POINTS: usize = 50_000_000;

/// One sampled strategy profile with its payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub p: Vec<f64>,
    pub u: Vec<f64>,
}

/// Enumerates `points_per_axis^n` grid profiles in row-major order.
pub fn grid_profiles(n: usize, points_per_axis: usize) -> Result<Vec<Vec<f64>>> {
    if points_per_axis < 2 {
        return Err(Error::EmptyPlan);
    }
    let total = (points_per_axis as u128).pow(n as u32);
    if total > MAX_REGION_POINTS as u128 {
        return Err(Error::param(format!("grid of {total} points is too large")));
    }
    let g = points_per_axis;
    Ok((0..total as usize)
        .map(|mut idx| {
            let mut x = vec![0.0; n];
            for d in (0..n).rev() {
                x[d] = (idx % g) as f64 / (g - 1) as f64;
                idx /= g;
            }
            x
        })
        .collect())
}

/// Samples the feasible payoff set, emitting both profile and payoff.
pub fn sample_feasible_region(spec: &GameSpec, plan: SamplingPlan) -> Result<Vec<RegionSample>> {
    let n = spec.n();
    let profiles = match plan {
        SamplingPlan::Grid { points_per_axis } => grid_profiles(n, points_per_axis)?,
        SamplingPlan::Random { count, seed } => {
            if count == 0 {
                return Err(Error::EmptyPlan);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
                .collect();
            out.extend((0..n).map(|i| StrategyProfile::corner(n, i).into_vec()));
            out
        }
    };
    Ok(profiles
        .into_par_iter()
        .map(|p| {
            let u = payoff(spec, &p).expect("dimension checked").0;
            RegionSample { p, u }
        })
        .collect())
}

/// Writes region samples as CSV with header `p_1..p_n,u_1..u_n`.
pub fn write_region_csv<W: Write>(mut out: W, n: usize, samples: &[RegionSample]) -> io::Result<()> {
    let header: Vec<String> = (1..=n)
        .map(|i| format!("p_{i}"))
        .chain((1..=n).map(|i| format!("u_{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let row: Vec<String> = s.p.iter().chain(&s.u).map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Outcome of a numeric Pareto check. `Efficient` is relative to the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ParetoVerdict {
    Efficient {
        budget: SearchBudget,
    },
    DominatedBy {
        profile: Vec<f64>,
        payoff: Vec<f64>,
        budget: SearchBudget,
    },
}

impl ParetoVerdict {
    pub fn is_efficient(&self) -> bool {
        matches!(self, ParetoVerdict::Efficient { .. })
    }
}

/// Searches for a profile whose base-game payoff weakly dominates that of
/// `p` with at least one strict gain.
pub fn is_pareto_efficient(spec: &GameSpec, p: &[f64], budget: &SearchBudget) -> Result<ParetoVerdict> {
    spec.check(p)?;
    StrategyProfile::new(p.to_vec())?;
    let base = payoff(spec, p)?;
    let k = spec.k();
    let found = search_improvement(p, budget, |q| {
        let u = payoff(spec, q).expect("dimension checked");
        u.iter()
            .zip(base.iter())
            .zip(k)
            .map(|((a, b), k)| (a - b) / k)
            .collect()
    });
    Ok(match found {
        None => ParetoVerdict::Efficient { budget: *budget },
        Some(imp) => {
            let payoff = payoff(spec, &imp.point)?.0;
            ParetoVerdict::DominatedBy {
                profile: imp.point,
                payoff,
                budget: *budget,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec(k: &[f64]) -> GameSpec {
        GameSpec::new(k.to_vec()).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let u = payoff(&spec(&[1.0, 1.0]), &[0.5, 0.5]).unwrap();
        assert_eq!(u.0, vec![0.25, 0.25]);
        let third = 1.0 / 3.0;
        let u = payoff(&spec(&[1.0, 1.0, 1.0]), &[third; 3]).unwrap();
        for v in u.iter() {
            assert_abs_diff_eq!(*v, 0.14815, epsilon = 5e-6);
        }
        let u = payoff(&spec(&[1.0, 1.0]), &[1.0, 1.0]).unwrap();
        assert_eq!(u.0, vec![0.0, 0.0]);
    }

    #[test]
    fn payoff_rejects_wrong_length() {
        let err = payoff(&spec(&[1.0, 1.0]), &[0.5]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, got: 1 });
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(GameSpec::new(vec![]).is_err());
        assert!(matches!(
            GameSpec::new(vec![1.0, 0.0]),
            Err(Error::InvalidValuation { index: 1, .. })
        ));
        assert!(matches!(
            StrategyProfile::new(vec![0.2, 1.2]),
            Err(Error::InvalidProbability { index: 1, .. })
        ));
        assert!(StrategyProfile::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn utilization_examples() {
        assert_abs_diff_eq!(utilization(&[1.0 / 3.0; 3]), 0.44444, epsilon = 5e-6);
        assert_abs_diff_eq!(utilization(&[0.1; 10]), 0.38742, epsilon = 5e-6);
        assert_eq!(utilization(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn nash_base_examples() {
        assert!(is_nash_base(&[1.0, 0.5]));
        assert!(!is_nash_base(&[0.5, 0.5]));
        assert!(is_nash_base(&[1.0, 1.0, 1.0]));
    }

    #[test]
    fn region_grid_contains_expected_points() {
        let samples = sample_feasible_region(&spec(&[1.0, 1.0]), SamplingPlan::grid_step(0.5).unwrap()).unwrap();
        assert_eq!(samples.len(), 9);
        let has = |u: [f64; 2]| samples.iter().any(|s| s.u == u);
        assert!(has([0.25, 0.25]));
        assert!(has([1.0, 0.0]));
        assert!(has([0.0, 0.0]));
        let e1 = samples.iter().find(|s| s.p == vec![1.0, 0.0]).unwrap();
        assert_eq!(e1.u, vec![1.0, 0.0]);
    }

    #[test]
    fn region_random_plan_includes_corners() {
        let samples = sample_feasible_region(&spec(&[1.0, 2.0]), SamplingPlan::Random { count: 10, seed: 7 }).unwrap();
        assert_eq!(samples.len(), 12);
        assert!(samples.iter().any(|s| s.u == vec![0.0, 2.0]));
        assert!(samples
            .iter()
            .all(|s| s.u[0] <= 1.0 && s.u[1] <= 2.0 && s.u.iter().all(|u| *u >= 0.0)));
    }

    #[test]
    fn empty_plan_rejected() {
        let s = spec(&[1.0]);
        assert_eq!(
            sample_feasible_region(&s, SamplingPlan::Random { count: 0, seed: 1 }),
            Err(Error::EmptyPlan)
        );
        assert_eq!(
            sample_feasible_region(&s, SamplingPlan::Grid { points_per_axis: 1 }),
            Err(Error::EmptyPlan)
        );
    }

    #[test]
    fn dense_grid_does_not_dominate_symmetric_point() {
        // dominance scan oracle over a 201x201 grid
        let s = spec(&[1.0, 1.0]);
        let samples = sample_feasible_region(&s, SamplingPlan::Grid { points_per_axis: 201 }).unwrap();
        let dominated = samples
            .iter()
            .any(|x| x.u[0] >= 0.25 && x.u[1] >= 0.25 && (x.u[0] > 0.25 + 1e-12 || x.u[1] > 0.25 + 1e-12));
        assert!(!dominated);
    }

    #[test]
    fn region_csv_header_and_rows() {
        let samples = vec![RegionSample {
            p: vec![0.5, 0.5],
            u: vec![0.25, 0.25],
        }];
        let mut buf = Vec::new();
        write_region_csv(&mut buf, 2, &samples).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "p_1,p_2,u_1,u_2\n0.5,0.5,0.25,0.25\n");
    }

    #[test]
    fn pareto_examples() {
        let s = spec(&[1.0, 1.0]);
        let budget = SearchBudget::default();
        assert!(is_pareto_efficient(&s, &[0.5, 0.5], &budget).unwrap().is_efficient());
        match is_pareto_efficient(&s, &[0.3, 0.8], &budget).unwrap() {
            ParetoVerdict::DominatedBy { profile, payoff: u, .. } => {
                let base = payoff(&s, &[0.3, 0.8]).unwrap();
                assert!(u[0] >= base[0] && u[1] >= base[1]);
                assert!(profile.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            other => panic!("expected domination, got {other:?}"),
        }
        // the textbook witness itself dominates
        let w = payoff(&s, &[0.25, 0.75]).unwrap();
        let b = payoff(&s, &[0.3, 0.8]).unwrap();
        assert!(w[0] > b[0] && w[1] > b[1]);
        assert!(is_pareto_efficient(&spec(&[2.0]), &[1.0], &budget)
            .unwrap()
            .is_efficient());
    }

    fn profile_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, n)
    }

    proptest! {
        #[test]
        fn payoff_bounded_and_sums_to_utilization(
            (k, p) in (1usize..6).prop_flat_map(|n| (proptest::collection::vec(0.1f64..10.0, n), profile_strategy(n)))
        ) {
            let s = GameSpec::new(k.clone()).unwrap();
            let u = payoff(&s, &p).unwrap();
            for i in 0..k.len() {
                prop_assert!(u[i] >= 0.0 && u[i] <= k[i]);
            }
            let tau: f64 = u.iter().zip(&k).map(|(u, k)| u / k).sum();
            prop_assert!((tau - utilization(&p)).abs() < 1e-12);
        }

        #[test]
        fn full_payoff_only_at_corner(n in 1usize..5, i in 0usize..5, p in profile_strategy(5)) {
            let i = i % n;
            let p = &p[..n];
            let s = GameSpec::homogeneous(n).unwrap();
            let u = payoff(&s, p).unwrap();
            let is_corner = p.iter().enumerate().all(|(j, &v)| if j == i { v == 1.0 } else { v == 0.0 });
            prop_assert_eq!(u[i] == 1.0, is_corner);
            let c = payoff(&s, &StrategyProfile::corner(n, i)).unwrap();
            prop_assert_eq!(c[i], 1.0);
        }

        #[test]
        fn payoff_monotone(p in profile_strategy(4), i in 0usize..4, j in 0usize..4, d in 0.0f64..1.0) {
            let s = GameSpec::homogeneous(4).unwrap();
            let base = payoff(&s, &p).unwrap();
            let mut up = p.clone();
            up[i] = (up[i] + d).min(1.0);
            let after = payoff(&s, &up).unwrap();
            prop_assert!(after[i] >= base[i] - 1e-15);
            if j != i {
                prop_assert!(after[j] <= base[j] + 1e-15);
            }
        }

        #[test]
        fn nash_base_matches_deviation_scan(n in 1usize..5, p in profile_strategy(4), ones in proptest::collection::vec(any::<bool>(), 4)) {
            let mut p = p[..n].to_vec();
            for (v, one) in p.iter_mut().zip(&ones) {
                if *one && *v > 0.7 { *v = 1.0; }
            }
            let s = GameSpec::homogeneous(n).unwrap();
            let u = payoff(&s, &p).unwrap();
            let mut deviation = false;
            for i in 0..n {
                for step in 0..=100 {
                    let q = step as f64 / 100.0;
                    let mut alt = p.clone();
                    alt[i] = q;
                    if payoff(&s, &alt).unwrap()[i] > u[i] + 1e-9 {
                        deviation = true;
                    }
                }
            }
            prop_assert_eq!(is_nash_base(&p), !deviation);
        }

        #[test]
        fn payoff_scales_with_valuation(p in profile_strategy(3), k in proptest::collection::vec(0.1f64..5.0, 3), c in proptest::collection::vec(0.1f64..5.0, 3)) {
            let s = GameSpec::new(k.clone()).unwrap();
            let scaled = GameSpec::new(k.iter().zip(&c).map(|(a, b)| a * b).collect()).unwrap();
            let u = payoff(&s, &p).unwrap();
            let v = payoff(&scaled, &p).unwrap();
            for i in 0..3 {
                prop_assert!((v[i] - u[i] * c[i]).abs() <= 1e-12 * v[i].abs().max(1.0));
            }
        }

        #[test]
        fn weak_dominance_of_always_transmitting(p in profile_strategy(4), i in 0usize..4) {
            let s = GameSpec::homogeneous(4).unwrap();
            let mut always = p.clone();
            always[i] = 1.0;
            prop_assert!(payoff(&s, &always).unwrap()[i] >= payoff(&s, &p).unwrap()[i]);
        }
    }

    #[test]
    fn pareto_verdict_invariant_under_scaling() {
        let budget = SearchBudget::coarse();
        for p in [[0.5, 0.5], [0.3, 0.8], [0.2, 0.2], [0.4, 0.6]] {
            let a = is_pareto_efficient(&spec(&[1.0, 1.0]), &p, &budget)
                .unwrap()
                .is_efficient();
            let b = is_pareto_efficient(&spec(&[3.0, 0.5]), &p, &budget)
                .unwrap()
                .is_efficient();
            assert_eq!(a, b, "{p:?}");
        }
    }
}

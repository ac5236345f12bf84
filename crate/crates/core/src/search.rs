//! Bounded numeric search on the unit box.
//!
//! Everything here works on `[0, 1]^d`: the strategy space of a group of
//! users. The improvement search is what backs every "no profitable
//! deviation exists" verdict in the crate, so its budget travels with the
//! verdicts it produces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Minimum gain that counts as a strict improvement.
pub const STRICT_TOL: f64 = 1e-9;

/// Limits for the improvement search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Grid points per axis for the global scan (capped by `max_grid_evals`).
    pub grid_points: usize,
    /// Upper bound on the number of global grid evaluations.
    pub max_grid_evals: usize,
    /// Number of probe directions around the reference point.
    pub directions: usize,
    /// Number of geometric step lengths along each direction, from 1e-6 to 1.
    pub radii: usize,
    /// Best candidates handed to local refinement.
    pub refine_starts: usize,
    /// Nelder-Mead iterations per refinement.
    pub refine_iters: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            grid_points: 41,
            max_grid_evals: 70_000,
            directions: 720,
            radii: 40,
            refine_starts: 6,
            refine_iters: 400,
        }
    }
}

impl SearchBudget {
    /// A cheaper budget for bulk fuzzing.
    pub fn coarse() -> Self {
        Self {
            grid_points: 21,
            max_grid_evals: 10_000,
            directions: 180,
            radii: 30,
            refine_starts: 4,
            refine_iters: 300,
        }
    }

    fn grid_per_axis(&self, dim: usize) -> usize {
        let cap = (self.max_grid_evals as f64).powf(1.0 / dim as f64).floor() as usize;
        self.grid_points.min(cap).max(2)
    }
}

/// A point whose gain vector is weakly positive everywhere and strictly
/// positive (beyond [`STRICT_TOL`]) somewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub point: Vec<f64>,
    pub gains: Vec<f64>,
}

fn is_improvement(gains: &[f64]) -> bool {
    gains.iter().all(|&g| g >= 0.0) && gains.iter().any(|&g| g > STRICT_TOL)
}

fn score(gains: &[f64]) -> f64 {
    let min = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = gains.iter().sum::<f64>() / gains.len().max(1) as f64;
    // the mean term lets weak improvements (min == 0) rank above neutral points
    min + 1e-3 * mean.max(0.0)
}

fn clamp_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

struct Tracker {
    best: Option<Improvement>,
    best_score: f64,
}

impl Tracker {
    fn offer(&mut self, point: &[f64], gains: Vec<f64>) {
        if is_improvement(&gains) {
            let s = score(&gains);
            if self.best.is_none() || s > self.best_score {
                self.best_score = s;
                self.best = Some(Improvement {
                    point: point.to_vec(),
                    gains,
                });
            }
        }
    }
}

/// Searches `[0,1]^d` for a point that improves on `origin`.
///
/// `gains(x)` returns the payoff change of every member at `x` relative to
/// the reference. Returns the best improvement found, if any.
pub fn search_improvement<F>(origin: &[f64], budget: &SearchBudget, gains: F) -> Option<Improvement>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let dim = origin.len();
    if dim == 0 {
        return None;
    }
    let mut tracker = Tracker {
        best: None,
        best_score: f64::NEG_INFINITY,
    };
    let mut candidates: Vec<(f64, Vec<f64>, f64)> = Vec::new();

    // global grid
    let g = budget.grid_per_axis(dim);
    let total = g.pow(dim as u32);
    let grid: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let x = grid_point(idx, g, dim);
            let gv = gains(&x);
            (x, gv)
        })
        .collect();
    let cell = 1.0 / (g - 1) as f64;
    for (x, gv) in grid {
        candidates.push((score(&gv), x.clone(), cell));
        tracker.offer(&x, gv);
    }

    // multi-scale probes around the origin
    let dirs = directions(dim, budget.directions);
    let radii: Vec<f64> = (0..budget.radii)
        .map(|r| {
            let t = r as f64 / (budget.radii.max(2) - 1) as f64;
            10f64.powf(-6.0 + 6.0 * t)
        })
        .collect();
    let probes: Vec<(Vec<f64>, Vec<f64>, f64)> = dirs
        .par_iter()
        .flat_map_iter(|d| {
            radii.iter().map(move |&r| {
                let mut x: Vec<f64> = origin.iter().zip(d).map(|(o, di)| o + r * di).collect();
                clamp_unit(&mut x);
                (x, r)
            })
        })
        .map(|(x, r)| {
            let gv = gains(&x);
            (x, gv, r)
        })
        .collect();
    for (x, gv, r) in probes {
        candidates.push((score(&gv), x.clone(), r));
        tracker.offer(&x, gv);
    }

    // local refinement from the best distinct candidates
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::new();
    for (_, x, scale) in candidates {
        if starts.len() >= budget.refine_starts {
            break;
        }
        let distinct = starts
            .iter()
            .all(|(s, sc)| s.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 0.5 * sc.min(scale));
        if distinct {
            starts.push((x, scale));
        }
    }
    for (x0, scale) in starts {
        let step = (0.5 * scale).max(1e-7);
        let mut visit = |x: &[f64]| {
            let gv = gains(x);
            let s = score(&gv);
            tracker.offer(x, gv);
            s
        };
        nelder_mead_max(&mut visit, &x0, step, budget.refine_iters, 1e-15);
    }

    tracker.best
}

fn grid_point(mut idx: usize, g: usize, dim: usize) -> Vec<f64> {
    // row-major: first coordinate varies slowest
    let mut x = vec![0.0; dim];
    for d in (0..dim).rev() {
        x[d] = (idx % g) as f64 / (g - 1) as f64;
        idx /= g;
    }
    x
}

/// Unit probe directions: axes, sign diagonals, then a deterministic spread.
fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if dim == 2 {
        let m = count.max(8);
        for a in 0..m {
            let th = std::f64::consts::TAU * a as f64 / m as f64;
            out.push(vec![th.cos(), th.sin()]);
        }
        return out;
    }
    for d in 0..dim {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[d] = s;
            out.push(v);
        }
    }
    if dim <= 10 {
        for mask in 0..(1usize << dim) {
            let norm = (dim as f64).sqrt();
            out.push(
                (0..dim)
                    .map(|d| if mask >> d & 1 == 1 { -1.0 / norm } else { 1.0 / norm })
                    .collect(),
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6469_7265_6374);
    while out.len() < count.max(out.len()) {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Maximizes `f` over `[0,1]^d` with a clamped Nelder-Mead simplex.
///
/// Returns the best point and value seen.
pub fn nelder_mead_max<F>(f: &mut F, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    clamp_unit(&mut start);
    simplex.push(start.clone());
    for d in 0..dim {
        let mut v = start.clone();
        v[d] = if v[d] + step <= 1.0 { v[d] + step } else { v[d] - step };
        clamp_unit(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();

    for _ in 0..max_iter {
        // sort descending: best first
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[0] - values[dim];
        let size = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= ftol && size < 1e-13 {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|v| v[d]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect();
            clamp_unit(&mut x);
            x
        };

        let xr = along(1.0);
        let fr = f(&xr);
        if fr > values[0] {
            let xe = along(2.0);
            let fe = f(&xe);
            if fe > fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
        } else if fr > values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
        } else {
            let (xc, fc) = if fr > values[dim] {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            if fc > values[dim].max(fr) {
                simplex[dim] = xc;
                values[dim] = fc;
            } else {
                // shrink toward the best vertex
                let best = simplex[0].clone();
                for i in 1..=dim {
                    let mut x: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    clamp_unit(&mut x);
                    values[i] = f(&x);
                    simplex[i] = x;
                }
            }
        }
    }
    let (i, v) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    (simplex[i].clone(), v)
}

/// Golden-section maximization of a unimodal `f` on `[a, b]`.
pub fn golden_section_max<F>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .max_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap()
}

/// Maximizes `f` on `[0, 1]`: grid scan with `grid` intervals, the
/// extra candidate points, then golden-section refinement around the best
/// few grid cells.
pub fn maximize_unit_interval<F>(f: &F, grid: usize, extra: &[f64]) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let grid = grid.max(2);
    let h = 1.0 / grid as f64;
    let values: Vec<f64> = (0..=grid).map(|i| f(i as f64 * h)).collect();
    let mut best = (0.0, values[0]);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i as f64 * h, v);
        }
    }
    for &x in extra {
        if (0.0..=1.0).contains(&x) {
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
    }
    let mut order: Vec<usize> = (0..=grid).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    for &i in order.iter().take(3) {
        let lo = (i as f64 - 1.0) * h;
        let hi = (i as f64 + 1.0) * h;
        let (x, v) = golden_section_max(f, lo.max(0.0), hi.min(1.0), 1e-12);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

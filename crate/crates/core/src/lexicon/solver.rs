//! Search for the `(N, S)` pair that calibrates one trait column.
//!
//! The transform is `v -> S * tanh(v / N)`. After it, the mean of the
//! positive values and the mean magnitude of the negative values must both
//! sit within `epsilon` of the target `M`.
//!
//! For a fixed `N` the constraint on one side (the *anchor*) is linear in
//! `S`, so `S(N) = M / mean_tanh(anchor, N)` satisfies it exactly. What is
//! left is a one-dimensional problem in `N`:
//!
//! ```text
//! h(N) = S(N) * mean_tanh(other, N) - M
//! ```
//!
//! The search starts from the `N` at which `S(N) = 2 M` and walks outward in
//! powers of two, alternating towards larger and smaller `N`, until it either
//! lands within tolerance or brackets a sign change of `h`, which is then
//! bisected. As `N -> 0` every value saturates to `+-S`, so both means reach
//! `M` and a solution always exists when zeros are excluded.
//!
//! All `N` values are handled as ratios to the column's largest magnitude,
//! so multiplying the column by a power of two multiplies `N` by the same
//! power and leaves the transformed values bit-identical. The anchor side is
//! chosen from the sorted magnitudes alone, which makes the result for a
//! negated column exactly the same `(N, S)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// How zero entries enter the positive/negative averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroConvention {
    /// Zeros belong to neither subset.
    #[default]
    Exclude,
    /// Zeros are counted in the denominator of both averages.
    CountInBoth,
}

/// Solved scaling for one trait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    /// Sharpness divisor.
    #[serde(rename = "N")]
    pub n: f64,
    /// Saturation amplitude.
    #[serde(rename = "S")]
    pub s: f64,
    /// Post-transform mean of the positive subset (0 if empty).
    pub avg_pos: f64,
    /// Post-transform mean of the negative subset, signed (0 if empty).
    pub avg_neg: f64,
    pub iterations: u32,
    pub converged: bool,
}

impl ScaleParams {
    pub fn apply(&self, v: f64) -> f64 {
        self.s * (v / self.n).tanh()
    }

    /// `|Avg+ - M|`, or 0 when the positive subset is empty.
    pub fn residual_pos(&self, target: f64, has_pos: bool) -> f64 {
        if has_pos {
            (self.avg_pos - target).abs()
        } else {
            0.0
        }
    }

    /// `||Avg-| - M|`, or 0 when the negative subset is empty.
    pub fn residual_neg(&self, target: f64, has_neg: bool) -> f64 {
        if has_neg {
            (self.avg_neg.abs() - target).abs()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("no signal for trait")]
    NoSignal,
    #[error("target M must be positive and finite, got {0}")]
    InvalidTarget(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error(
        "no (N, S) within tolerance after {} evaluations; best N={} S={} residuals +{:.3e} -{:.3e}",
        best.iterations, best.n, best.s, residual_pos, residual_neg
    )]
    NonConvergence { best: ScaleParams, residual_pos: f64, residual_neg: f64 },
}

const MAX_BISECT: u32 = 200;
const MAX_SCAN: u32 = 1100;
/// Largest `N / max|v|` the outward scan will try.
const MAX_RATIO: f64 = 1e9;

#[derive(Debug)]
struct Side {
    /// Magnitudes, ascending.
    mags: Vec<f64>,
    denom: f64,
}

impl Side {
    fn new(mut mags: Vec<f64>, zeros: usize, convention: ZeroConvention) -> Side {
        mags.sort_by(f64::total_cmp);
        let extra = match convention {
            ZeroConvention::Exclude => 0,
            ZeroConvention::CountInBoth => zeros,
        };
        let denom = (mags.len() + extra) as f64;
        Side { mags, denom }
    }

    fn is_empty(&self) -> bool {
        self.mags.is_empty()
    }

    /// Mean of `tanh(m / n)` over the side, zeros included per convention.
    fn mean_tanh(&self, n: f64) -> f64 {
        self.mags.iter().map(|m| (m / n).tanh()).sum::<f64>() / self.denom
    }

    /// Supremum of `mean_tanh` (all entries saturated).
    fn cap(&self) -> f64 {
        self.mags.len() as f64 / self.denom
    }

    fn canonical_cmp(&self, other: &Side) -> Ordering {
        self.mags
            .len()
            .cmp(&other.mags.len())
            .then_with(|| {
                self.mags
                    .iter()
                    .zip(&other.mags)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| self.denom.total_cmp(&other.denom))
    }
}

/// Solves with zeros excluded from both averages.
pub fn solve_ns(column: &[f64], target: f64, epsilon: f64) -> Result<ScaleParams, SolveError> {
    solve_ns_with(column, target, epsilon, ZeroConvention::Exclude)
}

pub fn solve_ns_with(
    column: &[f64],
    target: f64,
    epsilon: f64,
    convention: ZeroConvention,
) -> Result<ScaleParams, SolveError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(SolveError::InvalidTarget(target));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(SolveError::InvalidEpsilon(epsilon));
    }
    let zeros = column.iter().filter(|v| **v == 0.0).count();
    let pos = Side::new(column.iter().filter(|v| **v > 0.0).copied().collect(), zeros, convention);
    let neg = Side::new(column.iter().filter(|v| **v < 0.0).map(|v| -v).collect(), zeros, convention);
    if pos.is_empty() && neg.is_empty() {
        return Err(SolveError::NoSignal);
    }
    let scale = pos.mags.iter().chain(&neg.mags).copied().fold(0.0, f64::max);

    let pos_is_anchor = neg.is_empty() || (!pos.is_empty() && pos.canonical_cmp(&neg) != Ordering::Less);
    let (anchor, other) = if pos_is_anchor { (&pos, &neg) } else { (&neg, &pos) };

    let mut search = Search { anchor, other, scale, target, iterations: 0 };
    let tol = 0.5 * epsilon;

    // Start where S = 2 M / cap, i.e. where the anchor sits halfway to saturation.
    let r0 = search.ratio_for_mean(0.5 * anchor.cap());
    let mut best = search.eval(r0);

    let found = if other.is_empty() || best.h.abs() <= tol {
        Some(best)
    } else {
        search.scan(r0, best, tol, &mut best)
    };

    let point = found.unwrap_or(best);
    let n = point.r * scale;
    let (avg_a, avg_o) = (point.s * anchor.mean_tanh(n), point.s * other.mean_tanh(n));
    let (avg_pos, avg_neg_mag) = if pos_is_anchor { (avg_a, avg_o) } else { (avg_o, avg_a) };
    let params = ScaleParams {
        n,
        s: point.s,
        avg_pos: if pos.is_empty() { 0.0 } else { avg_pos },
        avg_neg: if neg.is_empty() { 0.0 } else { -avg_neg_mag },
        iterations: search.iterations,
        converged: found.is_some(),
    };
    let residual_pos = params.residual_pos(target, !pos.is_empty());
    let residual_neg = params.residual_neg(target, !neg.is_empty());
    if found.is_some() && residual_pos <= epsilon && residual_neg <= epsilon {
        Ok(params)
    } else {
        Err(SolveError::NonConvergence {
            best: ScaleParams { converged: false, ..params },
            residual_pos,
            residual_neg,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    r: f64,
    s: f64,
    h: f64,
}

struct Search<'a> {
    anchor: &'a Side,
    other: &'a Side,
    scale: f64,
    target: f64,
    iterations: u32,
}

impl Search<'_> {
    fn eval(&mut self, r: f64) -> Point {
        self.iterations += 1;
        let n = r * self.scale;
        let s = self.target / self.anchor.mean_tanh(n);
        let h = if self.other.is_empty() { 0.0 } else { s * self.other.mean_tanh(n) - self.target };
        Point { r, s, h }
    }

    /// Ratio `r` at which the anchor's mean tanh equals `goal` (strictly
    /// between 0 and the anchor's cap). Mean tanh decreases in `r`.
    fn ratio_for_mean(&mut self, goal: f64) -> f64 {
        let f = |r: f64| self.anchor.mean_tanh(r * self.scale);
        let (mut lo, mut hi) = (1.0f64, 1.0f64);
        while f(lo) <= goal && lo > f64::MIN_POSITIVE {
            lo *= 0.5;
        }
        while f(hi) >= goal && hi < f64::MAX / 4.0 {
            hi *= 2.0;
        }
        for _ in 0..MAX_BISECT {
            self.iterations += 1;
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }

    /// Walks outward from `r0`, alternating up and down by factors of two.
    fn scan(&mut self, r0: f64, start: Point, tol: f64, best: &mut Point) -> Option<Point> {
        let mut up = start;
        let mut down = start;
        let mut up_open = true;
        let mut down_open = true;
        for k in 1..=MAX_SCAN {
            if !up_open && !down_open {
                break;
            }
            if up_open {
                let r = r0 * 2f64.powi(k as i32);
                if r > MAX_RATIO || !r.is_finite() {
                    up_open = false;
                } else {
                    let p = self.eval(r);
                    if let Some(hit) = self.step(up, p, tol, best) {
                        return Some(hit);
                    }
                    up = p;
                }
            }
            if down_open {
                let r = r0 * 0.5f64.powi(k as i32);
                if r * self.scale < f64::MIN_POSITIVE {
                    down_open = false;
                } else {
                    let p = self.eval(r);
                    if let Some(hit) = self.step(down, p, tol, best) {
                        return Some(hit);
                    }
                    down = p;
                }
            }
        }
        None
    }

    fn step(&mut self, prev: Point, p: Point, tol: f64, best: &mut Point) -> Option<Point> {
        if p.h.abs() < best.h.abs() {
            *best = p;
        }
        if p.h.abs() <= tol {
            return Some(p);
        }
        if p.h.signum() != prev.h.signum() {
            return self.bisect(prev, p, tol, best);
        }
        None
    }

    fn bisect(&mut self, mut a: Point, mut b: Point, tol: f64, best: &mut Point) -> Option<Point> {
        for _ in 0..MAX_BISECT {
            let mid = (a.r * b.r).sqrt();
            if mid == a.r || mid == b.r {
                break;
            }
            let m = self.eval(mid);
            if m.h.abs() < best.h.abs() {
                *best = m;
            }
            if m.h.abs() <= tol {
                return Some(m);
            }
            if m.h.signum() == a.h.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        None
    }
}

//! Reference implementations the library is checked against. Each one is
//! written differently from the code under test: brute force, exhaustive
//! search or exact integer arithmetic.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Nucleus by brute force: order by repeated arg-max (ties to the lower
/// id), then try every prefix length and keep the shortest whose mass
/// reaches `top_p`; everything when none does.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<u32> {
    let mut remaining: Vec<usize> = (0..probs.len()).collect();
    let mut order = Vec::with_capacity(probs.len());
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (a, b) = (remaining[k], remaining[best]);
            if probs[a] > probs[b] || (probs[a] == probs[b] && a < b) {
                best = k;
            }
        }
        order.push(remaining.remove(best));
    }
    for len in 1..=order.len() {
        let mass: f64 = order[..len].iter().fold(0.0, |acc, &i| acc + probs[i]);
        if mass >= top_p {
            return order[..len].iter().map(|&i| i as u32).collect();
        }
    }
    order.iter().map(|&i| i as u32).collect()
}

/// `S * mean(tanh(v / N))` over one side's magnitudes, minus the target.
fn side_residual(magnitudes: &[f64], n: f64, s: f64, target: f64) -> f64 {
    let mean = magnitudes.iter().map(|v| (v / n).tanh()).sum::<f64>() / magnitudes.len() as f64;
    s * mean - target
}

/// Minimizes `max(|res+|, |res-|)` over a log-spaced `(N, S)` grid, then
/// zooms in around the best cell. Returns `(N, S, res+, res-)`.
pub fn grid_solve(column: &[f64], target: f64) -> (f64, f64, f64, f64) {
    let pos: Vec<f64> = column.iter().copied().filter(|v| *v > 0.0).collect();
    let neg: Vec<f64> = column.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    let scale = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let score = |n: f64, s: f64| {
        let (a, b) = (side_residual(&pos, n, s, target), side_residual(&neg, n, s, target));
        (a.abs().max(b.abs()), a, b)
    };
    let (mut ln_lo, mut ln_hi) = ((scale * 1e-3).ln(), (scale * 1e4).ln());
    let (mut ls_lo, mut ls_hi) = ((target * 1e-2).ln(), (target * 1e3).ln());
    let steps = 60;
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0, 0.0);
    for _round in 0..8 {
        for i in 0..=steps {
            let n = (ln_lo + (ln_hi - ln_lo) * i as f64 / steps as f64).exp();
            for j in 0..=steps {
                let s = (ls_lo + (ls_hi - ls_lo) * j as f64 / steps as f64).exp();
                let (m, a, b) = score(n, s);
                if m < best.0 {
                    best = (m, n, s, a, b);
                }
            }
        }
        let (dn, ds) = ((ln_hi - ln_lo) / steps as f64 * 3.0, (ls_hi - ls_lo) / steps as f64 * 3.0);
        let (cn, cs) = (best.1.ln(), best.2.ln());
        (ln_lo, ln_hi, ls_lo, ls_hi) = (cn - dn, cn + dn, cs - ds, cs + ds);
    }
    (best.1, best.2, best.3, best.4)
}

/// Exact centered sums `n*Sxx - Sx^2` etc. for integer data.
fn exact_sums(x: &[i64], y: &[i64]) -> (i128, i128, i128) {
    let n = x.len() as i128;
    let (sx, sy): (i128, i128) = (x.iter().map(|&v| v as i128).sum(), y.iter().map(|&v| v as i128).sum());
    let sxx: i128 = x.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let syy: i128 = y.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let sxy: i128 = x.iter().zip(y).map(|(&a, &b)| (a as i128) * (b as i128)).sum();
    (n * sxx - sx * sx, n * syy - sy * sy, n * sxy - sx * sy)
}

/// Pearson R and its two-sided p-value for integer data.
///
/// R comes from exact integer sums. The p-value uses the finite series for
/// Student's t with integer degrees of freedom, written in terms of
/// `sin(theta) = |R|` and `cos^2(theta) = 1 - R^2`, where `1 - R^2` is
/// itself an exact ratio of integers.
pub fn pearson_exact(x: &[i64], y: &[i64]) -> (f64, f64) {
    let (vx, vy, cxy) = exact_sums(x, y);
    let r = cxy as f64 / ((vx as f64) * (vy as f64)).sqrt();
    let cos2 = (vx * vy - cxy * cxy) as f64 / (vx as f64 * vy as f64);
    let sin = (1.0 - cos2).max(0.0).sqrt();
    let df = x.len() - 2;
    (r.clamp(-1.0, 1.0), 1.0 - t_central_mass(df, sin, cos2))
}

/// `P(|T| <= t)` for Student's t with `df` degrees of freedom, where
/// `sin = t / sqrt(df + t^2)` and `cos2 = df / (df + t^2)`.
fn t_central_mass(df: usize, sin: f64, cos2: f64) -> f64 {
    if df % 2 == 1 {
        let theta = sin.atan2(cos2.sqrt());
        if df == 1 {
            return 2.0 * theta / PI;
        }
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..=(df - 3) / 2 {
            term *= (2 * k) as f64 / (2 * k + 1) as f64 * cos2;
            series += term;
        }
        2.0 / PI * (theta + sin * cos2.sqrt() * series)
    } else {
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..=(df - 2) / 2 {
            term *= (2 * k - 1) as f64 / (2 * k) as f64 * cos2;
            series += term;
        }
        sin * series
    }
}

/// Twice the fractional ranks, so tied ranks stay integral.
pub fn doubled_ranks(values: &[i64]) -> Vec<i64> {
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&w| w < v).count() as i64;
            let equal = values.iter().filter(|&&w| w == v).count() as i64;
            // Ranks below+1 ..= below+equal, averaged and doubled.
            2 * below + equal + 1
        })
        .collect()
}

/// Spearman's rho and p-value via exact Pearson on doubled ranks.
pub fn spearman_exact(x: &[i64], y: &[i64]) -> (f64, f64) {
    pearson_exact(&doubled_ranks(x), &doubled_ranks(y))
}

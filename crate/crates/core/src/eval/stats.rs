//! Correlation statistics and small helpers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {min} samples, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
}

/// Correlation coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub n: usize,
}

/// Pearson's R, with the p-value of the two-sided t-test on `n - 2`
/// degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { min: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    // Shifting by a data point keeps differences exact for nearby values;
    // the scaled co-moments are then accumulated without rounding loss.
    let (x0, y0) = (x[0], y[0]);
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
        (Compensated::default(), Compensated::default(), Compensated::default(), Compensated::default(), Compensated::default());
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - x0, b - y0);
        sa.add(da);
        sb.add(db);
        saa.add_product(da, da);
        sbb.add_product(db, db);
        sab.add_product(da, db);
    }
    let nf = n as f64;
    let comoment = |s11: &Compensated, s1: &Compensated, s2: &Compensated| {
        let mut acc = Compensated::default();
        acc.add_product(nf, s11.hi);
        acc.add_product(nf, s11.lo);
        acc.add_product(-s1.hi, s2.hi);
        acc.add_product(-s1.hi, s2.lo);
        acc.add_product(-s1.lo, s2.hi);
        acc
    };
    let (u, v, w) = (comoment(&saa, &sa, &sa), comoment(&sbb, &sb, &sb), comoment(&sab, &sa, &sb));
    if u.value() <= 0.0 || v.value() <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    // u*v - w^2, the Lagrange-identity numerator of 1 - R^2.
    let mut det = Compensated::default();
    det.add_product(u.hi, v.hi);
    det.add_product(u.hi, v.lo);
    det.add_product(u.lo, v.hi);
    det.add_product(-w.hi, w.hi);
    det.add_product(-2.0 * w.hi, w.lo);
    let uv = u.value() * v.value();
    let one_minus_r2 = (det.value() / uv).clamp(0.0, 1.0);
    let r = if one_minus_r2 == 0.0 { w.value().signum() } else { (w.value() / uv.sqrt()).clamp(-1.0, 1.0) };
    Ok(CorrelationResult { r, p: p_value_from_complement(one_minus_r2, n), n })
}

/// A running sum carried as an unevaluated `hi + lo` pair.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bb = s - self.hi;
        self.lo += (self.hi - (s - bb)) + (x - bb);
        self.hi = s;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.lo += a.mul_add(b, -p);
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Two-sided p-value for a sample correlation `r` over `n` pairs.
///
/// With `t = r sqrt((n-2)/(1-r^2))` and `df = n - 2`, the two-sided tail of
/// Student's t is `I_{df/(df+t^2)}(df/2, 1/2)`, and `df/(df+t^2)` reduces to
/// `1 - r^2`.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    p_value_from_complement((1.0 - r) * (1.0 + r), n)
}

fn p_value_from_complement(one_minus_r2: f64, n: usize) -> f64 {
    if one_minus_r2 <= 0.0 {
        return 0.0;
    }
    regularized_incomplete_beta(one_minus_r2, 0.5 * (n - 2) as f64, 0.5).clamp(0.0, 1.0)
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5)
}

/// Spearman's rank correlation: Pearson on fractional ranks (ties get
/// their average rank).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold equal values: ranks i+1 ..= j+1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// `I_x(a, b)`, evaluated with the Lentz continued fraction on whichever
/// side of the mean converges fastest.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Divisor used for standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdConvention {
    /// `n - 1`.
    #[default]
    Sample,
    /// `n`.
    Population,
}

/// Mean, standard deviation and count of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty sample. A single value reports `std = 0`.
    /// Values are summed in sorted order, so the result does not depend on
    /// the input order.
    pub fn of(values: &[f64], convention: StdConvention) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mut values = values.to_vec();
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let divisor = match convention {
            StdConvention::Sample => n.saturating_sub(1),
            StdConvention::Population => n,
        };
        let std = if divisor == 0 { 0.0 } else { (ss / divisor as f64).sqrt() };
        Some(Summary { mean, std, count: n })
    }

    /// `mean(std)` with three decimals, the table cell format.
    pub fn cell(&self) -> String {
        format!("{:.3}({:.3})", self.mean, self.std)
    }
}

/// Two-sided two-proportion z-test with pooled variance.
/// Returns `(z, p)`; `z > 0` when the first proportion is larger.
pub fn two_proportion_test(hits_a: u64, n_a: u64, hits_b: u64, n_b: u64) -> Result<(f64, f64), StatsError> {
    if n_a == 0 || n_b == 0 {
        return Err(StatsError::TooFew { min: 1, got: 0 });
    }
    let (pa, pb) = (hits_a as f64 / n_a as f64, hits_b as f64 / n_b as f64);
    let pooled = (hits_a + hits_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let z = (pa - pb) / se;
    Ok((z, libm::erfc(z.abs() / std::f64::consts::SQRT_2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BETAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    #[test]
    fn table_rows() {
        let r = pearson(&BETAS, &[4.286, 4.343, 4.427, 4.525, 4.558]).unwrap();
        assert!((r.r - 0.991).abs() <= 1e-3, "{r:?}");
        assert!(r.p > 1e-3 / 1.5 && r.p < 1.5e-3, "{r:?}");
        let r = pearson(&BETAS, &[3.856, 3.891, 4.135, 4.298, 4.322]).unwrap();
        assert!((r.r - 0.964).abs() <= 1e-3, "{r:?}");
        assert!(r.p > 8e-3 / 1.5 && r.p < 8e-3 * 1.5, "{r:?}");
    }

    #[test]
    fn perfect_line() {
        let y: Vec<f64> = BETAS.iter().map(|x| 2.0 * x + 1.0).collect();
        let r = pearson(&BETAS, &y).unwrap();
        assert!((r.r - 1.0).abs() < 1e-12);
        assert!(r.p < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), Err(StatsError::ZeroVariance));
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 3.0]), Err(StatsError::TooFew { min: 3, got: 2 }));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0]), Err(StatsError::LengthMismatch(3, 2)));
        assert_eq!(pearson(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]), Err(StatsError::NonFinite));
        assert_eq!(StatsError::ZeroVariance.to_string(), "zero variance");
    }

    #[test]
    fn spearman_cases() {
        let y = [0.1, 0.2, 5.0, 9.0, 100.0];
        assert!((spearman(&BETAS, &y).unwrap().r - 1.0).abs() < 1e-15);

        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let cubes: Vec<f64> = x.iter().map(|v: &f64| v.powi(3)).collect();
        assert!((spearman(&x, &cubes).unwrap().r - 1.0).abs() < 1e-15);
        assert!(pearson(&x, &cubes).unwrap().r < 1.0 - 1e-3);

        // Ranks of y with one tie: [1, 2.5, 2.5, 4, 5].
        // d = rank differences from x's ranks [1..5]: [0, 0.5, -0.5, 0, 0].
        // Pearson on ranks: sxx = 10, syy = 9.5, sxy = 9.5 -> rho = 9.5 / sqrt(95).
        let tied = [1.0, 3.0, 3.0, 4.0, 8.0];
        let rho = spearman(&x, &tied).unwrap().r;
        assert!((rho - 9.5 / 95f64.sqrt()).abs() < 1e-15, "{rho}");
        assert_eq!(fractional_ranks(&tied), vec![1.0, 2.5, 2.5, 4.0, 5.0]);
    }

    #[test]
    fn incomplete_beta_known_values() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_0.5(a, a) = 0.5.
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-15);
        assert!((regularized_incomplete_beta(0.7, 2.5, 1.0) - 0.7f64.powf(2.5)).abs() < 1e-14);
        assert!((regularized_incomplete_beta(0.5, 3.7, 3.7) - 0.5).abs() < 1e-14);
        // t = 2.0, df = 1 (Cauchy): two-sided p = 1 - 2 atan(2) / pi.
        let expected = 1.0 - 2.0 * 2f64.atan() / std::f64::consts::PI;
        assert!((student_t_two_sided(2.0, 1.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn summaries() {
        let s = Summary::of(&[3.0, 3.0, 3.0], StdConvention::Sample).unwrap();
        assert_eq!((s.mean, s.std), (3.0, 0.0));
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0], StdConvention::Sample).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        let p = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0], StdConvention::Population).unwrap();
        assert!((p.std - 2f64.sqrt()).abs() < 1e-15);
        let one = Summary::of(&[4.0], StdConvention::Sample).unwrap();
        assert_eq!((one.mean, one.std, one.count), (4.0, 0.0, 1));
        assert!(Summary::of(&[], StdConvention::Sample).is_none());
        assert_eq!(s.cell(), "3.000(1.581)");
    }

    #[test]
    fn summary_ignores_order() {
        let a = [0.1, 0.7, 0.2, 1e-9, 3.3, 0.15];
        let mut b = a;
        b.reverse();
        assert_eq!(Summary::of(&a, StdConvention::Sample), Summary::of(&b, StdConvention::Sample));
    }

    #[test]
    fn two_proportions() {
        let (z, p) = two_proportion_test(60, 100, 40, 100).unwrap();
        // pooled 0.5, se = sqrt(0.25 * 0.02) = 0.0707..., z = 2.828...
        assert!((z - 0.2 / 0.005f64.sqrt()).abs() < 1e-12);
        assert!((p - 0.004677734981047).abs() < 1e-9, "{p}");
        let (z, p) = two_proportion_test(5, 10, 5, 10).unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(p, 1.0);
    }
}

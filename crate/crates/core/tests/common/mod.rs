//! Reference implementations the library is checked against. They share no
//! code with the crate: bounds come from direct binomial sums, the planner
//! from exhaustive level assignment plus LP basis enumeration.
#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, StudentsT};

/// `ln n!` for `n ≤ max` by running sums.
pub struct LnFactorial(Vec<f64>);

impl LnFactorial {
    pub fn new(max: usize) -> Self {
        let mut t = vec![0.0; max + 1];
        for i in 1..=max {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        Self(t)
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }

    /// `Pr(X ≥ e)` for `X ~ Binom(n, p)`, summed outward from the largest
    /// term with the pmf ratio recurrence.
    pub fn upper_tail(&self, n: usize, p: f64, e: usize) -> f64 {
        if p <= 0.0 {
            return if e == 0 { 1.0 } else { 0.0 };
        }
        if p >= 1.0 || e == 0 {
            return 1.0;
        }
        if e > n {
            return 0.0;
        }
        let odds = p / (1.0 - p);
        let start = (((n + 1) as f64 * p).floor() as usize).clamp(e, n);
        let peak = (self.ln_choose(n, start) + start as f64 * p.ln() + (n - start) as f64 * (1.0 - p).ln()).exp();
        let mut sum = peak;
        let mut term = peak;
        for j in start..n {
            term *= odds * (n - j) as f64 / (j + 1) as f64;
            sum += term;
        }
        term = peak;
        for j in (e..start).rev() {
            term *= (j + 1) as f64 / (odds * (n - j) as f64);
            sum += term;
        }
        sum.min(1.0)
    }

    /// `Pr(X ≤ e)`.
    pub fn lower_tail(&self, n: usize, p: f64, e: usize) -> f64 {
        if e >= n {
            return 1.0;
        }
        1.0 - self.upper_tail(n, p, e + 1)
    }
}

fn bisect(mut lo: f64, mut hi: f64, mut too_low: impl FnMut(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if too_low(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Clopper–Pearson interval from its defining tail equations:
/// `Pr(X ≥ e | lower) = (1-γ)/2` and `Pr(X ≤ e | upper) = (1-γ)/2`.
pub fn clopper_pearson(f: &LnFactorial, n: usize, e: usize, gamma: f64) -> (f64, f64) {
    let tail = (1.0 - gamma) / 2.0;
    let lower = if e == 0 { 0.0 } else { bisect(0.0, 1.0, |p| f.upper_tail(n, p, e) < tail) };
    let upper = if e == n { 1.0 } else { bisect(0.0, 1.0, |p| f.lower_tail(n, p, e) > tail) };
    (lower, upper)
}

/// One row of a planner instance: cost, reference flag, bound per level.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub cost: f64,
    pub is_reference: bool,
    pub bounds: Vec<f64>,
}

/// `min c·x` over `Σx = 1`, `Σ l x - s = α`, `x, s ≥ 0`, by trying every
/// pair of basic columns.
pub fn lp_by_bases(cols: &[(f64, f64)], alpha: f64) -> Option<f64> {
    // Columns are (cost, l); the slack column is (0, -1) with cost 0 and
    // no weight in the simplex row.
    let mut all: Vec<(f64, f64, f64)> = cols.iter().map(|&(c, l)| (c, 1.0, l)).collect();
    all.push((0.0, 0.0, -1.0));
    let mut best: Option<f64> = None;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let (ci, a1, b1) = all[i];
            let (cj, a2, b2) = all[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-15 {
                continue;
            }
            let xi = (b2 - a2 * alpha) / det;
            let xj = (a1 * alpha - b1) / det;
            if xi < -1e-12 || xj < -1e-12 {
                continue;
            }
            let obj = ci * xi.max(0.0) + cj * xj.max(0.0);
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

/// Optimal objective by walking every assignment of a level (or none) to
/// every model, `(L+1)^M` in all.
pub fn brute_force_mix(models: &[OracleModel], levels: &[f64], gamma: f64, alpha: f64) -> Option<f64> {
    let m = models.len();
    let base = levels.len() + 1;
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; m];
    loop {
        let mut ln_sum = 0.0;
        let mut cols = Vec::new();
        for (i, &p) in pick.iter().enumerate() {
            if p > 0 {
                ln_sum += levels[p - 1].ln();
                cols.push((models[i].cost, models[i].bounds[p - 1]));
            }
        }
        if !cols.is_empty() && ln_sum >= gamma.ln() {
            if let Some(obj) = lp_by_bases(&cols, alpha) {
                if best.is_none_or(|b| obj < b) {
                    best = Some(obj);
                }
            }
        }
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            pick[i] += 1;
            if pick[i] < base {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

/// One-sided paired t-test p-value for `H1: mean(a - b) > 0`.
/// Identical samples give 1.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (var / n).sqrt();
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().sf(t)
}

/// Prints one acceptance line and hands back the verdict.
pub fn report(id: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

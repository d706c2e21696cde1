use serde::{Deserialize, Serialize};

use super::beta::{beta_quantile, ln_beta, reg_inc_beta};
use super::StatsError;

/// Two-sided Clopper–Pearson interval on a success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomInterval {
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
}

impl BinomInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_confidence(gamma: f64) -> Result<(), StatsError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(StatsError::Domain(format!("confidence must lie in (0, 1), got {gamma}")))
    }
}

/// Clopper–Pearson exact interval for `e` successes in `n` trials.
///
/// `n = 0` yields the vacuous interval `(0, 1)`.
pub fn binom_ci(n: u64, e: u64, gamma: f64) -> Result<BinomInterval, StatsError> {
    if e > n {
        return Err(StatsError::Domain(format!("successes {e} exceed trials {n}")));
    }
    check_confidence(gamma)?;
    let tail = (1.0 - gamma) / 2.0;
    let (nf, ef) = (n as f64, e as f64);
    let lower = if e == 0 { 0.0 } else { beta_quantile(ef, nf - ef + 1.0, tail)? };
    let upper = if e == n { 1.0 } else { beta_quantile(ef + 1.0, nf - ef, 1.0 - tail)? };
    Ok(BinomInterval { lower, upper, confidence: gamma })
}

/// Whether the Clopper–Pearson lower bound for `(n, e)` at `gamma` reaches
/// `threshold`, decided without inverting the beta distribution.
///
/// The lower bound `L` solves `I_L(e, n - e + 1) = (1 - gamma) / 2` and `I`
/// is increasing in its argument, so `L >= t` iff `I_t(e, n - e + 1) <= (1 - gamma) / 2`.
pub fn lower_bound_reaches(n: u64, e: u64, gamma: f64, threshold: f64) -> Result<bool, StatsError> {
    if e > n {
        return Err(StatsError::Domain(format!("successes {e} exceed trials {n}")));
    }
    check_confidence(gamma)?;
    if threshold <= 0.0 {
        return Ok(true);
    }
    if e == 0 || threshold > 1.0 {
        return Ok(false);
    }
    if threshold == 1.0 {
        return Ok(false);
    }
    let tail = (1.0 - gamma) / 2.0;
    let (nf, ef) = (n as f64, e as f64);
    Ok(reg_inc_beta(ef, nf - ef + 1.0, threshold)? <= tail)
}

/// Whether the Clopper–Pearson upper bound for `(n, e)` at `gamma` lies
/// strictly below `threshold`; the mirror image of [`lower_bound_reaches`].
pub fn upper_bound_below(n: u64, e: u64, gamma: f64, threshold: f64) -> Result<bool, StatsError> {
    if e > n {
        return Err(StatsError::Domain(format!("successes {e} exceed trials {n}")));
    }
    check_confidence(gamma)?;
    if threshold > 1.0 {
        return Ok(true);
    }
    if threshold <= 0.0 || e == n {
        return Ok(false);
    }
    let tail = (1.0 - gamma) / 2.0;
    let (nf, ef) = (n as f64, e as f64);
    Ok(reg_inc_beta(ef + 1.0, nf - ef, threshold)? > 1.0 - tail)
}

/// `Pr(X <= x)` for `X ~ Binom(k, a)`.
///
/// Uses `Pr(X <= x) = I_{1-a}(k - x, x + 1)`, whose continued fraction
/// carries the binomial coefficient in log space, so `k` in the millions is fine.
pub fn binom_cdf(k: u64, a: f64, x: i64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(StatsError::Domain(format!("success probability must lie in [0, 1], got {a}")));
    }
    if x < 0 {
        return Ok(0.0);
    }
    let x = x as u64;
    if x >= k {
        return Ok(1.0);
    }
    if a == 0.0 {
        return Ok(1.0);
    }
    if a == 1.0 {
        return Ok(0.0);
    }
    reg_inc_beta((k - x) as f64, x as f64 + 1.0, 1.0 - a)
}

/// `Pr(X >= x)` for `X ~ Binom(k, a)`, i.e. `1 - binom_cdf(k, a, x - 1)`.
pub fn binom_sf(k: u64, a: f64, x: i64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(StatsError::Domain(format!("success probability must lie in [0, 1], got {a}")));
    }
    if x <= 0 {
        return Ok(1.0);
    }
    let x = x as u64;
    if x > k {
        return Ok(0.0);
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    if a == 1.0 {
        return Ok(1.0);
    }
    reg_inc_beta(x as f64, (k - x) as f64 + 1.0, a)
}

/// `ln Pr(X = j)` for `X ~ Binom(k, a)`, `0 < a < 1`.
pub fn binom_ln_pmf(k: u64, a: f64, j: u64) -> f64 {
    let (kf, jf) = (k as f64, j as f64);
    // ln C(k, j) = -ln(k + 1) - ln B(j + 1, k - j + 1)
    -(kf + 1.0).ln() - ln_beta(jf + 1.0, kf - jf + 1.0) + jf * a.ln() + (kf - jf) * (-a).ln_1p()
}

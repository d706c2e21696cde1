//! Expected cost of profiling `k` more items, and the early-stop rule built
//! on it.
//!
//! For each undecided model the chance of being certified after `k` more
//! items is `Pr(e >= e*)`, where `e ~ Binom(k, a)` and `e*` is the fewest
//! extra agreements that lift the interval's lower bound to `1 - delta`.
//! The unknown true accuracy `a` is integrated against a normal density
//! centred on `e / n` with variance `â(1 - â) / n`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{cheapest_valid, reference_profile, terminate_profile_all, unknown_by_cost, AccuracySpec, ModelProfile};
use crate::error::{Error, Result};
use crate::stats::{binom_sf, ln_beta, lower_bound_reaches, normal_cdf, reg_inc_beta, GaussLegendre, DEFAULT_NODES};

/// Half-width of the integration window, in posterior standard deviations.
const WINDOW_SDS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub quadrature_nodes: usize,
    /// Divide by the normal mass inside `[0, 1]` instead of integrating the
    /// untruncated density as-is.
    pub renormalize: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { quadrature_nodes: DEFAULT_NODES, renormalize: false }
    }
}

/// Expected cost of profiling exactly `k` more items and then applying the
/// cheapest certified model to the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub k: u64,
    pub profiling_cost: f64,
    pub application_cost: f64,
    pub total: f64,
}

/// Expected per-item application cost when candidates are tried in the
/// given order (ascending cost) and `fallback` is used if none certifies.
///
/// Candidates that are not cheaper than the fallback are skipped: the
/// single-model application picks the cheapest valid model, so they would
/// never be used.
pub fn application_cost_per_item(candidates: &[(f64, f64)], fallback: f64) -> f64 {
    let mut survive = 1.0;
    let mut acc = 0.0;
    for &(p, c) in candidates.iter().filter(|&&(_, c)| c < fallback) {
        acc += survive * p * c;
        survive *= 1.0 - p;
    }
    acc + survive * fallback
}

/// Expected-cost arithmetic with the certification probabilities given.
///
/// `candidates` holds `(p_i, c_i)` for the unknown models in ascending cost order.
pub fn expected_cost_from_probabilities(
    k: u64,
    reference_cost: f64,
    candidates: &[(f64, f64)],
    fallback_cost: f64,
    n_remaining: u64,
) -> CostEstimate {
    let profiling_cost = k as f64 * (reference_cost + candidates.iter().map(|&(_, c)| c).sum::<f64>());
    let application_cost = n_remaining.saturating_sub(k) as f64 * application_cost_per_item(candidates, fallback_cost);
    CostEstimate { k, profiling_cost, application_cost, total: profiling_cost + application_cost }
}

/// Evaluates certification probabilities and expected costs for one accuracy spec.
///
/// Probabilities are memoized per `(k, n, e)`. The estimator also remembers
/// the last conforming count per model and `k`, and the last `k` that made
/// further profiling worthwhile; both only speed up searches whose answers
/// do not depend on them.
#[derive(Debug, Clone)]
pub struct CostEstimator {
    spec: AccuracySpec,
    rule: GaussLegendre,
    renormalize: bool,
    cache: HashMap<(u64, u64, u64), f64>,
    count_hints: HashMap<String, HashMap<u64, u64>>,
    winning_k: Option<u64>,
}

const CACHE_LIMIT: usize = 1 << 16;

impl CostEstimator {
    pub fn new(spec: AccuracySpec, opts: EstimatorOptions) -> Self {
        Self {
            spec,
            rule: GaussLegendre::new(opts.quadrature_nodes),
            renormalize: opts.renormalize,
            cache: HashMap::new(),
            count_hints: HashMap::new(),
            winning_k: None,
        }
    }

    pub fn spec(&self) -> &AccuracySpec {
        &self.spec
    }

    fn reaches(&self, k: u64, profile: &ModelProfile, extra: u64) -> Result<bool> {
        Ok(lower_bound_reaches(profile.n + k, profile.e + extra, self.spec.gamma, self.spec.threshold())?)
    }

    /// Fewest agreements among `k` new items that certify `profile`, or
    /// `None` if even `k` out of `k` falls short.
    pub fn min_conforming_count(&self, k: u64, profile: &ModelProfile) -> Result<Option<u64>> {
        if k == 0 {
            return Err(Error::InvalidInput("min_conforming_count needs k >= 1".into()));
        }
        if !self.reaches(k, profile, k)? {
            return Ok(None);
        }
        // The lower bound is non-decreasing in the success count.
        Ok(Some(self.first_reaching(k, profile, 0, k)?))
    }

    /// Smallest `x` in `[lo, hi]` that reaches the threshold, given that `hi` does.
    fn first_reaching(&self, k: u64, profile: &ModelProfile, mut lo: u64, mut hi: u64) -> Result<u64> {
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.reaches(k, profile, mid)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(hi)
    }

    /// Same answer as [`Self::min_conforming_count`], searched outward
    /// from `hint` with doubling steps.
    pub fn min_conforming_count_from(&self, k: u64, profile: &ModelProfile, hint: u64) -> Result<Option<u64>> {
        if k == 0 {
            return Err(Error::InvalidInput("min_conforming_count needs k >= 1".into()));
        }
        let g = hint.min(k);
        if self.reaches(k, profile, g)? {
            let (mut hi, mut step) = (g, 1);
            while hi > 0 {
                let probe = hi.saturating_sub(step);
                if !self.reaches(k, profile, probe)? {
                    return Ok(Some(self.first_reaching(k, profile, probe + 1, hi)?));
                }
                hi = probe;
                step *= 2;
            }
            return Ok(Some(0));
        }
        let (mut lo, mut step) = (g + 1, 1);
        loop {
            if lo > k {
                return Ok(None);
            }
            let probe = (g + step).min(k);
            if self.reaches(k, profile, probe)? {
                return Ok(Some(self.first_reaching(k, profile, lo, probe)?));
            }
            lo = probe + 1;
            step *= 2;
        }
    }

    fn conforming_count(&mut self, k: u64, profile: &ModelProfile) -> Result<Option<u64>> {
        let hint = self.count_hints.get(profile.name()).and_then(|h| h.get(&k)).copied();
        let found = match hint {
            Some(h) => self.min_conforming_count_from(k, profile, h)?,
            None => self.min_conforming_count(k, profile)?,
        };
        if let Some(x) = found {
            self.count_hints.entry(profile.name().to_string()).or_default().insert(k, x);
        }
        Ok(found)
    }

    /// Probability that `profile` is certified after `k` more items.
    pub fn prob_valid(&mut self, k: u64, profile: &ModelProfile) -> Result<f64> {
        if k == 0 || profile.n == 0 {
            return Err(Error::InvalidInput("prob_valid needs k >= 1 and at least one profiled item".into()));
        }
        let key = (k, profile.n, profile.e);
        if let Some(&p) = self.cache.get(&key) {
            return Ok(p);
        }
        let p = match self.conforming_count(k, profile)? {
            None => 0.0,
            Some(0) => 1.0,
            Some(e_star) => self.tail_probability(k, profile, e_star)?,
        };
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(key, p);
        Ok(p)
    }

    /// `∫ Pr(Binom(k, a) >= e*) φ(a) da` over `[0, 1]`, `φ` the normal
    /// density around the estimate.
    ///
    /// The tail is the distribution function of `B ~ Beta(e*, k - e* + 1)`
    /// at `a`, so swapping the order of integration gives
    /// `∫ f_B(b) [Φ(1) - Φ(b)] db`, whose integrand needs no continued
    /// fraction. Beyond twelve posterior deviations below the estimate the
    /// bracket is constant and the integral collapses to one beta CDF.
    fn tail_probability(&self, k: u64, profile: &ModelProfile, e_star: u64) -> Result<f64> {
        let a_hat = profile.e as f64 / profile.n as f64;
        if profile.e == 0 || profile.e == profile.n {
            // Zero posterior variance: point mass at the estimate.
            return Ok(binom_sf(k, a_hat, e_star as i64)?);
        }
        let var = a_hat * (1.0 - a_hat) / profile.n as f64;
        let sd = var.sqrt();
        let (x, y) = (e_star as f64, (k - e_star) as f64 + 1.0);
        let ln_norm = ln_beta(x, y);
        let top = normal_cdf(1.0, a_hat, var);
        let bracket = |b: f64| top - normal_cdf(b, a_hat, var);

        // Posterior window, where the bracket varies.
        let lo = (a_hat - WINDOW_SDS * sd).max(0.0);
        let hi = (a_hat + WINDOW_SDS * sd).min(1.0);
        // Beta window, wider on a side where a small shape parameter skews the tail.
        let (mean, beta_sd) = (x / (x + y), (x * y / ((x + y) * (x + y) * (x + y + 1.0))).sqrt());
        let blo = (mean - (WINDOW_SDS + 24.0 / y.sqrt()) * beta_sd).max(0.0);
        let bhi = (mean + (WINDOW_SDS + 24.0 / x.sqrt()) * beta_sd).min(1.0);

        let below = if lo <= blo {
            0.0
        } else if lo >= bhi {
            1.0
        } else {
            reg_inc_beta(x, y, lo)?
        };
        let mut value = top * below;
        let (from, to) = (lo.max(blo), hi.min(bhi));
        if from < to {
            value += self.rule.integrate(
                |b| {
                    let density = ((x - 1.0) * b.ln() + (y - 1.0) * (-b).ln_1p() - ln_norm).exp();
                    density * bracket(b)
                },
                from,
                to,
            );
        }
        if self.renormalize {
            let mass = top - normal_cdf(0.0, a_hat, var);
            if mass > 0.0 {
                value /= mass;
            }
        }
        Ok(value.clamp(0.0, 1.0))
    }

    /// Expected cost of profiling exactly `k` more items.
    pub fn expected_cost(&mut self, k: u64, profiles: &[ModelProfile], n_remaining: u64) -> Result<CostEstimate> {
        if k == 0 || k > n_remaining {
            return Err(Error::InvalidInput(format!("expected_cost needs 1 <= k <= {n_remaining}, got {k}")));
        }
        let ref_c = reference_profile(profiles)?.c;
        let fallback_c = self.stop_cost(profiles, 1)?;
        let mut candidates = Vec::new();
        for m in unknown_by_cost(profiles) {
            let p = if m.n == 0 { 0.0 } else { self.prob_valid(k, m)? };
            candidates.push((p, m.c));
        }
        Ok(expected_cost_from_probabilities(k, ref_c, &candidates, fallback_c, n_remaining))
    }

    /// Expected costs for `k = 1, 2, 4, ...` up to `n_remaining`.
    pub fn cost_curve(&mut self, profiles: &[ModelProfile], n_remaining: u64) -> Result<Vec<CostEstimate>> {
        let mut rows = Vec::new();
        let mut k = 1;
        while k <= n_remaining {
            rows.push(self.expected_cost(k, profiles, n_remaining)?);
            k *= 2;
        }
        Ok(rows)
    }

    /// Cost of stopping now: the cheapest valid model processes the rest.
    pub fn stop_cost(&self, profiles: &[ModelProfile], n_remaining: u64) -> Result<f64> {
        let fallback = cheapest_valid(profiles)
            .ok_or_else(|| Error::InvalidInput("no valid model to fall back on".into()))?;
        Ok(n_remaining as f64 * fallback.c)
    }

    /// Stop if the cheapest certified model is found, or if no `k` on the
    /// doubling grid is expected to beat stopping right away.
    pub fn terminate_profile_smart(&mut self, profiles: &[ModelProfile], n_remaining: u64) -> Result<bool> {
        if terminate_profile_all(profiles) || n_remaining == 0 {
            return Ok(true);
        }
        let baseline = self.stop_cost(profiles, n_remaining)?;
        // One grid point under the baseline settles it; try last time's first.
        if let Some(k) = self.winning_k.filter(|&k| k <= n_remaining) {
            if self.expected_cost(k, profiles, n_remaining)?.total < baseline {
                return Ok(false);
            }
        }
        let mut k = 1;
        while k <= n_remaining {
            if self.expected_cost(k, profiles, n_remaining)?.total < baseline {
                self.winning_k = Some(k);
                return Ok(false);
            }
            k *= 2;
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ModelId;
    use crate::profiler::Status;
    use crate::stats::{binom_ci, binom_ln_pmf, normal_pdf};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn spec(delta: f64, gamma: f64) -> AccuracySpec {
        AccuracySpec::new(delta, gamma).unwrap()
    }

    fn cand(name: &str, c: f64, n: u64, e: u64) -> ModelProfile {
        ModelProfile { n, e, ..ModelProfile::candidate(ModelId::new(name, 0.0), c) }
    }

    fn reference(c: f64) -> ModelProfile {
        ModelProfile::reference(ModelId::new("ref", 0.0), c)
    }

    /// Smallest e by linear scan over explicit interval lower bounds.
    fn scan_min_count(k: u64, n: u64, e: u64, s: &AccuracySpec) -> Option<u64> {
        (0..=k).find(|&x| binom_ci(n + k, e + x, s.gamma).unwrap().lower >= s.threshold())
    }

    #[test]
    fn min_conforming_count_examples() {
        let s = spec(0.2, 0.95);
        let est = CostEstimator::new(s, EstimatorOptions::default());
        let p = cand("m", 1.0, 50, 50);
        // Lower bound of (60, 50) at 95% is about 0.715 < 0.8, so zero new
        // successes is not enough; the scan oracle pins the exact count.
        assert!(binom_ci(60, 50, 0.95).unwrap().lower < 0.8);
        let expected = scan_min_count(10, 50, 50, &s);
        assert_eq!(expected, Some(5));
        assert_eq!(est.min_conforming_count(10, &p).unwrap(), expected);

        let est = CostEstimator::new(spec(0.01, 0.95), EstimatorOptions::default());
        assert_eq!(est.min_conforming_count(3, &cand("m", 1.0, 5, 0)).unwrap(), None);
        assert!(est.min_conforming_count(0, &cand("m", 1.0, 1, 1)).is_err());

        // Already certifiable: zero further agreements needed.
        let est = CostEstimator::new(spec(0.3, 0.95), EstimatorOptions::default());
        assert_eq!(est.min_conforming_count(1, &cand("m", 1.0, 100, 100)).unwrap(), Some(0));
    }

    #[test]
    fn min_conforming_count_matches_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..120);
            let e = rng.random_range(0..=n);
            let k = rng.random_range(1..80);
            let s = spec(rng.random_range(0.02..0.3), [0.9, 0.95, 0.99][rng.random_range(0..3)]);
            let est = CostEstimator::new(s, EstimatorOptions::default());
            assert_eq!(est.min_conforming_count(k, &cand("m", 1.0, n, e)).unwrap(), scan_min_count(k, n, e, &s));
        }
    }

    #[test]
    fn prob_valid_trivial_cases() {
        let mut est = CostEstimator::new(spec(0.3, 0.95), EstimatorOptions::default());
        assert_eq!(est.prob_valid(4, &cand("m", 1.0, 100, 100)).unwrap(), 1.0);
        let mut est = CostEstimator::new(spec(0.01, 0.95), EstimatorOptions::default());
        assert_eq!(est.prob_valid(3, &cand("m", 1.0, 5, 0)).unwrap(), 0.0);
        assert!(est.prob_valid(0, &cand("m", 1.0, 5, 0)).is_err());
        assert!(est.prob_valid(1, &cand("m", 1.0, 0, 0)).is_err());
    }

    #[test]
    fn prob_valid_point_mass_at_one() {
        // All-success history: a = 1, so every new item agrees.
        let mut est = CostEstimator::new(spec(0.1, 0.95), EstimatorOptions::default());
        assert_eq!(est.prob_valid(64, &cand("m", 1.0, 4, 4)).unwrap(), 1.0);
    }

    #[test]
    fn prob_valid_matches_monte_carlo() {
        let s = spec(0.2, 0.9);
        let profile = cand("m", 1.0, 10, 9);
        let k = 20;
        let mut est = CostEstimator::new(s, EstimatorOptions::default());
        let e_star = est.min_conforming_count(k, &profile).unwrap().unwrap();
        let value = est.prob_valid(k, &profile).unwrap();

        // Monte Carlo over a ~ N(0.9, 0.009): draws outside [0, 1] contribute
        // nothing, matching the untruncated, unnormalized integral.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.9, (0.9_f64 * 0.1 / 10.0).sqrt()).unwrap();
        let draws = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let a: f64 = normal.sample(&mut rng);
            let v = if (0.0..=1.0).contains(&a) {
                (e_star..=k).map(|j| binom_ln_pmf(k, a, j).exp()).sum::<f64>()
            } else {
                0.0
            };
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let sd = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((value - mean).abs() <= 3.0 * sd, "quadrature {value} vs MC {mean} ± {sd}");
    }

    #[test]
    fn renormalized_posterior_is_not_smaller() {
        let profile = cand("m", 1.0, 10, 9);
        let mut plain = CostEstimator::new(spec(0.2, 0.9), EstimatorOptions::default());
        let mut renorm =
            CostEstimator::new(spec(0.2, 0.9), EstimatorOptions { renormalize: true, ..Default::default() });
        assert!(renorm.prob_valid(20, &profile).unwrap() >= plain.prob_valid(20, &profile).unwrap());
    }

    /// The literal integral, by composite Gauss–Legendre over 400 panels.
    fn literal_integral(k: u64, n: u64, e: u64, e_star: u64) -> f64 {
        let a_hat = e as f64 / n as f64;
        let var = a_hat * (1.0 - a_hat) / n as f64;
        let rule = GaussLegendre::new(64);
        let panels = 400;
        (0..panels)
            .map(|i| {
                let (lo, hi) = (i as f64 / panels as f64, (i + 1) as f64 / panels as f64);
                rule.integrate(|a| binom_sf(k, a, e_star as i64).unwrap() * normal_pdf(a, a_hat, var), lo, hi)
            })
            .sum()
    }

    #[test]
    fn swapped_integral_matches_literal_form() {
        let s = spec(0.1, 0.95);
        for &(n, e, k) in &[(10_u64, 9_u64, 20_u64), (40, 38, 64), (200, 185, 512), (700, 640, 4096), (30, 29, 1), (5, 3, 200)] {
            let mut est = CostEstimator::new(s, EstimatorOptions::default());
            let profile = cand("m", 1.0, n, e);
            let Some(e_star) = est.min_conforming_count(k, &profile).unwrap() else { continue };
            if e_star == 0 {
                continue;
            }
            let fast = est.prob_valid(k, &profile).unwrap();
            assert_abs_diff_eq!(fast, literal_integral(k, n, e, e_star), epsilon = 1e-9);
        }
    }

    proptest::proptest! {
        #[test]
        fn hinted_count_search_matches_bisection(
            n in 1_u64..400,
            frac in 0.0_f64..=1.0,
            k in 1_u64..2000,
            hint in 0_u64..2500,
            delta in 0.02_f64..0.3,
        ) {
            let e = (frac * n as f64).round() as u64;
            let est = CostEstimator::new(spec(delta, 0.95), EstimatorOptions::default());
            let p = cand("m", 1.0, n, e);
            proptest::prop_assert_eq!(
                est.min_conforming_count_from(k, &p, hint).unwrap(),
                est.min_conforming_count(k, &p).unwrap()
            );
        }
    }

    #[test]
    fn expected_cost_with_no_unknown_models() {
        let profiles = vec![reference(0.03), ModelProfile { status: Status::Valid, ..cand("v", 0.002, 50, 50) }];
        let mut est = CostEstimator::new(spec(0.1, 0.95), EstimatorOptions::default());
        let row = est.expected_cost(4, &profiles, 100).unwrap();
        assert_abs_diff_eq!(row.profiling_cost, 4.0 * 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(row.application_cost, 96.0 * 0.002, epsilon = 1e-15);
        assert_abs_diff_eq!(row.total, row.profiling_cost + row.application_cost, epsilon = 0.0);
    }

    #[test]
    fn expected_cost_hand_set_probabilities() {
        let row = expected_cost_from_probabilities(1, 0.0, &[(0.5, 1.0), (0.5, 2.0)], 10.0, 11);
        assert_abs_diff_eq!(row.application_cost, 10.0 * (0.5 * 1.0 + 0.25 * 2.0 + 0.25 * 10.0), epsilon = 1e-12);
        assert_abs_diff_eq!(row.profiling_cost, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn certain_candidate_takes_all_application_items() {
        // â = 1 with plenty of history: p = 1, so only m_1's cost applies.
        let profiles = vec![reference(0.03), cand("m1", 0.001, 60, 60)];
        let mut est = CostEstimator::new(spec(0.2, 0.95), EstimatorOptions::default());
        let row = est.expected_cost(2, &profiles, 10).unwrap();
        assert_abs_diff_eq!(row.application_cost, 8.0 * 0.001, epsilon = 1e-15);
    }

    #[test]
    fn smart_termination_examples() {
        let mut est = CostEstimator::new(spec(0.01, 0.95), EstimatorOptions::default());
        // Hopeless candidates: profiling can only add cost.
        let profiles = vec![reference(0.03), cand("a", 0.001, 50, 0), cand("b", 0.002, 60, 1)];
        assert!(est.terminate_profile_smart(&profiles, 1000).unwrap());
        assert!(est.terminate_profile_smart(&[reference(0.03), cand("a", 0.001, 3, 3)], 0).unwrap());

        // A promising, much cheaper candidate is worth profiling further.
        let mut est = CostEstimator::new(spec(0.1, 0.95), EstimatorOptions::default());
        let profiles = vec![reference(0.03), cand("a", 0.0004, 5, 5)];
        let rows = est.cost_curve(&profiles, 10_000).unwrap();
        let best = rows.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
        assert!(best < 10_000.0 * 0.03);
        assert!(!est.terminate_profile_smart(&profiles, 10_000).unwrap());
    }

    #[test]
    fn cost_curve_uses_doubling_grid() {
        let mut est = CostEstimator::new(spec(0.1, 0.95), EstimatorOptions::default());
        let profiles = vec![reference(0.03), cand("a", 0.001, 20, 18)];
        let ks: Vec<_> = est.cost_curve(&profiles, 100).unwrap().iter().map(|r| r.k).collect();
        assert_eq!(ks, [1, 2, 4, 8, 16, 32, 64]);
    }
}

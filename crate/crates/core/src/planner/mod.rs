//! Model mixing: split the remaining items across several models so that the
//! expected agreement with the reference stays above a refined threshold,
//! with the confidence level shared out across the models used.
//!
//! The program, with `x_i` the share of items for model `i` and `y_ij` the
//! indicator that model `i` is bounded at confidence level `γ_j`:
//!
//! ```text
//! minimise    Σ_i c_i x_i
//! subject to  Σ_i x_i = 1
//!             Σ_j y_ij ≤ 1                     for every i
//!             Σ_i Σ_j l_ij x_i y_ij ≥ α
//!             Σ_i Σ_j y_ij ln γ_j ≥ ln γ
//! ```
//!
//! The bilinear `x_i y_ij` terms could be linearised with McCormick
//! envelopes (`z_ij ≤ x_i`, `z_ij ≤ y_ij`, `z_ij ≥ x_i + y_ij - 1`) and
//! handed to a general MILP solver. Pools here are tiny, so the solver
//! instead uses the structure directly: once levels are fixed the remainder
//! is a two-constraint LP, whose optimum mixes at most two models.

mod partition;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::ModelProfile;
use crate::stats::binom_ci;

pub use partition::partition_by_ratios;

/// Default spacing between confidence levels.
pub const DEFAULT_GRID_STEP: f64 = 0.01;

/// Confidence levels a model can be bounded at: `γ, γ + step, ..., 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceGrid {
    levels: Vec<f64>,
}

impl ConfidenceGrid {
    pub fn new(gamma: f64, step: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidInput(format!("grid step must lie in (0, 1], got {step}")));
        }
        let mut levels = Vec::new();
        for j in 0.. {
            // Integer multiples keep 0.95 + 3 * 0.01 from drifting.
            let level = ((gamma + j as f64 * step) * 1e12).round() / 1e12;
            if level >= 1.0 - 1e-9 {
                break;
            }
            levels.push(level);
        }
        levels.push(1.0);
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Accuracy target for the application phase once a fraction `r` of the
/// items has already been answered by the reference.
///
/// Solves `r + α (1 - r) = 1 - δ`; a negative `α` is vacuous and clamped to 0.
pub fn refined_alpha(delta: f64, r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidInput(format!("profiled ratio must lie in [0, 1), got {r}")));
    }
    Ok((1.0 - delta / (1.0 - r)).max(0.0))
}

/// One model's row of the program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixCandidate {
    pub model: String,
    pub unit_cost: f64,
    pub is_reference: bool,
    /// Lower accuracy bound at each grid level.
    pub lower_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixProgram {
    pub gamma: f64,
    pub alpha: f64,
    pub levels: Vec<f64>,
    /// Sorted by model name.
    pub candidates: Vec<MixCandidate>,
}

/// Builds the program from profiling tallies. The reference is taken as
/// exact (bound 1 everywhere); other models have bound 0 at level 1.
pub fn build_mix_program(
    profiles: &[ModelProfile],
    grid: &ConfidenceGrid,
    delta: f64,
    gamma: f64,
    r: f64,
) -> Result<MixProgram> {
    if !profiles.iter().any(|p| p.is_reference) {
        return Err(Error::InvalidInput("profiles do not include the reference model".into()));
    }
    let alpha = refined_alpha(delta, r)?;
    let mut candidates = profiles
        .iter()
        .map(|p| {
            let lower_bounds = grid
                .levels()
                .iter()
                .map(|&g| {
                    if p.is_reference {
                        Ok(1.0)
                    } else if g >= 1.0 {
                        Ok(0.0)
                    } else {
                        Ok(binom_ci(p.n, p.e, g)?.lower)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MixCandidate { model: p.name().to_string(), unit_cost: p.c, is_reference: p.is_reference, lower_bounds })
        })
        .collect::<Result<Vec<_>>>()?;
    candidates.sort_by(|a, b| a.model.cmp(&b.model));
    Ok(MixProgram { gamma, alpha, levels: grid.levels().to_vec(), candidates })
}

/// Whether the chosen levels respect the confidence budget `Σ ln γ_j ≥ ln γ`.
pub fn within_budget(levels: &[f64], gamma: f64) -> bool {
    levels.iter().map(|l| l.ln()).sum::<f64>() >= gamma.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub ratio: f64,
    /// Confidence level the bound was taken at; `None` for unused models.
    pub level: Option<f64>,
    pub lower_bound: f64,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub refined_alpha: f64,
    pub models: BTreeMap<String, PlanEntry>,
    /// Expected cost of one item.
    pub objective: f64,
}

impl MixPlan {
    /// `Σ l_i x_i` over the models in name order.
    pub fn accuracy_mass(&self) -> f64 {
        self.models.values().map(|e| e.lower_bound * e.ratio).sum()
    }

    pub fn ratio_sum(&self) -> f64 {
        self.models.values().map(|e| e.ratio).sum()
    }

    pub fn ratios(&self) -> BTreeMap<&str, f64> {
        self.models.iter().map(|(k, e)| (k.as_str(), e.ratio)).collect()
    }

    pub fn assigned_levels(&self) -> Vec<f64> {
        self.models.values().filter_map(|e| e.level).collect()
    }

    /// Checks the plan against both side constraints and the simplex.
    pub fn check(&self, gamma: f64) -> Result<()> {
        if (self.ratio_sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Solver(format!("ratios sum to {}", self.ratio_sum())));
        }
        if let Some((name, _)) = self.models.iter().find(|(_, e)| e.ratio > 0.0 && e.level.is_none()) {
            return Err(Error::Solver(format!("model {name} has a share but no confidence level")));
        }
        if self.accuracy_mass() < self.refined_alpha {
            return Err(Error::Solver(format!(
                "accuracy mass {} below target {}",
                self.accuracy_mass(),
                self.refined_alpha
            )));
        }
        if !within_budget(&self.assigned_levels(), gamma) {
            return Err(Error::Solver("confidence budget exceeded".into()));
        }
        Ok(())
    }
}

/// A model bound at one level: (candidate index, level index).
type Choice = (usize, usize);

/// Levels each candidate may take. The reference is exact at level 1, which
/// costs no budget, so lower levels never help it.
fn choices(program: &MixProgram) -> Vec<Choice> {
    let top = program.levels.len() - 1;
    let mut out = Vec::new();
    for (i, c) in program.candidates.iter().enumerate() {
        if c.is_reference {
            out.push((i, top));
        } else {
            out.extend((0..program.levels.len()).map(|j| (i, j)));
        }
    }
    out
}

/// Exact optimum of the program.
pub fn solve_mix_exact(program: &MixProgram) -> Result<MixPlan> {
    if program.levels.is_empty() || program.candidates.is_empty() {
        return Err(Error::Solver("empty program".into()));
    }
    let alpha = program.alpha;
    let l = |(i, j): Choice| program.candidates[i].lower_bounds[j];
    let c = |(i, _): Choice| program.candidates[i].unit_cost;
    let level = |(_, j): Choice| program.levels[j];
    let all = choices(program);

    // (objective, [(choice, ratio)])
    let mut best: Option<(f64, Vec<(Choice, f64)>)> = None;
    let mut consider = |obj: f64, support: Vec<(Choice, f64)>| {
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, support));
        }
    };

    for &a in &all {
        if l(a) >= alpha && within_budget(&[level(a)], program.gamma) {
            consider(c(a), vec![(a, 1.0)]);
        }
    }
    for &a in &all {
        if l(a) < alpha {
            continue;
        }
        for &b in &all {
            if b.0 == a.0 || l(b) >= alpha || !within_budget(&[level(a), level(b)], program.gamma) {
                continue;
            }
            let xa = (alpha - l(b)) / (l(a) - l(b));
            let xb = 1.0 - xa;
            consider(xa * c(a) + xb * c(b), vec![(a, xa), (b, xb)]);
        }
    }

    let (_, support) = best.ok_or_else(|| Error::Solver("no feasible mix; the reference should always fit".into()))?;
    let mut plan = MixPlan {
        refined_alpha: alpha,
        models: program
            .candidates
            .iter()
            .map(|m| {
                (m.model.clone(), PlanEntry { ratio: 0.0, level: None, lower_bound: 0.0, unit_cost: m.unit_cost })
            })
            .collect(),
        objective: 0.0,
    };
    for &(ch, x) in &support {
        let e = plan.models.get_mut(&program.candidates[ch.0].model).expect("candidate present");
        e.ratio = x;
        e.level = Some(level(ch));
        e.lower_bound = l(ch);
    }
    if let [(hi, _), (lo, _)] = support[..] {
        nudge_to_target(&mut plan, &program.candidates[hi.0].model, &program.candidates[lo.0].model);
    }
    plan.objective = plan.models.values().map(|e| e.ratio * e.unit_cost).sum();
    plan.check(program.gamma)?;
    Ok(plan)
}

/// Shifts share from `lo` to `hi` one ulp at a time until rounding no
/// longer leaves the accuracy mass a hair under target.
fn nudge_to_target(plan: &mut MixPlan, hi: &str, lo: &str) {
    for _ in 0..256 {
        if plan.accuracy_mass() >= plan.refined_alpha {
            return;
        }
        let x = plan.models[hi].ratio.next_up().min(1.0);
        plan.models.get_mut(hi).expect("present").ratio = x;
        plan.models.get_mut(lo).expect("present").ratio = 1.0 - x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ModelId;
    use approx::assert_abs_diff_eq;

    fn program(alpha: f64, rows: &[(&str, f64, bool, &[f64])]) -> MixProgram {
        let levels = ConfidenceGrid::new(0.95, 0.01).unwrap().levels().to_vec();
        MixProgram {
            gamma: 0.95,
            alpha,
            levels,
            candidates: rows
                .iter()
                .map(|&(m, c, r, l)| MixCandidate {
                    model: m.into(),
                    unit_cost: c,
                    is_reference: r,
                    lower_bounds: l.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn grid_from_095_has_six_levels() {
        let g = ConfidenceGrid::new(0.95, 0.01).unwrap();
        assert_eq!(g.levels(), [0.95, 0.96, 0.97, 0.98, 0.99, 1.0]);
        assert_eq!(ConfidenceGrid::new(0.995, 0.01).unwrap().levels(), [0.995, 1.0]);
        assert!(ConfidenceGrid::new(1.0, 0.01).is_err());
    }

    #[test]
    fn refined_alpha_examples() {
        assert_abs_diff_eq!(refined_alpha(0.1, 0.0).unwrap(), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(refined_alpha(0.1, 0.5).unwrap(), 0.8, epsilon = 1e-15);
        assert_eq!(refined_alpha(0.1, 0.95).unwrap(), 0.0);
        assert!(refined_alpha(0.1, 1.0).is_err());
    }

    #[test]
    fn build_program_bounds() {
        let profiles = vec![
            ModelProfile::reference(ModelId::new("ref", 0.03), 0.03),
            ModelProfile { n: 100, e: 95, ..ModelProfile::candidate(ModelId::new("a", 0.001), 0.001) },
            ModelProfile::candidate(ModelId::new("fresh", 0.001), 0.001),
        ];
        let grid = ConfidenceGrid::new(0.95, 0.01).unwrap();
        let p = build_mix_program(&profiles, &grid, 0.1, 0.95, 0.0).unwrap();
        assert_eq!(p.candidates.iter().map(|c| c.model.as_str()).collect::<Vec<_>>(), ["a", "fresh", "ref"]);
        assert_abs_diff_eq!(p.candidates[0].lower_bounds[0], 0.887_165_088_9, epsilon = 1e-8);
        assert_eq!(p.candidates[0].lower_bounds[5], 0.0);
        assert!(p.candidates[1].lower_bounds.iter().all(|&l| l == 0.0));
        assert!(p.candidates[2].lower_bounds.iter().all(|&l| l == 1.0));
        assert!(build_mix_program(&profiles[1..], &grid, 0.1, 0.95, 0.0).is_err());
    }

    #[test]
    fn two_model_vertex() {
        let p = program(
            0.9,
            &[("a", 0.001, false, &[0.85, 0.84, 0.83, 0.82, 0.8, 0.0]), ("ref", 0.03, true, &[1.0; 6])],
        );
        let plan = solve_mix_exact(&p).unwrap();
        assert_abs_diff_eq!(plan.models["a"].ratio, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.models["ref"].ratio, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.objective, 0.010_666_666_666_666_667, epsilon = 1e-12);
        assert_eq!(plan.models["a"].level, Some(0.95));
        assert_eq!(plan.models["ref"].level, Some(1.0));
        plan.check(0.95).unwrap();
    }

    #[test]
    fn sufficient_cheap_model_takes_everything() {
        let p = program(
            0.8,
            &[
                ("a", 0.002, false, &[0.9, 0.89, 0.88, 0.87, 0.86, 0.0]),
                ("b", 0.001, false, &[0.85, 0.84, 0.83, 0.82, 0.81, 0.0]),
                ("ref", 0.03, true, &[1.0; 6]),
            ],
        );
        let plan = solve_mix_exact(&p).unwrap();
        assert_eq!(plan.models["b"].ratio, 1.0);
        assert_abs_diff_eq!(plan.objective, 0.001, epsilon = 1e-15);
    }

    #[test]
    fn only_reference_contributes_accuracy() {
        let p = program(0.9, &[("a", 0.001, false, &[0.0; 6]), ("ref", 0.03, true, &[1.0; 6])]);
        let plan = solve_mix_exact(&p).unwrap();
        // A zero-bound model can still absorb the 10% slack the reference leaves.
        assert_abs_diff_eq!(plan.models["ref"].ratio, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.objective, 0.9 * 0.03 + 0.1 * 0.001, epsilon = 1e-12);

        let p = program(1.0, &[("a", 0.001, false, &[0.0; 6]), ("ref", 0.03, true, &[1.0; 6])]);
        let plan = solve_mix_exact(&p).unwrap();
        assert_eq!(plan.models["ref"].ratio, 1.0);
        assert_eq!(plan.models["a"].level, None);
    }

    #[test]
    fn reference_only_pool() {
        let p = program(0.9, &[("ref", 0.03, true, &[1.0; 6])]);
        let plan = solve_mix_exact(&p).unwrap();
        assert_eq!(plan.models["ref"].ratio, 1.0);
        assert_abs_diff_eq!(plan.objective, 0.03, epsilon = 0.0);
    }

    #[test]
    fn budget_forbids_two_low_levels() {
        // Both cheap models are only good enough at 0.95; together they
        // would need 0.95 * 0.95 < 0.95.
        let p = program(
            0.9,
            &[
                ("a", 0.001, false, &[0.92, 0.5, 0.5, 0.5, 0.5, 0.0]),
                ("b", 0.0005, false, &[0.85, 0.5, 0.5, 0.5, 0.5, 0.0]),
                ("ref", 0.03, true, &[1.0; 6]),
            ],
        );
        let plan = solve_mix_exact(&p).unwrap();
        assert_eq!(plan.assigned_levels().len(), 2);
        plan.check(0.95).unwrap();
    }

    #[test]
    fn plan_serializes_per_model_records() {
        let p = program(0.9, &[("ref", 0.03, true, &[1.0; 6])]);
        let json = serde_json::to_value(solve_mix_exact(&p).unwrap()).unwrap();
        assert_eq!(json["models"]["ref"]["ratio"], 1.0);
        assert_eq!(json["models"]["ref"]["lower_bound"], 1.0);
        assert!(json["refined_alpha"].is_number());
    }
}

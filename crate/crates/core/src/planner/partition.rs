use std::collections::BTreeMap;

use super::MixPlan;

/// Splits `items` into contiguous runs sized by largest-remainder rounding
/// of each model's share.
///
/// Floors of `x_i * N` are handed out first; leftover items go one each to
/// models with a fractional part, highest lower bound first (then larger
/// remainder, then name). Runs are laid out in model-name order.
pub fn partition_by_ratios<'a, T>(items: &'a [T], plan: &MixPlan) -> BTreeMap<String, &'a [T]> {
    let n = items.len();
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rems = Vec::new();
    for (name, e) in &plan.models {
        if e.ratio <= 0.0 {
            continue;
        }
        let exact = e.ratio * n as f64;
        let floor = (exact.floor() as usize).min(n);
        sizes.insert(name, floor);
        let rem = exact - floor as f64;
        if rem > 0.0 {
            rems.push((name.as_str(), e.lower_bound, rem));
        }
    }
    rems.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(b.0)));

    let mut leftover = n.saturating_sub(sizes.values().sum());
    for (name, _, _) in rems.iter().take(leftover) {
        *sizes.get_mut(name).expect("present") += 1;
        leftover -= 1;
    }
    if leftover > 0 {
        // Ratios summing a hair under one with no fractional parts: give
        // the rest to the highest-bound model.
        if let Some((name, _)) = plan
            .models
            .iter()
            .filter(|(_, e)| e.ratio > 0.0)
            .max_by(|a, b| a.1.lower_bound.total_cmp(&b.1.lower_bound).then(b.0.cmp(a.0)))
        {
            *sizes.get_mut(name.as_str()).expect("present") += leftover;
        }
    }

    // Ratios summing a hair over one can leave the floors above n.
    let mut over = sizes.values().sum::<usize>().saturating_sub(n);
    for size in sizes.values_mut() {
        let cut = over.min(*size);
        *size -= cut;
        over -= cut;
    }

    let mut out = BTreeMap::new();
    let mut start = 0;
    for (name, size) in sizes {
        out.insert(name.to_string(), &items[start..start + size]);
        start += size;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::PlanEntry;
    use proptest::prelude::*;

    fn plan(entries: &[(&str, f64, f64)]) -> MixPlan {
        MixPlan {
            refined_alpha: 0.0,
            models: entries
                .iter()
                .map(|&(m, x, l)| {
                    (m.to_string(), PlanEntry { ratio: x, level: Some(1.0), lower_bound: l, unit_cost: 0.0 })
                })
                .collect(),
            objective: 0.0,
        }
    }

    fn sizes(parts: &BTreeMap<String, &[u32]>) -> Vec<(String, usize)> {
        parts.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    #[test]
    fn single_model_takes_all() {
        let items: Vec<u32> = (0..7).collect();
        let parts = partition_by_ratios(&items, &plan(&[("a", 1.0, 0.9)]));
        assert_eq!(parts["a"], &items[..]);
    }

    #[test]
    fn leftover_goes_to_higher_bound() {
        let items: Vec<u32> = (0..10).collect();
        let parts = partition_by_ratios(&items, &plan(&[("a", 0.25, 0.9), ("b", 0.75, 0.85)]));
        assert_eq!(sizes(&parts), [("a".into(), 3), ("b".into(), 7)]);
        assert_eq!(parts["a"], &[0, 1, 2]);
    }

    #[test]
    fn equal_thirds() {
        let items: Vec<u32> = (0..3).collect();
        let third = 1.0 / 3.0;
        let parts = partition_by_ratios(&items, &plan(&[("a", third, 0.5), ("b", third, 0.5), ("c", third, 0.5)]));
        assert_eq!(sizes(&parts).iter().map(|s| s.1).collect::<Vec<_>>(), [1, 1, 1]);
    }

    #[test]
    fn zero_share_models_get_nothing() {
        let items: Vec<u32> = (0..5).collect();
        let parts = partition_by_ratios(&items, &plan(&[("a", 0.0, 0.9), ("b", 1.0, 0.5)]));
        assert!(!parts.contains_key("a"));
        assert_eq!(parts["b"].len(), 5);
        assert!(partition_by_ratios::<u32>(&[], &plan(&[("b", 1.0, 0.5)]))["b"].is_empty());
    }

    proptest! {
        #[test]
        fn partition_is_a_close_disjoint_cover(
            weights in prop::collection::vec(0.0_f64..1.0, 1..6),
            bounds in prop::collection::vec(0.0_f64..1.0, 6),
            n in 0_usize..500,
        ) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-6);
            let names = ["a", "b", "c", "d", "e", "f"];
            let entries: Vec<_> = weights.iter().enumerate().map(|(i, w)| (names[i], w / total, bounds[i])).collect();
            let p = plan(&entries);
            let items: Vec<u32> = (0..n as u32).collect();
            let parts = partition_by_ratios(&items, &p);
            let joined: Vec<u32> = parts.values().flat_map(|s| s.iter().copied()).collect();
            prop_assert_eq!(&joined, &items);
            for (name, slice) in &parts {
                let want = p.models[name].ratio * n as f64;
                prop_assert!((slice.len() as f64 - want).abs() < 1.0 + 1e-9);
            }
        }
    }
}

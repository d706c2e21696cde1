use std::io::Write;

use serde::{Deserialize, Serialize};

use super::CellResult;
use crate::error::Result;
use crate::ledger::Ledger;
use crate::orchestrator::Variant;
use crate::profiler::{CostEstimate, TraceRecord};

/// Per `(benchmark, variant, delta)` aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub benchmark: String,
    pub variant: Variant,
    pub delta: f64,
    pub runs: usize,
    pub failed: usize,
    pub mean_cost: f64,
    pub mean_savings: f64,
    pub min_savings: f64,
    pub mean_agreement: f64,
    pub min_agreement: f64,
    pub violations: usize,
}

/// Groups cells by `(benchmark, variant, delta)` in first-seen order.
pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, Variant, f64)> = Vec::new();
    for c in cells {
        let key = (c.benchmark.as_str(), c.variant, c.delta);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(bench, variant, delta)| {
            let group: Vec<&CellResult> =
                cells.iter().filter(|c| c.benchmark == bench && c.variant == variant && c.delta == delta).collect();
            let ok: Vec<&&CellResult> = group.iter().filter(|c| !c.failed()).collect();
            let mean = |f: fn(&CellResult) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|c| f(c)).sum::<f64>() / ok.len() as f64
                }
            };
            let min = |f: fn(&CellResult) -> f64| ok.iter().map(|c| f(c)).fold(f64::NAN, f64::min);
            SummaryRow {
                benchmark: bench.to_string(),
                variant,
                delta,
                runs: group.len(),
                failed: group.len() - ok.len(),
                mean_cost: mean(|c| c.total_cost),
                mean_savings: mean(|c| c.savings),
                min_savings: min(|c| c.savings),
                mean_agreement: mean(|c| c.agreement),
                min_agreement: min(|c| c.agreement),
                violations: ok.iter().filter(|c| c.violation).count(),
            }
        })
        .collect()
}

/// `benchmark,variant,delta,seed,total_cost,savings,agreement,violation`;
/// failed cells are left out (see [`write_failures_csv`]).
pub fn write_sweep_csv(cells: &[CellResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["benchmark", "variant", "delta", "seed", "total_cost", "savings", "agreement", "violation"])?;
    for c in cells.iter().filter(|c| !c.failed()) {
        out.write_record([
            c.benchmark.clone(),
            c.variant.to_string(),
            c.delta.to_string(),
            c.seed.to_string(),
            c.total_cost.to_string(),
            c.savings.to_string(),
            c.agreement.to_string(),
            c.violation.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `benchmark,variant,delta,seed,model,items,cost`: items each model processed.
pub fn write_breakdown_csv(cells: &[CellResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["benchmark", "variant", "delta", "seed", "model", "items", "cost"])?;
    for c in cells {
        for b in &c.breakdown {
            out.write_record([
                c.benchmark.clone(),
                c.variant.to_string(),
                c.delta.to_string(),
                c.seed.to_string(),
                b.model.clone(),
                b.items.to_string(),
                b.cost.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `benchmark,variant,delta,seed,items_profiled,model,lower,upper`.
pub fn write_ci_trace_csv(cells: &[CellResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["benchmark", "variant", "delta", "seed", "items_profiled", "model", "lower", "upper"])?;
    for c in cells {
        for t in &c.ci_trace {
            out.write_record([
                c.benchmark.clone(),
                c.variant.to_string(),
                c.delta.to_string(),
                c.seed.to_string(),
                t.items_profiled.to_string(),
                t.model.clone(),
                t.lower.to_string(),
                t.upper.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// `benchmark,variant,delta,seed,error` for cells that could not finish.
pub fn write_failures_csv(cells: &[CellResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["benchmark", "variant", "delta", "seed", "error"])?;
    for c in cells {
        if let Some(e) = &c.error {
            out.write_record([c.benchmark.clone(), c.variant.to_string(), c.delta.to_string(), c.seed.to_string(), e.clone()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `model,invocations,tokens,cost`, one row per model in name order.
pub fn write_ledger_csv(ledger: &Ledger, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "invocations", "tokens", "cost"])?;
    for (model, e) in ledger.iter() {
        out.write_record([model.to_string(), e.invocations.to_string(), e.tokens.to_string(), e.cost.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `items_profiled,model,lower,upper` for a single run.
pub fn write_run_trace_csv(trace: &[TraceRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["items_profiled", "model", "lower", "upper"])?;
    for t in trace {
        for m in &t.models {
            out.write_record([t.items_profiled.to_string(), m.model.clone(), m.lower.to_string(), m.upper.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `k,profiling_cost,application_cost,total`.
pub fn write_expected_cost_csv(rows: &[CostEstimate], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::BreakdownRow;

    fn cell(variant: Variant, seed: u64, cost: f64, agreement: f64, error: Option<&str>) -> CellResult {
        CellResult {
            benchmark: "b".into(),
            variant,
            delta: 0.1,
            seed,
            total_cost: cost,
            savings: 10.0 / cost,
            agreement,
            violation: agreement < 0.9,
            profiled: 3,
            breakdown: vec![BreakdownRow { model: "m".into(), items: 4, cost }],
            ci_trace: Vec::new(),
            error: error.map(String::from),
        }
    }

    #[test]
    fn summary_aggregates_successful_cells() {
        let cells = vec![
            cell(Variant::ModelMix, 0, 2.0, 0.95, None),
            cell(Variant::ModelMix, 1, 5.0, 0.85, None),
            cell(Variant::ModelMix, 2, f64::NAN, f64::NAN, Some("boom")),
            cell(Variant::ProfileAll, 0, 10.0, 1.0, None),
        ];
        let rows = summarize(&cells);
        assert_eq!(rows.len(), 2);
        let mix = &rows[0];
        assert_eq!((mix.runs, mix.failed, mix.violations), (3, 1, 1));
        assert_eq!(mix.mean_cost, 3.5);
        assert_eq!(mix.min_savings, 2.0);
        assert_eq!(mix.min_agreement, 0.85);
    }

    #[test]
    fn sweep_csv_has_fixed_header_and_skips_failures() {
        let cells = vec![cell(Variant::ModelMix, 0, 2.0, 0.95, None), cell(Variant::ModelMix, 1, 1.0, 1.0, Some("x"))];
        let mut buf = Vec::new();
        write_sweep_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "benchmark,variant,delta,seed,total_cost,savings,agreement,violation");
        assert_eq!(lines[1], "b,model-mix,0.1,0,2,5,0.95,false");
        assert_eq!(lines.len(), 2);

        let mut buf = Vec::new();
        write_failures_csv(&cells, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("b,model-mix,0.1,1,x\n"));
    }

    #[test]
    fn breakdown_rows_per_model() {
        let mut buf = Vec::new();
        write_breakdown_csv(&[cell(Variant::ProfileSmart, 3, 2.5, 1.0, None)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "benchmark,variant,delta,seed,model,items,cost\nb,profile-smart,0.1,3,m,4,2.5\n"
        );
    }

    #[test]
    fn ledger_and_cost_tables() {
        let mut ledger = Ledger::new();
        ledger.record("b", 10, 0.5);
        ledger.record("a", 4, 0.25);
        let mut buf = Vec::new();
        write_ledger_csv(&ledger, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model,invocations,tokens,cost\na,1,4,0.25\nb,1,10,0.5\n");

        let mut buf = Vec::new();
        let row = CostEstimate { k: 2, profiling_cost: 1.0, application_cost: 3.0, total: 4.0 };
        write_expected_cost_csv(&[row], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,profiling_cost,application_cost,total\n2,1.0,3.0,4.0\n");
    }
}

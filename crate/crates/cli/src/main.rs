use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascade_core::config::Config;
use cascade_core::orchestrator::{smart_run, RunLog, Variant};
use cascade_core::sim::{self, realized_agreement, run_sweep};
use cascade_core::snapshot::Snapshot;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cost-optimal model cascades with agreement guarantees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Replaces the seed (and seed list) from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the accuracy slack (and slack list) from the config.
    #[arg(long)]
    delta: Option<f64>,
    /// profile-all, profile-smart, model-mix or reference-only.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload and write run.json, ledger.csv and snapshot.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every (scenario, variant, delta, seed) cell and write the CSV tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Expected cost of profiling k = 0, 1, 2, 4, ... more items.
    TraceExpectedCost {
        /// Saved snapshot to evaluate.
        #[arg(long, conflicts_with = "config")]
        snapshot: Option<PathBuf>,
        /// Build the snapshot by profiling the config's first items.
        #[arg(long, requires = "pause_after")]
        config: Option<PathBuf>,
        #[arg(long)]
        pause_after: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve the model mix for a saved snapshot.
    Plan {
        #[arg(long)]
        snapshot: PathBuf,
        /// Directory for plan.json; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path, o: &Overrides) -> Result<Config> {
    let mut cfg = Config::load(path)?;
    cfg.apply_overrides(o.seed, o.delta, o.variant)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(config: &Path, out: &Path, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    let setup = cfg.run_setup()?;
    let result = smart_run(&setup.pool, &setup.config, &cfg.question, &setup.items)?;
    fs::create_dir_all(out)?;

    let mut log = RunLog::new(serde_json::to_value(&cfg)?, &setup.config, &result);
    if let Some(labels) = setup.label_count {
        let agreement = realized_agreement(&result, labels);
        log.agreement = Some(agreement);
        log.violation = Some(agreement < 1.0 - setup.config.spec.delta);
    }
    write_json(out, "run.json", &log)?;
    write_json(out, "snapshot.json", &Snapshot::from_run(&setup.config, &result))?;
    sim::write_ledger_csv(&result.ledger, create(out, "ledger.csv")?)?;
    if setup.config.collect_trace {
        sim::write_run_trace_csv(&result.trace, create(out, "ci_trace.csv")?)?;
    }
    println!(
        "{}: {} items, {} profiled, total cost {:.6}{}",
        result.variant,
        result.outputs.len(),
        result.profiled,
        result.total_cost,
        log.agreement.map(|a| format!(", agreement {a:.4}")).unwrap_or_default()
    );
    Ok(())
}

fn sweep(config: &Path, out: &Path, parallel: usize, o: &Overrides) -> Result<()> {
    let cfg = load_config(config, o)?;
    let scenarios = cfg.sweep_scenarios()?;
    let result = run_sweep(&scenarios, parallel)?;
    fs::create_dir_all(out)?;
    let cells = &result.cells;
    sim::write_sweep_csv(cells, create(out, "sweep.csv")?)?;
    sim::write_breakdown_csv(cells, create(out, "breakdown.csv")?)?;
    sim::write_ci_trace_csv(cells, create(out, "ci_trace.csv")?)?;
    sim::write_summary_csv(&result.summary(), create(out, "summary.csv")?)?;
    sim::write_failures_csv(cells, create(out, "failures.csv")?)?;

    let failed = cells.iter().filter(|c| c.failed()).count();
    let violations = cells.iter().filter(|c| c.violation).count();
    println!("{} cells, {failed} failed, {violations} violations", cells.len());
    if failed > 0 {
        eprintln!("warning: {failed} cells failed; see failures.csv");
    }
    Ok(())
}

fn trace_expected_cost(
    snapshot: Option<&Path>,
    config: Option<&Path>,
    pause_after: Option<usize>,
    out: &Path,
    o: &Overrides,
) -> Result<()> {
    let (snap, opts) = match (snapshot, config) {
        (Some(p), _) => (Snapshot::load(p)?, Default::default()),
        (None, Some(c)) => {
            let cfg = load_config(c, o)?;
            let setup = cfg.run_setup()?;
            let pause = pause_after.expect("clap requires it");
            let snap = Snapshot::paused(&setup.pool, &setup.config, &cfg.question, &setup.items, pause)?;
            (snap, setup.config.estimator.clone())
        }
        (None, None) => bail!("give --snapshot or --config with --pause-after"),
    };
    let rows = snap.expected_cost_trace(opts)?;
    fs::create_dir_all(out)?;
    write_json(out, "snapshot.json", &snap)?;
    sim::write_expected_cost_csv(&rows, create(out, "expected_cost.csv")?)?;
    let best = rows.iter().min_by(|a, b| a.total.total_cmp(&b.total)).expect("k = 0 row");
    println!("{} rows; cheapest is k = {} at {:.6}", rows.len(), best.k, best.total);
    Ok(())
}

fn plan(snapshot: &Path, out: Option<&Path>) -> Result<()> {
    let plan = Snapshot::load(snapshot)?.plan()?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(dir, "plan.json", &plan)?;
            println!("objective {:.9} per item", plan.objective);
        }
        None => {
            // A closed pipe (`cascade plan ... | head`) is not an error.
            let text = serde_json::to_string_pretty(&plan)?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn validate_config(path: &Path) -> Result<()> {
    let cfg = Config::load(path)?;
    if cfg.preset.is_some() || cfg.scenario()?.is_some() {
        let cells: usize =
            cfg.sweep_scenarios()?.iter().map(|s| s.variants.len() * s.deltas.len() * s.seeds.len()).sum();
        println!("ok: sweep of {cells} cells");
    } else {
        println!("ok: {} models, reference {}", cfg.models.len(), cfg.reference.as_deref().unwrap_or("-"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, out, overrides } => run(config, out, overrides),
        Command::Sweep { config, out, parallel, overrides } => sweep(config, out, *parallel, overrides),
        Command::TraceExpectedCost { snapshot, config, pause_after, out, overrides } => {
            trace_expected_cost(snapshot.as_deref(), config.as_deref(), *pause_after, out, overrides)
        }
        Command::Plan { snapshot, out } => plan(snapshot, out.as_deref()),
        Command::ValidateConfig { config } => validate_config(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use edca_sim::engine::{run_scenario, RunOptions};
use edca_sim::output::{self, RunSummary};
use edca_sim::{load_scenario, Scenario, SimError};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sim", version, about = "802.11 DCF/EDCF discrete-event simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario file or preset name (A, B, C)
    #[arg(long)]
    scenario: String,
    /// Override duration in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Override warmup in seconds
    #[arg(long)]
    warmup: Option<f64>,
    /// Load multiplier (divides every flow's packet interval)
    #[arg(long)]
    load: Option<f64>,
}

impl ScenarioArgs {
    fn resolve(&self) -> edca_sim::Result<Scenario> {
        let mut s = load_scenario(&self.scenario)?;
        if let Some(d) = self.duration {
            s.duration_s = d;
        }
        if let Some(w) = self.warmup {
            s.warmup_s = w;
        }
        if let Some(l) = self.load {
            s.load_multiplier = l;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario with one seed and write the output files
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write events.csv
        #[arg(long)]
        trace: bool,
    },
    /// Run seeds 1..=n in parallel and aggregate
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        seeds: u64,
        /// Directory for per-seed outputs and sweep.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare saturated DCF throughput with the analytic model
    ValidateDcf {
        #[arg(long)]
        stations: u32,
        #[arg(long, default_value_t = 800)]
        payload: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Measured seconds after warmup
        #[arg(long, default_value_t = 60.0)]
        measure: f64,
    },
    /// Rebuild summaries and CDF tables from a run directory's CSVs
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn run_one(scenario: &Scenario, seed: u64, out: Option<&Path>, trace: bool) -> Result<RunSummary> {
    let res = run_scenario(scenario, seed, RunOptions { trace })?;
    let summary = output::summarize(scenario, &res)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_atomic(dir, "throughput.csv", &output::throughput_csv(&res))?;
        write_atomic(dir, "delays.csv", &output::delays_csv(&res))?;
        write_atomic(dir, "delay_cdf.csv", &output::delay_cdf_csv(&output::delay_samples(&res)))?;
        write_atomic(dir, "summary.json", &summary.to_json())?;
        if trace {
            write_atomic(dir, "events.csv", &output::events_csv(&res))?;
        }
    }
    Ok(summary)
}

fn print_table(s: &RunSummary) {
    println!(
        "{} seed {}  window {:.1} s",
        s.scenario,
        s.seed,
        s.duration_s - s.warmup_s
    );
    println!("flow  ac   B/s        b/s         norm    gen     deliv   drops  p50_us   p99_us");
    for f in &s.flows {
        println!(
            "{:<5} {:<4} {:<10.1} {:<11.1} {:<7} {:<7} {:<7} {:<6} {:<8} {}",
            f.flow_id,
            f.access_category.to_string(),
            f.throughput_bytes_per_s,
            f.throughput_bps,
            f.normalized_throughput.map_or("-".into(), |v| format!("{v:.4}")),
            f.generated,
            f.delivered,
            f.dropped_total,
            f.delay_p50_us.map_or("-".into(), |v| v.to_string()),
            f.delay_p99_us.map_or("-".into(), |v| v.to_string()),
        );
    }
    println!(
        "total generated {} delivered {} lost {} in-flight {}; disassociations {}",
        s.totals.generated,
        s.totals.delivered,
        s.totals.dropped_total,
        s.totals.in_flight,
        s.roaming.disassociations
    );
}

fn report(dir: &Path) -> Result<()> {
    let mut delays: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(dir.join("delays.csv"))?;
    for row in rdr.deserialize() {
        let (flow, d): (u32, u64) = row?;
        delays.entry(flow).or_default().push(d);
    }
    let mut tp = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("throughput.csv"))?;
    for row in rdr.deserialize() {
        let (t, flow, bytes, _bps): (f64, u32, u64, f64) = row?;
        tp.push((t, flow, bytes));
    }
    let mut drops = Vec::new();
    let events = dir.join("events.csv");
    if events.exists() {
        let mut rdr = csv::Reader::from_path(events)?;
        for row in rdr.deserialize() {
            let (_t, _st, ev, _frame, flow, reason): (u64, u32, String, Option<u64>, Option<u32>, String) = row?;
            if ev == "dropped" {
                if let Some(flow) = flow {
                    drops.push((flow, reason));
                }
            }
        }
    }
    let flows = output::report_from_raw(&delays, &tp, &drops);
    write_atomic(dir, "delay_cdf.csv", &output::delay_cdf_csv(&delays))?;
    let json = serde_json::to_string_pretty(&flows)? + "\n";
    write_atomic(dir, "report.json", &json)?;
    print!("{json}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            trace,
        } => {
            let s = scenario.resolve()?;
            let summary = run_one(&s, seed, Some(&out), trace)?;
            print_table(&summary);
        }
        Cmd::Sweep {
            scenario,
            seeds,
            out,
        } => {
            let s = scenario.resolve()?;
            let runs: Vec<RunSummary> = (1..=seeds)
                .into_par_iter()
                .map(|seed| {
                    let dir = out.as_ref().map(|o| o.join(format!("seed-{seed}")));
                    run_one(&s, seed, dir.as_deref(), false)
                })
                .collect::<Result<_>>()?;
            let agg = output::aggregate(&runs)?;
            let json = serde_json::to_string_pretty(&agg)? + "\n";
            if let Some(o) = &out {
                write_atomic(o, "sweep.json", &json)?;
            }
            print!("{json}");
        }
        Cmd::ValidateDcf {
            stations,
            payload,
            seed,
            measure,
        } => {
            let v = output::validate_dcf(stations, payload, seed, measure)?;
            println!(
                "n={} payload={} B  simulated {:.0} b/s  analytic {:.0} b/s  relative error {:.4}",
                v.stations, v.payload_bytes, v.simulated_bps, v.analytic_bps, v.relative_error
            );
            println!("{}", serde_json::to_string(&v)?);
        }
        Cmd::Report { input } => report(&input)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let audit = e.downcast_ref::<SimError>().is_some_and(SimError::is_audit);
            ExitCode::from(if audit { 2 } else { 1 })
        }
    }
}

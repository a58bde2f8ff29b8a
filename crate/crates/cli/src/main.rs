use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cams_core::sim::{self, RunSummary};
use cams_core::trace::{format_sig, read_trace, write_trace};
use cams_core::{report, validation, Scenario};

/// Simulate mixed human-robot surveillance missions.
#[derive(Parser)]
#[command(name = "cams", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission and write its event trace as CSV.
    Run {
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run independent replications and write one summary row per seed.
    Sweep {
        scenario: PathBuf,
        /// Inclusive seed range, e.g. 1..100.
        #[arg(long, value_parser = parse_seeds)]
        seeds: RangeInclusive<u64>,
        /// Summary file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the validation suite; exit status 1 if any check fails.
    Validate {
        /// Run only this check (1-9).
        #[arg(long)]
        criterion: Option<usize>,
    },
    /// Render a trace CSV as one SVG chart per panel.
    Report {
        trace: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn parse_seeds(s: &str) -> std::result::Result<RangeInclusive<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: u64 = a
        .trim()
        .parse()
        .map_err(|e| format!("bad start seed {a:?}: {e}"))?;
    let b: u64 = b
        .trim_start_matches('=')
        .trim()
        .parse()
        .map_err(|e| format!("bad end seed {b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..=b)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<Scenario> {
    match Scenario::load(path) {
        Ok(s) => Ok(s),
        Err(cams_core::Error::Config(errs)) => {
            bail!("invalid scenario:\n  {}", errs.join("\n  "))
        }
        Err(e) => Err(e).with_context(|| format!("cannot load {}", path.display())),
    }
}

fn write_summaries(out: &mut dyn Write, scenario: &Scenario, rows: &[RunSummary]) -> Result<()> {
    let m = scenario.region_count();
    let mut header = vec!["seed".to_string(), "tasks".into()];
    header.extend((1..=scenario.anomalies.len()).map(|i| format!("anomaly_{i}_detected_at")));
    header.extend(
        [
            "all_detected",
            "in_onset_order",
            "false_alarms",
            "mean_queue",
            "max_queue",
        ]
        .map(String::from),
    );
    header.extend((1..=m).map(|k| format!("detections_{k}")));
    writeln!(out, "{}", header.join(","))?;

    let onsets: Vec<f64> = scenario.anomalies.iter().map(|a| a.onset).collect();
    for s in rows {
        let mut row = vec![s.seed.to_string(), s.tasks_processed.to_string()];
        row.extend(
            s.anomaly_detected_at
                .iter()
                .map(|t| t.map(format_sig).unwrap_or_default()),
        );
        row.push(u8::from(s.all_detected()).to_string());
        row.push(u8::from(s.detected_in_onset_order(&onsets)).to_string());
        row.push(s.false_alarms.to_string());
        row.push(format_sig(s.mean_queue_length));
        row.push(s.max_queue_length.to_string());
        row.extend(s.detections_per_region(m).iter().map(usize::to_string));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn validate(criterion: Option<usize>) -> Result<bool> {
    let reports = match criterion {
        Some(id) => match validation::run_check(id) {
            Some(r) => vec![r],
            None => bail!("no check numbered {id}"),
        },
        None => validation::run_all(),
    };
    let mut ok = true;
    for r in &reports {
        println!("{}", r.summary_line());
        for f in r.failures() {
            println!("    failed: {f}");
        }
        ok &= r.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CAMS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
        } => (|| {
            let sc = load(&scenario)?;
            let run = sim::run_with_seed(&sc, seed.unwrap_or(sc.run.seed))?;
            log::info!(
                "{} tasks, {} detections, {} false alarms",
                run.summary.tasks_processed,
                run.summary.detections.len(),
                run.summary.false_alarms
            );
            let mut w = output(out.as_deref())?;
            write_trace(&mut w, &run.trace)?;
            w.flush()?;
            Ok(true)
        })(),
        Command::Sweep {
            scenario,
            seeds,
            out,
        } => (|| {
            let sc = load(&scenario)?;
            let rows = sim::sweep(&sc, seeds)?;
            let mut w = output(out.as_deref())?;
            write_summaries(&mut w, &sc, &rows)?;
            w.flush()?;
            Ok(true)
        })(),
        Command::Validate { criterion } => validate(criterion),
        Command::Report { trace, out } => (|| {
            let f =
                File::open(&trace).with_context(|| format!("cannot open {}", trace.display()))?;
            let t = read_trace(f).with_context(|| format!("cannot read {}", trace.display()))?;
            for p in report::write_report(&t, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

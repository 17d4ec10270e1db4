use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eecw::engine::{self, SweepAxis, SweepOptions};
use eecw::oracle::{read_trace, Lemma2Checker};
use eecw::presets;
use eecw::{ConfigFile, Error};

#[derive(Parser)]
#[command(name = "eecw", version = eecw::engine::BUILD_ID, about = "Simulate and check the EECW controller")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write trace.csv and summary.json.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long, env = "EECW_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Sweep one parameter over seeded runs and write a results table.
    Sweep {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Axis name; defaults to the preset's axis.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated axis values; defaults to the preset's values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        slots: Option<u64>,
        /// Also write every run's trace.
        #[arg(long)]
        traces: bool,
        #[arg(long, env = "EECW_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Check a trace against the Lemma 2 invariants.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// List built-in presets, or print one preset's config as JSON.
    Presets { name: Option<String> },
}

enum Failure {
    Violation,
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invariant { .. } | Error::Numerical(_) => Failure::Internal(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load(config: Option<&Path>, preset: Option<&str>) -> Result<(ConfigFile, Option<presets::Preset>), Failure> {
    match (config, preset) {
        (Some(path), _) => Ok((ConfigFile::load(path)?, None)),
        (None, Some(name)) => {
            let p = presets::preset(name).ok_or_else(|| {
                Failure::Usage(format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", ")))
            })?;
            Ok((p.config.clone(), Some(p)))
        }
        (None, None) => Err(Failure::Usage("either --config or --preset is required".into())),
    }
}

fn cmd_run(
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
    slots: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let (mut file, _) = load(config, preset)?;
    if let Some(s) = seed {
        file.run.seed = s;
    }
    if let Some(n) = slots {
        file.run.horizon_slots = n;
    }
    let s = engine::run_config(&file, Some(out))?;
    println!(
        "slots={} energy_per_slot_j={:e} backlog_bits={:e} drop_fraction={} stable={} out={}",
        s.horizon,
        s.avg_energy_per_slot,
        s.avg_sum_backlog,
        s.drop_fraction,
        s.stable,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: Option<&Path>,
    preset: Option<&str>,
    axis: Option<&str>,
    values: &[f64],
    runs: usize,
    threads: usize,
    slots: Option<u64>,
    traces: bool,
    out: &Path,
) -> Result<(), Failure> {
    let (mut file, preset) = load(config, preset)?;
    if let Some(n) = slots {
        file.run.horizon_slots = n;
    }
    let preset_sweep = preset.and_then(|p| p.sweep);
    let axis = match axis {
        Some(a) => Some(SweepAxis::parse(a).ok_or_else(|| Failure::Usage(format!("unknown axis {a:?}")))?),
        None => None,
    };
    let values = match (values.is_empty(), &preset_sweep) {
        (false, _) => values.to_vec(),
        (true, Some(sw)) => sw.values.clone(),
        (true, None) => return Err(Failure::Usage("--values is required without a preset sweep".into())),
    };
    let variants: Vec<(String, SweepAxis, ConfigFile)> = match (preset_sweep, axis) {
        (Some(sw), _) => sw
            .variants
            .into_iter()
            .map(|mut v| {
                v.config.run.horizon_slots = file.run.horizon_slots;
                (v.label, axis.unwrap_or(v.axis), v.config)
            })
            .collect(),
        (None, Some(a)) => vec![("base".to_string(), a, file)],
        (None, None) => return Err(Failure::Usage("--axis is required without a preset sweep".into())),
    };
    std::fs::create_dir_all(out)?;
    let mut table = Vec::new();
    for (i, (label, axis, base)) in variants.iter().enumerate() {
        let trace_dir = if traces {
            let d = out.join(format!("traces_{i}"));
            std::fs::create_dir_all(&d)?;
            Some(d)
        } else {
            None
        };
        let points = engine::sweep(base, *axis, &values, &SweepOptions { runs, threads, trace_dir })?;
        let name = format!("sweep_{i}.csv");
        engine::write_sweep_csv(std::fs::File::create(out.join(&name))?, *axis, &points)?;
        println!("{label}: {} points -> {}", points.len(), out.join(&name).display());
        table.push(serde_json::json!({ "variant": label, "axis": axis.name(), "file": name, "points": points }));
    }
    let json = serde_json::to_string_pretty(&table).map_err(|e| Failure::Internal(e.to_string()))?;
    std::fs::write(out.join("sweep.json"), json)?;
    Ok(())
}

fn cmd_check(trace: &Path, config: &Path) -> Result<(), Failure> {
    let file = ConfigFile::load(config)?;
    let (topo, cfg) = file.resolve()?;
    let rate = eecw::RateModel::from_config(&cfg)?;
    let consts = eecw::derive_constants(&cfg, &topo, &rate)?;
    let records = read_trace(std::fs::File::open(trace)?, &topo)?;
    let mut ck = Lemma2Checker::new(&topo, &consts);
    for r in &records {
        ck.check(r);
    }
    let json = serde_json::to_string_pretty(&ck.violations).map_err(|e| Failure::Internal(e.to_string()))?;
    println!("{json}");
    if ck.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { config, preset, seed, slots, out } => {
            cmd_run(config.as_deref(), preset.as_deref(), *seed, *slots, out)
        }
        Cmd::Sweep { config, preset, axis, values, runs, threads, slots, traces, out } => cmd_sweep(
            config.as_deref(),
            preset.as_deref(),
            axis.as_deref(),
            values,
            *runs,
            *threads,
            *slots,
            *traces,
            out,
        ),
        Cmd::Check { trace, config } => cmd_check(trace, config),
        Cmd::Presets { name: Some(name) } => match presets::preset(name) {
            Some(p) => {
                println!("{}", p.config.to_json_pretty());
                Ok(())
            }
            None => Err(Failure::Usage(format!("unknown preset {name:?}"))),
        },
        Cmd::Presets { name: None } => {
            for name in presets::NAMES {
                let p = presets::preset(name).expect("listed preset exists");
                println!("{name:20} {}", p.description);
            }
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal fault: {msg}");
            ExitCode::from(3)
        }
    }
}

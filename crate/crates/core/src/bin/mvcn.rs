use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvcn_core::harness::experiment::{format_checks, CheckResult};
use mvcn_core::harness::presets::{self, PRESETS};
use mvcn_core::harness::{fit_rate, fit_rate_resolved, run_experiment, write_outputs, ExperimentConfig};
use mvcn_core::metric::build_metric_with;
use mvcn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mvcn", version, about = "McKean-Vlasov particle experiments with common noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a config field, e.g. `--set coupling.delta=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Distorted-metric utilities.
    Metric {
        #[command(subcommand)]
        action: MetricAction,
    },
    /// Fit an exponential rate to a column of a time-series CSV.
    Fit {
        csv: PathBuf,
        /// Column name; defaults to the first data column.
        #[arg(long)]
        column: Option<String>,
        /// Known floor instead of the estimated plateau.
        #[arg(long)]
        floor: Option<f64>,
    },
    /// Run every config in a directory and regress plateaus on N.
    Scaling {
        dir: PathBuf,
        #[arg(long, default_value = "w2")]
        column: String,
        #[arg(long, default_value = "out/scaling")]
        out: PathBuf,
        /// Override a field in every config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a named preset, or print its config.
    Preset {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the JSON config instead of running.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Subcommand)]
enum MetricAction {
    /// Write the tabulated metric of the config's potential as CSV.
    Dump {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn print_checks(checks: &[CheckResult], prefix: &str) -> bool {
    for c in checks {
        println!("{} {prefix}: {} [{}]", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.pass)
}

fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let o = run_experiment(cfg)?;
    write_outputs(&o, out)?;
    for w in &o.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", format_checks(&o));
    Ok(o.all_pass())
}

struct Series {
    name: String,
    t: Vec<f64>,
    v: Vec<f64>,
    se: Option<Vec<f64>>,
}

fn read_series(path: &Path, column: Option<&str>) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?
        .split(',')
        .collect();
    let k = match column {
        Some(c) => header
            .iter()
            .position(|h| *h == c)
            .ok_or_else(|| Error::InvalidArgument(format!("no column {c}")))?,
        None => 1,
    };
    if k >= header.len() {
        return Err(Error::InvalidArgument("CSV has no data column".into()));
    }
    let se_name = format!("{}_se", header[k]);
    let ks = header.iter().position(|h| *h == se_name);
    let (mut t, mut v, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for (i, l) in lines.enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad number `{s}`", i + 2)))
        };
        if f.len() <= k.max(ks.unwrap_or(0)) {
            return Err(Error::InvalidArgument(format!("row {} is short", i + 2)));
        }
        t.push(parse(f[0])?);
        v.push(parse(f[k])?);
        if let Some(j) = ks {
            se.push(parse(f[j])?);
        }
    }
    Ok(Series {
        name: header[k].to_string(),
        t,
        v,
        se: ks.map(|_| se),
    })
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, set } => {
            run_config(&ExperimentConfig::load_with_overrides(&config, &set)?, &out)
        }
        Command::Metric {
            action: MetricAction::Dump { config, out, set },
        } => {
            let cfg = ExperimentConfig::load_with_overrides(&config, &set)?;
            let v = cfg.potential.build()?;
            let w = cfg.interaction.build()?;
            let m = build_metric_with(&v, cfg.sigma0, cfg.metric.options())?;
            match out {
                Some(p) => m.write_csv(Some(&w), &mut std::fs::File::create(p)?)?,
                None => m.write_csv(Some(&w), &mut std::io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::Fit { csv, column, floor } => {
            let s = read_series(&csv, column.as_deref())?;
            let f = match &s.se {
                Some(se) => fit_rate_resolved(&s.t, &s.v, se, floor)?,
                None => fit_rate(&s.t, &s.v, floor)?,
            };
            println!("column={}", s.name);
            println!("rate={:.10e}", f.rate);
            println!("rate_se={:.10e}", f.rate_se);
            println!("ci=[{:.10e}, {:.10e}]", f.ci_low, f.ci_high);
            println!("plateau={:.10e}", f.plateau);
            println!("window=[{:.10e}, {:.10e}] points={}", f.t_start, f.t_end, f.points);
            println!("r_squared={:.6}", f.r_squared);
            Ok(true)
        }
        Command::Scaling { dir, column, out, set } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            let configs = paths
                .iter()
                .map(|p| ExperimentConfig::load_with_overrides(p, &set))
                .collect::<Result<Vec<_>>>()?;
            scaling(&configs, &column, &out)
        }
        Command::Preset { name, out, print } => {
            if print {
                match name.as_str() {
                    "chaos_scaling" => {
                        for c in presets::chaos_configs() {
                            println!("{}", c.to_json());
                        }
                    }
                    "p6_threshold" => println!("{{}}"),
                    _ => println!("{}", presets::preset_config(&name)?.to_json()),
                }
                return Ok(true);
            }
            match name.as_str() {
                "chaos_scaling" => scaling(&presets::chaos_configs(), "w2", &out.join(&name)),
                "p6_threshold" => {
                    let t = presets::p6_threshold()?;
                    std::fs::create_dir_all(&out)?;
                    std::fs::write(out.join("p6_threshold.json"), serde_json::to_string_pretty(&t)?)?;
                    Ok(print_checks(&[t.check], "p6_threshold"))
                }
                _ if PRESETS.contains(&name.as_str()) => {
                    run_config(&presets::preset_config(&name)?, &out.join(&name))
                }
                _ => Err(Error::InvalidArgument(format!(
                    "unknown preset `{name}`; known: {}",
                    PRESETS.join(", ")
                ))),
            }
        }
    }
}

fn scaling(configs: &[ExperimentConfig], column: &str, out: &Path) -> Result<bool> {
    let (rep, checks) = presets::run_scaling(configs, column, Some(out))?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("scaling.json"), serde_json::to_string_pretty(&rep)?)?;
    let mut all = checks;
    all.push(presets::slope_check(&rep));
    Ok(print_checks(&all, "scaling"))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

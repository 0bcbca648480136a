use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use windstab::kundur::{build_kundur_two_area, BaseCase};
use windstab::powerflow::{solve_power_flow, PowerFlowOptions};
use windstab::scenario::{
    canned_cases, control_mode_flags, export_report, load_scenario, run_scenario, run_sensitivity_sweep,
    simulate_scenario, ExportFormat, Exportable, Report, Scenario,
};
use windstab::smib::{save_grid_csv, smib_sensitivity_grid, SmibParams};
use windstab::timedomain::SimulationOptions;

/// Environment variable naming the directory that receives output files.
const OUT_DIR_ENV: &str = "WINDSTAB_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "windstab",
    version,
    about = "Small-signal and time-domain studies of DFIG frequency support"
)]
struct Cli {
    /// Output directory (default: $WINDSTAB_OUT_DIR or the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    A,
    B,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the power flow of a base case or scenario.
    Powerflow {
        #[arg(long, value_enum, default_value = "a")]
        case: Case,
        #[arg(long, conflicts_with = "case")]
        scenario: Option<PathBuf>,
    },
    /// SMIB eigenvalue grid over droop gains.
    Smib {
        #[arg(long, default_value = "0:50:10")]
        kp: String,
        #[arg(long, default_value = "0:50:10")]
        kin: String,
        #[arg(long, default_value_t = 3.5)]
        h: f64,
        #[arg(long, default_value_t = 10.0)]
        kd: f64,
        #[arg(long, default_value_t = 0.75)]
        ks: f64,
        #[arg(long, default_value = "smib_grid.csv")]
        out: PathBuf,
    },
    /// Modal analysis of one scenario.
    Modal {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Time-domain simulation of the scenario's events.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        tend: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt_max: f64,
        /// Keep every n-th step in the output trace.
        #[arg(long, default_value_t = 10)]
        record_every: usize,
    },
    /// Droop-gain sensitivity sweep.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "0:50:10")]
        kp: String,
        #[arg(long, default_value = "0:50:10")]
        kin: String,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Summary table over the canned scenarios.
    Report {
        #[arg(long, required = true)]
        all_paper_cases: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
fn parse_axis(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if step.is_nan() || step <= 0.0 || stop < start {
            bail!("invalid range `{text}`");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| start + step * k as f64).collect());
    }
    let v: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("invalid axis `{text}`"))?;
    if v.is_empty() {
        bail!("empty axis");
    }
    Ok(v)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("output: cannot create {}", dir.display()))?;
    Ok(dir)
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("threads: cannot configure the worker pool")?;
    }
    Ok(())
}

fn scenario_from(path: &Path) -> Result<Scenario> {
    load_scenario(path).with_context(|| format!("scenario: {}", path.display()))
}

fn print_report(r: &Report) {
    println!(
        "{:<18} stable={:<5} tie={:>7.1} MW",
        r.scenario, r.stable, r.power_flow.tie_flow_mw
    );
    for (class, m) in &r.dominant {
        println!(
            "  {:<18} {:>9.4} {:+9.4}i  f={:.3} Hz  zeta={:.4}  ccbg-pi={:.3}",
            class.as_str(),
            m.re,
            m.im,
            m.frequency_hz,
            m.damping,
            m.ccbg_pi
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Powerflow { case, scenario } => {
            let network = match scenario {
                Some(p) => scenario_from(p)?.build_case().context("scenario")?.network,
                None => {
                    let c = match case {
                        Case::A => BaseCase::A,
                        Case::B => BaseCase::B,
                        Case::C => BaseCase::C,
                    };
                    build_kundur_two_area(c).network
                }
            };
            let pf = solve_power_flow(&network, PowerFlowOptions::default()).context("powerflow")?;
            println!(
                "converged in {} iterations, mismatch {:.2e} pu",
                pf.iterations, pf.mismatch_norm
            );
            println!(
                "{:>4} {:>8} {:>9} {:>9} {:>9}",
                "bus", "|V| pu", "angle deg", "P gen MW", "Q gen Mvar"
            );
            let base = network.system_base_mva;
            for (k, id) in pf.bus_ids.iter().enumerate() {
                let v = pf.voltages[k];
                let s = pf.generation[k] * base;
                println!(
                    "{id:>4} {:>8.4} {:>9.3} {:>9.1} {:>9.1}",
                    v.norm(),
                    v.arg().to_degrees(),
                    s.re,
                    s.im
                );
            }
        }
        Command::Smib {
            kp,
            kin,
            h,
            kd,
            ks,
            out,
        } => {
            let params = SmibParams {
                h: *h,
                kd: *kd,
                ks: *ks,
                ..SmibParams::default()
            };
            let grid = smib_sensitivity_grid(&params, &parse_axis(kp)?, &parse_axis(kin)?).context("smib")?;
            let path = out_dir(cli)?.join(out);
            save_grid_csv(&grid, &path).context("output")?;
            for p in &grid {
                println!(
                    "kp={:>5} kin={:>5}  {:>9.4} {:+9.4}i  zeta={:.4}{}",
                    p.kp,
                    p.kin,
                    p.re,
                    p.im,
                    p.damping,
                    if p.oscillatory_flag { "" } else { "  (real roots)" }
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Modal { scenario, format } => {
            let s = scenario_from(scenario)?;
            let report = run_scenario(&s)?;
            print_report(&report);
            let fmt = ExportFormat::from(*format);
            let path = out_dir(cli)?.join(format!("{}_modal.{}", s.name, fmt.extension()));
            export_report(Exportable::Report(&report), fmt, &path).context("output")?;
            println!("wrote {}", path.display());
        }
        Command::Simulate {
            scenario,
            tend,
            dt_max,
            record_every,
        } => {
            let s = scenario_from(scenario)?;
            let opts = SimulationOptions {
                t_end: *tend,
                dt_max: *dt_max,
                dt_min: SimulationOptions::default().dt_min.min(*dt_max),
                record_every: *record_every,
                ..SimulationOptions::default()
            };
            let trace = simulate_scenario(&s, &opts)?;
            let path = out_dir(cli)?.join(format!("{}_trace.csv", s.name));
            trace.save_csv(&path).context("output")?;
            println!(
                "{} samples to t = {:.3} s; wrote {}",
                trace.len(),
                trace.time.last().unwrap_or(&0.0),
                path.display()
            );
        }
        Command::Sweep {
            scenario,
            kp,
            kin,
            threads,
            format,
        } => {
            set_threads(*threads)?;
            let s = scenario_from(scenario)?;
            let sweep = run_sensitivity_sweep(&s, &parse_axis(kp)?, &parse_axis(kin)?).context("sweep")?;
            let failed = sweep.cells.iter().filter(|c| c.error.is_some()).count();
            let fmt = ExportFormat::from(*format);
            let path = out_dir(cli)?.join(format!("{}_sweep.{}", s.name, fmt.extension()));
            export_report(Exportable::Sweep(&sweep), fmt, &path).context("output")?;
            println!(
                "{} cells ({failed} failed); wrote {}",
                sweep.cells.len(),
                path.display()
            );
        }
        Command::Report {
            all_paper_cases,
            threads,
        } => {
            if !all_paper_cases {
                bail!("report: nothing selected");
            }
            set_threads(*threads)?;
            use rayon::prelude::*;
            let cases = canned_cases().context("scenario")?;
            let reports: Vec<Report> = cases.par_iter().map(run_scenario).collect::<windstab::Result<_>>()?;
            for r in &reports {
                print_report(r);
            }
            // canned order: no wind, then voltage/reactive pairs
            for pair in reports[1..].chunks(2) {
                if let [v, q] = pair {
                    let flagged = control_mode_flags(v, q);
                    if !flagged.is_empty() {
                        println!(
                            "note: {} vs {} differ by more than 0.05 in damping for {flagged:?}",
                            v.scenario, q.scenario
                        );
                    }
                }
            }
            let dir = out_dir(cli)?;
            for fmt in [ExportFormat::Csv, ExportFormat::Json] {
                let path = dir.join(format!("summary.{}", fmt.extension()));
                export_report(Exportable::Reports(&reports), fmt, &path).context("output")?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_ranges() {
        assert_eq!(parse_axis("0:50:10").unwrap(), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        assert_eq!(parse_axis("5").unwrap(), vec![5.0]);
        assert_eq!(parse_axis("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_axis("0:10:0").is_err());
        assert!(parse_axis("a").is_err());
    }
}

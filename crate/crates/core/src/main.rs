use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fiber_dpg::config::RunConfig;
use fiber_dpg::studies::{run_file, StudyReport};

#[derive(Parser)]
#[command(name = "fiber-dpg", version, about = "Ultraweak DPG Maxwell solver for Raman gain in step-index fibers")]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a configuration file.
    Run { config: PathBuf },
}

fn summary(r: &StudyReport) -> String {
    match r {
        StudyReport::Mms(m) => m.slopes.iter().map(|(p, s)| format!("p={p}: slope {s:.3}")).collect::<Vec<_>>().join(", "),
        StudyReport::LinearFiber(l) => format!(
            "power deviation {:.3e}, dominance {:.2}, terminal ratio {:.2e}",
            l.max_deviation, l.dominance_ratio, l.terminal_ratio
        ),
        StudyReport::CompareFormulations(c) => c
            .rows
            .iter()
            .map(|r| format!("{}/wl: uw {:.3} primal {:.3}", r.elements_per_wavelength, r.uw_ratio(), r.primal_ratio()))
            .collect::<Vec<_>>()
            .join(", "),
        StudyReport::Raman(r) => format!(
            "{} after {} iterations, signal {:.4e} -> {:.4e}",
            if r.converged { "converged" } else { "not converged" },
            r.iterations,
            r.signal.first().copied().unwrap_or(f64::NAN),
            r.signal.last().copied().unwrap_or(f64::NAN)
        ),
        StudyReport::OracleOnly(o) => {
            format!("closed-form error {:.3e}, flux drift {:.3e}", o.closed_form_error, o.flux_drift)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        print!("{}", RunConfig::default().to_toml());
        return ExitCode::SUCCESS;
    }
    match cli.command {
        Some(Command::Run { config }) => match run_file(&config) {
            Ok(r) => {
                println!("{}", summary(&r));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        None => {
            eprintln!("error: no command given (try `fiber-dpg run <config>` or `--help`)");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fragsim::cli::{run_all, run_scenario, write_table, RunOptions};

#[derive(Parser)]
#[command(name = "fragsim", version, about = "Decay-fragmentation scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every *.json scenario in a directory and print a summary table.
    RunAll {
        dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Results directory (run) or parent of per-scenario directories (run-all).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Also write the dense generator to generator.txt.
    #[arg(long)]
    dump_generator: bool,
}

impl From<Overrides> for RunOptions {
    fn from(o: Overrides) -> Self {
        RunOptions {
            out: o.out,
            rtol: o.rtol,
            atol: o.atol,
            t_end: o.t_end,
            dump_generator: o.dump_generator,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { file, overrides } => match run_scenario(&file, &overrides.into()) {
            Ok((dir, outcome)) => {
                for note in &outcome.manifest.notes {
                    eprintln!("note: {note}");
                }
                println!("{}", dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::RunAll { dir, overrides } => match run_all(&dir, &overrides.into()) {
            Ok(rows) => {
                write_table(&rows, std::io::stdout().lock()).expect("stdout");
                if rows.iter().any(|r| r.failed()) {
                    ExitCode::FAILURE
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}

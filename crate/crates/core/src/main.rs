use clap::Parser;
use reslab::harness::{parse_config, run, Experiment};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one experiment and write rows.csv, summary.json and plotdata/ under the output directory.
///
/// Exit codes: 0 all gates pass, 1 gate failure, 2 configuration error, 3 numerical failure.
#[derive(Parser, Debug)]
#[command(name = "reslab", version)]
struct Cli {
    /// shape, nonnormal, isolated, gapless, crossing or diagnostics.
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "reslab-out")]
    out: PathBuf,
    #[arg(long, env = "RESLAB_WORKERS")]
    workers: Option<usize>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match launch(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("reslab: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn launch(cli: &Cli) -> reslab::Result<i32> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = parse_config(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let code = run(experiment, &cfg, &cli.out, workers)?;
    let verdict = match code {
        0 => "all gates passed",
        1 => "gate failure",
        _ => "numerical failure",
    };
    eprintln!("reslab {experiment}: {verdict}; artifacts in {}", cli.out.display());
    Ok(code)
}

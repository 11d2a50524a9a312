//! `pevo` command-line front end: runs the check → tune → solve → audit
//! pipeline (or a single stage) for one or more JSON run configurations.

use clap::{Parser, Subcommand};
use pevo::scenarios::{config_schema, list_presets, run_pipeline, stages_for, RunConfig, RunOutcome, EXIT_CONFIG};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "pevo", version, about = "Spectral solver and verification harness for p-evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Print the scenario presets with their default parameters and exit.
    #[arg(long, global = true)]
    list_presets: bool,
    /// Print the JSON Schema of run configurations and exit.
    #[arg(long, global = true)]
    print_schema: bool,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Run configuration(s) (JSON). Several configurations are independent
    /// runs; with more than one, each writes to `<out>/<file stem>/`.
    #[arg(long = "config", required = true, num_args = 1..)]
    configs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "pevo-out")]
    out: PathBuf,
    /// Number of worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the RNG seed of every configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip tuning: use `pack.m` (default all zero) and `pack.tune.h_initial`.
    #[arg(long)]
    skip_tune: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decay-condition check only.
    Check(RunArgs),
    /// Tune the transform constants.
    Tune(RunArgs),
    /// Linear solve (transformed when configured).
    SolveLinear(RunArgs),
    /// Newton solve of the semilinear problem.
    Solve(RunArgs),
    /// Solve and run the energy audit.
    Audit(RunArgs),
    /// Full check → tune → solve → audit pipeline.
    Pipeline(RunArgs),
}

fn run_one(command: &str, path: &Path, out: &Path, args: &RunArgs) -> (i32, String) {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return (EXIT_CONFIG, format!("{}: cannot read: {e}", path.display())),
    };
    let mut config = match RunConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            let _ = std::fs::create_dir_all(out);
            let record = serde_json::json!({ "stage": "config", "exit_code": EXIT_CONFIG, "message": e.to_string() });
            let _ = std::fs::write(out.join("failure.json"), format!("{record:#}\n"));
            return (EXIT_CONFIG, format!("{}: {e}", path.display()));
        }
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.skip_tune {
        config.pack.skip_tune = true;
    }
    let stages = match stages_for(command, &config) {
        Ok(s) => s,
        Err(e) => return (EXIT_CONFIG, e.to_string()),
    };
    let outcome: RunOutcome = run_pipeline(&config, &stages, Some(out));
    let msg = match &outcome.failure {
        None => format!("{}: ok ({} artifacts in {})", path.display(), outcome.artifacts.len(), out.display()),
        Some(f) => format!("{}: {:?} failed (exit {}): {}", path.display(), f.stage, f.exit_code, f.message),
    };
    (outcome.exit_code, msg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_presets {
        for p in list_presets() {
            let default = serde_json::to_string(&p.default).unwrap_or_default();
            println!("{:<12} {}\n             default: {}", p.name, p.description, default);
        }
        return ExitCode::SUCCESS;
    }
    if cli.print_schema {
        println!("{:#}", config_schema());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given (try --help)");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    let (name, args) = match command {
        Command::Check(a) => ("check", a),
        Command::Tune(a) => ("tune", a),
        Command::SolveLinear(a) => ("solve-linear", a),
        Command::Solve(a) => ("solve", a),
        Command::Audit(a) => ("audit", a),
        Command::Pipeline(a) => ("pipeline", a),
    };
    let multi = args.configs.len() > 1;
    let outs: Vec<PathBuf> = args
        .configs
        .iter()
        .map(|c| if multi { args.out.join(c.file_stem().unwrap_or_default()) } else { args.out.clone() })
        .collect();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let results: Vec<(i32, String)> = pool
        .install(|| args.configs.par_iter().zip(outs.par_iter()).map(|(c, o)| run_one(name, c, o, &args)).collect());
    let mut code = 0;
    for (c, msg) in &results {
        if *c == 0 {
            println!("{msg}");
        } else {
            eprintln!("{msg}");
            if code == 0 {
                code = *c;
            }
        }
    }
    ExitCode::from(code as u8)
}

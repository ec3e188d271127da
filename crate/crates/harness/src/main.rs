use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use svsa_harness::{
    format_table, output_root, parse_seed_range, run_experiment_in, verify_with, ExperimentConfig, HarnessError,
    VerifyOptions, REGISTRY,
};

#[derive(Parser)]
#[command(name = "svsa", version, about = "Run set-valued stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Run { config: PathBuf },
    /// Run every acceptance check and print a pass/fail table.
    Verify {
        /// Exponent of the polynomial schedule that should validate.
        #[arg(long, default_value_t = 0.75)]
        schedule_q: f64,
    },
    /// Run one config over a range of seeds in parallel.
    Sweep {
        config: PathBuf,
        /// Seed range, `a..b` (exclusive) or `a..=b`.
        #[arg(long)]
        seeds: String,
    },
    /// List registered experiment ids.
    List,
}

fn exit_for(err: &HarnessError) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(path: PathBuf) -> ExitCode {
    let root = output_root();
    let result = ExperimentConfig::load(&path).and_then(|cfg| {
        let summary = run_experiment_in(&cfg, &root)?;
        Ok((cfg, summary))
    });
    match result {
        Ok((cfg, summary)) => {
            for (name, ok) in &summary.checks {
                println!("{:<20} {}", name, verdict(*ok));
            }
            println!("{} -> {}", summary.id, cfg.output_dir(&root).display());
            println!("{}", verdict(summary.pass));
            ExitCode::from(u8::from(!summary.pass))
        }
        Err(e) => exit_for(&e),
    }
}

fn sweep(path: PathBuf, seeds: &str) -> ExitCode {
    let root = output_root();
    let prepared = ExperimentConfig::load(&path).and_then(|cfg| {
        let range = parse_seed_range(seeds)?;
        cfg.validate()?;
        Ok((cfg, range))
    });
    let (cfg, range) = match prepared {
        Ok(p) => p,
        Err(e) => return exit_for(&e),
    };
    let results: Vec<_> = range
        .into_par_iter()
        .map(|seed| {
            // one directory per seed, regardless of any fixed `output`
            let mut run = cfg.with_seed(seed);
            let base = cfg.output.clone().unwrap_or_else(|| PathBuf::from(&cfg.id));
            run.output = Some(base.join(format!("seed-{seed}")));
            (seed, run_experiment_in(&run, &root))
        })
        .collect();
    let mut worst = 0u8;
    for (seed, r) in &results {
        match r {
            Ok(s) => {
                println!("seed {seed:<6} {}", verdict(s.pass));
                worst = worst.max(u8::from(!s.pass));
            }
            Err(e) => {
                println!("seed {seed:<6} error: {e}");
                worst = worst.max(if e.is_config_error() { 2 } else { 1 });
            }
        }
    }
    ExitCode::from(worst)
}

fn verify(schedule_q: f64) -> ExitCode {
    let rows = verify_with(&VerifyOptions { polynomial_q: schedule_q });
    print!("{}", format_table(&rows));
    let root = output_root();
    let written = std::fs::create_dir_all(&root)
        .and_then(|_| std::fs::write(root.join("verify.json"), serde_json::to_string_pretty(&rows).unwrap_or_default()));
    if let Err(e) = written {
        eprintln!("warning: cannot write {}: {e}", root.join("verify.json").display());
    }
    ExitCode::from(u8::from(!rows.iter().all(|r| r.pass)))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(config),
        Command::Verify { schedule_q } => verify(schedule_q),
        Command::Sweep { config, seeds } => sweep(config, &seeds),
        Command::List => {
            for e in REGISTRY {
                println!("{:<16} {}{}", e.id, e.summary, if e.stochastic { "" } else { " (deterministic)" });
            }
            ExitCode::SUCCESS
        }
    }
}

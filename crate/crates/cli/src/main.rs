use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slap_cli::attacks::{run_attack, AttackConfig, AttackKind, AttackReport};
use slap_cli::bench::{run_bench, BenchPhase, MIN_REPS};
use slap_cli::report::write_json;
use slap_cli::run::{run_scenario, write_run};
use slap_cli::scenario::{bundled, Scenario};
use slap_cli::vectors::{write_vectors, VectorModule};
use slap_cli::CliError;
use slap_core::tlp::{Profile, PROFILE_ENV};

#[derive(Parser)]
#[command(name = "slap", version, about = "Anonymous, location-verified spectrum access: simulation and analysis")]
struct Cli {
    /// Puzzle modulus size.
    #[arg(long, global = true, env = PROFILE_ENV, default_value = "toy", value_parser = parse_profile)]
    profile: Profile,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, summary.txt and trace.ndjson.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an attack suite (`all` for every kind).
    Attack {
        kind: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time a protocol phase or the primitives (`all` for every phase).
    Bench {
        phase: String,
        #[arg(long, default_value_t = MIN_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate test vectors (`all` for every module).
    Vectors {
        #[arg(default_value = "all")]
        module: String,
        #[arg(long, default_value = "vectors")]
        out: PathBuf,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn pick<T: Copy>(name: &str, all: &[T], parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, CliError> {
    if name == "all" {
        Ok(all.to_vec())
    } else {
        parse(name).map(|k| vec![k]).map_err(CliError::Config)
    }
}

fn load(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Scenario::load(path)?);
    }
    match bundled(arg) {
        Some(text) => Ok(Scenario::parse(text, arg)?),
        None => Err(CliError::Config(format!("no scenario file or bundled scenario named `{arg}`"))),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let bits = cli.profile.modulus_bits();
    match cli.command {
        Command::Run { scenario, seed, out } => {
            let s = load(&scenario)?;
            let (report, d) = run_scenario(&s, seed, Some(bits))?;
            print!("{}", report.summary());
            if let Some(out) = out {
                write_run(&out, &report, &d)?;
            }
            if !report.reconciled() {
                return Err(CliError::Internal("byte accounting does not reconcile".into()));
            }
            if !report.all_accepted() {
                let why: Vec<_> = report.sessions.iter().filter_map(|s| s.error.clone()).collect();
                return Err(CliError::Rejected(why.join("; ")));
            }
            Ok(())
        }
        Command::Attack { kind, trials, seed, out } => {
            let cfg = AttackConfig {
                trials,
                seed,
                tlp_bits: bits,
                ..Default::default()
            };
            let mut reports: Vec<AttackReport> = Vec::new();
            for k in pick(&kind, &AttackKind::ALL, |s| s.parse())? {
                for r in run_attack(k, &cfg)? {
                    println!("{}", r.line());
                    reports.push(r);
                }
            }
            if let Some(out) = out {
                write_json(&out, "attacks.json", &reports)?;
            }
            match reports.iter().find(|r| !r.pass) {
                Some(r) => Err(CliError::Rejected(format!("{} outside its expected acceptance rate", r.label))),
                None => Ok(()),
            }
        }
        Command::Bench { phase, reps, seed, out } => {
            let mut reports = Vec::new();
            for p in pick(&phase, &BenchPhase::ALL, |s| s.parse())? {
                let r = run_bench(p, reps, seed, bits)?;
                print!("{}", r.summary());
                reports.push(r);
            }
            if let Some(out) = out {
                write_json(&out, "bench.json", &reports)?;
            }
            match reports.iter().find(|r| !r.passed()) {
                Some(r) => Err(CliError::Rejected(format!("bench {} failed a check", r.phase))),
                None => Ok(()),
            }
        }
        Command::Vectors { module, out } => {
            for path in write_vectors(&pick(&module, &VectorModule::ALL, |s| s.parse())?, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

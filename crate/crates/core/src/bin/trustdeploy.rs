use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trustdeploy::closure::Term;
use trustdeploy::harness::{
    check_transcript, replay_attack_suite, run_scenario, write_artifacts, ReportFormat, ScenarioConfig,
};
use trustdeploy::sim::parse_transcript;

#[derive(Parser)]
#[command(name = "trustdeploy", version, about = "Run commissioning and key-establishment scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run { config: PathBuf },
    /// Run every attack battery against a base scenario.
    AttackSuite { config: PathBuf },
    /// Re-run the secrecy closure over a saved transcript.
    Check {
        transcript: PathBuf,
        /// Extra atom the adversary knows, e.g. `sk:EMS:ems`. Repeatable.
        #[arg(long = "knows")]
        knows: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Structured,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Structured => ReportFormat::Structured,
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli, path: &Path) -> Result<i32, String> {
    let cfg = load(path, cli.seed)?;
    let run = run_scenario(cfg).map_err(|e| e.to_string())?;
    write_artifacts(&run, &cli.out, cli.format.into()).map_err(|e| e.to_string())?;
    print!("{}", ReportFormat::from(cli.format).render(&run.report));
    Ok(run.exit_code())
}

fn attack_suite(cli: &Cli, path: &Path) -> Result<i32, String> {
    let cfg = load(path, cli.seed)?;
    let batteries = replay_attack_suite(&cfg).map_err(|e| e.to_string())?;
    let mut all_blocked = true;
    for b in &batteries {
        write_artifacts(&b.run, &cli.out.join(&b.name), cli.format.into()).map_err(|e| e.to_string())?;
        let kinds: Vec<&str> = b.run.report.rejections.iter().map(|r| r.kind.as_str()).collect();
        let verdict = if b.blocked() { "blocked" } else { "NOT BLOCKED" };
        println!("{:<32} exit {}  {verdict:<12} {}", b.name, b.run.exit_code(), kinds.join(","));
        all_blocked &= b.blocked();
    }
    println!("{} batteries, {}", batteries.len(), if all_blocked { "all blocked" } else { "some not blocked" });
    Ok(if all_blocked { 2 } else { 1 })
}

fn check(cli: &Cli, path: &Path, knows: &[String]) -> Result<i32, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let events = parse_transcript(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let extra: Vec<Term> = knows.iter().map(Term::atom).collect();
    let results = check_transcript(&events, &extra);
    match cli.format {
        Format::Structured => {
            println!("{}", serde_json::to_string_pretty(&results).map_err(|e| e.to_string())?);
        }
        Format::Text => {
            for r in &results {
                println!("{:<28} {}", r.secret.to_string(), if r.derivable { "DERIVABLE" } else { "secret" });
                for step in r.path.iter().flatten() {
                    println!("    {step}");
                }
            }
        }
    }
    Ok(if results.iter().any(|r| r.derivable) { 1 } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::AttackSuite { config } => attack_suite(&cli, config),
        Command::Check { transcript, knows } => check(&cli, transcript, knows),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

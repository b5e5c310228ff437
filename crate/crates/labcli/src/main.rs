use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srlab_cli::config::ExperimentConfig;
use srlab_cli::report;
use srlab_cli::runner::{run_stages, Stage};
use srlab_cli::suite::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "srlab", version, about = "Sub-Riemannian geodesic and control-regularity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for the bundle and artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of control intervals.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage of the pipeline.
    Run,
    /// Shortest-path solves only.
    Solve,
    /// Moduli, Hoelder constants and the Poincare ratio of solved controls.
    Regularity,
    /// Duality gaps of the interpolation functional and its dual.
    Kfunc,
    /// First-variation bounds and second-order endpoint behavior.
    Variation,
    /// Fourier partial sums and weighted coefficient sums.
    Fourier,
    /// Ball-box exponent probes.
    Ballbox,
    /// The acceptance suite.
    VerifyAll {
        #[arg(default_value = "smoke")]
        suite: Suite,
    },
}

fn load(cli: &Cli) -> srlab::Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(g) = cli.grid {
        c.grid = g;
    }
    if let Some(o) = &cli.out {
        c.output = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn verify_all(suite: Suite, out: Option<&PathBuf>) -> ExitCode {
    println!("acceptance suite: {:?}", suite);
    let outcomes = run_suite(suite, |o| {
        println!("{}", o.line());
        for d in &o.detail {
            println!("       {}", d);
        }
    });
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
    println!(
        "{} of {} criteria pass in {:.1}s{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        total,
        if failed.is_empty() { String::new() } else { format!("; failing: {:?}", failed) }
    );
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&outcomes).expect("serializable");
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("acceptance.json"), json)) {
            eprintln!("error: {}: {}", dir.display(), e);
            return ExitCode::from(2);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stages: Vec<Stage> = match &cli.command {
        Command::VerifyAll { suite } => return verify_all(*suite, cli.out.as_ref()),
        Command::Run => Stage::PIPELINE.to_vec(),
        Command::Solve => vec![Stage::Solve],
        Command::Regularity => vec![Stage::Regularity],
        Command::Kfunc => vec![Stage::Kfunc],
        Command::Variation => vec![Stage::Variation],
        Command::Fourier => vec![Stage::Fourier],
        Command::Ballbox => vec![Stage::Ballbox],
    };
    let c = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {}", e);
            return ExitCode::from(2);
        }
    };
    let (bundle, artifacts) = match run_stages(&c, &stages) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}", e);
            return ExitCode::from(2);
        }
    };
    print!("{}", report::summary_table(&bundle));
    match report::write_all(&c.output, &bundle, &artifacts) {
        Ok(p) => println!("bundle written to {}", p.display()),
        Err(e) => {
            eprintln!("error: {}", e);
            return ExitCode::from(2);
        }
    }
    if bundle.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsvar_cli::config::RunConfig;
use hsvar_cli::pipeline::{self, write_json, Job};
use hsvar_cli::sim::{run_simulation, SimConfig};
use hsvar_cli::{CliError, CliResult};
use serde::Serialize;

/// Heteroskedastic SVAR identification and robust-Bayes impulse-response bounds.
#[derive(Parser)]
#[command(name = "hsvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-regime structural VAR.
    Simulate(Common),
    /// Estimate the reduced form.
    Estimate(Common),
    /// Eigenvalues and the heteroskedasticity test cascade.
    TestHet(Common),
    /// Eigen solution and identification status under the restrictions.
    Identify(Common),
    /// Posterior bounds, skipping the distinct-eigenvalue shortcut.
    Bounds(Common),
    /// Full pipeline.
    Run(Common),
}

fn load(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.algo.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    provenance: &'a pipeline::Provenance,
    #[serde(flatten)]
    body: T,
}

fn emit<T: Serialize>(job: &Job, name: &str, body: T) -> CliResult<PathBuf> {
    std::fs::create_dir_all(&job.cfg.out).map_err(|e| CliError::io(&job.cfg.out, e))?;
    let path = job.cfg.out.join(name);
    write_json(&path, &Stamped { provenance: &job.provenance, body })?;
    Ok(path)
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("HSVAR_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| CliError::Config(format!("HSVAR_THREADS={v:?} is not a count")))?;
        if n == 0 {
            return Err(CliError::Config("HSVAR_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn report_files(report: &pipeline::Report, out: &Path) -> CliResult<()> {
    let files = pipeline::write_report(report, out)?;
    println!("branch: {:?}", report.branch);
    println!(
        "accepted {} of {} posterior draws (emptiness rate {:.4})",
        report.draws.accepted, report.draws.total, report.draws.emptiness_rate
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} and {} response files", out.join("report.json").display(), files.len());
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let mut cfg = SimConfig::load(&c.config)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let out = c.out.clone().unwrap_or_else(|| cfg.out.clone());
            let (csv, template) = run_simulation(&cfg, &out)?;
            println!("wrote {} and {}", csv.display(), template.display());
        }
        Command::Estimate(c) => {
            let job = Job::load(load(&c)?)?;
            let est = pipeline::estimate(&job)?;
            println!("{} estimate: log-likelihood {:.4}", est.estimator, est.log_likelihood);
            println!("wrote {}", emit(&job, "estimate.json", est)?.display());
        }
        Command::TestHet(c) => {
            let job = Job::load(load(&c)?)?;
            let rf = pipeline::estimate(&job)?.rf.expect("reduced form");
            let (sol, _) = pipeline::identify(&job, &rf)?;
            let het = pipeline::het_tests(&job, &rf, &sol)?;
            print!("{}", pipeline::render_tables(&het));
            println!("wrote {}", emit(&job, "het_tests.json", het)?.display());
        }
        Command::Identify(c) => {
            let job = Job::load(load(&c)?)?;
            job.cfg.require_partition()?;
            let rf = pipeline::estimate(&job)?.rf.expect("reduced form");
            let (sol, ident) = pipeline::identify(&job, &rf)?;
            let het = pipeline::het_tests(&job, &rf, &sol)?;
            print!("{}", pipeline::render_tables(&het));
            println!("identification: {:?}, convexity: {:?}", ident.status.kind, ident.status.convexity);
            println!("wrote {}", emit(&job, "identify.json", ident)?.display());
        }
        Command::Bounds(c) => full(&c, true)?,
        Command::Run(c) => full(&c, false)?,
    }
    Ok(())
}

fn full(c: &Common, force: bool) -> CliResult<()> {
    let job = Job::load(load(c)?)?;
    let report = pipeline::run(&job, force)?;
    print!("{}", pipeline::render_tables(&report.het));
    println!(
        "identification: {:?}, convexity: {:?}",
        report.identification.status.kind, report.identification.status.convexity
    );
    report_files(&report, &job.cfg.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line front end: dataset files, run reports and the subcommands.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use args::{Cli, Command, GenKind, KernelArgs};
use commands::{
    CommandConfig, DemoConfig, EstimateConfig, Execution, FileRef, GenConfig, GradcheckConfig, KernelConfig,
    PerturbConfig, PgaOptions,
};
use error::{CliError, CliResult};
use report::{OutputRecord, RunReport, Timing, REPORT_FORMAT, REPORT_VERSION};

const DEFAULT_MOONS_N: usize = 200;
const DEFAULT_TRUNCNORM_N: usize = 2000;

fn kernel_config(k: &KernelArgs) -> CliResult<KernelConfig> {
    Ok(KernelConfig {
        sigma: k.sigma,
        sigma_heuristic: k.sigma_heuristic.into(),
        embedding: k.embedding.as_deref().map(FileRef::of).transpose()?,
    })
}

fn pga_options(eps: f64, norm: args::Norm, eta: Option<f64>, iters: usize) -> PgaOptions {
    PgaOptions { eps, norm: norm.into(), eta, iters }
}

/// Turns parsed arguments into a run config plus the requested report path.
fn plan(command: Command) -> CliResult<(CommandConfig, Option<PathBuf>)> {
    Ok(match command {
        Command::Estimate(a) => (
            CommandConfig::Estimate(EstimateConfig {
                data: FileRef::of(&a.data)?,
                kernel: kernel_config(&a.kernel)?,
                out: a.out,
            }),
            a.report,
        ),
        Command::Perturb(a) => {
            let (frozen_file, frozen) = match &a.frozen {
                Some(path) => {
                    let f = FileRef::of(path)?;
                    let set = io::parse_frozen(&io::read_text(path)?, &path.display().to_string())?;
                    (Some(f), set.into_iter().collect())
                }
                None => (None, Vec::new()),
            };
            (
                CommandConfig::Perturb(PerturbConfig {
                    data: FileRef::of(&a.data)?,
                    kernel: kernel_config(&a.kernel)?,
                    pga: pga_options(a.pga.eps, a.pga.norm, a.pga.eta, a.pga.iters),
                    frozen_file,
                    frozen,
                    out: a.out,
                }),
                a.report,
            )
        }
        Command::Gradcheck(a) => (
            CommandConfig::Gradcheck(GradcheckConfig {
                data: FileRef::of(&a.data)?,
                kernel: kernel_config(&a.kernel)?,
                h: a.h,
                tie_tolerance: a.tie_tol,
            }),
            a.report,
        ),
        Command::Gen(a) => {
            let cfg = match a.kind {
                GenKind::Moons => {
                    GenConfig::Moons { n: a.n.unwrap_or(DEFAULT_MOONS_N), noise: a.noise, seed: a.seed, out: a.out }
                }
                GenKind::Truncnorm => {
                    GenConfig::Truncnorm { n: a.n.unwrap_or(DEFAULT_TRUNCNORM_N), seed: a.seed, out: a.out }
                }
            };
            (CommandConfig::Gen(cfg), a.report)
        }
        Command::Demo(a) => {
            let (cfg, stem) = match a.name {
                GenKind::Truncnorm => (
                    DemoConfig::Truncnorm {
                        n: a.n.unwrap_or(DEFAULT_TRUNCNORM_N),
                        seed: a.seed,
                        sigma_heuristic: a.sigma_heuristic.into(),
                        out_dir: a.out.clone(),
                    },
                    "truncnorm",
                ),
                GenKind::Moons => (
                    DemoConfig::Moons {
                        n: a.n.unwrap_or(DEFAULT_MOONS_N),
                        noise: a.noise,
                        seed: a.seed,
                        sigma_heuristic: a.sigma_heuristic.into(),
                        pga: pga_options(a.eps, a.norm, a.eta, a.iters),
                        out_dir: a.out.clone(),
                    },
                    "moons",
                ),
            };
            let report = a.report.unwrap_or_else(|| a.out.join(format!("{stem}.report.json")));
            (CommandConfig::Demo(cfg), Some(report))
        }
        Command::Replay(_) => unreachable!("replay is handled before planning"),
    })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::user("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::internal(format!("cannot start thread pool: {e}"))),
    }
}

fn output_records(ex: &Execution) -> Vec<OutputRecord> {
    ex.outputs
        .iter()
        .map(|o| OutputRecord {
            role: o.role.clone(),
            path: o.path.clone(),
            sha256: io::sha256_hex(o.contents.as_bytes()),
        })
        .collect()
}

fn emit(out: &mut dyn Write, lines: &[String]) -> CliResult<()> {
    for line in lines {
        writeln!(out, "{line}").map_err(|e| CliError::internal(e.to_string()))?;
    }
    Ok(())
}

fn run_fresh(
    config: CommandConfig,
    report_path: Option<PathBuf>,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let start = Instant::now();
    let ex = in_pool(threads, || commands::execute(&config))??;
    let elapsed = start.elapsed().as_secs_f64();

    for o in &ex.outputs {
        io::write_text(&o.path, &o.contents)?;
    }
    emit(out, &ex.summary)?;
    let warnings: Vec<String> = ex.warnings.iter().map(|w| format!("warning: {w}")).collect();
    emit(out, &warnings)?;

    if let Some(path) = report_path {
        let report = RunReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            command: config.name().into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config,
            threads,
            results: ex.results.clone(),
            outputs: output_records(&ex),
            warnings: ex.warnings.clone(),
            timing: Timing { wall_seconds: elapsed },
        };
        io::write_text(&path, &report.to_json())?;
    }
    match ex.failure {
        Some(msg) => Err(CliError::internal(msg)),
        None => Ok(()),
    }
}

/// Re-executes a report's config without writing files; results and output
/// hashes must match bit for bit.
fn run_replay(path: &std::path::Path, threads: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let report = RunReport::load(path)?;
    let ex = in_pool(threads.or(report.threads), || commands::execute(&report.config))??;
    if ex.results != report.results {
        return Err(CliError::internal(format!("replay of {} produced different results", path.display())));
    }
    if output_records(&ex) != report.outputs {
        return Err(CliError::internal(format!("replay of {} produced different output files", path.display())));
    }
    emit(out, &[format!("replay ok: {} results and {} output file(s) identical", report.command, report.outputs.len())])
}

/// Runs a parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Replay(a) => run_replay(&a.report, cli.threads, out),
        command => {
            let (config, report) = plan(command)?;
            run_fresh(config, report, cli.threads, out)
        }
    }
}

//! `stealthy-lab`: seeded experiment pipelines with JSON reports.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use commands::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Parser)]
#[command(name = "stealthy-lab", version, about = "Experiments on stealthy hyperuniform fields and point sets")]
struct Cli {
    /// TOML file with command parameters; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "STEALTHY_LAB_THREADS")]
    threads: Option<usize>,
    /// Directory for reports, tables and generated data.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample Gaussian fields with a given structure function.
    SampleField(SampleField),
    /// Generate certified stealthy point configurations.
    GenPoints(GenPoints),
    /// Check that gap-supported linear statistics do not fluctuate.
    VerifyLinstat(VerifyLinstat),
    /// Sliding-cube point count audit.
    AuditAnticonc(AuditAnticonc),
    /// Largest empty ball of point configurations.
    FindHoles(FindHoles),
    /// Explicit bound on hole radii.
    HoleBound(HoleBoundArgs),
    /// Recover erased field values from the rest of the field.
    ReconstructField(ReconstructField),
    /// Recover points inside a ball from the points outside it.
    ReconstructPoints(ReconstructPoints),
    /// Decay of linear-statistic variance with the window scale.
    VarianceDecay(VarianceDecay),
    /// Recover inside moments from outside field values.
    RecoverMoments(RecoverMoments),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn global<T: serde::de::DeserializeOwned>(
    file: &serde_json::Map<String, Value>,
    key: &str,
) -> Result<Option<T>, Failure> {
    file.get(key)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| Failure::Usage(format!("config key {key}: {e}"))))
        .transpose()
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let file = config::load(cli.config.as_deref()).map_err(Failure::Usage)?;
    let ctx = Context {
        seed: cli.seed.or(global(&file, "seed")?).unwrap_or(0),
        out: cli.out.or(global(&file, "out")?),
        format: cli.format.or(global(&file, "format")?).unwrap_or(Format::Json),
    };
    if let Some(threads) = cli.threads.or(global(&file, "threads")?) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    let merge = |e: String| Failure::Usage(e);
    let outcome = match cli.command {
        Command::SampleField(a) => sample_field(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::GenPoints(a) => gen_points(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::VerifyLinstat(a) => verify_linstat(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::AuditAnticonc(a) => audit_anticonc(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::FindHoles(a) => find_holes(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::HoleBound(a) => hole_bound_cmd(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::ReconstructField(a) => reconstruct_field(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::ReconstructPoints(a) => reconstruct_points(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::VarianceDecay(a) => variance_decay(&ctx, config::merge(&file, &a).map_err(merge)?),
        Command::RecoverMoments(a) => recover_moments(&ctx, config::merge(&file, &a).map_err(merge)?),
    }?;
    emit(&ctx, &outcome)?;
    let failing = outcome.report.failing();
    if !failing.is_empty() {
        eprintln!("predicate failed: {}", failing.join(", "));
    }
    Ok(outcome.report.pass)
}

fn emit(ctx: &Context, outcome: &Outcome) -> Result<(), Failure> {
    let json = outcome.report.to_json().map_err(|e| Failure::Run(e.to_string()))?;
    // a closed pipe (e.g. `| head`) is not an error; reports are still saved below
    if let Err(e) = writeln!(std::io::stdout().lock(), "{json}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(Failure::Run(e.to_string()));
        }
    }
    let Some(dir) = &ctx.out else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    if matches!(ctx.format, Format::Json | Format::Both) {
        outcome
            .report
            .save(&dir.join(format!("{}.json", outcome.report.command)))
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    if matches!(ctx.format, Format::Csv | Format::Both) {
        for (name, table) in &outcome.tables {
            table.save(&dir.join(format!("{name}.csv"))).map_err(|e| Failure::Run(e.to_string()))?;
        }
    }
    Ok(())
}

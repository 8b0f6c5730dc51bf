//! `mallows-lab`: run Mallows mixture experiments and log JSONL records.

mod commands;
mod record;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use record::{now_ms, ExperimentRecord};

#[derive(Parser, Debug)]
#[command(name = "mallows-lab", version, about = "Mallows mixture workbench")]
struct Cli {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Append the experiment record to this JSONL file instead of printing it.
    #[arg(long, global = true)]
    record: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw permutations from a mixture config.
    Sample(commands::SampleArgs),
    /// Exact pmf of one permutation or the whole table.
    Pmf(commands::PmfArgs),
    /// Total variation distance between two mixture configs.
    Tv(commands::TvArgs),
    /// Exact determinant identity check.
    Zagier(commands::ZagierArgs),
    /// L1 and projection lower bounds on Mallows columns.
    Kruskal(commands::KruskalArgs),
    /// L1 norm of a signed combination against the identifiability bound.
    Identifiability(commands::IdentifiabilityArgs),
    /// General mixture learner (exact or sampled moments).
    LearnGeneral(commands::LearnGeneralArgs),
    /// Separated-mixture learner.
    LearnSeparated(commands::LearnSeparatedArgs),
    /// Build and verify a pair of close mixtures.
    Lowerbound(commands::LowerboundArgs),
    /// Build and verify the block-flip hard instance.
    Sql(commands::SqlArgs),
    /// Answer placement queries over TCP.
    OracleServe(serve::ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
        {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let started = now_ms();
    let outcome = match &cli.command {
        Command::Sample(a) => commands::sample(a, cli.seed),
        Command::Pmf(a) => commands::pmf(a),
        Command::Tv(a) => commands::tv(a, cli.seed),
        Command::Zagier(a) => commands::zagier(a),
        Command::Kruskal(a) => commands::kruskal(a),
        Command::Identifiability(a) => commands::identifiability(a),
        Command::LearnGeneral(a) => commands::learn_general(a, cli.seed),
        Command::LearnSeparated(a) => commands::learn_separated(a, cli.seed),
        Command::Lowerbound(a) => commands::lowerbound(a),
        Command::Sql(a) => commands::sql(a),
        Command::OracleServe(a) => serve::serve(a, cli.seed),
    };
    let out = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let mut rec = ExperimentRecord::new(out.command, &out.config, cli.seed, started);
    rec.results = out.results;
    rec.assertions = out.assertions;
    if let Err(e) = rec.emit(cli.record.as_deref(), out.stdout_busy) {
        eprintln!("error: writing record: {e}");
        return ExitCode::from(1);
    }
    if rec.all_hold() {
        ExitCode::SUCCESS
    } else {
        for a in rec.assertions.iter().filter(|a| !a.holds) {
            eprintln!(
                "assertion failed: {} [{}] measured {} bound {}",
                a.name, a.tag, a.measured, a.bound
            );
        }
        ExitCode::from(2)
    }
}

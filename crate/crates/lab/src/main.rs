use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use blockmix::config::ExperimentConfig;
use blockmix::{corpus_report, experiment, io, report};
use blockmix_core::corpus::tokenize;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockmix", version, about = "Block-diagonal mixing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config. Exits 2 if an expected ordering fails.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to the config, then `results`.
        #[arg(long, env = "BLOCKMIX_OUT")]
        out: Option<PathBuf>,
    },
    /// Summarize the result files in a directory. Exits 2 on violations.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Corpus statistics for a JSONL note-event file.
    Corpus {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write the token streams, one token per line.
        #[arg(long)]
        tokens: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            eprintln!("running {} (seed {})", cfg.name(), cfg.seed);
            let output = experiment::run(&cfg)?;
            experiment::write_outputs(&output, &dir)?;
            print!("{}", experiment::summary_table(&output.result.records));
            for o in &output.result.orderings {
                println!("{} {}", if o.holds { "HOLDS   " } else { "VIOLATED" }, o.ordering);
            }
            println!("wrote {}", dir.display());
            Ok(output.result.orderings_hold())
        }
        Command::Report { dir } => {
            let r = report::collect(&dir)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let path = r.write(&dir)?;
            println!("{} result files -> {}", r.results.len(), path.display());
            for (name, o) in &r.violations {
                println!("VIOLATED {name}: {} (lhs {:?}, rhs {:?})", o.ordering, o.lhs, o.rhs);
            }
            Ok(r.violations.is_empty())
        }
        Command::Corpus { input, report, tokens } => {
            let pieces = io::load_events_jsonl(&input)?;
            let rep = corpus_report::build(&pieces, 512, 128, 64)?;
            io::write_json(&report, &rep)?;
            if let Some(path) = tokens {
                let streams: Vec<_> = pieces.iter().map(tokenize).collect();
                io::write_atomic(&path, io::tokens_to_text(&streams).as_bytes())?;
            }
            println!(
                "{} pieces, {} notes, vocab {}, NMI(pitch; hand) {:.4}",
                rep.pieces, rep.notes, rep.vocab_size, rep.pitch_hand_nmi.value
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

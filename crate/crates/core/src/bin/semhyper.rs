use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use semhyper::baselines::Scheme;
use semhyper::error::{Error, Result};
use semhyper::experiments::{run_experiment, ExperimentConfig, ScenarioSource, Sweep, SWEEP_COLUMNS, TRACE_COLUMNS};
use semhyper::hypergame::EngineConfig;
use semhyper::oracle::{compare_with_oracle, tiny_fixtures, MIN_RESOLUTION};
use semhyper::scenario::Shape;

fn after_help() -> String {
    format!(
        "OUTPUTS (written to --out)
  trace.csv    one row per (seed, scheme, round, player), columns
               {TRACE_COLUMNS}
               utility is the player's cost (lower is better); qote is empty
               for TX rows and surprise empty for RX rows; misperception is the
               total over the pairs this player perceives.
  sweep.csv    one row per sweep point (header only without --sweep), columns
               {SWEEP_COLUMNS}
               x is the L1 relevance error (perception) or the decay c (relevance).
  summary.json per-scheme statistics, gap closure, bit reduction, failures.

EXIT CODES
  0 success, 1 configuration error, 2 solver failure in every run."
    )
}

/// Stackelberg hypergame experiments for semantic communication.
#[derive(Debug, Parser)]
#[command(name = "semhyper", version, after_help = after_help())]
struct Cli {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "generate")]
    scenario: Option<PathBuf>,

    /// Generated scenario as SEED,TXxRXxD,DECAY (default 0,2x2x4,0.5).
    #[arg(long)]
    generate: Option<String>,

    /// Comma-separated schemes: hypergame, complete, naive, classical.
    #[arg(long, default_value = "hypergame")]
    schemes: String,

    /// Round cap per run.
    #[arg(long, default_value_t = 500)]
    rounds: usize,

    /// Seeds as a list and/or ranges, e.g. 1,2,5-9.
    #[arg(long)]
    seeds: Option<String>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Sweep to run alongside the traces.
    #[arg(long, value_parser = ["perception", "relevance"])]
    sweep: Option<String>,

    /// Fixed QoTE target of the relevance sweep.
    #[arg(long)]
    qote_target: Option<f64>,

    /// Compare the hypergame with the brute-force oracle on the tiny fixtures.
    #[arg(long)]
    oracle: bool,
}

fn parse_generate(v: &str) -> Result<ScenarioSource> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("--generate expects SEED,TXxRXxD,DECAY, got {v:?}")));
    }
    let seed = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad seed {:?}", parts[0])))?;
    let shape: Shape = parts[1].parse()?;
    let decay = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad decay {:?}", parts[2])))?;
    Ok(ScenarioSource::Generated { seed, shape, decay })
}

fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list {v:?}"));
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let source = match (&cli.scenario, &cli.generate) {
        (Some(p), _) => ScenarioSource::File(p.clone()),
        (None, Some(g)) => parse_generate(g)?,
        (None, None) => ScenarioSource::Generated {
            seed: 0,
            shape: Shape::default(),
            decay: 0.5,
        },
    };
    let mut cfg = ExperimentConfig::new(source, &cli.out);
    cfg.schemes = cli
        .schemes
        .split(',')
        .filter(|x| !x.trim().is_empty())
        .map(str::parse::<Scheme>)
        .collect::<Result<_>>()?;
    if let Some(s) = &cli.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    cfg.sweep = cli.sweep.as_deref().map(str::parse::<Sweep>).transpose()?;
    cfg.qote_target = cli.qote_target;
    cfg.engine.max_rounds = cli.rounds;
    cfg.check()?;
    Ok(cfg)
}

fn run_oracle(rounds: usize) -> Result<bool> {
    let engine = EngineConfig {
        max_rounds: rounds,
        ..EngineConfig::default()
    };
    let mut any_ok = false;
    println!("fixture,concepts,leader_oracle,leader_solver,leader_gap,follower_oracle,follower_solver,follower_gap,converged");
    for (i, s) in tiny_fixtures(10)?.iter().enumerate() {
        match compare_with_oracle(s, &engine, MIN_RESOLUTION) {
            Ok(c) => {
                any_ok = true;
                println!(
                    "{i},{},{:.6},{:.6},{:.4},{:.6},{:.6},{:.4},{}",
                    s.concepts_per_tx,
                    c.oracle.leader_utility,
                    c.solver_leader,
                    c.leader_gap(),
                    c.oracle.follower_utility,
                    c.solver_follower,
                    c.follower_gap(),
                    c.converged
                );
            }
            Err(e) => eprintln!("fixture {i}: {e}"),
        }
    }
    Ok(any_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.oracle {
        return match run_oracle(cli.rounds) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("semhyper: {e}");
                ExitCode::from(1)
            }
        };
    }
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("semhyper: {e}");
            return ExitCode::from(1);
        }
    };
    match run_experiment(&cfg) {
        Ok(out) => {
            for f in &out.failures {
                eprintln!("seed {} {}: {}", f.seed, f.scheme, f.message);
            }
            if out.all_failed() {
                return ExitCode::from(2);
            }
            if let Some(sum) = &out.summary.summary {
                for sc in &sum.schemes {
                    println!(
                        "{:<10} runs {:>3} converged {:>3} rx_utility {:.6} qote {:.4} bits {:.3}",
                        sc.scheme.name(),
                        sc.runs,
                        sc.converged,
                        sc.rx_utility.mean,
                        sc.qote.mean,
                        sc.bits.mean
                    );
                }
                if let Some(g) = sum.gap_closure {
                    println!("gap closure {g:.4}");
                }
                if let Some(b) = sum.bit_reduction_pct {
                    println!("bit reduction vs classical {b:.2}%");
                }
            }
            println!("outputs in {} (config {})", cfg.out.display(), &out.summary.config_hash[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("semhyper: {e}");
            ExitCode::from(1)
        }
    }
}

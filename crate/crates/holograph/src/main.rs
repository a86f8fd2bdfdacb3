use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holograph::bench::run_bench;
use holograph::core::experiment::{Ablation, DatasetSpec, ExperimentConfig, OracleSpec};
use holograph::core::sheaf::{exactness_cell, summarize, Axiom, CellRecord};
use holograph::io::{read_json, write_suite};
use holograph::report::{load_records, load_trajectories, report};
use holograph::CliResult;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "holograph", version, about = "Presheaf causal discovery with latent projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Exactness suite for the four presheaf axioms.
    SheafCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [30, 50, 100])]
        sizes: Vec<usize>,
        /// Number of seeds, 0..N.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "sheaf")]
        out: PathBuf,
    },
    /// Run a preset dataset under one ablation.
    Bench {
        /// er20, er50, sf50, sachs or latent-<obs>-<latent>.
        #[arg(long)]
        dataset: String,
        /// full or a1..a6.
        #[arg(long, default_value = "full")]
        ablation: String,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Adjacency CSV for the sachs dataset.
        #[arg(long)]
        sachs: Option<PathBuf>,
        /// JSON oracle block replacing the noiseless simulator.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Aggregate CSV, JSON summary and loss plots from saved records.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(config: &ExperimentConfig, out: &std::path::Path) -> CliResult<ExitCode> {
    let output = run_bench(config, out)?;
    let r = &output.record;
    for s in &r.seeds {
        match &s.error {
            None => println!(
                "seed {}: shd {} f1 {:.3} sid {} loss {:.4e} steps {} queries {}",
                s.seed,
                s.shd.unwrap_or(0),
                s.f1.unwrap_or(0.0),
                s.sid.map_or("n/a".to_string(), |v| v.to_string()),
                s.final_loss.map_or(f64::NAN, |l| l.total),
                s.steps,
                s.queries_used
            ),
            Some(e) => println!("seed {}: failed: {e}", s.seed),
        }
    }
    if let Some(m) = r.aggregate.shd {
        println!("{}: shd {:.2} ± {:.2} over {} seeds", r.label, m.mean, m.std, r.aggregate.completed_seeds);
    }
    println!("record: {}", output.record_path.display());
    Ok(if r.all_completed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn sheaf_check(sizes: &[usize], seeds: u64, out: &std::path::Path) -> CliResult<ExitCode> {
    let cells: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| (0..seeds).map(move |s| (n, s))).collect();
    let per_cell: Vec<Vec<CellRecord>> =
        cells.par_iter().map(|&(n, s)| exactness_cell(n, s)).collect::<Result<_, _>>()?;
    let records: Vec<CellRecord> = per_cell.into_iter().flatten().collect();
    write_suite(out, &records)?;
    println!("{:>5}  {:<13} {:>12} {:>12} {:>6}", "n", "axiom", "mean", "std", "pass");
    for s in summarize(&records) {
        println!("{:>5}  {:<13} {:>12.3e} {:>12.3e} {:>6.2}", s.n, s.axiom.name(), s.mean_error, s.std_error, s.pass_rate);
    }
    let exact_ok = records.iter().filter(|r| r.axiom != Axiom::Locality).all(|r| r.passed);
    println!("cells: {}", out.join("sheaf_cells.jsonl").display());
    Ok(if exact_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => read_json::<ExperimentConfig>(&config).and_then(|c| run_config(&c, &out)),
        Command::SheafCheck { sizes, seeds, out } => sheaf_check(&sizes, seeds, &out),
        Command::Bench { dataset, ablation, seeds, sachs, oracle, max_steps, out } => (|| {
            let spec = DatasetSpec::preset(&dataset, sachs.as_ref().and_then(|p| p.to_str()))?;
            let mut config = ExperimentConfig::new(spec, Ablation::parse(&ablation)?);
            if let Some(seeds) = seeds {
                config.seeds = seeds;
            }
            if let Some(path) = oracle {
                config.oracle = read_json::<OracleSpec>(&path)?;
            }
            if let Some(m) = max_steps {
                config.optimizer.max_steps = m;
            }
            run_config(&config, &out)
        })(),
        Command::Report { input, out } => (|| {
            let mut items = Vec::new();
            for (_, r) in load_records(&input)? {
                let t = load_trajectories(&input, &r)?;
                items.push((r, t));
            }
            let summary = report(&items, &out)?;
            for s in &summary {
                println!("{}: {} seeds, consistent {}", s.label, s.seeds, s.consistent);
            }
            println!("report: {}", out.display());
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

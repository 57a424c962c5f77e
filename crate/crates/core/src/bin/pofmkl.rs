//! Command-line entry point: validate configs, run experiments over seed
//! sweeps, and compare algorithms on identical streams.

use clap::{Args, Parser, Subcommand};
use pofmkl::config::{self, AlgoSpec, FileConfig};
use pofmkl::error::{Error, Result};
use pofmkl::report::{compare_to_dir, run_to_dir, RunManifest};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Default output root when --out is not given; overridden by $POFMKL_OUT.
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(
    name = "pofmkl",
    version,
    about = "Online federated multi-kernel learning simulator",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for the per-round client fan-out (0 = all cores).
    /// Results are identical for any thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment across a seed sweep and write traces + summary.
    Run(RunArgs),
    /// Run several algorithms on identical streams and emit a comparison table.
    Compare(CompareArgs),
    /// Check a config file against the schema and invariants; no run.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Re-run a previously written manifest instead of a config file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (default: $POFMKL_OUT or ./runs, plus a run name).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds, counted up from the config seed (default 20).
    #[arg(long)]
    seeds: Option<usize>,
    /// Override the configured algorithm (pof-mkl, ofskl, ofmkl-avg, vmkofl-like).
    #[arg(long)]
    algo: Option<String>,
    /// Config override with a dot-path key, e.g. experiment.rounds=100.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment config (TOML) shared by every algorithm.
    #[arg(long)]
    config: PathBuf,
    /// Algorithm spec, repeatable: name with optional parameters,
    /// e.g. --algo pof-mkl:m=1,d=100 --algo ofskl:d=100
    #[arg(long = "algo", required = true)]
    algos: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn out_root() -> PathBuf {
    std::env::var_os("POFMKL_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

fn load_config(path: &Path, algo: Option<&str>, overrides: &[String]) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut all = overrides.to_vec();
    if let Some(algo) = algo {
        all.push(format!("experiment.algorithm={algo}"));
    }
    config::parse_with_overrides(&text, &all)
}

fn seed_list(file: &FileConfig, seeds: Option<usize>) -> Result<Vec<u64>> {
    let count = seeds.unwrap_or(20);
    if count == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let base = file.experiment.seed;
    Ok((0..count as u64).map(|j| base + j).collect())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (file, seeds, out_dir) = match (&args.config, &args.manifest) {
        (Some(path), None) => {
            let file = load_config(path, args.algo.as_deref(), &args.overrides)?;
            let seeds = seed_list(&file, args.seeds)?;
            let out_dir = args.out.clone().unwrap_or_else(|| {
                let hash = config::config_hash(&file).unwrap_or_default();
                out_root().join(format!(
                    "{}-{}",
                    file.experiment.algorithm,
                    &hash[..8.min(hash.len())]
                ))
            });
            (file, seeds, out_dir)
        }
        (None, Some(path)) => {
            let manifest = RunManifest::read(path)?;
            let mut file = manifest.config()?;
            if let Some(algo) = &args.algo {
                file.experiment.algorithm = algo.clone();
            }
            if !args.overrides.is_empty() {
                let text = config::canonical_toml(&file)?;
                file = config::parse_with_overrides(&text, &args.overrides)?;
            }
            let seeds = match args.seeds {
                Some(_) => seed_list(&file, args.seeds)?,
                None => manifest.seeds.clone(),
            };
            let out_dir = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(&manifest.output_dir));
            (file, seeds, out_dir)
        }
        _ => {
            return Err(Error::Config(
                "run needs exactly one of --config or --manifest".into(),
            ))
        }
    };

    let summary = run_to_dir(&file, &seeds, &out_dir)?;
    println!(
        "{}: {} seeds, MSE {:.6} +/- {:.6}, regret bound {:.3}, max uplink {} params -> {}",
        summary.algorithm,
        summary.seeds.len(),
        summary.mse_mean,
        summary.mse_std,
        summary.client_regret_bound,
        summary.bandwidth.max_uplink,
        out_dir.display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let file = load_config(&args.config, None, &args.overrides)?;
    let seeds = seed_list(&file, args.seeds)?;
    let specs = args
        .algos
        .iter()
        .map(|a| AlgoSpec::parse(a))
        .collect::<Result<Vec<_>>>()?;
    let out_dir = args.out.clone().unwrap_or_else(|| out_root().join("compare"));
    let rows = compare_to_dir(&file, &specs, &seeds, &out_dir)?;
    println!(
        "{:<22} {:>4} {:>4} {:>12} {:>12} {:>12}",
        "algorithm", "M", "D", "mse_mean", "mse_std", "regret_mean"
    );
    for r in &rows {
        println!(
            "{:<22} {:>4} {:>4} {:>12.6} {:>12.6} {:>12.4}",
            r.algorithm, r.subset_size, r.rf_features, r.mse_mean, r.mse_std, r.regret_mean
        );
    }
    println!("table -> {}", out_dir.join("comparison.csv").display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let file = load_config(&args.config, None, &args.overrides)?;
    config::validate_file(&file)?;
    println!("ok: {}", args.config.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if cli.threads > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Display output starts with the category, so lines parse as
            // `error: <category>: <message>`.
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

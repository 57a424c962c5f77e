//! Run manifests, JSON summaries, and the multi-seed run drivers behind the
//! CLI. A manifest pins everything a run needs (resolved config text, hash,
//! seed list), so re-running it reproduces the same traces byte for byte;
//! only the summary's `timing` block varies between executions.

use crate::config::{
    canonical_toml, config_hash, parse_config, prepare_run, validate_file, AlgoSpec, FileConfig,
};
use crate::data::NormalizationReport;
use crate::engine::{self, bandwidth_report, write_records_csv, BandwidthSummary, EngineOutput};
use crate::error::{Error, Result};
use crate::metrics::{emit_traces, mse_summary, server_regret_proxy, client_regret_bound};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const ARTIFACT_NAME: &str = "pofmkl";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub artifact_version: String,
    pub schema_version: u32,
    pub config_hash: String,
    /// Resolved canonical config text; re-running parses exactly this.
    pub config_toml: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl RunManifest {
    pub fn new(file: &FileConfig, seeds: &[u64], output_dir: &Path) -> Result<Self> {
        Ok(Self {
            artifact: ARTIFACT_NAME.into(),
            artifact_version: ARTIFACT_VERSION.into(),
            schema_version: file.schema_version,
            config_hash: config_hash(file)?,
            config_toml: canonical_toml(file)?,
            seeds: seeds.to_vec(),
            output_dir: output_dir.display().to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest parse error: {e}")))
    }

    pub fn config(&self) -> Result<FileConfig> {
        parse_config(&self.config_toml)
    }
}

/// Wall-clock figures; excluded from reproducibility comparisons.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimingSummary {
    /// Mean total client compute per client per seed, in seconds.
    pub client_seconds_avg: f64,
    /// Mean server compute per seed, in seconds.
    pub server_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub artifact_version: String,
    pub config_hash: String,
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub clients: usize,
    pub rounds: usize,
    pub subset_size: usize,
    pub rf_features: usize,
    /// Mean and across-seed standard deviation of the per-run MSE.
    pub mse_mean: f64,
    pub mse_std: f64,
    /// MSE converted back to original label units (CSV data only).
    pub mse_label_units_mean: Option<f64>,
    /// `ln N / eta_k + eta_k T / 2`: the per-client regret guarantee.
    pub client_regret_bound: f64,
    /// Final clamped regret per client, averaged over seeds.
    pub per_client_regret_mean: Vec<f64>,
    pub per_client_regret_raw_mean: Vec<f64>,
    pub server_regret_proxy_mean: f64,
    pub bandwidth: BandwidthSummary,
    pub norm_breaches: u64,
    pub normalization: Option<NormalizationReport>,
    pub timing: TimingSummary,
}

/// One seed's engine output together with its resolved run.
pub struct SeedRun {
    pub seed: u64,
    pub output: EngineOutput,
    pub normalization: Option<NormalizationReport>,
    pub generator_truth: Option<crate::data::SynthTruth>,
    pub uplink_limit: usize,
    pub bandwidth_cap: Option<usize>,
}

/// Resolve and execute a single seed.
pub fn execute_seed(file: &FileConfig, seed: u64) -> Result<SeedRun> {
    let resolved = prepare_run(file, seed)?;
    let output = engine::run(&resolved.engine, &resolved.streams)?;
    Ok(SeedRun {
        seed,
        output,
        normalization: resolved.normalization,
        generator_truth: resolved.truth,
        uplink_limit: resolved.engine.uplink_limit(),
        bandwidth_cap: resolved.engine.bandwidth_cap,
    })
}

fn summarize(file: &FileConfig, runs: &[SeedRun]) -> Result<RunSummary> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("summary needs at least one seed".into()))?;
    let resolved = prepare_run(file, first.seed)?;
    let cfg = resolved.engine;

    let mut run_mses = Vec::with_capacity(runs.len());
    let mut per_client_regret = vec![0.0; cfg.num_clients];
    let mut per_client_regret_raw = vec![0.0; cfg.num_clients];
    let mut proxy_total = 0.0;
    let mut bandwidth = BandwidthSummary {
        max_uplink: 0,
        mean_uplink: 0.0,
        total_uplink: 0,
        downlink_per_client_round: 2 * cfg.dictionary.len() * cfg.rf_features,
        total_downlink: 0,
    };
    let mut record_count = 0u64;
    let mut norm_breaches = 0u64;
    let mut client_seconds = 0.0;
    let mut server_seconds = 0.0;

    for run in runs {
        let out = &run.output;
        let mse = out.ledgers.iter().map(|l| l.squared_error_sum).sum::<f64>()
            / (cfg.num_clients * cfg.rounds.max(1)) as f64;
        run_mses.push(mse);
        for (acc, ledger) in per_client_regret.iter_mut().zip(&out.ledgers) {
            *acc += ledger.client_regret();
        }
        for (acc, ledger) in per_client_regret_raw.iter_mut().zip(&out.ledgers) {
            *acc += ledger.client_regret_raw();
        }
        proxy_total += server_regret_proxy(&out.ledgers);
        let report = bandwidth_report(&out.records, run.uplink_limit, run.bandwidth_cap)?;
        bandwidth.max_uplink = bandwidth.max_uplink.max(report.max_uplink);
        bandwidth.total_uplink += report.total_uplink;
        bandwidth.total_downlink += out.downlink_total;
        record_count += out.records.len() as u64;
        norm_breaches += out.norm_breaches;
        client_seconds += out.client_seconds_total;
        server_seconds += out.server_seconds;
    }
    bandwidth.mean_uplink = if record_count == 0 {
        0.0
    } else {
        bandwidth.total_uplink as f64 / record_count as f64
    };

    let seeds_f = runs.len() as f64;
    for acc in per_client_regret.iter_mut() {
        *acc /= seeds_f;
    }
    for acc in per_client_regret_raw.iter_mut() {
        *acc /= seeds_f;
    }
    let (mse_mean, mse_std) = mse_summary(&run_mses);
    let normalization = first.normalization.clone();
    let mse_label_units_mean = normalization
        .as_ref()
        .map(|n| mse_mean * n.label_scale_squared());

    Ok(RunSummary {
        artifact_version: ARTIFACT_VERSION.into(),
        config_hash: config_hash(file)?,
        algorithm: cfg.algorithm.label().into(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        clients: cfg.num_clients,
        rounds: cfg.rounds,
        subset_size: cfg.subset_size,
        rf_features: cfg.rf_features,
        mse_mean,
        mse_std,
        mse_label_units_mean,
        client_regret_bound: client_regret_bound(cfg.dictionary.len(), cfg.eta_k, cfg.rounds),
        per_client_regret_mean: per_client_regret,
        per_client_regret_raw_mean: per_client_regret_raw,
        server_regret_proxy_mean: proxy_total / seeds_f,
        bandwidth,
        norm_breaches,
        normalization,
        timing: TimingSummary {
            client_seconds_avg: client_seconds / (cfg.num_clients as f64 * seeds_f),
            server_seconds: server_seconds / seeds_f,
        },
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(w)?;
    Ok(())
}

/// Execute every seed and write traces, checkpoints, the manifest, and the
/// summary under `out_dir`.
pub fn run_to_dir(file: &FileConfig, seeds: &[u64], out_dir: &Path) -> Result<RunSummary> {
    validate_file(file)?;
    if seeds.is_empty() {
        return Err(Error::Config("seed list must not be empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = execute_seed(file, seed)?;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        write_records_csv(&run.output.records, &seed_dir.join("records.csv"))?;
        emit_traces(&run.output.records, &seed_dir)?;
        let checkpoint = File::create(seed_dir.join("model.csv"))?;
        run.output.model.write_csv(BufWriter::new(checkpoint))?;
        runs.push(run);
    }

    let summary = summarize(file, &runs)?;
    write_json(&summary, &out_dir.join("summary.json"))?;
    RunManifest::new(file, seeds, out_dir)?.write(&out_dir.join("manifest.json"))?;
    Ok(summary)
}

/// One row of a comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub algorithm: String,
    pub subset_size: usize,
    pub rf_features: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub regret_mean: f64,
    pub client_seconds_avg: f64,
    pub server_seconds: f64,
}

/// Run each algorithm spec on identical streams and seeds, writing
/// `comparison.csv` with accuracy, regret, and runtime columns.
pub fn compare_to_dir(
    file: &FileConfig,
    specs: &[AlgoSpec],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<CompareRow>> {
    if specs.is_empty() {
        return Err(Error::Config("comparison needs at least one algorithm".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let variant = spec.apply(file);
        validate_file(&variant)?;
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            runs.push(execute_seed(&variant, seed)?);
        }
        let summary = summarize(&variant, &runs)?;
        let regret_mean = summary.per_client_regret_mean.iter().sum::<f64>()
            / summary.per_client_regret_mean.len() as f64;
        rows.push(CompareRow {
            algorithm: summary.algorithm.clone(),
            subset_size: summary.subset_size,
            rf_features: summary.rf_features,
            mse_mean: summary.mse_mean,
            mse_std: summary.mse_std,
            regret_mean,
            client_seconds_avg: summary.timing.client_seconds_avg,
            server_seconds: summary.timing.server_seconds,
        });
    }

    let mut w = BufWriter::new(File::create(out_dir.join("comparison.csv"))?);
    writeln!(
        w,
        "algorithm,subset_size,rf_features,mse_mean,mse_std,regret_mean,client_seconds_avg,server_seconds"
    )?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.subset_size,
            r.rf_features,
            r.mse_mean,
            r.mse_std,
            r.regret_mean,
            r.client_seconds_avg,
            r.server_seconds
        )?;
    }
    Ok(rows)
}

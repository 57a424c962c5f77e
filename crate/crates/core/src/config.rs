//! Experiment configuration: a versioned TOML file with one section per
//! subsystem, dot-path overrides, validation, and resolution into the
//! engine's runtime config plus client streams.

use crate::data::{
    ingest_csv, normalize, partition, synth_stream, ClientStream, CsvSchema, NormalizationReport,
    PartitionMode, PartitionPlan, SynthConfig, SynthKind, SynthTruth,
};
use crate::engine::{Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::kernels::{build_dictionary, BandwidthGrid, KernelSpec};
use crate::losses::LossConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub kernels: KernelsSection,
    #[serde(default)]
    pub losses: LossesSection,
    pub data: DataSection,
    #[serde(default)]
    pub server: ServerSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
    pub clients: usize,
    pub rounds: usize,
    pub rf_features: usize,
    /// Kernels per uplink message; defaults to the dictionary size.
    pub subset_size: Option<usize>,
    /// Server step size; defaults to 1/sqrt(rounds).
    pub eta: Option<f64>,
    /// Weight-update rate; defaults to 1/sqrt(rounds).
    pub eta_k: Option<f64>,
    #[serde(default = "default_xi")]
    pub xi_k: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub bandwidth_cap: Option<usize>,
}

fn default_algorithm() -> String {
    "pof-mkl".into()
}

fn default_xi() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    #[serde(default = "default_kernel_count")]
    pub count: usize,
    /// "default" (the log grid), "constant", or "explicit".
    #[serde(default = "default_grid")]
    pub grid: String,
    #[serde(default = "default_constant_bandwidth")]
    pub constant_bandwidth: f64,
    pub bandwidths: Option<Vec<f64>>,
}

fn default_kernel_count() -> usize {
    51
}

fn default_grid() -> String {
    "default".into()
}

fn default_constant_bandwidth() -> f64 {
    10.0
}

impl Default for KernelsSection {
    fn default() -> Self {
        Self {
            count: default_kernel_count(),
            grid: default_grid(),
            constant_bandwidth: default_constant_bandwidth(),
            bandwidths: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossesSection {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_clip")]
    pub clip_for_weights: bool,
}

fn default_clip() -> bool {
    true
}

impl Default for LossesSection {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            clip_for_weights: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "synth" or "csv".
    pub source: String,

    #[serde(default = "default_synth_kind")]
    pub synth_kind: String,
    #[serde(default = "default_synth_dim")]
    pub synth_dim: usize,
    #[serde(default = "default_synth_noise")]
    pub synth_noise: f64,
    #[serde(default = "default_synth_generators")]
    pub synth_generators: usize,
    #[serde(default = "default_synth_rf_dim")]
    pub synth_rf_dim: usize,
    #[serde(default = "default_synth_label_std")]
    pub synth_label_std: f64,

    pub path: Option<String>,
    pub label_column: Option<String>,
    pub site_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
    pub delimiter: Option<String>,
    /// "iid" or "site-skewed".
    pub partition: Option<String>,
    pub home_samples: Option<usize>,
    pub away_samples: Option<usize>,
}

fn default_synth_kind() -> String {
    "heterogeneous".into()
}

fn default_synth_dim() -> usize {
    3
}

fn default_synth_noise() -> f64 {
    0.05
}

fn default_synth_generators() -> usize {
    3
}

fn default_synth_rf_dim() -> usize {
    64
}

fn default_synth_label_std() -> f64 {
    0.7
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub norm_cap: Option<f64>,
}

/// Parse a config file from disk.
pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parse config text, without overrides.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let file: FileConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            file.schema_version
        )));
    }
    Ok(file)
}

/// Apply `key=value` overrides with dot-path keys (e.g.
/// `experiment.rounds=100`) on top of config text, then re-parse.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<FileConfig> {
    if overrides.is_empty() {
        return parse_config(text);
    }
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{entry}' must have the form key=value"))
        })?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    let text = toml::to_string(&value)
        .map_err(|e| Error::Config(format!("cannot re-serialize config: {e}")))?;
    parse_config(&text)
}

fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(value: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{part}' is not a section")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override key '{key}' does not address a table")))?;
    table.insert(
        parts[parts.len() - 1].to_string(),
        parse_override_value(raw),
    );
    Ok(())
}

/// Canonical serialized form of a config; hashing input.
pub fn canonical_toml(file: &FileConfig) -> Result<String> {
    toml::to_string(file).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
}

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(file: &FileConfig) -> Result<String> {
    let digest = Sha256::digest(canonical_toml(file)?.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

fn base_dictionary(file: &FileConfig) -> Result<Vec<KernelSpec>> {
    let grid = match file.kernels.grid.as_str() {
        "default" => BandwidthGrid::Log10Default,
        "constant" => BandwidthGrid::Constant(file.kernels.constant_bandwidth),
        "explicit" => BandwidthGrid::Explicit(
            file.kernels
                .bandwidths
                .clone()
                .ok_or_else(|| Error::Config("kernels.bandwidths: required for grid=explicit".into()))?,
        ),
        other => {
            return Err(Error::Config(format!(
                "kernels.grid: unknown grid '{other}' (expected default, constant, or explicit)"
            )))
        }
    };
    build_dictionary(file.kernels.count, &grid)
}

fn algorithm(file: &FileConfig) -> Result<Algorithm> {
    Algorithm::parse(&file.experiment.algorithm)
        .map_err(|e| Error::Config(format!("experiment.algorithm: {e}")))
}

struct Effective {
    algorithm: Algorithm,
    dictionary: Vec<KernelSpec>,
    subset_size: usize,
}

/// Per-algorithm dictionary and subset size: OFSKL collapses to a single
/// constant-bandwidth kernel and M = 1; the full-uplink baselines force
/// M = N; the main algorithm uses the configured values.
fn effective(file: &FileConfig) -> Result<Effective> {
    let algorithm = algorithm(file)?;
    let (dictionary, subset_size) = match algorithm {
        Algorithm::Ofskl => {
            let dict = build_dictionary(
                1,
                &BandwidthGrid::Constant(file.kernels.constant_bandwidth),
            )?;
            (dict, 1)
        }
        Algorithm::OfmklAvg | Algorithm::VmkoflLike => {
            let dict = base_dictionary(file)?;
            let n = dict.len();
            (dict, n)
        }
        Algorithm::PofMkl => {
            let dict = base_dictionary(file)?;
            let n = dict.len();
            let m = file.experiment.subset_size.unwrap_or(n);
            (dict, m)
        }
    };
    Ok(Effective {
        algorithm,
        dictionary,
        subset_size,
    })
}

fn synth_config(file: &FileConfig) -> Result<SynthConfig> {
    let kind = match file.data.synth_kind.as_str() {
        "homogeneous" => SynthKind::Homogeneous,
        "heterogeneous" => SynthKind::Heterogeneous,
        other => {
            return Err(Error::Config(format!(
                "data.synth_kind: unknown kind '{other}' (expected homogeneous or heterogeneous)"
            )))
        }
    };
    Ok(SynthConfig {
        kind,
        dim: file.data.synth_dim,
        clients: file.experiment.clients,
        rounds: file.experiment.rounds,
        noise: file.data.synth_noise,
        generators: file.data.synth_generators,
        rf_dim: file.data.synth_rf_dim,
        label_std: file.data.synth_label_std,
    })
}

fn csv_schema(file: &FileConfig) -> Result<CsvSchema> {
    let delimiter = match &file.data.delimiter {
        None => ',',
        Some(s) => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(Error::Config(
                        "data.delimiter: must be a single character".into(),
                    ))
                }
            }
        }
    };
    Ok(CsvSchema {
        label_column: file
            .data
            .label_column
            .clone()
            .ok_or_else(|| Error::Config("data.label_column: required for source=csv".into()))?,
        site_column: file.data.site_column.clone(),
        feature_columns: file.data.feature_columns.clone(),
        delimiter,
    })
}

fn partition_plan(file: &FileConfig) -> Result<PartitionPlan> {
    let mode = match file.data.partition.as_deref().unwrap_or("iid") {
        "iid" => PartitionMode::Iid,
        "site-skewed" => PartitionMode::SiteSkewed {
            home_samples: file.data.home_samples.ok_or_else(|| {
                Error::Config("data.home_samples: required for partition=site-skewed".into())
            })?,
            away_samples: file.data.away_samples.ok_or_else(|| {
                Error::Config("data.away_samples: required for partition=site-skewed".into())
            })?,
        },
        other => {
            return Err(Error::Config(format!(
                "data.partition: unknown mode '{other}' (expected iid or site-skewed)"
            )))
        }
    };
    Ok(PartitionPlan {
        mode,
        clients: file.experiment.clients,
        rounds: file.experiment.rounds,
    })
}

fn engine_config(file: &FileConfig, eff: &Effective, input_dim: usize, seed: u64) -> Result<ExperimentConfig> {
    let rounds = file.experiment.rounds;
    let default_rate = 1.0 / (rounds.max(1) as f64).sqrt();
    Ok(ExperimentConfig {
        algorithm: eff.algorithm,
        num_clients: file.experiment.clients,
        rounds,
        subset_size: eff.subset_size,
        rf_features: file.experiment.rf_features,
        eta: file.experiment.eta.unwrap_or(default_rate),
        eta_k: file.experiment.eta_k.unwrap_or(default_rate),
        xi_k: file.experiment.xi_k,
        seed,
        bandwidth_cap: file.experiment.bandwidth_cap,
        dictionary: eff.dictionary.clone(),
        loss: LossConfig::new(file.losses.lambda, file.losses.clip_for_weights)?,
        input_dim,
        norm_cap: file.server.norm_cap,
    })
}

/// Schema and invariant checks only; touches no data files.
pub fn validate_file(file: &FileConfig) -> Result<()> {
    let eff = effective(file)?;
    let input_dim = match file.data.source.as_str() {
        "synth" => {
            let synth = synth_config(file)?;
            if synth.dim == 0 {
                return Err(Error::Config("data.synth_dim: must be at least 1".into()));
            }
            synth.dim
        }
        "csv" => {
            csv_schema(file)?;
            partition_plan(file)?;
            if file.data.path.is_none() {
                return Err(Error::Config("data.path: required for source=csv".into()));
            }
            1 // the real dimension comes from the file at run time
        }
        other => {
            return Err(Error::Config(format!(
                "data.source: unknown source '{other}' (expected synth or csv)"
            )))
        }
    };
    engine_config(file, &eff, input_dim, file.experiment.seed)?.validate()
}

/// Everything one seed needs: the engine config and the client streams.
#[derive(Debug)]
pub struct ResolvedRun {
    pub engine: ExperimentConfig,
    pub streams: Vec<ClientStream>,
    pub truth: Option<SynthTruth>,
    pub normalization: Option<NormalizationReport>,
}

/// Resolve the config for one seed: build streams (synthetic or CSV-backed)
/// and the engine config. Streams depend only on the data section and the
/// seed, never on the algorithm, so algorithm comparisons share streams.
pub fn prepare_run(file: &FileConfig, seed: u64) -> Result<ResolvedRun> {
    let eff = effective(file)?;
    match file.data.source.as_str() {
        "synth" => {
            let synth = synth_config(file)?;
            // Generators come from the configured dictionary even when the
            // algorithm itself runs on a reduced one (OFSKL).
            let generator_dictionary = base_dictionary(file)?;
            let (streams, truth) = synth_stream(&synth, &generator_dictionary, seed)?;
            let engine = engine_config(file, &eff, synth.dim, seed)?;
            engine.validate()?;
            Ok(ResolvedRun {
                engine,
                streams,
                truth: Some(truth),
                normalization: None,
            })
        }
        "csv" => {
            let schema = csv_schema(file)?;
            let plan = partition_plan(file)?;
            let path = file
                .data
                .path
                .clone()
                .ok_or_else(|| Error::Config("data.path: required for source=csv".into()))?;
            let raw = ingest_csv(Path::new(&path), &schema)?;
            let (ds, report) = normalize(&raw)?;
            let streams = partition(&ds, &plan, seed)?;
            let engine = engine_config(file, &eff, ds.dim(), seed)?;
            engine.validate()?;
            Ok(ResolvedRun {
                engine,
                streams,
                truth: None,
                normalization: Some(report),
            })
        }
        other => Err(Error::Config(format!(
            "data.source: unknown source '{other}' (expected synth or csv)"
        ))),
    }
}

/// One entry of a comparison: an algorithm name with optional `m=..`/`d=..`
/// settings, e.g. `pof-mkl:m=1,d=100`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgoSpec {
    pub algorithm: Algorithm,
    pub subset_size: Option<usize>,
    pub rf_features: Option<usize>,
}

impl AlgoSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let (name, params) = match text.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (text, None),
        };
        let algorithm = Algorithm::parse(name.trim())?;
        let mut spec = AlgoSpec {
            algorithm,
            subset_size: None,
            rf_features: None,
        };
        if let Some(params) = params {
            for pair in params.split(',') {
                let (k, v) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("algorithm parameter '{pair}' must be key=value"))
                })?;
                let parsed: usize = v.trim().parse().map_err(|_| {
                    Error::Config(format!("algorithm parameter '{pair}': not an integer"))
                })?;
                match k.trim().to_ascii_lowercase().as_str() {
                    "m" => spec.subset_size = Some(parsed),
                    "d" => spec.rf_features = Some(parsed),
                    other => {
                        return Err(Error::Config(format!(
                            "algorithm parameter '{other}': expected m or d"
                        )))
                    }
                }
            }
        }
        Ok(spec)
    }

    /// Label with the effective (M, D) filled in by the comparison driver.
    pub fn display(&self) -> String {
        let mut out = self.algorithm.label().to_string();
        match (self.subset_size, self.rf_features) {
            (Some(m), Some(d)) => {
                let _ = write!(out, "(M={m},D={d})");
            }
            (Some(m), None) => {
                let _ = write!(out, "(M={m})");
            }
            (None, Some(d)) => {
                let _ = write!(out, "(D={d})");
            }
            (None, None) => {}
        }
        out
    }

    /// Clone `file` with this entry's algorithm and parameters applied.
    pub fn apply(&self, file: &FileConfig) -> FileConfig {
        let mut out = file.clone();
        out.experiment.algorithm = match self.algorithm {
            Algorithm::PofMkl => "pof-mkl",
            Algorithm::Ofskl => "ofskl",
            Algorithm::OfmklAvg => "ofmkl-avg",
            Algorithm::VmkoflLike => "vmkofl-like",
        }
        .to_string();
        if let Some(m) = self.subset_size {
            out.experiment.subset_size = Some(m);
        }
        if let Some(d) = self.rf_features {
            out.experiment.rf_features = d;
        }
        out
    }
}

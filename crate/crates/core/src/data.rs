//! Dataset ingestion, normalization, client partitioning, and synthetic
//! stream generation.
//!
//! Normalization is min-max per feature followed by a single global
//! division by the largest row norm, so every input satisfies
//! `||x|| <= 1`; labels are min-max scaled to [0, 1]. The scaling
//! constants are reported so results can be de-normalized.

use crate::error::{Error, Result};
use crate::kernels::{sample_spectral, KernelSpec, RandomFeatureMap};
use crate::rng::{stream, StreamPurpose};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// One client's data stream: exactly T `(x, y)` pairs, consumed in order.
pub type ClientStream = Vec<(Vec<f64>, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per sample.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Optional per-sample site id for non-i.i.d. partitioning.
    pub site_ids: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Column roles for CSV ingestion. A header row is required; every column
/// not claimed by the label or site role is a feature unless an explicit
/// feature list is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub site_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
    pub delimiter: char,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            site_column: None,
            feature_columns: None,
            delimiter: ',',
        }
    }
}

/// Parse a delimited text file into a dataset. Errors carry 1-based line
/// numbers; the header is line 1.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    ingest_reader(BufReader::new(file), schema)
}

pub fn ingest_reader<R: BufRead>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::Data("empty file: a header row is required".into())),
    };
    let columns: Vec<String> = header
        .split(schema.delimiter)
        .map(|c| c.trim().to_string())
        .collect();

    let position = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Data(format!("schema: column '{name}' not found in header")))
    };
    let label_pos = position(&schema.label_column)?;
    let site_pos = schema
        .site_column
        .as_deref()
        .map(position)
        .transpose()?;
    let feature_pos: Vec<usize> = match &schema.feature_columns {
        Some(listed) => listed
            .iter()
            .map(|c| position(c))
            .collect::<Result<_>>()?,
        None => (0..columns.len())
            .filter(|i| *i != label_pos && Some(*i) != site_pos)
            .collect(),
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut sites = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "expected {} fields, found {}",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let number = |pos: usize| -> Result<f64> {
            fields[pos].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!(
                    "column '{}' has non-numeric value '{}'",
                    columns[pos], fields[pos]
                ),
            })
        };
        features.push(
            feature_pos
                .iter()
                .map(|&p| number(p))
                .collect::<Result<Vec<f64>>>()?,
        );
        labels.push(number(label_pos)?);
        if let Some(p) = site_pos {
            let site: usize = fields[p].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("column '{}' has non-integer site id '{}'", columns[p], fields[p]),
            })?;
            sites.push(site);
        }
    }

    Ok(Dataset {
        features,
        labels,
        site_ids: site_pos.map(|_| sites),
    })
}

/// Scaling constants recorded by [`normalize`], kept for de-normalizing
/// reported errors and for reproducibility notes in run summaries.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormalizationReport {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    /// Largest row norm after min-max scaling; every row was divided by it.
    pub norm_divisor: f64,
    pub label_min: f64,
    pub label_max: f64,
}

impl NormalizationReport {
    /// Factor that converts normalized squared errors back to label units.
    pub fn label_scale_squared(&self) -> f64 {
        let range = self.label_max - self.label_min;
        range * range
    }
}

/// Min-max each feature to [0, 1], divide all rows by the largest row norm,
/// and min-max labels to [0, 1]. Constant feature columns map to 0 (with a
/// single sample the min-max step is skipped entirely so the lone row keeps
/// its direction and lands on the unit sphere). Constant labels map to 0.5.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, NormalizationReport)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot normalize an empty dataset".into()));
    }
    let n = ds.len();
    let d = ds.dim();

    let mut feature_min = vec![f64::INFINITY; d];
    let mut feature_max = vec![f64::NEG_INFINITY; d];
    for row in &ds.features {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite feature value".into()));
            }
            feature_min[j] = feature_min[j].min(*v);
            feature_max[j] = feature_max[j].max(*v);
        }
    }

    let mut scaled: Vec<Vec<f64>> = ds
        .features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, v)| {
                    let range = feature_max[j] - feature_min[j];
                    if n == 1 {
                        *v
                    } else if range > 0.0 {
                        (v - feature_min[j]) / range
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let max_norm = scaled
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let norm_divisor = if max_norm > 0.0 { max_norm } else { 1.0 };
    for row in &mut scaled {
        for v in row.iter_mut() {
            *v /= norm_divisor;
        }
    }

    let label_min = ds.labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let label_max = ds.labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !label_min.is_finite() || !label_max.is_finite() {
        return Err(Error::Numeric("non-finite label value".into()));
    }
    let label_range = label_max - label_min;
    let labels: Vec<f64> = ds
        .labels
        .iter()
        .map(|y| {
            if label_range > 0.0 {
                (y - label_min) / label_range
            } else {
                0.5
            }
        })
        .collect();

    Ok((
        Dataset {
            features: scaled,
            labels,
            site_ids: ds.site_ids.clone(),
        },
        NormalizationReport {
            feature_min,
            feature_max,
            norm_divisor,
            label_min,
            label_max,
        },
    ))
}

/// How samples are distributed among clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Global shuffle, then contiguous blocks of T per client.
    Iid,
    /// Each client is assigned a home site round-robin and observes
    /// `home_samples` from it plus `away_samples` from every other site.
    SiteSkewed {
        home_samples: usize,
        away_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub clients: usize,
    pub rounds: usize,
}

/// Split a dataset into K disjoint streams of exactly T samples each,
/// deterministically in `seed`.
pub fn partition(ds: &Dataset, plan: &PartitionPlan, seed: u64) -> Result<Vec<ClientStream>> {
    let (k, t) = (plan.clients, plan.rounds);
    if k == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    let stream_of = |indices: &[usize]| -> ClientStream {
        indices
            .iter()
            .map(|&i| (ds.features[i].clone(), ds.labels[i]))
            .collect()
    };

    match &plan.mode {
        PartitionMode::Iid => {
            if k * t > ds.len() {
                return Err(Error::Data(format!(
                    "insufficient samples: need clients*rounds = {}*{} = {} but dataset has {}",
                    k,
                    t,
                    k * t,
                    ds.len()
                )));
            }
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut stream(seed, StreamPurpose::Partition, 0));
            Ok(order[..k * t].chunks(t).map(stream_of).collect())
        }
        PartitionMode::SiteSkewed {
            home_samples,
            away_samples,
        } => {
            let site_ids = ds.site_ids.as_ref().ok_or_else(|| {
                Error::Data("site-skewed partition requires a site column".into())
            })?;
            let mut sites: Vec<usize> = site_ids.clone();
            sites.sort_unstable();
            sites.dedup();
            let s = sites.len();
            if s < 2 {
                return Err(Error::Data(format!(
                    "site-skewed partition needs at least 2 sites, found {s}"
                )));
            }
            let expected = home_samples + away_samples * (s - 1);
            if expected != t {
                return Err(Error::Config(format!(
                    "home_samples + away_samples*(sites-1) = {home_samples} + {away_samples}*{} = {expected} must equal rounds = {t}",
                    s - 1
                )));
            }

            // Per-site pools, shuffled; clients pop from them in turn.
            let mut pools: Vec<Vec<usize>> = sites
                .iter()
                .map(|&site| {
                    let mut pool: Vec<usize> = (0..ds.len())
                        .filter(|&i| site_ids[i] == site)
                        .collect();
                    pool.shuffle(&mut stream(seed, StreamPurpose::Partition, 1 + site as u64));
                    pool
                })
                .collect();

            for (rank, &site) in sites.iter().enumerate() {
                let homed = (0..k).filter(|c| c % s == rank).count();
                let demand = homed * home_samples + (k - homed) * away_samples;
                if demand > pools[rank].len() {
                    return Err(Error::Data(format!(
                        "insufficient samples at site {site}: need {demand}, have {}",
                        pools[rank].len()
                    )));
                }
            }

            let mut streams = Vec::with_capacity(k);
            for client in 0..k {
                let home = client % s;
                let mut indices = Vec::with_capacity(t);
                for (rank, pool) in pools.iter_mut().enumerate() {
                    let take = if rank == home {
                        *home_samples
                    } else {
                        *away_samples
                    };
                    indices.extend(pool.drain(..take));
                }
                indices.shuffle(&mut stream(
                    seed,
                    StreamPurpose::Partition,
                    1000 + client as u64,
                ));
                streams.push(stream_of(&indices));
            }
            Ok(streams)
        }
    }
}

/// Which synthetic regime to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    /// All clients share one generator kernel and one target function.
    Homogeneous,
    /// Clients are split round-robin over several generator kernels, each
    /// group with its own target function and input region.
    Heterogeneous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub dim: usize,
    pub clients: usize,
    pub rounds: usize,
    /// Standard deviation of additive Gaussian label noise.
    pub noise: f64,
    /// How many distinct generator kernels to spread clients over
    /// (heterogeneous mode only).
    pub generators: usize,
    /// Number of random features the generator expansion uses. Keyed the
    /// same way as engine feature maps, so a learner with the same seed and
    /// the same feature count sees an exactly realizable target.
    pub rf_dim: usize,
    /// Target standard deviation of the noiseless labels.
    pub label_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::Heterogeneous,
            dim: 3,
            clients: 8,
            rounds: 500,
            noise: 0.05,
            generators: 3,
            rf_dim: 64,
            label_std: 0.7,
        }
    }
}

/// Which dictionary kernel generated each client's labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    /// 0-based dictionary position per client.
    pub generator_kernel: Vec<usize>,
    pub dictionary_size: usize,
    pub noise: f64,
}

/// Generator bandwidths live in this band: with inputs confined to the unit
/// ball, only kernels of roughly this scale produce targets whose bandwidth
/// is recoverable from data, which is what the personalization checks need.
const GENERATOR_BAND: (f64, f64) = (0.11, 0.40);
/// Bump count of one target expansion.
const TARGET_BUMPS: usize = 32;
/// Calibration draw used to scale a target to the requested label std.
const CALIBRATION_POINTS: usize = 500;
/// Hard cap on |label| after calibration.
const LABEL_PEAK_CAP: f64 = 2.0;
/// Input-region radius bounds. Heterogeneous anchors sit at radius 0.55,
/// so 0.42 keeps every input inside the unit ball.
const SPREAD_FLOOR: f64 = 0.10;
const SPREAD_CAP_APART: f64 = 0.42;
const SPREAD_CAP_CENTERED: f64 = 0.95;
const ANCHOR_RADIUS: f64 = 0.55;

/// Nearest dictionary positions (by log-bandwidth) to log-spaced targets in
/// the generator band; each target takes the closest still-unused kernel.
fn generator_positions(dictionary: &[KernelSpec], generators: usize) -> Vec<usize> {
    let (lo, hi) = GENERATOR_BAND;
    let targets: Vec<f64> = if generators == 1 {
        vec![(lo * hi).sqrt()]
    } else {
        (0..generators)
            .map(|g| lo * (hi / lo).powf(g as f64 / (generators - 1) as f64))
            .collect()
    };
    let mut used = vec![false; dictionary.len()];
    targets
        .iter()
        .map(|target| {
            let pos = dictionary
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .min_by(|a, b| {
                    let da = (a.1.bandwidth.ln() - target.ln()).abs();
                    let db = (b.1.bandwidth.ln() - target.ln()).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i)
                .expect("dictionary is non-empty");
            used[pos] = true;
            pos
        })
        .collect()
}

fn unit_sphere_dir(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let direction: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        return e;
    }
    direction.iter().map(|v| v / norm).collect()
}

fn unit_ball_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let direction = unit_sphere_dir(rng, dim);
    let radius: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    direction.iter().map(|v| radius * v).collect()
}

struct GroupTarget {
    map: RandomFeatureMap,
    theta: Vec<f64>,
    anchor: Vec<f64>,
    spread: f64,
}

/// Build one group's target: bumps of the generator kernel tile the input
/// region, signed by half-space with asymmetric magnitudes. That yields a
/// label surface with a mean offset, a deep swing across the region, and
/// fine structure at the kernel's own scale, then gets rescaled to the
/// requested label std.
fn build_group_target(
    cfg: &SynthConfig,
    kernel: &crate::kernels::KernelSpec,
    group: usize,
    centered: bool,
    seed: u64,
) -> Result<GroupTarget> {
    let spread_cap = if centered {
        SPREAD_CAP_CENTERED
    } else {
        SPREAD_CAP_APART
    };
    let spread = kernel.bandwidth.clamp(SPREAD_FLOOR, spread_cap);
    let mut anchor = vec![0.0; cfg.dim];
    if !centered {
        let axis = group % cfg.dim;
        let sign = if (group / cfg.dim).is_multiple_of(2) { 1.0 } else { -1.0 };
        anchor[axis] = sign * ANCHOR_RADIUS;
    }

    let map = sample_spectral(kernel, cfg.dim, cfg.rf_dim, seed)?;
    let mut rng = stream(seed, StreamPurpose::SynthTarget, kernel.index as u64);
    let mut theta = vec![0.0; 2 * cfg.rf_dim];
    let split_dir = unit_sphere_dir(&mut rng, cfg.dim);
    for _ in 0..TARGET_BUMPS {
        let offset = unit_ball_point(&mut rng, cfg.dim);
        let center: Vec<f64> = anchor
            .iter()
            .zip(&offset)
            .map(|(a, o)| a + spread * o)
            .collect();
        let side: f64 = offset.iter().zip(&split_dir).map(|(o, u)| o * u).sum();
        let magnitude: f64 = if side >= 0.0 {
            rng.random_range(1.0..1.4)
        } else {
            -rng.random_range(0.4..0.7)
        };
        let z = map.features(&center)?;
        for (t, zi) in theta.iter_mut().zip(&z.values) {
            *t += magnitude * zi;
        }
    }

    let mut values = Vec::with_capacity(CALIBRATION_POINTS);
    for _ in 0..CALIBRATION_POINTS {
        let offset = unit_ball_point(&mut rng, cfg.dim);
        let x: Vec<f64> = anchor
            .iter()
            .zip(&offset)
            .map(|(a, o)| a + spread * o)
            .collect();
        values.push(map.features(&x)?.dot(&theta)?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / values.len() as f64)
        .sqrt();
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut scale = cfg.label_std / std.max(1e-9);
    if scale * peak > LABEL_PEAK_CAP {
        scale = LABEL_PEAK_CAP / peak;
    }
    for t in theta.iter_mut() {
        *t *= scale;
    }

    Ok(GroupTarget {
        map,
        theta,
        anchor,
        spread,
    })
}

/// Generate K streams whose labels come from a random feature expansion of
/// one dictionary kernel per client group, plus optional Gaussian noise.
/// Inputs stay inside the unit ball; each group draws from its own region.
/// Returns the streams and a ground-truth descriptor mapping clients to
/// generator kernels.
pub fn synth_stream(
    cfg: &SynthConfig,
    dictionary: &[KernelSpec],
    seed: u64,
) -> Result<(Vec<ClientStream>, SynthTruth)> {
    if cfg.dim == 0 || cfg.clients == 0 || cfg.rf_dim == 0 {
        return Err(Error::Config(
            "synthetic streams need dim >= 1, clients >= 1, rf_dim >= 1".into(),
        ));
    }
    if !(cfg.label_std > 0.0) {
        return Err(Error::Config("synthetic label std must be positive".into()));
    }
    if dictionary.is_empty() {
        return Err(Error::Config("synthetic streams need a dictionary".into()));
    }
    let n = dictionary.len();
    let (positions, centered) = match cfg.kind {
        SynthKind::Homogeneous => (generator_positions(dictionary, 1), true),
        SynthKind::Heterogeneous => {
            if cfg.generators == 0 || cfg.generators > n {
                return Err(Error::Config(format!(
                    "generator count must lie in 1..={n}, got {}",
                    cfg.generators
                )));
            }
            (generator_positions(dictionary, cfg.generators), false)
        }
    };

    let targets: Vec<GroupTarget> = positions
        .iter()
        .enumerate()
        .map(|(g, &pos)| build_group_target(cfg, &dictionary[pos], g, centered, seed))
        .collect::<Result<_>>()?;

    let groups = positions.len();
    let mut streams = Vec::with_capacity(cfg.clients);
    let mut truth = Vec::with_capacity(cfg.clients);
    for client in 0..cfg.clients {
        let g = client % groups;
        truth.push(positions[g]);
        let target = &targets[g];
        let mut rng = stream(seed, StreamPurpose::SynthStream, client as u64);
        let mut samples = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            let offset = unit_ball_point(&mut rng, cfg.dim);
            let x: Vec<f64> = target
                .anchor
                .iter()
                .zip(&offset)
                .map(|(a, o)| a + target.spread * o)
                .collect();
            let z = target.map.features(&x)?;
            let mut y = z.dot(&target.theta)?;
            if cfg.noise > 0.0 {
                y += cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
            samples.push((x, y));
        }
        streams.push(samples);
    }

    Ok((
        streams,
        SynthTruth {
            generator_kernel: truth,
            dictionary_size: n,
            noise: cfg.noise,
        },
    ))
}

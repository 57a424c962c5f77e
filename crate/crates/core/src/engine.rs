//! Synchronous round loop: broadcast, per-client predict/update/select,
//! aggregate. Drives the main algorithm and the baselines through the same
//! loop, meters bandwidth, and fills the regret ledgers.
//!
//! Every round is prequential: the logged prediction is computed from the
//! round's snapshot and weights before the label is touched. Runs are fully
//! deterministic in the config seed; per-client randomness comes from
//! per-client streams, so results do not depend on worker scheduling.

use crate::client::{BinAssignment, ClientState, ClientUpdate};
use crate::data::ClientStream;
use crate::error::{Error, Result};
use crate::kernels::{build_dictionary, sample_spectral, BandwidthGrid, KernelSpec, RandomFeatureMap};
use crate::losses::{bounded_loss, LossConfig};
use crate::metrics::RegretLedger;
use crate::server::{GlobalModel, ModelSnapshot};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

/// Which algorithm the loop runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Personalized mixtures, budgeted random kernel subsets.
    PofMkl,
    /// Single fixed kernel, updated and sent every round.
    Ofskl,
    /// All kernels learned independently; prediction is their plain average.
    OfmklAvg,
    /// All kernels sent every round, one shared weight vector at the server
    /// instead of per-client weights.
    VmkoflLike,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::PofMkl => "POF-MKL",
            Algorithm::Ofskl => "OFSKL",
            Algorithm::OfmklAvg => "OFMKL-Avg",
            Algorithm::VmkoflLike => "vM-KOFL-like",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pof-mkl" | "pofmkl" => Ok(Algorithm::PofMkl),
            "ofskl" => Ok(Algorithm::Ofskl),
            "ofmkl-avg" | "ofmklavg" => Ok(Algorithm::OfmklAvg),
            "vmkofl-like" | "vm-kofl-like" | "vmkofl" => Ok(Algorithm::VmkoflLike),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected pof-mkl, ofskl, ofmkl-avg, or vmkofl-like)"
            ))),
        }
    }
}

/// Fully resolved experiment parameters the engine consumes.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    /// K: total clients, all participating every round.
    pub num_clients: usize,
    /// T: rounds, one datum per client per round.
    pub rounds: usize,
    /// M: kernels per uplink message.
    pub subset_size: usize,
    /// D: random features per kernel; parameter vectors have length 2D.
    pub rf_features: usize,
    /// Server step size.
    pub eta: f64,
    /// Client multiplicative-weights rate.
    pub eta_k: f64,
    /// Exploration rate in (0, 1].
    pub xi_k: f64,
    pub seed: u64,
    /// Maximum uplink parameters per client per round, when enforced.
    pub bandwidth_cap: Option<usize>,
    pub dictionary: Vec<KernelSpec>,
    pub loss: LossConfig,
    /// d: input dimension.
    pub input_dim: usize,
    /// Diagnostic cap on parameter-vector norms.
    pub norm_cap: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.dictionary.len();
        if n == 0 {
            return Err(Error::Config("dictionary must not be empty".into()));
        }
        if self.num_clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        if self.rf_features == 0 {
            return Err(Error::Config("need at least one random feature".into()));
        }
        if self.subset_size == 0 || self.subset_size > n {
            return Err(Error::Config(format!(
                "subset size must lie in 1..={n}, got {}",
                self.subset_size
            )));
        }
        if !(self.eta > 0.0) || !(self.eta_k > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be positive: eta={} eta_k={}",
                self.eta, self.eta_k
            )));
        }
        if !(self.xi_k > 0.0 && self.xi_k <= 1.0) {
            return Err(Error::Config(format!(
                "exploration rate must lie in (0, 1], got {}",
                self.xi_k
            )));
        }
        if let Some(cap) = self.bandwidth_cap {
            let need = 2 * self.subset_size * self.rf_features;
            if need > cap {
                return Err(Error::Config(format!(
                    "uplink budget violated: 2*M*D = 2*{}*{} = {need} exceeds bandwidth_cap = {cap}",
                    self.subset_size, self.rf_features
                )));
            }
        }
        match self.algorithm {
            Algorithm::Ofskl => {
                if n != 1 || self.subset_size != 1 {
                    return Err(Error::Config(
                        "OFSKL runs with exactly one kernel and subset size 1".into(),
                    ));
                }
            }
            Algorithm::OfmklAvg | Algorithm::VmkoflLike => {
                if self.subset_size != n {
                    return Err(Error::Config(format!(
                        "{} sends every kernel each round; subset size must equal {n}",
                        self.algorithm.label()
                    )));
                }
            }
            Algorithm::PofMkl => {}
        }
        Ok(())
    }

    /// Uplink limit in parameters per client per round (2MD).
    pub fn uplink_limit(&self) -> usize {
        2 * self.subset_size * self.rf_features
    }
}

/// One client-round of telemetry. Per-kernel losses are kept in memory for
/// metric recomputation but thinned out of the CSV dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub client_id: usize,
    pub prediction: f64,
    pub label: f64,
    pub squared_error: f64,
    pub per_kernel_clamped: Vec<f64>,
    pub selected_bin: usize,
    pub params_sent_uplink: usize,
    pub cumulative_regret: f64,
    pub cumulative_regret_raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub max_uplink: usize,
    pub mean_uplink: f64,
    pub total_uplink: u64,
    pub downlink_per_client_round: usize,
    pub total_downlink: u64,
}

#[derive(Debug)]
pub struct EngineOutput {
    /// K*T records ordered by (t, client id).
    pub records: Vec<RoundRecord>,
    pub model: GlobalModel,
    pub ledgers: Vec<RegretLedger>,
    /// Final client states; weights carry the learned kernel preferences.
    pub clients: Vec<ClientState>,
    /// Final shared weight vector (vM-KOFL-like only).
    pub shared_weights: Option<Vec<f64>>,
    pub downlink_total: u64,
    pub norm_breaches: u64,
    /// Sum of per-client compute time across all rounds, in seconds.
    pub client_seconds_total: f64,
    pub server_seconds: f64,
}

struct ClientRoundOutcome {
    prediction: f64,
    label: f64,
    per_kernel_clamped: Vec<f64>,
    per_kernel_raw: Vec<f64>,
    selected_bin: usize,
    update: ClientUpdate,
    elapsed: f64,
}

fn shared_mix(weights: &[f64], predictions: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .zip(predictions)
        .map(|(w, p)| w / total * p)
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn client_round(
    cfg: &ExperimentConfig,
    t: usize,
    snapshot: &ModelSnapshot,
    maps: &[RandomFeatureMap],
    state: &mut ClientState,
    sample: &(Vec<f64>, f64),
    shared_weights: Option<&[f64]>,
) -> Result<ClientRoundOutcome> {
    let start = Instant::now();
    let (x, y) = sample;
    let client_id = state.client_id;
    let context =
        move |e: Error| Error::Invariant(format!("round {t}, client {client_id}: {e}"));
    if x.len() != cfg.input_dim {
        return Err(Error::Data(format!(
            "round {t}, client {client_id}: sample has dimension {} but config says {}",
            x.len(),
            cfg.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
        return Err(Error::Data(format!(
            "round {t}, client {client_id}: non-finite sample"
        )));
    }

    let features = maps
        .iter()
        .map(|m| m.features(x))
        .collect::<Result<Vec<_>>>()
        .map_err(context)?;
    let per_kernel = snapshot
        .per_kernel_predictions(&features)
        .map_err(context)?;

    // Predict before looking at the label.
    let prediction = match cfg.algorithm {
        Algorithm::PofMkl | Algorithm::Ofskl => state.mix(&per_kernel).map_err(context)?,
        Algorithm::OfmklAvg => per_kernel.iter().sum::<f64>() / per_kernel.len() as f64,
        Algorithm::VmkoflLike => shared_mix(
            shared_weights.expect("shared weights exist for vM-KOFL-like"),
            &per_kernel,
        ),
    };

    let label = *y;
    let per_kernel_clamped: Vec<f64> = per_kernel
        .iter()
        .map(|p| bounded_loss(*p, label, &cfg.loss))
        .collect();
    let per_kernel_raw: Vec<f64> = per_kernel
        .iter()
        .map(|p| (p - label) * (p - label))
        .collect();

    if matches!(cfg.algorithm, Algorithm::PofMkl | Algorithm::Ofskl) {
        state.update_weights(&per_kernel_clamped).map_err(context)?;
    }

    let selection = match cfg.algorithm {
        Algorithm::PofMkl | Algorithm::Ofskl => {
            let bins = state.assign_bins(cfg.subset_size).map_err(context)?;
            state.select_subset(bins).map_err(context)?
        }
        Algorithm::OfmklAvg | Algorithm::VmkoflLike => BinAssignment::full(maps.len()),
    };

    let update = state
        .local_update(snapshot, &features, label, &selection, cfg.eta, t, &cfg.loss)
        .map_err(context)?;
    let limit = cfg.uplink_limit();
    if update.params_sent > limit {
        return Err(Error::Invariant(format!(
            "round {t}, client {client_id}: uplink {} exceeds 2MD = {limit}",
            update.params_sent
        )));
    }

    Ok(ClientRoundOutcome {
        prediction,
        label,
        per_kernel_clamped,
        per_kernel_raw,
        selected_bin: selection.selected_bin.unwrap_or(0),
        update,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Execute the full T-round loop over the given per-client streams.
pub fn run(cfg: &ExperimentConfig, streams: &[ClientStream]) -> Result<EngineOutput> {
    cfg.validate()?;
    if streams.len() != cfg.num_clients {
        return Err(Error::Data(format!(
            "config says {} clients but {} streams supplied",
            cfg.num_clients,
            streams.len()
        )));
    }
    for (k, s) in streams.iter().enumerate() {
        if s.len() != cfg.rounds {
            return Err(Error::Data(format!(
                "client {} stream has {} samples but the horizon is {}",
                k + 1,
                s.len(),
                cfg.rounds
            )));
        }
    }

    let n = cfg.dictionary.len();
    let maps: Vec<RandomFeatureMap> = cfg
        .dictionary
        .iter()
        .map(|k| sample_spectral(k, cfg.input_dim, cfg.rf_features, cfg.seed))
        .collect::<Result<_>>()?;

    let mut model = GlobalModel::new(n, 2 * cfg.rf_features, cfg.num_clients);
    let mut clients: Vec<ClientState> = (1..=cfg.num_clients)
        .map(|k| ClientState::new(k, n, cfg.eta_k, cfg.xi_k, cfg.seed))
        .collect::<Result<_>>()?;
    let mut ledgers: Vec<RegretLedger> =
        (1..=cfg.num_clients).map(|k| RegretLedger::new(k, n)).collect();
    let mut shared_weights = match cfg.algorithm {
        Algorithm::VmkoflLike => Some(vec![1.0; n]),
        _ => None,
    };

    let mut records = Vec::with_capacity(cfg.num_clients * cfg.rounds);
    let mut downlink_total = 0u64;
    let mut norm_breaches = 0u64;
    let mut client_seconds_total = 0.0;
    let mut server_seconds = 0.0;

    for t in 1..=cfg.rounds {
        let server_start = Instant::now();
        let snapshot = model.broadcast();
        downlink_total += (cfg.num_clients * snapshot.downlink_params_per_client()) as u64;
        server_seconds += server_start.elapsed().as_secs_f64();

        let shared_ref = shared_weights.as_deref();
        let results: Vec<Result<ClientRoundOutcome>> = clients
            .par_iter_mut()
            .zip(streams.par_iter())
            .map(|(state, stream)| {
                client_round(cfg, t, &snapshot, &maps, state, &stream[t - 1], shared_ref)
            })
            .collect();
        let mut outcomes = Vec::with_capacity(results.len());
        for r in results {
            outcomes.push(r?);
        }

        let server_start = Instant::now();
        if let Some(weights) = shared_weights.as_mut() {
            // Shared weights move with the average of client losses.
            for (i, w) in weights.iter_mut().enumerate() {
                let mean: f64 = outcomes
                    .iter()
                    .map(|o| o.per_kernel_clamped[i])
                    .sum::<f64>()
                    / outcomes.len() as f64;
                *w *= (-cfg.eta_k * mean).exp();
            }
        }

        for (outcome, ledger) in outcomes.iter().zip(ledgers.iter_mut()) {
            let sq = (outcome.prediction - outcome.label) * (outcome.prediction - outcome.label);
            ledger.record_round(
                bounded_loss(outcome.prediction, outcome.label, &cfg.loss),
                sq,
                &outcome.per_kernel_clamped,
                &outcome.per_kernel_raw,
                sq,
            );
            client_seconds_total += outcome.elapsed;
            records.push(RoundRecord {
                t,
                client_id: ledger.client_id,
                prediction: outcome.prediction,
                label: outcome.label,
                squared_error: sq,
                per_kernel_clamped: outcome.per_kernel_clamped.clone(),
                selected_bin: outcome.selected_bin,
                params_sent_uplink: outcome.update.params_sent,
                cumulative_regret: ledger.client_regret(),
                cumulative_regret_raw: ledger.client_regret_raw(),
            });
        }

        let updates: Vec<ClientUpdate> = outcomes.into_iter().map(|o| o.update).collect();
        norm_breaches += model.aggregate(&updates, cfg.norm_cap)? as u64;
        server_seconds += server_start.elapsed().as_secs_f64();
    }

    Ok(EngineOutput {
        records,
        model,
        ledgers,
        clients,
        shared_weights,
        downlink_total,
        norm_breaches,
        client_seconds_total,
        server_seconds,
    })
}

/// Fed-OMD with one fixed RBF kernel (bandwidth 10 unless the dictionary
/// is already a single kernel), updated and sent every round.
pub fn run_baseline_ofskl(cfg: &ExperimentConfig, streams: &[ClientStream]) -> Result<EngineOutput> {
    let mut c = cfg.clone();
    c.algorithm = Algorithm::Ofskl;
    if c.dictionary.len() != 1 {
        c.dictionary = build_dictionary(1, &BandwidthGrid::Constant(10.0))?;
    }
    c.subset_size = 1;
    run(&c, streams)
}

/// All kernels learned independently, prediction averaged over kernels.
pub fn run_baseline_ofmkl_avg(
    cfg: &ExperimentConfig,
    streams: &[ClientStream],
) -> Result<EngineOutput> {
    let mut c = cfg.clone();
    c.algorithm = Algorithm::OfmklAvg;
    c.subset_size = c.dictionary.len();
    run(&c, streams)
}

/// Full uplink every round with one shared (non-personalized) weight vector.
pub fn run_baseline_vmkofl_like(
    cfg: &ExperimentConfig,
    streams: &[ClientStream],
) -> Result<EngineOutput> {
    let mut c = cfg.clone();
    c.algorithm = Algorithm::VmkoflLike;
    c.subset_size = c.dictionary.len();
    run(&c, streams)
}

/// Aggregate uplink usage across records; errors if any record exceeds the
/// per-round limit or the configured cap.
pub fn bandwidth_report(
    records: &[RoundRecord],
    uplink_limit: usize,
    cap: Option<usize>,
) -> Result<BandwidthSummary> {
    let mut max_uplink = 0usize;
    let mut total: u64 = 0;
    for r in records {
        if r.params_sent_uplink > uplink_limit {
            return Err(Error::Invariant(format!(
                "round {}, client {}: uplink {} exceeds limit {uplink_limit}",
                r.t, r.client_id, r.params_sent_uplink
            )));
        }
        if let Some(cap) = cap {
            if r.params_sent_uplink > cap {
                return Err(Error::Invariant(format!(
                    "round {}, client {}: uplink {} exceeds cap {cap}",
                    r.t, r.client_id, r.params_sent_uplink
                )));
            }
        }
        max_uplink = max_uplink.max(r.params_sent_uplink);
        total += r.params_sent_uplink as u64;
    }
    let mean = if records.is_empty() {
        0.0
    } else {
        total as f64 / records.len() as f64
    };
    Ok(BandwidthSummary {
        max_uplink,
        mean_uplink: mean,
        total_uplink: total,
        downlink_per_client_round: 0,
        total_downlink: 0,
    })
}

/// Record dump, one row per client-round; per-kernel losses are thinned out.
pub fn write_records_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "t,client,prediction,label,squared_error,selected_bin,uplink_params,cum_regret_clamped,cum_regret_raw"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.client_id,
            r.prediction,
            r.label,
            r.squared_error,
            r.selected_bin,
            r.params_sent_uplink,
            r.cumulative_regret,
            r.cumulative_regret_raw
        )?;
    }
    Ok(())
}

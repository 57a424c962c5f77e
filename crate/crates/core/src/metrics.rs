//! Regret ledgers, MSE summaries, the client regret bound, and plot-ready
//! trace files.
//!
//! Client regret compares the cumulative loss of the personalized mixture
//! against the best single kernel's realized trajectory, using the same
//! clamped loss the weight update sees, so the exponential-weights bound
//! `ln N / eta_k + eta_k T / 2` applies round for round. Raw (unclamped)
//! columns are emitted alongside for plotting.

use crate::engine::RoundRecord;
use crate::error::Result;
use crate::losses::{bounded_loss, LossConfig};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Per-client running sums behind the regret metrics.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub client_id: usize,
    pub rounds: usize,
    /// Cumulative clamped loss of the mixture prediction.
    pub mixture_clamped: f64,
    /// Cumulative raw squared error of the mixture prediction.
    pub mixture_raw: f64,
    /// Cumulative clamped loss per kernel; nondecreasing in t.
    pub per_kernel_clamped: Vec<f64>,
    /// Cumulative raw squared error per kernel.
    pub per_kernel_raw: Vec<f64>,
    /// Sum of squared prediction errors, for MSE.
    pub squared_error_sum: f64,
    /// Regret value after each round (clamped loss).
    pub regret_history: Vec<f64>,
    /// Regret value after each round (raw loss).
    pub regret_raw_history: Vec<f64>,
}

impl RegretLedger {
    pub fn new(client_id: usize, n_kernels: usize) -> Self {
        Self {
            client_id,
            rounds: 0,
            mixture_clamped: 0.0,
            mixture_raw: 0.0,
            per_kernel_clamped: vec![0.0; n_kernels],
            per_kernel_raw: vec![0.0; n_kernels],
            squared_error_sum: 0.0,
            regret_history: Vec::new(),
            regret_raw_history: Vec::new(),
        }
    }

    /// Fold in one round of losses.
    pub fn record_round(
        &mut self,
        mixture_clamped: f64,
        mixture_raw: f64,
        per_kernel_clamped: &[f64],
        per_kernel_raw: &[f64],
        squared_error: f64,
    ) {
        self.rounds += 1;
        self.mixture_clamped += mixture_clamped;
        self.mixture_raw += mixture_raw;
        for (acc, l) in self.per_kernel_clamped.iter_mut().zip(per_kernel_clamped) {
            *acc += l;
        }
        for (acc, l) in self.per_kernel_raw.iter_mut().zip(per_kernel_raw) {
            *acc += l;
        }
        self.squared_error_sum += squared_error;
        self.regret_history.push(self.client_regret());
        self.regret_raw_history.push(self.client_regret_raw());
    }

    fn min_kernel(values: &[f64]) -> f64 {
        values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Cumulative mixture loss minus the best kernel's cumulative loss,
    /// both clamped.
    pub fn client_regret(&self) -> f64 {
        if self.per_kernel_clamped.is_empty() {
            return 0.0;
        }
        self.mixture_clamped - Self::min_kernel(&self.per_kernel_clamped)
    }

    /// Same comparison on raw squared errors.
    pub fn client_regret_raw(&self) -> f64 {
        if self.per_kernel_raw.is_empty() {
            return 0.0;
        }
        self.mixture_raw - Self::min_kernel(&self.per_kernel_raw)
    }

    /// Regret after round t (1-based).
    pub fn client_regret_at(&self, t: usize) -> f64 {
        self.regret_history[t - 1]
    }

    /// Mean squared prediction error over the recorded rounds.
    pub fn mse(&self) -> f64 {
        if self.rounds == 0 {
            return 0.0;
        }
        self.squared_error_sum / self.rounds as f64
    }
}

/// The deterministic exponential-weights guarantee
/// `ln N / eta_k + eta_k T / 2` for clamped losses.
pub fn client_regret_bound(n_kernels: usize, eta_k: f64, horizon: usize) -> f64 {
    (n_kernels as f64).ln() / eta_k + eta_k * horizon as f64 / 2.0
}

/// Server-level regret proxy: total mixture loss across clients minus the
/// best single fixed kernel's total loss across clients. The comparator is
/// the realized per-kernel trajectory, which keeps the value computable
/// online; it is a proxy, not the RKHS-optimal comparator.
pub fn server_regret_proxy(ledgers: &[RegretLedger]) -> f64 {
    if ledgers.is_empty() {
        return 0.0;
    }
    let mixture: f64 = ledgers.iter().map(|l| l.mixture_clamped).sum();
    let n = ledgers[0].per_kernel_clamped.len();
    let best = (0..n)
        .map(|i| ledgers.iter().map(|l| l.per_kernel_clamped[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    mixture - best
}

/// Mean and across-seed standard deviation of per-run MSE values.
pub fn mse_summary(run_mses: &[f64]) -> (f64, f64) {
    if run_mses.is_empty() {
        return (0.0, 0.0);
    }
    let n = run_mses.len() as f64;
    let mean = run_mses.iter().sum::<f64>() / n;
    if run_mses.len() < 2 {
        return (mean, 0.0);
    }
    let var = run_mses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Write the per-round average-client-regret trace and the cumulative
/// MSE-versus-round trace as CSV files under `dir`.
pub fn emit_traces(records: &[RoundRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let regret_path = dir.join("regret_trace.csv");
    let mse_path = dir.join("mse_trace.csv");
    let mut regret_file = BufWriter::new(File::create(&regret_path)?);
    let mut mse_file = BufWriter::new(File::create(&mse_path)?);
    writeln!(
        regret_file,
        "t,regret_clamped_mean,regret_clamped_std,regret_raw_mean,regret_raw_std"
    )?;
    writeln!(mse_file, "t,mse")?;

    let horizon = records.iter().map(|r| r.t).max().unwrap_or(0);
    let mut squared_error_total = 0.0;
    let mut samples_total = 0usize;
    for t in 1..=horizon {
        let round: Vec<&RoundRecord> = records.iter().filter(|r| r.t == t).collect();
        let clamped: Vec<f64> = round.iter().map(|r| r.cumulative_regret).collect();
        let raw: Vec<f64> = round.iter().map(|r| r.cumulative_regret_raw).collect();
        let (cm, cs) = mean_and_std(&clamped);
        let (rm, rs) = mean_and_std(&raw);
        writeln!(regret_file, "{t},{cm},{cs},{rm},{rs}")?;

        squared_error_total += round.iter().map(|r| r.squared_error).sum::<f64>();
        samples_total += round.len();
        let mse = squared_error_total / samples_total as f64;
        writeln!(mse_file, "{t},{mse}")?;
    }
    Ok(())
}

/// Recompute every client's regret directly from raw round records. This is
/// an independent path from [`RegretLedger`], used to cross-check the
/// incremental bookkeeping.
pub fn recompute_client_regrets(records: &[RoundRecord], loss_cfg: &LossConfig) -> Vec<(usize, f64)> {
    let mut clients: Vec<usize> = records.iter().map(|r| r.client_id).collect();
    clients.sort_unstable();
    clients.dedup();
    clients
        .iter()
        .map(|&client| {
            let rows: Vec<&RoundRecord> = records.iter().filter(|r| r.client_id == client).collect();
            let mixture: f64 = rows
                .iter()
                .map(|r| bounded_loss(r.prediction, r.label, loss_cfg))
                .sum();
            let n = rows
                .first()
                .map(|r| r.per_kernel_clamped.len())
                .unwrap_or(0);
            let best = (0..n)
                .map(|i| rows.iter().map(|r| r.per_kernel_clamped[i]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            (client, mixture - best)
        })
        .collect()
}

/// Same recomputation for the server proxy.
pub fn recompute_server_proxy(records: &[RoundRecord], loss_cfg: &LossConfig) -> f64 {
    let mixture: f64 = records
        .iter()
        .map(|r| bounded_loss(r.prediction, r.label, loss_cfg))
        .sum();
    let n = records
        .first()
        .map(|r| r.per_kernel_clamped.len())
        .unwrap_or(0);
    if n == 0 {
        return 0.0;
    }
    let best = (0..n)
        .map(|i| records.iter().map(|r| r.per_kernel_clamped[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    mixture - best
}

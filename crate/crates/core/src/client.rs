//! Per-client state: personalized kernel weights, bin construction,
//! randomized subset selection, and importance-weighted local updates.
//!
//! Each round a client predicts with its weighted kernel mixture, scores
//! every kernel with the clamped loss, updates all N weights
//! multiplicatively, then picks one bin of at most M kernels to update and
//! upload. Dividing each selected kernel's gradient by its inclusion
//! probability keeps the update unbiased under the random selection.

use crate::error::{Error, Result};
use crate::kernels::FeatureVector;
use crate::losses::{loss_grad_theta, LossConfig};
use crate::rng::{stream, StreamPurpose};
use crate::server::ModelSnapshot;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Weights are rescaled whenever the largest drops below this floor; the
/// prediction mixture and the bin PMF are scale-invariant in w, so the
/// rescaling never changes behavior.
const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct ClientState {
    /// 1-based client id.
    pub client_id: usize,
    /// One positive confidence weight per dictionary kernel.
    pub weights: Vec<f64>,
    /// Multiplicative-weights learning rate.
    pub eta_k: f64,
    /// Exploration rate in (0, 1].
    pub xi_k: f64,
    rng: ChaCha12Rng,
}

/// Bins over kernel positions (0-based), the PMF over bins, and after
/// selection the chosen set plus every kernel's inclusion probability.
#[derive(Debug, Clone)]
pub struct BinAssignment {
    /// Partition of `0..n` into ceil(N/M) bins; all but the last hold
    /// exactly M kernels, sorted by descending weight.
    pub bins: Vec<Vec<usize>>,
    /// Summed kernel weights per bin.
    pub bin_weights: Vec<f64>,
    /// Selection PMF over bins; every entry >= xi/m and the total is 1.
    pub pmf: Vec<f64>,
    pub selected_bin: Option<usize>,
    /// Kernel positions in the chosen bin, ascending.
    pub selected_set: Vec<usize>,
    /// Inclusion probability for every kernel (the PMF entry of its bin).
    pub inclusion_probs: Vec<f64>,
}

impl BinAssignment {
    /// Trivial assignment used by baselines that update every kernel:
    /// a single bin holding all kernels with inclusion probability 1.
    pub fn full(n_kernels: usize) -> Self {
        let all: Vec<usize> = (0..n_kernels).collect();
        Self {
            bins: vec![all.clone()],
            bin_weights: vec![1.0],
            pmf: vec![1.0],
            selected_bin: Some(0),
            selected_set: all,
            inclusion_probs: vec![1.0; n_kernels],
        }
    }
}

/// One round's uplink message: the selected kernels and their locally
/// updated parameter vectors.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    /// `(kernel position, updated theta)` pairs, ascending by position.
    pub entries: Vec<(usize, Vec<f64>)>,
    /// Uplink cost in scalar parameters: 2D per selected kernel.
    pub params_sent: usize,
}

impl ClientUpdate {
    /// Canonical serialized form: client id, round, sorted index list, then
    /// the concatenated vectors. Used for golden-trace comparisons.
    pub fn to_canonical_string(&self) -> String {
        let mut out = format!("{},{}", self.client_id, self.round);
        for (i, _) in &self.entries {
            out.push_str(&format!(",{i}"));
        }
        for (_, theta) in &self.entries {
            for v in theta {
                out.push_str(&format!(",{v}"));
            }
        }
        out
    }
}

impl ClientState {
    /// Fresh state with unit weights. The selection stream is keyed by
    /// `(seed, client id)` so clients can run concurrently.
    pub fn new(
        client_id: usize,
        n_kernels: usize,
        eta_k: f64,
        xi_k: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_kernels == 0 {
            return Err(Error::Config("client needs at least one kernel".into()));
        }
        if !(eta_k > 0.0) {
            return Err(Error::Config(format!(
                "client learning rate must be positive, got {eta_k}"
            )));
        }
        if !(xi_k > 0.0 && xi_k <= 1.0) {
            return Err(Error::Config(format!(
                "exploration rate must lie in (0, 1], got {xi_k}"
            )));
        }
        Ok(Self {
            client_id,
            weights: vec![1.0; n_kernels],
            eta_k,
            xi_k,
            rng: stream(seed, StreamPurpose::Selection, client_id as u64),
        })
    }

    pub fn num_kernels(&self) -> usize {
        self.weights.len()
    }

    /// `w / W`, the mixture coefficients of the personalized prediction.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Invariant(format!(
                "client {}: total weight {total} is not positive and finite",
                self.client_id
            )));
        }
        Ok(self.weights.iter().map(|w| w / total).collect())
    }

    /// Mixture of precomputed per-kernel predictions.
    pub fn mix(&self, per_kernel_predictions: &[f64]) -> Result<f64> {
        if per_kernel_predictions.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "got {} per-kernel predictions for {} kernels",
                per_kernel_predictions.len(),
                self.weights.len()
            )));
        }
        let coeffs = self.normalized_weights()?;
        Ok(coeffs
            .iter()
            .zip(per_kernel_predictions)
            .map(|(c, p)| c * p)
            .sum())
    }

    /// Personalized prediction `sum_i (w_i / W) theta_i' z_i(x)`.
    pub fn predict(&self, model: &ModelSnapshot, features: &[FeatureVector]) -> Result<f64> {
        let per_kernel = model.per_kernel_predictions(features)?;
        self.mix(&per_kernel)
    }

    /// Multiplicative update over all N kernels:
    /// `w_i <- w_i exp(-eta_k loss_i)`.
    pub fn update_weights(&mut self, per_kernel_losses: &[f64]) -> Result<()> {
        if per_kernel_losses.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "got {} losses for {} kernels",
                per_kernel_losses.len(),
                self.weights.len()
            )));
        }
        for (w, l) in self.weights.iter_mut().zip(per_kernel_losses) {
            if !l.is_finite() {
                return Err(Error::Numeric(format!(
                    "client {}: non-finite per-kernel loss {l}",
                    self.client_id
                )));
            }
            *w *= (-self.eta_k * l).exp();
        }
        let max = self.weights.iter().cloned().fold(f64::MIN, f64::max);
        if max < WEIGHT_FLOOR {
            for w in &mut self.weights {
                *w /= max;
            }
        }
        Ok(())
    }

    /// Sort kernels by descending weight (ties by ascending position,
    /// stable), fill bins of capacity `subset_size` greedily, and build the
    /// exploration-mixed PMF `q_j = (1 - xi) u_j / U + xi / m`.
    pub fn assign_bins(&self, subset_size: usize) -> Result<BinAssignment> {
        let n = self.weights.len();
        if subset_size == 0 || subset_size > n {
            return Err(Error::Config(format!(
                "subset size must lie in 1..={n}, got {subset_size}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .expect("weights are finite")
                .then(a.cmp(&b))
        });

        let m = n.div_ceil(subset_size);
        let mut bins = Vec::with_capacity(m);
        let mut bin_weights = Vec::with_capacity(m);
        for chunk in order.chunks(subset_size) {
            bins.push(chunk.to_vec());
            bin_weights.push(chunk.iter().map(|&i| self.weights[i]).sum());
        }

        let total: f64 = bin_weights.iter().sum();
        let pmf: Vec<f64> = bin_weights
            .iter()
            .map(|u| (1.0 - self.xi_k) * u / total + self.xi_k / m as f64)
            .collect();

        Ok(BinAssignment {
            bins,
            bin_weights,
            pmf,
            selected_bin: None,
            selected_set: Vec::new(),
            inclusion_probs: Vec::new(),
        })
    }

    /// Draw one bin from the PMF and record every kernel's inclusion
    /// probability (the PMF entry of the bin that contains it).
    pub fn select_subset(&mut self, mut assignment: BinAssignment) -> Result<BinAssignment> {
        let n: usize = assignment.bins.iter().map(Vec::len).sum();
        let u: f64 = self.rng.random();
        let mut cumulative = 0.0;
        let mut chosen = assignment.pmf.len() - 1;
        for (j, q) in assignment.pmf.iter().enumerate() {
            cumulative += q;
            if u < cumulative {
                chosen = j;
                break;
            }
        }

        let mut inclusion = vec![0.0; n];
        for (j, members) in assignment.bins.iter().enumerate() {
            for &i in members {
                inclusion[i] = assignment.pmf[j];
            }
        }

        let mut selected = assignment.bins[chosen].clone();
        selected.sort_unstable();
        assignment.selected_bin = Some(chosen);
        assignment.selected_set = selected;
        assignment.inclusion_probs = inclusion;
        Ok(assignment)
    }

    /// Importance-weighted local step for every selected kernel:
    /// `theta_i' = theta_i - eta grad_i / p_i`. Unselected kernels are left
    /// untouched and do not appear in the uplink message.
    #[allow(clippy::too_many_arguments)]
    pub fn local_update(
        &self,
        model: &ModelSnapshot,
        features: &[FeatureVector],
        label: f64,
        selection: &BinAssignment,
        eta: f64,
        round: usize,
        loss_cfg: &LossConfig,
    ) -> Result<ClientUpdate> {
        if !(eta > 0.0) {
            return Err(Error::Config(format!(
                "server learning rate must be positive, got {eta}"
            )));
        }
        if selection.selected_bin.is_none() {
            return Err(Error::Invariant(
                "local update requires a completed subset selection".into(),
            ));
        }
        let mut entries = Vec::with_capacity(selection.selected_set.len());
        let mut params_sent = 0;
        for &i in &selection.selected_set {
            let p = selection.inclusion_probs[i];
            if !(p > 0.0) {
                return Err(Error::Invariant(format!(
                    "client {}: inclusion probability {p} for kernel {i}",
                    self.client_id
                )));
            }
            let theta = model.theta(i);
            let grad = loss_grad_theta(&features[i], theta, label, loss_cfg)?;
            let scale = eta / p;
            let updated: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - scale * g)
                .collect();
            params_sent += updated.len();
            entries.push((i, updated));
        }
        Ok(ClientUpdate {
            client_id: self.client_id,
            round,
            entries,
            params_sent,
        })
    }
}

//! Global per-kernel parameters and the per-round aggregation step.
//!
//! The server holds one parameter vector per dictionary kernel, broadcasts
//! an immutable snapshot each round, and folds received client updates in
//! as `theta_i <- theta_i - (1/K) sum_k (theta_i - theta_ik')`. The divisor
//! is always the full client count K, never the number of participants;
//! kernels nobody selected stay untouched.

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::kernels::FeatureVector;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct GlobalModel {
    /// N vectors of length 2D, all zero at round 1.
    thetas: Vec<Vec<f64>>,
    /// Current round t, starting at 1.
    pub round: usize,
    /// Total client count K.
    pub num_clients: usize,
}

/// Immutable view of the model a round works against. Cheap to clone and
/// safe to share across concurrent client evaluations.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub round: usize,
    thetas: Arc<Vec<Vec<f64>>>,
}

impl ModelSnapshot {
    pub fn num_kernels(&self) -> usize {
        self.thetas.len()
    }

    pub fn theta(&self, kernel: usize) -> &[f64] {
        &self.thetas[kernel]
    }

    /// Downlink cost of this snapshot per client, in scalar parameters (2ND).
    pub fn downlink_params_per_client(&self) -> usize {
        self.thetas.iter().map(Vec::len).sum()
    }

    /// `theta_i' z_i(x)` for every kernel.
    pub fn per_kernel_predictions(&self, features: &[FeatureVector]) -> Result<Vec<f64>> {
        if features.len() != self.thetas.len() {
            return Err(Error::Shape(format!(
                "got {} feature vectors for {} kernels",
                features.len(),
                self.thetas.len()
            )));
        }
        features
            .iter()
            .zip(self.thetas.iter())
            .map(|(z, theta)| z.dot(theta))
            .collect()
    }
}

/// Sum vectors pairwise for reproducible, low-error accumulation.
fn pairwise_sum(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match vectors.len() {
        0 => vec![0.0; dim],
        1 => vectors[0].clone(),
        n => {
            let (left, right) = vectors.split_at(n / 2);
            let mut acc = pairwise_sum(left, dim);
            let rhs = pairwise_sum(right, dim);
            for (a, b) in acc.iter_mut().zip(rhs) {
                *a += b;
            }
            acc
        }
    }
}

impl GlobalModel {
    /// Zero-initialized model: N kernels, each with a `feature_dim`-length
    /// parameter vector, at round 1.
    pub fn new(n_kernels: usize, feature_dim: usize, num_clients: usize) -> Self {
        Self {
            thetas: vec![vec![0.0; feature_dim]; n_kernels],
            round: 1,
            num_clients,
        }
    }

    pub fn num_kernels(&self) -> usize {
        self.thetas.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }

    pub fn theta(&self, kernel: usize) -> &[f64] {
        &self.thetas[kernel]
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    /// Snapshot for broadcast to all clients.
    pub fn broadcast(&self) -> ModelSnapshot {
        ModelSnapshot {
            round: self.round,
            thetas: Arc::new(self.thetas.clone()),
        }
    }

    /// Fold one round of client updates into the model and advance the
    /// round counter. Updates are re-ordered by (client id, kernel index)
    /// and deltas summed pairwise, so the result does not depend on arrival
    /// order. Returns how many kernels exceed `norm_cap` afterwards.
    pub fn aggregate(
        &mut self,
        updates: &[ClientUpdate],
        norm_cap: Option<f64>,
    ) -> Result<usize> {
        let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
        ordered.sort_by_key(|u| u.client_id);

        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut deltas: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.thetas.len()];
        for update in ordered {
            if update.round != self.round {
                return Err(Error::Protocol(format!(
                    "client {} sent an update for round {} during round {}",
                    update.client_id, update.round, self.round
                )));
            }
            for (kernel, theta_new) in &update.entries {
                if *kernel >= self.thetas.len() {
                    return Err(Error::Protocol(format!(
                        "client {} references unknown kernel {kernel}",
                        update.client_id
                    )));
                }
                if !seen.insert((update.client_id, *kernel)) {
                    return Err(Error::Protocol(format!(
                        "duplicate update for (client {}, kernel {}) in round {}",
                        update.client_id, kernel, self.round
                    )));
                }
                let current = &self.thetas[*kernel];
                if theta_new.len() != current.len() {
                    return Err(Error::Shape(format!(
                        "client {} kernel {}: vector length {} but model has {}",
                        update.client_id,
                        kernel,
                        theta_new.len(),
                        current.len()
                    )));
                }
                deltas[*kernel].push(
                    current
                        .iter()
                        .zip(theta_new)
                        .map(|(old, new)| old - new)
                        .collect(),
                );
            }
        }

        let scale = 1.0 / self.num_clients as f64;
        for (kernel, contributions) in deltas.iter().enumerate() {
            if contributions.is_empty() {
                continue;
            }
            let summed = pairwise_sum(contributions, self.feature_dim());
            for (t, d) in self.thetas[kernel].iter_mut().zip(summed) {
                *t -= scale * d;
            }
        }
        self.round += 1;

        let breaches = match norm_cap {
            Some(cap) => self
                .thetas
                .iter()
                .filter(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt() > cap)
                .count(),
            None => 0,
        };
        Ok(breaches)
    }

    /// Largest parameter-vector norm, for diagnostics.
    pub fn max_norm(&self) -> f64 {
        self.thetas
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Checkpoint dump: one row per kernel, `kernel,v_1,..,v_2D`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# round={} clients={}", self.round, self.num_clients)?;
        for (i, theta) in self.thetas.iter().enumerate() {
            let row: Vec<String> = theta.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", i, row.join(","))?;
        }
        Ok(())
    }

    /// Restore a checkpoint produced by [`GlobalModel::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut round = 1;
        let mut num_clients = 1;
        let mut thetas = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let parse = |field: &str, what: &str| -> Result<usize> {
                field.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad {what}: {field}"),
                })
            };
            if let Some(rest) = line.strip_prefix('#') {
                for part in rest.split_whitespace() {
                    if let Some(v) = part.strip_prefix("round=") {
                        round = parse(v, "round")?;
                    } else if let Some(v) = part.strip_prefix("clients=") {
                        num_clients = parse(v, "client count")?;
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let _kernel = fields.next();
            let theta: Vec<f64> = fields
                .map(|f| {
                    f.parse().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad parameter value: {f}"),
                    })
                })
                .collect::<Result<_>>()?;
            thetas.push(theta);
        }
        Ok(Self {
            thetas,
            round,
            num_clients,
        })
    }
}

//! Kernel dictionary and random Fourier feature maps.
//!
//! A shift-invariant kernel normalized to `kappa(0) = 1` has a spectral
//! density; sampling `D` frequencies from it yields the `2D`-dimensional
//! embedding
//!
//! ```text
//! z(x) = (1/sqrt(D)) [sin(rho_1'x), .., sin(rho_D'x), cos(rho_1'x), .., cos(rho_D'x)]
//! ```
//!
//! whose inner products estimate the kernel: `E[z(x)'z(x')] = kappa(x - x')`.
//! The layout is fixed (sines first, then cosines) and serialized in that
//! order. `z(x)'z(x) = 1` exactly, since each frequency contributes
//! `sin^2 + cos^2`.

use crate::error::{Error, Result};
use crate::rng::{stream, StreamPurpose};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Supported shift-invariant kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Gaussian RBF `kappa(u) = exp(-||u||^2 / (2 sigma^2))`; its spectral
    /// density is an isotropic Gaussian with per-coordinate std `1/sigma`.
    GaussianRbf,
}

/// One dictionary kernel: family plus bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// 1-based position in the dictionary.
    pub index: usize,
    pub family: KernelFamily,
    /// Bandwidth sigma, in input-feature units. Must be positive.
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(index: usize, family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!(
                "kernel {index}: bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self {
            index,
            family,
            bandwidth,
        })
    }

    /// Closed-form kernel value; the oracle the feature maps approximate.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
        }
    }
}

/// Bandwidth grid rules for building the dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandwidthGrid {
    /// `sigma_i = 10^((2i - 52)/25)` for `i = 1..n`. With `n = 51` the grid
    /// spans `10^-2 .. 10^2` and is centered at `sigma_26 = 1`.
    Log10Default,
    /// Every kernel gets the same bandwidth.
    Constant(f64),
    /// Explicit bandwidth list; its length must equal the kernel count.
    Explicit(Vec<f64>),
}

/// Build the kernel dictionary according to a grid rule.
pub fn build_dictionary(n_kernels: usize, grid: &BandwidthGrid) -> Result<Vec<KernelSpec>> {
    if n_kernels == 0 {
        return Err(Error::Config(
            "kernel dictionary must contain at least one kernel".into(),
        ));
    }
    let bandwidth_at = |i: usize| -> Result<f64> {
        match grid {
            BandwidthGrid::Log10Default => Ok(10f64.powf((2.0 * i as f64 - 52.0) / 25.0)),
            BandwidthGrid::Constant(sigma) => Ok(*sigma),
            BandwidthGrid::Explicit(list) => {
                if list.len() != n_kernels {
                    return Err(Error::Config(format!(
                        "explicit bandwidth list has {} entries but {} kernels requested",
                        list.len(),
                        n_kernels
                    )));
                }
                Ok(list[i - 1])
            }
        }
    };
    (1..=n_kernels)
        .map(|i| KernelSpec::new(i, KernelFamily::GaussianRbf, bandwidth_at(i)?))
        .collect()
}

/// Sampled frequencies for one kernel's feature map.
///
/// Immutable after construction; regeneration from the same
/// `(seed_id, kernel index, D, d)` is bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    kernel_index: usize,
    seed_id: u64,
    input_dim: usize,
    num_features: usize,
    /// `num_features x input_dim`, row-major; one row per frequency vector.
    samples: Vec<f64>,
}

/// Draw the spectral samples for `kernel`, keyed by `(seed_id, kernel.index)`.
pub fn sample_spectral(
    kernel: &KernelSpec,
    input_dim: usize,
    num_features: usize,
    seed_id: u64,
) -> Result<RandomFeatureMap> {
    if input_dim == 0 {
        return Err(Error::Config("input dimension must be at least 1".into()));
    }
    if num_features == 0 {
        return Err(Error::Config(
            "number of random features must be at least 1".into(),
        ));
    }
    match kernel.family {
        KernelFamily::GaussianRbf => {
            let std = 1.0 / kernel.bandwidth;
            let mut rng = stream(seed_id, StreamPurpose::Spectral, kernel.index as u64);
            let samples = (0..num_features * input_dim)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(RandomFeatureMap {
                kernel_index: kernel.index,
                seed_id,
                input_dim,
                num_features,
                samples,
            })
        }
    }
}

/// The `2D`-dimensional embedding of one input point. Unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "parameter vector has length {} but features have length {}",
                theta.len(),
                self.values.len()
            )));
        }
        Ok(self.values.iter().zip(theta).map(|(a, b)| a * b).sum())
    }

    /// Squared Euclidean norm. Sine/cosine entries of one frequency are
    /// paired before compensated summation, so the result stays within a
    /// few ulps of 1 for any feature count.
    pub fn squared_norm(&self) -> f64 {
        let half = self.values.len() / 2;
        let mut sum = 0.0;
        let mut compensation = 0.0;
        let mut add = |term: f64| {
            let y = term - compensation;
            let t = sum + y;
            compensation = (t - sum) - y;
            sum = t;
        };
        for j in 0..half {
            let s = self.values[j];
            let c = self.values[half + j];
            add(s * s + c * c);
        }
        if self.values.len() % 2 == 1 {
            let v = self.values[self.values.len() - 1];
            add(v * v);
        }
        sum
    }
}

impl RandomFeatureMap {
    pub fn kernel_index(&self) -> usize {
        self.kernel_index
    }

    pub fn seed_id(&self) -> u64 {
        self.seed_id
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of sampled frequencies D; the embedding has length 2D.
    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.num_features
    }

    fn frequency(&self, j: usize) -> &[f64] {
        &self.samples[j * self.input_dim..(j + 1) * self.input_dim]
    }

    /// Row-major view of the frequency matrix, for dumps and tests.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Evaluate `z(x)`: sines block then cosines block, scaled `1/sqrt(D)`.
    pub fn features(&self, x: &[f64]) -> Result<FeatureVector> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has dimension {} but map expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let scale = 1.0 / (self.num_features as f64).sqrt();
        let mut values = vec![0.0; 2 * self.num_features];
        for j in 0..self.num_features {
            let proj: f64 = self.frequency(j).iter().zip(x).map(|(r, xi)| r * xi).sum();
            values[j] = scale * proj.sin();
            values[self.num_features + j] = scale * proj.cos();
        }
        Ok(FeatureVector { values })
    }

    /// CSV dump, one row per frequency vector, for cross-implementation checks.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for j in 0..self.num_features {
            let row: Vec<String> = self.frequency(j).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid_matches_closed_form() {
        let dict = build_dictionary(51, &BandwidthGrid::Log10Default).unwrap();
        assert_eq!(dict.len(), 51);
        assert!((dict[25].bandwidth - 1.0).abs() < 1e-12); // i = 26
        assert!((dict[0].bandwidth - 0.01).abs() < 1e-12); // i = 1
        assert!((dict[50].bandwidth - 100.0).abs() < 1e-10); // i = 51
    }

    #[test]
    fn constant_grid_single_kernel() {
        let dict = build_dictionary(1, &BandwidthGrid::Constant(10.0)).unwrap();
        assert_eq!(dict.len(), 1);
        assert_eq!(dict[0].bandwidth, 10.0);
        assert_eq!(dict[0].index, 1);
    }

    #[test]
    fn zero_kernels_rejected() {
        assert!(build_dictionary(0, &BandwidthGrid::Log10Default).is_err());
    }

    #[test]
    fn explicit_grid_length_must_match() {
        let err = build_dictionary(3, &BandwidthGrid::Explicit(vec![1.0, 2.0]));
        assert!(err.is_err());
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(KernelSpec::new(1, KernelFamily::GaussianRbf, 0.0).is_err());
        assert!(KernelSpec::new(1, KernelFamily::GaussianRbf, -1.0).is_err());
    }

    #[test]
    fn spectral_sampling_is_bit_identical() {
        let k = KernelSpec::new(3, KernelFamily::GaussianRbf, 1.0).unwrap();
        let a = sample_spectral(&k, 2, 4, 7).unwrap();
        let b = sample_spectral(&k, 2, 4, 7).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = sample_spectral(&k, 2, 4, 8).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn spectral_variance_matches_bandwidth() {
        // sigma = 1 => per-coordinate variance 1.
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1.0).unwrap();
        let map = sample_spectral(&k, 3, 10_000, 0).unwrap();
        let n = map.samples().len() as f64;
        let mean: f64 = map.samples().iter().sum::<f64>() / n;
        let var: f64 = map.samples().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn features_at_origin() {
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1.0).unwrap();
        let map = sample_spectral(&k, 2, 5, 0).unwrap();
        let z = map.features(&[0.0, 0.0]).unwrap();
        let inv = 1.0 / 5f64.sqrt();
        for j in 0..5 {
            assert_eq!(z.values[j], 0.0);
            assert!((z.values[5 + j] - inv).abs() < 1e-15);
        }
    }

    #[test]
    fn feature_dimension_mismatch_is_shape_error() {
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1.0).unwrap();
        let map = sample_spectral(&k, 3, 4, 0).unwrap();
        assert!(matches!(map.features(&[0.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn wide_bandwidth_limit_is_constant_kernel() {
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1e12).unwrap();
        let map = sample_spectral(&k, 2, 50, 1).unwrap();
        let zx = map.features(&[0.4, -0.1]).unwrap();
        let zy = map.features(&[-0.3, 0.8]).unwrap();
        let dot = zx.dot(&zy.values).unwrap();
        assert!((dot - 1.0).abs() < 1e-6, "got {dot}");
    }

    #[test]
    fn kernel_estimate_converges_one_dim() {
        // sigma = 1, d = 1: average of z(x)'z(x') over 20 seeds with D = 1e5
        // within 0.02 of exp(-(x - x')^2 / 2) at (0.3, -0.2).
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1.0).unwrap();
        let (x, y) = ([0.3], [-0.2]);
        let exact = k.evaluate(&x, &y);
        let mut acc = 0.0;
        for seed in 0..20 {
            let map = sample_spectral(&k, 1, 100_000, seed).unwrap();
            let zx = map.features(&x).unwrap();
            let zy = map.features(&y).unwrap();
            acc += zx.dot(&zy.values).unwrap();
        }
        let mean = acc / 20.0;
        assert!((mean - exact).abs() < 0.02, "mean {mean} exact {exact}");
    }

    #[test]
    fn monte_carlo_unbiasedness() {
        // >= 1e6 total frequencies at a fixed pair; tolerance 3 standard errors.
        let k = KernelSpec::new(2, KernelFamily::GaussianRbf, 0.7).unwrap();
        let (x, y) = ([0.2, -0.4, 0.1], [-0.1, 0.3, 0.25]);
        let exact = k.evaluate(&x, &y);
        let per_seed: Vec<f64> = (0..20)
            .map(|seed| {
                let map = sample_spectral(&k, 3, 50_000, seed).unwrap();
                let zx = map.features(&x).unwrap();
                let zy = map.features(&y).unwrap();
                zx.dot(&zy.values).unwrap()
            })
            .collect();
        let mean = per_seed.iter().sum::<f64>() / 20.0;
        let var = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 19.0;
        let se = (var / 20.0).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se.max(1e-6),
            "mean {mean} exact {exact} se {se}"
        );
    }

    #[test]
    fn csv_dump_has_one_row_per_frequency() {
        let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 2.0).unwrap();
        let map = sample_spectral(&k, 3, 4, 0).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }

    proptest! {
        #[test]
        fn unit_norm_within_8_ulps(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            seed in 0u64..50,
        ) {
            let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 0.5).unwrap();
            let map = sample_spectral(&k, 3, 16, seed).unwrap();
            let z = map.features(&x).unwrap();
            prop_assert!((z.squared_norm() - 1.0).abs() <= 8.0 * f64::EPSILON);
        }

        #[test]
        fn cross_products_bounded_by_one(
            x in proptest::collection::vec(-3.0f64..3.0, 2),
            y in proptest::collection::vec(-3.0f64..3.0, 2),
            seed in 0u64..50,
        ) {
            let k = KernelSpec::new(1, KernelFamily::GaussianRbf, 1.5).unwrap();
            let map = sample_spectral(&k, 2, 8, seed).unwrap();
            let zx = map.features(&x).unwrap();
            let zy = map.features(&y).unwrap();
            let dot = zx.dot(&zy.values).unwrap();
            prop_assert!(dot.abs() <= 1.0 + 16.0 * f64::EPSILON);
        }
    }
}

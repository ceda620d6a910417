//! Synthetic domain-shift tasks.
//!
//! The source domain is a class-conditional Gaussian mixture: class `c` owns
//! `components_per_class` isotropic components with means drawn from
//! `N(0, class_separation^2 I)` and standard deviation `noise_std`. A
//! [`ShiftDescriptor`] maps source samples into a shifted domain with
//!
//! ```text
//! x' = scale * R(rotation) x + mean_shift * direction + noise * eps
//! ```
//!
//! where `R` rotates every coordinate pair `(0,1), (2,3), ...` by the same
//! angle. The identity descriptor leaves the distribution unchanged. Labels
//! are never touched by a shift.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftDescriptor {
    pub name: String,
    /// Translation magnitude along `direction`.
    pub mean_shift: f64,
    /// Translation direction; empty means all ones (shift every feature).
    pub direction: Vec<f64>,
    /// Rotation angle in radians applied to each coordinate pair.
    pub rotation: f64,
    /// Multiplicative spread, 1 = unchanged.
    pub scale: f64,
    /// Extra isotropic noise standard deviation.
    pub noise: f64,
}

impl Default for ShiftDescriptor {
    fn default() -> Self {
        Self {
            name: "identity".into(),
            mean_shift: 0.0,
            direction: Vec::new(),
            rotation: 0.0,
            scale: 1.0,
            noise: 0.0,
        }
    }
}

impl ShiftDescriptor {
    pub fn is_identity(&self) -> bool {
        self.mean_shift == 0.0 && self.rotation == 0.0 && self.scale == 1.0 && self.noise == 0.0
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !self.direction.is_empty() && self.direction.len() != dim {
            return Err(Error::Config(format!(
                "shift {:?}: direction has {} entries for {dim} features",
                self.name,
                self.direction.len()
            )));
        }
        if !(self.scale.is_finite() && self.scale != 0.0) || self.noise < 0.0 {
            return Err(Error::Config(format!(
                "shift {:?}: scale must be finite and non-zero, noise non-negative",
                self.name
            )));
        }
        Ok(())
    }

    fn translation(&self, dim: usize) -> Vec<f64> {
        if self.direction.is_empty() {
            vec![self.mean_shift; dim]
        } else {
            self.direction.iter().map(|d| d * self.mean_shift).collect()
        }
    }

    /// Deterministic part of the map: `scale * R x + t`.
    pub fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        if self.rotation != 0.0 {
            let (s, c) = self.rotation.sin_cos();
            for pair in y.chunks_exact_mut(2) {
                let (a, b) = (pair[0], pair[1]);
                pair[0] = c * a - s * b;
                pair[1] = s * a + c * b;
            }
        }
        let t = self.translation(x.len());
        for (v, t) in y.iter_mut().zip(t) {
            *v = self.scale * *v + t;
        }
        y
    }

    fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut y = self.transform_point(x);
        if self.noise > 0.0 {
            for v in &mut y {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.noise * z;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub feature_dim: usize,
    pub class_count: usize,
    pub components_per_class: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
    pub ood_test: usize,
    pub target_shift: ShiftDescriptor,
    pub ood_shifts: Vec<ShiftDescriptor>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            class_count: 4,
            components_per_class: 2,
            class_separation: 1.6,
            noise_std: 1.0,
            source_train: 4000,
            source_val: 1000,
            target_train: 2000,
            target_val: 500,
            target_test: 1000,
            ood_test: 1000,
            target_shift: ShiftDescriptor {
                name: "target".into(),
                mean_shift: 1.5,
                rotation: 0.3,
                scale: 1.5,
                ..ShiftDescriptor::default()
            },
            // The OOD domains move away from the target, past the source.
            ood_shifts: vec![
                ShiftDescriptor {
                    name: "moderate".into(),
                    mean_shift: -2.0,
                    noise: 0.3,
                    ..ShiftDescriptor::default()
                },
                ShiftDescriptor {
                    name: "strong".into(),
                    mean_shift: -2.5,
                    noise: 0.6,
                    ..ShiftDescriptor::default()
                },
            ],
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 || self.class_count < 2 || self.components_per_class == 0 {
            return Err(Error::Config(
                "task needs at least 2 features, 2 classes and 1 component per class".into(),
            ));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "degenerate covariance: noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if !self.class_separation.is_finite() || self.class_separation < 0.0 {
            return Err(Error::Config("class_separation must be finite and >= 0".into()));
        }
        for (name, n) in [
            ("source_train", self.source_train),
            ("source_val", self.source_val),
            ("target_train", self.target_train),
            ("target_val", self.target_val),
            ("target_test", self.target_test),
            ("ood_test", self.ood_test),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("split {name} must be non-empty")));
            }
        }
        self.target_shift.validate(self.feature_dim)?;
        for s in &self.ood_shifts {
            s.validate(self.feature_dim)?;
        }
        Ok(())
    }

    /// Component means, one row per (class, component), class-major.
    pub fn component_means(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(derive_seed(seed, "task/means"));
        (0..self.class_count * self.components_per_class)
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * self.class_separation
                    })
                    .collect()
            })
            .collect()
    }

    /// Exact input density of the domain produced by `shift`.
    pub fn density(&self, seed: u64, shift: &ShiftDescriptor) -> MixtureDensity {
        let means = self
            .component_means(seed)
            .iter()
            .map(|m| shift.transform_point(m))
            .collect();
        let sd = self.noise_std * shift.scale.abs();
        MixtureDensity {
            means,
            variance: sd * sd + shift.noise * shift.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftTask {
    pub spec: TaskSpec,
    pub seed: u64,
    pub source_train: LabeledSet,
    pub source_val: LabeledSet,
    pub target_train: LabeledSet,
    pub target_val: LabeledSet,
    pub target_test_id: LabeledSet,
    pub target_test_ood: Vec<(String, LabeledSet)>,
}

impl DomainShiftTask {
    pub fn generate(spec: &TaskSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let means = spec.component_means(seed);
        let identity = ShiftDescriptor::default();
        let split = |index: u64, label: &str, n: usize, shift: &ShiftDescriptor| {
            sample_split(spec, &means, derive_seed(seed, label), index, n, shift)
        };
        let target_test_ood = spec
            .ood_shifts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let label = format!("task/ood/{i}");
                split(5 + i as u64, &label, spec.ood_test, s).map(|set| (s.name.clone(), set))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            source_train: split(0, "task/source_train", spec.source_train, &identity)?,
            source_val: split(1, "task/source_val", spec.source_val, &identity)?,
            target_train: split(2, "task/target_train", spec.target_train, &spec.target_shift)?,
            target_val: split(3, "task/target_val", spec.target_val, &spec.target_shift)?,
            target_test_id: split(4, "task/target_test", spec.target_test, &spec.target_shift)?,
            target_test_ood,
        })
    }

    pub fn ood(&self, name: &str) -> Option<&LabeledSet> {
        self.target_test_ood
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    /// All splits with their names, in a fixed order.
    pub fn splits(&self) -> Vec<(String, &LabeledSet)> {
        let mut out = vec![
            ("source_train".to_string(), &self.source_train),
            ("source_val".to_string(), &self.source_val),
            ("target_train".to_string(), &self.target_train),
            ("target_val".to_string(), &self.target_val),
            ("target_test_id".to_string(), &self.target_test_id),
        ];
        for (name, set) in &self.target_test_ood {
            out.push((format!("ood_{name}"), set));
        }
        out
    }
}

fn sample_split(
    spec: &TaskSpec,
    means: &[Vec<f64>],
    seed: u64,
    split_index: u64,
    n: usize,
    shift: &ShiftDescriptor,
) -> Result<LabeledSet> {
    let mut rng = rng_from_seed(seed);
    let d = spec.feature_dim;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..spec.class_count);
        let comp = rng.random_range(0..spec.components_per_class);
        let mu = &means[class * spec.components_per_class + comp];
        let x: Vec<f64> = mu
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spec.noise_std * z
            })
            .collect();
        data.extend(shift.apply(&x, &mut rng));
        labels.push(class);
    }
    let ids = (0..n as u64).map(|i| (split_index << 40) | i).collect();
    LabeledSet::new(Tensor::new(vec![n, d], data)?, labels, ids)
}

/// Equal-weight isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDensity {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
}

impl MixtureDensity {
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * self.variance).ln()
            - (self.means.len() as f64).ln();
        let terms: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                -0.5 * sq / self.variance
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        norm + max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = rng.random_range(0..self.means.len());
        let sd = self.variance.sqrt();
        self.means[k]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            })
            .collect()
    }
}

/// Monte-Carlo estimate of `KL(p || q)` from `n` samples of `p`.
pub fn kl_divergence_mc(p: &MixtureDensity, q: &MixtureDensity, n: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let total: f64 = (0..n)
        .map(|_| {
            let x = p.sample(&mut rng);
            p.log_pdf(&x) - q.log_pdf(&x)
        })
        .sum();
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TaskSpec {
        TaskSpec {
            source_train: 200,
            source_val: 50,
            target_train: 100,
            target_val: 50,
            target_test: 50,
            ood_test: 50,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = DomainShiftTask::generate(&small(), 3).unwrap();
        let b = DomainShiftTask::generate(&small(), 3).unwrap();
        assert_eq!(a, b);
        let c = DomainShiftTask::generate(&small(), 4).unwrap();
        assert_ne!(a.source_train, c.source_train);
    }

    #[test]
    fn splits_are_disjoint() {
        let t = DomainShiftTask::generate(&small(), 3).unwrap();
        let mut ids: Vec<u64> = t.splits().iter().flat_map(|(_, s)| s.ids.clone()).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn identity_shift_leaves_points() {
        let s = ShiftDescriptor::default();
        assert_eq!(s.transform_point(&[1.0, -2.0, 3.0]), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn degenerate_covariance() {
        let spec = TaskSpec {
            noise_std: 0.0,
            ..small()
        };
        assert!(DomainShiftTask::generate(&spec, 1).is_err());
        let spec = TaskSpec {
            class_count: 1,
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn kl_of_identical_densities_is_zero() {
        let spec = small();
        let p = spec.density(1, &ShiftDescriptor::default());
        assert!(kl_divergence_mc(&p, &p, 100, 1).abs() < 1e-12);
    }
}

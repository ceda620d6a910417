//! Parametric input corruptions at severities 1..=5 (0 = clean).
//!
//! | family            | parameter                  | severity 1..5                 |
//! |-------------------|----------------------------|-------------------------------|
//! | additive-gaussian | noise std `s`              | 0.1, 0.2, 0.4, 0.8, 1.6       |
//! | feature-dropout   | drop probability `p`       | 0.1, 0.2, 0.3, 0.4, 0.5       |
//! | affine-blur       | neighbour mix `a`          | 0.2, 0.4, 0.6, 0.8, 1.0       |
//! | contrast-scale    | contrast factor `c`        | 0.8, 0.6, 0.4, 0.25, 0.1      |
//!
//! * additive-gaussian: `x + s * N(0, 1)` per feature.
//! * feature-dropout: each feature independently set to 0 with probability `p`.
//! * affine-blur: `(1 - a) x_i + a (x_{i-1} + x_{i+1}) / 2` with wrap-around.
//! * contrast-scale: `mean(x) + c (x - mean(x))` with the per-sample mean.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const GAUSSIAN_STD: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];
pub const DROPOUT_PROB: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const BLUR_MIX: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const CONTRAST_FACTOR: [f64; 5] = [0.8, 0.6, 0.4, 0.25, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorruptionFamily {
    #[serde(rename = "additive-gaussian")]
    AdditiveGaussian,
    #[serde(rename = "feature-dropout")]
    FeatureDropout,
    #[serde(rename = "affine-blur")]
    AffineBlur,
    #[serde(rename = "contrast-scale")]
    ContrastScale,
}

impl CorruptionFamily {
    pub const ALL: [CorruptionFamily; 4] = [
        CorruptionFamily::AdditiveGaussian,
        CorruptionFamily::FeatureDropout,
        CorruptionFamily::AffineBlur,
        CorruptionFamily::ContrastScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionFamily::AdditiveGaussian => "additive-gaussian",
            CorruptionFamily::FeatureDropout => "feature-dropout",
            CorruptionFamily::AffineBlur => "affine-blur",
            CorruptionFamily::ContrastScale => "contrast-scale",
        }
    }

    /// The documented parameter for `severity` in 1..=5.
    pub fn parameter(self, severity: u8) -> Option<f64> {
        let idx = (severity as usize).checked_sub(1).filter(|&i| i < 5)?;
        Some(match self {
            CorruptionFamily::AdditiveGaussian => GAUSSIAN_STD[idx],
            CorruptionFamily::FeatureDropout => DROPOUT_PROB[idx],
            CorruptionFamily::AffineBlur => BLUR_MIX[idx],
            CorruptionFamily::ContrastScale => CONTRAST_FACTOR[idx],
        })
    }
}

impl fmt::Display for CorruptionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub family: CorruptionFamily,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(family: CorruptionFamily, severity: u8) -> Result<Self> {
        if severity > 5 {
            return Err(Error::InvalidArgument(format!("severity {severity} outside 0..=5")));
        }
        Ok(Self { family, severity })
    }
}

pub fn corrupt(set: &LabeledSet, spec: CorruptionSpec, seed: u64) -> Result<LabeledSet> {
    if spec.severity > 5 {
        return Err(Error::InvalidArgument(format!(
            "severity {} outside 0..=5",
            spec.severity
        )));
    }
    let mut out = set.clone();
    let Some(param) = spec.family.parameter(spec.severity) else {
        return Ok(out);
    };
    let mut rng = rng_from_seed(seed);
    let d = set.dim();
    for i in 0..set.len() {
        let row = out.features.row_mut(i);
        match spec.family {
            CorruptionFamily::AdditiveGaussian => {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += param * z;
                }
            }
            CorruptionFamily::FeatureDropout => {
                for v in row.iter_mut() {
                    if rng.random::<f64>() < param {
                        *v = 0.0;
                    }
                }
            }
            CorruptionFamily::AffineBlur => {
                let src = set.features.row(i);
                for j in 0..d {
                    let left = src[(j + d - 1) % d];
                    let right = src[(j + 1) % d];
                    row[j] = (1.0 - param) * src[j] + param * 0.5 * (left + right);
                }
            }
            CorruptionFamily::ContrastScale => {
                let mean = row.iter().sum::<f64>() / d as f64;
                for v in row.iter_mut() {
                    *v = mean + param * (*v - mean);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn set() -> LabeledSet {
        LabeledSet::new(
            Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]]).unwrap(),
            vec![0, 1],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn severity_zero_is_clean() {
        for f in CorruptionFamily::ALL {
            assert_eq!(corrupt(&set(), CorruptionSpec::new(f, 0).unwrap(), 1).unwrap(), set());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = CorruptionSpec::new(CorruptionFamily::AdditiveGaussian, 5).unwrap();
        assert_eq!(corrupt(&set(), spec, 9).unwrap(), corrupt(&set(), spec, 9).unwrap());
        assert_ne!(corrupt(&set(), spec, 9).unwrap(), corrupt(&set(), spec, 10).unwrap());
    }

    #[test]
    fn labels_unchanged() {
        for f in CorruptionFamily::ALL {
            let c = corrupt(&set(), CorruptionSpec::new(f, 3).unwrap(), 1).unwrap();
            assert_eq!(c.labels, set().labels);
        }
    }

    #[test]
    fn full_blur_and_contrast_by_hand() {
        let blur = corrupt(&set(), CorruptionSpec::new(CorruptionFamily::AffineBlur, 5).unwrap(), 1)
            .unwrap();
        assert_eq!(blur.features.row(0), &[2.5, 2.0, 1.5]);
        let con = corrupt(
            &set(),
            CorruptionSpec::new(CorruptionFamily::ContrastScale, 4).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(con.features.row(0), &[1.75, 2.0, 2.25]);
    }

    #[test]
    fn unknown_family_and_bad_severity() {
        assert!("snow".parse::<CorruptionFamily>().is_err());
        assert_eq!(
            "feature-dropout".parse::<CorruptionFamily>().unwrap(),
            CorruptionFamily::FeatureDropout
        );
        assert!(CorruptionSpec::new(CorruptionFamily::AffineBlur, 6).is_err());
    }
}

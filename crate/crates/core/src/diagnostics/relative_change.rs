use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, Part, TensorKey, TensorKind};
use crate::tensor::l2_norm;

/// Which checkpoint the relative change is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    PreConversion,
    PostConversion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub part: Part,
    pub layer: usize,
    pub kind: TensorKind,
    pub delta_norm: f64,
    pub base_norm: f64,
    /// `||after - before|| / ||before||`; `None` when `||before|| = 0` and the tensor moved.
    pub value: Option<f64>,
}

impl RelativeChange {
    pub fn key(&self) -> TensorKey {
        TensorKey {
            part: self.part,
            layer: self.layer,
            kind: self.kind,
        }
    }

    pub fn is_bn_statistic(&self) -> bool {
        matches!(self.kind, TensorKind::RunningMean | TensorKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChangeReport {
    pub baseline: Baseline,
    pub entries: Vec<RelativeChange>,
}

impl RelativeChangeReport {
    /// Mean over defined entries matching `filter`; `None` if there are none.
    pub fn mean_where(&self, filter: impl Fn(&RelativeChange) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| filter(e))
            .filter_map(|e| e.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_bn_statistics(&self) -> Option<f64> {
        self.mean_where(RelativeChange::is_bn_statistic)
    }

    pub fn mean_all(&self) -> Option<f64> {
        self.mean_where(|_| true)
    }

    /// One row per tensor with raw and log10 values; undefined entries are
    /// written as `undefined`.
    pub fn to_csv(&self) -> String {
        let baseline = match self.baseline {
            Baseline::PreConversion => "pre_conversion",
            Baseline::PostConversion => "post_conversion",
        };
        let mut s = String::from("tensor,part,layer,kind,delta_norm,base_norm,relative_change,log10_relative_change,baseline\n");
        for e in &self.entries {
            let (raw, log) = match e.value {
                Some(v) => (v.to_string(), v.log10().to_string()),
                None => ("undefined".to_string(), "undefined".to_string()),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{raw},{log},{baseline}\n",
                e.key(),
                match e.part {
                    Part::FeatureExtractor => "feature_extractor",
                    Part::Head => "head",
                },
                e.layer,
                e.kind.as_str(),
                e.delta_norm,
                e.base_norm,
            ));
        }
        s
    }
}

/// `||W~ - W||_2 / ||W||_2` per tensor (parameters and BN running
/// statistics), normalized by `before`.
pub fn relative_change(before: &Network, after: &Network, baseline: Baseline) -> Result<RelativeChangeReport> {
    if !before.same_architecture(after) {
        return Err(Error::ArchitectureMismatch(
            "relative change needs identical architectures".into(),
        ));
    }
    let entries = before
        .tensors()
        .into_iter()
        .zip(after.tensors())
        .map(|((key, w), (_, w2))| {
            let delta: Vec<f64> = w2.iter().zip(w).map(|(a, b)| a - b).collect();
            let delta_norm = l2_norm(&delta);
            let base_norm = l2_norm(w);
            RelativeChange {
                part: key.part,
                layer: key.layer,
                kind: key.kind,
                delta_norm,
                base_norm,
                // An unmoved tensor is 0 even when its norm is 0.
                value: if delta_norm == 0.0 {
                    Some(0.0)
                } else {
                    (base_norm > 0.0).then(|| delta_norm / base_norm)
                },
            }
        })
        .collect();
    Ok(RelativeChangeReport { baseline, entries })
}

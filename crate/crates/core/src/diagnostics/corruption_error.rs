use serde::{Deserialize, Serialize};

use crate::data::{corrupt, CorruptionFamily, CorruptionSpec, LabeledSet};
use crate::error::Result;
use crate::finetune::accuracy;
use crate::nn::Network;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub family: CorruptionFamily,
    pub severity: u8,
    /// Raw classification error in [0, 1] (not normalized by a reference model).
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTable {
    pub clean_error: f64,
    pub cells: Vec<CorruptionCell>,
    pub family_means: Vec<(CorruptionFamily, f64)>,
    /// Mean over every family and every severity >= 1.
    pub overall_mean: f64,
}

impl CorruptionTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,severity,error\n");
        s.push_str(&format!("clean,0,{}\n", self.clean_error));
        for c in &self.cells {
            s.push_str(&format!("{},{},{}\n", c.family, c.severity, c.error));
        }
        for (f, m) in &self.family_means {
            s.push_str(&format!("{f},mean,{m}\n"));
        }
        s.push_str(&format!("all,mean,{}\n", self.overall_mean));
        s
    }
}

/// Test-mode error on `set` under every spec. Severity-0 specs reproduce the
/// clean error. Each (family, severity) draws its own corruption stream.
pub fn corruption_error(
    net: &Network,
    set: &LabeledSet,
    specs: &[CorruptionSpec],
    seed: u64,
) -> Result<CorruptionTable> {
    let clean_error = 1.0 - accuracy(net, set)?;
    let mut cells = Vec::with_capacity(specs.len());
    for spec in specs {
        let label = format!("corrupt/{}/{}", spec.family, spec.severity);
        let corrupted = corrupt(set, *spec, derive_seed(seed, &label))?;
        cells.push(CorruptionCell {
            family: spec.family,
            severity: spec.severity,
            error: 1.0 - accuracy(net, &corrupted)?,
        });
    }
    let mut family_means = Vec::new();
    for family in CorruptionFamily::ALL {
        let errs: Vec<f64> = cells
            .iter()
            .filter(|c| c.family == family && c.severity > 0)
            .map(|c| c.error)
            .collect();
        if !errs.is_empty() {
            family_means.push((family, errs.iter().sum::<f64>() / errs.len() as f64));
        }
    }
    let all: Vec<f64> = cells.iter().filter(|c| c.severity > 0).map(|c| c.error).collect();
    let overall_mean = if all.is_empty() {
        clean_error
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    Ok(CorruptionTable {
        clean_error,
        cells,
        family_means,
        overall_mean,
    })
}

/// Every family at severities 1 through 5.
pub fn full_grid() -> Vec<CorruptionSpec> {
    CorruptionFamily::ALL
        .into_iter()
        .flat_map(|family| (1..=5).map(move |severity| CorruptionSpec { family, severity }))
        .collect()
}

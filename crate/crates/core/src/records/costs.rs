//! Per-stage energy and latency constants.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phash::MemoryMethod;

/// A unit of work in the cascade whose invocation is metered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MemoryLookup,
    MemoryInsert,
    ModelA,
    ModelB,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::MemoryLookup,
        Stage::MemoryInsert,
        Stage::ModelA,
        Stage::ModelB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MemoryLookup => "memory_lookup",
            Stage::MemoryInsert => "memory_insert",
            Stage::ModelA => "model_a",
            Stage::ModelB => "model_b",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost of one invocation of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCost {
    pub energy_wh: f64,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_mah: Option<f64>,
}

impl StageCost {
    pub fn new(energy_wh: f64, latency_ms: f64) -> Self {
        StageCost {
            energy_wh,
            latency_ms,
            current_mah: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCosts {
    pub memory_lookup: StageCost,
    pub memory_insert: StageCost,
    pub model_a: StageCost,
    pub model_b: StageCost,
}

impl StageCosts {
    pub fn get(&self, stage: Stage) -> &StageCost {
        match stage {
            Stage::MemoryLookup => &self.memory_lookup,
            Stage::MemoryInsert => &self.memory_insert,
            Stage::ModelA => &self.model_a,
            Stage::ModelB => &self.model_b,
        }
    }
}

/// Memory-stage prices for one fingerprint method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryCosts {
    pub memory_lookup: StageCost,
    pub memory_insert: StageCost,
}

/// Linear per-invocation cost model.
///
/// `stages` is always authoritative for metering. The optional `models` and
/// `memory_methods` catalogs let one file describe several configurations;
/// [`CostProfile::resolve`] folds the matching catalog entries into `stages`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comments: Option<String>,
    pub stages: StageCosts,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub models: BTreeMap<String, StageCost>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub memory_methods: BTreeMap<MemoryMethod, MemoryCosts>,
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid cost profile: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cost for {what} must be finite and non-negative, got {value}")]
    Negative { what: String, value: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CostProfile {
    pub fn new(stages: StageCosts) -> Self {
        CostProfile {
            stages,
            ..Default::default()
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageCost {
        self.stages.get(stage)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, CostError> {
        let profile: CostProfile = serde_json::from_reader(reader)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let check = |what: String, cost: &StageCost| -> Result<(), CostError> {
            for value in [Some(cost.energy_wh), Some(cost.latency_ms), cost.current_mah]
                .into_iter()
                .flatten()
            {
                if !value.is_finite() || value < 0.0 {
                    return Err(CostError::Negative { what, value });
                }
            }
            Ok(())
        };
        for stage in Stage::ALL {
            check(stage.to_string(), self.stage(stage))?;
        }
        for (name, cost) in &self.models {
            check(format!("model {name}"), cost)?;
        }
        for (method, costs) in &self.memory_methods {
            check(format!("{method} memory_lookup"), &costs.memory_lookup)?;
            check(format!("{method} memory_insert"), &costs.memory_insert)?;
        }
        Ok(())
    }

    /// Flat profile for a concrete configuration: catalog entries named
    /// `first` / `second` replace `model_a` / `model_b`, and the entry for
    /// `memory` replaces the memory stages. Missing entries fall back to
    /// `stages`.
    pub fn resolve(&self, first: &str, second: Option<&str>, memory: MemoryMethod) -> CostProfile {
        let mut stages = self.stages;
        if let Some(cost) = self.models.get(first) {
            stages.model_a = *cost;
        }
        if let Some(cost) = second.and_then(|name| self.models.get(name)) {
            stages.model_b = *cost;
        }
        if let Some(mem) = self.memory_methods.get(&memory) {
            stages.memory_lookup = mem.memory_lookup;
            stages.memory_insert = mem.memory_insert;
        }
        CostProfile {
            comments: self.comments.clone(),
            stages,
            models: BTreeMap::new(),
            memory_methods: BTreeMap::new(),
        }
    }
}

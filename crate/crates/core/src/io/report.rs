//! Machine-readable run reports.

use serde::{Deserialize, Serialize};

use crate::driver::TaskResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub energy_before: f64,
    pub energy_after: f64,
    pub step_norm: f64,
    pub damping: f64,
    pub coefficient_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub k: usize,
    pub iterations: Vec<IterationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub levels: Vec<LevelReport>,
    pub wall_ms: f64,
}

impl TaskReport {
    pub fn from_result(result: &TaskResult, wall_ms: f64) -> Self {
        let levels = result
            .levels
            .iter()
            .map(|l| LevelReport {
                level: l.level,
                k: l.k,
                iterations: l
                    .iterations
                    .iter()
                    .map(|it| IterationReport {
                        energy_before: it.energy_before,
                        energy_after: it.energy_after,
                        step_norm: it.step_norm,
                        damping: it.damping,
                        coefficient_norm: it.coefficient_norm,
                        accepted: it.accepted,
                    })
                    .collect(),
            })
            .collect();
        Self {
            task: result.task.name().to_string(),
            levels,
            wall_ms,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain data")
    }

    /// True when no accepted iteration increased the energy.
    pub fn is_monotone(&self) -> bool {
        self.levels
            .iter()
            .flat_map(|l| &l.iterations)
            .filter(|it| it.accepted)
            .all(|it| it.energy_after <= it.energy_before)
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Evaluation settings recorded alongside the scores.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub cross_camera_filtering: bool,
    pub flip_fusion: bool,
    pub ranks: Vec<usize>,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            cross_camera_filtering: true,
            flip_fusion: true,
            ranks: vec![1, 5, 10, 20],
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(EvalError::Invalid(format!("ranks must be positive, got {:?}", self.ranks)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rank -> fraction of valid queries matched within that rank.
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub protocol: Protocol,
    pub num_queries: usize,
    pub num_valid_queries: usize,
}

impl EvalReport {
    pub fn rank1(&self) -> Option<f64> {
        self.cmc.get(&1).copied()
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let ranks: Vec<String> = self.protocol.ranks.iter().map(usize::to_string).collect();
        writeln!(s, "protocol.cross_camera_filtering={}", self.protocol.cross_camera_filtering).unwrap();
        writeln!(s, "protocol.flip_fusion={}", self.protocol.flip_fusion).unwrap();
        writeln!(s, "protocol.ranks={}", ranks.join(",")).unwrap();
        writeln!(s, "num_queries={}", self.num_queries).unwrap();
        writeln!(s, "num_valid_queries={}", self.num_valid_queries).unwrap();
        for (k, v) in &self.cmc {
            writeln!(s, "cmc@{k}={v:.6}").unwrap();
        }
        writeln!(s, "map={:.6}", self.map_score).unwrap();
        s
    }

    /// Single-line JSON.
    pub fn summary_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

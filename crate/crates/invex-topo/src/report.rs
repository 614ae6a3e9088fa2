//! report.json layout. Every field except `timings` is reproducible from
//! the config.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::game_doc::GameDoc;

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckVerdict {
    Pass,
    Fail,
    Inconclusive,
}

impl CheckVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckVerdict::Pass => "pass",
            CheckVerdict::Fail => "fail",
            CheckVerdict::Inconclusive => "inconclusive",
        }
    }

    pub fn from_core(v: invex_topo_core::Verdict) -> Self {
        match v {
            invex_topo_core::Verdict::Pass => CheckVerdict::Pass,
            invex_topo_core::Verdict::Fail => CheckVerdict::Fail,
            invex_topo_core::Verdict::Inconclusive => CheckVerdict::Inconclusive,
        }
    }

    /// Fail dominates inconclusive, which dominates pass.
    pub fn combine(verdicts: impl IntoIterator<Item = CheckVerdict>) -> CheckVerdict {
        let mut out = CheckVerdict::Pass;
        for v in verdicts {
            out = match (out, v) {
                (CheckVerdict::Fail, _) | (_, CheckVerdict::Fail) => CheckVerdict::Fail,
                (CheckVerdict::Inconclusive, _) | (_, CheckVerdict::Inconclusive) => CheckVerdict::Inconclusive,
                _ => CheckVerdict::Pass,
            };
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionInfo {
    pub source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub expression: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub verdict: CheckVerdict,
    pub result: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Expectation {
    pub expected: String,
    pub observed: String,
    pub matched: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub total_ms: f64,
    pub checks_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub toolkit_version: &'static str,
    pub command: String,
    pub config: Value,
    pub config_hash: String,
    pub function: Option<FunctionInfo>,
    pub game: Option<GameDoc>,
    pub checks: Vec<Check>,
    pub verdict: CheckVerdict,
    pub expectation: Option<Expectation>,
    pub artifacts: Vec<String>,
    pub exit_code: i32,
    pub timings: Timings,
}

//! Flag set shared by every subcommand; the JSON config uses the same
//! kebab-case keys.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::game_doc::GameSource;

/// Comma-separated list on the command line, a JSON array in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|part| part.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", part.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    Sublevel,
    CertifyPl,
    CertifyGrowth,
    CertifyInvex,
    IncreasingAtInfinity,
    MountainPass,
    PlFlow,
    MinimaxClassify,
    MinimaxModulus,
    GameNash,
    GameRationalize,
    GamePotential,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sublevel => "sublevel",
            Command::CertifyPl => "certify-pl",
            Command::CertifyGrowth => "certify-growth",
            Command::CertifyInvex => "certify-invex",
            Command::IncreasingAtInfinity => "increasing-at-infinity",
            Command::MountainPass => "mountain-pass",
            Command::PlFlow => "pl-flow",
            Command::MinimaxClassify => "minimax-classify",
            Command::MinimaxModulus => "minimax-modulus",
            Command::GameNash => "game-nash",
            Command::GameRationalize => "game-rationalize",
            Command::GamePotential => "game-potential",
        }
    }

    /// Keys a config for this command may set besides the common ones.
    pub fn fields(self) -> &'static [&'static str] {
        match self {
            Command::Sublevel => &["builtin", "expr", "dim", "box", "res", "level", "super"],
            Command::CertifyPl => &[
                "builtin", "expr", "dim", "box", "res", "alpha", "mu", "f-star", "two-sided", "mu1", "mu2", "nx", "block",
                "sense", "eps-excl", "slack",
            ],
            Command::CertifyGrowth => {
                &["builtin", "expr", "dim", "box", "res", "beta", "eta", "f-star", "set-tol", "block", "sense", "eps-excl", "slack"]
            }
            Command::CertifyInvex => &["builtin", "expr", "dim", "box", "tol-grad", "tol-val", "starts"],
            Command::IncreasingAtInfinity => &["builtin", "expr", "dim", "center", "radii", "level", "directions"],
            Command::MountainPass => {
                &["builtin", "expr", "dim", "box", "res", "x0", "x1", "nodes", "iters", "tol", "level", "record-every"]
            }
            Command::PlFlow => &["builtin", "expr", "dim", "box", "x0", "alpha", "f-star", "mu", "stop-eps", "max-steps"],
            Command::MinimaxClassify => &["builtin", "expr", "dim", "box", "res", "nx", "tol-val", "tol-grad"],
            Command::MinimaxModulus => &["builtin", "expr", "dim", "box", "res", "nx", "side", "base", "deltas", "mode", "tol"],
            Command::GameNash => &["game", "game-builtin", "res", "tol"],
            Command::GameRationalize => {
                &["game", "game-builtin", "res", "k-box", "max-k", "tol", "budget", "subsample", "bisect-depth"]
            }
            Command::GamePotential => &["game", "game-builtin", "res", "tol", "potential", "nash-tol"],
        }
    }
}

pub const COMMON_FIELDS: &[&str] = &["command", "seed", "expect", "out"];

/// Every analysis parameter. Unset fields take per-command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Params {
    /// JSON config file; flags given on the command line override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    /// Output directory for report.json and CSV artifacts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Seed for every low-discrepancy sequence (default 42).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Expected outcome: pass, fail or inconclusive; for sublevel, a component
    /// count (or one count per resolution).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,

    /// Builtin field name.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Expression over x0, x1, ...
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    /// Dimension of `--expr`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Box as lo,hi pairs per axis, e.g. -3,3,-3,3.
    #[arg(long = "box", allow_hyphen_values = true)]
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub domain: Option<List<f64>>,
    /// Grid resolution(s): nodes per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub res: Option<List<usize>>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Superlevel set instead of sublevel.
    #[arg(long = "super", num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "super", skip_serializing_if = "Option::is_none")]
    pub superlevel: Option<bool>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_sided: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
    /// Number of minimizing coordinates (the rest maximize).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    /// Coordinate block `start:end` for block checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
    /// min or max: whether the block is minimized or maximized.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sense: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_excl: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_tol: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_grad: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_val: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<List<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<List<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,

    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<List<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1: Option<List<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,

    /// x or y: the best-response map whose modulus is estimated.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<List<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<List<f64>>,
    /// lipschitz, hoelder or eb.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,

    /// Game document (JSON file path on the command line).
    #[arg(long, value_parser = GameSource::parse_path)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game: Option<GameSource>,
    /// Builtin game: fig4 or econincave.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub game_builtin: Option<String>,
    /// Inner box K as lo,hi pairs over the joint action.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_box: Option<List<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bisect_depth: Option<u32>,
    /// Potential expression over the joint action (overrides the game's).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nash_tol: Option<f64>,
}

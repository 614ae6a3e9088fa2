//! JSON game documents: `{players: [{dim, box}], utilities: [...], potential?}`.

use std::path::PathBuf;

use invex_topo_core::expr::ScalarField;
use invex_topo_core::games::{GameSpec, PlayerSpec};
use invex_topo_core::grid::BoxDomain;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerDoc {
    pub dim: usize,
    /// lo,hi pairs per action coordinate.
    #[serde(rename = "box")]
    pub domain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDoc {
    pub players: Vec<PlayerDoc>,
    pub utilities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
}

/// A game given inline or as a path to a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    Path(PathBuf),
    Inline(GameDoc),
}

impl GameSource {
    pub fn parse_path(s: &str) -> Result<GameSource, String> {
        Ok(GameSource::Path(PathBuf::from(s)))
    }

    /// Reads a path source so that the document itself is what gets hashed.
    pub fn load(&self) -> Result<GameDoc, CliError> {
        match self {
            GameSource::Inline(doc) => Ok(doc.clone()),
            GameSource::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("game file {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("game file {}: {e}", p.display())))
            }
        }
    }
}

impl GameDoc {
    pub fn joint_dim(&self) -> usize {
        self.players.iter().map(|p| p.dim).sum()
    }

    pub fn to_spec(&self) -> Result<GameSpec, CliError> {
        let n = self.joint_dim();
        let mut players = Vec::with_capacity(self.players.len());
        for (i, p) in self.players.iter().enumerate() {
            let domain = BoxDomain::from_pairs(&p.domain).map_err(|e| CliError::Usage(format!("game.players[{i}].box: {e}")))?;
            players.push(PlayerSpec { dim: p.dim, domain });
        }
        let parse = |text: &str, what: String| ScalarField::parse(text, n).map_err(|e| CliError::Usage(format!("{what}: {e}")));
        let utilities = self
            .utilities
            .iter()
            .enumerate()
            .map(|(i, u)| parse(u, format!("game.utilities[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let potential = self.potential.as_deref().map(|p| parse(p, "game.potential".into())).transpose()?;
        GameSpec::new(players, utilities, potential).map_err(|e| CliError::Usage(format!("game: {e}")))
    }
}

/// Named example games.
pub fn builtin_game(name: &str) -> Result<GameDoc, CliError> {
    let player = |lo: f64, hi: f64| PlayerDoc { dim: 1, domain: vec![lo, hi] };
    match name {
        // second utility in the form whose best response is a³ − 2a
        "fig4" => Ok(GameDoc {
            players: vec![player(-2.5, 2.5), player(-2.5, 2.5)],
            utilities: vec!["-0.5*x0^2 + x0*x1".into(), "-0.5*x1^2 + x1*(x0^3 - 2*x0)".into()],
            potential: None,
        }),
        "econincave" => Ok(GameDoc {
            players: vec![player(-2.0, 2.0), player(-2.0, 2.0)],
            utilities: vec!["-(x0 + x1)^2 - x0^2".into(), "-(x0 + x1)^2 - x1^2".into()],
            potential: Some("-(x0 + x1)^2 - x0^2 - x1^2".into()),
        }),
        other => Err(CliError::Usage(format!("unknown game builtin `{other}` (available: fig4, econincave)"))),
    }
}
